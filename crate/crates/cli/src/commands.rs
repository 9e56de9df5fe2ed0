use std::path::{Path, PathBuf};

use cnext::compress::{
    contract_samples, scheme_constants, verify_contract, CompressionScheme, SchemeConstants,
};
use cnext::data::{
    build_objective, generate_ridge_synthetic_with_noise, load_covtype, partition_homogeneous,
    spread_columns, Preprocessing, Provenance,
};
use cnext::graph::{build_circulant_expander, build_ring, metropolis_hastings_weights, TopologyKind};
use cnext::objective::ObjectiveKind;
use cnext::rng::{substream, Stream};
use cnext::solver::{run_seeds, HyperParams, Mode, Problem, SeedRuns, Trace};
use cnext::theory::{
    check_theorem2, find_epsilon, fallback_epsilon, ProblemConstants, TauChoice, Theorem2Report,
    TheoryConstants, Theta,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ExperimentConfig, SchemeConfig, SchemeName};
use crate::error::{CliError, CliResult, ErrorReport};
use crate::output::{compare_csv, trace_csv, write_json, write_atomic, CompareRow};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const INITIALIZATION: &str =
    "X(0), H_x(0), H_y(0) i.i.d. Uniform[0,1] per agent stream; Y(0) = grad F(X(0))";

const BIT_ACCOUNTING: &str = "bits_cum counts both channels summed over agents: \
identity 64p, qnbbq (1+b)p, randomk (32+ceil(log2 p))k, topk (64+ceil(log2 p))k, \
qnormsigned p+32 bits per vector";

#[derive(Debug, Clone, Serialize)]
pub struct DataInfo {
    pub provenance: Provenance,
    pub samples: usize,
    pub dim: usize,
    pub train: usize,
    pub test: usize,
    pub per_agent: usize,
    pub dropped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<Preprocessing>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkInfo {
    pub topology: TopologyKind,
    pub n: usize,
    pub degree: usize,
    pub rho: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveInfo {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub f_star: f64,
}

/// An assembled experiment instance.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem,
    pub data: DataInfo,
    pub network: NetworkInfo,
    pub objective: ObjectiveInfo,
}

pub fn build_problem(cfg: &ExperimentConfig) -> CliResult<Setup> {
    let n = cfg.network.n;
    let topo = match cfg.network.topology {
        TopologyKind::Ring => build_ring(n)?,
        TopologyKind::CirculantExpander => build_circulant_expander(n, cfg.network.degree())?,
        TopologyKind::Custom => {
            return Err(CliError::Config("network.topology: custom is not supported".into()))
        }
    };
    let network = metropolis_hastings_weights(&topo)?;
    let (ds, column_ratio) = match &cfg.objective.data {
        DataConfig::Synthetic {
            samples,
            dim,
            noise,
            column_ratio,
        } => {
            let mut ds = generate_ridge_synthetic_with_noise(*samples, *dim, cfg.seed, *noise)?;
            if *column_ratio != 1.0 {
                spread_columns(&mut ds, *column_ratio)?;
            }
            (ds, Some(*column_ratio))
        }
        DataConfig::Covtype { components, .. } => {
            let path = cfg.objective.data.covtype_path()?;
            let ds = load_covtype(&path, *components, n, cfg.seed).map_err(|e| match e {
                cnext::Error::Io(source) => CliError::Io { path, source },
                other => other.into(),
            })?;
            (ds, None)
        }
    };
    let part = partition_homogeneous(&ds, n, cfg.seed)?;
    let lambda = cfg.objective.lambda();
    let obj = build_objective(&ds, &part, cfg.objective.kind, lambda)?;
    let mut problem = Problem::new(obj, network)?;
    if let Some(test) = ds.test_set() {
        problem = problem.with_test_set(test);
    }
    let o = &problem.objective;
    let objective = ObjectiveInfo {
        kind: o.kind(),
        lambda,
        mu: o.mu(),
        l: o.l(),
        kappa: o.kappa(),
        f_star: problem.f_star,
    };
    let net = &problem.network;
    let network = NetworkInfo {
        topology: net.topology().kind(),
        n: net.n(),
        degree: cfg.network.degree(),
        rho: net.rho(),
        beta: net.beta(),
    };
    let data = DataInfo {
        provenance: ds.provenance,
        samples: ds.len(),
        dim: ds.dim(),
        train: ds.train.len(),
        test: ds.test.len(),
        per_agent: part.per_agent,
        dropped: part.dropped.len(),
        column_ratio,
        preprocessing: ds.preprocessing.clone(),
    };
    Ok(Setup {
        problem,
        data,
        network,
        objective,
    })
}

/// Constants of `scheme`, read from a `verify-ops` report when configured.
pub fn resolve_constants(
    cfg: &ExperimentConfig,
    scheme: &CompressionScheme,
    p: usize,
) -> CliResult<SchemeConstants> {
    if let Some(path) = &cfg.theory.constants {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let ops: OpsReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if ops.dim == p {
            if let Some(entry) = ops.schemes.iter().find(|e| e.scheme == *scheme) {
                return Ok(entry.constants);
            }
        }
        log::warn!(
            "{} has no entry for {} at p = {p}; measuring instead",
            path.display(),
            scheme.name()
        );
    }
    Ok(scheme_constants(
        scheme,
        p,
        cfg.verify.samples,
        cfg.verify.draws,
        cfg.seed,
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantInfo {
    pub label: String,
    pub mode: Mode,
    pub scheme: CompressionScheme,
    pub scheme_constants: SchemeConstants,
    pub hyperparams: HyperParams,
    pub warnings: Vec<String>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub command: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataInfo>,
    pub initialization: &'static str,
    pub bit_accounting: &'static str,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    fn new(command: &'static str, cfg: &ExperimentConfig) -> Self {
        Self {
            version: VERSION,
            command,
            status: "running",
            error: None,
            seeds: cfg.seeds(),
            variants: vec![],
            network: None,
            objective: None,
            data: None,
            initialization: INITIALIZATION,
            bit_accounting: BIT_ACCOUNTING,
            files: vec![],
            config: cfg.clone(),
        }
    }

    fn describe(&mut self, setup: &Setup) {
        self.network = Some(setup.network.clone());
        self.objective = Some(setup.objective.clone());
        self.data = Some(setup.data.clone());
    }
}

/// Writes the manifest whatever the outcome and passes the outcome through.
fn finish<T>(dir: &Path, mut manifest: Manifest, result: CliResult<T>) -> CliResult<T> {
    match &result {
        Ok(_) => manifest.status = "ok",
        Err(e) => {
            manifest.status = "error";
            manifest.error = Some(e.report());
        }
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    result
}

fn prepare_variant(
    cfg: &ExperimentConfig,
    setup: &Setup,
    label: String,
    mode: Mode,
    scheme_cfg: &SchemeConfig,
    hp: HyperParams,
) -> CliResult<VariantInfo> {
    let scheme = scheme_cfg.build();
    let effective = mode.effective_scheme(&scheme);
    let constants = resolve_constants(cfg, &effective, setup.problem.dim())?;
    let warnings = hp.warnings(&setup.problem.objective, Some(&constants));
    for w in &warnings {
        log::warn!("{label}: {w}");
    }
    Ok(VariantInfo {
        label,
        mode,
        scheme: effective,
        scheme_constants: constants,
        hyperparams: hp,
        warnings,
    })
}

fn execute(setup: &Setup, v: &VariantInfo, seeds: &[u64]) -> CliResult<SeedRuns> {
    log::info!(
        "{}: eta = {}, gamma = {}, T = {}, {} seed(s)",
        v.label,
        v.hyperparams.eta,
        v.hyperparams.gamma,
        v.hyperparams.iterations,
        seeds.len()
    );
    Ok(run_seeds(&setup.problem, &v.scheme, &v.hyperparams, v.mode, seeds)?)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub runs: SeedRuns,
    pub variant: VariantInfo,
}

/// Runs the configured scheme and mode over the configured seeds. Writes
/// `trace.csv` (the seed average), `seeds/trace_seed<k>.csv` when several
/// seeds are given, and `manifest.json`.
pub fn cmd_run(cfg: &ExperimentConfig) -> CliResult<RunOutput> {
    let dir = cfg.output_dir.clone();
    let mut manifest = Manifest::new("run", cfg);
    let result = run_inner(cfg, &dir, &mut manifest);
    finish(&dir, manifest, result)
}

fn run_inner(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> CliResult<RunOutput> {
    let setup = build_problem(cfg)?;
    manifest.describe(&setup);
    let hp = cfg.resolved_hyperparams();
    let label = format!("{}:{}", cfg.mode.name(), cfg.scheme.kind.as_str());
    let variant = prepare_variant(cfg, &setup, label, cfg.mode, &cfg.scheme, hp)?;
    manifest.variants.push(variant.clone());
    let seeds = cfg.seeds();
    let runs = execute(&setup, &variant, &seeds)?;
    write_atomic(&dir.join("trace.csv"), &trace_csv(&runs.mean))?;
    manifest.files.push("trace.csv".into());
    if seeds.len() > 1 {
        for (s, tr) in seeds.iter().zip(&runs.per_seed) {
            let name = format!("seeds/trace_seed{s}.csv");
            write_atomic(&dir.join(&name), &trace_csv(tr))?;
            manifest.files.push(name);
        }
    }
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        runs,
        variant,
    })
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub dir: PathBuf,
    pub variants: Vec<VariantInfo>,
    pub traces: Vec<Trace>,
}

/// Runs every `[[compare]]` entry on the same data and seeds and writes a
/// long-format `compare.csv` keyed by `(variant, t)`.
pub fn cmd_compare(cfg: &ExperimentConfig) -> CliResult<CompareOutput> {
    let dir = cfg.output_dir.clone();
    let mut manifest = Manifest::new("compare", cfg);
    let result = compare_inner(cfg, &dir, &mut manifest);
    finish(&dir, manifest, result)
}

fn compare_inner(
    cfg: &ExperimentConfig,
    dir: &Path,
    manifest: &mut Manifest,
) -> CliResult<CompareOutput> {
    if cfg.compare.len() < 2 {
        return Err(CliError::Config(format!(
            "compare: need at least 2 variants, got {}",
            cfg.compare.len()
        )));
    }
    let setup = build_problem(cfg)?;
    manifest.describe(&setup);
    let variants = cfg
        .compare
        .iter()
        .map(|v| {
            let hp = cfg.hyperparams_for(v.mode, v.scheme.kind, v.hyperparams);
            prepare_variant(cfg, &setup, v.label(), v.mode, &v.scheme, hp)
        })
        .collect::<CliResult<Vec<_>>>()?;
    manifest.variants = variants.clone();
    let seeds = cfg.seeds();
    let traces = variants
        .par_iter()
        .map(|v| execute(&setup, v, &seeds).map(|r| r.mean))
        .collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<CompareRow<'_>> = variants
        .iter()
        .zip(&traces)
        .map(|(v, trace)| CompareRow {
            variant: &v.label,
            mode: v.mode.name(),
            scheme: v.scheme.name(),
            trace,
        })
        .collect();
    write_atomic(&dir.join("compare.csv"), &compare_csv(&rows))?;
    manifest.files.push("compare.csv".into());
    Ok(CompareOutput {
        dir: dir.to_path_buf(),
        variants,
        traces,
    })
}

/// JSON emitted by `theory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryOutput {
    pub version: String,
    pub scheme: CompressionScheme,
    pub scheme_constants: SchemeConstants,
    pub problem: ProblemConstants,
    pub theta: Theta,
    pub pass: bool,
    pub matrix: Option<[[f64; 5]; 5]>,
    pub rho: Option<f64>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub report: Option<Theorem2Report>,
}

/// Builds `A(θ)` for the configured run and checks the sufficient
/// conditions. Violations are reported in the output, not raised.
pub fn cmd_theory(cfg: &ExperimentConfig) -> CliResult<TheoryOutput> {
    let setup = build_problem(cfg)?;
    let pc = ProblemConstants::from_parts(&setup.problem.objective, &setup.problem.network);
    let scheme = cfg.mode.effective_scheme(&cfg.scheme.build());
    let sc = resolve_constants(cfg, &scheme, setup.problem.dim())?;
    let hp = cfg.resolved_hyperparams();
    let theta = Theta {
        eta: hp.eta,
        gamma: hp.gamma,
        alpha_x: hp.alpha_x,
        alpha_y: hp.alpha_y,
    };
    let taus = TauChoice {
        tau_x: cfg.theory.tau_x,
        tau_y: cfg.theory.tau_y,
    };
    let mut out = TheoryOutput {
        version: VERSION.into(),
        scheme,
        scheme_constants: sc,
        problem: pc,
        theta,
        pass: false,
        matrix: None,
        rho: None,
        warnings: vec![],
        error: None,
        report: None,
    };
    let tc = match TheoryConstants::new(&pc, &sc, &theta, taus) {
        Ok(tc) => tc,
        Err(e) => {
            out.error = Some(e.to_string());
            out.warnings.push(e.to_string());
            return write_theory(cfg, out);
        }
    };
    let eps = match cfg.theory.eps {
        Some(e) => e,
        None => find_epsilon(&tc, &theta).unwrap_or_else(|| {
            out.warnings
                .push("no weight vector satisfies every condition; reporting a fallback".into());
            fallback_epsilon(&tc, &theta)
        }),
    };
    let report = match check_theorem2(&tc, &theta, &eps) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(e.to_string());
            out.warnings.push(e.to_string());
            return write_theory(cfg, out);
        }
    };
    let nonneg_bound = 2.0 * tc.l / (3.0 * tc.mu);
    if theta.eta > nonneg_bound {
        out.warnings.push(format!(
            "eta = {} exceeds the nonnegativity bound 2L/(3mu) = {nonneg_bound:e}",
            theta.eta
        ));
    }
    if !report.nonnegative {
        out.warnings
            .push(format!("A(theta) has a negative entry ({:e})", report.matrix.iter().flatten().copied().fold(f64::INFINITY, f64::min)));
    }
    for i in report.hypothesis.iter().chain(&report.inequalities) {
        if !i.pass {
            out.warnings
                .push(format!("violated: {} ({:e} vs {:e})", i.name, i.lhs, i.rhs));
        }
    }
    if report.conditions_pass && report.rho_a >= 1.0 {
        out.warnings.push(format!(
            "every condition holds but rho(A) = {} is not below 1",
            report.rho_a
        ));
    }
    if report.conditions_pass && !report.guarantee.pass {
        out.warnings.push(format!(
            "every condition holds but A eps exceeds (1 - eta/(2 kappa)) eps by a factor {}",
            report.guarantee.worst_ratio
        ));
    }
    out.matrix = Some(report.matrix);
    out.rho = Some(report.rho_a);
    out.pass = report.pass;
    out.report = Some(report);
    write_theory(cfg, out)
}

fn write_theory(cfg: &ExperimentConfig, out: TheoryOutput) -> CliResult<TheoryOutput> {
    for w in &out.warnings {
        log::warn!("{w}");
    }
    write_json(&cfg.output_dir.join("theory.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsEntry {
    pub scheme: CompressionScheme,
    /// Largest `E‖Q(x) − x‖² / ‖x‖²` over the probe vectors.
    pub measured_c: f64,
    /// Constants used by `run` and `theory`.
    pub constants: SchemeConstants,
}

/// JSON emitted by `verify-ops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsReport {
    pub version: String,
    pub dim: usize,
    pub samples: usize,
    pub draws: usize,
    pub seed: u64,
    pub schemes: Vec<OpsEntry>,
}

/// Measures every configured operator on probe vectors and writes `ops.json`.
pub fn cmd_verify_ops(cfg: &ExperimentConfig) -> CliResult<OpsReport> {
    let p = cfg.verify.dim.unwrap_or_else(|| cfg.objective.data.dim());
    let schemes: Vec<SchemeConfig> = if cfg.verify.schemes.is_empty() {
        SchemeName::ALL.into_iter().map(SchemeConfig::of).collect()
    } else {
        cfg.verify.schemes.clone()
    };
    let probes = contract_samples(p, cfg.verify.samples.max(1), cfg.seed);
    let schemes = schemes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let scheme = s.build();
            scheme.validate(p)?;
            let mut rng = substream(cfg.seed, Stream::Aux(8), i);
            let measured_c = verify_contract(&scheme, &probes, cfg.verify.draws, &mut rng)?;
            let constants =
                scheme_constants(&scheme, p, cfg.verify.samples, cfg.verify.draws, cfg.seed)?;
            log::info!("{}: measured C = {measured_c:.6}", scheme.name());
            Ok(OpsEntry {
                scheme,
                measured_c,
                constants,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = OpsReport {
        version: VERSION.into(),
        dim: p,
        samples: cfg.verify.samples,
        draws: cfg.verify.draws,
        seed: cfg.seed,
        schemes,
    };
    write_json(&cfg.output_dir.join("ops.json"), &report)?;
    Ok(report)
}
