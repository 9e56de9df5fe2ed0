//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per check
//! and exits nonzero if any check fails.

use std::path::Path;
use std::time::Instant;

use cnext::compress::{
    compress_vector, contract_samples, scheme_constants, verify_contract, CompressionScheme,
    SchemeConstants,
};
use cnext::data::COVTYPE_ROWS;
use cnext::graph::TopologyKind;
use cnext::objective::ObjectiveKind;
use cnext::rng::{substream, Stream};
use cnext::solver::{
    record, run, run_seeds, step, HyperParams, Mode, Problem, SolverState,
};
use cnext::theory::{
    assemble_a, check_theorem2, find_epsilon, spectral_radius, ProblemConstants, TauChoice,
    TheoryConstants, Theta,
};
use cnext_cli::commands::{build_problem, cmd_run, cmd_verify_ops, Setup};
use cnext_cli::config::{
    DataConfig, ExperimentConfig, HyperConfig, SchemeConfig, SchemeName, COVTYPE_ENV,
};
use nalgebra::DMatrix;
use rayon::prelude::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Ridge instance on a 5-agent ring with `p = 4`.
fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.objective.data = DataConfig::Synthetic {
        samples: 100,
        dim: 4,
        noise: 0.1,
        column_ratio: 1.0,
    };
    cfg.network.n = 5;
    cfg
}

fn small_schemes() -> Vec<CompressionScheme> {
    vec![
        CompressionScheme::Identity,
        CompressionScheme::Quantize { bits: 2 },
        CompressionScheme::RandomK { k: 2 },
        CompressionScheme::TopK { k: 2 },
        CompressionScheme::NormSign,
    ]
}

fn small_hp(iterations: usize) -> HyperParams {
    HyperParams {
        eta: 0.05,
        gamma: 0.3,
        alpha_x: 0.2,
        alpha_y: 0.2,
        iterations,
        tol: 0.0,
    }
}

fn tracking_preservation() -> Outcome {
    let start = Instant::now();
    let setup = build_problem(&small_config()).unwrap();
    let hp = small_hp(200);
    let mut worst = 0.0_f64;
    for scheme in small_schemes() {
        let mut state = SolverState::init(&setup.problem, &hp, 42).unwrap();
        worst = worst.max(state.tracking_gap());
        for _ in 0..hp.iterations {
            if let Err(e) = step(&mut state, &setup.problem, &scheme, &hp, Mode::Cnext) {
                return Outcome::Fail(format!("{}: {e}", scheme.name()));
            }
            worst = worst.max(state.tracking_gap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs < 1.0,
        format!("max |mean(Y) - mean(grad F)| = {worst:.3e} (tol 1e-10) over 5 schemes x 200 rounds in {secs:.2} s (limit 1 s)"),
    )
}

fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn compress_state_identity() -> Outcome {
    let setup = build_problem(&small_config()).unwrap();
    let net = &setup.problem.network;
    let hp = small_hp(200);
    let (mut worst_memory, mut worst_estimate) = (0.0_f64, 0.0_f64);
    for scheme in small_schemes() {
        let mut state = SolverState::init(&setup.problem, &hp, 42).unwrap();
        for _ in 0..hp.iterations {
            let r = match step(&mut state, &setup.problem, &scheme, &hp, Mode::Cnext) {
                Ok(r) => r,
                Err(e) => return Outcome::Fail(format!("{}: {e}", scheme.name())),
            };
            worst_estimate = worst_estimate.max(r.weighted_estimate_gap);
            for ch in [state.channel_x(), state.channel_y()] {
                worst_memory =
                    worst_memory.max(relative_gap(ch.weighted_memory(), &net.mix(ch.memory())));
            }
        }
    }
    verdict(
        worst_memory <= 1e-10 && worst_estimate <= 1e-10,
        format!("max relative |H^w - W H| = {worst_memory:.3e}, |Z^w - W Z| = {worst_estimate:.3e} (tol 1e-10)"),
    )
}

/// Plain Network-GIANT: exact mixing with `(1 - γ)I + γW`.
fn giant_reference(
    problem: &Problem,
    hp: &HyperParams,
    x0: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let n = problem.agents();
    let w = problem.network.weights();
    let wt = DMatrix::identity(n, n) * (1.0 - hp.gamma) + w * hp.gamma;
    let grads = |x: &DMatrix<f64>| {
        let mut g = DMatrix::zeros(x.nrows(), x.ncols());
        for i in 0..n {
            let xi = x.row(i).transpose();
            let gi = problem.objective.local_gradient(i, &xi).unwrap();
            g.set_row(i, &gi.transpose());
        }
        g
    };
    let mut x = x0.clone();
    let mut g = grads(&x);
    let mut y = g.clone();
    let mut out = vec![x.clone()];
    for _ in 0..hp.iterations {
        let mut d = DMatrix::zeros(x.nrows(), x.ncols());
        for i in 0..n {
            let xi = x.row(i).transpose();
            let h = problem.objective.local(i, &xi).unwrap().hessian;
            let yi = y.row(i).transpose();
            let di = h.lu().solve(&yi).unwrap();
            d.set_row(i, &di.transpose());
        }
        let x_new = &wt * &x - d * hp.eta;
        let g_new = grads(&x_new);
        y = &wt * &y + &g_new - &g;
        x = x_new;
        g = g_new;
        out.push(x.clone());
    }
    out
}

fn uncompressed_recovery() -> Outcome {
    let setup = build_problem(&ExperimentConfig::default()).unwrap();
    let hp = HyperParams {
        eta: 0.0095,
        gamma: 0.6,
        alpha_x: 1.0,
        alpha_y: 1.0,
        iterations: 300,
        tol: 0.0,
    };
    let mut state = SolverState::init(&setup.problem, &hp, 42).unwrap();
    let reference = giant_reference(&setup.problem, &hp, state.x());
    let mut worst_comp = 0.0_f64;
    let mut worst_diff = relative_gap(state.x(), &reference[0]);
    for x_ref in &reference[1..] {
        let r = step(&mut state, &setup.problem, &CompressionScheme::Identity, &hp, Mode::Cnext)
            .unwrap();
        worst_comp = worst_comp
            .max(r.decision_compression)
            .max(r.tracker_compression);
        worst_diff = worst_diff.max(relative_gap(state.x(), x_ref));
    }
    let giant = run(
        &setup.problem,
        &CompressionScheme::TopK { k: 3 },
        &hp,
        Mode::UncompressedGiant,
        42,
    )
    .unwrap();
    let cnext = run(&setup.problem, &CompressionScheme::Identity, &hp, Mode::Cnext, 42).unwrap();
    verdict(
        worst_comp <= 1e-20 && worst_diff <= 1e-9 && giant == cnext,
        format!(
            "identity |Z - Z_hat|^2 <= {worst_comp:.1e} (tol 1e-20); max relative gap to direct Network-GIANT {worst_diff:.2e} over 300 rounds (tol 1e-9); GIANT mode trace identical: {}",
            giant == cnext
        ),
    )
}

fn operator_contracts() -> Outcome {
    let start = Instant::now();
    let p = 20;
    let probes = contract_samples(p, 32, 7);
    let mut rng = substream(7, Stream::Aux(9), 0);
    let rk = verify_contract(&CompressionScheme::RandomK { k: 5 }, &probes, 4000, &mut rng).unwrap();
    let ones = vec![vec![1.0; p]];
    let tk = verify_contract(&CompressionScheme::TopK { k: 5 }, &ones, 1, &mut rng).unwrap();
    let tk_gauss = verify_contract(&CompressionScheme::TopK { k: 5 }, &probes[1..], 1, &mut rng)
        .unwrap();

    // dithered quantizer: per-coordinate sample mean within 3 standard errors
    let q = CompressionScheme::Quantize { bits: 2 };
    let x = &probes[1];
    let draws = 100_000;
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    for _ in 0..draws {
        let (v, _) = compress_vector(&q, x, &mut rng).unwrap();
        for j in 0..p {
            sum[j] += v[j];
            sum_sq[j] += v[j] * v[j];
        }
    }
    let mut worst_z = 0.0_f64;
    for j in 0..p {
        let mean = sum[j] / draws as f64;
        let var = (sum_sq[j] / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        let z = if se > 0.0 {
            (mean - x[j]).abs() / se
        } else if mean == x[j] {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.path().to_path_buf();
    let ops = cmd_verify_ops(&cfg).unwrap();
    let recorded = dir.path().join("ops.json").exists();
    let all_finite = ops
        .schemes
        .iter()
        .all(|e| e.measured_c.is_finite() && e.constants.c.is_finite());
    let table: Vec<String> = ops
        .schemes
        .iter()
        .map(|e| format!("{} {:.4}", e.scheme.name(), e.measured_c))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = (rk - 0.75).abs() <= 0.02
        && (tk - 0.75).abs() <= 1e-15
        && tk_gauss <= 0.75 + 1e-15
        && worst_z <= 3.0
        && recorded
        && all_finite;
    verdict(
        ok,
        format!(
            "RandomK(5,20) C = {rk:.4} (0.75 +- 0.02); TopK(5,20) worst case C = {tk} (exact 0.75), Gaussian max {tk_gauss:.4}; qnbbq max |z| = {worst_z:.2} (<= 3); measured C [{}] in ops.json; {secs:.1} s",
            table.join(", ")
        ),
    )
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..k)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (k - 1) as f64))
        .collect()
}

fn paper_constants() -> (Setup, ProblemConstants) {
    let setup = build_problem(&ExperimentConfig::default()).unwrap();
    let pc = ProblemConstants::from_parts(&setup.problem.objective, &setup.problem.network);
    (setup, pc)
}

fn theory_soundness() -> Outcome {
    let start = Instant::now();
    let (setup, pc) = paper_constants();
    let p = setup.problem.dim();
    let q = CompressionScheme::Quantize { bits: 2 };
    let qc = scheme_constants(&q, p, 32, 2000, 42).unwrap();
    let schemes: Vec<(&str, SchemeConstants, f64)> = vec![
        ("identity", CompressionScheme::Identity.analytic_constants(p).unwrap(), 1.0),
        ("randomk", CompressionScheme::RandomK { k: 5 }.analytic_constants(p).unwrap(), 1.0),
        ("qnbbq", qc, 1.0 / qc.r),
    ];
    let etas = log_grid(1e-12, 1e-2, 20);
    let gammas = log_grid(1e-4, 1.0, 20);
    let mut lines = vec![];
    let mut bad_total = 0;
    let mut example = None;
    for (name, sc, alpha) in &schemes {
        let points: Vec<(f64, f64)> = etas
            .iter()
            .flat_map(|&e| gammas.iter().map(move |&g| (e, g)))
            .collect();
        let results: Vec<Option<(bool, bool, f64, f64, f64, f64)>> = points
            .par_iter()
            .map(|&(eta, gamma)| {
                let theta = Theta {
                    eta,
                    gamma,
                    alpha_x: *alpha,
                    alpha_y: *alpha,
                };
                let tc = TheoryConstants::new(&pc, sc, &theta, TauChoice::default()).ok()?;
                let eps = find_epsilon(&tc, &theta)?;
                let r = check_theorem2(&tc, &theta, &eps).ok()?;
                Some((
                    r.rho_a < 1.0,
                    r.guarantee.pass,
                    r.rho_a,
                    r.guarantee.worst_ratio,
                    eta,
                    gamma,
                ))
            })
            .collect();
        let feasible: Vec<_> = results.into_iter().flatten().collect();
        let rho_bad = feasible.iter().filter(|r| !r.0).count();
        let g_bad = feasible.iter().filter(|r| !r.1).count();
        let bad = feasible.iter().filter(|r| !(r.0 && r.1)).count();
        if example.is_none() {
            if let Some(r) = feasible.iter().find(|r| !r.0) {
                example = Some(format!(
                    "{name} eta={:.1e} gamma={:.1e}: rho(A)-1 = {:.2e}, worst ratio {:.8}",
                    r.4,
                    r.5,
                    r.2 - 1.0,
                    r.3
                ));
            }
        }
        bad_total += bad;
        lines.push(format!(
            "{name}: {} feasible, {rho_bad} with rho(A) >= 1, {g_bad} violating A eps <= (1 - eta/2kappa) eps",
            feasible.len()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        bad_total == 0 && secs < 10.0,
        format!(
            "20x20 grid on the ring-10 ridge constants; {}; e.g. {}; {secs:.1} s (limit 10 s)",
            lines.join("; "),
            example.unwrap_or_else(|| "none".into())
        ),
    )
}

/// Least-squares slope of `log10(opt_err)` over the second half of the
/// stretch before the error reaches the floating-point floor.
fn tail_slope(opt: &[f64]) -> f64 {
    let end = opt
        .iter()
        .position(|&e| e <= 1e-20)
        .unwrap_or(opt.len() - 1)
        .max(4);
    let start = end / 2;
    let pts: Vec<(f64, f64)> = (start..=end)
        .map(|t| (t as f64, opt[t].max(1e-300).log10()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn paper_replication() -> Outcome {
    let cfg = ExperimentConfig::default();
    let setup = build_problem(&cfg).unwrap();
    let names = [
        SchemeName::Qnbbq,
        SchemeName::Randomk,
        SchemeName::Topk,
        SchemeName::Qnormsigned,
    ];
    let results: Vec<(SchemeName, HyperParams, Result<(f64, f64, f64), String>)> = names
        .par_iter()
        .map(|&name| {
            let hp = cfg.hyperparams_for(Mode::Cnext, name, HyperConfig::default());
            let scheme = SchemeConfig::of(name).build();
            let out = run(&setup.problem, &scheme, &hp, Mode::Cnext, cfg.seed)
                .map_err(|e| e.to_string())
                .map(|tr| {
                    let opt: Vec<f64> = tr.records.iter().map(|r| r.errors.opt).collect();
                    let last = tr.last().unwrap();
                    (tail_slope(&opt), last.residual, last.errors.opt)
                });
            (name, hp, out)
        })
        .collect();
    let mut ok = true;
    let mut parts = vec![];
    for (name, hp, out) in results {
        match out {
            Ok((slope, residual, opt)) => {
                let pass = slope < -1e-3 && residual.is_finite() && residual <= 1e-6;
                ok &= pass;
                parts.push(format!(
                    "{} eta={}: slope {slope:.2e}, final residual {residual:.2e}, opt_err {opt:.2e} [{}]",
                    name.as_str(),
                    hp.eta,
                    if pass { "ok" } else { "fail" }
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{} eta={}: {e} [fail]", name.as_str(), hp.eta));
            }
        }
    }
    verdict(
        ok,
        format!(
            "p=20 n=10 N=500 lambda=0.5 gamma=0.6 alpha=1 T=5000 seed 42 (slope < -1e-3, residual <= 1e-6): {}",
            parts.join("; ")
        ),
    )
}

/// Rounds and bits until the residual first reaches `level`.
fn time_to(
    problem: &Problem,
    scheme: &CompressionScheme,
    hp: &HyperParams,
    mode: Mode,
    level: f64,
) -> Option<(usize, u64)> {
    let mut state = SolverState::init(problem, hp, 42).ok()?;
    loop {
        let rec = record(&state, problem).ok()?;
        if rec.residual.is_finite() && rec.residual <= level {
            return Some((rec.t, rec.bits_cum));
        }
        if state.t() >= hp.iterations {
            return None;
        }
        step(&mut state, problem, scheme, hp, mode).ok()?;
    }
}

/// Best (rounds, bits, η) over the step-size grid.
fn best_on_grid(problem: &Problem, mode: Mode, etas: &[f64]) -> Option<(usize, u64, f64)> {
    let scheme = CompressionScheme::Quantize { bits: 2 };
    etas.par_iter()
        .filter_map(|&eta| {
            let hp = HyperParams {
                eta,
                gamma: 0.6,
                alpha_x: 1.0,
                alpha_y: 1.0,
                iterations: 5000,
                tol: 0.0,
            };
            time_to(problem, &scheme, &hp, mode, 1e-6).map(|(t, b)| (t, b, eta))
        })
        .min_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)))
}

fn describe(best: Option<(usize, u64, f64)>) -> String {
    match best {
        Some((t, b, eta)) => format!("{t} rounds / {b} bits at eta={eta:.2e}"),
        None => "never".into(),
    }
}

fn second_order_advantage() -> (Outcome, String) {
    let etas = log_grid(1e-4, 1.0, 17);
    let mut cfg = ExperimentConfig::default();
    cfg.objective.data = DataConfig::Synthetic {
        samples: 500,
        dim: 20,
        noise: 0.1,
        column_ratio: 30.0,
    };
    let ill = build_problem(&cfg).unwrap();
    let cn = best_on_grid(&ill.problem, Mode::Cnext, &etas);
    let fo = best_on_grid(&ill.problem, Mode::FirstOrderGt, &etas);
    let ok = match (cn, fo) {
        (Some(c), Some(f)) => c.0 < f.0 && c.1 < f.1,
        (Some(_), None) => true,
        _ => false,
    };
    let outcome = verdict(
        ok,
        format!(
            "qnbbq, gamma=0.6, alpha=1, kappa={:.0}, best eta per variant on a 17-point grid in [1e-4, 1], residual 1e-6: CNEXT {} vs first-order GT {}",
            ill.objective.kappa,
            describe(cn),
            describe(fo)
        ),
    );
    let paper = build_problem(&ExperimentConfig::default()).unwrap();
    let pc = best_on_grid(&paper.problem, Mode::Cnext, &etas);
    let pf = best_on_grid(&paper.problem, Mode::FirstOrderGt, &etas);
    let note = format!(
        "same protocol on the well-conditioned instance (kappa={:.0}, global Hessian nearly isotropic): CNEXT {} vs first-order GT {}",
        paper.objective.kappa,
        describe(pc),
        describe(pf)
    );
    (outcome, note)
}

fn statistical_contraction() -> Outcome {
    let start = Instant::now();
    let setup = build_problem(&small_config()).unwrap();
    let p = setup.problem.dim();
    let pc = ProblemConstants::from_parts(&setup.problem.objective, &setup.problem.network);
    let candidates: Vec<(CompressionScheme, SchemeConstants, f64)> = {
        let rk = CompressionScheme::RandomK { k: 2 };
        let q = CompressionScheme::Quantize { bits: 2 };
        let qc = scheme_constants(&q, p, 32, 2000, 42).unwrap();
        vec![
            (rk, rk.analytic_constants(p).unwrap(), 1.0),
            (q, qc, 1.0 / qc.r),
            (
                CompressionScheme::Identity,
                CompressionScheme::Identity.analytic_constants(p).unwrap(),
                1.0,
            ),
        ]
    };
    let etas = log_grid(1e-12, 1e-2, 40);
    let gammas = log_grid(1e-4, 1.0, 40);
    let mut chosen = None;
    'outer: for (scheme, sc, alpha) in &candidates {
        // largest feasible η, then largest γ
        for &eta in etas.iter().rev() {
            for &gamma in gammas.iter().rev() {
                let theta = Theta {
                    eta,
                    gamma,
                    alpha_x: *alpha,
                    alpha_y: *alpha,
                };
                let Ok(tc) = TheoryConstants::new(&pc, sc, &theta, TauChoice::default()) else {
                    continue;
                };
                if find_epsilon(&tc, &theta).is_some() {
                    chosen = Some((*scheme, tc, theta));
                    break 'outer;
                }
            }
        }
    }
    let Some((scheme, tc, theta)) = chosen else {
        return Outcome::Fail("no Theorem-2-feasible step sizes found on ring-5".into());
    };
    let a = assemble_a(&tc, &theta);
    let hp = HyperParams {
        eta: theta.eta,
        gamma: theta.gamma,
        alpha_x: theta.alpha_x,
        alpha_y: theta.alpha_y,
        iterations: 101,
        tol: 0.0,
    };
    // Under RandomK the compression error decays geometrically per coordinate,
    // so after a dozen rounds its mean rests on a few surviving coordinates;
    // 200 seeds leave that average too noisy to compare against a 10% margin.
    let seeds: Vec<u64> = (0..4000).collect();
    let runs = match run_seeds(&setup.problem, &scheme, &hp, Mode::Cnext, &seeds) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let e: Vec<[f64; 5]> = runs.mean.records.iter().map(|r| r.errors.to_array()).collect();
    let mut worst = 0.0_f64;
    let mut worst_at = (0, 0);
    for t in 0..=100 {
        let bound = a.apply(&e[t]);
        for i in 0..5 {
            let ratio = e[t + 1][i] / bound[i];
            if ratio > worst {
                worst = ratio;
                worst_at = (t, i);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1.1 && secs <= 120.0,
        format!(
            "{} with eta={:.2e} gamma={:.2e} alpha={:.3}, rho(A)={:.9}: max e(t+1)/(A e(t)) = {worst:.4} at t={}, component {} (limit 1.1) over {} seeds, t <= 100; {secs:.1} s",
            scheme.name(),
            theta.eta,
            theta.gamma,
            theta.alpha_x,
            spectral_radius(&a),
            worst_at.0,
            worst_at.1,
            seeds.len()
        ),
    )
}

fn covtype_config(path: &Path, expander: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.objective.kind = ObjectiveKind::Logistic;
    cfg.objective.data = DataConfig::Covtype {
        path: Some(path.to_path_buf()),
        components: 10,
    };
    if expander {
        cfg.network.topology = TopologyKind::CirculantExpander;
        cfg.network.n = 14;
    }
    cfg
}

fn covtype_accuracy() -> Outcome {
    let Some(path) = std::env::var_os(COVTYPE_ENV) else {
        return Outcome::Skip(format!("{COVTYPE_ENV} not set"));
    };
    let path = std::path::PathBuf::from(path);
    let mut ok = true;
    let mut parts = vec![];
    for (expander, want) in [(false, (400_000, 166_602)), (true, (400_008, 166_594))] {
        let cfg = covtype_config(&path, expander);
        let setup = match build_problem(&cfg) {
            Ok(s) => s,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        let hp = cfg.resolved_hyperparams();
        let scheme = cfg.scheme.build();
        let label = if expander { "expander-14" } else { "ring-10" };
        let acc = run(&setup.problem, &scheme, &hp, Mode::Cnext, cfg.seed)
            .ok()
            .and_then(|tr| tr.last().and_then(|r| r.accuracy));
        let split = (setup.data.train, setup.data.test);
        let split_ok = setup.data.samples != COVTYPE_ROWS || split == want;
        let acc_ok = acc.is_some_and(|a| (a - 0.60).abs() <= 0.03);
        ok &= split_ok && acc_ok;
        parts.push(format!(
            "{label}: accuracy {} (0.60 +- 0.03), split {}/{} of {} rows{}",
            acc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into()),
            split.0,
            split.1,
            setup.data.samples,
            if setup.data.samples == COVTYPE_ROWS {
                format!(" (expected {}/{})", want.0, want.1)
            } else {
                String::new()
            }
        ));
    }
    verdict(ok, parts.join("; "))
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    for name in ["trace.csv"] {
        out.push((name.to_owned(), std::fs::read(dir.join(name)).unwrap()));
    }
    if let Ok(rd) = std::fs::read_dir(dir.join("seeds")) {
        let mut files: Vec<_> = rd.map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files {
            let name = f.file_name().unwrap().to_string_lossy().into_owned();
            out.push((name, std::fs::read(&f).unwrap()));
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut small = small_config();
    small.seeds = vec![7, 8, 9];
    small.hyperparams = HyperConfig {
        eta: Some(0.05),
        gamma: Some(0.3),
        alpha_x: Some(0.5),
        alpha_y: Some(0.5),
        iterations: Some(300),
        tol: None,
    };
    let mut paper = ExperimentConfig::default();
    paper.hyperparams.iterations = Some(500);
    let mut identical = true;
    let mut files = 0;
    for (name, cfg) in [("ring5-qnbbq", small), ("paper-ridge", paper)] {
        let mut outputs = vec![];
        for (k, threads) in [1, 4, 1].into_iter().enumerate() {
            let mut c = cfg.clone();
            c.output_dir = root.path().join(format!("{name}-{k}"));
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            if let Err(e) = pool.install(|| cmd_run(&c)) {
                return Outcome::Fail(format!("{name}: {e}"));
            }
            outputs.push(read_tree(&c.output_dir));
        }
        files += outputs[0].len();
        identical &= outputs.windows(2).all(|w| w[0] == w[1]);
    }
    verdict(
        identical,
        format!("{files} CSV files byte-identical across 3 runs each (1, 4, 1 threads)"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        let (tag, detail) = match o {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {name}: {detail}");
    };
    report("gradient-tracking preservation", tracking_preservation());
    report("compress-state identity", compress_state_identity());
    report("uncompressed recovery", uncompressed_recovery());
    report("operator contracts", operator_contracts());
    report("theory soundness sweep", theory_soundness());
    report("ridge replication", paper_replication());
    let (adv, note) = second_order_advantage();
    report("second-order advantage", adv);
    println!("[NOTE] second-order advantage: {note}");
    report("statistical contraction", statistical_contraction());
    report("covtype accuracy", covtype_accuracy());
    report("determinism", determinism());
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
