//! TOML experiment configuration. Every field is optional; missing values
//! fall back to the published experiment settings for the chosen objective,
//! topology, scheme and mode.

use std::path::{Path, PathBuf};

use cnext::compress::CompressionScheme;
use cnext::graph::TopologyKind;
use cnext::objective::ObjectiveKind;
use cnext::rng::DEFAULT_SEED;
use cnext::solver::{HyperParams, Mode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable consulted when no CovType path is configured.
pub const COVTYPE_ENV: &str = "CNEXT_COVTYPE_PATH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seeds to average over; empty means `[seed]`.
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub objective: ObjectiveConfig,
    pub network: NetworkConfig,
    pub scheme: SchemeConfig,
    pub hyperparams: HyperConfig,
    pub compare: Vec<VariantConfig>,
    pub theory: TheoryConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            seeds: vec![],
            mode: Mode::Cnext,
            output_dir: PathBuf::from("out"),
            objective: ObjectiveConfig::default(),
            network: NetworkConfig::default(),
            scheme: SchemeConfig::default(),
            hyperparams: HyperConfig::default(),
            compare: vec![],
            theory: TheoryConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Defaults to 0.5 for ridge and 0.1 for logistic.
    pub lambda: Option<f64>,
    pub data: DataConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Ridge,
            lambda: None,
            data: DataConfig::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(match self.kind {
            ObjectiveKind::Ridge => 0.5,
            ObjectiveKind::Logistic => 0.1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        /// Scale ratio between the first and last feature column.
        #[serde(default = "default_ratio")]
        column_ratio: f64,
    },
    Covtype {
        /// Falls back to the `CNEXT_COVTYPE_PATH` environment variable.
        path: Option<PathBuf>,
        #[serde(default = "default_components")]
        components: usize,
    },
}

fn default_samples() -> usize {
    500
}
fn default_dim() -> usize {
    20
}
fn default_noise() -> f64 {
    cnext::data::DEFAULT_NOISE
}
fn default_ratio() -> f64 {
    1.0
}
fn default_components() -> usize {
    10
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            samples: default_samples(),
            dim: default_dim(),
            noise: default_noise(),
            column_ratio: default_ratio(),
        }
    }
}

impl DataConfig {
    pub fn dim(&self) -> usize {
        match self {
            DataConfig::Synthetic { dim, .. } => *dim,
            DataConfig::Covtype { components, .. } => *components,
        }
    }

    /// The configured path, else the environment variable.
    pub fn covtype_path(&self) -> CliResult<PathBuf> {
        match self {
            DataConfig::Covtype { path: Some(p), .. } => Ok(p.clone()),
            DataConfig::Covtype { path: None, .. } => std::env::var_os(COVTYPE_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "objective.data: covtype source needs `path` or {COVTYPE_ENV}"
                    ))
                }),
            DataConfig::Synthetic { .. } => Err(CliError::Config(
                "objective.data: not a covtype source".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub topology: TopologyKind,
    pub n: usize,
    /// Expander degree; ignored for rings.
    pub degree: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            topology: TopologyKind::Ring,
            n: 10,
            degree: None,
        }
    }
}

impl NetworkConfig {
    pub fn degree(&self) -> usize {
        match self.topology {
            TopologyKind::CirculantExpander => self.degree.unwrap_or(6),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Identity,
    Qnbbq,
    Randomk,
    Topk,
    Qnormsigned,
}

impl SchemeName {
    pub const ALL: [SchemeName; 5] = [
        SchemeName::Identity,
        SchemeName::Qnbbq,
        SchemeName::Randomk,
        SchemeName::Topk,
        SchemeName::Qnormsigned,
    ];

    pub fn parse(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "unknown scheme `{s}` (expected identity, qnbbq, randomk, topk or qnormsigned)"
                ))
            })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Identity => "identity",
            SchemeName::Qnbbq => "qnbbq",
            SchemeName::Randomk => "randomk",
            SchemeName::Topk => "topk",
            SchemeName::Qnormsigned => "qnormsigned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeName,
    /// Quantizer bit depth.
    pub b: u32,
    /// Kept coordinates; defaults to 5 for randomk and 3 for topk.
    pub k: Option<usize>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            kind: SchemeName::Qnbbq,
            b: 2,
            k: None,
        }
    }
}

impl SchemeConfig {
    pub fn of(kind: SchemeName) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn build(&self) -> CompressionScheme {
        match self.kind {
            SchemeName::Identity => CompressionScheme::Identity,
            SchemeName::Qnbbq => CompressionScheme::Quantize { bits: self.b },
            SchemeName::Randomk => CompressionScheme::RandomK {
                k: self.k.unwrap_or(5),
            },
            SchemeName::Topk => CompressionScheme::TopK {
                k: self.k.unwrap_or(3),
            },
            SchemeName::Qnormsigned => CompressionScheme::NormSign,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha_x: Option<f64>,
    pub alpha_y: Option<f64>,
    pub iterations: Option<usize>,
    pub tol: Option<f64>,
}

impl HyperConfig {
    /// Fills gaps from `base`, keeping values already set.
    pub fn or(self, base: HyperConfig) -> HyperConfig {
        HyperConfig {
            eta: self.eta.or(base.eta),
            gamma: self.gamma.or(base.gamma),
            alpha_x: self.alpha_x.or(base.alpha_x),
            alpha_y: self.alpha_y.or(base.alpha_y),
            iterations: self.iterations.or(base.iterations),
            tol: self.tol.or(base.tol),
        }
    }
}

/// One entry of a `compare` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    /// Defaults to `mode:scheme`.
    pub label: Option<String>,
    pub mode: Mode,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub hyperparams: HyperConfig,
}

impl VariantConfig {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}:{}", self.mode.name(), self.scheme.kind.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub tau_x: Option<f64>,
    pub tau_y: Option<f64>,
    /// Explicit weights; searched for when absent.
    pub eps: Option<[f64; 5]>,
    /// `ops.json` written by `verify-ops`, consulted for scheme constants.
    pub constants: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Vector length; defaults to the objective dimension.
    pub dim: Option<usize>,
    pub samples: usize,
    pub draws: usize,
    /// Defaults to every scheme with default parameters.
    pub schemes: Vec<SchemeConfig>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            dim: None,
            samples: 32,
            draws: 2000,
            schemes: vec![],
        }
    }
}

/// Published step sizes. Ridge values are per scheme; logistic values depend
/// on the topology as well. Schemes without a published value borrow the
/// qnbbq entry.
pub fn paper_defaults(
    kind: ObjectiveKind,
    topology: TopologyKind,
    scheme: SchemeName,
    mode: Mode,
) -> HyperConfig {
    let first_order = mode == Mode::FirstOrderGt;
    match kind {
        ObjectiveKind::Ridge => {
            let eta = match (scheme, first_order) {
                (SchemeName::Randomk, false) => 0.0012,
                (SchemeName::Topk, false) => 0.006,
                (SchemeName::Qnormsigned, false) => 0.021,
                (_, false) => 0.0095,
                (SchemeName::Topk, true) => 0.0015,
                (SchemeName::Qnormsigned, true) => 0.0112,
                (_, true) => 0.013,
            };
            HyperConfig {
                eta: Some(eta),
                gamma: Some(0.6),
                alpha_x: Some(1.0),
                alpha_y: Some(1.0),
                iterations: Some(5000),
                tol: Some(0.0),
            }
        }
        ObjectiveKind::Logistic => {
            let expander = topology == TopologyKind::CirculantExpander;
            let (gamma, eta) = match (scheme, first_order, expander) {
                (SchemeName::Topk, false, false) => (0.40, 0.098),
                (SchemeName::Topk, false, true) => (0.21, 0.08),
                (SchemeName::Qnormsigned, false, false) => (0.35, 0.095),
                (SchemeName::Qnormsigned, false, true) => (0.30, 0.095),
                (_, false, false) => (0.35, 0.093),
                (_, false, true) => (0.20, 0.09),
                (SchemeName::Topk, true, false) => (0.65, 0.05),
                (SchemeName::Topk, true, true) => (0.21, 0.10),
                (SchemeName::Qnormsigned, true, false) => (0.35, 0.15),
                (SchemeName::Qnormsigned, true, true) => (0.30, 0.10),
                (_, true, false) => (0.35, 0.10),
                (_, true, true) => (0.20, 0.10),
            };
            HyperConfig {
                eta: Some(eta),
                gamma: Some(gamma),
                alpha_x: Some(0.5),
                alpha_y: Some(0.5),
                iterations: Some(1000),
                tol: Some(0.0),
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Referential checks that serde cannot express.
    pub fn validate(&self) -> CliResult<()> {
        let p = self.objective.data.dim();
        if p == 0 {
            return Err(CliError::Config("objective.data: dimension must be positive".into()));
        }
        if let Some(l) = self.objective.lambda {
            if !(l > 0.0) {
                return Err(CliError::Config(format!(
                    "objective.lambda: must be positive, got {l}"
                )));
            }
        }
        if self.network.topology == TopologyKind::Custom {
            return Err(CliError::Config(
                "network.topology: custom graphs are not configurable from a file".into(),
            ));
        }
        if self.network.n == 0 {
            return Err(CliError::Config("network.n: must be positive".into()));
        }
        let schemes = std::iter::once(("scheme", &self.scheme))
            .chain(self.compare.iter().map(|v| ("compare.scheme", &v.scheme)));
        for (field, s) in schemes {
            s.build()
                .validate(p)
                .map_err(|e| CliError::Config(format!("{field}: {e}")))?;
        }
        Ok(())
    }

    /// Hyperparameters for `mode` and `scheme`, explicit values first.
    pub fn hyperparams_for(
        &self,
        mode: Mode,
        scheme: SchemeName,
        explicit: HyperConfig,
    ) -> HyperParams {
        let h = explicit.or(self.hyperparams).or(paper_defaults(
            self.objective.kind,
            self.network.topology,
            scheme,
            mode,
        ));
        HyperParams {
            eta: h.eta.unwrap_or_default(),
            gamma: h.gamma.unwrap_or_default(),
            alpha_x: h.alpha_x.unwrap_or_default(),
            alpha_y: h.alpha_y.unwrap_or_default(),
            iterations: h.iterations.unwrap_or_default(),
            tol: h.tol.unwrap_or_default(),
        }
    }

    pub fn resolved_hyperparams(&self) -> HyperParams {
        self.hyperparams_for(self.mode, self.scheme.kind, HyperConfig::default())
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub mode: Option<Mode>,
    pub output_dir: Option<PathBuf>,
    pub scheme: Option<SchemeName>,
    pub k: Option<usize>,
    pub b: Option<u32>,
    pub hyper: HyperConfig,
    pub covtype_path: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> CliResult<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.scheme {
            cfg.scheme.kind = s;
        }
        if self.k.is_some() {
            cfg.scheme.k = self.k;
        }
        if let Some(b) = self.b {
            cfg.scheme.b = b;
        }
        cfg.hyperparams = self.hyper.or(cfg.hyperparams);
        if let Some(p) = &self.covtype_path {
            match &mut cfg.objective.data {
                DataConfig::Covtype { path, .. } => *path = Some(p.clone()),
                DataConfig::Synthetic { .. } => {
                    return Err(CliError::Config(
                        "--covtype-path given but objective.data is synthetic".into(),
                    ))
                }
            }
        }
        cfg.validate()
    }
}
