//! Synchronous-round solver with compressed gradient tracking.
//!
//! One round, for all agents at once (rows of `n × p` matrices):
//!
//! ```text
//! X̂, X̂ʷ ← channel_x(X)          Ŷ, Ŷʷ ← channel_y(Y)
//! D      ← [∇²f_i(x_i)]⁻¹ y_i     (raw y_i for the first-order comparator)
//! X'     ← X − γ(X̂ − X̂ʷ) − ηD
//! Y'     ← Y − γ(Ŷ − Ŷʷ) + ∇F(X') − ∇F(X)
//! ```
//!
//! With `Y(0) = ∇F(X(0))` the network average of `Y` equals the average local
//! gradient at every round, whatever the compression.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::{CompressState, CompressionScheme, SchemeConstants};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::objective::{centralized_newton, ridge_closed_form_optimum, Objective, ObjectiveKind};
use crate::rng::{agent_streams, substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Compressed approximate Newton with gradient tracking.
    Cnext,
    /// Same channels, but steps along the raw tracker.
    FirstOrderGt,
    /// Approximate Newton over exact channels.
    UncompressedGiant,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Cnext => "cnext",
            Mode::FirstOrderGt => "first-order-gt",
            Mode::UncompressedGiant => "uncompressed-giant",
        }
    }

    /// The operator actually applied on the wire.
    pub fn effective_scheme(&self, scheme: &CompressionScheme) -> CompressionScheme {
        match self {
            Mode::UncompressedGiant => CompressionScheme::Identity,
            _ => *scheme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Step size `η`.
    pub eta: f64,
    /// Consensus step size `γ`.
    pub gamma: f64,
    /// Memory step of the decision channel.
    pub alpha_x: f64,
    /// Memory step of the tracker channel.
    pub alpha_y: f64,
    /// Round budget `T`.
    pub iterations: usize,
    /// Stop once the averaged gradient norm falls to this value; 0 runs the full budget.
    pub tol: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        for (name, a) in [("alpha_x", self.alpha_x), ("alpha_y", self.alpha_y)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tol must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }

    /// Soft conditions from the convergence analysis that the run violates.
    pub fn warnings(&self, obj: &Objective, constants: Option<&SchemeConstants>) -> Vec<String> {
        let mut out = vec![];
        let (mu, l) = (obj.mu(), obj.l());
        let cap = (2.0 * l / (3.0 * mu)).min(mu / l);
        if self.eta > cap {
            out.push(format!(
                "eta = {} exceeds min(2L/(3mu), mu/L) = {cap:.6e}",
                self.eta
            ));
        }
        if let Some(c) = constants {
            for (name, a) in [("alpha_x", self.alpha_x), ("alpha_y", self.alpha_y)] {
                if a > 1.0 / c.r {
                    out.push(format!("{name} = {a} exceeds 1/r = {:.6}", 1.0 / c.r));
                }
            }
        }
        out
    }
}

/// A test set for classification accuracy.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl LabeledSet {
    /// Fraction of samples where `sign(uᵀx)` matches the label (ties count as +1).
    pub fn accuracy(&self, x: &DVector<f64>) -> f64 {
        let margins = &self.features * x;
        let hits = margins
            .iter()
            .zip(self.labels.iter())
            .filter(|(m, v)| (if **m >= 0.0 { 1.0 } else { -1.0 }) == **v)
            .count();
        hits as f64 / self.labels.len().max(1) as f64
    }
}

/// Objective, network, and the reference optimum the errors are measured against.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: Objective,
    pub network: Network,
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub test_set: Option<LabeledSet>,
}

impl Problem {
    /// Computes the reference optimum: closed form for ridge, centralized
    /// Newton for logistic.
    pub fn new(objective: Objective, network: Network) -> Result<Self> {
        if objective.agents() != network.n() {
            return Err(Error::DimensionMismatch {
                context: "agents vs network size",
                expected: network.n().to_string(),
                actual: objective.agents().to_string(),
            });
        }
        let x_star = match objective.kind() {
            ObjectiveKind::Ridge => ridge_closed_form_optimum(&objective)?,
            ObjectiveKind::Logistic => {
                centralized_newton(&objective, &DVector::zeros(objective.dim()), 1e-10, 200)?.x
            }
        };
        let f_star = objective.value(&x_star)?;
        Ok(Problem {
            objective,
            network,
            x_star,
            f_star,
            test_set: None,
        })
    }

    pub fn with_test_set(mut self, test: LabeledSet) -> Self {
        self.test_set = Some(test);
        self
    }

    pub fn agents(&self) -> usize {
        self.network.n()
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }
}

/// Realized squared errors of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ErrorVector {
    /// `‖x̄ − x*‖²`
    pub opt: f64,
    /// `‖X − 1x̄‖²`
    pub cons: f64,
    /// `‖Y − 1ȳ‖²`
    pub gt: f64,
    /// `‖X − H_x‖²`
    pub comp_x: f64,
    /// `‖Y − H_y‖²`
    pub comp_y: f64,
}

impl ErrorVector {
    pub fn to_array(&self) -> [f64; 5] {
        [self.opt, self.cons, self.gt, self.comp_x, self.comp_y]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        ErrorVector {
            opt: a[0],
            cons: a[1],
            gt: a[2],
            comp_x: a[3],
            comp_y: a[4],
        }
    }
}

fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.row_mean().transpose()
}

fn spread(m: &DMatrix<f64>) -> f64 {
    let mean = m.row_mean();
    m.row_iter().map(|r| (r - &mean).norm_squared()).sum()
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

fn local_gradients(obj: &Objective, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        g.set_row(i, &obj.local_gradient(i, &row(x, i))?.transpose());
    }
    Ok(g)
}

/// Complete state of one run.
#[derive(Debug, Clone)]
pub struct SolverState {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    grad: DMatrix<f64>,
    channel_x: CompressState,
    channel_y: CompressState,
    rng_x: Vec<ChaCha8Rng>,
    rng_y: Vec<ChaCha8Rng>,
    t: usize,
    bits_cum: u64,
}

impl SolverState {
    /// Draws `X(0)`, `H_x(0)`, `H_y(0)` i.i.d. uniform on `[0, 1]` from the
    /// seed and sets `Y(0) = ∇F(X(0))`.
    pub fn init(problem: &Problem, hp: &HyperParams, seed: u64) -> Result<Self> {
        let (n, p) = (problem.agents(), problem.dim());
        let mut x = DMatrix::zeros(n, p);
        let mut hx = DMatrix::zeros(n, p);
        let mut hy = DMatrix::zeros(n, p);
        for i in 0..n {
            let mut rng = substream(seed, Stream::Init, i);
            for m in [&mut x, &mut hx, &mut hy] {
                for j in 0..p {
                    m[(i, j)] = rng.random::<f64>();
                }
            }
        }
        Self::from_parts(problem, hp, seed, x, hx, hy)
    }

    /// Starts from explicit initial values.
    pub fn from_parts(
        problem: &Problem,
        hp: &HyperParams,
        seed: u64,
        x0: DMatrix<f64>,
        hx0: DMatrix<f64>,
        hy0: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, p) = (problem.agents(), problem.dim());
        for (name, m) in [("X(0)", &x0), ("H_x(0)", &hx0), ("H_y(0)", &hy0)] {
            if m.shape() != (n, p) {
                return Err(Error::DimensionMismatch {
                    context: "initial state",
                    expected: format!("{n}x{p}"),
                    actual: format!("{name} is {}x{}", m.nrows(), m.ncols()),
                });
            }
        }
        let grad = local_gradients(&problem.objective, &x0)?;
        Ok(SolverState {
            y: grad.clone(),
            grad,
            x: x0,
            channel_x: CompressState::new(hx0, &problem.network, hp.alpha_x)?,
            channel_y: CompressState::new(hy0, &problem.network, hp.alpha_y)?,
            rng_x: agent_streams(seed, Stream::Decision, n),
            rng_y: agent_streams(seed, Stream::Tracker, n),
            t: 0,
            bits_cum: 0,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// `∇F(X(t))`, one local gradient per row.
    pub fn gradients(&self) -> &DMatrix<f64> {
        &self.grad
    }

    pub fn channel_x(&self) -> &CompressState {
        &self.channel_x
    }

    pub fn channel_y(&self) -> &CompressState {
        &self.channel_y
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn bits_cum(&self) -> u64 {
        self.bits_cum
    }

    /// Network average of the iterates.
    pub fn x_bar(&self) -> DVector<f64> {
        column_mean(&self.x)
    }

    /// `‖(1/n)1ᵀY − (1/n)1ᵀ∇F(X)‖`.
    pub fn tracking_gap(&self) -> f64 {
        (column_mean(&self.y) - column_mean(&self.grad)).norm()
    }

    /// `‖(1/n)1ᵀ∇F(X)‖`.
    pub fn mean_gradient_norm(&self) -> f64 {
        column_mean(&self.grad).norm()
    }
}

/// Per-round quantities used by the invariant checks.
#[derive(Debug, Clone, Copy)]
pub struct RoundReport {
    /// `‖X − X̂‖²` realized this round.
    pub decision_compression: f64,
    /// `‖Y − Ŷ‖²` realized this round.
    pub tracker_compression: f64,
    /// `max |X̂ʷ − W·X̂| / max(1, max |W·X̂|)`, worst of both channels.
    pub weighted_estimate_gap: f64,
    /// `‖D − 1d̄‖²`
    pub direction_spread: f64,
    /// `‖Y(t)‖²`
    pub tracker_norm_sq: f64,
    /// `‖X(t+1) − X(t)‖`
    pub step_norm: f64,
    /// `‖∇F(X(t+1)) − ∇F(X(t))‖`
    pub gradient_change: f64,
    pub bits: u64,
}

/// Largest entrywise gap between `a` and `b`, relative to `max(1, max |b|)`.
pub fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn check_finite(m: &DMatrix<f64>, t: usize, quantity: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { t, quantity })
    }
}

/// Local search directions, one row per agent.
pub fn directions(
    obj: &Objective,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    if mode == Mode::FirstOrderGt {
        return Ok(y.clone());
    }
    let mut d = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        let hess = obj.local(i, &row(x, i))?.hessian;
        let chol = Cholesky::new(hess).ok_or_else(|| Error::NumericalFailure {
            agent: i,
            reason: "local Hessian is not positive definite".into(),
        })?;
        d.set_row(i, &chol.solve(&row(y, i)).transpose());
    }
    Ok(d)
}

/// Advances the state by one synchronous round.
pub fn step(
    state: &mut SolverState,
    problem: &Problem,
    scheme: &CompressionScheme,
    hp: &HyperParams,
    mode: Mode,
) -> Result<RoundReport> {
    let net = &problem.network;
    let obj = &problem.objective;
    let scheme = mode.effective_scheme(scheme);
    let t = state.t;

    let at_round = |e: Error| match e {
        Error::Divergence { quantity, .. } => Error::Divergence { t, quantity },
        other => other,
    };
    let rx = state
        .channel_x
        .compress_round(&state.x, &scheme, net, &mut state.rng_x)
        .map_err(at_round)?;
    let ry = state
        .channel_y
        .compress_round(&state.y, &scheme, net, &mut state.rng_y)
        .map_err(at_round)?;
    let d = directions(obj, &state.x, &state.y, mode)?;

    let x_new = &state.x - (&rx.estimate - &rx.weighted) * hp.gamma - &d * hp.eta;
    check_finite(&x_new, t, "X")?;
    let grad_new = local_gradients(obj, &x_new)?;
    check_finite(&grad_new, t, "gradient")?;
    let y_new = &state.y - (&ry.estimate - &ry.weighted) * hp.gamma + &grad_new - &state.grad;
    check_finite(&y_new, t, "Y")?;

    let report = RoundReport {
        decision_compression: (&state.x - &rx.estimate).norm_squared(),
        tracker_compression: (&state.y - &ry.estimate).norm_squared(),
        weighted_estimate_gap: relative_gap(&rx.weighted, &net.mix(&rx.estimate))
            .max(relative_gap(&ry.weighted, &net.mix(&ry.estimate))),
        direction_spread: spread(&d),
        tracker_norm_sq: state.y.norm_squared(),
        step_norm: (&x_new - &state.x).norm(),
        gradient_change: (&grad_new - &state.grad).norm(),
        bits: rx.bits + ry.bits,
    };

    state.x = x_new;
    state.y = y_new;
    state.grad = grad_new;
    state.t += 1;
    state.bits_cum += report.bits;

    #[cfg(debug_assertions)]
    {
        let scale = state.grad.norm().max(state.y.norm()).max(1.0);
        if state.tracking_gap() > 1e-10 * scale {
            log::warn!(
                "tracking average drifted by {:e} at round {}",
                state.tracking_gap(),
                state.t
            );
        }
    }
    Ok(report)
}

pub fn measure_errors(state: &SolverState, x_star: &DVector<f64>) -> ErrorVector {
    ErrorVector {
        opt: (state.x_bar() - x_star).norm_squared(),
        cons: spread(&state.x),
        gt: spread(&state.y),
        comp_x: (&state.x - state.channel_x.memory()).norm_squared(),
        comp_y: (&state.y - state.channel_y.memory()).norm_squared(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub bits_cum: u64,
    pub errors: ErrorVector,
    /// `f(x̄) − f(x*)`
    pub residual: f64,
    pub accuracy: Option<f64>,
}

pub fn record(state: &SolverState, problem: &Problem) -> Result<TraceRecord> {
    let x_bar = state.x_bar();
    Ok(TraceRecord {
        t: state.t,
        bits_cum: state.bits_cum,
        errors: measure_errors(state, &problem.x_star),
        residual: problem.objective.value(&x_bar)? - problem.f_star,
        accuracy: problem.test_set.as_ref().map(|s| s.accuracy(&x_bar)),
    })
}

/// Per-round records from `t = 0` through the last executed round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// First round whose residual is at or below `level`.
    pub fn first_below(&self, level: f64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.residual <= level)
    }
}

/// Runs `hp.iterations` rounds (or until the tolerance is met) from the
/// seeded initial state.
pub fn run(
    problem: &Problem,
    scheme: &CompressionScheme,
    hp: &HyperParams,
    mode: Mode,
    seed: u64,
) -> Result<Trace> {
    hp.validate()?;
    mode.effective_scheme(scheme).validate(problem.dim())?;
    let mut state = SolverState::init(problem, hp, seed)?;
    let mut records = Vec::with_capacity(hp.iterations + 1);
    records.push(record(&state, problem)?);
    while state.t < hp.iterations {
        if hp.tol > 0.0 && state.mean_gradient_norm() <= hp.tol {
            break;
        }
        step(&mut state, problem, scheme, hp, mode)?;
        records.push(record(&state, problem)?);
    }
    Ok(Trace { records })
}

/// Independent runs over several seeds plus their column-wise mean.
#[derive(Debug, Clone)]
pub struct SeedRuns {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Trace>,
    pub mean: Trace,
}

/// Runs every seed (in parallel) and averages the traces over their common
/// prefix. The result does not depend on the thread count.
pub fn run_seeds(
    problem: &Problem,
    scheme: &CompressionScheme,
    hp: &HyperParams,
    mode: Mode,
    seeds: &[u64],
) -> Result<SeedRuns> {
    if seeds.is_empty() {
        return Err(Error::invalid("seed list is empty"));
    }
    let per_seed = seeds
        .par_iter()
        .map(|&s| run(problem, scheme, hp, mode, s))
        .collect::<Result<Vec<_>>>()?;
    let mean = average_traces(&per_seed);
    Ok(SeedRuns {
        seeds: seeds.to_vec(),
        per_seed,
        mean,
    })
}

pub fn average_traces(traces: &[Trace]) -> Trace {
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let k = traces.len() as f64;
    let records = (0..len)
        .map(|i| {
            let first = &traces[0].records[i];
            let mut err = [0.0; 5];
            let mut residual = 0.0;
            let mut acc = Some(0.0);
            for tr in traces {
                let r = &tr.records[i];
                for (e, v) in err.iter_mut().zip(r.errors.to_array()) {
                    *e += v;
                }
                residual += r.residual;
                acc = match (acc, r.accuracy) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
            }
            TraceRecord {
                t: first.t,
                bits_cum: first.bits_cum,
                errors: ErrorVector::from_array(err.map(|e| e / k)),
                residual: residual / k,
                accuracy: acc.map(|a| a / k),
            }
        })
        .collect();
    Trace { records }
}
