//! The 5×5 linear system bounding the error vector, and the sufficient
//! step-size conditions for it to contract.
//!
//! The error vector `e = (opt, cons, gt, comp_x, comp_y)` obeys
//! `e(t+1) ≤ A(θ)·e(t)` componentwise for `θ = (η, γ, α_x, α_y)` with
//! `η ≤ min{2L/(3μ), μ/L}`. [`check_theorem2`] evaluates the closed-form
//! conditions on `(η, γ)` and a positive weight vector `ε` that guarantee
//! `ρ(A) < 1`.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::compress::SchemeConstants;
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::objective::Objective;

pub type Matrix5 = SMatrix<f64, 5, 5>;

/// Hyper-parameters entering `A(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub eta: f64,
    pub gamma: f64,
    pub alpha_x: f64,
    pub alpha_y: f64,
}

/// Problem-side constants: curvature bounds and network spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu: f64,
    pub l: f64,
    pub rho: f64,
    pub beta: f64,
    pub n: usize,
}

impl ProblemConstants {
    pub fn from_parts(obj: &Objective, net: &Network) -> Self {
        ProblemConstants {
            mu: obj.mu(),
            l: obj.l(),
            rho: net.rho(),
            beta: net.beta(),
            n: net.n(),
        }
    }
}

/// Explicit choices of `τ_x`, `τ_y`; `None` takes the default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TauChoice {
    pub tau_x: Option<f64>,
    pub tau_y: Option<f64>,
}

/// Default `τ` when `αrδ = 1` and the admissible interval `(1, ∞)` has no midpoint.
pub const UNBOUNDED_TAU: f64 = 2.0;

/// Midpoint of `(1, 1/(1 − αrδ))`.
pub fn default_tau(alpha_r_delta: f64) -> f64 {
    if alpha_r_delta >= 1.0 {
        UNBOUNDED_TAU
    } else {
        (1.0 + 1.0 / (1.0 - alpha_r_delta)) / 2.0
    }
}

/// Every constant appearing in `A(θ)` and the step-size conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub rho: f64,
    pub rho_tilde: f64,
    pub beta: f64,
    pub n: usize,
    pub c: f64,
    pub r: f64,
    pub delta: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub c1: f64,
    pub c2: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

fn pick_tau(explicit: Option<f64>, ard: f64, name: &str) -> Result<f64> {
    let upper = if ard >= 1.0 {
        f64::INFINITY
    } else {
        1.0 / (1.0 - ard)
    };
    let tau = explicit.unwrap_or_else(|| default_tau(ard));
    if !(tau > 1.0 && tau < upper) {
        return Err(Error::invalid(format!(
            "{name} = {tau} violates 1 < {name} < 1/(1 - alpha r delta) = {upper}"
        )));
    }
    Ok(tau)
}

impl TheoryConstants {
    pub fn new(
        pc: &ProblemConstants,
        sc: &SchemeConstants,
        theta: &Theta,
        taus: TauChoice,
    ) -> Result<Self> {
        if !(pc.mu > 0.0 && pc.l >= pc.mu && pc.l.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < mu <= L, got mu = {}, L = {}",
                pc.mu, pc.l
            )));
        }
        if !(0.0..1.0).contains(&pc.rho) || !(pc.beta >= 0.0) || pc.n == 0 {
            return Err(Error::invalid(format!(
                "need 0 <= rho < 1, beta >= 0, n >= 1; got rho = {}, beta = {}, n = {}",
                pc.rho, pc.beta, pc.n
            )));
        }
        if !(sc.c >= 0.0 && sc.c.is_finite() && sc.r > 0.0 && sc.delta > 0.0 && sc.delta <= 1.0) {
            return Err(Error::invalid(format!(
                "need C >= 0, r > 0, 0 < delta <= 1; got C = {}, r = {}, delta = {}",
                sc.c, sc.r, sc.delta
            )));
        }
        if !(theta.gamma > 0.0 && theta.gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "gamma = {} violates 0 < gamma <= 1",
                theta.gamma
            )));
        }
        for (name, a) in [("alpha_x", theta.alpha_x), ("alpha_y", theta.alpha_y)] {
            if !(a > 0.0 && a <= 1.0 / sc.r * (1.0 + 1e-12)) {
                return Err(Error::invalid(format!(
                    "{name} = {a} violates 0 < {name} <= 1/r = {}",
                    1.0 / sc.r
                )));
            }
        }
        let ard_x = (theta.alpha_x * sc.r * sc.delta).min(1.0);
        let ard_y = (theta.alpha_y * sc.r * sc.delta).min(1.0);
        let tau_x = pick_tau(taus.tau_x, ard_x, "tau_x")?;
        let tau_y = pick_tau(taus.tau_y, ard_y, "tau_y")?;
        let c1 = 3.0 * tau_x / (tau_x - 1.0);
        let c2 = 3.0 * tau_y / (tau_y - 1.0);
        let b2 = pc.beta * pc.beta;
        Ok(TheoryConstants {
            mu: pc.mu,
            l: pc.l,
            kappa: pc.l / pc.mu,
            rho: pc.rho,
            rho_tilde: (1.0 - theta.gamma) + theta.gamma * pc.rho,
            beta: pc.beta,
            n: pc.n,
            c: sc.c,
            r: sc.r,
            delta: sc.delta,
            tau_x,
            tau_y,
            c1,
            c2,
            a_x: tau_x * (1.0 - ard_x),
            a_y: tau_y * (1.0 - ard_y),
            k1: c1 * b2,
            k2: c1 * sc.c * b2,
            k3: c2 * b2,
            k4: c2 * sc.c * b2,
        })
    }

    /// `min{2L/(3μ), μ/L}`.
    pub fn eta_cap(&self) -> f64 {
        (2.0 * self.l / (3.0 * self.mu)).min(self.mu / self.l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionMatrix {
    pub entries: [[f64; 5]; 5],
    pub theta: Theta,
}

impl ContractionMatrix {
    pub fn matrix(&self) -> Matrix5 {
        Matrix5::from_fn(|i, j| self.entries[i][j])
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn apply(&self, v: &[f64; 5]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..5).map(|j| self.entries[i][j] * v[j]).sum();
        }
        out
    }
}

/// Fills `A(θ)` without checking the step-size hypothesis.
pub fn assemble_a(tc: &TheoryConstants, theta: &Theta) -> ContractionMatrix {
    let (eta, g) = (theta.eta, theta.gamma);
    let (mu, l, n) = (tc.mu, tc.l, tc.n as f64);
    let (rt, b2, c) = (tc.rho_tilde, tc.beta * tc.beta, tc.c);
    let gap = 1.0 - rt;
    let e2 = eta * eta;
    let m2 = mu * mu;
    let (l2, l4) = (l * l, l.powi(4));
    let half = (1.0 + rt * rt) / 2.0;
    let g2 = g * g;

    let a = [
        [
            1.0 - 3.0 * eta * mu / (2.0 * l) + eta.powi(3) * mu.powi(3) / (2.0 * l.powi(3)),
            e2 * l2 / (m2 * n) + 2.0 * eta * l.powi(3) / (mu.powi(3) * n),
            e2 / (m2 * n) + 2.0 * eta * l / (mu.powi(3) * n),
            0.0,
            0.0,
        ],
        [
            8.0 * l2 * e2 * n / (m2 * gap),
            half + 8.0 * l2 * e2 / (m2 * gap),
            4.0 * e2 / (m2 * gap),
            2.0 * g2 * b2 * c * c / gap,
            0.0,
        ],
        [
            24.0 * l4 * e2 * n / (m2 * gap),
            6.0 * l2 * g2 * b2 / gap + 24.0 * l4 * e2 / (m2 * gap),
            half + 12.0 * l2 * e2 / (m2 * gap),
            6.0 * l2 * g2 * b2 * c / gap,
            2.0 * g2 * b2 * c / gap,
        ],
        [
            4.0 * l2 * e2 * n * tc.c1 / m2,
            g2 * tc.k1 + 4.0 * l2 * e2 * tc.c1 / m2,
            2.0 * e2 * tc.c1 / m2,
            tc.a_x + g2 * tc.k2,
            0.0,
        ],
        [
            12.0 * l4 * e2 * n * tc.c2 / m2,
            3.0 * l2 * g2 * tc.k3 + 12.0 * l4 * e2 * tc.c2 / m2,
            g2 * tc.k3 + 6.0 * l2 * e2 * tc.c2 / m2,
            3.0 * l2 * g2 * tc.k4,
            tc.a_y + g2 * tc.k3,
        ],
    ];
    ContractionMatrix {
        entries: a,
        theta: *theta,
    }
}

/// Builds `A(θ)` after checking `a_x, a_y < 1` and `η ≤ min{2L/(3μ), μ/L}`.
pub fn build_a(tc: &TheoryConstants, theta: &Theta) -> Result<ContractionMatrix> {
    if !(tc.a_x < 1.0) {
        return Err(Error::invalid(format!("a_x = {} violates a_x < 1", tc.a_x)));
    }
    if !(tc.a_y < 1.0) {
        return Err(Error::invalid(format!("a_y = {} violates a_y < 1", tc.a_y)));
    }
    if !(theta.eta > 0.0) {
        return Err(Error::invalid(format!("eta = {} violates eta > 0", theta.eta)));
    }
    let nonneg = 2.0 * tc.l / (3.0 * tc.mu);
    if theta.eta > nonneg {
        return Err(Error::invalid(format!(
            "eta = {} violates eta <= 2L/(3mu) = {nonneg}",
            theta.eta
        )));
    }
    if theta.eta > tc.mu / tc.l {
        return Err(Error::invalid(format!(
            "eta = {} violates eta <= mu/L = {}",
            theta.eta,
            tc.mu / tc.l
        )));
    }
    Ok(assemble_a(tc, theta))
}

/// Largest eigenvalue modulus of `A`.
pub fn spectral_radius(a: &ContractionMatrix) -> f64 {
    a.matrix()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Bounds can be infinite (a vanishing `C` or `β`), which JSON numbers cannot
/// carry; those are written as the strings `"inf"` and `"-inf"`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    #[serde(with = "extended_float")]
    pub lhs: f64,
    #[serde(with = "extended_float")]
    pub rhs: f64,
    pub pass: bool,
}

impl Inequality {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            rhs,
            pass: lhs <= rhs,
        }
    }

    fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            lhs,
            rhs,
            pass: lhs >= rhs,
        }
    }
}

/// Componentwise check of `A·v ≤ factor·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeCheck {
    pub weights: [f64; 5],
    pub factor: f64,
    pub product: [f64; 5],
    /// `max_i (A v)_i / (factor · v_i)`; at most 1 when the check passes.
    pub worst_ratio: f64,
    pub pass: bool,
}

fn guarantee(a: &ContractionMatrix, weights: [f64; 5], factor: f64) -> GuaranteeCheck {
    let product = a.apply(&weights);
    let worst_ratio = product
        .iter()
        .zip(weights.iter())
        .map(|(p, w)| p / (factor * w))
        .fold(f64::NEG_INFINITY, f64::max);
    GuaranteeCheck {
        weights,
        factor,
        product,
        worst_ratio,
        pass: product
            .iter()
            .zip(weights.iter())
            .all(|(p, w)| *p <= factor * w),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub theta: Theta,
    pub eps: [f64; 5],
    pub constants: TheoryConstants,
    pub matrix: [[f64; 5]; 5],
    pub nonnegative: bool,
    pub hypothesis: Vec<Inequality>,
    pub inequalities: Vec<Inequality>,
    /// All hypothesis and step-size inequalities hold.
    pub conditions_pass: bool,
    /// The same inequalities with `1 − ρ` in place of `1 − ρ̃`.
    pub alternate: Vec<Inequality>,
    pub alternate_pass: bool,
    pub rho_a: f64,
    /// `A·ε ≤ (1 − η/(2κ))·ε` with `ε = (ε₁, ε₂, L²ε₃, ε₄, L²ε₅)`.
    pub guarantee: GuaranteeCheck,
    /// The same check on the unscaled `(ε₁, …, ε₅)`.
    pub guarantee_unscaled: GuaranteeCheck,
    /// Conditions hold, `ρ(A) < 1`, and the guarantee holds.
    pub pass: bool,
}

fn step_conditions(tc: &TheoryConstants, theta: &Theta, eps: &[f64; 5], rho_bar: f64) -> Vec<Inequality> {
    let [e1, e2, e3, e4, e5] = *eps;
    let (eta, g) = (theta.eta, theta.gamma);
    let (k, mu, n, rho) = (tc.kappa, tc.mu, tc.n as f64, tc.rho);
    let b2 = tc.beta * tc.beta;
    let c = tc.c;
    let e_hat = 2.0 * n * e1 + 2.0 * e2 + e3;
    let e_bar = tc.k1 * e2 + tc.k2 * e4;
    let e_breve = 3.0 * tc.k3 * e2 + tc.k3 * e3 + 3.0 * tc.k4 * e4 + tc.k3 * e5;
    let spread = g * (1.0 - rho) * rho_bar;
    let eps4_cap = if c == 0.0 || tc.beta == 0.0 {
        f64::INFINITY
    } else {
        rho_bar * (1.0 - rho) / (8.0 * g * g * b2 * c * c)
    };
    vec![
        Inequality::le(
            "eta <= eps1 / (3 kappa^3 eps2 / n + 3 kappa eps3 / (mu^2 n))",
            eta,
            e1 / (3.0 * k.powi(3) * e2 / n + 3.0 * k * e3 / (mu * mu * n)),
        ),
        Inequality::le("eta <= kappa sqrt(2/3)", eta, k * (2.0_f64 / 3.0).sqrt()),
        Inequality::le("eta <= gamma (1 - rho) kappa / 6", eta, g * (1.0 - rho) * k / 6.0),
        Inequality::le("eta <= gamma / kappa", eta, g / k),
        Inequality::le(
            "eta <= sqrt(gamma (1 - rho) rho_bar eps2 / eps_hat) / (4 kappa)",
            eta,
            (spread * e2 / e_hat).sqrt() / (4.0 * k),
        ),
        Inequality::le(
            "eta <= sqrt(gamma (1 - rho) rho_bar eps3 / eps_hat) / (12 kappa)",
            eta,
            (spread * e3 / e_hat).sqrt() / (12.0 * k),
        ),
        Inequality::le("gamma <= 1", g, 1.0),
        Inequality::le(
            "gamma <= sqrt((1 - a_x) eps4 / (2 c1 eps_hat + eps_bar + eps4 / (2 kappa^2)))",
            g,
            ((1.0 - tc.a_x) * e4 / (2.0 * tc.c1 * e_hat + e_bar + e4 / (2.0 * k * k))).sqrt(),
        ),
        Inequality::le(
            "gamma <= sqrt((1 - a_y) eps5 / (6 c2 eps_hat + eps_breve + eps5 / (2 kappa^2)))",
            g,
            ((1.0 - tc.a_y) * e5 / (6.0 * tc.c2 * e_hat + e_breve + e5 / (2.0 * k * k))).sqrt(),
        ),
        Inequality::ge(
            "eps1 / eps2 >= 6 kappa^4 / n + 6 kappa^2 eps3 / (mu^2 n eps2)",
            e1 / e2,
            6.0 * k.powi(4) / n + 6.0 * k * k / (mu * mu * n) * (e3 / e2),
        ),
        Inequality::le(
            "eps4 / eps2 <= rho_bar (1 - rho) / (8 gamma^2 beta^2 C^2)",
            e4 / e2,
            eps4_cap,
        ),
        Inequality::le(
            "3 eps2 + 3 C eps4 + C eps5 <= rho_bar (1 - rho) eps3 / (24 gamma beta^2)",
            3.0 * e2 + 3.0 * c * e4 + c * e5,
            if tc.beta == 0.0 {
                f64::INFINITY
            } else {
                rho_bar * (1.0 - rho) * e3 / (24.0 * g * b2)
            },
        ),
    ]
}

fn hypothesis(tc: &TheoryConstants, theta: &Theta) -> Vec<Inequality> {
    vec![
        Inequality::le("eta <= 2L/(3mu)", theta.eta, 2.0 * tc.l / (3.0 * tc.mu)),
        Inequality::le("eta <= mu/L", theta.eta, tc.mu / tc.l),
        Inequality::le("a_x < 1", tc.a_x, 1.0 - f64::EPSILON),
        Inequality::le("a_y < 1", tc.a_y, 1.0 - f64::EPSILON),
    ]
}

/// Evaluates every sufficient condition for `ρ(A(θ)) < 1` and checks the
/// conclusion directly.
pub fn check_theorem2(tc: &TheoryConstants, theta: &Theta, eps: &[f64; 5]) -> Result<Theorem2Report> {
    if !eps.iter().all(|e| *e > 0.0 && e.is_finite()) {
        return Err(Error::invalid("eps must be strictly positive and finite"));
    }
    let a = assemble_a(tc, theta);
    let hyp = hypothesis(tc, theta);
    let inequalities = step_conditions(tc, theta, eps, 1.0 - tc.rho_tilde);
    let alternate = step_conditions(tc, theta, eps, 1.0 - tc.rho);
    let hyp_pass = hyp.iter().all(|i| i.pass);
    let conditions_pass = hyp_pass && inequalities.iter().all(|i| i.pass);
    let alternate_pass = hyp_pass && alternate.iter().all(|i| i.pass);
    let rho_a = spectral_radius(&a);
    let factor = 1.0 - theta.eta / (2.0 * tc.kappa);
    let l2 = tc.l * tc.l;
    let scaled = [eps[0], eps[1], l2 * eps[2], eps[3], l2 * eps[4]];
    let guarantee_scaled = guarantee(&a, scaled, factor);
    let guarantee_unscaled = guarantee(&a, *eps, factor);
    Ok(Theorem2Report {
        theta: *theta,
        eps: *eps,
        constants: *tc,
        matrix: a.entries,
        nonnegative: a.min_entry() >= 0.0,
        hypothesis: hyp,
        pass: conditions_pass && rho_a < 1.0 && guarantee_scaled.pass,
        inequalities,
        conditions_pass,
        alternate,
        alternate_pass,
        rho_a,
        guarantee: guarantee_scaled,
        guarantee_unscaled,
    })
}

/// Searches for a weight vector satisfying every condition at `θ`.
///
/// The conditions are invariant under scaling `ε`, so `ε₂ = 1`. For each
/// `(ε₄, ε₅)` on a grid, `ε₃` is placed at a multiple of its lower bound and
/// `ε₁` just above its lower bound. Returns the first vector that passes, or
/// `None`.
pub fn find_epsilon(tc: &TheoryConstants, theta: &Theta) -> Option<[f64; 5]> {
    let candidates = epsilon_candidates(tc, theta);
    candidates.into_iter().find(|eps| {
        check_theorem2(tc, theta, eps)
            .map(|r| r.conditions_pass)
            .unwrap_or(false)
    })
}

/// A vector satisfying the three weight inequalities (but not necessarily
/// the step-size ones), for reporting when no feasible vector exists.
pub fn fallback_epsilon(tc: &TheoryConstants, theta: &Theta) -> [f64; 5] {
    epsilon_candidates(tc, theta)
        .into_iter()
        .max_by(|a, b| {
            let score = |e: &[f64; 5]| {
                check_theorem2(tc, theta, e)
                    .map(|r| r.inequalities.iter().filter(|i| i.pass).count())
                    .unwrap_or(0)
            };
            score(a).cmp(&score(b))
        })
        .unwrap_or([1.0; 5])
}

fn epsilon_candidates(tc: &TheoryConstants, theta: &Theta) -> Vec<[f64; 5]> {
    let g = theta.gamma;
    let (k, mu, n, rho) = (tc.kappa, tc.mu, tc.n as f64, tc.rho);
    let rho_bar = 1.0 - tc.rho_tilde;
    let b2 = tc.beta * tc.beta;
    let c = tc.c;
    let eps4_cap = if c == 0.0 || tc.beta == 0.0 {
        f64::INFINITY
    } else {
        rho_bar * (1.0 - rho) / (8.0 * g * g * b2 * c * c)
    };
    let eps4_grid: Vec<f64> = if eps4_cap.is_finite() {
        [0.99, 0.5, 0.1, 1e-2].iter().map(|f| f * eps4_cap).collect()
    } else {
        (-2..=12).map(|e| 10f64.powi(e)).collect()
    };
    let eps5_grid: Vec<f64> = (-4..=12).map(|e| 10f64.powi(e)).collect();
    let mut out = vec![];
    for &e4 in &eps4_grid {
        for &e5 in &eps5_grid {
            let e3_floor = if tc.beta == 0.0 {
                1e-12
            } else {
                24.0 * g * b2 * (3.0 + 3.0 * c * e4 + c * e5) / (rho_bar * (1.0 - rho))
            };
            for m in [1.0 + 1e-9, 2.0, 10.0] {
                let e3 = e3_floor * m;
                let e1 = (6.0 * k.powi(4) / n + 6.0 * k * k / (mu * mu * n) * e3) * (1.0 + 1e-9);
                out.push([e1, 1.0, e3, e4, e5]);
            }
        }
    }
    out
}

/// Convenience: constants, feasible weights (or a fallback), and the report.
pub fn analyze(
    pc: &ProblemConstants,
    sc: &SchemeConstants,
    theta: &Theta,
    taus: TauChoice,
) -> Result<Theorem2Report> {
    let tc = TheoryConstants::new(pc, sc, theta, taus)?;
    let eps = find_epsilon(&tc, theta).unwrap_or_else(|| fallback_epsilon(&tc, theta));
    check_theorem2(&tc, theta, &eps)
}
