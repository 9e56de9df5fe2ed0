//! Local objective families and the centralized reference solver.
//!
//! Ridge: `f_i(x) = ‖A_i x − b_i‖² + λ‖x‖²`.
//! Logistic: `f_i(x) = (1/m_i) Σ_j log(1 + exp(−v_j uᵀ_j x)) + (λ/2)‖x‖²`.
//! The global objective is the agent average `f = (1/n) Σ f_i`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Ridge,
    Logistic,
}

/// One agent's samples: rows of `features` paired with `targets`.
#[derive(Debug, Clone)]
pub struct LocalData {
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl LocalData {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::invalid("local data needs at least one sample"));
        }
        if features.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "local data targets",
                expected: features.nrows().to_string(),
                actual: targets.len().to_string(),
            });
        }
        Ok(LocalData { features, targets })
    }

    pub fn samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn check_dim(d: &LocalData, x: &DVector<f64>) -> Result<()> {
    if d.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "objective point",
            expected: d.dim().to_string(),
            actual: x.len().to_string(),
        });
    }
    Ok(())
}

pub fn ridge_value_grad_hess(d: &LocalData, lambda: f64, x: &DVector<f64>) -> Result<Evaluation> {
    check_dim(d, x)?;
    let a = &d.features;
    let resid = a * x - &d.targets;
    let p = x.len();
    Ok(Evaluation {
        value: resid.norm_squared() + lambda * x.norm_squared(),
        gradient: (a.tr_mul(&resid) + x * lambda) * 2.0,
        hessian: (a.tr_mul(a) + DMatrix::identity(p, p) * lambda) * 2.0,
    })
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + exp(−t))` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logistic_value_grad_hess(
    d: &LocalData,
    lambda: f64,
    x: &DVector<f64>,
) -> Result<Evaluation> {
    check_dim(d, x)?;
    let p = x.len();
    let m = d.samples() as f64;
    let margins = &d.features * x;
    let mut value = 0.0;
    let mut gradient = DVector::<f64>::zeros(p);
    let mut hessian = DMatrix::<f64>::zeros(p, p);
    for (j, u) in d.features.row_iter().enumerate() {
        let v = d.targets[j];
        let z = v * margins[j];
        value += softplus(-z);
        let s = sigmoid(z);
        gradient.axpy(-v * (1.0 - s), &u.transpose(), 1.0);
        let w = s * (1.0 - s);
        hessian.ger(w, &u.transpose(), &u.transpose(), 1.0);
    }
    Ok(Evaluation {
        value: value / m + 0.5 * lambda * x.norm_squared(),
        gradient: gradient / m + x * lambda,
        hessian: hessian / m + DMatrix::identity(p, p) * lambda,
    })
}

/// Sum of local objectives sharing one regularizer.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    lambda: f64,
    locals: Vec<LocalData>,
    mu: f64,
    l: f64,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, lambda: f64, locals: Vec<LocalData>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "regularizer must be positive, got {lambda}"
            )));
        }
        let first = locals
            .first()
            .ok_or_else(|| Error::invalid("objective needs at least one agent"))?;
        let p = first.dim();
        for (i, d) in locals.iter().enumerate() {
            if d.dim() != p {
                return Err(Error::DimensionMismatch {
                    context: "agent feature dimension",
                    expected: p.to_string(),
                    actual: format!("{} (agent {i})", d.dim()),
                });
            }
            if kind == ObjectiveKind::Logistic
                && d.targets.iter().any(|&v| v != 1.0 && v != -1.0)
            {
                return Err(Error::invalid(format!(
                    "agent {i} has logistic labels outside {{-1, +1}}"
                )));
            }
        }
        let mut obj = Objective {
            kind,
            lambda,
            locals,
            mu: 0.0,
            l: 0.0,
        };
        let (mu, l) = estimate_mu_l(&obj);
        obj.mu = mu;
        obj.l = l;
        Ok(obj)
    }

    pub fn ridge(lambda: f64, locals: Vec<LocalData>) -> Result<Self> {
        Self::new(ObjectiveKind::Ridge, lambda, locals)
    }

    pub fn logistic(lambda: f64, locals: Vec<LocalData>) -> Result<Self> {
        Self::new(ObjectiveKind::Logistic, lambda, locals)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn locals(&self) -> &[LocalData] {
        &self.locals
    }

    pub fn agents(&self) -> usize {
        self.locals.len()
    }

    pub fn dim(&self) -> usize {
        self.locals[0].dim()
    }

    /// Strong-convexity constant shared by every local function.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Gradient-Lipschitz constant shared by every local function.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn local(&self, agent: usize, x: &DVector<f64>) -> Result<Evaluation> {
        let d = &self.locals[agent];
        match self.kind {
            ObjectiveKind::Ridge => ridge_value_grad_hess(d, self.lambda, x),
            ObjectiveKind::Logistic => logistic_value_grad_hess(d, self.lambda, x),
        }
    }

    pub fn local_gradient(&self, agent: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let d = &self.locals[agent];
        check_dim(d, x)?;
        match self.kind {
            ObjectiveKind::Ridge => {
                let resid = &d.features * x - &d.targets;
                Ok((d.features.tr_mul(&resid) + x * self.lambda) * 2.0)
            }
            ObjectiveKind::Logistic => Ok(logistic_value_grad_hess(d, self.lambda, x)?.gradient),
        }
    }

    /// Global objective `(1/n) Σ f_i` with gradient and Hessian.
    pub fn global(&self, x: &DVector<f64>) -> Result<Evaluation> {
        let p = self.dim();
        let mut acc = Evaluation {
            value: 0.0,
            gradient: DVector::zeros(p),
            hessian: DMatrix::zeros(p, p),
        };
        for i in 0..self.agents() {
            let e = self.local(i, x)?;
            acc.value += e.value;
            acc.gradient += e.gradient;
            acc.hessian += e.hessian;
        }
        let n = self.agents() as f64;
        acc.value /= n;
        acc.gradient /= n;
        acc.hessian /= n;
        Ok(acc)
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.global(x)?.value)
    }
}

/// `(μ, L)` bounding every local Hessian, `μI ⪯ ∇²f_i(x) ⪯ LI`.
pub fn estimate_mu_l(obj: &Objective) -> (f64, f64) {
    let lambda = obj.lambda;
    match obj.kind {
        ObjectiveKind::Ridge => {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
            for d in &obj.locals {
                let (emin, emax) = extreme_eigenvalues(d.features.tr_mul(&d.features) * 2.0);
                lo = lo.min(emin.max(0.0));
                hi = hi.max(emax);
            }
            (2.0 * lambda + lo, hi + 2.0 * lambda)
        }
        ObjectiveKind::Logistic => {
            let hi = obj
                .locals
                .iter()
                .map(|d| {
                    let cov = d.features.tr_mul(&d.features) / d.samples() as f64;
                    extreme_eigenvalues(cov).1
                })
                .fold(0.0_f64, f64::max);
            (lambda, lambda + hi / 4.0)
        }
    }
}

fn extreme_eigenvalues(m: DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m).eigenvalues;
    (eig.min(), eig.max())
}

/// `x* = (Σ A_iᵀA_i + nλI)⁻¹ Σ A_iᵀ b_i`.
pub fn ridge_closed_form_optimum(obj: &Objective) -> Result<DVector<f64>> {
    if obj.kind != ObjectiveKind::Ridge {
        return Err(Error::invalid("closed form optimum exists only for ridge"));
    }
    let p = obj.dim();
    let mut gram = DMatrix::<f64>::identity(p, p) * (obj.agents() as f64 * obj.lambda);
    let mut rhs = DVector::<f64>::zeros(p);
    for d in &obj.locals {
        gram += d.features.tr_mul(&d.features);
        rhs += d.features.tr_mul(&d.targets);
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::invalid("ridge normal matrix is not positive definite"))?;
    Ok(chol.solve(&rhs))
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

/// Damped Newton with Armijo backtracking on the global objective.
pub fn centralized_newton(
    obj: &Objective,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult> {
    let mut x = x0.clone();
    let mut eval = obj.global(&x)?;
    for it in 0..=max_iter {
        let gnorm = eval.gradient.norm();
        if gnorm <= tol {
            return Ok(NewtonResult {
                value: eval.value,
                x,
                iterations: it,
            });
        }
        if it == max_iter {
            return Err(Error::ConvergenceFailure {
                iterations: max_iter,
                grad_norm: gnorm,
                last: x.iter().copied().collect(),
            });
        }
        let chol = Cholesky::new(eval.hessian.clone()).ok_or_else(|| Error::NumericalFailure {
            agent: usize::MAX,
            reason: "global Hessian is not positive definite".into(),
        })?;
        let dir = -chol.solve(&eval.gradient);
        let slope = eval.gradient.dot(&dir);
        let mut step = 1.0;
        let mut next = obj.global(&(&x + &dir * step))?;
        while next.value > eval.value + ARMIJO_C * step * slope && step > 1e-12 {
            step *= BACKTRACK;
            next = obj.global(&(&x + &dir * step))?;
        }
        if next.value > eval.value {
            // no descent at machine precision; the current point is as good as it gets
            return Ok(NewtonResult {
                value: eval.value,
                x,
                iterations: it,
            });
        }
        x += dir * step;
        eval = next;
    }
    unreachable!()
}
