//! Kernel ridge regression over fixed-length windows.

mod io;
mod search;

pub use io::{load_model, save_model};
pub use search::{hyperparameter_search, KernelFamily, SearchGrid, SearchOutcome, Trial};

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::datapipe::Dataset;
use crate::error::{Error, Result};

/// Kernel family with exactly the hyperparameters it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `xᵀy`
    Linear,
    /// `exp(−d²/2σ²)`
    Gaussian { sigma: f64 },
    /// `exp(−d/σ)`
    Exponential { sigma: f64 },
    /// `exp(−d/σ) Σ_{k=0}^{n} (n+k)!/(2n)! C(n,k) (2d/σ)^{n−k}`
    Matern { sigma: f64, n: u32 },
    /// `exp(−d²/2σ² − (2/σp²) sin²(π d / p))`
    DecayingPeriodic { sigma: f64, period: f64, sigma_p: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} must be positive and finite")))
            }
        };
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Gaussian { sigma } | KernelSpec::Exponential { sigma } => pos("sigma", sigma),
            KernelSpec::Matern { sigma, n } => {
                if n > 20 {
                    return Err(Error::invalid("n", format!("{n} exceeds the supported order 20")));
                }
                pos("sigma", sigma)
            }
            KernelSpec::DecayingPeriodic {
                sigma,
                period,
                sigma_p,
            } => {
                pos("sigma", sigma)?;
                pos("period", period)?;
                // σp = ∞ switches the periodic factor off.
                if sigma_p > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("sigma_p", format!("{sigma_p} must be positive")))
                }
            }
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Gaussian { sigma }
            | KernelSpec::Exponential { sigma }
            | KernelSpec::Matern { sigma, .. }
            | KernelSpec::DecayingPeriodic { sigma, .. } => Some(sigma),
        }
    }

    /// Short name used in reports (`krr-g`, `krr-m2`, ...).
    pub fn model_id(&self) -> String {
        match *self {
            KernelSpec::Linear => "krr-l".into(),
            KernelSpec::Gaussian { .. } => "krr-g".into(),
            KernelSpec::Exponential { .. } => "krr-e".into(),
            KernelSpec::Matern { n, .. } => format!("krr-m{n}"),
            KernelSpec::DecayingPeriodic { .. } => "krr-dp".into(),
        }
    }

    /// Kernel value from the squared distance (or dot product for the linear kernel).
    fn from_stats(&self, dot: f64, d2: f64) -> f64 {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Gaussian { sigma } => (-d2 / (2.0 * sigma * sigma)).exp(),
            KernelSpec::Exponential { sigma } => (-d2.sqrt() / sigma).exp(),
            KernelSpec::Matern { sigma, n } => matern(d2.sqrt() / sigma, n),
            KernelSpec::DecayingPeriodic {
                sigma,
                period,
                sigma_p,
            } => {
                let s = (std::f64::consts::PI / period * d2.sqrt()).sin();
                (-d2 / (2.0 * sigma * sigma) - 2.0 / (sigma_p * sigma_p) * s * s).exp()
            }
        }
    }

    fn uses_dot(&self) -> bool {
        matches!(self, KernelSpec::Linear)
    }
}

fn matern(r: f64, n: u32) -> f64 {
    let n = n as usize;
    // (n+k)!/(2n)! · C(n,k), built up from k = n downwards
    let mut sum = 0.0;
    let mut coeff = 1.0;
    let mut power = 1.0;
    for k in (0..=n).rev() {
        sum += coeff * power;
        if k > 0 {
            // step k → k−1
            coeff *= k as f64 / ((n + k) * (n - k + 1)) as f64;
            power *= 2.0 * r;
        }
    }
    (-r).exp() * sum
}

fn pair_stats(a: &[f64], b: &[f64], dot: bool) -> (f64, f64) {
    if dot {
        (a.iter().zip(b).map(|(x, y)| x * y).sum(), 0.0)
    } else {
        (0.0, a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
    }
}

pub fn kernel_eval(spec: &KernelSpec, x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x_i.len() != x_j.len() {
        return Err(Error::shape("kernel_eval", x_i.len(), x_j.len()));
    }
    let (dot, d2) = pair_stats(x_i, x_j, spec.uses_dot());
    Ok(spec.from_stats(dot, d2))
}

/// Symmetric kernel matrix; only the lower triangle is computed.
pub fn kernel_matrix(spec: &KernelSpec, inputs: &[&[f64]]) -> Mat<f64> {
    let n = inputs.len();
    let dot = spec.uses_dot();
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let (p, d2) = pair_stats(inputs[i], inputs[j], dot);
            let v = spec.from_stats(p, d2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Rectangular kernel block `K[i, j] = k(rows[i], cols[j])`.
pub fn cross_kernel(spec: &KernelSpec, rows: &[&[f64]], cols: &[&[f64]]) -> Mat<f64> {
    let dot = spec.uses_dot();
    Mat::from_fn(rows.len(), cols.len(), |i, j| {
        let (p, d2) = pair_stats(rows[i], cols[j], dot);
        spec.from_stats(p, d2)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub spec: KernelSpec,
    pub lambda_reg: f64,
    pub alphas: Vec<f64>,
    pub training_inputs: Vec<Vec<f64>>,
}

impl KrrModel {
    pub fn window_length(&self) -> usize {
        self.training_inputs.first().map_or(0, Vec::len)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        krr_predict(self, x)
    }
}

/// Largest relative residual accepted from the factorized solve.
const RESIDUAL_TOL: f64 = 1e-8;
const MAX_REFINE: usize = 10;

/// Solves `(K + λI)α = y` by Cholesky factorization.
///
/// If the factorization breaks down, `10⁻¹⁰·mean(diag K)` is added to the
/// diagonal, up to three times, before giving up. The Cholesky solution is
/// then refined with residuals accumulated in doubled precision, for as long
/// as each step still shrinks the residual.
pub fn solve_regularized(k: &Mat<f64>, lambda_reg: f64, y: &[f64]) -> Result<Vec<f64>> {
    let n = k.nrows();
    if y.len() != n {
        return Err(Error::shape("krr labels", n, y.len()));
    }
    let mean_diag = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n.max(1) as f64;
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += lambda_reg;
    }
    let rhs = Mat::from_fn(n, 1, |i, _| y[i]);
    let y_norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let jitter = 1e-10 * mean_diag.abs().max(f64::MIN_POSITIVE);
    for attempt in 0..=3 {
        if attempt > 0 {
            log::warn!("cholesky failed; adding jitter {jitter:.3e} (attempt {attempt})");
            for i in 0..n {
                a[(i, i)] += jitter;
            }
        }
        let Ok(llt) = a.llt(Side::Lower) else {
            continue;
        };
        let mut alpha: Vec<f64> = llt.solve(&rhs).col(0).iter().copied().collect();
        let mut r = accurate_residual(&a, &alpha, y);
        let mut resid = max_abs(&r);
        for _ in 0..MAX_REFINE {
            if !(resid > 0.0) || !alpha.iter().all(|v| v.is_finite()) {
                break;
            }
            let d = llt.solve(Mat::from_fn(n, 1, |i, _| r[i]));
            let next: Vec<f64> = alpha.iter().zip(d.col(0).iter()).map(|(x, dx)| x + dx).collect();
            let r_next = accurate_residual(&a, &next, y);
            let resid_next = max_abs(&r_next);
            if !(resid_next < 0.9 * resid) {
                break;
            }
            alpha = next;
            r = r_next;
            resid = resid_next;
        }
        if !alpha.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("krr solve", 0));
        }
        if resid > RESIDUAL_TOL * y_norm {
            log::warn!("krr solve residual {resid:.3e} above {:.1e} relative", RESIDUAL_TOL);
        }
        return Ok(alpha);
    }
    let cond = condition_estimate(&a);
    Err(Error::Solve(format!(
        "kernel matrix not positive definite after jitter (condition estimate {cond:.3e})"
    )))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `b − A x` for symmetric `A`, each entry summed with an error-free
/// transformation so that it is as accurate as if computed in twice the
/// working precision (Ogita, Rump and Oishi's Dot2).
fn accurate_residual(a: &Mat<f64>, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|i| {
            let (mut s, mut c) = (b[i], 0.0);
            // column i equals row i and is contiguous
            for (j, &xj) in x.iter().enumerate() {
                let aij = -a[(j, i)];
                let p = aij * xj;
                let p_err = aij.mul_add(xj, -p);
                let t = s + p;
                let z = t - s;
                c += (s - (t - z)) + (p - z) + p_err;
                s = t;
            }
            s + c
        })
        .collect()
}

fn condition_estimate(a: &Mat<f64>) -> f64 {
    match a.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => {
            let lo = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            let hi = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            hi / lo
        }
        Err(_) => f64::INFINITY,
    }
}

pub fn krr_train(data: &Dataset, spec: KernelSpec, lambda_reg: f64) -> Result<KrrModel> {
    krr_fit(&data.inputs(), &data.labels(), spec, lambda_reg)
}

/// [`krr_train`] on bare input/label slices.
pub fn krr_fit(inputs: &[&[f64]], labels: &[f64], spec: KernelSpec, lambda_reg: f64) -> Result<KrrModel> {
    spec.validate()?;
    if inputs.is_empty() {
        return Err(Error::invalid("data", "at least one training sample is required"));
    }
    if !(lambda_reg >= 0.0) || !lambda_reg.is_finite() {
        return Err(Error::invalid("lambda_reg", format!("{lambda_reg} must be >= 0")));
    }
    if labels.len() != inputs.len() {
        return Err(Error::shape("krr labels", inputs.len(), labels.len()));
    }
    let t = inputs[0].len();
    if let Some(x) = inputs.iter().find(|x| x.len() != t) {
        return Err(Error::shape("krr inputs", t, x.len()));
    }
    let k = kernel_matrix(&spec, inputs);
    let alphas = solve_regularized(&k, lambda_reg, labels)?;
    Ok(KrrModel {
        spec,
        lambda_reg,
        alphas,
        training_inputs: inputs.iter().map(|x| x.to_vec()).collect(),
    })
}

/// `Σ_i α_i k(x, x_i)`
pub fn krr_predict(model: &KrrModel, x: &[f64]) -> Result<f64> {
    let t = model.window_length();
    if !model.training_inputs.is_empty() && x.len() != t {
        return Err(Error::shape("krr_predict window", t, x.len()));
    }
    let dot = model.spec.uses_dot();
    Ok(model
        .training_inputs
        .iter()
        .zip(&model.alphas)
        .map(|(xi, a)| {
            let (p, d2) = pair_stats(x, xi, dot);
            a * model.spec.from_stats(p, d2)
        })
        .sum())
}

/// Ridge coefficients `β_s = Σ_i α_i x_{is}` of a linear-kernel model.
pub fn extract_ridge_coefficients(model: &KrrModel) -> Result<Vec<f64>> {
    if model.spec != KernelSpec::Linear {
        return Err(Error::invalid(
            "kernel",
            format!("ridge coefficients need the linear kernel, got {}", model.spec.model_id()),
        ));
    }
    let mut beta = vec![0.0; model.window_length()];
    for (x, a) in model.training_inputs.iter().zip(&model.alphas) {
        for (b, v) in beta.iter_mut().zip(x) {
            *b += a * v;
        }
    }
    Ok(beta)
}
