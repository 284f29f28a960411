use std::f64::consts::PI;

use num_complex::Complex64;

use super::SpinBosonParams;
use crate::error::{Error, Result};

/// One exponential term `c e^{-ν t}` of the bath correlation function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathMode {
    pub coefficient: Complex64,
    pub decay_rate: f64,
}

/// Exponential decomposition of the Debye bath correlation function
/// `C(t) = (1/π) ∫ J(ω) [coth(βω/2) cos ωt − i sin ωt] dω`.
///
/// The first mode is the Drude pole (rate ωc), followed by `n_matsubara`
/// Matsubara terms with rates `2πk/β`.
pub fn bath_correlation_modes(params: &SpinBosonParams, n_matsubara: usize) -> Result<Vec<BathMode>> {
    if !(params.beta > 0.0) {
        return Err(Error::invalid("beta", "must be > 0"));
    }
    if !(params.omega_c > 0.0) {
        return Err(Error::invalid("omega_c", "must be > 0"));
    }
    let lam = params.lambda;
    let wc = params.omega_c;
    let beta = params.beta;

    let half = 0.5 * beta * wc;
    let sin_half = half.sin();
    if sin_half.abs() < 1e-12 {
        return Err(Error::invalid(
            "beta*omega_c",
            "coincides with a Matsubara frequency; decomposition is singular",
        ));
    }
    let cot = half.cos() / sin_half;

    let mut modes = Vec::with_capacity(n_matsubara + 1);
    modes.push(BathMode {
        coefficient: Complex64::new(lam * wc * cot, -lam * wc),
        decay_rate: wc,
    });
    for k in 1..=n_matsubara {
        let nu = 2.0 * PI * k as f64 / beta;
        let denom = nu * nu - wc * wc;
        if denom.abs() < 1e-12 * nu * nu {
            return Err(Error::invalid(
                "beta*omega_c",
                "coincides with a Matsubara frequency; decomposition is singular",
            ));
        }
        modes.push(BathMode {
            coefficient: Complex64::new(4.0 * lam * wc / beta * nu / denom, 0.0),
            decay_rate: nu,
        });
    }
    Ok(modes)
}

/// Which pole expansion of the Bose function feeds the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decomposition {
    /// Matsubara poles `2πk/β`.
    Matsubara,
    /// `[N−1/N]` Padé spectrum decomposition; far fewer terms for the same accuracy.
    #[default]
    Pade,
}

/// Poles `ξ_j` and residues `η_j` of the `[N−1/N]` Padé approximant
/// `1/(1−e^{−x}) ≈ 1/x + 1/2 + Σ_j 2η_j x/(x² + ξ_j²)`, ascending in `ξ`.
pub fn pade_poles(n: usize) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let b = |m: usize| (2 * m + 1) as f64;
    let positive_roots = |dim: usize, offset: usize| -> Vec<f64> {
        let mat = faer::Mat::<f64>::from_fn(dim, dim, |i, j| {
            let m = i.min(j) + 1 + offset;
            if i.abs_diff(j) == 1 {
                1.0 / (b(m) * b(m + 1)).sqrt()
            } else {
                0.0
            }
        });
        let mut ev: Vec<f64> = mat
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("tridiagonal eigenproblem")
            .into_iter()
            .filter(|&v| v > 1e-12)
            .map(|v| 2.0 / v)
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    };
    let xi = positive_roots(2 * n, 0);
    let zeta = if n > 1 { positive_roots(2 * n - 1, 1) } else { Vec::new() };
    (0..n)
        .map(|j| {
            let x2 = xi[j] * xi[j];
            let mut eta = 0.5 * n as f64 * b(n + 1);
            for z in &zeta {
                eta *= z * z - x2;
            }
            for (k, x) in xi.iter().enumerate() {
                if k != j {
                    eta /= x * x - x2;
                }
            }
            (xi[j], eta)
        })
        .collect()
}

/// Drude pole plus `n_terms` Bose-function poles from the chosen expansion.
///
/// For [`Decomposition::Matsubara`] this equals [`bath_correlation_modes`].
/// The Padé variant also replaces `cot(βωc/2)` in the Drude coefficient by its
/// Padé counterpart so that the zero-frequency weight stays exact.
pub fn bath_modes(params: &SpinBosonParams, n_terms: usize, kind: Decomposition) -> Result<Vec<BathMode>> {
    let poles = match kind {
        Decomposition::Matsubara => return bath_correlation_modes(params, n_terms),
        Decomposition::Pade => pade_poles(n_terms),
    };
    if !(params.beta > 0.0) {
        return Err(Error::invalid("beta", "must be > 0"));
    }
    if !(params.omega_c > 0.0) {
        return Err(Error::invalid("omega_c", "must be > 0"));
    }
    let lam = params.lambda;
    let wc = params.omega_c;
    let beta = params.beta;
    let x = beta * wc;
    let mut cot = 2.0 / x;
    let mut modes = Vec::with_capacity(n_terms + 1);
    modes.push(BathMode {
        coefficient: Complex64::new(0.0, -lam * wc),
        decay_rate: wc,
    });
    for (xi, eta) in poles {
        let denom = x * x - xi * xi;
        if denom.abs() < 1e-12 * xi * xi {
            return Err(Error::invalid(
                "beta*omega_c",
                "coincides with a Pade pole; decomposition is singular",
            ));
        }
        cot += 4.0 * eta * x / denom;
        let nu = xi / beta;
        modes.push(BathMode {
            coefficient: Complex64::new(eta * 4.0 * lam * wc / beta * nu / (nu * nu - wc * wc), 0.0),
            decay_rate: nu,
        });
    }
    modes[0].coefficient.re = lam * wc * cot;
    Ok(modes)
}

/// Markovian weight `Σ_{k>n} c_k/ν_k` of the Matsubara terms left out of a
/// decomposition truncated at `n_matsubara` terms.
///
/// Uses the closed form `Σ_{k≥1} c_k/ν_k = 2λ/(βωc) − λ cot(βωc/2)`.
pub fn matsubara_tail(params: &SpinBosonParams, n_matsubara: usize) -> Result<f64> {
    let modes = bath_correlation_modes(params, n_matsubara)?;
    let half = 0.5 * params.beta * params.omega_c;
    let total = 2.0 * params.lambda / (params.beta * params.omega_c) - params.lambda / half.tan();
    let kept: f64 = modes[1..].iter().map(|m| m.coefficient.re / m.decay_rate).sum();
    Ok(total - kept)
}

/// Tail sums `(Σ_{k>n} c_k/(ν_k+γ), Σ_{k>n} c_k/(ν_k+γ)²)` over the Matsubara
/// terms left out of a truncated decomposition, for a damping shift `γ ≥ 0`.
pub fn matsubara_tail_sums(params: &SpinBosonParams, n_matsubara: usize, shift: f64) -> (f64, f64) {
    const EXPLICIT: usize = 4000;
    let pref = 4.0 * params.lambda * params.omega_c / params.beta;
    let wc2 = params.omega_c * params.omega_c;
    let mut first = 0.0;
    let mut second = 0.0;
    let last = n_matsubara + EXPLICIT;
    // Smallest terms first.
    for k in (n_matsubara + 1..=last).rev() {
        let nu = 2.0 * PI * k as f64 / params.beta;
        let c = pref * nu / (nu * nu - wc2);
        let inv = 1.0 / (nu + shift);
        first += c * inv;
        second += c * inv * inv;
    }
    // c_k/(ν_k+γ)^p → pref (β/2π)^{p+1} / k^{p+1}
    let scale = params.beta / (2.0 * PI);
    let edge = last as f64 + 0.5;
    first += pref * scale * scale / edge;
    second += pref * scale.powi(3) / (2.0 * edge * edge);
    (first, second)
}
