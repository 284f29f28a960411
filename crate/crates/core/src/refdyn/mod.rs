//! Reference population dynamics of the spin-boson model with a Debye bath.
//!
//! The system Hamiltonian is `H_s = ε/2 σz + Δ/2 σx`, coupled through `σz` to a
//! harmonic bath with spectral density `J(ω) = 2λ ω ωc / (ω² + ωc²)`. The
//! initial state is the factorized `|+⟩⟨+| ⊗ ρ_bath(β)`. Trajectories of
//! `⟨σz(t)⟩` are produced by a hierarchical equations of motion propagator.

mod bath;
mod heom;
mod io;

pub use bath::{
    bath_correlation_modes, bath_modes, matsubara_tail, matsubara_tail_sums, pade_poles, BathMode,
    Decomposition,
};
pub use heom::{
    heom_propagate, heom_propagate_report, propagate_fixed, ConvergenceReport, FixedRun,
    HierarchyConfig,
};
pub use io::{read_trajectory_csv, trajectory_file_name, write_trajectory_csv};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One point of the (ε, Δ, λ, ωc, β) physics grid, all in units of Δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinBosonParams {
    pub epsilon: f64,
    pub delta: f64,
    pub lambda: f64,
    pub omega_c: f64,
    pub beta: f64,
}

impl SpinBosonParams {
    /// Parameters with the tunneling element fixed to 1.
    pub fn new(epsilon: f64, lambda: f64, omega_c: f64, beta: f64) -> Self {
        SpinBosonParams {
            epsilon,
            delta: 1.0,
            lambda,
            omega_c,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Δ = 0 is allowed: it is the frozen-population limit.
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("delta", format!("{} must be >= 0", self.delta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("{} must be >= 0", self.lambda)));
        }
        if !(self.omega_c > 0.0) || !self.omega_c.is_finite() {
            return Err(Error::invalid("omega_c", format!("{} must be > 0", self.omega_c)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta", format!("{} must be > 0", self.beta)));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon", "must be finite"));
        }
        Ok(())
    }
}

/// Uniformly sampled `⟨σz(t)⟩` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: SpinBosonParams,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sampling interval, or `None` for fewer than two samples.
    pub fn dt(&self) -> Option<f64> {
        if self.times.len() < 2 {
            None
        } else {
            Some(self.times[1] - self.times[0])
        }
    }

    /// Checks ordering, uniform spacing and the `|σz| ≤ 1` bound.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::shape("trajectory", self.times.len(), self.values.len()));
        }
        if let Some(dt) = self.dt() {
            if !(dt > 0.0) {
                return Err(Error::invalid("times", "not strictly increasing"));
            }
            for (i, w) in self.times.windows(2).enumerate() {
                if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
                    return Err(Error::invalid("times", format!("non-uniform spacing at {}", i + 1)));
                }
            }
        }
        if let Some(i) = self.values.iter().position(|v| !(v.abs() <= 1.0 + tol)) {
            return Err(Error::invalid(
                "values",
                format!("|sigma_z| = {} exceeds 1 at index {i}", self.values[i]),
            ));
        }
        Ok(())
    }
}

/// Debye (Drude-Lorentz) spectral density `2λ ω ωc / (ω² + ωc²)`.
pub fn debye_spectral_density(omega: f64, params: &SpinBosonParams) -> f64 {
    2.0 * params.lambda * omega * params.omega_c / (omega * omega + params.omega_c * params.omega_c)
}

/// `Tr[σz ρ]` for a 2×2 density matrix in row-major order.
pub fn sigma_z_expectation(rho: &[[Complex64; 2]; 2]) -> Result<f64> {
    const TOL: f64 = 1e-8;
    let trace = rho[0][0] + rho[1][1];
    if (trace - 1.0).norm() > TOL {
        return Err(Error::invalid("rho", format!("trace {trace} is not 1")));
    }
    if (rho[0][1] - rho[1][0].conj()).norm() > TOL
        || rho[0][0].im.abs() > TOL
        || rho[1][1].im.abs() > TOL
    {
        return Err(Error::invalid("rho", "not Hermitian"));
    }
    Ok(rho[0][0].re - rho[1][1].re)
}

/// Eigenvalues of a 2×2 Hermitian matrix, ascending.
pub(crate) fn hermitian_eigenvalues(rho: &[[Complex64; 2]; 2]) -> (f64, f64) {
    let a = rho[0][0].re;
    let d = rho[1][1].re;
    let b = rho[0][1].norm();
    let mean = 0.5 * (a + d);
    let half_gap = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - half_gap, mean + half_gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn spectral_density_values() {
        let p = SpinBosonParams::new(0.0, 0.5, 1.0, 1.0);
        assert_eq!(debye_spectral_density(0.0, &p), 0.0);
        assert!((debye_spectral_density(1.0, &p) - 0.5).abs() < 1e-15);
        assert!((debye_spectral_density(2.0, &p) - 0.4).abs() < 1e-15);
        assert_eq!(
            debye_spectral_density(-2.0, &p),
            -debye_spectral_density(2.0, &p)
        );
        let q = SpinBosonParams::new(1.0, 0.3, 7.0, 0.5);
        assert!((debye_spectral_density(7.0, &q) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn sigma_z_of_basis_and_mixed_states() {
        let plus = [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let minus = [[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        let mixed = [[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]];
        assert_eq!(sigma_z_expectation(&plus).unwrap(), 1.0);
        assert_eq!(sigma_z_expectation(&minus).unwrap(), -1.0);
        assert_eq!(sigma_z_expectation(&mixed).unwrap(), 0.0);
    }

    #[test]
    fn sigma_z_rejects_bad_input() {
        let bad_trace = [[c(0.7, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.7, 0.0)]];
        assert!(sigma_z_expectation(&bad_trace).is_err());
        let non_herm = [[c(0.5, 0.0), c(0.2, 0.1)], [c(0.2, 0.1), c(0.5, 0.0)]];
        assert!(sigma_z_expectation(&non_herm).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SpinBosonParams::new(0.0, 0.1, 1.0, 1.0).validate().is_ok());
        assert!(SpinBosonParams::new(0.0, -0.1, 1.0, 1.0).validate().is_err());
        assert!(SpinBosonParams::new(0.0, 0.1, 0.0, 1.0).validate().is_err());
        assert!(SpinBosonParams::new(0.0, 0.1, 1.0, 0.0).validate().is_err());
        assert!(SpinBosonParams::new(f64::NAN, 0.1, 1.0, 1.0).validate().is_err());
    }

    #[test]
    fn eigenvalues_of_pure_state() {
        let rho = [[c(0.5, 0.0), c(0.0, 0.5)], [c(0.0, -0.5), c(0.5, 0.0)]];
        let (lo, hi) = hermitian_eigenvalues(&rho);
        assert!(lo.abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
    }
}
