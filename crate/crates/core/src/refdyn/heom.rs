//! Hierarchical equations of motion for a two-level system coupled via σz.
//!
//! Auxiliary density operators are stored in the rescaled form
//! `ρ̃_n = ρ_n / sqrt(Π_k n_k! |c_k|^{n_k})`, which balances the up and down
//! couplings and improves truncation behavior at a fixed depth. Propagation
//! uses classical RK4 with a fixed step, subdivided when the hierarchy's
//! Gershgorin rate bound would leave the stability region.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bath::{bath_modes, matsubara_tail_sums, Decomposition};
use super::{hermitian_eigenvalues, SpinBosonParams, Trajectory};
use crate::error::{Error, Result};

type M2 = [Complex64; 4];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

// RK4 on the negative real axis is stable up to 2.785; keep a margin.
const RK4_STABLE_STEP: f64 = 2.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    /// Initial hierarchy truncation level.
    pub depth: usize,
    /// Initial number of Bose-function poles (Matsubara or Padé terms).
    pub n_matsubara: usize,
    pub decomposition: Decomposition,
    pub dt_integrate: f64,
    pub t_max: f64,
    pub dt_save: f64,
    /// Largest saved-value change allowed between `(depth, n)` and `(depth+1, n+1)`.
    pub tolerance: f64,
    /// Refinement stops with an error once the finer hierarchy would exceed this depth.
    pub max_depth: usize,
    /// Same limit for the number of poles.
    pub max_matsubara: usize,
    /// Add the Markovian correction for the truncated Matsubara tail. Has no
    /// effect with the Padé decomposition, whose zero-frequency weight is exact.
    pub terminator: bool,
    /// Run the self-convergence refinement; when false a single fixed run is returned.
    pub refine: bool,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            depth: 4,
            n_matsubara: 2,
            decomposition: Decomposition::Pade,
            dt_integrate: 0.01,
            t_max: 20.0,
            dt_save: 0.1,
            tolerance: 1e-4,
            max_depth: 14,
            max_matsubara: 10,
            terminator: true,
            refine: true,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<usize> {
        if !(self.dt_integrate > 0.0) {
            return Err(Error::invalid("dt_integrate", "must be > 0"));
        }
        if !(self.dt_save > 0.0) {
            return Err(Error::invalid("dt_save", "must be > 0"));
        }
        if self.dt_integrate > self.dt_save * (1.0 + 1e-12) {
            return Err(Error::invalid("dt_integrate", "must not exceed dt_save"));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::invalid("t_max", "must be > 0"));
        }
        let n_save = (self.t_max / self.dt_save).round();
        if (n_save * self.dt_save - self.t_max).abs() > 1e-9 * self.t_max.max(1.0) {
            return Err(Error::invalid("dt_save", "must divide t_max"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be > 0"));
        }
        Ok(n_save as usize)
    }

    /// Number of saved samples, including `t = 0`.
    pub fn n_samples(&self) -> Result<usize> {
        Ok(self.validate()? + 1)
    }
}

/// Outcome of one propagation at a fixed hierarchy size.
#[derive(Debug, Clone)]
pub struct FixedRun {
    pub trajectory: Trajectory,
    pub depth: usize,
    pub n_matsubara: usize,
    pub n_ados: usize,
    /// RK4 steps per saved interval.
    pub substeps: usize,
    pub max_trace_error: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub depth: usize,
    pub n_matsubara: usize,
    /// Max saved-value change against the `(depth+1, n+1)` hierarchy.
    pub residual: f64,
    pub max_trace_error: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Copy)]
enum Link {
    /// Coupling to `n + e_k`; only touches coherences.
    Up { target: u32, scale: f64 },
    /// Coupling to `n − e_k` through `c Q ρ − c* ρ Q`.
    Down { target: u32, a: f64, b: f64 },
}

struct Hierarchy {
    damping: Vec<f64>,
    link_start: Vec<u32>,
    links: Vec<Link>,
    half_eps: f64,
    half_delta: f64,
    /// Per-operator `(A_n, B_n)` of the Matsubara-tail correction
    /// `−A_n [Q,[Q,ρ_n]] + B_n [Q,[Q,ρ̇_n]]`; empty when disabled.
    tail: Vec<(f64, f64)>,
}

fn enumerate_indices(n_modes: usize, depth: usize) -> Vec<Vec<u8>> {
    fn rec(prefix: &mut Vec<u8>, n_modes: usize, left: usize, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == n_modes {
            out.push(prefix.clone());
            return;
        }
        for v in 0..=left {
            prefix.push(v as u8);
            rec(prefix, n_modes, left - v, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n_modes), n_modes, depth, &mut out);
    // Level order keeps the physical density matrix at index 0.
    out.sort_by_key(|n| (n.iter().map(|&v| v as usize).sum::<usize>(), std::cmp::Reverse(n.clone())));
    out
}

impl Hierarchy {
    fn build(params: &SpinBosonParams, depth: usize, n_matsubara: usize, config: &HierarchyConfig) -> Result<Self> {
        let coupled = params.lambda > 0.0;
        let modes = if coupled {
            bath_modes(params, n_matsubara, config.decomposition)?
        } else {
            Vec::new()
        };
        let depth = if coupled { depth } else { 0 };
        if depth > u8::MAX as usize {
            return Err(Error::invalid("depth", "must be <= 255"));
        }

        let indices = enumerate_indices(modes.len(), depth);
        let lookup: HashMap<&[u8], u32> = indices
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_slice(), i as u32))
            .collect();

        let mut damping: Vec<f64> = Vec::with_capacity(indices.len());
        let mut link_start = Vec::with_capacity(indices.len() + 1);
        let mut links = Vec::new();
        let mut key = Vec::with_capacity(modes.len());
        for n in &indices {
            link_start.push(links.len() as u32);
            let level: usize = n.iter().map(|&v| v as usize).sum();
            damping.push(
                n.iter()
                    .zip(&modes)
                    .map(|(&nk, m)| nk as f64 * m.decay_rate)
                    .sum(),
            );
            for (k, mode) in modes.iter().enumerate() {
                let abs_c = mode.coefficient.norm();
                if abs_c == 0.0 {
                    continue;
                }
                let nk = n[k] as f64;
                if level < depth {
                    key.clear();
                    key.extend_from_slice(n);
                    key[k] += 1;
                    links.push(Link::Up {
                        target: lookup[key.as_slice()],
                        scale: 2.0 * ((nk + 1.0) * abs_c).sqrt(),
                    });
                }
                if n[k] > 0 {
                    key.clear();
                    key.extend_from_slice(n);
                    key[k] -= 1;
                    let s = (nk / abs_c).sqrt();
                    links.push(Link::Down {
                        target: lookup[key.as_slice()],
                        a: 2.0 * s * mode.coefficient.im,
                        b: 2.0 * s * mode.coefficient.re,
                    });
                }
            }
        }
        link_start.push(links.len() as u32);

        let mut tail = Vec::new();
        if coupled && config.terminator && config.decomposition == Decomposition::Matsubara {
            let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
            tail = damping
                .iter()
                .map(|&g| {
                    *cache
                        .entry(g.to_bits())
                        .or_insert_with(|| matsubara_tail_sums(params, n_matsubara, g))
                })
                .collect();
        }

        Ok(Hierarchy {
            damping,
            link_start,
            links,
            half_eps: 0.5 * params.epsilon,
            half_delta: 0.5 * params.delta,
            tail,
        })
    }

    fn len(&self) -> usize {
        self.damping.len()
    }

    /// Gershgorin bound on the magnitude of the generator's eigenvalues.
    fn rate_bound(&self) -> f64 {
        let system = 2.0 * (self.half_eps.hypot(self.half_delta)) * 2.0;
        (0..self.len())
            .map(|i| {
                let couplings: f64 = self.links[self.link_start[i] as usize..self.link_start[i + 1] as usize]
                    .iter()
                    .map(|l| match *l {
                        Link::Up { scale, .. } => scale,
                        Link::Down { a, b, .. } => a.abs().max(b.abs()),
                    })
                    .sum();
                let (a, b) = self.tail.get(i).copied().unwrap_or((0.0, 0.0));
                (1.0 + 4.0 * b.abs()) * (self.damping[i] + system + couplings) + 4.0 * a.abs()
            })
            .fold(0.0, f64::max)
    }

    fn derivative(&self, state: &[M2], out: &mut [M2]) {
        let he = self.half_eps;
        let hd = self.half_delta;
        let eps = 2.0 * he;
        for (i, o) in out.iter_mut().enumerate() {
            let r = &state[i];
            // −i[H, ρ]
            let c00 = hd * (r[2] - r[1]);
            let c01 = eps * r[1] + hd * (r[3] - r[0]);
            let c10 = -eps * r[2] + hd * (r[0] - r[3]);
            let c11 = hd * (r[1] - r[2]);
            let g = self.damping[i];
            let mut d = [
                -I * c00 - g * r[0],
                -I * c01 - g * r[1],
                -I * c10 - g * r[2],
                -I * c11 - g * r[3],
            ];
            for link in &self.links[self.link_start[i] as usize..self.link_start[i + 1] as usize] {
                match *link {
                    Link::Up { target, scale } => {
                        let t = &state[target as usize];
                        d[1] -= I * (scale * t[1]);
                        d[2] += I * (scale * t[2]);
                    }
                    Link::Down { target, a, b } => {
                        let t = &state[target as usize];
                        d[0] += a * t[0];
                        d[1] -= I * (b * t[1]);
                        d[2] += I * (b * t[2]);
                        d[3] -= a * t[3];
                    }
                }
            }
            if let Some(&(a, b)) = self.tail.get(i) {
                // [Q,[Q,X]] = 4 × off-diagonal part of X for Q = σz
                let (fa, fb) = (4.0 * a, 1.0 + 4.0 * b);
                d[1] = fb * d[1] - fa * r[1];
                d[2] = fb * d[2] - fa * r[2];
            }
            *o = d;
        }
    }
}

fn axpy(out: &mut [M2], base: &[M2], h: f64, k: &[M2]) {
    for ((o, b), k) in out.iter_mut().zip(base).zip(k) {
        for j in 0..4 {
            o[j] = b[j] + h * k[j];
        }
    }
}

/// Propagates once at a fixed hierarchy size.
pub fn propagate_fixed(
    params: &SpinBosonParams,
    depth: usize,
    n_matsubara: usize,
    config: &HierarchyConfig,
) -> Result<FixedRun> {
    params.validate()?;
    let n_save = config.validate()?;
    let hier = Hierarchy::build(params, depth, n_matsubara, config)?;
    let n = hier.len();

    let min_sub = (config.dt_save / config.dt_integrate - 1e-9).ceil().max(1.0);
    let stable_sub = (config.dt_save * hier.rate_bound() / RK4_STABLE_STEP).ceil();
    let substeps = min_sub.max(stable_sub) as usize;
    let h = config.dt_save / substeps as f64;

    let mut state = vec![[ZERO; 4]; n];
    state[0][0] = Complex64::new(1.0, 0.0);
    let mut k1 = vec![[ZERO; 4]; n];
    let mut k2 = vec![[ZERO; 4]; n];
    let mut k3 = vec![[ZERO; 4]; n];
    let mut k4 = vec![[ZERO; 4]; n];
    let mut tmp = vec![[ZERO; 4]; n];

    let mut times = Vec::with_capacity(n_save + 1);
    let mut values = Vec::with_capacity(n_save + 1);
    let mut max_trace_error: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;

    for step in 0..=n_save {
        if step > 0 {
            for _ in 0..substeps {
                hier.derivative(&state, &mut k1);
                axpy(&mut tmp, &state, 0.5 * h, &k1);
                hier.derivative(&tmp, &mut k2);
                axpy(&mut tmp, &state, 0.5 * h, &k2);
                hier.derivative(&tmp, &mut k3);
                axpy(&mut tmp, &state, h, &k3);
                hier.derivative(&tmp, &mut k4);
                for (idx, s) in state.iter_mut().enumerate() {
                    for j in 0..4 {
                        s[j] += h / 6.0 * (k1[idx][j] + 2.0 * (k2[idx][j] + k3[idx][j]) + k4[idx][j]);
                    }
                }
            }
            if state.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::non_finite("heom propagation", step));
            }
        }
        let r = &state[0];
        let rho = [[r[0], r[1]], [r[2], r[3]]];
        max_trace_error = max_trace_error.max(((r[0] + r[3]) - 1.0).norm());
        min_eigenvalue = min_eigenvalue.min(hermitian_eigenvalues(&rho).0);
        times.push(step as f64 * config.dt_save);
        values.push(r[0].re - r[3].re);
    }

    Ok(FixedRun {
        trajectory: Trajectory {
            params: *params,
            times,
            values,
        },
        depth: if params.lambda > 0.0 { depth } else { 0 },
        n_matsubara: if params.lambda > 0.0 { n_matsubara } else { 0 },
        n_ados: n,
        substeps,
        max_trace_error,
        min_eigenvalue,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Converged trajectory plus the refinement diagnostics.
///
/// Depth and pole count are grown independently: each round compares the
/// current run against `(D+1, M)` and `(D, M+1)` and enlarges whichever axis
/// moved by more than half the tolerance. Once neither does, the result is
/// accepted only if the `(D+1, M+1)` run agrees within the tolerance.
pub fn heom_propagate_report(
    params: &SpinBosonParams,
    config: &HierarchyConfig,
) -> Result<(Trajectory, ConvergenceReport)> {
    let mut depth = config.depth;
    let mut n_mats = config.n_matsubara;
    if params.lambda > 0.0 && depth == 0 {
        return Err(Error::invalid("depth", "must be >= 1 when lambda > 0"));
    }
    let mut coarse = propagate_fixed(params, depth, n_mats, config)?;
    if params.lambda == 0.0 || !config.refine {
        let report = ConvergenceReport {
            depth: coarse.depth,
            n_matsubara: coarse.n_matsubara,
            residual: if params.lambda == 0.0 { 0.0 } else { f64::NAN },
            max_trace_error: coarse.max_trace_error,
            min_eigenvalue: coarse.min_eigenvalue,
        };
        return Ok((coarse.trajectory, report));
    }

    let half = 0.5 * config.tolerance;
    let mut residual = f64::NAN;
    loop {
        if depth + 1 > config.max_depth || n_mats + 1 > config.max_matsubara {
            return Err(Error::NotConverged {
                depth,
                n_matsubara: n_mats,
                residual,
            });
        }
        let deeper = propagate_fixed(params, depth + 1, n_mats, config)?;
        let wider = propagate_fixed(params, depth, n_mats + 1, config)?;
        let rd = max_abs_diff(&coarse.trajectory.values, &deeper.trajectory.values);
        let rn = max_abs_diff(&coarse.trajectory.values, &wider.trajectory.values);
        log::debug!("heom ({depth}, {n_mats}): depth step {rd:.3e}, pole step {rn:.3e}");
        if rd <= half && rn <= half {
            let fine = propagate_fixed(params, depth + 1, n_mats + 1, config)?;
            residual = max_abs_diff(&coarse.trajectory.values, &fine.trajectory.values);
            if residual <= config.tolerance {
                let report = ConvergenceReport {
                    depth,
                    n_matsubara: n_mats,
                    residual,
                    max_trace_error: coarse.max_trace_error,
                    min_eigenvalue: coarse.min_eigenvalue,
                };
                return Ok((coarse.trajectory, report));
            }
            depth += 1;
            n_mats += 1;
            coarse = fine;
            continue;
        }
        residual = rd.max(rn);
        match (rd > half, rn > half) {
            (true, false) => {
                depth += 1;
                coarse = deeper;
            }
            (false, true) => {
                n_mats += 1;
                coarse = wider;
            }
            _ => {
                depth += 1;
                n_mats += 1;
                coarse = propagate_fixed(params, depth, n_mats, config)?;
            }
        }
    }
}

/// Numerically exact `⟨σz(t)⟩` on the saved grid `0, dt_save, …, t_max`.
pub fn heom_propagate(params: &SpinBosonParams, config: &HierarchyConfig) -> Result<Trajectory> {
    heom_propagate_report(params, config).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config() -> HierarchyConfig {
        HierarchyConfig {
            t_max: 2.0,
            ..HierarchyConfig::default()
        }
    }

    #[test]
    fn index_enumeration_counts() {
        // C(d + k, k)
        assert_eq!(enumerate_indices(1, 10).len(), 11);
        assert_eq!(enumerate_indices(4, 10).len(), 1001);
        assert_eq!(enumerate_indices(3, 2).len(), 10);
        assert!(enumerate_indices(3, 2)[0].iter().all(|&v| v == 0));
    }

    #[test]
    fn config_validation() {
        let mut c = HierarchyConfig::default();
        assert_eq!(c.n_samples().unwrap(), 201);
        c.dt_integrate = 0.2;
        assert!(c.validate().is_err());
        c.dt_integrate = 0.01;
        c.dt_save = 0.3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_depth_rejected_with_coupling() {
        let p = SpinBosonParams::new(0.0, 0.1, 1.0, 1.0);
        let c = HierarchyConfig {
            depth: 0,
            ..short_config()
        };
        assert!(heom_propagate(&p, &c).is_err());
    }

    #[test]
    fn uncoupled_uses_single_operator() {
        let p = SpinBosonParams::new(0.0, 0.0, 1.0, 1.0);
        let run = propagate_fixed(&p, 10, 3, &short_config()).unwrap();
        assert_eq!(run.n_ados, 1);
        assert_eq!(run.trajectory.len(), 21);
    }

    #[test]
    fn trace_is_preserved() {
        let p = SpinBosonParams::new(1.0, 0.5, 3.0, 0.5);
        let run = propagate_fixed(&p, 4, 1, &short_config()).unwrap();
        assert!(run.max_trace_error < 1e-10);
        assert_eq!(run.trajectory.values[0], 1.0);
    }
}
