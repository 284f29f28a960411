use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_kernel, kernel_matrix, krr_fit, krr_predict, KernelSpec};
use crate::datapipe::Dataset;
use crate::error::{Error, Result};

/// Kernel family to search over; Matérn carries its fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Linear,
    Gaussian,
    Exponential,
    Matern(u32),
    DecayingPeriodic,
}

impl KernelFamily {
    pub fn with_sigma(self, sigma: f64) -> KernelSpec {
        match self {
            KernelFamily::Linear => KernelSpec::Linear,
            KernelFamily::Gaussian => KernelSpec::Gaussian { sigma },
            KernelFamily::Exponential => KernelSpec::Exponential { sigma },
            KernelFamily::Matern(n) => KernelSpec::Matern { sigma, n },
            KernelFamily::DecayingPeriodic => KernelSpec::DecayingPeriodic {
                sigma,
                period: 1.0,
                sigma_p: f64::INFINITY,
            },
        }
    }

    /// Parses report ids such as `krr-g` or `krr-m3`.
    pub fn from_model_id(id: &str) -> Option<Self> {
        Some(match id {
            "krr-l" => KernelFamily::Linear,
            "krr-g" => KernelFamily::Gaussian,
            "krr-e" => KernelFamily::Exponential,
            "krr-dp" => KernelFamily::DecayingPeriodic,
            _ => {
                let n: u32 = id.strip_prefix("krr-m")?.parse().ok()?;
                KernelFamily::Matern(n)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Random draws for the decaying periodic kernel.
    pub n_random: usize,
    /// Log-uniform range of the period for random draws.
    pub period_range: (f64, f64),
    /// Training sets larger than this are subsampled with the search seed.
    pub max_train: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            sigmas: (-5..=15).map(|e| 2f64.powi(e)).collect(),
            lambdas: (-35..=-5).map(|e| 2f64.powi(e)).collect(),
            n_random: 128,
            period_range: (0.1, 20.0),
            max_train: 6000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub spec: KernelSpec,
    pub lambda_reg: f64,
    /// Validation MAE; infinite when the solve failed.
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub spec: KernelSpec,
    pub lambda_reg: f64,
    pub mae: f64,
    pub trials: Vec<Trial>,
}

/// Picks the hyperparameters minimizing validation MAE.
///
/// Grid families share one eigendecomposition of `K` per σ, which makes every
/// λ on the grid a cheap rescaling. The decaying periodic kernel is searched
/// by seeded random draws instead. Ties go to the smallest σ, then the
/// smallest λ.
pub fn hyperparameter_search(
    train: &Dataset,
    validation: &Dataset,
    family: KernelFamily,
    grid: &SearchGrid,
    seed: u64,
) -> Result<SearchOutcome> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid("search data", "train and validation sets must be non-empty"));
    }
    if grid.lambdas.is_empty() || (family != KernelFamily::Linear && grid.sigmas.is_empty()) {
        return Err(Error::invalid("grid", "empty hyperparameter grid"));
    }
    if family == KernelFamily::DecayingPeriodic && grid.n_random == 0 {
        return Err(Error::invalid("grid", "n_random must be >= 1"));
    }
    let train = if train.len() > grid.max_train {
        train.subsample(grid.max_train, seed)
    } else {
        train.clone()
    };
    let x = train.inputs();
    let y = train.labels();
    let xv = validation.inputs();
    let yv = validation.labels();

    let trials = match family {
        KernelFamily::DecayingPeriodic => random_trials(&x, &y, &xv, &yv, grid, seed),
        KernelFamily::Linear => spectral_trials(KernelSpec::Linear, &x, &y, &xv, &yv, &grid.lambdas)?,
        _ => {
            let mut out = Vec::new();
            for &s in &grid.sigmas {
                out.extend(spectral_trials(family.with_sigma(s), &x, &y, &xv, &yv, &grid.lambdas)?);
            }
            out
        }
    };

    let mut best: Option<Trial> = None;
    for t in &trials {
        let better = match best {
            None => true,
            Some(b) => {
                t.mae < b.mae
                    || (t.mae == b.mae
                        && (t.spec.sigma(), t.lambda_reg)
                            .partial_cmp(&(b.spec.sigma(), b.lambda_reg))
                            .is_some_and(|o| o.is_lt()))
            }
        };
        if better {
            best = Some(*t);
        }
    }
    let best = best.filter(|b| b.mae.is_finite()).ok_or_else(|| {
        Error::Solve("every hyperparameter candidate failed".into())
    })?;
    Ok(SearchOutcome {
        spec: best.spec,
        lambda_reg: best.lambda_reg,
        mae: best.mae,
        trials,
    })
}

/// Validation MAE for every λ at a fixed kernel via `K = V Λ Vᵀ`.
fn spectral_trials(
    spec: KernelSpec,
    x: &[&[f64]],
    y: &[f64],
    xv: &[&[f64]],
    yv: &[f64],
    lambdas: &[f64],
) -> Result<Vec<Trial>> {
    let n = x.len();
    let k = kernel_matrix(&spec, x);
    let evd = match k.self_adjoint_eigen(Side::Lower) {
        Ok(e) => e,
        Err(_) => {
            return Ok(lambdas
                .iter()
                .map(|&l| Trial {
                    spec,
                    lambda_reg: l,
                    mae: f64::INFINITY,
                })
                .collect())
        }
    };
    let v = evd.U();
    let s: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
    let ym = Mat::from_fn(n, 1, |i, _| y[i]);
    let vty = v.transpose() * &ym;
    let kv = cross_kernel(&spec, xv, x) * v;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut w = Mat::<f64>::zeros(n, 1);
    for &l in lambdas {
        for i in 0..n {
            // clamp round-off negatives of a PSD spectrum
            w[(i, 0)] = vty[(i, 0)] / (s[i].max(0.0) + l);
        }
        let pred = &kv * &w;
        let mut sum = 0.0;
        for (i, t) in yv.iter().enumerate() {
            sum += (pred[(i, 0)] - t).abs();
        }
        let mae = sum / yv.len() as f64;
        out.push(Trial {
            spec,
            lambda_reg: l,
            mae: if mae.is_finite() { mae } else { f64::INFINITY },
        });
    }
    Ok(out)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn random_trials(
    x: &[&[f64]],
    y: &[f64],
    xv: &[&[f64]],
    yv: &[f64],
    grid: &SearchGrid,
    seed: u64,
) -> Vec<Trial> {
    let bounds = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    };
    let (s_lo, s_hi) = bounds(&grid.sigmas);
    let (l_lo, l_hi) = bounds(&grid.lambdas);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.n_random)
        .map(|_| {
            let spec = KernelSpec::DecayingPeriodic {
                sigma: log_uniform(&mut rng, s_lo, s_hi),
                period: log_uniform(&mut rng, grid.period_range.0, grid.period_range.1),
                sigma_p: log_uniform(&mut rng, s_lo, s_hi),
            };
            let lambda_reg = log_uniform(&mut rng, l_lo, l_hi);
            let mae = krr_fit(x, y, spec, lambda_reg)
                .and_then(|m| {
                    let mut sum = 0.0;
                    for (xi, t) in xv.iter().zip(yv) {
                        sum += (krr_predict(&m, xi)? - t).abs();
                    }
                    Ok(sum / yv.len() as f64)
                })
                .ok()
                .filter(|m| m.is_finite())
                .unwrap_or(f64::INFINITY);
            Trial { spec, lambda_reg, mae }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{SampleOrigin, SlicedSample, SplitTag};

    fn dataset(points: &[(f64, f64)]) -> Dataset {
        let samples = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| SlicedSample {
                input: vec![x],
                label: y,
                origin: SampleOrigin { grid_id: 0, offset: i },
            })
            .collect();
        Dataset::new(samples, 1, SplitTag::Train).unwrap()
    }

    #[test]
    fn model_ids_parse() {
        assert_eq!(KernelFamily::from_model_id("krr-m3"), Some(KernelFamily::Matern(3)));
        assert_eq!(KernelFamily::from_model_id("krr-g"), Some(KernelFamily::Gaussian));
        assert_eq!(KernelFamily::from_model_id("lstm"), None);
    }

    #[test]
    fn single_point_grid_returns_it() {
        let d = dataset(&[(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)]);
        let v = dataset(&[(0.5, 0.25)]);
        let grid = SearchGrid {
            sigmas: vec![0.7],
            lambdas: vec![1e-3],
            ..SearchGrid::default()
        };
        let out = hyperparameter_search(&d, &v, KernelFamily::Gaussian, &grid, 0).unwrap();
        assert_eq!(out.spec, KernelSpec::Gaussian { sigma: 0.7 });
        assert_eq!(out.lambda_reg, 1e-3);
        assert_eq!(out.trials.len(), 1);
    }

    #[test]
    fn empty_grid_rejected() {
        let d = dataset(&[(0.0, 0.0)]);
        let grid = SearchGrid {
            lambdas: vec![],
            ..SearchGrid::default()
        };
        assert!(hyperparameter_search(&d, &d, KernelFamily::Gaussian, &grid, 0).is_err());
    }

    #[test]
    fn random_search_is_seeded() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 * 0.1, (i as f64 * 0.3).sin())).collect();
        let d = dataset(&pts);
        let grid = SearchGrid {
            n_random: 6,
            ..SearchGrid::default()
        };
        let a = hyperparameter_search(&d, &d, KernelFamily::DecayingPeriodic, &grid, 11).unwrap();
        let b = hyperparameter_search(&d, &d, KernelFamily::DecayingPeriodic, &grid, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 6);
    }
}
