//! Recursive long-time propagation from a short seed window, plus accuracy
//! and timing evaluation over hold-out trajectories.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krr::KrrModel;
use crate::nnet::NetModel;
use crate::refdyn::{SpinBosonParams, Trajectory};

/// Anything that maps a window of `T` values to the next value.
pub trait Forecaster {
    fn name(&self) -> String;
    fn window_length(&self) -> usize;
    fn predict(&self, window: &[f64]) -> Result<f64>;
    /// Trainable scalars; for KRR, the number of regression coefficients.
    fn parameter_count(&self) -> usize;
}

impl Forecaster for KrrModel {
    fn name(&self) -> String {
        self.spec.model_id()
    }

    fn window_length(&self) -> usize {
        KrrModel::window_length(self)
    }

    fn predict(&self, window: &[f64]) -> Result<f64> {
        KrrModel::predict(self, window)
    }

    fn parameter_count(&self) -> usize {
        self.alphas.len()
    }
}

impl Forecaster for NetModel {
    fn name(&self) -> String {
        self.spec.name.clone()
    }

    fn window_length(&self) -> usize {
        NetModel::window_length(self)
    }

    fn predict(&self, window: &[f64]) -> Result<f64> {
        NetModel::predict(self, window)
    }

    fn parameter_count(&self) -> usize {
        NetModel::parameter_count(self)
    }
}

/// Wraps a closure, mostly for oracles and tests.
pub struct FnForecaster<F> {
    pub name: String,
    pub window_length: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> Forecaster for FnForecaster<F> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn window_length(&self) -> usize {
        self.window_length
    }

    fn predict(&self, window: &[f64]) -> Result<f64> {
        Ok((self.f)(window))
    }

    fn parameter_count(&self) -> usize {
        0
    }
}

/// Feeds each prediction back into the window, dropping the oldest value.
///
/// Fails with [`Error::NonFinite`] at the first NaN or infinite prediction.
pub fn recursive_forecast(f: &dyn Forecaster, seed_window: &[f64], n_steps: usize) -> Result<Vec<f64>> {
    let t = f.window_length();
    if seed_window.len() != t {
        return Err(Error::shape("seed window", t, seed_window.len()));
    }
    if n_steps == 0 {
        return Err(Error::invalid("n_steps", "must be >= 1"));
    }
    let mut buf = Vec::with_capacity(t + n_steps);
    buf.extend_from_slice(seed_window);
    for i in 0..n_steps {
        let next = f.predict(&buf[i..i + t])?;
        if !next.is_finite() {
            return Err(Error::non_finite(format!("recursive forecast of {}", f.name()), i));
        }
        buf.push(next);
    }
    Ok(buf.split_off(t))
}

pub fn evaluate_mae(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::shape("mae inputs", reference.len(), predicted.len()));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("mae inputs", "empty sequences"));
    }
    let s: f64 = predicted.iter().zip(reference).map(|(p, r)| (p - r).abs()).sum();
    Ok(s / predicted.len() as f64)
}

/// Hold-out trajectories under a label such as `symmetric`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSet {
    pub name: String,
    pub trajectories: Vec<Trajectory>,
}

pub struct BenchmarkModel<'a> {
    pub forecaster: &'a dyn Forecaster,
    pub training_time: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Repeats of the timed prediction pass; the median is reported.
    pub timing_repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { timing_repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryForecast {
    pub set: String,
    pub index: usize,
    pub params: SpinBosonParams,
    /// Times of the predicted points.
    pub times: Vec<f64>,
    pub reference: Vec<f64>,
    /// Empty when the forecast diverged.
    pub predicted: Vec<f64>,
    pub abs_errors: Vec<f64>,
    /// Step index of the first non-finite prediction.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub parameters: usize,
    /// `(set name, pooled MAE)`; infinite for a diverged model.
    pub mae: Vec<(String, f64)>,
    pub training_time_s: Option<f64>,
    /// Median over repeats of the mean wall time per predicted step.
    pub prediction_time_s: f64,
    pub forecasts: Vec<TrajectoryForecast>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub sets: Vec<String>,
    pub rows: Vec<BenchmarkRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Forecasts every hold-out trajectory from its first `T` true values and
/// pools absolute errors over all predicted points of a set.
///
/// A model whose forecast diverges gets an infinite MAE for that set instead
/// of aborting the run. Rows are sorted by the first set's MAE.
pub fn run_benchmark(
    models: &[BenchmarkModel<'_>],
    holdouts: &[HoldoutSet],
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if models.is_empty() {
        return Err(Error::invalid("models", "nothing to benchmark"));
    }
    let t = models[0].forecaster.window_length();
    if let Some(m) = models.iter().find(|m| m.forecaster.window_length() != t) {
        return Err(Error::shape(
            format!("window length of {}", m.forecaster.name()),
            t,
            m.forecaster.window_length(),
        ));
    }
    for set in holdouts {
        for (i, traj) in set.trajectories.iter().enumerate() {
            if traj.len() <= t {
                return Err(Error::invalid(
                    "holdout",
                    format!("{} trajectory {i} has {} points, need more than {t}", set.name, traj.len()),
                ));
            }
        }
    }
    let repeats = config.timing_repeats.max(1);
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let f = m.forecaster;
        let mut forecasts = Vec::new();
        let mut mae = Vec::new();
        let mut timings = Vec::with_capacity(repeats);
        let mut pass_time = Duration::ZERO;
        let mut pass_steps = 0usize;
        for set in holdouts {
            let (mut sum, mut count, mut diverged) = (0.0, 0usize, false);
            for (index, traj) in set.trajectories.iter().enumerate() {
                let n = traj.len() - t;
                let reference = traj.values[t..].to_vec();
                let start = Instant::now();
                let out = recursive_forecast(f, &traj.values[..t], n);
                let elapsed = start.elapsed();
                let (predicted, diverged_at) = match out {
                    Ok(p) => {
                        pass_time += elapsed;
                        pass_steps += n;
                        (p, None)
                    }
                    Err(Error::NonFinite { index: step, .. }) => {
                        log::warn!("{} diverged on {} trajectory {index} at step {step}", f.name(), set.name);
                        (Vec::new(), Some(step))
                    }
                    Err(e) => return Err(e),
                };
                let abs_errors: Vec<f64> = predicted.iter().zip(&reference).map(|(p, r)| (p - r).abs()).collect();
                if diverged_at.is_some() {
                    diverged = true;
                } else {
                    sum += abs_errors.iter().sum::<f64>();
                    count += n;
                }
                forecasts.push(TrajectoryForecast {
                    set: set.name.clone(),
                    index,
                    params: traj.params,
                    times: traj.times[t..].to_vec(),
                    reference,
                    predicted,
                    abs_errors,
                    diverged_at,
                });
            }
            let v = if diverged || count == 0 { f64::INFINITY } else { sum / count as f64 };
            mae.push((set.name.clone(), v));
        }
        if pass_steps > 0 {
            timings.push(pass_time.as_secs_f64() / pass_steps as f64);
            for _ in 1..repeats {
                let (mut elapsed, mut steps) = (Duration::ZERO, 0);
                for fc in forecasts.iter().filter(|fc| fc.diverged_at.is_none()) {
                    let traj = &holdouts.iter().find(|s| s.name == fc.set).expect("own set").trajectories[fc.index];
                    let start = Instant::now();
                    recursive_forecast(f, &traj.values[..t], fc.reference.len())?;
                    elapsed += start.elapsed();
                    steps += fc.reference.len();
                }
                timings.push(elapsed.as_secs_f64() / steps as f64);
            }
        }
        rows.push(BenchmarkRow {
            model: f.name(),
            parameters: f.parameter_count(),
            mae,
            training_time_s: m.training_time.map(|d| d.as_secs_f64()),
            prediction_time_s: if timings.is_empty() { f64::NAN } else { median(timings) },
            forecasts,
        });
    }
    rows.sort_by(|a, b| {
        let key = |r: &BenchmarkRow| r.mae.first().map_or(f64::INFINITY, |m| m.1);
        key(a).total_cmp(&key(b))
    });
    Ok(BenchmarkReport {
        sets: holdouts.iter().map(|h| h.name.clone()).collect(),
        rows,
    })
}

/// `model,parameters,mae_<set>...,training_time_s,prediction_time_s`
pub fn write_report_csv(path: &Path, report: &BenchmarkReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "model,parameters")?;
    for s in &report.sets {
        write!(w, ",mae_{s}")?;
    }
    writeln!(w, ",training_time_s,prediction_time_s")?;
    for r in &report.rows {
        write!(w, "{},{}", r.model, r.parameters)?;
        for (_, m) in &r.mae {
            write!(w, ",{m:e}")?;
        }
        match r.training_time_s {
            Some(t) => write!(w, ",{t:.6}")?,
            None => write!(w, ",")?,
        }
        writeln!(w, ",{:e}", r.prediction_time_s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ErrorSeries<'a> {
    model: &'a str,
    set: &'a str,
    index: usize,
    params: SpinBosonParams,
    diverged_at: Option<usize>,
    abs_errors: &'a [f64],
}

/// Per-trajectory absolute error series for every model.
pub fn write_errors_json(path: &Path, report: &BenchmarkReport) -> Result<()> {
    let series: Vec<ErrorSeries> = report
        .rows
        .iter()
        .flat_map(|r| {
            r.forecasts.iter().map(move |f| ErrorSeries {
                model: &r.model,
                set: &f.set,
                index: f.index,
                params: f.params,
                diverged_at: f.diverged_at,
                abs_errors: &f.abs_errors,
            })
        })
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &series)?;
    w.flush()?;
    Ok(())
}

/// One `t,reference,predicted` file per (model, set, trajectory) under
/// `dir`; diverged forecasts leave `predicted` empty. Returns the paths.
pub fn write_plot_data(dir: &Path, report: &BenchmarkReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for r in &report.rows {
        for f in &r.forecasts {
            let path = dir.join(format!("{}_{}_{:03}.csv", r.model, f.set, f.index));
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "t,reference,predicted")?;
            for (i, (t, rf)) in f.times.iter().zip(&f.reference).enumerate() {
                match f.predicted.get(i) {
                    Some(p) => writeln!(w, "{t:?},{rf:?},{p:?}")?,
                    None => writeln!(w, "{t:?},{rf:?},")?,
                }
            }
            w.flush()?;
            paths.push(path);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos_trajectory(n: usize) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        Trajectory {
            params: SpinBosonParams::new(0.0, 0.0, 1.0, 1.0),
            values: times.iter().map(|t| t.cos()).collect(),
            times,
        }
    }

    /// cos(t+h) = 2cos(h)cos(t) − cos(t−h)
    fn cos_oracle() -> FnForecaster<impl Fn(&[f64]) -> f64> {
        FnForecaster {
            name: "oracle".into(),
            window_length: 41,
            f: |w: &[f64]| 2.0 * 0.1f64.cos() * w[40] - w[39],
        }
    }

    #[test]
    fn constant_forecaster() {
        let f = FnForecaster {
            name: "c".into(),
            window_length: 3,
            f: |_: &[f64]| 0.25,
        };
        assert_eq!(recursive_forecast(&f, &[1.0, 2.0, 3.0], 4).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn exact_recursion_tracks_cosine() {
        let traj = cos_trajectory(201);
        let out = recursive_forecast(&cos_oracle(), &traj.values[..41], 160).unwrap();
        for (p, r) in out.iter().zip(&traj.values[41..]) {
            assert!((p - r).abs() < 1e-10);
        }
    }

    #[test]
    fn window_slides() {
        let f = FnForecaster {
            name: "sum".into(),
            window_length: 2,
            f: |w: &[f64]| w[0] + w[1],
        };
        assert_eq!(recursive_forecast(&f, &[1.0, 1.0], 5).unwrap(), vec![2.0, 3.0, 5.0, 8.0, 13.0]);
    }

    #[test]
    fn nan_reports_step() {
        let f = FnForecaster {
            name: "blow".into(),
            window_length: 1,
            f: |w: &[f64]| if w[0] > 4.0 { f64::NAN } else { w[0] * 2.0 },
        };
        match recursive_forecast(&f, &[1.0], 10) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mae_basics() {
        assert_eq!(evaluate_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = [0.3, -0.2, 0.9];
        let p: Vec<f64> = r.iter().map(|v| v + 0.1).collect();
        assert!((evaluate_mae(&p, &r).unwrap() - 0.1).abs() < 1e-15);
        assert!(evaluate_mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn benchmark_sorts_oracle_first_and_flags_divergence() {
        let oracle = cos_oracle();
        let zero = FnForecaster {
            name: "zero".into(),
            window_length: 41,
            f: |_: &[f64]| 0.0,
        };
        let wild = FnForecaster {
            name: "wild".into(),
            window_length: 41,
            f: |w: &[f64]| w[40] * 1e200,
        };
        let holdouts = [HoldoutSet {
            name: "symmetric".into(),
            trajectories: vec![cos_trajectory(201), cos_trajectory(101)],
        }];
        let models = [
            BenchmarkModel {
                forecaster: &zero,
                training_time: None,
            },
            BenchmarkModel {
                forecaster: &wild,
                training_time: None,
            },
            BenchmarkModel {
                forecaster: &oracle,
                training_time: Some(Duration::from_millis(5)),
            },
        ];
        let report = run_benchmark(&models, &holdouts, &BenchmarkConfig { timing_repeats: 2 }).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].model, "oracle");
        assert!(report.rows[0].mae[0].1 < 1e-10);
        assert!(report.rows[0].prediction_time_s > 0.0);
        assert_eq!(report.rows[2].model, "wild");
        assert!(report.rows[2].mae[0].1.is_infinite());
        assert!(report.rows[2].forecasts[0].diverged_at.is_some());
        // pooled, not averaged per trajectory
        let z = &report.rows[1];
        let all: Vec<f64> = z.forecasts.iter().flat_map(|f| f.abs_errors.clone()).collect();
        assert_eq!(all.len(), 160 + 60);
        assert!((z.mae[0].1 - all.iter().sum::<f64>() / all.len() as f64).abs() < 1e-15);

        let dir = tempfile::tempdir().unwrap();
        write_report_csv(&dir.path().join("r.csv"), &report).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(text.starts_with("model,parameters,mae_symmetric,training_time_s,prediction_time_s\noracle,0,"));
        assert_eq!(text.lines().count(), 4);
        write_errors_json(&dir.path().join("e.json"), &report).unwrap();
        let plots = write_plot_data(&dir.path().join("plots"), &report).unwrap();
        assert_eq!(plots.len(), 6);
        let first = std::fs::read_to_string(&plots[0]).unwrap();
        assert!(first.starts_with("t,reference,predicted\n"));
    }

    #[test]
    fn mismatched_windows_rejected() {
        let a = FnForecaster {
            name: "a".into(),
            window_length: 3,
            f: |_: &[f64]| 0.0,
        };
        let b = FnForecaster {
            name: "b".into(),
            window_length: 4,
            f: |_: &[f64]| 0.0,
        };
        let models = [
            BenchmarkModel {
                forecaster: &a,
                training_time: None,
            },
            BenchmarkModel {
                forecaster: &b,
                training_time: None,
            },
        ];
        assert!(run_benchmark(&models, &[], &BenchmarkConfig::default()).is_err());
    }
}
