use ndarray::Array3;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetModel;
use crate::datapipe::{Dataset, SlicedSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOpts {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Shuffling seed.
    pub seed: u64,
    /// Rescale the global gradient norm to at most this value.
    pub clip_norm: Option<f64>,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("clip_norm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    /// NaN when no validation set was given.
    pub val_mse: f64,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub wall_time: std::time::Duration,
}

fn batch_tensor(samples: &[&SlicedSample], t: usize) -> Array3<f64> {
    let mut flat = Vec::with_capacity(samples.len() * t);
    for s in samples {
        flat.extend_from_slice(&s.input);
    }
    Array3::from_shape_vec((samples.len(), t, 1), flat).expect("window length checked")
}

/// Evaluates `(mse, mae)` over a dataset in chunks.
pub(crate) fn evaluate(model: &NetModel, data: &Dataset, chunk: usize) -> Result<(f64, f64)> {
    let (mut se, mut ae) = (0.0, 0.0);
    for part in data.samples.chunks(chunk.max(1)) {
        let inputs: Vec<&[f64]> = part.iter().map(|s| s.input.as_slice()).collect();
        let pred = model.predict_batch(&inputs)?;
        for (p, s) in pred.iter().zip(part) {
            let d = p - s.label;
            se += d * d;
            ae += d.abs();
        }
    }
    let n = data.len().max(1) as f64;
    Ok((se / n, ae / n))
}

/// Mini-batch Adam on the mean squared error.
///
/// Aborts with [`Error::NonFinite`] as soon as a batch loss is NaN or
/// infinite; the stage string names epoch and batch.
pub fn train(
    model: &mut NetModel,
    data: &Dataset,
    validation: Option<&Dataset>,
    opts: &TrainOpts,
) -> Result<TrainOutcome> {
    opts.validate()?;
    let t = model.window_length();
    for d in std::iter::once(data).chain(validation) {
        if d.window_length != t {
            return Err(Error::shape("dataset window length", t, d.window_length));
        }
    }
    if data.is_empty() {
        return Err(Error::invalid("training data", "dataset is empty"));
    }
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    let mut step = 0i32;
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let (mut se, mut ae) = (0.0, 0.0);
        for (bi, idx) in order.chunks(opts.batch_size).enumerate() {
            let batch: Vec<&SlicedSample> = idx.iter().map(|&i| &data.samples[i]).collect();
            let x = batch_tensor(&batch, t);
            let (mse, mae, grad) = loss_and_output_grad(model, &x, &batch);
            if !mse.is_finite() {
                log::error!("loss became {mse} at epoch {epoch}, batch {bi}");
                return Err(Error::non_finite(format!("training epoch {epoch} batch {bi}"), bi));
            }
            se += mse * batch.len() as f64;
            ae += mae * batch.len() as f64;
            zero_grads(model);
            model.backward_batch(&grad);
            step += 1;
            adam_update(model, opts, step);
        }
        let n = data.len() as f64;
        let (val_mse, val_mae) = match validation {
            Some(v) if !v.is_empty() => evaluate(model, v, 512)?,
            _ => (f64::NAN, f64::NAN),
        };
        let stats = EpochStats {
            epoch,
            train_mse: se / n,
            val_mse,
            train_mae: ae / n,
            val_mae,
        };
        log::info!(
            "epoch {epoch}: train mse {:.3e}, val mse {:.3e}",
            stats.train_mse,
            stats.val_mse
        );
        history.push(stats);
    }
    // drop the last batch's activations
    for layer in model.layers.iter_mut() {
        *layer = layer.without_cache();
    }
    Ok(TrainOutcome {
        history,
        wall_time: start.elapsed(),
    })
}

/// Forward pass with caching; returns batch MSE, MAE and `dL/dŷ`.
fn loss_and_output_grad(model: &mut NetModel, x: &Array3<f64>, batch: &[&SlicedSample]) -> (f64, f64, Array3<f64>) {
    let out = model.forward_batch(x, true);
    let b = batch.len() as f64;
    let mut grad = Array3::zeros(out.raw_dim());
    let (mut se, mut ae) = (0.0, 0.0);
    for (i, s) in batch.iter().enumerate() {
        let d = out[[i, 0, 0]] - s.label;
        se += d * d;
        ae += d.abs();
        grad[[i, 0, 0]] = 2.0 * d / b;
    }
    (se / b, ae / b, grad)
}

fn zero_grads(model: &mut NetModel) {
    for layer in model.layers.iter_mut() {
        for p in layer.params_mut() {
            p.grad.fill(0.0);
        }
    }
}

fn adam_update(model: &mut NetModel, opts: &TrainOpts, step: i32) {
    let scale = match opts.clip_norm {
        Some(c) => {
            let norm = model
                .layers
                .iter()
                .flat_map(|l| l.params())
                .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let (b1, b2) = (opts.beta1, opts.beta2);
    let c1 = 1.0 - b1.powi(step);
    let c2 = 1.0 - b2.powi(step);
    let lr = opts.learning_rate;
    let eps = opts.eps;
    for layer in model.layers.iter_mut() {
        for p in layer.params_mut() {
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic| + |numeric|, floor)`, with
    /// `floor` at 1e-4 of the largest analytic gradient entry.
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// A max-pool window had a repeated maximum, where the gradient is only a
    /// subgradient; disagreement there is expected.
    pub tie_seen: bool,
}

/// Compares backpropagated gradients of the squared error on one sample to
/// central differences. Arrays larger than `max_per_array` entries are
/// checked on a seeded subsample.
pub fn gradient_check(
    model: &NetModel,
    sample: &SlicedSample,
    epsilon: f64,
    max_per_array: usize,
    seed: u64,
) -> Result<GradCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    let t = model.window_length();
    if sample.input.len() != t {
        return Err(Error::shape("sample window", t, sample.input.len()));
    }
    let mut m = model.clone();
    let x = batch_tensor(&[sample], t);
    let (_, _, grad) = loss_and_output_grad(&mut m, &x, &[sample]);
    zero_grads(&mut m);
    m.backward_batch(&grad);
    let tie_seen = m.layers.iter().any(|l| l.tie_seen());
    // entries far below the largest gradient are compared on that scale, where
    // finite-difference round-off would otherwise dominate
    let floor = m
        .layers
        .iter()
        .flat_map(|l| l.params())
        .flat_map(|p| p.grad.iter())
        .fold(0.0f64, |acc, g| acc.max(g.abs()))
        * 1e-4
        + 1e-12;

    let loss = |m: &NetModel| {
        let d = m.predict(&sample.input).expect("shape checked") - sample.label;
        d * d
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut n_checked = 0;
    let n_layers = m.layers.len();
    for li in 0..n_layers {
        let n_params = m.layers[li].params().len();
        for pi in 0..n_params {
            let (len, analytic) = {
                let p = &m.layers[li].params()[pi];
                (p.len(), p.grad.clone())
            };
            let picks: Vec<usize> = if len > max_per_array {
                index::sample(&mut rng, len, max_per_array).into_vec()
            } else {
                (0..len).collect()
            };
            for flat in picks {
                let orig = {
                    let mut ps = m.layers[li].params_mut();
                    let v = ps[pi].value.as_slice_mut().expect("standard layout");
                    let o = v[flat];
                    v[flat] = o + epsilon;
                    o
                };
                let up = loss(&m);
                set_value(&mut m, li, pi, flat, orig - epsilon);
                let down = loss(&m);
                set_value(&mut m, li, pi, flat, orig);
                let numeric = (up - down) / (2.0 * epsilon);
                let a = analytic.as_slice().expect("standard layout")[flat];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
                worst = worst.max(rel);
                n_checked += 1;
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        n_checked,
        tie_seen,
    })
}

fn set_value(m: &mut NetModel, li: usize, pi: usize, flat: usize, v: f64) {
    m.layers[li].params_mut()[pi].value.as_slice_mut().expect("standard layout")[flat] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{SampleOrigin, SplitTag};
    use crate::nnet::{Activation, CellKind, LayerSpec, NetSpec};
    use rand::Rng;

    fn sample(t: usize, seed: u64) -> SlicedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SlicedSample {
            input: (0..t).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: 0.37,
            origin: SampleOrigin { grid_id: 0, offset: 0 },
        }
    }

    fn net(t: usize, body: Vec<LayerSpec>) -> NetModel {
        let mut layers = body;
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(3, Activation::Tanh));
        layers.push(LayerSpec::dense(1, Activation::Linear));
        let spec = NetSpec {
            name: "toy".into(),
            input_length: t,
            input_channels: 1,
            layers,
        };
        NetModel::new(spec, 17).unwrap()
    }

    fn check(m: &NetModel) -> GradCheck {
        let s = sample(m.window_length(), 2);
        gradient_check(m, &s, 1e-5, usize::MAX, 0).unwrap()
    }

    #[test]
    fn single_linear_neuron_is_exact() {
        let spec = NetSpec {
            name: "lin".into(),
            input_length: 3,
            input_channels: 1,
            layers: vec![LayerSpec::Flatten, LayerSpec::dense(1, Activation::Linear)],
        };
        let m = NetModel::new(spec, 1).unwrap();
        let g = check(&m);
        assert!(g.max_rel_error < 1e-10, "{g:?}");
        assert_eq!(g.n_checked, 4);
    }

    #[test]
    fn dense_and_conv_gradients() {
        let m = net(
            8,
            vec![
                LayerSpec::Conv1d {
                    filters: 3,
                    kernel_size: 3,
                    stride: 2,
                    padding: 1,
                    activation: Activation::Tanh,
                },
                LayerSpec::conv(2, 2),
            ],
        );
        let g = check(&m);
        assert!(g.max_rel_error < 1e-6, "{g:?}");
    }

    #[test]
    fn pool_gradients_off_tie() {
        let m = net(
            9,
            vec![
                LayerSpec::Conv1d {
                    filters: 2,
                    kernel_size: 2,
                    stride: 1,
                    padding: 0,
                    activation: Activation::Tanh,
                },
                LayerSpec::MaxPool1d { pool: 3, stride: 2 },
            ],
        );
        let g = check(&m);
        assert!(!g.tie_seen);
        assert!(g.max_rel_error < 1e-6, "{g:?}");
    }

    #[test]
    fn pool_tie_is_flagged() {
        let m = net(6, vec![LayerSpec::MaxPool1d { pool: 2, stride: 2 }]);
        let mut s = sample(6, 3);
        s.input[1] = s.input[0];
        let g = gradient_check(&m, &s, 1e-5, usize::MAX, 0).unwrap();
        assert!(g.tie_seen);
    }

    #[test]
    fn recurrent_gradients() {
        for cell in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let m = net(5, vec![LayerSpec::recurrent(cell, 3), LayerSpec::recurrent(cell, 2)]);
            let g = check(&m);
            assert!(g.max_rel_error < 1e-6, "{cell:?}: {g:?}");
            let last = net(
                5,
                vec![LayerSpec::Recurrent {
                    cell,
                    units: 3,
                    return_sequences: false,
                }],
            );
            let g = check(&last);
            assert!(g.max_rel_error < 1e-6, "{cell:?} last state: {g:?}");
        }
    }

    #[test]
    fn bidirectional_gradients() {
        for cell in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let m = net(4, vec![LayerSpec::conv(2, 2), LayerSpec::bidirectional(cell, 2)]);
            let g = check(&m);
            assert!(g.max_rel_error < 1e-6, "{cell:?}: {g:?}");
        }
    }

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = 0.5 * x[0] - 0.25 * x[1] + 0.1 * x[3] + 0.05;
                SlicedSample {
                    input: x,
                    label: y,
                    origin: SampleOrigin { grid_id: 0, offset: i },
                }
            })
            .collect();
        Dataset::new(samples, 4, SplitTag::Train).unwrap()
    }

    #[test]
    fn ffnn_fits_linear_rule() {
        let spec = NetSpec {
            name: "ffnn".into(),
            input_length: 4,
            input_channels: 1,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::dense(16, Activation::Relu),
                LayerSpec::dense(1, Activation::Linear),
            ],
        };
        let mut m = NetModel::new(spec, 3).unwrap();
        let data = linear_data(200, 9);
        let opts = TrainOpts {
            learning_rate: 1e-2,
            batch_size: 20,
            epochs: 200,
            ..TrainOpts::default()
        };
        let out = train(&mut m, &data, None, &opts).unwrap();
        assert_eq!(out.history.len(), 200);
        let final_mse = evaluate(&m, &data, 64).unwrap().0;
        assert!(final_mse < 1e-4, "mse {final_mse}");
        assert!(out.history[199].val_mse.is_nan());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let spec = NetSpec {
            name: "z".into(),
            input_length: 3,
            input_channels: 1,
            layers: vec![LayerSpec::Flatten, LayerSpec::dense(1, Activation::Linear)],
        };
        let mut m = NetModel::new(spec, 4).unwrap();
        let mut data = linear_data(5, 1);
        for s in &mut data.samples {
            s.input.truncate(3);
        }
        data.window_length = 3;
        for s in &mut data.samples {
            s.label = m.predict(&s.input).unwrap();
        }
        let before = m.clone();
        train(&mut m, &data, None, &TrainOpts { epochs: 1, ..TrainOpts::default() }).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn nan_aborts_with_location() {
        let mut m = net(4, vec![]);
        let mut data = linear_data(10, 2);
        data.samples[3].label = f64::NAN;
        let err = train(&mut m, &data, None, &TrainOpts { batch_size: 4, ..TrainOpts::default() }).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        assert!(err.to_string().contains("epoch 1"));
    }

    #[test]
    fn histories_are_reproducible() {
        let data = linear_data(60, 5);
        let opts = TrainOpts {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            ..TrainOpts::default()
        };
        let run = || {
            let mut m = net(4, vec![LayerSpec::recurrent(CellKind::Gru, 3)]);
            train(&mut m, &data, Some(&data), &opts).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bad_opts_rejected() {
        for o in [
            TrainOpts { learning_rate: 0.0, ..TrainOpts::default() },
            TrainOpts { batch_size: 0, ..TrainOpts::default() },
            TrainOpts { epochs: 0, ..TrainOpts::default() },
        ] {
            assert!(o.validate().is_err());
        }
    }
}
