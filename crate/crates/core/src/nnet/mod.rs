//! Small neural-network engine: layers, backpropagation, Adam.

pub mod cells;
mod io;
pub mod layers;
mod train;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use cells::{
    bidirectional_forward, conv1d_forward, dense_forward, gru_cell_step, lstm_cell_step, maxpool1d_forward,
    rnn_cell_step, CellParams,
};
pub use io::{load_model, read_history_csv, save_model, write_history_csv};
use layers::Layer;
pub use train::{gradient_check, train, EpochStats, GradCheck, TrainOpts, TrainOutcome};

/// Default window length for the 14 reference architectures.
pub const DEFAULT_INPUT_LENGTH: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    /// Trainable scalars of one direction with `m` inputs and `k` units.
    pub fn parameter_count(self, m: usize, k: usize) -> usize {
        match self {
            CellKind::Rnn => k * (k + m + 1),
            CellKind::Lstm => 4 * k * (k + m + 1),
            CellKind::Gru => 3 * k * (k + m + 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    Conv1d {
        filters: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    #[serde(rename = "maxpool1d")]
    MaxPool1d { pool: usize, stride: usize },
    Recurrent {
        cell: CellKind,
        units: usize,
        return_sequences: bool,
    },
    Bidirectional {
        cell: CellKind,
        units: usize,
        return_sequences: bool,
    },
    Flatten,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense { units, activation }
    }

    /// Valid-padding, unit-stride ReLU convolution.
    pub fn conv(filters: usize, kernel_size: usize) -> Self {
        LayerSpec::Conv1d {
            filters,
            kernel_size,
            stride: 1,
            padding: 0,
            activation: Activation::Relu,
        }
    }

    pub fn recurrent(cell: CellKind, units: usize) -> Self {
        LayerSpec::Recurrent {
            cell,
            units,
            return_sequences: true,
        }
    }

    pub fn bidirectional(cell: CellKind, units: usize) -> Self {
        LayerSpec::Bidirectional {
            cell,
            units,
            return_sequences: true,
        }
    }

    /// Per-sample output shape `(length, channels)`, or an error naming the problem.
    pub fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize)> {
        let (l, c) = input;
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::invalid(field, "must be a positive integer"))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Dense { units, .. } => {
                positive("units", units)?;
                Ok((l, units))
            }
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                stride,
                padding,
                ..
            } => {
                positive("filters", filters)?;
                positive("kernel_size", kernel_size)?;
                positive("stride", stride)?;
                let m = layers::conv_out_len(l, kernel_size, stride, padding).ok_or_else(|| {
                    Error::invalid(
                        "kernel_size",
                        format!("kernel {kernel_size} exceeds padded input length {}", l + 2 * padding),
                    )
                })?;
                Ok((m, filters))
            }
            LayerSpec::MaxPool1d { pool, stride } => {
                positive("pool", pool)?;
                positive("stride", stride)?;
                let m = layers::conv_out_len(l, pool, stride, 0)
                    .ok_or_else(|| Error::invalid("pool", format!("pool {pool} exceeds input length {l}")))?;
                Ok((m, c))
            }
            LayerSpec::Recurrent {
                units,
                return_sequences,
                ..
            } => {
                positive("units", units)?;
                Ok((if return_sequences { l } else { 1 }, units))
            }
            LayerSpec::Bidirectional {
                units,
                return_sequences,
                ..
            } => {
                positive("units", units)?;
                Ok((if return_sequences { l } else { 1 }, 2 * units))
            }
            LayerSpec::Flatten => Ok((1, l * c)),
        }
    }

    pub fn parameter_count(&self, input: (usize, usize)) -> usize {
        let c = input.1;
        match *self {
            LayerSpec::Dense { units, .. } => c * units + units,
            LayerSpec::Conv1d {
                filters, kernel_size, ..
            } => kernel_size * c * filters + filters,
            LayerSpec::MaxPool1d { .. } | LayerSpec::Flatten => 0,
            LayerSpec::Recurrent { cell, units, .. } => cell.parameter_count(c, units),
            LayerSpec::Bidirectional { cell, units, .. } => 2 * cell.parameter_count(c, units),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    pub input_length: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Input shape of every layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        if self.input_length == 0 || self.input_channels == 0 {
            return Err(Error::invalid("input_length", "input shape must be positive"));
        }
        let mut shapes = vec![(self.input_length, self.input_channels)];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(*shapes.last().unwrap())
                .map_err(|e| Error::invalid("layers", format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: 1,
                activation: Activation::Linear,
            }) => {}
            _ => return Err(Error::invalid("layers", "last layer must be a single linear unit")),
        }
        if shapes.last() != Some(&(1, 1)) {
            return Err(Error::invalid(
                "layers",
                "network must map a window to one scalar; flatten before the dense head",
            ));
        }
        Ok(())
    }

    /// One of the reference architectures, looked up case-insensitively
    /// (`cnn1d`, `ffnn`, `lstm`, `cbgru`, ...).
    pub fn architecture(id: &str, input_length: usize) -> Result<NetSpec> {
        use CellKind::*;
        let relu = Activation::Relu;
        let head = [
            LayerSpec::Flatten,
            LayerSpec::dense(256, relu),
            LayerSpec::dense(1, Activation::Linear),
        ];
        let rec = |cell, a, b| vec![LayerSpec::recurrent(cell, a), LayerSpec::recurrent(cell, b)];
        let bi = |cell, a, b| vec![LayerSpec::bidirectional(cell, a), LayerSpec::bidirectional(cell, b)];
        let conv_rec = |f, cell, k| vec![LayerSpec::conv(f, 16), LayerSpec::recurrent(cell, k)];
        let conv_bi = |f, cell, k| vec![LayerSpec::conv(f, 16), LayerSpec::bidirectional(cell, k)];
        let id = id.to_ascii_lowercase();
        let mut layers = match id.as_str() {
            "ffnn" => {
                return Ok(NetSpec {
                    name: id,
                    input_length,
                    input_channels: 1,
                    layers: vec![
                        LayerSpec::Flatten,
                        LayerSpec::dense(754, relu),
                        LayerSpec::dense(646, relu),
                        LayerSpec::dense(1, Activation::Linear),
                    ],
                })
            }
            "cnn1d" | "1dcnn" | "cnn" => vec![
                LayerSpec::conv(235, 16),
                LayerSpec::conv(125, 7),
                LayerSpec::MaxPool1d { pool: 2, stride: 2 },
            ],
            "lstm" => rec(Lstm, 15, 49),
            "gru" => rec(Gru, 60, 50),
            "rnn" => rec(Rnn, 65, 50),
            "clstm" => conv_rec(28, Lstm, 71),
            "cgru" => conv_rec(55, Gru, 73),
            "crnn" => conv_rec(243, Rnn, 73),
            "cblstm" => conv_bi(109, Lstm, 39),
            "cbgru" => conv_bi(55, Gru, 37),
            "cbrnn" => conv_bi(297, Rnn, 36),
            "blstm" => bi(Lstm, 6, 24),
            "bgru" => bi(Gru, 14, 25),
            "brnn" => bi(Rnn, 37, 24),
            _ => return Err(Error::invalid("model", format!("unknown architecture id {id:?}"))),
        };
        layers.extend(head);
        let name = if id == "1dcnn" || id == "cnn" { "cnn1d".into() } else { id };
        Ok(NetSpec {
            name,
            input_length,
            input_channels: 1,
            layers,
        })
    }
}

/// Ids accepted by [`NetSpec::architecture`], in table order.
pub const ARCHITECTURES: [&str; 14] = [
    "cnn1d", "ffnn", "lstm", "gru", "rnn", "clstm", "cgru", "crnn", "cblstm", "cbgru", "cbrnn", "blstm", "bgru",
    "brnn",
];

pub fn count_parameters(spec: &NetSpec) -> Result<usize> {
    let shapes = spec.shapes()?;
    Ok(spec.layers.iter().zip(&shapes).map(|(l, &s)| l.parameter_count(s)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    pub spec: NetSpec,
    pub rng_seed: u64,
    pub(crate) layers: Vec<Layer>,
}

impl NetModel {
    /// Xavier-uniform weights, zero biases.
    pub fn new(spec: NetSpec, seed: u64) -> Result<NetModel> {
        spec.validate()?;
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, &s)| Layer::build(l, s, &mut rng))
            .collect();
        Ok(NetModel {
            spec,
            rng_seed: seed,
            layers,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    pub fn window_length(&self) -> usize {
        self.spec.input_length
    }

    pub(crate) fn forward_batch(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let mut a = x.clone();
        for layer in &mut self.layers {
            a = layer.forward(&a, train);
        }
        a
    }

    pub(crate) fn backward_batch(&mut self, grad_out: &Array3<f64>) {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
    }

    /// Predictions for a batch of windows.
    pub fn predict_batch(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        let t = self.spec.input_length;
        if let Some(w) = windows.iter().find(|w| w.len() != t) {
            return Err(Error::shape("network input", t, w.len()));
        }
        let flat: Vec<f64> = windows.iter().flat_map(|w| w.iter().copied()).collect();
        let x = Array3::from_shape_vec((windows.len(), t, 1), flat).expect("length checked");
        let mut a = x;
        for layer in &self.layers {
            a = layer.infer(&a);
        }
        Ok(a.iter().copied().collect())
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(&[window])?[0])
    }
}

pub fn build_model(architecture_id: &str, seed: u64) -> Result<NetModel> {
    NetModel::new(NetSpec::architecture(architecture_id, DEFAULT_INPUT_LENGTH)?, seed)
}
