//! Unbatched forward operations on plain vectors.
//!
//! These share code with the training layers and exist mostly for testing
//! and for callers who want to poke at a single cell.

use ndarray::{Array2, Array3};

use super::layers::{activate, im2col, Recurrent};
use super::{Activation, CellKind};
use crate::error::{Error, Result};

/// Weights of one recurrent direction.
///
/// Gate blocks are stacked along columns: RNN `[h]`, LSTM `[F|I|G|O]`,
/// GRU `[Z|R|G]`. `bh` is the GRU's second bias set and must be `None`
/// for the other cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// `(inputs, gates·units)`
    pub wx: Array2<f64>,
    /// `(units, gates·units)`
    pub wh: Array2<f64>,
    /// `(1, gates·units)`
    pub b: Array2<f64>,
    pub bh: Option<Array2<f64>>,
}

impl CellParams {
    pub fn zeros(cell: CellKind, inputs: usize, units: usize) -> Self {
        let g = cell.gates() * units;
        CellParams {
            wx: Array2::zeros((inputs, g)),
            wh: Array2::zeros((units, g)),
            b: Array2::zeros((1, g)),
            bh: (cell == CellKind::Gru).then(|| Array2::zeros((1, g))),
        }
    }

    fn check(&self, cell: CellKind) -> Result<usize> {
        let k = self.wh.nrows();
        let g = cell.gates() * k;
        if self.wh.ncols() != g {
            return Err(Error::shape("recurrent kernel columns", g, self.wh.ncols()));
        }
        if self.wx.ncols() != g {
            return Err(Error::shape("input kernel columns", g, self.wx.ncols()));
        }
        if self.b.dim() != (1, g) {
            return Err(Error::shape("bias length", g, self.b.len()));
        }
        match (&self.bh, cell) {
            (Some(bh), CellKind::Gru) if bh.dim() == (1, g) => {}
            (Some(bh), CellKind::Gru) => return Err(Error::shape("recurrent bias length", g, bh.len())),
            (None, CellKind::Gru) => return Err(Error::invalid("bh", "gru cells need a recurrent bias")),
            (Some(_), _) => return Err(Error::invalid("bh", "only gru cells carry a recurrent bias")),
            (None, _) => {}
        }
        Ok(k)
    }

    fn layer(&self, cell: CellKind) -> Recurrent {
        Recurrent::from_weights(cell, self.wx.clone(), self.wh.clone(), self.b.clone(), self.bh.clone())
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

fn step(cell: CellKind, x: &[f64], h: &[f64], c: &[f64], p: &CellParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = p.check(cell)?;
    if x.len() != p.wx.nrows() {
        return Err(Error::shape("cell input", p.wx.nrows(), x.len()));
    }
    if h.len() != k {
        return Err(Error::shape("hidden state", k, h.len()));
    }
    if cell == CellKind::Lstm && c.len() != k {
        return Err(Error::shape("cell state", k, c.len()));
    }
    let mut xw = row(x).dot(&p.wx);
    xw += &p.b;
    let (h_new, _, c_new, _) = p.layer(cell).step(xw.view(), &row(h), &row(c));
    Ok((h_new.into_iter().collect(), c_new.into_iter().collect()))
}

/// `h_t = tanh(b + W_h h + W_x x)`
pub fn rnn_cell_step(x: &[f64], h_prev: &[f64], p: &CellParams) -> Result<Vec<f64>> {
    Ok(step(CellKind::Rnn, x, h_prev, &[], p)?.0)
}

/// Returns `(h_t, c_t)`.
pub fn lstm_cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &CellParams) -> Result<(Vec<f64>, Vec<f64>)> {
    step(CellKind::Lstm, x, h_prev, c_prev, p)
}

/// Reset gate is applied to `h` before the recurrent product of the candidate.
pub fn gru_cell_step(x: &[f64], h_prev: &[f64], p: &CellParams) -> Result<Vec<f64>> {
    Ok(step(CellKind::Gru, x, h_prev, &[], p)?.0)
}

fn sequence(xs: &[Vec<f64>]) -> Result<Array3<f64>> {
    let c = xs.first().map_or(0, Vec::len);
    if let Some(bad) = xs.iter().find(|x| x.len() != c) {
        return Err(Error::shape("sequence element width", c, bad.len()));
    }
    Ok(Array3::from_shape_vec((1, xs.len(), c), xs.concat()).expect("checked widths"))
}

fn unsequence(a: Array3<f64>) -> Vec<Vec<f64>> {
    a.outer_iter()
        .next()
        .map(|s| s.outer_iter().map(|r| r.to_vec()).collect())
        .unwrap_or_default()
}

/// Full hidden-state sequence of both directions, `[h→_t, h←_t]` per step.
pub fn bidirectional_forward(
    xs: &[Vec<f64>],
    cell: CellKind,
    fwd: &CellParams,
    bwd: &CellParams,
) -> Result<Vec<Vec<f64>>> {
    let kf = fwd.check(cell)?;
    let kb = bwd.check(cell)?;
    if kf != kb {
        return Err(Error::shape("backward units", kf, kb));
    }
    let x = sequence(xs)?;
    if xs.is_empty() || x.dim().2 != fwd.wx.nrows() || x.dim().2 != bwd.wx.nrows() {
        return Err(Error::shape("sequence element width", fwd.wx.nrows(), x.dim().2));
    }
    let layer = super::layers::Bidirectional {
        fwd: fwd.layer(cell),
        bwd: bwd.layer(cell),
    };
    Ok(unsequence(layer.infer(&x)))
}

/// `f(Wᵀx + b)` with `w` shaped `(inputs, outputs)`.
pub fn dense_forward(x: &[f64], w: &Array2<f64>, b: &[f64], act: Activation) -> Result<Vec<f64>> {
    if x.len() != w.nrows() {
        return Err(Error::shape("dense input", w.nrows(), x.len()));
    }
    if b.len() != w.ncols() {
        return Err(Error::shape("dense bias", w.ncols(), b.len()));
    }
    let mut z = row(x).dot(w);
    z += &row(b);
    activate(act, &mut z);
    Ok(z.into_iter().collect())
}

/// Strided cross-correlation summed over input channels.
///
/// `kernels` is `(kernel_size·in_channels, filters)` with row index
/// `tap·in_channels + channel`.
pub fn conv1d_forward(
    xs: &[Vec<f64>],
    kernels: &Array2<f64>,
    biases: &[f64],
    kernel_size: usize,
    stride: usize,
    padding: usize,
    act: Activation,
) -> Result<Vec<Vec<f64>>> {
    let x = sequence(xs)?;
    let (_, l, c) = x.dim();
    if kernel_size == 0 || stride == 0 {
        return Err(Error::invalid("kernel_size", "kernel size and stride must be positive"));
    }
    if kernels.nrows() != kernel_size * c {
        return Err(Error::shape("kernel rows", kernel_size * c, kernels.nrows()));
    }
    if biases.len() != kernels.ncols() {
        return Err(Error::shape("conv bias", kernels.ncols(), biases.len()));
    }
    let m = super::layers::conv_out_len(l, kernel_size, stride, padding)
        .ok_or_else(|| Error::invalid("kernel_size", format!("kernel {kernel_size} longer than padded input")))?;
    let mut z = im2col(&x, kernel_size, stride, padding, m).dot(kernels);
    z += &row(biases);
    activate(act, &mut z);
    Ok(z.outer_iter().map(|r| r.to_vec()).collect())
}

pub fn maxpool1d_forward(xs: &[Vec<f64>], pool: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    if pool == 0 || stride == 0 {
        return Err(Error::invalid("pool", "pool size and stride must be positive"));
    }
    if pool > xs.len() {
        return Err(Error::invalid("pool", format!("pool {pool} exceeds input length {}", xs.len())));
    }
    let m = (xs.len() - pool) / stride + 1;
    Ok((0..m)
        .map(|i| {
            let window = &xs[i * stride..i * stride + pool];
            (0..window[0].len())
                .map(|ch| window.iter().map(|v| v[ch]).fold(f64::NEG_INFINITY, f64::max))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn dense_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(3, 2, &mut rng);
        let b = [0.3, -0.2];
        let x = [0.5, -1.0, 2.0];
        let y = dense_forward(&x, &w, &b, Activation::Tanh).unwrap();
        for j in 0..2 {
            let mut z = b[j];
            for i in 0..3 {
                z += w[[i, j]] * x[i];
            }
            assert!((y[j] - z.tanh()).abs() < 1e-12);
        }
        let relu = dense_forward(&x, &Array2::zeros((3, 2)), &[-1.0, 2.0], Activation::Relu).unwrap();
        assert_eq!(relu, vec![0.0, 2.0]);
        assert!(dense_forward(&x[..2], &w, &b, Activation::Linear).is_err());
    }

    #[test]
    fn conv_matches_sliding_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, c, f, k) = (9, 2, 3, 4);
        let xs: Vec<Vec<f64>> = (0..l).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w = random(k * c, f, &mut rng);
        let b = [0.1, 0.0, -0.1];
        let y = conv1d_forward(&xs, &w, &b, k, 2, 0, Activation::Linear).unwrap();
        assert_eq!(y.len(), (l - k) / 2 + 1);
        for (m, out) in y.iter().enumerate() {
            for fi in 0..f {
                let mut s = b[fi];
                for j in 0..k {
                    for ch in 0..c {
                        s += w[[j * c + ch, fi]] * xs[m * 2 + j][ch];
                    }
                }
                assert!((out[fi] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let xs: Vec<Vec<f64>> = [0.3, -0.5, 0.9].iter().map(|&v| vec![v]).collect();
        let y = conv1d_forward(&xs, &Array2::ones((1, 1)), &[0.0], 1, 1, 0, Activation::Linear).unwrap();
        assert_eq!(y, xs);
    }

    #[test]
    fn maxpool_examples() {
        let xs: Vec<Vec<f64>> = [1.0, 3.0, 2.0, 5.0].iter().map(|&v| vec![v]).collect();
        assert_eq!(maxpool1d_forward(&xs, 2, 2).unwrap(), vec![vec![3.0], vec![5.0]]);
        let long = vec![vec![0.5]; 20];
        assert_eq!(maxpool1d_forward(&long, 2, 2).unwrap(), vec![vec![0.5]; 10]);
        assert!(maxpool1d_forward(&xs, 5, 1).is_err());
    }

    #[test]
    fn rnn_step_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = CellParams {
            wx: random(2, 3, &mut rng),
            wh: random(3, 3, &mut rng),
            b: random(1, 3, &mut rng),
            bh: None,
        };
        let x = [0.2, -0.7];
        let h = [0.1, 0.4, -0.3];
        let out = rnn_cell_step(&x, &h, &p).unwrap();
        for j in 0..3 {
            let mut a = p.b[[0, j]];
            for i in 0..2 {
                a += p.wx[[i, j]] * x[i];
            }
            for i in 0..3 {
                a += p.wh[[i, j]] * h[i];
            }
            assert!((out[j] - a.tanh()).abs() < 1e-12);
        }
        let zero = rnn_cell_step(&x, &h, &CellParams::zeros(CellKind::Rnn, 2, 3)).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
    }

    #[test]
    fn lstm_step_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = 2;
        let p = CellParams {
            wx: random(1, 4 * k, &mut rng),
            wh: random(k, 4 * k, &mut rng),
            b: random(1, 4 * k, &mut rng),
            bh: None,
        };
        let x = [0.6];
        let (h, c) = ([0.2, -0.1], [0.5, 0.3]);
        let (h1, c1) = lstm_cell_step(&x, &h, &c, &p).unwrap();
        for j in 0..k {
            let pre = |g: usize| {
                let col = g * k + j;
                let mut a = p.b[[0, col]] + p.wx[[0, col]] * x[0];
                for i in 0..k {
                    a += p.wh[[i, col]] * h[i];
                }
                a
            };
            let (f, i, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            let c_new = f * c[j] + i * g;
            assert!((c1[j] - c_new).abs() < 1e-12);
            assert!((h1[j] - o * c_new.tanh()).abs() < 1e-12);
        }

        let zero = CellParams::zeros(CellKind::Lstm, 1, k);
        assert_eq!(lstm_cell_step(&x, &[0.0; 2], &[0.0; 2], &zero).unwrap(), (vec![0.0; 2], vec![0.0; 2]));

        let mut keep = CellParams::zeros(CellKind::Lstm, 1, k);
        keep.b.slice_mut(ndarray::s![.., 0..k]).fill(50.0);
        keep.b.slice_mut(ndarray::s![.., k..2 * k]).fill(-50.0);
        let (_, c2) = lstm_cell_step(&x, &h, &c, &keep).unwrap();
        for j in 0..k {
            assert!((c2[j] - c[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_step_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 3;
        let p = CellParams {
            wx: random(2, 3 * k, &mut rng),
            wh: random(k, 3 * k, &mut rng),
            b: random(1, 3 * k, &mut rng),
            bh: Some(random(1, 3 * k, &mut rng)),
        };
        let bh = p.bh.as_ref().unwrap();
        let x = [0.3, -0.9];
        let h = [0.1, -0.5, 0.7];
        let out = gru_cell_step(&x, &h, &p).unwrap();
        let gate = |g: usize, j: usize, hh: &[f64]| {
            let col = g * k + j;
            let mut a = p.b[[0, col]] + bh[[0, col]];
            for i in 0..2 {
                a += p.wx[[i, col]] * x[i];
            }
            for i in 0..k {
                a += p.wh[[i, col]] * hh[i];
            }
            a
        };
        let r: Vec<f64> = (0..k).map(|j| sig(gate(1, j, &h))).collect();
        let rh: Vec<f64> = (0..k).map(|i| r[i] * h[i]).collect();
        for j in 0..k {
            let z = sig(gate(0, j, &h));
            let g = gate(2, j, &rh).tanh();
            assert!((out[j] - ((1.0 - z) * h[j] + z * g)).abs() < 1e-12);
        }

        let mut hold = CellParams::zeros(CellKind::Gru, 2, k);
        hold.b.slice_mut(ndarray::s![.., 0..k]).fill(-60.0);
        let same = gru_cell_step(&x, &h, &hold).unwrap();
        for j in 0..k {
            assert!((same[j] - h[j]).abs() < 1e-12);
        }
        let mut open = p.clone();
        open.b.slice_mut(ndarray::s![.., 0..k]).fill(60.0);
        let g_only = gru_cell_step(&x, &h, &open).unwrap();
        for j in 0..k {
            let mut a = open.b[[0, 2 * k + j]] + bh[[0, 2 * k + j]];
            for i in 0..2 {
                a += open.wx[[i, 2 * k + j]] * x[i];
            }
            for i in 0..k {
                a += open.wh[[i, 2 * k + j]] * rh[i];
            }
            assert!((g_only[j] - a.tanh()).abs() < 1e-12);
        }
        assert!(gru_cell_step(&x, &h, &CellParams { bh: None, ..p }).is_err());
    }

    #[test]
    fn bidirectional_matches_two_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 2;
        let mk = |rng: &mut ChaCha8Rng| CellParams {
            wx: random(1, 4 * k, rng),
            wh: random(k, 4 * k, rng),
            b: random(1, 4 * k, rng),
            bh: None,
        };
        let (pf, pb) = (mk(&mut rng), mk(&mut rng));
        let xs: Vec<Vec<f64>> = (0..5).map(|t| vec![(t as f64 * 0.7).sin()]).collect();
        let out = bidirectional_forward(&xs, CellKind::Lstm, &pf, &pb).unwrap();
        let run = |p: &CellParams, seq: &[Vec<f64>]| {
            let (mut h, mut c) = (vec![0.0; k], vec![0.0; k]);
            seq.iter()
                .map(|x| {
                    (h, c) = lstm_cell_step(x, &h, &c, p).unwrap();
                    h.clone()
                })
                .collect::<Vec<_>>()
        };
        let f = run(&pf, &xs);
        let rev: Vec<_> = xs.iter().rev().cloned().collect();
        let mut b = run(&pb, &rev);
        b.reverse();
        for t in 0..5 {
            let expect: Vec<f64> = f[t].iter().chain(&b[t]).copied().collect();
            assert_eq!(out[t], expect);
        }
    }

    #[test]
    fn palindrome_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = CellParams {
            wx: random(1, 3, &mut rng),
            wh: random(3, 3, &mut rng),
            b: random(1, 3, &mut rng),
            bh: None,
        };
        let xs: Vec<Vec<f64>> = [0.1, 0.5, -0.3, 0.5, 0.1].iter().map(|&v| vec![v]).collect();
        let out = bidirectional_forward(&xs, CellKind::Rnn, &p, &p).unwrap();
        for t in 0..5 {
            assert_eq!(out[t][..3], out[4 - t][3..]);
        }
        let zero = CellParams::zeros(CellKind::Rnn, 1, 3);
        let z = bidirectional_forward(&xs, CellKind::Rnn, &zero, &zero).unwrap();
        assert!(z.iter().all(|v| v.len() == 6 && v.iter().all(|&x| x == 0.0)));
    }
}
