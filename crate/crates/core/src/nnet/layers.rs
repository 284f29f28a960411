//! Batched layers with hand-written backward passes.
//!
//! Activations flow as `(batch, length, channels)` arrays. Weights are laid
//! out input-major, so a layer computes `x · W + b`.

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, CellKind, LayerSpec};

/// Trainable array plus its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

impl Param {
    fn new(name: &'static str, value: Array2<f64>) -> Self {
        let z = Array2::zeros(value.raw_dim());
        Param {
            name,
            grad: z.clone(),
            m: z.clone(),
            v: z,
            value,
        }
    }

    fn zeros(name: &'static str, rows: usize, cols: usize) -> Self {
        Param::new(name, Array2::zeros((rows, cols)))
    }

    /// Uniform Xavier initialization on `[-a, a]`, `a = sqrt(6/(fan_in+fan_out))`.
    fn xavier(name: &'static str, rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Param::new(name, Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

pub(crate) fn activate(act: Activation, z: &mut Array2<f64>) {
    match act {
        Activation::Linear => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Tanh => z.mapv_inplace(f64::tanh),
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
    }
}

/// Multiplies `g` by the activation derivative expressed through the output `y`.
fn activation_backward(act: Activation, y: &Array2<f64>, g: &mut Array2<f64>) {
    match act {
        Activation::Linear => {}
        Activation::Relu => Zip::from(g).and(y).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Tanh => Zip::from(g).and(y).for_each(|g, &y| *g *= 1.0 - y * y),
        Activation::Sigmoid => Zip::from(g).and(y).for_each(|g, &y| *g *= y * (1.0 - y)),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_2d(x: &Array3<f64>) -> Array2<f64> {
    let (b, l, c) = x.dim();
    x.to_shape((b * l, c)).expect("contiguous").to_owned()
}

fn to_3d(x: Array2<f64>, b: usize, l: usize) -> Array3<f64> {
    let c = x.ncols();
    // products with a transposed operand may come back column-major
    let x = if x.is_standard_layout() {
        x
    } else {
        x.as_standard_layout().into_owned()
    };
    x.into_shape_with_order((b, l, c)).expect("row-major reshape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    pub act: Activation,
    x: Array2<f64>,
    y: Array2<f64>,
}

impl Dense {
    fn new(input: usize, units: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: Param::xavier("kernel", input, units, input, units, rng),
            b: Param::zeros("bias", 1, units),
            act,
            x: Array2::zeros((0, 0)),
            y: Array2::zeros((0, 0)),
        }
    }

    fn compute(&self, x2: &Array2<f64>) -> Array2<f64> {
        let mut z = x2.dot(&self.w.value);
        z += &self.b.value;
        activate(self.act, &mut z);
        z
    }

    fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (b, l, _) = x.dim();
        let x2 = to_2d(x);
        let z = self.compute(&x2);
        if train {
            self.x = x2;
            self.y = z.clone();
        }
        to_3d(z, b, l)
    }

    fn backward(&mut self, g: &Array3<f64>) -> Array3<f64> {
        let (b, l, _) = g.dim();
        let mut dz = to_2d(g);
        activation_backward(self.act, &self.y, &mut dz);
        self.w.grad += &self.x.t().dot(&dz);
        self.b.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        to_3d(dz.dot(&self.w.value.t()), b, l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `(kernel_size · in_channels, filters)`, row index `tap · C + channel`.
    pub w: Param,
    pub b: Param,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub act: Activation,
    cols: Array2<f64>,
    y: Array2<f64>,
    in_len: usize,
}

pub(crate) fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if k == 0 || stride == 0 || k > padded {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Unfolds every receptive field into a row: `(B·M, k·C)`.
pub(crate) fn im2col(x: &Array3<f64>, k: usize, stride: usize, padding: usize, m: usize) -> Array2<f64> {
    let (b, l, c) = x.dim();
    let mut cols = Array2::zeros((b * m, k * c));
    for bi in 0..b {
        for mi in 0..m {
            let mut row = cols.row_mut(bi * m + mi);
            for j in 0..k {
                let pos = (mi * stride + j) as isize - padding as isize;
                if pos < 0 || pos as usize >= l {
                    continue;
                }
                row.slice_mut(s![j * c..(j + 1) * c]).assign(&x.slice(s![bi, pos as usize, ..]));
            }
        }
    }
    cols
}

impl Conv1d {
    fn new(
        in_ch: usize,
        filters: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Conv1d {
            w: Param::xavier(
                "kernel",
                kernel_size * in_ch,
                filters,
                kernel_size * in_ch,
                kernel_size * filters,
                rng,
            ),
            b: Param::zeros("bias", 1, filters),
            kernel_size,
            stride,
            padding,
            act,
            cols: Array2::zeros((0, 0)),
            y: Array2::zeros((0, 0)),
            in_len: 0,
        }
    }

    fn compute(&self, x: &Array3<f64>) -> (Array2<f64>, Array2<f64>, usize) {
        let m = conv_out_len(x.dim().1, self.kernel_size, self.stride, self.padding).expect("validated shape");
        let cols = im2col(x, self.kernel_size, self.stride, self.padding, m);
        let mut z = cols.dot(&self.w.value);
        z += &self.b.value;
        activate(self.act, &mut z);
        (cols, z, m)
    }

    fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (b, l, _) = x.dim();
        let (cols, z, m) = self.compute(x);
        if train {
            self.cols = cols;
            self.y = z.clone();
            self.in_len = l;
        }
        to_3d(z, b, m)
    }

    fn backward(&mut self, g: &Array3<f64>) -> Array3<f64> {
        let (b, m, _) = g.dim();
        let mut dz = to_2d(g);
        activation_backward(self.act, &self.y, &mut dz);
        self.w.grad += &self.cols.t().dot(&dz);
        self.b.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcols = dz.dot(&self.w.value.t());
        let c = self.w.value.nrows() / self.kernel_size;
        let mut dx = Array3::zeros((b, self.in_len, c));
        for bi in 0..b {
            for mi in 0..m {
                let row = dcols.row(bi * m + mi);
                for j in 0..self.kernel_size {
                    let pos = (mi * self.stride + j) as isize - self.padding as isize;
                    if pos < 0 || pos as usize >= self.in_len {
                        continue;
                    }
                    let mut dst = dx.slice_mut(s![bi, pos as usize, ..]);
                    dst += &row.slice(s![j * c..(j + 1) * c]);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool1d {
    pub pool: usize,
    pub stride: usize,
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize),
    /// Set when the last forward pass met a window with a repeated maximum.
    pub tie_seen: bool,
}

impl MaxPool1d {
    fn compute(&self, x: &Array3<f64>, train: bool) -> (Array3<f64>, Vec<usize>, bool) {
        let (b, l, c) = x.dim();
        let m = conv_out_len(l, self.pool, self.stride, 0).expect("validated shape");
        let mut out = Array3::zeros((b, m, c));
        let mut argmax = Vec::with_capacity(if train { b * m * c } else { 0 });
        let mut tie = false;
        for bi in 0..b {
            for mi in 0..m {
                for ci in 0..c {
                    let start = mi * self.stride;
                    let mut best = start;
                    for p in start + 1..start + self.pool {
                        let v = x[[bi, p, ci]];
                        if v > x[[bi, best, ci]] {
                            best = p;
                        } else if v == x[[bi, best, ci]] {
                            tie = true;
                        }
                    }
                    out[[bi, mi, ci]] = x[[bi, best, ci]];
                    if train {
                        argmax.push(best);
                    }
                }
            }
        }
        (out, argmax, tie)
    }

    fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (out, argmax, tie) = self.compute(x, train);
        if train {
            self.argmax = argmax;
            self.in_dim = x.dim();
            self.tie_seen = tie;
        }
        out
    }

    fn backward(&mut self, g: &Array3<f64>) -> Array3<f64> {
        let (b, m, c) = g.dim();
        let mut dx = Array3::zeros(self.in_dim);
        let mut idx = 0;
        for bi in 0..b {
            for mi in 0..m {
                for ci in 0..c {
                    dx[[bi, self.argmax[idx], ci]] += g[[bi, mi, ci]];
                    idx += 1;
                }
            }
        }
        dx
    }
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StepCache {
    h_prev: Array2<f64>,
    /// Gate activations, `(B, G·k)`.
    gates: Array2<f64>,
    c_prev: Array2<f64>,
    /// `tanh(c_t)` for LSTM.
    tc: Array2<f64>,
}

/// One direction of a recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrent {
    pub cell: CellKind,
    pub units: usize,
    pub return_sequences: bool,
    /// `(C, G·k)`
    pub wx: Param,
    /// `(k, G·k)`
    pub wh: Param,
    /// `(1, G·k)`
    pub b: Param,
    /// Second GRU bias set on the recurrent branch, `(1, 3k)`.
    pub bh: Option<Param>,
    x: Array2<f64>,
    steps: Vec<StepCache>,
    dims: (usize, usize),
}

impl Recurrent {
    fn new(cell: CellKind, input: usize, units: usize, return_sequences: bool, rng: &mut ChaCha8Rng) -> Self {
        let g = cell.gates();
        Recurrent {
            cell,
            units,
            return_sequences,
            wx: Param::xavier("input_kernel", input, g * units, input, g * units, rng),
            wh: Param::xavier("recurrent_kernel", units, g * units, units, g * units, rng),
            b: Param::zeros("bias", 1, g * units),
            bh: (cell == CellKind::Gru).then(|| Param::zeros("recurrent_bias", 1, g * units)),
            x: Array2::zeros((0, 0)),
            steps: Vec::new(),
            dims: (0, 0),
        }
    }

    fn clone_params(&self) -> Recurrent {
        Recurrent {
            cell: self.cell,
            units: self.units,
            return_sequences: self.return_sequences,
            wx: self.wx.clone(),
            wh: self.wh.clone(),
            b: self.b.clone(),
            bh: self.bh.clone(),
            x: Array2::zeros((0, 0)),
            steps: Vec::new(),
            dims: (0, 0),
        }
    }

    pub(crate) fn from_weights(
        cell: CellKind,
        wx: Array2<f64>,
        wh: Array2<f64>,
        b: Array2<f64>,
        bh: Option<Array2<f64>>,
    ) -> Self {
        Recurrent {
            cell,
            units: wh.nrows(),
            return_sequences: true,
            wx: Param::new("input_kernel", wx),
            wh: Param::new("recurrent_kernel", wh),
            b: Param::new("bias", b),
            bh: bh.map(|v| Param::new("recurrent_bias", v)),
            x: Array2::zeros((0, 0)),
            steps: Vec::new(),
            dims: (0, 0),
        }
    }

    /// One cell update for the whole batch. `xw` already holds `x·Wx + b`.
    pub(crate) fn step(
        &self,
        xw: ArrayView2<f64>,
        h: &Array2<f64>,
        c: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let k = self.units;
        let wh = &self.wh.value;
        match self.cell {
            CellKind::Rnn => {
                let mut a = h.dot(wh);
                a += &xw;
                a.mapv_inplace(f64::tanh);
                (a.clone(), a, Array2::zeros((0, 0)), Array2::zeros((0, 0)))
            }
            CellKind::Lstm => {
                let mut a = h.dot(wh);
                a += &xw;
                a.slice_mut(s![.., 0..2 * k]).mapv_inplace(sigmoid);
                a.slice_mut(s![.., 2 * k..3 * k]).mapv_inplace(f64::tanh);
                a.slice_mut(s![.., 3 * k..4 * k]).mapv_inplace(sigmoid);
                let f = a.slice(s![.., 0..k]);
                let i = a.slice(s![.., k..2 * k]);
                let g = a.slice(s![.., 2 * k..3 * k]);
                let o = a.slice(s![.., 3 * k..4 * k]);
                let c_new = &f * c + &i * &g;
                let tc = c_new.mapv(f64::tanh);
                let h_new = &o * &tc;
                (h_new, a, c_new, tc)
            }
            CellKind::Gru => {
                let bh = &self.bh.as_ref().expect("gru recurrent bias").value;
                let mut zr = h.dot(&wh.slice(s![.., 0..2 * k]));
                zr += &xw.slice(s![.., 0..2 * k]);
                zr += &bh.slice(s![.., 0..2 * k]);
                zr.mapv_inplace(sigmoid);
                let r = zr.slice(s![.., k..2 * k]);
                let rh = &r * h;
                let mut g = rh.dot(&wh.slice(s![.., 2 * k..3 * k]));
                g += &xw.slice(s![.., 2 * k..3 * k]);
                g += &bh.slice(s![.., 2 * k..3 * k]);
                g.mapv_inplace(f64::tanh);
                let z = zr.slice(s![.., 0..k]);
                let h_new = &z.mapv(|v| 1.0 - v) * h + &z * &g;
                let gates = concatenate![Axis(1), zr, g];
                (h_new, gates, Array2::zeros((0, 0)), Array2::zeros((0, 0)))
            }
        }
    }

    pub(crate) fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let (out, x2, steps) = self.compute(x, train);
        if train {
            self.dims = (x.dim().0, x.dim().1);
            self.x = x2;
            self.steps = steps;
        }
        out
    }

    pub(crate) fn compute(&self, x: &Array3<f64>, train: bool) -> (Array3<f64>, Array2<f64>, Vec<StepCache>) {
        let (b, l, _) = x.dim();
        let k = self.units;
        let x2 = to_2d(x);
        let mut steps = Vec::new();
        let mut xw = x2.dot(&self.wx.value);
        xw += &self.b.value;
        let xw = to_3d(xw, b, l);
        let mut h = Array2::zeros((b, k));
        let mut c = Array2::zeros((b, k));
        let mut out = Array3::zeros((b, if self.return_sequences { l } else { 1 }, k));
        for t in 0..l {
            let (h_new, gates, c_new, tc) = self.step(xw.slice(s![.., t, ..]), &h, &c);
            if self.return_sequences {
                out.slice_mut(s![.., t, ..]).assign(&h_new);
            }
            if train {
                steps.push(StepCache {
                    h_prev: std::mem::replace(&mut h, h_new),
                    gates,
                    c_prev: std::mem::replace(&mut c, c_new),
                    tc,
                });
            } else {
                h = h_new;
                c = c_new;
            }
        }
        if !self.return_sequences {
            out.slice_mut(s![.., 0, ..]).assign(&h);
        }
        (out, x2, steps)
    }

    pub(crate) fn backward(&mut self, g: &Array3<f64>) -> Array3<f64> {
        let (b, l) = self.dims;
        let k = self.units;
        let gk = self.cell.gates() * k;
        let mut dxw = Array3::<f64>::zeros((b, l, gk));
        let mut dh_next = Array2::<f64>::zeros((b, k));
        let mut dc_next = Array2::<f64>::zeros((b, k));
        let wh = self.wh.value.clone();
        for t in (0..l).rev() {
            let mut dh = dh_next;
            if self.return_sequences {
                dh += &g.slice(s![.., t, ..]);
            } else if t == l - 1 {
                dh += &g.slice(s![.., 0, ..]);
            }
            let st = &self.steps[t];
            let mut da = dxw.slice_mut(s![.., t, ..]);
            match self.cell {
                CellKind::Rnn => {
                    let h = &st.gates;
                    Zip::from(&mut da).and(&dh).and(h).for_each(|d, &dh, &h| *d = dh * (1.0 - h * h));
                    let da = da.to_owned();
                    self.wh.grad += &st.h_prev.t().dot(&da);
                    dh_next = da.dot(&wh.t());
                }
                CellKind::Lstm => {
                    let a = &st.gates;
                    let (f, i, gg, o) = (
                        a.slice(s![.., 0..k]),
                        a.slice(s![.., k..2 * k]),
                        a.slice(s![.., 2 * k..3 * k]),
                        a.slice(s![.., 3 * k..4 * k]),
                    );
                    let mut dc = dc_next;
                    Zip::from(&mut dc)
                        .and(&dh)
                        .and(o)
                        .and(&st.tc)
                        .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
                    Zip::from(da.slice_mut(s![.., 0..k]))
                        .and(&dc)
                        .and(&st.c_prev)
                        .and(f)
                        .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
                    Zip::from(da.slice_mut(s![.., k..2 * k]))
                        .and(&dc)
                        .and(gg)
                        .and(i)
                        .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
                    Zip::from(da.slice_mut(s![.., 2 * k..3 * k]))
                        .and(&dc)
                        .and(i)
                        .and(gg)
                        .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
                    Zip::from(da.slice_mut(s![.., 3 * k..4 * k]))
                        .and(&dh)
                        .and(&st.tc)
                        .and(o)
                        .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
                    dc_next = &dc * &f;
                    let da = da.to_owned();
                    self.wh.grad += &st.h_prev.t().dot(&da);
                    dh_next = da.dot(&wh.t());
                }
                CellKind::Gru => {
                    let a = &st.gates;
                    let h = &st.h_prev;
                    let (z, r, gg) = (a.slice(s![.., 0..k]), a.slice(s![.., k..2 * k]), a.slice(s![.., 2 * k..3 * k]));
                    // candidate branch
                    Zip::from(da.slice_mut(s![.., 2 * k..3 * k]))
                        .and(&dh)
                        .and(z)
                        .and(gg)
                        .for_each(|d, &dh, &z, &g| *d = dh * z * (1.0 - g * g));
                    let dag = da.slice(s![.., 2 * k..3 * k]).to_owned();
                    let rh = &r * h;
                    self.wh.grad.slice_mut(s![.., 2 * k..3 * k]).scaled_add(1.0, &rh.t().dot(&dag));
                    let drh = dag.dot(&wh.slice(s![.., 2 * k..3 * k]).t());
                    // update and reset gates
                    Zip::from(da.slice_mut(s![.., 0..k]))
                        .and(&dh)
                        .and(gg)
                        .and(h)
                        .and(z)
                        .for_each(|d, &dh, &g, &h, &z| *d = dh * (g - h) * z * (1.0 - z));
                    Zip::from(da.slice_mut(s![.., k..2 * k]))
                        .and(&drh)
                        .and(h)
                        .and(r)
                        .for_each(|d, &drh, &h, &r| *d = drh * h * r * (1.0 - r));
                    let dazr = da.slice(s![.., 0..2 * k]).to_owned();
                    self.wh.grad.slice_mut(s![.., 0..2 * k]).scaled_add(1.0, &h.t().dot(&dazr));
                    let mut dhp = dazr.dot(&wh.slice(s![.., 0..2 * k]).t());
                    Zip::from(&mut dhp)
                        .and(&dh)
                        .and(z)
                        .and(&drh)
                        .and(r)
                        .for_each(|d, &dh, &z, &drh, &r| *d += dh * (1.0 - z) + drh * r);
                    dh_next = dhp;
                }
            }
        }
        let dxw2 = dxw.into_shape_with_order((b * l, gk)).expect("row-major reshape");
        let db = dxw2.sum_axis(Axis(0)).insert_axis(Axis(0));
        if let Some(bh) = self.bh.as_mut() {
            bh.grad += &db;
        }
        self.b.grad += &db;
        self.wx.grad += &self.x.t().dot(&dxw2);
        to_3d(dxw2.dot(&self.wx.value.t()), b, l)
    }
}

fn flatten(x: &Array3<f64>) -> Array3<f64> {
    let (b, l, c) = x.dim();
    x.to_shape((b, 1, l * c)).expect("contiguous").to_owned()
}

fn reverse_time(x: &Array3<f64>) -> Array3<f64> {
    x.slice(s![.., ..;-1, ..]).to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bidirectional {
    pub fwd: Recurrent,
    pub bwd: Recurrent,
}

fn join(of: Array3<f64>, ob: Array3<f64>, sequences: bool) -> Array3<f64> {
    let ob = if sequences { reverse_time(&ob) } else { ob };
    concatenate![Axis(2), of, ob]
}

impl Bidirectional {
    pub(crate) fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        let of = self.fwd.forward(x, train);
        let ob = self.bwd.forward(&reverse_time(x), train);
        join(of, ob, self.bwd.return_sequences)
    }

    pub(crate) fn infer(&self, x: &Array3<f64>) -> Array3<f64> {
        let of = self.fwd.compute(x, false).0;
        let ob = self.bwd.compute(&reverse_time(x), false).0;
        join(of, ob, self.bwd.return_sequences)
    }

    fn backward(&mut self, g: &Array3<f64>) -> Array3<f64> {
        let k = self.fwd.units;
        let gf = g.slice(s![.., .., 0..k]).to_owned();
        let mut gb = g.slice(s![.., .., k..2 * k]).to_owned();
        if self.bwd.return_sequences {
            gb = reverse_time(&gb);
        }
        let dxf = self.fwd.backward(&gf);
        let dxb = self.bwd.backward(&gb);
        dxf + reverse_time(&dxb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Flatten { in_dim: (usize, usize) },
    Recurrent(Recurrent),
    Bidirectional(Bidirectional),
}

impl Layer {
    /// Allocates and initializes a layer for per-sample input `(length, channels)`.
    pub(crate) fn build(spec: &LayerSpec, input: (usize, usize), rng: &mut ChaCha8Rng) -> Layer {
        let (_, c) = input;
        match *spec {
            LayerSpec::Dense { units, activation } => Layer::Dense(Dense::new(c, units, activation, rng)),
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                stride,
                padding,
                activation,
            } => Layer::Conv1d(Conv1d::new(c, filters, kernel_size, stride, padding, activation, rng)),
            LayerSpec::MaxPool1d { pool, stride } => Layer::MaxPool1d(MaxPool1d {
                pool,
                stride,
                argmax: Vec::new(),
                in_dim: (0, 0, 0),
                tie_seen: false,
            }),
            LayerSpec::Flatten => Layer::Flatten { in_dim: input },
            LayerSpec::Recurrent {
                cell,
                units,
                return_sequences,
            } => Layer::Recurrent(Recurrent::new(cell, c, units, return_sequences, rng)),
            LayerSpec::Bidirectional {
                cell,
                units,
                return_sequences,
            } => {
                let fwd = Recurrent::new(cell, c, units, return_sequences, rng);
                let bwd = Recurrent::new(cell, c, units, return_sequences, rng);
                Layer::Bidirectional(Bidirectional { fwd, bwd })
            }
        }
    }

    pub(crate) fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array3<f64> {
        match self {
            Layer::Dense(l) => l.forward(x, train),
            Layer::Conv1d(l) => l.forward(x, train),
            Layer::MaxPool1d(l) => l.forward(x, train),
            Layer::Flatten { .. } => flatten(x),
            Layer::Recurrent(l) => l.forward(x, train),
            Layer::Bidirectional(l) => l.forward(x, train),
        }
    }

    /// Forward pass that leaves no cache behind.
    pub(crate) fn infer(&self, x: &Array3<f64>) -> Array3<f64> {
        match self {
            Layer::Dense(l) => {
                let (b, len, _) = x.dim();
                to_3d(l.compute(&to_2d(x)), b, len)
            }
            Layer::Conv1d(l) => {
                let (_, z, m) = l.compute(x);
                to_3d(z, x.dim().0, m)
            }
            Layer::MaxPool1d(l) => l.compute(x, false).0,
            Layer::Flatten { .. } => flatten(x),
            Layer::Recurrent(l) => l.compute(x, false).0,
            Layer::Bidirectional(l) => l.infer(x),
        }
    }

    pub(crate) fn backward(&mut self, g: &Array3<f64>) -> Array3<f64> {
        match self {
            Layer::Dense(l) => l.backward(g),
            Layer::Conv1d(l) => l.backward(g),
            Layer::MaxPool1d(l) => l.backward(g),
            Layer::Flatten { in_dim } => {
                let b = g.dim().0;
                g.to_shape((b, in_dim.0, in_dim.1)).expect("contiguous").to_owned()
            }
            Layer::Recurrent(l) => l.backward(g),
            Layer::Bidirectional(l) => l.backward(g),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        fn rec(r: &Recurrent) -> Vec<&Param> {
            let mut v = vec![&r.wx, &r.wh, &r.b];
            v.extend(r.bh.as_ref());
            v
        }
        match self {
            Layer::Dense(l) => vec![&l.w, &l.b],
            Layer::Conv1d(l) => vec![&l.w, &l.b],
            Layer::MaxPool1d(_) | Layer::Flatten { .. } => Vec::new(),
            Layer::Recurrent(l) => rec(l),
            Layer::Bidirectional(l) => {
                let mut v = rec(&l.fwd);
                v.extend(rec(&l.bwd));
                v
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        fn rec(r: &mut Recurrent) -> Vec<&mut Param> {
            let mut v = vec![&mut r.wx, &mut r.wh, &mut r.b];
            v.extend(r.bh.as_mut());
            v
        }
        match self {
            Layer::Dense(l) => vec![&mut l.w, &mut l.b],
            Layer::Conv1d(l) => vec![&mut l.w, &mut l.b],
            Layer::MaxPool1d(_) | Layer::Flatten { .. } => Vec::new(),
            Layer::Recurrent(l) => rec(l),
            Layer::Bidirectional(l) => {
                let mut v = rec(&mut l.fwd);
                v.extend(rec(&mut l.bwd));
                v
            }
        }
    }

    /// Same weights and optimizer state, with activation caches released.
    pub(crate) fn without_cache(&self) -> Layer {
        let rec = Recurrent::clone_params;
        match self {
            Layer::Dense(l) => Layer::Dense(Dense {
                w: l.w.clone(),
                b: l.b.clone(),
                act: l.act,
                x: Array2::zeros((0, 0)),
                y: Array2::zeros((0, 0)),
            }),
            Layer::Conv1d(l) => Layer::Conv1d(Conv1d {
                w: l.w.clone(),
                b: l.b.clone(),
                cols: Array2::zeros((0, 0)),
                y: Array2::zeros((0, 0)),
                in_len: 0,
                ..*l
            }),
            Layer::MaxPool1d(l) => Layer::MaxPool1d(MaxPool1d {
                pool: l.pool,
                stride: l.stride,
                argmax: Vec::new(),
                in_dim: (0, 0, 0),
                tie_seen: false,
            }),
            Layer::Flatten { in_dim } => Layer::Flatten { in_dim: *in_dim },
            Layer::Recurrent(r) => Layer::Recurrent(rec(r)),
            Layer::Bidirectional(b) => Layer::Bidirectional(Bidirectional {
                fwd: rec(&b.fwd),
                bwd: rec(&b.bwd),
            }),
        }
    }

    pub(crate) fn tie_seen(&self) -> bool {
        matches!(self, Layer::MaxPool1d(p) if p.tie_seen)
    }
}
