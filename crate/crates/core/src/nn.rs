//! Small fully-connected ReLU networks in double precision: forward pass,
//! backpropagation of a squared-error loss, Adam, and a binary checkpoint
//! format that round-trips bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PMLPNET\0";
/// Checkpoint format version written by [`save_checkpoint`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// One affine layer: `y = x W + b` with `W` of shape (inputs, outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: Array2::zeros((n_in, n_out)), b: Array1::zeros(n_out) }
    }
}

/// ReLU on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn new(dims: &[usize], rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for layer in &mut net.layers {
            let limit = (6.0 / layer.w.nrows() as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect();
        Ok(Self { dims: dims.to_vec(), layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        let mut dims = vec![first.w.nrows()];
        for layer in &layers {
            if layer.w.nrows() != *dims.last().unwrap() || layer.b.len() != layer.w.ncols() {
                return Err(Error::Config("layer shapes do not chain".into()));
            }
            dims.push(layer.w.ncols());
        }
        Ok(Self { dims, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_inputs(&self) -> usize {
        self.dims[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.n_params(), params.len())));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for p in l.w.iter_mut().chain(l.b.iter_mut()) {
                *p = params[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|p| p.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_inputs() {
            return Err(Error::Config(format!("input has length {}, network expects {}", input.len(), self.n_inputs())));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.n_inputs(), "input width");
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            a = if a.nrows() <= SMALL_BATCH { affine_rows(&a, l) } else { a.dot(&l.w) + &l.b };
            if k < last {
                a.mapv_inplace(relu);
            }
        }
        a
    }

    /// Loss and parameter gradients of the squared error on one batch.
    ///
    /// Without `actions` the loss is the mean over all output entries; with
    /// `actions` only the indexed output of each row counts and the loss is
    /// the mean over rows.
    pub fn loss_and_grads(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, actions: Option<&[usize]>) -> (f64, Vec<Layer>) {
        let n = x.nrows();
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&l.w) + &l.b;
            if k < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        let out = &acts[last + 1];
        let mut delta = Array2::zeros(out.raw_dim());
        let loss = match actions {
            None => {
                let count = (n * out.ncols()) as f64;
                let diff = out - &y;
                delta.assign(&(&diff * (2.0 / count)));
                diff.iter().map(|d| d * d).sum::<f64>() / count
            }
            Some(actions) => {
                assert_eq!(actions.len(), n, "one action per row");
                let mut total = 0.0;
                for (r, &a) in actions.iter().enumerate() {
                    let d = out[[r, a]] - y[[r, a]];
                    total += d * d;
                    delta[[r, a]] = 2.0 * d / n as f64;
                }
                total / n as f64
            }
        };
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = acts[k].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.layers[k].w.t());
                prev.zip_mut_with(&acts[k], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    /// Squared-error loss without gradients (same conventions as [`Mlp::loss_and_grads`]).
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, actions: Option<&[usize]>) -> f64 {
        let out = self.forward_batch(x);
        match actions {
            None => (&out - &y).iter().map(|d| d * d).sum::<f64>() / out.len() as f64,
            Some(actions) => {
                actions.iter().enumerate().map(|(r, &a)| (out[[r, a]] - y[[r, a]]).powi(2)).sum::<f64>() / actions.len() as f64
            }
        }
    }
}

/// Below this many rows a row-by-row product beats packing the weights for gemm.
const SMALL_BATCH: usize = 8;

fn affine_rows(a: &Array2<f64>, l: &Layer) -> Array2<f64> {
    let n_out = l.w.ncols();
    let w = l.w.as_slice().expect("weights are contiguous");
    let b = l.b.as_slice().expect("biases are contiguous");
    let mut out = Array2::zeros((a.nrows(), n_out));
    for (row, mut dst) in a.rows().into_iter().zip(out.rows_mut()) {
        let dst = dst.as_slice_mut().expect("fresh array");
        dst.copy_from_slice(b);
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (d, &wij) in dst.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *d += xi * wij;
            }
        }
    }
    out
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Adam moments and step counter for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros: Vec<Layer> = net.layers.iter().map(|l| Layer::zeros(l.w.nrows(), l.w.ncols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &[Layer]) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.step.min(i32::MAX as u64) as i32);
        let (lr, eps) = (self.lr, self.eps);
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Regression data: one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    /// When present, only this output coordinate of each row is trained.
    pub actions: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>, actions: Option<Vec<usize>>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() || actions.as_ref().is_some_and(|a| a.len() != inputs.nrows()) {
            return Err(Error::Config("dataset row counts differ".into()));
        }
        if let Some(a) = &actions {
            if let Some(&bad) = a.iter().find(|&&a| a >= targets.ncols()) {
                return Err(Error::Config(format!("action index {bad} out of range")));
            }
        }
        Ok(Self { inputs, targets, actions })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>], actions: Option<Vec<usize>>) -> Result<Self> {
        Self::new(stack_rows(inputs)?, stack_rows(targets)?, actions)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
            actions: self.actions.as_ref().map(|a| rows.iter().map(|&r| a[r]).collect()),
        }
    }

    /// Shuffled split with `train_fraction` of the rows in the first part.
    pub fn split(&self, train_fraction: f64, rng: &mut (impl Rng + ?Sized)) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        (self.select(&idx[..cut]), self.select(&idx[cut..]))
    }

    /// Mean loss of `net` over the whole set (0 for an empty set).
    pub fn loss(&self, net: &Mlp) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        let chunk = 4096;
        for start in (0..self.len()).step_by(chunk) {
            let end = (start + chunk).min(self.len());
            let x = self.inputs.slice(s![start..end, ..]);
            let y = self.targets.slice(s![start..end, ..]);
            let a = self.actions.as_ref().map(|a| &a[start..end]);
            total += net.loss(x, y, a) * (end - start) as f64;
        }
        total / self.len() as f64
    }
}

pub fn stack_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Config("rows have different lengths".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("shape checked"))
}

/// One gradient step on one batch; returns the batch loss before the step.
pub fn train_batch(net: &mut Mlp, opt: &mut Adam, x: ArrayView2<f64>, y: ArrayView2<f64>, actions: Option<&[usize]>) -> Result<f64> {
    let (loss, grads) = net.loss_and_grads(x, y, actions);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {loss} at optimizer step {}", opt.step)));
    }
    opt.apply(net, &grads);
    Ok(loss)
}

/// One pass over a shuffled partition of `data` in mini-batches; returns
/// the sample-weighted mean batch loss.
pub fn mse_train_epoch(net: &mut Mlp, opt: &mut Adam, data: &Dataset, batch_size: usize, rng: &mut dyn RngCore) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(batch_size.max(1)) {
        let b = data.select(batch);
        total += train_batch(net, opt, b.inputs.view(), b.targets.view(), b.actions.as_deref())? * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Network plus optional optimizer state, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Mlp,
    pub opt: Option<Adam>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_layers(out: &mut Vec<u8>, layers: &[Layer]) {
    for l in layers {
        for p in l.w.iter().chain(l.b.iter()) {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, u32::from(ck.opt.is_some()));
    put_u32(&mut out, ck.net.dims.len() as u32);
    for &d in &ck.net.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_layers(&mut out, &ck.net.layers);
    if let Some(opt) = &ck.opt {
        for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&opt.step.to_le_bytes());
        put_layers(&mut out, &opt.m);
        put_layers(&mut out, &opt.v);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn layers_like(&mut self, shape: &Mlp) -> Result<Vec<Layer>> {
        let mut net = Mlp::zeros(&shape.dims)?;
        for l in &mut net.layers {
            for p in l.w.iter_mut().chain(l.b.iter_mut()) {
                *p = self.f64()?;
            }
        }
        Ok(net.layers)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let has_opt = match c.u32()? {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("bad checkpoint flags {f}"))),
    };
    let n_dims = c.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Format(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| c.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let shape = Mlp::zeros(&dims).map_err(|e| Error::Format(e.to_string()))?;
    if shape.n_params().saturating_mul(8) > bytes.len() {
        return Err(Error::Format("checkpoint truncated (parameter block too short)".into()));
    }
    let net = Mlp { dims, layers: c.layers_like(&shape)? };
    let opt = if has_opt {
        let (lr, beta1, beta2, eps) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
        let step = c.u64()?;
        let m = c.layers_like(&shape)?;
        let v = c.layers_like(&shape)?;
        Some(Adam { lr, beta1, beta2, eps, step, m, v })
    } else {
        None
    };
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - c.pos)));
    }
    Ok(Checkpoint { net, opt })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_mlp(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(&Checkpoint { net: net.clone(), opt: None }, path)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    load_checkpoint(path).map(|c| c.net)
}

/// Largest relative error between backprop and central differences over all
/// parameters, with relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn gradient_check(net: &Mlp, x: ArrayView2<f64>, y: ArrayView2<f64>, actions: Option<&[usize]>, h: f64) -> f64 {
    let all: Vec<usize> = (0..net.n_params()).collect();
    gradient_check_at(net, x, y, actions, h, &all)
}

/// [`gradient_check`] restricted to the given flat parameter indices
/// (ordering as in [`Mlp::flat_params`]).
pub fn gradient_check_at(
    net: &Mlp,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    actions: Option<&[usize]>,
    h: f64,
    indices: &[usize],
) -> f64 {
    let (_, grads) = net.loss_and_grads(x, y, actions);
    let analytic: Vec<f64> = grads.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for &k in indices {
        let base = *param_mut(&mut probe, k);
        *param_mut(&mut probe, k) = base + h;
        let up = probe.loss(x, y, actions);
        *param_mut(&mut probe, k) = base - h;
        let down = probe.loss(x, y, actions);
        *param_mut(&mut probe, k) = base;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(1e-7);
        worst = worst.max(err);
    }
    worst
}

fn param_mut(net: &mut Mlp, mut k: usize) -> &mut f64 {
    for layer in net.layers_mut() {
        if k < layer.w.len() {
            let cols = layer.w.ncols();
            return &mut layer.w[[k / cols, k % cols]];
        }
        k -= layer.w.len();
        if k < layer.b.len() {
            return &mut layer.b[k];
        }
        k -= layer.b.len();
    }
    panic!("parameter index out of range")
}
