//! Small convolutional classifier of the channel aging pattern.
//!
//! Pipeline for a preprocessed CSI matrix `C` (`2M x VK`):
//! 1. conditioning (fixed): subtract each entry's mean over the `V`
//!    intervals and divide by the RMS of `C`, so the input carries the
//!    temporal variation relative to the channel power;
//! 2. convolution layers, valid padding, stride 1, column dilation `K` so a
//!    kernel spans consecutive intervals of one user, `tanh`;
//! 3. log-energy pooling `ln(mean(a_c^2) + 1e-12)` per channel;
//! 4. fully connected `sigmoid` hidden layers and a linear output of size `F`.
//!
//! Training: Adam on the mean squared error against one-hot targets.
//! Pooling makes the model independent of `M` and `K`, so it can be trained
//! on small inputs and applied to larger ones.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aging::{ar_predict, preprocess_csi, ArModel, PatternBank};
use crate::channel::{gen_correlation, gen_e_series_len, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::{cn, purpose, stream};
use crate::tensor::CMat;

const LOG_FLOOR: f64 = 1e-12;
const MAGIC: &[u8; 8] = b"BDRISCNN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub conv_channels: Vec<usize>,
    /// Kernel rows and columns.
    pub kernel: [usize; 2],
    /// Column dilation; the number of users `K` in the preprocessed layout.
    pub col_dilation: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig { conv_channels: vec![8, 16], kernel: [3, 3], col_dilation: 5, hidden: vec![64, 32], classes: 10 }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("at least one convolution layer with >= 1 channel is required".into()));
        }
        if self.kernel.contains(&0) || self.col_dilation == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("kernel, dilation, hidden sizes and class count must be >= 1".into()));
        }
        Ok(())
    }

    /// Smallest input that survives all convolutions.
    pub fn min_input(&self) -> (usize, usize) {
        let l = self.conv_channels.len();
        (1 + l * (self.kernel[0] - 1), 1 + l * (self.kernel[1] - 1) * self.col_dilation)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    cin: usize,
    cout: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DenseShape {
    nin: usize,
    nout: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvShape>,
    dense: Vec<DenseShape>,
    len: usize,
}

impl Layout {
    fn new(cfg: &CnnConfig) -> Self {
        let [kh, kw] = cfg.kernel;
        let mut off = 0;
        let mut convs = Vec::new();
        let mut cin = 1;
        for &cout in &cfg.conv_channels {
            let w = off;
            off += cout * cin * kh * kw;
            let b = off;
            off += cout;
            convs.push(ConvShape { cin, cout, w, b });
            cin = cout;
        }
        let mut dense = Vec::new();
        let mut nin = cin;
        for &nout in cfg.hidden.iter().chain(std::iter::once(&cfg.classes)) {
            let w = off;
            off += nout * nin;
            let b = off;
            off += nout;
            dense.push(DenseShape { nin, nout, w, b });
            nin = nout;
        }
        Layout { convs, dense, len: off }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub params: Vec<f64>,
}

/// Unfolds `[c][h][w]` into a `(ho wo) x (c kh kw)` matrix whose column
/// `(i, a, b)` holds the input seen by kernel tap `(a, b)` of channel `i`.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, dw: usize) -> DMatrix<f64> {
    let (ho, wo) = (h - (kh - 1), w - (kw - 1) * dw);
    let np = ho * wo;
    let mut data = vec![0.0; np * c * kh * kw];
    for i in 0..c {
        for a in 0..kh {
            for b in 0..kw {
                let col = &mut data[((i * kh + a) * kw + b) * np..][..np];
                for y in 0..ho {
                    let base = i * h * w + (y + a) * w + b * dw;
                    col[y * wo..(y + 1) * wo].copy_from_slice(&x[base..base + wo]);
                }
            }
        }
    }
    DMatrix::from_vec(np, c * kh * kw, data)
}

/// Adjoint of [`im2col`].
fn col2im(m: &DMatrix<f64>, c: usize, h: usize, w: usize, kh: usize, kw: usize, dw: usize) -> Vec<f64> {
    let (ho, wo) = (h - (kh - 1), w - (kw - 1) * dw);
    let np = ho * wo;
    let data = m.as_slice();
    let mut out = vec![0.0; c * h * w];
    for i in 0..c {
        for a in 0..kh {
            for b in 0..kw {
                let col = &data[((i * kh + a) * kw + b) * np..][..np];
                for y in 0..ho {
                    let base = i * h * w + (y + a) * w + b * dw;
                    for (d, s) in out[base..base + wo].iter_mut().zip(&col[y * wo..(y + 1) * wo]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// Fixed conditioning of a preprocessed matrix with `k` users per interval.
pub fn condition(c: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (rows, cols) = c.shape();
    if k == 0 || cols % k != 0 {
        return Err(Error::DimensionMismatch(format!("{cols} columns do not split into groups of {k}")));
    }
    let v = cols / k;
    let rms = (c.iter().map(|x| x * x).sum::<f64>() / c.len().max(1) as f64).sqrt();
    let mut out = c.clone();
    for r in 0..rows {
        for kk in 0..k {
            let mean = (0..v).map(|i| c[(r, i * k + kk)]).sum::<f64>() / v as f64;
            for i in 0..v {
                out[(r, i * k + kk)] -= mean;
            }
        }
    }
    if rms > 0.0 {
        out /= rms;
    }
    Ok(out)
}

struct Cache {
    /// Output of each conv layer, `[c][h][w]` flat.
    acts: Vec<Vec<f64>>,
    /// Unfolded input of each conv layer, positions x taps.
    cols: Vec<DMatrix<f64>>,
    /// Input dims of each conv layer plus the last output dims.
    dims: Vec<(usize, usize, usize)>,
    energy: Vec<f64>,
    /// Input of each dense layer plus the network output.
    dense: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl CnnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: CnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let lay = Layout::new(&config);
        let mut params = vec![0.0; lay.len];
        let [kh, kw] = config.kernel;
        let mut fill = |start: usize, n: usize, fan_in: usize, fan_out: usize, params: &mut Vec<f64>| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            for p in &mut params[start..start + n] {
                *p = u.sample(rng);
            }
        };
        for c in &lay.convs {
            fill(c.w, c.cout * c.cin * kh * kw, c.cin * kh * kw, c.cout * kh * kw, &mut params);
        }
        for d in &lay.dense {
            fill(d.w, d.nout * d.nin, d.nin, d.nout, &mut params);
        }
        Ok(CnnModel { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn forward_cache(&self, x: &DMatrix<f64>) -> Result<Cache> {
        let cfg = &self.config;
        let lay = Layout::new(cfg);
        let (h0, w0) = x.shape();
        let (mh, mw) = cfg.min_input();
        if h0 < mh || w0 < mw {
            return Err(Error::DimensionMismatch(format!("input {h0}x{w0} is smaller than the receptive field {mh}x{mw}")));
        }
        let [kh, kw] = cfg.kernel;
        let dw = cfg.col_dilation;
        let p = &self.params;
        let x0: Vec<f64> = (0..h0).flat_map(|r| (0..w0).map(move |c| x[(r, c)])).collect();
        let (mut h, mut w) = (h0, w0);
        let mut acts = Vec::with_capacity(lay.convs.len() + 1);
        let mut dims = Vec::with_capacity(lay.convs.len() + 1);
        let mut cols = Vec::with_capacity(lay.convs.len());
        for cs in &lay.convs {
            let (ho, wo) = (h - (kh - 1), w - (kw - 1) * dw);
            let input = acts.last().unwrap_or(&x0);
            let xt = im2col(input, cs.cin, h, w, kh, kw, dw);
            let wt = DMatrix::from_column_slice(cs.cin * kh * kw, cs.cout, &p[cs.w..cs.b]);
            // column-major (positions x cout), i.e. `[o][y][x]`
            let z = &xt * wt;
            let mut out: Vec<f64> = z.as_slice().to_vec();
            for o in 0..cs.cout {
                for v in &mut out[o * ho * wo..(o + 1) * ho * wo] {
                    *v = (*v + p[cs.b + o]).tanh();
                }
            }
            dims.push((cs.cin, h, w));
            cols.push(xt);
            acts.push(out);
            h = ho;
            w = wo;
        }
        let c_last = lay.convs.last().map_or(1, |c| c.cout);
        dims.push((c_last, h, w));
        let n = (h * w) as f64;
        let top = acts.last().expect("at least one conv layer");
        let energy: Vec<f64> = (0..c_last).map(|c| top[c * h * w..(c + 1) * h * w].iter().map(|v| v * v).sum::<f64>() / n).collect();
        let mut a: Vec<f64> = energy.iter().map(|e| (e + LOG_FLOOR).ln()).collect();
        let mut dense = Vec::with_capacity(lay.dense.len() + 1);
        let last = lay.dense.len() - 1;
        for (li, d) in lay.dense.iter().enumerate() {
            let mut z: Vec<f64> = (0..d.nout)
                .map(|o| p[d.b + o] + (0..d.nin).map(|i| p[d.w + o * d.nin + i] * a[i]).sum::<f64>())
                .collect();
            if li < last {
                for v in &mut z {
                    *v = sigmoid(*v);
                }
            }
            dense.push(std::mem::replace(&mut a, z));
        }
        dense.push(a);
        Ok(Cache { acts, cols, dims, energy, dense })
    }

    /// Raw outputs for a conditioned input.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.forward_cache(x)?.dense.pop().expect("output layer"))
    }

    fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let lay = Layout::new(cfg);
        let p = &self.params;
        let mut delta = dout.to_vec();
        let last = lay.dense.len() - 1;
        for li in (0..lay.dense.len()).rev() {
            let d = lay.dense[li];
            if li < last {
                let a = &cache.dense[li + 1];
                for (dv, av) in delta.iter_mut().zip(a) {
                    *dv *= av * (1.0 - av);
                }
            }
            let ain = &cache.dense[li];
            let mut dprev = vec![0.0; d.nin];
            for o in 0..d.nout {
                grad[d.b + o] += delta[o];
                for i in 0..d.nin {
                    grad[d.w + o * d.nin + i] += delta[o] * ain[i];
                    dprev[i] += p[d.w + o * d.nin + i] * delta[o];
                }
            }
            delta = dprev;
        }
        // log-energy pooling
        let (c_last, h, w) = *cache.dims.last().expect("conv output dims");
        let top = cache.acts.last().expect("conv output");
        let n = (h * w) as f64;
        let mut dact: Vec<f64> = vec![0.0; top.len()];
        for c in 0..c_last {
            let s = delta[c] * 2.0 / (n * (cache.energy[c] + LOG_FLOOR));
            for idx in c * h * w..(c + 1) * h * w {
                dact[idx] = s * top[idx];
            }
        }
        let [kh, kw] = cfg.kernel;
        let dw = cfg.col_dilation;
        for li in (0..lay.convs.len()).rev() {
            let cs = lay.convs[li];
            let out = &cache.acts[li];
            let (_, hi, wi) = cache.dims[li];
            let p_len = out.len() / cs.cout;
            let dz: Vec<f64> = dact.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            let dz = DMatrix::from_vec(p_len, cs.cout, dz);
            for o in 0..cs.cout {
                grad[cs.b + o] += dz.column(o).sum();
            }
            let xt = &cache.cols[li];
            let gw = xt.tr_mul(&dz);
            for (g, v) in grad[cs.w..cs.b].iter_mut().zip(gw.as_slice()) {
                *g += v;
            }
            if li > 0 {
                let wt = DMatrix::from_column_slice(cs.cin * kh * kw, cs.cout, &p[cs.w..cs.b]);
                let dxt = dz * wt.transpose();
                dact = col2im(&dxt, cs.cin, hi, wi, kh, kw, dw);
            }
        }
    }

    /// Mean squared error against one-hot targets and its gradient, averaged
    /// over `batch`.
    pub fn loss_and_grad(&self, batch: &[(DMatrix<f64>, usize)]) -> Result<(f64, Vec<f64>)> {
        let f = self.config.classes;
        let scale = 1.0 / (batch.len() * f) as f64;
        let per: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|(x, label)| {
                let cache = self.forward_cache(x)?;
                let y = cache.dense.last().expect("output");
                let mut loss = 0.0;
                let dout: Vec<f64> = (0..f)
                    .map(|j| {
                        let t = if j == *label { 1.0 } else { 0.0 };
                        loss += (y[j] - t) * (y[j] - t) * scale;
                        2.0 * (y[j] - t) * scale
                    })
                    .collect();
                let mut grad = vec![0.0; self.params.len()];
                self.backward(&cache, &dout, &mut grad);
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        // summed in sample order so the result does not depend on the pool
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (l, g) in per {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, data: &[(DMatrix<f64>, usize)]) -> Result<f64> {
        let f = self.config.classes;
        let per: Vec<f64> = data
            .par_iter()
            .map(|(x, label)| {
                let y = self.forward(x)?;
                Ok((0..f).map(|j| (y[j] - if j == *label { 1.0 } else { 0.0 }).powi(2)).sum::<f64>())
            })
            .collect::<Result<_>>()?;
        Ok(per.iter().sum::<f64>() / (data.len().max(1) * f) as f64)
    }

    /// Arg-max class of a conditioned input; ties go to the lowest index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<usize> {
        let y = self.forward(x)?;
        let mut best = 0;
        for (j, v) in y.iter().enumerate() {
            if *v > y[best] {
                best = j;
            }
        }
        Ok(best)
    }

    pub fn accuracy(&self, data: &[(DMatrix<f64>, usize)]) -> Result<f64> {
        let mut hits = 0;
        for (x, label) in data {
            if self.predict(x)? == *label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    /// Flat binary: magic, `u64` header length, header of `u64` values
    /// (`classes`, `kernel rows`, `kernel cols`, `dilation`, conv layer
    /// count, channels.., hidden count, widths..), `u64` parameter count and
    /// the little-endian `f64` parameters in layer order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = &self.config;
        let mut header = vec![c.classes as u64, c.kernel[0] as u64, c.kernel[1] as u64, c.col_dilation as u64, c.conv_channels.len() as u64];
        header.extend(c.conv_channels.iter().map(|&v| v as u64));
        header.push(c.hidden.len() as u64);
        header.extend(c.hidden.iter().map(|&v| v as u64));
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a CNN weight file (bad magic)".into()));
        }
        let mut u = || -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let hl = u()? as usize;
        if !(6..=1024).contains(&hl) {
            return Err(Error::Format("implausible CNN header".into()));
        }
        let header: Vec<usize> = (0..hl).map(|_| u().map(|v| v as usize)).collect::<Result<_>>()?;
        let bad = || Error::Format("inconsistent CNN header".into());
        let nc = *header.get(4).ok_or_else(bad)?;
        let conv_channels = header.get(5..5 + nc).ok_or_else(bad)?.to_vec();
        let nh = *header.get(5 + nc).ok_or_else(bad)?;
        let hidden = header.get(6 + nc..6 + nc + nh).ok_or_else(bad)?.to_vec();
        if 6 + nc + nh != hl {
            return Err(bad());
        }
        let config = CnnConfig { conv_channels, kernel: [header[1], header[2]], col_dilation: header[3], hidden, classes: header[0] };
        config.validate()?;
        let n = u()? as usize;
        if n != Layout::new(&config).len {
            return Err(Error::Format(format!("parameter count {n} does not match the header")));
        }
        let mut params = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            params.push(f64::from_le_bytes(b));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite CNN weight".into()));
        }
        Ok(CnnModel { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { learning_rate: 1e-3, batch: 50, max_epochs: 300, patience: 20, beta1: 0.9, beta2: 0.999, adam_eps: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    /// The best validation loss stayed within 1% of the better of the
    /// untrained model and the constant prior output `1/F`, whose loss on
    /// balanced classes is `(F - 1) / F^2`.
    pub stalled: bool,
}

/// Adam training with early stopping; the parameters of the best validation
/// epoch are returned. Zero epochs returns the initialization unchanged.
pub fn train(model: CnnModel, train_set: &[(DMatrix<f64>, usize)], val_set: &[(DMatrix<f64>, usize)], s: &TrainSettings) -> Result<(CnnModel, TrainReport)> {
    let f = model.config.classes;
    if f < 2 {
        return Err(Error::InvalidArgument("training needs at least two classes".into()));
    }
    if train_set.is_empty() || val_set.is_empty() || s.batch == 0 {
        return Err(Error::InvalidArgument("empty training or validation set, or zero batch size".into()));
    }
    if train_set.iter().chain(val_set).any(|(_, l)| *l >= f) {
        return Err(Error::InvalidArgument("label out of range".into()));
    }
    let diverged = |what: &str| {
        Error::Divergence(format!("{what} with learning_rate = {}, batch = {}, beta1 = {}, beta2 = {}", s.learning_rate, s.batch, s.beta1, s.beta2))
    };
    let mut rng = stream(s.seed, &[purpose::CNN, 1]);
    let initial = model.loss(val_set)?;
    let mut best = (initial, model.clone(), 0usize);
    let mut cur = model;
    let n = cur.params.len();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let mut step = 0i32;
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport { train_loss: vec![], val_loss: vec![], initial_val_loss: initial, best_epoch: 0, stalled: false };
    let mut since = 0;
    for epoch in 1..=s.max_epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in idx.chunks(s.batch) {
            let batch: Vec<(DMatrix<f64>, usize)> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, g) = cur.loss_and_grad(&batch)?;
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(diverged("training loss became non-finite"));
            }
            total += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - s.beta1.powi(step);
            let c2 = 1.0 - s.beta2.powi(step);
            for j in 0..n {
                m1[j] = s.beta1 * m1[j] + (1.0 - s.beta1) * g[j];
                m2[j] = s.beta2 * m2[j] + (1.0 - s.beta2) * g[j] * g[j];
                cur.params[j] -= s.learning_rate * (m1[j] / c1) / ((m2[j] / c2).sqrt() + s.adam_eps);
            }
        }
        let vl = cur.loss(val_set)?;
        if !vl.is_finite() {
            return Err(diverged("validation loss became non-finite"));
        }
        report.train_loss.push(total / train_set.len() as f64);
        report.val_loss.push(vl);
        if vl < best.0 {
            best = (vl, cur.clone(), epoch);
            since = 0;
        } else {
            since += 1;
            if since >= s.patience {
                break;
            }
        }
    }
    report.best_epoch = best.2;
    let chance = (f - 1) as f64 / (f * f) as f64;
    report.stalled = best.0 > 0.99 * initial.min(chance);
    Ok((best.1, report))
}

/// Synthetic labeled inputs: for every `f_n` in `classes`, `per_class`
/// channel histories of `v` intervals drawn from the aging generator with
/// `m` elements and `k` users, optionally corrupted by white noise of
/// relative power `noise_nmse`, preprocessed and conditioned.
#[allow(clippy::too_many_arguments)]
pub fn synth_dataset(classes: &[f64], per_class: usize, m: usize, k: usize, v: usize, rho: f64, noise_nmse: f64, seed: u64) -> Result<Vec<(DMatrix<f64>, usize)>> {
    let r = gen_correlation(m, rho)?;
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for (label, &f) in classes.iter().enumerate() {
        let cfg = SystemConfig { m, k, f_n: Some(f), speed: None, ..SystemConfig::default() };
        let mut rng = stream(seed, &[purpose::DATASET, label as u64]);
        for _ in 0..per_class {
            let mut series = gen_e_series_len(&cfg, &r, v, &mut rng)?;
            if noise_nmse > 0.0 {
                for e in &mut series {
                    let p = e.norm_squared() / e.len() as f64;
                    for z in e.iter_mut() {
                        *z += cn(&mut rng, noise_nmse * p);
                    }
                }
            }
            out.push((condition(&preprocess_csi(&series, v)?, k)?, label));
        }
    }
    Ok(out)
}

/// Bank entry selected by the classifier for a raw (unconditioned)
/// preprocessed matrix with `k` users.
pub fn classify_fn<'a>(model: &CnnModel, c: &DMatrix<f64>, k: usize, bank: &'a PatternBank) -> Result<(usize, &'a ArModel)> {
    if bank.len() == 1 {
        return Ok((0, bank.model(0)));
    }
    if model.config.classes != bank.len() {
        return Err(Error::InvalidArgument(format!("model has {} classes, bank has {}", model.config.classes, bank.len())));
    }
    let idx = model.predict(&condition(c, k)?)?;
    Ok((idx, bank.model(idx)))
}

/// CNN-AR forecast: classify the aging pattern from the last `v` measured
/// matrices, load the matching bank model and run the AR recursion on the
/// whole `history` for `horizon` steps. Returns the selected bank index with
/// the forecast.
pub fn cnn_ar_predict(model: &CnnModel, bank: &PatternBank, history: &[CMat], v: usize, horizon: usize) -> Result<(usize, Vec<CMat>)> {
    let k = history.first().map(|e| e.ncols()).ok_or_else(|| Error::InvalidArgument("empty history".into()))?;
    if v == 0 || v > history.len() {
        return Err(Error::InvalidArgument(format!("cannot classify from {v} of {} matrices", history.len())));
    }
    let c = preprocess_csi(&history[history.len() - v..], v)?;
    let (idx, ar) = classify_fn(model, &c, k, bank)?;
    Ok((idx, ar_predict(history, ar, horizon)?))
}
