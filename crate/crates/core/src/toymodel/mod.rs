//! A minimal differentiable denoiser with hand-written gradients.
//!
//! Per clip of `F` frames with `P` pixels each:
//!
//! ```text
//! H = X W_in^T + b_in + W_t phi(t) + pos      (F x D)
//! A = softmax(H W_q^T (H W_k^T)^T / sqrt(D))  (F x F, over frames)
//! Z = tanh(H + A H W_v^T)
//! Y = Z W_out^T + b_out + (w_g . phi(t) + b_g) X
//! ```
//!
//! Temporal attention is the only path that mixes frames, so its `F^2` term
//! is what a lower frame rate saves.

mod adam;
mod linalg;
mod train;

pub use adam::{adam_step, AdamConfig, TrainState};
pub use train::{train, BatchLog, EvalHook, TrainBudget, TrainConfig, TrainOutcome};

use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Denoiser;
use crate::scalar::Scalar;
use crate::videoops::{seeded_rng, VideoTensor};
use linalg::{matmul_nn, matmul_nt, matmul_tn_acc};

/// What the output head is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Epsilon,
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `C * H * W` of one frame.
    pub pixels: usize,
    pub width: usize,
    pub prediction: Prediction,
    /// Adds a fixed sinusoidal encoding of each frame's relative position.
    pub positional: bool,
}

impl ModelConfig {
    pub fn new(pixels: usize, width: usize, prediction: Prediction) -> Self {
        Self {
            pixels,
            width,
            prediction,
            positional: true,
        }
    }
}

/// Named views into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub w_in: Range<usize>,
    pub b_in: Range<usize>,
    pub w_t: Range<usize>,
    pub w_q: Range<usize>,
    pub w_k: Range<usize>,
    pub w_v: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub w_g: Range<usize>,
    pub b_g: Range<usize>,
    pub len: usize,
}

impl ParamLayout {
    fn new(p: usize, d: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let w_in = take(d * p);
        let b_in = take(d);
        let w_t = take(d * d);
        let w_q = take(d * d);
        let w_k = take(d * d);
        let w_v = take(d * d);
        let w_out = take(p * d);
        let b_out = take(p);
        let w_g = take(d);
        let b_g = take(1);
        Self {
            w_in,
            b_in,
            w_t,
            w_q,
            w_k,
            w_v,
            w_out,
            b_out,
            w_g,
            b_g,
            len: at,
        }
    }

    /// `(name, range)` for every parameter block, in storage order.
    pub fn blocks(&self) -> Vec<(&'static str, Range<usize>)> {
        vec![
            ("w_in", self.w_in.clone()),
            ("b_in", self.b_in.clone()),
            ("w_t", self.w_t.clone()),
            ("w_q", self.w_q.clone()),
            ("w_k", self.w_k.clone()),
            ("w_v", self.w_v.clone()),
            ("w_out", self.w_out.clone()),
            ("b_out", self.b_out.clone()),
            ("w_g", self.w_g.clone()),
            ("b_g", self.b_g.clone()),
        ]
    }
}

/// Sinusoidal features of `t in [0, 1]`, `width` entries.
pub fn time_features<T: Scalar>(t: T, width: usize) -> Vec<T> {
    sinusoid(t * T::lit(1000.0), width)
}

fn sinusoid<T: Scalar>(x: T, width: usize) -> Vec<T> {
    let half = width / 2;
    let mut out = vec![T::zero(); width];
    for i in 0..half {
        let freq = T::lit((-(10_000f64).ln() * i as f64 / half as f64).exp());
        out[i] = (x * freq).sin();
        out[half + i] = (x * freq).cos();
    }
    out
}

/// Activations kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    frames: usize,
    x: Vec<T>,
    phi: Vec<T>,
    h: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    z: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser<T: Scalar> {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<T>,
}

impl<T: Scalar> ToyDenoiser<T> {
    /// Fan-in scaled uniform init; the output head and skip gate start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let layout = ParamLayout::new(config.pixels, config.width);
        let mut params = vec![T::zero(); layout.len];
        let mut rng = seeded_rng(seed);
        let (p, d) = (config.pixels as f64, config.width as f64);
        for (range, fan_in) in [
            (layout.w_in.clone(), p),
            (layout.w_t.clone(), d),
            (layout.w_q.clone(), d),
            (layout.w_k.clone(), d),
            (layout.w_v.clone(), d),
        ] {
            let bound = 1.0 / fan_in.sqrt();
            for x in &mut params[range] {
                *x = T::lit(rng.random_range(-bound..bound));
            }
        }
        Self {
            config,
            layout,
            params,
        }
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        let layout = ParamLayout::new(config.pixels, config.width);
        if params.len() != layout.len {
            return Err(Error::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.len
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    fn block(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    fn check_input(&self, x: &VideoTensor<T>) -> Result<()> {
        if x.frame_len() != self.config.pixels {
            return Err(Error::Shape(format!(
                "model expects {} pixels per frame, got {}",
                self.config.pixels,
                x.frame_len()
            )));
        }
        Ok(())
    }

    fn gate(&self, phi: &[T]) -> T {
        let w = self.block(&self.layout.w_g);
        w.iter().zip(phi).map(|(&a, &b)| a * b).sum::<T>() + self.params[self.layout.b_g.start]
    }

    /// Forward pass returning the prediction and the activations needed by
    /// [`ToyDenoiser::backward`].
    pub fn forward_cached(&self, x_t: &VideoTensor<T>, t: T) -> Result<(VideoTensor<T>, ForwardCache<T>)> {
        self.check_input(x_t)?;
        let (f, p, d) = (x_t.frames(), self.config.pixels, self.config.width);
        let l = &self.layout;
        let x = x_t.data();
        let phi = time_features(t, d);

        let mut temb = vec![T::zero(); d];
        matmul_nt(&phi, self.block(&l.w_t), 1, d, d, &mut temb);
        let b_in = self.block(&l.b_in);

        let mut h = vec![T::zero(); f * d];
        matmul_nt(x, self.block(&l.w_in), f, p, d, &mut h);
        let ft = T::from_usize(f).unwrap();
        for i in 0..f {
            let pos = if self.config.positional {
                sinusoid(T::from_usize(i).unwrap() / ft * T::lit(64.0), d)
            } else {
                vec![T::zero(); d]
            };
            for j in 0..d {
                h[i * d + j] += b_in[j] + temb[j] + pos[j];
            }
        }

        let mut q = vec![T::zero(); f * d];
        let mut k = vec![T::zero(); f * d];
        let mut v = vec![T::zero(); f * d];
        matmul_nt(&h, self.block(&l.w_q), f, d, d, &mut q);
        matmul_nt(&h, self.block(&l.w_k), f, d, d, &mut k);
        matmul_nt(&h, self.block(&l.w_v), f, d, d, &mut v);

        let mut attn = vec![T::zero(); f * f];
        matmul_nt(&q, &k, f, d, f, &mut attn);
        let inv_sqrt_d = T::one() / T::from_usize(d).unwrap().sqrt();
        for row in attn.chunks_mut(f) {
            let mut m = T::neg_infinity();
            for s in row.iter_mut() {
                *s = *s * inv_sqrt_d;
                m = m.max(*s);
            }
            let mut z = T::zero();
            for s in row.iter_mut() {
                *s = (*s - m).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s = *s / z;
            }
        }

        let mut mixed = vec![T::zero(); f * d];
        matmul_nn(&attn, &v, f, f, d, &mut mixed);
        let z: Vec<T> = h.iter().zip(&mixed).map(|(&a, &b)| (a + b).tanh()).collect();

        let mut y = vec![T::zero(); f * p];
        matmul_nt(&z, self.block(&l.w_out), f, d, p, &mut y);
        let b_out = self.block(&l.b_out);
        let g = self.gate(&phi);
        for i in 0..f {
            for j in 0..p {
                y[i * p + j] += b_out[j] + g * x[i * p + j];
            }
        }

        let out = VideoTensor::new(y, x_t.shape())?.with_stride_level(x_t.stride_level());
        let cache = ForwardCache {
            frames: f,
            x: x.to_vec(),
            phi,
            h,
            q,
            k,
            v,
            attn,
            z,
        };
        Ok((out, cache))
    }

    pub fn forward(&self, x_t: &VideoTensor<T>, t: T) -> Result<VideoTensor<T>> {
        self.forward_cached(x_t, t).map(|(y, _)| y)
    }

    /// Row-normalized attention weights for `x_t`.
    pub fn attention_weights(&self, x_t: &VideoTensor<T>, t: T) -> Result<Vec<T>> {
        self.forward_cached(x_t, t).map(|(_, c)| c.attn)
    }

    /// Gradient of `sum(grad_out * forward(x_t, t))` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> Result<Vec<T>> {
        let (f, p, d) = (cache.frames, self.config.pixels, self.config.width);
        if grad_out.len() != f * p {
            return Err(Error::Shape(format!(
                "gradient of length {} for output of length {}",
                grad_out.len(),
                f * p
            )));
        }
        let l = &self.layout;
        let mut grad = vec![T::zero(); l.len];
        let dy = grad_out;

        // output head and skip gate
        matmul_tn_acc(dy, &cache.z, f, p, d, &mut grad[l.w_out.clone()]);
        for i in 0..f {
            for j in 0..p {
                grad[l.b_out.start + j] += dy[i * p + j];
            }
        }
        let dg: T = dy.iter().zip(&cache.x).map(|(&a, &b)| a * b).sum();
        for (gw, &ph) in grad[l.w_g.clone()].iter_mut().zip(&cache.phi) {
            *gw = dg * ph;
        }
        grad[l.b_g.start] = dg;

        // through tanh
        let mut du = vec![T::zero(); f * d];
        matmul_nn(dy, self.block(&l.w_out), f, p, d, &mut du);
        for (g, &z) in du.iter_mut().zip(&cache.z) {
            *g = *g * (T::one() - z * z);
        }

        // attention mixing: U = H + A V
        let mut dh = du.clone();
        let mut da = vec![T::zero(); f * f];
        matmul_nt(&du, &cache.v, f, d, f, &mut da);
        let mut dv = vec![T::zero(); f * d];
        matmul_tn_acc(&cache.attn, &du, f, f, d, &mut dv);

        // softmax rows
        let inv_sqrt_d = T::one() / T::from_usize(d).unwrap().sqrt();
        let mut ds = vec![T::zero(); f * f];
        for i in 0..f {
            let a = &cache.attn[i * f..(i + 1) * f];
            let g = &da[i * f..(i + 1) * f];
            let dot: T = a.iter().zip(g).map(|(&x, &y)| x * y).sum();
            for j in 0..f {
                ds[i * f + j] = a[j] * (g[j] - dot) * inv_sqrt_d;
            }
        }
        let mut dq = vec![T::zero(); f * d];
        matmul_nn(&ds, &cache.k, f, f, d, &mut dq);
        let mut dk = vec![T::zero(); f * d];
        matmul_tn_acc(&ds, &cache.q, f, f, d, &mut dk);

        // projections
        matmul_tn_acc(&dq, &cache.h, f, d, d, &mut grad[l.w_q.clone()]);
        matmul_tn_acc(&dk, &cache.h, f, d, d, &mut grad[l.w_k.clone()]);
        matmul_tn_acc(&dv, &cache.h, f, d, d, &mut grad[l.w_v.clone()]);
        let mut tmp = vec![T::zero(); f * d];
        for (dproj, w) in [(&dq, &l.w_q), (&dk, &l.w_k), (&dv, &l.w_v)] {
            matmul_nn(dproj, self.block(w), f, d, d, &mut tmp);
            for (a, &b) in dh.iter_mut().zip(&tmp) {
                *a += b;
            }
        }

        // embedding
        matmul_tn_acc(&dh, &cache.x, f, d, p, &mut grad[l.w_in.clone()]);
        let mut dh_sum = vec![T::zero(); d];
        for i in 0..f {
            for j in 0..d {
                dh_sum[j] += dh[i * d + j];
            }
        }
        for j in 0..d {
            grad[l.b_in.start + j] = dh_sum[j];
        }
        matmul_tn_acc(&dh_sum, &cache.phi, 1, d, d, &mut grad[l.w_t.clone()]);
        Ok(grad)
    }

    /// Mean squared error against `target` and its parameter gradient.
    pub fn loss_and_grad(
        &self,
        x_t: &VideoTensor<T>,
        t: T,
        target: &VideoTensor<T>,
    ) -> Result<(T, Vec<T>)> {
        if target.shape() != x_t.shape() {
            return Err(Error::Shape(format!("{} vs {}", target.shape(), x_t.shape())));
        }
        let (pred, cache) = self.forward_cached(x_t, t)?;
        let n = T::from_usize(pred.data().len()).unwrap();
        let resid: Vec<T> = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let loss = resid.iter().map(|&r| r * r).sum::<T>() / n;
        let two_over_n = T::lit(2.0) / n;
        let grad_out: Vec<T> = resid.iter().map(|&r| r * two_over_n).collect();
        Ok((loss, self.backward(&cache, &grad_out)?))
    }

    /// Writes the checkpoint: a text metadata block terminated by `end_header`,
    /// then the parameters as little-endian `f64`.
    pub fn save_checkpoint(&self, path: &Path, metadata: &[(String, String)]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "pyramid-checkpoint v1")?;
        writeln!(w, "pixels = {}", self.config.pixels)?;
        writeln!(w, "width = {}", self.config.width)?;
        writeln!(w, "prediction = {:?}", self.config.prediction)?;
        writeln!(w, "positional = {}", self.config.positional)?;
        writeln!(w, "num_params = {}", self.layout.len)?;
        for (name, range) in self.layout.blocks() {
            writeln!(w, "block {name} = {}..{}", range.start, range.end)?;
        }
        for (k, v) in metadata {
            writeln!(w, "meta {k} = {v}")?;
        }
        writeln!(w, "end_header")?;
        for &x in &self.params {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut fields = std::collections::HashMap::new();
        let mut meta = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Input("checkpoint header is not terminated".into()));
            }
            let l = line.trim_end();
            if l == "end_header" {
                break;
            }
            if let Some((k, v)) = l.split_once(" = ") {
                if let Some(mk) = k.strip_prefix("meta ") {
                    meta.push((mk.to_string(), v.to_string()));
                } else {
                    fields.insert(k.to_string(), v.to_string());
                }
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Input(format!("checkpoint lacks `{k}`")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Input(format!("bad `{k}` in checkpoint")))
        };
        let prediction = match get("prediction")?.as_str() {
            "Epsilon" => Prediction::Epsilon,
            "Velocity" => Prediction::Velocity,
            other => return Err(Error::Input(format!("unknown prediction `{other}`"))),
        };
        let config = ModelConfig {
            pixels: parse_usize("pixels")?,
            width: parse_usize("width")?,
            prediction,
            positional: get("positional")? == "true",
        };
        let n = parse_usize("num_params")?;
        let mut bytes = vec![0u8; n * 8];
        std::io::Read::read_exact(&mut r, &mut bytes)?;
        let params = bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok((Self::from_params(config, params)?, meta))
    }
}

impl<T: Scalar> Denoiser<T> for ToyDenoiser<T> {
    fn predict(&self, x_t: &VideoTensor<T>, t: T) -> Result<VideoTensor<T>> {
        self.forward(x_t, t)
    }
}

/// Outcome of a central finite-difference comparison over every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failed: usize,
    pub max_rel_error: f64,
}

/// Relative error used by the gradient check; the `1e-9` floor only matters
/// for gradients at round-off level.
pub fn grad_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-9)
}

/// Compares [`ToyDenoiser::backward`] against central differences of
/// `L = sum(grad_out * forward(x, t))` with step `h` for every parameter.
pub fn finite_difference_check(
    model: &ToyDenoiser<f64>,
    x: &VideoTensor<f64>,
    t: f64,
    grad_out: &[f64],
    h: f64,
    rel_tol: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = model.forward_cached(x, t)?;
    let analytic = model.backward(&cache, grad_out)?;
    let objective = |m: &ToyDenoiser<f64>| -> Result<f64> {
        let y = m.forward(x, t)?;
        Ok(y.data().iter().zip(grad_out).map(|(a, b)| a * b).sum())
    };
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        failed: 0,
        max_rel_error: 0.0,
    };
    for i in 0..model.num_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = objective(&probe)?;
        probe.params[i] = orig - h;
        let down = objective(&probe)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = grad_rel_error(analytic[i], numeric);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(err);
        if err > rel_tol {
            report.failed += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videoops::Shape;

    fn cfg() -> ModelConfig {
        ModelConfig::new(6, 8, Prediction::Velocity)
    }

    fn randomized(seed: u64) -> ToyDenoiser<f64> {
        let mut m = ToyDenoiser::<f64>::new(cfg(), seed);
        let mut rng = seeded_rng(seed + 1000);
        for x in m.params_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
        m
    }

    #[test]
    fn zero_head_predicts_zero() {
        let m = ToyDenoiser::<f64>::new(cfg(), 1);
        let x = VideoTensor::sample_gaussian(Shape::new(4, 1, 2, 3), 2);
        let y = m.forward(&x, 0.3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_agnostic() {
        let m = randomized(3);
        for f in [1, 4, 8, 16] {
            let x = VideoTensor::sample_gaussian(Shape::new(f, 1, 2, 3), 4);
            assert_eq!(m.forward(&x, 0.5).unwrap().shape(), x.shape());
        }
        let bad = VideoTensor::<f64>::sample_gaussian(Shape::new(4, 1, 2, 2), 4);
        assert!(m.forward(&bad, 0.5).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let m = randomized(5);
        let x = VideoTensor::sample_gaussian(Shape::new(5, 1, 2, 3), 6);
        let a = m.attention_weights(&x, 0.7).unwrap();
        for row in a.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let single = VideoTensor::sample_gaussian(Shape::new(1, 1, 2, 3), 6);
        assert_eq!(m.attention_weights(&single, 0.7).unwrap(), vec![1.0]);
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut m = randomized(7);
        m.config.positional = false;
        let x = VideoTensor::<f64>::sample_gaussian(Shape::new(4, 1, 2, 3), 8);
        let order = [2usize, 0, 3, 1];
        let permute = |v: &VideoTensor<f64>| {
            let data = order.iter().flat_map(|&i| v.frame(i).to_vec()).collect();
            VideoTensor::new(data, v.shape()).unwrap()
        };
        let a = permute(&m.forward(&x, 0.4).unwrap());
        let b = m.forward(&permute(&x), 0.4).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);

        m.config.positional = true;
        let a = permute(&m.forward(&x, 0.4).unwrap());
        let b = m.forward(&permute(&x), 0.4).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let m = randomized(seed);
            let x = VideoTensor::sample_gaussian(Shape::new(3 + seed as usize, 1, 2, 3), seed + 50);
            let r = VideoTensor::<f64>::sample_gaussian(x.shape(), seed + 60);
            let rep = finite_difference_check(&m, &x, 0.37, r.data(), 1e-5, 1e-4).unwrap();
            assert_eq!(rep.failed, 0, "{rep:?}");
            assert_eq!(rep.checked, m.num_params());
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let m = randomized(9);
        let x = VideoTensor::sample_gaussian(Shape::new(4, 1, 2, 3), 1);
        let (_, cache) = m.forward_cached(&x, 0.2).unwrap();
        let g = m.backward(&cache, &vec![0.0; 24]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let target = m.forward(&x, 0.2).unwrap();
        let (loss, g) = m.loss_and_grad(&x, 0.2, &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = randomized(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save_checkpoint(&path, &[("seed".into(), "4".into())]).unwrap();
        let (back, meta) = ToyDenoiser::<f64>::load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta, vec![("seed".to_string(), "4".to_string())]);
    }

    #[test]
    fn single_precision_runs() {
        let m = ToyDenoiser::<f32>::new(cfg(), 1);
        let x = VideoTensor::<f32>::sample_gaussian(Shape::new(2, 1, 2, 3), 2);
        assert_eq!(m.forward(&x, 0.5).unwrap().shape(), x.shape());
    }
}
