//! Stage-wise diffusion: the temporal pyramid plan, boundary latents of each
//! stage, the constant-noise closed form of the stage ODE and training-sample
//! assembly.
//!
//! Stage `k` (for `k = K..=1`) covers the time interval `[e_k, s_k)` with
//! `s_k = t_k`, and runs on every `d_k = 2^(k-1)`-th frame. Stage 1 is denoised
//! last and is the only one at full frame rate.
//!
//! With [`StageEnds::Shared`] every stage ends where the next one starts,
//! `e_k = t_{k-1}`. With [`StageEnds::Matched`] a stage `k > 1` ends at the time
//! whose signal-to-noise ratio is `sqrt(2)` times that of `s_{k-1}`, the point
//! from which the renoising jump reproduces the next stage's start distribution.

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::alignment::align_noise;
use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::scalar::Scalar;
use crate::schedules::{Schedule, ScheduleKind};
use crate::videoops::{SeededRng, VideoTensor};

/// One stage of a [`StagePlan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage<T: Scalar> {
    pub k: usize,
    /// High-noise side `s_k`.
    pub start: T,
    /// Low-noise side `e_k`.
    pub end: T,
    pub down_factor: usize,
}

impl<T: Scalar> Stage<T> {
    pub fn width(&self) -> T {
        self.start - self.end
    }

    /// Normalized position `t' = (t - e_k) / (s_k - e_k)`.
    pub fn local_time(&self, t: T) -> T {
        (t - self.end) / (self.start - self.end)
    }

    pub fn contains(&self, t: T) -> bool {
        t >= self.end && t <= self.start
    }
}

/// Where each stage ends relative to the start of the next, finer stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageEnds {
    /// `e_k = s_{k-1}`.
    Shared,
    /// `gamma_e / sigma_e = sqrt(2) * gamma_s / sigma_s` with `s = s_{k-1}`.
    #[default]
    Matched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan<T: Scalar> {
    /// `t_0 = 0 < t_1 < ... < t_K = 1`.
    boundaries: Vec<T>,
    /// `e_k`, indexed `k - 1`.
    ends: Vec<T>,
    mode: StageEnds,
}

impl<T: Scalar> StagePlan<T> {
    pub fn from_boundaries(boundaries: Vec<T>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Stage("a plan needs at least one stage".into()));
        }
        if boundaries[0] != T::zero() || *boundaries.last().unwrap() != T::one() {
            return Err(Error::Stage("boundaries must start at 0 and end at 1".into()));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Stage("boundaries must be strictly increasing".into()));
        }
        let ends = boundaries[..boundaries.len() - 1].to_vec();
        Ok(Self {
            boundaries,
            ends,
            mode: StageEnds::Shared,
        })
    }

    /// Moves the end of every stage `k > 1` to the matched point below `s_{k-1}`.
    pub fn with_matched_ends(mut self, schedule: &Schedule<T>) -> Result<Self> {
        let root2 = T::SQRT_2();
        for k in 2..=self.num_stages() {
            let s = self.boundaries[k - 1];
            let (gs, ss) = schedule.gamma_sigma(s)?;
            if !(gs > T::zero()) || !(ss > T::zero()) {
                return Err(Error::Stage(format!("cannot match the stage end below t = {s}")));
            }
            let target = root2 * gs / ss;
            let snr = |t: T| -> Result<T> {
                let (g, sg) = schedule.gamma_sigma(t)?;
                Ok(if sg > T::zero() { g / sg } else { T::infinity() })
            };
            // SNR falls monotonically in t; bisect on (0, s)
            let (mut lo, mut hi) = (T::zero(), s);
            for _ in 0..200 {
                let mid = (lo + hi) / T::lit(2.0);
                if mid <= lo || mid >= hi {
                    break;
                }
                if snr(mid)? > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if !(hi > T::zero()) {
                return Err(Error::Stage(format!("no matched end for stage {k}")));
            }
            self.ends[k - 1] = hi;
        }
        self.mode = StageEnds::Matched;
        Ok(self)
    }

    pub fn with_ends(self, mode: StageEnds, schedule: &Schedule<T>) -> Result<Self> {
        match mode {
            StageEnds::Shared => Self::from_boundaries(self.boundaries),
            StageEnds::Matched => Self::from_boundaries(self.boundaries)?.with_matched_ends(schedule),
        }
    }

    pub fn ends_mode(&self) -> StageEnds {
        self.mode
    }

    /// `K` equal-width stages over `[0, 1]`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Stage("K must be at least 1".into()));
        }
        let kt = T::from_usize(k).unwrap();
        let b = (0..=k)
            .map(|i| T::from_usize(i).unwrap() / kt)
            .collect();
        Self::from_boundaries(b)
    }

    /// Uniform plan whose interior boundaries sit on the schedule's discrete grid.
    pub fn uniform_for(schedule: &Schedule<T>, k: usize) -> Result<Self> {
        let plan = Self::uniform(k)?;
        let b = plan.boundaries.iter().map(|&t| schedule.snap(t)).collect();
        Self::from_boundaries(b)
    }

    pub fn num_stages(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[T] {
        &self.boundaries
    }

    pub fn stage(&self, k: usize) -> Result<Stage<T>> {
        if k == 0 || k > self.num_stages() {
            return Err(Error::Stage(format!(
                "stage {k} outside 1..={}",
                self.num_stages()
            )));
        }
        Ok(Stage {
            k,
            start: self.boundaries[k],
            end: self.ends[k - 1],
            down_factor: 1 << (k - 1),
        })
    }

    /// Stages in denoising order `K, K-1, ..., 1`.
    pub fn stages_high_to_low(&self) -> impl Iterator<Item = Stage<T>> + '_ {
        (1..=self.num_stages()).rev().map(move |k| self.stage(k).unwrap())
    }

    /// Time fed to the denoiser: `(k - 1 + t') / K` with `t'` the stage-local time.
    /// Unique per stage even where matched stages overlap, and equal to `t` for `K = 1`.
    pub fn model_time(&self, k: usize, t: T) -> Result<T> {
        let stage = self.stage(k)?;
        let kt = T::from_usize(self.num_stages()).unwrap();
        Ok((T::from_usize(k - 1).unwrap() + stage.local_time(t)) / kt)
    }

    /// Frame count divisibility required of full-rate clips.
    pub fn frame_multiple(&self) -> usize {
        1 << (self.num_stages() - 1)
    }

    pub fn frames_at(&self, k: usize, full_frames: usize) -> Result<usize> {
        let d = self.stage(k)?.down_factor;
        if full_frames % d != 0 {
            return Err(Error::Shape(format!(
                "{full_frames} frames not divisible by {d}"
            )));
        }
        Ok(full_frames / d)
    }
}

/// Training example for one stage. All tensors are at the stage frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSample<T: Scalar> {
    pub k: usize,
    pub t: T,
    pub x_hat_s: VideoTensor<T>,
    pub x_hat_e: VideoTensor<T>,
    pub x_t: VideoTensor<T>,
    /// `eps_k` for DDIM, `v_k` for flow matching.
    pub target: VideoTensor<T>,
}

/// Start and end latents of stage `k` built from a full-rate clip and its aligned noise.
///
/// The end point keeps every `d_k`-th frame of the clip. The start point takes
/// its content from the next coarser stage (every `2 d_k`-th frame, repeated
/// twice); the top stage has no coarser neighbour and uses its own frames.
/// Both share the same strided noise.
pub fn boundary_latents<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    k: usize,
    x0: &VideoTensor<T>,
    eps: &VideoTensor<T>,
) -> Result<(VideoTensor<T>, VideoTensor<T>)> {
    if x0.shape() != eps.shape() {
        return Err(Error::Shape(format!("{} vs {}", x0.shape(), eps.shape())));
    }
    let stage = plan.stage(k)?;
    let d = stage.down_factor;
    let noise = eps.down_temporal(d)?;
    let fine = x0.down_temporal(d)?;
    let coarse = if k == plan.num_stages() {
        fine.clone()
    } else {
        x0.down_temporal(2 * d)?.up_temporal_nearest(2)?
    };
    let (gs, ss) = schedule.gamma_sigma(stage.start)?;
    let (ge, se) = schedule.gamma_sigma(stage.end)?;
    let x_hat_s = coarse.lin_comb(gs, &noise, ss)?;
    let x_hat_e = fine.lin_comb(ge, &noise, se)?;
    Ok((x_hat_s, x_hat_e))
}

fn positive_gamma<T: Scalar>(schedule: &Schedule<T>, t: T) -> Result<(T, T)> {
    let (g, s) = schedule.gamma_sigma(t)?;
    if g <= T::zero() {
        return Err(Error::EndpointSingularity {
            t: t.as_f64(),
            sigma: s.as_f64(),
        });
    }
    Ok((g, s))
}

/// Constant stage noise recovered from the two boundary latents:
/// `eps_k = (x_e / g_e - x_s / g_s) / (s_e / g_e - s_s / g_s)`.
pub fn stage_epsilon<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    k: usize,
    x_hat_s: &VideoTensor<T>,
    x_hat_e: &VideoTensor<T>,
) -> Result<VideoTensor<T>> {
    let stage = plan.stage(k)?;
    if stage.start == stage.end {
        return Err(Error::Stage(format!("stage {k} has zero width")));
    }
    let (gs, ss) = positive_gamma(schedule, stage.start)?;
    let (ge, se) = positive_gamma(schedule, stage.end)?;
    let denom = se / ge - ss / gs;
    if denom == T::zero() || !denom.is_finite() {
        return Err(Error::Stage(format!("stage {k} has a degenerate noise ratio")));
    }
    x_hat_e.lin_comb(T::one() / (ge * denom), x_hat_s, -T::one() / (gs * denom))
}

/// Closed-form point on the stage ODE path under constant noise:
/// `x_t = (g_t / g_s) x_s + (s_t - (g_t / g_s) s_s) eps_k`.
pub fn intermediate_latent<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    k: usize,
    x_hat_s: &VideoTensor<T>,
    eps_k: &VideoTensor<T>,
    t: T,
) -> Result<VideoTensor<T>> {
    let stage = plan.stage(k)?;
    if !stage.contains(t) {
        return Err(Error::Domain { t: t.as_f64() });
    }
    let (gs, ss) = positive_gamma(schedule, stage.start)?;
    let (gt, st) = schedule.gamma_sigma(t)?;
    let ratio = gt / gs;
    x_hat_s.lin_comb(ratio, eps_k, st - ratio * ss)
}

/// Flow-matching stage interpolation. Returns `(x_t, v_k)` with
/// `x_t = (1 - t') x_e + t' x_s` and `v_k = x_s - x_e`.
pub fn fm_stage_sample<T: Scalar>(
    plan: &StagePlan<T>,
    k: usize,
    x_hat_s: &VideoTensor<T>,
    x_hat_e: &VideoTensor<T>,
    t: T,
) -> Result<(VideoTensor<T>, VideoTensor<T>)> {
    let stage = plan.stage(k)?;
    if stage.start == stage.end {
        return Err(Error::Stage(format!("stage {k} has zero width")));
    }
    if !(t >= stage.end && t < stage.start) {
        return Err(Error::Domain { t: t.as_f64() });
    }
    let tp = stage.local_time(t);
    let x_t = x_hat_e.lin_comb(T::one() - tp, x_hat_s, tp)?;
    let v = x_hat_s.sub(x_hat_e)?;
    Ok((x_t, v))
}

/// Options for [`make_training_batch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub align_noise: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { align_noise: true }
    }
}

/// Stage indices for one batch: each index is uniform over `1..=K`, and every
/// full round of `K` samples contains each stage exactly once.
fn draw_stages(k: usize, n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut pool: Vec<usize> = (1..=k).collect();
    while out.len() < n {
        pool.shuffle(rng);
        out.extend(pool.iter().copied().take(n - out.len()));
    }
    out.shuffle(rng);
    out
}

/// Draws `t` uniformly in `[e_k, s_k)`; on a DDIM grid the draw is over the grid
/// points in that interval.
fn draw_time<T: Scalar>(schedule: &Schedule<T>, stage: &Stage<T>, rng: &mut SeededRng) -> T {
    match schedule.grid_len() {
        Some(n) => {
            let nt = T::from_usize(n).unwrap();
            let pos = stage.end * nt;
            let lo = if (pos - pos.round()).abs() < T::lit(1e-9) { pos.round() } else { pos.ceil() };
            let lo = lo.to_usize().unwrap();
            let hi = (stage.start * nt).round().to_usize().unwrap().max(lo + 1);
            let i = rng.random_range(lo..hi);
            T::from_usize(i).unwrap() / nt
        }
        None => {
            let u = T::lit(rng.random::<f64>());
            let t = stage.end + u * stage.width();
            if t >= stage.start { stage.end } else { t }
        }
    }
}

/// Builds one training sample per clip: noise is drawn at full rate (and
/// optionally aligned to the batch), then each clip gets a stage, a time and
/// its stage-wise input and target.
pub fn make_training_batch<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    x0_batch: &[VideoTensor<T>],
    rng: &mut SeededRng,
    options: BatchOptions,
) -> Result<Vec<StageSample<T>>> {
    let Some(first) = x0_batch.first() else {
        return Ok(Vec::new());
    };
    let shape = first.shape();
    if shape.frames % plan.frame_multiple() != 0 {
        return Err(Error::Shape(format!(
            "{} frames not divisible by {}",
            shape.frames,
            plan.frame_multiple()
        )));
    }
    let noise: Vec<_> = x0_batch
        .iter()
        .map(|_| VideoTensor::gaussian(shape, rng))
        .collect();
    let noise = if options.align_noise {
        align_noise(x0_batch, &noise)?
    } else {
        noise
    };
    let stages = draw_stages(plan.num_stages(), x0_batch.len(), rng);
    let times: Vec<T> = stages
        .iter()
        .map(|&k| draw_time(schedule, &plan.stage(k).unwrap(), rng))
        .collect();

    x0_batch
        .iter()
        .zip(&noise)
        .zip(stages.iter().zip(&times))
        .map(|((x0, eps), (&k, &t))| {
            let (x_hat_s, x_hat_e) = boundary_latents(schedule, plan, k, x0, eps)?;
            let (x_t, target) = match schedule.kind() {
                ScheduleKind::FlowMatching => fm_stage_sample(plan, k, &x_hat_s, &x_hat_e, t)?,
                ScheduleKind::Ddim => {
                    let eps_k = stage_epsilon(schedule, plan, k, &x_hat_s, &x_hat_e)?;
                    let x_t = intermediate_latent(schedule, plan, k, &x_hat_s, &eps_k, t)?;
                    (x_t, eps_k)
                }
            };
            Ok(StageSample {
                k,
                t,
                x_hat_s,
                x_hat_e,
                x_t,
                target,
            })
        })
        .collect()
}

/// Compares the closed form against the exponential-integrator form
/// `x_t = (g_t / g_s) x_s - g_t eps * int_{lambda_s}^{lambda_t} e^{-lambda} d lambda`
/// evaluated by adaptive quadrature in log-SNR. Returns the max-abs residual.
pub fn verify_constant_eps_quadrature<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    k: usize,
    x_hat_s: &VideoTensor<T>,
    eps_const: &VideoTensor<T>,
    t: T,
) -> Result<f64> {
    let stage = plan.stage(k)?;
    if !(t > stage.end && t < stage.start) && t != stage.start {
        return Err(Error::Domain { t: t.as_f64() });
    }
    let lambda_s = schedule.log_snr(stage.start)?.as_f64();
    let lambda_t = schedule.log_snr(t)?.as_f64();
    let integral = adaptive_simpson(|l| (-l).exp(), lambda_s, lambda_t, 1e-14)?;

    let (gs, _) = positive_gamma(schedule, stage.start)?;
    let (gt, _) = schedule.gamma_sigma(t)?;
    let ratio = gt.as_f64() / gs.as_f64();
    let closed = intermediate_latent(schedule, plan, k, x_hat_s, eps_const, t)?;
    let residual = x_hat_s
        .data()
        .iter()
        .zip(eps_const.data())
        .zip(closed.data())
        .map(|((&xs, &e), &c)| {
            let quad = ratio * xs.as_f64() - gt.as_f64() * e.as_f64() * integral;
            (quad - c.as_f64()).abs()
        })
        .fold(0.0f64, f64::max);
    Ok(residual)
}
