//! Inference: per-stage reverse ODE steps and the renoising jump that carries
//! the end of one stage to the start of the next, finer stage.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::{Schedule, ScheduleKind};
use crate::stagewise::{Stage, StageEnds, StagePlan};
use crate::videoops::{seeded_rng, SeededRng, Shape, VideoTensor};

/// Anything that maps `(x_t, t)` to an eps- or velocity-prediction of the same shape.
pub trait Denoiser<T: Scalar> {
    fn predict(&self, x_t: &VideoTensor<T>, t: T) -> Result<VideoTensor<T>>;
}

impl<T: Scalar, F> Denoiser<T> for F
where
    F: Fn(&VideoTensor<T>, T) -> Result<VideoTensor<T>>,
{
    fn predict(&self, x_t: &VideoTensor<T>, t: T) -> Result<VideoTensor<T>> {
        self(x_t, t)
    }
}

fn checked_prediction<T: Scalar>(
    model: &impl Denoiser<T>,
    x_t: &VideoTensor<T>,
    t: T,
) -> Result<VideoTensor<T>> {
    let pred = model.predict(x_t, t)?;
    if pred.shape() != x_t.shape() {
        return Err(Error::Shape(format!(
            "model returned {} for input {}",
            pred.shape(),
            x_t.shape()
        )));
    }
    Ok(pred)
}

/// Deterministic DDIM update from `t` to `t_prev` given a noise prediction.
pub fn ddim_update<T: Scalar>(
    schedule: &Schedule<T>,
    x_t: &VideoTensor<T>,
    eps: &VideoTensor<T>,
    t: T,
    t_prev: T,
) -> Result<VideoTensor<T>> {
    if t_prev > t {
        return Err(Error::Domain { t: t_prev.as_f64() });
    }
    let (gt, st) = schedule.gamma_sigma(t)?;
    let (gp, sp) = schedule.gamma_sigma(t_prev)?;
    if gt <= T::zero() {
        return Err(Error::EndpointSingularity {
            t: t.as_f64(),
            sigma: st.as_f64(),
        });
    }
    let ratio = gp / gt;
    x_t.lin_comb(ratio, eps, sp - ratio * st)
}

pub fn ddim_step<T: Scalar>(
    schedule: &Schedule<T>,
    model: &impl Denoiser<T>,
    x_t: &VideoTensor<T>,
    t: T,
    t_prev: T,
) -> Result<VideoTensor<T>> {
    let eps = checked_prediction(model, x_t, t)?;
    ddim_update(schedule, x_t, &eps, t, t_prev)
}

/// One Euler step of the stage flow. The model predicts `dx/dt'` in the stage's
/// local time, so the step length is the local-time difference.
pub fn fm_euler_step<T: Scalar>(
    model: &impl Denoiser<T>,
    stage: &Stage<T>,
    x_t: &VideoTensor<T>,
    t: T,
    t_prev: T,
) -> Result<VideoTensor<T>> {
    if t_prev > t {
        return Err(Error::Domain { t: t_prev.as_f64() });
    }
    let v = checked_prediction(model, x_t, t)?;
    let dt = stage.local_time(t) - stage.local_time(t_prev);
    x_t.lin_comb(T::one(), &v, -dt)
}

/// Coefficients of the stage-to-stage transition
/// `x_s = scale * Up(x_e) + noise_weight * n'`, where `n'` has unit variance and
/// correlation `corr` inside each duplicated frame pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenoiseParams<T: Scalar> {
    pub corr: T,
    pub scale: T,
    pub noise_weight: T,
}

impl<T: Scalar> RenoiseParams<T> {
    /// Maximally anti-correlated transition (`corr = -1`) into a stage starting at
    /// `(gamma_s, sigma_s)`.
    pub fn new(gamma_s: T, sigma_s: T) -> Self {
        Self::with_corr(gamma_s, sigma_s, -T::one()).expect("corr = -1 is admissible")
    }

    /// General solution of the pair-covariance balance for `corr` in `[-1, 0]`.
    pub fn with_corr(gamma_s: T, sigma_s: T, corr: T) -> Result<Self> {
        if !(corr >= -T::one() && corr <= T::zero()) {
            return Err(Error::Input(format!("renoise correlation {corr} outside [-1, 0]")));
        }
        if !(gamma_s > T::zero()) || sigma_s < T::zero() {
            return Err(Error::Stage("renoising needs gamma_s > 0 and sigma_s >= 0".into()));
        }
        let a = (T::one() - corr).sqrt();
        let b = (-corr).sqrt();
        Ok(Self {
            corr,
            scale: gamma_s * a / (sigma_s * b + gamma_s * a),
            noise_weight: sigma_s / a,
        })
    }

    pub fn at(schedule: &Schedule<T>, t: T) -> Result<Self> {
        let (g, s) = schedule.gamma_sigma(t)?;
        if !(g > T::zero()) {
            return Err(Error::Stage(format!("cannot renoise into t = {t}")));
        }
        Ok(Self::new(g, s))
    }

    /// Plain nearest upsampling without injected noise.
    pub fn disabled() -> Self {
        Self {
            corr: -T::one(),
            scale: T::one(),
            noise_weight: T::zero(),
        }
    }

    /// Content and noise coefficients `(c, n)` an input `c * content + n * eps`
    /// (i.i.d. `eps`) must carry for the output to have mean `gamma_s * Up(content)`
    /// and covariance `sigma_s^2 I`.
    pub fn matched_input_coefficients(&self, gamma_s: T, sigma_s: T) -> (T, T) {
        let a = (T::one() - self.corr).sqrt();
        let b = (-self.corr).sqrt();
        (gamma_s / self.scale, sigma_s / a * b / self.scale)
    }
}

/// Whether stage transitions inject the corrective noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenoiseMode {
    #[default]
    On,
    Off,
}

/// Applies `scale * Up(x_e, 2) + noise_weight * n'` with pair-correlated `n'`.
pub fn apply_renoise<T: Scalar>(
    x_e: &VideoTensor<T>,
    params: &RenoiseParams<T>,
    rng: &mut SeededRng,
) -> Result<VideoTensor<T>> {
    let mut out = x_e.up_temporal_nearest(2)?.scale(params.scale);
    if params.noise_weight == T::zero() {
        return Ok(out);
    }
    let n = out.frame_len();
    let w = params.noise_weight;
    let exact_anti = params.corr == -T::one();
    let tail = (T::one() - params.corr * params.corr).max(T::zero()).sqrt();
    let data = out.data_mut();
    for pair in 0..x_e.frames() {
        let base = 2 * pair * n;
        for p in 0..n {
            let g = T::lit(rng.sample::<f64, _>(StandardNormal));
            let second = if exact_anti {
                -g
            } else {
                params.corr * g + tail * T::lit(rng.sample::<f64, _>(StandardNormal))
            };
            data[base + p] += w * g;
            data[base + n + p] += w * second;
        }
    }
    Ok(out)
}

/// Gain applied to the end latent of stage `k` before [`apply_renoise`], and the
/// renoising coefficients, both evaluated at the entering stage's start
/// `s_{k-1}`. The gain is 1 when the stages share the boundary; for matched
/// ends it is `gamma_s / (scale * gamma_e)`, which makes the jump output carry
/// mean `gamma_s * Up(content)` and covariance `sigma_s^2 I`.
pub fn transition_params<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    k: usize,
    mode: RenoiseMode,
) -> Result<(T, RenoiseParams<T>)> {
    if k <= 1 {
        return Err(Error::Stage("stage 1 has no finer successor".into()));
    }
    let stage = plan.stage(k)?;
    let next = plan.stage(k - 1)?;
    let params = match mode {
        RenoiseMode::On => RenoiseParams::at(schedule, next.start)?,
        RenoiseMode::Off => return Ok((T::one(), RenoiseParams::disabled())),
    };
    let gain = match plan.ends_mode() {
        StageEnds::Shared => T::one(),
        StageEnds::Matched => {
            let (gs, _) = schedule.gamma_sigma(next.start)?;
            let (ge, _) = schedule.gamma_sigma(stage.end)?;
            gs / (params.scale * ge)
        }
    };
    Ok((gain, params))
}

/// Moves the end latent of stage `k` to the start of stage `k - 1`.
pub fn renoise_transition<T: Scalar>(
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    k: usize,
    x_hat_e: &VideoTensor<T>,
    mode: RenoiseMode,
    rng: &mut SeededRng,
) -> Result<VideoTensor<T>> {
    let (gain, params) = transition_params(schedule, plan, k, mode)?;
    if gain == T::one() {
        apply_renoise(x_hat_e, &params, rng)
    } else {
        apply_renoise(&x_hat_e.scale(gain), &params, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig<T: Scalar> {
    pub steps_per_stage: usize,
    pub plan: StagePlan<T>,
    pub seed: u64,
    pub renoise: RenoiseMode,
    pub record_snapshots: bool,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn new(plan: StagePlan<T>, steps_per_stage: usize, seed: u64) -> Self {
        Self {
            steps_per_stage,
            plan,
            seed,
            renoise: RenoiseMode::On,
            record_snapshots: false,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_stage * self.plan.num_stages()
    }
}

/// A generated clip plus, when requested, the latent after every solver step.
#[derive(Debug, Clone)]
pub struct SampleOutput<T: Scalar> {
    pub video: VideoTensor<T>,
    pub snapshots: Vec<(usize, T, VideoTensor<T>)>,
}

/// Solver time grid of one stage, from `s_k` down to `e_k`.
pub fn stage_time_grid<T: Scalar>(schedule: &Schedule<T>, stage: &Stage<T>, steps: usize) -> Vec<T> {
    let n = T::from_usize(steps).unwrap();
    (0..=steps)
        .map(|j| {
            if j == steps {
                stage.end
            } else {
                let t = stage.start - T::from_usize(j).unwrap() * stage.width() / n;
                schedule.snap(t)
            }
        })
        .collect()
}

/// Generates one full-rate clip of `shape` by denoising every stage from its
/// start to its end and renoising between stages. The model is queried at
/// [`StagePlan::model_time`].
pub fn sample_video<T: Scalar>(
    schedule: &Schedule<T>,
    model: &impl Denoiser<T>,
    config: &SamplerConfig<T>,
    shape: Shape,
) -> Result<SampleOutput<T>> {
    if config.steps_per_stage == 0 {
        return Err(Error::Input("steps_per_stage must be at least 1".into()));
    }
    let plan = &config.plan;
    let top = plan.num_stages();
    let mut rng = seeded_rng(config.seed);
    let coarse = plan.frames_at(top, shape.frames)?;
    let mut x = VideoTensor::gaussian(shape.with_frames(coarse), &mut rng)
        .with_stride_level((top - 1) as u32);
    let mut snapshots = Vec::new();

    for stage in plan.stages_high_to_low() {
        let k = stage.k;
        let staged = |x: &VideoTensor<T>, t: T| model.predict(x, plan.model_time(k, t)?);
        let grid = stage_time_grid(schedule, &stage, config.steps_per_stage);
        for w in grid.windows(2) {
            let (t, t_prev) = (w[0], w[1]);
            if t_prev >= t {
                continue;
            }
            x = match schedule.kind() {
                ScheduleKind::Ddim => ddim_step(schedule, &staged, &x, t, t_prev)?,
                ScheduleKind::FlowMatching => fm_euler_step(&staged, &stage, &x, t, t_prev)?,
            };
            if config.record_snapshots {
                snapshots.push((stage.k, t_prev, x.clone()));
            }
        }
        if stage.k > 1 {
            x = renoise_transition(schedule, plan, stage.k, &x, config.renoise, &mut rng)?;
        }
    }
    Ok(SampleOutput { video: x, snapshots })
}

/// Attention cost of a plan relative to running every stage at full rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCost {
    /// `sum_k (F / d_k)^2 / (K F^2)`.
    pub avg_cost_ratio: f64,
    /// Frame tokens per stage, indexed `k - 1`.
    pub tokens_per_stage: Vec<usize>,
    /// Query-key pairs spent on each stage over `steps_per_stage` steps.
    pub pairs_per_stage: Vec<usize>,
}

pub fn attention_cost_accounting<T: Scalar>(
    plan: &StagePlan<T>,
    frames: usize,
    steps_per_stage: usize,
) -> Result<AttentionCost> {
    let k = plan.num_stages();
    let tokens: Vec<usize> = (1..=k)
        .map(|i| plan.frames_at(i, frames))
        .collect::<Result<_>>()?;
    let pairs_sum: usize = tokens.iter().map(|f| f * f).sum();
    Ok(AttentionCost {
        avg_cost_ratio: pairs_sum as f64 / (k * frames * frames) as f64,
        pairs_per_stage: tokens.iter().map(|f| f * f * steps_per_stage).collect(),
        tokens_per_stage: tokens,
    })
}
