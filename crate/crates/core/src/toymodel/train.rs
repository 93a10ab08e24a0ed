//! The stage-wise training loop.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::adam::{adam_step, AdamConfig, TrainState};
use super::ToyDenoiser;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedules::Schedule;
use crate::stagewise::{make_training_batch, BatchOptions, StagePlan};
use crate::videoops::{seeded_rng, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainBudget {
    Steps(u64),
    /// Training wall-clock seconds; evaluation time is not counted.
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub budget: TrainBudget,
    pub seed: u64,
    pub align_noise: bool,
    /// Evaluate every `eval_every` steps; `0` disables evaluation.
    pub eval_every: u64,
    /// Decay of the exponential moving average of the weights; `0` disables it.
    pub ema_decay: f64,
    /// Where to write a parameter dump if the loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            adam: AdamConfig::default(),
            budget: TrainBudget::Steps(1000),
            seed: 0,
            align_noise: true,
            eval_every: 0,
            ema_decay: 0.999,
            dump_dir: None,
        }
    }
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLog {
    pub step: u64,
    pub loss: f64,
    pub wall_seconds: f64,
    /// Query-key pairs evaluated by the attention layer this step.
    pub attention_pairs: u64,
    /// Frame tokens processed this step.
    pub tokens: u64,
}

/// Called every `eval_every` steps with `(step, train_seconds, loss, model)`;
/// the model carries the averaged weights when averaging is on.
pub trait EvalHook<T: Scalar> {
    fn on_eval(&mut self, step: u64, wall_seconds: f64, loss: f64, model: &ToyDenoiser<T>) -> Result<()>;
}

impl<T: Scalar, F> EvalHook<T> for F
where
    F: FnMut(u64, f64, f64, &ToyDenoiser<T>) -> Result<()>,
{
    fn on_eval(&mut self, step: u64, wall_seconds: f64, loss: f64, model: &ToyDenoiser<T>) -> Result<()> {
        self(step, wall_seconds, loss, model)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub state: TrainState<T>,
    /// Last optimizer iterate. The trained model itself holds the averaged
    /// weights when `ema_decay > 0`, and this same vector otherwise.
    pub raw_params: Vec<T>,
    pub logs: Vec<BatchLog>,
    pub train_seconds: f64,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn total_attention_pairs(&self) -> u64 {
        self.logs.iter().map(|l| l.attention_pairs).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.logs.iter().map(|l| l.tokens).sum()
    }

    pub fn samples_seen(&self, batch_size: usize) -> u64 {
        self.logs.len() as u64 * batch_size as u64
    }
}

fn ema_update<T: Scalar>(ema: &mut [T], params: &[T], decay: f64, step: u64) {
    let n = step as f64;
    let d = T::lit(decay.min((1.0 + n) / (10.0 + n)));
    for (e, &p) in ema.iter_mut().zip(params) {
        *e = d * *e + (T::one() - d) * p;
    }
}

/// Runs stage-wise training of `model` on `dataset` until the budget is spent.
pub fn train<T: Scalar>(
    model: &mut ToyDenoiser<T>,
    dataset: &[VideoTensor<T>],
    schedule: &Schedule<T>,
    plan: &StagePlan<T>,
    config: &TrainConfig,
    mut hook: Option<&mut dyn EvalHook<T>>,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.ema_decay) {
        return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
    }
    let mut ema = (config.ema_decay > 0.0).then(|| model.params().to_vec());
    let mut rng = seeded_rng(config.seed);
    let mut state = TrainState::new(model.num_params());
    let mut logs = Vec::new();
    let mut train_seconds = 0.0f64;
    let options = BatchOptions {
        align_noise: config.align_noise,
    };

    loop {
        let done = match config.budget {
            TrainBudget::Steps(n) => state.step >= n,
            TrainBudget::Seconds(s) => train_seconds >= s,
        };
        if done {
            break;
        }
        let started = Instant::now();
        let clips: Vec<VideoTensor<T>> = (0..config.batch_size)
            .map(|_| dataset[rng.random_range(0..dataset.len())].clone())
            .collect();
        let batch = make_training_batch(schedule, plan, &clips, &mut rng, options)?;

        let per_sample: Vec<(T, Vec<T>)> = batch
            .par_iter()
            .map(|s| model.loss_and_grad(&s.x_t, plan.model_time(s.k, s.t)?, &s.target))
            .collect::<Result<_>>()?;

        let scale = T::one() / T::from_usize(batch.len()).unwrap();
        let mut grad = vec![T::zero(); model.num_params()];
        let mut loss = T::zero();
        for (l, g) in &per_sample {
            loss += *l;
            for (a, &b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss = loss * scale;
        grad.iter_mut().for_each(|g| *g = *g * scale);

        if !loss.is_finite() {
            let mut msg = format!("non-finite loss at step {}", state.step + 1);
            if let Some(dir) = &config.dump_dir {
                let path = dir.join("nan_dump.ckpt");
                model.save_checkpoint(&path, &[("step".into(), (state.step + 1).to_string())])?;
                msg.push_str(&format!("; parameters dumped to {}", path.display()));
            }
            return Err(Error::Numerical(msg));
        }

        adam_step(&mut state, model.params_mut(), &grad, &config.adam)?;
        if let Some(e) = ema.as_mut() {
            ema_update(e, model.params(), config.ema_decay, state.step);
        }
        train_seconds += started.elapsed().as_secs_f64();
        state.loss_history.push(loss);

        let frames: Vec<u64> = batch.iter().map(|s| s.x_t.frames() as u64).collect();
        logs.push(BatchLog {
            step: state.step,
            loss: loss.as_f64(),
            wall_seconds: train_seconds,
            attention_pairs: frames.iter().map(|f| f * f).sum(),
            tokens: frames.iter().sum(),
        });

        if config.eval_every > 0 && state.step % config.eval_every == 0 {
            if let Some(h) = hook.as_deref_mut() {
                match &ema {
                    Some(e) => {
                        let mut averaged = model.clone();
                        averaged.params_mut().copy_from_slice(e);
                        h.on_eval(state.step, train_seconds, loss.as_f64(), &averaged)?;
                    }
                    None => h.on_eval(state.step, train_seconds, loss.as_f64(), model)?,
                }
            }
        }
    }
    let raw_params = model.params().to_vec();
    if let Some(e) = ema {
        model.params_mut().copy_from_slice(&e);
    }
    Ok(TrainOutcome {
        state,
        raw_params,
        logs,
        train_seconds,
    })
}
