//! Experiment plumbing shared by the CLI commands: building schedules, plans and
//! models from a config, training with convergence tracking, sampling and scoring.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{energy_distance, per_frame_mse_to_nearest, ConvergenceTracker, EvalReport};
use crate::sampler::{attention_cost_accounting, sample_video, RenoiseMode, SamplerConfig};
use crate::schedules::{Schedule, ScheduleKind, DDIM_BETA_END, DDIM_BETA_START};
use crate::stagewise::StagePlan;
use crate::synthdata::{generate_dataset, Dataset};
use crate::toymodel::{
    train, AdamConfig, ModelConfig, Prediction, ToyDenoiser, TrainBudget, TrainConfig, TrainOutcome,
};
use crate::videoops::{derive_seed, Shape, VideoTensor};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("PYRAMID_GIT_DESCRIBE"));

const TAG_MODEL: u64 = 0x6d6f_6465_6c00;
const TAG_TRAIN: u64 = 0x7472_6169_6e00;
const TAG_SAMPLE: u64 = 0x7361_6d70_6c65;
const TAG_TRACK: u64 = 0x7472_6163_6b00;

pub fn build_schedule(cfg: &RunConfig) -> Result<Schedule<f64>> {
    match cfg.schedule.kind {
        ScheduleKind::FlowMatching => Ok(Schedule::flow_matching()),
        ScheduleKind::Ddim => Schedule::ddim_linear(cfg.schedule.ddim_steps, DDIM_BETA_START, DDIM_BETA_END),
    }
}

pub fn build_plan(cfg: &RunConfig, schedule: &Schedule<f64>) -> Result<StagePlan<f64>> {
    StagePlan::uniform_for(schedule, cfg.schedule.stages)?.with_ends(cfg.schedule.ends, schedule)
}

pub fn prediction_for(kind: ScheduleKind) -> Prediction {
    match kind {
        ScheduleKind::Ddim => Prediction::Epsilon,
        ScheduleKind::FlowMatching => Prediction::Velocity,
    }
}

pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset<f64>> {
    generate_dataset(&cfg.data.clip_spec(), cfg.data.clips, cfg.data.seed)
}

pub fn fresh_model(cfg: &RunConfig) -> ToyDenoiser<f64> {
    let spec = cfg.data.clip_spec();
    let mut mc = ModelConfig::new(
        spec.shape().frame_len(),
        cfg.model.width,
        prediction_for(cfg.schedule.kind),
    );
    mc.positional = cfg.model.positional;
    let seed = cfg
        .model
        .init_seed
        .unwrap_or_else(|| derive_seed(cfg.run.seed, TAG_MODEL));
    ToyDenoiser::new(mc, seed)
}

pub fn train_config(cfg: &RunConfig, budget_override: Option<f64>, dump_dir: Option<PathBuf>) -> TrainConfig {
    let t = &cfg.train;
    let budget = match budget_override.or(t.budget_seconds) {
        Some(s) => TrainBudget::Seconds(s),
        None => TrainBudget::Steps(t.steps),
    };
    TrainConfig {
        batch_size: t.batch_size,
        adam: AdamConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.adam_eps,
        },
        budget,
        seed: derive_seed(cfg.run.seed, TAG_TRAIN),
        align_noise: t.align_noise,
        eval_every: t.eval_every,
        ema_decay: t.ema_decay,
        dump_dir,
    }
}

/// Generates `n` clips; clip `i` uses a seed derived from `(seed, i)`, so the
/// result does not depend on thread count. Returns the clips and seconds per clip.
#[allow(clippy::too_many_arguments)]
pub fn generate_clips(
    model: &ToyDenoiser<f64>,
    schedule: &Schedule<f64>,
    plan: &StagePlan<f64>,
    shape: Shape,
    n: usize,
    steps_total: usize,
    renoise: bool,
    seed: u64,
) -> Result<(Vec<VideoTensor<f64>>, f64)> {
    let k = plan.num_stages();
    if steps_total == 0 || steps_total % k != 0 {
        return Err(Error::Config(format!(
            "steps_total = {steps_total} is not a positive multiple of {k} stages"
        )));
    }
    let started = Instant::now();
    let clips = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sc = SamplerConfig::new(plan.clone(), steps_total / k, derive_seed(seed, i as u64));
            sc.renoise = if renoise { RenoiseMode::On } else { RenoiseMode::Off };
            sample_video(schedule, model, &sc, shape).map(|o| o.video)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_clip = started.elapsed().as_secs_f64() / n.max(1) as f64;
    Ok((clips, per_clip))
}

pub fn sample_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.run.seed, TAG_SAMPLE)
}

/// Energy distance of `n` generated clips against the first `n` held-out clips.
pub fn score_model(
    cfg: &RunConfig,
    model: &ToyDenoiser<f64>,
    held_out: &[VideoTensor<f64>],
    n: usize,
    seed: u64,
) -> Result<f64> {
    let schedule = build_schedule(cfg)?;
    let plan = build_plan(cfg, &schedule)?;
    let reference = &held_out[..n.min(held_out.len())];
    let (gen, _) = generate_clips(
        model,
        &schedule,
        &plan,
        cfg.data.clip_spec().shape(),
        n,
        cfg.sample.steps_total,
        cfg.sample.renoise,
        seed,
    )?;
    energy_distance(&gen, reference)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: ToyDenoiser<f64>,
    pub outcome: TrainOutcome<f64>,
    pub final_energy_distance: Option<f64>,
}

/// Trains per `cfg`. With an output directory, writes `model.ckpt`,
/// `convergence.csv` and `run_manifest.txt` there.
pub fn run_train(
    cfg: &RunConfig,
    config_text: &str,
    out: Option<&Path>,
    budget_override: Option<f64>,
) -> Result<TrainRun> {
    let schedule = build_schedule(cfg)?;
    let plan = build_plan(cfg, &schedule)?;
    let dataset = build_dataset(cfg)?;
    let train_set = dataset.train();
    let held_out = dataset.held_out();
    if held_out.is_empty() && cfg.train.eval_every > 0 {
        return Err(Error::Config("convergence tracking needs at least two clips".into()));
    }
    let mut model = fresh_model(cfg);
    let tc = train_config(cfg, budget_override, out.map(Path::to_path_buf));

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_manifest(dir, "train", cfg, config_text, &tc)?;
    }
    let mut tracker = match out {
        Some(dir) if cfg.train.eval_every > 0 => Some(ConvergenceTracker::create(&dir.join("convergence.csv"))?),
        _ => None,
    };
    let track_seed = derive_seed(cfg.run.seed, TAG_TRACK);
    let eval_clips = cfg.train.eval_clips;
    let mut last_ed = None;
    let mut hook = |step: u64, wall: f64, loss: f64, m: &ToyDenoiser<f64>| -> Result<()> {
        let ed = score_model(cfg, m, &held_out, eval_clips, track_seed)?;
        last_ed = Some((step, ed));
        if let Some(t) = tracker.as_mut() {
            t.record(step, wall, loss, ed)?;
        }
        Ok(())
    };
    let outcome = if cfg.train.eval_every > 0 {
        train(&mut model, &train_set, &schedule, &plan, &tc, Some(&mut hook))?
    } else {
        train(&mut model, &train_set, &schedule, &plan, &tc, None)?
    };
    let final_step = outcome.state.step;
    let mut final_ed = last_ed.filter(|(s, _)| *s == final_step).map(|(_, e)| e);
    if cfg.train.eval_every > 0 && final_ed.is_none() && final_step > 0 {
        let ed = score_model(cfg, &model, &held_out, eval_clips, track_seed)?;
        let loss = outcome.logs.last().map_or(f64::NAN, |l| l.loss);
        if let Some(t) = tracker.as_mut() {
            t.record(final_step, outcome.train_seconds, loss, ed)?;
        }
        final_ed = Some(ed);
    }

    if let Some(dir) = out {
        let meta = checkpoint_metadata(cfg, &tc, final_step);
        model.save_checkpoint(&dir.join("model.ckpt"), &meta)?;
    }
    Ok(TrainRun {
        model,
        outcome,
        final_energy_distance: final_ed,
    })
}

fn checkpoint_metadata(cfg: &RunConfig, tc: &TrainConfig, steps: u64) -> Vec<(String, String)> {
    vec![
        ("version".into(), VERSION.into()),
        ("schedule".into(), cfg.schedule.kind.to_string()),
        ("stages".into(), cfg.schedule.stages.to_string()),
        ("run_seed".into(), cfg.run.seed.to_string()),
        ("train_seed".into(), tc.seed.to_string()),
        ("steps".into(), steps.to_string()),
    ]
}

/// Writes `run_manifest.txt`: version, command, derived seeds and the verbatim config.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    config_text: &str,
    tc: &TrainConfig,
) -> Result<()> {
    let mut s = String::new();
    s.push_str(&format!("version = {VERSION}\n"));
    s.push_str(&format!("command = {command}\n"));
    s.push_str(&format!("run_seed = {}\n", cfg.run.seed));
    s.push_str(&format!("data_seed = {}\n", cfg.data.seed));
    s.push_str(&format!(
        "model_seed = {}\n",
        cfg.model
            .init_seed
            .unwrap_or_else(|| derive_seed(cfg.run.seed, TAG_MODEL))
    ));
    s.push_str(&format!("train_seed = {}\n", tc.seed));
    s.push_str(&format!("sample_seed = {}\n", sample_seed(cfg)));
    s.push_str(&format!("track_seed = {}\n", derive_seed(cfg.run.seed, TAG_TRACK)));
    s.push_str(&format!("threads = {}\n", rayon::current_num_threads()));
    s.push_str("--- config ---\n");
    s.push_str(config_text);
    if !config_text.ends_with('\n') {
        s.push('\n');
    }
    std::fs::write(dir.join("run_manifest.txt"), s)?;
    Ok(())
}

/// Trains, samples and scores one arm of a comparison.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub label: String,
    pub stages: usize,
    pub report: EvalReport,
    pub train_steps: u64,
    /// Attention pairs per training sample, as logged.
    pub pairs_per_sample: f64,
    pub final_loss: f64,
}

pub fn run_arm(
    label: &str,
    cfg: &RunConfig,
    config_text: &str,
    out: Option<&Path>,
    budget_seconds: Option<f64>,
) -> Result<ArmResult> {
    let run = run_train(cfg, config_text, out, budget_seconds)?;
    let report = evaluate(cfg, &run.model, run.outcome.train_seconds)?;
    let samples = run.outcome.samples_seen(cfg.train.batch_size).max(1);
    Ok(ArmResult {
        label: label.to_string(),
        stages: cfg.schedule.stages,
        report,
        train_steps: run.outcome.state.step,
        pairs_per_sample: run.outcome.total_attention_pairs() as f64 / samples as f64,
        final_loss: run.outcome.logs.last().map_or(f64::NAN, |l| l.loss),
    })
}

/// Scores a trained model on `eval.clips` generated vs held-out clips.
pub fn evaluate(cfg: &RunConfig, model: &ToyDenoiser<f64>, train_seconds: f64) -> Result<EvalReport> {
    let schedule = build_schedule(cfg)?;
    let plan = build_plan(cfg, &schedule)?;
    let dataset = build_dataset(cfg)?;
    let held_out = dataset.held_out();
    if held_out.is_empty() {
        return Err(Error::Config("evaluation needs at least two clips".into()));
    }
    let n = cfg.eval.clips;
    let reference = &held_out[..n.min(held_out.len())];
    let (gen, per_clip) = generate_clips(
        model,
        &schedule,
        &plan,
        cfg.data.clip_spec().shape(),
        n,
        cfg.sample.steps_total,
        cfg.sample.renoise,
        sample_seed(cfg),
    )?;
    let steps = cfg.sample.steps_total / plan.num_stages();
    let cost = attention_cost_accounting(&plan, cfg.data.frames, steps)?;
    Ok(EvalReport {
        energy_distance: energy_distance(&gen, reference)?,
        per_frame_mse_to_nearest: per_frame_mse_to_nearest(&gen, reference)?,
        wall_time_train: train_seconds,
        wall_time_sample: per_clip,
        token_pair_ratio: cost.avg_cost_ratio,
    })
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub a: ArmResult,
    pub b: ArmResult,
    pub budget_seconds: Option<f64>,
}

impl CompareReport {
    pub fn energy_ratio(&self) -> f64 {
        self.a.report.energy_distance / self.b.report.energy_distance
    }

    pub fn latency_ratio(&self) -> f64 {
        self.a.report.wall_time_sample / self.b.report.wall_time_sample
    }

    pub fn measured_pair_ratio(&self) -> f64 {
        self.a.pairs_per_sample / self.b.pairs_per_sample
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("version = {VERSION}\n"));
        match self.budget_seconds {
            Some(b) => s.push_str(&format!("budget_seconds = {b}\n")),
            None => s.push_str("budget = steps\n"),
        }
        for (tag, arm) in [("a", &self.a), ("b", &self.b)] {
            s.push_str(&format!("[{tag}] label = {}\n", arm.label));
            s.push_str(&format!("[{tag}] stages = {}\n", arm.stages));
            s.push_str(&format!("[{tag}] train_steps = {}\n", arm.train_steps));
            s.push_str(&format!("[{tag}] final_loss = {}\n", arm.final_loss));
            s.push_str(&format!("[{tag}] pairs_per_sample = {}\n", arm.pairs_per_sample));
            for line in arm.report.to_lines().lines() {
                s.push_str(&format!("[{tag}] {line}\n"));
            }
        }
        s.push_str(&format!("energy_ratio = {}\n", self.energy_ratio()));
        s.push_str(&format!("measured_pair_ratio = {}\n", self.measured_pair_ratio()));
        s.push_str(&format!("latency_ratio = {}\n", self.latency_ratio()));
        s
    }
}

/// Runs both compare arms sequentially under the same budget.
pub fn run_compare(cfg: &RunConfig, config_text: &str, out: Option<&Path>) -> Result<CompareReport> {
    let budget = cfg.compare.budget_seconds;
    let mut arms = Vec::new();
    for (tag, ov) in [("a", &cfg.compare.a), ("b", &cfg.compare.b)] {
        let arm_cfg = cfg.with_overrides(ov);
        arm_cfg.validate()?;
        let label = ov.label.clone().unwrap_or_else(|| tag.to_string());
        let dir = out.map(|d| d.join(format!("arm_{tag}")));
        arms.push(run_arm(&label, &arm_cfg, config_text, dir.as_deref(), budget)?);
    }
    let b = arms.pop().unwrap();
    let a = arms.pop().unwrap();
    let report = CompareReport {
        a,
        b,
        budget_seconds: budget,
    };
    if let Some(dir) = out {
        std::fs::write(dir.join("compare_report.txt"), report.to_text())?;
    }
    Ok(report)
}
