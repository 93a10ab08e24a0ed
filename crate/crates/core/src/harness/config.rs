//! Run configuration: one TOML file with `[run]`, `[schedule]`, `[data]`,
//! `[model]`, `[train]`, `[sample]`, `[eval]`, `[verify]` and `[compare]` tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedules::ScheduleKind;
use crate::stagewise::StageEnds;
use crate::synthdata::{ClipSpec, MotionFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, out: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub stages: usize,
    pub boundaries: BoundaryMode,
    pub ends: StageEnds,
    /// DDIM grid length.
    pub ddim_steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::FlowMatching,
            stages: 3,
            boundaries: BoundaryMode::Uniform,
            ends: StageEnds::Matched,
            ddim_steps: crate::schedules::DDIM_DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub family: MotionFamily,
    pub velocity: [f64; 2],
    pub intensity: [f64; 2],
    pub clips: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = ClipSpec::default();
        Self {
            frames: s.frames,
            channels: s.channels,
            height: s.height,
            width: s.width,
            family: s.family,
            velocity: [s.velocity.0, s.velocity.1],
            intensity: [s.intensity.0, s.intensity.1],
            clips: 2000,
            seed: 1,
        }
    }
}

impl DataSection {
    pub fn clip_spec(&self) -> ClipSpec {
        ClipSpec {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            family: self.family,
            velocity: (self.velocity[0], self.velocity[1]),
            intensity: (self.intensity[0], self.intensity[1]),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub positional: bool,
    pub init_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: 32,
            positional: true,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Step budget; ignored when `budget_seconds` is set.
    pub steps: u64,
    pub budget_seconds: Option<f64>,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub align_noise: bool,
    /// Weight averaging decay used for evaluation and the checkpoint; `0` disables it.
    pub ema_decay: f64,
    /// Convergence-curve cadence in steps; `0` disables it.
    pub eval_every: u64,
    /// Generated clips per convergence point.
    pub eval_clips: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            budget_seconds: None,
            batch_size: 12,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            align_noise: true,
            ema_decay: 0.999,
            eval_every: 0,
            eval_clips: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    /// Total solver steps, split evenly across stages.
    pub steps_total: usize,
    pub renoise: bool,
    pub clips: usize,
    /// Checkpoint to sample from; defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub snapshots: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            steps_total: 30,
            renoise: true,
            clips: 16,
            checkpoint: None,
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub clips: usize,
    pub permutations: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            clips: 256,
            permutations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub trials: usize,
    pub renoise_draws: usize,
    /// Multiplies the renoising scale; anything but 1 injects a fault.
    pub renoise_scale_factor: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trials: 1000,
            renoise_draws: 100_000,
            renoise_scale_factor: 1.0,
        }
    }
}

/// Per-arm overrides for `compare`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmOverrides {
    pub label: Option<String>,
    pub kind: Option<ScheduleKind>,
    pub stages: Option<usize>,
    pub ends: Option<StageEnds>,
    pub align_noise: Option<bool>,
    pub renoise: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Equal wall-clock training budget per arm; falls back to `train.steps`.
    pub budget_seconds: Option<f64>,
    pub a: ArmOverrides,
    pub b: ArmOverrides,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            budget_seconds: None,
            a: ArmOverrides {
                label: Some("stagewise".into()),
                stages: Some(3),
                ..ArmOverrides::default()
            },
            b: ArmOverrides {
                label: Some("vanilla".into()),
                stages: Some(1),
                ..ArmOverrides::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub schedule: ScheduleSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub verify: VerifySection,
    pub compare: CompareSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, returning it with its verbatim text.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_run()?;
        for arm in [&self.compare.a, &self.compare.b] {
            self.with_overrides(arm)
                .validate_run()
                .map_err(|e| Error::Config(format!("compare arm: {e}")))?;
        }
        Ok(())
    }

    fn validate_run(&self) -> Result<()> {
        let k = self.schedule.stages;
        if k == 0 {
            return Err(Error::Config("schedule.stages must be at least 1".into()));
        }
        if k > 16 {
            return Err(Error::Config("schedule.stages is unreasonably large".into()));
        }
        if self.data.frames % (1 << (k - 1)) != 0 {
            return Err(Error::Config(format!(
                "data.frames = {} must be divisible by 2^(stages - 1) = {}",
                self.data.frames,
                1 << (k - 1)
            )));
        }
        if self.data.clips == 0 {
            return Err(Error::Config("data.clips must be positive".into()));
        }
        self.data.clip_spec().validate()?;
        if self.model.width < 2 || self.model.width % 2 != 0 {
            return Err(Error::Config("model.width must be an even number >= 2".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.train.ema_decay) {
            return Err(Error::Config("train.ema_decay must lie in [0, 1)".into()));
        }
        if let Some(s) = self.train.budget_seconds {
            if !(s > 0.0) {
                return Err(Error::Config("train.budget_seconds must be positive".into()));
            }
        }
        if self.sample.steps_total == 0 || self.sample.steps_total % k != 0 {
            return Err(Error::Config(format!(
                "sample.steps_total = {} must be a positive multiple of stages = {k}",
                self.sample.steps_total
            )));
        }
        Ok(())
    }

    /// This config with one compare arm's overrides applied.
    pub fn with_overrides(&self, arm: &ArmOverrides) -> Self {
        let mut c = self.clone();
        if let Some(k) = arm.kind {
            c.schedule.kind = k;
        }
        if let Some(s) = arm.stages {
            c.schedule.stages = s;
            // keep the per-stage split even for the arm's stage count
            let per = (c.sample.steps_total / s).max(1);
            c.sample.steps_total = per * s;
        }
        if let Some(e) = arm.ends {
            c.schedule.ends = e;
        }
        if let Some(a) = arm.align_noise {
            c.train.align_noise = a;
        }
        if let Some(r) = arm.renoise {
            c.sample.renoise = r;
        }
        if let Some(s) = arm.seed {
            c.run.seed = s;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn parses_sections() {
        let c = RunConfig::parse(
            r#"
[run]
seed = 9
[schedule]
kind = "ddim"
stages = 2
[train]
steps = 10
align_noise = false
[compare]
budget_seconds = 5.0
[compare.a]
stages = 2
"#,
        )
        .unwrap();
        assert_eq!(c.run.seed, 9);
        assert_eq!(c.schedule.kind, ScheduleKind::Ddim);
        assert!(!c.train.align_noise);
        assert_eq!(c.compare.a.stages, Some(2));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(RunConfig::parse("[schedule]\nstages = 0"), Err(Error::Config(_))));
        assert!(RunConfig::parse("[data]\nframes = 6").is_err());
        assert!(RunConfig::parse("[sample]\nsteps_total = 31").is_err());
        assert!(RunConfig::parse("[train]\nbogus = 1").is_err());
        assert!(RunConfig::parse("[schedule]\nkind = \"vp\"").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::default();
        let v = c.with_overrides(&ArmOverrides {
            stages: Some(1),
            align_noise: Some(false),
            ..ArmOverrides::default()
        });
        assert_eq!(v.schedule.stages, 1);
        assert_eq!(v.sample.steps_total, 30);
        assert!(!v.train.align_noise);
    }
}
