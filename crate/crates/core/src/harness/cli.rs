//! `pyramid train|sample|eval|verify|compare --config <path> [--out <dir>] [--seed <u64>]`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::RunConfig;
use super::runner::{self, VERSION};
use super::verify;
use crate::error::{Error, Result};
use crate::sampler::{sample_video, RenoiseMode, SamplerConfig};
use crate::toymodel::ToyDenoiser;
use crate::videoops::derive_seed;

/// Overrides the worker thread count.
pub const THREADS_ENV: &str = "PYRAMID_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pyramid", version = VERSION, about = "Stage-wise temporal-pyramid diffusion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint, convergence CSV and manifest.
    Train(CommonArgs),
    /// Generate clips from a checkpoint as raw dumps.
    Sample(CommonArgs),
    /// Score a checkpoint against held-out clips.
    Eval(CommonArgs),
    /// Run the numerical property suites.
    Verify(CommonArgs),
    /// Train and score two arms under one budget.
    Compare(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Verify(_) => "verify",
            Command::Compare(_) => "compare",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Train(a)
            | Command::Sample(a)
            | Command::Eval(a)
            | Command::Verify(a)
            | Command::Compare(a) => a,
        }
    }
}

/// Applies the thread override once per process; later calls are no-ops.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} = `{v}` is not a thread count")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command and returns its human-readable summary.
pub fn run(cli: &Cli) -> Result<String> {
    init_threads()?;
    let args = cli.command.args();
    let (mut cfg, text) = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.run.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set run.out".into()))?;
    std::fs::create_dir_all(&out)?;
    match &cli.command {
        Command::Train(_) => cmd_train(&cfg, &text, &out),
        Command::Sample(_) => cmd_sample(&cfg, &text, &out),
        Command::Eval(_) => cmd_eval(&cfg, &text, &out),
        Command::Verify(_) => cmd_verify(&cfg, &text, &out),
        Command::Compare(_) => cmd_compare(&cfg, &text, &out),
    }
    .map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{} ({}): {io}", cli.command.name(), out.display()),
        )),
        other => other,
    })
}

pub fn cmd_train(cfg: &RunConfig, text: &str, out: &Path) -> Result<String> {
    let run = runner::run_train(cfg, text, Some(out), None)?;
    let mut s = format!(
        "trained {} steps in {:.2}s; final loss {:.6e}\n",
        run.outcome.state.step,
        run.outcome.train_seconds,
        run.outcome.logs.last().map_or(f64::NAN, |l| l.loss)
    );
    if let Some(ed) = run.final_energy_distance {
        s.push_str(&format!("energy_distance = {ed}\n"));
    }
    s.push_str(&format!("checkpoint: {}\n", out.join("model.ckpt").display()));
    Ok(s)
}

fn load_model(cfg: &RunConfig, out: &Path) -> Result<ToyDenoiser<f64>> {
    let path = cfg
        .sample
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("model.ckpt"));
    let (model, _) = ToyDenoiser::<f64>::load_checkpoint(&path)?;
    let expect = runner::prediction_for(cfg.schedule.kind);
    if model.config().prediction != expect {
        return Err(Error::Config(format!(
            "checkpoint predicts {:?} but schedule `{}` needs {:?}",
            model.config().prediction,
            cfg.schedule.kind,
            expect
        )));
    }
    if model.config().pixels != cfg.data.clip_spec().shape().frame_len() {
        return Err(Error::Config("checkpoint frame size does not match [data]".into()));
    }
    Ok(model)
}

pub fn cmd_sample(cfg: &RunConfig, text: &str, out: &Path) -> Result<String> {
    let model = load_model(cfg, out)?;
    let schedule = runner::build_schedule(cfg)?;
    let plan = runner::build_plan(cfg, &schedule)?;
    let shape = cfg.data.clip_spec().shape();
    let dir = out.join("samples");
    std::fs::create_dir_all(&dir)?;
    runner::write_manifest(out, "sample", cfg, text, &runner::train_config(cfg, None, None))?;
    let base = runner::sample_seed(cfg);
    let k = plan.num_stages();
    let mut index = std::io::BufWriter::new(std::fs::File::create(dir.join("index.txt"))?);
    for i in 0..cfg.sample.clips {
        let seed = derive_seed(base, i as u64);
        let mut sc = SamplerConfig::new(plan.clone(), cfg.sample.steps_total / k, seed);
        sc.renoise = if cfg.sample.renoise { RenoiseMode::On } else { RenoiseMode::Off };
        sc.record_snapshots = cfg.sample.snapshots;
        let o = sample_video(&schedule, &model, &sc, shape)?;
        let name = format!("sample_{i:05}.raw");
        o.video.save_raw(&dir.join(&name))?;
        writeln!(index, "{name} seed={seed}")?;
        for (j, (stage, t, x)) in o.snapshots.iter().enumerate() {
            let snap = format!("sample_{i:05}_step_{j:03}.raw");
            x.save_raw(&dir.join(&snap))?;
            writeln!(index, "{snap} stage={stage} t={t}")?;
        }
    }
    index.flush()?;
    Ok(format!("wrote {} clips to {}\n", cfg.sample.clips, dir.display()))
}

pub fn cmd_eval(cfg: &RunConfig, text: &str, out: &Path) -> Result<String> {
    let model = load_model(cfg, out)?;
    runner::write_manifest(out, "eval", cfg, text, &runner::train_config(cfg, None, None))?;
    let report = runner::evaluate(cfg, &model, 0.0)?;
    let lines = report.to_lines();
    std::fs::write(out.join("eval_report.txt"), &lines)?;
    Ok(lines)
}

pub fn cmd_verify(cfg: &RunConfig, text: &str, out: &Path) -> Result<String> {
    runner::write_manifest(out, "verify", cfg, text, &runner::train_config(cfg, None, None))?;
    let reports = verify::run_all(&cfg.verify, cfg.run.seed)?;
    let mut s: String = reports.iter().map(|r| r.line() + "\n").collect();
    std::fs::write(out.join("verify_report.txt"), &s)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        s.push_str("all suites passed\n");
        Ok(s)
    } else {
        print!("{s}");
        Err(Error::Verification(format!("failing suites: {}", failed.join(", "))))
    }
}

pub fn cmd_compare(cfg: &RunConfig, text: &str, out: &Path) -> Result<String> {
    runner::write_manifest(out, "compare", cfg, text, &runner::train_config(cfg, None, None))?;
    Ok(runner::run_compare(cfg, text, Some(out))?.to_text())
}
