//! Property suites run by `pyramid verify`.

use rand::Rng;

use super::config::VerifySection;
use crate::alignment::{align_noise_with_assignment, brute_force_assignment, linear_sum_assignment, pairwise_sq_dist, CostMatrix};
use crate::error::Result;
use crate::sampler::{apply_renoise, transition_params, RenoiseMode};
use crate::schedules::{Schedule, ScheduleKind};
use crate::stagewise::{
    boundary_latents, fm_stage_sample, intermediate_latent, stage_epsilon, verify_constant_eps_quadrature,
    StageEnds, StagePlan,
};
use crate::toymodel::{finite_difference_check, ModelConfig, Prediction, ToyDenoiser};
use crate::videoops::{derive_seed, seeded_rng, SeededRng, Shape, VideoTensor};

pub const BOUNDARY_TOL: f64 = 1e-10;
pub const QUADRATURE_TOL: f64 = 1e-8;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const RENOISE_VAR_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    pub detail: String,
}

impl SuiteReport {
    fn new(name: &'static str, checks: usize, failures: usize, detail: String) -> Self {
        Self {
            name,
            passed: failures == 0 && checks > 0,
            checks,
            failures,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}/{} checks passed; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checks - self.failures,
            self.checks,
            self.detail
        )
    }
}

fn schedules() -> Vec<Schedule<f64>> {
    vec![Schedule::ddim_default(), Schedule::flow_matching()]
}

/// A plan with 1..=4 stages, random interior boundaries and either end mode.
fn random_plan(rng: &mut SeededRng, min_stages: usize, schedule: &Schedule<f64>) -> Result<StagePlan<f64>> {
    let k = rng.random_range(min_stages..=4);
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random_range(0.02..0.98)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 0.01);
    let mut b = vec![0.0];
    b.extend(cuts);
    b.push(1.0);
    let mode = if rng.random::<bool>() { StageEnds::Matched } else { StageEnds::Shared };
    StagePlan::from_boundaries(b)?.with_ends(mode, schedule)
}

fn random_clip(plan: &StagePlan<f64>, rng: &mut SeededRng) -> (VideoTensor<f64>, VideoTensor<f64>) {
    let frames = plan.frame_multiple() * rng.random_range(1..=3);
    let shape = Shape::new(frames, 1, rng.random_range(1..=3), rng.random_range(1..=3));
    let x0 = VideoTensor::<f64>::gaussian(shape, rng).map(|v| v.tanh());
    let eps = VideoTensor::gaussian(shape, rng);
    (x0, eps)
}

/// Closed-form path endpoints: exact at `t = s_k`, within tolerance at `t = e_k`,
/// and noise recovery from a pair constructed on a known path.
pub fn boundary_identity_suite(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut checks = 0;
    let mut failures = 0;
    let mut worst_end = 0.0f64;
    let mut worst_eps = 0.0f64;
    for (si, schedule) in schedules().iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(seed, si as u64));
        for _ in 0..trials {
            let plan = random_plan(&mut rng, 1, schedule)?;
            let k = rng.random_range(1..=plan.num_stages());
            let stage = plan.stage(k)?;
            let (x0, eps) = random_clip(&plan, &mut rng);
            let (xs, xe) = boundary_latents(schedule, &plan, k, &x0, &eps)?;
            let fm_top = schedule.kind() == ScheduleKind::FlowMatching && stage.start == 1.0;

            let (at_s, at_e) = if fm_top {
                // gamma_s = 0: the path is the straight line between the two latents
                let (at_e, _) = fm_stage_sample(&plan, k, &xs, &xe, stage.end)?;
                (xe.lin_comb(0.0, &xs, 1.0)?, at_e)
            } else {
                let eps_k = stage_epsilon(schedule, &plan, k, &xs, &xe)?;
                let at_s = intermediate_latent(schedule, &plan, k, &xs, &eps_k, stage.start)?;
                let at_e = intermediate_latent(schedule, &plan, k, &xs, &eps_k, stage.end)?;
                (at_s, at_e)
            };
            let ds = at_s.max_abs_diff(&xs)?;
            let de = at_e.max_abs_diff(&xe)?;
            worst_end = worst_end.max(de);
            checks += 2;
            failures += usize::from(ds != 0.0) + usize::from(!(de <= BOUNDARY_TOL));

            if !fm_top {
                let truth = VideoTensor::gaussian(xs.shape(), &mut rng);
                let xe_path = intermediate_latent(schedule, &plan, k, &xs, &truth, stage.end)?;
                let back = stage_epsilon(schedule, &plan, k, &xs, &xe_path)?;
                let d = back.max_abs_diff(&truth)?;
                worst_eps = worst_eps.max(d);
                checks += 1;
                failures += usize::from(!(d <= BOUNDARY_TOL));
            }
        }
    }
    Ok(SuiteReport::new(
        "boundary-identity",
        checks,
        failures,
        format!("max |x(e) - x_e| = {worst_end:.3e}, max eps recovery error = {worst_eps:.3e}"),
    ))
}

/// Constant-noise closed form against log-SNR quadrature of the exponential
/// integrator. Stages starting at `t = 1` are skipped since `lambda` is only
/// defined strictly inside the interval.
pub fn quadrature_suite(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut checks = 0;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for (si, schedule) in schedules().iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(seed, 100 + si as u64));
        let mut done = 0;
        while done < draws {
            let plan = random_plan(&mut rng, 2, schedule)?;
            let k = rng.random_range(1..plan.num_stages());
            let stage = plan.stage(k)?;
            let lo = stage.end.max(1e-3);
            let t = lo + rng.random::<f64>() * (stage.start - lo);
            if !(t > stage.end && t < stage.start) {
                continue;
            }
            let (x0, eps) = random_clip(&plan, &mut rng);
            let (xs, _) = boundary_latents(schedule, &plan, k, &x0, &eps)?;
            let eps_c = eps.down_temporal(stage.down_factor)?;
            let r = verify_constant_eps_quadrature(schedule, &plan, k, &xs, &eps_c, t)?;
            worst = worst.max(r);
            checks += 1;
            failures += usize::from(!(r <= QUADRATURE_TOL));
            done += 1;
        }
    }
    Ok(SuiteReport::new(
        "quadrature-oracle",
        checks,
        failures,
        format!("max residual = {worst:.3e}"),
    ))
}

/// Exact solver against exhaustive search for `n <= 8`, and alignment never
/// costing more than the identity pairing on Gaussian batches.
pub fn assignment_suite(trials: usize, batches: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded_rng(derive_seed(seed, 200));
    let mut checks = 0;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = rng.random_range(1..=8);
        let data: Vec<f64> = if trial % 3 == 0 {
            // small integers force ties
            (0..n * n).map(|_| rng.random_range(0..4) as f64).collect()
        } else {
            (0..n * n).map(|_| rng.random_range(-10.0..10.0)).collect()
        };
        let cost = CostMatrix::new(n, n, data)?;
        let fast = linear_sum_assignment(&cost)?;
        let brute = brute_force_assignment(&cost);
        let gap = (fast.total_cost - brute.total_cost).abs();
        worst = worst.max(gap);
        checks += 1;
        failures += usize::from(!(gap <= 1e-9 * (1.0 + brute.total_cost.abs())));
    }
    for _ in 0..batches {
        let n = rng.random_range(2..=16);
        let shape = Shape::new(4, 1, 2, 2);
        let xs: Vec<_> = (0..n).map(|_| VideoTensor::<f64>::gaussian(shape, &mut rng).map(|v| v.tanh())).collect();
        let es: Vec<_> = (0..n).map(|_| VideoTensor::gaussian(shape, &mut rng)).collect();
        let cost = pairwise_sq_dist(&xs, &es)?;
        let identity: Vec<usize> = (0..n).collect();
        let (aligned, result) = align_noise_with_assignment(&xs, &es)?;
        let aligned_cost: f64 = xs
            .iter()
            .zip(&aligned)
            .map(|(x, e)| x.data().iter().zip(e.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        checks += 1;
        let ok = result.total_cost <= cost.assignment_cost(&identity) + 1e-9
            && (aligned_cost - result.total_cost).abs() <= 1e-9 * (1.0 + aligned_cost);
        failures += usize::from(!ok);
    }
    Ok(SuiteReport::new(
        "assignment-brute-force",
        checks,
        failures,
        format!("max cost gap = {worst:.3e}"),
    ))
}

/// Central finite differences over every parameter of several randomized models.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut checks = 0;
    let mut failures = 0;
    let mut worst = 0.0f64;
    let variants = [
        (Prediction::Velocity, true, 3),
        (Prediction::Epsilon, true, 4),
        (Prediction::Velocity, false, 5),
        (Prediction::Epsilon, false, 2),
    ];
    for (i, &(prediction, positional, frames)) in variants.iter().enumerate() {
        let mut cfg = ModelConfig::new(6, 8, prediction);
        cfg.positional = positional;
        let s = derive_seed(seed, 300 + i as u64);
        let mut model = ToyDenoiser::<f64>::new(cfg, s);
        let mut rng = seeded_rng(s);
        for p in model.params_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        let x = VideoTensor::gaussian(Shape::new(frames, 1, 2, 3), &mut rng);
        let upstream = VideoTensor::<f64>::gaussian(x.shape(), &mut rng);
        let t = rng.random_range(0.05..0.95);
        let rep = finite_difference_check(&model, &x, t, upstream.data(), GRAD_STEP, GRAD_REL_TOL)?;
        checks += rep.checked;
        failures += rep.failed;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(SuiteReport::new(
        "gradient-check",
        checks,
        failures,
        format!("max relative error = {worst:.3e}"),
    ))
}

/// Statistics of the renoising jump on exactly-constructed end latents.
#[derive(Debug, Clone, PartialEq)]
pub struct RenoiseStats {
    pub kind: ScheduleKind,
    pub stage: usize,
    pub target_var: f64,
    /// Largest relative deviation of a per-frame variance from `sigma_s^2`.
    pub var_rel_error: f64,
    pub pair_corr: f64,
    /// Largest `|n_a + n_b|` over injected noise pairs.
    pub anti_corr_residual: f64,
    /// Largest `|mean - gamma_s * content|` in units of `sigma_s`.
    pub mean_error: f64,
}

/// Monte Carlo of one transition into stage `k - 1` with `draws` samples per
/// frame. The end latent is built exactly: `gamma_e c + sigma_e eps` for matched
/// ends, and the fixed point of the bare jump for shared ends. `scale_factor`
/// multiplies the renoising scale (fault injection).
pub fn renoise_statistics(
    schedule: &Schedule<f64>,
    plan: &StagePlan<f64>,
    k: usize,
    draws: usize,
    scale_factor: f64,
    seed: u64,
) -> Result<RenoiseStats> {
    let stage = plan.stage(k)?;
    let next = plan.stage(k - 1)?;
    let (gs, ss) = schedule.gamma_sigma(next.start)?;
    let (gain, exact) = transition_params(schedule, plan, k, RenoiseMode::On)?;
    let (c_in, n_in) = match plan.ends_mode() {
        StageEnds::Matched => schedule.gamma_sigma(stage.end)?,
        StageEnds::Shared => exact.matched_input_coefficients(gs, ss),
    };
    let mut faulty = exact;
    faulty.scale = exact.scale * scale_factor;

    let mut rng = seeded_rng(seed);
    let content = [0.7, -0.4];
    let mut sum = [0.0f64; 4];
    let mut sum_sq = [0.0f64; 4];
    let mut cross = [0.0f64; 2];
    let mut anti = 0.0f64;
    for _ in 0..draws {
        let noise = VideoTensor::gaussian(Shape::new(2, 1, 1, 1), &mut rng);
        let x_e = VideoTensor::scalar_frames(&content).lin_comb(c_in * gain, &noise, n_in * gain)?;
        let out = apply_renoise(&x_e, &faulty, &mut rng)?;
        let d = out.data();
        for f in 0..4 {
            let centred = d[f] - gs * content[f / 2];
            sum[f] += centred;
            sum_sq[f] += centred * centred;
        }
        for p in 0..2 {
            cross[p] += (d[2 * p] - gs * content[p]) * (d[2 * p + 1] - gs * content[p]);
            let base = faulty.scale * x_e.data()[p];
            anti = anti.max(((d[2 * p] - base) + (d[2 * p + 1] - base)).abs());
        }
    }
    let n = draws as f64;
    let target = ss * ss;
    let mut var_err = 0.0f64;
    let mut mean_err = 0.0f64;
    let mut var = [0.0; 4];
    for f in 0..4 {
        let m = sum[f] / n;
        var[f] = sum_sq[f] / n - m * m;
        var_err = var_err.max((var[f] - target).abs() / target);
        mean_err = mean_err.max(m.abs() / ss);
    }
    let corr = (0..2)
        .map(|p| {
            let (ma, mb) = (sum[2 * p] / n, sum[2 * p + 1] / n);
            (cross[p] / n - ma * mb) / (var[2 * p] * var[2 * p + 1]).sqrt()
        })
        .fold(0.0f64, |a, c| if c.abs() > a.abs() { c } else { a });
    Ok(RenoiseStats {
        kind: schedule.kind(),
        stage: k,
        target_var: target,
        var_rel_error: var_err,
        pair_corr: corr,
        anti_corr_residual: anti,
        mean_error: mean_err,
    })
}

/// Every stage transition of a uniform three-stage plan, both schedule kinds and
/// both stage-end modes.
pub fn renoise_covariance_suite(draws: usize, scale_factor: f64, seed: u64) -> Result<SuiteReport> {
    let mut checks = 0;
    let mut failures = 0;
    let mut worst_var = 0.0f64;
    let mut worst_corr = 0.0f64;
    let mut worst_anti = 0.0f64;
    // sampling error of a correlation is about 1 / sqrt(n); allow 5 standard errors
    let corr_tol = 5.0 / (draws as f64).sqrt();
    let modes = [StageEnds::Matched, StageEnds::Shared];
    for (si, schedule) in schedules().iter().enumerate() {
        for (mi, &mode) in modes.iter().enumerate() {
        let plan = StagePlan::uniform_for(schedule, 3)?.with_ends(mode, schedule)?;
        for k in 2..=3 {
            let st = renoise_statistics(
                schedule,
                &plan,
                k,
                draws,
                scale_factor,
                derive_seed(seed, 400 + 100 * si as u64 + 10 * mi as u64 + k as u64),
            )?;
            worst_var = worst_var.max(st.var_rel_error);
            worst_corr = worst_corr.max(st.pair_corr.abs());
            worst_anti = worst_anti.max(st.anti_corr_residual);
            checks += 4;
            failures += usize::from(!(st.var_rel_error <= RENOISE_VAR_TOL));
            failures += usize::from(!(st.pair_corr.abs() <= corr_tol));
            failures += usize::from(!(st.anti_corr_residual <= 1e-12));
            failures += usize::from(!(st.mean_error <= corr_tol));
        }
        }
    }
    Ok(SuiteReport::new(
        "renoise-covariance",
        checks,
        failures,
        format!(
            "max variance error = {:.3}%, max pair correlation = {worst_corr:.2e}, max anti-correlation residual = {worst_anti:.1e}",
            100.0 * worst_var
        ),
    ))
}

pub fn run_all(cfg: &VerifySection, seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        boundary_identity_suite(cfg.trials, seed)?,
        quadrature_suite(cfg.trials.div_ceil(10), seed)?,
        assignment_suite(cfg.trials, cfg.trials.div_ceil(10), seed)?,
        gradient_suite(seed)?,
        renoise_covariance_suite(cfg.renoise_draws, cfg.renoise_scale_factor, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(boundary_identity_suite(50, 1).unwrap().passed);
        assert!(quadrature_suite(10, 1).unwrap().passed);
        assert!(assignment_suite(50, 10, 1).unwrap().passed);
        assert!(gradient_suite(1).unwrap().passed);
    }

    #[test]
    fn renoise_suite_detects_scale_fault() {
        let ok = renoise_covariance_suite(20_000, 1.0, 2).unwrap();
        assert!(ok.passed, "{}", ok.line());
        let bad = renoise_covariance_suite(20_000, 1.05, 2).unwrap();
        assert!(!bad.passed, "{}", bad.line());
    }
}
