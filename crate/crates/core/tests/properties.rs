use proptest::prelude::*;

use pyramid::alignment::{brute_force_assignment, linear_sum_assignment, CostMatrix};
use pyramid::metrics::{energy_distance, energy_permutation_test};
use pyramid::sampler::{apply_renoise, ddim_step, sample_video, RenoiseParams, SamplerConfig};
use pyramid::schedules::Schedule;
use pyramid::stagewise::{boundary_latents, intermediate_latent, stage_epsilon, StageEnds, StagePlan};
use pyramid::synthdata::{generate_dataset, ClipSpec};
use pyramid::toymodel::{train, ModelConfig, Prediction, ToyDenoiser, TrainBudget, TrainConfig};
use pyramid::videoops::{seeded_rng, Shape, VideoTensor};

fn tensor(frames: usize, vals: &[f64]) -> VideoTensor<f64> {
    let px = vals.len() / frames;
    VideoTensor::new(vals[..frames * px].to_vec(), Shape::new(frames, 1, 1, px)).unwrap()
}

proptest! {
    #[test]
    fn up_of_down_restores_duplicated_pairs(pairs in 1usize..8, px in 1usize..4, seed in 0u64..1000) {
        let half = VideoTensor::<f64>::sample_gaussian(Shape::new(pairs, 1, 1, px), seed);
        let dup = half.up_temporal_nearest(2).unwrap();
        prop_assert_eq!(dup.down_temporal(2).unwrap().up_temporal_nearest(2).unwrap(), dup);
    }

    #[test]
    fn up_of_down_keeps_even_frames(pairs in 1usize..8, seed in 0u64..1000) {
        let x = VideoTensor::<f64>::sample_gaussian(Shape::new(2 * pairs, 1, 2, 1), seed);
        let y = x.down_temporal(2).unwrap().up_temporal_nearest(2).unwrap();
        for i in 0..pairs {
            prop_assert_eq!(y.frame(2 * i), x.frame(2 * i));
        }
    }

    #[test]
    fn stage_path_hits_both_boundaries(
        k in 1usize..=3,
        matched in any::<bool>(),
        ddim in any::<bool>(),
        seed in 0u64..10_000,
    ) {
        let sched = if ddim { Schedule::ddim_default() } else { Schedule::flow_matching() };
        let mode = if matched { StageEnds::Matched } else { StageEnds::Shared };
        let plan = StagePlan::uniform_for(&sched, 3).unwrap().with_ends(mode, &sched).unwrap();
        prop_assume!(ddim || k < 3);
        let x0 = VideoTensor::<f64>::sample_gaussian(Shape::new(8, 1, 1, 2), seed);
        let eps = VideoTensor::<f64>::sample_gaussian(Shape::new(8, 1, 1, 2), seed + 1);
        let (xs, xe) = boundary_latents(&sched, &plan, k, &x0, &eps).unwrap();
        let ek = stage_epsilon(&sched, &plan, k, &xs, &xe).unwrap();
        let st = plan.stage(k).unwrap();
        prop_assert_eq!(intermediate_latent(&sched, &plan, k, &xs, &ek, st.start).unwrap(), xs.clone());
        let at_e = intermediate_latent(&sched, &plan, k, &xs, &ek, st.end).unwrap();
        prop_assert!(at_e.max_abs_diff(&xe).unwrap() <= 1e-10);
    }

    #[test]
    fn energy_distance_is_symmetric_and_non_negative(
        a in proptest::collection::vec(-5.0f64..5.0, 2..24),
        b in proptest::collection::vec(-5.0f64..5.0, 2..24),
    ) {
        let sa: Vec<_> = a.chunks_exact(2).map(|c| tensor(1, c)).collect();
        let sb: Vec<_> = b.chunks_exact(2).map(|c| tensor(1, c)).collect();
        let ab = energy_distance(&sa, &sb).unwrap();
        prop_assert_eq!(ab, energy_distance(&sb, &sa).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(energy_distance(&sa, &sa).unwrap(), 0.0);
    }

    #[test]
    fn assignment_is_optimal(n in 1usize..=6, data in proptest::collection::vec(-50.0f64..50.0, 36)) {
        let cost = CostMatrix::new(n, n, data[..n * n].to_vec()).unwrap();
        let fast = linear_sum_assignment(&cost).unwrap();
        let brute = brute_force_assignment(&cost);
        prop_assert!((fast.total_cost - brute.total_cost).abs() <= 1e-9);
        let mut seen = fast.permutation.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn injected_pair_noise_cancels(g in 0.05f64..1.0, s in 0.0f64..1.0, seed in 0u64..1000) {
        let p = RenoiseParams::new(g, s);
        prop_assert!(p.scale > 0.0 && p.scale <= 1.0 && p.noise_weight >= 0.0);
        let x = VideoTensor::<f64>::sample_gaussian(Shape::new(3, 1, 1, 2), seed);
        let out = apply_renoise(&x, &p, &mut seeded_rng(seed)).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let base = p.scale * x.frame(i)[j];
                let sum = (out.frame(2 * i)[j] - base) + (out.frame(2 * i + 1)[j] - base);
                prop_assert!(sum.abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn single_clip_memorization() {
    let spec = ClipSpec {
        frames: 8,
        height: 4,
        width: 4,
        ..ClipSpec::default()
    };
    let data = generate_dataset::<f64>(&spec, 1, 3).unwrap();
    let mut model = ToyDenoiser::new(ModelConfig::new(16, 32, Prediction::Velocity), 5);
    let sched = Schedule::flow_matching();
    let plan = StagePlan::uniform(1).unwrap();
    let cfg = TrainConfig {
        budget: TrainBudget::Steps(3000),
        ema_decay: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &data.clips, &sched, &plan, &cfg, None).unwrap();
    let h = &out.state.loss_history;
    let initial = h[0];
    let tail = h[h.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail < 0.1 * initial, "initial {initial}, final {tail}");
}

#[test]
fn stagewise_token_ratio_is_seven_twelfths() {
    let spec = ClipSpec::default();
    let data = generate_dataset::<f64>(&spec, 8, 1).unwrap();
    let sched = Schedule::flow_matching();
    let mut tokens = [0u64; 2];
    let mut pairs = [0u64; 2];
    for (i, k) in [1usize, 3].into_iter().enumerate() {
        let plan = StagePlan::uniform(k).unwrap();
        let mut model = ToyDenoiser::new(ModelConfig::new(64, 8, Prediction::Velocity), 1);
        let cfg = TrainConfig {
            budget: TrainBudget::Steps(50),
            ..TrainConfig::default()
        };
        let out = train(&mut model, &data.clips, &sched, &plan, &cfg, None).unwrap();
        tokens[i] = out.total_tokens();
        pairs[i] = out.total_attention_pairs();
    }
    assert_eq!(tokens[1] as f64 / tokens[0] as f64, 7.0 / 12.0);
    assert_eq!(pairs[1] as f64 / pairs[0] as f64, 0.4375);
}

#[test]
fn sampling_handles_any_compatible_frame_count() {
    let sched = Schedule::flow_matching();
    let model = ToyDenoiser::<f64>::new(ModelConfig::new(4, 8, Prediction::Velocity), 2);
    let plan = StagePlan::uniform(3).unwrap().with_matched_ends(&sched).unwrap();
    for f in [4, 8, 16] {
        let cfg = SamplerConfig::new(plan.clone(), 10, 3);
        let out = sample_video(&sched, &model, &cfg, Shape::new(f, 1, 2, 2)).unwrap();
        assert_eq!(out.video.shape(), Shape::new(f, 1, 2, 2));
    }
    assert!(sample_video(&sched, &model, &SamplerConfig::new(plan, 10, 3), Shape::new(6, 1, 2, 2)).is_err());
}

#[test]
fn permutation_null_is_calibrated() {
    let runs = 60;
    let mut below = 0;
    for r in 0..runs {
        let mut rng = seeded_rng(1000 + r);
        let a: Vec<_> = (0..30).map(|_| VideoTensor::<f64>::gaussian(Shape::new(1, 1, 1, 3), &mut rng)).collect();
        let b: Vec<_> = (0..30).map(|_| VideoTensor::<f64>::gaussian(Shape::new(1, 1, 1, 3), &mut rng)).collect();
        let t = energy_permutation_test(&a, &b, 200, &mut rng).unwrap();
        if t.statistic < t.null_quantile(0.95) {
            below += 1;
        }
    }
    assert!(below as f64 >= 0.9 * runs as f64, "{below}/{runs}");
}

#[test]
fn train_and_held_out_splits_share_a_distribution() {
    let data = generate_dataset::<f64>(&ClipSpec::default(), 200, 11).unwrap();
    let t = energy_permutation_test(&data.train(), &data.held_out(), 200, &mut seeded_rng(4)).unwrap();
    assert!(t.p_value > 0.01, "p = {}", t.p_value);
}

#[test]
fn ddim_oracle_reaches_stage_end_for_any_step_count() {
    let sched = Schedule::<f64>::ddim_default();
    let plan = StagePlan::uniform_for(&sched, 3).unwrap().with_matched_ends(&sched).unwrap();
    let x0 = VideoTensor::<f64>::sample_gaussian(Shape::new(8, 1, 1, 3), 1);
    let eps = VideoTensor::<f64>::sample_gaussian(Shape::new(8, 1, 1, 3), 2);
    for k in 1..=3 {
        let (xs, xe) = boundary_latents(&sched, &plan, k, &x0, &eps).unwrap();
        let ek = stage_epsilon(&sched, &plan, k, &xs, &xe).unwrap();
        let oracle = |_: &VideoTensor<f64>, _: f64| Ok(ek.clone());
        let st = plan.stage(k).unwrap();
        for steps in [1usize, 3, 10, 50] {
            let grid = pyramid::sampler::stage_time_grid(&sched, &st, steps);
            let mut x = xs.clone();
            for w in grid.windows(2) {
                if w[1] < w[0] {
                    x = ddim_step(&sched, &oracle, &x, w[0], w[1]).unwrap();
                }
            }
            assert!(x.max_abs_diff(&xe).unwrap() < 1e-10, "stage {k}, {steps} steps");
        }
    }
}
