//! Sample-set distances, flicker and convergence logging.

use std::cmp::Ordering;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::videoops::{SeededRng, VideoTensor};

fn euclid<T: Scalar>(a: &VideoTensor<T>, b: &VideoTensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_sets<T: Scalar>(a: &[VideoTensor<T>], b: &[VideoTensor<T>]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("energy distance needs two non-empty sets".into()));
    }
    let shape = a[0].shape();
    if a.iter().chain(b).any(|c| c.shape() != shape) {
        return Err(Error::Shape("all clips must share one shape".into()));
    }
    Ok(())
}

fn cmp_sets<T: Scalar>(a: &[VideoTensor<T>], b: &[VideoTensor<T>]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .flat_map(|c| c.data())
            .zip(b.iter().flat_map(|c| c.data()))
            .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn mean_pairwise<T: Scalar>(a: &[VideoTensor<T>], b: &[VideoTensor<T>]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += euclid(x, y);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Energy distance `2 E|a - b| - E|a - a'| - E|b - b'|` between the empirical
/// distributions of two clip sets (all pairs, diagonal included). The value is
/// non-negative, zero for identical multisets and exactly symmetric.
pub fn energy_distance<T: Scalar>(a: &[VideoTensor<T>], b: &[VideoTensor<T>]) -> Result<f64> {
    check_sets(a, b)?;
    let (a, b) = if cmp_sets(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let cross = mean_pairwise(a, b);
    let within_a = mean_pairwise(a, a);
    let within_b = mean_pairwise(b, b);
    Ok((2.0 * cross - within_a - within_b).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Sorted null statistics.
    pub null: Vec<f64>,
}

impl PermutationTest {
    pub fn null_quantile(&self, q: f64) -> f64 {
        let i = ((self.null.len() as f64 - 1.0) * q).round() as usize;
        self.null[i.min(self.null.len() - 1)]
    }
}

/// Permutation test of `energy_distance(a, b)` under the pooled-label null.
pub fn energy_permutation_test<T: Scalar>(
    a: &[VideoTensor<T>],
    b: &[VideoTensor<T>],
    permutations: usize,
    rng: &mut SeededRng,
) -> Result<PermutationTest> {
    check_sets(a, b)?;
    let pooled: Vec<&VideoTensor<T>> = a.iter().chain(b).collect();
    let n = pooled.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(pooled[i], pooled[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let na = a.len();
    let stat_of = |labels: &[bool]| {
        let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let d = dist[i * n + j];
                match (labels[i], labels[j]) {
                    (true, true) => aa += d,
                    (false, false) => bb += d,
                    _ => ab += d,
                }
            }
        }
        let nb = n - na;
        // `ab` counts every cross pair twice
        ab / (na * nb) as f64 - aa / (na * na) as f64 - bb / (nb * nb) as f64
    };
    let mut labels: Vec<bool> = (0..n).map(|i| i < na).collect();
    let statistic = stat_of(&labels).max(0.0);
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        labels.shuffle(rng);
        null.push(stat_of(&labels).max(0.0));
    }
    null.sort_by(f64::total_cmp);
    let exceed = null.iter().filter(|&&s| s >= statistic).count();
    Ok(PermutationTest {
        statistic,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        null,
    })
}

/// Mean `|frame_{2i} - frame_{2i+1}|` over every pixel of the duplicated pairs
/// produced by a stage transition.
pub fn pair_discontinuity<T: Scalar>(clip: &VideoTensor<T>) -> f64 {
    let pairs = clip.frames() / 2;
    if pairs == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..pairs {
        s += clip
            .frame(2 * i)
            .iter()
            .zip(clip.frame(2 * i + 1))
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .sum::<f64>();
    }
    s / (pairs * clip.frame_len()) as f64
}

/// Mean over generated clips of the per-frame MSE to the closest reference clip.
pub fn per_frame_mse_to_nearest<T: Scalar>(generated: &[VideoTensor<T>], reference: &[VideoTensor<T>]) -> Result<f64> {
    check_sets(generated, reference)?;
    let total: f64 = generated
        .iter()
        .map(|g| {
            reference
                .iter()
                .map(|r| euclid(g, r).powi(2) / g.data().len() as f64)
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / generated.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub energy_distance: f64,
    pub per_frame_mse_to_nearest: f64,
    pub wall_time_train: f64,
    /// Seconds per generated clip.
    pub wall_time_sample: f64,
    pub token_pair_ratio: f64,
}

impl EvalReport {
    pub fn to_lines(&self) -> String {
        format!(
            "energy_distance = {}\nper_frame_mse_to_nearest = {}\nwall_time_train = {}\nwall_time_sample = {}\ntoken_pair_ratio = {}\n",
            self.energy_distance,
            self.per_frame_mse_to_nearest,
            self.wall_time_train,
            self.wall_time_sample,
            self.token_pair_ratio
        )
    }
}

/// Appends `step,wall_seconds,loss,energy_distance` rows, flushing after each one.
pub struct ConvergenceTracker {
    writer: csv::Writer<File>,
    last: Option<(u64, f64)>,
    rows: usize,
}

impl ConvergenceTracker {
    pub const HEADER: [&'static str; 4] = ["step", "wall_seconds", "loss", "energy_distance"];

    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        writer.write_record(Self::HEADER)?;
        writer.flush()?;
        Ok(Self {
            writer,
            last: None,
            rows: 0,
        })
    }

    pub fn record(&mut self, step: u64, wall_seconds: f64, loss: f64, energy_distance: f64) -> Result<()> {
        if let Some((s, w)) = self.last {
            if step <= s || wall_seconds < w {
                return Err(Error::Input(format!(
                    "tracker rows must advance: ({step}, {wall_seconds}) after ({s}, {w})"
                )));
            }
        }
        self.writer.write_record([
            step.to_string(),
            format!("{wall_seconds:.6}"),
            format!("{loss:.9e}"),
            format!("{energy_distance:.9e}"),
        ])?;
        self.writer.flush()?;
        self.last = Some((step, wall_seconds));
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videoops::{seeded_rng, Shape};

    fn normal_set(n: usize, shift: f64, seed: u64) -> Vec<VideoTensor<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| VideoTensor::gaussian(Shape::new(1, 1, 1, 1), &mut rng).map(|x| x + shift))
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = normal_set(40, 0.0, 1);
        assert!(energy_distance(&a, &a).unwrap() <= 1e-12);
        assert!(energy_distance::<f64>(&[], &a).is_err());
    }

    #[test]
    fn symmetric_and_homogeneous() {
        let a = normal_set(30, 0.0, 1);
        let b = normal_set(25, 0.5, 2);
        assert_eq!(energy_distance(&a, &b).unwrap(), energy_distance(&b, &a).unwrap());
        let a2: Vec<_> = a.iter().map(|c| c.scale(2.0)).collect();
        let b2: Vec<_> = b.iter().map(|c| c.scale(2.0)).collect();
        let e = energy_distance(&a, &b).unwrap();
        assert!((energy_distance(&a2, &b2).unwrap() - 2.0 * e).abs() < 1e-12);
    }

    #[test]
    fn shifted_gaussians_are_detected() {
        let a = normal_set(1000, 0.0, 3);
        let b = normal_set(1000, 3.0, 4);
        let test = energy_permutation_test(&a[..200], &b[..200], 200, &mut seeded_rng(5)).unwrap();
        assert!(test.statistic > test.null_quantile(0.99));
        assert!(energy_distance(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn permutation_statistic_matches_direct() {
        let a = normal_set(20, 0.0, 6);
        let b = normal_set(15, 0.3, 7);
        let t = energy_permutation_test(&a, &b, 10, &mut seeded_rng(1)).unwrap();
        assert!((t.statistic - energy_distance(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn discontinuity_of_duplicated_frames_is_zero() {
        let x = VideoTensor::<f64>::sample_gaussian(Shape::new(4, 1, 2, 2), 1);
        assert_eq!(pair_discontinuity(&x.up_temporal_nearest(2).unwrap()), 0.0);
        assert!(pair_discontinuity(&x) > 0.0);
    }

    #[test]
    fn tracker_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let mut tr = ConvergenceTracker::create(&path).unwrap();
        for i in 1..=10u64 {
            tr.record(i * 100, i as f64 * 0.5, 1.0 / i as f64, 0.1).unwrap();
        }
        assert!(tr.record(1000, 10.0, 0.0, 0.0).is_err());
        assert!(tr.record(1100, 1.0, 0.0, 0.0).is_err());
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,wall_seconds,loss,energy_distance");
        assert_eq!(lines.len(), 11);
        assert!(!text.contains('\r'));
    }
}
