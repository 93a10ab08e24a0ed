//! Synthetic moving-object clips standing in for a curated video corpus.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::videoops::{derive_seed, seeded_rng, SeededRng, Shape, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    /// Soft Gaussian blob drifting at constant velocity on a torus.
    DriftingBlob,
    /// Small dot moving at constant speed and reflecting off the borders.
    BouncingDot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub family: MotionFamily,
    /// Speed in pixels per frame, sampled uniformly in `[lo, hi]`.
    pub velocity: (f64, f64),
    /// Peak magnitude, sampled uniformly in `[lo, hi]`; the sign is random.
    pub intensity: (f64, f64),
    pub seed: u64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frames: 16,
            channels: 1,
            height: 8,
            width: 8,
            family: MotionFamily::DriftingBlob,
            velocity: (0.3, 1.0),
            intensity: (0.6, 1.0),
            seed: 0,
        }
    }
}

impl ClipSpec {
    pub fn shape(&self) -> Shape {
        Shape::new(self.frames, self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape().is_empty() {
            return Err(Error::Config("clip dimensions must be positive".into()));
        }
        let (vl, vh) = self.velocity;
        let (il, ih) = self.intensity;
        if !(0.0 <= vl && vl <= vh) {
            return Err(Error::Config("velocity range must satisfy 0 <= lo <= hi".into()));
        }
        if !(0.0 <= il && il <= ih && ih <= 1.0) {
            return Err(Error::Config("intensity range must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut SeededRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

/// Reflects `x` into `[0, len]`.
fn bounce(x: f64, len: f64) -> f64 {
    let period = 2.0 * len;
    let m = x.rem_euclid(period);
    if m > len { period - m } else { m }
}

/// Signed toroidal offset from `c` to `p` on a ring of length `len`.
fn wrap_delta(p: f64, c: f64, len: f64) -> f64 {
    let d = (p - c).rem_euclid(len);
    if d > len / 2.0 { d - len } else { d }
}

/// Renders one clip; frame `i` shows the motion state at time `i`.
pub fn generate_clip<T: Scalar>(spec: &ClipSpec, rng: &mut SeededRng) -> VideoTensor<T> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let cy = rng.random_range(0.0..h);
    let cx = rng.random_range(0.0..w);
    let speed = uniform(rng, spec.velocity);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (vy, vx) = (speed * angle.sin(), speed * angle.cos());
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let amps: Vec<f64> = (0..spec.channels)
        .map(|_| sign * uniform(rng, spec.intensity))
        .collect();
    let radius = match spec.family {
        MotionFamily::DriftingBlob => rng.random_range(1.0..2.0),
        MotionFamily::BouncingDot => 0.7,
    };

    let shape = spec.shape();
    let mut data = Vec::with_capacity(shape.len());
    for i in 0..spec.frames {
        let t = i as f64;
        let (py, px) = match spec.family {
            MotionFamily::DriftingBlob => ((cy + vy * t).rem_euclid(h), (cx + vx * t).rem_euclid(w)),
            MotionFamily::BouncingDot => (bounce(cy + vy * t, h - 1.0), bounce(cx + vx * t, w - 1.0)),
        };
        for &a in &amps {
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let (dy, dx) = match spec.family {
                        MotionFamily::DriftingBlob => {
                            (wrap_delta(y as f64, py, h), wrap_delta(x as f64, px, w))
                        }
                        MotionFamily::BouncingDot => (y as f64 - py, x as f64 - px),
                    };
                    let g = (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
                    data.push(T::lit((a * g).clamp(-1.0, 1.0)));
                }
            }
        }
    }
    VideoTensor::new(data, shape).expect("spec shape is valid")
}

/// `n` clips with per-clip seeds derived from one dataset seed. Even indices
/// form the training split, odd indices the held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub spec: ClipSpec,
    pub clips: Vec<VideoTensor<T>>,
    pub seeds: Vec<u64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn train(&self) -> Vec<VideoTensor<T>> {
        self.clips.iter().step_by(2).cloned().collect()
    }

    pub fn held_out(&self) -> Vec<VideoTensor<T>> {
        self.clips.iter().skip(1).step_by(2).cloned().collect()
    }

    pub fn train_indices(&self) -> impl Iterator<Item = usize> {
        (0..self.clips.len()).step_by(2)
    }

    pub fn held_out_indices(&self) -> impl Iterator<Item = usize> {
        (1..self.clips.len()).step_by(2)
    }

    /// One raw dump per clip plus `index.txt` (filename, seed, spec fields).
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut index = std::io::BufWriter::new(std::fs::File::create(dir.join("index.txt"))?);
        let s = &self.spec;
        for (i, (clip, seed)) in self.clips.iter().zip(&self.seeds).enumerate() {
            let name = format!("clip_{i:05}.raw");
            clip.save_raw(&dir.join(&name))?;
            writeln!(
                index,
                "{name} seed={seed} frames={} channels={} height={} width={} family={:?} velocity={},{} intensity={},{} split={}",
                s.frames,
                s.channels,
                s.height,
                s.width,
                s.family,
                s.velocity.0,
                s.velocity.1,
                s.intensity.0,
                s.intensity.1,
                if i % 2 == 0 { "train" } else { "held_out" },
            )?;
        }
        index.flush()?;
        Ok(())
    }
}

pub fn generate_dataset<T: Scalar>(spec: &ClipSpec, n: usize, seed: u64) -> Result<Dataset<T>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Input("dataset needs at least one clip".into()));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(seed, i)).collect();
    let clips = seeds
        .iter()
        .map(|&s| generate_clip(spec, &mut seeded_rng(s)))
        .collect();
    Ok(Dataset {
        spec: *spec,
        clips,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_velocity_is_static() {
        for family in [MotionFamily::DriftingBlob, MotionFamily::BouncingDot] {
            let spec = ClipSpec {
                velocity: (0.0, 0.0),
                family,
                ..ClipSpec::default()
            };
            let clip: VideoTensor<f64> = generate_clip(&spec, &mut seeded_rng(1));
            for i in 1..clip.frames() {
                assert_eq!(clip.frame(i), clip.frame(0));
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let spec = ClipSpec::default();
        let a: VideoTensor<f64> = generate_clip(&spec, &mut seeded_rng(5));
        let b: VideoTensor<f64> = generate_clip(&spec, &mut seeded_rng(5));
        assert_eq!(a, b);
        let d1 = generate_dataset::<f64>(&spec, 10, 3).unwrap();
        let d2 = generate_dataset::<f64>(&spec, 10, 3).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn values_in_range() {
        for family in [MotionFamily::DriftingBlob, MotionFamily::BouncingDot] {
            let spec = ClipSpec {
                family,
                channels: 2,
                ..ClipSpec::default()
            };
            let d = generate_dataset::<f64>(&spec, 50, 1).unwrap();
            assert!(d.clips.iter().flat_map(|c| c.data()).all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn temporal_redundancy() {
        let spec = ClipSpec::default();
        let d = generate_dataset::<f64>(&spec, 1000, 11).unwrap();
        let mut rng = seeded_rng(12);
        let (mut adjacent, mut random) = (0.0, 0.0);
        for (ci, clip) in d.clips.iter().enumerate() {
            for i in 0..clip.frames() - 1 {
                adjacent += clip.frame(i).iter().zip(clip.frame(i + 1)).map(|(a, b)| (a - b).abs()).sum::<f64>();
                let other = &d.clips[(ci + 1 + rng.random_range(0..999)) % 1000];
                let j = rng.random_range(0..other.frames());
                random += clip.frame(i).iter().zip(other.frame(j)).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
        }
        assert!(adjacent < random, "adjacent {adjacent} random {random}");
    }

    #[test]
    fn splits_are_disjoint() {
        let d = generate_dataset::<f64>(&ClipSpec::default(), 7, 0).unwrap();
        let train: Vec<usize> = d.train_indices().collect();
        let held: Vec<usize> = d.held_out_indices().collect();
        assert_eq!(train, vec![0, 2, 4, 6]);
        assert_eq!(held, vec![1, 3, 5]);
        assert_eq!(d.train().len() + d.held_out().len(), 7);
        let one = generate_dataset::<f64>(&ClipSpec::default(), 1, 0).unwrap();
        assert_eq!(one.train().len(), 1);
        assert!(generate_dataset::<f64>(&ClipSpec::default(), 0, 0).is_err());
    }

    #[test]
    fn dump_writes_index() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_dataset::<f64>(&ClipSpec::default(), 3, 0).unwrap();
        d.dump(dir.path()).unwrap();
        let index = std::fs::read_to_string(dir.path().join("index.txt")).unwrap();
        assert_eq!(index.lines().count(), 3);
        assert!(index.starts_with("clip_00000.raw seed="));
        let back = VideoTensor::<f64>::load_raw(&dir.path().join("clip_00001.raw")).unwrap();
        assert_eq!(back.shape(), d.clips[1].shape());
    }
}
