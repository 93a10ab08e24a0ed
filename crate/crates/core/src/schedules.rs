//! Noise schedules in the unified form `x_t = gamma_t * x_0 + sigma_t * eps`.
//!
//! Time is normalized to `[0, 1]` for both schedule kinds: `t = 0` is clean
//! data and `t = 1` is pure noise. A discrete DDIM grid of `T` steps maps
//! index `i` to `t = i / T`; between grid nodes `alphabar` is interpolated
//! log-linearly so that every coefficient stays strictly monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::videoops::VideoTensor;

/// Smallest `sigma_t` for which the log-SNR is evaluated.
pub const LAMBDA_SIGMA_FLOOR: f64 = 1e-8;

/// Default DDIM grid length.
pub const DDIM_DEFAULT_STEPS: usize = 1000;
pub const DDIM_BETA_START: f64 = 1e-4;
pub const DDIM_BETA_END: f64 = 0.02;
/// Largest admissible `alphabar` at the noise end of a DDIM table.
pub const DDIM_MAX_TERMINAL_ALPHABAR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Ddim,
    FlowMatching,
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleKind::Ddim => f.write_str("ddim"),
            ScheduleKind::FlowMatching => f.write_str("flow_matching"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T: Scalar> {
    kind: ScheduleKind,
    /// `alphabar[i]` for `i = 0..=T`; empty for flow matching.
    alphabar: Vec<T>,
}

impl<T: Scalar> Schedule<T> {
    /// Rectified-flow schedule: `gamma_t = 1 - t`, `sigma_t = t`.
    pub fn flow_matching() -> Self {
        Self {
            kind: ScheduleKind::FlowMatching,
            alphabar: Vec::new(),
        }
    }

    /// DDIM with a linear beta ramp over `steps` steps.
    pub fn ddim_linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Input("DDIM needs at least one step".into()));
        }
        let mut alphabar = Vec::with_capacity(steps + 1);
        alphabar.push(1.0f64);
        let mut acc = 1.0f64;
        for i in 0..steps {
            let beta = if steps == 1 {
                beta_end
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alphabar.push(acc);
        }
        Self::ddim_from_alphabar(alphabar.into_iter().map(T::lit).collect())
    }

    /// The default DDIM schedule: 1000 steps, beta in `[1e-4, 0.02]`.
    pub fn ddim_default() -> Self {
        Self::ddim_linear(DDIM_DEFAULT_STEPS, DDIM_BETA_START, DDIM_BETA_END)
            .expect("default DDIM table is valid")
    }

    /// DDIM from an explicit cumulative-product table indexed `0..=T`.
    pub fn ddim_from_alphabar(alphabar: Vec<T>) -> Result<Self> {
        if alphabar.len() < 2 {
            return Err(Error::Input("alphabar table needs at least two entries".into()));
        }
        if alphabar[0] != T::one() {
            return Err(Error::Input("alphabar[0] must be exactly 1".into()));
        }
        if alphabar.windows(2).any(|w| !(w[1] < w[0]) || !(w[1] > T::zero())) {
            return Err(Error::Input(
                "alphabar must be strictly decreasing and positive".into(),
            ));
        }
        let last = alphabar[alphabar.len() - 1].as_f64();
        if last > DDIM_MAX_TERMINAL_ALPHABAR {
            return Err(Error::Input(format!(
                "terminal alphabar {last:e} exceeds {DDIM_MAX_TERMINAL_ALPHABAR:e}"
            )));
        }
        Ok(Self {
            kind: ScheduleKind::Ddim,
            alphabar,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of discrete DDIM steps; `None` for flow matching.
    pub fn grid_len(&self) -> Option<usize> {
        match self.kind {
            ScheduleKind::Ddim => Some(self.alphabar.len() - 1),
            ScheduleKind::FlowMatching => None,
        }
    }

    /// Rounds `t` to the nearest DDIM grid time. Identity for flow matching.
    pub fn snap(&self, t: T) -> T {
        match self.grid_len() {
            Some(n) => {
                let n_t = T::from_usize(n).unwrap();
                (t * n_t).round() / n_t
            }
            None => t,
        }
    }

    fn check_time(t: T) -> Result<()> {
        if t >= T::zero() && t <= T::one() {
            Ok(())
        } else {
            Err(Error::Domain { t: t.as_f64() })
        }
    }

    /// Interpolated `alphabar(t)`. DDIM only.
    pub fn alphabar(&self, t: T) -> Result<T> {
        Self::check_time(t)?;
        if self.kind != ScheduleKind::Ddim {
            return Err(Error::Input("alphabar is only defined for DDIM".into()));
        }
        let n = self.alphabar.len() - 1;
        let pos = t * T::from_usize(n).unwrap();
        let i = pos.floor().to_usize().unwrap().min(n);
        if i == n {
            return Ok(self.alphabar[n]);
        }
        let frac = pos - T::from_usize(i).unwrap();
        if frac == T::zero() {
            return Ok(self.alphabar[i]);
        }
        let (a, b) = (self.alphabar[i].ln(), self.alphabar[i + 1].ln());
        Ok((a + frac * (b - a)).exp())
    }

    /// `(gamma_t, sigma_t)` at normalized time `t`.
    pub fn gamma_sigma(&self, t: T) -> Result<(T, T)> {
        Self::check_time(t)?;
        match self.kind {
            ScheduleKind::FlowMatching => Ok((T::one() - t, t)),
            ScheduleKind::Ddim => {
                let ab = self.alphabar(t)?;
                Ok((ab.sqrt(), (T::one() - ab).sqrt()))
            }
        }
    }

    /// Log-SNR `lambda_t = ln(gamma_t / sigma_t)` at a strictly interior time.
    pub fn log_snr(&self, t: T) -> Result<T> {
        if !(t > T::zero() && t < T::one()) {
            return Err(Error::Domain { t: t.as_f64() });
        }
        let (g, s) = self.gamma_sigma(t)?;
        if s.as_f64() < LAMBDA_SIGMA_FLOOR || g <= T::zero() {
            return Err(Error::EndpointSingularity {
                t: t.as_f64(),
                sigma: s.as_f64(),
            });
        }
        Ok((g / s).ln())
    }

    /// `gamma_t * x0 + sigma_t * eps`.
    pub fn forward_diffuse(
        &self,
        x0: &VideoTensor<T>,
        eps: &VideoTensor<T>,
        t: T,
    ) -> Result<VideoTensor<T>> {
        let (g, s) = self.gamma_sigma(t)?;
        x0.lin_comb(g, eps, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_ddim() -> Schedule<f64> {
        Schedule::ddim_from_alphabar(vec![1.0, 0.64, 0.5, 5e-5]).unwrap()
    }

    #[test]
    fn flow_matching_coefficients() {
        let s = Schedule::<f64>::flow_matching();
        assert_eq!(s.gamma_sigma(0.0).unwrap(), (1.0, 0.0));
        assert_eq!(s.gamma_sigma(0.25).unwrap(), (0.75, 0.25));
        assert!(matches!(s.gamma_sigma(1.5), Err(Error::Domain { .. })));
        assert!(matches!(s.gamma_sigma(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn ddim_coefficients_from_table() {
        let s = toy_ddim();
        let (g, sg) = s.gamma_sigma(1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(g, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sg, 0.6, epsilon = 1e-12);
        assert_eq!(s.gamma_sigma(0.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn log_snr_values() {
        let fm = Schedule::<f64>::flow_matching();
        assert_abs_diff_eq!(fm.log_snr(0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fm.log_snr(0.2).unwrap(), 4f64.ln(), epsilon = 1e-12);
        let dd = toy_ddim();
        assert_abs_diff_eq!(dd.log_snr(2.0 / 3.0).unwrap(), 0.0, epsilon = 1e-12);
        assert!(fm.log_snr(0.0).is_err());
        assert!(fm.log_snr(1.0).is_err());
    }

    #[test]
    fn log_snr_floor() {
        let fm = Schedule::<f64>::flow_matching();
        assert!(matches!(
            fm.log_snr(1e-10),
            Err(Error::EndpointSingularity { .. })
        ));
    }

    #[test]
    fn default_ddim_endpoints() {
        let s = Schedule::<f64>::ddim_default();
        assert_eq!(s.grid_len(), Some(1000));
        assert!(s.alphabar(1.0).unwrap() <= DDIM_MAX_TERMINAL_ALPHABAR);
        let (g, sg) = s.gamma_sigma(1.0).unwrap();
        assert!(g < 1e-2 && sg > 0.9999);
    }

    #[test]
    fn variance_identities_and_monotonicity_on_grid() {
        let dd = Schedule::<f64>::ddim_default();
        let fm = Schedule::<f64>::flow_matching();
        let grid: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        for &t in &grid {
            let (g, s) = dd.gamma_sigma(t).unwrap();
            assert!((g * g + s * s - 1.0).abs() < 1e-12);
            let (g, s) = fm.gamma_sigma(t).unwrap();
            assert!((g + s - 1.0).abs() < 1e-12);
        }
        for sched in [&dd, &fm] {
            for w in grid.windows(2) {
                let (g0, s0) = sched.gamma_sigma(w[0]).unwrap();
                let (g1, s1) = sched.gamma_sigma(w[1]).unwrap();
                assert!(g1 < g0 && s1 > s0);
            }
            let interior: Vec<f64> = grid[1..grid.len() - 1].to_vec();
            for w in interior.windows(2) {
                assert!(sched.log_snr(w[1]).unwrap() < sched.log_snr(w[0]).unwrap());
            }
        }
    }

    #[test]
    fn forward_diffuse_examples() {
        let fm = Schedule::<f64>::flow_matching();
        let x0 = VideoTensor::scalar_frames(&[2.0]);
        let e = VideoTensor::scalar_frames(&[1.0]);
        let xt = fm.forward_diffuse(&x0, &e, 0.9).unwrap();
        assert_abs_diff_eq!(xt.data()[0], 1.1, epsilon = 1e-12);
        assert_eq!(fm.forward_diffuse(&x0, &e, 0.0).unwrap(), x0);

        let dd = toy_ddim();
        let x0 = VideoTensor::scalar_frames(&[1.0]);
        let e = VideoTensor::scalar_frames(&[0.0]);
        let xt = dd.forward_diffuse(&x0, &e, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(xt.data()[0], 0.8, epsilon = 1e-12);

        let bad = VideoTensor::scalar_frames(&[0.0, 1.0]);
        assert!(matches!(dd.forward_diffuse(&x0, &bad, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn snap_to_grid() {
        let dd = Schedule::<f64>::ddim_default();
        assert_eq!(dd.snap(0.12345), 0.123);
        let fm = Schedule::<f64>::flow_matching();
        assert_eq!(fm.snap(0.12345), 0.12345);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(Schedule::<f64>::ddim_from_alphabar(vec![1.0, 0.5]).is_err());
        assert!(Schedule::<f64>::ddim_from_alphabar(vec![0.9, 1e-5]).is_err());
        assert!(Schedule::<f64>::ddim_from_alphabar(vec![1.0, 1e-5, 1e-5]).is_err());
    }
}
