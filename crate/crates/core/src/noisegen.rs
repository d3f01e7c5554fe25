//! Deterministic noise sources: the birefringence drift schedule and
//! counter-based random streams.
//!
//! All randomness is derived from a master seed plus explicit stream
//! indices, so any record can be regenerated in isolation and full runs
//! are reproducible byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elements::PaddleAngles;
use crate::error::{Error, Result};

/// Stream tags keeping the independent random consumers apart.
pub const STREAM_PHASE: u64 = 1;
pub const STREAM_COUNTS: u64 = 2;
pub const STREAM_HISTOGRAM: u64 = 3;
pub const STREAM_MC: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the given words into a single well-mixed seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Independent generator for the stream identified by `parts`.
pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Triangle-wave drift of the fiber paddle half-wave angle: starting at
/// `start_deg`, stepping by `step_deg` every `dwell_s` seconds up to
/// `max_deg`, then back down, repeating. The quarter paddles stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrainSchedule {
    pub start_deg: f64,
    pub max_deg: f64,
    pub step_deg: f64,
    pub dwell_s: f64,
    pub q1_deg: f64,
    pub q2_deg: f64,
}

impl Default for StrainSchedule {
    fn default() -> Self {
        StrainSchedule {
            start_deg: 0.0,
            max_deg: 160.0,
            step_deg: 1.0,
            dwell_s: 5.0,
            q1_deg: 12.0,
            q2_deg: 12.0,
        }
    }
}

impl StrainSchedule {
    fn span_steps(&self) -> Result<u64> {
        if !(self.step_deg > 0.0 && self.dwell_s > 0.0) {
            return Err(Error::Config(
                "strain step and dwell must be positive".into(),
            ));
        }
        if self.max_deg <= self.start_deg {
            return Err(Error::Config(
                "strain stop angle must exceed the start angle".into(),
            ));
        }
        let raw = (self.max_deg - self.start_deg) / self.step_deg;
        let steps = raw.round();
        if (raw - steps).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "strain span {} deg is not a whole number of {} deg steps",
                self.max_deg - self.start_deg,
                self.step_deg
            )));
        }
        Ok(steps as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.span_steps().map(|_| ())
    }

    /// One full up-and-down cycle, in seconds.
    pub fn period_s(&self) -> Result<f64> {
        Ok(2.0 * self.span_steps()? as f64 * self.dwell_s)
    }

    /// Paddle angles in force at time `t_s` (seconds from run start).
    pub fn paddle_at(&self, t_s: f64) -> Result<PaddleAngles> {
        if !(t_s >= 0.0 && t_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule time {t_s} must be finite and non-negative"
            )));
        }
        let span = self.span_steps()?;
        let n = (t_s / self.dwell_s).floor() as u64;
        let m = n % (2 * span);
        let idx = m.min(2 * span - m);
        Ok(PaddleAngles::new(
            self.q1_deg,
            self.start_deg + self.step_deg * idx as f64,
            self.q2_deg,
        ))
    }
}

/// Interferometer phase fluctuations for one acquisition window, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraws {
    pub phase1_rad: f64,
    pub phase2_rad: f64,
}

impl NoiseDraws {
    pub fn none() -> Self {
        NoiseDraws { phase1_rad: 0.0, phase2_rad: 0.0 }
    }
}

/// Zero-mean Gaussian phase draws, one per interconversion interferometer,
/// both with standard deviation `sigma_deg`.
pub fn draw_phases(seed: u64, setting_index: u64, sigma_deg: f64) -> Result<NoiseDraws> {
    draw_phases_scaled(seed, setting_index, sigma_deg, sigma_deg)
}

/// As [`draw_phases`] but with separate widths for the two interferometers.
pub fn draw_phases_scaled(
    seed: u64,
    setting_index: u64,
    sigma1_deg: f64,
    sigma2_deg: f64,
) -> Result<NoiseDraws> {
    if !(sigma1_deg >= 0.0 && sigma2_deg >= 0.0) {
        return Err(Error::InvalidArgument(
            "phase noise widths must be non-negative".into(),
        ));
    }
    let mut rng = rng_from(&[seed, STREAM_PHASE, setting_index]);
    let unit = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let g1: f64 = unit.sample(&mut rng);
    let g2: f64 = unit.sample(&mut rng);
    Ok(NoiseDraws {
        phase1_rad: (g1 * sigma1_deg).to_radians(),
        phase2_rad: (g2 * sigma2_deg).to_radians(),
    })
}

/// Expected accidental coincidences in a window: `r_s * r_i * tau * T`.
pub fn accidentals(singles_s_hz: f64, singles_i_hz: f64, window_ns: f64, duration_s: f64) -> f64 {
    singles_s_hz * singles_i_hz * window_ns * 1e-9 * duration_s
}
