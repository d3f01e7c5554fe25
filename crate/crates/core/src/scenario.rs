//! Declarative run configuration.
//!
//! Scenarios are TOML files with explicit units in key names; unknown keys
//! are hard errors. Every run is fully determined by (scenario, seed), so
//! the manifest records the SHA-256 of the raw scenario bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::LinkConfig;
use crate::error::{Error, Result};
use crate::noisegen::StrainSchedule;
use crate::qmath::DensityMatrix;

/// Entangled pair source: Werner state plus lab rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    /// Werner visibility of the Bell state.
    pub visibility: f64,
    /// Relative phase of the |VV> term, degrees.
    pub phase_deg: f64,
    /// Detected pair rate at the analyzers before any channel loss, Hz.
    pub pair_rate_hz: f64,
    pub singles_signal_hz: f64,
    pub singles_idler_hz: f64,
    pub coincidence_window_ns: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec {
            visibility: 0.9947,
            phase_deg: 0.0,
            pair_rate_hz: 2000.0,
            singles_signal_hz: 0.0,
            singles_idler_hz: 0.0,
            coincidence_window_ns: 1.0,
        }
    }
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.visibility) || !self.visibility.is_finite() {
            return Err(Error::Config(format!(
                "source visibility must be in [0, 1], got {}",
                self.visibility
            )));
        }
        for (name, v) in [
            ("pair_rate_hz", self.pair_rate_hz),
            ("singles_signal_hz", self.singles_signal_hz),
            ("singles_idler_hz", self.singles_idler_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "source {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.coincidence_window_ns > 0.0) || !self.phase_deg.is_finite() {
            return Err(Error::Config(
                "source window must be positive and phase finite".into(),
            ));
        }
        Ok(())
    }

    pub fn state(&self) -> Result<DensityMatrix> {
        DensityMatrix::werner(self.phase_deg.to_radians(), self.visibility)
    }
}

/// How many tomography rounds to run and how long each setting acquires.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyPlan {
    pub n_rounds: u32,
    /// Seconds per setting; defaults to the strain dwell so each setting
    /// occupies exactly one schedule step.
    pub acquisition_s: Option<f64>,
    pub mc_trials: usize,
    pub subtract_accidentals: bool,
    pub histogram_events: u64,
    pub histogram_bin_ns: f64,
}

impl Default for TomographyPlan {
    fn default() -> Self {
        TomographyPlan {
            n_rounds: 10,
            acquisition_s: None,
            mc_trials: 200,
            subtract_accidentals: true,
            histogram_events: 200_000,
            histogram_bin_ns: 0.5,
        }
    }
}

impl TomographyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds < 1 {
            return Err(Error::Config("plan needs n_rounds >= 1".into()));
        }
        if let Some(a) = self.acquisition_s {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!(
                    "acquisition_s must be positive, got {a}"
                )));
            }
        }
        if self.mc_trials < 2 {
            return Err(Error::Config("plan needs mc_trials >= 2".into()));
        }
        if !(self.histogram_bin_ns > 0.0) {
            return Err(Error::Config("histogram_bin_ns must be positive".into()));
        }
        Ok(())
    }
}

/// Coincidence-vs-angle fringe scan block of the source characterization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FringePlan {
    pub signal_hwp_deg: Vec<f64>,
    pub idler_step_deg: f64,
    pub idler_max_deg: f64,
    pub repeats: u32,
}

impl Default for FringePlan {
    fn default() -> Self {
        FringePlan {
            signal_hwp_deg: vec![0.0, 22.5, 45.0, 67.5],
            idler_step_deg: 5.0,
            idler_max_deg: 90.0,
            repeats: 5,
        }
    }
}

impl FringePlan {
    pub fn validate(&self) -> Result<()> {
        if self.signal_hwp_deg.is_empty() {
            return Err(Error::Config("fringe scan needs signal settings".into()));
        }
        if !(self.idler_step_deg > 0.0 && self.idler_max_deg >= self.idler_step_deg) {
            return Err(Error::Config(
                "fringe idler sweep must have positive step within range".into(),
            ));
        }
        if self.repeats < 1 {
            return Err(Error::Config("fringe scan needs repeats >= 1".into()));
        }
        Ok(())
    }

    pub fn idler_angles(&self) -> Vec<f64> {
        let n = (self.idler_max_deg / self.idler_step_deg).floor() as usize;
        (0..=n).map(|k| k as f64 * self.idler_step_deg).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub strain: StrainSchedule,
    #[serde(default)]
    pub plan: TomographyPlan,
    #[serde(default)]
    pub fringe: FringePlan,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scn: Scenario =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario parse: {e}")))?;
        scn.validate()?;
        Ok(scn)
    }

    /// Loads and validates a scenario, returning it with the SHA-256 hex
    /// digest of the file bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let scn = Self::from_toml_str(&text)?;
        Ok((scn, sha256_hex(&bytes)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("scenario needs a name".into()));
        }
        self.source.validate()?;
        self.link.validate()?;
        self.strain.validate()?;
        self.plan.validate()?;
        self.fringe.validate()?;
        Ok(())
    }

    /// Seconds one tomography setting acquires.
    pub fn acquisition_s(&self) -> f64 {
        self.plan.acquisition_s.unwrap_or(self.strain.dwell_s)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let scn = Scenario::from_toml_str("name = \"demo\"").unwrap();
        assert_eq!(scn.plan.n_rounds, 10);
        assert_eq!(scn.seed, 0);
        assert_eq!(scn.acquisition_s(), 5.0);
        assert_eq!(scn.source.visibility, 0.9947);
        assert!(scn.output_dir.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_toml_str("name = \"x\"\nbogus = 1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = Scenario::from_toml_str("name = \"x\"\n[link]\nfoo_db = 3").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn nested_overrides_apply() {
        let text = r#"
name = "sweep"
seed = 7

[source]
visibility = 0.99
pair_rate_hz = 1.5e6

[link]
pdl_imbalance_db = 1.2

[strain]
dwell_s = 4.33

[plan]
n_rounds = 3
"#;
        let scn = Scenario::from_toml_str(text).unwrap();
        assert_eq!(scn.seed, 7);
        assert_eq!(scn.source.pair_rate_hz, 1.5e6);
        assert_eq!(scn.link.pdl_imbalance_db, 1.2);
        assert_eq!(scn.plan.n_rounds, 3);
        assert_eq!(scn.acquisition_s(), 4.33);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(Scenario::from_toml_str("name = \"x\"\n[source]\nvisibility = 1.2").is_err());
        assert!(Scenario::from_toml_str("name = \"x\"\n[plan]\nn_rounds = 0").is_err());
        assert!(
            Scenario::from_toml_str("name = \"x\"\n[strain]\nstep_deg = -1.0").is_err()
        );
        assert!(Scenario::from_toml_str("name = \"\"").is_err());
    }

    #[test]
    fn infinite_extinction_parses() {
        let scn =
            Scenario::from_toml_str("name = \"x\"\n[link]\nfpbs_split_extinction_db = inf")
                .unwrap();
        assert!(scn.link.fpbs_split_extinction_db.is_infinite());
    }

    #[test]
    fn hash_tracks_bytes() {
        let a = sha256_hex(b"name = \"x\"");
        let b = sha256_hex(b"name = \"y\"");
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(a, sha256_hex(b"name = \"x\""));
    }

    #[test]
    fn fringe_angles_enumerate_sweep() {
        let plan = FringePlan::default();
        let angles = plan.idler_angles();
        assert_eq!(angles.len(), 19);
        assert_eq!(angles[0], 0.0);
        assert_eq!(*angles.last().unwrap(), 90.0);
    }
}
