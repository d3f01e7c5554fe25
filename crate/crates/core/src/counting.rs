//! Coincidence counting: analyzer settings, expected and sampled counts,
//! arrival-time histograms, and accidental subtraction.
//!
//! Each analyzer is a quarter-wave plate followed by a half-wave plate and
//! a polarizing splitter; the detected state is the one the plates rotate
//! into the chosen port. Orthogonal outcomes are reached by offsetting the
//! half-wave plate by 45 degrees, so count records never need a port
//! column. Singles are carried as rates in Hz; the accidental estimate is
//! the usual rate product over the coincidence window.

use rand_distr::{Distribution, Normal, Poisson};

use crate::chain::{ChannelOutput, LinkConfig, ModeSpace, Peak};
use crate::elements::{hwp, qwp};
use crate::error::{Error, Result};
use crate::noisegen::{rng_from, STREAM_COUNTS, STREAM_HISTOGRAM};
use crate::qmath::{kron, CMatrix, DensityMatrix, PureState};

/// Output port of an analyzing polarizing splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    Transmit,
    Reflect,
}

/// One two-arm analyzer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSetting {
    pub name_s: String,
    pub name_i: String,
    pub qwp_s_deg: f64,
    pub hwp_s_deg: f64,
    pub qwp_i_deg: f64,
    pub hwp_i_deg: f64,
    pub port_s: Port,
    pub port_i: Port,
}

impl MeasurementSetting {
    /// Transmit-port setting on both arms (the usual case).
    pub fn transmit(
        name_s: impl Into<String>,
        name_i: impl Into<String>,
        qwp_s_deg: f64,
        hwp_s_deg: f64,
        qwp_i_deg: f64,
        hwp_i_deg: f64,
    ) -> Self {
        MeasurementSetting {
            name_s: name_s.into(),
            name_i: name_i.into(),
            qwp_s_deg,
            hwp_s_deg,
            qwp_i_deg,
            hwp_i_deg,
            port_s: Port::Transmit,
            port_i: Port::Transmit,
        }
    }
}

/// Detection efficiency per arm and analyzer port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorEffs {
    pub signal_transmit: f64,
    pub signal_reflect: f64,
    pub idler_transmit: f64,
    pub idler_reflect: f64,
}

impl DetectorEffs {
    pub fn unit() -> Self {
        DetectorEffs {
            signal_transmit: 1.0,
            signal_reflect: 1.0,
            idler_transmit: 1.0,
            idler_reflect: 1.0,
        }
    }

    pub fn from_link(cfg: &LinkConfig) -> Self {
        DetectorEffs {
            signal_transmit: cfg.eta_signal_transmit,
            signal_reflect: cfg.eta_signal_reflect,
            idler_transmit: cfg.eta_idler_transmit,
            idler_reflect: cfg.eta_idler_reflect,
        }
    }

    pub fn pair_efficiency(&self, setting: &MeasurementSetting) -> f64 {
        let s = match setting.port_s {
            Port::Transmit => self.signal_transmit,
            Port::Reflect => self.signal_reflect,
        };
        let i = match setting.port_i {
            Port::Transmit => self.idler_transmit,
            Port::Reflect => self.idler_reflect,
        };
        s * i
    }
}

/// Polarization state an analyzer arm projects onto: the plates map it
/// into the chosen splitter port.
pub fn analyzer_state(qwp_deg: f64, hwp_deg: f64, port: Port) -> PureState {
    let u = &(hwp(hwp_deg).matrix() * qwp(qwp_deg).matrix());
    let row = match port {
        Port::Transmit => 0,
        Port::Reflect => 1,
    };
    PureState::new(vec![u[(row, 0)].conj(), u[(row, 1)].conj()])
        .expect("waveplate rows have unit norm")
}

/// Rank-1 coincidence projector of a setting on the polarization pair.
pub fn analyzer_projector(setting: &MeasurementSetting) -> Result<CMatrix> {
    let s = analyzer_state(setting.qwp_s_deg, setting.hwp_s_deg, setting.port_s);
    let i = analyzer_state(setting.qwp_i_deg, setting.hwp_i_deg, setting.port_i);
    kron(s.density().matrix(), i.density().matrix())
}

/// Rates, durations, and efficiencies shared by a block of count records.
#[derive(Debug, Clone, Copy)]
pub struct CountingPlan {
    /// Pair generation rate reaching the analyzers at unit channel
    /// transmission, in Hz.
    pub pair_rate_hz: f64,
    pub duration_s: f64,
    /// Extra rate-only transmission (insertion losses and the like).
    pub rate_factor: f64,
    pub effs: DetectorEffs,
    /// Expected accidental coincidences over the window.
    pub accidentals: f64,
}

impl CountingPlan {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pair_rate_hz", self.pair_rate_hz),
            ("duration_s", self.duration_s),
            ("rate_factor", self.rate_factor),
            ("accidentals", self.accidentals),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean coincidence count for a (possibly sub-normalized) pair state.
pub fn expected_counts(
    rho: &DensityMatrix,
    setting: &MeasurementSetting,
    plan: &CountingPlan,
) -> Result<f64> {
    if rho.dim() != ModeSpace::PolPair.dim() {
        return Err(Error::DimensionMismatch {
            context: "expected_counts",
            expected: ModeSpace::PolPair.dim(),
            got: rho.dim(),
        });
    }
    plan.validate()?;
    let proj = analyzer_projector(setting)?;
    let prob = rho.expect_real(&proj).max(0.0);
    Ok(plan.pair_rate_hz
        * plan.rate_factor
        * plan.effs.pair_efficiency(setting)
        * prob
        * plan.duration_s
        + plan.accidentals)
}

/// Poisson draw around `mean`, deterministic in `(seed, stream)`.
pub fn sample_counts(mean: f64, seed: u64, stream: u64) -> Result<u64> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "count mean must be finite and >= 0, got {mean}"
        )));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let mut rng = rng_from(&[seed, STREAM_COUNTS, stream]);
    let poisson = Poisson::new(mean)
        .map_err(|e| Error::InvalidArgument(format!("bad Poisson mean {mean}: {e}")))?;
    Ok(poisson.sample(&mut rng).round() as u64)
}

/// One coincidence acquisition window, as serialized to counts CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub round: u32,
    pub setting_s: String,
    pub setting_i: String,
    pub qwp_s_deg: f64,
    pub hwp_s_deg: f64,
    pub qwp_i_deg: f64,
    pub hwp_i_deg: f64,
    pub t_start_s: f64,
    pub duration_s: f64,
    pub counts: u64,
    pub singles_s_hz: f64,
    pub singles_i_hz: f64,
    pub window_ns: f64,
}

pub const COUNTS_CSV_HEADER: &str =
    "round,setting_s,setting_i,qwp_s,hwp_s,qwp_i,hwp_i,t_start_s,duration_s,counts,singles_s,singles_i,window_ns";

impl CountRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.setting_s,
            self.setting_i,
            self.qwp_s_deg,
            self.hwp_s_deg,
            self.qwp_i_deg,
            self.hwp_i_deg,
            self.t_start_s,
            self.duration_s,
            self.counts,
            self.singles_s_hz,
            self.singles_i_hz,
            self.window_ns
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(Error::IncompleteData(format!(
                "count record needs 13 fields, got {}: {line:?}",
                fields.len()
            )));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
            s.trim().parse().map_err(|_| {
                Error::IncompleteData(format!("cannot parse {what} from {s:?}"))
            })
        }
        Ok(CountRecord {
            round: num(fields[0], "round")?,
            setting_s: fields[1].trim().to_string(),
            setting_i: fields[2].trim().to_string(),
            qwp_s_deg: num(fields[3], "qwp_s")?,
            hwp_s_deg: num(fields[4], "hwp_s")?,
            qwp_i_deg: num(fields[5], "qwp_i")?,
            hwp_i_deg: num(fields[6], "hwp_i")?,
            t_start_s: num(fields[7], "t_start_s")?,
            duration_s: num(fields[8], "duration_s")?,
            counts: num(fields[9], "counts")?,
            singles_s_hz: num(fields[10], "singles_s")?,
            singles_i_hz: num(fields[11], "singles_i")?,
            window_ns: num(fields[12], "window_ns")?,
        })
    }

    /// Accidental coincidences estimated from this record's own singles
    /// rates: `r_s * r_i * tau * T`.
    pub fn accidental_estimate(&self) -> f64 {
        self.singles_s_hz * self.singles_i_hz * self.window_ns * 1e-9 * self.duration_s
    }

    /// The setting this record was taken at (transmit ports by definition
    /// of the CSV format).
    pub fn setting(&self) -> MeasurementSetting {
        MeasurementSetting::transmit(
            self.setting_s.clone(),
            self.setting_i.clone(),
            self.qwp_s_deg,
            self.hwp_s_deg,
            self.qwp_i_deg,
            self.hwp_i_deg,
        )
    }
}

/// Accidental-corrected counts, clamped at zero, aligned with the input.
pub fn subtract_accidentals(records: &[CountRecord]) -> Vec<f64> {
    records
        .iter()
        .map(|r| (r.counts as f64 - r.accidental_estimate()).max(0.0))
        .collect()
}

/// Bin populations of the encoded state conditioned on the signal
/// polarization; the pair of numbers that characterizes how faithfully
/// module 1 sorted the idler into time bins.
#[derive(Debug, Clone, Copy)]
pub struct BinConditionals {
    pub p_early_given_h: f64,
    pub p_late_given_v: f64,
}

pub fn conditional_bin_probs(mid_state: &DensityMatrix) -> Result<BinConditionals> {
    if mid_state.dim() != ModeSpace::MidLink.dim() {
        return Err(Error::DimensionMismatch {
            context: "conditional_bin_probs",
            expected: ModeSpace::MidLink.dim(),
            got: mid_state.dim(),
        });
    }
    let m = mid_state.matrix();
    let diag = |i: usize| m[(i, i)].re;
    // Index layout: signal*4 + pol*2 + bin.
    let h_early = diag(0) + diag(2);
    let h_total = h_early + diag(1) + diag(3);
    let v_late = diag(5) + diag(7);
    let v_total = v_late + diag(4) + diag(6);
    if !(h_total > 0.0 && v_total > 0.0) {
        return Err(Error::ZeroTrace("conditional_bin_probs"));
    }
    Ok(BinConditionals {
        p_early_given_h: h_early / h_total,
        p_late_given_v: v_late / v_total,
    })
}

/// Arrival-time histogram with uniform bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalHistogram {
    pub t_min_ns: f64,
    pub bin_width_ns: f64,
    pub counts: Vec<u64>,
}

impl ArrivalHistogram {
    pub fn bin_center_ns(&self, idx: usize) -> f64 {
        self.t_min_ns + (idx as f64 + 0.5) * self.bin_width_ns
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts within a quarter bin-separation of each nominal peak time.
    pub fn peak_counts(&self, separation_ns: f64) -> [u64; 3] {
        let mut out = [0u64; 3];
        for (i, &c) in self.counts.iter().enumerate() {
            let t = self.bin_center_ns(i);
            for (k, o) in out.iter_mut().enumerate() {
                if (t - k as f64 * separation_ns).abs() <= separation_ns / 4.0 {
                    *o += c;
                }
            }
        }
        out
    }

    /// Fraction of events farther than a quarter separation from every
    /// peak center.
    pub fn interpeak_fraction(&self, separation_ns: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let stray: u64 = self
            .counts
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = self.bin_center_ns(*i);
                (0..3).all(|k| (t - k as f64 * separation_ns).abs() > separation_ns / 4.0)
            })
            .map(|(_, &c)| c)
            .sum();
        stray as f64 / total as f64
    }
}

/// Samples `n_events` arrival times from the three-peak structure of a
/// converted output, smeared by detector jitter and wavepacket duration in
/// quadrature.
pub fn histogram_arrivals(
    output: &ChannelOutput,
    cfg: &LinkConfig,
    n_events: u64,
    seed: u64,
    stream: u64,
    bin_width_ns: f64,
) -> Result<ArrivalHistogram> {
    if !(bin_width_ns > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width must be positive, got {bin_width_ns}"
        )));
    }
    let total: f64 = output.peak_weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTrace("histogram_arrivals"));
    }
    let sep = cfg.timebin_separation_ns;
    let t_min = -sep / 2.0;
    let span = 3.0 * sep;
    let n_bins = (span / bin_width_ns).ceil() as usize;
    let mut counts = vec![0u64; n_bins];

    let cum: Vec<f64> = output
        .peak_weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let sigma_ns = cfg.arrival_sigma_ps() / 1000.0;
    let jitter = Normal::new(0.0, sigma_ns)
        .map_err(|e| Error::InvalidArgument(format!("bad jitter width: {e}")))?;

    let mut rng = rng_from(&[seed, STREAM_HISTOGRAM, stream]);
    for _ in 0..n_events {
        let u: f64 = rand::Rng::random(&mut rng);
        let peak = cum.iter().position(|&c| u < c).unwrap_or(2);
        let t = Peak::EarlyEarly.arrival_ns(sep)
            + peak as f64 * sep
            + jitter.sample(&mut rng);
        let idx = ((t - t_min) / bin_width_ns).floor();
        let idx = (idx.max(0.0) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    Ok(ArrivalHistogram {
        t_min_ns: t_min,
        bin_width_ns,
        counts,
    })
}
