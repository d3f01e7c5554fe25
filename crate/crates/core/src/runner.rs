//! Campaign drivers: simulate the three experiments, analyze them, and
//! write the output tree.
//!
//! Every run is a pure function of (scenario, seed). Simulated wall clock
//! advances one acquisition window per measurement setting while the
//! strain schedule steps underneath it; windows that straddle a dwell
//! boundary integrate the channel piecewise. Outputs are staged into a
//! `.partial` sibling directory and renamed into place on success.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::chain::{
    calibrated_bell_fidelity, end_to_end, pol_only_baseline, pol_to_timebin, postselect_middle,
    timebin_to_pol, transport, ChannelOutput, LinkConfig,
};
use crate::counting::{
    analyzer_projector, conditional_bin_probs, expected_counts, histogram_arrivals,
    sample_counts, ArrivalHistogram, CountRecord, CountingPlan, DetectorEffs,
    MeasurementSetting, COUNTS_CSV_HEADER,
};
use crate::elements::PaddleAngles;
use crate::error::{Error, Result};
use crate::noisegen::{accidentals, derive_seed, draw_phases_scaled, NoiseDraws};
use crate::qmath::{eigh, fidelity_pure, CMatrix, DensityMatrix, PureState, C64};
use crate::scenario::Scenario;
use crate::tomography::{
    chsh_s, chsh_settings, linear_trend, mc_uncertainty, reconstruct, settings_36,
};

/// Seed-domain tags for per-round Monte Carlo streams.
const SEED_DOMAIN_ROUND_MC: u64 = 101;
const SEED_DOMAIN_SOURCE_MC: u64 = 102;

/// Splits an acquisition window `[t0, t0+len)` at strain dwell boundaries.
/// Returns (sample time, seconds) per piece; sample times sit mid-segment
/// so boundary rounding can never pick the wrong dwell.
fn dwell_segments(t0: f64, len: f64, dwell_s: f64) -> Vec<(f64, f64)> {
    let end = t0 + len;
    let mut out = Vec::new();
    let mut t = t0;
    while t < end - 1e-9 {
        let mut next = ((t / dwell_s).floor() + 1.0) * dwell_s;
        if next <= t + 1e-9 {
            next += dwell_s;
        }
        let stop = next.min(end);
        out.push((0.5 * (t + stop), stop - t));
        t = stop;
    }
    out
}

/// Row-major (re, im) pairs for JSON emission.
fn rho_pairs(rho: &DensityMatrix) -> Vec<[f64; 2]> {
    rho.matrix().data().iter().map(|z| [z.re, z.im]).collect()
}

/// One tomography round as written to results JSON-lines.
#[derive(Debug, Clone, Serialize)]
pub struct RoundResult {
    pub round: u32,
    pub t_start_s: f64,
    pub duration_s: f64,
    pub total_counts: f64,
    pub fidelity: f64,
    pub fidelity_std: f64,
    /// Bell phase the fidelity was calibrated at, radians.
    pub phase_rad: f64,
    pub min_eigenvalue: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chsh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chsh_std: Option<f64>,
    pub rho: Vec<[f64; 2]>,
}

/// One local-basis group of the rate trace.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub round: u32,
    pub group: usize,
    pub basis_s: &'static str,
    pub basis_i: &'static str,
    pub t_start_s: f64,
    pub duration_s: f64,
    pub counts: u64,
    pub rate_hz: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BinSummary {
    pub p_early_given_h: f64,
    pub p_late_given_v: f64,
}

/// Noise-free channel figures at identity paddles and nominal phases.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnalyticChecks {
    pub fidelity: f64,
    pub mid_success: f64,
    pub peak_weights: [f64; 3],
    /// Two-module conversion loss at identity paddles, dB.
    pub conversion_loss_db: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub kind: String,
    pub n_rounds: u32,
    pub mean_fidelity: f64,
    pub fidelity_std: f64,
    pub fidelity_min: f64,
    pub fidelity_max: f64,
    pub rate_max_over_min: f64,
    pub rate_cov: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_fit_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_fit_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_conditionals: Option<BinSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticChecks>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FringeFit {
    pub signal_hwp_deg: f64,
    pub offset: f64,
    pub amplitude: f64,
    /// Phase of the cos(4 theta) harmonic, degrees.
    pub phase_deg: f64,
    pub visibility: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceSummary {
    pub kind: String,
    pub fidelity: f64,
    pub fidelity_std: f64,
    pub chsh_subtracted_mean: f64,
    pub chsh_subtracted_std: f64,
    pub chsh_raw_mean: f64,
    pub chsh_raw_std: f64,
    pub fringes: Vec<FringeFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario_name: String,
    pub kind: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub tool_version: String,
    pub files: Vec<String>,
    pub simulated_wall_clock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Interconvert,
    Baseline,
}

impl SweepKind {
    fn label(self) -> &'static str {
        match self {
            SweepKind::Interconvert => "interconvert",
            SweepKind::Baseline => "baseline",
        }
    }
}

pub struct SweepData {
    pub records: Vec<CountRecord>,
    pub rounds: Vec<RoundResult>,
    pub rate_rows: Vec<RateRow>,
    pub histogram: Option<ArrivalHistogram>,
    pub summary: SweepSummary,
}

const GROUP_LABELS: [&str; 3] = ["HV", "DA", "RL"];

fn sample_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn record_from_setting(
    setting: &MeasurementSetting,
    round: u32,
    t_start_s: f64,
    duration_s: f64,
    counts: u64,
    singles_s_hz: f64,
    singles_i_hz: f64,
    window_ns: f64,
) -> CountRecord {
    CountRecord {
        round,
        setting_s: setting.name_s.clone(),
        setting_i: setting.name_i.clone(),
        qwp_s_deg: setting.qwp_s_deg,
        hwp_s_deg: setting.hwp_s_deg,
        qwp_i_deg: setting.qwp_i_deg,
        hwp_i_deg: setting.hwp_i_deg,
        t_start_s,
        duration_s,
        counts,
        singles_s_hz,
        singles_i_hz,
        window_ns,
    }
}

fn analytic_checks(link: &LinkConfig, phase_rad: f64) -> Result<AnalyticChecks> {
    let bell = PureState::bell_phi_plus(phase_rad).density();
    let idle = PaddleAngles::new(0.0, 0.0, 0.0);
    let none = NoiseDraws::none();
    let mid = pol_to_timebin(&bell, link, &none)?;
    let moved = transport(&mid, &idle)?;
    let out = timebin_to_pol(&moved, link, &none)?;
    let (state, success) = postselect_middle(&out)?;
    Ok(AnalyticChecks {
        fidelity: fidelity_pure(&state, &PureState::bell_phi_plus(phase_rad))?,
        mid_success: success,
        peak_weights: out.peak_weights,
        conversion_loss_db: -10.0 * success.log10(),
    })
}

/// Simulates one full sweep campaign: `n_rounds` sequential 36-setting
/// tomographies, one setting per acquisition window, with the strain
/// schedule advancing in lockstep underneath.
pub fn simulate_sweep(scn: &Scenario, kind: SweepKind) -> Result<SweepData> {
    let source = scn.source.state()?;
    let settings = settings_36();
    let projectors: Vec<CMatrix> = settings
        .iter()
        .map(analyzer_projector)
        .collect::<Result<_>>()?;
    let acq = scn.acquisition_s();
    let dwell = scn.strain.dwell_s;
    let effs = DetectorEffs::from_link(&scn.link);
    let insertion = match kind {
        SweepKind::Interconvert => scn.link.insertion_transmission(),
        SweepKind::Baseline => 1.0,
    };

    let mut records = Vec::with_capacity(scn.plan.n_rounds as usize * 36);
    let mut rate_rows: Vec<RateRow> = Vec::new();
    let mut rounds = Vec::with_capacity(scn.plan.n_rounds as usize);

    for round in 0..scn.plan.n_rounds {
        let round_offset = records.len();
        for (k, setting) in settings.iter().enumerate() {
            let global = u64::from(round) * 36 + k as u64;
            let t0 = global as f64 * acq;
            let draws = draw_phases_scaled(
                scn.seed,
                global,
                scn.link.phase1_sigma_deg,
                scn.link.phase2_sigma_deg,
            )?;
            let mut prob_seconds = 0.0;
            let mut survival_seconds = 0.0;
            for (t_mid, weight) in dwell_segments(t0, acq, dwell) {
                let paddles = scn.strain.paddle_at(t_mid)?;
                let (out, survival) = match kind {
                    SweepKind::Interconvert => end_to_end(&source, &scn.link, &paddles, &draws)?,
                    SweepKind::Baseline => pol_only_baseline(&source, &paddles)?,
                };
                prob_seconds += out.expect_real(&projectors[k]).max(0.0) * weight;
                survival_seconds += survival * weight;
            }
            let singles_i_hz =
                scn.source.singles_idler_hz * insertion * (survival_seconds / acq);
            let singles_s_hz = scn.source.singles_signal_hz;
            let mean = scn.source.pair_rate_hz
                * insertion
                * effs.pair_efficiency(setting)
                * prob_seconds
                + accidentals(
                    singles_s_hz,
                    singles_i_hz,
                    scn.source.coincidence_window_ns,
                    acq,
                );
            let counts = sample_counts(mean, scn.seed, global)?;
            records.push(record_from_setting(
                setting,
                round,
                t0,
                acq,
                counts,
                singles_s_hz,
                singles_i_hz,
                scn.source.coincidence_window_ns,
            ));
        }

        let round_records = &records[round_offset..];
        for group in 0..9 {
            let members = &round_records[group * 4..group * 4 + 4];
            let counts: u64 = members.iter().map(|r| r.counts).sum();
            let duration = acq * 4.0;
            rate_rows.push(RateRow {
                round,
                group,
                basis_s: GROUP_LABELS[group / 3],
                basis_i: GROUP_LABELS[group % 3],
                t_start_s: members[0].t_start_s,
                duration_s: duration,
                counts,
                rate_hz: counts as f64 / duration,
                normalized: 0.0,
            });
        }

        let subtract = scn.plan.subtract_accidentals;
        let tomo = reconstruct(round_records, subtract)?;
        let calib = calibrated_bell_fidelity(&tomo.rho)?;
        let mc_seed = derive_seed(&[scn.seed, SEED_DOMAIN_ROUND_MC, u64::from(round)]);
        let mc = mc_uncertainty(
            round_records,
            |recs| reconstruct(recs, subtract)?.calibrated_fidelity(),
            scn.plan.mc_trials,
            mc_seed,
        )?;
        rounds.push(RoundResult {
            round,
            t_start_s: round_records[0].t_start_s,
            duration_s: acq * 36.0,
            total_counts: round_records.iter().map(|r| r.counts as f64).sum(),
            fidelity: calib.fidelity.clamp(0.0, 1.0),
            fidelity_std: mc.std,
            phase_rad: calib.phase_rad,
            min_eigenvalue: tomo.physicality.min_eigenvalue,
            chsh: None,
            chsh_std: None,
            rho: rho_pairs(&tomo.rho),
        });
    }

    let max_rate = rate_rows.iter().map(|r| r.rate_hz).fold(0.0, f64::max);
    if !(max_rate > 0.0) {
        return Err(Error::IncompleteData("sweep produced no counts".into()));
    }
    let min_rate = rate_rows
        .iter()
        .map(|r| r.rate_hz)
        .fold(f64::INFINITY, f64::min);
    for row in &mut rate_rows {
        row.normalized = row.rate_hz / max_rate;
    }
    let rates: Vec<f64> = rate_rows.iter().map(|r| r.rate_hz).collect();
    let (rate_mean, rate_std) = sample_mean_std(&rates);

    let fidelities: Vec<f64> = rounds.iter().map(|r| r.fidelity).collect();
    let (mean_fidelity, fidelity_std) = sample_mean_std(&fidelities);
    let fidelity_min = fidelities.iter().copied().fold(f64::INFINITY, f64::min);
    let fidelity_max = fidelities.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let (fit_slope, fit_corr) = if rounds.len() >= 2 {
        let x: Vec<f64> = rounds.iter().map(|r| r.total_counts).collect();
        let fit = linear_trend(&x, &fidelities)?;
        (Some(fit.slope), Some(fit.correlation))
    } else {
        (None, None)
    };

    let (bin_conditionals, analytic, histogram) = match kind {
        SweepKind::Interconvert => {
            let mid = pol_to_timebin(&source, &scn.link, &NoiseDraws::none())?;
            let bins = conditional_bin_probs(&mid)?;
            let checks = analytic_checks(&scn.link, scn.source.phase_deg.to_radians())?;
            let hist = histogram_for(scn, &source)?;
            (
                Some(BinSummary {
                    p_early_given_h: bins.p_early_given_h,
                    p_late_given_v: bins.p_late_given_v,
                }),
                Some(checks),
                Some(hist),
            )
        }
        SweepKind::Baseline => (None, None, None),
    };

    let summary = SweepSummary {
        kind: kind.label().to_string(),
        n_rounds: scn.plan.n_rounds,
        mean_fidelity,
        fidelity_std,
        fidelity_min,
        fidelity_max,
        rate_max_over_min: max_rate / min_rate,
        rate_cov: rate_std / rate_mean,
        counts_fit_slope: fit_slope,
        counts_fit_correlation: fit_corr,
        bin_conditionals,
        analytic,
    };

    Ok(SweepData {
        records,
        rounds,
        rate_rows,
        histogram,
        summary,
    })
}

/// Arrival histogram of the converted output at the schedule start.
fn histogram_for(scn: &Scenario, source: &DensityMatrix) -> Result<ArrivalHistogram> {
    let none = NoiseDraws::none();
    let mid = pol_to_timebin(source, &scn.link, &none)?;
    let moved = transport(&mid, &scn.strain.paddle_at(0.0)?)?;
    let out: ChannelOutput = timebin_to_pol(&moved, &scn.link, &none)?;
    histogram_arrivals(
        &out,
        &scn.link,
        scn.plan.histogram_events,
        scn.seed,
        0,
        scn.plan.histogram_bin_ns,
    )
}

pub struct SourceData {
    pub tomo_records: Vec<CountRecord>,
    pub chsh_records: Vec<CountRecord>,
    pub fringe_records: Vec<CountRecord>,
    pub result: RoundResult,
    pub summary: SourceSummary,
    pub simulated_wall_clock_s: f64,
}

/// Simulates the source-only characterization: 36-setting tomography,
/// repeated CHSH blocks, and coincidence fringes versus the idler
/// half-wave plate at several signal settings. The conversion modules are
/// bypassed.
pub fn simulate_source_characterization(scn: &Scenario) -> Result<SourceData> {
    let rho = scn.source.state()?;
    let acq = scn.acquisition_s();
    let acc = accidentals(
        scn.source.singles_signal_hz,
        scn.source.singles_idler_hz,
        scn.source.coincidence_window_ns,
        acq,
    );
    let plan = CountingPlan {
        pair_rate_hz: scn.source.pair_rate_hz,
        duration_s: acq,
        rate_factor: 1.0,
        effs: DetectorEffs::unit(),
        accidentals: acc,
    };
    let mut clock = 0.0;
    let mut stream = 0u64;
    let mut acquire = |setting: &MeasurementSetting, round: u32| -> Result<CountRecord> {
        let mean = expected_counts(&rho, setting, &plan)?;
        let counts = sample_counts(mean, scn.seed, stream)?;
        let rec = record_from_setting(
            setting,
            round,
            clock,
            acq,
            counts,
            scn.source.singles_signal_hz,
            scn.source.singles_idler_hz,
            scn.source.coincidence_window_ns,
        );
        clock += acq;
        stream += 1;
        Ok(rec)
    };

    let mut tomo_records = Vec::with_capacity(36);
    for setting in settings_36() {
        tomo_records.push(acquire(&setting, 0)?);
    }

    let chsh_set = chsh_settings();
    let repeats = scn.fringe.repeats;
    let mut chsh_records = Vec::with_capacity(chsh_set.len() * repeats as usize);
    for rep in 0..repeats {
        for setting in &chsh_set {
            chsh_records.push(acquire(setting, rep)?);
        }
    }

    let mut fringe_records = Vec::new();
    for rep in 0..repeats {
        for &sig in &scn.fringe.signal_hwp_deg {
            for idl in scn.fringe.idler_angles() {
                let setting =
                    MeasurementSetting::transmit(format!("s{sig}"), format!("i{idl}"), 0.0, sig, 0.0, idl);
                fringe_records.push(acquire(&setting, rep)?);
            }
        }
    }

    let subtract = scn.plan.subtract_accidentals;
    let tomo = reconstruct(&tomo_records, subtract)?;
    let calib = calibrated_bell_fidelity(&tomo.rho)?;
    let mc_seed = derive_seed(&[scn.seed, SEED_DOMAIN_SOURCE_MC]);
    let mc = mc_uncertainty(
        &tomo_records,
        |recs| reconstruct(recs, subtract)?.calibrated_fidelity(),
        scn.plan.mc_trials,
        mc_seed,
    )?;

    let mut s_sub = Vec::with_capacity(repeats as usize);
    let mut s_raw = Vec::with_capacity(repeats as usize);
    for rep in 0..repeats {
        let block: Vec<CountRecord> = chsh_records
            .iter()
            .filter(|r| r.round == rep)
            .cloned()
            .collect();
        s_sub.push(chsh_s(&block, true)?.s_value);
        s_raw.push(chsh_s(&block, false)?.s_value);
    }
    let (sub_mean, sub_std) = sample_mean_std(&s_sub);
    let (raw_mean, raw_std) = sample_mean_std(&s_raw);

    let mut fringes = Vec::new();
    for &sig in &scn.fringe.signal_hwp_deg {
        let name = format!("s{sig}");
        let pts: Vec<(f64, f64)> = fringe_records
            .iter()
            .filter(|r| r.setting_s == name)
            .map(|r| (r.hwp_i_deg, r.counts as f64))
            .collect();
        let angles: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let counts: Vec<f64> = pts.iter().map(|p| p.1).collect();
        fringes.push(fit_fringe(sig, &angles, &counts)?);
    }

    let result = RoundResult {
        round: 0,
        t_start_s: 0.0,
        duration_s: acq * 36.0,
        total_counts: tomo_records.iter().map(|r| r.counts as f64).sum(),
        fidelity: calib.fidelity.clamp(0.0, 1.0),
        fidelity_std: mc.std,
        phase_rad: calib.phase_rad,
        min_eigenvalue: tomo.physicality.min_eigenvalue,
        chsh: Some(sub_mean),
        chsh_std: Some(sub_std),
        rho: rho_pairs(&tomo.rho),
    };
    let summary = SourceSummary {
        kind: "source_characterization".to_string(),
        fidelity: result.fidelity,
        fidelity_std: mc.std,
        chsh_subtracted_mean: sub_mean,
        chsh_subtracted_std: sub_std,
        chsh_raw_mean: raw_mean,
        chsh_raw_std: raw_std,
        fringes,
    };
    Ok(SourceData {
        tomo_records,
        chsh_records,
        fringe_records,
        result,
        summary,
        simulated_wall_clock_s: clock,
    })
}

/// Least-squares fit of counts to `b0 + b1 cos(4 theta) + b2 sin(4 theta)`.
fn fit_fringe(signal_hwp_deg: f64, angles_deg: &[f64], counts: &[f64]) -> Result<FringeFit> {
    if angles_deg.len() != counts.len() || angles_deg.len() < 4 {
        return Err(Error::IncompleteData(format!(
            "fringe fit needs matched samples (>= 4), got {}",
            angles_deg.len()
        )));
    }
    let rows: Vec<[f64; 3]> = angles_deg
        .iter()
        .map(|&a| {
            let x = 4.0 * a.to_radians();
            [1.0, x.cos(), x.sin()]
        })
        .collect();
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (row, &y) in rows.iter().zip(counts) {
        for j in 0..3 {
            atb[j] += row[j] * y;
            for k in 0..3 {
                ata[j][k] += row[j] * row[k];
            }
        }
    }
    let mat = CMatrix::from_fn(3, 3, |j, k| C64::new(ata[j][k], 0.0));
    let decomp = eigh(&mat)?;
    let max_eig = decomp
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let mut beta = [0.0f64; 3];
    for (k, &lambda) in decomp.eigenvalues.iter().enumerate() {
        if lambda < 1e-12 * max_eig {
            return Err(Error::SingularSystem("fringe design matrix is degenerate"));
        }
        let mut proj = 0.0;
        for j in 0..3 {
            proj += decomp.eigenvectors[(j, k)].re * atb[j];
        }
        for j in 0..3 {
            beta[j] += decomp.eigenvectors[(j, k)].re * proj / lambda;
        }
    }
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (row, &y) in rows.iter().zip(counts) {
        let fit: f64 = (0..3).map(|j| beta[j] * row[j]).sum();
        ss_res += (y - fit).powi(2);
        ss_tot += (y - mean).powi(2);
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res < 1e-9 {
        1.0
    } else {
        0.0
    };
    let amplitude = beta[1].hypot(beta[2]);
    Ok(FringeFit {
        signal_hwp_deg,
        offset: beta[0],
        amplitude,
        phase_deg: beta[2].atan2(beta[1]).to_degrees(),
        visibility: if beta[0] > 0.0 { amplitude / beta[0] } else { 0.0 },
        r_squared,
    })
}

/// Staged output directory: everything lands in `<dir>.partial` and is
/// renamed over the final path only when complete.
struct Stage {
    final_dir: PathBuf,
    work: PathBuf,
    files: Vec<String>,
}

impl Stage {
    fn new(final_dir: &Path) -> Result<Self> {
        let name = final_dir
            .file_name()
            .ok_or_else(|| Error::Config(format!("bad output dir {}", final_dir.display())))?;
        let work = final_dir.with_file_name(format!("{}.partial", name.to_string_lossy()));
        if work.exists() {
            std::fs::remove_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        }
        std::fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        Ok(Stage {
            final_dir: final_dir.to_path_buf(),
            work,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.work.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self) -> Result<Vec<String>> {
        if self.final_dir.exists() {
            std::fs::remove_dir_all(&self.final_dir)
                .map_err(|e| Error::io(&self.final_dir, e))?;
        }
        std::fs::rename(&self.work, &self.final_dir)
            .map_err(|e| Error::io(&self.final_dir, e))?;
        let mut files = self.files;
        files.sort();
        Ok(files)
    }
}

fn counts_csv(records: &[CountRecord]) -> String {
    let mut out = String::from(COUNTS_CSV_HEADER);
    out.push('\n');
    for rec in records {
        out.push_str(&rec.to_csv_line());
        out.push('\n');
    }
    out
}

fn results_jsonl(rounds: &[RoundResult]) -> Result<String> {
    let mut out = String::new();
    for round in rounds {
        let line = serde_json::to_string(round)
            .map_err(|e| Error::Config(format!("results serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

fn rate_trace_csv(rows: &[RateRow]) -> String {
    let mut out =
        String::from("round,group,basis_s,basis_i,t_start_s,duration_s,counts,rate_hz,normalized\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.group,
            r.basis_s,
            r.basis_i,
            r.t_start_s,
            r.duration_s,
            r.counts,
            r.rate_hz,
            r.normalized
        ));
    }
    out
}

fn histogram_csv(hist: &ArrivalHistogram) -> String {
    let mut out = String::from("bin_center_ns,counts\n");
    for (i, &c) in hist.counts.iter().enumerate() {
        out.push_str(&format!("{},{}\n", hist.bin_center_ns(i), c));
    }
    out
}

fn fringe_fits_csv(fits: &[FringeFit]) -> String {
    let mut out =
        String::from("signal_hwp_deg,offset,amplitude,phase_deg,visibility,r_squared\n");
    for f in fits {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.signal_hwp_deg, f.offset, f.amplitude, f.phase_deg, f.visibility, f.r_squared
        ));
    }
    out
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("JSON serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn write_manifest(
    stage: &mut Stage,
    scn: &Scenario,
    kind: &str,
    scenario_sha256: &str,
    simulated_wall_clock_s: f64,
) -> Result<RunManifest> {
    let mut files = stage.files.clone();
    files.sort();
    let manifest = RunManifest {
        scenario_name: scn.name.clone(),
        kind: kind.to_string(),
        scenario_sha256: scenario_sha256.to_string(),
        seed: scn.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        files,
        simulated_wall_clock_s,
    };
    stage.write("manifest.json", &to_pretty_json(&manifest)?)?;
    Ok(manifest)
}

/// Runs a sweep campaign and writes counts, per-round results, the rate
/// trace, the arrival histogram (conversion runs), a summary, and the
/// manifest.
pub fn run_sweep(
    scn: &Scenario,
    kind: SweepKind,
    scenario_sha256: &str,
    out_dir: &Path,
) -> Result<SweepSummary> {
    let data = simulate_sweep(scn, kind)?;
    if data.rounds.is_empty() {
        return Err(Error::IncompleteData("sweep produced no rounds".into()));
    }
    let wall = f64::from(scn.plan.n_rounds) * 36.0 * scn.acquisition_s();
    let mut stage = Stage::new(out_dir)?;
    stage.write("counts.csv", &counts_csv(&data.records))?;
    stage.write("results.jsonl", &results_jsonl(&data.rounds)?)?;
    stage.write("rate_trace.csv", &rate_trace_csv(&data.rate_rows))?;
    if let Some(hist) = &data.histogram {
        stage.write("histogram.csv", &histogram_csv(hist))?;
    }
    stage.write("summary.json", &to_pretty_json(&data.summary)?)?;
    write_manifest(&mut stage, scn, kind.label(), scenario_sha256, wall)?;
    stage.finish()?;
    Ok(data.summary)
}

/// Runs the source characterization and writes its counts blocks, fringe
/// fits, single-round result, summary, and manifest.
pub fn run_source_characterization(
    scn: &Scenario,
    scenario_sha256: &str,
    out_dir: &Path,
) -> Result<SourceSummary> {
    let data = simulate_source_characterization(scn)?;
    let mut stage = Stage::new(out_dir)?;
    stage.write("tomography_counts.csv", &counts_csv(&data.tomo_records))?;
    stage.write("chsh_counts.csv", &counts_csv(&data.chsh_records))?;
    stage.write("fringe_counts.csv", &counts_csv(&data.fringe_records))?;
    stage.write("fringe_fits.csv", &fringe_fits_csv(&data.summary.fringes))?;
    stage.write(
        "results.jsonl",
        &results_jsonl(std::slice::from_ref(&data.result))?,
    )?;
    stage.write("summary.json", &to_pretty_json(&data.summary)?)?;
    write_manifest(
        &mut stage,
        scn,
        "source_characterization",
        scenario_sha256,
        data.simulated_wall_clock_s,
    )?;
    stage.finish()?;
    Ok(data.summary)
}

/// Reads a counts CSV produced by any run back into records.
pub fn read_counts_csv(path: &Path) -> Result<Vec<CountRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == COUNTS_CSV_HEADER => {}
        other => {
            return Err(Error::IncompleteData(format!(
                "{}: expected counts header, got {:?}",
                path.display(),
                other
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(CountRecord::from_csv_line)
        .collect()
}

/// Groups records by their round column, preserving order within rounds.
pub fn split_rounds(records: &[CountRecord]) -> BTreeMap<u32, Vec<CountRecord>> {
    let mut out: BTreeMap<u32, Vec<CountRecord>> = BTreeMap::new();
    for rec in records {
        out.entry(rec.round).or_default().push(rec.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mini_scenario(text: &str) -> Scenario {
        Scenario::from_toml_str(text).unwrap()
    }

    #[test]
    fn dwell_segmentation_covers_the_window() {
        // Window aligned with dwells: one segment.
        let segs = dwell_segments(8.66, 4.33, 4.33);
        assert_eq!(segs.len(), 1);
        assert_abs_diff_eq!(segs[0].1, 4.33, epsilon = 1e-9);

        // Window crossing one dwell boundary: two segments, weights sum.
        let segs = dwell_segments(3.0, 4.0, 5.0);
        assert_eq!(segs.len(), 2);
        assert_abs_diff_eq!(segs[0].1 + segs[1].1, 4.0, epsilon = 1e-12);
        assert!(segs[0].0 < 5.0 && segs[1].0 > 5.0);

        // Accumulated float error must not spawn sliver segments.
        let t0 = 4.33 * 359.0;
        let segs = dwell_segments(t0, 4.33, 4.33);
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn ideal_interconvert_sweep_reports_unit_fidelity() {
        let scn = mini_scenario(
            r#"
name = "ideal"
seed = 11
[source]
visibility = 1.0
pair_rate_hz = 4.0e6
[link]
fpbs_split_extinction_db = inf
fpbs_cleanup_extinction_db = inf
fpbs_combine_extinction_db = inf
fbs_imbalance = 0.0
phase1_sigma_deg = 0.0
phase2_sigma_deg = 0.0
temporal_mismatch_ps = 0.0
detector_jitter_ps = 0.0
module1_insertion_loss_db = 0.0
module2_insertion_loss_db = 0.0
[plan]
n_rounds = 2
mc_trials = 8
[strain]
dwell_s = 4.33
"#,
        );
        let data = simulate_sweep(&scn, SweepKind::Interconvert).unwrap();
        assert_eq!(data.records.len(), 72);
        assert_eq!(data.rounds.len(), 2);
        for round in &data.rounds {
            assert!(round.fidelity > 0.999, "F = {}", round.fidelity);
        }
        let analytic = data.summary.analytic.unwrap();
        assert_abs_diff_eq!(analytic.fidelity, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(analytic.mid_success, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(analytic.conversion_loss_db, 6.0206, epsilon = 1e-3);
        let bins = data.summary.bin_conditionals.unwrap();
        assert_abs_diff_eq!(bins.p_early_given_h, 1.0, epsilon = 1e-12);
        // The rate trace tracks the paddle transmission fringe.
        assert!(data.summary.rate_max_over_min > 5.0);
    }

    #[test]
    fn baseline_sweep_rate_is_flat_while_fidelity_swings() {
        let scn = mini_scenario(
            r#"
name = "base"
seed = 3
[source]
visibility = 1.0
pair_rate_hz = 2.0e4
[plan]
n_rounds = 10
mc_trials = 4
[strain]
dwell_s = 4.33
"#,
        );
        let data = simulate_sweep(&scn, SweepKind::Baseline).unwrap();
        assert!(data.summary.rate_cov < 0.05, "cov = {}", data.summary.rate_cov);
        let range = data.summary.fidelity_max - data.summary.fidelity_min;
        assert!(range > 0.3, "range = {range}");
        assert!(data.histogram.is_none());
        assert!(data.summary.analytic.is_none());
    }

    #[test]
    fn fringe_fit_recovers_cosine_squared() {
        let angles: Vec<f64> = (0..=18).map(|k| k as f64 * 5.0).collect();
        let counts: Vec<f64> = angles
            .iter()
            .map(|&a| 1000.0 * (2.0 * a.to_radians()).cos().powi(2) + 50.0)
            .collect();
        let fit = fit_fringe(0.0, &angles, &counts).unwrap();
        // cos^2(2a) = 1/2 + cos(4a)/2.
        assert_abs_diff_eq!(fit.offset, 550.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.amplitude, 500.0, epsilon = 1e-6);
        assert!(fit.r_squared > 0.999999);
        assert_abs_diff_eq!(fit.phase_deg, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn source_characterization_matches_werner_targets() {
        let scn = mini_scenario(
            r#"
name = "src"
seed = 5
[source]
visibility = 0.9947
pair_rate_hz = 1.0e5
[plan]
mc_trials = 16
[fringe]
repeats = 3
"#,
        );
        let data = simulate_source_characterization(&scn).unwrap();
        assert_abs_diff_eq!(data.summary.fidelity, 0.996, epsilon = 0.002);
        assert_abs_diff_eq!(data.summary.chsh_subtracted_mean, 2.8134, epsilon = 0.02);
        assert_eq!(data.tomo_records.len(), 36);
        assert_eq!(data.chsh_records.len(), 48);
        assert_eq!(data.fringe_records.len(), 3 * 4 * 19);
        for fringe in &data.summary.fringes {
            assert!(fringe.r_squared > 0.99, "R2 = {}", fringe.r_squared);
            assert!(fringe.visibility > 0.95);
        }
    }

    #[test]
    fn sweep_outputs_are_deterministic_trees() {
        let scn = mini_scenario(
            r#"
name = "det"
seed = 21
[source]
pair_rate_hz = 5.0e5
[plan]
n_rounds = 1
mc_trials = 4
histogram_events = 5000
"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run_sweep(&scn, SweepKind::Interconvert, "deadbeef", &a).unwrap();
        run_sweep(&scn, SweepKind::Interconvert, "deadbeef", &b).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(
            names,
            vec![
                "counts.csv",
                "histogram.csv",
                "manifest.json",
                "rate_trace.csv",
                "results.jsonl",
                "summary.json"
            ]
        );
        for name in &names {
            let left = std::fs::read(a.join(name)).unwrap();
            let right = std::fs::read(b.join(name)).unwrap();
            assert_eq!(left, right, "{name} differs between runs");
        }
        assert!(!a.with_file_name("a.partial").exists());

        // Counts round-trip through the CSV reader.
        let records = read_counts_csv(&a.join("counts.csv")).unwrap();
        assert_eq!(records.len(), 36);
        let rounds = split_rounds(&records);
        assert_eq!(rounds.len(), 1);
        let tomo = reconstruct(&rounds[&0], true).unwrap();
        let offline = tomo.calibrated_fidelity().unwrap();
        let line = std::fs::read_to_string(a.join("results.jsonl")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let published = parsed["fidelity"].as_f64().unwrap();
        assert_eq!(offline, published, "offline re-analysis must agree bit for bit");
    }
}
