//! Two-qubit state reconstruction and Bell-type analysis from count
//! records.
//!
//! Reconstruction is plain linear inversion: expand the state over the
//! orthonormal Pauli-pair basis, relate coefficients to analyzer
//! probabilities through a design matrix, and solve the normal equations.
//! Counts are normalized per local-basis group (the four outcomes of one
//! waveplate configuration), which makes the estimate immune to rate
//! drift between groups. The estimate is reported both raw (possibly with
//! small negative eigenvalues) and projected onto physical states.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Poisson};

use crate::chain::calibrated_bell_fidelity;
use crate::counting::{
    analyzer_projector, subtract_accidentals, CountRecord, MeasurementSetting,
};
use crate::error::{Error, Result};
use crate::noisegen::{rng_from, STREAM_MC};
use crate::qmath::{
    eigh, is_physical, kron, pauli, project_psd, CMatrix, DensityMatrix,
    PhysicalityReport, C64,
};

/// Local analyzer bases: plus/minus outcome names, quarter-wave plate
/// angle, and the half-wave plate angle of the plus outcome. The minus
/// outcome sits 45 degrees further on the half-wave plate.
const LOCAL_BASES: [(&str, &str, f64, f64); 3] = [
    ("H", "V", 0.0, 0.0),
    ("D", "A", 45.0, 22.5),
    ("R", "L", 45.0, 0.0),
];

fn outcome(basis: usize, minus: bool) -> (&'static str, f64, f64) {
    let (plus, neg, q, h) = LOCAL_BASES[basis];
    if minus {
        (neg, q, h + 45.0)
    } else {
        (plus, q, h)
    }
}

fn basis_of(name: &str) -> Option<(usize, bool)> {
    for (b, (plus, minus, _, _)) in LOCAL_BASES.iter().enumerate() {
        if name == *plus {
            return Some((b, false));
        }
        if name == *minus {
            return Some((b, true));
        }
    }
    None
}

/// The 36 tomography settings: 9 local-basis groups of 4 outcomes each,
/// group-major so that chunks of four always partition the identity.
pub fn settings_36() -> Vec<MeasurementSetting> {
    let mut out = Vec::with_capacity(36);
    for bs in 0..3 {
        for bi in 0..3 {
            for o_s in [false, true] {
                for o_i in [false, true] {
                    let (ns, qs, hs) = outcome(bs, o_s);
                    let (ni, qi, hi) = outcome(bi, o_i);
                    out.push(MeasurementSetting::transmit(ns, ni, qs, hs, qi, hi));
                }
            }
        }
    }
    out
}

/// CHSH analyzer pairs: unprimed/primed linear analyzers on each arm,
/// outcomes at the half-wave plate angle and 45 degrees beyond it.
pub fn chsh_settings() -> Vec<MeasurementSetting> {
    let signal = [("a", 0.0), ("ap", 45.0)];
    let idler = [("b", 22.5), ("bp", 67.5)];
    let mut out = Vec::with_capacity(16);
    for (ns, a) in signal {
        for (ni, b) in idler {
            for o_s in ["+", "-"] {
                for o_i in ["+", "-"] {
                    let hs = a / 2.0 + if o_s == "-" { 45.0 } else { 0.0 };
                    let hi = b / 2.0 + if o_i == "-" { 45.0 } else { 0.0 };
                    out.push(MeasurementSetting::transmit(
                        format!("{ns}{o_s}"),
                        format!("{ni}{o_i}"),
                        0.0,
                        hs,
                        0.0,
                        hi,
                    ));
                }
            }
        }
    }
    out
}

/// Orthonormal Hermitian operator basis: Pauli pairs over two.
fn pauli_pair_basis() -> Vec<CMatrix> {
    let mut basis = Vec::with_capacity(16);
    for a in 0..4 {
        for b in 0..4 {
            basis.push(kron(&pauli(a), &pauli(b)).unwrap().scaled(C64::new(0.5, 0.0)));
        }
    }
    basis
}

struct OutcomeSum {
    setting: MeasurementSetting,
    counts: f64,
}

/// Accumulates records by (signal, idler) outcome name, summing counts
/// across rounds, and buckets the outcomes into local-basis groups.
fn group_records(records: &[CountRecord], subtract: bool) -> Result<Vec<Vec<OutcomeSum>>> {
    if records.is_empty() {
        return Err(Error::IncompleteData("no count records".into()));
    }
    let corrected = if subtract {
        subtract_accidentals(records)
    } else {
        records.iter().map(|r| r.counts as f64).collect()
    };
    let mut by_outcome: BTreeMap<(String, String), OutcomeSum> = BTreeMap::new();
    for (rec, &c) in records.iter().zip(corrected.iter()) {
        let key = (rec.setting_s.clone(), rec.setting_i.clone());
        by_outcome
            .entry(key)
            .and_modify(|o| o.counts += c)
            .or_insert_with(|| OutcomeSum {
                setting: rec.setting(),
                counts: c,
            });
    }
    let mut groups: BTreeMap<(usize, usize), Vec<OutcomeSum>> = BTreeMap::new();
    for (key, sum) in by_outcome {
        let (bs, _) = basis_of(&key.0).ok_or_else(|| {
            Error::IncompleteData(format!("unknown tomography setting name {:?}", key.0))
        })?;
        let (bi, _) = basis_of(&key.1).ok_or_else(|| {
            Error::IncompleteData(format!("unknown tomography setting name {:?}", key.1))
        })?;
        groups.entry((bs, bi)).or_default().push(sum);
    }
    for ((bs, bi), members) in &groups {
        if members.len() != 4 {
            return Err(Error::IncompleteData(format!(
                "basis group ({bs},{bi}) has {} of 4 outcomes",
                members.len()
            )));
        }
        let total: f64 = members.iter().map(|m| m.counts).sum();
        if !(total > 0.0) {
            return Err(Error::IncompleteData(format!(
                "basis group ({bs},{bi}) has no counts"
            )));
        }
    }
    if groups.len() != 9 {
        return Err(Error::IncompleteData(format!(
            "tomography needs 9 basis groups, got {}",
            groups.len()
        )));
    }
    Ok(groups.into_values().collect())
}

/// Least-squares linear inversion over projector/probability rows.
pub fn linear_inversion(rows: &[(CMatrix, f64)]) -> Result<DensityMatrix> {
    let basis = pauli_pair_basis();
    let n = basis.len();
    let mut ata = vec![0.0f64; n * n];
    let mut atb = vec![0.0f64; n];
    for (proj, freq) in rows {
        let a_row: Vec<f64> = basis.iter().map(|b| (proj * b).trace().re).collect();
        for j in 0..n {
            atb[j] += a_row[j] * freq;
            for k in 0..n {
                ata[j * n + k] += a_row[j] * a_row[k];
            }
        }
    }
    let ata_mat = CMatrix::from_fn(n, n, |j, k| C64::new(ata[j * n + k], 0.0));
    let decomp = eigh(&ata_mat)?;
    let max_eig = decomp
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if !(max_eig > 0.0) {
        return Err(Error::SingularSystem("tomography design matrix is zero"));
    }
    let mut coeff = vec![0.0f64; n];
    for (k, &lambda) in decomp.eigenvalues.iter().enumerate() {
        if lambda < 1e-10 * max_eig {
            return Err(Error::SingularSystem(
                "tomography design matrix is rank deficient",
            ));
        }
        let mut proj_rhs = 0.0;
        for j in 0..n {
            proj_rhs += decomp.eigenvectors[(j, k)].re * atb[j];
        }
        for j in 0..n {
            coeff[j] += decomp.eigenvectors[(j, k)].re * proj_rhs / lambda;
        }
    }
    let mut rho = CMatrix::zeros(4, 4);
    for (j, b) in basis.iter().enumerate() {
        rho = &rho + &b.scaled(C64::new(coeff[j], 0.0));
    }
    DensityMatrix::new(rho)
}

/// A reconstructed state with its physicality diagnostics.
#[derive(Debug, Clone)]
pub struct TomographyResult {
    /// Raw linear-inversion estimate; may carry small negative eigenvalues.
    pub rho: DensityMatrix,
    /// Nearest physical state (eigenvalue clipping at fixed trace).
    pub rho_psd: DensityMatrix,
    pub physicality: PhysicalityReport,
    pub total_counts: f64,
}

impl TomographyResult {
    /// Overlap with the phase-calibrated Bell target, clamped to [0, 1].
    pub fn calibrated_fidelity(&self) -> Result<f64> {
        Ok(calibrated_bell_fidelity(&self.rho)?.fidelity.clamp(0.0, 1.0))
    }

    pub fn calibrated_fidelity_psd(&self) -> Result<f64> {
        Ok(calibrated_bell_fidelity(&self.rho_psd)?
            .fidelity
            .clamp(0.0, 1.0))
    }
}

/// Full reconstruction from named tomography records, summing repeated
/// settings and normalizing within each local-basis group.
pub fn reconstruct(records: &[CountRecord], subtract: bool) -> Result<TomographyResult> {
    let groups = group_records(records, subtract)?;
    let mut rows = Vec::with_capacity(36);
    let mut total = 0.0;
    for members in &groups {
        let group_total: f64 = members.iter().map(|m| m.counts).sum();
        total += group_total;
        for m in members {
            rows.push((analyzer_projector(&m.setting)?, m.counts / group_total));
        }
    }
    let rho = linear_inversion(&rows)?;
    let physicality = is_physical(&rho, 1e-7)?;
    let rho_psd = project_psd(&rho)?;
    Ok(TomographyResult {
        rho,
        rho_psd,
        physicality,
        total_counts: total,
    })
}

/// Correlators and the CHSH combination from 16-outcome records.
#[derive(Debug, Clone, Copy)]
pub struct ChshReport {
    /// E indexed by [signal primed][idler primed].
    pub correlators: [[f64; 2]; 2],
    pub s_value: f64,
}

fn chsh_key(name: &str) -> Result<(usize, f64)> {
    let (base, sign) = name.split_at(name.len().saturating_sub(1));
    let outcome = match sign {
        "+" => 1.0,
        "-" => -1.0,
        _ => {
            return Err(Error::IncompleteData(format!(
                "CHSH setting name {name:?} lacks +/- suffix"
            )))
        }
    };
    let primed = match base {
        "a" | "b" => 0,
        "ap" | "bp" => 1,
        _ => {
            return Err(Error::IncompleteData(format!(
                "unknown CHSH analyzer {base:?}"
            )))
        }
    };
    Ok((primed, outcome))
}

/// CHSH S from count records, `|E00 - E01| + |E10 + E11|`.
pub fn chsh_s(records: &[CountRecord], subtract: bool) -> Result<ChshReport> {
    if records.is_empty() {
        return Err(Error::IncompleteData("no count records".into()));
    }
    let corrected = if subtract {
        subtract_accidentals(records)
    } else {
        records.iter().map(|r| r.counts as f64).collect()
    };
    // signed[i][j] accumulates outcome-weighted counts, totals the norm.
    let mut signed = [[0.0f64; 2]; 2];
    let mut totals = [[0.0f64; 2]; 2];
    for (rec, &c) in records.iter().zip(corrected.iter()) {
        let (ps, os) = chsh_key(&rec.setting_s)?;
        let (pi, oi) = chsh_key(&rec.setting_i)?;
        signed[ps][pi] += os * oi * c;
        totals[ps][pi] += c;
    }
    let mut correlators = [[0.0f64; 2]; 2];
    for s in 0..2 {
        for i in 0..2 {
            if !(totals[s][i] > 0.0) {
                return Err(Error::IncompleteData(format!(
                    "CHSH pair ({s},{i}) has no counts"
                )));
            }
            correlators[s][i] = signed[s][i] / totals[s][i];
        }
    }
    let s_value = (correlators[0][0] - correlators[0][1]).abs()
        + (correlators[1][0] + correlators[1][1]).abs();
    Ok(ChshReport {
        correlators,
        s_value,
    })
}

/// Mean and sample standard deviation of an estimator under Poisson
/// resampling of every counts column.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

pub fn mc_uncertainty<F>(
    records: &[CountRecord],
    estimator: F,
    trials: usize,
    seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&[CountRecord]) -> Result<f64>,
{
    if trials < 2 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least 2 trials, got {trials}"
        )));
    }
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = rng_from(&[seed, STREAM_MC, t as u64]);
        let resampled: Vec<CountRecord> = records
            .iter()
            .map(|r| {
                let counts = if r.counts == 0 {
                    0
                } else {
                    let poisson = Poisson::new(r.counts as f64).expect("positive mean");
                    poisson.sample(&mut rng).round() as u64
                };
                CountRecord {
                    counts,
                    ..r.clone()
                }
            })
            .collect();
        values.push(estimator(&resampled)?);
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
    Ok(McEstimate {
        mean,
        std: var.sqrt(),
        trials,
    })
}

/// Ordinary least-squares line with the Pearson correlation of the data.
#[derive(Debug, Clone, Copy)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    pub correlation: f64,
}

pub fn linear_trend(x: &[f64], y: &[f64]) -> Result<TrendFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::IncompleteData(format!(
            "trend fit needs matched samples (>= 2), got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::SingularSystem("trend fit abscissa is constant"));
    }
    let slope = sxy / sxx;
    let correlation = if syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        0.0
    };
    Ok(TrendFit {
        slope,
        intercept: my - slope * mx,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::{expected_counts, CountingPlan, DetectorEffs};
    use crate::qmath::PureState;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn exact_records(rho: &DensityMatrix, settings: &[MeasurementSetting], scale: f64) -> Vec<CountRecord> {
        let plan = CountingPlan {
            pair_rate_hz: scale,
            duration_s: 1.0,
            rate_factor: 1.0,
            effs: DetectorEffs::unit(),
            accidentals: 0.0,
        };
        settings
            .iter()
            .map(|s| {
                let mean = expected_counts(rho, s, &plan).unwrap();
                CountRecord {
                    round: 0,
                    setting_s: s.name_s.clone(),
                    setting_i: s.name_i.clone(),
                    qwp_s_deg: s.qwp_s_deg,
                    hwp_s_deg: s.hwp_s_deg,
                    qwp_i_deg: s.qwp_i_deg,
                    hwp_i_deg: s.hwp_i_deg,
                    t_start_s: 0.0,
                    duration_s: 1.0,
                    counts: mean.round() as u64,
                    singles_s_hz: 0.0,
                    singles_i_hz: 0.0,
                    window_ns: 1.0,
                }
            })
            .collect()
    }

    fn random_state(rng: &mut impl Rng) -> DensityMatrix {
        let g = CMatrix::from_fn(4, 4, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let gram = &g * &g.dagger();
        let tr = gram.trace().re;
        DensityMatrix::new(gram.scaled(C64::new(1.0 / tr, 0.0))).unwrap()
    }

    #[test]
    fn settings_cover_nine_complete_groups() {
        let settings = settings_36();
        assert_eq!(settings.len(), 36);
        let mut names = std::collections::BTreeSet::new();
        for chunk in settings.chunks(4) {
            let mut sum = CMatrix::zeros(4, 4);
            for s in chunk {
                names.insert((s.name_s.clone(), s.name_i.clone()));
                sum = &sum + &analyzer_projector(s).unwrap();
            }
            assert!(sum.max_abs_diff(&CMatrix::identity(4)) < 1e-12);
        }
        assert_eq!(names.len(), 36);
    }

    #[test]
    fn exact_probabilities_invert_exactly() {
        // Trace-one Hermitian input that is deliberately not positive:
        // linear inversion must still return it verbatim.
        let mut rho_mat = PureState::bell_phi_plus(0.3).density().matrix().clone();
        rho_mat[(1, 1)] = C64::new(-0.05, 0.0);
        rho_mat[(0, 0)] = rho_mat[(0, 0)] + C64::new(0.05, 0.0);
        let rho = DensityMatrix::new(rho_mat).unwrap();

        let settings = settings_36();
        let rows: Vec<(CMatrix, f64)> = settings
            .iter()
            .map(|s| {
                let p = analyzer_projector(s).unwrap();
                let f = rho.expect_real(&p);
                (p, f)
            })
            .collect();
        let est = linear_inversion(&rows).unwrap();
        assert!(est.matrix().max_abs_diff(rho.matrix()) < 1e-10);
    }

    #[test]
    fn high_statistics_counts_reproduce_random_states() {
        let mut rng = rng_from(&[99, 1]);
        let settings = settings_36();
        for _ in 0..20 {
            let rho = random_state(&mut rng);
            let records = exact_records(&rho, &settings, 1e12);
            let result = reconstruct(&records, false).unwrap();
            let err = result.rho.matrix().max_abs_diff(rho.matrix());
            assert!(err < 1e-10, "reconstruction error {err}");
        }
    }

    #[test]
    fn group_normalization_cancels_per_group_rate_drift() {
        let rho = DensityMatrix::werner(0.0, 0.95).unwrap();
        let settings = settings_36();
        let mut records = exact_records(&rho, &settings, 1e12);
        // Scale whole groups by wildly different factors; the estimate
        // must not move.
        for (g, chunk) in records.chunks_mut(4).enumerate() {
            let factor = 1.0 + 0.8 * ((g as f64 * 2.399).sin());
            for rec in chunk {
                rec.counts = ((rec.counts as f64) * factor).round() as u64;
            }
        }
        let result = reconstruct(&records, false).unwrap();
        assert!(result.rho.matrix().max_abs_diff(rho.matrix()) < 1e-9);
    }

    #[test]
    fn reconstruction_flags_and_repairs_unphysical_estimates() {
        let rho = DensityMatrix::werner(0.0, 1.0).unwrap();
        let settings = settings_36();
        let mut records = exact_records(&rho, &settings, 400.0);
        // Finite statistics on a pure state almost surely push the raw
        // estimate outside the physical set.
        for (i, rec) in records.iter_mut().enumerate() {
            rec.counts = crate::counting::sample_counts(rec.counts as f64, 5, i as u64).unwrap();
        }
        let result = reconstruct(&records, false).unwrap();
        let min_eig = result.physicality.min_eigenvalue;
        assert!(min_eig < -1e-4, "expected negative eigenvalue, got {min_eig}");
        assert!(!result.physicality.passed);
        let repaired = is_physical(&result.rho_psd, 1e-9).unwrap();
        assert!(repaired.passed);
        assert_abs_diff_eq!(result.rho_psd.trace_real(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn arm_swap_transposes_the_estimate() {
        let mut rng = rng_from(&[7, 3]);
        let rho = random_state(&mut rng);
        let settings = settings_36();
        let records = exact_records(&rho, &settings, 1e12);
        let swapped: Vec<CountRecord> = records
            .iter()
            .map(|r| CountRecord {
                setting_s: r.setting_i.clone(),
                setting_i: r.setting_s.clone(),
                qwp_s_deg: r.qwp_i_deg,
                hwp_s_deg: r.hwp_i_deg,
                qwp_i_deg: r.qwp_s_deg,
                hwp_i_deg: r.hwp_s_deg,
                ..r.clone()
            })
            .collect();
        let a = reconstruct(&records, false).unwrap();
        let b = reconstruct(&swapped, false).unwrap();
        let swap = CMatrix::from_fn(4, 4, |i, j| {
            let (i1, i0) = (i / 2, i % 2);
            let (j1, j0) = (j / 2, j % 2);
            if (i0, i1) == (j1, j0) {
                C64::ONE
            } else {
                C64::ZERO
            }
        });
        let expected = b.rho.conjugated_by(&swap).unwrap();
        assert!(a.rho.matrix().max_abs_diff(expected.matrix()) < 1e-9);
    }

    #[test]
    fn werner_chsh_matches_closed_form() {
        let visibility = 0.9947;
        let rho = DensityMatrix::werner(0.0, visibility).unwrap();
        let records = exact_records(&rho, &chsh_settings(), 1e12);
        let report = chsh_s(&records, false).unwrap();
        assert_abs_diff_eq!(
            report.s_value,
            2.0 * std::f64::consts::SQRT_2 * visibility,
            epsilon = 1e-6
        );

        let pure = exact_records(&PureState::bell_phi_plus(0.0).density(), &chsh_settings(), 1e12);
        let tsirelson = chsh_s(&pure, false).unwrap();
        assert_abs_diff_eq!(
            tsirelson.s_value,
            2.0 * std::f64::consts::SQRT_2,
            epsilon = 1e-6
        );
    }

    #[test]
    fn product_state_stays_classical() {
        let hh = PureState::basis(4, 0).density();
        let records = exact_records(&hh, &chsh_settings(), 1e12);
        let report = chsh_s(&records, false).unwrap();
        assert!(report.s_value <= 2.0 + 1e-9, "S = {}", report.s_value);
    }

    #[test]
    fn accidental_subtraction_restores_chsh() {
        let visibility = 0.9947;
        let rho = DensityMatrix::werner(0.0, visibility).unwrap();
        let mut records = exact_records(&rho, &chsh_settings(), 1e8);
        // Flood every window with the same accidental level, tagged by
        // singles rates so the estimator can undo it.
        for rec in &mut records {
            rec.counts += 2_000_000;
            rec.singles_s_hz = 2e6;
            rec.singles_i_hz = 1e6;
            rec.window_ns = 1000.0;
        }
        let raw = chsh_s(&records, false).unwrap();
        let corrected = chsh_s(&records, true).unwrap();
        assert!(corrected.s_value > raw.s_value);
        assert_abs_diff_eq!(
            corrected.s_value,
            2.0 * std::f64::consts::SQRT_2 * visibility,
            epsilon = 1e-3
        );
    }

    #[test]
    fn mc_spread_shrinks_with_statistics() {
        let rho = DensityMatrix::werner(0.0, 0.995).unwrap();
        let settings = settings_36();
        let low = exact_records(&rho, &settings, 2_000.0);
        let high = exact_records(&rho, &settings, 200_000.0);
        let estimator =
            |recs: &[CountRecord]| reconstruct(recs, false)?.calibrated_fidelity();
        let mc_low = mc_uncertainty(&low, estimator, 80, 31).unwrap();
        let mc_high = mc_uncertainty(&high, estimator, 80, 31).unwrap();
        assert!(mc_low.std > 0.0);
        let ratio = mc_high.std / mc_low.std;
        // Ten times the counts: sqrt(10) narrower, within MC slop.
        assert!(ratio > 0.05 && ratio < 0.2, "ratio = {ratio}");
        assert_abs_diff_eq!(mc_high.mean, 0.99625, epsilon = 5e-4);
    }

    #[test]
    fn trend_fit_recovers_line_and_correlation() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2e-4 * v).collect();
        let fit = linear_trend(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.slope, -2e-4, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.correlation, -1.0, epsilon = 1e-9);

        let flat: Vec<f64> = x.iter().map(|_| 1.25).collect();
        let fit_flat = linear_trend(&x, &flat).unwrap();
        assert_abs_diff_eq!(fit_flat.slope, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fit_flat.correlation, 0.0, epsilon = 1e-15);
        assert!(linear_trend(&[1.0], &[2.0]).is_err());
        assert!(linear_trend(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn reconstruct_rejects_broken_inputs() {
        let rho = DensityMatrix::werner(0.0, 0.9).unwrap();
        let settings = settings_36();
        let records = exact_records(&rho, &settings, 1e6);
        assert!(reconstruct(&records[..32], false).is_err());
        let mut renamed = records.clone();
        renamed[0].setting_s = "Q".into();
        assert!(reconstruct(&renamed, false).is_err());
        assert!(reconstruct(&[], false).is_err());

        // Fidelity estimates stay clamped even when noise pushes the raw
        // matrix element combination past one.
        let result = reconstruct(&records, false).unwrap();
        let f = result.calibrated_fidelity().unwrap();
        assert!((0.0..=1.0).contains(&f));
        assert_abs_diff_eq!(f, 0.925, epsilon = 1e-4);
    }
}
