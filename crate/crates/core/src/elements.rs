//! Jones-calculus transfer maps for the individual optical components.
//!
//! Polarization vectors live in the `[H, V]` basis. Waveplate angles are
//! fast-axis angles in degrees; phases are radians. Lossy elements are
//! modeled as contractions (all singular values <= 1), so any composition
//! of elements stays physical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{c64, eigh, kron, CMatrix, C64};

/// Linear map between optical mode spaces with singular values <= 1 + 1e-9.
#[derive(Debug, Clone)]
pub struct TransferMap {
    matrix: CMatrix,
    label: String,
}

impl TransferMap {
    /// Wraps a matrix after checking it does not amplify any input.
    pub fn new(matrix: CMatrix, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if !matrix.is_finite() {
            return Err(Error::InvalidArgument("non-finite transfer map".into()));
        }
        let gram = &matrix.dagger() * &matrix;
        let top = eigh(&gram)?.eigenvalues.last().copied().unwrap_or(0.0);
        if top > 1.0 + 2e-9 {
            return Err(Error::NonPhysical(format!(
                "transfer map '{label}' has gain: max singular value {:.6}",
                top.max(0.0).sqrt()
            )));
        }
        Ok(TransferMap { matrix, label })
    }

    pub fn identity(dim: usize) -> Self {
        TransferMap {
            matrix: CMatrix::identity(dim),
            label: "identity".into(),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `self` followed by `next` (matrix product `next * self`).
    pub fn then(&self, next: &TransferMap) -> Result<TransferMap> {
        if next.in_dim() != self.out_dim() {
            return Err(Error::DimensionMismatch {
                context: "TransferMap::then",
                expected: self.out_dim(),
                got: next.in_dim(),
            });
        }
        TransferMap::new(
            &next.matrix * &self.matrix,
            format!("{} -> {}", self.label, next.label),
        )
    }

    /// Tensor product acting on the joint mode space.
    pub fn tensor(&self, other: &TransferMap) -> Result<TransferMap> {
        TransferMap::new(
            kron(&self.matrix, &other.matrix)?,
            format!("{} (x) {}", self.label, other.label),
        )
    }
}

/// Polarization extinction of a splitting or cleanup element, in dB.
///
/// `leakage()` is the power fraction ending up in the wrong port,
/// `10^(-db/10)`. Infinite dB is accepted and means a perfect element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtinctionSpec {
    db: f64,
}

impl ExtinctionSpec {
    pub fn from_db(db: f64) -> Result<Self> {
        if db.is_nan() || db < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "extinction must be >= 0 dB, got {db}"
            )));
        }
        Ok(ExtinctionSpec { db })
    }

    pub fn ideal() -> Self {
        ExtinctionSpec { db: f64::INFINITY }
    }

    pub fn db(&self) -> f64 {
        self.db
    }

    pub fn leakage(&self) -> f64 {
        10f64.powf(-self.db / 10.0)
    }

    pub fn leak_amplitude(&self) -> f64 {
        self.leakage().sqrt()
    }

    pub fn pass_amplitude(&self) -> f64 {
        (1.0 - self.leakage()).sqrt()
    }
}

/// Fast-axis angles of a quarter/half/quarter fiber paddle set, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddleAngles {
    pub q1_deg: f64,
    pub h_deg: f64,
    pub q2_deg: f64,
}

impl PaddleAngles {
    pub fn new(q1_deg: f64, h_deg: f64, q2_deg: f64) -> Self {
        PaddleAngles { q1_deg, h_deg, q2_deg }
    }
}

fn rot(theta_rad: f64) -> CMatrix {
    let (s, c) = theta_rad.sin_cos();
    CMatrix::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) | (1, 1) => c64(c, 0.0),
        (0, 1) => c64(-s, 0.0),
        _ => c64(s, 0.0),
    })
}

fn retarder(theta_deg: f64, slow_phase: C64) -> CMatrix {
    let th = theta_deg.to_radians();
    let wave = CMatrix::from_diag(&[C64::ONE, slow_phase]);
    &(&rot(th) * &wave) * &rot(-th)
}

/// Half-wave plate at fast-axis angle `theta_deg`:
/// `[[cos 2t, sin 2t], [sin 2t, -cos 2t]]`.
pub fn hwp(theta_deg: f64) -> TransferMap {
    let m = retarder(theta_deg, -C64::ONE);
    TransferMap { matrix: m, label: format!("hwp({theta_deg})") }
}

/// Quarter-wave plate at fast-axis angle `theta_deg`; at 0 degrees this is
/// `diag(1, -i)`, and `qwp(t)` twice equals `hwp(t)`.
pub fn qwp(theta_deg: f64) -> TransferMap {
    let m = retarder(theta_deg, -C64::I);
    TransferMap { matrix: m, label: format!("qwp({theta_deg})") }
}

/// Polarizing beam splitter as an isometry from one spatial mode to two.
///
/// Output ordering is `[a_H, a_V, b_H, b_V]` where port `a` transmits H and
/// port `b` reflects V; a finite extinction sends amplitude `sqrt(leakage)`
/// of each polarization to its wrong port.
pub fn pbs(ext: ExtinctionSpec) -> TransferMap {
    let t = ext.pass_amplitude();
    let l = ext.leak_amplitude();
    let mut m = CMatrix::zeros(4, 2);
    m[(0, 0)] = c64(t, 0.0); // H -> a
    m[(2, 0)] = c64(l, 0.0); // H leaks to b
    m[(3, 1)] = c64(t, 0.0); // V -> b
    m[(1, 1)] = c64(l, 0.0); // V leaks to a
    TransferMap { matrix: m, label: format!("pbs({} dB)", ext.db()) }
}

/// Two-port beam splitter with symmetric `i` on the cross amplitudes and a
/// power imbalance `delta`: the bar amplitude is `sqrt(1/2 + delta)`.
pub fn bs(imbalance: f64) -> Result<TransferMap> {
    if !(imbalance.is_finite() && imbalance.abs() <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "beam splitter imbalance {imbalance} outside [-0.5, 0.5]"
        )));
    }
    let bar = (0.5 + imbalance).sqrt();
    let cross = (0.5 - imbalance).sqrt();
    let m = CMatrix::from_fn(2, 2, |i, j| {
        if i == j {
            c64(bar, 0.0)
        } else {
            c64(0.0, cross)
        }
    });
    TransferMap::new(m, format!("bs({imbalance})"))
}

/// Balanced beam splitter `[[1, i], [i, 1]] / sqrt(2)`.
pub fn bs_5050() -> TransferMap {
    bs(0.0).expect("balanced splitter is always valid")
}

/// Polarization-independent attenuator on one spatial mode.
pub fn attenuator(loss_db: f64) -> Result<TransferMap> {
    if loss_db.is_nan() || loss_db < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "attenuation must be >= 0 dB, got {loss_db}"
        )));
    }
    let amp = amplitude_factor(loss_db);
    Ok(TransferMap {
        matrix: CMatrix::identity(2).scaled(c64(amp, 0.0)),
        label: format!("attenuator({loss_db} dB)"),
    })
}

/// Amplitude transmission factor of a `loss_db` attenuation, `10^(-db/20)`.
pub fn amplitude_factor(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 20.0)
}

/// Power transmission factor of a `loss_db` attenuation, `10^(-db/10)`.
pub fn power_factor(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Power ratio expressed in dB (positive for loss).
pub fn db_from_power_ratio(ratio: f64) -> f64 {
    -10.0 * ratio.log10()
}

/// Unitary of a quarter/half/quarter paddle set; light meets `q1` first.
pub fn paddle_unitary(angles: &PaddleAngles) -> TransferMap {
    let m = &(qwp(angles.q2_deg).matrix() * hwp(angles.h_deg).matrix())
        * qwp(angles.q1_deg).matrix();
    TransferMap {
        matrix: m,
        label: format!(
            "paddles(q1 = {}, h = {}, q2 = {})",
            angles.q1_deg, angles.h_deg, angles.q2_deg
        ),
    }
}

/// Phase `e^{i phi}` on a single mode of a `dim`-mode space.
pub fn phase_shift(dim: usize, mode: usize, phi_rad: f64) -> Result<TransferMap> {
    if mode >= dim {
        return Err(Error::InvalidArgument(format!(
            "phase_shift mode {mode} out of range for dim {dim}"
        )));
    }
    let mut m = CMatrix::identity(dim);
    m[(mode, mode)] = C64::from_polar(1.0, phi_rad);
    Ok(TransferMap {
        matrix: m,
        label: format!("phase({phi_rad} rad on mode {mode}/{dim})"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::PureState;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn is_unitary(m: &CMatrix, tol: f64) -> bool {
        (&m.dagger() * m).max_abs_diff(&CMatrix::identity(m.cols())) < tol
    }

    fn apply(map: &TransferMap, state: &PureState) -> Vec<C64> {
        map.matrix().mul_vec(state.amplitudes())
    }

    #[test]
    fn hwp_rotates_h_to_d_and_v() {
        let d = apply(&hwp(22.5), &PureState::basis(2, 0));
        assert_abs_diff_eq!(d[0].re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1].re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);

        let v = apply(&hwp(45.0), &PureState::basis(2, 0));
        assert_abs_diff_eq!(v[0].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn qwp_at_zero_is_diag_one_minus_i() {
        let m = qwp(0.0);
        assert!(m.matrix().max_abs_diff(&CMatrix::from_diag(&[C64::ONE, -C64::I])) < 1e-15);
    }

    #[test]
    fn qwp_at_45_makes_circular_light() {
        let out = apply(&qwp(45.0), &PureState::basis(2, 0));
        // Output must be (|H> + i|V>)/sqrt(2) up to a global phase.
        let ratio = out[1] / out[0];
        assert_abs_diff_eq!(ratio.re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio.im, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].norm(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn qwp_twice_is_hwp() {
        for k in 0..36 {
            let th = 5.0 * k as f64;
            let twice = qwp(th).then(&qwp(th)).unwrap();
            assert!(
                twice.matrix().max_abs_diff(hwp(th).matrix()) < 1e-12,
                "theta = {th}"
            );
        }
    }

    #[test]
    fn malus_law_through_rotated_hwp() {
        for k in 0..=90 {
            let th = 2.0 * k as f64;
            let out = apply(&hwp(th), &PureState::basis(2, 0));
            let t = out[0].norm_sqr();
            let expect = (2.0 * th.to_radians()).cos().powi(2);
            assert_abs_diff_eq!(t, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn waveplates_are_unitary() {
        for k in 0..24 {
            let th = 7.5 * k as f64 - 90.0;
            assert!(is_unitary(hwp(th).matrix(), 1e-12));
            assert!(is_unitary(qwp(th).matrix(), 1e-12));
        }
    }

    #[test]
    fn balanced_mach_zehnder_routes_to_cross_port() {
        let mz = bs_5050().then(&bs_5050()).unwrap();
        let out = mz.matrix().mul_vec(PureState::basis(2, 0).amplitudes());
        assert_abs_diff_eq!(out[0].norm_sqr(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mach_zehnder_fringe_follows_phase() {
        for k in 0..16 {
            let phi = k as f64 * std::f64::consts::PI / 8.0;
            let mz = bs_5050()
                .then(&phase_shift(2, 0, phi).unwrap())
                .unwrap()
                .then(&bs_5050())
                .unwrap();
            let out = mz.matrix().mul_vec(PureState::basis(2, 0).amplitudes());
            assert_abs_diff_eq!(out[0].norm_sqr(), (phi / 2.0).sin().powi(2), epsilon = 1e-12);
            assert_abs_diff_eq!(out[1].norm_sqr(), (phi / 2.0).cos().powi(2), epsilon = 1e-12);
        }
    }

    #[test]
    fn imbalanced_bs_is_still_unitary() {
        let m = bs(0.029).unwrap();
        assert!(is_unitary(m.matrix(), 1e-12));
        assert_abs_diff_eq!(m.matrix()[(0, 0)].re.powi(2), 0.529, epsilon = 1e-12);
        assert!(bs(0.6).is_err());
    }

    #[test]
    fn pbs_splits_with_specified_extinction() {
        let ext = ExtinctionSpec::from_db(20.0).unwrap();
        assert_abs_diff_eq!(ext.leakage(), 0.01, epsilon = 1e-15);
        let m = pbs(ext);
        let h = m.matrix().mul_vec(PureState::basis(2, 0).amplitudes());
        assert_abs_diff_eq!(h[0].norm_sqr(), 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(h[2].norm_sqr(), 0.01, epsilon = 1e-12);
        // Isometry: no power lost, either port.
        let gram = &m.matrix().dagger() * m.matrix();
        assert!(gram.max_abs_diff(&CMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn ideal_pbs_routes_perfectly_and_inverts() {
        let m = pbs(ExtinctionSpec::ideal());
        let v = m.matrix().mul_vec(PureState::basis(2, 1).amplitudes());
        assert_abs_diff_eq!(v[3].norm_sqr(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1].norm_sqr(), 0.0, epsilon = 1e-15);
        let round_trip = &m.matrix().dagger() * m.matrix();
        assert!(round_trip.max_abs_diff(&CMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn attenuator_values() {
        assert_abs_diff_eq!(power_factor(3.0103), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(power_factor(10.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(amplitude_factor(6.0206), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(db_from_power_ratio(0.25), 6.0206, epsilon = 1e-4);
        let a = attenuator(10.0).unwrap();
        let out = a.matrix().mul_vec(PureState::basis(2, 0).amplitudes());
        assert_abs_diff_eq!(out[0].norm_sqr(), 0.1, epsilon = 1e-12);
        assert!(attenuator(-1.0).is_err());
        assert_abs_diff_eq!(attenuator(f64::INFINITY).unwrap().matrix().max_abs(), 0.0);
    }

    #[test]
    fn transfer_map_rejects_gain() {
        let m = CMatrix::identity(2).scaled(c64(1.5, 0.0));
        assert!(TransferMap::new(m, "amplifier").is_err());
    }

    #[test]
    fn phase_shift_validates_mode() {
        assert!(phase_shift(2, 2, 0.1).is_err());
        let p = phase_shift(4, 3, std::f64::consts::PI).unwrap();
        assert_abs_diff_eq!(p.matrix()[(3, 3)].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[(0, 0)].re, 1.0, epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn paddle_unitary_is_unitary(q1 in -180.0f64..180.0, h in -180.0f64..180.0, q2 in -180.0f64..180.0) {
            let u = paddle_unitary(&PaddleAngles::new(q1, h, q2));
            prop_assert!(is_unitary(u.matrix(), 1e-10));
        }

        #[test]
        fn compositions_never_amplify(db1 in 0.0f64..30.0, th in -90.0f64..90.0, delta in -0.4f64..0.4) {
            let chain = attenuator(db1).unwrap()
                .then(&hwp(th)).unwrap()
                .then(&bs(delta).unwrap()).unwrap();
            // TransferMap::new re-validates the contraction property.
            prop_assert!(chain.matrix().max_abs() <= 1.0 + 1e-9);
        }
    }
}
