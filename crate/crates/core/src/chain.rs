//! The interconversion channel: polarization in, time bins across the
//! drifting fiber, polarization back out.
//!
//! Mode orderings used throughout (first tensor factor slowest):
//!
//! * polarization pair (dim 4): `signal ⊗ idler`, each `[H, V]`;
//! * mid-link (dim 8): `signal ⊗ (idler pol ⊗ bin)`, bins `[early, late]`;
//! * converted output (dim 12): `signal ⊗ (idler pol ⊗ peak)`, peaks
//!   `[early-early, middle, late-late]` by arrival time.
//!
//! Module 1 routes idler H to the short arm and V to the long (delayed)
//! arm, rotating the long arm back to H, so the fiber carries H in both
//! bins. Module 2 splits each bin over short/long arms, rotating the short
//! arm to V, and a polarizing combiner merges them; early-via-long and
//! late-via-short overlap in the middle arrival peak, where the original
//! qubit reappears in polarization. Only populations survive between
//! different peaks; inside the middle peak the two paths interfere with a
//! visibility set by their temporal overlap.

use serde::{Deserialize, Serialize};

use crate::elements::{amplitude_factor, paddle_unitary, ExtinctionSpec, PaddleAngles};
use crate::error::{Error, Result};
use crate::noisegen::NoiseDraws;
use crate::qmath::{c64, kron, CMatrix, DensityMatrix, C64};

/// The three tensor layouts handled by this module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSpace {
    /// Two polarization qubits, `[HH, HV, VH, VV]`.
    PolPair,
    /// Signal polarization with the idler in (polarization, bin) modes.
    MidLink,
    /// Signal polarization with the idler in (polarization, peak) modes.
    Converted,
}

impl ModeSpace {
    pub fn dim(&self) -> usize {
        match self {
            ModeSpace::PolPair => 4,
            ModeSpace::MidLink => 8,
            ModeSpace::Converted => 12,
        }
    }

    /// Human-readable basis label for index `idx`.
    pub fn label(&self, idx: usize) -> String {
        assert!(idx < self.dim(), "basis index out of range");
        const POL: [char; 2] = ['H', 'V'];
        match self {
            ModeSpace::PolPair => format!("{}{}", POL[idx / 2], POL[idx % 2]),
            ModeSpace::MidLink => {
                let bins = ['e', 'l'];
                format!("{}:{}{}", POL[idx / 4], POL[(idx / 2) % 2], bins[idx % 2])
            }
            ModeSpace::Converted => {
                format!("{}:{}/{}", POL[idx / 6], POL[(idx / 3) % 2], PEAK_NAMES[idx % 3])
            }
        }
    }
}

/// Arrival peak of the converted output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Peak {
    EarlyEarly = 0,
    Middle = 1,
    LateLate = 2,
}

pub const PEAK_NAMES: [&str; 3] = ["EE", "MID", "LL"];

impl Peak {
    pub fn index(&self) -> usize {
        *self as usize
    }

    /// Arrival time relative to the early-early peak.
    pub fn arrival_ns(&self, bin_separation_ns: f64) -> f64 {
        self.index() as f64 * bin_separation_ns
    }
}

/// Physical parameters of one interconversion link.
///
/// Extinctions are power ratios in dB (infinite = perfect element); the
/// signed `pdl_imbalance_db` attenuates module 1's early arm when positive
/// and the late arm when negative. Nominal phases and noise widths refer to
/// the two delay interferometers. Insertion losses are the lumped
/// recoverable per-module losses applied to rates only; the intrinsic
/// 3 dB per module of the conversion scheme arises from the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub timebin_separation_ns: f64,
    pub delay_length_m: f64,
    pub fpbs_split_extinction_db: f64,
    pub fpbs_cleanup_extinction_db: f64,
    pub fpbs_combine_extinction_db: f64,
    pub fbs_imbalance: f64,
    pub pdl_imbalance_db: f64,
    pub phase1_nominal_deg: f64,
    pub phase2_nominal_deg: f64,
    pub phase1_sigma_deg: f64,
    pub phase2_sigma_deg: f64,
    pub temporal_mismatch_ps: f64,
    pub wavepacket_sigma_ps: f64,
    pub detector_jitter_ps: f64,
    pub module1_insertion_loss_db: f64,
    pub module2_insertion_loss_db: f64,
    pub eta_signal_transmit: f64,
    pub eta_signal_reflect: f64,
    pub eta_idler_transmit: f64,
    pub eta_idler_reflect: f64,
}

impl Default for LinkConfig {
    /// Typical as-built values for the demonstrated link.
    fn default() -> Self {
        LinkConfig {
            timebin_separation_ns: 50.0,
            delay_length_m: 10.2,
            fpbs_split_extinction_db: 20.0,
            fpbs_cleanup_extinction_db: 20.0,
            fpbs_combine_extinction_db: 20.0,
            fbs_imbalance: 0.029,
            pdl_imbalance_db: 0.0,
            phase1_nominal_deg: 0.0,
            phase2_nominal_deg: 0.0,
            phase1_sigma_deg: 1.0,
            phase2_sigma_deg: 1.0,
            temporal_mismatch_ps: 1.0,
            wavepacket_sigma_ps: 12.3,
            detector_jitter_ps: 20.0,
            module1_insertion_loss_db: 12.0,
            module2_insertion_loss_db: 7.0,
            eta_signal_transmit: 1.0,
            eta_signal_reflect: 1.0,
            eta_idler_transmit: 1.0,
            eta_idler_reflect: 1.0,
        }
    }
}

impl LinkConfig {
    /// A link with every imperfection switched off.
    pub fn ideal() -> Self {
        LinkConfig {
            fpbs_split_extinction_db: f64::INFINITY,
            fpbs_cleanup_extinction_db: f64::INFINITY,
            fpbs_combine_extinction_db: f64::INFINITY,
            fbs_imbalance: 0.0,
            pdl_imbalance_db: 0.0,
            phase1_sigma_deg: 0.0,
            phase2_sigma_deg: 0.0,
            temporal_mismatch_ps: 0.0,
            detector_jitter_ps: 0.0,
            module1_insertion_loss_db: 0.0,
            module2_insertion_loss_db: 0.0,
            ..LinkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("timebin_separation_ns", self.timebin_separation_ns),
            ("delay_length_m", self.delay_length_m),
            ("wavepacket_sigma_ps", self.wavepacket_sigma_ps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("fpbs_split_extinction_db", self.fpbs_split_extinction_db),
            ("fpbs_cleanup_extinction_db", self.fpbs_cleanup_extinction_db),
            ("fpbs_combine_extinction_db", self.fpbs_combine_extinction_db),
            ("phase1_sigma_deg", self.phase1_sigma_deg),
            ("phase2_sigma_deg", self.phase2_sigma_deg),
            ("temporal_mismatch_ps", self.temporal_mismatch_ps),
            ("detector_jitter_ps", self.detector_jitter_ps),
            ("module1_insertion_loss_db", self.module1_insertion_loss_db),
            ("module2_insertion_loss_db", self.module2_insertion_loss_db),
        ];
        for (name, v) in non_negative {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.fbs_imbalance.is_finite() && self.fbs_imbalance.abs() <= 0.5) {
            return Err(Error::Config(format!(
                "fbs_imbalance {} outside [-0.5, 0.5]",
                self.fbs_imbalance
            )));
        }
        if !self.pdl_imbalance_db.is_finite() {
            return Err(Error::Config("pdl_imbalance_db must be finite".into()));
        }
        for (name, v) in [
            ("eta_signal_transmit", self.eta_signal_transmit),
            ("eta_signal_reflect", self.eta_signal_reflect),
            ("eta_idler_transmit", self.eta_idler_transmit),
            ("eta_idler_reflect", self.eta_idler_reflect),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.phase1_nominal_deg.is_finite() && self.phase2_nominal_deg.is_finite()) {
            return Err(Error::Config("nominal phases must be finite".into()));
        }
        Ok(())
    }

    /// Rate factor of the lumped per-module insertion losses.
    pub fn insertion_transmission(&self) -> f64 {
        crate::elements::power_factor(
            self.module1_insertion_loss_db + self.module2_insertion_loss_db,
        )
    }

    /// Temporal overlap of the two middle-peak paths,
    /// `exp(-dt^2 / (2 sigma^2))`.
    pub fn path_overlap(&self) -> f64 {
        let dt = self.temporal_mismatch_ps;
        let sigma = self.wavepacket_sigma_ps;
        (-dt * dt / (2.0 * sigma * sigma)).exp()
    }

    /// Gaussian width of one arrival peak as timed by the detectors:
    /// detector jitter and wavepacket duration in quadrature.
    pub fn arrival_sigma_ps(&self) -> f64 {
        self.detector_jitter_ps.hypot(self.wavepacket_sigma_ps)
    }

    fn pdl_amplitudes(&self) -> (f64, f64) {
        if self.pdl_imbalance_db >= 0.0 {
            (amplitude_factor(self.pdl_imbalance_db), 1.0)
        } else {
            (1.0, amplitude_factor(-self.pdl_imbalance_db))
        }
    }
}

/// Converted-output state with its arrival-peak decomposition. The joint
/// state is sub-normalized: its trace is the detected fraction.
#[derive(Debug, Clone)]
pub struct ChannelOutput {
    pub joint_state: DensityMatrix,
    pub peak_weights: [f64; 3],
}

impl ChannelOutput {
    pub fn survival(&self) -> f64 {
        self.joint_state.trace_real()
    }
}

fn check_dim(rho: &DensityMatrix, space: ModeSpace, context: &'static str) -> Result<()> {
    if rho.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: space.dim(),
            got: rho.dim(),
        });
    }
    Ok(())
}

/// Idler map of module 1 (4x2, `[He, Hl, Ve, Vl]` from `[H, V]`).
fn module1_idler_map(cfg: &LinkConfig, phase1_rad: f64) -> Result<CMatrix> {
    let split = ExtinctionSpec::from_db(cfg.fpbs_split_extinction_db)?;
    let pass = split.pass_amplitude();
    let leak = split.leak_amplitude();
    let (g_early, g_late) = cfg.pdl_amplitudes();
    let bar = (0.5 + cfg.fbs_imbalance).sqrt();
    let cross = (0.5 - cfg.fbs_imbalance).sqrt();
    let p_early = c64(bar * g_early, 0.0);
    let p_late = C64::I * cross * g_late * C64::from_polar(1.0, phase1_rad);

    let mut m = CMatrix::zeros(4, 2);
    m[(0, 0)] = p_early * pass; // H kept early, stays H
    m[(3, 0)] = p_late * leak; // H leaking into the rotated long arm
    m[(1, 1)] = p_late * pass; // V delayed and rotated to H
    m[(2, 1)] = p_early * leak; // V leaking into the short arm
    Ok(m)
}

/// Branch maps of module 2 (each 2x4, idler `[He, Hl, Ve, Vl]` to output
/// polarization), ordered `[EE, EL, LE, LL]` by (bin, arm).
fn module2_branch_maps(cfg: &LinkConfig, phase2_rad: f64) -> Result<[CMatrix; 4]> {
    let cleanup = ExtinctionSpec::from_db(cfg.fpbs_cleanup_extinction_db)?;
    let combine = ExtinctionSpec::from_db(cfg.fpbs_combine_extinction_db)?;
    let c_pass = c64(cleanup.pass_amplitude(), 0.0);
    let c_leak = c64(cleanup.leak_amplitude(), 0.0);
    let k_pass = c64(combine.pass_amplitude(), 0.0);
    let k_leak = c64(combine.leak_amplitude(), 0.0);

    let cleanup_mat = CMatrix::from_diag(&[c_pass, c_leak]);
    // Short arm rotates to V; the combiner reflects V and transmits H, so
    // each arm's expected polarization passes with the combiner extinction
    // suppressing the other.
    let rot_short = CMatrix::from_rows(&[
        vec![C64::ZERO, C64::ONE],
        vec![C64::ONE, C64::ZERO],
    ])?;
    let keep_short = CMatrix::from_diag(&[k_leak, k_pass]);
    let keep_long = CMatrix::from_diag(&[k_pass, k_leak]);
    let q_short = c64((0.5 + cfg.fbs_imbalance).sqrt(), 0.0);
    let q_long =
        C64::I * (0.5 - cfg.fbs_imbalance).sqrt() * C64::from_polar(1.0, phase2_rad);

    let arm_short = (&(&keep_short * &rot_short) * &cleanup_mat).scaled(q_short);
    let arm_long = (&keep_long * &cleanup_mat).scaled(q_long);

    let select = |bin: usize| {
        CMatrix::from_fn(2, 4, |p, c| {
            if c == p * 2 + bin {
                C64::ONE
            } else {
                C64::ZERO
            }
        })
    };
    let sel_early = select(0);
    let sel_late = select(1);

    Ok([
        &arm_short * &sel_early, // EE
        &arm_long * &sel_early,  // EL (middle)
        &arm_short * &sel_late,  // LE (middle)
        &arm_long * &sel_late,   // LL
    ])
}

/// Embeds a 2x4 polarization branch map into the 6x4 (pol x peak) layout.
fn embed_peak(branch: &CMatrix, peak: usize) -> CMatrix {
    let mut e = CMatrix::zeros(6, 4);
    for p in 0..2 {
        for c in 0..4 {
            e[(p * 3 + peak, c)] = branch[(p, c)];
        }
    }
    e
}

/// Module 1: encodes the idler qubit into time bins on a single fiber
/// polarization. Input is a polarization pair, output lives in
/// [`ModeSpace::MidLink`]; the trace drops by the 3 dB recombination loss.
pub fn pol_to_timebin(
    input: &DensityMatrix,
    cfg: &LinkConfig,
    draws: &NoiseDraws,
) -> Result<DensityMatrix> {
    check_dim(input, ModeSpace::PolPair, "pol_to_timebin")?;
    let phase1 = cfg.phase1_nominal_deg.to_radians() + draws.phase1_rad;
    let m1 = module1_idler_map(cfg, phase1)?;
    let full = kron(&CMatrix::identity(2), &m1)?;
    input.conjugated_by(&full)
}

/// Unitary birefringence of the connecting fiber at the given paddle
/// setting, acting on the idler polarization and leaving bins alone.
pub fn transport(state: &DensityMatrix, paddles: &PaddleAngles) -> Result<DensityMatrix> {
    check_dim(state, ModeSpace::MidLink, "transport")?;
    let u = paddle_unitary(paddles);
    let idler = kron(u.matrix(), &CMatrix::identity(2))?;
    let full = kron(&CMatrix::identity(2), &idler)?;
    state.conjugated_by(&full)
}

/// Module 2: converts time bins back to polarization, sorting the light
/// into three arrival peaks. Middle-peak path interference is damped by
/// the configured temporal mismatch.
pub fn timebin_to_pol(
    state: &DensityMatrix,
    cfg: &LinkConfig,
    draws: &NoiseDraws,
) -> Result<ChannelOutput> {
    check_dim(state, ModeSpace::MidLink, "timebin_to_pol")?;
    let phase2 = cfg.phase2_nominal_deg.to_radians() + draws.phase2_rad;
    let branches = module2_branch_maps(cfg, phase2)?;
    let peaks = [
        Peak::EarlyEarly.index(),
        Peak::Middle.index(),
        Peak::Middle.index(),
        Peak::LateLate.index(),
    ];
    let id_signal = CMatrix::identity(2);
    let w: Vec<CMatrix> = branches
        .iter()
        .zip(peaks)
        .map(|(b, k)| kron(&id_signal, &embed_peak(b, k)))
        .collect::<Result<_>>()?;

    let rho = state.matrix();
    let mut acc = CMatrix::zeros(12, 12);
    for wk in &w {
        acc = &acc + &(&(wk * rho) * &wk.dagger());
    }
    // Interference between the two middle-peak paths (early-via-long and
    // late-via-short), weighted by their wavepacket overlap. This pair of
    // cross terms is exactly the residue of a two-Kraus dilation, so the
    // output stays completely positive for any overlap in [0, 1].
    let lambda = cfg.path_overlap();
    if lambda > 0.0 {
        let cross = &(&w[1] * rho) * &w[2].dagger();
        acc = &acc + &(&cross + &cross.dagger()).scaled(c64(lambda, 0.0));
    }

    let joint_state = DensityMatrix::new(acc)?;
    let m = joint_state.matrix();
    let mut peak_weights = [0.0; 3];
    for s in 0..2 {
        for p in 0..2 {
            for (k, w) in peak_weights.iter_mut().enumerate() {
                *w += m[(s * 6 + p * 3 + k, s * 6 + p * 3 + k)].re;
            }
        }
    }
    Ok(ChannelOutput { joint_state, peak_weights })
}

/// Keeps the middle arrival peak, returning its sub-normalized polarization
/// pair and the success probability (the peak weight itself, relative to a
/// unit-trace input).
pub fn postselect_middle(output: &ChannelOutput) -> Result<(DensityMatrix, f64)> {
    let m = output.joint_state.matrix();
    let mid = Peak::Middle.index();
    let idx = [mid, 3 + mid, 6 + mid, 9 + mid];
    let block = CMatrix::from_fn(4, 4, |i, j| m[(idx[i], idx[j])]);
    let state = DensityMatrix::new(block)?;
    let success = state.trace_real();
    if !(success > 0.0) {
        return Err(Error::ZeroTrace("postselect_middle"));
    }
    Ok((state, success))
}

/// Full chain: encode, transport, decode, post-select the middle peak.
pub fn end_to_end(
    input: &DensityMatrix,
    cfg: &LinkConfig,
    paddles: &PaddleAngles,
    draws: &NoiseDraws,
) -> Result<(DensityMatrix, f64)> {
    let mid = pol_to_timebin(input, cfg, draws)?;
    let transported = transport(&mid, paddles)?;
    let output = timebin_to_pol(&transported, cfg, draws)?;
    postselect_middle(&output)
}

/// Reference channel that sends the idler through the same fiber without
/// conversion: the paddle unitary scrambles polarization directly and
/// nothing is lost.
pub fn pol_only_baseline(
    input: &DensityMatrix,
    paddles: &PaddleAngles,
) -> Result<(DensityMatrix, f64)> {
    check_dim(input, ModeSpace::PolPair, "pol_only_baseline")?;
    let u = paddle_unitary(paddles);
    let full = kron(&CMatrix::identity(2), u.matrix())?;
    let out = input.conjugated_by(&full)?;
    let survival = out.trace_real();
    Ok((out, survival))
}

/// Highest fidelity against the phased Bell family, together with the
/// phase that attains it: `max_phi <phi| rho |phi> / tr(rho)`.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedFidelity {
    pub fidelity: f64,
    pub phase_rad: f64,
}

/// Closed-form calibration over the Bell phase: the optimum is
/// `(rho_00 + rho_33)/2 + |rho_03|` at `phi = -arg(rho_03)`, all relative
/// to the trace.
pub fn calibrated_bell_fidelity(rho: &DensityMatrix) -> Result<CalibratedFidelity> {
    check_dim(rho, ModeSpace::PolPair, "calibrated_bell_fidelity")?;
    let tr = rho.trace_real();
    if tr <= 0.0 {
        return Err(Error::ZeroTrace("calibrated_bell_fidelity"));
    }
    let m = rho.matrix();
    let coherence = m[(0, 3)];
    let fidelity = (0.5 * (m[(0, 0)].re + m[(3, 3)].re) + coherence.norm()) / tr;
    let phase_rad = if coherence.norm() > 0.0 {
        -coherence.arg()
    } else {
        0.0
    };
    Ok(CalibratedFidelity { fidelity, phase_rad })
}
