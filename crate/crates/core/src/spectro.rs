//! Steady-state spectroscopy of the four-level Rydberg cascade.
//!
//! The model is the standard weak-probe ladder: ground state, intermediate
//! state driven by the probe, a Rydberg state driven by the coupling laser,
//! and a second Rydberg state driven by an applied RF field. The probe
//! coherence follows the nested-resonance (continued fraction) form, with
//! Doppler shifts entering the probe and coupling detunings with opposite
//! signs for counter-propagating beams. Transit dephasing adds to every
//! optical coherence decay rate.
//!
//! All angular quantities (Rabi frequencies, detunings, decay rates) are in
//! rad/s; spectral axes exposed to callers are in Hz.

use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, CoreError, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// physical constants
// ---------------------------------------------------------------------------

pub mod consts {
    /// Reduced Planck constant (J s).
    pub const HBAR: f64 = 1.054571817e-34;
    /// Boltzmann constant (J/K).
    pub const BOLTZMANN: f64 = 1.380649e-23;
    /// Unified atomic mass unit (kg).
    pub const ATOMIC_MASS: f64 = 1.660_539_068_92e-27;
    /// Atomic unit of electric dipole moment, e*a0 (C m).
    pub const ATOMIC_DIPOLE: f64 = 8.478_353_6255e-30;
    /// Mass of rubidium-85 (kg).
    pub const RB85_MASS: f64 = 84.911_789_7 * ATOMIC_MASS;
}

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

/// Complete parameter set of the four-level cascade plus beam geometry.
///
/// Rabi frequencies and rates are angular (rad/s). `omega_p` must be strictly
/// positive (the probe defines the measurement); `omega_c` and `omega_rf`
/// may be zero, which switches the corresponding field off.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSystem {
    /// Probe Rabi frequency (rad/s), perturbative overall scale.
    pub omega_p: f64,
    /// Coupling Rabi frequency (rad/s).
    pub omega_c: f64,
    /// RF Rabi frequency (rad/s).
    pub omega_rf: f64,
    /// Probe detuning (rad/s).
    pub delta_p: f64,
    /// Coupling detuning (rad/s).
    pub delta_c: f64,
    /// RF detuning (rad/s).
    pub delta_rf: f64,
    /// Intermediate-state decay rate (rad/s).
    pub gamma_e: f64,
    /// Rydberg decay/dephasing rate (rad/s).
    pub gamma_r: f64,
    /// Transit dephasing rate (rad/s); added to every coherence decay.
    pub gamma_t: f64,
    /// Probe wavelength (m).
    pub lambda_p: f64,
    /// Coupling wavelength (m).
    pub lambda_c: f64,
    /// Probe 1/e^2 beam radius (m).
    pub waist_p: f64,
    /// Coupling 1/e^2 beam radius (m).
    pub waist_c: f64,
    /// Cell temperature (K).
    pub temperature: f64,
    /// Optical path length through the vapor (m).
    pub cell_length: f64,
    /// Separation of the auxiliary fine-structure companion peak (Hz).
    pub fine_structure_offset: f64,
    /// Atomic mass (kg), used for the thermal velocity distribution.
    pub mass: f64,
    /// Resonant two-level probe absorption coefficient of the bare vapor
    /// (1/m); together with `cell_length` this sets the optical depth.
    pub peak_absorption: f64,
    /// Relative amplitude of the fine-structure companion peak.
    pub d32_amplitude: f64,
}

impl AtomicSystem {
    /// Benchtop rubidium-85 defaults: 18/13 MHz probe/coupling Rabi
    /// frequencies, 83/102 um waists, 55 C cell, 30 mm path, transit
    /// dephasing from a 280 m/s thermal speed across the probe waist.
    pub fn rb85() -> Self {
        let waist_p = 83e-6;
        let transit_rate_hz = 280.0 / (2.0 * waist_p);
        AtomicSystem {
            omega_p: 2.0 * PI * 18e6,
            omega_c: 2.0 * PI * 13e6,
            omega_rf: 0.0,
            delta_p: 0.0,
            delta_c: 0.0,
            delta_rf: 0.0,
            gamma_e: 2.0 * PI * 6.0666e6,
            gamma_r: 2.0 * PI * 1e5,
            gamma_t: 2.0 * PI * transit_rate_hz,
            lambda_p: 780.241e-9,
            lambda_c: 480.0e-9,
            waist_p,
            waist_c: 102e-6,
            temperature: 328.15,
            cell_length: 0.030,
            fine_structure_offset: 92e6,
            mass: consts::RB85_MASS,
            peak_absorption: 40.0,
            d32_amplitude: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("omega_p", self.omega_p)?;
        ensure_non_negative("omega_c", self.omega_c)?;
        ensure_non_negative("omega_rf", self.omega_rf)?;
        ensure_finite("delta_p", self.delta_p)?;
        ensure_finite("delta_c", self.delta_c)?;
        ensure_finite("delta_rf", self.delta_rf)?;
        ensure_positive("gamma_e", self.gamma_e)?;
        ensure_positive("gamma_r", self.gamma_r)?;
        ensure_non_negative("gamma_t", self.gamma_t)?;
        ensure_positive("lambda_p", self.lambda_p)?;
        ensure_positive("lambda_c", self.lambda_c)?;
        ensure_positive("waist_p", self.waist_p)?;
        ensure_positive("waist_c", self.waist_c)?;
        ensure_positive("temperature", self.temperature)?;
        ensure_positive("cell_length", self.cell_length)?;
        ensure_positive("fine_structure_offset", self.fine_structure_offset)?;
        ensure_positive("mass", self.mass)?;
        ensure_positive("peak_absorption", self.peak_absorption)?;
        ensure_non_negative("d32_amplitude", self.d32_amplitude)?;
        Ok(())
    }
}

/// Which physical axis a [`SpectrumCurve`] is sampled on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    /// Coupling-laser detuning axis (Hz) of a transmission scan.
    CouplingDetuning,
    /// Fourier-frequency axis (Hz) of a spectral estimate.
    FourierFrequency,
}

impl AxisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisKind::CouplingDetuning => "coupling-detuning",
            AxisKind::FourierFrequency => "fourier-frequency",
        }
    }
}

/// A sampled real-valued curve over a strictly increasing frequency axis.
///
/// `values` hold transmission fractions in [0, 1] unless `db_scale` is set,
/// in which case they are decibel quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    pub axis: Vec<f64>,
    pub values: Vec<f64>,
    pub axis_kind: AxisKind,
    pub n_averages: u32,
    pub db_scale: bool,
}

impl SpectrumCurve {
    pub fn new(
        axis: Vec<f64>,
        values: Vec<f64>,
        axis_kind: AxisKind,
        n_averages: u32,
        db_scale: bool,
    ) -> Result<Self> {
        if axis.is_empty() {
            return Err(CoreError::invalid_input("axis", "must not be empty"));
        }
        if axis.len() != values.len() {
            return Err(CoreError::invalid_input(
                "values",
                format!("length {} does not match axis length {}", values.len(), axis.len()),
            ));
        }
        if n_averages == 0 {
            return Err(CoreError::invalid_input("n_averages", "must be >= 1"));
        }
        for pair in axis.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(CoreError::invalid_input(
                    "axis",
                    format!("must be strictly increasing, got {} after {}", pair[1], pair[0]),
                ));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::invalid_input(
                    "values",
                    format!("non-finite value {v} at index {i}"),
                ));
            }
            if !db_scale && !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return Err(CoreError::invalid_input(
                    "values",
                    format!("transmission value {v} at index {i} outside [0, 1]"),
                ));
            }
        }
        Ok(SpectrumCurve { axis, values, axis_kind, n_averages, db_scale })
    }
}

/// Transit time of an atom across the probe beam and its inverse rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transit {
    /// Transit time tau = 2 w / v_bar (s).
    pub time_s: f64,
    /// Transit rate 1/tau (Hz).
    pub rate_hz: f64,
}

// ---------------------------------------------------------------------------
// steady-state coherence
// ---------------------------------------------------------------------------

/// Weak-probe steady-state probe coherence of the cascade for one velocity
/// class, in the nested-resonance form. The imaginary part is non-negative
/// and proportional to probe absorption; `omega_p` enters only as an overall
/// scale.
///
/// Doppler shifts: the probe detuning acquires +k_p v and the coupling
/// detuning -k_c v (counter-propagating beams), with v the velocity
/// component along the probe.
pub fn steady_state_coherence(system: &AtomicSystem, velocity: f64) -> Result<Complex64> {
    system.validate()?;
    ensure_finite("velocity", velocity)?;
    Ok(coherence_unchecked(system, velocity))
}

/// Same as [`steady_state_coherence`] minus validation; used in inner loops
/// where the system has already been validated once.
fn coherence_unchecked(system: &AtomicSystem, velocity: f64) -> Complex64 {
    let kp = 2.0 * PI / system.lambda_p;
    let kc = 2.0 * PI / system.lambda_c;
    let dp = system.delta_p + kp * velocity;
    let dc = system.delta_c - kc * velocity;

    let g21 = 0.5 * system.gamma_e + system.gamma_t;
    let g31 = 0.5 * system.gamma_r + system.gamma_t;
    let g41 = 0.5 * system.gamma_r + system.gamma_t;

    let i = Complex64::new(0.0, 1.0);
    let d4 = Complex64::new(g41, -(dp + dc + system.delta_rf));
    let d3 = Complex64::new(g31, -(dp + dc)) + Complex64::new(0.25 * system.omega_rf.powi(2), 0.0) / d4;
    let d2 = Complex64::new(g21, -dp) + Complex64::new(0.25 * system.omega_c.powi(2), 0.0) / d3;

    i * (0.5 * system.omega_p) / d2
}

// ---------------------------------------------------------------------------
// Doppler averaging
// ---------------------------------------------------------------------------

const DOPPLER_TOLERANCE: f64 = 1e-4;
const DOPPLER_GRID_START: usize = 64; // intervals; refined by doubling
const DOPPLER_GRID_CAP: usize = 1 << 16;
const DOPPLER_WIDTHS: f64 = 4.0;

/// Average `integrand` over the 1-D Maxwell-Boltzmann velocity distribution
/// at the given temperature and atomic mass.
///
/// The weighted integral runs over +/- 4 thermal widths on a Simpson grid
/// that is doubled until the normalized result changes by less than 1e-4
/// relative; the result is normalized by the same-grid weight integral so a
/// velocity-independent integrand is returned exactly.
pub fn doppler_average<F>(integrand: F, temperature: f64, mass: f64) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    doppler_average_tol(integrand, temperature, mass, DOPPLER_TOLERANCE)
}

/// [`doppler_average`] with an explicit relative tolerance; internal callers
/// that differentiate the result need tighter convergence than the default.
pub(crate) fn doppler_average_tol<F>(
    integrand: F,
    temperature: f64,
    mass: f64,
    tolerance: f64,
) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    ensure_positive("temperature", temperature)?;
    ensure_positive("mass", mass)?;
    let sigma = (consts::BOLTZMANN * temperature / mass).sqrt();
    let half_span = DOPPLER_WIDTHS * sigma;
    let weight = |v: f64| (-0.5 * (v / sigma).powi(2)).exp();

    let mut intervals = DOPPLER_GRID_START;
    let mut previous: Option<Complex64> = None;
    while intervals <= DOPPLER_GRID_CAP {
        let h = 2.0 * half_span / intervals as f64;
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for k in 0..=intervals {
            let v = -half_span + k as f64 * h;
            let w = weight(v);
            let simpson = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            num += simpson * w * integrand(v);
            den += simpson * w;
        }
        let current = num / den;
        if let Some(prev) = previous {
            let delta = (current - prev).norm();
            if delta <= tolerance * current.norm().max(f64::MIN_POSITIVE) {
                return Ok(current);
            }
        }
        previous = Some(current);
        intervals *= 2;
    }
    Err(CoreError::NonConvergence {
        routine: "doppler_average",
        details: format!(
            "velocity grid capped at {DOPPLER_GRID_CAP} intervals without reaching relative \
             tolerance {tolerance:.1e} (span +/- {half_span:.3} m/s)"
        ),
    })
}

// ---------------------------------------------------------------------------
// transmission spectra
// ---------------------------------------------------------------------------

/// Doppler-averaged absorption of the bare two-level probe transition on
/// resonance; the normalization reference for Beer-Lambert optical depth.
fn reference_absorption(system: &AtomicSystem, tolerance: f64) -> Result<f64> {
    let mut bare = system.clone();
    bare.omega_c = 0.0;
    bare.omega_rf = 0.0;
    bare.delta_p = 0.0;
    let coh =
        doppler_average_tol(|v| coherence_unchecked(&bare, v), bare.temperature, bare.mass, tolerance)?;
    Ok(coh.im)
}

fn transmission_value(alpha_length: f64) -> f64 {
    (-alpha_length).exp()
}

/// Beer-Lambert probe transmission as the coupling laser is scanned.
///
/// `scan` holds absolute coupling detunings in Hz (the system's own
/// `delta_c` is ignored). With `include_d32` set, a reduced-amplitude copy
/// of the RF-free transparency feature is added `fine_structure_offset`
/// below the main peak, reproducing the fine-structure companion that makes
/// the scan axis self-calibrating.
pub fn transmission_spectrum(
    system: &AtomicSystem,
    scan: &[f64],
    include_d32: bool,
) -> Result<SpectrumCurve> {
    system.validate()?;
    if scan.is_empty() {
        return Err(CoreError::invalid_input("scan", "must not be empty"));
    }
    for pair in scan.windows(2) {
        if !(pair[1] > pair[0]) {
            return Err(CoreError::invalid_input(
                "scan",
                format!("must be strictly increasing, got {} after {}", pair[1], pair[0]),
            ));
        }
    }
    for (i, &f) in scan.iter().enumerate() {
        if !f.is_finite() {
            return Err(CoreError::invalid_input("scan", format!("non-finite value at index {i}")));
        }
    }

    let reference = reference_absorption(system, DOPPLER_TOLERANCE)?;
    let depth = system.peak_absorption * system.cell_length;

    let ratio_at = |sys: &AtomicSystem, detuning_hz: f64| -> Result<f64> {
        let mut point = sys.clone();
        point.delta_c = 2.0 * PI * detuning_hz;
        let coh = doppler_average_tol(
            |v| coherence_unchecked(&point, v),
            point.temperature,
            point.mass,
            DOPPLER_TOLERANCE,
        )?;
        Ok(coh.im / reference)
    };

    let mut rf_free = system.clone();
    rf_free.omega_rf = 0.0;

    let mut values = Vec::with_capacity(scan.len());
    for &detuning in scan {
        let mut alpha_ratio = ratio_at(system, detuning)?;
        if include_d32 {
            // Transparency deviation of the RF-free feature, re-centered at
            // -fine_structure_offset and scaled down. Far from its own
            // resonance the deviation vanishes, so only the companion dip is
            // added, not a second background.
            let shifted = ratio_at(&rf_free, detuning + system.fine_structure_offset)?;
            alpha_ratio += system.d32_amplitude * (shifted - 1.0);
        }
        values.push(transmission_value(depth * alpha_ratio));
    }

    SpectrumCurve::new(scan.to_vec(), values, AxisKind::CouplingDetuning, 1, false)
}

// ---------------------------------------------------------------------------
// transit broadening
// ---------------------------------------------------------------------------

/// Transit time across the probe beam, tau = 2 w / v_bar, and its inverse
/// rate. `thermal_speed` overrides the mean-speed convention
/// v_bar = sqrt(8 k T / pi m) when a measured value is preferred.
pub fn transit_rate(
    waist: f64,
    temperature: f64,
    mass: f64,
    thermal_speed: Option<f64>,
) -> Result<Transit> {
    ensure_positive("waist", waist)?;
    ensure_positive("temperature", temperature)?;
    ensure_positive("mass", mass)?;
    let v_bar = match thermal_speed {
        Some(v) => {
            ensure_positive("thermal_speed", v)?;
            v
        }
        None => (8.0 * consts::BOLTZMANN * temperature / (PI * mass)).sqrt(),
    };
    let time_s = 2.0 * waist / v_bar;
    Ok(Transit { time_s, rate_hz: 1.0 / time_s })
}

// ---------------------------------------------------------------------------
// field/splitting conversion
// ---------------------------------------------------------------------------

/// RF field magnitude (V/m) producing an Autler-Townes splitting of
/// `splitting` Hz on a transition with the given dipole moment (C m):
/// |E| = hbar * (2 pi * splitting) / d.
pub fn at_splitting_to_field(splitting: f64, dipole_moment: f64) -> Result<f64> {
    ensure_non_negative("splitting", splitting)?;
    ensure_positive("dipole_moment", dipole_moment)?;
    Ok(consts::HBAR * (2.0 * PI * splitting) / dipole_moment)
}

/// Inverse of [`at_splitting_to_field`]: splitting (Hz) produced by a field.
pub fn field_to_splitting(field: f64, dipole_moment: f64) -> Result<f64> {
    ensure_non_negative("field", field)?;
    ensure_positive("dipole_moment", dipole_moment)?;
    Ok(dipole_moment * field / (consts::HBAR * 2.0 * PI))
}

// ---------------------------------------------------------------------------
// small-signal responsivity
// ---------------------------------------------------------------------------

const RESPONSIVITY_TOLERANCE: f64 = 1e-7; // Doppler tolerance inside T(E)
const RESPONSIVITY_TARGET: f64 = 0.01; // relative accuracy of the derivative

/// Probe transmission at the system's own operating point (both lasers at
/// their configured detunings) with the RF Rabi frequency set by `field`.
fn transmission_at_field(
    system: &AtomicSystem,
    field: f64,
    dipole_moment: f64,
    reference: f64,
) -> Result<f64> {
    let mut sys = system.clone();
    sys.omega_rf = dipole_moment * field.abs() / consts::HBAR;
    let coh = doppler_average_tol(
        |v| coherence_unchecked(&sys, v),
        sys.temperature,
        sys.mass,
        RESPONSIVITY_TOLERANCE,
    )?;
    let depth = sys.peak_absorption * sys.cell_length;
    Ok(transmission_value(depth * coh.im / reference))
}

/// Small-signal responsivity dT/dE (per V/m) at an RF local-oscillator bias
/// field, with both lasers locked on resonance.
///
/// The derivative is a central difference whose step is halved until the
/// Richardson error estimate falls below 1% of the derivative itself. At a
/// perfectly symmetric zero-field point the difference vanishes identically
/// and 0.0 is returned; a derivative that cannot be distinguished from
/// floating-point noise in the transmission evaluations is reported as a
/// degenerate operating point.
pub fn small_signal_responsivity(
    system: &AtomicSystem,
    lo_field: f64,
    dipole_moment: f64,
) -> Result<f64> {
    system.validate()?;
    ensure_non_negative("lo_field", lo_field)?;
    ensure_positive("dipole_moment", dipole_moment)?;
    if system.delta_p != 0.0 {
        return Err(CoreError::invalid_parameter(
            "delta_p",
            "responsivity is defined at the locked operating point (delta_p = 0)".to_string(),
        ));
    }
    if system.delta_c != 0.0 {
        return Err(CoreError::invalid_parameter(
            "delta_c",
            "responsivity is defined at the locked operating point (delta_c = 0)".to_string(),
        ));
    }

    let reference = reference_absorption(system, RESPONSIVITY_TOLERANCE)?;
    // Field scale at which the RF Rabi frequency is comparable to the
    // intermediate-state linewidth; keeps the initial step sensible when the
    // bias field is small or zero.
    let field_scale = consts::HBAR * system.gamma_e / dipole_moment;
    let mut h = 0.05 * (lo_field + 0.1 * field_scale);

    let derivative = |step: f64| -> Result<f64> {
        let plus = transmission_at_field(system, lo_field + step, dipole_moment, reference)?;
        let minus = transmission_at_field(system, lo_field - step, dipole_moment, reference)?;
        Ok((plus - minus) / (2.0 * step))
    };

    let mut coarse = derivative(h)?;
    for _ in 0..24 {
        let fine = derivative(0.5 * h)?;
        let error = (fine - coarse).abs() / 3.0;
        if coarse == 0.0 && fine == 0.0 {
            // Exact symmetry (e.g. zero bias field): the derivative is zero,
            // not noise.
            return Ok(0.0);
        }
        // Floor set by cancellation noise of the two transmission
        // evaluations at this step size: floating-point roundoff plus the
        // Doppler quadrature tolerance, which perturbs log-transmission by
        // up to tolerance x optical depth.
        let depth = system.peak_absorption * system.cell_length;
        let noise_floor = (4.0 * f64::EPSILON + RESPONSIVITY_TOLERANCE * depth) / h;
        if fine.abs() <= 8.0 * noise_floor {
            return Err(CoreError::DegenerateOperatingPoint(format!(
                "derivative {fine:.3e} per V/m at bias {lo_field:.3e} V/m is indistinguishable \
                 from numerical noise"
            )));
        }
        if error <= RESPONSIVITY_TARGET * fine.abs() {
            return Ok(fine);
        }
        coarse = fine;
        h *= 0.5;
    }
    Err(CoreError::NonConvergence {
        routine: "small_signal_responsivity",
        details: format!("step refinement exhausted at h = {h:.3e} V/m"),
    })
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn narrow_system() -> AtomicSystem {
        // Narrow, cold system: linewidths well below the Rabi frequencies so
        // Autler-Townes structure is cleanly resolved.
        let mut sys = AtomicSystem::rb85();
        sys.temperature = 1e-3;
        sys.gamma_t = 2.0 * PI * 1e4;
        sys.gamma_r = 2.0 * PI * 1e4;
        sys.omega_p = 2.0 * PI * 1e5;
        sys
    }

    #[test]
    fn two_level_absorption_peaks_on_resonance() {
        let mut sys = AtomicSystem::rb85();
        sys.omega_c = 0.0;
        sys.omega_rf = 0.0;
        let on = steady_state_coherence(&sys, 0.0).unwrap();
        sys.delta_p = sys.gamma_e;
        let off = steady_state_coherence(&sys, 0.0).unwrap();
        assert!(on.im > 0.0, "resonant absorption must be positive, got {}", on.im);
        assert!(
            on.im > off.im,
            "absorption should be maximal on resonance: on = {}, detuned = {}",
            on.im,
            off.im
        );
        // Lorentzian check: detuning by the half-width gamma_21 halves Im.
        let g21 = 0.5 * sys.gamma_e + sys.gamma_t;
        sys.delta_p = g21;
        let half = steady_state_coherence(&sys, 0.0).unwrap();
        assert_relative_eq!(half.im, 0.5 * on.im, max_relative = 1e-12);
    }

    #[test]
    fn coupling_field_opens_transparency_window() {
        let mut sys = AtomicSystem::rb85();
        sys.omega_rf = 0.0;
        let eit = steady_state_coherence(&sys, 0.0).unwrap();
        sys.omega_c = 0.0;
        let bare = steady_state_coherence(&sys, 0.0).unwrap();
        assert!(
            eit.im < bare.im,
            "coupling field must reduce resonant absorption: EIT {} vs bare {}",
            eit.im,
            bare.im
        );
    }

    #[test]
    fn rf_field_splits_the_transparency_peak() {
        // Scan the coupling detuning with a strong RF field; the two
        // transmission maxima should sit near +/- omega_rf / 2.
        let mut sys = narrow_system();
        sys.omega_rf = 2.0 * PI * 20e6;
        let scan: Vec<f64> = (0..801).map(|i| -40e6 + i as f64 * 0.1e6).collect();
        let curve = transmission_spectrum(&sys, &scan, false).unwrap();
        let (sep, _) = naive_peak_separation(&curve);
        assert_relative_eq!(sep, 20e6, max_relative = 0.05);
    }

    #[test]
    fn coherence_scale_is_linear_in_probe_rabi() {
        let mut sys = AtomicSystem::rb85();
        let a = steady_state_coherence(&sys, 3.0).unwrap();
        sys.omega_p *= 2.0;
        let b = steady_state_coherence(&sys, 3.0).unwrap();
        assert_relative_eq!(b.re, 2.0 * a.re, max_relative = 1e-12);
        assert_relative_eq!(b.im, 2.0 * a.im, max_relative = 1e-12);
    }

    #[test]
    fn invalid_system_is_rejected_with_field_name() {
        let mut sys = AtomicSystem::rb85();
        sys.gamma_e = -1.0;
        let err = steady_state_coherence(&sys, 0.0).unwrap_err();
        assert!(err.to_string().contains("gamma_e"), "got: {err}");
    }

    // -- doppler ------------------------------------------------------------

    #[test]
    fn doppler_average_of_constant_normalizes_to_the_constant() {
        // Numerator and denominator use the same quadrature, so a constant
        // integrand survives up to accumulation-order roundoff.
        let c = Complex64::new(0.7, -0.3);
        let got = doppler_average(|_| c, 300.0, consts::RB85_MASS).unwrap();
        assert_relative_eq!(got.re, c.re, max_relative = 1e-13);
        assert_relative_eq!(got.im, c.im, max_relative = 1e-13);
    }

    #[test]
    fn doppler_average_matches_gaussian_convolution() {
        // integrand exp(-(v - v0)^2 / 2 s^2): the Maxwell-weighted average
        // has the closed form sqrt(s^2/(s^2+sigma^2)) * exp(-v0^2/(2(s^2+sigma^2))).
        let temperature = 328.15;
        let mass = consts::RB85_MASS;
        let sigma2 = consts::BOLTZMANN * temperature / mass;
        for (v0, s) in [(0.0, 150.0), (80.0, 220.0), (-120.0, 400.0)] {
            let s2: f64 = s * s;
            let got = doppler_average(
                |v| Complex64::new((-(v - v0) * (v - v0) / (2.0 * s2)).exp(), 0.0),
                temperature,
                mass,
            )
            .unwrap();
            let expect = (s2 / (s2 + sigma2)).sqrt() * (-v0 * v0 / (2.0 * (s2 + sigma2))).exp();
            assert_relative_eq!(got.re, expect, max_relative = 1e-3);
            assert_abs_diff_eq!(got.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn doppler_average_cold_limit_evaluates_at_rest() {
        let f = |v: f64| Complex64::new(1.0 / (1.0 + v * v), 0.3 * v.cos());
        let got = doppler_average(f, 1e-9, consts::RB85_MASS).unwrap();
        // At 1 nK the thermal width is ~1e-5 m/s, so the integrand is
        // constant across the grid to well below the quadrature tolerance.
        let at_rest = f(0.0);
        assert_relative_eq!(got.re, at_rest.re, max_relative = 1e-6);
        assert_relative_eq!(got.im, at_rest.im, max_relative = 1e-6);
    }

    #[test]
    fn doppler_average_of_even_real_integrand_is_real() {
        let got = doppler_average(
            |v| Complex64::new((v / 200.0).powi(2).exp().recip(), 0.0),
            328.15,
            consts::RB85_MASS,
        )
        .unwrap();
        assert_abs_diff_eq!(got.im, 0.0, epsilon = 1e-15);
    }

    // -- transmission spectra -------------------------------------------------

    fn naive_peak_separation(curve: &SpectrumCurve) -> (f64, Vec<usize>) {
        // Local maxima by direct comparison; adequate for clean synthetic
        // curves in unit tests (characterize has the real fitting).
        let v = &curve.values;
        let mut peaks: Vec<usize> = (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
            .collect();
        peaks.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());
        let top: Vec<usize> = peaks.into_iter().take(2).collect();
        assert!(top.len() == 2, "expected two peaks, found {}", top.len());
        ((curve.axis[top[0]] - curve.axis[top[1]]).abs(), top)
    }

    #[test]
    fn rf_off_scan_has_single_peak_at_zero_detuning() {
        let mut sys = AtomicSystem::rb85();
        sys.omega_rf = 0.0;
        let scan: Vec<f64> = (0..241).map(|i| -30e6 + i as f64 * 0.25e6).collect();
        let curve = transmission_spectrum(&sys, &scan, false).unwrap();
        let peak = curve
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        assert_abs_diff_eq!(curve.axis[peak], 0.0, epsilon = 0.3e6);
        for &t in &curve.values {
            assert!((0.0..=1.0 + 1e-9).contains(&t), "transmission out of range: {t}");
        }
    }

    #[test]
    fn companion_peak_sits_at_minus_fine_structure_offset() {
        let mut sys = AtomicSystem::rb85();
        sys.omega_rf = 0.0;
        let scan: Vec<f64> = (0..561).map(|i| -120e6 + i as f64 * 0.25e6).collect();
        let curve = transmission_spectrum(&sys, &scan, true).unwrap();
        // Window around -92 MHz, away from the main peak at 0.
        let window: Vec<usize> =
            (0..scan.len()).filter(|&i| scan[i] > -112e6 && scan[i] < -72e6).collect();
        let peak = *window
            .iter()
            .max_by(|&&a, &&b| curve.values[a].partial_cmp(&curve.values[b]).unwrap())
            .unwrap();
        assert_abs_diff_eq!(curve.axis[peak], -92e6, epsilon = 0.5e6);
        // The companion is smaller than the main peak.
        let main = curve
            .values
            .iter()
            .zip(&curve.axis)
            .filter(|(_, &f)| f.abs() < 10e6)
            .map(|(&t, _)| t)
            .fold(0.0_f64, f64::max);
        assert!(
            curve.values[peak] < main,
            "companion {} should be weaker than main {main}",
            curve.values[peak]
        );
    }

    #[test]
    fn transmission_is_monotone_in_cell_length() {
        let mut sys = AtomicSystem::rb85();
        sys.omega_rf = 2.0 * PI * 12e6;
        let scan: Vec<f64> = (0..81).map(|i| -20e6 + i as f64 * 0.5e6).collect();
        let short = transmission_spectrum(&sys, &scan, false).unwrap();
        sys.cell_length *= 2.0;
        let long = transmission_spectrum(&sys, &scan, false).unwrap();
        for (s, l) in short.values.iter().zip(&long.values) {
            assert!(l <= s, "longer cell must not transmit more: {l} > {s}");
        }
        // log T scales exactly linearly with length at fixed coefficient.
        for (s, l) in short.values.iter().zip(&long.values) {
            assert_relative_eq!(l.ln(), 2.0 * s.ln(), max_relative = 1e-9);
        }
    }

    #[test]
    fn at_separation_grows_with_rf_and_approaches_rabi() {
        let mut sys = narrow_system();
        let scan: Vec<f64> = (0..1601).map(|i| -80e6 + i as f64 * 0.1e6).collect();
        let mut last = 0.0;
        for rabi_hz in [15e6, 25e6, 40e6] {
            sys.omega_rf = 2.0 * PI * rabi_hz;
            let curve = transmission_spectrum(&sys, &scan, false).unwrap();
            let (sep, _) = naive_peak_separation(&curve);
            assert!(sep > last, "separation should grow with RF power: {sep} after {last}");
            last = sep;
        }
        // 40 MHz is > 10x all linewidths in the narrow system.
        assert_relative_eq!(last, 40e6, max_relative = 0.02);
    }

    #[test]
    fn unsorted_scan_is_rejected() {
        let sys = AtomicSystem::rb85();
        let err = transmission_spectrum(&sys, &[0.0, -1e6, 1e6], false).unwrap_err();
        assert!(matches!(err, CoreError::InvalidInput { .. }), "got: {err:?}");
        assert!(transmission_spectrum(&sys, &[], false).is_err());
    }

    // -- transit --------------------------------------------------------------

    #[test]
    fn transit_matches_published_operating_point() {
        let t = transit_rate(83e-6, 328.15, consts::RB85_MASS, Some(280.0)).unwrap();
        assert_abs_diff_eq!(t.time_s, 0.593e-6, epsilon = 0.0005e-6);
        assert_abs_diff_eq!(t.rate_hz, 1.687e6, epsilon = 0.0005e6);
    }

    #[test]
    fn transit_time_doubles_with_waist() {
        let a = transit_rate(83e-6, 328.15, consts::RB85_MASS, Some(280.0)).unwrap();
        let b = transit_rate(166e-6, 328.15, consts::RB85_MASS, Some(280.0)).unwrap();
        assert_relative_eq!(b.time_s, 2.0 * a.time_s, max_relative = 1e-15);
    }

    #[test]
    fn transit_rate_times_time_is_unity() {
        let t = transit_rate(50e-6, 300.0, consts::RB85_MASS, None).unwrap();
        assert!(
            (t.rate_hz * t.time_s - 1.0).abs() <= f64::EPSILON,
            "rate x time = {} should be 1 to machine precision",
            t.rate_hz * t.time_s
        );
    }

    #[test]
    fn default_mean_speed_convention_is_maxwellian() {
        let t = transit_rate(83e-6, 328.15, consts::RB85_MASS, None).unwrap();
        let v_bar = (8.0 * consts::BOLTZMANN * 328.15 / (PI * consts::RB85_MASS)).sqrt();
        assert_relative_eq!(t.time_s, 2.0 * 83e-6 / v_bar, max_relative = 1e-12);
        // Sanity: the Maxwell mean speed at 55 C is close to the 280 m/s
        // working value.
        assert_relative_eq!(v_bar, 286.05, max_relative = 1e-3);
    }

    // -- field conversion -------------------------------------------------------

    #[test]
    fn normalized_dipole_makes_field_equal_rabi() {
        // With d = hbar the conversion collapses to E = 2 pi * splitting.
        let splitting = 5e6;
        let field = at_splitting_to_field(splitting, consts::HBAR).unwrap();
        assert_relative_eq!(field, 2.0 * PI * splitting, max_relative = 1e-15);
    }

    #[test]
    fn twenty_megahertz_at_thousand_atomic_units() {
        let field = at_splitting_to_field(20e6, 1000.0 * consts::ATOMIC_DIPOLE).unwrap();
        assert_relative_eq!(field, 1.5630558569793829, max_relative = 1e-12);
    }

    #[test]
    fn field_splitting_roundtrip_is_identity() {
        for splitting in [1e3, 250e3, 20e6, 3e9] {
            let d = 1500.0 * consts::ATOMIC_DIPOLE;
            let back = field_to_splitting(at_splitting_to_field(splitting, d).unwrap(), d).unwrap();
            assert_relative_eq!(back, splitting, max_relative = 1e-12);
        }
        assert!(at_splitting_to_field(1e6, 0.0).is_err(), "zero dipole must be rejected");
    }

    // -- responsivity -------------------------------------------------------------

    #[test]
    fn responsivity_vanishes_at_zero_bias() {
        let sys = AtomicSystem::rb85();
        let r = small_signal_responsivity(&sys, 0.0, 1000.0 * consts::ATOMIC_DIPOLE).unwrap();
        assert_eq!(r, 0.0, "symmetric zero-field point must give exactly zero");
    }

    #[test]
    fn responsivity_sign_matches_coarse_secant() {
        let sys = AtomicSystem::rb85();
        let dipole = 1000.0 * consts::ATOMIC_DIPOLE;
        let bias = 0.4; // V/m, on the shoulder where splitting sets in
        let r = small_signal_responsivity(&sys, bias, dipole).unwrap();
        let reference = reference_absorption(&sys, 1e-7).unwrap();
        let t1 = transmission_at_field(&sys, bias + 0.05, dipole, reference).unwrap();
        let t0 = transmission_at_field(&sys, bias - 0.05, dipole, reference).unwrap();
        let secant = (t1 - t0) / 0.1;
        assert!(
            r.signum() == secant.signum(),
            "derivative sign {r} should match coarse secant {secant}"
        );
        assert_relative_eq!(r, secant, max_relative = 0.25);
    }

    #[test]
    fn responsivity_scales_with_cell_length_when_thin() {
        let mut sys = AtomicSystem::rb85();
        sys.peak_absorption = 0.2; // alpha L ~ 0.006: optically thin
        let dipole = 1000.0 * consts::ATOMIC_DIPOLE;
        let r1 = small_signal_responsivity(&sys, 0.4, dipole).unwrap();
        sys.cell_length *= 2.0;
        let r2 = small_signal_responsivity(&sys, 0.4, dipole).unwrap();
        assert_relative_eq!(r2, 2.0 * r1, max_relative = 0.02);
    }

    #[test]
    fn responsivity_requires_locked_lasers() {
        let mut sys = AtomicSystem::rb85();
        sys.delta_c = 2.0 * PI * 1e6;
        let err =
            small_signal_responsivity(&sys, 0.3, 1000.0 * consts::ATOMIC_DIPOLE).unwrap_err();
        assert!(err.to_string().contains("delta_c"), "got: {err}");
    }
}
