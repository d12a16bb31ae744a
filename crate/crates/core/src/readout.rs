//! Photodetector time-trace synthesis for the heterodyne/homodyne readout.
//!
//! The sensor converts the beatnote between the RF local oscillator and the
//! RF signal into a modulation of probe transmission. That chain is modeled
//! as: field calibration (dBm to V/m at the atoms) -> small-signal
//! responsivity (V/m to transmission) -> first-order sensor low-pass ->
//! homodyne amplitude gain -> detector volts (1 V per unit transmission).
//! Detector-referred noise, described by a parametric PSD model, is added
//! after the sensor filter.
//!
//! Every trace is a pure function of its inputs and seed: identical calls
//! produce bit-identical samples.

use crate::error::{ensure_finite, ensure_non_negative, ensure_positive, CoreError, Result};
use crate::fft;
use crate::seed::rng_from_seed;
use crate::spectro::AtomicSystem;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Default weight of the coupling-Rabi contribution in [`sensor_bandwidth`].
pub const DEFAULT_KAPPA: f64 = 0.5;

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

/// Parametric detector-referred noise model. PSD levels are in dBm/Hz under
/// the 50 ohm convention; set a level to `f64::NEG_INFINITY` to switch the
/// term off.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// White noise floor (dBm/Hz); the dominant probe-laser term.
    pub white_psd: f64,
    /// Corner frequency (Hz) below which the white term rises as 1/f;
    /// zero disables the 1/f factor.
    pub one_over_f_corner: f64,
    /// Shot-noise PSD per unit optical power (dBm/Hz at 1 mW).
    pub shot_coefficient: f64,
    /// Detector electronic floor (dBm/Hz).
    pub detector_floor: f64,
    /// Detected optical power (mW) scaling the shot term.
    pub optical_power_mw: f64,
}

impl NoiseModel {
    /// Completely noiseless model (all terms off).
    pub fn quiet() -> Self {
        NoiseModel {
            white_psd: f64::NEG_INFINITY,
            one_over_f_corner: 0.0,
            shot_coefficient: f64::NEG_INFINITY,
            detector_floor: f64::NEG_INFINITY,
            optical_power_mw: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, level) in [
            ("white_psd", self.white_psd),
            ("shot_coefficient", self.shot_coefficient),
            ("detector_floor", self.detector_floor),
        ] {
            // -inf is the explicit "off" value; +inf and NaN are not.
            if level.is_nan() || level == f64::INFINITY {
                return Err(CoreError::invalid_parameter(
                    name,
                    format!("must be a finite dBm/Hz level or -inf (off), got {level}"),
                ));
            }
        }
        ensure_non_negative("one_over_f_corner", self.one_over_f_corner)?;
        ensure_non_negative("optical_power_mw", self.optical_power_mw)?;
        Ok(())
    }

    /// One-sided total noise PSD in V^2/Hz at frequency `f` (Hz, > 0).
    ///
    /// The 1/f factor multiplies the white component only; the shot term
    /// scales linearly with detected optical power.
    pub fn psd_v2_per_hz(&self, f: f64) -> f64 {
        let white = dbm_per_hz_to_v2(self.white_psd);
        let shot = dbm_per_hz_to_v2(self.shot_coefficient) * self.optical_power_mw;
        let floor = dbm_per_hz_to_v2(self.detector_floor);
        let pink_factor = if self.one_over_f_corner > 0.0 {
            1.0 + self.one_over_f_corner / f
        } else {
            1.0
        };
        white * pink_factor + shot + floor
    }

    fn is_quiet(&self) -> bool {
        self.white_psd == f64::NEG_INFINITY
            && (self.shot_coefficient == f64::NEG_INFINITY || self.optical_power_mw == 0.0)
            && self.detector_floor == f64::NEG_INFINITY
    }
}

/// Convert a dBm/Hz density (50 ohm convention) to V^2/Hz.
fn dbm_per_hz_to_v2(dbm_per_hz: f64) -> f64 {
    // dBm -> mW -> W -> V^2 across 50 ohms.
    10f64.powf(dbm_per_hz / 10.0) * 1e-3 * 50.0
}

/// Complex baseband envelope applied to the RF signal field, with its own
/// sample rate. The envelope is expected to have unit RMS so `sig_power`
/// alone fixes the signal strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub envelope: Vec<Complex64>,
    pub sample_rate: f64,
}

/// RF drive configuration: local oscillator and signal tones plus an
/// optional modulation envelope on the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RFDrive {
    /// RF local-oscillator power (dBm).
    pub lo_power: f64,
    /// RF signal power (dBm).
    pub sig_power: f64,
    /// RF local-oscillator frequency (Hz).
    pub f_lo: f64,
    /// RF signal carrier frequency (Hz).
    pub f_sig: f64,
    pub modulation: Option<Modulation>,
}

impl RFDrive {
    /// Signed beatnote frequency f_sig - f_lo (Hz).
    pub fn beatnote(&self) -> f64 {
        self.f_sig - self.f_lo
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("lo_power", self.lo_power)?;
        ensure_finite("sig_power", self.sig_power)?;
        ensure_positive("f_lo", self.f_lo)?;
        ensure_positive("f_sig", self.f_sig)?;
        if let Some(m) = &self.modulation {
            ensure_positive("modulation.sample_rate", m.sample_rate)?;
            if m.envelope.is_empty() {
                return Err(CoreError::invalid_input("modulation.envelope", "must not be empty"));
            }
            if m.envelope.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(CoreError::invalid_input(
                    "modulation.envelope",
                    "contains non-finite samples",
                ));
            }
        }
        Ok(())
    }
}

/// First-order sensor response with corner frequency `f_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorBandwidth {
    pub f_c: f64,
}

impl SensorBandwidth {
    /// Complex response H(f) = 1 / (1 + i f / f_c); H(-f) = conj H(f).
    pub fn response(&self, f: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(1.0, f / self.f_c)
    }

    /// Amplitude response |H(f)|.
    pub fn amplitude(&self, f: f64) -> f64 {
        1.0 / (1.0 + (f / self.f_c).powi(2)).sqrt()
    }
}

/// Uniformly sampled detector output (volts).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub duration: f64,
    /// Seed the noise realization was drawn from.
    pub seed: u64,
}

/// Result of trace synthesis: the trace, plus a flag raised when the signal
/// chain has zero gain (for instance zero responsivity) and the trace is
/// noise-only.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedTrace {
    pub trace: TimeTrace,
    pub degenerate_signal: bool,
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

/// Sensor response corner frequency from atomic parameters:
/// f_c = (gamma_t + kappa * omega_c^2 / gamma_e) / 2 pi.
///
/// `kappa` is a dimensionless order-unity weight for the coupling-induced
/// decoherence contribution (see [`DEFAULT_KAPPA`]); it is calibrated once
/// per apparatus.
pub fn sensor_bandwidth(system: &AtomicSystem, kappa: f64) -> Result<SensorBandwidth> {
    system.validate()?;
    ensure_non_negative("kappa", kappa)?;
    let f_c = (system.gamma_t + kappa * system.omega_c.powi(2) / system.gamma_e) / (2.0 * PI);
    if f_c <= 0.0 {
        return Err(CoreError::invalid_parameter(
            "kappa",
            format!("sensor corner frequency must be positive, got {f_c} Hz"),
        ));
    }
    Ok(SensorBandwidth { f_c })
}

/// Homodyne amplitude gain from the optical LO and signal powers (mW):
/// 2 sqrt(p_lo / p_sig), or the supplied override (for instance a measured
/// apparatus value) when given.
pub fn homodyne_gain(p_lo_optical: f64, p_sig_optical: f64, override_gain: Option<f64>) -> Result<f64> {
    ensure_positive("p_lo_optical", p_lo_optical)?;
    ensure_positive("p_sig_optical", p_sig_optical)?;
    if let Some(g) = override_gain {
        ensure_positive("override_gain", g)?;
        return Ok(g);
    }
    Ok(2.0 * (p_lo_optical / p_sig_optical).sqrt())
}

/// Synthesize one detector trace.
///
/// * `responsivity` — dT/dE at the bias point (per V/m).
/// * `bandwidth` — sensor response corner.
/// * `drive` — RF LO/signal tones and optional modulation envelope; the
///   envelope must share `fs` and have exactly `round(duration * fs)`
///   samples.
/// * `noise` — detector-referred PSD model, realized after the sensor filter.
/// * `homodyne_gain` — optical homodyne amplitude gain.
/// * `cal` — field calibration constant (V/m per sqrt(mW)).
///
/// The detector chain is normalized to 1 V per unit transmission, so the
/// noiseless beat amplitude is
/// `homodyne_gain * responsivity * cal * sqrt(P_sig mW) * |H(f_b)|`.
pub fn synthesize_trace(
    responsivity: f64,
    bandwidth: &SensorBandwidth,
    drive: &RFDrive,
    noise: &NoiseModel,
    homodyne_gain: f64,
    cal: f64,
    duration: f64,
    fs: f64,
    seed: u64,
) -> Result<SynthesizedTrace> {
    drive.validate()?;
    noise.validate()?;
    ensure_finite("responsivity", responsivity)?;
    ensure_positive("bandwidth.f_c", bandwidth.f_c)?;
    ensure_positive("homodyne_gain", homodyne_gain)?;
    ensure_positive("cal", cal)?;
    ensure_positive("duration", duration)?;
    ensure_positive("fs", fs)?;

    let f_b = drive.beatnote();
    if f_b == 0.0 {
        return Err(CoreError::invalid_parameter(
            "f_sig",
            "heterodyne synthesis requires a nonzero beatnote (f_sig != f_lo)".to_string(),
        ));
    }
    if fs <= 4.0 * f_b.abs() {
        return Err(CoreError::SamplingViolation(format!(
            "sample rate {fs} Hz must exceed 4x the beatnote ({} Hz)",
            f_b.abs()
        )));
    }
    let n = (duration * fs).round() as usize;
    if n < 2 {
        return Err(CoreError::LengthError(format!(
            "duration x sample rate gives {n} samples; need at least 2"
        )));
    }

    // Field at the atoms: E = cal * sqrt(P_sig in mW).
    let e_sig = cal * 10f64.powf(drive.sig_power / 20.0);
    let amplitude = homodyne_gain * responsivity * e_sig;
    let degenerate_signal = amplitude == 0.0;

    let mut samples = vec![0.0f64; n];
    match &drive.modulation {
        None => {
            let h = bandwidth.response(f_b);
            let (h_mag, h_arg) = (h.norm(), h.arg());
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *s = amplitude * h_mag * (2.0 * PI * f_b * t + h_arg).cos();
            }
        }
        Some(m) => {
            if m.sample_rate != fs {
                return Err(CoreError::invalid_input(
                    "modulation.sample_rate",
                    format!("envelope sampled at {} Hz but trace requested at {fs} Hz", m.sample_rate),
                ));
            }
            if m.envelope.len() != n {
                return Err(CoreError::LengthError(format!(
                    "modulation envelope has {} samples but the trace needs {n}",
                    m.envelope.len()
                )));
            }
            // Filter the envelope by the sensor response evaluated at the
            // passband frequency of each envelope component.
            let mut buf = m.envelope.clone();
            fft::forward(&mut buf);
            for (k, v) in buf.iter_mut().enumerate() {
                let f_env = fft::bin_frequency(k, n, fs);
                *v *= bandwidth.response(f_b + f_env);
            }
            fft::inverse(&mut buf);
            for (i, s) in samples.iter_mut().enumerate() {
                let t = i as f64 / fs;
                let carrier = Complex64::cis(2.0 * PI * f_b * t);
                *s = amplitude * (buf[i] * carrier).re;
            }
        }
    }

    if !noise.is_quiet() {
        add_noise(&mut samples, noise, fs, seed);
    }

    Ok(SynthesizedTrace {
        trace: TimeTrace { samples, sample_rate: fs, duration, seed },
        degenerate_signal,
    })
}

/// Add a Gaussian noise realization shaped to the model PSD.
///
/// Synthesis happens in the frequency domain: each DFT bin receives an
/// independent complex Gaussian scaled so the one-sided PSD of the result
/// matches the model at that bin's frequency; Hermitian symmetry makes the
/// time-domain realization real. The 1/f factor is evaluated no lower than
/// one bin width to keep the DC bin finite.
fn add_noise(samples: &mut [f64], noise: &NoiseModel, fs: f64, seed: u64) {
    let n = samples.len();
    let df = fs / n as f64;
    let mut rng = rng_from_seed(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // DC bin: real Gaussian carrying one bin's worth of variance, with the
    // PSD clamped at one bin width.
    let s_dc = noise.psd_v2_per_hz(df);
    buf[0] = Complex64::new((s_dc * fs * n as f64).sqrt() * draw(), 0.0);
    let half = n / 2;
    for k in 1..=(n - 1) / 2 {
        let f = k as f64 * df;
        let sigma = (noise.psd_v2_per_hz(f) * fs * n as f64 / 4.0).sqrt();
        let re = sigma * draw();
        let im = sigma * draw();
        buf[k] = Complex64::new(re, im);
        buf[n - k] = Complex64::new(re, -im);
    }
    if n % 2 == 0 {
        let f = half as f64 * df;
        buf[half] = Complex64::new((noise.psd_v2_per_hz(f) * fs * n as f64).sqrt() * draw(), 0.0);
    }
    fft::inverse(&mut buf);
    for (s, v) in samples.iter_mut().zip(&buf) {
        *s += v.re;
    }
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
