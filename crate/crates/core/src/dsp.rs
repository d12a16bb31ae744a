//! Spectral estimation and baseband processing.
//!
//! The spectrum-analyzer side is a Welch-averaged, Hann-windowed
//! periodogram calibrated in dBm under the 50 ohm convention, with an
//! explicit resolution bandwidth equal to the window's equivalent noise
//! bandwidth: a bin-centered tone reads its mean-square power and a white
//! noise floor reads density x rbw, with the same stored `rbw`.
//!
//! The receiver side is digital down-conversion (multiplication by a
//! complex exponential, no filtering) and a Fourier-domain brick-wall
//! low-pass that zeroes every bin strictly above the cutoff.

use crate::error::{ensure_finite, ensure_positive, CoreError, Result};
use crate::fft;
use crate::readout::TimeTrace;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Reported floor for silent bins (dBm). Spectra never go below this.
pub const GUARD_FLOOR_DBM: f64 = -200.0;

/// Outer radius of the noise annulus in [`snr_at`], as a multiple of the
/// inner exclusion radius.
const NOISE_ANNULUS_RATIO: f64 = 20.0;

/// SNR at or below this is reported as no-signal.
const NO_SIGNAL_SNR_DB: f64 = 3.0;

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

/// One-sided averaged power spectrum in dBm per resolution bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    /// Bin center frequencies (Hz), DC first.
    pub axis: Vec<f64>,
    /// Power per resolution bandwidth (dBm), floored at [`GUARD_FLOOR_DBM`].
    pub values: Vec<f64>,
    /// Resolution bandwidth (Hz): the Hann window's equivalent noise
    /// bandwidth, 1.5 x the bin spacing.
    pub rbw: f64,
    /// Number of averaged segments across all input traces.
    pub n_averages: usize,
}

/// Complex baseband sequence produced by down-conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBaseband {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

/// Signal-to-noise estimate at a requested frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrEstimate {
    pub snr_db: f64,
    /// Peak bin power within one rbw of the requested frequency (dBm).
    pub signal_dbm: f64,
    /// Median bin power over the noise annulus (dBm).
    pub noise_dbm: f64,
    /// Frequency of the peak bin (Hz).
    pub peak_frequency: f64,
    /// True when the peak is indistinguishable from noise.
    pub no_signal: bool,
}

fn power_dbm(mean_square_v2: f64) -> f64 {
    // V^2 across 50 ohms -> mW -> dBm, held at the guard floor.
    if mean_square_v2 <= 0.0 {
        return GUARD_FLOOR_DBM;
    }
    (10.0 * (20.0 * mean_square_v2).log10()).max(GUARD_FLOOR_DBM)
}

fn dbm_to_v2(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 20.0
}

// ---------------------------------------------------------------------------
// periodogram
// ---------------------------------------------------------------------------

/// Welch-averaged periodogram of one or more traces at resolution
/// bandwidth `rbw`.
///
/// Traces must share sample rate and length. Segments use a periodic Hann
/// window with 50% overlap; segment length is chosen so the window's noise
/// bandwidth matches the requested rbw, clamped to the trace length when
/// the trace only fits one segment (the actual value is stored in the
/// result). Averaging is linear in power.
pub fn periodogram(traces: &[TimeTrace], rbw: f64) -> Result<PowerSpectrum> {
    if traces.is_empty() {
        return Err(CoreError::invalid_input("traces", "need at least one trace"));
    }
    ensure_positive("rbw", rbw)?;
    let fs = traces[0].sample_rate;
    let n = traces[0].samples.len();
    for (i, t) in traces.iter().enumerate() {
        if t.sample_rate != fs || t.samples.len() != n {
            return Err(CoreError::invalid_input(
                "traces",
                format!(
                    "trace {i} has fs {} Hz / {} samples; expected {fs} Hz / {n} samples",
                    t.sample_rate,
                    t.samples.len()
                ),
            ));
        }
    }
    if (n as f64) * rbw < fs {
        return Err(CoreError::LengthError(format!(
            "rbw {rbw} Hz needs at least {} samples at {fs} Hz; traces have {n}",
            (fs / rbw).ceil()
        )));
    }

    // Window noise bandwidth is 1.5 bins, so the segment realizing the
    // requested rbw has 1.5 fs / rbw samples (kept even for the half
    // overlap; clamped when the trace holds just one shorter segment).
    let ideal = (1.5 * fs / rbw).round() as usize;
    let n_seg = (ideal.min(n)) & !1usize;
    if n_seg < 16 {
        return Err(CoreError::ResolutionError(format!(
            "rbw {rbw} Hz gives a {n_seg}-sample segment at {fs} Hz; too coarse"
        )));
    }

    let window: Vec<f64> = (0..n_seg)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n_seg as f64).cos()))
        .collect();
    let sum_w: f64 = window.iter().sum();
    let sum_w2: f64 = window.iter().map(|w| w * w).sum();
    let df = fs / n_seg as f64;
    let enbw = n_seg as f64 * sum_w2 / (sum_w * sum_w) * df;

    let n_bins = n_seg / 2 + 1;
    let mut acc = vec![0.0f64; n_bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_seg];
    let hop = n_seg / 2;
    let mut n_averages = 0usize;
    for trace in traces {
        let mut start = 0usize;
        while start + n_seg <= n {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(trace.samples[start + i] * window[i], 0.0);
            }
            fft::forward(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                let one_sided = if k == 0 || k == n_seg / 2 { 1.0 } else { 2.0 };
                *a += one_sided * buf[k].norm_sqr() / (sum_w * sum_w);
            }
            n_averages += 1;
            start += hop;
        }
    }
    let scale = 1.0 / n_averages as f64;
    let axis: Vec<f64> = (0..n_bins).map(|k| k as f64 * df).collect();
    let values: Vec<f64> = acc.iter().map(|&a| power_dbm(a * scale)).collect();
    Ok(PowerSpectrum { axis, values, rbw: enbw, n_averages })
}

/// Mean-square power (dBm) of a tone near `f`, integrating the three-bin
/// cluster around the strongest bin and correcting for the window's noise
/// bandwidth. Robust to the tone sitting between bin centers.
pub fn tone_power_dbm(spectrum: &PowerSpectrum, f: f64) -> Result<f64> {
    let (k_peak, _) = peak_bin(spectrum, f, spectrum.rbw)?;
    let lo = k_peak.saturating_sub(1);
    let hi = (k_peak + 1).min(spectrum.values.len() - 1);
    let cluster: f64 = (lo..=hi).map(|k| dbm_to_v2(spectrum.values[k])).sum();
    Ok(power_dbm(cluster / 1.5))
}

fn peak_bin(spectrum: &PowerSpectrum, f: f64, half_width: f64) -> Result<(usize, f64)> {
    let axis = &spectrum.axis;
    if axis.is_empty() {
        return Err(CoreError::invalid_input("spectrum", "empty axis"));
    }
    let span = *axis.last().unwrap();
    if !(0.0..=span).contains(&f) {
        return Err(CoreError::OutOfRange(format!(
            "frequency {f} Hz outside the spectrum span [0, {span}] Hz"
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, (&fk, &p)) in axis.iter().zip(&spectrum.values).enumerate() {
        if (fk - f).abs() <= half_width {
            match best {
                Some((_, pb)) if pb >= p => {}
                _ => best = Some((k, p)),
            }
        }
    }
    best.ok_or_else(|| {
        CoreError::ResolutionError(format!(
            "no bins within {half_width} Hz of {f} Hz; bin spacing too coarse"
        ))
    })
}

// ---------------------------------------------------------------------------
// SNR extraction
// ---------------------------------------------------------------------------

/// SNR at `f_signal`: peak bin power within one rbw of the requested
/// frequency, against the median bin power over a two-sided annulus
/// spanning `noise_exclusion` to 20 x `noise_exclusion` away from it.
pub fn snr_at(spectrum: &PowerSpectrum, f_signal: f64, noise_exclusion: f64) -> Result<SnrEstimate> {
    ensure_positive("noise_exclusion", noise_exclusion)?;
    ensure_finite("f_signal", f_signal)?;
    let span = spectrum.axis.last().copied().unwrap_or(0.0);
    if noise_exclusion >= span {
        return Err(CoreError::invalid_parameter(
            "noise_exclusion",
            format!("{noise_exclusion} Hz does not fit in the spectrum span {span} Hz"),
        ));
    }
    let (k_peak, signal_dbm) = peak_bin(spectrum, f_signal, spectrum.rbw)?;
    let inner = noise_exclusion.max(spectrum.rbw);
    let outer = (inner * NOISE_ANNULUS_RATIO).min(span);
    let mut annulus: Vec<f64> = spectrum
        .axis
        .iter()
        .zip(&spectrum.values)
        .filter(|(&fk, _)| {
            let d = (fk - f_signal).abs();
            d > inner && d <= outer
        })
        .map(|(_, &p)| p)
        .collect();
    if annulus.is_empty() {
        return Err(CoreError::ResolutionError(format!(
            "noise annulus ({inner} Hz, {outer} Hz] around {f_signal} Hz holds no bins"
        )));
    }
    annulus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let noise_dbm = if annulus.len() % 2 == 1 {
        annulus[annulus.len() / 2]
    } else {
        0.5 * (annulus[annulus.len() / 2 - 1] + annulus[annulus.len() / 2])
    };
    let snr_db = signal_dbm - noise_dbm;
    let no_signal = snr_db <= NO_SIGNAL_SNR_DB || signal_dbm <= GUARD_FLOOR_DBM + 0.5;
    Ok(SnrEstimate {
        snr_db,
        signal_dbm,
        noise_dbm,
        peak_frequency: spectrum.axis[k_peak],
        no_signal,
    })
}

// ---------------------------------------------------------------------------
// down-conversion and filtering
// ---------------------------------------------------------------------------

/// Multiply the trace by exp(-i 2 pi f_mix t). No filtering: a real tone at
/// f_mix lands at DC with amplitude A/2 plus an image at -2 f_mix.
pub fn mix_to_baseband(trace: &TimeTrace, f_mix: f64) -> Result<ComplexBaseband> {
    ensure_finite("f_mix", f_mix)?;
    let fs = trace.sample_rate;
    if f_mix.abs() >= fs / 2.0 {
        return Err(CoreError::SamplingViolation(format!(
            "mix frequency {f_mix} Hz must satisfy |f| < fs/2 = {} Hz",
            fs / 2.0
        )));
    }
    let omega = -2.0 * PI * f_mix / fs;
    let samples = trace
        .samples
        .iter()
        .enumerate()
        .map(|(i, &x)| Complex64::cis(omega * i as f64) * x)
        .collect();
    Ok(ComplexBaseband { samples, sample_rate: fs })
}

/// Fourier-domain brick-wall low-pass: forward transform, zero every bin
/// with |f| strictly above the cutoff, inverse transform. In-band content
/// is untouched; the stop band is removed to numerical precision.
pub fn brickwall_lowpass(baseband: &ComplexBaseband, cutoff: f64) -> Result<ComplexBaseband> {
    ensure_positive("cutoff", cutoff)?;
    let fs = baseband.sample_rate;
    if cutoff >= fs / 2.0 {
        return Err(CoreError::invalid_parameter(
            "cutoff",
            format!("{cutoff} Hz must be below fs/2 = {} Hz", fs / 2.0),
        ));
    }
    if baseband.samples.is_empty() {
        return Err(CoreError::invalid_input("baseband", "must not be empty"));
    }
    let n = baseband.samples.len();
    let mut buf = baseband.samples.clone();
    fft::forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        if fft::bin_frequency(k, n, fs).abs() > cutoff {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft::inverse(&mut buf);
    Ok(ComplexBaseband { samples: buf, sample_rate: fs })
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
