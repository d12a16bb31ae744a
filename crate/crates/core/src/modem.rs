//! QPSK generation, demodulation, and error-vector-magnitude scoring.
//!
//! The transmit side maps 2-bit symbols onto the four phases
//! {45, 135, 225, 315} degrees with rectangular (NRZ) pulse shaping and a
//! unit-RMS complex envelope. The receive side assumes transmitter and
//! receiver share a reference clock: the beatnote and symbol timing are
//! known exactly, so demodulation is mix-down, a per-symbol boxcar average
//! (the matched filter for NRZ), and one global complex scale fitted by
//! least squares over all symbols. When twice the beatnote is an integer
//! multiple of the symbol rate the mixing image integrates to zero over
//! every symbol window and a noiseless loopback is exact to rounding.
//!
//! A reference RF-mixer channel with a configurable flat response is
//! included so atomic-receiver EVM curves can be compared against a
//! conventional front end under identical drive, scale, and noise.

use crate::error::{ensure_positive, CoreError, Result};
use crate::readout::{self, NoiseModel, RFDrive, SensorBandwidth, TimeTrace};
use crate::seed::rng_from_seed;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Symbols per maximal-length PRBS9 cycle; also the default stream length.
pub const DEFAULT_SYMBOL_COUNT: usize = 511;

/// The four QPSK constellation points, indexed by symbol value.
/// Point k sits at phase 45 + 90 k degrees; all have unit modulus.
pub const QPSK_POINTS: [Complex64; 4] = [
    Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

/// How [`generate_symbols`] picks symbol values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolSource {
    /// Maximal-length 2^9 - 1 binary sequence (x^9 + x^5 + 1, all-ones
    /// seed), mapped to 2-bit symbols by pairing each bit with the bit a
    /// half period later.
    Prbs9,
    /// Uniform symbols from a seeded deterministic generator.
    Seeded(u64),
}

/// A transmitted symbol sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    /// 2-bit symbol values, each in 0..=3.
    pub symbols: Vec<u8>,
    pub symbol_rate: f64,
}

impl SymbolStream {
    pub fn validate(&self) -> Result<()> {
        if self.symbols.is_empty() {
            return Err(CoreError::invalid_input("symbols", "need at least one symbol"));
        }
        ensure_positive("symbol_rate", self.symbol_rate)?;
        if let Some(&bad) = self.symbols.iter().find(|&&s| s > 3) {
            return Err(CoreError::invalid_input(
                "symbols",
                format!("symbol value {bad} outside 0..=3"),
            ));
        }
        Ok(())
    }
}

/// Modulated waveform: the complex baseband envelope and the real passband
/// product at the carrier, both on the same sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QpskWaveform {
    /// Unit-RMS complex envelope (constant modulus for QPSK).
    pub envelope: Vec<Complex64>,
    /// Re[envelope x exp(i 2 pi f_carrier t)].
    pub passband: Vec<f64>,
    pub sample_rate: f64,
}

/// Demodulated constellation, normalized onto the nominal unit grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IQConstellation {
    /// One normalized point per transmitted symbol.
    pub measured: Vec<Complex64>,
    /// The four nominal points; see [`QPSK_POINTS`].
    pub nominal: [Complex64; 4],
    /// Transmitted symbol value per point, indexing `nominal`.
    pub labels: Vec<u8>,
    pub symbol_rate: f64,
    pub beatnote: f64,
}

/// Error-vector-magnitude summary for one constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct EVMReport {
    /// RMS error magnitude as a percentage of the unit constellation radius.
    pub evm_rms: f64,
    /// |measured - nominal| per symbol.
    pub per_symbol_error: Vec<f64>,
    pub symbol_rate: f64,
    pub beatnote: f64,
}

// ---------------------------------------------------------------------------
// symbol generation
// ---------------------------------------------------------------------------

/// Generate `count` symbols from the chosen source. The PRBS9 cycle is 511
/// symbols long and repeats when more are requested.
pub fn generate_symbols(count: usize, symbol_rate: f64, source: SymbolSource) -> Result<SymbolStream> {
    if count == 0 {
        return Err(CoreError::invalid_parameter("count", "need at least one symbol".to_string()));
    }
    ensure_positive("symbol_rate", symbol_rate)?;
    let symbols = match source {
        SymbolSource::Prbs9 => {
            let bits = prbs9_bits();
            let period = bits.len();
            (0..count)
                .map(|k| {
                    let hi = bits[k % period];
                    let lo = bits[(k + period / 2) % period];
                    2 * hi + lo
                })
                .collect()
        }
        SymbolSource::Seeded(seed) => {
            let mut rng = rng_from_seed(seed);
            (0..count).map(|_| rng.gen_range(0..4u8)).collect()
        }
    };
    Ok(SymbolStream { symbols, symbol_rate })
}

/// One period (511 bits) of the x^9 + x^5 + 1 LFSR from the all-ones state.
fn prbs9_bits() -> Vec<u8> {
    let mut state: u16 = 0x1ff;
    let mut bits = Vec::with_capacity(511);
    for _ in 0..511 {
        let out = state & 1;
        bits.push(out as u8);
        let feedback = (state ^ (state >> 4)) & 1;
        state = ((state >> 1) | (feedback << 8)) & 0x1ff;
    }
    bits
}

// ---------------------------------------------------------------------------
// modulation
// ---------------------------------------------------------------------------

/// QPSK-modulate a stream: NRZ envelope (one constellation point held per
/// symbol) and its real passband product at `f_carrier`.
///
/// The sample grid must align with symbol boundaries (fs an integer
/// multiple of the symbol rate, at least 8 samples per symbol) and satisfy
/// fs > 2 (f_carrier + symbol rate).
pub fn qpsk_modulate(stream: &SymbolStream, f_carrier: f64, fs: f64) -> Result<QpskWaveform> {
    stream.validate()?;
    ensure_positive("fs", fs)?;
    ensure_positive("f_carrier", f_carrier)?;
    if fs <= 2.0 * (f_carrier + stream.symbol_rate) {
        return Err(CoreError::SamplingViolation(format!(
            "fs {fs} Hz must exceed 2 x (carrier + symbol rate) = {} Hz",
            2.0 * (f_carrier + stream.symbol_rate)
        )));
    }
    let sps = samples_per_symbol(fs, stream.symbol_rate)?;
    let n = stream.symbols.len() * sps;
    let mut envelope = Vec::with_capacity(n);
    for &s in &stream.symbols {
        let point = QPSK_POINTS[s as usize];
        envelope.extend(std::iter::repeat(point).take(sps));
    }
    let passband = envelope
        .iter()
        .enumerate()
        .map(|(i, e)| (e * Complex64::cis(2.0 * PI * f_carrier * i as f64 / fs)).re)
        .collect();
    Ok(QpskWaveform { envelope, passband, sample_rate: fs })
}

fn samples_per_symbol(fs: f64, symbol_rate: f64) -> Result<usize> {
    let ratio = fs / symbol_rate;
    let sps = ratio.round();
    if (ratio - sps).abs() > 1e-9 * ratio {
        return Err(CoreError::SamplingViolation(format!(
            "fs / symbol_rate = {ratio} must be an integer so symbol windows align with samples"
        )));
    }
    if sps < 8.0 {
        return Err(CoreError::SamplingViolation(format!(
            "{sps} samples per symbol; need at least 8"
        )));
    }
    Ok(sps as usize)
}

// ---------------------------------------------------------------------------
// demodulation
// ---------------------------------------------------------------------------

/// Demodulate a received trace against a known symbol stream.
///
/// Chain: multiply by exp(-i 2 pi beatnote t), average each symbol window
/// (boxcar matched filter for NRZ), then fit one complex scale c by least
/// squares so c x symbol means land on the nominal grid. Timing is assumed
/// synchronous: symbol k occupies [k, k+1) / symbol_rate from trace start.
pub fn demodulate(trace: &TimeTrace, beatnote: f64, stream: &SymbolStream) -> Result<IQConstellation> {
    stream.validate()?;
    let fs = trace.sample_rate;
    let sps = samples_per_symbol(fs, stream.symbol_rate).map_err(|e| match e {
        CoreError::SamplingViolation(msg) => CoreError::SyncError(msg),
        other => other,
    })?;
    let needed = stream.symbols.len() * sps;
    if trace.samples.len() < needed {
        return Err(CoreError::SyncError(format!(
            "trace holds {} samples but {} symbols at {} samples each need {needed}",
            trace.samples.len(),
            stream.symbols.len(),
            sps
        )));
    }
    if beatnote.abs() >= fs / 2.0 {
        return Err(CoreError::SamplingViolation(format!(
            "beatnote {beatnote} Hz must satisfy |f| < fs/2 = {} Hz",
            fs / 2.0
        )));
    }

    let omega = -2.0 * PI * beatnote / fs;
    let inv_sps = 1.0 / sps as f64;
    let mut means = Vec::with_capacity(stream.symbols.len());
    for k in 0..stream.symbols.len() {
        let start = k * sps;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in start..start + sps {
            acc += trace.samples[i] * Complex64::cis(omega * i as f64);
        }
        means.push(acc * inv_sps);
    }

    // Global least-squares complex scale: c minimizing sum |c m_k - nom_k|^2.
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for (m, &s) in means.iter().zip(&stream.symbols) {
        num += m.conj() * QPSK_POINTS[s as usize];
        den += m.norm_sqr();
    }
    if den == 0.0 {
        return Err(CoreError::DegenerateOperatingPoint(
            "received symbol means carry no energy; nothing to normalize".to_string(),
        ));
    }
    let c = num / den;
    let measured = means.iter().map(|m| c * m).collect();
    Ok(IQConstellation {
        measured,
        nominal: QPSK_POINTS,
        labels: stream.symbols.clone(),
        symbol_rate: stream.symbol_rate,
        beatnote,
    })
}

/// Error vector magnitude of a constellation, in percent of the unit
/// constellation radius.
pub fn evm(constellation: &IQConstellation) -> Result<EVMReport> {
    let n = constellation.measured.len();
    if n == 0 {
        return Err(CoreError::invalid_input("constellation", "no symbols"));
    }
    if constellation.labels.len() != n {
        return Err(CoreError::invalid_input(
            "constellation",
            format!("{} labels for {n} measured points", constellation.labels.len()),
        ));
    }
    let mut per_symbol_error = Vec::with_capacity(n);
    let mut sum_sq = 0.0;
    for (m, &s) in constellation.measured.iter().zip(&constellation.labels) {
        if s > 3 {
            return Err(CoreError::invalid_input("labels", format!("symbol value {s} outside 0..=3")));
        }
        let err = (m - constellation.nominal[s as usize]).norm();
        sum_sq += err * err;
        per_symbol_error.push(err);
    }
    Ok(EVMReport {
        evm_rms: 100.0 * (sum_sq / n as f64).sqrt(),
        per_symbol_error,
        symbol_rate: constellation.symbol_rate,
        beatnote: constellation.beatnote,
    })
}

// ---------------------------------------------------------------------------
// reference mixer channel
// ---------------------------------------------------------------------------

/// Synthesize the output of a conventional RF mixer receiving the same
/// drive: identical conversion scale and noise as the atomic chain, but a
/// flat response out to `mixer_bandwidth` (first-order roll-off beyond).
/// Pick the corner far above the atomic sensor's to expose the atoms'
/// bandwidth limit in paired EVM measurements.
#[allow(clippy::too_many_arguments)]
pub fn reference_mixer_channel(
    responsivity: f64,
    mixer_bandwidth: f64,
    drive: &RFDrive,
    noise: &NoiseModel,
    homodyne_gain: f64,
    cal: f64,
    duration: f64,
    fs: f64,
    seed: u64,
) -> Result<TimeTrace> {
    ensure_positive("mixer_bandwidth", mixer_bandwidth)?;
    let bandwidth = SensorBandwidth { f_c: mixer_bandwidth };
    let out = readout::synthesize_trace(
        responsivity,
        &bandwidth,
        drive,
        noise,
        homodyne_gain,
        cal,
        duration,
        fs,
        seed,
    )?;
    Ok(out.trace)
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
