//! Serialization: CSV with metadata comment blocks, structured-text
//! records, and the binary time-trace container.
//!
//! Numeric formatting uses the standard shortest-roundtrip float display,
//! so identical inputs always serialize to identical bytes; reruns of a
//! seeded pipeline can be compared file-to-file.

use crate::characterize::CampaignPoint;
use crate::dsp::PowerSpectrum;
use crate::modem::{EVMReport, IQConstellation};
use crate::readout::TimeTrace;
use crate::spectro::SpectrumCurve;
use std::io::{self, BufRead, Write};

const TRACE_MAGIC: &str = "trace-v1";

/// Write `# key = value` metadata lines.
fn write_metadata<W: Write>(w: &mut W, pairs: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in pairs {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

/// Spectrum curve as `frequency_hz,value` CSV with a metadata block.
pub fn write_spectrum_curve_csv<W: Write>(
    w: &mut W,
    curve: &SpectrumCurve,
    extra: &[(&str, String)],
) -> io::Result<()> {
    write_metadata(
        w,
        &[
            ("axis_kind", curve.axis_kind.as_str().to_string()),
            ("n_averages", curve.n_averages.to_string()),
            ("db_scale", curve.db_scale.to_string()),
        ],
    )?;
    write_metadata(w, extra)?;
    writeln!(w, "frequency_hz,value")?;
    for (x, y) in curve.axis.iter().zip(&curve.values) {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

/// Power spectrum as `frequency_hz,power_dbm` CSV with a metadata block.
pub fn write_power_spectrum_csv<W: Write>(
    w: &mut W,
    spectrum: &PowerSpectrum,
    extra: &[(&str, String)],
) -> io::Result<()> {
    write_metadata(
        w,
        &[
            ("rbw_hz", spectrum.rbw.to_string()),
            ("n_averages", spectrum.n_averages.to_string()),
        ],
    )?;
    write_metadata(w, extra)?;
    writeln!(w, "frequency_hz,power_dbm")?;
    for (x, y) in spectrum.axis.iter().zip(&spectrum.values) {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

/// Constellation as CSV. Following the receiver convention, the in-phase
/// column is the imaginary part and the quadrature column the real part.
pub fn write_constellation_csv<W: Write>(
    w: &mut W,
    constellation: &IQConstellation,
    extra: &[(&str, String)],
) -> io::Result<()> {
    write_metadata(
        w,
        &[
            ("symbol_rate_hz", constellation.symbol_rate.to_string()),
            ("beatnote_hz", constellation.beatnote.to_string()),
            ("n_symbols", constellation.measured.len().to_string()),
        ],
    )?;
    write_metadata(w, extra)?;
    writeln!(w, "symbol_index,label,i_meas,q_meas,i_nom,q_nom")?;
    for (k, (m, &label)) in constellation.measured.iter().zip(&constellation.labels).enumerate() {
        let nom = constellation.nominal[label as usize];
        writeln!(w, "{k},{label},{},{},{},{}", m.im, m.re, nom.im, nom.re)?;
    }
    Ok(())
}

/// Campaign sweep as `x,value,stderr` CSV with a metadata block.
pub fn write_campaign_csv<W: Write>(
    w: &mut W,
    points: &[CampaignPoint],
    extra: &[(&str, String)],
) -> io::Result<()> {
    write_metadata(w, extra)?;
    writeln!(w, "x,value,stderr")?;
    for p in points {
        writeln!(w, "{},{},{}", p.x, p.value, p.stderr)?;
    }
    Ok(())
}

/// EVM summary as a structured-text record.
pub fn write_evm_report<W: Write>(w: &mut W, report: &EVMReport) -> io::Result<()> {
    writeln!(w, "evm_rms_percent = {}", report.evm_rms)?;
    writeln!(w, "symbol_rate_hz = {}", report.symbol_rate)?;
    writeln!(w, "beatnote_hz = {}", report.beatnote)?;
    writeln!(w, "n_symbols = {}", report.per_symbol_error.len())?;
    Ok(())
}

/// Binary trace container: a text header terminated by `---`, then raw
/// little-endian 64-bit float samples.
pub fn write_time_trace<W: Write>(w: &mut W, trace: &TimeTrace) -> io::Result<()> {
    writeln!(w, "{TRACE_MAGIC}")?;
    writeln!(w, "sample_rate = {}", trace.sample_rate)?;
    writeln!(w, "duration = {}", trace.duration)?;
    writeln!(w, "seed = {}", trace.seed)?;
    writeln!(w, "samples = {}", trace.samples.len())?;
    writeln!(w, "---")?;
    for s in &trace.samples {
        w.write_all(&s.to_le_bytes())?;
    }
    Ok(())
}

/// Read a trace written by [`write_time_trace`]. Samples round-trip
/// bit-exactly.
pub fn read_time_trace<R: BufRead>(r: &mut R) -> io::Result<TimeTrace> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != TRACE_MAGIC {
        return Err(bad(format!("expected `{TRACE_MAGIC}` header, got `{}`", line.trim_end())));
    }
    let mut sample_rate = None;
    let mut duration = None;
    let mut seed = None;
    let mut count = None;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("header ended before `---`".to_string()));
        }
        let text = line.trim_end();
        if text == "---" {
            break;
        }
        let (key, value) = text
            .split_once(" = ")
            .ok_or_else(|| bad(format!("malformed header line `{text}`")))?;
        match key {
            "sample_rate" => sample_rate = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "duration" => duration = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "samples" => count = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            other => return Err(bad(format!("unknown header key `{other}`"))),
        }
    }
    let sample_rate = sample_rate.ok_or_else(|| bad("missing sample_rate".to_string()))?;
    let duration = duration.ok_or_else(|| bad("missing duration".to_string()))?;
    let seed = seed.ok_or_else(|| bad("missing seed".to_string()))?;
    let count = count.ok_or_else(|| bad("missing samples".to_string()))?;
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TimeTrace { samples, sample_rate, duration, seed })
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
