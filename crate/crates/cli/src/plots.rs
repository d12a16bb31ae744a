//! Plot-script emission. Every subcommand drops a `plot.py` beside its
//! CSVs; the script regenerates the figure from those files alone, so a
//! run directory is self-describing and the binary needs no plotting
//! dependency. Fit constants the figures draw (slopes, corner
//! frequencies) travel as CSV metadata, never get recomputed.
//!
//! Emission validates the CSV headers against the figure's schema, so a
//! stale or foreign CSV fails here with the offending column named
//! instead of producing a script that dies later.

use std::fs;
use std::path::Path;

use crate::errors::CliError;

/// Which figure a run directory renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    Spectrum,
    Calibration,
    Sensitivity,
    NoiseFloors,
    Bandwidth,
    Constellation,
    EvmSweep,
}

impl FigureKind {
    fn label(self) -> &'static str {
        match self {
            FigureKind::Spectrum => "transmission spectrum",
            FigureKind::Calibration => "field calibration",
            FigureKind::Sensitivity => "SNR-vs-power sensitivity",
            FigureKind::NoiseFloors => "noise floors",
            FigureKind::Bandwidth => "sensitivity bandwidth",
            FigureKind::Constellation => "QPSK constellation",
            FigureKind::EvmSweep => "EVM sweep",
        }
    }

    fn body(self) -> &'static str {
        match self {
            FigureKind::Spectrum => SPECTRUM_BODY,
            FigureKind::Calibration => CALIBRATION_BODY,
            FigureKind::Sensitivity => SENSITIVITY_BODY,
            FigureKind::NoiseFloors => NOISE_FLOORS_BODY,
            FigureKind::Bandwidth => BANDWIDTH_BODY,
            FigureKind::Constellation => CONSTELLATION_BODY,
            FigureKind::EvmSweep => EVM_SWEEP_BODY,
        }
    }
}

const CAMPAIGN_COLUMNS: &[&str] = &["x", "value", "stderr"];

fn expected_columns(kind: FigureKind, file: &str) -> &'static [&'static str] {
    match kind {
        FigureKind::Spectrum => &["frequency_hz", "value"],
        FigureKind::Calibration => {
            if file.starts_with("reference_scan") {
                &["raw_axis", "value"]
            } else {
                CAMPAIGN_COLUMNS
            }
        }
        FigureKind::Sensitivity | FigureKind::Bandwidth | FigureKind::EvmSweep => CAMPAIGN_COLUMNS,
        FigureKind::NoiseFloors => &["frequency_hz", "power_dbm"],
        FigureKind::Constellation => {
            if file.starts_with("baseband") {
                &["sample_index", "i", "q"]
            } else {
                &["symbol_index", "label", "i_meas", "q_meas", "i_nom", "q_nom"]
            }
        }
    }
}

/// Validate every CSV against the figure's schema, then write `plot.py`.
/// Returns the script filename. Script content is a pure function of the
/// figure kind, so reruns are byte-identical.
pub fn emit_plot_script(dir: &Path, kind: FigureKind, csvs: &[String]) -> Result<String, CliError> {
    for name in csvs {
        check_schema(dir, name, expected_columns(kind, name))?;
    }
    let script = format!("{}{}", PRELUDE.replace("__FIGURE__", kind.label()), kind.body());
    fs::write(dir.join("plot.py"), script)?;
    Ok("plot.py".to_string())
}

/// A file with no header (fully empty) is allowed: the script renders
/// empty axes. A header that disagrees with the schema is an error naming
/// the first offending column.
fn check_schema(dir: &Path, name: &str, expected: &'static [&'static str]) -> Result<(), CliError> {
    let text = fs::read_to_string(dir.join(name)).map_err(|e| {
        CliError::runtime(format!("cannot read `{name}` for plot emission: {e}"))
    })?;
    let header = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    let Some(header) = header else {
        return Ok(());
    };
    let found: Vec<&str> = header.split(',').map(str::trim).collect();
    for want in expected {
        if !found.contains(want) {
            return Err(CliError::runtime(format!(
                "plot schema mismatch in `{name}`: missing column `{want}` (header: {header})"
            )));
        }
    }
    for have in &found {
        if !expected.contains(have) {
            return Err(CliError::runtime(format!(
                "plot schema mismatch in `{name}`: unexpected column `{have}`"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// script templates
// ---------------------------------------------------------------------------

const PRELUDE: &str = r##"#!/usr/bin/env python3
"""Regenerate the __FIGURE__ figure from the CSVs in this directory.

Everything is read from the CSV payloads and their `# key = value`
metadata lines; nothing is recomputed. Empty CSVs render empty axes.
"""
import glob
import math
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read_csv(name):
    """Return (metadata dict, list of row dicts); ({}, []) if empty."""
    meta, header, rows = {}, None, []
    with open(os.path.join(HERE, name)) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    key, value = line[1:].split("=", 1)
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            rows.append(dict(zip(header, line.split(","))))
    return meta, rows


def col(rows, name, into=float):
    return [into(r[name]) for r in rows]


def save(fig, name):
    path = os.path.join(HERE, name)
    fig.savefig(path, dpi=160, bbox_inches="tight")
    print(path)


"##;

const SPECTRUM_BODY: &str = r##"meta_ref, ref_rows = read_csv("spectrum_reference.csv")
meta_at, at_rows = read_csv("spectrum_at.csv")
fig, ax = plt.subplots(figsize=(7.0, 4.5))
if ref_rows:
    ax.plot([x / 1e6 for x in col(ref_rows, "frequency_hz")], col(ref_rows, "value"),
            color="0.45", ls="--", lw=1.0, label="RF off")
if at_rows:
    label = "RF on"
    if "rf_rabi_hz" in meta_at:
        label = "RF on ($\\Omega_{RF}/2\\pi$ = %.1f MHz)" % (float(meta_at["rf_rabi_hz"]) / 1e6)
    ax.plot([x / 1e6 for x in col(at_rows, "frequency_hz")], col(at_rows, "value"),
            color="C3", lw=1.0, label=label)
if ref_rows or at_rows:
    ax.legend(loc="upper left", fontsize=8)
ax.set_xlabel("Coupling detuning (MHz)")
ax.set_ylabel("Probe transmission")
save(fig, "spectrum.png")
"##;

const CALIBRATION_BODY: &str = r##"meta_split, splits = read_csv("at_splittings.csv")
meta_fit, fit_rows = read_csv("calibration_fit.csv")
meta_scan, scan = read_csv("reference_scan.csv")
fig, (ax1, ax2, ax3) = plt.subplots(1, 3, figsize=(14.0, 4.2))
if splits:
    ax1.errorbar(col(splits, "x"), [v / 1e6 for v in col(splits, "value")],
                 yerr=[v / 1e6 for v in col(splits, "stderr")],
                 fmt="o", ms=4, capsize=3, color="C0")
ax1.set_xlabel("RF signal power (dBm)")
ax1.set_ylabel("Autler-Townes splitting (MHz)")
if fit_rows:
    xs = col(fit_rows, "x")
    ax2.plot(xs, col(fit_rows, "value"), "o", ms=4, color="C0", label="measured field")
    if "c_cal_v_per_m_per_sqrt_mw" in meta_fit:
        c = float(meta_fit["c_cal_v_per_m_per_sqrt_mw"])
        grid = [max(xs) * i / 200.0 for i in range(201)]
        note = "fit: %.3f V/m per $\\sqrt{mW}$" % c
        if "r_squared" in meta_fit:
            note += ", $r^2$ = %.4f" % float(meta_fit["r_squared"])
        ax2.plot(grid, [c * x for x in grid], color="C3", lw=1.0, label=note)
    ax2.legend(loc="upper left", fontsize=8)
ax2.set_xlabel("$\\sqrt{P}$ ($\\sqrt{mW}$)")
ax2.set_ylabel("RF field (V/m)")
if scan:
    scale = float(meta_scan.get("axis_scale_hz_per_unit", "1"))
    ax3.plot([x * scale / 1e6 for x in col(scan, "raw_axis")], col(scan, "value"),
             color="0.3", lw=1.0)
    ax3.set_title("axis scale %.3e Hz/unit" % scale, fontsize=9)
ax3.set_xlabel("Calibrated detuning (MHz)")
ax3.set_ylabel("Probe transmission")
fig.tight_layout()
save(fig, "calibration.png")
"##;

const SENSITIVITY_BODY: &str = r##"meta, rows = read_csv("snr_vs_power.csv")
fig, ax = plt.subplots(figsize=(6.5, 4.5))
if rows:
    xs = col(rows, "x")
    ax.errorbar(xs, col(rows, "value"), yerr=col(rows, "stderr"),
                fmt="o", ms=4, capsize=3, color="C0", label="measured SNR")
    if "fit_slope_db_per_db" in meta and "fit_intercept_db" in meta:
        slope = float(meta["fit_slope_db_per_db"])
        intercept = float(meta["fit_intercept_db"])
        x0 = -intercept / slope
        grid = [x0 + (max(xs) - x0) * i / 200.0 for i in range(201)]
        ax.plot(grid, [slope * x + intercept for x in grid],
                color="C3", lw=1.0, label="linear fit")
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.legend(loc="upper left", fontsize=8)
ax.set_xlabel("RF signal power (dBm)")
ax.set_ylabel("SNR (dB)")
if "beatnote_hz" in meta:
    ax.set_title("beatnote %.0f kHz, RBW %s Hz"
                 % (float(meta["beatnote_hz"]) / 1e3, meta.get("rbw_hz", "?")), fontsize=9)
save(fig, "sensitivity.png")
"##;

const NOISE_FLOORS_BODY: &str = r##"fig, ax = plt.subplots(figsize=(7.0, 4.5))
plotted = False
for path in sorted(glob.glob(os.path.join(HERE, "noise_floor_*.csv"))):
    meta, rows = read_csv(os.path.basename(path))
    if not rows:
        continue
    rbw = float(meta.get("rbw_hz", "1"))
    pts = [(x, y - 10.0 * math.log10(rbw))
           for x, y in zip(col(rows, "frequency_hz"), col(rows, "power_dbm")) if x > 0]
    ax.semilogx([p[0] for p in pts], [p[1] for p in pts], lw=0.9,
                label=meta.get("variant", os.path.basename(path)))
    plotted = True
if plotted:
    ax.legend(loc="upper right", fontsize=8)
ax.set_xlabel("Frequency (Hz)")
ax.set_ylabel("Noise PSD (dBm/Hz)")
save(fig, "noise_floors.png")
"##;

const BANDWIDTH_BODY: &str = r##"meta, rows = read_csv("sensitivity_vs_beatnote.csv")
fig, ax = plt.subplots(figsize=(7.0, 4.5))
if rows:
    xs = col(rows, "x")
    ys = [v * 1e6 for v in col(rows, "value")]
    es = [v * 1e6 for v in col(rows, "stderr")]
    ax.errorbar(xs, ys, yerr=es, fmt="o-", ms=4, lw=0.9, capsize=3, color="C0")
    ax.set_xscale("log")
    if "s_low_v_per_m_sqrt_hz" in meta:
        s_low = 1e6 * float(meta["s_low_v_per_m_sqrt_hz"])
        ax.axhline(2.0 * s_low, color="0.6", ls="--", lw=0.9,
                   label="2 x low-frequency sensitivity")
    if "f_3db_hz" in meta:
        f3 = float(meta["f_3db_hz"])
        ax.axvline(f3, color="C3", ls=":", lw=1.0,
                   label="doubling at %.2f MHz" % (f3 / 1e6))
    ax.legend(loc="upper left", fontsize=8)
    inset = [(x, y, e) for x, y, e in zip(xs, ys, es) if 1e6 <= x <= 1e7]
    if inset:
        axin = ax.inset_axes([0.55, 0.08, 0.42, 0.38])
        axin.errorbar([p[0] / 1e6 for p in inset], [p[1] for p in inset],
                      yerr=[p[2] for p in inset], fmt="o-", ms=3, lw=0.8,
                      capsize=2, color="C0")
        axin.set_xlim(1, 10)
        axin.set_xlabel("Beatnote (MHz)", fontsize=8)
        axin.tick_params(labelsize=8)
ax.set_xlabel("Beatnote (Hz)")
ax.set_ylabel("Sensitivity ($\\mu$V m$^{-1}$ Hz$^{-1/2}$)")
save(fig, "bandwidth.png")
"##;

const CONSTELLATION_BODY: &str = r##"meta, rows = read_csv("constellation.csv")
meta_bb, bb = read_csv("baseband.csv")
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11.0, 4.6))
colors = ["C0", "C1", "C2", "C3"]
if rows:
    for s in range(4):
        pts = [r for r in rows if int(r["label"]) == s]
        if pts:
            ax1.scatter(col(pts, "i_meas"), col(pts, "q_meas"), s=8,
                        color=colors[s], label="symbol %d" % s)
    seen = set()
    for r in rows:
        key = (r["i_nom"], r["q_nom"])
        if key in seen:
            continue
        seen.add(key)
        ax1.scatter([float(r["i_nom"])], [float(r["q_nom"])], s=130,
                    facecolors="none", edgecolors="black", lw=1.2)
    if "evm_rms_percent" in meta:
        ax1.set_title("EVM = %.2f %%" % float(meta["evm_rms_percent"]), fontsize=9)
    ax1.legend(loc="upper right", fontsize=7)
ax1.set_xlabel("I")
ax1.set_ylabel("Q")
ax1.set_aspect("equal", adjustable="datalim")
if bb:
    fs = float(meta_bb.get("sample_rate_hz", "1"))
    t = [i / fs * 1e3 for i in col(bb, "sample_index")]
    ax2.plot(t, col(bb, "i"), lw=0.7, label="I")
    ax2.plot(t, col(bb, "q"), lw=0.7, label="Q")
    ax2.legend(loc="upper right", fontsize=8)
ax2.set_xlabel("Time (ms)")
ax2.set_ylabel("Filtered baseband (V)")
fig.tight_layout()
save(fig, "constellation.png")
"##;

const EVM_SWEEP_BODY: &str = r##"meta, rows = read_csv("evm.csv")
fig, ax = plt.subplots(figsize=(6.5, 4.5))
if rows:
    ax.errorbar(col(rows, "x"), col(rows, "value"), yerr=col(rows, "stderr"),
                fmt="o-", ms=4, lw=0.9, capsize=3, color="C0")
    ax.set_xscale("log")
axis = meta.get("axis", "")
ax.set_xlabel("Beatnote (Hz)" if axis == "beatnotes" else "Symbol rate (Hz)")
ax.set_ylabel("EVM (%)")
title = []
if "channel" in meta:
    title.append("%s channel" % meta["channel"])
if "symbol_rate_hz" in meta:
    title.append("symbol rate %.0f kHz" % (float(meta["symbol_rate_hz"]) / 1e3))
if "beatnote_hz" in meta:
    title.append("beatnote %.2f MHz" % (float(meta["beatnote_hz"]) / 1e6))
if title:
    ax.set_title(", ".join(title), fontsize=9)
save(fig, "evm_sweep.png")
"##;

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_mismatch_names_the_offending_column() {
        let dir = tempfile::tempdir().expect("tempdir");
        fs::write(dir.path().join("evm.csv"), "# axis = beatnotes\nx,value\n1,2\n").unwrap();
        let err = emit_plot_script(dir.path(), FigureKind::EvmSweep, &["evm.csv".to_string()])
            .expect_err("missing stderr column must be rejected");
        let msg = err.to_string();
        assert!(msg.contains("stderr"), "error should name the missing column: {msg}");
        assert!(msg.contains("evm.csv"), "error should name the file: {msg}");
    }

    #[test]
    fn unexpected_column_is_also_named() {
        let dir = tempfile::tempdir().expect("tempdir");
        fs::write(dir.path().join("snr_vs_power.csv"), "x,value,stderr,extra\n").unwrap();
        let err = emit_plot_script(
            dir.path(),
            FigureKind::Sensitivity,
            &["snr_vs_power.csv".to_string()],
        )
        .expect_err("extra column must be rejected");
        assert!(err.to_string().contains("extra"), "error should name the column: {err}");
    }

    #[test]
    fn empty_csv_is_accepted_and_script_is_deterministic() {
        let dir = tempfile::tempdir().expect("tempdir");
        fs::write(dir.path().join("spectrum_reference.csv"), "").unwrap();
        fs::write(dir.path().join("spectrum_at.csv"), "# n_averages = 1\n").unwrap();
        let csvs = vec!["spectrum_reference.csv".to_string(), "spectrum_at.csv".to_string()];
        let name = emit_plot_script(dir.path(), FigureKind::Spectrum, &csvs)
            .expect("empty CSVs render empty axes, not an error");
        let first = fs::read(dir.path().join(&name)).unwrap();
        emit_plot_script(dir.path(), FigureKind::Spectrum, &csvs).unwrap();
        let second = fs::read(dir.path().join(&name)).unwrap();
        assert_eq!(first, second, "plot script must be byte-identical across emissions");
        let text = String::from_utf8(first).unwrap();
        assert!(text.contains("read_csv"), "script must carry its own CSV reader");
        assert!(text.starts_with("#!/usr/bin/env python3"));
    }

    #[test]
    fn per_file_schemas_distinguish_constellation_artifacts() {
        let dir = tempfile::tempdir().expect("tempdir");
        fs::write(
            dir.path().join("constellation.csv"),
            "symbol_index,label,i_meas,q_meas,i_nom,q_nom\n",
        )
        .unwrap();
        fs::write(dir.path().join("baseband.csv"), "sample_index,i,q\n").unwrap();
        emit_plot_script(
            dir.path(),
            FigureKind::Constellation,
            &["constellation.csv".to_string(), "baseband.csv".to_string()],
        )
        .expect("both constellation schemas must validate");
    }
}
