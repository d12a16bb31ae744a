//! Subcommand runners. Each builds one run directory under
//! `<out_dir>/<subcommand>/` containing CSV artifacts (written through
//! the core io module so schemas stay in one place), a manifest with the
//! headline numbers and the complete effective config, and a plot script.
//!
//! All randomness flows from the scenario master seed through per-command
//! tags, so a rerun with the same config reproduces every CSV byte for
//! byte; only the manifest timestamp moves.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use toml::value::{Table, Value};

use rydsim_core::characterize::{
    at_calibration_campaign, calibrate_ccal, calibrate_frequency_axis, evm_campaign,
    evm_doubling_frequency, extract_bandwidth, fit_double_gaussian, mean_and_std, plan_capture,
    plan_modem_fs, sensitivity_from_sweep, sensitivity_vs_beatnote, CampaignPoint, Channel,
    EvmSweep, Scenario,
};
use rydsim_core::dsp;
use rydsim_core::io as core_io;
use rydsim_core::modem::{self, SymbolSource};
use rydsim_core::readout::{synthesize_trace, Modulation, NoiseModel, RFDrive, TimeTrace};
use rydsim_core::seed::derive_seed;
use rydsim_core::spectro::{
    consts::HBAR, field_to_splitting, transmission_spectrum, AxisKind, SpectrumCurve,
};

use crate::config::{EvmAxis, ScenarioConfig};
use crate::errors::CliError;
use crate::manifest::{self, MANIFEST_NAME};
use crate::plots::{emit_plot_script, FigureKind};

// Seed tags for CLI-level captures, distinct from the core campaign tags
// so a CLI artifact never aliases a library campaign's noise stream.
const TAG_SNR_SWEEP: u64 = 0x636c_6901;
const TAG_NOISE_FLOOR: u64 = 0x636c_6902;
const TAG_CONSTELLATION: u64 = 0x636c_6903;
const TAG_EVM_SEEDS: u64 = 0x636c_6904;

// ---------------------------------------------------------------------------
// run directory plumbing
// ---------------------------------------------------------------------------

struct OutDir {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl OutDir {
    fn create(config: &ScenarioConfig, subcommand: &str) -> Result<Self, CliError> {
        let dir = PathBuf::from(&config.out_dir).join(subcommand);
        fs::create_dir_all(&dir)?;
        Ok(OutDir { dir, artifacts: Vec::new() })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let file = File::create(self.dir.join(name))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    /// Emit the plot script over every CSV written so far, then the
    /// manifest listing all artifacts.
    fn finish(
        mut self,
        subcommand: &str,
        kind: FigureKind,
        config: &ScenarioConfig,
        results: Table,
    ) -> Result<(), CliError> {
        let csvs: Vec<String> =
            self.artifacts.iter().filter(|a| a.ends_with(".csv")).cloned().collect();
        let script = emit_plot_script(&self.dir, kind, &csvs)?;
        self.artifacts.push(script);
        self.artifacts.push(MANIFEST_NAME.to_string());
        manifest::write_manifest(&self.dir, subcommand, config, results, &self.artifacts)
    }
}

fn ensure(condition: bool, field: &str, message: impl Into<String>) -> Result<(), CliError> {
    if condition {
        Ok(())
    } else {
        Err(CliError::validation(field, message))
    }
}

fn put_f64(table: &mut Table, key: &str, value: f64) {
    table.insert(key.to_string(), Value::Float(value));
}

fn put_int(table: &mut Table, key: &str, value: usize) {
    table.insert(key.to_string(), Value::Integer(value as i64));
}

fn put_str(table: &mut Table, key: &str, value: impl Into<String>) {
    table.insert(key.to_string(), Value::String(value.into()));
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("spectra contain no NaN"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// The scenario's RF drive at a given signal power and beatnote.
fn drive(scenario: &Scenario, sig_power_dbm: f64, f_b: f64, modulation: Option<Modulation>) -> RFDrive {
    RFDrive {
        lo_power: scenario.lo_power_dbm,
        sig_power: sig_power_dbm,
        f_lo: scenario.f_lo,
        f_sig: scenario.f_lo + f_b,
        modulation,
    }
}

fn channel_name(channel: Channel) -> &'static str {
    match channel {
        Channel::Atomic => "atomic",
        Channel::Mixer => "mixer",
    }
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

/// Reference (RF off) and RF-driven transmission scans over coupling
/// detuning, both with the fine-structure companion included.
pub fn spectrum(config: &ScenarioConfig, scenario: &Scenario) -> Result<(), CliError> {
    let sweep = &config.sweep;
    ensure(sweep.scan_points >= 2, "sweep.scan_points", "need at least 2 scan points")?;
    ensure(
        sweep.scan_half_span_hz > 0.0 && sweep.scan_half_span_hz.is_finite(),
        "sweep.scan_half_span_hz",
        "must be finite and > 0",
    )?;
    let scan = linspace(-sweep.scan_half_span_hz, sweep.scan_half_span_hz, sweep.scan_points);

    let mut reference = scenario.system.clone();
    reference.omega_rf = 0.0;
    reference.delta_rf = 0.0;
    let reference_curve = transmission_spectrum(&reference, &scan, true)?;

    let lo_field = scenario.lo_field();
    let omega_rf = scenario.dipole_moment * lo_field / HBAR;
    let mut driven = scenario.system.clone();
    driven.omega_rf = omega_rf;
    driven.delta_rf = 0.0;
    let at_curve = transmission_spectrum(&driven, &scan, true)?;

    let mut out = OutDir::create(config, "spectrum")?;
    {
        let mut w = out.file("spectrum_reference.csv")?;
        core_io::write_spectrum_curve_csv(
            &mut w,
            &reference_curve,
            &[("rf_rabi_hz", "0".to_string())],
        )?;
        w.flush()?;
    }
    {
        let mut w = out.file("spectrum_at.csv")?;
        core_io::write_spectrum_curve_csv(
            &mut w,
            &at_curve,
            &[
                ("rf_rabi_hz", (omega_rf / std::f64::consts::TAU).to_string()),
                ("lo_field_v_per_m", lo_field.to_string()),
            ],
        )?;
        w.flush()?;
    }

    let mut results = Table::new();
    put_f64(&mut results, "lo_field_v_per_m", lo_field);
    put_f64(&mut results, "rf_rabi_hz", omega_rf / std::f64::consts::TAU);
    put_f64(
        &mut results,
        "predicted_splitting_hz",
        field_to_splitting(lo_field, scenario.dipole_moment)?,
    );
    // Best-effort splitting readback from a companion-free copy of the
    // driven scan; the figure is still valid when the doublet is not
    // resolvable at this span.
    if let Ok(clean) = transmission_spectrum(&driven, &scan, false) {
        if let Ok(fit) = fit_double_gaussian(&clean) {
            put_f64(&mut results, "fitted_splitting_hz", fit.splitting);
            put_f64(&mut results, "fitted_splitting_stderr_hz", fit.stderr);
        }
    }
    out.finish("spectrum", FigureKind::Spectrum, config, results)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Field-calibration campaign: Autler-Townes splittings over RF power,
/// the through-origin field-vs-root-power fit, and the frequency-axis
/// scale recovered from the fine-structure companion.
pub fn calibrate(config: &ScenarioConfig, scenario: &Scenario) -> Result<(), CliError> {
    let sweep = &config.sweep;
    ensure(
        sweep.at_powers_dbm.len() >= 3,
        "sweep.at_powers_dbm",
        format!("need at least 3 powers for the fit, got {}", sweep.at_powers_dbm.len()),
    )?;
    ensure(
        sweep.raw_axis_units_per_hz > 0.0 && sweep.raw_axis_units_per_hz.is_finite(),
        "sweep.raw_axis_units_per_hz",
        "must be finite and > 0",
    )?;
    ensure(sweep.scan_points >= 2, "sweep.scan_points", "need at least 2 scan points")?;

    let measurements = at_calibration_campaign(scenario, &sweep.at_powers_dbm)?;
    let pairs: Vec<(f64, f64)> =
        measurements.iter().map(|m| (m.power_dbm, m.splitting_hz)).collect();
    let stderrs: Vec<f64> = measurements.iter().map(|m| m.stderr_hz).collect();
    let fit = calibrate_ccal(&pairs, Some(&stderrs), scenario.dipole_moment)?;

    // Frequency-axis calibration: the same reference scan an instrument
    // would log in raw ramp units, rescaled off the 92 MHz companion.
    let scan = linspace(-sweep.scan_half_span_hz, sweep.scan_half_span_hz, sweep.scan_points);
    let mut reference = scenario.system.clone();
    reference.omega_rf = 0.0;
    reference.delta_rf = 0.0;
    let curve = transmission_spectrum(&reference, &scan, true)?;
    let raw_axis: Vec<f64> = scan.iter().map(|&f| f * sweep.raw_axis_units_per_hz).collect();
    let raw_curve = SpectrumCurve::new(
        raw_axis.clone(),
        curve.values.clone(),
        AxisKind::CouplingDetuning,
        1,
        false,
    )?;
    let axis_scale = calibrate_frequency_axis(&raw_curve)?;

    let mut out = OutDir::create(config, "calibrate")?;
    {
        let points: Vec<CampaignPoint> = measurements
            .iter()
            .map(|m| CampaignPoint { x: m.power_dbm, value: m.splitting_hz, stderr: m.stderr_hz })
            .collect();
        let mut w = out.file("at_splittings.csv")?;
        core_io::write_campaign_csv(
            &mut w,
            &points,
            &[
                ("x_unit", "dBm".to_string()),
                ("value_unit", "Hz".to_string()),
                ("n_traces", scenario.n_traces.to_string()),
            ],
        )?;
        w.flush()?;
    }
    {
        let points: Vec<CampaignPoint> =
            fit.points.iter().map(|&(x, e)| CampaignPoint { x, value: e, stderr: 0.0 }).collect();
        let mut w = out.file("calibration_fit.csv")?;
        core_io::write_campaign_csv(
            &mut w,
            &points,
            &[
                ("c_cal_v_per_m_per_sqrt_mw", fit.c_cal.to_string()),
                ("slope_stderr", fit.slope_stderr.to_string()),
                ("r_squared", fit.r_squared.to_string()),
            ],
        )?;
        w.flush()?;
    }
    {
        let mut w = out.file("reference_scan.csv")?;
        writeln!(w, "# axis_scale_hz_per_unit = {axis_scale}")?;
        writeln!(w, "# n_averages = 1")?;
        writeln!(w, "raw_axis,value")?;
        for (x, v) in raw_axis.iter().zip(&curve.values) {
            writeln!(w, "{x},{v}")?;
        }
        w.flush()?;
    }

    let mut results = Table::new();
    put_f64(&mut results, "c_cal_v_per_m_per_sqrt_mw", fit.c_cal);
    put_f64(&mut results, "c_cal_stderr", fit.slope_stderr);
    put_f64(&mut results, "r_squared", fit.r_squared);
    put_f64(&mut results, "axis_scale_hz_per_unit", axis_scale);
    put_int(&mut results, "n_powers", measurements.len());
    out.finish("calibrate", FigureKind::Calibration, config, results)
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

/// SNR-vs-power sweep at the anchor beatnote. The CSV carries the mean
/// SNR per power with rep-to-rep error bars; the headline sensitivity is
/// the fit of those mean points, its error bar the spread of per-rep fits.
pub fn sensitivity(config: &ScenarioConfig, scenario: &Scenario) -> Result<(), CliError> {
    let f_b = config.sweep.beatnote_hz;
    ensure(f_b > 0.0 && f_b.is_finite(), "sweep.beatnote_hz", "must be finite and > 0")?;

    let responsivity = scenario.responsivity()?;
    let bandwidth = scenario.bandwidth()?;
    let (fs, n) = plan_capture(f_b, scenario.rbw, scenario.min_sample_rate)?;
    let duration = n as f64 / fs;

    let n_powers = scenario.sig_powers_dbm.len();
    let mut per_power: Vec<Vec<f64>> = vec![Vec::new(); n_powers];
    let mut rep_sensitivities = Vec::with_capacity(scenario.n_repetitions);
    for rep in 0..scenario.n_repetitions {
        let mut sweep_points = Vec::with_capacity(n_powers);
        for (pi, &p_dbm) in scenario.sig_powers_dbm.iter().enumerate() {
            let tone = drive(scenario, p_dbm, f_b, None);
            let mut traces = Vec::with_capacity(scenario.n_traces);
            for k in 0..scenario.n_traces {
                let seed = derive_seed(
                    scenario.master_seed,
                    &[TAG_SNR_SWEEP, rep as u64, pi as u64, k as u64],
                );
                traces.push(
                    synthesize_trace(
                        responsivity,
                        &bandwidth,
                        &tone,
                        &scenario.noise,
                        scenario.homodyne_gain,
                        scenario.c_cal,
                        duration,
                        fs,
                        seed,
                    )?
                    .trace,
                );
            }
            let spectrum = dsp::periodogram(&traces, scenario.rbw)?;
            let est = dsp::snr_at(&spectrum, f_b, 5.0 * spectrum.rbw)?;
            if !est.no_signal {
                sweep_points.push((p_dbm, est.snr_db));
                per_power[pi].push(est.snr_db);
            }
        }
        rep_sensitivities
            .push(sensitivity_from_sweep(&sweep_points, scenario.rbw, scenario.c_cal)?.sensitivity);
    }

    let mut points = Vec::new();
    let mut mean_points = Vec::new();
    for (pi, &p_dbm) in scenario.sig_powers_dbm.iter().enumerate() {
        if per_power[pi].is_empty() {
            continue;
        }
        let (mean, std) = mean_and_std(&per_power[pi]);
        points.push(CampaignPoint { x: p_dbm, value: mean, stderr: std });
        mean_points.push((p_dbm, mean));
    }
    let fit = sensitivity_from_sweep(&mean_points, scenario.rbw, scenario.c_cal)?;
    let (_, rep_spread) = mean_and_std(&rep_sensitivities);

    let mut out = OutDir::create(config, "sensitivity")?;
    {
        let mut w = out.file("snr_vs_power.csv")?;
        core_io::write_campaign_csv(
            &mut w,
            &points,
            &[
                ("beatnote_hz", f_b.to_string()),
                ("rbw_hz", scenario.rbw.to_string()),
                ("fit_slope_db_per_db", fit.fit_slope.to_string()),
                ("fit_intercept_db", fit.fit_intercept.to_string()),
            ],
        )?;
        w.flush()?;
    }

    let mut results = Table::new();
    put_f64(&mut results, "sensitivity_v_per_m_sqrt_hz", fit.sensitivity);
    put_f64(&mut results, "sensitivity_stderr", rep_spread);
    put_f64(&mut results, "fit_slope_db_per_db", fit.fit_slope);
    put_f64(&mut results, "fit_intercept_db", fit.fit_intercept);
    put_f64(&mut results, "extrapolated_floor_dbm", fit.extrapolated_floor_power);
    put_f64(&mut results, "beatnote_hz", f_b);
    put_f64(&mut results, "rbw_hz", scenario.rbw);
    out.finish("sensitivity", FigureKind::Sensitivity, config, results)
}

// ---------------------------------------------------------------------------
// noise-floors
// ---------------------------------------------------------------------------

/// Noise-only captures for the full model and each enabled term in
/// isolation, as averaged spectra. The signal path is disabled by setting
/// the conversion gain to zero rather than the drive power to -inf, which
/// the drive validator rejects.
pub fn noise_floors(config: &ScenarioConfig, scenario: &Scenario) -> Result<(), CliError> {
    let sweep = &config.sweep;
    ensure(
        sweep.floor_span_hz > 0.0 && sweep.floor_span_hz.is_finite(),
        "sweep.floor_span_hz",
        "must be finite and > 0",
    )?;
    ensure(
        sweep.floor_rbw_hz > 0.0 && sweep.floor_rbw_hz.is_finite(),
        "sweep.floor_rbw_hz",
        "must be finite and > 0",
    )?;
    ensure(sweep.floor_traces >= 1, "sweep.floor_traces", "need at least one trace")?;

    let base = &scenario.noise;
    let mut variants: Vec<(&'static str, NoiseModel)> = vec![("full", base.clone())];
    variants.push((
        "white-only",
        NoiseModel { one_over_f_corner: 0.0, ..base.clone() },
    ));
    if base.shot_coefficient.is_finite() {
        variants.push((
            "shot-only",
            NoiseModel {
                white_psd: f64::NEG_INFINITY,
                one_over_f_corner: 0.0,
                detector_floor: f64::NEG_INFINITY,
                ..base.clone()
            },
        ));
    }
    if base.detector_floor.is_finite() {
        variants.push((
            "detector-only",
            NoiseModel {
                white_psd: f64::NEG_INFINITY,
                one_over_f_corner: 0.0,
                shot_coefficient: f64::NEG_INFINITY,
                ..base.clone()
            },
        ));
    }

    let fs = 2.5 * sweep.floor_span_hz;
    let mut n = (1.5 * fs / sweep.floor_rbw_hz).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    ensure(n >= 16, "sweep.floor_rbw_hz", "rbw too coarse for the requested span")?;
    let duration = n as f64 / fs;
    let bandwidth = scenario.bandwidth()?;
    // Harmless placeholder tone: zero responsivity removes the signal path.
    let quiet_drive = drive(scenario, -100.0, 1e3, None);

    let mut out = OutDir::create(config, "noise-floors")?;
    let mut results = Table::new();
    for (vi, (name, noise)) in variants.iter().enumerate() {
        let mut traces = Vec::with_capacity(sweep.floor_traces);
        for k in 0..sweep.floor_traces {
            let seed =
                derive_seed(scenario.master_seed, &[TAG_NOISE_FLOOR, vi as u64, k as u64]);
            traces.push(
                synthesize_trace(
                    0.0,
                    &bandwidth,
                    &quiet_drive,
                    noise,
                    scenario.homodyne_gain,
                    scenario.c_cal,
                    duration,
                    fs,
                    seed,
                )?
                .trace,
            );
        }
        let spectrum = dsp::periodogram(&traces, sweep.floor_rbw_hz)?;
        // Level readback away from the 1/f corner: median density over the
        // top half of the displayed span.
        let window: Vec<f64> = spectrum
            .axis
            .iter()
            .zip(&spectrum.values)
            .filter(|&(&f, _)| f >= 0.5 * sweep.floor_span_hz && f <= sweep.floor_span_hz)
            .map(|(_, &v)| v)
            .collect();
        let floor_dbm_per_hz = median(window) - 10.0 * spectrum.rbw.log10();
        put_f64(&mut results, &format!("{name}_floor_dbm_per_hz"), floor_dbm_per_hz);

        let mut w = out.file(&format!("noise_floor_{name}.csv"))?;
        core_io::write_power_spectrum_csv(
            &mut w,
            &spectrum,
            &[("variant", name.to_string()), ("n_traces", sweep.floor_traces.to_string())],
        )?;
        w.flush()?;
    }
    put_f64(&mut results, "span_hz", sweep.floor_span_hz);
    put_f64(&mut results, "rbw_hz", sweep.floor_rbw_hz);
    out.finish("noise-floors", FigureKind::NoiseFloors, config, results)
}

// ---------------------------------------------------------------------------
// bandwidth
// ---------------------------------------------------------------------------

/// Sensitivity versus beatnote over the wideband grid, with the doubling
/// bandwidth extracted. Wideband points use the coarser sweep rbw and the
/// hotter power ladder so every per-point fit stays in its linear window.
pub fn bandwidth(config: &ScenarioConfig, scenario: &Scenario) -> Result<(), CliError> {
    let sweep = &config.sweep;
    ensure(
        sweep.bandwidth_beatnotes_hz.len() >= 2,
        "sweep.bandwidth_beatnotes_hz",
        format!("need at least 2 beatnotes, got {}", sweep.bandwidth_beatnotes_hz.len()),
    )?;

    let mut wide = scenario.clone();
    wide.rbw = sweep.bandwidth_rbw_hz;
    wide.sig_powers_dbm = sweep.bandwidth_sig_powers_dbm.clone();
    wide.n_traces = sweep.bandwidth_n_traces;
    wide.n_repetitions = sweep.bandwidth_n_repetitions;
    wide.validate().map_err(|e| match CliError::from(e) {
        // The wideband overrides live under [sweep], not [readout].
        CliError::Validation { field, message } if field == "readout.rbw_hz" => {
            CliError::validation("sweep.bandwidth_rbw_hz", message)
        }
        other => other,
    })?;

    let curve = sensitivity_vs_beatnote(&wide, &sweep.bandwidth_beatnotes_hz)?;
    let band = extract_bandwidth(&curve)?;

    let mut out = OutDir::create(config, "bandwidth")?;
    {
        let points: Vec<CampaignPoint> = curve
            .iter()
            .map(|r| CampaignPoint { x: r.beatnote, value: r.sensitivity, stderr: r.stderr })
            .collect();
        let mut w = out.file("sensitivity_vs_beatnote.csv")?;
        core_io::write_campaign_csv(
            &mut w,
            &points,
            &[
                ("rbw_hz", wide.rbw.to_string()),
                ("s_low_v_per_m_sqrt_hz", band.s_low.to_string()),
                ("f_3db_hz", band.f_3db.to_string()),
                ("f_amp3db_hz", band.f_amp3db.to_string()),
            ],
        )?;
        w.flush()?;
    }

    let mut results = Table::new();
    put_f64(&mut results, "f_3db_hz", band.f_3db);
    put_f64(&mut results, "f_amp3db_hz", band.f_amp3db);
    put_f64(&mut results, "s_low_v_per_m_sqrt_hz", band.s_low);
    put_f64(&mut results, "sensor_corner_hz", scenario.bandwidth()?.f_c);
    put_f64(&mut results, "rbw_hz", wide.rbw);
    out.finish("bandwidth", FigureKind::Bandwidth, config, results)
}

// ---------------------------------------------------------------------------
// constellation
// ---------------------------------------------------------------------------

/// One QPSK capture through the atomic channel: demodulated
/// constellation with EVM, plus the filtered complex baseband the
/// receiver actually slices. I is the imaginary mixer output and Q the
/// real one, matching the demodulator's convention.
pub fn constellation(config: &ScenarioConfig, scenario: &Scenario) -> Result<(), CliError> {
    let rate = config.modem.symbol_rate_hz;
    let f_b = config.modem.beatnote_hz;
    ensure(
        f_b >= 2.5 * rate,
        "modem.beatnote_hz",
        format!("beatnote {f_b} Hz must be at least 2.5 x the symbol rate {rate} Hz"),
    )?;
    ensure(
        config.modem.lowpass_cutoff_factor > 0.0 && config.modem.lowpass_cutoff_factor.is_finite(),
        "modem.lowpass_cutoff_factor",
        "must be finite and > 0",
    )?;

    let stream = modem::generate_symbols(scenario.symbol_count, rate, SymbolSource::Prbs9)?;
    let fs = plan_modem_fs(f_b, rate);
    let wave = modem::qpsk_modulate(&stream, f_b, fs)?;
    let duration = scenario.symbol_count as f64 / rate;
    let rf = drive(
        scenario,
        scenario.modem_sig_power_dbm,
        f_b,
        Some(Modulation { envelope: wave.envelope, sample_rate: fs }),
    );
    let responsivity = scenario.responsivity()?;
    let bandwidth = scenario.bandwidth()?;

    let mut avg: Option<TimeTrace> = None;
    for k in 0..scenario.n_traces {
        let seed = derive_seed(scenario.master_seed, &[TAG_CONSTELLATION, k as u64]);
        let trace = synthesize_trace(
            responsivity,
            &bandwidth,
            &rf,
            &scenario.noise,
            scenario.homodyne_gain,
            scenario.c_cal,
            duration,
            fs,
            seed,
        )?
        .trace;
        match &mut avg {
            None => avg = Some(trace),
            Some(acc) => {
                for (a, s) in acc.samples.iter_mut().zip(&trace.samples) {
                    *a += *s;
                }
            }
        }
    }
    let mut trace = avg.expect("n_traces >= 1 by validation");
    let inverse = 1.0 / scenario.n_traces as f64;
    for s in trace.samples.iter_mut() {
        *s *= inverse;
    }

    let points = modem::demodulate(&trace, f_b, &stream)?;
    let report = modem::evm(&points)?;
    let cutoff = config.modem.lowpass_cutoff_factor * rate;
    let baseband = dsp::brickwall_lowpass(&dsp::mix_to_baseband(&trace, f_b)?, cutoff)?;

    let mut out = OutDir::create(config, "constellation")?;
    {
        let mut w = out.file("constellation.csv")?;
        core_io::write_constellation_csv(
            &mut w,
            &points,
            &[
                ("channel", "atomic".to_string()),
                ("evm_rms_percent", report.evm_rms.to_string()),
                ("sig_power_dbm", scenario.modem_sig_power_dbm.to_string()),
                ("n_traces", scenario.n_traces.to_string()),
            ],
        )?;
        w.flush()?;
    }
    {
        let mut w = out.file("baseband.csv")?;
        writeln!(w, "# sample_rate_hz = {}", baseband.sample_rate)?;
        writeln!(w, "# cutoff_hz = {cutoff}")?;
        writeln!(w, "# beatnote_hz = {f_b}")?;
        writeln!(w, "sample_index,i,q")?;
        for (idx, s) in baseband.samples.iter().enumerate() {
            writeln!(w, "{idx},{},{}", s.im, s.re)?;
        }
        w.flush()?;
    }
    {
        let mut w = out.file("evm.txt")?;
        core_io::write_evm_report(&mut w, &report)?;
        w.flush()?;
    }

    let mut results = Table::new();
    put_f64(&mut results, "evm_rms_percent", report.evm_rms);
    put_int(&mut results, "n_symbols", points.measured.len());
    put_f64(&mut results, "symbol_rate_hz", rate);
    put_f64(&mut results, "beatnote_hz", f_b);
    put_f64(&mut results, "sample_rate_hz", fs);
    put_f64(&mut results, "lowpass_cutoff_hz", cutoff);
    out.finish("constellation", FigureKind::Constellation, config, results)
}

// ---------------------------------------------------------------------------
// evm-sweep
// ---------------------------------------------------------------------------

/// EVM campaign over symbol rates (fixed beatnote) or beatnotes (fixed
/// symbol rate), Monte-Carlo averaged over independent master seeds. On
/// the beatnote axis the EVM-doubling frequency is extracted when the
/// sweep reaches it.
pub fn evm_sweep(
    config: &ScenarioConfig,
    scenario: &Scenario,
    channel: Channel,
) -> Result<(), CliError> {
    let sweep = &config.sweep;
    ensure(sweep.evm_seeds >= 1, "sweep.evm_seeds", "need at least one seed")?;
    let (plan, axis_values, fixed): (EvmSweep, &[f64], (&str, f64)) = match sweep.evm_axis {
        EvmAxis::SymbolRates => {
            ensure(
                !sweep.symbol_rates_hz.is_empty(),
                "sweep.symbol_rates_hz",
                "need at least one symbol rate",
            )?;
            (
                EvmSweep::SymbolRates {
                    rates: sweep.symbol_rates_hz.clone(),
                    beatnote: config.modem.beatnote_hz,
                },
                &sweep.symbol_rates_hz,
                ("beatnote_hz", config.modem.beatnote_hz),
            )
        }
        EvmAxis::Beatnotes => {
            ensure(
                !sweep.evm_beatnotes_hz.is_empty(),
                "sweep.evm_beatnotes_hz",
                "need at least one beatnote",
            )?;
            (
                EvmSweep::Beatnotes {
                    beatnotes: sweep.evm_beatnotes_hz.clone(),
                    symbol_rate: config.modem.symbol_rate_hz,
                },
                &sweep.evm_beatnotes_hz,
                ("symbol_rate_hz", config.modem.symbol_rate_hz),
            )
        }
    };

    let mut per_point: Vec<Vec<f64>> = vec![Vec::new(); axis_values.len()];
    for s in 0..sweep.evm_seeds {
        let mut run = scenario.clone();
        run.master_seed = derive_seed(scenario.master_seed, &[TAG_EVM_SEEDS, s as u64]);
        for (values, report) in per_point.iter_mut().zip(evm_campaign(&run, &plan, channel)?) {
            values.push(report.evm_rms);
        }
    }
    let points: Vec<CampaignPoint> = axis_values
        .iter()
        .zip(&per_point)
        .map(|(&x, values)| {
            let (mean, std) = mean_and_std(values);
            CampaignPoint { x, value: mean, stderr: std }
        })
        .collect();

    let axis_name = match sweep.evm_axis {
        EvmAxis::SymbolRates => "symbol-rates",
        EvmAxis::Beatnotes => "beatnotes",
    };
    let mut out = OutDir::create(config, "evm-sweep")?;
    {
        let mut w = out.file("evm.csv")?;
        core_io::write_campaign_csv(
            &mut w,
            &points,
            &[
                ("channel", channel_name(channel).to_string()),
                ("axis", axis_name.to_string()),
                (fixed.0, fixed.1.to_string()),
                ("n_seeds", sweep.evm_seeds.to_string()),
            ],
        )?;
        w.flush()?;
    }

    let mut results = Table::new();
    put_str(&mut results, "channel", channel_name(channel));
    put_str(&mut results, "axis", axis_name);
    put_int(&mut results, "n_seeds", sweep.evm_seeds);
    if let Some(first) = points.first() {
        put_f64(&mut results, "baseline_evm_percent", first.value);
    }
    if let Some(max) = points.iter().map(|p| p.value).reduce(f64::max) {
        put_f64(&mut results, "max_evm_percent", max);
    }
    if sweep.evm_axis == EvmAxis::Beatnotes {
        // Best effort: a flat channel (the ideal mixer) never doubles
        // inside the grid, which is a finding, not a failure.
        match evm_doubling_frequency(
            scenario,
            &sweep.evm_beatnotes_hz,
            config.modem.symbol_rate_hz,
            channel,
            sweep.evm_seeds,
        ) {
            Ok(f) => put_f64(&mut results, "evm_doubling_hz", f),
            Err(e) => put_str(&mut results, "evm_doubling_note", e.to_string()),
        }
    }
    out.finish("evm-sweep", FigureKind::EvmSweep, config, results)
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
