//! Scenario configuration: TOML schema, benchtop default values, dotted
//! `--set` overrides, and resolution into a core [`Scenario`].
//!
//! Conventions: every frequency-like key is in plain Hz (cycles per
//! second); Rabi frequencies and linewidths are converted to the core's
//! angular units during resolution. Temperatures are in Celsius, lengths
//! in meters, powers in dBm or mW as the key name says. Unknown keys are
//! rejected so a typo cannot silently fall back to a default.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rydsim_core::characterize::Scenario;
use rydsim_core::readout::NoiseModel;
use rydsim_core::spectro::{consts, AtomicSystem};

use crate::errors::CliError;

/// Generate `fn name() -> ty { value }` providers for serde defaults, so a
/// partially specified table inherits the benchtop values key by key.
macro_rules! defaults {
    ($($name:ident: $ty:ty = $value:expr;)*) => {
        $(fn $name() -> $ty { $value })*
    };
}

defaults! {
    d_out_dir: String = "runs".to_string();

    d_probe_rabi: f64 = 18e6;
    d_coupling_rabi: f64 = 13e6;
    d_rf_rabi: f64 = 0.0;
    d_zero: f64 = 0.0;
    d_natural_linewidth: f64 = 6.0666e6;
    d_rydberg_linewidth: f64 = 1e5;
    d_thermal_speed: f64 = 280.0;
    d_probe_wavelength: f64 = 780.241e-9;
    d_coupling_wavelength: f64 = 480.0e-9;
    d_probe_waist: f64 = 83e-6;
    d_coupling_waist: f64 = 102e-6;
    d_temperature_c: f64 = 55.0;
    d_cell_length: f64 = 0.030;
    d_fine_structure: f64 = 92e6;
    d_peak_absorption: f64 = 40.0;
    d_d32_amplitude: f64 = 0.5;

    d_white_psd: f64 = -64.85;
    d_corner: f64 = 10e3;
    d_off_dbm: f64 = f64::NEG_INFINITY;
    d_optical_power: f64 = 1.0;

    d_kappa: f64 = 0.098;
    d_dipole_au: f64 = 8000.0;
    d_c_cal: f64 = 0.58;
    d_homodyne_gain: f64 = 100.0;
    d_f_lo: f64 = 17.041e9;
    d_lo_power: f64 = -4.0;
    d_rbw: f64 = 10.0;
    d_min_fs: f64 = 1e6;
    d_n_traces: usize = 5;
    d_n_repetitions: usize = 3;

    d_symbol_count: usize = 511;
    d_symbol_rate: f64 = 100e3;
    d_modem_beatnote: f64 = 1e6;
    d_modem_power: f64 = -20.0;
    d_cutoff_factor: f64 = 2.1;

    d_sig_powers: Vec<f64> = vec![-60.0, -55.0, -50.0, -45.0, -40.0];
    d_anchor_beatnote: f64 = 100e3;
    d_bw_beatnotes: Vec<f64> = vec![
        2e5, 4e5, 7e5, 1e6, 1.4e6, 2e6, 2.8e6, 4e6, 5.5e6, 7e6, 8.5e6, 1e7, 1.2e7, 1.5e7,
    ];
    d_bw_rbw: f64 = 1e3;
    d_bw_sig_powers: Vec<f64> = vec![-45.0, -40.0, -35.0, -30.0, -25.0];
    d_bw_n_traces: usize = 10;
    d_bw_n_repetitions: usize = 6;
    d_at_powers: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    d_scan_half_span: f64 = 150e6;
    d_scan_points: usize = 601;
    d_scan_noise: f64 = 0.002;
    d_axis_units: f64 = 2.5e-9;
    d_symbol_rates: Vec<f64> = vec![50e3, 100e3, 200e3, 400e3];
    d_evm_beatnotes: Vec<f64> = vec![1e6, 2e6, 3.5e6, 5e6, 6.5e6, 8e6, 9.5e6, 1.1e7, 1.3e7];
    d_evm_axis: EvmAxis = EvmAxis::SymbolRates;
    d_evm_seeds: usize = 6;
    d_floor_span: f64 = 10e6;
    d_floor_rbw: f64 = 1e3;
    d_floor_traces: usize = 20;
}

// ---------------------------------------------------------------------------
// schema
// ---------------------------------------------------------------------------

/// Four-level system block. Defaults are the warm Rb-85 cell parameters:
/// 18/13 MHz Rabi frequencies, 83/102 um waists, 55 C, 30 mm cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default = "d_probe_rabi")]
    pub probe_rabi_hz: f64,
    /// Coupling Rabi frequency at the configured coupling power.
    #[serde(default = "d_coupling_rabi")]
    pub coupling_rabi_hz: f64,
    /// Static RF Rabi frequency; campaigns that apply their own RF field
    /// override this per point.
    #[serde(default = "d_rf_rabi")]
    pub rf_rabi_hz: f64,
    #[serde(default = "d_zero")]
    pub probe_detuning_hz: f64,
    #[serde(default = "d_zero")]
    pub coupling_detuning_hz: f64,
    #[serde(default = "d_zero")]
    pub rf_detuning_hz: f64,
    /// Intermediate-state natural linewidth (gamma_e / 2 pi).
    #[serde(default = "d_natural_linewidth")]
    pub natural_linewidth_hz: f64,
    /// Rydberg-state linewidth (gamma_r / 2 pi).
    #[serde(default = "d_rydberg_linewidth")]
    pub rydberg_linewidth_hz: f64,
    /// Mean thermal speed used for the transit-broadening rate.
    #[serde(default = "d_thermal_speed")]
    pub mean_thermal_speed_m_per_s: f64,
    #[serde(default = "d_probe_wavelength")]
    pub probe_wavelength_m: f64,
    #[serde(default = "d_coupling_wavelength")]
    pub coupling_wavelength_m: f64,
    #[serde(default = "d_probe_waist")]
    pub probe_waist_m: f64,
    #[serde(default = "d_coupling_waist")]
    pub coupling_waist_m: f64,
    #[serde(default = "d_temperature_c")]
    pub temperature_c: f64,
    #[serde(default = "d_cell_length")]
    pub cell_length_m: f64,
    /// Separation of the self-calibration companion line.
    #[serde(default = "d_fine_structure")]
    pub fine_structure_offset_hz: f64,
    #[serde(default = "d_peak_absorption")]
    pub peak_absorption_per_m: f64,
    /// Relative amplitude of the companion transparency feature.
    #[serde(default = "d_d32_amplitude")]
    pub d32_amplitude: f64,
}

/// Detector-referred noise block. `-inf` disables a term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    #[serde(default = "d_white_psd")]
    pub white_psd_dbm_per_hz: f64,
    #[serde(default = "d_corner")]
    pub one_over_f_corner_hz: f64,
    #[serde(default = "d_off_dbm")]
    pub shot_coefficient_dbm_per_hz: f64,
    #[serde(default = "d_off_dbm")]
    pub detector_floor_dbm_per_hz: f64,
    #[serde(default = "d_optical_power")]
    pub optical_power_mw: f64,
}

/// Conversion chain and capture bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutBlock {
    /// Coupling-decoherence weight in the sensor-corner model.
    #[serde(default = "d_kappa")]
    pub kappa: f64,
    /// RF transition dipole moment in atomic units (e a0).
    #[serde(default = "d_dipole_au")]
    pub dipole_moment_au: f64,
    /// Field calibration constant (V/m per sqrt(mW)).
    #[serde(default = "d_c_cal")]
    pub c_cal: f64,
    /// Optical homodyne amplitude gain.
    #[serde(default = "d_homodyne_gain")]
    pub homodyne_gain: f64,
    #[serde(default = "d_f_lo")]
    pub rf_lo_frequency_hz: f64,
    #[serde(default = "d_lo_power")]
    pub rf_lo_power_dbm: f64,
    /// Resolution bandwidth for narrowband spectral captures.
    #[serde(default = "d_rbw")]
    pub rbw_hz: f64,
    #[serde(default = "d_min_fs")]
    pub min_sample_rate_hz: f64,
    /// Traces averaged per measurement point.
    #[serde(default = "d_n_traces")]
    pub n_traces: usize,
    /// Full-sweep repetitions used for error bars.
    #[serde(default = "d_n_repetitions")]
    pub n_repetitions: usize,
}

/// QPSK link block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModemBlock {
    #[serde(default = "d_symbol_count")]
    pub symbol_count: usize,
    #[serde(default = "d_symbol_rate")]
    pub symbol_rate_hz: f64,
    /// Carrier beatnote for single-point modem runs; must stay at or above
    /// 2.5x the symbol rate so symbol windows hold whole carrier cycles.
    #[serde(default = "d_modem_beatnote")]
    pub beatnote_hz: f64,
    #[serde(default = "d_modem_power")]
    pub sig_power_dbm: f64,
    /// Baseband low-pass cutoff as a multiple of the symbol rate, used for
    /// the filtered I/Q trace artifact.
    #[serde(default = "d_cutoff_factor")]
    pub lowpass_cutoff_factor: f64,
}

/// Which axis an `evm-sweep` run scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvmAxis {
    SymbolRates,
    Beatnotes,
}

/// Campaign sweep definitions, one sub-group per subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Signal powers for narrowband SNR sweeps (`sensitivity`).
    #[serde(default = "d_sig_powers")]
    pub sig_powers_dbm: Vec<f64>,
    /// Anchor beatnote for `sensitivity`.
    #[serde(default = "d_anchor_beatnote")]
    pub beatnote_hz: f64,
    /// Beatnote grid for `bandwidth`.
    #[serde(default = "d_bw_beatnotes")]
    pub bandwidth_beatnotes_hz: Vec<f64>,
    /// Wideband points need a coarser capture than the 10 Hz anchor rbw,
    /// and hotter tones so every SNR fit stays in its linear window.
    #[serde(default = "d_bw_rbw")]
    pub bandwidth_rbw_hz: f64,
    #[serde(default = "d_bw_sig_powers")]
    pub bandwidth_sig_powers_dbm: Vec<f64>,
    #[serde(default = "d_bw_n_traces")]
    pub bandwidth_n_traces: usize,
    #[serde(default = "d_bw_n_repetitions")]
    pub bandwidth_n_repetitions: usize,
    /// RF powers for the field-calibration campaign (`calibrate`).
    #[serde(default = "d_at_powers")]
    pub at_powers_dbm: Vec<f64>,
    /// Coupling-detuning scan geometry (`spectrum`, `calibrate`).
    #[serde(default = "d_scan_half_span")]
    pub scan_half_span_hz: f64,
    #[serde(default = "d_scan_points")]
    pub scan_points: usize,
    /// Additive per-point noise on synthesized scans (transmission units).
    #[serde(default = "d_scan_noise")]
    pub scan_noise: f64,
    /// Raw-axis units per Hz for the uncalibrated reference scan.
    #[serde(default = "d_axis_units")]
    pub raw_axis_units_per_hz: f64,
    /// Symbol-rate grid for `evm-sweep` on the symbol-rates axis.
    #[serde(default = "d_symbol_rates")]
    pub symbol_rates_hz: Vec<f64>,
    /// Beatnote grid for `evm-sweep` on the beatnotes axis.
    #[serde(default = "d_evm_beatnotes")]
    pub evm_beatnotes_hz: Vec<f64>,
    #[serde(default = "d_evm_axis")]
    pub evm_axis: EvmAxis,
    /// Monte-Carlo seeds for the EVM-doubling estimate.
    #[serde(default = "d_evm_seeds")]
    pub evm_seeds: usize,
    /// Span, rbw, and averaging for `noise-floors`.
    #[serde(default = "d_floor_span")]
    pub floor_span_hz: f64,
    #[serde(default = "d_floor_rbw")]
    pub floor_rbw_hz: f64,
    #[serde(default = "d_floor_traces")]
    pub floor_traces: usize,
}

macro_rules! block_default {
    ($block:ident) => {
        impl Default for $block {
            fn default() -> Self {
                // An empty TOML table resolves every key to its default.
                toml::from_str("").expect("empty table must satisfy the schema")
            }
        }
    };
}
block_default!(SystemBlock);
block_default!(NoiseBlock);
block_default!(ReadoutBlock);
block_default!(ModemBlock);
block_default!(SweepBlock);

/// Complete scenario file. Only `seed` is required: determinism is an
/// explicit choice, everything physical has a benchtop default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "d_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub system: SystemBlock,
    #[serde(default)]
    pub noise: NoiseBlock,
    #[serde(default)]
    pub readout: ReadoutBlock,
    #[serde(default)]
    pub modem: ModemBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
}

// ---------------------------------------------------------------------------
// loading and overrides
// ---------------------------------------------------------------------------

/// Parse a config file into a TOML tree, apply dotted `--set` overrides,
/// then deserialize against the schema. Schema violations (unknown or
/// missing keys, wrong types) come back as validation errors naming the
/// key.
pub fn load(path: &Path, sets: &[String]) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::validation("config", format!("cannot read `{}`: {e}", path.display()))
    })?;
    let mut tree: toml::Value = toml::from_str(&text)
        .map_err(|e| CliError::validation("config", format!("parse error: {e}")))?;
    apply_overrides(&mut tree, sets)?;
    tree.try_into()
        .map_err(|e| CliError::validation("config", format!("schema error: {e}")))
}

/// Apply `key.path=value` overrides onto the parsed tree. Values are
/// parsed as TOML (numbers, booleans, arrays); anything that does not
/// parse is taken as a bare string, so `--set sweep.evm_axis=beatnotes`
/// works without quoting.
fn apply_overrides(tree: &mut toml::Value, sets: &[String]) -> Result<(), CliError> {
    for set in sets {
        let (path, raw) = set.split_once('=').ok_or_else(|| {
            CliError::validation("--set", format!("expected key.path=value, got `{set}`"))
        })?;
        let value = parse_override_value(raw.trim())
            .ok_or_else(|| CliError::validation(path, format!("unparseable value `{raw}`")))?;
        let parts: Vec<&str> = path.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(CliError::validation("--set", format!("malformed key path `{path}`")));
        }
        let mut node = &mut *tree;
        for part in &parts[..parts.len() - 1] {
            let table = node.as_table_mut().ok_or_else(|| {
                CliError::validation(path.to_string(), format!("`{part}` is not a table"))
            })?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = node.as_table_mut().ok_or_else(|| {
            CliError::validation(path.to_string(), "parent key is not a table".to_string())
        })?;
        table.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_override_value(raw: &str) -> Option<toml::Value> {
    let typed: Result<toml::Value, _> = toml::from_str(&format!("v = {raw}"));
    if let Ok(mut t) = typed {
        if let Some(v) = t.as_table_mut().and_then(|t| t.remove("v")) {
            return Some(v);
        }
    }
    // Fall back to a bare string; reject raw quotes to avoid double-quoting
    // confusion.
    if raw.contains('"') || raw.contains('\'') {
        return None;
    }
    Some(toml::Value::String(raw.to_string()))
}

// ---------------------------------------------------------------------------
// resolution
// ---------------------------------------------------------------------------

impl ScenarioConfig {
    /// Build the core scenario this config describes, validating it.
    pub fn resolve(&self) -> Result<Scenario, CliError> {
        let sys = &self.system;
        if sys.probe_waist_m <= 0.0 || !sys.probe_waist_m.is_finite() {
            return Err(CliError::validation(
                "system.probe_waist_m",
                format!("must be finite and > 0, got {}", sys.probe_waist_m),
            ));
        }
        if sys.mean_thermal_speed_m_per_s <= 0.0 || !sys.mean_thermal_speed_m_per_s.is_finite() {
            return Err(CliError::validation(
                "system.mean_thermal_speed_m_per_s",
                format!("must be finite and > 0, got {}", sys.mean_thermal_speed_m_per_s),
            ));
        }
        let system = AtomicSystem {
            omega_p: TAU * sys.probe_rabi_hz,
            omega_c: TAU * sys.coupling_rabi_hz,
            omega_rf: TAU * sys.rf_rabi_hz,
            delta_p: TAU * sys.probe_detuning_hz,
            delta_c: TAU * sys.coupling_detuning_hz,
            delta_rf: TAU * sys.rf_detuning_hz,
            gamma_e: TAU * sys.natural_linewidth_hz,
            gamma_r: TAU * sys.rydberg_linewidth_hz,
            gamma_t: TAU * sys.mean_thermal_speed_m_per_s / (2.0 * sys.probe_waist_m),
            lambda_p: sys.probe_wavelength_m,
            lambda_c: sys.coupling_wavelength_m,
            waist_p: sys.probe_waist_m,
            waist_c: sys.coupling_waist_m,
            temperature: sys.temperature_c + 273.15,
            cell_length: sys.cell_length_m,
            fine_structure_offset: sys.fine_structure_offset_hz,
            mass: consts::RB85_MASS,
            peak_absorption: sys.peak_absorption_per_m,
            d32_amplitude: sys.d32_amplitude,
        };
        let noise = NoiseModel {
            white_psd: self.noise.white_psd_dbm_per_hz,
            one_over_f_corner: self.noise.one_over_f_corner_hz,
            shot_coefficient: self.noise.shot_coefficient_dbm_per_hz,
            detector_floor: self.noise.detector_floor_dbm_per_hz,
            optical_power_mw: self.noise.optical_power_mw,
        };
        let scenario = Scenario {
            system,
            noise,
            kappa: self.readout.kappa,
            dipole_moment: self.readout.dipole_moment_au * consts::ATOMIC_DIPOLE,
            c_cal: self.readout.c_cal,
            homodyne_gain: self.readout.homodyne_gain,
            f_lo: self.readout.rf_lo_frequency_hz,
            lo_power_dbm: self.readout.rf_lo_power_dbm,
            sig_powers_dbm: self.sweep.sig_powers_dbm.clone(),
            modem_sig_power_dbm: self.modem.sig_power_dbm,
            rbw: self.readout.rbw_hz,
            min_sample_rate: self.readout.min_sample_rate_hz,
            n_traces: self.readout.n_traces,
            n_repetitions: self.readout.n_repetitions,
            symbol_count: self.modem.symbol_count,
            scan_noise: self.sweep.scan_noise,
            master_seed: self.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Canonical serialization of the fully resolved config: every key
    /// explicit, field order fixed by the schema. The manifest embeds this
    /// and hashes it, so two configs that resolve identically share a hash
    /// regardless of file formatting.
    pub fn canonical_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self)
            .map_err(|e| CliError::runtime(format!("cannot serialize effective config: {e}")))
    }

    pub fn config_hash(&self) -> Result<String, CliError> {
        let text = self.canonical_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }
}

/// Map a core parameter name to the config key that sets it, for
/// field-level diagnostics; unmapped names pass through unchanged.
pub fn config_key_for(core_name: &str) -> String {
    match core_name {
        "omega_p" => "system.probe_rabi_hz",
        "omega_c" => "system.coupling_rabi_hz",
        "omega_rf" => "system.rf_rabi_hz",
        "delta_p" => "system.probe_detuning_hz",
        "delta_c" => "system.coupling_detuning_hz",
        "delta_rf" => "system.rf_detuning_hz",
        "gamma_e" => "system.natural_linewidth_hz",
        "gamma_r" => "system.rydberg_linewidth_hz",
        "gamma_t" => "system.mean_thermal_speed_m_per_s",
        "lambda_p" => "system.probe_wavelength_m",
        "lambda_c" => "system.coupling_wavelength_m",
        "waist_p" => "system.probe_waist_m",
        "waist_c" => "system.coupling_waist_m",
        "temperature" => "system.temperature_c",
        "cell_length" => "system.cell_length_m",
        "fine_structure_offset" => "system.fine_structure_offset_hz",
        "peak_absorption" => "system.peak_absorption_per_m",
        "d32_amplitude" => "system.d32_amplitude",
        "white_psd" => "noise.white_psd_dbm_per_hz",
        "one_over_f_corner" => "noise.one_over_f_corner_hz",
        "shot_coefficient" => "noise.shot_coefficient_dbm_per_hz",
        "detector_floor" => "noise.detector_floor_dbm_per_hz",
        "optical_power_mw" => "noise.optical_power_mw",
        "kappa" => "readout.kappa",
        "dipole_moment" => "readout.dipole_moment_au",
        "c_cal" => "readout.c_cal",
        "homodyne_gain" => "readout.homodyne_gain",
        "f_lo" => "readout.rf_lo_frequency_hz",
        "lo_power_dbm" => "readout.rf_lo_power_dbm",
        "rbw" => "readout.rbw_hz",
        "min_sample_rate" => "readout.min_sample_rate_hz",
        "modem_sig_power_dbm" => "modem.sig_power_dbm",
        "symbol_rate" => "modem.symbol_rate_hz",
        "count" => "modem.symbol_count",
        other => other,
    }
    .to_string()
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioConfig {
        toml::from_str("seed = 7").expect("seed-only config must be valid")
    }

    #[test]
    fn defaults_resolve_to_the_library_operating_point() {
        let reference = Scenario::lab_default();
        let resolved = minimal().resolve().expect("default config must resolve");
        assert_eq!(resolved.system.omega_p, reference.system.omega_p);
        assert_eq!(resolved.system.omega_c, reference.system.omega_c);
        assert_eq!(resolved.system.gamma_t, reference.system.gamma_t);
        assert_eq!(resolved.system.temperature, reference.system.temperature);
        assert_eq!(resolved.noise.white_psd, reference.noise.white_psd);
        assert_eq!(resolved.noise.one_over_f_corner, reference.noise.one_over_f_corner);
        assert_eq!(resolved.kappa, reference.kappa);
        assert_eq!(resolved.dipole_moment, reference.dipole_moment);
        assert_eq!(resolved.c_cal, reference.c_cal);
        assert_eq!(resolved.f_lo, reference.f_lo);
        assert_eq!(resolved.lo_power_dbm, reference.lo_power_dbm);
        assert_eq!(resolved.sig_powers_dbm, reference.sig_powers_dbm);
        assert_eq!(resolved.rbw, reference.rbw);
        assert_eq!(resolved.n_traces, reference.n_traces);
        assert_eq!(resolved.symbol_count, reference.symbol_count);
        assert_eq!(resolved.scan_noise, reference.scan_noise);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = toml::from_str::<ScenarioConfig>("seed = 7\n[noise]\nwite_psd_dbm_per_hz = -60")
            .expect_err("typo key must be rejected");
        assert!(
            err.to_string().contains("wite_psd_dbm_per_hz"),
            "error should name the unknown key: {err}"
        );
    }

    #[test]
    fn missing_seed_is_rejected_by_name() {
        let err = toml::from_str::<ScenarioConfig>("out_dir = \"x\"")
            .expect_err("config without a seed must be rejected");
        assert!(err.to_string().contains("seed"), "error should name the missing key: {err}");
    }

    #[test]
    fn overrides_reach_nested_keys_and_keep_types() {
        let mut tree: toml::Value = toml::from_str("seed = 7").unwrap();
        apply_overrides(
            &mut tree,
            &[
                "noise.one_over_f_corner_hz=5e4".to_string(),
                "sweep.evm_axis=beatnotes".to_string(),
                "sweep.symbol_rates_hz=[1e4, 2e4]".to_string(),
                "readout.n_traces=2".to_string(),
            ],
        )
        .expect("overrides must apply");
        let config: ScenarioConfig = tree.try_into().unwrap();
        assert_eq!(config.noise.one_over_f_corner_hz, 5e4);
        assert_eq!(config.sweep.evm_axis, EvmAxis::Beatnotes);
        assert_eq!(config.sweep.symbol_rates_hz, vec![1e4, 2e4]);
        assert_eq!(config.readout.n_traces, 2);
    }

    #[test]
    fn override_with_unknown_key_is_rejected_by_name() {
        let mut tree: toml::Value = toml::from_str("seed = 7").unwrap();
        apply_overrides(&mut tree, &["readout.n_trace=2".to_string()]).unwrap();
        let err = tree.try_into::<ScenarioConfig>().expect_err("typo override must be rejected");
        assert!(err.to_string().contains("n_trace"), "error should name the key: {err}");
    }

    #[test]
    fn canonical_form_is_stable_and_complete() {
        let config = minimal();
        let text = config.canonical_toml().unwrap();
        // Round-trips without loss and re-serializes identically.
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.canonical_toml().unwrap(), text);
        // Every block appears even though the input set none of them.
        for section in ["[system]", "[noise]", "[readout]", "[modem]", "[sweep]"] {
            assert!(text.contains(section), "canonical config must contain {section}");
        }
        // Disabled noise terms survive the round trip as -inf.
        assert!(back.noise.shot_coefficient_dbm_per_hz == f64::NEG_INFINITY);
        assert_eq!(config.config_hash().unwrap(), back.config_hash().unwrap());
    }

    #[test]
    fn validation_failures_name_the_config_key() {
        let mut config = minimal();
        config.readout.kappa = -1.0;
        let err = config.resolve().expect_err("negative kappa must fail");
        match err {
            CliError::Validation { field, .. } => {
                assert_eq!(field, "readout.kappa");
            }
            other => panic!("expected a validation error, got {other:?}"),
        }
    }
}
