//! Run manifest: a structured-text record of what a subcommand produced.
//!
//! The manifest carries the run identity (subcommand, creation time,
//! config hash), the headline numbers, the artifact list, and the
//! complete effective config, so a run directory can be reproduced
//! without the original scenario file. It is the only artifact allowed
//! to contain a timestamp; CSV payloads stay byte-identical on rerun.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use toml::value::{Table, Value};

use crate::config::ScenarioConfig;
use crate::errors::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";

/// Write `manifest.toml` into `dir`.
pub fn write_manifest(
    dir: &Path,
    subcommand: &str,
    config: &ScenarioConfig,
    results: Table,
    artifacts: &[String],
) -> Result<(), CliError> {
    let mut run = Table::new();
    run.insert("subcommand".to_string(), Value::String(subcommand.to_string()));
    run.insert("created_utc".to_string(), Value::String(utc_timestamp(now_unix())));
    run.insert("config_sha256".to_string(), Value::String(config.config_hash()?));
    run.insert(
        "artifacts".to_string(),
        Value::Array(artifacts.iter().map(|a| Value::String(a.clone())).collect()),
    );

    let config_value = Value::try_from(config)
        .map_err(|e| CliError::runtime(format!("cannot serialize effective config: {e}")))?;

    let mut root = Table::new();
    root.insert("run".to_string(), Value::Table(run));
    root.insert("results".to_string(), Value::Table(results));
    root.insert("config".to_string(), config_value);
    let text = toml::to_string_pretty(&Value::Table(root))
        .map_err(|e| CliError::runtime(format!("cannot serialize manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Format epoch seconds as ISO-8601 UTC. Uses the standard days-to-civil
/// construction with the epoch shifted to a March-first year so leap days
/// fall at the end of the cycle; exact for any date the epoch can reach.
fn utc_timestamp(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (hh, mm, ss) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!("{y:04}-{m:02}-{d:02}T{hh:02}:{mm:02}:{ss:02}Z")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_formatting_handles_epoch_and_leap_days() {
        assert_eq!(utc_timestamp(0), "1970-01-01T00:00:00Z");
        assert_eq!(utc_timestamp(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(utc_timestamp(951_868_799), "2000-02-29T23:59:59Z");
        assert_eq!(utc_timestamp(1_735_603_200), "2024-12-31T00:00:00Z");
        assert_eq!(utc_timestamp(1_735_689_599), "2024-12-31T23:59:59Z");
        assert_eq!(utc_timestamp(1_735_689_600), "2025-01-01T00:00:00Z");
    }

    #[test]
    fn manifest_contains_run_results_and_full_config() {
        let dir = tempfile::tempdir().expect("tempdir");
        let config: crate::config::ScenarioConfig =
            toml::from_str("seed = 3").expect("minimal config");
        let mut results = Table::new();
        results.insert("f_3db_hz".to_string(), Value::Float(8.0e6));
        write_manifest(
            dir.path(),
            "bandwidth",
            &config,
            results,
            &["sensitivity_vs_beatnote.csv".to_string(), "plot.py".to_string()],
        )
        .expect("manifest write");
        let text = fs::read_to_string(dir.path().join(MANIFEST_NAME)).expect("read back");
        let value: Value = toml::from_str(&text).expect("manifest parses");
        assert_eq!(
            value["run"]["subcommand"].as_str(),
            Some("bandwidth"),
            "run block must name the subcommand"
        );
        assert_eq!(value["results"]["f_3db_hz"].as_float(), Some(8.0e6));
        // The embedded config must be complete enough to re-run from.
        let embedded: crate::config::ScenarioConfig =
            value["config"].clone().try_into().expect("embedded config deserializes");
        assert_eq!(embedded.seed, 3);
        assert_eq!(embedded.config_hash().unwrap(), config.config_hash().unwrap());
        assert_eq!(
            value["run"]["config_sha256"].as_str(),
            Some(config.config_hash().unwrap().as_str())
        );
    }
}
