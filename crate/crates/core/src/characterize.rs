//! End-to-end measurement procedures: sensitivity extrapolation and its
//! beatnote dependence, bandwidth extraction, double-Gaussian splitting
//! fits, field-calibration campaigns, frequency-axis calibration, and EVM
//! sweep campaigns over the atomic or reference-mixer channel.
//!
//! Every campaign draws its randomness from seeds derived off the
//! scenario's master seed, so a campaign re-run is bit-reproducible and
//! individual points are independent of sweep order.

use crate::dsp;
use crate::error::{ensure_finite, ensure_positive, CoreError, Result};
use crate::modem::{self, EVMReport, SymbolSource};
use crate::readout::{
    self, synthesize_trace, Modulation, NoiseModel, RFDrive, SensorBandwidth, TimeTrace,
};
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectro::{
    self, consts::HBAR, small_signal_responsivity, transmission_spectrum, AtomicSystem,
    SpectrumCurve,
};
use rand_distr::{Distribution, StandardNormal};

/// Reference-mixer corner as a multiple of the atomic sensor corner.
pub const MIXER_CORNER_FACTOR: f64 = 100.0;

/// Known separation of the main transparency peak and its fine-structure
/// companion (Hz); anchors the frequency-axis calibration.
pub const FINE_STRUCTURE_REFERENCE_HZ: f64 = 92e6;

// Seed-derivation tags, one per campaign kind.
const TAG_SENSITIVITY: u64 = 0x5e;
const TAG_AT_SCAN: u64 = 0xa7;
const TAG_EVM: u64 = 0xe7;
const TAG_DOUBLING: u64 = 0xd0;

// ---------------------------------------------------------------------------
// scenario
// ---------------------------------------------------------------------------

/// A complete simulated-apparatus configuration: atomic system, noise,
/// conversion constants, and campaign bookkeeping. The defaults in
/// [`Scenario::lab_default`] encode the benchtop operating point
/// (after the one-time kappa and noise-floor calibration).
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: AtomicSystem,
    pub noise: NoiseModel,
    /// Coupling-decoherence weight in the sensor-corner model.
    pub kappa: f64,
    /// RF transition dipole moment (C m).
    pub dipole_moment: f64,
    /// Field calibration constant (V/m per sqrt(mW)).
    pub c_cal: f64,
    /// Optical homodyne amplitude gain.
    pub homodyne_gain: f64,
    /// RF carrier (local oscillator) frequency (Hz).
    pub f_lo: f64,
    /// RF local-oscillator power (dBm).
    pub lo_power_dbm: f64,
    /// Signal powers for the sensitivity sweep (dBm).
    pub sig_powers_dbm: Vec<f64>,
    /// RF signal power for modem campaigns (dBm).
    pub modem_sig_power_dbm: f64,
    /// Requested resolution bandwidth for spectral captures (Hz).
    pub rbw: f64,
    /// Lowest sample rate used when planning captures (Hz).
    pub min_sample_rate: f64,
    /// Traces averaged per measurement point.
    pub n_traces: usize,
    /// Full-sweep repetitions used for error bars.
    pub n_repetitions: usize,
    /// Symbols per modem run.
    pub symbol_count: usize,
    /// Additive noise per point on synthesized spectroscopy scans
    /// (transmission units).
    pub scan_noise: f64,
    pub master_seed: u64,
}

impl Scenario {
    /// Benchtop operating point: warm Rb-85 cell, strong optical
    /// homodyne, kappa set so the sensitivity-doubling bandwidth of the
    /// default system lands at 8 MHz, and a white noise floor set by the
    /// documented one-time calibration against the measured 100 kHz
    /// sensitivity.
    pub fn lab_default() -> Self {
        Scenario {
            system: AtomicSystem::rb85(),
            noise: NoiseModel {
                white_psd: -64.85,
                one_over_f_corner: 10e3,
                shot_coefficient: f64::NEG_INFINITY,
                detector_floor: f64::NEG_INFINITY,
                optical_power_mw: 1.0,
            },
            kappa: 0.098,
            dipole_moment: 8000.0 * spectro::consts::ATOMIC_DIPOLE,
            c_cal: 0.58,
            homodyne_gain: 100.0,
            f_lo: 17.041e9,
            lo_power_dbm: -4.0,
            sig_powers_dbm: vec![-60.0, -55.0, -50.0, -45.0, -40.0],
            modem_sig_power_dbm: -20.0,
            rbw: 10.0,
            min_sample_rate: 1e6,
            n_traces: 5,
            n_repetitions: 3,
            symbol_count: modem::DEFAULT_SYMBOL_COUNT,
            scan_noise: 0.002,
            master_seed: 0x5259_4453,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.noise.validate()?;
        ensure_positive("kappa", self.kappa)?;
        ensure_positive("dipole_moment", self.dipole_moment)?;
        ensure_positive("c_cal", self.c_cal)?;
        ensure_positive("homodyne_gain", self.homodyne_gain)?;
        ensure_positive("f_lo", self.f_lo)?;
        ensure_finite("lo_power_dbm", self.lo_power_dbm)?;
        ensure_finite("modem_sig_power_dbm", self.modem_sig_power_dbm)?;
        ensure_positive("rbw", self.rbw)?;
        ensure_positive("min_sample_rate", self.min_sample_rate)?;
        if self.sig_powers_dbm.len() < 3 {
            return Err(CoreError::Configuration(
                "sig_powers_dbm needs at least 3 sweep points".to_string(),
            ));
        }
        if self.n_traces == 0 || self.n_repetitions == 0 || self.symbol_count == 0 {
            return Err(CoreError::Configuration(
                "n_traces, n_repetitions, and symbol_count must be at least 1".to_string(),
            ));
        }
        if self.scan_noise < 0.0 {
            return Err(CoreError::Configuration("scan_noise must be non-negative".to_string()));
        }
        Ok(())
    }

    /// RF LO field at the atoms (V/m), through the calibration constant.
    pub fn lo_field(&self) -> f64 {
        self.c_cal * 10f64.powf(self.lo_power_dbm / 20.0)
    }

    /// Small-signal transmission responsivity at the LO bias point.
    pub fn responsivity(&self) -> Result<f64> {
        small_signal_responsivity(&self.system, self.lo_field(), self.dipole_moment)
    }

    /// Sensor response corner for this system and kappa.
    pub fn bandwidth(&self) -> Result<SensorBandwidth> {
        readout::sensor_bandwidth(&self.system, self.kappa)
    }

    fn drive(&self, sig_power_dbm: f64, beatnote: f64, modulation: Option<Modulation>) -> RFDrive {
        RFDrive {
            lo_power: self.lo_power_dbm,
            sig_power: sig_power_dbm,
            f_lo: self.f_lo,
            f_sig: self.f_lo + beatnote,
            modulation,
        }
    }
}

// ---------------------------------------------------------------------------
// result types
// ---------------------------------------------------------------------------

/// Sensitivity extracted from an SNR-vs-power sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    /// Minimum detectable field per root bandwidth (V/m/sqrt(Hz)).
    pub sensitivity: f64,
    /// Beatnote the sweep ran at (Hz); 0 for a bare fit of caller points.
    pub beatnote: f64,
    /// Fitted SNR-vs-power slope (dB per dB).
    pub fit_slope: f64,
    /// Fitted intercept (dB at 0 dBm).
    pub fit_intercept: f64,
    /// Extrapolated power where SNR reaches 0 dB (dBm).
    pub extrapolated_floor_power: f64,
    /// One-sigma uncertainty on the sensitivity (V/m/sqrt(Hz)).
    pub stderr: f64,
}

/// Zero-intercept calibration fit of field versus root power.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    /// Slope: V/m per sqrt(mW).
    pub c_cal: f64,
    pub slope_stderr: f64,
    /// (sqrt(P mW), E V/m) pairs the fit consumed.
    pub points: Vec<(f64, f64)>,
    /// Uncentered coefficient of determination of the through-origin fit.
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthMethod {
    SensitivityDoubling,
}

/// Sensitivity-bandwidth summary.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthResult {
    /// Beatnote where sensitivity doubles from its low-frequency value.
    pub f_3db: f64,
    /// Beatnote where sensitivity rises by sqrt(2) (a 3 dB amplitude
    /// drop); reported alongside without adjudicating between the two.
    pub f_amp3db: f64,
    /// Baseline sensitivity at the lowest measured beatnote.
    pub s_low: f64,
    pub method: BandwidthMethod,
}

/// Double-Gaussian fit summary; the splitting is |mu2 - mu1|.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleGaussianFit {
    pub splitting: f64,
    pub stderr: f64,
    pub centers: [f64; 2],
    pub amplitudes: [f64; 2],
    pub sigmas: [f64; 2],
    pub offset: f64,
}

/// One point of a simulated field-calibration campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct AtMeasurement {
    pub power_dbm: f64,
    pub splitting_hz: f64,
    pub stderr_hz: f64,
}

/// Generic campaign sweep point for CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignPoint {
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Which receive channel an EVM campaign runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Atomic,
    Mixer,
}

/// EVM campaign axis: symbol rates at a fixed beatnote, or beatnotes at a
/// fixed symbol rate.
#[derive(Debug, Clone, PartialEq)]
pub enum EvmSweep {
    SymbolRates { rates: Vec<f64>, beatnote: f64 },
    Beatnotes { beatnotes: Vec<f64>, symbol_rate: f64 },
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

/// Fit SNR (dB) versus signal power (dBm), extrapolate to the 0 dB SNR
/// floor, and convert the floor power to a field sensitivity:
/// S = sqrt(10^(P0/10) / f_rbw) x c_cal.
pub fn sensitivity_from_sweep(
    points: &[(f64, f64)],
    f_rbw: f64,
    c_cal: f64,
) -> Result<SensitivityResult> {
    if points.len() < 3 {
        return Err(CoreError::invalid_input(
            "points",
            format!("need at least 3 sweep points, got {}", points.len()),
        ));
    }
    ensure_positive("f_rbw", f_rbw)?;
    ensure_positive("c_cal", c_cal)?;
    for &(p, snr) in points {
        ensure_finite("sig_power_dbm", p)?;
        ensure_finite("snr_db", snr)?;
    }
    let snr_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let snr_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if snr_max - snr_min < 10.0 {
        return Err(CoreError::invalid_input(
            "points",
            format!("SNRs span only {:.2} dB; need at least 10 dB for a stable fit", snr_max - snr_min),
        ));
    }

    let (slope, intercept, var_slope, var_intercept, cov) = ols_line(points);
    if slope <= 0.0 {
        return Err(CoreError::FitError(format!(
            "SNR-vs-power fit is non-increasing (slope {slope:.4} dB/dB); sweep unusable"
        )));
    }
    let floor = -intercept / slope;
    let sensitivity = (10f64.powf(floor / 10.0) / f_rbw).sqrt() * c_cal;
    // Propagate fit covariance through P0 = -b/a, then through the
    // exponential map to the sensitivity.
    let d_da = intercept / (slope * slope);
    let d_db = -1.0 / slope;
    let var_floor =
        (d_da * d_da * var_slope + d_db * d_db * var_intercept + 2.0 * d_da * d_db * cov).max(0.0);
    let stderr = sensitivity * (10f64.ln() / 20.0) * var_floor.sqrt();
    Ok(SensitivityResult {
        sensitivity,
        beatnote: 0.0,
        fit_slope: slope,
        fit_intercept: intercept,
        extrapolated_floor_power: floor,
        stderr,
    })
}

/// Ordinary least squares y = a x + b with parameter (co)variances.
fn ols_line(points: &[(f64, f64)]) -> (f64, f64, f64, f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let dof = (points.len() as f64 - 2.0).max(1.0);
    let sigma2 = ssr / dof;
    let var_slope = sigma2 / sxx;
    let var_intercept = sigma2 * (1.0 / n + mean_x * mean_x / sxx);
    let cov = -sigma2 * mean_x / sxx;
    (slope, intercept, var_slope, var_intercept, cov)
}

/// Plan a capture so the beatnote lands exactly on a periodogram bin
/// center: returns (sample rate, samples per trace). One trace holds one
/// analysis segment at (approximately) the requested rbw.
pub fn plan_capture(f_b: f64, rbw: f64, fs_floor: f64) -> Result<(f64, usize)> {
    let fs_guess = (5.0 * f_b).max(fs_floor);
    let mut n = (1.5 * fs_guess / rbw).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    if n < 16 {
        return Err(CoreError::ResolutionError(format!(
            "rbw {rbw} Hz too coarse for a {fs_guess} Hz capture"
        )));
    }
    let m = (f_b * n as f64 / fs_guess).round().max(1.0);
    let fs = f_b * n as f64 / m;
    if fs <= 4.0 * f_b {
        return Err(CoreError::SamplingViolation(format!(
            "planned capture rate {fs} Hz does not clear 4x the beatnote {f_b} Hz"
        )));
    }
    Ok((fs, n))
}

/// Measure sensitivity at each beatnote by running the full chain:
/// synthesize `n_traces` traces per signal power, average their
/// periodogram, extract SNR, fit the sweep, extrapolate. Error bars are
/// the standard deviation over `n_repetitions` independent repetitions.
pub fn sensitivity_vs_beatnote(
    scenario: &Scenario,
    beatnotes: &[f64],
) -> Result<Vec<SensitivityResult>> {
    scenario.validate()?;
    if beatnotes.is_empty() {
        return Err(CoreError::invalid_input("beatnotes", "need at least one beatnote"));
    }
    let responsivity = scenario.responsivity()?;
    let bandwidth = scenario.bandwidth()?;
    let mut results = Vec::with_capacity(beatnotes.len());
    for (bi, &f_b) in beatnotes.iter().enumerate() {
        ensure_positive("beatnote", f_b)?;
        let (fs, n) = plan_capture(f_b, scenario.rbw, scenario.min_sample_rate)?;
        let duration = n as f64 / fs;
        let mut fits: Vec<SensitivityResult> = Vec::with_capacity(scenario.n_repetitions);
        for rep in 0..scenario.n_repetitions {
            let mut sweep = Vec::with_capacity(scenario.sig_powers_dbm.len());
            for (pi, &p_dbm) in scenario.sig_powers_dbm.iter().enumerate() {
                let drive = scenario.drive(p_dbm, f_b, None);
                let traces: Result<Vec<TimeTrace>> = (0..scenario.n_traces)
                    .map(|k| {
                        let seed = derive_seed(
                            scenario.master_seed,
                            &[TAG_SENSITIVITY, bi as u64, rep as u64, pi as u64, k as u64],
                        );
                        Ok(synthesize_trace(
                            responsivity,
                            &bandwidth,
                            &drive,
                            &scenario.noise,
                            scenario.homodyne_gain,
                            scenario.c_cal,
                            duration,
                            fs,
                            seed,
                        )?
                        .trace)
                    })
                    .collect();
                let spectrum = dsp::periodogram(&traces?, scenario.rbw)?;
                let est = dsp::snr_at(&spectrum, f_b, 5.0 * spectrum.rbw)?;
                if !est.no_signal {
                    sweep.push((p_dbm, est.snr_db));
                }
            }
            let mut fit = sensitivity_from_sweep(&sweep, scenario.rbw, scenario.c_cal)?;
            fit.beatnote = f_b;
            fits.push(fit);
        }
        let values: Vec<f64> = fits.iter().map(|f| f.sensitivity).collect();
        let (mean, std) = mean_and_std(&values);
        let mut result = fits.swap_remove(0);
        result.sensitivity = mean;
        if scenario.n_repetitions > 1 {
            result.stderr = std;
        }
        results.push(result);
    }
    Ok(results)
}

/// Beatnote where sensitivity doubles from its low-frequency baseline,
/// log-log interpolated between the bracketing points. Also reports the
/// sqrt(2) (amplitude 3 dB) crossing.
pub fn extract_bandwidth(curve: &[SensitivityResult]) -> Result<BandwidthResult> {
    if curve.len() < 4 {
        return Err(CoreError::invalid_input(
            "curve",
            format!("need at least 4 sensitivity points, got {}", curve.len()),
        ));
    }
    let mut sorted: Vec<(f64, f64)> = curve.iter().map(|r| (r.beatnote, r.sensitivity)).collect();
    for &(f, s) in &sorted {
        if !(f > 0.0) || !(s > 0.0) {
            return Err(CoreError::invalid_input(
                "curve",
                format!("non-positive point (beatnote {f}, sensitivity {s})"),
            ));
        }
    }
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let s_low = sorted[0].1;
    let f_3db = crossing(&sorted, 2.0 * s_low).ok_or_else(|| {
        CoreError::OutOfRange(format!(
            "sensitivity never reaches twice the {s_low:.3e} baseline within the measured span"
        ))
    })?;
    let f_amp3db = crossing(&sorted, 2f64.sqrt() * s_low).unwrap_or(f_3db);
    Ok(BandwidthResult { f_3db, f_amp3db, s_low, method: BandwidthMethod::SensitivityDoubling })
}

/// First upward crossing of `target`, interpolated in log-log space.
fn crossing(sorted: &[(f64, f64)], target: f64) -> Option<f64> {
    for w in sorted.windows(2) {
        let (f1, s1) = w[0];
        let (f2, s2) = w[1];
        if s1 < target && s2 >= target {
            let t = (target.ln() - s1.ln()) / (s2.ln() - s1.ln());
            return Some((f1.ln() + t * (f2.ln() - f1.ln())).exp());
        }
    }
    if sorted[0].1 >= target {
        // Already above target at the lowest beatnote: report it directly.
        return Some(sorted[0].0);
    }
    None
}

// ---------------------------------------------------------------------------
// double-Gaussian fitting
// ---------------------------------------------------------------------------

/// Locate two resolvable maxima: the global peak plus the best second
/// peak whose prominence above the connecting saddle clears 3x the
/// high-frequency noise estimate.
fn find_two_peaks(values: &[f64]) -> Result<(usize, usize)> {
    let n = values.len();
    if n < 7 {
        return Err(CoreError::invalid_input("curve", "too few points for peak finding"));
    }
    let mut maxima: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] {
            maxima.push(i);
        }
    }
    // Robust noise estimate from first differences: for smooth curves the
    // median difference is tiny, so clean doublets always resolve.
    let mut diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let noise = diffs[diffs.len() / 2] / 0.9539;

    let p1 = *maxima
        .iter()
        .max_by(|&&a, &&b| values[a].partial_cmp(&values[b]).unwrap())
        .ok_or_else(|| CoreError::ResolutionError("no interior maxima in scan".to_string()))?;
    // Rank candidates by prominence above the saddle toward the main peak,
    // not by raw value: noise spurs on the main peak's shoulder are tall
    // but shallow, while the true companion rises far above its saddle.
    let mut best: Option<(usize, f64)> = None;
    for &m in &maxima {
        if m == p1 {
            continue;
        }
        let (lo, hi) = if m < p1 { (m, p1) } else { (p1, m) };
        let saddle = values[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
        let prominence = values[m] - saddle;
        if prominence > 3.0 * noise {
            match best {
                Some((_, v)) if v >= prominence => {}
                _ => best = Some((m, prominence)),
            }
        }
    }
    match best {
        Some((p2, _)) => Ok((p1.min(p2), p1.max(p2))),
        None => Err(CoreError::ResolutionError(
            "second peak with prominence above 3x the noise floor not found".to_string(),
        )),
    }
}

fn gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
    let u = (x - mu) / sigma;
    (-0.5 * u * u).exp()
}

/// Fit y = c + A1 G(x; mu1, s1) + A2 G(x; mu2, s2) by Levenberg-Marquardt
/// and report the center splitting |mu2 - mu1| with its standard error.
pub fn fit_double_gaussian(curve: &SpectrumCurve) -> Result<DoubleGaussianFit> {
    let x = &curve.axis;
    let y = &curve.values;
    let n = x.len();
    if n < 10 {
        return Err(CoreError::invalid_input("curve", "need at least 10 points to fit"));
    }
    let (i1, i2) = find_two_peaks(y)?;
    let offset0 = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma_guess = |i: usize| -> f64 {
        let half = offset0 + (y[i] - offset0) / 2.0;
        let mut left = i;
        while left > 0 && y[left] > half {
            left -= 1;
        }
        let mut right = i;
        while right + 1 < n && y[right] > half {
            right += 1;
        }
        let hwhm = 0.5 * (x[right] - x[left]).abs().max(x[1] - x[0]);
        hwhm / (2.0 * 2f64.ln()).sqrt()
    };
    let mut p = [
        offset0,
        y[i1] - offset0,
        x[i1],
        sigma_guess(i1),
        y[i2] - offset0,
        x[i2],
        sigma_guess(i2),
    ];

    let model = |p: &[f64; 7], xi: f64| -> f64 {
        p[0] + p[1] * gaussian(xi, p[2], p[3]) + p[4] * gaussian(xi, p[5], p[6])
    };
    let cost_of = |p: &[f64; 7]| -> f64 {
        x.iter().zip(y).map(|(&xi, &yi)| (model(p, xi) - yi).powi(2)).sum()
    };

    let mut lambda = 1e-3;
    let mut cost = cost_of(&p);
    for _ in 0..200 {
        // Build normal equations from the analytic Jacobian.
        let mut jtj = [[0.0f64; 7]; 7];
        let mut jtr = [0.0f64; 7];
        for (&xi, &yi) in x.iter().zip(y) {
            let g1 = gaussian(xi, p[2], p[3]);
            let g2 = gaussian(xi, p[5], p[6]);
            let r = p[0] + p[1] * g1 + p[4] * g2 - yi;
            let j = [
                1.0,
                g1,
                p[1] * g1 * (xi - p[2]) / (p[3] * p[3]),
                p[1] * g1 * (xi - p[2]).powi(2) / p[3].powi(3),
                g2,
                p[4] * g2 * (xi - p[5]) / (p[6] * p[6]),
                p[4] * g2 * (xi - p[5]).powi(2) / p[6].powi(3),
            ];
            for a in 0..7 {
                jtr[a] += j[a] * r;
                for b in a..7 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        for a in 0..7 {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(delta) = solve_symmetric(&damped, &rhs) else {
                lambda *= 8.0;
                continue;
            };
            let mut trial = p;
            for (t, d) in trial.iter_mut().zip(&delta) {
                *t += d;
            }
            if trial[3] <= 0.0 || trial[6] <= 0.0 || trial.iter().any(|v| !v.is_finite()) {
                lambda *= 8.0;
                continue;
            }
            let trial_cost = cost_of(&trial);
            if trial_cost < cost {
                let step: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let scale: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                let rel_change = (cost - trial_cost) / cost.max(1e-300);
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if step / scale < 1e-11 || rel_change < 1e-14 {
                    return finish_double_gaussian(x, &p, cost);
                }
                break;
            }
            lambda *= 8.0;
        }
        if !improved {
            if cost_of(&p).is_finite() && lambda > 1e10 {
                // Converged as far as damping allows.
                return finish_double_gaussian(x, &p, cost);
            }
            if lambda > 1e14 {
                return Err(CoreError::NonConvergence {
                    routine: "fit_double_gaussian",
                    details: format!("damping exhausted at cost {cost:.3e}, params {p:?}"),
                });
            }
        }
    }
    finish_double_gaussian(x, &p, cost)
}

fn finish_double_gaussian(x: &[f64], p: &[f64; 7], cost: f64) -> Result<DoubleGaussianFit> {
    let n = x.len();
    // Covariance of (mu1, mu2) from the unweighted normal equations.
    let mut jtj = [[0.0f64; 7]; 7];
    for &xi in x {
        let g1 = gaussian(xi, p[2], p[3]);
        let g2 = gaussian(xi, p[5], p[6]);
        let j = [
            1.0,
            g1,
            p[1] * g1 * (xi - p[2]) / (p[3] * p[3]),
            p[1] * g1 * (xi - p[2]).powi(2) / p[3].powi(3),
            g2,
            p[4] * g2 * (xi - p[5]) / (p[6] * p[6]),
            p[4] * g2 * (xi - p[5]).powi(2) / p[6].powi(3),
        ];
        for a in 0..7 {
            for b in a..7 {
                jtj[a][b] += j[a] * j[b];
            }
        }
    }
    for a in 0..7 {
        for b in 0..a {
            jtj[a][b] = jtj[b][a];
        }
    }
    let sigma2 = cost / (n.saturating_sub(7).max(1)) as f64;
    let mut e2 = [0.0; 7];
    e2[2] = 1.0;
    let mut e5 = [0.0; 7];
    e5[5] = 1.0;
    let (var_mu1, cov, var_mu2) = match (solve_symmetric(&jtj, &e2), solve_symmetric(&jtj, &e5)) {
        (Some(c2), Some(c5)) => (sigma2 * c2[2], sigma2 * c2[5], sigma2 * c5[5]),
        _ => (f64::NAN, f64::NAN, f64::NAN),
    };
    let var_split = (var_mu1 + var_mu2 - 2.0 * cov).max(0.0);
    let (lo, hi) = if p[2] <= p[5] { (1usize, 4usize) } else { (4usize, 1usize) };
    Ok(DoubleGaussianFit {
        splitting: (p[5] - p[2]).abs(),
        stderr: if var_split.is_finite() { var_split.sqrt() } else { 0.0 },
        centers: [p[2].min(p[5]), p[2].max(p[5])],
        amplitudes: [p[lo], p[hi]],
        sigmas: if p[2] <= p[5] { [p[3], p[6]] } else { [p[6], p[3]] },
        offset: p[0],
    })
}

/// Solve A x = b for symmetric positive-ish A by Gaussian elimination
/// with partial pivoting; None if singular.
fn solve_symmetric(a: &[[f64; 7]; 7], b: &[f64]) -> Option<Vec<f64>> {
    let n = 7;
    let mut m = [[0.0f64; 8]; 7];
    for i in 0..n {
        m[i][..7].copy_from_slice(&a[i]);
        m[i][7] = b[i];
    }
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row][col].abs() > m[pivot][col].abs() {
                pivot = row;
            }
        }
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = m[col][7];
        for k in col + 1..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// field calibration
// ---------------------------------------------------------------------------

/// Zero-intercept fit of field versus root power. Each measurement is
/// (power dBm, splitting Hz); fields come from the splitting-to-field
/// relation E = hbar x 2 pi x splitting / d. Optional per-point splitting
/// standard errors switch the fit to inverse-variance weighting with the
/// uncertainties taken as known (no residual rescaling), which is the
/// right convention when they come from per-scan lineshape fits.
pub fn calibrate_ccal(
    measurements: &[(f64, f64)],
    stderrs: Option<&[f64]>,
    dipole_moment: f64,
) -> Result<CalibrationFit> {
    if measurements.len() < 3 {
        return Err(CoreError::invalid_input(
            "measurements",
            format!("need at least 3 points, got {}", measurements.len()),
        ));
    }
    if let Some(s) = stderrs {
        if s.len() != measurements.len() {
            return Err(CoreError::invalid_input(
                "stderrs",
                format!("{} stderrs for {} measurements", s.len(), measurements.len()),
            ));
        }
    }
    let mut points = Vec::with_capacity(measurements.len());
    let mut weights = Vec::with_capacity(measurements.len());
    for (i, &(p_dbm, splitting)) in measurements.iter().enumerate() {
        ensure_finite("power_dbm", p_dbm)?;
        if !(splitting > 0.0) || !splitting.is_finite() {
            return Err(CoreError::invalid_input(
                "measurements",
                format!("splitting {splitting} Hz at point {i} must be positive"),
            ));
        }
        let root_p = 10f64.powf(p_dbm / 20.0);
        let field = spectro::at_splitting_to_field(splitting, dipole_moment)?;
        points.push((root_p, field));
        let w = match stderrs {
            Some(s) => {
                if !(s[i] > 0.0) || !s[i].is_finite() {
                    return Err(CoreError::invalid_input(
                        "stderrs",
                        format!("stderr {} Hz at point {i} must be positive", s[i]),
                    ));
                }
                let sigma_e = spectro::at_splitting_to_field(s[i], dipole_moment)?;
                1.0 / (sigma_e * sigma_e)
            }
            None => 1.0,
        };
        weights.push(w);
    }
    let sxx: f64 = points.iter().zip(&weights).map(|(&(xr, _), &w)| w * xr * xr).sum();
    let sxy: f64 = points.iter().zip(&weights).map(|(&(xr, e), &w)| w * xr * e).sum();
    let c_cal = sxy / sxx;
    let ssr: f64 = points.iter().zip(&weights).map(|(&(xr, e), &w)| w * (e - c_cal * xr).powi(2)).sum();
    let sst: f64 = points.iter().zip(&weights).map(|(&(_, e), &w)| w * e * e).sum();
    let slope_stderr = if stderrs.is_some() {
        // Known measurement errors: Var(c) = 1 / sum(x^2 / sigma^2).
        (1.0 / sxx).sqrt()
    } else {
        let dof = (points.len() as f64 - 1.0).max(1.0);
        (ssr / dof / sxx).sqrt()
    };
    let r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 0.0 };
    Ok(CalibrationFit { c_cal, slope_stderr, points, r_squared })
}

/// Scale factor (Hz per raw scan unit) from a scan containing the main
/// peak and its fine-structure companion at a known 92 MHz separation.
pub fn calibrate_frequency_axis(curve: &SpectrumCurve) -> Result<f64> {
    let fit = fit_double_gaussian(curve)?;
    if fit.splitting <= 0.0 {
        return Err(CoreError::ResolutionError(
            "reference peaks coincide; cannot set a frequency scale".to_string(),
        ));
    }
    Ok(FINE_STRUCTURE_REFERENCE_HZ / fit.splitting)
}

/// Simulated field-calibration campaign: for each RF power, synthesize a
/// coupling-detuning scan at the field c_cal x sqrt(P), average
/// `n_traces` noisy copies, and fit the splitting.
pub fn at_calibration_campaign(
    scenario: &Scenario,
    powers_dbm: &[f64],
) -> Result<Vec<AtMeasurement>> {
    scenario.validate()?;
    if powers_dbm.is_empty() {
        return Err(CoreError::invalid_input("powers_dbm", "need at least one power"));
    }
    // One detuning axis covering the largest splitting with room for the
    // doublet tails.
    let p_max = powers_dbm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let split_max =
        scenario.dipole_moment * scenario.c_cal * 10f64.powf(p_max / 20.0) / HBAR / (2.0 * std::f64::consts::PI);
    let half_span = 0.75 * split_max + 15e6;
    let n_points = 401;
    let scan: Vec<f64> = (0..n_points)
        .map(|i| -half_span + 2.0 * half_span * i as f64 / (n_points - 1) as f64)
        .collect();

    let mut out = Vec::with_capacity(powers_dbm.len());
    for (pi, &p_dbm) in powers_dbm.iter().enumerate() {
        ensure_finite("power_dbm", p_dbm)?;
        let field = scenario.c_cal * 10f64.powf(p_dbm / 20.0);
        let mut system = scenario.system.clone();
        system.omega_rf = scenario.dipole_moment * field / HBAR;
        system.delta_rf = 0.0;
        let clean = transmission_spectrum(&system, &scan, false)?;
        let mut averaged = vec![0.0f64; clean.values.len()];
        for k in 0..scenario.n_traces {
            let seed = derive_seed(scenario.master_seed, &[TAG_AT_SCAN, pi as u64, k as u64]);
            let mut rng = rng_from_seed(seed);
            for (avg, &v) in averaged.iter_mut().zip(&clean.values) {
                let g: f64 = StandardNormal.sample(&mut rng);
                *avg += v + scenario.scan_noise * g;
            }
        }
        for avg in averaged.iter_mut() {
            *avg /= scenario.n_traces as f64;
        }
        let noisy = SpectrumCurve::new(
            scan.clone(),
            averaged,
            clean.axis_kind,
            scenario.n_traces as u32,
            false,
        )?;
        let fit = fit_double_gaussian(&noisy)?;
        out.push(AtMeasurement { power_dbm: p_dbm, splitting_hz: fit.splitting, stderr_hz: fit.stderr });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// EVM campaigns
// ---------------------------------------------------------------------------

/// Sample rate for a modem point: an integer multiple of the symbol rate
/// clearing both the synthesis Nyquist margin and 8 samples per symbol.
pub fn plan_modem_fs(f_b: f64, symbol_rate: f64) -> f64 {
    let sps = (4.5 * f_b / symbol_rate).ceil().max(8.0);
    sps * symbol_rate
}

fn sweep_points(sweep: &EvmSweep) -> Vec<(f64, f64)> {
    match sweep {
        EvmSweep::SymbolRates { rates, beatnote } =>
            rates.iter().map(|&r| (r, *beatnote)).collect(),
        EvmSweep::Beatnotes { beatnotes, symbol_rate } =>
            beatnotes.iter().map(|&b| (*symbol_rate, b)).collect(),
    }
}

/// Run an EVM sweep through the chosen channel. Each point generates the
/// PRBS stream, modulates, synthesizes `n_traces` noisy captures of the
/// same waveform, averages them coherently (synchronized digitizer), and
/// demodulates. Points are seeded independently of sweep order.
pub fn evm_campaign(
    scenario: &Scenario,
    sweep: &EvmSweep,
    channel: Channel,
) -> Result<Vec<EVMReport>> {
    scenario.validate()?;
    let points = sweep_points(sweep);
    if points.is_empty() {
        return Err(CoreError::invalid_input("sweep", "no sweep points"));
    }
    for (i, &(rate, f_b)) in points.iter().enumerate() {
        if !(f_b >= 2.5 * rate) {
            return Err(CoreError::Configuration(format!(
                "sweep point {i} (symbol rate {rate} Hz, beatnote {f_b} Hz) violates \
                 beatnote >= 2.5 x symbol rate"
            )));
        }
    }
    let responsivity = scenario.responsivity()?;
    let atomic_bw = scenario.bandwidth()?;
    let channel_id = match channel {
        Channel::Atomic => 0u64,
        Channel::Mixer => 1u64,
    };
    let mut reports = Vec::with_capacity(points.len());
    for (i, &(rate, f_b)) in points.iter().enumerate() {
        let stream = modem::generate_symbols(scenario.symbol_count, rate, SymbolSource::Prbs9)?;
        let fs = plan_modem_fs(f_b, rate);
        let wave = modem::qpsk_modulate(&stream, f_b, fs)?;
        let duration = scenario.symbol_count as f64 / rate;
        let drive = scenario.drive(
            scenario.modem_sig_power_dbm,
            f_b,
            Some(Modulation { envelope: wave.envelope, sample_rate: fs }),
        );
        let mut avg: Option<TimeTrace> = None;
        for k in 0..scenario.n_traces {
            let seed = derive_seed(scenario.master_seed, &[TAG_EVM, channel_id, i as u64, k as u64]);
            let trace = match channel {
                Channel::Atomic => {
                    synthesize_trace(
                        responsivity,
                        &atomic_bw,
                        &drive,
                        &scenario.noise,
                        scenario.homodyne_gain,
                        scenario.c_cal,
                        duration,
                        fs,
                        seed,
                    )?
                    .trace
                }
                Channel::Mixer => modem::reference_mixer_channel(
                    responsivity,
                    MIXER_CORNER_FACTOR * atomic_bw.f_c,
                    &drive,
                    &scenario.noise,
                    scenario.homodyne_gain,
                    scenario.c_cal,
                    duration,
                    fs,
                    seed,
                )?,
            };
            match &mut avg {
                None => avg = Some(trace),
                Some(acc) => {
                    for (a, s) in acc.samples.iter_mut().zip(&trace.samples) {
                        *a += s;
                    }
                }
            }
        }
        let mut trace = avg.expect("n_traces >= 1 by validation");
        let inv = 1.0 / scenario.n_traces as f64;
        for s in trace.samples.iter_mut() {
            *s *= inv;
        }
        let constellation = modem::demodulate(&trace, f_b, &stream)?;
        reports.push(modem::evm(&constellation)?);
    }
    Ok(reports)
}

/// Beatnote where the Monte-Carlo mean EVM doubles from its value at the
/// lowest swept beatnote, interpolated on a log-frequency axis.
pub fn evm_doubling_frequency(
    scenario: &Scenario,
    beatnotes: &[f64],
    symbol_rate: f64,
    channel: Channel,
    n_seeds: usize,
) -> Result<f64> {
    if beatnotes.len() < 2 {
        return Err(CoreError::invalid_input("beatnotes", "need at least 2 beatnotes"));
    }
    if n_seeds == 0 {
        return Err(CoreError::invalid_input("n_seeds", "need at least one seed"));
    }
    let mut sorted = beatnotes.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sweep = EvmSweep::Beatnotes { beatnotes: sorted.clone(), symbol_rate };
    let mut means = vec![0.0f64; sorted.len()];
    for s in 0..n_seeds {
        let mut run = scenario.clone();
        run.master_seed = derive_seed(scenario.master_seed, &[TAG_DOUBLING, s as u64]);
        for (m, report) in means.iter_mut().zip(evm_campaign(&run, &sweep, channel)?) {
            *m += report.evm_rms;
        }
    }
    for m in means.iter_mut() {
        *m /= n_seeds as f64;
    }
    let baseline = means[0];
    for w in 0..sorted.len() - 1 {
        if means[w] < 2.0 * baseline && means[w + 1] >= 2.0 * baseline {
            let t = (2.0 * baseline - means[w]) / (means[w + 1] - means[w]);
            return Ok((sorted[w].ln() + t * (sorted[w + 1].ln() - sorted[w].ln())).exp());
        }
    }
    Err(CoreError::OutOfRange(format!(
        "mean EVM never doubles from its {baseline:.3} % baseline over the swept beatnotes"
    )))
}

/// Sample mean and standard deviation (n-1 normalization; 0 for n < 2).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectro::AxisKind;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    // ---- sensitivity_from_sweep -------------------------------------------

    #[test]
    fn exact_linear_sweep_reproduces_the_hand_evaluated_sensitivity() {
        // Unity slope through P0 = -80 dBm, rbw 10 Hz, c_cal 0.58.
        let points = vec![(-40.0, 40.0), (-35.0, 45.0), (-30.0, 50.0), (-25.0, 55.0)];
        let fit = sensitivity_from_sweep(&points, 10.0, 0.58).unwrap();
        assert_relative_eq!(fit.fit_slope, 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(fit.extrapolated_floor_power, -80.0, epsilon = 1e-10);
        assert_relative_eq!(fit.sensitivity, 1.83412104289766e-5, max_relative = 1e-12);
        assert_abs_diff_eq!(fit.stderr, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normalized_identity_sweep_gives_unit_sensitivity() {
        let points: Vec<(f64, f64)> = (0..5).map(|i| (10.0 * i as f64, 10.0 * i as f64)).collect();
        let fit = sensitivity_from_sweep(&points, 1.0, 1.0).unwrap();
        assert_relative_eq!(fit.sensitivity, 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(fit.extrapolated_floor_power, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn sweep_input_guards_fire() {
        let two = vec![(-40.0, 40.0), (-30.0, 50.0)];
        assert!(matches!(
            sensitivity_from_sweep(&two, 10.0, 0.58).unwrap_err(),
            CoreError::InvalidInput { .. }
        ));
        let narrow = vec![(-40.0, 40.0), (-35.0, 42.0), (-30.0, 44.0)];
        assert!(matches!(
            sensitivity_from_sweep(&narrow, 10.0, 0.58).unwrap_err(),
            CoreError::InvalidInput { .. }
        ));
        let falling = vec![(-40.0, 50.0), (-35.0, 45.0), (-30.0, 35.0)];
        assert!(matches!(
            sensitivity_from_sweep(&falling, 10.0, 0.58).unwrap_err(),
            CoreError::FitError(_)
        ));
    }

    // ---- capture planning --------------------------------------------------

    #[test]
    fn planned_captures_put_the_beatnote_on_a_bin_center() {
        for f_b in [100e3, 317e3, 1e6, 8e6] {
            let (fs, n) = plan_capture(f_b, 1e3, 1e6).unwrap();
            let cycles = f_b * n as f64 / fs;
            assert_relative_eq!(cycles, cycles.round(), max_relative = 1e-9);
            assert!(fs > 4.0 * f_b, "fs {fs} too low for beatnote {f_b}");
        }
    }

    // ---- extract_bandwidth --------------------------------------------------

    fn synthetic_curve(f_c: f64, s0: f64) -> Vec<SensitivityResult> {
        let mut f = f_c / 20.0;
        let mut out = Vec::new();
        while f <= 4.0 * f_c {
            let s = s0 * (1.0 + (f / f_c).powi(2)).sqrt();
            out.push(SensitivityResult {
                sensitivity: s,
                beatnote: f,
                fit_slope: 1.0,
                fit_intercept: 0.0,
                extrapolated_floor_power: -80.0,
                stderr: 0.0,
            });
            f *= 1.25;
        }
        out
    }

    #[test]
    fn doubling_frequency_of_first_order_curve_is_root_three_f_c() {
        for f_c in [1e6, 3e6, 8e6] {
            let result = extract_bandwidth(&synthetic_curve(f_c, 1.06e-5)).unwrap();
            assert_relative_eq!(result.f_3db, 3f64.sqrt() * f_c, max_relative = 0.01);
            assert!(result.f_amp3db < result.f_3db);
            assert_relative_eq!(result.f_amp3db, f_c, max_relative = 0.02);
        }
    }

    #[test]
    fn flat_curve_reports_out_of_range() {
        let flat: Vec<SensitivityResult> = [1e5, 2e5, 4e5, 8e5]
            .iter()
            .map(|&f| SensitivityResult {
                sensitivity: 1e-5,
                beatnote: f,
                fit_slope: 1.0,
                fit_intercept: 0.0,
                extrapolated_floor_power: -80.0,
                stderr: 0.0,
            })
            .collect();
        assert!(matches!(extract_bandwidth(&flat).unwrap_err(), CoreError::OutOfRange(_)));
        assert!(matches!(
            extract_bandwidth(&flat[..3]).unwrap_err(),
            CoreError::InvalidInput { .. }
        ));
    }

    // ---- fit_double_gaussian -------------------------------------------------

    fn doublet(axis: &[f64], a: [f64; 2], mu: [f64; 2], sigma: [f64; 2], offset: f64) -> Vec<f64> {
        axis.iter()
            .map(|&x| {
                offset + a[0] * gaussian(x, mu[0], sigma[0]) + a[1] * gaussian(x, mu[1], sigma[1])
            })
            .collect()
    }

    fn axis_mhz(half_span: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| -half_span + 2.0 * half_span * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn clean_symmetric_doublet_fits_to_machine_grade_splitting() {
        let axis = axis_mhz(30e6, 241);
        let values = doublet(&axis, [0.4, 0.4], [-10e6, 10e6], [2e6, 2e6], 0.1);
        let curve =
            SpectrumCurve::new(axis, values, AxisKind::CouplingDetuning, 1, false).unwrap();
        let fit = fit_double_gaussian(&curve).unwrap();
        assert_relative_eq!(fit.splitting, 20e6, max_relative = 1e-6);
        assert_abs_diff_eq!(fit.centers[0], -10e6, epsilon = 20.0);
        assert_abs_diff_eq!(fit.centers[1], 10e6, epsilon = 20.0);
        assert_relative_eq!(fit.offset, 0.1, max_relative = 1e-4);
    }

    #[test]
    fn one_percent_noise_leaves_splitting_within_half_percent() {
        let axis = axis_mhz(30e6, 241);
        let clean = doublet(&axis, [0.4, 0.4], [-10e6, 10e6], [2e6, 2e6], 0.1);
        for seed in 0..50u64 {
            let mut rng = rng_from_seed(900 + seed);
            let noisy: Vec<f64> = clean
                .iter()
                .map(|&v| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    v + 0.01 * g
                })
                .collect();
            let curve = SpectrumCurve::new(
                axis.clone(),
                noisy,
                AxisKind::CouplingDetuning,
                1,
                false,
            )
            .unwrap();
            let fit = fit_double_gaussian(&curve).unwrap();
            assert_relative_eq!(fit.splitting, 20e6, max_relative = 0.005);
            assert!(fit.stderr > 0.0, "noisy fit must carry uncertainty");
        }
    }

    #[test]
    fn single_peak_is_a_resolution_error() {
        let axis = axis_mhz(30e6, 241);
        let values = doublet(&axis, [0.5, 0.0], [0.0, 10e6], [2e6, 2e6], 0.1);
        let curve =
            SpectrumCurve::new(axis, values, AxisKind::CouplingDetuning, 1, false).unwrap();
        assert!(matches!(
            fit_double_gaussian(&curve).unwrap_err(),
            CoreError::ResolutionError(_)
        ));
    }

    // ---- calibrate_ccal ---------------------------------------------------------

    fn splitting_for(c_cal: f64, p_dbm: f64, dipole: f64) -> f64 {
        let field = c_cal * 10f64.powf(p_dbm / 20.0);
        spectro::field_to_splitting(field, dipole).unwrap()
    }

    #[test]
    fn exact_measurements_recover_the_configured_slope() {
        let dipole = 2500.0 * spectro::consts::ATOMIC_DIPOLE;
        let meas: Vec<(f64, f64)> =
            (0..8).map(|i| (i as f64, splitting_for(0.58, i as f64, dipole))).collect();
        let fit = calibrate_ccal(&meas, None, dipole).unwrap();
        assert_relative_eq!(fit.c_cal, 0.58, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(fit.slope_stderr, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn doubling_all_splittings_doubles_the_slope() {
        let dipole = 2500.0 * spectro::consts::ATOMIC_DIPOLE;
        let meas: Vec<(f64, f64)> =
            (0..5).map(|i| (i as f64, splitting_for(0.58, i as f64, dipole))).collect();
        let doubled: Vec<(f64, f64)> = meas.iter().map(|&(p, s)| (p, 2.0 * s)).collect();
        let a = calibrate_ccal(&meas, None, dipole).unwrap();
        let b = calibrate_ccal(&doubled, None, dipole).unwrap();
        assert_relative_eq!(b.c_cal, 2.0 * a.c_cal, max_relative = 1e-12);
    }

    #[test]
    fn noisy_calibration_recovers_slope_with_honest_errors() {
        let dipole = 2500.0 * spectro::consts::ATOMIC_DIPOLE;
        let mut covered = 0usize;
        for seed in 0..100u64 {
            let mut rng = rng_from_seed(1700 + seed);
            let mut stderrs = Vec::with_capacity(8);
            let meas: Vec<(f64, f64)> = (0..8)
                .map(|i| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let truth = splitting_for(0.58, i as f64, dipole);
                    stderrs.push(0.02 * truth);
                    (i as f64, truth * (1.0 + 0.02 * g))
                })
                .collect();
            let fit = calibrate_ccal(&meas, Some(&stderrs), dipole).unwrap();
            assert_relative_eq!(fit.c_cal, 0.58, max_relative = 0.03);
            if (fit.c_cal - 0.58).abs() <= 2.0 * fit.slope_stderr {
                covered += 1;
            }
        }
        assert!(covered >= 90, "2-sigma coverage only {covered}/100");
    }

    #[test]
    fn bad_calibration_inputs_are_rejected() {
        let dipole = 2500.0 * spectro::consts::ATOMIC_DIPOLE;
        let short = vec![(0.0, 1e6), (1.0, 2e6)];
        assert!(calibrate_ccal(&short, None, dipole).is_err());
        let negative = vec![(0.0, 1e6), (1.0, -2e6), (2.0, 3e6)];
        assert!(calibrate_ccal(&negative, None, dipole).is_err());
    }

    // ---- calibrate_frequency_axis ---------------------------------------------

    #[test]
    fn reference_doublet_sets_the_scale_and_rescales_exactly() {
        // Peaks 0.46 raw units apart at a known 92 MHz separation.
        let axis: Vec<f64> = (0..401).map(|i| -0.5 + i as f64 / 400.0).collect();
        let values = doublet(&axis, [0.6, 0.25], [-0.23, 0.23], [0.03, 0.03], 0.1);
        let curve =
            SpectrumCurve::new(axis, values, AxisKind::CouplingDetuning, 1, false).unwrap();
        let scale = calibrate_frequency_axis(&curve).unwrap();
        assert_relative_eq!(scale, 200e6, max_relative = 1e-6);
        // Round trip: the rescaled separation is 92 MHz by construction.
        let fit = fit_double_gaussian(&curve).unwrap();
        assert_relative_eq!(fit.splitting * scale, 92e6, max_relative = 1e-12);
    }

    #[test]
    fn noisy_reference_scan_calibrates_within_a_percent() {
        let axis: Vec<f64> = (0..401).map(|i| -0.5 + i as f64 / 400.0).collect();
        let clean = doublet(&axis, [0.6, 0.25], [-0.23, 0.23], [0.03, 0.03], 0.1);
        for seed in 0..50u64 {
            let mut rng = rng_from_seed(42_000 + seed);
            let noisy: Vec<f64> = clean
                .iter()
                .map(|&v| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    v + 0.01 * g
                })
                .collect();
            let curve = SpectrumCurve::new(
                axis.clone(),
                noisy,
                AxisKind::CouplingDetuning,
                1,
                false,
            )
            .unwrap();
            let scale = calibrate_frequency_axis(&curve).unwrap();
            assert_relative_eq!(scale, 200e6, max_relative = 0.01);
        }
    }

    // ---- EVM campaigns -----------------------------------------------------------

    #[test]
    fn containment_violation_names_the_offending_point() {
        let scenario = Scenario::lab_default();
        let sweep = EvmSweep::SymbolRates { rates: vec![100e3, 400e3], beatnote: 500e3 };
        let err = evm_campaign(&scenario, &sweep, Channel::Atomic).unwrap_err();
        match err {
            CoreError::Configuration(msg) => {
                assert!(msg.contains("point 1"), "message should name the point: {msg}");
                assert!(msg.contains("400000"), "message should give the rate: {msg}");
            }
            other => panic!("expected configuration error, got {other:?}"),
        }
    }

    #[test]
    fn evm_grows_with_symbol_rate_on_the_atomic_channel() {
        let mut scenario = Scenario::lab_default();
        scenario.symbol_count = 255;
        let sweep = EvmSweep::SymbolRates { rates: vec![50e3, 100e3, 200e3, 400e3], beatnote: 2e6 };
        let mut means = vec![0.0f64; 4];
        for s in 0..5u64 {
            let mut run = scenario.clone();
            run.master_seed = derive_seed(scenario.master_seed, &[77, s]);
            for (m, r) in means.iter_mut().zip(evm_campaign(&run, &sweep, Channel::Atomic).unwrap())
            {
                *m += r.evm_rms;
            }
        }
        for w in means.windows(2) {
            assert!(w[1] > w[0], "mean EVM should rise with symbol rate: {means:?}");
        }
    }

    #[test]
    fn mixer_channel_is_flat_across_beatnotes() {
        let mut scenario = Scenario::lab_default();
        scenario.symbol_count = 255;
        let sweep =
            EvmSweep::Beatnotes { beatnotes: vec![0.5e6, 1e6, 2e6, 3e6], symbol_rate: 100e3 };
        let reports = evm_campaign(&scenario, &sweep, Channel::Mixer).unwrap();
        let evms: Vec<f64> = reports.iter().map(|r| r.evm_rms).collect();
        let mean = evms.iter().sum::<f64>() / evms.len() as f64;
        for &e in &evms {
            assert!(
                (e - mean).abs() <= 0.2 * mean,
                "mixer EVM {e} % strays from mean {mean} %: {evms:?}"
            );
        }
    }

    #[test]
    fn campaign_runs_are_reproducible() {
        let mut scenario = Scenario::lab_default();
        scenario.symbol_count = 127;
        let sweep = EvmSweep::SymbolRates { rates: vec![100e3], beatnote: 1e6 };
        let a = evm_campaign(&scenario, &sweep, Channel::Atomic).unwrap();
        let b = evm_campaign(&scenario, &sweep, Channel::Atomic).unwrap();
        assert_eq!(a[0].evm_rms.to_bits(), b[0].evm_rms.to_bits(), "same seed, same EVM");
    }

    // ---- statistics ----------------------------------------------------------------

    #[test]
    fn mean_and_std_match_hand_values() {
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(m, 2.5, max_relative = 1e-15);
        assert_relative_eq!(s, (5.0f64 / 3.0).sqrt(), max_relative = 1e-12);
        let (m1, s1) = mean_and_std(&[7.0]);
        assert_eq!(m1, 7.0);
        assert_eq!(s1, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// For exact-linear sweeps, raising every SNR by k dB moves the
        /// extrapolated floor by exactly -k / slope.
        #[test]
        fn snr_offset_shifts_the_floor_by_minus_k_over_slope(
            k in -20.0f64..20.0,
            slope in 0.5f64..2.0,
        ) {
            let base: Vec<(f64, f64)> =
                (0..5).map(|i| (-50.0 + 5.0 * i as f64, slope * (-50.0 + 5.0 * i as f64) + 70.0)).collect();
            let shifted: Vec<(f64, f64)> = base.iter().map(|&(p, s)| (p, s + k)).collect();
            let a = sensitivity_from_sweep(&base, 10.0, 0.58).unwrap();
            let b = sensitivity_from_sweep(&shifted, 10.0, 0.58).unwrap();
            prop_assert!(
                (b.extrapolated_floor_power - (a.extrapolated_floor_power - k / slope)).abs() < 1e-8
            );
        }

        /// The doubling criterion is relative: uniform scaling of the
        /// curve does not move the bandwidth.
        #[test]
        fn bandwidth_commutes_with_uniform_scaling(scale in 0.01f64..100.0) {
            let base = synthetic_curve(3e6, 1.06e-5);
            let scaled: Vec<SensitivityResult> = base
                .iter()
                .map(|r| SensitivityResult { sensitivity: r.sensitivity * scale, ..r.clone() })
                .collect();
            let a = extract_bandwidth(&base).unwrap();
            let b = extract_bandwidth(&scaled).unwrap();
            prop_assert!((a.f_3db - b.f_3db).abs() <= 1e-9 * a.f_3db);
        }

        /// Zero-intercept calibration is order-independent.
        #[test]
        fn calibration_slope_ignores_point_order(seed in 0u64..1000) {
            let dipole = 2500.0 * spectro::consts::ATOMIC_DIPOLE;
            let mut rng = rng_from_seed(seed);
            let mut meas: Vec<(f64, f64)> = (0..8)
                .map(|i| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (i as f64, splitting_for(0.58, i as f64, dipole) * (1.0 + 0.01 * g))
                })
                .collect();
            let a = calibrate_ccal(&meas, None, dipole).unwrap();
            meas.reverse();
            meas.swap(0, 3);
            let b = calibrate_ccal(&meas, None, dipole).unwrap();
            prop_assert!((a.c_cal - b.c_cal).abs() <= 1e-12 * a.c_cal);
        }
    }
}
