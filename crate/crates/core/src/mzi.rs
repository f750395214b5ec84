//! Synthetic time-tagged acquisition behind an unbalanced Mach-Zehnder
//! interferometer whose phase drifts freely.
//!
//! Consecutive wavepackets meet on the output beamsplitter; detection rates
//! come from the closed-form interference model at the instantaneous phase
//! and are sampled with Poisson statistics once per acquisition bin.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::NumberState;
use crate::interference::{closed_coincidences, closed_singles};

pub const SINGLES_FILE: &str = "singles.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const BIN_COINCIDENCES_FILE: &str = "coincidences.csv";
pub const EXPERIMENT_FILE: &str = "experiment.json";

/// Interferometer phase drift: offset plus linear drift, a slow sinusoid,
/// and an Ornstein-Uhlenbeck wander sampled on knots and linearly
/// interpolated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub offset_rad: f64,
    pub rate_rad_per_s: f64,
    pub sine_amplitude_rad: f64,
    pub sine_period_s: f64,
    pub ou_sigma_rad: f64,
    pub ou_correlation_s: f64,
    pub ou_knot_s: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            offset_rad: 0.3,
            rate_rad_per_s: 0.15,
            sine_amplitude_rad: 0.8,
            sine_period_s: 90.0,
            ou_sigma_rad: 0.4,
            ou_correlation_s: 30.0,
            ou_knot_s: 2.0,
        }
    }
}

impl DriftParams {
    /// A phase frozen at `offset_rad`.
    pub fn frozen(offset_rad: f64) -> Self {
        DriftParams {
            offset_rad,
            rate_rad_per_s: 0.0,
            sine_amplitude_rad: 0.0,
            ou_sigma_rad: 0.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.offset_rad,
            self.rate_rad_per_s,
            self.sine_amplitude_rad,
            self.ou_sigma_rad,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite || self.ou_sigma_rad < 0.0 {
            return Err(Error::Validation("drift parameters must be finite, sigma >= 0".into()));
        }
        if !(self.sine_period_s > 0.0 && self.ou_correlation_s > 0.0 && self.ou_knot_s > 0.0) {
            return Err(Error::Validation("drift time scales must be > 0".into()));
        }
        Ok(())
    }

    /// Upper bound on `|dφ/dt|` in rad/s, ignoring the random part.
    pub fn deterministic_rate_bound(&self) -> f64 {
        self.rate_rad_per_s.abs()
            + self.sine_amplitude_rad.abs() * std::f64::consts::TAU / self.sine_period_s
    }
}

/// A realized drift path over `[0, span]`.
#[derive(Debug, Clone)]
pub struct PhaseDrift {
    params: DriftParams,
    knots: Vec<f64>,
}

impl PhaseDrift {
    pub fn new(params: DriftParams, span_s: f64, seed: u64) -> Result<Self> {
        params.validate()?;
        let n = (span_s.max(0.0) / params.ou_knot_s).ceil() as usize + 2;
        let mut knots = Vec::with_capacity(n);
        if params.ou_sigma_rad > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            let keep = (-params.ou_knot_s / params.ou_correlation_s).exp();
            let kick = params.ou_sigma_rad * (1.0 - keep * keep).sqrt();
            let mut x = params.ou_sigma_rad * unit.sample(&mut rng);
            for _ in 0..n {
                knots.push(x);
                x = keep * x + kick * unit.sample(&mut rng);
            }
        } else {
            knots.resize(n, 0.0);
        }
        Ok(PhaseDrift { params, knots })
    }

    /// Unwrapped phase at `t_s`; past the realized span the wander is held.
    pub fn phase_at(&self, t_s: f64) -> f64 {
        let p = &self.params;
        let t = t_s.max(0.0);
        let pos = t / p.ou_knot_s;
        let k = pos.floor() as usize;
        let wander = if k + 1 < self.knots.len() {
            let f = pos - k as f64;
            self.knots[k] * (1.0 - f) + self.knots[k + 1] * f
        } else {
            *self.knots.last().unwrap_or(&0.0)
        };
        p.offset_rad
            + p.rate_rad_per_s * t
            + p.sine_amplitude_rad * (std::f64::consts::TAU * t / p.sine_period_s).sin()
            + wander
    }
}

/// Free-standing form of [`PhaseDrift::phase_at`].
pub fn phase_drift(params: &DriftParams, span_s: f64, seed: u64, t_s: f64) -> Result<f64> {
    Ok(PhaseDrift::new(*params, span_s, seed)?.phase_at(t_s))
}

/// Overlap after rotating one arm's polarization by `theta`: `M₀ cos²θ`.
pub fn theta_to_m(theta: f64, m0: f64) -> f64 {
    m0 * theta.cos().powi(2)
}

fn default_rep_period() -> f64 {
    24.67
}
fn default_mzi_delay() -> f64 {
    12.34
}
fn default_acq_bin() -> f64 {
    810.0
}
fn default_window() -> f64 {
    2.0
}
fn default_max_delta() -> u32 {
    3
}
fn default_cap() -> f64 {
    1e13
}
fn default_overlap0() -> f64 {
    1.0
}
fn default_efficiency() -> f64 {
    1.0
}

/// Everything needed to reproduce a synthetic acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: NumberState,
    /// Mean wavepacket overlap `M`; ignored when `theta_rad` is set.
    #[serde(default)]
    pub overlap: Option<f64>,
    /// Relative polarization angle; sets `M = overlap0 cos²θ`.
    #[serde(default)]
    pub theta_rad: Option<f64>,
    #[serde(default = "default_overlap0")]
    pub overlap0: f64,
    /// End-to-end detection probability per photon.
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    #[serde(default = "default_rep_period")]
    pub rep_period_ns: f64,
    /// Arm delay. Only documents the histogram geometry.
    #[serde(default = "default_mzi_delay")]
    pub mzi_delay_ns: f64,
    #[serde(default = "default_acq_bin")]
    pub acq_bin_ms: f64,
    pub n_bins: usize,
    /// Histogram covers delays `-max_delta_pulses..=max_delta_pulses`.
    #[serde(default = "default_max_delta")]
    pub max_delta_pulses: u32,
    #[serde(default = "default_window")]
    pub coincidence_window_ns: f64,
    #[serde(default)]
    pub dark_count_rate_hz: f64,
    #[serde(default)]
    pub drift: DriftParams,
    #[serde(default)]
    pub seed: u64,
    /// Emit expected counts (rounded) instead of Poisson draws.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_cap")]
    pub max_expected_counts: f64,
}

impl ExperimentConfig {
    pub fn new(state: NumberState, n_bins: usize, seed: u64) -> Self {
        ExperimentConfig {
            state,
            overlap: None,
            theta_rad: None,
            overlap0: default_overlap0(),
            efficiency: default_efficiency(),
            rep_period_ns: default_rep_period(),
            mzi_delay_ns: default_mzi_delay(),
            acq_bin_ms: default_acq_bin(),
            n_bins,
            max_delta_pulses: default_max_delta(),
            coincidence_window_ns: default_window(),
            dark_count_rate_hz: 0.0,
            drift: DriftParams::default(),
            seed,
            noiseless: false,
            max_expected_counts: default_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad(format!("efficiency {} outside (0, 1]", self.efficiency));
        }
        if !(self.rep_period_ns > 0.0) {
            return bad(format!("rep_period_ns {} must be > 0", self.rep_period_ns));
        }
        if !(self.acq_bin_ms > 0.0) {
            return bad(format!("acq_bin_ms {} must be > 0", self.acq_bin_ms));
        }
        if self.n_bins == 0 {
            return bad("n_bins must be > 0".into());
        }
        if !(self.dark_count_rate_hz >= 0.0) || !(self.coincidence_window_ns > 0.0) {
            return bad("dark counts must be >= 0 and the window > 0".into());
        }
        let m = self.effective_overlap();
        if !(0.0..=1.0).contains(&m) || !(0.0..=1.0).contains(&self.overlap0) {
            return bad(format!("overlap {m} outside [0, 1]"));
        }
        self.drift.validate()
    }

    pub fn effective_overlap(&self) -> f64 {
        match self.theta_rad {
            Some(theta) => theta_to_m(theta, self.overlap0),
            None => self.overlap.unwrap_or(1.0),
        }
    }

    pub fn pulses_per_bin(&self) -> f64 {
        self.acq_bin_ms * 1e-3 / (self.rep_period_ns * 1e-9)
    }

    pub fn span_s(&self) -> f64 {
        self.n_bins as f64 * self.acq_bin_ms * 1e-3
    }

    pub fn deltas(&self) -> Vec<i64> {
        let k = self.max_delta_pulses as i64;
        (-k..=k).collect()
    }
}

/// Scales the detection efficiency by `extra_loss ∈ (0, 1]`.
pub fn apply_loss(config: &ExperimentConfig, extra_loss: f64) -> Result<ExperimentConfig> {
    if !(extra_loss > 0.0 && extra_loss <= 1.0) {
        return Err(Error::Validation(format!(
            "extra loss {extra_loss} outside (0, 1]"
        )));
    }
    let mut out = config.clone();
    out.efficiency *= extra_loss;
    Ok(out)
}

/// Singles of one acquisition bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglesBin {
    pub index: usize,
    pub t_ms: f64,
    pub counts_c: u64,
    pub counts_d: u64,
    /// Hidden phase at the bin centre, kept for validation.
    pub true_phi: Option<f64>,
}

/// A synthetic detection record.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    pub singles: Vec<SinglesBin>,
    /// Delays in units of the repetition period, ascending.
    pub deltas: Vec<i64>,
    /// `coincidences[bin][k]` counts pairs at `deltas[k]`.
    pub coincidences: Vec<Vec<u64>>,
}

impl TagStream {
    /// Coincidences summed over bins, per delay.
    pub fn histogram(&self) -> Vec<(i64, u64)> {
        self.deltas
            .iter()
            .enumerate()
            .map(|(k, d)| (*d, self.coincidences.iter().map(|row| row[k]).sum()))
            .collect()
    }

    pub fn zero_delay_index(&self) -> Option<usize> {
        self.deltas.iter().position(|d| *d == 0)
    }

    /// Per-bin zero-delay coincidences.
    pub fn zero_delay(&self) -> Vec<u64> {
        match self.zero_delay_index() {
            Some(k) => self.coincidences.iter().map(|row| row[k]).collect(),
            None => vec![0; self.coincidences.len()],
        }
    }

    /// Per-bin mean over the nonzero delays.
    pub fn pedestal(&self) -> Vec<f64> {
        let side: Vec<usize> = (0..self.deltas.len())
            .filter(|k| self.deltas[*k] != 0)
            .collect();
        self.coincidences
            .iter()
            .map(|row| {
                if side.is_empty() {
                    0.0
                } else {
                    side.iter().map(|k| row[*k] as f64).sum::<f64>() / side.len() as f64
                }
            })
            .collect()
    }

    pub fn total_singles(&self) -> u64 {
        self.singles.iter().map(|b| b.counts_c + b.counts_d).sum()
    }
}

/// Expected counts of one bin at phase `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinExpectation {
    pub singles_c: f64,
    pub singles_d: f64,
    pub zero_delay: f64,
    pub side_delay: f64,
}

pub fn bin_expectation(config: &ExperimentConfig, phi: f64) -> Result<BinExpectation> {
    let pulses = config.pulses_per_bin();
    let eta = config.efficiency;
    let (n_c, n_d) = closed_singles(&config.state, config.effective_overlap(), phi)?;
    let dark_bin = config.dark_count_rate_hz * config.acq_bin_ms * 1e-3;
    let dark_window = config.dark_count_rate_hz * config.coincidence_window_ns * 1e-9;
    let (click_c, click_d) = (eta * n_c, eta * n_d);
    let accidental = dark_window * (click_c + click_d) + dark_window * dark_window;
    Ok(BinExpectation {
        singles_c: pulses * click_c + dark_bin,
        singles_d: pulses * click_d + dark_bin,
        zero_delay: pulses * (eta * eta * closed_coincidences(&config.state, phi) + accidental),
        side_delay: pulses * (click_c * click_d + accidental),
    })
}

fn draw<R: Rng>(rng: &mut R, mean: f64, noiseless: bool) -> u64 {
    if noiseless {
        return mean.round() as u64;
    }
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Generates the acquisition bin by bin; deterministic given `config.seed`.
pub fn synthesize(config: &ExperimentConfig) -> Result<TagStream> {
    config.validate()?;
    let drift = PhaseDrift::new(config.drift, config.span_s(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let deltas = config.deltas();
    let mut singles = Vec::with_capacity(config.n_bins);
    let mut coincidences = Vec::with_capacity(config.n_bins);
    for index in 0..config.n_bins {
        let t_ms = (index as f64 + 0.5) * config.acq_bin_ms;
        let phi = drift.phase_at(t_ms * 1e-3);
        let e = bin_expectation(config, phi)?;
        let largest = e.singles_c.max(e.singles_d);
        if largest > config.max_expected_counts {
            return Err(Error::CountOverflow {
                expected: largest,
                cap: config.max_expected_counts,
            });
        }
        singles.push(SinglesBin {
            index,
            t_ms,
            counts_c: draw(&mut rng, e.singles_c, config.noiseless),
            counts_d: draw(&mut rng, e.singles_d, config.noiseless),
            true_phi: Some(phi),
        });
        let row = deltas
            .iter()
            .map(|d| {
                let mean = if *d == 0 { e.zero_delay } else { e.side_delay };
                draw(&mut rng, mean, config.noiseless)
            })
            .collect();
        coincidences.push(row);
    }
    Ok(TagStream {
        singles,
        deltas,
        coincidences,
    })
}

/// Writes the stream files and the JSON sidecar into `dir`.
pub fn write_stream(dir: &Path, stream: &TagStream, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut w = BufWriter::new(File::create(dir.join(SINGLES_FILE))?);
    let with_phase = stream.singles.iter().all(|b| b.true_phi.is_some());
    if with_phase {
        writeln!(w, "bin_index,t_ms,counts_c,counts_d,true_phi")?;
    } else {
        writeln!(w, "bin_index,t_ms,counts_c,counts_d")?;
    }
    for b in &stream.singles {
        write!(w, "{},{},{},{}", b.index, b.t_ms, b.counts_c, b.counts_d)?;
        match (with_phase, b.true_phi) {
            (true, Some(phi)) => writeln!(w, ",{phi}")?,
            _ => writeln!(w)?,
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join(HISTOGRAM_FILE))?);
    writeln!(w, "delta_pulses,coincidences")?;
    for (d, c) in stream.histogram() {
        writeln!(w, "{d},{c}")?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join(BIN_COINCIDENCES_FILE))?);
    writeln!(w, "bin_index,delta_pulses,coincidences")?;
    for (b, row) in stream.coincidences.iter().enumerate() {
        for (d, c) in stream.deltas.iter().zip(row) {
            writeln!(w, "{b},{d},{c}")?;
        }
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join(EXPERIMENT_FILE))?);
    serde_json::to_writer_pretty(&mut w, config)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_records(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let found = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if found.len() < header.len() || header.iter().zip(found.iter()).any(|(a, b)| *a != b.trim()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header '{}'", header.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    k: usize,
    name: &str,
) -> Result<T> {
    let raw = rec
        .get(k)
        .ok_or_else(|| parse_err(path, line, format!("missing column '{name}'")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} value '{raw}'")))
}

/// Reads singles and per-bin coincidences written by [`write_stream`].
pub fn read_stream(dir: &Path) -> Result<TagStream> {
    let path = dir.join(SINGLES_FILE);
    let mut singles = Vec::new();
    for (line, rec) in read_records(&path, &["bin_index", "t_ms", "counts_c", "counts_d"])? {
        let true_phi = match rec.get(4).map(str::trim) {
            Some(s) if !s.is_empty() => Some(
                s.parse()
                    .map_err(|_| parse_err(&path, line, format!("bad true_phi value '{s}'")))?,
            ),
            _ => None,
        };
        singles.push(SinglesBin {
            index: field(&path, line, &rec, 0, "bin_index")?,
            t_ms: field(&path, line, &rec, 1, "t_ms")?,
            counts_c: field(&path, line, &rec, 2, "counts_c")?,
            counts_d: field(&path, line, &rec, 3, "counts_d")?,
            true_phi,
        });
    }
    for (k, b) in singles.iter().enumerate() {
        if b.index != k {
            return Err(parse_err(&path, k as u64 + 2, "bin indices must be 0, 1, 2, ..."));
        }
    }

    let path = dir.join(BIN_COINCIDENCES_FILE);
    let mut rows: Vec<(usize, i64, u64)> = Vec::new();
    for (line, rec) in read_records(&path, &["bin_index", "delta_pulses", "coincidences"])? {
        let bin: usize = field(&path, line, &rec, 0, "bin_index")?;
        if bin >= singles.len() {
            return Err(parse_err(&path, line, format!("bin {bin} has no singles")));
        }
        rows.push((
            bin,
            field(&path, line, &rec, 1, "delta_pulses")?,
            field(&path, line, &rec, 2, "coincidences")?,
        ));
    }
    let mut deltas: Vec<i64> = rows.iter().map(|r| r.1).collect();
    deltas.sort_unstable();
    deltas.dedup();
    let mut coincidences = vec![vec![0u64; deltas.len()]; singles.len()];
    for (bin, d, c) in rows {
        let k = deltas.binary_search(&d).expect("delta collected above");
        coincidences[bin][k] += c;
    }
    Ok(TagStream {
        singles,
        deltas,
        coincidences,
    })
}

/// Reads the aggregated histogram file.
pub fn read_histogram(path: &Path) -> Result<Vec<(i64, u64)>> {
    read_records(path, &["delta_pulses", "coincidences"])?
        .into_iter()
        .map(|(line, rec)| {
            Ok((
                field(path, line, &rec, 0, "delta_pulses")?,
                field(path, line, &rec, 1, "coincidences")?,
            ))
        })
        .collect()
}

pub fn read_experiment(dir: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(dir.join(EXPERIMENT_FILE))?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}
