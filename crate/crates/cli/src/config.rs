//! Flat TOML run configurations. Every physical key carries its unit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use superpose::analysis::{AnalysisOptions, VisibilityMethod};
use superpose::emitter::{emission_state, GridConfig, PulseConfig};
use superpose::mzi::{DriftParams, ExperimentConfig};
use superpose::{Error, NumberState, Result};

/// Reads a TOML file, or returns the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Emitter keys shared by every subcommand that can simulate a pulse.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmitterKeys {
    pub preset: Option<String>,
    pub fwhm_ps: Option<f64>,
    pub lifetime_ps: Option<f64>,
    pub gamma_star_per_ps: Option<f64>,
    pub steps_per_scale: Option<f64>,
    pub pulse_halfwidth_fwhm: Option<f64>,
    pub decay_lifetimes: Option<f64>,
}

impl EmitterKeys {
    /// Starts from the named preset (`qd1` unless set) and applies overrides.
    pub fn pulse(&self, area_pi: f64) -> Result<PulseConfig> {
        let mut c = PulseConfig::preset(self.preset.as_deref().unwrap_or("qd1"), area_pi)?;
        if let Some(v) = self.fwhm_ps {
            c.fwhm_ps = v;
        }
        if let Some(v) = self.lifetime_ps {
            if !(v > 0.0) {
                return Err(Error::Validation(format!("lifetime_ps = {v} must be > 0")));
            }
            c.gamma_per_ps = 1.0 / v;
        }
        if let Some(v) = self.gamma_star_per_ps {
            c.gamma_star_per_ps = v;
        }
        let d = GridConfig::default();
        c.grid = GridConfig {
            steps_per_scale: self.steps_per_scale.unwrap_or(d.steps_per_scale),
            pulse_halfwidth_fwhm: self.pulse_halfwidth_fwhm.unwrap_or(d.pulse_halfwidth_fwhm),
            decay_lifetimes: self.decay_lifetimes.unwrap_or(d.decay_lifetimes),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiConfig {
    /// Explicit areas; overrides the start/stop/step grid.
    pub areas_pi: Option<Vec<f64>>,
    pub area_start_pi: f64,
    pub area_stop_pi: f64,
    pub area_step_pi: f64,
    /// Also dump the trajectory at this area.
    pub trajectory_area_pi: Option<f64>,
    pub trajectory_stride: usize,
    pub preset: Option<String>,
    pub fwhm_ps: Option<f64>,
    pub lifetime_ps: Option<f64>,
    pub gamma_star_per_ps: Option<f64>,
    pub steps_per_scale: Option<f64>,
    pub pulse_halfwidth_fwhm: Option<f64>,
    pub decay_lifetimes: Option<f64>,
}

impl Default for RabiConfig {
    fn default() -> Self {
        RabiConfig {
            areas_pi: None,
            area_start_pi: 0.0,
            area_stop_pi: 2.0,
            area_step_pi: 0.02,
            trajectory_area_pi: None,
            trajectory_stride: 10,
            preset: None,
            fwhm_ps: None,
            lifetime_ps: None,
            gamma_star_per_ps: None,
            steps_per_scale: None,
            pulse_halfwidth_fwhm: None,
            decay_lifetimes: None,
        }
    }
}

impl RabiConfig {
    pub fn emitter(&self) -> EmitterKeys {
        EmitterKeys {
            preset: self.preset.clone(),
            fwhm_ps: self.fwhm_ps,
            lifetime_ps: self.lifetime_ps,
            gamma_star_per_ps: self.gamma_star_per_ps,
            steps_per_scale: self.steps_per_scale,
            pulse_halfwidth_fwhm: self.pulse_halfwidth_fwhm,
            decay_lifetimes: self.decay_lifetimes,
        }
    }

    pub fn areas(&self) -> Result<Vec<f64>> {
        if let Some(list) = &self.areas_pi {
            return Ok(list.clone());
        }
        let (start, stop, step) = (self.area_start_pi, self.area_stop_pi, self.area_step_pi);
        if !(step > 0.0 && start.is_finite() && stop.is_finite()) {
            return Err(Error::Validation(format!("area_step_pi = {step} must be > 0")));
        }
        let count = ((stop - start) / step + 1e-9).floor();
        if count < 0.0 {
            return Ok(Vec::new());
        }
        Ok((0..=count as usize).map(|k| start + k as f64 * step).collect())
    }
}

/// Keys describing the input state: explicit populations, or an emitter
/// simulation at `area_pi`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateKeys {
    pub populations: Option<Vec<f64>>,
    pub phases_rad: Option<Vec<f64>>,
    pub lambda: f64,
    pub area_pi: Option<f64>,
}

impl StateKeys {
    pub fn state(&self, emitter: &EmitterKeys) -> Result<NumberState> {
        match (&self.populations, self.area_pi) {
            (Some(p), None) => {
                let phases = self
                    .phases_rad
                    .clone()
                    .unwrap_or_else(|| vec![0.0; p.len().saturating_sub(1)]);
                NumberState::new(p.clone(), phases, self.lambda)
            }
            (None, Some(area)) => {
                if self.phases_rad.is_some() {
                    return Err(Error::Config("phases_rad needs explicit populations".into()));
                }
                emission_state(&emitter.pulse(area)?)?.to_number_state(self.lambda)
            }
            (Some(_), Some(_)) => Err(Error::Config(
                "set either populations or area_pi, not both".into(),
            )),
            (None, None) => Err(Error::Config("state needs populations or area_pi".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FringeConfig {
    pub populations: Option<Vec<f64>>,
    pub phases_rad: Option<Vec<f64>>,
    pub lambda: f64,
    pub area_pi: Option<f64>,
    pub overlap: f64,
    pub points: usize,
    pub preset: Option<String>,
    pub fwhm_ps: Option<f64>,
    pub lifetime_ps: Option<f64>,
    pub gamma_star_per_ps: Option<f64>,
}

impl Default for FringeConfig {
    fn default() -> Self {
        FringeConfig {
            populations: None,
            phases_rad: None,
            lambda: 1.0,
            area_pi: None,
            overlap: 1.0,
            points: 201,
            preset: None,
            fwhm_ps: None,
            lifetime_ps: None,
            gamma_star_per_ps: None,
        }
    }
}

impl FringeConfig {
    pub fn state(&self) -> Result<NumberState> {
        let keys = StateKeys {
            populations: self.populations.clone(),
            phases_rad: self.phases_rad.clone(),
            lambda: self.lambda,
            area_pi: self.area_pi,
        };
        let emitter = EmitterKeys {
            preset: self.preset.clone(),
            fwhm_ps: self.fwhm_ps,
            lifetime_ps: self.lifetime_ps,
            gamma_star_per_ps: self.gamma_star_per_ps,
            ..Default::default()
        };
        keys.state(&emitter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub populations: Option<Vec<f64>>,
    pub phases_rad: Option<Vec<f64>>,
    pub lambda: f64,
    pub area_pi: Option<f64>,
    pub preset: Option<String>,
    pub fwhm_ps: Option<f64>,
    pub lifetime_ps: Option<f64>,
    pub gamma_star_per_ps: Option<f64>,
    pub overlap: Option<f64>,
    pub theta_rad: Option<f64>,
    pub overlap0: f64,
    pub efficiency: f64,
    pub rep_period_ns: f64,
    pub mzi_delay_ns: f64,
    pub acq_bin_ms: f64,
    pub n_bins: usize,
    pub max_delta_pulses: u32,
    pub coincidence_window_ns: f64,
    pub dark_count_rate_hz: f64,
    pub noiseless: bool,
    pub max_expected_counts: f64,
    pub drift_offset_rad: f64,
    pub drift_rate_rad_per_s: f64,
    pub drift_sine_amplitude_rad: f64,
    pub drift_sine_period_s: f64,
    pub drift_ou_sigma_rad: f64,
    pub drift_ou_correlation_s: f64,
    pub drift_ou_knot_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let base = ExperimentConfig::new(NumberState::vacuum(), 200, 0);
        let drift = DriftParams::default();
        SynthConfig {
            populations: None,
            phases_rad: None,
            lambda: 1.0,
            area_pi: None,
            preset: None,
            fwhm_ps: None,
            lifetime_ps: None,
            gamma_star_per_ps: None,
            overlap: None,
            theta_rad: None,
            overlap0: base.overlap0,
            efficiency: 0.01,
            rep_period_ns: base.rep_period_ns,
            mzi_delay_ns: base.mzi_delay_ns,
            acq_bin_ms: base.acq_bin_ms,
            n_bins: base.n_bins,
            max_delta_pulses: base.max_delta_pulses,
            coincidence_window_ns: base.coincidence_window_ns,
            dark_count_rate_hz: base.dark_count_rate_hz,
            noiseless: false,
            max_expected_counts: base.max_expected_counts,
            drift_offset_rad: drift.offset_rad,
            drift_rate_rad_per_s: drift.rate_rad_per_s,
            drift_sine_amplitude_rad: drift.sine_amplitude_rad,
            drift_sine_period_s: drift.sine_period_s,
            drift_ou_sigma_rad: drift.ou_sigma_rad,
            drift_ou_correlation_s: drift.ou_correlation_s,
            drift_ou_knot_s: drift.ou_knot_s,
        }
    }
}

impl SynthConfig {
    pub fn experiment(&self, seed: u64) -> Result<ExperimentConfig> {
        let keys = StateKeys {
            populations: self.populations.clone(),
            phases_rad: self.phases_rad.clone(),
            lambda: self.lambda,
            area_pi: self.area_pi,
        };
        let emitter = EmitterKeys {
            preset: self.preset.clone(),
            fwhm_ps: self.fwhm_ps,
            lifetime_ps: self.lifetime_ps,
            gamma_star_per_ps: self.gamma_star_per_ps,
            ..Default::default()
        };
        let mut c = ExperimentConfig::new(keys.state(&emitter)?, self.n_bins, seed);
        c.overlap = self.overlap;
        c.theta_rad = self.theta_rad;
        c.overlap0 = self.overlap0;
        c.efficiency = self.efficiency;
        c.rep_period_ns = self.rep_period_ns;
        c.mzi_delay_ns = self.mzi_delay_ns;
        c.acq_bin_ms = self.acq_bin_ms;
        c.max_delta_pulses = self.max_delta_pulses;
        c.coincidence_window_ns = self.coincidence_window_ns;
        c.dark_count_rate_hz = self.dark_count_rate_hz;
        c.noiseless = self.noiseless;
        c.max_expected_counts = self.max_expected_counts;
        c.drift = DriftParams {
            offset_rad: self.drift_offset_rad,
            rate_rad_per_s: self.drift_rate_rad_per_s,
            sine_amplitude_rad: self.drift_sine_amplitude_rad,
            sine_period_s: self.drift_sine_period_s,
            ou_sigma_rad: self.drift_ou_sigma_rad,
            ou_correlation_s: self.drift_ou_correlation_s,
            ou_knot_s: self.drift_ou_knot_s,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub phase_bins: usize,
    /// Mean wavepacket overlap used to undo the singles damping.
    pub overlap: f64,
    /// `phase-track` or `raw-extrema`.
    pub method: String,
    pub bootstrap_resamples: usize,
    pub cat_alpha_sq: f64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let d = AnalysisOptions::default();
        AnalyzeConfig {
            phase_bins: d.phase_bins,
            overlap: d.overlap,
            method: "phase-track".into(),
            bootstrap_resamples: 0,
            cat_alpha_sq: d.alpha_sq,
        }
    }
}

impl AnalyzeConfig {
    pub fn options(&self, seed: u64) -> Result<AnalysisOptions> {
        let method: VisibilityMethod = self.method.parse()?;
        Ok(AnalysisOptions {
            phase_bins: self.phase_bins,
            overlap: self.overlap,
            method,
            bootstrap: self.bootstrap_resamples,
            seed,
            alpha_sq: self.cat_alpha_sq,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    pub overlap: f64,
    pub cat_alpha_sq: f64,
}

impl Default for InvertConfig {
    fn default() -> Self {
        InvertConfig {
            overlap: 1.0,
            cat_alpha_sq: superpose::analysis::DEFAULT_CAT_ALPHA_SQ,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_grid_includes_both_ends() {
        let a = RabiConfig::default().areas().unwrap();
        assert_eq!(a.len(), 101);
        assert!((a[100] - 2.0).abs() < 1e-12);
        let c = RabiConfig {
            area_start_pi: 1.0,
            area_stop_pi: 0.5,
            ..Default::default()
        };
        assert!(c.areas().unwrap().is_empty());
    }

    #[test]
    fn state_needs_exactly_one_source() {
        let mut c = FringeConfig::default();
        assert!(matches!(c.state(), Err(Error::Config(_))));
        c.populations = Some(vec![0.5, 0.5]);
        c.area_pi = Some(1.0);
        assert!(matches!(c.state(), Err(Error::Config(_))));
        c.area_pi = None;
        assert_eq!(c.state().unwrap().populations(), &[0.5, 0.5]);
    }

    #[test]
    fn unit_suffixed_keys_round_trip() {
        let c: SynthConfig = toml::from_str("acq_bin_ms = 100.0\ndrift_rate_rad_per_s = 0.0\n").unwrap();
        assert_eq!(c.acq_bin_ms, 100.0);
        let e = SynthConfig {
            populations: Some(vec![0.9, 0.1]),
            ..c
        }
        .experiment(3)
        .unwrap();
        assert_eq!(e.drift.rate_rad_per_s, 0.0);
        assert_eq!(e.seed, 3);
        assert!(toml::from_str::<SynthConfig>("acq_bin = 100.0\n").is_err());
    }
}
