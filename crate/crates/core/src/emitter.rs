//! Pulsed resonant driving of a two-level emitter.
//!
//! The emitter density matrix follows
//!
//! ```text
//! dρ/dt = -i[H, ρ] + γ D[σ]ρ + (γ*/2) D[σ_z]ρ,   H = iΩ(t)(σ - σ†)
//! ```
//!
//! with `σ = |g⟩⟨e|` and `D[A]ρ = AρA† - ½{A†A, ρ}`. The emitted field is
//! `a_out = √γ σ`. Photon number and the zero-delay two-photon correlation
//! are time integrals over the trajectory; the latter uses the quantum
//! regression theorem, re-propagating the collapsed state `σρ(t)σ†` under
//! the same generator.
//!
//! Times are in ps and rates in 1/ps throughout.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::NumberState;

/// Discretization controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Steps per shortest time scale `min(τ, 1/γ, 1/(γ+γ*))`.
    pub steps_per_scale: f64,
    /// Gaussian support, in FWHM, on each side of the pulse centre.
    pub pulse_halfwidth_fwhm: f64,
    /// Free decay is followed until `γ t_end` reaches this value.
    pub decay_lifetimes: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            steps_per_scale: 50.0,
            pulse_halfwidth_fwhm: 4.0,
            decay_lifetimes: 10.0,
        }
    }
}

/// Drive and emitter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// Pulse area in units of π.
    pub area_pi: f64,
    /// FWHM of the pulse intensity profile `ξ(t)²`.
    pub fwhm_ps: f64,
    /// Spontaneous emission rate.
    pub gamma_per_ps: f64,
    /// Pure dephasing rate.
    #[serde(default)]
    pub gamma_star_per_ps: f64,
    #[serde(default)]
    pub grid: GridConfig,
}

/// Radiative lifetime shared by the presets.
pub const PRESET_LIFETIME_PS: f64 = 166.0;

impl PulseConfig {
    /// Neutral-exciton device: 40 ps pulses, 166 ps lifetime.
    pub fn qd1(area_pi: f64) -> Self {
        PulseConfig {
            area_pi,
            fwhm_ps: 40.0,
            gamma_per_ps: 1.0 / PRESET_LIFETIME_PS,
            gamma_star_per_ps: 0.0,
            grid: GridConfig::default(),
        }
    }

    /// Charged-exciton device: 15 ps pulses. The lifetime is borrowed from
    /// [`PulseConfig::qd1`].
    pub fn qd2(area_pi: f64) -> Self {
        PulseConfig {
            fwhm_ps: 15.0,
            ..Self::qd1(area_pi)
        }
    }

    pub fn preset(name: &str, area_pi: f64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "qd1" => Ok(Self::qd1(area_pi)),
            "qd2" => Ok(Self::qd2(area_pi)),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn with_area(mut self, area_pi: f64) -> Self {
        self.area_pi = area_pi;
        self
    }

    pub fn area_rad(&self) -> f64 {
        self.area_pi * PI
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Validation(format!("{what} = {v}")));
        if !(self.fwhm_ps > 0.0 && self.fwhm_ps.is_finite()) {
            return bad("fwhm_ps must be > 0, got", self.fwhm_ps);
        }
        if !(self.gamma_per_ps > 0.0 && self.gamma_per_ps.is_finite()) {
            return bad("gamma_per_ps must be > 0, got", self.gamma_per_ps);
        }
        if !(self.gamma_star_per_ps >= 0.0 && self.gamma_star_per_ps.is_finite()) {
            return bad("gamma_star_per_ps must be >= 0, got", self.gamma_star_per_ps);
        }
        if !(self.area_pi >= 0.0 && self.area_pi.is_finite()) {
            return bad("area_pi must be >= 0, got", self.area_pi);
        }
        let g = &self.grid;
        if !(g.steps_per_scale >= 4.0) {
            return bad("grid.steps_per_scale must be >= 4, got", g.steps_per_scale);
        }
        if !(g.pulse_halfwidth_fwhm >= 1.0) {
            return bad("grid.pulse_halfwidth_fwhm must be >= 1, got", g.pulse_halfwidth_fwhm);
        }
        if !(g.decay_lifetimes >= 1.0) {
            return bad("grid.decay_lifetimes must be >= 1, got", g.decay_lifetimes);
        }
        Ok(())
    }

    /// Half-width of the truncated pulse support.
    pub fn pulse_halfwidth_ps(&self) -> f64 {
        self.grid.pulse_halfwidth_fwhm * self.fwhm_ps
    }

    /// Mean photons per pulse in the drive, `n_in`, fixed by `A = 2∫Ω dt`
    /// with `Ω = √(n_in γ) ξ`.
    pub fn n_in(&self) -> f64 {
        let xi_integral = (4.0 * LN_2 / (PI * self.fwhm_ps.powi(2))).powf(0.25)
            * (PI * self.fwhm_ps.powi(2) / (2.0 * LN_2)).sqrt();
        let root = self.area_rad() / (2.0 * xi_integral);
        root * root / self.gamma_per_ps
    }
}

/// Normalized temporal profile, `∫ξ² dt = 1`, with `ξ²` of FWHM `τ`.
pub fn pulse_profile(fwhm_ps: f64, t_ps: f64) -> f64 {
    (4.0 * LN_2 / (PI * fwhm_ps * fwhm_ps)).powf(0.25)
        * (-2.0 * LN_2 * t_ps * t_ps / (fwhm_ps * fwhm_ps)).exp()
}

/// Classical Rabi frequency `Ω(t) = √(n_in γ) ξ(t)`, zero outside the
/// truncated support.
pub fn rabi_frequency(config: &PulseConfig, t_ps: f64) -> f64 {
    if t_ps.abs() > config.pulse_halfwidth_ps() || config.area_pi == 0.0 {
        return 0.0;
    }
    (config.n_in() * config.gamma_per_ps).sqrt() * pulse_profile(config.fwhm_ps, t_ps)
}

/// Two-level density matrix stored as `(ρ_gg, ρ_ee, ρ_ge)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rho2 {
    pub gg: f64,
    pub ee: f64,
    pub ge: Complex64,
}

impl Rho2 {
    pub const GROUND: Rho2 = Rho2 {
        gg: 1.0,
        ee: 0.0,
        ge: Complex64 { re: 0.0, im: 0.0 },
    };

    pub fn trace(&self) -> f64 {
        self.gg + self.ee
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let mean = 0.5 * (self.gg + self.ee);
        let half_gap = (0.25 * (self.gg - self.ee).powi(2) + self.ge.norm_sqr()).sqrt();
        mean - half_gap
    }

    fn axpy(&self, h: f64, k: &Rho2) -> Rho2 {
        Rho2 {
            gg: self.gg + h * k.gg,
            ee: self.ee + h * k.ee,
            ge: self.ge + k.ge * h,
        }
    }
}

struct Generator {
    gamma: f64,
    coherence_decay: f64,
}

impl Generator {
    fn new(c: &PulseConfig) -> Self {
        Generator {
            gamma: c.gamma_per_ps,
            coherence_decay: 0.5 * c.gamma_per_ps + c.gamma_star_per_ps,
        }
    }

    fn rhs(&self, omega: f64, r: &Rho2) -> Rho2 {
        let drive = 2.0 * omega * r.ge.re;
        let decay = self.gamma * r.ee;
        Rho2 {
            gg: drive + decay,
            ee: -drive - decay,
            ge: Complex64::from(omega * (r.ee - r.gg)) - r.ge * self.coherence_decay,
        }
    }

    /// One RK4 step; `omega` holds `Ω` at the start, midpoint and end.
    fn step(&self, r: &Rho2, omega: [f64; 3], dt: f64) -> Rho2 {
        let k1 = self.rhs(omega[0], r);
        let k2 = self.rhs(omega[1], &r.axpy(0.5 * dt, &k1));
        let k3 = self.rhs(omega[1], &r.axpy(0.5 * dt, &k2));
        let k4 = self.rhs(omega[2], &r.axpy(dt, &k3));
        Rho2 {
            gg: r.gg + dt / 6.0 * (k1.gg + 2.0 * k2.gg + 2.0 * k3.gg + k4.gg),
            ee: r.ee + dt / 6.0 * (k1.ee + 2.0 * k2.ee + 2.0 * k3.ee + k4.ee),
            ge: r.ge + (k1.ge + k2.ge * 2.0 + k3.ge * 2.0 + k4.ge) * (dt / 6.0),
        }
    }
}

/// Uniform time grid with the drive tabulated at nodes and midpoints.
struct Grid {
    t0: f64,
    dt: f64,
    steps: usize,
    /// First node at or after the end of the pulse support.
    pulse_end: usize,
    omega_node: Vec<f64>,
    omega_mid: Vec<f64>,
}

impl Grid {
    fn new(c: &PulseConfig) -> Self {
        let half = c.pulse_halfwidth_ps();
        let scale = c
            .fwhm_ps
            .min(1.0 / c.gamma_per_ps)
            .min(1.0 / (c.gamma_per_ps + c.gamma_star_per_ps));
        let target = scale / c.grid.steps_per_scale;
        let t0 = -half;
        let t_end = half.max(c.grid.decay_lifetimes / c.gamma_per_ps);
        let steps = ((t_end - t0) / target).ceil() as usize;
        let dt = (t_end - t0) / steps as f64;
        let pulse_end = (((half - t0) / dt).ceil() as usize).min(steps);
        let omega_node = (0..=pulse_end)
            .map(|k| rabi_frequency(c, t0 + k as f64 * dt))
            .collect();
        let omega_mid = (0..pulse_end)
            .map(|k| rabi_frequency(c, t0 + (k as f64 + 0.5) * dt))
            .collect();
        Grid {
            t0,
            dt,
            steps,
            pulse_end,
            omega_node,
            omega_mid,
        }
    }

    fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    fn omega(&self, k: usize) -> [f64; 3] {
        if k >= self.pulse_end {
            [0.0; 3]
        } else {
            [self.omega_node[k], self.omega_mid[k], self.omega_node[k + 1]]
        }
    }
}

/// Time-gridded emitter evolution and the emission integrals derived from it.
#[derive(Debug, Clone)]
pub struct TwoLevelTrajectory {
    pub times: Vec<f64>,
    pub rho: Vec<Rho2>,
    /// Mean number of emitted photons, `γ∫⟨σ†σ⟩dt`.
    pub n_out: f64,
    /// Zero-delay two-photon correlation `⟨n(n-1)⟩` of the emitted pulse.
    pub c0: f64,
    pub step_ps: f64,
}

impl TwoLevelTrajectory {
    /// Excited population right after the pulse support ends.
    pub fn excited_after_pulse(&self, config: &PulseConfig) -> f64 {
        let t = config.pulse_halfwidth_ps();
        let k = self
            .times
            .iter()
            .position(|x| *x >= t - 1e-9)
            .unwrap_or(self.times.len() - 1);
        self.rho[k].ee
    }
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// RK4 amplification factor of `ẏ = -γy` over one step.
fn rk4_decay_factor(gamma: f64, dt: f64) -> f64 {
    let z = -gamma * dt;
    1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0
}

/// Trapezoid sum of `y_k = y_0 r^k`, `k = 0..=n`, times `dt`. This is what
/// stepping the free decay and integrating it on the grid would produce.
fn geometric_trapezoid(y0: f64, r: f64, n: usize, dt: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let rn = r.powi(n as i32);
    let inner = if (1.0 - r).abs() < 1e-300 {
        (n - 1) as f64
    } else {
        r * (1.0 - r.powi(n as i32 - 1)) / (1.0 - r)
    };
    dt * y0 * (0.5 + inner + 0.5 * rn)
}

/// Integrates the master equation from the ground state.
pub fn evolve(config: &PulseConfig) -> Result<TwoLevelTrajectory> {
    config.validate()?;
    let grid = Grid::new(config);
    let gen = Generator::new(config);

    let mut rho = Vec::with_capacity(grid.steps + 1);
    rho.push(Rho2::GROUND);
    let mut current = Rho2::GROUND;
    for k in 0..grid.steps {
        current = gen.step(&current, grid.omega(k), grid.dt);
        let trace_error = (current.trace() - 1.0).abs();
        if !(trace_error <= 1e-6) {
            return Err(Error::Integration {
                t_ps: grid.time(k + 1),
                trace_error,
                step_ps: grid.dt,
            });
        }
        rho.push(current);
    }
    let times: Vec<f64> = (0..=grid.steps).map(|k| grid.time(k)).collect();
    let excited: Vec<f64> = rho.iter().map(|r| r.ee).collect();
    let n_out = config.gamma_per_ps * trapezoid(&excited, grid.dt);
    let c0 = regression_correlation(config, &grid, &gen, &excited)?;

    Ok(TwoLevelTrajectory {
        times,
        rho,
        n_out,
        c0,
        step_ps: grid.dt,
    })
}

/// `⟨n(n-1)⟩ = 2 ∫dt ∫_{τ>0} dτ γ² ⟨σ†σ⟩` of the collapsed state.
///
/// After a photon is emitted at `t` the emitter is in `ρ_ee(t)|g⟩⟨g|`;
/// emission times past the pulse contribute nothing since the ground state
/// is stationary without drive.
fn regression_correlation(
    config: &PulseConfig,
    grid: &Grid,
    gen: &Generator,
    excited: &[f64],
) -> Result<f64> {
    let gamma = config.gamma_per_ps;
    let decay = rk4_decay_factor(gamma, grid.dt);
    let later: Vec<Result<f64>> = (0..grid.pulse_end)
        .into_par_iter()
        .map(|start| {
            let mut r = Rho2::GROUND;
            let mut ee = Vec::with_capacity(grid.pulse_end - start + 1);
            ee.push(0.0);
            for k in start..grid.pulse_end {
                r = gen.step(&r, grid.omega(k), grid.dt);
                let trace_error = (r.trace() - 1.0).abs();
                if !(trace_error <= 1e-6) {
                    return Err(Error::Integration {
                        t_ps: grid.time(k + 1),
                        trace_error,
                        step_ps: grid.dt,
                    });
                }
                ee.push(r.ee);
            }
            let in_pulse = trapezoid(&ee, grid.dt);
            let tail = geometric_trapezoid(r.ee, decay, grid.steps - grid.pulse_end, grid.dt);
            Ok(gamma * (in_pulse + tail))
        })
        .collect();
    let mut integrand = vec![0.0; excited.len()];
    for (k, g) in later.into_iter().enumerate() {
        integrand[k] = gamma * excited[k] * g?;
    }
    Ok(2.0 * trapezoid(&integrand, grid.dt))
}

/// Zero-delay two-photon correlation `⟨n(n-1)⟩` of one emitted pulse.
pub fn two_photon_correlation(config: &PulseConfig) -> Result<f64> {
    Ok(evolve(config)?.c0)
}

/// Fock populations of the emitted pulse, truncated at two photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionState {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl EmissionState {
    /// `p₀ = 1 - N + C/2`, `p₁ = N - C`, `p₂ = C/2`.
    pub fn from_integrals(n_out: f64, c0: f64) -> Result<Self> {
        let raw = Self::raw(n_out, c0);
        for p in [raw.p0, raw.p1, raw.p2] {
            if p < -1e-6 {
                return Err(Error::Truncation { p0: raw.p0 });
            }
        }
        Ok(raw)
    }

    /// Population formulas without the truncation check.
    pub fn raw(n_out: f64, c0: f64) -> Self {
        EmissionState {
            p0: 1.0 - n_out + 0.5 * c0,
            p1: n_out - c0,
            p2: 0.5 * c0,
        }
    }

    pub fn mean_photon(&self) -> f64 {
        self.p1 + 2.0 * self.p2
    }

    /// The same populations as a [`NumberState`] with coherence `lambda`.
    pub fn to_number_state(&self, lambda: f64) -> Result<NumberState> {
        let clamp = |p: f64| p.max(0.0);
        let p = vec![clamp(self.p0), clamp(self.p1), clamp(self.p2)];
        let total: f64 = p.iter().sum();
        NumberState::with_lambda(p.into_iter().map(|x| x / total).collect(), lambda)
    }
}

pub fn emission_state(config: &PulseConfig) -> Result<EmissionState> {
    let traj = evolve(config)?;
    EmissionState::from_integrals(traj.n_out, traj.c0)
}

/// One point of a pulse-area sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiPoint {
    pub area_pi: f64,
    pub n_out: f64,
    pub c0: f64,
    pub populations: EmissionState,
}

/// Emission versus pulse area, other parameters taken from `template`.
pub fn rabi_sweep(template: &PulseConfig, areas_pi: &[f64]) -> Result<Vec<RabiPoint>> {
    if areas_pi.is_empty() {
        return Err(Error::Validation("empty pulse-area list".into()));
    }
    if let Some(a) = areas_pi.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Validation(format!("pulse area {a} must be >= 0")));
    }
    areas_pi
        .par_iter()
        .map(|&area_pi| {
            let traj = evolve(&template.with_area(area_pi))?;
            Ok(RabiPoint {
                area_pi,
                n_out: traj.n_out,
                c0: traj.c0,
                populations: EmissionState::raw(traj.n_out, traj.c0),
            })
        })
        .collect()
}

pub fn write_rabi_csv<W: Write>(mut w: W, points: &[RabiPoint]) -> std::io::Result<()> {
    writeln!(w, "area_pi,n_out,c0,p0,p1,p2")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.area_pi, p.n_out, p.c0, p.populations.p0, p.populations.p1, p.populations.p2
        )?;
    }
    Ok(())
}

/// Dumps every `stride`-th grid point.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    traj: &TwoLevelTrajectory,
    stride: usize,
) -> std::io::Result<()> {
    writeln!(w, "t_ps,rho_gg,rho_ee,re_rho_ge,im_rho_ge")?;
    let stride = stride.max(1);
    for (t, r) in traj.times.iter().zip(&traj.rho).step_by(stride) {
        writeln!(w, "{},{},{},{},{}", t, r.gg, r.ee, r.ge.re, r.ge.im)?;
    }
    Ok(())
}
