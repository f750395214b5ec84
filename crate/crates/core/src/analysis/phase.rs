//! Assigning interferometer phases to acquisition bins from the singles.
//!
//! The normalized imbalance `y = (c − d)/(c + d)` of each bin follows
//! `v₁ cos φ`. Besides the intensity-binning map, the phase path is tracked
//! with a hidden-Markov model on a phase grid: the drift is a wrapped random
//! walk and each bin contributes a Gaussian likelihood with binomial width.
//! Maximizing the marginal likelihood over `v₁` gives an estimate that is
//! not inflated by counting noise at the fringe extrema.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mzi::SinglesBin;

pub const DEFAULT_PHASE_BINS: usize = 20;

const MIN_STATES: usize = 180;
const MAX_STATES: usize = 1440;
const UNIFORM_JUMP: f64 = 0.01;
const DRIFT_CANDIDATES_RAD: [f64; 12] = [
    0.0, 0.005, 0.01, 0.02, 0.03, 0.04, 0.06, 0.08, 0.12, 0.16, 0.24, 0.32,
];
const SPREAD_CANDIDATES_RAD: [f64; 8] = [0.005, 0.01, 0.02, 0.035, 0.05, 0.1, 0.2, 0.4];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisibilityMethod {
    /// Marginal likelihood of a tracked phase path.
    #[default]
    PhaseTrack,
    /// Half the spread between the most extreme bins.
    RawExtrema,
}

impl std::str::FromStr for VisibilityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase-track" => Ok(VisibilityMethod::PhaseTrack),
            "raw-extrema" => Ok(VisibilityMethod::RawExtrema),
            other => Err(Error::Validation(format!(
                "unknown visibility method '{other}' (phase-track or raw-extrema)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedBin {
    pub index: usize,
    pub y: f64,
    pub total: u64,
    /// Folded phase in `[0, π]`.
    pub phi: f64,
    pub group: usize,
}

/// One equal-width interval of normalized intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGroup {
    pub y_lo: f64,
    pub y_hi: f64,
    pub phi: f64,
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMapped {
    /// Bins with at least one count, in time order.
    pub bins: Vec<MappedBin>,
    pub groups: Vec<PhaseGroup>,
    pub v_est: f64,
    pub noise_floor: f64,
}

fn fold_arccos(y: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return PI / 2.0;
    }
    (y / v).clamp(-1.0, 1.0).acos()
}

/// Folds an unwrapped phase onto `[0, π]`.
pub fn fold_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        TAU - w
    } else {
        w
    }
}

fn imbalance(singles: &[SinglesBin]) -> Vec<(usize, f64, u64)> {
    singles
        .iter()
        .filter(|b| b.counts_c + b.counts_d > 0)
        .map(|b| {
            let t = b.counts_c + b.counts_d;
            (b.index, (b.counts_c as f64 - b.counts_d as f64) / t as f64, t)
        })
        .collect()
}

fn noise_floor(data: &[(usize, f64, u64)]) -> f64 {
    let mut sigma: Vec<f64> = data.iter().map(|d| 1.0 / (d.2 as f64).sqrt()).collect();
    sigma.sort_by(f64::total_cmp);
    let typical = sigma[sigma.len() / 2];
    typical * ((2.0 * (data.len() as f64).ln()).max(0.0).sqrt() + 2.0)
}

/// Maps every bin to a folded phase through `φ = arccos(y / v_est)` and
/// sorts bins into `n_groups` equal-width intensity groups.
pub fn time_to_phase(singles: &[SinglesBin], n_groups: usize) -> Result<PhaseMapped> {
    if n_groups == 0 {
        return Err(Error::Validation("need at least one phase bin".into()));
    }
    let data = imbalance(singles);
    if data.len() < 2 {
        return Err(Error::Validation("need at least two bins with counts".into()));
    }
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d.1), hi.max(d.1)));
    let amplitude = 0.5 * (hi - lo);
    let floor = noise_floor(&data);
    if amplitude <= floor {
        return Err(Error::InsufficientContrast { amplitude, floor });
    }
    let width = (hi - lo) / n_groups as f64;
    let bins = data
        .iter()
        .map(|&(index, y, total)| MappedBin {
            index,
            y,
            total,
            phi: 0.0,
            group: (((y - lo) / width) as usize).min(n_groups - 1),
        })
        .collect();
    let groups = (0..n_groups)
        .map(|g| PhaseGroup {
            y_lo: lo + g as f64 * width,
            y_hi: lo + (g + 1) as f64 * width,
            phi: 0.0,
            occupancy: 0,
        })
        .collect();
    let mut mapped = PhaseMapped {
        bins,
        groups,
        v_est: amplitude.min(1.0),
        noise_floor: floor,
    };
    mapped.remap(mapped.v_est);
    Ok(mapped)
}

impl PhaseMapped {
    /// Recomputes phases for a new visibility estimate.
    pub fn remap(&mut self, v: f64) {
        self.v_est = v;
        for g in &mut self.groups {
            g.phi = fold_arccos(0.5 * (g.y_lo + g.y_hi), v);
            g.occupancy = 0;
        }
        for b in &mut self.bins {
            b.phi = fold_arccos(b.y, v);
            self.groups[b.group].occupancy += 1;
        }
    }

    pub fn with_visibility(mut self, v: f64) -> Self {
        self.remap(v);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityEstimate {
    pub v: f64,
    pub std_err: f64,
    pub method: VisibilityMethod,
}

/// Posterior phase moments of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePosterior {
    pub index: usize,
    pub cos_phi: f64,
    pub cos_sq: f64,
    pub cos_2phi: f64,
}

/// Hidden-Markov phase tracker over the bins of a singles record.
pub struct PhaseTracker {
    y: Vec<f64>,
    total: Vec<f64>,
    gaps: Vec<usize>,
    index: Vec<usize>,
    cos: Vec<f64>,
    kernel: Vec<f64>,
    step: StepModel,
}

/// Per-bin phase step distribution of the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepModel {
    pub drift_rad: f64,
    pub spread_rad: f64,
}

impl PhaseTracker {
    pub fn new(singles: &[SinglesBin]) -> Result<Self> {
        let data = imbalance(singles);
        if data.is_empty() {
            return Err(Error::Validation("no bins with counts".into()));
        }
        let gaps = std::iter::once(0)
            .chain(data.windows(2).map(|w| w[1].0 - w[0].0))
            .collect();
        let mut tracker = PhaseTracker {
            y: data.iter().map(|d| d.1).collect(),
            total: data.iter().map(|d| d.2 as f64).collect(),
            gaps,
            index: data.iter().map(|d| d.0).collect(),
            cos: Vec::new(),
            kernel: Vec::new(),
            step: StepModel {
                drift_rad: 0.0,
                spread_rad: 0.1,
            },
        };
        tracker.set_step(StepModel {
            drift_rad: 0.0,
            spread_rad: 0.1,
        });
        Ok(tracker)
    }

    /// Sets the per-bin phase step to a wrapped Gaussian with mean
    /// `drift_rad` and width `spread_rad`. One drift sign suffices because
    /// the singles cannot tell `φ` from `−φ`. The phase grid is refined
    /// so that a cell stays below half the step width.
    pub fn set_step(&mut self, step: StepModel) {
        let n = ((TAU / (0.5 * step.spread_rad)).ceil() as usize).clamp(MIN_STATES, MAX_STATES);
        if n != self.cos.len() {
            self.cos = (0..n)
                .map(|j| ((j as f64 + 0.5) * TAU / n as f64).cos())
                .collect();
        }
        let dphi = TAU / n as f64;
        let reach = (((step.drift_rad.abs() + 4.0 * step.spread_rad) / dphi).ceil() as usize)
            .clamp(1, n / 2 - 1);
        let mut k: Vec<f64> = (0..=2 * reach)
            .map(|m| {
                if m < reach {
                    return 0.0;
                }
                let x = ((m as f64 - reach as f64) * dphi - step.drift_rad) / step.spread_rad;
                (-0.5 * x * x).exp()
            })
            .collect();
        let norm: f64 = k.iter().sum();
        k.iter_mut().for_each(|w| *w *= (1.0 - UNIFORM_JUMP) / norm);
        self.kernel = k;
        self.step = step;
    }

    /// One transition step; `adjoint` runs it backwards in time.
    fn propagate(&self, from: &[f64], to: &mut [f64], adjoint: bool) {
        let n = self.cos.len();
        let reach = self.kernel.len() / 2;
        let jump = UNIFORM_JUMP * from.iter().sum::<f64>() / n as f64;
        for (j, out) in to.iter_mut().enumerate() {
            let mut acc = jump;
            for (m, w) in self.kernel.iter().enumerate() {
                let src = if adjoint {
                    j + n + m - reach
                } else {
                    j + n + reach - m
                };
                acc += w * from[src % n];
            }
            *out = acc;
        }
    }

    /// Fills `out` with the bin likelihood rescaled by its maximum and
    /// returns the log of that maximum.
    fn emission(&self, k: usize, v: f64, out: &mut [f64]) -> f64 {
        let (y, t) = (self.y[k], self.total[k]);
        let floor = 1.0 / (t * t);
        let mut best = f64::NEG_INFINITY;
        for (j, e) in out.iter_mut().enumerate() {
            let mu = v * self.cos[j];
            let var = ((1.0 - mu * mu) / t).max(floor);
            *e = -0.5 * (y - mu).powi(2) / var - 0.5 * var.ln();
            best = best.max(*e);
        }
        out.iter_mut().for_each(|e| *e = (*e - best).exp());
        best
    }

    /// Normalized forward messages and the log marginal likelihood.
    fn forward(&self, v: f64) -> (Vec<Vec<f64>>, f64) {
        let n = self.cos.len();
        let mut alphas = Vec::with_capacity(self.y.len());
        let mut log_like = 0.0;
        let mut prior = vec![1.0 / n as f64; n];
        let mut e = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for k in 0..self.y.len() {
            for _ in 0..self.gaps[k] {
                self.propagate(&prior, &mut scratch, false);
                std::mem::swap(&mut prior, &mut scratch);
            }
            let shift = self.emission(k, v, &mut e);
            let mut a: Vec<f64> = prior.iter().zip(&e).map(|(p, e)| p * e).collect();
            let z: f64 = a.iter().sum();
            log_like += z.ln() + shift;
            a.iter_mut().for_each(|x| *x /= z);
            prior.copy_from_slice(&a);
            alphas.push(a);
        }
        (alphas, log_like)
    }

    pub fn log_likelihood(&self, v: f64) -> f64 {
        self.forward(v).1
    }

    /// Posterior phase moments of every bin at visibility `v`.
    pub fn posterior(&self, v: f64) -> Vec<PhasePosterior> {
        let n = self.cos.len();
        let (alphas, _) = self.forward(v);
        let len = self.y.len();
        let mut out = vec![
            PhasePosterior {
                index: 0,
                cos_phi: 0.0,
                cos_sq: 0.0,
                cos_2phi: 0.0
            };
            len
        ];
        let mut beta = vec![1.0; n];
        let mut e = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for k in (0..len).rev() {
            let g: Vec<f64> = alphas[k].iter().zip(&beta).map(|(a, b)| a * b).collect();
            let z: f64 = g.iter().sum();
            let (mut c1, mut c2) = (0.0, 0.0);
            for (j, w) in g.iter().enumerate() {
                c1 += w * self.cos[j];
                c2 += w * self.cos[j] * self.cos[j];
            }
            out[k] = PhasePosterior {
                index: self.index[k],
                cos_phi: c1 / z,
                cos_sq: c2 / z,
                cos_2phi: 2.0 * c2 / z - 1.0,
            };
            if k == 0 {
                break;
            }
            self.emission(k, v, &mut e);
            for j in 0..n {
                tmp[j] = beta[j] * e[j];
            }
            for _ in 0..self.gaps[k] {
                self.propagate(&tmp, &mut scratch, true);
                std::mem::swap(&mut tmp, &mut scratch);
            }
            let z: f64 = tmp.iter().sum();
            for j in 0..n {
                beta[j] = tmp[j] / z;
            }
        }
        out
    }

    /// Picks the step model with the largest likelihood at visibility `v`
    /// by alternating searches over drift and spread.
    pub fn tune_step(&mut self, v: f64) -> StepModel {
        let mut best = StepModel {
            drift_rad: 0.0,
            spread_rad: 0.1,
        };
        let mut best_like = f64::NEG_INFINITY;
        for round in 0..4 {
            let trial: Vec<StepModel> = if round % 2 == 0 {
                DRIFT_CANDIDATES_RAD
                    .iter()
                    .map(|d| StepModel {
                        drift_rad: *d,
                        ..best
                    })
                    .collect()
            } else {
                SPREAD_CANDIDATES_RAD
                    .iter()
                    .map(|s| StepModel {
                        spread_rad: *s,
                        ..best
                    })
                    .collect()
            };
            for step in trial {
                self.set_step(step);
                let l = self.log_likelihood(v);
                if l > best_like {
                    best_like = l;
                    best = step;
                }
            }
        }
        self.set_step(best);
        best
    }

    pub fn step(&self) -> StepModel {
        self.step
    }

    fn golden_max(&self, mut a: f64, mut b: f64) -> f64 {
        let f = |v: f64| -self.log_likelihood(v);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-6 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    }

    /// Maximum-likelihood visibility and its curvature standard error. The
    /// step model is tuned at the starting value and again at the first
    /// estimate.
    pub fn fit_visibility(&mut self, start: f64) -> VisibilityEstimate {
        let top = 0.9999;
        let start = start.clamp(0.0, top);
        self.tune_step(start.max(0.01));
        let first = self.golden_max((0.5 * start - 0.02).max(0.0), (1.5 * start + 0.05).min(top));
        self.tune_step(first.max(0.01));
        self.fit_visibility_near(first)
    }

    /// Maximum-likelihood visibility within ±20% of `start`, keeping the
    /// current step model.
    pub fn fit_visibility_near(&mut self, start: f64) -> VisibilityEstimate {
        let top = 0.9999;
        let start = start.clamp(0.0, top);
        let v = self.golden_max((0.8 * start - 0.02).max(0.0), (1.2 * start + 0.02).min(top));
        let f = |v: f64| -self.log_likelihood(v);
        let h = (1e-3 * v).max(1e-4);
        let (lo, hi) = ((v - h).max(0.0), (v + h).min(top));
        let (f0, fl, fh) = (f(v), f(lo), f(hi));
        let curv = if lo < v && hi > v {
            2.0 * ((fh - f0) / (hi - v) - (f0 - fl) / (v - lo)) / (hi - lo)
        } else {
            f64::NAN
        };
        let std_err = if curv > 0.0 { 1.0 / curv.sqrt() } else { f64::NAN };
        VisibilityEstimate {
            v,
            std_err,
            method: VisibilityMethod::PhaseTrack,
        }
    }
}

/// Singles visibility `v₁` with a standard error.
pub fn extract_visibility(
    singles: &[SinglesBin],
    method: VisibilityMethod,
) -> Result<VisibilityEstimate> {
    let data = imbalance(singles);
    if data.len() < 2 {
        return Err(Error::Validation("need at least two bins with counts".into()));
    }
    let (lo, hi) = data.iter().enumerate().fold(
        ((0usize, f64::INFINITY), (0usize, f64::NEG_INFINITY)),
        |(lo, hi), (k, d)| {
            (
                if d.1 < lo.1 { (k, d.1) } else { lo },
                if d.1 > hi.1 { (k, d.1) } else { hi },
            )
        },
    );
    let raw = (0.5 * (hi.1 - lo.1)).clamp(0.0, 1.0);
    match method {
        VisibilityMethod::RawExtrema => {
            let var = |k: usize| (1.0 - data[k].1.powi(2)).max(0.0) / data[k].2 as f64;
            Ok(VisibilityEstimate {
                v: raw,
                std_err: 0.5 * (var(lo.0) + var(hi.0)).sqrt(),
                method,
            })
        }
        VisibilityMethod::PhaseTrack => Ok(PhaseTracker::new(singles)?.fit_visibility(raw)),
    }
}
