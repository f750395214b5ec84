//! The inverse pipeline from a detection record to `{p₀, p₁, p₂, λ}`.

mod fit;
mod inversion;
mod phase;

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{cat_fidelity, density_of, purity};
use crate::interference::normalized_coincidence_formula;
use crate::mzi::TagStream;

pub use fit::{fit_coincidences, fit_lambda_linear, CoincidenceBin, CoincidenceFit, LambdaFit};
pub use inversion::{
    forward, inversion_candidates, invert_nearest, invert_two_photon, InversionResult,
    DEFAULT_CAT_ALPHA_SQ,
};
pub use phase::{
    extract_visibility, fold_phase, time_to_phase, MappedBin, PhaseGroup, PhaseMapped,
    PhasePosterior, PhaseTracker, StepModel, VisibilityEstimate, VisibilityMethod, DEFAULT_PHASE_BINS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub phase_bins: usize,
    /// Mean wavepacket overlap used to undo the singles damping.
    pub overlap: f64,
    pub method: VisibilityMethod,
    pub bootstrap: usize,
    pub seed: u64,
    pub alpha_sq: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            phase_bins: DEFAULT_PHASE_BINS,
            overlap: 1.0,
            method: VisibilityMethod::default(),
            bootstrap: 0,
            seed: 0,
            alpha_sq: DEFAULT_CAT_ALPHA_SQ,
        }
    }
}

/// Observables extracted from one record, before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Singles visibility as observed, including the overlap damping.
    pub v1: f64,
    pub v1_err: f64,
    pub v2: f64,
    pub v2_err: f64,
    pub g2: f64,
    pub g2_err: f64,
}

impl Measurement {
    /// `v₁` at unit overlap, as the inversion expects.
    pub fn v1_undamped(&self, overlap: f64) -> f64 {
        self.v1 / overlap.sqrt()
    }
}

/// Everything the measurement step derives from a record.
#[derive(Debug, Clone)]
pub struct Measured {
    pub measurement: Measurement,
    pub mapped: PhaseMapped,
    pub posterior: Vec<PhasePosterior>,
    pub coincidence: CoincidenceFit,
    pub step: StepModel,
}

fn coincidence_bins(stream: &TagStream, posterior: &[PhasePosterior]) -> (Vec<CoincidenceBin>, usize) {
    let zero = stream.zero_delay_index();
    let n_side = stream.deltas.len() - usize::from(zero.is_some());
    let bins = posterior
        .iter()
        .map(|p| {
            let row = &stream.coincidences[p.index];
            let s = &stream.singles[p.index];
            let zero_delay = zero.map(|k| row[k] as f64).unwrap_or(0.0);
            CoincidenceBin {
                singles: (s.counts_c + s.counts_d) as f64,
                zero_delay,
                side_sum: row.iter().map(|c| *c as f64).sum::<f64>() - zero_delay,
                cos_sq: p.cos_sq,
                cos_2phi: p.cos_2phi,
            }
        })
        .collect();
    (bins, n_side)
}

/// Extracts `v₁`, `v₂` and `g²(0)` from a record.
pub fn measure(stream: &TagStream, options: &AnalysisOptions) -> Result<Measured> {
    measure_with(stream, options, None)
}

/// [`measure`] with an optional starting point `(v₁, step model)` that skips
/// the step-model search.
pub fn measure_with(
    stream: &TagStream,
    options: &AnalysisOptions,
    warm: Option<(f64, StepModel)>,
) -> Result<Measured> {
    if stream.coincidences.len() != stream.singles.len() {
        return Err(Error::Validation(
            "singles and coincidences cover different bins".into(),
        ));
    }
    let mapped = time_to_phase(&stream.singles, options.phase_bins)?;
    let mut tracker = PhaseTracker::new(&stream.singles)?;
    let vis = match options.method {
        VisibilityMethod::PhaseTrack => match warm {
            Some((v, step)) => {
                tracker.set_step(step);
                tracker.fit_visibility_near(v)
            }
            None => tracker.fit_visibility(mapped.v_est),
        },
        VisibilityMethod::RawExtrema => {
            let est = extract_visibility(&stream.singles, VisibilityMethod::RawExtrema)?;
            match warm {
                Some((_, step)) => tracker.set_step(step),
                None => {
                    tracker.tune_step(est.v);
                }
            }
            est
        }
    };
    let mapped = mapped.with_visibility(vis.v);
    let posterior = tracker.posterior(vis.v);
    let (bins, n_side) = coincidence_bins(stream, &posterior);
    let mut coincidence = fit_coincidences(&bins, n_side, vis.v)?;
    if warm.is_none() && vis.std_err.is_finite() && vis.std_err > 0.0 {
        // the posterior phases scale with 1/v₁, so its error feeds into v₂ and g²
        let shifted = |v: f64| -> Result<CoincidenceFit> {
            let (bins, n_side) = coincidence_bins(stream, &tracker.posterior(v));
            fit_coincidences(&bins, n_side, v)
        };
        let h = vis.std_err;
        if let (Ok(hi), Ok(lo)) = (shifted(vis.v + h), shifted((vis.v - h).max(0.5 * vis.v))) {
            let dv2 = 0.5 * (hi.v2 - lo.v2);
            let dg2 = 0.5 * (hi.g2 - lo.g2);
            coincidence.v2_err = coincidence.v2_err.hypot(dv2);
            coincidence.g2_err = coincidence.g2_err.hypot(dg2);
        }
    }
    Ok(Measured {
        measurement: Measurement {
            v1: vis.v,
            v1_err: vis.std_err,
            v2: coincidence.v2,
            v2_err: coincidence.v2_err,
            g2: coincidence.g2,
            g2_err: coincidence.g2_err,
        },
        mapped,
        posterior,
        coincidence,
        step: tracker.step(),
    })
}

/// Standard deviations across bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainties {
    pub v1: f64,
    pub v2: f64,
    pub g2: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub lambda: f64,
    pub resamples: usize,
    pub failed: usize,
}

fn resample(stream: &TagStream, seed: u64, index: u64) -> TagStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut draw = |n: u64| -> u64 {
        if n == 0 {
            0
        } else {
            Poisson::new(n as f64).expect("positive mean").sample(&mut rng) as u64
        }
    };
    let mut out = stream.clone();
    for b in &mut out.singles {
        b.counts_c = draw(b.counts_c);
        b.counts_d = draw(b.counts_d);
    }
    for row in &mut out.coincidences {
        for c in row.iter_mut() {
            *c = draw(*c);
        }
    }
    out
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Poisson-resamples every count and repeats measurement and inversion.
///
/// Resample `k` draws from its own ChaCha stream of `seed`, so the result
/// does not depend on thread scheduling. `warm` is passed to
/// [`measure_with`]. Ambiguous inversions take the root
/// nearest to `reference`; infeasible ones are counted and skipped.
pub fn bootstrap(
    stream: &TagStream,
    options: &AnalysisOptions,
    resamples: usize,
    reference: [f64; 4],
    warm: Option<(f64, StepModel)>,
) -> Result<Uncertainties> {
    if resamples < 2 {
        return Err(Error::Validation("bootstrap needs at least 2 resamples".into()));
    }
    let runs: Vec<Option<[f64; 7]>> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let s = resample(stream, options.seed, k as u64);
            let m = measure_with(&s, options, warm).ok()?.measurement;
            let r = invert_nearest(m.v1_undamped(options.overlap), m.v2, m.g2, reference).ok()?;
            let lambda = r.lambda?;
            Some([m.v1, m.v2, m.g2, r.p[0], r.p[1], r.p[2], lambda])
        })
        .collect();
    let ok: Vec<[f64; 7]> = runs.iter().flatten().copied().collect();
    if ok.len() < 2 || ok.len() * 2 < resamples {
        return Err(Error::Infeasible(format!(
            "only {} of {resamples} bootstrap resamples could be inverted",
            ok.len()
        )));
    }
    let col = |j: usize| std_dev(&ok.iter().map(|r| r[j]).collect::<Vec<_>>());
    Ok(Uncertainties {
        v1: col(0),
        v2: col(1),
        g2: col(2),
        p0: col(3),
        p1: col(4),
        p2: col(5),
        lambda: col(6),
        resamples,
        failed: resamples - ok.len(),
    })
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub measured: Measured,
    pub inversion: InversionResult,
    pub uncertainties: Option<Uncertainties>,
}

/// Measurement, inversion and, if requested, bootstrap errors.
pub fn analyze(stream: &TagStream, options: &AnalysisOptions) -> Result<Analysis> {
    let measured = measure(stream, options)?;
    let m = measured.measurement;
    let inversion = invert_two_photon(m.v1_undamped(options.overlap), m.v2, m.g2)?;
    let uncertainties = if options.bootstrap > 0 {
        let warm = Some((m.v1, measured.step));
        Some(bootstrap(stream, options, options.bootstrap, inversion.as_array(), warm)?)
    } else {
        None
    };
    Ok(Analysis {
        measured,
        inversion,
        uncertainties,
    })
}

/// Summary record written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub p: [f64; 3],
    pub lambda: Option<f64>,
    pub purity: f64,
    pub g2: f64,
    /// `g²(0)` of the recovered state minus the measured one.
    pub g2_mismatch: Option<f64>,
    pub cat_alpha_sq: f64,
    pub cat_fidelity: f64,
    pub residual: f64,
    pub measured: Option<Measurement>,
    pub errors: BTreeMap<String, f64>,
}

/// Attaches purity, the `g²(0)` consistency check and the cat fidelity.
pub fn report(
    result: &InversionResult,
    alpha_sq: f64,
    measured: Option<&Measurement>,
    uncertainties: Option<&Uncertainties>,
) -> Result<Report> {
    if !(alpha_sq >= 0.0 && alpha_sq.is_finite()) {
        return Err(Error::Validation(format!("|alpha|^2 = {alpha_sq} must be >= 0")));
    }
    let state = result.state()?;
    let mut errors = BTreeMap::new();
    if let Some(m) = measured {
        errors.insert("v1".to_string(), m.v1_err);
        errors.insert("v2".to_string(), m.v2_err);
        errors.insert("g2".to_string(), m.g2_err);
    }
    if let Some(u) = uncertainties {
        for (k, v) in [
            ("v1", u.v1),
            ("v2", u.v2),
            ("g2", u.g2),
            ("p0", u.p0),
            ("p1", u.p1),
            ("p2", u.p2),
            ("lambda", u.lambda),
        ] {
            errors.insert(k.to_string(), v);
        }
    }
    Ok(Report {
        p: result.p,
        lambda: result.lambda,
        purity: purity(&density_of(&state)),
        g2: result.g2,
        g2_mismatch: measured.map(|m| result.g2 - m.g2),
        cat_alpha_sq: alpha_sq,
        cat_fidelity: cat_fidelity(&state, alpha_sq),
        residual: result.residual_norm,
        measured: measured.copied(),
        errors,
    })
}

/// Per-bin singles with assigned and, if known, true folded phases.
pub fn write_fringe_csv<W: Write>(mut w: W, stream: &TagStream, mapped: &PhaseMapped) -> Result<()> {
    writeln!(w, "bin_index,t_ms,n_c,phi,true_phi")?;
    for b in &mapped.bins {
        let s = &stream.singles[b.index];
        let truth = s.true_phi.map(|p| fold_phase(p).to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", b.index, s.t_ms, 0.5 * (1.0 + b.y), b.phi, truth)?;
    }
    Ok(())
}

/// Normalized zero-delay coincidences per intensity group with the fitted
/// model at the group phase.
pub fn write_coincidence_csv<W: Write>(mut w: W, stream: &TagStream, measured: &Measured) -> Result<()> {
    let groups = &measured.mapped.groups;
    let zero = stream.zero_delay_index();
    let n_side = stream.deltas.len() - usize::from(zero.is_some());
    let mut z = vec![0.0; groups.len()];
    let mut s = vec![0.0; groups.len()];
    for b in &measured.mapped.bins {
        let row = &stream.coincidences[b.index];
        let zd = zero.map(|k| row[k] as f64).unwrap_or(0.0);
        z[b.group] += zd;
        s[b.group] += (row.iter().map(|c| *c as f64).sum::<f64>() - zd) / n_side.max(1) as f64;
    }
    let m = &measured.measurement;
    writeln!(w, "phi,bins,zero_delay,pedestal,cbar,cbar_err,model")?;
    for (g, group) in groups.iter().enumerate() {
        if group.occupancy == 0 || s[g] <= 0.0 {
            continue;
        }
        let cbar = z[g] / s[g];
        let err = cbar * (1.0 / z[g].max(1.0) + n_side as f64 / (s[g] * n_side as f64)).sqrt();
        let model = normalized_coincidence_formula(m.g2, m.v1, m.v2, group.phi);
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            group.phi, group.occupancy, z[g], s[g], cbar, err, model
        )?;
    }
    Ok(())
}
