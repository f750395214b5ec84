//! Recovery of `{p₀, p₁, p₂, λ}` from the two visibilities and `g²(0)`.
//!
//! With `λ² = v₂/p₀` substituted and `p₂` eliminated through the `g²(0)`
//! relation, the system collapses to one scalar equation in `p₀`, which is
//! scanned for sign changes and bisected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{cat_fidelity, density_of, purity, NumberState};

/// `|α|²` used for the cat-state fidelity unless told otherwise.
pub const DEFAULT_CAT_ALPHA_SQ: f64 = 0.5;

const SCAN_POINTS: usize = 3000;
const ROOT_MERGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub p: [f64; 3],
    /// `None` when the measurements leave λ undetermined.
    pub lambda: Option<f64>,
    pub purity: f64,
    pub g2: f64,
    pub cat_fidelity: f64,
    pub residual_norm: f64,
}

impl InversionResult {
    /// The recovered state; an undetermined λ is taken as 0.
    pub fn state(&self) -> Result<NumberState> {
        NumberState::with_lambda(self.p.to_vec(), self.lambda.unwrap_or(0.0))
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p[0], self.p[1], self.p[2], self.lambda.unwrap_or(f64::NAN)]
    }
}

/// Forward model truncated at two photons: `(v₁, v₂, g²(0))`, with `v₁`
/// taken at unit overlap.
pub fn forward(p: [f64; 3], lambda: f64) -> (f64, f64, f64) {
    let [p0, p1, p2] = p;
    let l2 = lambda * lambda;
    let n = p1 + 2.0 * p2;
    let v1 = l2 * p1 * (p0 + 2.0 * (2.0 * p0 * p2).sqrt() + 2.0 * p2) / n;
    let v2 = if p2 > 0.0 { l2 * p0 } else { 0.0 };
    (v1, v2, 2.0 * p2 / (n * n))
}

/// The physical root of `g₂(s + p₂)² = 2p₂` with `s = 1 − p₀`.
fn p2_given(s: f64, g2: f64) -> f64 {
    let disc = (1.0 - 2.0 * g2 * s).max(0.0);
    g2 * s * s / ((1.0 - g2 * s) + disc.sqrt())
}

fn candidate(p0: f64, v2: f64, g2: f64) -> [f64; 4] {
    let s = 1.0 - p0;
    let p2 = p2_given(s, g2);
    let p1 = (s - p2).max(0.0);
    [p0, p1, p2, (v2 / p0).sqrt().min(1.0)]
}

fn v1_residual(p0: f64, v1: f64, v2: f64, g2: f64) -> f64 {
    let [p0, p1, p2, lambda] = candidate(p0, v2, g2);
    forward([p0, p1, p2], lambda).0 - v1
}

fn residual_norm(c: [f64; 4], v1: f64, v2: f64, g2: f64) -> f64 {
    let (f1, _, fg) = forward([c[0], c[1], c[2]], c[3]);
    let f2 = c[3] * c[3] * c[0];
    let sum = c[0] + c[1] + c[2] - 1.0;
    ((f1 - v1).powi(2) + (f2 - v2).powi(2) + (fg - g2).powi(2) + sum * sum).sqrt()
}

fn scan_grid(lo: f64) -> Vec<f64> {
    let width = 1.0 - lo;
    let floor = 1e-12_f64.min(width);
    let mut grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| lo + width * k as f64 / SCAN_POINTS as f64)
        .chain((0..=SCAN_POINTS).map(|k| {
            let t = k as f64 / SCAN_POINTS as f64;
            1.0 - width * (floor / width).powf(t)
        }))
        .filter(|p| *p >= lo && *p < 1.0)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn bisect(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// All physical solutions as `[p₀, p₁, p₂, λ]`, ordered by `p₀`.
pub fn inversion_candidates(v1: f64, v2: f64, g2: f64) -> Result<Vec<[f64; 4]>> {
    validate(v1, v2, g2)?;
    let lo = v2.max(1.0 - 1.0 / (2.0 * g2)).max(f64::MIN_POSITIVE);
    if lo >= 1.0 {
        return Ok(Vec::new());
    }
    let f = |p0: f64| v1_residual(p0, v1, v2, g2);
    let grid = scan_grid(lo);
    let mut roots: Vec<f64> = Vec::new();
    let values: Vec<f64> = grid.iter().map(|p| f(*p)).collect();
    if values[0] == 0.0 {
        roots.push(grid[0]);
    }
    for k in 1..grid.len() {
        let (a, b) = (values[k - 1], values[k]);
        if b == 0.0 {
            roots.push(grid[k]);
        } else if a != 0.0 && (a > 0.0) != (b > 0.0) {
            roots.push(bisect(grid[k - 1], grid[k], f));
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < ROOT_MERGE);
    Ok(roots.into_iter().map(|p0| candidate(p0, v2, g2)).collect())
}

fn validate(v1: f64, v2: f64, g2: f64) -> Result<()> {
    let in_unit = |x: f64| (0.0..1.0).contains(&x);
    if !in_unit(v1) || !in_unit(v2) || !(g2 >= 0.0 && g2.is_finite()) {
        return Err(Error::Validation(format!(
            "need v1, v2 in [0, 1) and g2 >= 0, got ({v1}, {v2}, {g2})"
        )));
    }
    Ok(())
}

fn finish(c: [f64; 4], lambda: Option<f64>, v1: f64, v2: f64, g2: f64) -> Result<InversionResult> {
    let p = [c[0], c[1], c[2]];
    let state = NumberState::with_lambda(p.to_vec(), lambda.unwrap_or(0.0))?;
    Ok(InversionResult {
        p,
        lambda,
        purity: purity(&density_of(&state)),
        g2: forward(p, c[3]).2,
        cat_fidelity: cat_fidelity(&state, DEFAULT_CAT_ALPHA_SQ),
        residual_norm: residual_norm(c, v1, v2, g2),
    })
}

/// Solves for the unique physical `{p₀, p₁, p₂, λ}`.
///
/// Inconsistent inputs give [`Error::Infeasible`]; several physical roots
/// give [`Error::Ambiguous`] listing all of them.
pub fn invert_two_photon(v1: f64, v2: f64, g2: f64) -> Result<InversionResult> {
    validate(v1, v2, g2)?;
    if g2 == 0.0 {
        // No two-photon component: v₁ = v₂ = λ²p₀ and nothing else is fixed.
        if (v1 - v2).abs() > 1e-9 {
            return Err(Error::Infeasible(format!(
                "g2 = 0 requires v1 = v2, got {v1} and {v2}"
            )));
        }
        if v2 == 0.0 {
            return finish([0.0, 1.0, 0.0, 0.0], None, v1, v2, g2);
        }
        let mid = 0.5 * (1.0 + v2);
        return Err(Error::Ambiguous {
            candidates: vec![
                [v2, 1.0 - v2, 0.0, 1.0],
                [mid, 1.0 - mid, 0.0, (v2 / mid).sqrt()],
            ],
        });
    }
    let mut roots = inversion_candidates(v1, v2, g2)?;
    match roots.len() {
        0 => Err(Error::Infeasible(format!(
            "no physical state gives v1 = {v1}, v2 = {v2}, g2 = {g2}"
        ))),
        1 => {
            let c = roots.pop().expect("one root");
            finish(c, Some(c[3]), v1, v2, g2)
        }
        _ => Err(Error::Ambiguous { candidates: roots }),
    }
}

/// Like [`invert_two_photon`] but resolves ambiguity toward `reference`.
pub fn invert_nearest(v1: f64, v2: f64, g2: f64, reference: [f64; 4]) -> Result<InversionResult> {
    match invert_two_photon(v1, v2, g2) {
        Err(Error::Ambiguous { candidates }) => {
            let dist = |c: &[f64; 4]| -> f64 {
                c.iter()
                    .zip(reference.iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum()
            };
            let best = candidates
                .into_iter()
                .min_by(|a, b| dist(a).total_cmp(&dist(b)))
                .expect("ambiguity has candidates");
            finish(best, Some(best[3]), v1, v2, g2)
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interference::visibilities;

    #[test]
    fn published_measurements() {
        let r = invert_two_photon(0.192, 0.452, 2.98).unwrap();
        let lambda = r.lambda.unwrap();
        assert!((r.p[0] - 0.838).abs() < 0.01, "{:?}", r);
        assert!((r.p[1] - 0.051).abs() < 0.01);
        assert!((r.p[2] - 0.111).abs() < 0.01);
        assert!((lambda - 0.734).abs() < 0.01);
        assert!(r.residual_norm < 1e-8);
        assert!((r.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_agrees_with_interference_module() {
        let p = [0.6, 0.3, 0.1];
        let s = NumberState::with_lambda(p.to_vec(), 0.8).unwrap();
        let (v1, v2) = visibilities(&s, 1.0).unwrap();
        let (f1, f2, g) = forward(p, 0.8);
        assert!((v1 - f1).abs() < 1e-14);
        assert!((v2 - f2).abs() < 1e-14);
        assert!((g - crate::fock::g2_zero(&s).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn p2_branch_is_physical() {
        for (s, g2) in [(0.16, 2.98), (0.5, 0.5), (1e-6, 3.0), (0.3, 1e-9)] {
            let p2 = p2_given(s, g2);
            assert!(p2 >= 0.0 && p2 <= s);
            let n = s + p2;
            assert!((g2 * n * n - 2.0 * p2).abs() < 1e-14);
        }
    }

    #[test]
    fn round_trip_known_state() {
        let p = [0.7, 0.2, 0.1];
        let (v1, v2, g2) = forward(p, 0.9);
        let r = invert_nearest(v1, v2, g2, [0.7, 0.2, 0.1, 0.9]).unwrap();
        for k in 0..3 {
            assert!((r.p[k] - p[k]).abs() < 1e-8);
        }
        assert!((r.lambda.unwrap() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn single_photon_boundary() {
        let r = invert_two_photon(0.0, 0.0, 0.0).unwrap();
        assert_eq!(r.p, [0.0, 1.0, 0.0]);
        assert_eq!(r.lambda, None);
        assert!((r.purity - 1.0).abs() < 1e-15);
        assert_eq!(r.cat_fidelity, 0.0);
    }

    #[test]
    fn inconsistent_inputs() {
        assert!(invert_two_photon(0.3, 0.1, 0.0).unwrap_err().is_infeasible());
        assert!(invert_two_photon(0.9, 0.05, 3.0).unwrap_err().is_infeasible());
        assert!(invert_two_photon(1.2, 0.1, 1.0).unwrap_err().is_validation());
        assert!(invert_two_photon(0.1, 0.1, -1.0).unwrap_err().is_validation());
    }
}
