//! Two-mode interference of photon-number superpositions on a balanced
//! beamsplitter.
//!
//! Two routes are provided. [`bs_output`] expands `U(|ψ_a⟩⊗|ψ_b⟩)` exactly in
//! the output Fock basis using `a† = (c†+d†)/√2`, `b† = (c†-d†)/√2`, with the
//! `b` input carrying an extra phase `nφ` on its `|n⟩` term. The closed forms
//! ([`closed_singles`], [`closed_coincidences`]) give the same expectation
//! values for mixed inputs of the `λ` family and include the `√M` overlap
//! damping of the first-order term.
//!
//! Normalization: the closed forms use the per-input convention, where
//! `N_c + N_d = ⟨n⟩` of a single input. The brute-force expansion describes
//! the whole pulse pair, so its singles are twice and its coincidences four
//! times the closed-form values; [`per_input`] converts. Normalized
//! quantities (`n_c`, visibilities, `C̄(0)`) agree in both conventions.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{mean_photon, NumberState};

/// Largest per-input cutoff accepted by [`bs_output`] unless overridden.
pub const DEFAULT_MAX_BRUTE_CUTOFF: usize = 4;

/// Pure state of the two output modes `c`, `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFockState {
    dim_c: usize,
    dim_d: usize,
    amplitudes: Vec<Complex64>,
}

impl JointFockState {
    pub fn zeros(dim_c: usize, dim_d: usize) -> Self {
        JointFockState {
            dim_c,
            dim_d,
            amplitudes: vec![Complex64::new(0.0, 0.0); dim_c * dim_d],
        }
    }

    /// Largest photon number representable in mode `c`.
    pub fn cutoff_c(&self) -> usize {
        self.dim_c - 1
    }

    pub fn cutoff_d(&self) -> usize {
        self.dim_d - 1
    }

    /// Amplitude `⟨n_c, m_d|ψ⟩`; zero outside the stored range.
    pub fn amplitude(&self, n_c: usize, m_d: usize) -> Complex64 {
        if n_c < self.dim_c && m_d < self.dim_d {
            self.amplitudes[n_c * self.dim_d + m_d]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    fn add(&mut self, n_c: usize, m_d: usize, z: Complex64) {
        self.amplitudes[n_c * self.dim_d + m_d] += z;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Iterates `(n_c, m_d, amplitude)` over the stored basis.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.amplitudes
            .iter()
            .enumerate()
            .map(move |(k, z)| (k / self.dim_d, k % self.dim_d, *z))
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Exact output of the balanced beamsplitter for pure inputs.
pub fn bs_output(a: &NumberState, b: &NumberState, phi: f64) -> Result<JointFockState> {
    bs_output_with_cutoff(a, b, phi, DEFAULT_MAX_BRUTE_CUTOFF)
}

pub fn bs_output_with_cutoff(
    a: &NumberState,
    b: &NumberState,
    phi: f64,
    max_cutoff: usize,
) -> Result<JointFockState> {
    for s in [a, b] {
        if s.lambda() < 1.0 {
            return Err(Error::UnsupportedMixedInput { lambda: s.lambda() });
        }
        if s.cutoff() > max_cutoff {
            return Err(Error::UnsupportedCutoff {
                cutoff: s.cutoff(),
                max: max_cutoff,
            });
        }
    }
    let amp_a = a.amplitudes();
    let amp_b: Vec<Complex64> = b
        .amplitudes()
        .into_iter()
        .enumerate()
        .map(|(n, z)| z * Complex64::from_polar(1.0, n as f64 * phi))
        .collect();

    let dim = a.cutoff() + b.cutoff() + 1;
    let mut out = JointFockState::zeros(dim, dim);
    for (n, za) in amp_a.iter().enumerate() {
        for (m, zb) in amp_b.iter().enumerate() {
            let weight = za * zb;
            if weight.norm_sqr() == 0.0 {
                continue;
            }
            // (a†)^n (b†)^m |0⟩ / √(n! m!) with each factor expanded binomially
            let prefactor =
                FRAC_1_SQRT_2.powi((n + m) as i32) / (factorial(n) * factorial(m)).sqrt();
            for k in 0..=n {
                for j in 0..=m {
                    let n_c = k + j;
                    let m_d = (n - k) + (m - j);
                    let sign = if (m - j) % 2 == 1 { -1.0 } else { 1.0 };
                    let coeff = prefactor
                        * binomial(n, k)
                        * binomial(m, j)
                        * sign
                        * (factorial(n_c) * factorial(m_d)).sqrt();
                    out.add(n_c, m_d, weight * coeff);
                }
            }
        }
    }
    Ok(out)
}

/// Mean photon numbers `(N_c, N_d)` of an output state.
pub fn singles_from_state(out: &JointFockState) -> (f64, f64) {
    out.iter().fold((0.0, 0.0), |(c, d), (n, m, z)| {
        let w = z.norm_sqr();
        (c + n as f64 * w, d + m as f64 * w)
    })
}

/// Zero-delay coincidences `Σ n_c m_d |⟨n_c m_d|ψ⟩|²`.
pub fn coincidences_from_state(out: &JointFockState) -> f64 {
    out.iter()
        .map(|(n, m, z)| (n * m) as f64 * z.norm_sqr())
        .sum()
}

/// Brute-force `(N_c, N_d, C(0))` rescaled to the per-input convention of
/// the closed forms.
pub fn per_input(out: &JointFockState) -> (f64, f64, f64) {
    let (c, d) = singles_from_state(out);
    (c / 2.0, d / 2.0, coincidences_from_state(out) / 4.0)
}

/// `|Σ_n √(n!/(n-k)! p_n p_{n-k}) e^{i(α_n - α_{n-k})}|²`, i.e. `|⟨a^k⟩|²` of
/// the pure branch.
fn coherence_amplitude_sqr(state: &NumberState, k: usize) -> f64 {
    let p = state.populations();
    let mut acc = Complex64::new(0.0, 0.0);
    for n in k..p.len() {
        let falling: f64 = (0..k).map(|j| (n - j) as f64).product();
        let mag = (falling * p[n] * p[n - k]).sqrt();
        acc += Complex64::from_polar(mag, state.phase(n) - state.phase(n - k));
    }
    acc.norm_sqr()
}

/// First-order coherence `C₁ = λ² |Σ √(n p_n p_{n-1}) e^{i(α_n-α_{n-1})}|²`.
pub fn first_order_coherence(state: &NumberState) -> f64 {
    state.lambda().powi(2) * coherence_amplitude_sqr(state, 1)
}

/// Second-order coherence `C₂ = λ² |Σ √(n(n-1) p_n p_{n-2}) e^{i(α_n-α_{n-2})}|²`.
pub fn second_order_coherence(state: &NumberState) -> f64 {
    state.lambda().powi(2) * coherence_amplitude_sqr(state, 2)
}

fn check_overlap(m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Validation(format!("overlap M = {m} outside [0, 1]")));
    }
    Ok(())
}

/// `N_{c,d} = ½[⟨n⟩ ± √M C₁ cos φ]`.
pub fn closed_singles(state: &NumberState, overlap: f64, phi: f64) -> Result<(f64, f64)> {
    check_overlap(overlap)?;
    let n = mean_photon(state);
    let osc = overlap.sqrt() * first_order_coherence(state) * phi.cos();
    Ok((0.5 * (n + osc), 0.5 * (n - osc)))
}

/// `C(0) = ⅛[⟨n(n-1)⟩ - C₂ cos 2φ]`. Not damped by the overlap.
pub fn closed_coincidences(state: &NumberState, phi: f64) -> f64 {
    0.125 * (state.factorial_moment(2) - second_order_coherence(state) * (2.0 * phi).cos())
}

/// Singles and coincidence visibilities `(v₁, v₂)`.
///
/// `v₂` is reported as zero for states without two-photon content.
pub fn visibilities(state: &NumberState, overlap: f64) -> Result<(f64, f64)> {
    check_overlap(overlap)?;
    let n = mean_photon(state);
    if n <= 0.0 {
        return Err(Error::UndefinedObservable("visibility of the vacuum".into()));
    }
    let v1 = overlap.sqrt() * first_order_coherence(state) / n;
    let nn = state.factorial_moment(2);
    let v2 = if nn > 0.0 {
        second_order_coherence(state) / nn
    } else {
        0.0
    };
    Ok((v1, v2))
}

/// `C̄(0) = C(0) / (N_c N_d)` with indistinguishable inputs (`M = 1`).
pub fn normalized_coincidence_curve(state: &NumberState, phi: f64) -> Result<f64> {
    normalized_coincidence_with_overlap(state, 1.0, phi)
}

pub fn normalized_coincidence_with_overlap(
    state: &NumberState,
    overlap: f64,
    phi: f64,
) -> Result<f64> {
    let (nc, nd) = closed_singles(state, overlap, phi)?;
    if mean_photon(state) <= 0.0 {
        return Err(Error::UndefinedObservable(
            "normalized coincidences of the vacuum".into(),
        ));
    }
    let c0 = closed_coincidences(state, phi);
    if c0 == 0.0 {
        return Ok(0.0);
    }
    Ok(c0 / (nc * nd))
}

/// `½ g²(0) (1 - v₂ cos 2φ) / (1 - v₁² cos² φ)`, the same curve written
/// through the measurable parameters.
pub fn normalized_coincidence_formula(g2: f64, v1: f64, v2: f64, phi: f64) -> f64 {
    0.5 * g2 * (1.0 - v2 * (2.0 * phi).cos()) / (1.0 - (v1 * phi.cos()).powi(2))
}

/// Singles visibility of a 0+1+2 state with arbitrary Fock phases:
/// `λ² p₁ (p₀ + 2p₂ + 2√(2p₀p₂) cos(2α₁-α₂)) / (p₁ + 2p₂)`.
pub fn v1_with_phases(state: &NumberState) -> Result<f64> {
    if state.cutoff() > 2 {
        return Err(Error::UnsupportedCutoff {
            cutoff: state.cutoff(),
            max: 2,
        });
    }
    let (p0, p1, p2) = (state.population(0), state.population(1), state.population(2));
    let n = p1 + 2.0 * p2;
    if n <= 0.0 {
        return Err(Error::UndefinedObservable("visibility of the vacuum".into()));
    }
    let dphase = 2.0 * state.phase(1) - state.phase(2);
    let inner = p0 + 2.0 * p2 + 2.0 * (2.0 * p0 * p2).sqrt() * dphase.cos();
    Ok(state.lambda().powi(2) * p1 * inner / n)
}

/// Closed-form observables at one interferometer phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceObservables {
    pub n_c: f64,
    pub n_d: f64,
    pub c0: f64,
    pub v1: f64,
    pub v2: f64,
    pub phi: f64,
}

pub fn observables(state: &NumberState, overlap: f64, phi: f64) -> Result<InterferenceObservables> {
    let (n_c, n_d) = closed_singles(state, overlap, phi)?;
    let (v1, v2) = visibilities(state, overlap)?;
    Ok(InterferenceObservables {
        n_c,
        n_d,
        c0: closed_coincidences(state, phi),
        v1,
        v2,
        phi,
    })
}

/// One row of a fringe curve: normalized singles, raw and normalized
/// zero-delay coincidences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub phi: f64,
    pub n_c: f64,
    pub n_d: f64,
    pub c0: f64,
    pub cbar: f64,
}

/// Evaluates the closed forms on `points` phases spanning `[0, 2π]`.
pub fn fringe_curve(state: &NumberState, overlap: f64, points: usize) -> Result<Vec<CurvePoint>> {
    if points < 2 {
        return Err(Error::Validation("fringe curve needs at least 2 points".into()));
    }
    check_overlap(overlap)?;
    if mean_photon(state) <= 0.0 {
        return Err(Error::UndefinedObservable("fringe of the vacuum".into()));
    }
    (0..points)
        .into_par_iter()
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / (points - 1) as f64;
            let (nc, nd) = closed_singles(state, overlap, phi)?;
            let total = nc + nd;
            Ok(CurvePoint {
                phi,
                n_c: nc / total,
                n_d: nd / total,
                c0: closed_coincidences(state, phi),
                cbar: normalized_coincidence_with_overlap(state, overlap, phi)?,
            })
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "phi,n_c,n_d,C0,Cbar")?;
    for p in curve {
        writeln!(w, "{},{},{},{},{}", p.phi, p.n_c, p.n_d, p.c0, p.cbar)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn half_half() -> NumberState {
        NumberState::pure(vec![0.5, 0.5]).unwrap()
    }

    fn published_state() -> NumberState {
        NumberState::with_lambda(vec![0.838, 0.051, 0.111], 0.734).unwrap()
    }

    #[test]
    fn noon_state_from_two_single_photons() {
        let one = NumberState::fock(1);
        let out = bs_output(&one, &one, 0.0).unwrap();
        assert!((out.amplitude(2, 0).re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((out.amplitude(0, 2).re + FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(out.amplitude(1, 1).norm() < 1e-15);
        let (n_c, n_d) = singles_from_state(&out);
        assert!((n_c - 1.0).abs() < 1e-14 && (n_d - 1.0).abs() < 1e-14);
        assert!(coincidences_from_state(&out).abs() < 1e-30);
    }

    #[test]
    fn vacuum_stays_vacuum() {
        let v = NumberState::vacuum();
        let out = bs_output(&v, &v, 1.3).unwrap();
        assert_eq!(out.amplitude(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(coincidences_from_state(&out), 0.0);
    }

    #[test]
    fn zero_plus_one_matches_printed_expansion() {
        // p0 = p1 = 1/2, α₁ = 0, φ = π
        let s = half_half();
        let phi = PI;
        let out = bs_output(&s, &s, phi).unwrap();
        let (p0, p1) = (0.5f64, 0.5f64);
        let pref = (2.0 * p0 * p1).sqrt() * Complex64::from_polar(1.0, phi / 2.0);
        let expect_10 = pref * (phi / 2.0).cos();
        let expect_01 = pref * Complex64::new(0.0, -(phi / 2.0).sin());
        let expect_20 = Complex64::from_polar(p1 / 2f64.sqrt(), phi);
        assert!((out.amplitude(0, 0) - Complex64::from(p0)).norm() < 1e-15);
        assert!((out.amplitude(1, 0) - expect_10).norm() < 1e-15);
        assert!((out.amplitude(0, 1) - expect_01).norm() < 1e-15);
        assert!((out.amplitude(2, 0) - expect_20).norm() < 1e-15);
        assert!((out.amplitude(0, 2) + expect_20).norm() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singles_of_half_half() {
        let s = half_half();
        let (c, d) = singles_from_state(&bs_output(&s, &s, 0.0).unwrap());
        assert!((c - 0.75).abs() < 1e-14 && (d - 0.25).abs() < 1e-14);
        let (c, d) = singles_from_state(&bs_output(&s, &s, FRAC_PI_2).unwrap());
        assert!((c - 0.5).abs() < 1e-14 && (d - 0.5).abs() < 1e-14);
    }

    #[test]
    fn coincidences_of_zero_one_two_state() {
        let s = NumberState::pure(vec![0.7, 0.2, 0.1]).unwrap();
        let out = bs_output(&s, &s, FRAC_PI_4).unwrap();
        let (_, _, c) = per_input(&out);
        assert!((c - 0.025).abs() < 1e-14, "{c}");
        // whole pulse pair
        assert!((coincidences_from_state(&out) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn mixed_input_rejected() {
        let s = NumberState::with_lambda(vec![0.5, 0.5], 0.9).unwrap();
        assert!(matches!(
            bs_output(&s, &s, 0.0),
            Err(Error::UnsupportedMixedInput { .. })
        ));
        let big = NumberState::fock(5);
        assert!(matches!(
            bs_output(&big, &big, 0.0),
            Err(Error::UnsupportedCutoff { .. })
        ));
    }

    #[test]
    fn closed_singles_zero_plus_one() {
        let p0 = 0.3;
        let s = NumberState::pure(vec![p0, 1.0 - p0]).unwrap();
        for phi in [0.0, 0.4, 1.9, PI] {
            let (c, d) = closed_singles(&s, 1.0, phi).unwrap();
            let n_c = c / (c + d);
            assert!((n_c - 0.5 * (1.0 + p0 * phi.cos())).abs() < 1e-14);
        }
        let (c, d) = closed_singles(&published_state(), 0.0, 0.7).unwrap();
        assert!((c - d).abs() < 1e-15);
        assert!((c - 0.273 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn published_state_visibilities() {
        let s = published_state();
        let (v1, v2) = visibilities(&s, 1.0).unwrap();
        assert!((v1 - 0.193).abs() < 1e-3, "{v1}");
        assert!((v2 - 0.451).abs() < 2e-3, "{v2}");
        let (p0, p1, p2) = (0.838f64, 0.051f64, 0.111f64);
        let printed =
            0.734f64.powi(2) * p1 * (p0 + 2.0 * (2.0 * p0 * p2).sqrt() + 2.0 * p2) / (p1 + 2.0 * p2);
        assert!((v1 - printed).abs() < 1e-14);
        assert!((v2 - 0.734f64.powi(2) * p0).abs() < 1e-14);
        assert!((v1_with_phases(&s).unwrap() - v1).abs() < 1e-14);
    }

    #[test]
    fn closed_coincidences_cases() {
        let (p0, p2) = (0.6, 0.4);
        let s = NumberState::pure(vec![p0, 0.0, p2]).unwrap();
        let c = closed_coincidences(&s, 0.0);
        assert!((c - 0.125 * 2.0 * p2 * (1.0 - p0)).abs() < 1e-15);
        let (_, _, brute) = per_input(&bs_output(&s, &s, 0.0).unwrap());
        assert!((brute - c).abs() < 1e-14);

        let flat = NumberState::with_lambda(vec![0.838, 0.051, 0.111], 0.0).unwrap();
        let c0 = closed_coincidences(&flat, 0.0);
        for phi in [0.3, 1.0, 2.2] {
            assert!((closed_coincidences(&flat, phi) - c0).abs() < 1e-16);
        }
    }

    #[test]
    fn normalized_coincidence_values() {
        let flat = NumberState::with_lambda(vec![0.838, 0.051, 0.111], 0.0).unwrap();
        let c = normalized_coincidence_curve(&flat, 0.0).unwrap();
        let g2 = crate::fock::g2_zero(&flat).unwrap();
        assert!((c - 0.5 * g2).abs() < 1e-12);
        assert!((c - 1.49).abs() < 1e-2);

        let s = published_state();
        let top = normalized_coincidence_curve(&s, FRAC_PI_2).unwrap();
        assert!((top - 2.16).abs() < 1e-2, "{top}");

        let one = NumberState::fock(1);
        assert_eq!(normalized_coincidence_curve(&one, 0.5).unwrap(), 0.0);
        assert!(normalized_coincidence_curve(&NumberState::vacuum(), 0.0).is_err());
    }

    #[test]
    fn normalized_coincidence_formula_matches_ratio() {
        let s = published_state();
        let g2 = crate::fock::g2_zero(&s).unwrap();
        let (v1, v2) = visibilities(&s, 1.0).unwrap();
        for k in 0..50 {
            let phi = k as f64 * 0.13;
            let a = normalized_coincidence_curve(&s, phi).unwrap();
            let b = normalized_coincidence_formula(g2, v1, v2, phi);
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn v1_phase_dependence() {
        let s = NumberState::new(vec![0.5, 0.3, 0.2], vec![0.0, PI], 1.0).unwrap();
        let v = v1_with_phases(&s).unwrap();
        let expected = 0.3 * (0.5 + 0.4 - 2.0 * 0.2f64.sqrt()) / 0.7;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.00239).abs() < 1e-5);
        // brute force with the same phases
        let out = bs_output(&s, &s, 0.0).unwrap();
        let (c, d) = singles_from_state(&out);
        assert!(((c - d) / (c + d) - v).abs() < 1e-13);

        let no_two = NumberState::new(vec![0.4, 0.6, 0.0], vec![0.8, 2.0], 0.9).unwrap();
        assert!((v1_with_phases(&no_two).unwrap() - 0.81 * 0.4).abs() < 1e-14);
        assert!(v1_with_phases(&NumberState::fock(3)).is_err());
    }

    #[test]
    fn curve_csv_header() {
        let curve = fringe_curve(&published_state(), 1.0, 5).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("phi,n_c,n_d,C0,Cbar\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
