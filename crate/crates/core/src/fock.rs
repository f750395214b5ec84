//! Photon-number states, their density matrices, and scalar observables.
//!
//! A [`NumberState`] mixes a pure superposition `Σ √p_n e^{iα_n} |n⟩` with
//! the diagonal mixture of the same populations, weighted by the coherence
//! parameter `λ`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Populations whose sum is off by less than this are renormalized silently.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Even-cat populations below this are dropped from the distribution tail.
pub const CAT_TAIL_EPS: f64 = 1e-12;

/// One emitted wavepacket in the Fock basis.
///
/// `phases[k]` is `α_{k+1}`; the vacuum phase is fixed to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NumberStateRepr", into = "NumberStateRepr")]
pub struct NumberState {
    populations: Vec<f64>,
    phases: Vec<f64>,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct NumberStateRepr {
    p: Vec<f64>,
    #[serde(default)]
    alpha: Vec<f64>,
    lambda: f64,
}

impl TryFrom<NumberStateRepr> for NumberState {
    type Error = Error;

    fn try_from(r: NumberStateRepr) -> Result<Self> {
        let alpha = if r.alpha.is_empty() {
            vec![0.0; r.p.len().saturating_sub(1)]
        } else {
            r.alpha
        };
        NumberState::new(r.p, alpha, r.lambda)
    }
}

impl From<NumberState> for NumberStateRepr {
    fn from(s: NumberState) -> Self {
        NumberStateRepr {
            p: s.populations,
            alpha: s.phases,
            lambda: s.lambda,
        }
    }
}

impl NumberState {
    pub fn new(populations: Vec<f64>, phases: Vec<f64>, lambda: f64) -> Result<Self> {
        if populations.is_empty() {
            return Err(Error::Validation("populations must not be empty".into()));
        }
        if phases.len() + 1 != populations.len() {
            return Err(Error::Validation(format!(
                "expected {} phases for cutoff {}, got {}",
                populations.len() - 1,
                populations.len() - 1,
                phases.len()
            )));
        }
        if let Some(p) = populations.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Validation(format!("population {p} is not a probability")));
        }
        if phases.iter().any(|a| !a.is_finite()) {
            return Err(Error::Validation("phases must be finite".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Validation(format!("lambda = {lambda} outside [0, 1]")));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "populations sum to {total}, not 1"
            )));
        }
        let populations = if (total - 1.0).abs() > 1e-14 {
            populations.into_iter().map(|p| p / total).collect()
        } else {
            populations
        };
        Ok(NumberState {
            populations,
            phases,
            lambda,
        })
    }

    /// Pure state (`λ = 1`) with all Fock phases zero.
    pub fn pure(populations: Vec<f64>) -> Result<Self> {
        let m = populations.len().saturating_sub(1);
        Self::new(populations, vec![0.0; m], 1.0)
    }

    /// All-zero phases with the given coherence.
    pub fn with_lambda(populations: Vec<f64>, lambda: f64) -> Result<Self> {
        let m = populations.len().saturating_sub(1);
        Self::new(populations, vec![0.0; m], lambda)
    }

    pub fn fock(n: usize) -> Self {
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        Self::pure(p).expect("Fock state is valid")
    }

    pub fn vacuum() -> Self {
        Self::fock(0)
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cutoff(&self) -> usize {
        self.populations.len() - 1
    }

    pub fn population(&self, n: usize) -> f64 {
        self.populations.get(n).copied().unwrap_or(0.0)
    }

    /// Fock phase `α_n`, with `α_0 = 0`.
    pub fn phase(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.phases.get(n - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Validation(format!("lambda = {lambda} outside [0, 1]")));
        }
        self.lambda = lambda;
        Ok(())
    }

    /// Amplitudes `√p_n e^{iα_n}` of the pure branch.
    pub fn amplitudes(&self) -> Vec<Complex64> {
        (0..self.populations.len())
            .map(|n| Complex64::from_polar(self.populations[n].sqrt(), self.phase(n)))
            .collect()
    }

    /// Expectation of the factorial moment `⟨n(n-1)...(n-k+1)⟩`.
    pub fn factorial_moment(&self, k: usize) -> f64 {
        self.populations
            .iter()
            .enumerate()
            .filter(|(n, _)| *n >= k)
            .map(|(n, p)| p * falling(n, k))
            .sum()
    }
}

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|j| (n - j) as f64).product()
}

/// Hermitian, unit-trace matrix in the Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Wraps `entries` after checking hermiticity, trace and positivity.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::Validation("density matrix must be square".into()));
        }
        let herm_err = (&entries - entries.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm_err > 1e-12 {
            return Err(Error::Validation(format!("not Hermitian (error {herm_err:e})")));
        }
        let tr = entries.trace();
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(Error::Validation(format!("trace {tr} is not 1")));
        }
        let rho = DensityMatrix { entries };
        let min_eig = rho.min_eigenvalue();
        if min_eig < -1e-10 {
            return Err(Error::Validation(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(rho)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// `ρ = λ|ψ⟩⟨ψ| + (1-λ) diag(p)`.
pub fn density_of(state: &NumberState) -> DensityMatrix {
    let amp = state.amplitudes();
    let dim = amp.len();
    let lambda = state.lambda();
    let entries = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            Complex64::new(state.populations()[i], 0.0)
        } else {
            amp[i] * amp[j].conj() * lambda
        }
    });
    // Valid by construction: convex mixture of two density matrices.
    DensityMatrix { entries }
}

/// `Tr(ρ²)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.entries.iter().map(|z| z.norm_sqr()).sum()
}

pub fn mean_photon(state: &NumberState) -> f64 {
    state.factorial_moment(1)
}

/// `⟨n(n-1)⟩ / ⟨n⟩²`.
pub fn g2_zero(state: &NumberState) -> Result<f64> {
    let n = mean_photon(state);
    if n <= 0.0 {
        return Err(Error::UndefinedObservable(
            "g2(0) of a state with zero mean photon number".into(),
        ));
    }
    Ok(state.factorial_moment(2) / (n * n))
}

/// Photon-number distribution of the even cat `|α⟩ + |-α⟩`, truncated once
/// the terms fall below `tail_eps` (and never before `min_len` entries).
pub fn cat_populations(alpha_sq: f64, min_len: usize, tail_eps: f64) -> Vec<f64> {
    let norm = alpha_sq.cosh();
    let mut out = Vec::new();
    // |α|^{2n}/n! built incrementally
    let mut term = 1.0;
    let mut n = 0usize;
    loop {
        if n > 0 {
            term *= alpha_sq / n as f64;
        }
        let p = if n % 2 == 0 { term / norm } else { 0.0 };
        if n >= min_len && n % 2 == 0 && p < tail_eps {
            break;
        }
        out.push(p);
        n += 1;
        if n > 10_000 {
            break;
        }
    }
    out
}

/// Statistical (Bhattacharyya) fidelity between the state's populations and
/// an even cat state of mean `alpha_sq`. Phases and `λ` play no role.
pub fn cat_fidelity(state: &NumberState, alpha_sq: f64) -> f64 {
    cat_fidelity_with_tail(state, alpha_sq, CAT_TAIL_EPS)
}

pub fn cat_fidelity_with_tail(state: &NumberState, alpha_sq: f64, tail_eps: f64) -> f64 {
    let alpha_sq = alpha_sq.max(0.0);
    let cat = cat_populations(alpha_sq, state.populations().len(), tail_eps);
    state
        .populations()
        .iter()
        .zip(&cat)
        .map(|(p, q)| (p * q).sqrt())
        .sum::<f64>()
        .min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn published_state() -> NumberState {
        NumberState::with_lambda(vec![0.838, 0.051, 0.111], 0.734).unwrap()
    }

    // Builds ρ from the outer product of amplitude vectors instead of
    // filling the entries one by one.
    fn density_via_outer(state: &NumberState) -> DMatrix<Complex64> {
        let psi = nalgebra::DVector::from_vec(state.amplitudes());
        let pure = &psi * psi.adjoint();
        let mixed = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            psi.len(),
            state.populations().iter().map(|p| Complex64::new(*p, 0.0)),
        ));
        pure * Complex64::from(state.lambda()) + mixed * Complex64::from(1.0 - state.lambda())
    }

    #[test]
    fn vacuum_density() {
        let rho = density_of(&NumberState::vacuum());
        assert_eq!(rho.dim(), 1);
        assert_eq!(rho.get(0, 0), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn fully_mixed_has_no_coherence() {
        let s = NumberState::with_lambda(vec![0.5, 0.5], 0.0).unwrap();
        let rho = density_of(&s);
        assert_eq!(rho.get(0, 0).re, 0.5);
        assert_eq!(rho.get(1, 1).re, 0.5);
        assert_eq!(rho.get(0, 1).norm(), 0.0);
    }

    #[test]
    fn published_state_coherence_entry() {
        let s = published_state();
        let rho = density_of(&s);
        let expected = 0.734 * (0.838f64 * 0.051).sqrt();
        assert!((rho.get(0, 1).norm() - expected).abs() < 1e-15);
        assert!((rho.get(0, 1).norm() - 0.1517).abs() < 1e-4);
        let reference = density_via_outer(&s);
        assert!((rho.entries() - reference).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-15);
        assert!(DensityMatrix::new(rho.entries().clone()).is_ok());
    }

    #[test]
    fn purity_values() {
        let pure = NumberState::pure(vec![0.2, 0.3, 0.5]).unwrap();
        assert!((purity(&density_of(&pure)) - 1.0).abs() < 1e-12);

        let p = purity(&density_of(&published_state()));
        assert!((p - 0.870).abs() < 1e-3, "{p}");

        let s = NumberState::with_lambda(vec![0.5, 0.5], 0.965).unwrap();
        let closed = 0.5 + 2.0 * 0.965f64.powi(2) * 0.25;
        let p = purity(&density_of(&s));
        assert!((p - closed).abs() < 1e-14);
        assert!((p - 0.9656).abs() < 1e-4);
    }

    #[test]
    fn mean_and_g2() {
        assert_eq!(mean_photon(&NumberState::vacuum()), 0.0);
        assert_eq!(mean_photon(&NumberState::fock(1)), 1.0);
        assert!((mean_photon(&published_state()) - 0.273).abs() < 1e-12);

        assert_eq!(g2_zero(&NumberState::fock(1)).unwrap(), 0.0);
        assert!((g2_zero(&NumberState::fock(2)).unwrap() - 0.5).abs() < 1e-15);
        let g2 = g2_zero(&published_state()).unwrap();
        assert!((g2 - 2.98).abs() < 0.02, "{g2}");
        assert!(matches!(
            g2_zero(&NumberState::vacuum()),
            Err(Error::UndefinedObservable(_))
        ));
    }

    #[test]
    fn cat_fidelity_values() {
        assert!((cat_fidelity(&NumberState::vacuum(), 0.0) - 1.0).abs() < 1e-15);
        let f = cat_fidelity(&published_state(), 0.5);
        assert!((f - 0.974).abs() < 3e-3, "{f}");
        let odd = NumberState::pure(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cat_fidelity(&odd, 0.7), 0.0);
    }

    #[test]
    fn cat_distribution_normalized() {
        for a in [0.1, 0.5, 1.0, 2.0] {
            let p = cat_populations(a, 0, CAT_TAIL_EPS);
            let total: f64 = p.iter().sum();
            assert!((total - 1.0).abs() < 1e-11, "{a}: {total}");
            assert!(p.iter().skip(1).step_by(2).all(|x| *x == 0.0));
        }
    }

    #[test]
    fn validation_errors() {
        assert!(NumberState::with_lambda(vec![-0.1, 1.1], 1.0).is_err());
        assert!(NumberState::with_lambda(vec![0.5, 0.6], 1.0).is_err());
        assert!(NumberState::with_lambda(vec![0.5, 0.5], 1.5).is_err());
        assert!(NumberState::new(vec![0.5, 0.5], vec![], 1.0).is_err());
        // tiny float error is absorbed
        let s = NumberState::with_lambda(vec![0.5, 0.5 + 5e-10], 1.0).unwrap();
        assert!((s.populations().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let s = NumberState::new(vec![0.7, 0.2, 0.1], vec![0.3, -1.0], 0.8).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"p\"") && j.contains("\"alpha\"") && j.contains("\"lambda\""));
        let back: NumberState = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        let bad: std::result::Result<NumberState, _> =
            serde_json::from_str(r#"{"p":[0.2,0.2],"lambda":1.0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn density_matrix_rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.5, 0.0),
                Complex64::new(0.1, 0.0),
                Complex64::new(0.2, 0.0),
                Complex64::new(0.5, 0.0),
            ],
        );
        assert!(DensityMatrix::new(m).is_err());
    }
}
