//! Maximum-likelihood reconstruction by the `ρ → RρR / Tr(RρR)` iteration.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ladder::{hermitian_part, ComplexMatrix, DensityMatrix, EnergyWindow};
use crate::spectrogram::{
    check_state_window, log_likelihood_from, Spectrogram, Sweep, PROBABILITY_FLOOR,
};

/// Dilution never shrinks below this; a step that still lowers the
/// likelihood at this dilution ends the iteration.
const MIN_DILUTION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    MaximallyMixed,
    State(DensityMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub max_iterations: usize,
    /// Stop when `|ΔL| < tolerance · max(1, |L|)`.
    pub log_likelihood_tolerance: f64,
    /// λ in `R̃ = (1−λ)(Tr R/d) I + λR`.
    pub dilution: f64,
    pub initial_state: InitialState,
    /// Window of the reconstructed matrix; the data window when `None`.
    pub state_window: Option<EnergyWindow>,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            log_likelihood_tolerance: 1e-10,
            dilution: 1.0,
            initial_state: InitialState::MaximallyMixed,
            state_window: None,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.log_likelihood_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if !(self.dilution > 0.0 && self.dilution <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dilution must lie in (0, 1], got {}",
                self.dilution
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MleOutcome {
    pub state: DensityMatrix,
    /// Log-likelihood of the initial state followed by one value per accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Dilution in effect when the iteration stopped.
    pub final_dilution: f64,
}

/// `R = Σ w(φ,N)/p(φ,N) · U_φ†|N⟩⟨N|U_φ` on the state window, with bins whose
/// probability falls below the floor dropped.
fn r_matrix(sweep: &Sweep, weights: &DMatrix<f64>, probs: &DMatrix<f64>) -> DMatrix<Complex64> {
    let coefficients = weights.zip_map(probs, |w, p| {
        if w == 0.0 || p < PROBABILITY_FLOOR {
            0.0
        } else {
            w / p
        }
    });
    hermitian_part(&sweep.weighted_projector_sum(&coefficients))
}

/// The R operator of the fixed-point map for state `rho`.
pub fn r_operator(s: &Spectrogram, rho: &DensityMatrix) -> Result<ComplexMatrix> {
    check_state_window(s.window(), rho.window())?;
    let sweep = Sweep::for_spectrogram(s, rho.window())?;
    let probs = sweep.probabilities(rho.entries());
    ComplexMatrix::new(rho.window(), r_matrix(&sweep, &s.weights(), &probs))
}

fn apply_map(rho: &DMatrix<Complex64>, r: &DMatrix<Complex64>, dilution: f64) -> Option<DMatrix<Complex64>> {
    let d = r.nrows();
    let mean_eig = r.trace().re / d as f64;
    let r_tilde = if dilution >= 1.0 {
        r.clone()
    } else {
        r * Complex64::new(dilution, 0.0)
            + DMatrix::identity(d, d) * Complex64::new((1.0 - dilution) * mean_eig, 0.0)
    };
    let next = &r_tilde * rho * &r_tilde;
    let trace = next.trace().re;
    if !(trace > 0.0) || !trace.is_finite() {
        return None;
    }
    Some(hermitian_part(&(next / Complex64::new(trace, 0.0))))
}

/// Iterates the diluted `RρR` map until the log-likelihood stalls.
///
/// A step that lowers the log-likelihood is discarded and retried with half
/// the dilution, so the returned trace is non-decreasing.
pub fn mle_reconstruct(s: &Spectrogram, config: &MleConfig) -> Result<MleOutcome> {
    config.validate()?;
    let weights = s.weights();
    if !(weights.sum() > 0.0) {
        return Err(Error::InvalidArgument("spectrogram has no counts".into()));
    }
    let state_window = match (&config.initial_state, config.state_window) {
        (_, Some(w)) => w,
        (InitialState::State(rho), None) => rho.window(),
        (InitialState::MaximallyMixed, None) => s.window(),
    };
    check_state_window(s.window(), state_window)?;
    let mut rho = match &config.initial_state {
        InitialState::MaximallyMixed => DensityMatrix::maximally_mixed(state_window),
        InitialState::State(init) => {
            if init.window() != state_window {
                return Err(Error::dimension(
                    format!("initial state on [{}, {}]", state_window.n_min(), state_window.n_max()),
                    format!("[{}, {}]", init.window().n_min(), init.window().n_max()),
                ));
            }
            init.clone()
        }
    }
    .entries()
    .clone();

    let sweep = Sweep::for_spectrogram(s, state_window)?;
    let mut probs = sweep.probabilities(&rho);
    let mut ll = log_likelihood_from(&weights, &probs);
    let mut trace = vec![ll];
    let mut dilution = config.dilution;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let r = r_matrix(&sweep, &weights, &probs);
        let mut accepted = None;
        while dilution >= MIN_DILUTION {
            if let Some(candidate) = apply_map(&rho, &r, dilution) {
                let candidate_probs = sweep.probabilities(&candidate);
                let candidate_ll = log_likelihood_from(&weights, &candidate_probs);
                if candidate_ll >= ll {
                    accepted = Some((candidate, candidate_probs, candidate_ll));
                    break;
                }
            }
            dilution *= 0.5;
            log::debug!("log-likelihood decreased; dilution lowered to {dilution}");
        }
        let Some((next, next_probs, next_ll)) = accepted else {
            // no ascent direction left at machine precision
            converged = true;
            break;
        };
        let change = next_ll - ll;
        rho = next;
        probs = next_probs;
        ll = next_ll;
        trace.push(ll);
        if change.abs() < config.log_likelihood_tolerance * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "MLE did not converge within {} iterations; returning last iterate",
            config.max_iterations
        );
    }
    Ok(MleOutcome {
        state: DensityMatrix::new_unchecked(state_window, rho),
        trace,
        iterations,
        converged,
        final_dilution: dilution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder::{bessel_j, fidelity, max_abs_diff};
    use crate::spectrogram::{simulate_spectrogram, PhaseGrid};
    use crate::testing::random_density;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn r_is_multiple_of_identity_at_noiseless_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = EnergyWindow::new(-2, 2).unwrap();
        let rho = random_density(&mut rng, w, 5);
        let phases = PhaseGrid::uniform(12).unwrap();
        let s = simulate_spectrogram(&rho, 0.9, &phases).unwrap();
        // reconstruct on the full (padded) data window
        let big = rho.embed(s.window()).unwrap();
        let r = r_operator(&s, &big).unwrap();
        let interior = s.window().n_max() - w.n_max() - 2;
        let p = phases.len() as f64;
        for n in -interior..=interior {
            for m in -interior..=interior {
                let expected = if n == m { p } else { 0.0 };
                let got = r.get(n, m);
                // only populated rows carry weight; check the support of rho
                if w.position(n).is_some() && w.position(m).is_some() {
                    assert!((got - Complex64::new(expected, 0.0)).norm() < 1e-9, "({n},{m}) {got}");
                }
            }
        }
        // restricted to the state window R is exactly P·I
        let r_small = r_operator(&s, &rho).unwrap();
        let target = DMatrix::identity(w.dim(), w.dim()) * Complex64::new(p, 0.0);
        assert!(max_abs_diff(r_small.entries(), &target) < 1e-9);
    }

    #[test]
    fn r_at_zero_coupling_single_phase() {
        let w = EnergyWindow::new(-1, 1).unwrap();
        let rho = DensityMatrix::maximally_mixed(w);
        let mut counts = DMatrix::zeros(1, 3);
        counts[(0, 2)] = 6.0;
        let s = Spectrogram::new(w, PhaseGrid::uniform(1).unwrap(), counts, 0.0).unwrap();
        let r = r_operator(&s, &rho).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(2, 2)] = Complex64::new(6.0 / (1.0 / 3.0), 0.0);
        assert!(max_abs_diff(r.entries(), &expected) < 1e-12);
    }

    #[test]
    fn r_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = EnergyWindow::new(-2, 1).unwrap();
        for _ in 0..5 {
            let truth = random_density(&mut rng, w, 2);
            let model = random_density(&mut rng, w, 4);
            let s = simulate_spectrogram(&truth, 1.2, &PhaseGrid::uniform(9).unwrap()).unwrap();
            let r = r_operator(&s, &model).unwrap();
            assert!(r.max_hermitian_defect() < 1e-12);
        }
    }

    #[test]
    fn reconstructs_pure_sideband_state() {
        let w = EnergyWindow::symmetric(8);
        let amps: Vec<Complex64> = w.indices().map(|n| Complex64::new(bessel_j(n, 1.6), 0.0)).collect();
        let truth = DensityMatrix::pure(w, &amps).unwrap();
        let s = simulate_spectrogram(&truth, 0.8, &PhaseGrid::uniform(50).unwrap()).unwrap();
        let config = MleConfig {
            state_window: Some(w),
            ..MleConfig::default()
        };
        let out = mle_reconstruct(&s, &config).unwrap();
        let f = fidelity(&out.state, &truth).unwrap();
        assert!(f >= 0.99, "fidelity {f}");
        let max = out.trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(*out.trace.last().unwrap(), max);
    }

    #[test]
    fn zero_coupling_recovers_populations() {
        let w = EnergyWindow::new(-1, 2).unwrap();
        let pops = [0.1, 0.4, 0.2, 0.3];
        let counts = DMatrix::from_fn(3, 4, |_, j| pops[j] * 1000.0);
        let s = Spectrogram::new(w, PhaseGrid::uniform(3).unwrap(), counts, 0.0).unwrap();
        let out = mle_reconstruct(&s, &MleConfig::default()).unwrap();
        for (i, p) in pops.iter().enumerate() {
            assert!((out.state.entries()[(i, i)].re - p).abs() < 1e-6);
            for j in 0..4 {
                if i != j {
                    assert!(out.state.entries()[(i, j)].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let w = EnergyWindow::symmetric(0);
        let s = Spectrogram::new(w, PhaseGrid::uniform(1).unwrap(), DMatrix::from_element(1, 1, 1.0), 0.0).unwrap();
        let zero_iters = MleConfig {
            max_iterations: 0,
            ..MleConfig::default()
        };
        assert!(mle_reconstruct(&s, &zero_iters).is_err());
        let bad_dilution = MleConfig {
            dilution: 0.0,
            ..MleConfig::default()
        };
        assert!(mle_reconstruct(&s, &bad_dilution).is_err());
        let empty = Spectrogram::new(w, PhaseGrid::uniform(1).unwrap(), DMatrix::zeros(1, 1), 0.0).unwrap();
        assert!(mle_reconstruct(&empty, &MleConfig::default()).is_err());
    }

    #[test]
    fn diluted_trace_is_monotone_and_states_physical() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = EnergyWindow::new(-2, 2).unwrap();
        let truth = random_density(&mut rng, w, 2);
        let s = crate::spectrogram::sample_counts(
            &simulate_spectrogram(&truth, 1.2, &PhaseGrid::uniform(30).unwrap()).unwrap(),
            2000,
            3,
        )
        .unwrap();
        let config = MleConfig {
            dilution: 0.5,
            max_iterations: 300,
            state_window: Some(w),
            ..MleConfig::default()
        };
        let out = mle_reconstruct(&s, &config).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1] - pair[0] >= -1e-9);
        }
        DensityMatrix::new(out.state.matrix().clone()).unwrap();
    }

    #[test]
    fn fixed_point_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = EnergyWindow::new(-1, 2).unwrap();
        let truth = random_density(&mut rng, w, 4);
        let s = simulate_spectrogram(&truth, 1.0, &PhaseGrid::uniform(20).unwrap()).unwrap();
        let config = MleConfig {
            max_iterations: 1,
            initial_state: InitialState::State(truth.clone()),
            ..MleConfig::default()
        };
        let out = mle_reconstruct(&s, &config).unwrap();
        assert!(out.state.frobenius_distance(&truth).unwrap() < 1e-8);
    }
}
