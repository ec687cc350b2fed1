use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ParamVector, PosteriorModel, Prior};
use crate::error::{Error, Result};

/// Eigenvalues of the curvature are floored at this fraction of the largest.
const JITTER_RELATIVE_FLOOR: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct MapConfig {
    /// Stop when the polar gradient's ∞-norm drops below this.
    pub gradient_tolerance: f64,
    pub max_steps: usize,
    /// Seed of the standard-normal starting point when no init is given.
    pub seed: u64,
    /// Use curvature-corrected (Newton) steps while the parameter count is
    /// at most this; plain gradient ascent above it.
    pub newton_max_params: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-6,
            max_steps: 100_000,
            seed: 0,
            newton_max_params: 2048,
        }
    }
}

/// Centre and curvature of the Gaussian approximation used by the proposal.
#[derive(Debug, Clone)]
pub struct MapResult {
    pub x_map: ParamVector,
    /// `−∇² log π` at `x_map`, symmetrized and jittered to be positive definite.
    pub hessian: DMatrix<f64>,
    pub log_posterior_at_map: f64,
    pub converged: bool,
    pub steps: usize,
    cholesky: DMatrix<f64>,
}

impl MapResult {
    /// Builds a result from a given centre and curvature (symmetrized and
    /// jittered here), e.g. for a synthetic Gaussian target.
    pub fn from_curvature(x_map: ParamVector, hessian: DMatrix<f64>, log_posterior_at_map: f64) -> Result<Self> {
        if hessian.nrows() != x_map.len() || hessian.ncols() != x_map.len() {
            return Err(Error::dimension(x_map.len(), hessian.nrows()));
        }
        let (hessian, cholesky) = regularize(hessian)?;
        Ok(Self {
            x_map,
            hessian,
            log_posterior_at_map,
            converged: true,
            steps: 0,
            cholesky,
        })
    }

    /// Lower Cholesky factor `L` of the curvature, `H = L Lᵀ`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    pub fn dim(&self) -> usize {
        self.x_map.len()
    }

    /// `H⁻¹`, the covariance of the Gaussian approximation.
    pub fn covariance(&self) -> DMatrix<f64> {
        Cholesky::<f64, Dyn>::new(self.hessian.clone())
            .expect("curvature is positive definite")
            .inverse()
    }
}

/// Symmetrize, floor the spectrum at `1e-8 · λ_max` by diagonal jitter and
/// factor.
fn regularize(h: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut h = (&h + h.transpose()) * 0.5;
    let eig = h.clone().symmetric_eigenvalues();
    let largest = eig.max();
    if !(largest > 0.0) || !largest.is_finite() {
        return Err(Error::Curvature(format!(
            "largest curvature eigenvalue is {largest}; cannot build a proposal"
        )));
    }
    let floor = JITTER_RELATIVE_FLOOR * largest;
    let smallest = eig.min();
    if smallest < floor {
        let jitter = floor - smallest;
        log::debug!("adding diagonal jitter {jitter:e} to curvature");
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
    }
    let chol = Cholesky::new(h.clone())
        .ok_or_else(|| Error::Curvature("Cholesky factorization failed after jitter".into()))?;
    let l = chol.l();
    Ok((h, l))
}

/// Radius at which the MAP point is placed: the mode of the radial
/// marginal of the prior (`√(n−1)` for a standard normal in `n` dimensions).
fn map_radius(model: &PosteriorModel) -> f64 {
    match model.prior() {
        Prior::StandardNormal => ((model.param_len() - 1) as f64).sqrt().max(1.0),
        Prior::Flat => 1.0,
    }
}

impl PosteriorModel {
    /// Gradient of `log π(x) + (n−1) log|x|`, the log-posterior written in
    /// polar coordinates. Its zeros are the MAP points of [`find_map`].
    pub fn polar_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.grad_log_likelihood(x);
        if self.prior() == Prior::StandardNormal {
            let n = x.len() as f64;
            g += x * ((n - 1.0) / x.norm_squared() - 1.0);
        }
        g
    }
}

fn retract(x: &DVector<f64>, radius: f64) -> DVector<f64> {
    x * (radius / x.norm())
}

/// Curvature-corrected ascent direction on the sphere: solves with the
/// absolute tangent spectrum of `−∇² log L`, dropping null directions.
fn newton_direction(model: &PosteriorModel, x: &DVector<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = x.len();
    let h = -model.hessian_log_likelihood(x);
    let h = (&h + h.transpose()) * 0.5;
    let unit = x / x.norm();
    let projector = DMatrix::identity(n, n) - &unit * unit.transpose();
    let tangent = &projector * h * &projector;
    let eig = tangent.symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let floor = 1e-10 * scale;
    let mut step = DVector::zeros(n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let coefficient = v.dot(grad) / lambda.abs().max(floor);
        step += v * coefficient;
    }
    let step = &projector * step;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Maximum a posteriori point in polar form.
///
/// The likelihood depends only on the direction of `x`, so the direction is
/// found by ascending the log-likelihood on a sphere. The radius is fixed to
/// the mode of the prior's radial marginal. Steps use backtracking (Armijo
/// constant 1e-4), with curvature-corrected directions for small models.
/// The Hessian of `−log π` at the result is bundled with it.
pub fn find_map(model: &PosteriorModel, init: Option<&ParamVector>, config: &MapConfig) -> Result<MapResult> {
    let n = model.param_len();
    let start = match init {
        Some(x) => {
            if x.len() != n {
                return Err(Error::dimension(n, x.len()));
            }
            x.components().clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
        }
    };
    if start.norm_squared() == 0.0 {
        return Err(Error::DegenerateInput("MAP search started at the origin".into()));
    }
    let radius = map_radius(model);
    let mut x = retract(&start, radius);
    let mut value = model.log_likelihood(&x);
    let mut alpha = 1e-3;
    let mut converged = false;
    let mut steps = 0;

    while steps < config.max_steps {
        let grad = model.grad_log_likelihood(&x);
        if grad.amax() < config.gradient_tolerance {
            converged = true;
            break;
        }
        steps += 1;

        if n <= config.newton_max_params {
            if let Some(direction) = newton_direction(model, &x, &grad) {
                let slope = grad.dot(&direction);
                let mut t = 1.0;
                let mut taken = false;
                for _ in 0..30 {
                    let candidate = retract(&(&x + &direction * t), radius);
                    let candidate_value = model.log_likelihood(&candidate);
                    let noise = 64.0 * f64::EPSILON * value.abs();
                    if candidate_value >= value + ARMIJO * t * slope
                        || (t == 1.0 && candidate_value >= value - noise)
                    {
                        x = candidate;
                        value = candidate_value;
                        taken = true;
                        break;
                    }
                    t *= 0.5;
                }
                if taken {
                    continue;
                }
            }
        }

        let slope = grad.norm_squared();
        let mut improved = false;
        for _ in 0..80 {
            let candidate = retract(&(&x + &grad * alpha), radius);
            let candidate_value = model.log_likelihood(&candidate);
            if candidate_value >= value + ARMIJO * alpha * slope {
                x = candidate;
                value = candidate_value;
                improved = true;
                alpha *= 2.0;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            log::warn!("MAP ascent stalled at gradient norm {:e}", grad.amax());
            break;
        }
    }
    if !converged {
        log::warn!("MAP search did not reach gradient tolerance {:e}", config.gradient_tolerance);
    }
    let x_map = ParamVector::new(x)?;
    let hessian = model.neg_hessian_log_posterior(&x_map)?;
    let log_posterior_at_map = model.log_posterior(&x_map)?;
    let (hessian, cholesky) = regularize(hessian)?;
    Ok(MapResult {
        x_map,
        hessian,
        log_posterior_at_map,
        converged,
        steps,
        cholesky,
    })
}

/// Curvature `H = −∇² log π` at a near-stationary point (polar gradient
/// ∞-norm below 1e-4), symmetrized and jittered.
pub fn hessian_at_map(model: &PosteriorModel, x_map: &ParamVector) -> Result<MapResult> {
    if x_map.len() != model.param_len() {
        return Err(Error::dimension(model.param_len(), x_map.len()));
    }
    let stationarity = model.polar_gradient(x_map.components()).amax();
    if !(stationarity < 1e-4) {
        return Err(Error::InvalidArgument(format!(
            "point is not stationary (gradient ∞-norm {stationarity:e})"
        )));
    }
    let h = model.neg_hessian_log_posterior(x_map)?;
    let log_post = model.log_posterior(x_map)?;
    MapResult::from_curvature(x_map.clone(), h, log_post)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::param_to_density;
    use crate::ladder::{fidelity, EnergyWindow};
    use crate::spectrogram::{sample_counts, simulate_spectrogram, PhaseGrid, Spectrogram};
    use crate::testing::random_density;

    fn prior_only(window: EnergyWindow) -> PosteriorModel {
        let phases = PhaseGrid::uniform(3).unwrap();
        let data_window = window.padded(3);
        let s = Spectrogram::new(data_window, phases, DMatrix::zeros(3, data_window.dim()), 0.5).unwrap();
        PosteriorModel::new(s, window).unwrap()
    }

    #[test]
    fn prior_only_curvature_is_identity() {
        let w = EnergyWindow::new(0, 1).unwrap();
        let model = prior_only(w);
        let map = find_map(&model, None, &MapConfig::default()).unwrap();
        assert!(map.converged);
        assert!((map.x_map.components().norm() - 7f64.sqrt()).abs() < 1e-12);
        assert!((&map.hessian - DMatrix::<f64>::identity(8, 8)).amax() < 1e-12);
        let again = hessian_at_map(&model, &map.x_map).unwrap();
        assert!((&again.hessian - DMatrix::<f64>::identity(8, 8)).amax() < 1e-12);
    }

    #[test]
    fn non_stationary_point_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = EnergyWindow::new(-1, 1).unwrap();
        let truth = random_density(&mut rng, w, 3);
        let s = sample_counts(&simulate_spectrogram(&truth, 1.0, &PhaseGrid::uniform(10).unwrap()).unwrap(), 1000, 2).unwrap();
        let model = PosteriorModel::new(s, w).unwrap();
        let x = ParamVector::new(DVector::from_fn(18, |i, _| (i as f64 * 0.7).sin() + 0.3)).unwrap();
        assert!(hessian_at_map(&model, &x).is_err());
    }

    #[test]
    fn indefinite_curvature_is_a_curvature_error() {
        let x = ParamVector::from_vec(vec![0.0, 0.0]).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert!(matches!(MapResult::from_curvature(x, h, 0.0), Err(Error::Curvature(_))));
    }

    #[test]
    fn jitter_floors_spectrum() {
        let x = ParamVector::from_vec(vec![0.0, 0.0]).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let m = MapResult::from_curvature(x, h, 0.0).unwrap();
        let eig = m.hessian.clone().symmetric_eigenvalues();
        // the floor is relative to the largest eigenvalue before jitter
        assert!((eig.min() - 1e-8).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_level_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = EnergyWindow::new(0, 1).unwrap();
        let truth = random_density(&mut rng, w, 2);
        let s = simulate_spectrogram(&truth, 0.7, &PhaseGrid::uniform(50).unwrap()).unwrap();
        let s = sample_counts(&s, 10_000, 5).unwrap();
        let model = PosteriorModel::new(s, w).unwrap();
        let map = find_map(&model, None, &MapConfig::default()).unwrap();
        assert!(map.converged, "steps {}", map.steps);
        let f = fidelity(&param_to_density(&map.x_map, w).unwrap(), &truth).unwrap();
        assert!(f >= 0.99, "fidelity {f}");
        // restarting at the optimum returns at the first gradient check
        let again = find_map(&model, Some(&map.x_map), &MapConfig::default()).unwrap();
        assert_eq!(again.steps, 0);
        assert!(again.converged);
    }
}
