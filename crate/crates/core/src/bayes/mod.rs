//! Bayesian inversion over the Ginibre parameterization `ρ = AA†/Tr(AA†)`.
//!
//! A parameter vector holds the entries of the complex `d × d` matrix `A` as
//! consecutive `(re, im)` pairs in row-major order, so it has `2d²` real
//! components. The prior is independent standard normal on every component.
//!
//! Because the likelihood only sees the direction of the vector, the
//! posterior density in parameter space has its supremum at the origin. The
//! MAP point used to centre the proposal is therefore taken in polar form
//! (radius at the mode of the radial marginal, direction maximizing the
//! likelihood); see [`find_map`].

mod map;
mod mcmc;

pub use map::{find_map, hessian_at_map, MapConfig, MapResult};
pub use mcmc::{
    log_acceptance_ratio, mh_step, pcn_propose, run_chains, ChainConfig, ChainRecord, MhOutcome,
    DEFAULT_BETA, DEFAULT_CHAINS, DEFAULT_THINNING,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ladder::{hermitian_part, DensityMatrix, EnergyWindow};
use crate::spectrogram::{
    check_state_window, log_likelihood_from, Spectrogram, Sweep, PROBABILITY_FLOOR,
};

/// Real parameter vector of length `2d²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(components: DVector<f64>) -> Result<Self> {
        if components.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameter vector has non-finite entries".into()));
        }
        Ok(Self(components))
    }

    pub fn from_vec(components: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(components))
    }

    pub fn components(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parameters encoding the matrix `A` (row-major, interleaved re/im).
    pub fn from_matrix(a: &DMatrix<Complex64>) -> Self {
        Self(params_from_matrix(a))
    }
}

/// Number of real parameters for a window of dimension `d`.
pub fn param_len(d: usize) -> usize {
    2 * d * d
}

pub(crate) fn matrix_from_params(x: &DVector<f64>, d: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(d, d, |i, j| {
        let k = 2 * (i * d + j);
        Complex64::new(x[k], x[k + 1])
    })
}

pub(crate) fn params_from_matrix(a: &DMatrix<Complex64>) -> DVector<f64> {
    let d = a.nrows();
    let mut out = DVector::zeros(2 * d * a.ncols());
    for i in 0..d {
        for j in 0..a.ncols() {
            let k = 2 * (i * a.ncols() + j);
            out[k] = a[(i, j)].re;
            out[k + 1] = a[(i, j)].im;
        }
    }
    out
}

fn dim_from_len(len: usize) -> Result<usize> {
    let d = ((len / 2) as f64).sqrt().round() as usize;
    if d == 0 || 2 * d * d != len {
        return Err(Error::dimension("2d² components", len));
    }
    Ok(d)
}

fn unnormalized_density(x: &DVector<f64>, d: usize) -> (DMatrix<Complex64>, DMatrix<Complex64>, f64) {
    let a = matrix_from_params(x, d);
    let t = x.norm_squared();
    let rho = hermitian_part(&(&a * a.adjoint() / Complex64::new(t, 0.0)));
    (a, rho, t)
}

/// `A A† / Tr(A A†)` for the matrix `A` encoded by `x`.
pub fn param_to_density(x: &ParamVector, window: EnergyWindow) -> Result<DensityMatrix> {
    let d = dim_from_len(x.len())?;
    if d != window.dim() {
        return Err(Error::dimension(param_len(window.dim()), x.len()));
    }
    if x.0.norm_squared() == 0.0 {
        return Err(Error::DegenerateInput("all-zero parameter vector".into()));
    }
    let (_, rho, _) = unnormalized_density(&x.0, d);
    Ok(DensityMatrix::new_unchecked(window, rho))
}

/// Log-density known up to a constant; implemented by posterior models and
/// by synthetic targets used to validate the sampler.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &DVector<f64>) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    /// Independent `N(0, 1)` on each parameter.
    StandardNormal,
    /// Likelihood only.
    Flat,
}

/// Posterior over parameter vectors for fixed spectrogram data.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    data: Spectrogram,
    weights: DMatrix<f64>,
    sweep: Sweep,
    prior: Prior,
}

struct LikelihoodParts {
    a: DMatrix<Complex64>,
    rho: DMatrix<Complex64>,
    t: f64,
    probs: DMatrix<f64>,
    coefficients: DMatrix<f64>,
    r: DMatrix<Complex64>,
}

impl PosteriorModel {
    pub fn new(data: Spectrogram, state_window: EnergyWindow) -> Result<Self> {
        Self::with_prior(data, state_window, Prior::StandardNormal)
    }

    pub fn with_prior(data: Spectrogram, state_window: EnergyWindow, prior: Prior) -> Result<Self> {
        check_state_window(data.window(), state_window)?;
        let sweep = Sweep::for_spectrogram(&data, state_window)?;
        let weights = data.weights();
        Ok(Self {
            data,
            weights,
            sweep,
            prior,
        })
    }

    pub fn data(&self) -> &Spectrogram {
        &self.data
    }

    pub fn prior(&self) -> Prior {
        self.prior
    }

    pub fn state_window(&self) -> EnergyWindow {
        self.sweep.state_window()
    }

    pub fn state_dim(&self) -> usize {
        self.sweep.state_window().dim()
    }

    pub fn param_len(&self) -> usize {
        param_len(self.state_dim())
    }

    pub fn density(&self, x: &ParamVector) -> Result<DensityMatrix> {
        param_to_density(x, self.state_window())
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.param_len() {
            return Err(Error::dimension(self.param_len(), x.len()));
        }
        Ok(())
    }

    fn prior_log_density(&self, x: &DVector<f64>) -> f64 {
        match self.prior {
            Prior::StandardNormal => -0.5 * x.norm_squared(),
            Prior::Flat => 0.0,
        }
    }

    fn parts(&self, x: &DVector<f64>) -> LikelihoodParts {
        let (a, rho, t) = unnormalized_density(x, self.state_dim());
        let probs = self.sweep.probabilities(&rho);
        let coefficients = self.weights.zip_map(&probs, |w, p| {
            if w == 0.0 || p < PROBABILITY_FLOOR {
                0.0
            } else {
                w / p
            }
        });
        let r = hermitian_part(&self.sweep.weighted_projector_sum(&coefficients));
        LikelihoodParts {
            a,
            rho,
            t,
            probs,
            coefficients,
            r,
        }
    }

    /// Log-likelihood of the density encoded by `x` (−∞-free thanks to the floor).
    pub fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        if x.norm_squared() == 0.0 {
            return f64::NAN;
        }
        let (_, rho, _) = unnormalized_density(x, self.state_dim());
        log_likelihood_from(&self.weights, &self.sweep.probabilities(&rho))
    }

    /// `log L(S | ρ(x)) + log π₀(x)`, with the Gaussian normalizing constant dropped.
    pub fn log_posterior(&self, x: &ParamVector) -> Result<f64> {
        self.check_len(&x.0)?;
        Ok(self.log_likelihood(&x.0) + self.prior_log_density(&x.0))
    }

    /// Gradient of the log-likelihood term alone. It is orthogonal to `x`
    /// because the likelihood depends only on the direction of `x`.
    pub fn grad_log_likelihood(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.parts(x);
        let s = trace_product(&p.r, &p.rho);
        let g = &p.r * &p.a - &p.a * Complex64::new(s, 0.0);
        params_from_matrix(&g) * (2.0 / p.t)
    }

    pub fn grad_log_posterior(&self, x: &ParamVector) -> Result<DVector<f64>> {
        self.check_len(&x.0)?;
        let mut g = self.grad_log_likelihood(&x.0);
        if self.prior == Prior::StandardNormal {
            g -= &x.0;
        }
        Ok(g)
    }

    /// Directional derivative of [`Self::grad_log_likelihood`] along `v`
    /// (a Hessian-vector product of the log-likelihood).
    fn likelihood_hessian_vector(&self, x: &DVector<f64>, p: &LikelihoodParts, v: &DVector<f64>) -> DVector<f64> {
        let d = self.state_dim();
        let vm = matrix_from_params(v, d);
        let t = p.t;
        let dt = 2.0 * x.dot(v);
        let d_rho = hermitian_part(&(&vm * p.a.adjoint() + &p.a * vm.adjoint()))
            * Complex64::new(1.0 / t, 0.0)
            - &p.rho * Complex64::new(dt / t, 0.0);
        let d_probs = self.sweep.probabilities(&d_rho);
        let d_coefficients = DMatrix::from_fn(p.probs.nrows(), p.probs.ncols(), |i, j| {
            if p.coefficients[(i, j)] == 0.0 {
                0.0
            } else {
                -p.coefficients[(i, j)] * d_probs[(i, j)] / p.probs[(i, j)]
            }
        });
        let d_r = self.sweep.weighted_projector_sum(&d_coefficients);
        let s = trace_product(&p.r, &p.rho);
        let ds = trace_product(&d_r, &p.rho) + trace_product(&p.r, &d_rho);
        let g = &p.r * &p.a - &p.a * Complex64::new(s, 0.0);
        let dg = &d_r * &p.a + &p.r * &vm
            - &p.a * Complex64::new(ds, 0.0)
            - &vm * Complex64::new(s, 0.0);
        params_from_matrix(&dg) * (2.0 / t) - params_from_matrix(&g) * (2.0 * dt / (t * t))
    }

    /// Hessian of the log-likelihood term, `∇² log L`.
    pub fn hessian_log_likelihood(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let parts = self.parts(x);
        let mut h = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for k in 0..n {
            e[k] = 1.0;
            let col = self.likelihood_hessian_vector(x, &parts, &e);
            h.set_column(k, &col);
            e[k] = 0.0;
        }
        h
    }

    /// `−∇² log π(x)` before symmetrization.
    pub fn neg_hessian_log_posterior(&self, x: &ParamVector) -> Result<DMatrix<f64>> {
        self.check_len(&x.0)?;
        let mut h = -self.hessian_log_likelihood(&x.0);
        if self.prior == Prior::StandardNormal {
            for i in 0..h.nrows() {
                h[(i, i)] += 1.0;
            }
        }
        Ok(h)
    }
}

impl LogTarget for PosteriorModel {
    fn dim(&self) -> usize {
        self.param_len()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        self.log_likelihood(x) + self.prior_log_density(x)
    }
}

/// Real part of `Tr(A B)`.
fn trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

/// Multivariate normal `N(mean, precision⁻¹)` as a log-target.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != mean.len() || precision.ncols() != mean.len() {
            return Err(Error::dimension(mean.len(), precision.nrows()));
        }
        Ok(Self { mean, precision })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl LogTarget for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        -0.5 * r.dot(&(&self.precision * &r))
    }
}
