//! Decoherence forward model: a uniform mixture of coupling strengths, a
//! dispersive chirp `e^{icN²}` and Gaussian optical-phase jitter, plus a
//! Nelder–Mead fit of its parameters to a target density matrix.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ladder::{bessel_j, fidelity, padding_for, DensityMatrix, EnergyWindow};

pub const DEFAULT_COUPLING_NODES: usize = 33;
pub const DEFAULT_RESTARTS: usize = 5;

/// FWHM of a unit-variance Gaussian.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardParams {
    pub g_lo: f64,
    pub g_hi: f64,
    /// Radians per `N²`.
    pub chirp: f64,
    /// FWHM of the optical-phase jitter as a fraction of the period.
    pub phase_noise: f64,
}

impl ForwardParams {
    pub fn new(g_lo: f64, g_hi: f64, chirp: f64, phase_noise: f64) -> Result<Self> {
        let p = Self {
            g_lo,
            g_hi,
            chirp,
            phase_noise,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.g_lo, self.g_hi, self.chirp, self.phase_noise]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.g_lo < 0.0 || self.g_lo > self.g_hi || self.phase_noise < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "forward parameters need 0 ≤ g_lo ≤ g_hi and phase_noise ≥ 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Standard deviation of the jitter in radians.
    pub fn phase_std(&self) -> f64 {
        TAU * self.phase_noise / FWHM_PER_SIGMA
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` (Newton iteration on `P_k`).
pub(crate) fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for n in 2..=k {
                let nf = n as f64;
                let p2 = ((2.0 * nf - 1.0) * x * p1 - (nf - 1.0) * p0) / nf;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 0 { 1.0 } else { p1 };
            dp = kf * (x * pk - p0) / (x * x - 1.0);
            let step = pk / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[k - 1 - i] = -x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    (nodes, weights)
}

/// Mixture density on `window`. Amplitudes `J_N(2g) e^{iNδ} e^{icN²}` are
/// averaged over `g ~ U[g_lo, g_hi]` by `coupling_nodes`-point Gauss–Legendre
/// and over `δ` in closed form (factor `e^{−(N−M)²s²/2}`). If the window cuts
/// off sidebands the result is renormalized and a warning logged.
pub fn model_density(params: &ForwardParams, window: EnergyWindow, coupling_nodes: usize) -> Result<DensityMatrix> {
    let (rho, retained) = model_density_quiet(params, window, coupling_nodes)?;
    warn_truncation(params, window, retained);
    Ok(rho)
}

fn warn_truncation(params: &ForwardParams, window: EnergyWindow, retained: f64) {
    let needed = EnergyWindow::symmetric(padding_for(params.g_hi) as u32);
    if !window.contains_window(&needed) {
        log::warn!(
            "window [{}, {}] truncates sidebands up to ±{}; retained weight {retained:.6}",
            window.n_min(),
            window.n_max(),
            needed.n_max()
        );
    }
}

/// The renormalized model and the weight it had inside the window.
fn model_density_quiet(
    params: &ForwardParams,
    window: EnergyWindow,
    coupling_nodes: usize,
) -> Result<(DensityMatrix, f64)> {
    params.validate()?;
    if coupling_nodes == 0 {
        return Err(Error::InvalidArgument("coupling_nodes must be positive".into()));
    }
    let (nodes, weights) = if params.g_lo == params.g_hi {
        (vec![0.0], vec![2.0])
    } else {
        gauss_legendre(coupling_nodes)
    };
    let mid = 0.5 * (params.g_lo + params.g_hi);
    let half = 0.5 * (params.g_hi - params.g_lo);
    let d = window.dim();
    let chirp: Vec<Complex64> = window
        .indices()
        .map(|n| Complex64::from_polar(1.0, params.chirp * (n as f64).powi(2)))
        .collect();

    let mut rho = nodes
        .par_iter()
        .zip(&weights)
        .map(|(&t, &w)| {
            let g = mid + half * t;
            let psi: Vec<Complex64> = window
                .indices()
                .zip(&chirp)
                .map(|(n, c)| c * bessel_j(n, 2.0 * g))
                .collect();
            DMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj() * (0.5 * w))
        })
        .reduce(|| DMatrix::zeros(d, d), |a, b| a + b);

    let s = params.phase_std();
    for i in 0..d {
        for j in 0..d {
            let k = i as f64 - j as f64;
            rho[(i, j)] *= (-0.5 * k * k * s * s).exp();
        }
    }
    let trace: f64 = (0..d).map(|i| rho[(i, i)].re).sum();
    if !(trace > 0.0) {
        return Err(Error::DegenerateInput("model has no weight inside the window".into()));
    }
    rho /= Complex64::new(trace, 0.0);
    Ok((DensityMatrix::new_unchecked(window, rho), trace))
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub coupling_nodes: usize,
    pub max_evaluations: usize,
    /// Simplex collapse threshold on objective spread.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            coupling_nodes: DEFAULT_COUPLING_NODES,
            max_evaluations: 20_000,
            tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ForwardParams,
    pub distance: f64,
    pub fidelity: f64,
    /// Every restart hit the evaluation budget before the simplex collapsed.
    pub stagnated: bool,
    /// Best distance reached by each restart, in order.
    pub restart_distances: Vec<f64>,
}

fn params_from_point(u: &[f64; 4]) -> ForwardParams {
    let (a, b) = (u[0].abs(), u[1].abs());
    ForwardParams {
        g_lo: a.min(b),
        g_hi: a.max(b),
        chirp: u[2],
        phase_noise: u[3].abs(),
    }
}

struct NelderMeadOutcome {
    point: [f64; 4],
    value: f64,
    converged: bool,
}

fn nelder_mead<F: Fn(&[f64; 4]) -> f64>(f: F, start: [f64; 4], scale: [f64; 4], config: &FitConfig) -> NelderMeadOutcome {
    let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(5);
    simplex.push((start, f(&start)));
    for i in 0..4 {
        let mut p = start;
        p[i] += scale[i];
        simplex.push((p, f(&p)));
    }
    let mut evaluations = 5;
    let combine = |a: &[f64; 4], b: &[f64; 4], t: f64| -> [f64; 4] {
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = a[i] + t * (b[i] - a[i]);
        }
        out
    };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[4].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= config.tolerance && size <= 1e-9 {
            return NelderMeadOutcome {
                point: simplex[0].0,
                value: simplex[0].1,
                converged: true,
            };
        }
        if evaluations >= config.max_evaluations {
            return NelderMeadOutcome {
                point: simplex[0].0,
                value: simplex[0].1,
                converged: false,
            };
        }
        let mut centroid = [0.0; 4];
        for (p, _) in &simplex[..4] {
            for i in 0..4 {
                centroid[i] += p[i] / 4.0;
            }
        }
        let worst = simplex[4];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        evaluations += 1;
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            evaluations += 1;
            simplex[4] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[3].1 {
            simplex[4] = (reflected, fr);
        } else {
            let (target, ft) = if fr < worst.1 { (reflected, fr) } else { worst };
            let contracted = combine(&centroid, &target, 0.5);
            let fc = f(&contracted);
            evaluations += 1;
            if fc < ft {
                simplex[4] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = combine(&best, &entry.0, 0.5);
                    entry.1 = f(&entry.0);
                }
                evaluations += 4;
            }
        }
    }
}

/// Minimize `‖model_density(p) − target‖_F` by Nelder–Mead. The first run
/// starts at `init`; the remaining `restarts − 1` start from random
/// perturbations of it (seeded by `config.seed`).
pub fn fit_forward_model(target: &DensityMatrix, init: &ForwardParams, config: &FitConfig) -> Result<FitResult> {
    init.validate()?;
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("at least one restart is required".into()));
    }
    let window = target.window();
    let objective = |u: &[f64; 4]| -> f64 {
        model_density_quiet(&params_from_point(u), window, config.coupling_nodes)
            .and_then(|(m, _)| m.frobenius_distance(target))
            .unwrap_or(f64::INFINITY)
    };
    let base = [init.g_lo, init.g_hi, init.chirp, init.phase_noise];
    let starts: Vec<[f64; 4]> = (0..config.restarts)
        .map(|r| {
            if r == 0 {
                return base;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
            let mut p = base;
            p[0] *= rng.random_range(0.7..1.3);
            p[1] *= rng.random_range(0.7..1.3);
            p[2] += rng.random_range(-0.3..0.3) * p[2].abs().max(0.05);
            p[3] = p[3].max(0.01) * rng.random_range(0.5..1.5);
            p
        })
        .collect();

    let runs: Vec<NelderMeadOutcome> = starts
        .par_iter()
        .map(|s| {
            let scale = [
                0.1 * s[0].abs().max(0.1),
                0.1 * s[1].abs().max(0.1),
                0.1 * s[2].abs().max(0.05),
                0.2 * s[3].abs().max(0.01),
            ];
            nelder_mead(objective, *s, scale, config)
        })
        .collect();

    let best = runs
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one restart");
    if !best.value.is_finite() {
        return Err(Error::Curvature("forward-model objective is not finite at any restart".into()));
    }
    let stagnated = runs.iter().all(|r| !r.converged);
    if stagnated {
        log::warn!("forward-model fit hit the evaluation budget in every restart");
    }
    let params = params_from_point(&best.point);
    let model = model_density(&params, window, config.coupling_nodes)?;
    Ok(FitResult {
        params,
        distance: best.value,
        fidelity: fidelity(&model, target)?,
        stagnated,
        restart_distances: runs.iter().map(|r| r.value).collect(),
    })
}
