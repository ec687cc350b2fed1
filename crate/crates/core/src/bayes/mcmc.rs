use std::collections::HashSet;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{LogTarget, MapResult};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.02;
pub const DEFAULT_CHAINS: usize = 4;
pub const DEFAULT_THINNING: usize = 10;

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    Ok(())
}

/// Draw from `N(0, H⁻¹)` by solving `Lᵀ ξ = z` with `H = L Lᵀ`.
fn curvature_draw<R: Rng + ?Sized>(map: &MapResult, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(map.dim(), |_, _| rng.sample(StandardNormal));
    map.cholesky_factor()
        .tr_solve_lower_triangular(&z)
        .expect("Cholesky factor has a positive diagonal")
}

/// Sample from `q(· | x_j) = N(x_MAP + √(1−β²)(x_j − x_MAP), β² H⁻¹)`.
pub fn pcn_propose<R: Rng + ?Sized>(
    current: &DVector<f64>,
    map: &MapResult,
    beta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_beta(beta)?;
    if current.len() != map.dim() {
        return Err(Error::dimension(map.dim(), current.len()));
    }
    let centre = map.x_map.components();
    let contraction = (1.0 - beta * beta).sqrt();
    let noise = curvature_draw(map, rng);
    Ok(centre + (current - centre) * contraction + noise * beta)
}

/// `log q(to | from)` up to the (symmetric) normalizing constant.
fn log_proposal_density(map: &MapResult, beta: f64, from: &DVector<f64>, to: &DVector<f64>) -> f64 {
    let centre = map.x_map.components();
    let contraction = (1.0 - beta * beta).sqrt();
    let residual = to - centre - (from - centre) * contraction;
    let whitened = map.cholesky_factor().transpose() * residual;
    -0.5 * whitened.norm_squared() / (beta * beta)
}

/// `log α` before the `min{0, ·}` clamp, for moving from `current` (with
/// known log-density) to `proposal`. NaN posteriors become `−∞`.
pub fn log_acceptance_ratio(
    map: &MapResult,
    beta: f64,
    current: &DVector<f64>,
    current_log_density: f64,
    proposal: &DVector<f64>,
    proposal_log_density: f64,
) -> f64 {
    if proposal_log_density.is_nan() {
        return f64::NEG_INFINITY;
    }
    (proposal_log_density + log_proposal_density(map, beta, proposal, current))
        - (current_log_density + log_proposal_density(map, beta, current, proposal))
}

#[derive(Debug, Clone)]
pub struct MhOutcome {
    pub next: DVector<f64>,
    pub accepted: bool,
    /// `log α` (unclamped).
    pub log_alpha: f64,
    /// Log-density at `next`.
    pub log_density: f64,
}

/// One Metropolis–Hastings update with the pCN proposal. On rejection the
/// chain stays at `current`.
pub fn mh_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    map: &MapResult,
    beta: f64,
    current: &DVector<f64>,
    current_log_density: f64,
    rng: &mut R,
) -> Result<MhOutcome> {
    let proposal = pcn_propose(current, map, beta, rng)?;
    let proposal_log_density = target.log_density(&proposal);
    let log_alpha = log_acceptance_ratio(
        map,
        beta,
        current,
        current_log_density,
        &proposal,
        proposal_log_density,
    );
    let u: f64 = rng.random();
    let accepted = log_alpha >= 0.0 || u.ln() < log_alpha;
    Ok(if accepted {
        MhOutcome {
            next: proposal,
            accepted,
            log_alpha,
            log_density: proposal_log_density,
        }
    } else {
        MhOutcome {
            next: current.clone(),
            accepted,
            log_alpha,
            log_density: current_log_density,
        }
    })
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub beta: f64,
    /// Stored states per chain; each chain runs `n_samples · thinning` updates.
    pub n_samples: usize,
    /// Keep every `thinning`-th state.
    pub thinning: usize,
    /// One seed per chain.
    pub seeds: Vec<u64>,
}

impl ChainConfig {
    /// `n_chains` chains seeded `0..n_chains` with the default β and thinning.
    pub fn new(n_chains: usize, n_samples: usize) -> Self {
        Self {
            beta: DEFAULT_BETA,
            n_samples,
            thinning: DEFAULT_THINNING,
            seeds: (0..n_chains as u64).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one chain is required".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::InvalidArgument("chain seeds must be distinct".into()));
        }
        Ok(())
    }
}

/// Stored states of one chain plus acceptance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub samples: Vec<DVector<f64>>,
    pub acceptance_count: u64,
    pub proposal_count: u64,
    pub seed: u64,
    pub beta: f64,
    pub thinning: usize,
}

impl ChainRecord {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposal_count == 0 {
            0.0
        } else {
            self.acceptance_count as f64 / self.proposal_count as f64
        }
    }

    pub fn param_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }
}

fn run_chain<T: LogTarget + ?Sized>(target: &T, map: &MapResult, config: &ChainConfig, seed: u64) -> Result<ChainRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // first state drawn from the Gaussian approximation N(x_MAP, H⁻¹)
    let mut current = map.x_map.components() + curvature_draw(map, &mut rng);
    let mut current_log_density = target.log_density(&current);
    let n_steps = config.n_samples * config.thinning;
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut accepted = 0u64;
    for step in 0..n_steps {
        let out = mh_step(target, map, config.beta, &current, current_log_density, &mut rng)?;
        if out.accepted {
            accepted += 1;
        }
        current = out.next;
        current_log_density = out.log_density;
        if (step + 1) % config.thinning == 0 {
            samples.push(current.clone());
        }
    }
    Ok(ChainRecord {
        samples,
        acceptance_count: accepted,
        proposal_count: n_steps as u64,
        seed,
        beta: config.beta,
        thinning: config.thinning,
    })
}

/// Runs independent chains in parallel, one per seed.
pub fn run_chains<T: LogTarget + ?Sized>(target: &T, map: &MapResult, config: &ChainConfig) -> Result<Vec<ChainRecord>> {
    config.validate()?;
    if target.dim() != map.dim() {
        return Err(Error::dimension(target.dim(), map.dim()));
    }
    config
        .seeds
        .par_iter()
        .map(|&seed| run_chain(target, map, config, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{GaussianTarget, ParamVector};
    use nalgebra::DMatrix;

    fn gaussian_setup() -> (GaussianTarget, MapResult) {
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let precision = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let target = GaussianTarget::new(mean.clone(), precision.clone()).unwrap();
        let map = MapResult::from_curvature(ParamVector::new(mean).unwrap(), precision, 0.0).unwrap();
        (target, map)
    }

    #[test]
    fn beta_is_validated() {
        let (_, map) = gaussian_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = map.x_map.components().clone();
        assert!(pcn_propose(&x, &map, 0.0, &mut rng).is_err());
        assert!(pcn_propose(&x, &map, 1.5, &mut rng).is_err());
        assert!(pcn_propose(&x, &map, 1.0, &mut rng).is_ok());
    }

    #[test]
    fn beta_one_ignores_current_point() {
        let (_, map) = gaussian_setup();
        let a = pcn_propose(&DVector::from_vec(vec![10.0, 10.0, 10.0]), &map, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = pcn_propose(&DVector::from_vec(vec![-3.0, 0.0, 7.0]), &map, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn proposal_moments() {
        let (_, map) = gaussian_setup();
        let beta = 0.3;
        let current = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| pcn_propose(&current, &map, beta, &mut rng).unwrap()).collect();
        let mean = draws.iter().fold(DVector::zeros(3), |acc, d| acc + d) / n as f64;
        let centre = map.x_map.components();
        let expected_mean = centre + (&current - centre) * (1.0 - beta * beta).sqrt();
        let expected_cov = map.covariance() * (beta * beta);
        for i in 0..3 {
            let se = (expected_cov[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - expected_mean[i]).abs() < 4.0 * se);
        }
        let mut cov = DMatrix::zeros(3, 3);
        for d in &draws {
            let r = d - &mean;
            cov += &r * r.transpose();
        }
        cov /= (n - 1) as f64;
        let rel = (&cov - &expected_cov).norm() / expected_cov.norm();
        assert!(rel < 0.05, "covariance error {rel}");
    }

    #[test]
    fn gaussian_target_is_always_accepted() {
        let (target, map) = gaussian_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let mut lp = target.log_density(&x);
        for _ in 0..2000 {
            let out = mh_step(&target, &map, 0.4, &x, lp, &mut rng).unwrap();
            assert!(out.log_alpha.abs() < 1e-8, "{}", out.log_alpha);
            assert!(out.accepted);
            x = out.next;
            lp = out.log_density;
        }
    }

    #[test]
    fn identical_proposal_has_unit_ratio() {
        let (target, map) = gaussian_setup();
        let x = DVector::from_vec(vec![0.3, 0.2, 0.1]);
        let lp = target.log_density(&x) + 5.0;
        assert_eq!(log_acceptance_ratio(&map, 0.1, &x, lp, &x, lp), 0.0);
    }

    struct Forbidden;
    impl LogTarget for Forbidden {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, x: &DVector<f64>) -> f64 {
            if x[0] > 0.0 {
                -1e12 // floor-dominated likelihood
            } else if x[0].is_nan() {
                f64::NAN
            } else {
                -0.5 * x[0] * x[0]
            }
        }
    }

    #[test]
    fn forbidden_region_is_rejected() {
        let map = MapResult::from_curvature(
            ParamVector::from_vec(vec![50.0]).unwrap(),
            DMatrix::from_element(1, 1, 1.0),
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DVector::from_vec(vec![-1.0]);
        let lp = Forbidden.log_density(&x);
        for _ in 0..200 {
            let out = mh_step(&Forbidden, &map, 1.0, &x, lp, &mut rng).unwrap();
            assert!(!out.accepted);
            assert_eq!(out.next, x);
        }
        let nan = log_acceptance_ratio(&map, 1.0, &x, lp, &x, f64::NAN);
        assert_eq!(nan, f64::NEG_INFINITY);
    }

    #[test]
    fn chains_are_deterministic_and_distinct() {
        let (target, map) = gaussian_setup();
        let config = ChainConfig {
            beta: 0.5,
            n_samples: 100,
            thinning: 5,
            seeds: vec![1, 2, 3],
        };
        let a = run_chains(&target, &map, &config).unwrap();
        let b = run_chains(&target, &map, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].samples.len(), 100);
        assert_ne!(a[0].samples, a[1].samples);
        let dup = ChainConfig {
            seeds: vec![1, 1],
            ..config
        };
        assert!(run_chains(&target, &map, &dup).is_err());
    }

    #[test]
    fn gaussian_chains_centre_on_map() {
        let (target, map) = gaussian_setup();
        let config = ChainConfig {
            beta: 0.6,
            n_samples: 20_000,
            thinning: 1,
            seeds: vec![10, 11, 12, 13],
        };
        let chains = run_chains(&target, &map, &config).unwrap();
        let all: Vec<&DVector<f64>> = chains.iter().flat_map(|c| c.samples.iter()).collect();
        let n = all.len() as f64;
        let mean = all.iter().fold(DVector::zeros(3), |acc, d| acc + *d) / n;
        let cov = map.covariance();
        for i in 0..3 {
            // pCN on its own Gaussian is an AR(1) with coefficient √(1−β²);
            // inflate the standard error by the integrated autocorrelation.
            let rho: f64 = (1.0 - 0.36f64).sqrt();
            let iact = (1.0 + rho) / (1.0 - rho);
            let se = (cov[(i, i)] * iact / n).sqrt();
            assert!((mean[i] - map.x_map.components()[i]).abs() < 4.0 * se);
        }
        for c in &chains {
            assert_eq!(c.acceptance_count, c.proposal_count);
        }
    }
}
