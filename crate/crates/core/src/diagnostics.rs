//! Convergence diagnostics and posterior summaries over stored chains.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::bayes::{param_to_density, ChainRecord, ParamVector, PosteriorModel};
use crate::error::{Error, Result};
use crate::ladder::{DensityMatrix, EnergyWindow};

/// Pre-thinning steps discarded by default.
pub const DEFAULT_BURN_IN: usize = 20_000;

/// Name of the zero-loss occupation `⟨0|ρ|0⟩` trace.
pub const ZERO_LOSS: &str = "zero_loss";
/// Name of the log-posterior trace.
pub const LOG_POSTERIOR: &str = "log_posterior";

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Potential scale reduction `R̂ = √((n−1)/n + B/(nW))`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("Gelman–Rubin needs at least two chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("chains must have equal length".into()));
    }
    if n < 10 {
        return Err(Error::InvalidArgument(format!("chains of length {n} are shorter than 10")));
    }
    let nf = n as f64;
    let m = chains.len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = nf * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return Err(Error::UndefinedStatistic("zero within-chain variance".into()));
    }
    Ok(((nf - 1.0) / nf + b / (nf * w)).sqrt())
}

/// Normalized, mean-subtracted autocorrelation for lags `0..=max_lag`
/// using the biased (divide-by-n) estimator.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= 2 * max_lag {
        return Err(Error::InvalidArgument(format!(
            "series of length {n} is too short for max_lag {max_lag}"
        )));
    }
    let mu = mean(series);
    let centred: Vec<f64> = series.iter().map(|v| v - mu).collect();
    let c0 = centred.iter().map(|v| v * v).sum::<f64>();
    if !(c0 > 0.0) {
        return Err(Error::UndefinedStatistic("constant series".into()));
    }
    Ok((0..=max_lag)
        .into_par_iter()
        .map(|k| centred[..n - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

/// Samples of one chain that survive a burn-in given in pre-thinning steps.
/// Stored sample `k` was taken after step `(k + 1)·thinning`.
pub fn retained_samples(chain: &ChainRecord, burn_in: usize) -> &[DVector<f64>] {
    let thin = chain.thinning.max(1);
    let skip = burn_in.div_ceil(thin).min(chain.samples.len());
    &chain.samples[skip..]
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub mean_density: DensityMatrix,
    pub std_re: DMatrix<f64>,
    pub std_im: DMatrix<f64>,
    /// Per-chain scalar series over the retained samples, keyed by name.
    pub scalar_traces: BTreeMap<String, Vec<Vec<f64>>>,
    pub retained: usize,
}

fn chain_densities(chain: &ChainRecord, window: EnergyWindow, burn_in: usize) -> Result<Vec<DensityMatrix>> {
    retained_samples(chain, burn_in)
        .par_iter()
        .map(|x| param_to_density(&ParamVector::new(x.clone())?, window))
        .collect()
}

fn check_burn_in(chains: &[ChainRecord], burn_in: usize) -> Result<()> {
    if chains.is_empty() {
        return Err(Error::InvalidArgument("no chains".into()));
    }
    let shortest = chains.iter().map(|c| c.samples.len() * c.thinning.max(1)).min().unwrap_or(0);
    if burn_in >= shortest {
        return Err(Error::InvalidArgument(format!(
            "burn-in {burn_in} is not shorter than the shortest chain ({shortest} steps)"
        )));
    }
    Ok(())
}

/// Entrywise mean and standard deviation of `ρ(x)` over retained samples,
/// plus zero-loss (and, given a model, log-posterior) traces.
pub fn posterior_summary(
    chains: &[ChainRecord],
    window: EnergyWindow,
    burn_in: usize,
    model: Option<&PosteriorModel>,
) -> Result<PosteriorSummary> {
    check_burn_in(chains, burn_in)?;
    let per_chain: Vec<Vec<DensityMatrix>> = chains
        .iter()
        .map(|c| chain_densities(c, window, burn_in))
        .collect::<Result<_>>()?;
    let count: usize = per_chain.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(Error::InvalidArgument("no samples remain after burn-in".into()));
    }

    let d = window.dim();
    let mut sum = DMatrix::<Complex64>::zeros(d, d);
    for rho in per_chain.iter().flatten() {
        sum += rho.entries();
    }
    let mean_entries = sum / Complex64::new(count as f64, 0.0);
    let mut var_re = DMatrix::<f64>::zeros(d, d);
    let mut var_im = DMatrix::<f64>::zeros(d, d);
    for rho in per_chain.iter().flatten() {
        let diff = rho.entries() - &mean_entries;
        var_re += diff.map(|z| z.re * z.re);
        var_im += diff.map(|z| z.im * z.im);
    }
    let denom = count.saturating_sub(1).max(1) as f64;
    let std_re = var_re.map(|v| (v / denom).sqrt());
    let std_im = var_im.map(|v| (v / denom).sqrt());

    let mut scalar_traces = BTreeMap::new();
    let zero = window.position(0).expect("windows contain N = 0");
    scalar_traces.insert(
        ZERO_LOSS.to_string(),
        per_chain
            .iter()
            .map(|c| c.iter().map(|rho| rho.entries()[(zero, zero)].re).collect())
            .collect(),
    );
    if let Some(model) = model {
        let traces = chains
            .iter()
            .map(|c| {
                retained_samples(c, burn_in)
                    .par_iter()
                    .map(|x| model.log_posterior(&ParamVector::new(x.clone())?))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        scalar_traces.insert(LOG_POSTERIOR.to_string(), traces);
    }

    Ok(PosteriorSummary {
        mean_density: DensityMatrix::new_unchecked(window, mean_entries),
        std_re,
        std_im,
        scalar_traces,
        retained: count,
    })
}

/// `R̂` for every density-matrix entry (real and imaginary parts) and the
/// zero-loss occupation. Chains are truncated to a common length; entries
/// whose within-chain variance vanishes identically (such as the imaginary
/// part of the diagonal) are omitted.
pub fn gelman_rubin_map(
    chains: &[ChainRecord],
    window: EnergyWindow,
    burn_in: usize,
) -> Result<BTreeMap<String, f64>> {
    check_burn_in(chains, burn_in)?;
    let per_chain: Vec<Vec<DensityMatrix>> = chains
        .iter()
        .map(|c| chain_densities(c, window, burn_in))
        .collect::<Result<_>>()?;
    let n = per_chain.iter().map(Vec::len).min().unwrap_or(0);
    let d = window.dim();
    let mut functionals: Vec<(String, Box<dyn Fn(&DensityMatrix) -> f64 + Sync>)> = Vec::new();
    let zero = window.position(0).expect("windows contain N = 0");
    functionals.push((ZERO_LOSS.into(), Box::new(move |r| r.entries()[(zero, zero)].re)));
    for i in 0..d {
        for j in 0..d {
            let (ni, nj) = (window.index_at(i), window.index_at(j));
            if j >= i {
                functionals.push((format!("re[{ni},{nj}]"), Box::new(move |r| r.entries()[(i, j)].re)));
            }
            if j > i {
                functionals.push((format!("im[{ni},{nj}]"), Box::new(move |r| r.entries()[(i, j)].im)));
            }
        }
    }
    functionals
        .par_iter()
        .filter_map(|(name, f)| {
            let series: Vec<Vec<f64>> =
                per_chain.iter().map(|c| c[..n].iter().map(|r| f(r)).collect()).collect();
            match gelman_rubin(&series) {
                Ok(r) => Some(Ok((name.clone(), r))),
                Err(Error::UndefinedStatistic(_)) => None,
                Err(e) => Some(Err(e)),
            }
        })
        .collect()
}
