//! `fetomo` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fetomo::bayes::{
    find_map, param_to_density, run_chains, ChainConfig, ChainRecord, MapConfig, ParamVector, PosteriorModel,
    DEFAULT_BETA, DEFAULT_CHAINS, DEFAULT_THINNING,
};
use fetomo::diagnostics::{autocorrelation, gelman_rubin, gelman_rubin_map, posterior_summary, retained_samples};
use fetomo::diagnostics::{DEFAULT_BURN_IN, ZERO_LOSS};
use fetomo::forward::{fit_forward_model, model_density, FitConfig, DEFAULT_COUPLING_NODES, DEFAULT_RESTARTS};
use fetomo::io;
use fetomo::ladder::interaction_unitary;
use fetomo::mle::{mle_reconstruct, MleConfig};
use fetomo::phase_space::{align_peak, coherence_moments, fwhm, temporal_density, wigner, PositionGrid};
use fetomo::spectrogram::{expected_counts, sample_counts, simulate_spectrogram};
use fetomo::{Coupling, DensityMatrix, EnergyWindow, Error, PhaseGrid};
use num_complex::Complex64;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fetomo", version, about = "Free-electron energy-ladder state tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a spectrogram from a state.
    Simulate(SimulateArgs),
    /// Iterative maximum-likelihood reconstruction.
    ReconstructMle(MleArgs),
    /// Bayesian reconstruction: MAP point, sampling, summary.
    #[command(subcommand)]
    ReconstructBayes(BayesCommand),
    /// Chain diagnostics for one scalar functional.
    Diagnose(DiagnoseArgs),
    /// Phase-space and temporal analysis of a density matrix.
    Analyze(AnalyzeArgs),
    /// Fit the forward model to a reconstructed state.
    FitForward(FitArgs),
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct StateSource {
    /// Density-matrix file.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Coupling `re,im` of a single PINEM interaction acting on |0⟩.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    pinem_g: Option<Complex64>,
    /// Forward-model parameter file.
    #[arg(long)]
    forward_params: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: StateSource,
    /// Sweep coupling magnitude.
    #[arg(long)]
    g_abs: f64,
    /// Number of uniformly spaced phases.
    #[arg(long, default_value_t = fetomo::spectrogram::DEFAULT_PHASE_COUNT)]
    phases: usize,
    /// State window `n_min,n_max` (for --pinem-g and --forward-params).
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<EnergyWindow>,
    /// Electrons per phase; probabilities are written when absent.
    #[arg(long)]
    counts_per_phase: Option<u64>,
    /// Seed of the multinomial shot noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write expected counts instead of drawing shot noise.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MleArgs {
    #[arg(long)]
    spectrogram: PathBuf,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 1.0)]
    dilution: f64,
    /// Reconstruction window `n_min,n_max`; the data window by default.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    state_window: Option<EnergyWindow>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BayesCommand {
    /// Locate the MAP point and its curvature.
    Map {
        #[arg(long)]
        spectrogram: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reconstruction window `n_min,n_max`; the data window by default.
        #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
        state_window: Option<EnergyWindow>,
        #[arg(long)]
        out_map: PathBuf,
    },
    /// Run preconditioned Crank–Nicolson chains from a MAP file.
    Sample {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = DEFAULT_CHAINS)]
        chains: usize,
        /// Stored states per chain; each runs `samples · thinning` updates.
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_THINNING)]
        thinning: usize,
        /// Comma-separated chain seeds; `0..chains` by default.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Posterior mean, standard deviations and R̂ from a chain directory.
    Summarize {
        #[arg(long)]
        chains: PathBuf,
        /// Burn-in in steps before thinning.
        #[arg(long, default_value_t = DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    chains: PathBuf,
    /// `zero_loss`, `re[N,M]` or `im[N,M]`.
    #[arg(long, default_value = ZERO_LOSS)]
    functional: String,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[command(subcommand)]
    statistic: Statistic,
}

#[derive(Subcommand)]
enum Statistic {
    GelmanRubin,
    Autocorrelation {
        #[arg(long, default_value_t = 100)]
        max_lag: usize,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    state: PathBuf,
    #[command(flatten)]
    mode: AnalyzeMode,
    /// Number of position grid points.
    #[arg(long, default_value_t = fetomo::phase_space::DEFAULT_GRID_POINTS)]
    grid: usize,
    /// Cyclically shift the temporal density so its peak sits at x = 0.
    #[arg(long, requires = "temporal")]
    align: bool,
    #[arg(long, default_value_t = 4)]
    n_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct AnalyzeMode {
    #[arg(long)]
    wigner: bool,
    #[arg(long)]
    temporal: bool,
    #[arg(long)]
    fwhm: bool,
    #[arg(long)]
    coherence: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    init: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let (re, im) = s.split_once(',').ok_or("expected `re,im`")?;
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok(Complex64::new(parse(re)?, parse(im)?))
}

fn parse_window(s: &str) -> Result<EnergyWindow, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `n_min,n_max`")?;
    let parse = |t: &str| t.trim().parse::<i32>().map_err(|e| e.to_string());
    EnergyWindow::new(parse(lo)?, parse(hi)?).map_err(|e| e.to_string())
}

/// Failure of a command, tagged with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) => Failure::Usage(msg),
            Error::Curvature(_)
            | Error::UndefinedStatistic(_)
            | Error::UndefinedWidth(_)
            | Error::AmbiguousPeak { .. } => Failure::Numerical(msg),
            _ => Failure::Data(msg),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Prefixes the file name to any failure of a read or write.
fn at<T>(path: &Path, result: fetomo::Result<T>) -> Result<T, Failure> {
    result.map_err(|e| match Failure::from(e) {
        Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
        Failure::Data(m) => Failure::Data(format!("{}: {m}", path.display())),
        Failure::Numerical(m) => Failure::Numerical(format!("{}: {m}", path.display())),
    })
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn need_window(window: Option<EnergyWindow>, flag: &str) -> Result<EnergyWindow, Failure> {
    window.ok_or_else(|| Failure::Usage(format!("{flag} needs --window")))
}

fn simulate(args: SimulateArgs) -> CmdResult {
    let src = args.source;
    let rho = if let Some(path) = &src.state {
        at(&path, io::read_density(path))?
    } else if let Some(g) = src.pinem_g {
        let window = need_window(args.window, "--pinem-g")?;
        let zero = window
            .position(0)
            .ok_or_else(|| Failure::Usage("window must contain N = 0".into()))?;
        let u = interaction_unitary(Coupling::from_complex(g)?, window);
        let column: Vec<Complex64> = u.entries().column(zero).iter().copied().collect();
        DensityMatrix::pure(window, &column)?
    } else if let Some(path) = &src.forward_params {
        let window = need_window(args.window, "--forward-params")?;
        model_density(&at(&path, io::read_forward_params(path))?, window, DEFAULT_COUPLING_NODES)?
    } else {
        unreachable!("clap enforces one state source")
    };
    let phases = PhaseGrid::uniform(args.phases)?;
    let probs = simulate_spectrogram(&rho, args.g_abs, &phases)?;
    let out = match args.counts_per_phase {
        None => probs,
        Some(n) if args.noiseless => expected_counts(&probs, n)?,
        Some(n) => sample_counts(&probs, n, args.seed)?,
    };
    at(&args.out, io::write_spectrogram(&args.out, &out))?;
    Ok(())
}

fn reconstruct_mle(args: MleArgs) -> CmdResult {
    let data = at(&args.spectrogram, io::read_spectrogram(&args.spectrogram))?;
    let config = MleConfig {
        max_iterations: args.max_iter,
        log_likelihood_tolerance: args.tol,
        dilution: args.dilution,
        state_window: args.state_window,
        ..MleConfig::default()
    };
    let outcome = mle_reconstruct(&data, &config)?;
    if !outcome.converged {
        log::warn!(
            "stopped after {} iterations without meeting the tolerance; writing the last iterate",
            outcome.iterations
        );
    }
    at(&args.out, io::write_density(&args.out, &outcome.state))?;
    println!(
        "{}",
        json!({
            "iterations": outcome.iterations,
            "converged": outcome.converged,
            "log_likelihood": outcome.trace.last(),
            "final_dilution": outcome.final_dilution,
        })
    );
    Ok(())
}

fn load_chains(dir: &Path) -> Result<(Vec<ChainRecord>, EnergyWindow), Failure> {
    let headers = io::chain_headers_in(dir)?;
    if headers.is_empty() {
        return Err(Failure::Data(format!("no chain headers in {}", dir.display())));
    }
    let mut chains = Vec::with_capacity(headers.len());
    let mut window = None;
    for path in &headers {
        let (record, w) = at(&path, io::read_chain(path))?;
        let w = w.ok_or_else(|| Failure::Data(format!("{}: header lacks n_min/n_max", path.display())))?;
        if window.is_some_and(|prev| prev != w) {
            return Err(Failure::Data("chains disagree on the state window".into()));
        }
        window = Some(w);
        chains.push(record);
    }
    Ok((chains, window.expect("at least one chain")))
}

fn reconstruct_bayes(cmd: BayesCommand) -> CmdResult {
    match cmd {
        BayesCommand::Map {
            spectrogram,
            seed,
            state_window,
            out_map,
        } => {
            let data = at(&spectrogram, io::read_spectrogram(&spectrogram))?;
            let window = state_window.unwrap_or(data.window());
            let model = PosteriorModel::new(data.clone(), window)?;
            let config = MapConfig {
                seed,
                ..MapConfig::default()
            };
            let map = find_map(&model, None, &config)?;
            if !map.converged {
                log::warn!("MAP search stopped after {} steps before converging", map.steps);
            }
            println!(
                "{}",
                json!({"log_posterior": map.log_posterior_at_map, "converged": map.converged, "steps": map.steps})
            );
            io::write_map(
                &out_map,
                &io::MapFile {
                    spectrogram: data,
                    state_window: window,
                    map,
                },
            )?;
            Ok(())
        }
        BayesCommand::Sample {
            map,
            beta,
            chains,
            samples,
            thinning,
            seeds,
            out_dir,
        } => {
            let file = at(&map, io::read_map(&map))?;
            let model = PosteriorModel::new(file.spectrogram.clone(), file.state_window)?;
            let seeds = seeds.unwrap_or_else(|| (0..chains as u64).collect());
            if seeds.len() != chains {
                return Err(Failure::Usage(format!("{} seeds given for {chains} chains", seeds.len())));
            }
            let config = ChainConfig {
                beta,
                n_samples: samples,
                thinning,
                seeds,
            };
            let records = run_chains(&model, &file.map, &config)?;
            fs::create_dir_all(&out_dir).map_err(|e| Failure::Data(format!("{}: {e}", out_dir.display())))?;
            for (i, record) in records.iter().enumerate() {
                io::write_chain(&out_dir.join(format!("chain_{i}.json")), record, file.state_window)?;
                log::info!("chain {i}: acceptance {:.3}", record.acceptance_rate());
            }
            let rates: Vec<f64> = records.iter().map(ChainRecord::acceptance_rate).collect();
            println!("{}", json!({ "acceptance": rates }));
            Ok(())
        }
        BayesCommand::Summarize { chains, burn_in, out } => {
            let (records, window) = load_chains(&chains)?;
            let summary = posterior_summary(&records, window, burn_in, None)?;
            let rhat = gelman_rubin_map(&records, window, burn_in)?;
            let worst = rhat.values().copied().fold(f64::NAN, f64::max);
            println!("{}", json!({"retained": summary.retained, "max_rhat": worst}));
            at(&out, io::write_summary(&out, &summary, Some(&rhat)))?;
            Ok(())
        }
    }
}

/// Scalar functional of a density matrix, selected by name.
fn functional(name: &str, window: EnergyWindow) -> Result<Box<dyn Fn(&DensityMatrix) -> f64>, Failure> {
    if name == ZERO_LOSS {
        let zero = window
            .position(0)
            .ok_or_else(|| Failure::Data("state window lacks N = 0".into()))?;
        return Ok(Box::new(move |r| r.entries()[(zero, zero)].re));
    }
    let bad = || Failure::Usage(format!("unknown functional `{name}`; use zero_loss, re[N,M] or im[N,M]"));
    let (part, rest) = name.split_once('[').ok_or_else(bad)?;
    let (n, m) = rest.strip_suffix(']').and_then(|r| r.split_once(',')).ok_or_else(bad)?;
    let n: i32 = n.trim().parse().map_err(|_| bad())?;
    let m: i32 = m.trim().parse().map_err(|_| bad())?;
    let (i, j) = match (window.position(n), window.position(m)) {
        (Some(i), Some(j)) => (i, j),
        _ => return Err(Failure::Usage(format!("index outside window [{}, {}]", window.n_min(), window.n_max()))),
    };
    match part {
        "re" => Ok(Box::new(move |r| r.entries()[(i, j)].re)),
        "im" => Ok(Box::new(move |r| r.entries()[(i, j)].im)),
        _ => Err(bad()),
    }
}

fn diagnose(args: DiagnoseArgs) -> CmdResult {
    let (records, window) = load_chains(&args.chains)?;
    let f = functional(&args.functional, window)?;
    let series = records
        .iter()
        .map(|c| {
            retained_samples(c, args.burn_in)
                .iter()
                .map(|x| Ok(f(&param_to_density(&ParamVector::new(x.clone())?, window)?)))
                .collect::<Result<Vec<f64>, Error>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    match args.statistic {
        Statistic::GelmanRubin => {
            let n = series.iter().map(Vec::len).min().unwrap_or(0);
            let trimmed: Vec<Vec<f64>> = series.iter().map(|s| s[..n].to_vec()).collect();
            let rhat = gelman_rubin(&trimmed)?;
            println!("{}", json!({"functional": args.functional, "rhat": rhat}));
        }
        Statistic::Autocorrelation { max_lag } => {
            let acfs = series
                .iter()
                .map(|s| autocorrelation(s, max_lag))
                .collect::<Result<Vec<_>, _>>()?;
            println!("{}", json!({"functional": args.functional, "autocorrelation": acfs}));
        }
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> CmdResult {
    let rho = at(&args.state, io::read_density(&args.state))?;
    let grid = PositionGrid::new(args.grid)?;
    let mode = args.mode;
    if mode.wigner {
        let table = wigner(&rho, grid);
        write_file(&args.out, &io::wigner_csv(&table))
    } else if mode.temporal {
        let mut density = temporal_density(&rho, grid);
        if args.align {
            density = align_peak(&density).0;
        }
        write_file(&args.out, &io::temporal_csv(grid, &density)?)
    } else if mode.fwhm {
        let width = fwhm(&temporal_density(&rho, grid))?;
        write_file(&args.out, &json!({ "fwhm": width }).to_string())
    } else {
        let moments = coherence_moments(&rho, args.n_max)?;
        let rows: Vec<_> = moments
            .iter()
            .enumerate()
            .map(|(n, b)| json!({"n": n, "re": b.re, "im": b.im, "abs": b.norm()}))
            .collect();
        write_file(&args.out, &serde_json::to_string_pretty(&rows).expect("plain JSON"))
    }
}

fn fit_forward(args: FitArgs) -> CmdResult {
    let target = at(&args.target, io::read_density(&args.target))?;
    let init = at(&args.init, io::read_forward_params(&args.init))?;
    let config = FitConfig {
        restarts: args.restarts,
        seed: args.seed,
        ..FitConfig::default()
    };
    let fit = fit_forward_model(&target, &init, &config)?;
    at(&args.out, io::write_forward_params(&args.out, &fit.params))?;
    println!(
        "{}",
        json!({
            "distance": fit.distance,
            "fidelity": fit.fidelity,
            "stagnated": fit.stagnated,
            "restart_distances": fit.restart_distances,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ReconstructMle(a) => reconstruct_mle(a),
        Command::ReconstructBayes(c) => reconstruct_bayes(c),
        Command::Diagnose(a) => diagnose(a),
        Command::Analyze(a) => analyze(a),
        Command::FitForward(a) => fit_forward(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
