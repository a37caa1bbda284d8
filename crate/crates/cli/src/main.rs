//! Command-line front end: fit spliced ME-Pareto models to censored loss
//! data, simulate from fitted models, and compute risk measures, EVT
//! summaries and goodness-of-fit diagnostics.
//!
//! Exit codes: 0 success, 1 usage, 2 data/validation errors, 3 convergence
//! or numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use splicefit::data::{observations_to_csv, parse_observations, CensoredObservation};
use splicefit::diagnostics::{bootstrap_gof, plot_data, PlotKind};
use splicefit::em::{fit, FitConfig, InfoCriterion};
use splicefit::evt::{endpoint_gamma, hill, mean_excess, truncation_odds};
use splicefit::model::{SplicedModel, UpperBound};
use splicefit::risk::{premium, tvar, var};
use splicefit::search::{search, SearchConfig};

#[derive(Parser)]
#[command(
    name = "splicefit",
    version,
    about = "Spliced mixed-Erlang / Pareto loss-model fitting and risk measures"
)]
struct Cli {
    /// Cap on worker threads (falls back to SPLICE_EM_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the spliced model to censored/truncated observations
    Fit(FitArgs),
    /// Draw observations from a fitted model, optionally censored
    Simulate(SimulateArgs),
    /// Excess-loss premiums, VaR and TVaR from a fitted model
    Risk(RiskArgs),
    /// Goodness-of-fit statistics, bootstrap p-values and plot data
    Diagnose(DiagnoseArgs),
    /// Extreme-value exploration of raw data
    #[command(subcommand)]
    Evt(EvtCommand),
}

#[derive(Args)]
struct FitArgs {
    /// Observations CSV with header `lower,upper`
    #[arg(long)]
    data: PathBuf,
    /// Lower truncation point t^l
    #[arg(long = "tl")]
    t_lower: f64,
    /// Splicing point t
    #[arg(long)]
    t: f64,
    /// Upper truncation point T (a number, or `inf`)
    #[arg(long = "T", default_value = "inf", value_parser = parse_upper)]
    upper: UpperBound,
    /// Initial number of mixture components for the structure search
    #[arg(long = "m-init", default_value_t = 10)]
    m_init: usize,
    /// Spread factors: `a:b` for an integer range, or a comma list
    #[arg(long, default_value = "1:10", value_parser = parse_spread)]
    spread: std::vec::Vec<f64>,
    /// Criterion for the structure search
    #[arg(long, value_enum, default_value_t = IcArg::Aic)]
    ic: IcArg,
    /// Fix the shape vector (comma list) and skip the structure search
    #[arg(long = "fixed-shapes", value_parser = parse_shapes)]
    fixed_shapes: Option<std::vec::Vec<u32>>,
    /// EM stopping tolerance on the relative log-likelihood change
    #[arg(long = "em-tol", default_value_t = 1e-3)]
    em_tol: f64,
    /// Tolerance of the inner Newton solves
    #[arg(long = "newton-tol", default_value_t = 1e-10)]
    newton_tol: f64,
    /// EM iteration cap per fit
    #[arg(long = "max-iter", default_value_t = 2000)]
    max_em_iter: usize,
    /// Where to write the fitted model JSON
    #[arg(long = "out-model", default_value = "model.json")]
    out_model: PathBuf,
    /// Where to write the fit report JSON
    #[arg(long = "out-report", default_value = "report.json")]
    out_report: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Fitted model JSON
    #[arg(long)]
    model: PathBuf,
    /// Number of draws
    #[arg(short = 'n', long = "n")]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Right-censor at an independent exponential time with this mean
    #[arg(long = "right-censor-mean")]
    right_censor_mean: Option<f64>,
    /// Symmetric interval widening `p,w`: with probability p replace x by
    /// (x−d, x+d), d uniform on (0, w)
    #[arg(long = "interval-widen", value_parser = parse_pair)]
    interval_widen: Option<(f64, f64)>,
    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RiskArgs {
    /// Fitted model JSON
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated retentions; emits CSV `R,premium`
    #[arg(long, value_parser = parse_f64_list)]
    retentions: Option<std::vec::Vec<f64>>,
    /// Confidence levels for VaR, e.g. 0.995 (repeatable)
    #[arg(long = "var")]
    var_levels: Vec<f64>,
    /// Confidence levels for TVaR (repeatable)
    #[arg(long = "tvar")]
    tvar_levels: Vec<f64>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Fitted model JSON
    #[arg(long)]
    model: PathBuf,
    /// Observations CSV
    #[arg(long)]
    data: PathBuf,
    /// Directory for plot-data CSVs (survival, qq, pp, pp_minuslog)
    #[arg(long)]
    plots: Option<PathBuf>,
    /// Number of bootstrap replicates for KS/AD p-values (uncensored data)
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Re-run the full structure search inside each bootstrap replicate
    /// instead of refitting with the original shapes
    #[arg(long)]
    reselect: bool,
    /// EM tolerance used for bootstrap refits
    #[arg(long = "em-tol", default_value_t = 1e-6)]
    em_tol: f64,
    /// Output path for the GoF JSON (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvtCommand {
    /// Mean-excess points `k,v,e_hat` for threshold exploration
    Meplot {
        /// Observations CSV
        #[arg(long)]
        data: PathBuf,
        /// Use the Turnbull estimator (required for censored data)
        #[arg(long)]
        turnbull: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncated-Pareto endpoint estimation: emits {gamma_hat, D_hat, T_hat}
    Endpoint {
        /// Observations CSV (must be uncensored)
        #[arg(long)]
        data: PathBuf,
        /// Number of upper order statistics
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IcArg {
    Aic,
    Bic,
}

impl From<IcArg> for InfoCriterion {
    fn from(ic: IcArg) -> Self {
        match ic {
            IcArg::Aic => InfoCriterion::Aic,
            IcArg::Bic => InfoCriterion::Bic,
        }
    }
}

fn parse_upper(s: &str) -> Result<UpperBound, String> {
    let norm = s.trim().to_ascii_lowercase();
    if norm == "inf" || norm == "+inf" || norm == "infinity" {
        return Ok(UpperBound::Infinite);
    }
    norm.parse::<f64>()
        .map_err(|e| format!("invalid T: {e}"))
        .and_then(|v| {
            if v.is_finite() && v > 0.0 {
                Ok(UpperBound::Finite(v))
            } else {
                Err(format!("invalid T: {v}"))
            }
        })
}

fn parse_spread(s: &str) -> Result<Vec<f64>, String> {
    if let Some((a, b)) = s.split_once(':') {
        let lo: u32 = a.trim().parse().map_err(|e| format!("spread range: {e}"))?;
        let hi: u32 = b.trim().parse().map_err(|e| format!("spread range: {e}"))?;
        if lo == 0 || hi < lo {
            return Err(format!("invalid spread range {s}"));
        }
        return Ok((lo..=hi).map(|v| v as f64).collect());
    }
    parse_f64_list(s)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{e}: {p:?}")))
        .collect()
}

fn parse_shapes(s: &str) -> Result<Vec<u32>, String> {
    let shapes: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{e}: {p:?}")))
        .collect::<Result<_, _>>()?;
    if shapes.is_empty() || shapes[0] == 0 || shapes.windows(2).any(|w| w[0] >= w[1]) {
        return Err("shapes must be strictly increasing positive integers".to_string());
    }
    Ok(shapes)
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts = parse_f64_list(s)?;
    if parts.len() != 2 {
        return Err(format!("expected `p,w`, got {s:?}"));
    }
    Ok((parts[0], parts[1]))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("SPLICE_EM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    use splicefit::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. })
        | Some(Error::NoRoot { .. })
        | Some(Error::Numerical(_))
        | Some(Error::ZeroMass { .. })
        | Some(Error::DegenerateWindow(_)) => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Risk(args) => cmd_risk(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Evt(cmd) => cmd_evt(cmd),
    }
}

fn read_observations(path: &Path) -> Result<Vec<CensoredObservation>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(parse_observations(file)?)
}

fn read_model(path: &Path) -> Result<SplicedModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(SplicedModel::from_json(&text)?)
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    if args.t <= args.t_lower {
        bail!("--t ({}) must exceed --tl ({})", args.t, args.t_lower);
    }
    let obs = read_observations(&args.data)?;
    let mut cfg = FitConfig::new(args.t_lower, args.t, args.upper);
    cfg.m_init = args.m_init;
    cfg.spread_factors = args.spread.clone();
    cfg.ic = args.ic.into();
    cfg.em_tol = args.em_tol;
    cfg.newton_tol = args.newton_tol;
    cfg.max_em_iter = args.max_em_iter;

    let report = match &args.fixed_shapes {
        Some(shapes) => fit(&obs, &cfg, Some(shapes))?,
        None => search(&obs, &SearchConfig::new(cfg))?,
    };
    fs::write(&args.out_model, report.model.to_json())
        .with_context(|| format!("cannot write {}", args.out_model.display()))?;
    fs::write(&args.out_report, report.to_json())
        .with_context(|| format!("cannot write {}", args.out_report.display()))?;
    let m = &report.model;
    println!(
        "fitted M={} shapes={:?} theta={:.6} gamma={:.6} pi={:.6} | NLL={:.3} AIC={:.3} BIC={:.3} | s={} iters={}{}",
        report.chosen.m,
        m.body.shapes,
        m.body.theta,
        m.gamma(),
        m.pi,
        report.nll,
        report.aic,
        report.bic,
        report.chosen.spread,
        report.iterations,
        if report.converged { "" } else { " (NOT CONVERGED)" },
    );
    if !report.converged {
        return Err(splicefit::Error::NonConvergence {
            what: "EM fit",
            iterations: report.iterations,
        }
        .into());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    let model = read_model(&args.model)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let xs = model.sample_with(args.n, &mut rng);
    let big_t = model.upper.as_f64();
    let obs: Vec<CensoredObservation> = xs
        .into_iter()
        .map(|x| {
            if let Some(mean) = args.right_censor_mean {
                let c: f64 = -mean * (1.0 - rng.gen::<f64>()).ln();
                if c < x {
                    return CensoredObservation::interval(c.max(model.t_lower), f64::INFINITY)
                        .expect("right-censored interval");
                }
            }
            if let Some((p, w)) = args.interval_widen {
                if rng.gen::<f64>() < p {
                    let d = w * rng.gen::<f64>();
                    let l = (x - d).max(model.t_lower);
                    let u = (x + d).min(big_t);
                    return CensoredObservation::interval(l, u).expect("widened interval");
                }
            }
            CensoredObservation::exact(x)
        })
        .collect();
    emit(args.out.as_deref(), &observations_to_csv(&obs))
}

fn cmd_risk(args: RiskArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let mut output = String::new();
    if let Some(retentions) = &args.retentions {
        output.push_str("R,premium\n");
        for &r in retentions {
            output.push_str(&format!("{r},{}\n", premium(r, &model)?));
        }
    }
    if !args.var_levels.is_empty() || !args.tvar_levels.is_empty() {
        // levels are confidence levels 1−p; the library works in tail
        // probabilities p
        let mut doc = serde_json::Map::new();
        for &level in &args.var_levels {
            doc.insert(
                format!("var_{level}"),
                serde_json::json!(var(1.0 - level, &model)?),
            );
        }
        for &level in &args.tvar_levels {
            doc.insert(
                format!("tvar_{level}"),
                serde_json::json!(tvar(1.0 - level, &model)?),
            );
        }
        output.push_str(&serde_json::to_string_pretty(&doc)?);
        output.push('\n');
    }
    if output.is_empty() {
        bail!("nothing to compute: pass --retentions, --var or --tvar");
    }
    emit(args.out.as_deref(), &output)
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let obs = read_observations(&args.data)?;

    if let Some(dir) = &args.plots {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (kind, name) in [
            (PlotKind::Survival, "survival.csv"),
            (PlotKind::Qq, "qq.csv"),
            (PlotKind::Pp, "pp.csv"),
            (PlotKind::PpMinusLog, "pp_minuslog.csv"),
        ] {
            let pd = plot_data(&obs, &model, kind)?;
            fs::write(dir.join(name), pd.to_csv())?;
        }
    }

    let uncensored: Option<Vec<f64>> = obs.iter().map(|o| o.value()).collect();
    match uncensored {
        Some(xs) => {
            let n_boot = args.bootstrap.unwrap_or(1000);
            let mut cfg = FitConfig::new(model.t_lower, model.t, model.upper);
            cfg.em_tol = args.em_tol;
            cfg.m_init = model.body.num_components();
            let gof = bootstrap_gof(&xs, &model, &cfg, n_boot, args.seed, args.reselect)?;
            let mut text = gof.to_json();
            text.push('\n');
            emit(args.out.as_deref(), &text)
        }
        None => {
            // KS/AD are defined for uncensored samples only; the plot data
            // against the Turnbull estimate is the censored-data diagnostic
            eprintln!(
                "data contains censored observations: KS/AD skipped{}",
                if args.plots.is_none() {
                    " (pass --plots for the Turnbull plot data)"
                } else {
                    ""
                }
            );
            Ok(())
        }
    }
}

fn cmd_evt(cmd: EvtCommand) -> Result<()> {
    match cmd {
        EvtCommand::Meplot {
            data,
            turnbull,
            out,
        } => {
            let obs = read_observations(&data)?;
            let points = mean_excess(&obs, turnbull)?;
            emit(out.as_deref(), &points.to_csv())
        }
        EvtCommand::Endpoint { data, k, out } => {
            let obs = read_observations(&data)?;
            let xs: Option<Vec<f64>> = obs.iter().map(|o| o.value()).collect();
            let Some(xs) = xs else {
                bail!("endpoint estimation requires uncensored data");
            };
            let gamma_hat = endpoint_gamma(&xs, k)?;
            let (d_hat, t_hat) = truncation_odds(&xs, k, gamma_hat)?;
            let threshold = {
                let mut sorted = xs.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                sorted[sorted.len() - k - 1]
            };
            let doc = serde_json::json!({
                "k": k,
                "hill": hill(&xs, threshold)?,
                "gamma_hat": gamma_hat,
                "D_hat": d_hat,
                "T_hat": t_hat,
            });
            emit(
                out.as_deref(),
                &format!("{}\n", serde_json::to_string_pretty(&doc)?),
            )
        }
    }
}
