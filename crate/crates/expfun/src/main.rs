//! Batch command-line front end: validate a model, evaluate densities and
//! tails, query the Mellin transform, export expansion coefficients, dump
//! Monte Carlo samples, and check the stationarity integral equation.
//!
//! Every command is deterministic given (config, seed): re-runs produce
//! byte-identical output.  Diagnostics go to stderr; when the output path
//! is `-`, stdout carries only data.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use expfun::error::{Error, Result};
use expfun::integral_eq::{residual_brownian_eta, residual_general, CheckOptions};
use expfun::mc::{
    estimate_density, estimate_density_derivative, simulate, simulate_general, Kde,
};
use expfun::mellin::{hyperexp_coeffs, tail_constant, AnchorOptions, MellinExtension, TailOrder};
use expfun::model::ExtendedReal;
use expfun::runio::{format_float, parse_grid, write_output, RunConfig, RunManifest};
use expfun::{DensityEvaluator, EvaluatorOptions, Strategy};

/// Residual budget for `check-ss1`: the run passes when the sup of
/// |residual| over the checked grid stays below this fraction of the
/// largest equation term.
const DEFAULT_RESIDUAL_BUDGET: f64 = 5e-2;

#[derive(Parser)]
#[command(
    name = "expfun",
    version,
    about = "Distribution of the exponential functional of a hyper-exponential Lévy process"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model configuration: exponents, roots, assumption flags.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the density on a grid of points (both signs allowed).
    Density {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path, or `-` for stdout.
        #[arg(long, default_value = "-")]
        out: String,
        /// Evaluation points: `a:b:n` (inclusive, evenly spaced) or a comma list.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// auto | inversion | series | mc
        #[arg(long, default_value = "auto")]
        strategy: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Evaluate the upper tail P(I > x) on a grid of points.
    Tail {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, default_value = "auto")]
        strategy: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Evaluate the continued Mellin transform at real points s.
    Mellin {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
        /// Comma-separated list of real s values.
        #[arg(long, allow_hyphen_values = true)]
        s: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Export series-expansion coefficients and the tail constant as JSON.
    Expand {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
        /// Right edge of the coefficient window.
        #[arg(long, default_value_t = 2.5)]
        c_max: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Dump the Monte Carlo sample set as CSV.
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Check the simulated density against the stationarity integral equation.
    CheckSs1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "-")]
        out: String,
        /// Optional check grid override, `a:b:n` or a comma list (default
        /// 32 geometric points on [0.05, 8]).
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_paths: Option<usize>,
    },
}

fn main() {
    if let Ok(text) = std::env::var("EXPFUN_THREADS") {
        match text.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring EXPFUN_THREADS={text:?} (want a positive integer)"),
        }
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Density {
            config,
            out,
            x,
            strategy,
            seed,
            n_paths,
        } => cmd_density_or_tail(&config, &out, &x, &strategy, seed, n_paths, false),
        Command::Tail {
            config,
            out,
            x,
            strategy,
            seed,
            n_paths,
        } => cmd_density_or_tail(&config, &out, &x, &strategy, seed, n_paths, true),
        Command::Mellin {
            config,
            out,
            s,
            seed,
            n_paths,
        } => cmd_mellin(&config, &out, &s, seed, n_paths),
        Command::Expand {
            config,
            out,
            c_max,
            seed,
            n_paths,
        } => cmd_expand(&config, &out, c_max, seed, n_paths),
        Command::Mc {
            config,
            out,
            seed,
            n_paths,
        } => cmd_mc(&config, &out, seed, n_paths),
        Command::CheckSs1 {
            config,
            out,
            x,
            seed,
            n_paths,
        } => cmd_check_ss1(&config, &out, x.as_deref(), seed, n_paths),
    }
}

fn fmt_ext(x: ExtendedReal) -> String {
    match x.finite() {
        Some(v) => format!("{v:.12}"),
        None => "inf".to_string(),
    }
}

fn cmd_validate(config_path: &PathBuf) -> Result<()> {
    let cfg = RunConfig::from_path(config_path)?;
    let model = cfg.model()?;
    let eta = cfg.eta()?;
    let report = model.validate()?;
    let mut text = String::new();
    text.push_str(&format!(
        "model hash: {}\n",
        expfun::runio::model_hash(&model, &eta)
    ));
    text.push_str(&format!("theta: {}\n", fmt_ext(report.summary.theta)));
    text.push_str(&format!("rho: {}\n", fmt_ext(report.summary.rho)));
    text.push_str(&format!("rho_hat: {}\n", fmt_ext(report.summary.rho_hat)));
    text.push_str(&format!(
        "positive psi roots ({}):",
        report.summary.root_count
    ));
    for r in &report.summary.positive_roots {
        text.push_str(&format!(" {r:.12}"));
    }
    text.push('\n');
    for c in &report.checks {
        text.push_str(&format!(
            "check [{}] {}: {} ({})\n",
            if c.required { "required" } else { "advisory" },
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.detail
        ));
    }
    text.push_str(&format!("simple poles: {}\n", report.simple_poles));
    text.push_str(&format!("valid: {}\n", report.passed()));
    print!("{text}");
    if report.passed() {
        Ok(())
    } else {
        Err(Error::InvalidModel(
            "model failed required validation checks (see report above)".into(),
        ))
    }
}

/// Shared setup: parse the config, build the model/η pair, simulate, and
/// construct the evaluator stack.
struct Session {
    cfg: RunConfig,
    model: expfun::HyperExpLevyModel,
    eta: expfun::EtaSpec,
    seed: u64,
    n_paths: usize,
    samples: Arc<expfun::mc::SampleSet>,
}

impl Session {
    fn open(
        config_path: &PathBuf,
        seed_flag: Option<u64>,
        n_flag: Option<usize>,
    ) -> Result<Session> {
        let cfg = RunConfig::from_path(config_path)?;
        let model = cfg.model()?;
        let eta = cfg.eta()?;
        let sampler = cfg.sampler(&model, n_flag, seed_flag)?;
        let (seed, n_paths) = (sampler.seed, sampler.n_paths);
        eprintln!(
            "simulating {} paths (seed {}, horizon {:.3})",
            n_paths, seed, sampler.horizon
        );
        let samples = Arc::new(simulate(&model, &eta, &sampler)?);
        Ok(Session {
            cfg,
            model,
            eta,
            seed,
            n_paths,
            samples,
        })
    }

    fn manifest(&self, subcommand: &str) -> RunManifest {
        RunManifest::new(subcommand, &self.cfg, &self.model, &self.eta, self.seed)
            .with_param("n_paths", self.n_paths)
    }
}

fn cmd_density_or_tail(
    config_path: &PathBuf,
    out: &str,
    x_spec: &str,
    strategy_text: &str,
    seed: Option<u64>,
    n_paths: Option<usize>,
    tail: bool,
) -> Result<()> {
    let strategy: Strategy = strategy_text.parse()?;
    let xs = parse_grid(x_spec)?;
    let session = Session::open(config_path, seed, n_paths)?;
    let evaluator = DensityEvaluator::new(
        &session.model,
        &session.eta,
        session.samples.clone(),
        EvaluatorOptions::default(),
    )?;
    let subcommand = if tail { "tail" } else { "density" };
    let manifest = session
        .manifest(subcommand)
        .with_param("x", x_spec)
        .with_param("strategy", strategy_text);
    let mut body = manifest.reference_line();
    body.push_str("x,value,method,error_estimate\n");
    for &x in &xs {
        let r = if tail {
            evaluator.tail(x, strategy)?
        } else {
            evaluator.density(x, strategy)?
        };
        body.push_str(&format!(
            "{},{},{},{}\n",
            format_float(r.x),
            format_float(r.value),
            r.method.label(),
            format_float(r.error_estimate)
        ));
    }
    write_output(out, &body, Some(&manifest))
}

fn cmd_mellin(
    config_path: &PathBuf,
    out: &str,
    s_spec: &str,
    seed: Option<u64>,
    n_paths: Option<usize>,
) -> Result<()> {
    let s_values = parse_grid(s_spec)?;
    let session = Session::open(config_path, seed, n_paths)?;
    let ext = MellinExtension::build(
        &session.model,
        &session.eta,
        session.samples.clone(),
        &AnchorOptions::default(),
    )?;
    let manifest = session.manifest("mellin").with_param("s", s_spec);
    let mut body = manifest.reference_line();
    body.push_str("re_s,im_s,value_re,value_im,stderr,status\n");
    for &s in &s_values {
        let point = Complex64::new(s, 0.0);
        let row = match ext.extend(point) {
            Ok(est) => format!(
                "{},{},{},{},{},ok\n",
                format_float(s),
                format_float(0.0),
                format_float(est.value.re),
                format_float(est.value.im),
                format_float(est.stderr)
            ),
            Err(Error::PoleProximity(_)) => format!(
                "{},{},{},{},{},pole\n",
                format_float(s),
                format_float(0.0),
                format_float(f64::NAN),
                format_float(f64::NAN),
                format_float(f64::NAN)
            ),
            Err(e) => return Err(e),
        };
        body.push_str(&row);
    }
    write_output(out, &body, Some(&manifest))
}

fn cmd_expand(
    config_path: &PathBuf,
    out: &str,
    c_max: f64,
    seed: Option<u64>,
    n_paths: Option<usize>,
) -> Result<()> {
    let session = Session::open(config_path, seed, n_paths)?;
    let ext = MellinExtension::build(
        &session.model,
        &session.eta,
        session.samples.clone(),
        &AnchorOptions::default(),
    )?;
    let coeffs = hyperexp_coeffs(&ext, c_max)?;
    let tc = tail_constant(&ext)?;
    let manifest = session
        .manifest("expand")
        .with_param("c_max", format_float(c_max));

    let pair_list = |m: &std::collections::BTreeMap<(u32, u32), f64>| -> Vec<serde_json::Value> {
        m.iter()
            .map(|(&(i, j), &v)| {
                serde_json::json!({"i": i, "j": j, "value": format_float(v)})
            })
            .collect()
    };
    let floats = |v: &[f64]| -> Vec<String> { v.iter().map(|&x| format_float(x)).collect() };
    let theta_json = match coeffs.theta.finite() {
        Some(t) => serde_json::Value::String(format_float(t)),
        None => serde_json::Value::String("inf".into()),
    };
    let doc = serde_json::json!({
        "manifest": {
            "model_hash": manifest.model_hash,
            "seed": manifest.seed,
            "subcommand": manifest.subcommand,
        },
        "k0": format_float(coeffs.k0),
        "theta": theta_json,
        "c_max": format_float(coeffs.c_max),
        "zeta": floats(&coeffs.zeta),
        "rho_hat": floats(&coeffs.rho_hat),
        "b_n": floats(&coeffs.b_n),
        "b_ij": pair_list(&coeffs.b_ij),
        "c_ij": pair_list(&coeffs.c_ij),
        "tail_constant": {
            "c": format_float(tc.c),
            "c_stderr": format_float(tc.c_stderr),
            "r_theta": format_float(tc.r_theta),
            "order": match tc.order {
                TailOrder::Polynomial => "polynomial",
                TailOrder::FasterThanPolynomial => "faster-than-polynomial",
            },
        },
    });
    let body = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Parse(format!("serializing expansion: {e}")))?
        + "\n";
    write_output(out, &body, Some(&manifest))
}

fn cmd_mc(
    config_path: &PathBuf,
    out: &str,
    seed: Option<u64>,
    n_paths: Option<usize>,
) -> Result<()> {
    let session = Session::open(config_path, seed, n_paths)?;
    let manifest = session.manifest("mc");
    let s = &session.samples;
    let mut body = manifest.reference_line();
    body.push_str("j1,j2,v,i_draw,truncation_tail\n");
    for i in 0..s.len() {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            format_float(s.j1[i]),
            format_float(s.j2[i]),
            format_float(s.v[i]),
            format_float(s.i_draw[i]),
            format_float(s.truncation_tail[i])
        ));
    }
    write_output(out, &body, Some(&manifest))
}

fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn cmd_check_ss1(
    config_path: &PathBuf,
    out: &str,
    x_spec: Option<&str>,
    seed: Option<u64>,
    n_paths: Option<usize>,
) -> Result<()> {
    let cfg = RunConfig::from_path(config_path)?;
    let model = cfg.model()?;
    let eta = cfg.eta()?;
    let sampler = cfg.sampler(&model, n_paths, seed)?;
    let v_grid = match x_spec {
        Some(spec) => parse_grid(spec)?,
        None => geometric_grid(0.05, 8.0, 32),
    };
    let opts = CheckOptions::standard();
    eprintln!(
        "simulating {} paths (seed {}, horizon {:.3})",
        sampler.n_paths, sampler.seed, sampler.horizon
    );
    let report = if eta.has_jumps() {
        let draws = simulate_general(&model, &eta, &sampler)?;
        let kde = Kde::new(&draws)?;
        eprintln!("checking general equation via KDE (bandwidth {:.4})", kde.bandwidth());
        let dens = |x: f64| kde.density(x);
        residual_general(&dens, &model, &eta, &v_grid, &opts)?
    } else {
        let samples = simulate(&model, &eta, &sampler)?;
        let dens = |x: f64| {
            estimate_density(&samples, &eta, x)
                .map(|e| e.value)
                .unwrap_or(f64::NAN)
        };
        let deriv = |x: f64| {
            estimate_density_derivative(&samples, &eta, x)
                .map(|e| e.value)
                .unwrap_or(f64::NAN)
        };
        residual_brownian_eta(&dens, Some(&deriv), &model, &eta, &v_grid, &opts)?
    };
    let manifest = RunManifest::new("check-ss1", &cfg, &model, &eta, sampler.seed)
        .with_param("n_paths", sampler.n_paths)
        .with_param("budget", format_float(DEFAULT_RESIDUAL_BUDGET));
    let body = manifest.reference_line() + &report.to_csv();
    write_output(out, &body, Some(&manifest))?;
    let rel = report.relative_sup();
    eprintln!(
        "residual: sup |r| = {:.3e}, reference scale = {:.3e}, relative = {:.3e} (budget {:.1e})",
        report.norm_sup, report.reference_scale, rel, DEFAULT_RESIDUAL_BUDGET
    );
    if report.residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonConvergence(
            "residual evaluation failed at one or more grid points".into(),
        ));
    }
    if rel <= DEFAULT_RESIDUAL_BUDGET {
        Ok(())
    } else {
        Err(Error::NonConvergence(format!(
            "relative residual {rel:.3e} exceeds budget {DEFAULT_RESIDUAL_BUDGET:.1e}"
        )))
    }
}
