//! `jsqd`: command-line front end for the JSQ(d) supermarket-model toolkit.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use jsqd_core::ctmc::{self, Backend, SimConfig};
use jsqd_core::fixed_point::{self, DEFAULT_FLOOR};
use jsqd_core::harness::{self, parse_init};
use jsqd_core::path::{fmt_sig, write_csv_rows, SampledPath, CSV_HEADER};
use jsqd_core::regime::{classify_regime, RegimeThresholds};
use jsqd_core::sde::{self, LimitSystemSpec, SdeConfig};
use jsqd_core::{choice, expr, fluid, SystemParams};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "jsqd",
    version,
    about = "JSQ(d) supermarket-model simulator and verifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the without-replacement choice probability (or derivative).
    Beta(BetaArgs),
    /// Near fixed point, drift residual, optional approximation report.
    FixedPoint(FixedPointArgs),
    /// Classify a parameter-sequence rule at one n.
    Classify(ClassifyArgs),
    /// Simulate the prelimit occupancy process.
    Simulate(SimulateArgs),
    /// Integrate the constrained fluid limit.
    Fluid(FluidArgs),
    /// Simulate a fluctuation-limit system.
    Diffusion(DiffusionArgs),
    /// Run a configured prelimit-vs-limit comparison.
    Compare(CompareArgs),
}

#[derive(Args)]
struct BetaArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    x: f64,
    /// Print the derivative instead.
    #[arg(long)]
    prime: bool,
}

#[derive(Args)]
struct FixedPointArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    floor: f64,
    /// Also emit the log-scale approximation report at this depth.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    n: u64,
    /// Rule for d, e.g. "d = sqrt n" or just "sqrt n".
    #[arg(long)]
    d: String,
    /// Rule for lambda, e.g. "lambda = 1 - log(sqrt n)/sqrt n".
    #[arg(long)]
    lambda: String,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    lambda: f64,
    #[arg(long = "t-end")]
    t_end: f64,
    #[arg(long = "grid-dt")]
    grid_dt: f64,
    #[arg(long)]
    seed: u64,
    /// empty, mu, fixed:K or fixed:K:G, or file:PATH
    #[arg(long, default_value = "empty")]
    init: String,
    /// Output coordinates.
    #[arg(long, default_value_t = 8)]
    coords: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_backend, default_value = "occupancy")]
    backend: Backend,
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    /// Also write event/martingale diagnostics as a sibling JSON file.
    #[arg(long)]
    diagnostics: bool,
}

#[derive(Args)]
struct FluidArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long = "t-end")]
    t_end: f64,
    #[arg(long)]
    dt: f64,
    /// Truncation; 0 means the default (support + 2).
    #[arg(long, default_value_t = 0)]
    coords: usize,
    /// zero, fixed:K or fixed:K:G, or file:PATH
    #[arg(long, default_value = "zero")]
    init: String,
    #[arg(long, value_parser = ["reflected", "explicit", "both"], default_value = "reflected")]
    form: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiffusionArgs {
    #[arg(long, value_parser = ["sub", "critical", "super"])]
    regime: String,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    k: Option<usize>,
    /// Drift/barrier parameter; "inf" allowed.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    /// Comma-separated initial vector, e.g. "0,0".
    #[arg(long)]
    z: String,
    #[arg(long = "t-end")]
    t_end: f64,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    /// Base path of the emitted report files (default: config path stem).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_backend(text: &str) -> Result<Backend, String> {
    match text {
        "occupancy" => Ok(Backend::Occupancy),
        "perqueue" => Ok(Backend::PerQueue),
        other => Err(format!("unknown backend `{other}`")),
    }
}

fn parse_alpha(text: Option<&str>) -> anyhow::Result<f64> {
    match text {
        None => Ok(0.0),
        Some("inf") | Some("+inf") => Ok(f64::INFINITY),
        Some(v) => v.parse().context("bad --alpha"),
    }
}

fn csv_writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{CSV_HEADER}")?;
    Ok(w)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Beta(a) => {
            let params = SystemParams::new(a.n, a.d, 1.0)?;
            let value = if a.prime {
                choice::beta_prime(&params, a.x)?
            } else {
                choice::beta(&params, a.x)?
            };
            println!("{}", fmt_sig(value, 15));
        }
        Command::FixedPoint(a) => {
            let params = SystemParams::new(a.n, a.d, a.lambda)?;
            let mu = fixed_point::mu_sequence(&params, a.floor)?;
            let (residual, l1) = fixed_point::drift_residual(&params, mu.as_slice())?;
            #[derive(Serialize)]
            struct Out<'a> {
                mu: &'a [f64],
                floor: f64,
                residual: Vec<f64>,
                residual_l1: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                approx_check: Option<fixed_point::MuApproxReport>,
            }
            let approx_check = match a.k {
                Some(k) => Some(fixed_point::mu_log_approx_check(&params, k)?),
                None => None,
            };
            let out = Out {
                mu: mu.as_slice(),
                floor: a.floor,
                residual,
                residual_l1: l1,
                approx_check,
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Classify(a) => {
            let rule = expr::ParamRule::parse(&a.d, &a.lambda)?;
            let c = classify_regime(&rule, a.n, &RegimeThresholds::default())?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::Simulate(a) => {
            let params = SystemParams::new(a.n, a.d, a.lambda)?;
            let init = parse_init(&a.init)?;
            let mut w = csv_writer(&a.out)?;
            #[derive(Serialize)]
            struct Diag<'a> {
                replicate: u64,
                events: &'a ctmc::EventLog,
                sup_mart_l2_sq: f64,
            }
            let mut diags = Vec::new();
            for rep in 0..a.replicates {
                let cfg = SimConfig {
                    t_end: a.t_end,
                    grid_dt: a.grid_dt,
                    seed: a.seed,
                    replicate: rep,
                    coords: a.coords,
                };
                let out = match a.backend {
                    Backend::Occupancy => ctmc::simulate_path(&params, &init, &cfg)?,
                    Backend::PerQueue => ctmc::per_queue_simulate(&params, &init, &cfg)?,
                };
                write_csv_rows(&mut w, rep, &out.path, 1)?;
                if a.diagnostics {
                    diags.push(serde_json::to_value(Diag {
                        replicate: rep,
                        events: &out.events,
                        sup_mart_l2_sq: out.martingale.sup_mart_l2_sq,
                    })?);
                }
            }
            w.flush()?;
            if a.diagnostics {
                let sibling = a.out.with_extension("diagnostics.json");
                std::fs::write(&sibling, serde_json::to_vec_pretty(&diags)?)?;
                eprintln!("diagnostics: {}", sibling.display());
            }
        }
        Command::Fluid(a) => {
            let init = match a.init.as_str() {
                "zero" => Vec::new(),
                other => match parse_init(other)? {
                    ctmc::InitSpec::Explicit(v) => v,
                    ctmc::InitSpec::FluidPoint { k, gamma_coeff } => {
                        fixed_point::FluidFixedPoint::new(k, gamma_coeff)?.vector(k + 1)
                    }
                    _ => bail!("fluid init must be zero | fixed:K[:G] | file:PATH"),
                },
            };
            match a.form.as_str() {
                "reflected" => {
                    let p = fluid::integrate_reflected(a.lambda, &init, a.t_end, a.dt, a.coords)?;
                    let mut w = csv_writer(&a.out)?;
                    write_csv_rows(&mut w, 0, &p.g, 1)?;
                    w.flush()?;
                }
                "explicit" => {
                    let p = fluid::integrate_explicit(a.lambda, &init, a.t_end, a.dt, a.coords)?;
                    let mut w = csv_writer(&a.out)?;
                    write_csv_rows(&mut w, 0, &p, 1)?;
                    w.flush()?;
                }
                "both" => {
                    let refl =
                        fluid::integrate_reflected(a.lambda, &init, a.t_end, a.dt, a.coords)?;
                    let expl = fluid::integrate_explicit(a.lambda, &init, a.t_end, a.dt, a.coords)?;
                    let refl_path = sibling(&a.out, "reflected");
                    let expl_path = sibling(&a.out, "explicit");
                    let mut w = csv_writer(&refl_path)?;
                    write_csv_rows(&mut w, 0, &refl.g, 1)?;
                    w.flush()?;
                    let mut w = csv_writer(&expl_path)?;
                    write_csv_rows(&mut w, 0, &expl, 1)?;
                    w.flush()?;
                    let check = fluid::cross_check(a.lambda, &init, a.t_end, a.dt, a.coords)?;
                    println!("sup_l1_diff {}", fmt_sig(check.sup_l1_diff, 12));
                }
                _ => unreachable!(),
            }
        }
        Command::Diffusion(a) => {
            let z: Vec<f64> =
                a.z.split(',')
                    .map(|v| v.trim().parse::<f64>().context("bad --z entry"))
                    .collect::<anyhow::Result<_>>()?;
            if z.len() != a.r {
                bail!("--z must have exactly r = {} entries", a.r);
            }
            let alpha = parse_alpha(a.alpha.as_deref())?;
            let spec = match a.regime.as_str() {
                "sub" => LimitSystemSpec::subcritical(a.k.unwrap_or(1), alpha, z)?,
                "critical" => {
                    let c = a.c.context("--c is required for the critical regime")?;
                    LimitSystemSpec::critical(c, alpha, z)?
                }
                "super" => LimitSystemSpec::supercritical(alpha, z)?,
                _ => unreachable!(),
            };
            let mut w = csv_writer(&a.out)?;
            for rep in 0..a.replicates {
                let run = sde::simulate(
                    &spec,
                    &SdeConfig {
                        t_end: a.t_end,
                        dt: a.dt,
                        seed: a.seed,
                        replicate: rep,
                    },
                )?;
                match run.eta {
                    // pushing process goes out as coordinate 0
                    Some(eta) => {
                        let mut values = vec![eta];
                        values.extend(run.path.values.iter().cloned());
                        let with_eta = SampledPath::new(run.path.times.clone(), values)?;
                        write_csv_rows(&mut w, rep, &with_eta, 0)?;
                    }
                    None => write_csv_rows(&mut w, rep, &run.path, 1)?,
                }
            }
            w.flush()?;
        }
        Command::Compare(a) => {
            let text = std::fs::read_to_string(&a.config)
                .with_context(|| format!("reading {}", a.config.display()))?;
            let report = harness::run_configured(&text)?;
            let base = a.out.unwrap_or_else(|| a.config.with_extension("report"));
            let (json_path, csv_path) = harness::emit_report(&report, &base)?;
            for cell in &report.cells {
                println!(
                    "{} coord {} t={}: D={} p={}",
                    if cell.d <= report.ks_max {
                        "pass"
                    } else {
                        "FAIL"
                    },
                    cell.coord,
                    cell.time,
                    fmt_sig(cell.d, 6),
                    fmt_sig(cell.p_value, 6)
                );
            }
            if let Some(lln) = &report.lln {
                println!(
                    "lln sup-l1 median={} p90={}",
                    fmt_sig(lln.median, 6),
                    fmt_sig(lln.p90, 6)
                );
            }
            if let Some(ok) = report.barrier_ok {
                println!("{} prelimit barrier", if ok { "pass" } else { "FAIL" });
            }
            if let Some(m) = &report.martingale {
                println!(
                    "{} martingale bound: mean sup ||M||^2 = {} vs {}",
                    if m.violation { "FAIL" } else { "pass" },
                    fmt_sig(m.mean_sup_l2_sq, 6),
                    fmt_sig(m.bound, 6)
                );
            }
            println!("report: {} {}", json_path.display(), csv_path.display());
            println!("{}", if report.passed { "PASSED" } else { "FAILED" });
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}{ext}"))
}
