use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, Probe};
use super::{run_coupling_study, run_optimality_study, run_value_convergence, solve_family};
use crate::error::{Error, Result};
use crate::hjb::ValueField;
use crate::linalg::Vector;
use crate::model::{validate_all, Coefficients};
use crate::mollify::{smooth_coefficients, SmoothedCoefficients};
use crate::policy::{extract_policy, AdmissibleControl};
use crate::relaxed::{audit_convexity, chattering_reduce, default_radius, Atom, DiscreteMeasure};
use crate::simulate::{estimate_cost, simulate_forward, CostEstimate, SimConfig};

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 1;
const EXIT_SOLVER: i32 = 2;
const EXIT_USAGE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fbsde", about = "Mollified HJB solver and FBSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Smoothing radius, or a comma-separated decreasing list.
    #[arg(long, global = true)]
    delta: Option<String>,
    #[arg(long = "grid-nx", global = true)]
    grid_nx: Option<usize>,
    /// Half-width of the truncation box.
    #[arg(long = "box", global = true)]
    box_half_width: Option<f64>,
    #[arg(long, global = true)]
    nt: Option<usize>,
    /// `one-sided` or `linear`.
    #[arg(long, global = true)]
    boundary: Option<String>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `t,x` or `t,x1,x2`; repeatable.
    #[arg(long, global = true, allow_hyphen_values = true)]
    probe: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit the model assumptions by sampling.
    Validate {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
    },
    /// Solve the smoothed HJB equation and write the field.
    Solve,
    /// Extract the feedback policy from a field.
    Policy {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Simulate paths and estimate the cost of a control.
    Simulate {
        #[arg(long)]
        field: Option<PathBuf>,
        /// `feedback` or a constant control value.
        #[arg(long, default_value = "feedback", allow_hyphen_values = true)]
        control: String,
    },
    /// Value convergence in δ with space and time moduli.
    Converge,
    /// Synchronous coupling of smoothed and original dynamics.
    Couple,
    /// Constant-control sweep against the feedback value.
    Optimality {
        #[arg(long)]
        sweep: Option<usize>,
    },
    /// Chattering reduction of one measure, or a convexity audit without `--atoms`.
    Chattering {
        /// `(u,w,weight);(u,w,weight);...`
        #[arg(long, allow_hyphen_values = true)]
        atoms: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        measures: usize,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Ball radius for random atoms; taken from a solved field when absent.
        #[arg(long)]
        radius: Option<f64>,
    },
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(parsed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::UnknownPreset(_)
        | Error::Parse { .. }
        | Error::OutOfDomain { .. }
        | Error::OutsideBall { .. } => EXIT_USAGE,
        Error::Ellipticity { .. } => EXIT_VALIDATION,
        Error::CflViolation { .. } | Error::RankDeficient { .. } | Error::Io(_) => EXIT_SOLVER,
    }
}

fn build_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &c.preset {
        cfg.preset = v.clone();
    }
    if let Some(v) = &c.delta {
        cfg.set("delta", v)?;
    }
    if let Some(v) = c.grid_nx {
        cfg.grid_nx = v;
    }
    if let Some(v) = c.box_half_width {
        cfg.box_half_width = v;
    }
    if let Some(v) = c.nt {
        cfg.nt = Some(v);
    }
    if let Some(v) = &c.boundary {
        cfg.set("boundary", v)?;
    }
    if let Some(v) = c.paths {
        cfg.paths = v;
    }
    if let Some(v) = c.steps {
        cfg.steps = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if !c.probe.is_empty() {
        cfg.probes = c.probe.iter().map(|s| Probe::parse(s)).collect::<Result<_>>()?;
    }
    Ok(cfg)
}

fn write_output(cfg: &ExperimentConfig, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn fmt_point(x: &Vector) -> String {
    x.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Field from `path`, or solved at the first δ of `cfg`, with matching smoothed coefficients.
fn field_for(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<(ValueField, SmoothedCoefficients)> {
    let spec = cfg.problem()?;
    match path {
        Some(p) => {
            let field = ValueField::load(p)?;
            let c = smooth_coefficients(Arc::new(spec), field.delta(), cfg.kernel_resolution)?;
            Ok((field, c))
        }
        None => {
            let mut single = cfg.clone();
            single.deltas.truncate(1);
            let mut family = solve_family(&single, spec)?;
            Ok((family.fields.remove(0), family.coefficients.remove(0)))
        }
    }
}

fn parse_atoms(s: &str, dim: usize) -> Result<DiscreteMeasure> {
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let inner = part
            .strip_prefix('(')
            .and_then(|p| p.strip_suffix(')'))
            .ok_or_else(|| Error::invalid(format!("atom `{part}` must look like `(u,w,weight)`")))?;
        let v: Vec<f64> = inner
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| Error::invalid(format!("`{p}` is not a number"))))
            .collect::<Result<_>>()?;
        if v.len() != dim + 2 {
            return Err(Error::invalid(format!("atom `{part}` needs {} numbers", dim + 2)));
        }
        atoms.push(Atom {
            u: v[0],
            w: Vector::from_slice(&v[1..=dim]),
        });
        weights.push(v[dim + 1]);
    }
    DiscreteMeasure::new(atoms, weights)
}

fn run(cli: Cli) -> Result<i32> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Validate { samples } => {
            let spec = cfg.problem()?;
            let report = validate_all(&spec, samples, cfg.seed)?;
            let mut csv = String::from("quantity,value\n");
            writeln!(csv, "lipschitz,{:.16e}", report.empirical_k).expect("string write");
            writeln!(csv, "ellipticity,{:.16e}", report.empirical_lambda).expect("string write");
            writeln!(csv, "ellipticity_sym,{:.16e}", report.empirical_lambda_sym).expect("string write");
            writeln!(csv, "bound,{:.16e}", report.empirical_bound).expect("string write");
            for v in &report.violations {
                writeln!(csv, "{},{:.16e}", v.assumption, v.measured).expect("string write");
            }
            let path = write_output(&cfg, "validation.csv", &csv)?;
            println!(
                "{}: lipschitz {:.6} ellipticity {:.6} bound {:.6}, {} violation(s); report {}",
                spec.name(),
                report.empirical_k,
                report.empirical_lambda,
                report.empirical_bound,
                report.violations.len(),
                path.display()
            );
            for v in &report.violations {
                eprintln!("violation {}: measured {} at {:?}", v.assumption, v.measured, v.witness);
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Solve => {
            let (field, _) = field_for(&cfg, None)?;
            write_output(&cfg, "field.txt", &field.to_text())?;
            write_output(&cfg, "field.csv", &field.to_csv())?;
            for p in &cfg.probes {
                println!("V({}, {}) = {:.16e}", p.t, fmt_point(&p.x), field.eval(p.t, &p.x)?);
            }
            Ok(EXIT_OK)
        }
        Command::Policy { field } => {
            let (field, c) = field_for(&cfg, field.as_deref())?;
            let policy = extract_policy(&field, &c, c.controls());
            let path = write_output(&cfg, "policy.csv", &policy.to_csv())?;
            println!("policy written to {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Simulate { field, control } => {
            let (field, c) = field_for(&cfg, field.as_deref())?;
            let control = if control == "feedback" {
                AdmissibleControl::Feedback(Arc::new(extract_policy(&field, &c, c.controls())))
            } else {
                let u: f64 = control
                    .parse()
                    .map_err(|_| Error::invalid(format!("control `{control}` is neither `feedback` nor a number")))?;
                AdmissibleControl::constant(u, c.controls())?
            };
            let p = cfg.probes[0];
            let sim = SimConfig::new(cfg.paths, cfg.steps, cfg.seed)?;
            let bundle = simulate_forward(&c, &field, &control, p.t, &p.x, &sim)?;
            write_output(&cfg, "paths.csv", &bundle.to_csv())?;
            let cost = estimate_cost(&c, &field, &control, p.t, &p.x, &sim)?;
            let descriptor = control.descriptor();
            write_output(
                &cfg,
                "cost.csv",
                &format!("{}\n{}\n", CostEstimate::CSV_HEADER, cost.csv_row(&descriptor)),
            )?;
            println!(
                "J({descriptor}) = {:.16e} +- {:.3e} over {} paths ({} clamped)",
                cost.mean,
                cost.std_error,
                cost.n_paths,
                bundle.exit_count()
            );
            Ok(EXIT_OK)
        }
        Command::Converge => {
            let table = run_value_convergence(&cfg)?;
            write_output(&cfg, "convergence.csv", &table.to_csv())?;
            write_output(&cfg, "moduli.csv", &table.moduli_csv())?;
            println!(
                "delta rate {:.4} (constant {:.4}); space exponent {:.4}; time exponent {:.4}; nt {}",
                table.rate, table.constant, table.space.exponent, table.time.exponent, table.nt
            );
            Ok(EXIT_OK)
        }
        Command::Couple => {
            let table = run_coupling_study(&cfg)?;
            write_output(&cfg, "coupling.csv", &table.to_csv())?;
            println!("slope X {:.4}; slope Y {:.4}", table.slope_x, table.slope_y);
            Ok(EXIT_OK)
        }
        Command::Optimality { sweep } => {
            let mut cfg = cfg;
            if let Some(s) = sweep {
                cfg.sweep = s;
            }
            let table = run_optimality_study(&cfg)?;
            write_output(&cfg, "optimality.csv", &table.to_csv())?;
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            match table.best_row() {
                Some(b) => println!(
                    "V = {:.6}; best constant {} with J = {:.6} +- {:.6}; {}",
                    table.value,
                    b.control,
                    b.mean,
                    b.std_error,
                    if table.passed() { "PASS" } else { "FAIL" }
                ),
                None => println!("V = {:.6}; no constant converged", table.value),
            }
            Ok(EXIT_OK)
        }
        Command::Chattering {
            atoms,
            x,
            y,
            measures,
            points,
            tol,
            radius,
        } => {
            let spec = cfg.problem()?;
            let d = spec.dim();
            match atoms {
                Some(a) => {
                    let mu = parse_atoms(&a, d)?;
                    let xv = match x {
                        Some(s) => {
                            let v: Vec<f64> = s
                                .split(',')
                                .map(|p| p.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad --x `{s}`"))))
                                .collect::<Result<_>>()?;
                            if v.len() != d {
                                return Err(Error::invalid(format!("--x needs {d} coordinate(s)")));
                            }
                            Vector::from_slice(&v)
                        }
                        None => Vector::zeros(d),
                    };
                    let yv = y.unwrap_or(0.0);
                    let r = chattering_reduce(&mu, &xv, yv, &spec);
                    let mut csv = format!("{},y,u_bar,{},theta_bar,alpha,residual\n", super::x_columns(d, "x"), super::x_columns(d, "w_bar"));
                    for v in xv.as_slice() {
                        write!(csv, "{v:.16e},").expect("string write");
                    }
                    write!(csv, "{yv:.16e},{:.16e}", r.u_bar).expect("string write");
                    for v in r.w_bar.as_slice() {
                        write!(csv, ",{v:.16e}").expect("string write");
                    }
                    writeln!(csv, ",{:.16e},{:.16e},{:.16e}", r.theta_bar, r.alpha, r.residual).expect("string write");
                    write_output(&cfg, "chattering.csv", &csv)?;
                    println!(
                        "u_bar = {} w_bar = ({}) theta_bar = {} residual = {}",
                        r.u_bar,
                        fmt_point(&r.w_bar),
                        r.theta_bar,
                        r.residual
                    );
                }
                None => {
                    let radius = match radius {
                        Some(r) => r,
                        None => default_radius(&field_for(&cfg, None)?.0),
                    };
                    let audit = audit_convexity(&spec, measures, points, cfg.seed, tol, radius)?;
                    write_output(&cfg, "audit.csv", &audit.to_csv())?;
                    println!(
                        "{} reductions, radius {:.6}: max residual {:.6e}, fraction above {:e}: {:.6}",
                        audit.rows.len(),
                        radius,
                        audit.max_residual,
                        tol,
                        audit.fraction_exceeding
                    );
                }
            }
            Ok(EXIT_OK)
        }
    }
}
