use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use singconv::operator::{default_grid, verify_appendix_equivalence, OperatorSpec};
use singconv::pipeline::{
    build_subsolution, build_supersolution, run_pipeline, solve_regularized, write_outputs, write_trace, RunConfig,
};
use singconv::reaction::{interpolation_check, validate_exponents};
use singconv::Error;

/// Constructive solver for singular convective problems driven by
/// non-homogeneous Uhlenbeck operators.
#[derive(Parser, Debug)]
#[command(name = "singconv", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structure conditions of the operator (exit 1 if any fails).
    CheckOperator,
    /// Derived exponents and admissibility (exit 1 if inadmissible).
    CheckExponents,
    /// One regularized problem on the ball of radius n; writes u_<n>.csv.
    Solve {
        #[arg(long)]
        n: usize,
        /// Lower the super-solution by this amount before solving (diagnostic).
        #[arg(long, default_value_t = 0.0)]
        inject_upper_shift: f64,
    },
    /// Full exhaustion run; writes report.json, fields/*.csv and trace.jsonl.
    Pipeline,
    /// Appendix equivalence for the configured operator, or the reference
    /// family when no config is given.
    VerifyAppendix,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}

fn load(cli: &Cli) -> singconv::Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config <path> is required for this subcommand".into()))?;
    RunConfig::load(path)
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn print_json(value: &serde_json::Value) -> singconv::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn dispatch(cli: &Cli) -> singconv::Result<u8> {
    match &cli.command {
        Command::CheckOperator => {
            let cfg = load(cli)?;
            cfg.operator.validate()?;
            let report = verify_appendix_equivalence(&cfg.operator, &default_grid())?;
            print_json(&serde_json::to_value(&report)?)?;
            Ok(if report.passed { 0 } else { EXIT_FAILURE })
        }
        Command::CheckExponents => {
            let cfg = load(cli)?;
            cfg.operator.validate()?;
            let re = &cfg.reaction;
            match validate_exponents(cfg.operator.p(), cfg.grid.dim, re.gamma, re.r, re.eta, re.theta) {
                Ok(ex) => {
                    let (lhs, rhs) = interpolation_check(&re.h, &ex, None);
                    print_json(&json!({
                        "admissible": true,
                        "exponents": ex,
                        "interpolation": {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1.0 + 1e-12)},
                    }))?;
                    Ok(0)
                }
                Err(Error::Inadmissible(msg)) => {
                    print_json(&json!({"admissible": false, "reason": msg}))?;
                    Ok(EXIT_FAILURE)
                }
                Err(e) => Err(e),
            }
        }
        Command::Solve { n, inject_upper_shift } => {
            let cfg = load(cli)?;
            let prep = cfg.prepare()?;
            if *n == 0 || *n > cfg.pipeline.n_max {
                return Err(Error::Config(format!(
                    "--n must lie in 1..={}, got {n}",
                    cfg.pipeline.n_max
                )));
            }
            if !inject_upper_shift.is_finite() {
                return Err(Error::Config("--inject-upper-shift must be finite".into()));
            }
            let sup = build_supersolution(&prep)?;
            let mut upper = sup.field;
            if *inject_upper_shift != 0.0 {
                let last = upper.values.len() - 1;
                for v in upper.values[..last].iter_mut() {
                    *v -= inject_upper_shift;
                }
            }
            let sub = build_subsolution(&prep, *n)?;
            let reg = solve_regularized(&prep, *n, &sub.field, &upper)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join(format!("u_{n}.csv"));
            fs::write(&path, reg.field.to_csv())?;
            write_trace(&cfg.output_dir.join(format!("trace_{n}.jsonl")), &reg.trace)?;
            print_json(&json!({
                "n": n,
                "eps": prep.eps[n - 1],
                "delta": sub.delta,
                "iterations": reg.iterations,
                "margins": reg.margins,
                "value_at_origin": reg.field.values[0],
                "output": display(&path),
            }))?;
            Ok(0)
        }
        Command::Pipeline => {
            let cfg = load(cli)?;
            cfg.prepare()?;
            let outcome = run_pipeline(&cfg)?;
            write_outputs(&cfg.output_dir, &outcome)?;
            let r = &outcome.report;
            print_json(&json!({
                "passed": r.passed,
                "invariants": r.invariants,
                "report": display(&cfg.output_dir.join("report.json")),
            }))?;
            Ok(if r.passed { 0 } else { EXIT_FAILURE })
        }
        Command::VerifyAppendix => {
            let ops: Vec<(String, OperatorSpec)> = match &cli.config {
                Some(_) => {
                    let cfg = load(cli)?;
                    cfg.operator.validate()?;
                    vec![("config".into(), cfg.operator)]
                }
                None => reference_family()?,
            };
            let mut passed = true;
            let mut out = Vec::new();
            for (name, op) in &ops {
                let report = verify_appendix_equivalence(op, &default_grid())?;
                passed &= report.passed;
                out.push(json!({"operator": name, "report": report}));
            }
            print_json(&serde_json::Value::Array(out))?;
            Ok(if passed { 0 } else { EXIT_FAILURE })
        }
    }
}

fn reference_family() -> singconv::Result<Vec<(String, OperatorSpec)>> {
    let mut ops = Vec::new();
    for p in [1.5, 2.0, 3.0, 4.0] {
        ops.push((format!("t^{}", p - 2.0), OperatorSpec::p_laplacian(p)?));
    }
    ops.push(("t+1".into(), OperatorSpec::pq_laplacian(3.0, 2.0)?));
    ops.push((
        "2t^2+1".into(),
        OperatorSpec::new(vec![
            singconv::operator::PowerTerm { c: 2.0, p: 4.0 },
            singconv::operator::PowerTerm { c: 1.0, p: 2.0 },
        ])?,
    ));
    ops.push(("t^-0.5".into(), OperatorSpec::p_laplacian(1.5)?));
    Ok(ops)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}
