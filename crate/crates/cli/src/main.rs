//! `resq` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failed,
//! 3 no optimal solution (infeasible, unbounded or iteration limit).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use resq_core::assemble::{assemble, solve};
use resq_core::equilibrium::{equilibrium_report, EquilibriumReport, VerifyOptions};
use resq_core::error::{ModelError, ResultsError};
use resq_core::results::{read_solution, write_outputs};
use resq_core::scenario::load_scenario;
use resq_core::solve::Status;
use resq_core::sweep::{run_sweep, threads_from_env, write_sweep, SweepSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_UNVERIFIED: u8 = 2;
const EXIT_NOT_OPTIMAL: u8 = 3;

#[derive(Parser)]
#[command(name = "resq", version, about = "Restoration equilibrium solver for feeders with private EVs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario, verify the equilibrium and write tables.
    Solve {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Relative duality-gap target.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Re-run the equilibrium checks on a saved solution.json.
    Verify {
        solution: PathBuf,
        /// Best-response residual tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Solve once per parameter value and write sweep.csv.
    Sweep {
        scenario: PathBuf,
        /// `key=v1,v2,...` with key one of soc_dep, beta1, beta2, cdeg.
        #[arg(long)]
        param: SweepSpec,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn model_fail(e: ModelError) -> ExitCode {
    fail(EXIT_USAGE, e)
}

fn results_fail(e: ResultsError) -> ExitCode {
    fail(EXIT_USAGE, e)
}

fn report_verdict(report: &EquilibriumReport) -> ExitCode {
    print!("{}", report.to_text());
    if report.pass {
        ExitCode::SUCCESS
    } else {
        let names: Vec<&str> = report.failed_checks().map(|c| c.name.as_str()).collect();
        fail(EXIT_UNVERIFIED, format!("verification failed: {}", names.join(", ")))
    }
}

fn cmd_solve(scenario: PathBuf, out: PathBuf, tol: f64) -> ExitCode {
    if !(tol > 0.0) {
        return fail(EXIT_USAGE, "--tol must be positive");
    }
    let s = match load_scenario(&scenario) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let p = match assemble(&s) {
        Ok(p) => p,
        Err(e) => return model_fail(e),
    };
    let b = match solve(&p, tol) {
        Ok(b) => b,
        Err(e) => return model_fail(e),
    };
    if b.status != Status::Optimal {
        if let Err(e) = write_outputs(&out, &p, &b, None) {
            return results_fail(e);
        }
        let mut msg = format!("no optimal solution: {:?}", b.status);
        if !b.infeasibility_hint.is_empty() {
            msg += &format!("; rows implicated: {}", b.infeasibility_hint.join(", "));
        }
        return fail(EXIT_NOT_OPTIMAL, msg);
    }
    let opts = VerifyOptions {
        gap_tol: tol.max(VerifyOptions::default().gap_tol),
        ..VerifyOptions::default()
    };
    let report = match equilibrium_report(&p, &b, &opts) {
        Ok(r) => r,
        Err(e) => return model_fail(e),
    };
    match write_outputs(&out, &p, &b, Some(&report)) {
        Ok(paths) => eprintln!("wrote {} files to {}", paths.len(), out.display()),
        Err(e) => return results_fail(e),
    }
    report_verdict(&report)
}

fn cmd_verify(solution: PathBuf, tol: f64) -> ExitCode {
    if !(tol > 0.0) {
        return fail(EXIT_USAGE, "--tol must be positive");
    }
    let sol = match read_solution(&solution) {
        Ok(s) => s,
        Err(e) => return results_fail(e),
    };
    if sol.status != Status::Optimal {
        return fail(EXIT_NOT_OPTIMAL, format!("solution is not optimal: {:?}", sol.status));
    }
    let (p, b) = match sol.rebuild() {
        Ok(x) => x,
        Err(e) => return model_fail(e),
    };
    let opts = VerifyOptions {
        agent_tol: tol,
        gap_tol: sol.scenario.solver.tol.max(VerifyOptions::default().gap_tol),
        ..VerifyOptions::default()
    };
    match equilibrium_report(&p, &b, &opts) {
        Ok(r) => report_verdict(&r),
        Err(e) => model_fail(e),
    }
}

fn cmd_sweep(scenario: PathBuf, spec: SweepSpec, out: PathBuf, tol: f64) -> ExitCode {
    let s = match load_scenario(&scenario) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let rows = match run_sweep(&s, &spec, tol, threads_from_env(), &VerifyOptions::default()) {
        Ok(r) => r,
        Err(e) => return model_fail(e),
    };
    match write_sweep(&out, &rows) {
        Ok(path) => eprintln!("wrote {}", path.display()),
        Err(e) => return results_fail(e),
    }
    if rows.iter().any(|r| r.status != Status::Optimal) {
        return fail(EXIT_NOT_OPTIMAL, "some sweep points have no optimal solution");
    }
    if rows.iter().any(|r| r.verified == Some(false)) {
        return fail(EXIT_UNVERIFIED, "some sweep points failed verification");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Solve { scenario, out, tol } => cmd_solve(scenario, out, tol),
        Command::Verify { solution, tol } => cmd_verify(solution, tol),
        Command::Sweep {
            scenario,
            param,
            out,
            tol,
        } => cmd_sweep(scenario, param, out, tol),
    }
}
