use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use subsidy_core::harness::{self, Scenario, Suite};
use subsidy_core::{classify, sensitivity_report, solve_nash, Error, NashOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

/// Equilibria and parameter sweeps for a usage-priced access market with
/// provider subsidies.
#[derive(Debug, Parser)]
#[command(name = "subsim", version)]
struct Cli {
    /// Scenario JSON file or built-in name (fig3-9cp, fig5-8cp).
    #[arg(long, global = true, default_value = "fig5-8cp")]
    scenario: String,
    /// Output directory; sweeps are written to `<out>/<scenario>.<format>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the randomized verification suites (overrides the scenario).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Fixedpoint,
    Derivatives,
    NashOracle,
    Sensitivity,
    Monotonicity,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Market state at one (p, q) point.
    Solve {
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
    },
    /// Subsidy equilibrium and its certificate at one (p, q) point.
    Nash {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        /// Random profile pairs for the uniqueness test.
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Every (q, p) point of the scenario grid.
    Sweep,
    /// Equilibrium dynamics, marginal revenue and policy effects at one point.
    Sensitivity {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
    },
    /// Run a verification suite against its oracles.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
    },
    /// Scenario utilities.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioAction {
    /// Load and validate the scenario.
    Validate,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_)
            | Error::Validation { .. }
            | Error::InvalidModel(_)
            | Error::Domain(_)
            | Error::IndexOutOfRange { .. }
            | Error::Io(_) => EXIT_VALIDATION,
            Error::UnknownSuite(_) => EXIT_USAGE,
            _ => EXIT_SOLVER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::from(Error::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(cli: &Cli) -> Result<Scenario, Failure> {
    let mut scenario = harness::load_scenario(&cli.scenario)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::from(io::Error::other(e)))?;
    writeln!(out)?;
    Ok(())
}

fn ids(scenario: &Scenario) -> Vec<String> {
    scenario.market.cps.iter().map(|cp| cp.id.clone()).collect()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let scenario = load(cli)?;
    match &cli.command {
        Command::Solve { p, q } => {
            let record = harness::solve_point(&scenario.market, scenario.mode, *p, *q);
            if record.status == harness::PointStatus::Failed {
                return Err(Failure {
                    code: EXIT_VALIDATION,
                    message: record.message.unwrap_or_default(),
                });
            }
            emit_records(cli, &scenario, std::slice::from_ref(&record), None)?;
            if record.status == harness::PointStatus::NotConverged {
                return Err(Failure {
                    code: EXIT_SOLVER,
                    message: format!("equilibrium did not converge at p = {p}, q = {q}"),
                });
            }
        }
        Command::Nash { p, q, samples } => {
            let opts = NashOptions {
                uniqueness_samples: *samples,
                seed: scenario.seed,
                ..Default::default()
            };
            let (profile, cert) = solve_nash(&scenario.market, *p, *q, &opts)?;
            let partition = classify(&profile, subsidy_core::sensitivity::DEFAULT_BINDING_TOL);
            match cli.format {
                Format::Json => {
                    #[derive(Serialize)]
                    struct Out<'a> {
                        ids: Vec<String>,
                        profile: &'a subsidy_core::StrategyProfile,
                        certificate: &'a subsidy_core::EquilibriumCertificate,
                        partition: &'a subsidy_core::CpPartition,
                    }
                    print_json(&Out {
                        ids: ids(&scenario),
                        profile: &profile,
                        certificate: &cert,
                        partition: &partition,
                    })?;
                }
                Format::Csv => {
                    let mut out = io::stdout().lock();
                    writeln!(out, "id,s,t,U,u,tau,kkt_residual,tau_residual")?;
                    for (i, cp) in scenario.market.cps.iter().enumerate() {
                        let f = harness::format_number;
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{}",
                            cp.id,
                            f(profile.subsidies[i]),
                            f(profile.effective_prices[i]),
                            f(profile.utilities[i]),
                            f(profile.marginal_utilities[i]),
                            f(profile.thresholds[i]),
                            f(cert.kkt_residuals[i]),
                            f(cert.tau_residuals[i]),
                        )?;
                    }
                    eprintln!(
                        "converged={} iterations={} max_kkt={:.3e} concave={:?} locally_unique={} sampling_passed={}",
                        cert.converged,
                        cert.iterations,
                        cert.max_kkt_residual(),
                        cert.concave,
                        cert.uniqueness.locally_unique(),
                        cert.uniqueness.sampling_passed()
                    );
                }
            }
            if !cert.converged {
                return Err(Failure {
                    code: EXIT_SOLVER,
                    message: format!("equilibrium did not converge after {} iterations", cert.iterations),
                });
            }
        }
        Command::Sweep => {
            let records = harness::sweep(&scenario, cli.jobs)?;
            let failed = records
                .iter()
                .filter(|r| r.status != harness::PointStatus::Ok)
                .count();
            let dir = cli.out.clone().or_else(|| scenario.output_dir.clone());
            emit_records(cli, &scenario, &records, dir)?;
            if failed > 0 {
                eprintln!("{failed} of {} grid points did not produce a certified result", records.len());
            }
        }
        Command::Sensitivity { p, q } => {
            let report = sensitivity_report(&scenario.market, *p, *q)?;
            match cli.format {
                Format::Json => print_json(&report)?,
                Format::Csv => {
                    let mut out = io::stdout().lock();
                    let f = harness::format_number;
                    writeln!(out, "id,set,ds_dq,ds_dp,dm_dq,dlambda_dq,w")?;
                    for (i, cp) in scenario.market.cps.iter().enumerate() {
                        let set = if report.partition.n_minus.contains(&i) {
                            "minus"
                        } else if report.partition.n_plus.contains(&i) {
                            "plus"
                        } else {
                            "interior"
                        };
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            cp.id,
                            set,
                            f(report.ds_dq[i]),
                            f(report.ds_dp[i]),
                            f(report.dm_dq[i]),
                            f(report.dlambda_dq[i]),
                            f(report.w[i]),
                        )?;
                    }
                    eprintln!(
                        "upsilon={} dphi_dq={} dR_dp={} welfare: lhs={} rhs={} applicable={} sign={}",
                        f(report.upsilon),
                        f(report.dphi_dq),
                        report.dr_dp.map(f).unwrap_or_else(|| "undefined".into()),
                        f(report.welfare.lhs),
                        f(report.welfare.rhs),
                        report.welfare.applicable,
                        report.welfare.sign
                    );
                    for w in &report.partition.warnings {
                        eprintln!("warning: {w}");
                    }
                }
            }
        }
        Command::Verify { suite } => {
            let suites: Vec<Suite> = match suite {
                SuiteArg::Fixedpoint => vec![Suite::Fixedpoint],
                SuiteArg::Derivatives => vec![Suite::Derivatives],
                SuiteArg::NashOracle => vec![Suite::NashOracle],
                SuiteArg::Sensitivity => vec![Suite::Sensitivity],
                SuiteArg::Monotonicity => vec![Suite::Monotonicity],
                SuiteArg::All => Suite::ALL.to_vec(),
            };
            let reports = suites
                .into_iter()
                .map(|s| harness::verify(&scenario, s))
                .collect::<Result<Vec<_>, _>>()?;
            match cli.format {
                Format::Json => print_json(&reports)?,
                Format::Csv => {
                    let mut out = io::stdout().lock();
                    writeln!(out, "suite,check,passed,cases,residual,tolerance")?;
                    for r in &reports {
                        for c in &r.checks {
                            writeln!(
                                out,
                                "{},\"{}\",{},{},{:.3e},{:.3e}",
                                r.suite.name(),
                                c.name,
                                c.passed,
                                c.cases,
                                c.residual,
                                c.tolerance
                            )?;
                        }
                    }
                }
            }
            if let Some(bad) = reports.iter().find(|r| !r.passed) {
                return Err(Failure {
                    code: EXIT_VERIFICATION,
                    message: format!("verification suite `{}` failed", bad.suite.name()),
                });
            }
        }
        Command::Scenario {
            action: ScenarioAction::Validate,
        } => match cli.format {
            Format::Json => print_json(&scenario)?,
            Format::Csv => {
                let mut out = io::stdout().lock();
                writeln!(
                    out,
                    "scenario `{}` is valid: {} providers, capacity {}, {} prices in [{}, {}], caps {:?}",
                    scenario.name,
                    scenario.market.len(),
                    scenario.market.capacity,
                    scenario.p_grid.len(),
                    scenario.p_grid[0],
                    scenario.p_grid[scenario.p_grid.len() - 1],
                    scenario.q_levels
                )?;
            }
        },
    }
    Ok(())
}

fn emit_records(
    cli: &Cli,
    scenario: &Scenario,
    records: &[harness::SweepRecord],
    dir: Option<PathBuf>,
) -> Result<(), Failure> {
    let ids = ids(scenario);
    match (cli.format, dir) {
        (Format::Csv, Some(dir)) => {
            std::fs::create_dir_all(&dir)?;
            harness::emit_csv(records, &ids, &dir.join(format!("{}.csv", scenario.name)))?;
        }
        (Format::Csv, None) => harness::write_csv(records, &ids, io::stdout().lock())?,
        (Format::Json, Some(dir)) => {
            std::fs::create_dir_all(&dir)?;
            let file = std::fs::File::create(dir.join(format!("{}.json", scenario.name)))?;
            let mut w = io::BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, &JsonRecords { ids: &ids, records })
                .map_err(|e| Failure::from(io::Error::other(e)))?;
            writeln!(w)?;
        }
        (Format::Json, None) => print_json(&JsonRecords { ids: &ids, records })?,
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonRecords<'a> {
    ids: &'a [String],
    records: &'a [harness::SweepRecord],
}
