use std::fs;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recipro::harness::{self, Config, SuiteVerdict, SUITES};
use recipro::{gauss_eps, reciprocity_eval, resolvent_lattice, unram_coleman, Error};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "verify", version, about = "Exact p-adic verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run suites on a configuration file or a named configuration.
    Run(RunArgs),
    /// List suite ids with their anchors and requirements.
    ListSuites,
    /// Export or re-verify psi = 1 witness fixtures.
    #[command(subcommand)]
    Witness(WitnessCommand),
    /// Gauss sum tables.
    #[command(subcommand)]
    Gauss(GaussCommand),
    /// Resolvent valuations of the inverse-different generator.
    Resolvents(FieldArgs),
    /// Unramified Coleman solution and dual exponential checks.
    Unram(UnramArgs),
    /// Group-ring volume check for one orbit.
    Volume(VolumeArgs),
    /// Trace relation against the level-2 tower.
    Trace(TraceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file, or one of CFG-A, CFG-B, CFG-C, CFG-D, CFG-D2.
    #[arg(long)]
    config: String,
    #[arg(long = "suite")]
    suites: Vec<String>,
    #[arg(long)]
    slow: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    /// Record wall time per suite (reports are then not byte-stable).
    #[arg(long)]
    timings: bool,
}

#[derive(Subcommand)]
enum WitnessCommand {
    /// Solve a witness with prescribed l(a) and leading coefficient.
    Export {
        #[arg(long)]
        config: String,
        #[arg(long, allow_hyphen_values = true)]
        l: i64,
        /// Residue index of the leading coefficient (base-p digits as coordinates).
        #[arg(long, default_value_t = 1)]
        coeff: u64,
        #[arg(long, default_value_t = 1)]
        nu: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Re-verify a fixture file.
    Check {
        #[arg(long)]
        config: String,
        #[arg(long)]
        file: String,
    },
}

#[derive(Subcommand)]
enum GaussCommand {
    /// Digit formula against the exact valuation for every exponent.
    Table {
        #[arg(long)]
        p: u64,
        #[arg(long)]
        f: usize,
        #[arg(long = "N", default_value_t = 3)]
        n: u32,
    },
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    e: u64,
    #[arg(long)]
    f: usize,
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
    #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
    r: i64,
}

#[derive(Args)]
struct UnramArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    f: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [2u32, 3])]
    r: Vec<u32>,
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
}

#[derive(Args)]
struct VolumeArgs {
    #[arg(long)]
    p: u64,
    #[arg(long)]
    e: u64,
    #[arg(long)]
    f: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    orbit: Vec<i64>,
    #[arg(long, default_value_t = 1)]
    r: u32,
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, default_value_t = 1)]
    level: u32,
    #[arg(long)]
    slow: bool,
    #[arg(long, default_value_t = 5)]
    p: u64,
    #[arg(long, default_value_t = 2)]
    e: u64,
    #[arg(long, default_value_t = 2)]
    f: usize,
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(source: &str) -> Result<Config, Error> {
    if let Ok(cfg) = Config::named(source) {
        return Ok(cfg);
    }
    let text = fs::read_to_string(source).map_err(|e| Error::Config(format!("{source}: {e}")))?;
    Config::from_json(&text)
}

fn emit(out: Option<&str>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Config(format!("{path}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn verdict_code(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = load_config(&args.config)?;
            if !args.suites.is_empty() {
                cfg.suites = args.suites;
            }
            cfg.slow |= args.slow;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if args.out.is_some() {
                cfg.out = args.out;
            }
            let report = harness::run(&cfg, args.timings)?;
            emit(cfg.out.as_deref(), &report.to_json())?;
            for s in &report.suites {
                let reason = s.reason.as_deref().map(|r| format!(" ({r})")).unwrap_or_default();
                eprintln!("{:<11} {:?}{reason}", s.suite, s.verdict);
            }
            Ok(verdict_code(!report.failed()))
        }
        Command::ListSuites => {
            emit(None, &pretty(&SUITES))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Witness(WitnessCommand::Export {
            config,
            l,
            coeff,
            nu,
            seed,
            out,
        }) => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let fx = harness::export_witness(&cfg, l, coeff, nu)?;
            emit(out.as_deref(), &pretty(&fx))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Witness(WitnessCommand::Check { config, file }) => {
            let cfg = load_config(&config)?;
            let text = fs::read_to_string(&file).map_err(|e| Error::Config(format!("{file}: {e}")))?;
            let fx: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let rep = harness::check_witness(&cfg, &fx)?;
            let ok = rep["bounds_hold"] == json!(true);
            emit(None, &pretty(&rep))?;
            Ok(verdict_code(ok))
        }
        Command::Gauss(GaussCommand::Table { p, f, n }) => {
            Config::new(p, 1, f, n).check_base()?;
            let ctx = gauss_eps::GaussContext::new(p, f, n)?;
            let rows = gauss_eps::valuation_table(&ctx)?;
            let ok = rows.iter().all(|r| r.matches);
            emit(None, &pretty(&json!({"p": p, "f": f, "q": ctx.q(), "rows": rows, "all_match": ok})))?;
            Ok(verdict_code(ok))
        }
        Command::Resolvents(a) => {
            let cfg = Config::new(a.p, a.e, a.f, a.n).with_suites(&["resolvents"]);
            cfg.validate()?;
            let tf = resolvent_lattice::TameField::new(a.p, a.e, a.f, a.n, -1)?;
            let basis = resolvent_lattice::inverse_different_basis(&tf)?;
            let rep = resolvent_lattice::froehlich_check(&tf, &basis, a.r)?;
            emit(None, &pretty(&rep))?;
            Ok(verdict_code(rep.all_hold))
        }
        Command::Unram(a) => {
            Config::new(a.p, 1, a.f, a.n).check_base()?;
            let rep = unram_coleman::unram_report(a.p, a.f, &a.r, a.n)?;
            emit(None, &pretty(&rep))?;
            Ok(verdict_code(rep.all_hold))
        }
        Command::Volume(a) => {
            let cfg = Config::new(a.p, a.e, a.f, a.n).with_suites(&["volume"]);
            cfg.validate()?;
            let ctx = cfg.series_context()?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let rep = reciprocity_eval::volume_check(&ctx, &a.orbit, a.r, None, &mut rng)?;
            emit(None, &pretty(&rep))?;
            Ok(verdict_code(rep.verdict == reciprocity_eval::Verdict::Pass))
        }
        Command::Trace(a) => {
            if a.level != 1 {
                return Err(Error::Unsupported(format!("trace relation at level {}; only level 1", a.level)));
            }
            let cfg = Config {
                slow: a.slow,
                seed: a.seed,
                ..Config::new(a.p, a.e, a.f, a.n).with_suites(&["trace"])
            };
            let report = harness::run(&cfg, false)?;
            emit(None, &report.to_json())?;
            let s = &report.suites[0];
            if s.verdict == SuiteVerdict::Skipped {
                eprintln!("trace SKIPPED ({})", s.reason.as_deref().unwrap_or(""));
            }
            Ok(verdict_code(!report.failed()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
