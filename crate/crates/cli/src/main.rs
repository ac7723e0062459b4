//! Config-driven experiment runner for the two-scale toolkit.
//!
//! ```text
//! twoscale <config-path> [--seed N] [--workers N] [--out DIR]
//! ```
//!
//! The config is a flat `key = value` file with one `[command]` section
//! naming the experiment.  The JSON report goes to stdout; `report.json`
//! and the plot-ready CSV artifacts go to the output directory.  Given the
//! same config file and flags (the worker count aside), the emitted files
//! are byte-identical across runs and machines: all randomness is
//! counter-based under the master `seed`, reductions are order-preserving,
//! and floats are printed at full precision.
//!
//! Exit codes: 0 on success, 1 when an operation fails numerically (the
//! error is embedded in the report), 2 for unusable configs or arguments
//! (nothing is written).

mod commands;
mod model_cfg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use twoscale::config::Config;
use twoscale::report::Json;
use twoscale::TsError;

use commands::CommandOutput;

const SCHEMA_VERSION: i64 = 1;

const COMMANDS: [&str; 12] = [
    "validate",
    "simulate",
    "invariant",
    "exit-times",
    "cell",
    "effective-h",
    "effective-g",
    "hjb-full",
    "hjb-effective",
    "converge",
    "deep-relax",
    "gap-study",
];

const USAGE: &str = "usage: twoscale <config-path> [--seed N] [--workers N] [--out DIR]";

struct Cli {
    config: PathBuf,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
}

fn parse_args(args: &[String]) -> Result<Option<Cli>, String> {
    let mut config = None;
    let mut seed = None;
    let mut workers = None;
    let mut out = None;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--help" | "-h" => return Ok(None),
            "--seed" => {
                let v = it.next().ok_or("--seed needs a value")?;
                seed = Some(v.parse::<u64>().map_err(|_| format!("bad --seed value `{v}`"))?);
            }
            "--workers" => {
                let v = it.next().ok_or("--workers needs a value")?;
                workers =
                    Some(v.parse::<usize>().map_err(|_| format!("bad --workers value `{v}`"))?);
            }
            "--out" => {
                out = Some(PathBuf::from(it.next().ok_or("--out needs a value")?));
            }
            s if s.starts_with('-') => return Err(format!("unknown flag `{s}`")),
            s => {
                if config.replace(PathBuf::from(s)).is_some() {
                    return Err("more than one config path given".into());
                }
            }
        }
    }
    let config = config.ok_or("missing config path")?;
    Ok(Some(Cli { config, seed, workers, out }))
}

fn config_echo(cfg: &Config) -> Json {
    let mut echo = Json::obj();
    for (k, v) in cfg.entries() {
        // Worker count and output directory cannot influence results, so
        // they stay out of the echo and reports compare equal across pools.
        if k == "workers" || k == "out" {
            continue;
        }
        echo.set(&k, Json::Str(v));
    }
    echo
}

fn base_report(command: &str, cfg: &Config) -> Json {
    let mut report = Json::obj();
    report.set("schema_version", Json::Int(SCHEMA_VERSION));
    report.set("command", Json::Str(command.to_string()));
    report.set("config", config_echo(cfg));
    report
}

fn fail_validation(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse_args(&args) {
        Ok(Some(cli)) => cli,
        Ok(None) => {
            println!("{USAGE}");
            println!("commands: {}", COMMANDS.join(", "));
            return ExitCode::SUCCESS;
        }
        Err(msg) => return fail_validation(format_args!("{msg}\n{USAGE}")),
    };

    let mut cfg = match Config::from_file(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => return fail_validation(e),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }

    let Some(command) = cfg.section.clone() else {
        return fail_validation(format_args!(
            "missing [command] section; valid commands are: {}",
            COMMANDS.join(", ")
        ));
    };
    if !COMMANDS.contains(&command.as_str()) {
        return fail_validation(format_args!(
            "unknown command `{command}`; valid commands are: {}",
            COMMANDS.join(", ")
        ));
    }

    // Runtime keys shared by every command.
    let seed: u64 = match cfg.get_str("seed").and_then(|s| {
        s.parse().map_err(|_| TsError::Config(format!("invalid value `{s}` for key `seed`")))
    }) {
        Ok(s) => s,
        Err(e) => return fail_validation(e),
    };
    let workers = match cfg.get_usize_or("workers", 0) {
        Ok(w) => cli.workers.unwrap_or(w),
        Err(e) => return fail_validation(e),
    };
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from(cfg.get_str_or("out", "out")));

    if workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            return fail_validation(format_args!("cannot size the worker pool: {e}"));
        }
    }

    let started = Instant::now();
    let outcome = commands::run_command(&command, &cfg, seed);

    match outcome {
        Err(e) if e.is_validation() => fail_validation(e),
        Err(e) => {
            // Numerical failure: embed the error in a minimal report so the
            // run leaves a machine-readable trace, then exit 1.
            let mut report = base_report(&command, &cfg);
            report.set("error", Json::Str(e.to_string()));
            report.set("artifacts", Json::strs(&["report.json"]));
            if let Err(io) = persist(&out_dir, &report, &[]) {
                eprintln!("error: {io}");
                return ExitCode::from(1);
            }
            let mut stdout_report = report;
            stdout_report
                .set("wall_clock_seconds", Json::Num(started.elapsed().as_secs_f64()));
            print!("{}", stdout_report.render());
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Ok(CommandOutput { results, verdicts, artifacts }) => {
            let unused = cfg.unused_keys();
            if !unused.is_empty() {
                return fail_validation(format_args!(
                    "unknown key{} in config: {}",
                    if unused.len() == 1 { "" } else { "s" },
                    unused.join(", ")
                ));
            }

            let mut report = base_report(&command, &cfg);
            report.set("results", results);
            let mut rows = Vec::with_capacity(verdicts.len());
            for v in &verdicts {
                let mut j = Json::obj();
                j.set("name", Json::Str(v.name.clone()));
                j.set("verdict", Json::Str(v.verdict.to_string()));
                j.set("reason", Json::Str(v.reason.clone()));
                rows.push(j);
            }
            report.set("verdicts", Json::Array(rows));
            let mut manifest = vec!["report.json".to_string()];
            manifest.extend(artifacts.iter().map(|(name, _)| name.clone()));
            report.set("artifacts", Json::strs(&manifest));

            if let Err(io) = persist(&out_dir, &report, &artifacts) {
                eprintln!("error: {io}");
                return ExitCode::from(1);
            }
            let mut stdout_report = report;
            stdout_report
                .set("wall_clock_seconds", Json::Num(started.elapsed().as_secs_f64()));
            print!("{}", stdout_report.render());

            if verdicts.iter().any(|v| v.verdict == "fail") {
                eprintln!("note: {} verdict(s) failed; see the report", command);
            }
            ExitCode::SUCCESS
        }
    }
}

/// Write `report.json` plus the artifact files into `dir` (created if
/// needed).  The on-disk report carries no wall clock, so re-running an
/// identical config reproduces every byte.
fn persist(
    dir: &PathBuf,
    report: &Json,
    artifacts: &[(String, String)],
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.render())?;
    for (name, content) in artifacts {
        std::fs::write(dir.join(name), content)?;
    }
    Ok(())
}
