//! Configuration-driven experiment runner behind the `nlsimons` binary.
//!
//! A run resolves its config, executes the command on a thread pool of the
//! requested size and writes `<root>/<command>-<hash>/` containing
//! `config.resolved`, `report.json` and `tables/*.csv`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use commands::{execute, CheckLine, Outcome, Table};
pub use config::{Command, ExperimentConfig, OUTPUT_ROOT_ENV};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "nlsimons", version, about = "Verification runs for nonlocal Simons-type identities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Closed-form ball and sphere moments with Monte-Carlo cross-checks.
    Moments(Flags),
    /// Nonlocal Simons residuals on a surface over a refinement schedule.
    Verify(Flags),
    /// Convergence of the nonlocal terms to their classical limits.
    LimitStudy(Flags),
    /// Level-set residuals, coarea and sharp-interface checks.
    LevelsetVerify(Flags),
    /// Stability decomposition and conclusion checks.
    StabilityCheck(Flags),
    /// Tangential divergence and product-rule convergence.
    DivergenceCheck(Flags),
    /// Runs the command named in `--config`.
    Run(Flags),
}

#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub surface: Option<String>,
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub point: Option<String>,
    /// `all` or `i,j;i,j`.
    #[arg(long)]
    pub ij: Option<String>,
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    /// Dimension range `a..b` or list.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub samples: Option<u64>,
    /// Level-set function shorthand.
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub grids: Option<String>,
    #[arg(long)]
    pub steepness: Option<String>,
    #[arg(long)]
    pub truncation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_root: Option<PathBuf>,
}

fn list(flag: &str, s: &str, int: bool) -> Result<toml::Value> {
    let bad = |v: &str| Error::config(flag, format!("bad list entry `{v}`"));
    let items = s
        .split(',')
        .map(|v| {
            let v = v.trim();
            if int {
                v.parse::<i64>().map(toml::Value::Integer).map_err(|_| bad(v))
            } else {
                v.parse::<f64>().map(toml::Value::Float).map_err(|_| bad(v))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(toml::Value::Array(items))
}

/// Section keys a flag writes to, per command; `None` means the flag does
/// not apply.
fn flag_target(cmd: Command, flag: &str) -> Option<&'static str> {
    use Command::*;
    Some(match (flag, cmd) {
        ("surface", Verify | LimitStudy | StabilityCheck | DivergenceCheck) => "surface.spec",
        ("point", Verify | LimitStudy | StabilityCheck | DivergenceCheck) => "surface.point",
        ("kernel", Verify | LevelsetVerify | StabilityCheck) => "kernel.spec",
        ("ij", Verify) => "verify.ij",
        ("ij", LimitStudy) => "limit.ij",
        ("ij", LevelsetVerify) => "levelset.ij",
        ("levels", Verify) => "verify.levels",
        ("levels", DivergenceCheck) => "divergence.levels",
        ("eps", LimitStudy) => "limit.eps",
        ("n", Moments) => "moments.n",
        ("samples", Moments) => "moments.samples",
        ("samples", StabilityCheck) => "stability.samples",
        ("function", LevelsetVerify) => "levelset.function",
        ("grids", LevelsetVerify) => "levelset.grids",
        ("steepness", LevelsetVerify) => "levelset.steepness",
        ("truncation", LimitStudy) => "limit.truncation",
        ("truncation", StabilityCheck) => "stability.truncation",
        ("truncation", DivergenceCheck) => "divergence.truncation",
        _ => return None,
    })
}

/// Merges the config file (if any) with flag overrides. `command` is the
/// subcommand, or `None` for `run`.
pub fn build_config(command: Option<Command>, flags: &Flags) -> Result<ExperimentConfig> {
    let mut table = match &flags.config {
        Some(p) => config::read_table(p)?,
        None => toml::Table::new(),
    };
    let file_cmd = match table.get("command") {
        Some(v) => Some(
            v.clone()
                .try_into::<Command>()
                .map_err(|e| Error::config("command", e.to_string()))?,
        ),
        None => None,
    };
    let cmd = match (command, file_cmd) {
        (Some(c), Some(f)) if c != f => {
            return Err(Error::config(
                "command",
                format!("config names `{}` but `{}` was invoked", f.name(), c.name()),
            ))
        }
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => return Err(Error::config("command", "missing; pass --config with a `command` key")),
    };
    table.insert("command".into(), toml::Value::String(cmd.name().into()));

    let mut overrides: Vec<(&str, toml::Value)> = Vec::new();
    let s = |v: &String| toml::Value::String(v.clone());
    if let Some(v) = &flags.surface {
        overrides.push(("surface", s(v)));
    }
    if let Some(v) = &flags.point {
        overrides.push(("point", s(v)));
    }
    if let Some(v) = &flags.kernel {
        overrides.push(("kernel", s(v)));
    }
    if let Some(v) = &flags.ij {
        overrides.push(("ij", s(v)));
    }
    if let Some(v) = &flags.levels {
        overrides.push(("levels", list("--levels", v, true)?));
    }
    if let Some(v) = &flags.eps {
        overrides.push(("eps", list("--eps", v, false)?));
    }
    if let Some(v) = &flags.n {
        overrides.push(("n", s(v)));
    }
    if let Some(v) = flags.samples {
        overrides.push(("samples", toml::Value::Integer(clamp_int(v, "--samples")?)));
    }
    if let Some(v) = &flags.function {
        overrides.push(("function", s(v)));
    }
    if let Some(v) = &flags.grids {
        overrides.push(("grids", list("--grids", v, true)?));
    }
    if let Some(v) = &flags.steepness {
        overrides.push(("steepness", list("--steepness", v, false)?));
    }
    if let Some(v) = flags.truncation {
        overrides.push(("truncation", toml::Value::Float(v)));
    }
    for (flag, value) in overrides {
        let path = flag_target(cmd, flag)
            .ok_or_else(|| Error::config(format!("--{flag}"), format!("does not apply to `{}`", cmd.name())))?;
        config::set_path(&mut table, path, value)?;
    }
    if let Some(v) = flags.seed {
        table.insert("seed".into(), toml::Value::Integer(clamp_int(v, "--seed")?));
    }
    if let Some(v) = flags.workers {
        table.insert("workers".into(), toml::Value::Integer(clamp_int(v as u64, "--workers")?));
    }
    if let Some(v) = &flags.output_root {
        config::set_path(&mut table, "output.root", toml::Value::String(v.display().to_string()))?;
    }
    ExperimentConfig::from_table(table)
}

fn clamp_int(v: u64, flag: &str) -> Result<i64> {
    i64::try_from(v).map_err(|_| Error::config(flag, "value too large"))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub hash: String,
    pub resolved: ExperimentConfig,
    pub outcome: Outcome,
}

impl RunOutput {
    pub fn pass(&self) -> bool {
        self.outcome.pass()
    }
}

/// Resolves, executes and writes one run.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let resolved = cfg.resolve()?;
    let hash = resolved.content_hash()?;
    let workers = resolved
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| execute(&resolved))?;
    let dir = resolved
        .output_root()
        .join(format!("{}-{}", resolved.command.name(), &hash[..12]));
    write_outputs(&dir, &resolved, &hash, &outcome)?;
    Ok(RunOutput {
        dir,
        hash,
        resolved,
        outcome,
    })
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, hash: &str, outcome: &Outcome) -> Result<()> {
    let tables = dir.join("tables");
    std::fs::create_dir_all(&tables)?;
    std::fs::write(dir.join("config.resolved"), cfg.to_toml()?)?;
    let report = json!({
        "command": cfg.command.name(),
        "config_hash": hash,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "pass": outcome.pass(),
        "checks": outcome.checks,
        "report": outcome.report,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    std::fs::write(dir.join("report.json"), text)?;
    for t in &outcome.tables {
        std::fs::write(tables.join(format!("{}.csv", t.name)), t.to_csv()?)?;
    }
    Ok(())
}

/// Entry point of the binary; returns the exit status: 0 when every check
/// passes, 1 on any FAIL and 2 on errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cmd, flags) = match &cli.command {
        CliCommand::Moments(f) => (Some(Command::Moments), f),
        CliCommand::Verify(f) => (Some(Command::Verify), f),
        CliCommand::LimitStudy(f) => (Some(Command::LimitStudy), f),
        CliCommand::LevelsetVerify(f) => (Some(Command::LevelsetVerify), f),
        CliCommand::StabilityCheck(f) => (Some(Command::StabilityCheck), f),
        CliCommand::DivergenceCheck(f) => (Some(Command::DivergenceCheck), f),
        CliCommand::Run(f) => {
            if f.config.is_none() {
                eprintln!("error: `run` needs --config");
                return 2;
            }
            (None, f)
        }
    };
    match build_config(cmd, flags).and_then(|c| run(&c)) {
        Ok(out) => {
            for c in &out.outcome.checks {
                println!("{} {} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("output {}", out.dir.display());
            if out.pass() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags::default()
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "command = \"verify\"\n[surface]\nspec = \"sphere\"\n[verify]\nlevels = [4]\n").unwrap();
        let f = Flags {
            config: Some(p),
            levels: Some("5,6".into()),
            ..flags()
        };
        let c = build_config(None, &f).unwrap().resolve().unwrap();
        assert_eq!(c.surface.spec.as_deref(), Some("sphere"));
        assert_eq!(c.verify.unwrap().levels, vec![5, 6]);
    }

    #[test]
    fn inapplicable_flag_is_a_config_error() {
        let f = Flags {
            eps: Some("0.1".into()),
            ..flags()
        };
        let e = build_config(Some(Command::Verify), &f).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "--eps"), "{e:?}");
    }

    #[test]
    fn mismatched_command_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "command = \"moments\"\n").unwrap();
        let f = Flags {
            config: Some(p),
            ..flags()
        };
        assert!(build_config(Some(Command::Verify), &f).is_err());
        assert_eq!(build_config(None, &f).unwrap().command, Command::Moments);
    }

    #[test]
    fn bad_list_entries() {
        let f = Flags {
            levels: Some("5,x".into()),
            ..flags()
        };
        assert!(matches!(
            build_config(Some(Command::Verify), &f),
            Err(Error::Config { ref path, .. }) if path == "--levels"
        ));
    }
}
