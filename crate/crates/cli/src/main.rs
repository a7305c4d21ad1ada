//! `vdl`: command line front end of the mechanics and landscape pipeline.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};
use vdl_core::config::ProjectConfig;

use commands::Command;

#[derive(Parser, Debug)]
#[command(name = "vdl", version, about = "Esophageal mechanics inversion and virtual disease landscape analytics")]
struct Cli {
    /// TOML configuration file. Falls back to $VDL_CONFIG, then to the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Print one JSON object on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Log more on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Why a command stopped. Usage problems exit 2, everything else 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(vdl_core::Error),
}

impl From<vdl_core::Error> for Failure {
    fn from(e: vdl_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.exit_code() == 0 => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim(), 2),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("VDL_LOG").format_timestamp(None).init();

    let cfg = match ProjectConfig::resolve(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e.kind(), &e.to_string(), 1),
    };
    match commands::run(cli.command, &cfg) {
        Ok(v) => {
            if cli.json {
                println!("{v}");
            } else {
                print!("{}", render_text(&v, 0));
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => fail("usage", &m, 2),
        Err(Failure::Core(e)) => fail(e.kind(), &e.to_string(), 1),
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("-".into()),
        Value::String(s) => Some(s.clone()),
        Value::Bool(_) | Value::Number(_) => Some(v.to_string()),
        Value::Array(a) if a.len() <= 8 && a.iter().all(|x| !x.is_array() && !x.is_object()) => {
            Some(a.iter().map(|x| scalar(x).unwrap()).collect::<Vec<_>>().join(", "))
        }
        Value::Array(a) => Some(format!("[{} items]", a.len())),
        Value::Object(_) => None,
    }
}

/// Indented `key: value` lines for the text mode.
fn render_text(v: &Value, depth: usize) -> String {
    let pad = "  ".repeat(depth);
    let mut out = String::new();
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                match scalar(x) {
                    Some(s) => out.push_str(&format!("{pad}{k}: {s}\n")),
                    None => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        out.push_str(&render_text(x, depth + 1));
                    }
                }
            }
        }
        _ => out.push_str(&format!("{pad}{}\n", scalar(v).unwrap_or_default())),
    }
    out
}
