//! `key=value` config files merged under the command line.
//!
//! Keys are long flag names (`batch-size` or `batch_size`). Blank lines and
//! lines starting with `#` are skipped. A key already given as a flag is
//! ignored; boolean flags take `true` or `false`.

use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::CliError;

/// `argv` with every config entry not already on the command line appended
/// as a flag.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)?;
    let entries = parse(&text, &path)?;
    let cmd = Cli::command();
    let sub = argv
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a))
        .ok_or_else(|| CliError::Usage("a config file needs a subcommand".into()))?;
    let mut out = argv.clone();
    for (key, value) in entries {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(CliError::Usage("config files cannot nest".into()));
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(flag.as_str()))
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown key '{key}' in {} for '{}'",
                    path.display(),
                    sub.get_name()
                ))
            })?;
        let long = format!("--{flag}");
        let given = argv
            .iter()
            .any(|a| *a == long || a.starts_with(&format!("{long}=")));
        if given {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(long);
            out.push(value);
        } else {
            match value.as_str() {
                "true" => out.push(long),
                "false" => {}
                _ => {
                    return Err(CliError::Usage(format!(
                        "'{key}' is a switch; use true or false, not '{value}'"
                    )))
                }
            }
        }
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<std::path::PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(Into::into);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn parse(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                n + 1
            ))
        })?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(entries)
}
