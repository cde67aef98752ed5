//! `--config FILE`: a TOML table whose keys mirror long flags.
//!
//! ```toml
//! seed = 7
//! deterministic = true
//!
//! [simulate]
//! utility = "log_awgn"
//! arrivals = "bernoulli:p=0.25"
//! battery = 8
//! ```
//!
//! Top-level keys apply to every subcommand; a table named after a
//! subcommand applies only to it. Underscores in keys become dashes. The
//! file's flags are placed ahead of the command-line ones, and since every
//! flag overrides earlier occurrences of itself, the command line wins.

use std::path::Path;

use eh_core::Error;
use toml::{Table, Value};

use crate::Command;

/// Returns `argv` with the flags from its `--config` file spliced in right
/// after the subcommand name. Unchanged when no `--config` is given.
pub fn merge(argv: Vec<String>) -> Result<Vec<String>, Error> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(sub) = argv.iter().skip(1).position(|a| Command::NAMES.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let sub = sub + 1;
    let table = load(Path::new(&path))?;
    let file_flags = flags_for(&table, &argv[sub])?;

    let mut merged = Vec::with_capacity(argv.len() + file_flags.len());
    merged.push(argv[0].clone());
    merged.push(argv[sub].clone());
    merged.extend(file_flags);
    merged.extend(argv[1..sub].iter().cloned());
    merged.extend(argv[sub + 1..].iter().cloned());
    Ok(merged)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn load(path: &Path) -> Result<Table, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

/// Flags for `subcommand` from the top level of `table` and its section.
pub fn flags_for(table: &Table, subcommand: &str) -> Result<Vec<String>, Error> {
    let mut flags = Vec::new();
    for (key, value) in table {
        if let Value::Table(section) = value {
            if !Command::NAMES.contains(&key.as_str()) {
                return Err(Error::Config(format!("config section [{key}] is not a subcommand")));
            }
            if key == subcommand {
                for (k, v) in section {
                    push_flag(&mut flags, k, v)?;
                }
            }
        } else {
            push_flag(&mut flags, key, value)?;
        }
    }
    Ok(flags)
}

fn push_flag(flags: &mut Vec<String>, key: &str, value: &Value) -> Result<(), Error> {
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        Value::Boolean(true) => flags.push(flag),
        Value::Boolean(false) => {}
        Value::Array(items) => {
            for item in items {
                push_flag(flags, key, item)?;
            }
        }
        Value::String(s) => flags.extend([flag, s.clone()]),
        Value::Integer(i) => flags.extend([flag, i.to_string()]),
        Value::Float(x) => flags.extend([flag, x.to_string()]),
        other => {
            return Err(Error::Config(format!(
                "config key `{key}` has unsupported value {other}"
            )))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn file_flags_precede_command_line_flags() {
        let table: Table = "seed = 3\ndeterministic = true\n[simulate]\nbattery = 8.5\n[gap]\nq = 0.2\n"
            .parse()
            .unwrap();
        let flags = flags_for(&table, "simulate").unwrap();
        assert_eq!(flags, argv("--deterministic --seed 3 --battery 8.5"));
    }

    #[test]
    fn merge_reorders_around_the_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n").unwrap();
        let input = argv(&format!("eh --seed 9 --config {} classify --utility sqrt", path.display()));
        let merged = merge(input).unwrap();
        assert_eq!(merged[..4], argv("eh classify --seed 3"));
        assert_eq!(merged[4..6], argv("--seed 9"));
    }

    #[test]
    fn rejects_unknown_sections_and_missing_files() {
        let table: Table = "[nope]\nx = 1\n".parse().unwrap();
        assert!(flags_for(&table, "gap").is_err());
        assert!(merge(argv("eh --config /nonexistent/x.toml gap")).is_err());
    }
}
