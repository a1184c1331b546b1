//! Optional `key=value` config file that pre-sets subcommand flags.
//!
//! Keys are long flag names without the leading dashes. The entries are
//! spliced in right after the subcommand name, ahead of the user's own
//! arguments, so flags given on the command line take precedence.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

/// Parsed `(key, value)` entries in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {line:?}", i + 1);
        };
        let key = key.trim();
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

/// Finds `--config <path>` / `--config=<path>` before any `--` separator.
fn config_path(args: &[String]) -> Option<(usize, usize, String)> {
    for (i, a) in args.iter().enumerate() {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return args.get(i + 1).map(|p| (i, 2, p.clone()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some((i, 1, p.to_owned()));
        }
    }
    None
}

/// Rewrites `args` with the config file's entries inserted as flags.
/// Returns the arguments unchanged when no config file is given.
pub fn expand(command: &Command, mut args: Vec<String>) -> Result<Vec<String>> {
    let Some((at, width, path)) = config_path(&args) else {
        return Ok(args);
    };
    args.drain(at..at + width);
    let text = fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config file {path}"))?;
    let entries = parse(&text).with_context(|| format!("in config file {path}"))?;

    let Some((pos, sub)) = args
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| command.find_subcommand(a).map(|s| (i, s)))
    else {
        return Ok(args);
    };
    let known = |cmd: &Command, key: &str| cmd.get_arguments().find(|a| a.get_long() == Some(key)).cloned();
    let mut injected = Vec::new();
    for (key, value) in entries {
        match known(sub, &key) {
            Some(arg) if arg.get_action().takes_values() => {
                injected.push(format!("--{key}"));
                injected.push(value);
            }
            Some(_) => match value.as_str() {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                other => bail!("config key {key}: expected true or false, got {other:?}"),
            },
            // Keys meant for another subcommand are skipped.
            None if command.get_subcommands().any(|s| known(s, &key).is_some()) => {}
            None => bail!("config file {path}: unknown key {key:?}"),
        }
    }
    args.splice(pos + 1..pos + 1, injected);
    Ok(args)
}
