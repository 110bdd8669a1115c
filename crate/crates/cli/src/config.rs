//! `--config <path>` support: `key=value` lines become `--key value` flags
//! inserted right after the subcommand, so flags given on the command line,
//! which come later, override them.

use anyhow::{bail, Context, Result};
use clap::CommandFactory;
use std::path::Path;

/// Splits `--config` out of `argv` and expands the file in its place.
/// The returned argument list no longer mentions the config file; its path
/// is returned separately.
pub fn resolve<C: CommandFactory>(argv: Vec<String>) -> Result<(Vec<String>, Option<String>)> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            config = Some(it.next().context("--config needs a path")?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok((rest, None)) };
    if rest.len() < 2 {
        bail!("--config must follow a subcommand");
    }
    let sub = rest[1].clone();
    let injected = expand(&C::command(), &sub, Path::new(&path))?;
    rest.splice(2..2, injected);
    Ok((rest, Some(path)))
}

fn expand(cmd: &clap::Command, sub: &str, path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let sub_cmd = cmd.find_subcommand(sub).with_context(|| format!("unknown subcommand '{sub}'"))?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), idx + 1);
        };
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key))
            .with_context(|| format!("{}:{}: '{key}' is not a flag of '{sub}'", path.display(), idx + 1))?;
        if key == "config" {
            bail!("{}:{}: nested config files are not supported", path.display(), idx + 1);
        }
        if arg.get_action().takes_values() {
            out.push(format!("--{key}"));
            out.push(value.to_string());
        } else {
            match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                other => bail!("{}:{}: '{key}' takes true or false, got '{other}'", path.display(), idx + 1),
            }
        }
    }
    Ok(out)
}
