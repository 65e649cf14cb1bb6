//! Flat `key=value` configuration files.
//!
//! Entries are turned into `--key value` arguments and spliced in right after
//! the subcommand name, ahead of anything typed on the command line. Every
//! argument overrides itself, so explicit flags win.

use std::collections::BTreeSet;
use std::ffi::OsString;

use clap::{ArgAction, Command};

use crate::CliError;

pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", lineno + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Value of `--config` in raw arguments, if present.
pub fn find_config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

/// Splice config entries into `args` after the subcommand token.
pub fn merge(cmd: &Command, args: Vec<OsString>, entries: &[(String, String)]) -> Result<Vec<OsString>, CliError> {
    let sub_names: BTreeSet<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
    let Some(pos) = args.iter().skip(1).position(|a| sub_names.contains(a.to_string_lossy().as_ref())).map(|p| p + 1) else {
        return Ok(args);
    };
    let sub = cmd.find_subcommand(args[pos].to_string_lossy().as_ref()).expect("subcommand exists");
    let mut inserted: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments().filter(|a| a.is_global_set()))
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            let known_elsewhere = cmd.get_subcommands().any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str())));
            if known_elsewhere {
                log::debug!("config key {key} does not apply to {}", sub.get_name());
                continue;
            }
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        };
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => inserted.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                v => return Err(CliError::Usage(format!("config key {key}: expected true or false, got {v:?}"))),
            },
            _ => inserted.push(format!("--{key}={value}").into()),
        }
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, inserted);
    Ok(out)
}
