//! `--config` support: TOML values are turned into flags and placed before
//! the explicit ones, so explicit flags override them.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::Command;

use crate::Failure;

/// Path given to `--config`, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Indices and names of the subcommands named on the command line.
fn subcommand_path(cmd: &Command, args: &[OsString]) -> Vec<(usize, String)> {
    let mut path = Vec::new();
    let mut current = cmd;
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if let Some(sub) = current.find_subcommand(s.as_ref()) {
            path.push((i, sub.get_name().to_owned()));
            current = sub;
        }
    }
    path
}

fn to_flag_values(key: &str, value: &toml::Value) -> Result<Option<Vec<String>>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &toml::Value| -> Result<String> {
        Ok(match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => return Err(Failure::Validation(format!("config key `{key}`: unsupported value {other}")).into()),
        })
    };
    Ok(match value {
        toml::Value::Boolean(true) => Some(vec![flag]),
        toml::Value::Boolean(false) => None,
        toml::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            Some(vec![flag, parts.join(",")])
        }
        v => Some(vec![flag, scalar(v)?]),
    })
}

fn accepts(cmd: &Command, key: &str) -> bool {
    let long = key.replace('_', "-");
    cmd.get_arguments().any(|a| a.get_long() == Some(long.as_str()))
}

/// Returns `args` with the values of the `--config` file spliced in.
pub fn expand_args(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))?;

    let sub_path = subcommand_path(cmd, &args);
    let mut leaf = cmd;
    for (_, name) in &sub_path {
        leaf = leaf.find_subcommand(name).expect("found while scanning");
    }

    // Top-level keys first, then tables along the subcommand path, so the
    // most specific value comes last and wins.
    let mut scoped: Vec<(&str, &toml::Value)> = Vec::new();
    let mut tables = vec![&table];
    let mut cursor = &table;
    for (_, name) in &sub_path {
        match cursor.get(name) {
            Some(toml::Value::Table(t)) => {
                tables.push(t);
                cursor = t;
            }
            _ => break,
        }
    }
    let sub_names: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
    for (depth, t) in tables.iter().enumerate() {
        for (k, v) in t.iter() {
            if let toml::Value::Table(_) = v {
                continue;
            }
            if depth == 0 && sub_names.contains(&k.as_str()) {
                continue;
            }
            scoped.push((k.as_str(), v));
        }
    }

    let mut global = Vec::new();
    let mut local = Vec::new();
    for (k, v) in scoped {
        if k == "config" {
            continue;
        }
        let target = if accepts(cmd, k) {
            &mut global
        } else if accepts(leaf, k) {
            &mut local
        } else {
            log::warn!("config key `{k}` does not apply to this command; ignored");
            continue;
        };
        if let Some(flags) = to_flag_values(k, v)? {
            target.extend(flags.into_iter().map(OsString::from));
        }
    }

    let insert_at = sub_path.last().map_or(1, |(i, _)| i + 1);
    let mut out = Vec::with_capacity(args.len() + global.len() + local.len());
    out.extend(args[..1].iter().cloned());
    out.extend(global);
    out.extend(args[1..insert_at].iter().cloned());
    out.extend(local);
    out.extend(args[insert_at..].iter().cloned());
    Ok(out)
}
