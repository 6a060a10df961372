use serde_json::Value as Json;
use std::ffi::OsString;
use std::path::PathBuf;

use crate::CliError;

/// Path given with `--config`, if any.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn flag_present(argv: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&eq)
    })
}

fn scalar(key: &str, v: &Json) -> Result<String, CliError> {
    match v {
        Json::String(s) => Ok(s.clone()),
        Json::Number(n) => Ok(n.to_string()),
        Json::Bool(b) => Ok(b.to_string()),
        _ => Err(CliError::user(format!("--config: value of `{key}` must be a string, number or list"))),
    }
}

/// Appends config entries as flags unless the flag was given explicitly.
/// Keys are long flag names with or without the leading dashes; lists
/// repeat the flag.
pub fn merge_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::user(format!("--config {}: {e}", path.display())))?;
    let json: serde_json::Map<String, Json> = serde_json::from_str(&text)
        .map_err(|e| CliError::user(format!("--config {}: expected a JSON object: {e}", path.display())))?;
    let mut extra = Vec::new();
    for (key, v) in &json {
        let flag = format!("--{}", key.trim_start_matches('-').replace('_', "-"));
        if flag == "--config" || flag_present(&argv, &flag) {
            continue;
        }
        match v {
            Json::Array(items) => {
                for item in items {
                    extra.push(OsString::from(format!("{flag}={}", scalar(key, item)?)));
                }
            }
            Json::Bool(true) => extra.push(OsString::from(&flag)),
            Json::Bool(false) | Json::Null => {}
            other => extra.push(OsString::from(format!("{flag}={}", scalar(key, other)?))),
        }
    }
    argv.extend(extra);
    Ok(argv)
}
