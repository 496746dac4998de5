//! Configuration resolution: defaults < TOML file < `EXPOSIM_*` env < `--set`.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use exposim::sim::SimConfig;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const ENV_PREFIX: &str = "EXPOSIM_";

fn defaults() -> Map<String, Value> {
    match serde_json::to_value(SimConfig::default()) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("config serializes to an object"),
    }
}

/// Environment variable name for a config key, e.g. `mf_epochs` -> `EXPOSIM_MF_EPOCHS`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase())
}

/// Parses a scalar from the command line or environment: TOML syntax when it
/// parses (`50`, `-0.5`, `true`, `"x"`), `none`/`null` for unset optionals,
/// otherwise the raw text as a string.
pub fn parse_scalar(text: &str) -> Value {
    let t = text.trim();
    if t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("null") {
        return Value::Null;
    }
    toml::from_str::<toml::Table>(&format!("v = {t}"))
        .ok()
        .and_then(|mut table| table.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(text.to_owned()))
}

fn check_key(known: &Map<String, Value>, key: &str, origin: &str) -> Result<()> {
    if known.contains_key(key) {
        Ok(())
    } else {
        bail!("unknown config key `{key}` ({origin})")
    }
}

/// Merges all sources and validates the result.
pub fn resolve<I>(file: Option<&Path>, env: I, sets: &[String]) -> Result<SimConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut merged = defaults();
    let known = merged.clone();
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for (k, v) in table {
            check_key(&known, &k, &path.display().to_string())?;
            merged.insert(k, serde_json::to_value(v)?);
        }
    }
    for (name, value) in env {
        if !name.starts_with(ENV_PREFIX) {
            continue;
        }
        match known.keys().find(|k| env_name(k) == name) {
            Some(key) => {
                merged.insert(key.clone(), parse_scalar(&value));
            }
            None => log::warn!("ignoring {name}: not a config key"),
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got `{s}`"))?;
        let k = k.trim();
        check_key(&known, k, "--set")?;
        merged.insert(k.to_owned(), parse_scalar(v));
    }
    let config: SimConfig = serde_json::from_value(Value::Object(merged)).context("invalid config")?;
    config.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok(config)
}

fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonical(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(xs) => Value::Array(xs.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

/// SHA-256 of the resolved config as compact JSON with sorted keys.
pub fn config_hash(config: &SimConfig) -> String {
    let value = canonical(&serde_json::to_value(config).expect("config serializes"));
    hex(&Sha256::digest(value.to_string().as_bytes()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}
