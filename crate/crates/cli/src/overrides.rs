use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Applies `key.path=value` assignments onto a config. Values are read as
/// JSON when they parse, otherwise as strings. Every key must already exist.
pub fn apply<T: Serialize + DeserializeOwned>(config: T, sets: &[String]) -> Result<T> {
    if sets.is_empty() {
        return Ok(config);
    }
    let mut root = serde_json::to_value(&config)?;
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("override {s:?} is not of the form key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
        }
        *slot = value;
    }
    serde_json::from_value(root).context("override produced an invalid config")
}

/// Parses `a=1,b=2` into pairs.
pub fn parse_dims(spec: &str) -> Result<Vec<(String, usize)>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| anyhow!("expected name=value in {p:?}"))?;
            let v = v
                .trim()
                .parse::<usize>()
                .with_context(|| format!("{:?} is not a non-negative integer", v.trim()))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Looks up `names` in parsed dims; `defaults` fill absent optional names.
pub fn pick(dims: &[(String, usize)], names: &[&str], defaults: &[(&str, usize)]) -> Result<Vec<usize>> {
    for (k, _) in dims {
        if !names.contains(&k.as_str()) {
            bail!("unknown dimension {k:?} (expected {})", names.join(", "));
        }
    }
    names
        .iter()
        .map(|n| {
            dims.iter()
                .find(|(k, _)| k == n)
                .map(|(_, v)| *v)
                .or_else(|| defaults.iter().find(|(k, _)| k == n).map(|(_, v)| *v))
                .ok_or_else(|| anyhow!("missing dimension {n}"))
        })
        .collect()
}
