//! Flat `key=value` run configuration. Files and flags fill the same map;
//! flags are applied last so they win.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}: line {}: expected key=value", source.display(), n + 1))?;
            map.insert(normalize(k), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(normalize(key), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config `{key}` = `{v}`: {e}")))
            .transpose()
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing required setting `{key}` (flag --{key})"))
    }

    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.0.keys() {
            if !allowed.contains(&k.as_str()) {
                bail!("unknown setting `{k}` (known: {})", allowed.join(", "));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(self.0.iter().map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone()))).collect())
    }
}

fn normalize(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('_', "-")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut s = Settings::parse("# run\nbeta = 0.5\nnum_negatives=8\n\nloss=dpo # pairwise\n", Path::new("x.cfg")).unwrap();
        assert_eq!(s.get::<f64>("beta").unwrap(), Some(0.5));
        assert_eq!(s.get::<usize>("num-negatives").unwrap(), Some(8));
        s.set("beta", 3.0);
        assert_eq!(s.get::<f64>("beta").unwrap(), Some(3.0));
        assert_eq!(s.get::<String>("loss").unwrap().as_deref(), Some("dpo"));
        assert!(s.check_keys(&["beta", "loss"]).is_err());
        assert!(s.get::<usize>("loss").is_err());
        assert!(Settings::parse("nonsense\n", Path::new("x.cfg")).is_err());
    }
}
