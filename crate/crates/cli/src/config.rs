//! Flat key=value run configuration with flag overrides. The canonical
//! serialization feeds the config digest stamped into every artifact.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut values = BTreeMap::new();
        let defaults: &[(&str, &str)] = &[
            ("kernel", "reference-bump"),
            ("kernel_spacing", "0.00390625"), // 1/256
            ("l_scale", "4"),
            ("beta", "10pi"),
            ("n_scales", "5"),
            ("grid_points", "64"),
            ("grid_side", "64"),
            ("z", "0.05"),
            ("sigma0", "tune"),
            ("k0", "1e-9"),
            ("seed", "1"),
            ("n_samples", "100000"),
            ("j_max", "40"),
            ("epsilon0", "0.1"),
            ("max_size", "4"),
            ("quad_tol", "1e-8"),
        ];
        for (k, v) in defaults {
            values.insert(k.to_string(), v.to_string());
        }
        Self { values }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .with_context(|| format!("line {}: expected key=value", lineno + 1))?;
                cfg.values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .with_context(|| format!("missing config key {key}"))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let raw = self.get(key)?;
        parse_beta_like(raw).with_context(|| format!("config key {key}={raw}"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        Ok(self.get(key)?.parse()?)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        Ok(self.get(key)?.parse()?)
    }

    pub fn u32(&self, key: &str) -> Result<u32> {
        Ok(self.get(key)?.parse()?)
    }

    /// Canonical serialization: sorted key=value lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> String {
        sgrg::io::config_digest(&self.canonical())
    }

    pub fn header(&self, command: &str) -> Vec<(&'static str, String)> {
        vec![
            ("command", command.to_string()),
            ("config_digest", self.digest()),
            ("seed", self.values.get("seed").cloned().unwrap_or_default()),
        ]
    }
}

/// Accept "16pi", "10pi", "2.5pi" or a plain float; multiples of pi avoid
/// transcription error in beta.
pub fn parse_beta_like(raw: &str) -> Result<f64> {
    let s = raw.trim();
    if let Some(mult) = s.strip_suffix("pi") {
        let m: f64 = if mult.is_empty() { 1.0 } else { mult.parse()? };
        return Ok(m * PI);
    }
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    bail!("cannot parse number {s:?} (use e.g. 16pi or 50.26)")
}
