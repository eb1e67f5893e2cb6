//! Flat `key = value` configuration.
//!
//! Lines starting with `stage`, `edge` or `entry` describe a replacement
//! topology in the same grammar the core topology parser accepts. Unknown keys
//! are errors so a typo never silently falls back to a default.

use fsd_core::geomatch::GeoConfig;
use fsd_core::TopologySpec;
use thiserror::Error;

use crate::generator::GenConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub geo: GeoConfig,
    pub generator: GenConfig,
    pub topology: Option<TopologySpec>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            geo: GeoConfig::default(),
            generator: GenConfig::default(),
            topology: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line: i + 1, message };
            let head = line.split_whitespace().next().unwrap_or("");
            if matches!(head, "stage" | "edge" | "entry") && !line.contains('=') {
                cfg.topology.get_or_insert_with(TopologySpec::new).apply_line(line).map_err(err)?;
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.geo.policy.validate().map_err(|e| ConfigError {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let geo = &mut self.geo;
        let gen = &mut self.generator;
        match key {
            "edge_band_m" => geo.edge_band_m = Some(num(key, value)?),
            "edge_band_ratio" => geo.edge_band_ratio = num(key, value)?,
            "requests_per_decision" => geo.requests_per_decision = num(key, value)?,
            "rate_capacity" => geo.rate_limit.capacity = num(key, value)?,
            "rate_refill_interval_ms" => geo.rate_limit.refill_interval_ms = num(key, value)?,
            "rtree_inflation" => geo.rtree_inflation = num(key, value)?,
            "base_interval_ms" => geo.policy.base_interval_ms = num(key, value)?,
            "backoff_factor" => geo.policy.backoff_factor = num(key, value)?,
            "max_interval_ms" => geo.policy.max_interval_ms = num(key, value)?,
            "max_age_ms" => geo.policy.max_age_ms = num(key, value)?,
            "max_retries" => geo.policy.max_retries = Some(num(key, value)?),
            "seed" => gen.seed = num(key, value)?,
            "candidates" => gen.candidates = num(key, value)?,
            "questions" => gen.questions = num(key, value)?,
            "moves" => gen.moves = num(key, value)?,
            "answers" => gen.answers = num(key, value)?,
            "center_lat" => gen.center_lat = num(key, value)?,
            "center_lon" => gen.center_lon = num(key, value)?,
            "span_deg" => gen.span_deg = num(key, value)?,
            "radius_min_m" => gen.radius_min_m = num(key, value)?,
            "radius_max_m" => gen.radius_max_m = num(key, value)?,
            "question_max_age_ms" => gen.max_age_ms = num(key, value)?,
            "duration_ms" => gen.duration_ms = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn keys_and_topology_lines() {
        let text = "\
# policy
edge_band_m = 200
rate_capacity=5
base_interval_ms = 500
max_retries = 4
stage only filter
entry only
";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.geo.edge_band_m, Some(200.0));
        assert_eq!(cfg.geo.rate_limit.capacity, 5);
        assert_eq!(cfg.geo.policy.base_interval_ms, 500);
        assert_eq!(cfg.geo.policy.max_retries, Some(4));
        let topo = cfg.topology.unwrap();
        assert_eq!(topo.stages.len(), 1);
        assert_eq!(topo.entry.as_deref(), Some("only"));
    }

    #[test]
    fn bad_lines_report_their_number() {
        assert_eq!(Config::parse("seed = 1\nnope = 2").unwrap_err().line, 2);
        assert_eq!(Config::parse("seed 1").unwrap_err().line, 1);
        assert_eq!(Config::parse("\n\nbackoff_factor = x").unwrap_err().line, 3);
        assert!(Config::parse("backoff_factor = 0.5").is_err());
    }
}
