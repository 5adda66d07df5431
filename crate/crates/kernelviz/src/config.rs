//! Flat TOML config files for the two optimization stages.
//!
//! Keys match the field names of [`Stage1Config`] and [`Stage2Config`];
//! unknown keys are rejected. Values present in a file replace the
//! corresponding values of a base config, everything else is kept.

use std::fs;
use std::path::Path;

use kernelviz_core::stage1::Stage1Config;
use kernelviz_core::stage2::Stage2Config;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};

/// Overlays the keys of `text` on `base`.
pub fn overlay_str<T: Serialize + DeserializeOwned>(base: &T, text: &str, path: &Path) -> Result<T> {
    let config_err = |reason: String| Error::Config {
        path: path.to_path_buf(),
        reason,
    };
    let mut table = toml::Table::try_from(base).map_err(|e| config_err(e.to_string()))?;
    let file: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
    for (key, value) in file {
        if !table.contains_key(&key) {
            return Err(config_err(format!("unknown key '{key}'")));
        }
        table.insert(key, value);
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))
}

pub fn overlay_file<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    overlay_str(base, &text, path)
}

pub fn load_stage1(path: &Path) -> Result<Stage1Config> {
    let cfg: Stage1Config = overlay_file(&Stage1Config::default(), path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_stage2(path: &Path) -> Result<Stage2Config> {
    let cfg: Stage2Config = overlay_file(&Stage2Config::default(), path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml<T: Serialize>(cfg: &T) -> String {
    toml::to_string(cfg).expect("flat configs serialize to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_keeps_unlisted_fields() {
        let base = Stage1Config {
            steps: 7,
            seed: 9,
            ..Stage1Config::default()
        };
        let cfg = overlay_str(&base, "learning_rate = 0.01\nheight = 32", Path::new("a.toml")).unwrap();
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.height, 32);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = overlay_str(&Stage2Config::default(), "w_smoothD = 1.0", Path::new("b.toml")).unwrap_err();
        assert!(err.to_string().contains("w_smoothD"));
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = to_toml(&Stage2Config::default());
        let cfg: Stage2Config = overlay_str(&Stage2Config { steps: 1, ..Default::default() }, &text, Path::new("c")).unwrap();
        assert_eq!(cfg, Stage2Config::default());
    }
}
