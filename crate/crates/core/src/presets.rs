//! Built-in parameter sets P1..P5, one per case of the region classification.
//!
//! The files live in `crates/core/presets/` and are embedded at compile time.
//! A directory named by `OPTSWITCH_PRESET_DIR` takes precedence when it holds
//! a file `<name>.toml`.

use std::path::PathBuf;

use crate::config::{ConfigError, RunConfig};
use crate::model::ModelSpec;

pub const PRESET_DIR_ENV: &str = "OPTSWITCH_PRESET_DIR";

pub const PRESET_NAMES: [&str; 5] = ["P1", "P2", "P3", "P4", "P5"];

fn embedded(name: &str) -> Option<&'static str> {
    Some(match name {
        "P1" => include_str!("../presets/P1.toml"),
        "P2" => include_str!("../presets/P2.toml"),
        "P3" => include_str!("../presets/P3.toml"),
        "P4" => include_str!("../presets/P4.toml"),
        "P5" => include_str!("../presets/P5.toml"),
        _ => return None,
    })
}

/// Source text of a preset, looking in the override directory first.
pub fn preset_text(name: &str) -> Option<String> {
    if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
        let path = PathBuf::from(dir).join(format!("{name}.toml"));
        if let Ok(text) = std::fs::read_to_string(path) {
            return Some(text);
        }
    }
    embedded(name).map(str::to_string)
}

pub fn preset_config(name: &str) -> Option<Result<RunConfig, ConfigError>> {
    preset_text(name).map(|t| RunConfig::from_toml_str(&t))
}

/// Model of a built-in preset; `None` for unknown names.
pub fn preset(name: &str) -> Option<ModelSpec> {
    embedded(name).map(|t| RunConfig::from_toml_str(t).expect("built-in preset parses").model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            validate(&spec).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("P6").is_none());
    }

    #[test]
    fn preset_costs() {
        let costs: Vec<(f64, f64)> = PRESET_NAMES.iter().map(|n| preset(n).unwrap()).map(|s| (s.g12, s.g21)).collect();
        assert_eq!(costs, vec![(1.5, 0.1), (1.5, -0.5), (1.5, -1.2), (0.4, 0.2), (0.4, -0.2)]);
    }
}
