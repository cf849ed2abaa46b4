//! Declarative config file plus flag overrides.
//!
//! Each subcommand reads the table of the same name from a TOML file, e.g.
//!
//! ```toml
//! [bench]
//! family = "a1"
//! r = 0.8
//! s-grid = "2:2:30"
//! ```
//!
//! Keys are the long flag names. A flag given on the command line wins over
//! the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn load(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Fills options missing from `cli` with the `section` table of `file`.
pub fn overlay<T: Serialize + DeserializeOwned>(
    cli: T,
    file: Option<&toml::Table>,
    section: &str,
) -> Result<T, CliError> {
    let Some(table) = file.and_then(|f| f.get(section)) else {
        return Ok(cli);
    };
    let mut merged = match serde_json::to_value(table) {
        Ok(Value::Object(m)) => m,
        _ => {
            return Err(CliError::Usage(format!(
                "config section [{section}] must be a table"
            )))
        }
    };
    let flags = match serde_json::to_value(&cli) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    for (k, v) in flags {
        // Unset options and switches left off do not override the file.
        if !matches!(v, Value::Null | Value::Bool(false)) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Usage(format!("config section [{section}]: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, rename_all = "kebab-case")]
    struct Opts {
        trials: Option<usize>,
        s_grid: Option<String>,
        #[serde(default)]
        quiet: bool,
    }

    #[test]
    fn flags_override_file() {
        let file: toml::Table =
            toml::from_str("[bench]\ntrials = 5\ns-grid = \"2:2:6\"\nquiet = true\n").unwrap();
        let cli = Opts {
            trials: Some(9),
            ..Default::default()
        };
        let got = overlay(cli, Some(&file), "bench").unwrap();
        assert_eq!(
            got,
            Opts {
                trials: Some(9),
                s_grid: Some("2:2:6".into()),
                quiet: true
            }
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let file: toml::Table = toml::from_str("[bench]\ntrails = 5\n").unwrap();
        assert!(overlay(Opts::default(), Some(&file), "bench").is_err());
        assert_eq!(
            overlay(Opts::default(), Some(&file), "solve").unwrap(),
            Opts::default()
        );
    }
}
