//! Plain `key = value` configuration files with `#` comments. Every key
//! mirrors a CLI flag; the CLI layer merges the two with flags winning.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Parse a config file into a sorted key/value map. Keys may appear once;
/// later duplicates are rejected so typos don't silently lose settings.
pub fn parse_config_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Invalid(format!(
                "{}:{}: expected `key = value`, got {raw:?}",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Invalid(format!(
                "{}:{}: empty key",
                path.display(),
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Invalid(format!(
                "{}:{}: duplicate key {key:?}",
                path.display(),
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// Typed lookup helper; parse failures name the key.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Invalid(format!("config key {key:?} has unparsable value {value:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn parses_keys_and_comments() {
        let (_d, path) = write("# run config\nseed = 7\nnr-threshold = 0.6 # default\n\n");
        let map = parse_config_file(&path).unwrap();
        assert_eq!(map.get("seed").unwrap(), "7");
        assert_eq!(map.get("nr-threshold").unwrap(), "0.6");
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn rejects_garbage_lines_with_line_numbers() {
        let (_d, path) = write("seed = 1\nnot a setting\n");
        let err = parse_config_file(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn rejects_duplicates() {
        let (_d, path) = write("seed = 1\nseed = 2\n");
        assert!(parse_config_file(&path).is_err());
    }

    #[test]
    fn typed_lookup_errors_name_the_key() {
        let err = parse_value::<u64>("seed", "abc").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }
}
