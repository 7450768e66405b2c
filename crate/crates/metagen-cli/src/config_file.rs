//! Plain-text key-value config files. Lines are `key = value`, `#` starts a
//! comment, keys are the long flag names. File values override built-in
//! defaults; explicit command-line flags win over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use clap::ArgMatches;
use clap::parser::ValueSource;

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values, consumed: Default::default() })
    }

    /// Overrides `field` with the file value unless the flag was given on
    /// the command line. `key` is the file key (the kebab-case long flag);
    /// the clap arg id is its snake_case form.
    pub fn merge<T>(&self, field: &mut T, key: &str, matches: &ArgMatches) -> Result<(), CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.consumed.borrow_mut().push(key.to_string());
        let id = key.replace('-', "_");
        if matches.value_source(&id) == Some(ValueSource::CommandLine) {
            return Ok(());
        }
        if let Some(raw) = self.values.get(key) {
            *field = raw
                .parse()
                .map_err(|e| CliError::Validation(format!("config key `{key}`: {e}")))?;
        }
        Ok(())
    }

    /// Rejects keys that no merge call claimed, mirroring unknown-flag
    /// rejection on the command line.
    pub fn reject_unknown(&self) -> Result<(), CliError> {
        let consumed = self.consumed.borrow();
        for key in self.values.keys() {
            if !consumed.iter().any(|c| c == key) {
                return Err(CliError::Validation(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let dir = std::env::temp_dir().join(format!("metagen-cfg-{}", std::process::id()));
        std::fs::write(&dir, "# comment\n n = 100 \nseed = 7 # trailing\n\n").unwrap();
        let cfg = ConfigFile::load(&dir).unwrap();
        assert_eq!(cfg.values.get("n").map(String::as_str), Some("100"));
        assert_eq!(cfg.values.get("seed").map(String::as_str), Some("7"));
        std::fs::remove_file(&dir).unwrap();
    }

    #[test]
    fn rejects_malformed_lines() {
        let dir = std::env::temp_dir().join(format!("metagen-cfg-bad-{}", std::process::id()));
        std::fs::write(&dir, "just a line\n").unwrap();
        assert!(ConfigFile::load(&dir).is_err());
        std::fs::remove_file(&dir).unwrap();
    }
}
