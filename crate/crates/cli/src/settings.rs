//! Flag, config-file and default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use permlearn::io::{parse_ini, write_ini};
use permlearn::{Error, Result};

/// Values from the config file plus a record of everything resolved, which
/// becomes the run's config snapshot.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                parse_ini(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Flag value, else config entry `key`, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|e| Error::Config(format!("config key {key} = {raw:?}: {e}")))?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Boolean switch: set by the flag or by a truthy config entry.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let value = flag || self.get(key, None, false)?;
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn snapshot(&self) -> String {
        write_ini(&self.resolved)
    }
}
