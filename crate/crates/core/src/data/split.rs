use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Volume identifiers per partition. Text form:
///
/// ```text
/// [train]
/// vol01
/// [val]
/// vol02
/// [test]
/// vol03
/// ```
///
/// Blank lines and `#` comments are ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(Error::Data(format!("bad volume id {id:?}")));
            }
            if !seen.insert(id) {
                return Err(Error::Data(format!("volume {id} appears in more than one place")));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse().map_err(|e: Error| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl FromStr for SplitManifest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = SplitManifest::default();
        let mut section: Option<&mut Vec<String>> = None;
        for (i, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            section = match line {
                "[train]" => Some(&mut m.train),
                "[val]" => Some(&mut m.val),
                "[test]" => Some(&mut m.test),
                _ if line.starts_with('[') => {
                    return Err(Error::Data(format!("line {}: unknown section {line}", i + 1)))
                }
                _ => match section {
                    Some(list) => {
                        list.push(line.to_string());
                        Some(list)
                    }
                    None => return Err(Error::Data(format!("line {}: entry before any section", i + 1))),
                },
            };
        }
        m.validate()?;
        Ok(m)
    }
}

impl fmt::Display for SplitManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            writeln!(f, "[{name}]")?;
            for id in ids {
                writeln!(f, "{id}")?;
            }
        }
        Ok(())
    }
}
