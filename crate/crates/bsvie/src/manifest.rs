//! Run manifests.
//!
//! Every CLI run writes a manifest listing the command, the fully resolved
//! configuration, and every output file. Re-running with the same manifest
//! and thread count reproduces all outputs marked `deterministic` bitwise;
//! files marked `informational` (wall-clock timings) are exempt.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestOutput {
    pub name: String,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Unix timestamp of creation (informational).
    pub created_unix: u64,
    pub config: Vec<(String, String)>,
    pub outputs: Vec<ManifestOutput>,
}

impl RunManifest {
    pub fn new(command: &str, config: Vec<(String, String)>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, name: &str, deterministic: bool) {
        self.outputs.push(ManifestOutput {
            name: name.to_string(),
            deterministic,
        });
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        text.push_str("# run manifest\n");
        text.push_str(&format!("command = {}\n", self.command));
        text.push_str(&format!("version = {}\n", self.version));
        text.push_str(&format!("created = {}\n", self.created_unix));
        text.push_str("[config]\n");
        for (k, v) in &self.config {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str("[outputs]\n");
        for out in &self.outputs {
            let tag = if out.deterministic {
                "deterministic"
            } else {
                "informational"
            };
            text.push_str(&format!("{} {tag}\n", out.name));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut command = String::new();
        let mut version = String::new();
        let mut created_unix = 0u64;
        let mut config = Vec::new();
        let mut outputs = Vec::new();
        #[derive(PartialEq)]
        enum Section {
            Head,
            Config,
            Outputs,
        }
        let mut section = Section::Head;
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[config]" => {
                    section = Section::Config;
                    continue;
                }
                "[outputs]" => {
                    section = Section::Outputs;
                    continue;
                }
                _ => {}
            }
            match section {
                Section::Head => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Contract(format!("bad manifest line `{raw}`")))?;
                    match k.trim() {
                        "command" => command = v.trim().to_string(),
                        "version" => version = v.trim().to_string(),
                        "created" => created_unix = v.trim().parse().unwrap_or(0),
                        other => {
                            return Err(Error::Contract(format!(
                                "unknown manifest header `{other}`"
                            )))
                        }
                    }
                }
                Section::Config => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Contract(format!("bad config line `{raw}`")))?;
                    config.push((k.trim().to_string(), v.trim().to_string()));
                }
                Section::Outputs => {
                    let (name, tag) = line
                        .rsplit_once(' ')
                        .ok_or_else(|| Error::Contract(format!("bad output line `{raw}`")))?;
                    outputs.push(ManifestOutput {
                        name: name.trim().to_string(),
                        deterministic: tag.trim() == "deterministic",
                    });
                }
            }
        }
        if command.is_empty() {
            return Err(Error::Contract("manifest missing command".into()));
        }
        Ok(RunManifest {
            command,
            version,
            created_unix,
            config,
            outputs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut m = RunManifest::new(
            "train",
            vec![
                ("problem".into(), "example1a".into()),
                ("seed".into(), "7".into()),
            ],
        );
        m.add_output("loss_trace.csv", true);
        m.add_output("timings.csv", false);
        let dir = std::env::temp_dir().join(format!("bsvie-manifest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.txt");
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(m, back);
        assert!(back.outputs[0].deterministic);
        assert!(!back.outputs[1].deterministic);
        std::fs::remove_dir_all(&dir).ok();
    }
}
