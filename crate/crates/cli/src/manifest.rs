use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub deterministic: bool,
}

/// `manifest.json` of a run directory: the last invocation of each command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub commands: BTreeMap<String, CommandRecord>,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Option<Self>> {
        let p = dir.join("manifest.json");
        match fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::config(format!("{}: {e}", p.display()))),
        }
    }

    pub fn record(dir: &Path, command: &str, cfg: &RunConfig, ctx: &Context, seeds: Vec<u64>) -> CliResult<()> {
        let mut m = Self::read(dir)?.unwrap_or_default();
        m.code_version = CODE_VERSION.to_string();
        m.commands.insert(
            command.to_string(),
            CommandRecord {
                config_hash: cfg.hash(),
                seeds,
                deterministic: ctx.deterministic,
            },
        );
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
        let p = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&m).expect("serializable");
        text.push('\n');
        fs::write(&p, text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
    }
}
