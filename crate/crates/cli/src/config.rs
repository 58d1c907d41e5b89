use std::path::Path;

use serde::Deserialize;
use spi_defect::pipeline::RunConfig;
use spi_defect::synthgen::GeneratorConfig;
use spi_defect::{Error, Result};

/// Contents of a `--config` file. Every table and key is optional; unknown
/// keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfigFile {
    pub generator: GeneratorConfig,
    pub run: RunConfig,
}

impl CliConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(CliConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
