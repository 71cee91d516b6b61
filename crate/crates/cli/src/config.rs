//! Layered configuration: compiled defaults, then the config file, then
//! command-line flags.

use crate::CliError;
use masktext::dataset::{SampleFormat, Task};
use masktext::diag::Mode;
use masktext::isd::Encoding;
use masktext::tokens::TokenizerSpec;
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const CONFIG_ENV: &str = "MASKTEXT_CONFIG";

/// Raw config file contents; every field optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub resolution: Option<u32>,
    pub canvas_res: Option<u32>,
    pub encoding: Option<String>,
    pub formats: Option<Vec<String>>,
    pub strictness: Option<String>,
    pub tokenizer: Option<String>,
    pub templates: Option<Vec<String>>,
    pub response_prefix: Option<String>,
    pub response_field: Option<String>,
    pub tasks: Option<Vec<String>>,
}

impl FileConfig {
    /// Load from `--config`, else from `$MASKTEXT_CONFIG`, else defaults.
    pub fn load(flag: Option<&Path>) -> Result<Self, CliError> {
        let path: Option<PathBuf> = match flag {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let parsed: Result<FileConfig, String> = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn resolution(&self, flag: Option<u32>) -> u32 {
        flag.or(self.resolution).unwrap_or(16)
    }

    pub fn canvas_res(&self, flag: Option<u32>) -> u32 {
        flag.or(self.canvas_res).unwrap_or(64)
    }

    pub fn response_field(&self, flag: Option<&str>) -> String {
        flag.map(str::to_string)
            .or_else(|| self.response_field.clone())
            .unwrap_or_else(|| "response".to_string())
    }

    pub fn mode(&self, lenient_flag: bool) -> Result<Mode, CliError> {
        if lenient_flag {
            return Ok(Mode::Lenient);
        }
        match self.strictness.as_deref() {
            None | Some("strict") => Ok(Mode::Strict),
            Some("lenient") => Ok(Mode::Lenient),
            Some(other) => Err(CliError::config(format!(
                "strictness {other:?} is not strict or lenient"
            ))),
        }
    }

    pub fn tokenizer(&self, flag: Option<&str>) -> TokenizerSpec {
        let chosen = flag.map(str::to_string).or_else(|| self.tokenizer.clone());
        match chosen.as_deref() {
            None | Some("reference") => TokenizerSpec::Reference,
            Some(path) => TokenizerSpec::VocabFile(PathBuf::from(path)),
        }
    }

    pub fn encode_format(&self, flag: Option<&str>) -> Result<CliFormat, CliError> {
        let chosen = flag
            .map(str::to_string)
            .or_else(|| self.encoding.clone())
            .unwrap_or_else(|| "isd-rrle".to_string());
        parse_format(&chosen)
    }

    pub fn build_formats(&self, flags: &[String]) -> Result<Vec<SampleFormat>, CliError> {
        let names: Vec<String> = if !flags.is_empty() {
            flags.to_vec()
        } else if let Some(cfg) = &self.formats {
            cfg.clone()
        } else {
            vec!["isd-rrle".to_string()]
        };
        names
            .iter()
            .map(|n| n.parse::<SampleFormat>().map_err(CliError::config))
            .collect()
    }

    pub fn tasks(&self, flags: &[String]) -> Result<Option<Vec<Task>>, CliError> {
        let names: Option<Vec<String>> = if !flags.is_empty() {
            Some(flags.to_vec())
        } else {
            self.tasks.clone()
        };
        let Some(names) = names else {
            return Ok(None);
        };
        let tasks = names
            .iter()
            .map(|n| match n.as_str() {
                "semantic" => Ok(Task::Semantic),
                "referring" => Ok(Task::Referring),
                "generalized_referring" => Ok(Task::GeneralizedReferring),
                "reasoning" => Ok(Task::Reasoning),
                other => Err(CliError::config(format!("unknown task {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(tasks))
    }

    pub fn templates(&self) -> Vec<String> {
        self.templates
            .clone()
            .unwrap_or_else(|| vec![masktext::dataset::DEFAULT_QUERY_TEMPLATE.to_string()])
    }

    pub fn response_prefix(&self) -> String {
        self.response_prefix
            .clone()
            .unwrap_or_else(|| masktext::dataset::DEFAULT_RESPONSE_PREFIX.to_string())
    }
}

/// Format selector shared by encode/decode/render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliFormat {
    Isd(Encoding),
    Bsd,
}

pub fn parse_format(name: &str) -> Result<CliFormat, CliError> {
    match name {
        "isd-full" => Ok(CliFormat::Isd(Encoding::Full)),
        "isd-irle" => Ok(CliFormat::Isd(Encoding::Irle)),
        "isd-rrle" => Ok(CliFormat::Isd(Encoding::Rrle)),
        "bsd" => Ok(CliFormat::Bsd),
        other => Err(CliError::config(format!(
            "unknown format {other:?}, expected isd-full, isd-irle, isd-rrle, or bsd"
        ))),
    }
}
