//! `.roosterizerc`: optional per-project settings in `key: value` lines.
//!
//! Recognized keys: `model_path`, `k`, `data_dir`, `compile_cmd`, `lexicon`
//! (suffix letters, or `off`), `chop.qualid`, `chop.loc`, `chop.singleton`
//! (`on`/`off`). Lines starting with `#` are comments. `compile_cmd` is kept
//! verbatim but never run.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chop::ChopConfig;
use crate::subtok::SuffixLexicon;

pub const CONFIG_FILE_NAME: &str = ".roosterizerc";
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    ConfigSyntaxError {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    pub model_path: Option<PathBuf>,
    pub k: usize,
    pub data_dir: Option<PathBuf>,
    pub compile_cmd: Option<String>,
    pub chop: ChopConfig,
    pub lexicon: SuffixLexicon,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            model_path: None,
            k: DEFAULT_K,
            data_dir: None,
            compile_cmd: None,
            chop: ChopConfig::default(),
            lexicon: SuffixLexicon::default(),
        }
    }
}

fn switch(v: &str) -> Result<bool, String> {
    match v {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("expected `on` or `off`, got `{v}`")),
    }
}

impl ToolConfig {
    /// Parses the file contents; `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = ToolConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError::ConfigSyntaxError {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| err(format!("expected `key: value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(err(format!("`{key}` has no value")));
            }
            match key {
                "model_path" => cfg.model_path = Some(PathBuf::from(value)),
                "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
                "compile_cmd" => cfg.compile_cmd = Some(value.to_string()),
                "k" => {
                    cfg.k = value
                        .parse()
                        .ok()
                        .filter(|&k: &usize| k >= 1)
                        .ok_or_else(|| err(format!("`k` must be a positive integer, got `{value}`")))?
                }
                "lexicon" => {
                    cfg.lexicon = if value == "off" {
                        SuffixLexicon::disabled()
                    } else {
                        SuffixLexicon::from_letters(value)
                    }
                }
                "chop.qualid" => cfg.chop.enable_qualid_collapse = switch(value).map_err(err)?,
                "chop.loc" => cfg.chop.enable_location_strip = switch(value).map_err(err)?,
                "chop.singleton" => cfg.chop.enable_singleton_extract = switch(value).map_err(err)?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        Ok(cfg)
    }

    /// Reads `<root>/.roosterizerc`; a missing file yields the defaults.
    pub fn load(root: &Path) -> Result<Self, ConfigError> {
        let path = root.join(CONFIG_FILE_NAME);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text, &path),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(ToolConfig::default()),
            Err(source) => Err(ConfigError::Io { path, source }),
        }
    }
}
