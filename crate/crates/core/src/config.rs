//! Run configuration: TOML file merged over defaults, then dotted-key overrides.
//!
//! ```toml
//! seed = 7
//! track = "builtin:loop"
//!
//! [env]
//! n_drones = 2
//!
//! [trainer]
//! n_envs = 8
//! total_env_steps = 1_000_000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::track::TrackSpec;
use crate::trainer::TrainConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SWARMRACE_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; empty means `$SWARMRACE_OUT/<track>-seed<seed>`
    /// (or `runs/...` when the variable is unset).
    pub output_dir: String,
    /// Track file path or `builtin:<name>`.
    pub track: String,
    pub env: EnvConfig,
    pub trainer: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: String::new(),
            track: "builtin:loop".into(),
            env: EnvConfig::default(),
            trainer: TrainConfig::default(),
        }
    }
}

fn defaults_table() -> Table {
    match Value::try_from(RunConfig::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("the default configuration serializes to a table"),
    }
}

/// Rejects any key of `user` that has no counterpart in `reference`.
fn check_keys(user: &Table, reference: &Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (reference.get(k), v) {
            (None, _) => return Err(Error::config(format!("unknown configuration key `{path}`"))),
            (Some(Value::Table(r)), Value::Table(u)) => check_keys(u, r, &path)?,
            _ => {}
        }
    }
    Ok(())
}

/// Parses the right-hand side of `key=value`: a TOML value if it parses as
/// one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies one `dotted.key=value` override to a configuration table.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    let reference = defaults_table();
    let mut r = &reference;
    for (depth, p) in parts.iter().enumerate() {
        match r.get(*p) {
            Some(Value::Table(sub)) if depth + 1 < parts.len() => r = sub,
            Some(Value::Table(_)) => {
                return Err(Error::config(format!("`{key}` is a section; override one of its keys")))
            }
            Some(_) if depth + 1 == parts.len() => {}
            _ => return Err(Error::config(format!("unknown configuration key `{key}`"))),
        }
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        t = match t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(sub) => sub,
            _ => return Err(Error::config(format!("`{key}`: `{p}` is not a section"))),
        };
    }
    t.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Builds a configuration from TOML text and overrides, then validates it.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid TOML: {}", e.message())))?;
        check_keys(&table, &defaults_table(), "")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Loads the track, resolving relative paths against `base`.
    pub fn load_track(&self, base: Option<&Path>) -> Result<TrackSpec> {
        if self.track.starts_with("builtin:") {
            return TrackSpec::resolve(&self.track);
        }
        let p = PathBuf::from(&self.track);
        let p = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        };
        TrackSpec::load(p)
    }

    /// Directory the run writes to.
    pub fn output_path(&self) -> PathBuf {
        if !self.output_dir.is_empty() {
            return PathBuf::from(&self.output_dir);
        }
        let root = std::env::var(OUTPUT_ROOT_VAR).unwrap_or_else(|_| DEFAULT_OUTPUT_ROOT.into());
        let track = self
            .track
            .strip_prefix("builtin:")
            .map(str::to_string)
            .unwrap_or_else(|| {
                Path::new(&self.track)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "track".into())
            });
        PathBuf::from(root).join(format!("{track}-seed{}", self.seed))
    }

    /// Writes the fully resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
