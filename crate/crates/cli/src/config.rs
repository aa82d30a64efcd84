//! Run configuration: profile defaults, then a flat JSON override file,
//! then command-line flags.

use std::path::{Path, PathBuf};

use mvmos_core::network::NetworkConfig;
use mvmos_core::projection::{Profile, ProjectionConfig};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub projection: ProjectionConfig,
    pub network: NetworkConfig,
    pub sequence: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub zero_pad: bool,
    pub dump_images: bool,
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub zero_pad: bool,
    pub dump_images: bool,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        RunConfig {
            profile,
            seed: 0,
            projection: ProjectionConfig::for_profile(profile),
            network: NetworkConfig::for_profile(profile),
            sequence: None,
            weights: None,
            output: None,
            zero_pad: false,
            dump_images: false,
        }
    }

    pub fn load(file: Option<&Path>, flags: &FlagOverrides) -> Result<Self, CliError> {
        let map = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(CliError::usage(format!("{}: config must be a JSON object", p.display()))),
                    Err(e) => return Err(CliError::usage(format!("{}: {e}", p.display()))),
                }
            }
            None => Map::new(),
        };
        Self::from_map(&map, flags)
    }

    /// Keys: `profile`, `seed`, `window`, `sequence`, `weights`, `output`,
    /// `zero_pad`, `dump_images`, and any `projection.<field>` or
    /// `network.<field>` path.
    pub fn from_map(map: &Map<String, Value>, flags: &FlagOverrides) -> Result<Self, CliError> {
        let profile = match (flags.profile, map.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => typed::<Profile>("profile", v)?,
            (None, None) => Profile::Desk,
        };
        let mut cfg = RunConfig::defaults(profile);
        let mut proj = serde_json::to_value(&cfg.projection).expect("serialisable");
        let mut net = serde_json::to_value(&cfg.network).expect("serialisable");
        for (key, v) in map {
            match key.as_str() {
                "profile" => {}
                "seed" => cfg.seed = typed(key, v)?,
                "window" => set_path(&mut net, &["window"], v, key)?,
                "sequence" => cfg.sequence = Some(typed(key, v)?),
                "weights" => cfg.weights = Some(typed(key, v)?),
                "output" => cfg.output = Some(typed(key, v)?),
                "zero_pad" => cfg.zero_pad = typed(key, v)?,
                "dump_images" => cfg.dump_images = typed(key, v)?,
                k => {
                    let parts: Vec<&str> = k.split('.').collect();
                    match parts.split_first() {
                        Some((&"projection", rest)) if !rest.is_empty() && rest != ["profile"] => {
                            set_path(&mut proj, rest, v, k)?
                        }
                        Some((&"network", rest)) if !rest.is_empty() => set_path(&mut net, rest, v, k)?,
                        _ => return Err(CliError::usage(format!("unknown config key `{k}`"))),
                    }
                }
            }
        }
        cfg.projection = typed("projection", &proj)?;
        cfg.network = typed("network", &net)?;
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        cfg.zero_pad |= flags.zero_pad;
        cfg.dump_images |= flags.dump_images;
        cfg.projection.validate().map_err(|e| CliError::usage(e.to_string()))?;
        cfg.network.validate(&cfg.projection).map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn typed<T: serde::de::DeserializeOwned>(key: &str, v: &Value) -> Result<T, CliError> {
    serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("config key `{key}`: {e}")))
}

fn set_path(root: &mut Value, path: &[&str], v: &Value, key: &str) -> Result<(), CliError> {
    let mut cur = root;
    for (i, part) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("config key `{key}` does not name a field")))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::usage(format!("unknown config key `{key}`")))?;
        if i + 1 == path.len() {
            if slot.is_object() {
                return Err(CliError::usage(format!("config key `{key}` names a section, not a field")));
            }
            *slot = v.clone();
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("path is non-empty")
}
