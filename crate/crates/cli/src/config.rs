use std::path::Path;

use mvc_core::util::KvConfig;
use mvc_core::Result;

/// Environment variables `MVC_<KEY>` override config key `<key>` (lowercased).
pub const ENV_PREFIX: &str = "MVC_";

/// Variables under the prefix that are not config keys.
const RESERVED: &[&str] = &["MVC_LOG"];

/// Reads the optional config file and applies environment overrides.
pub(crate) fn load(path: Option<&Path>) -> Result<KvConfig> {
    let mut kv = match path {
        Some(p) => KvConfig::read(p)?,
        None => KvConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !RESERVED.contains(&k.as_str()))
        .collect();
    overrides.sort();
    for (k, v) in overrides {
        let key = k[ENV_PREFIX.len()..].to_ascii_lowercase();
        log::info!("config override from {k}: {key} = {v}");
        kv.set(&key, v);
    }
    Ok(kv)
}
