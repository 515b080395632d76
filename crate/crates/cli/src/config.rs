//! Settings resolution: flags, then `ZOOC_*` environment variables, then
//! `~/.zooc.json`, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use zoo_core::store::DEFAULT_TTL_SECONDS;

use crate::CliError;

pub const CONFIG_FILE_NAME: &str = ".zooc.json";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub registry: Option<String>,
    pub remote: Option<String>,
    pub ttl: Option<u64>,
    pub log_level: Option<String>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub registry: Option<String>,
    pub remote: Option<String>,
    pub ttl: Option<u64>,
    pub log_level: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub store_root: PathBuf,
    pub registry_url: Option<String>,
    /// Upstream package source: an `http(s)://` URL or a directory.
    pub remote: Option<String>,
    pub ttl_seconds: u64,
    pub log_level: String,
}

impl CliConfig {
    pub fn resolve(
        flags: Overrides,
        env: impl Fn(&str) -> Option<String>,
        file: FileConfig,
        home: Option<&Path>,
    ) -> Result<Self, CliError> {
        let env_nonempty = |k: &str| env(k).filter(|v| !v.is_empty());
        let ttl_env = env_nonempty("ZOOC_TTL")
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| CliError::Config(format!("ZOOC_TTL must be a whole number of seconds, got `{v}`")))
            })
            .transpose()?;
        let ttl_seconds = flags.ttl.or(ttl_env).or(file.ttl).unwrap_or(DEFAULT_TTL_SECONDS);
        if ttl_seconds == 0 {
            return Err(CliError::Config("ttl must be positive".into()));
        }
        let default_store = home.map_or_else(|| PathBuf::from(".zooc/store"), |h| h.join(".zooc").join("store"));
        Ok(Self {
            store_root: flags
                .store
                .or_else(|| env_nonempty("ZOOC_STORE").map(PathBuf::from))
                .or(file.store)
                .unwrap_or(default_store),
            registry_url: flags
                .registry
                .or_else(|| env_nonempty("ZOOC_REGISTRY"))
                .or(file.registry),
            remote: flags.remote.or_else(|| env_nonempty("ZOOC_REMOTE")).or(file.remote),
            ttl_seconds,
            log_level: flags.log_level.or(file.log_level).unwrap_or_else(|| "warn".into()),
        })
    }

    /// Resolves against the real process environment and home directory.
    pub fn load(flags: Overrides) -> Result<Self, CliError> {
        let home = std::env::var_os("HOME").filter(|h| !h.is_empty()).map(PathBuf::from);
        let file = match &home {
            Some(h) => read_file_config(&h.join(CONFIG_FILE_NAME))?,
            None => FileConfig::default(),
        };
        Self::resolve(flags, |k| std::env::var(k).ok(), file, home.as_deref())
    }

    /// Default location of the discovery log, next to the store.
    pub fn registry_data(&self) -> PathBuf {
        self.store_root.with_file_name("registry.log")
    }
}

pub fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(FileConfig::default()),
        Err(e) => Err(CliError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let m: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| m.get(k).cloned()
    }

    fn file() -> FileConfig {
        FileConfig {
            store: Some("/file/store".into()),
            registry: Some("http://file".into()),
            remote: None,
            ttl: Some(30),
            log_level: Some("info".into()),
        }
    }

    #[test]
    fn flags_beat_env_beat_file() {
        let flags = Overrides {
            store: Some("/flag/store".into()),
            ..Default::default()
        };
        let e = env(&[
            ("ZOOC_STORE", "/env/store"),
            ("ZOOC_REGISTRY", "http://env"),
            ("ZOOC_TTL", "90"),
        ]);
        let c = CliConfig::resolve(flags, &e, file(), None).unwrap();
        assert_eq!(c.store_root, PathBuf::from("/flag/store"));
        assert_eq!(c.registry_url.as_deref(), Some("http://env"));
        assert_eq!(c.ttl_seconds, 90);
        assert_eq!(c.log_level, "info");
    }

    #[test]
    fn file_then_defaults() {
        let c = CliConfig::resolve(Overrides::default(), env(&[]), file(), Some(Path::new("/home/u"))).unwrap();
        assert_eq!(c.store_root, PathBuf::from("/file/store"));
        assert_eq!(c.ttl_seconds, 30);

        let c = CliConfig::resolve(
            Overrides::default(),
            env(&[]),
            FileConfig::default(),
            Some(Path::new("/home/u")),
        )
        .unwrap();
        assert_eq!(c.store_root, PathBuf::from("/home/u/.zooc/store"));
        assert_eq!(c.registry_url, None);
        assert_eq!(c.ttl_seconds, DEFAULT_TTL_SECONDS);
        assert_eq!(c.log_level, "warn");
        assert_eq!(c.registry_data(), PathBuf::from("/home/u/.zooc/registry.log"));
    }

    #[test]
    fn empty_env_values_are_ignored() {
        let c = CliConfig::resolve(Overrides::default(), env(&[("ZOOC_STORE", "")]), file(), None).unwrap();
        assert_eq!(c.store_root, PathBuf::from("/file/store"));
    }

    #[test]
    fn rejects_bad_ttl() {
        assert!(CliConfig::resolve(Overrides::default(), env(&[("ZOOC_TTL", "soon")]), file(), None).is_err());
        let flags = Overrides {
            ttl: Some(0),
            ..Default::default()
        };
        assert!(CliConfig::resolve(flags, env(&[]), file(), None).is_err());
    }

    #[test]
    fn unknown_file_keys_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(CONFIG_FILE_NAME);
        std::fs::write(&p, r#"{"stor": "/typo"}"#).unwrap();
        assert!(matches!(read_file_config(&p), Err(CliError::Config(_))));
        std::fs::write(&p, r#"{"store": "/s", "ttl": 5}"#).unwrap();
        assert_eq!(read_file_config(&p).unwrap().ttl, Some(5));
        assert_eq!(
            read_file_config(&dir.path().join("absent")).unwrap(),
            FileConfig::default()
        );
    }
}
