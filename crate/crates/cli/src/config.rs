//! The optional TOML configuration file.
//!
//! ```toml
//! seed = 7
//! index = "work/test.t2iq"
//! manifest = "corpus/manifest.jsonl"
//! vocabulary = "data/vocabulary.json"
//! backends = ["descriptors/resnet50.json"]
//!
//! [provider]
//! kind = "http"
//! base_url = "https://example.invalid/api"
//! api_key_env = "T2I_API_KEY"
//!
//! [generation]
//! width = 512
//! height = 768
//!
//! [server]
//! port = 8080
//!
//! [cache]
//! dir = ".attriq-cache"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use attriq_core::query_gen::{GenerationSettings, HttpProviderConfig};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub generate_path: Option<String>,
    pub auth_header: Option<String>,
    pub auth_scheme: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
}

impl ProviderSection {
    pub fn http_config(&self) -> Result<HttpProviderConfig, CliError> {
        let (Some(base_url), Some(key_env)) = (&self.base_url, &self.api_key_env) else {
            return Err(CliError::new(
                "ProviderNotConfigured",
                "provider.kind = \"http\" needs provider.base_url and provider.api_key_env",
            ));
        };
        let mut cfg = HttpProviderConfig::new(base_url, key_env);
        if let Some(p) = &self.generate_path {
            cfg.generate_path = p.clone();
        }
        if let Some(h) = &self.auth_header {
            cfg.auth_header = h.clone();
        }
        if let Some(s) = &self.auth_scheme {
            cfg.auth_scheme = (!s.is_empty()).then(|| s.clone());
        }
        if let Some(t) = self.timeout_secs {
            cfg.timeout_secs = t;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub index: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub preamble: Option<String>,
    /// Backend descriptor files available for lookup by backend id.
    pub backends: Vec<PathBuf>,
    pub provider: ProviderSection,
    pub generation: Option<GenerationSettings>,
    pub server: ServerSection,
    pub cache: CacheSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("InvalidConfig", format!("{}: {e}", path.display())))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| CliError::new("InvalidConfig", format!("{}: {e}", path.display())))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.index, &mut self.manifest, &mut self.vocabulary, &mut self.cache.dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self.backends.iter_mut().for_each(fix);
    }

    /// Generation settings with the top-level seed applied when the
    /// `[generation]` table has none.
    pub fn generation_settings(&self) -> GenerationSettings {
        let mut s = self.generation.clone().unwrap_or_default();
        if s.seed.is_none() {
            s.seed = self.seed;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attriq.toml");
        std::fs::write(
            &path,
            r#"
seed = 5
index = "idx/test.t2iq"
backends = ["/abs/r50.json", "d/vgg.json"]
[provider]
kind = "http"
base_url = "http://localhost:1"
api_key_env = "KEY"
auth_scheme = ""
[generation]
height = 768
[server]
port = 9000
[cache]
dir = "cache"
"#,
        )
        .unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.index.unwrap(), dir.path().join("idx/test.t2iq"));
        assert_eq!(c.backends[0], PathBuf::from("/abs/r50.json"));
        assert_eq!(c.backends[1], dir.path().join("d/vgg.json"));
        assert_eq!(c.cache.dir.unwrap(), dir.path().join("cache"));
        assert_eq!(c.server.port, 9000);
        assert_eq!(c.server.host, "127.0.0.1");
        let s = Config::load(&path).unwrap().generation_settings();
        assert_eq!((s.width, s.height, s.seed), (512, 768, Some(5)));
        let http = Config::load(&path).unwrap().provider.http_config().unwrap();
        assert_eq!(http.auth_scheme, None);
        assert_eq!(http.generate_path, "/generations");
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "indx = \"typo\"\n").unwrap();
        assert_eq!(Config::load(&path).unwrap_err().code, "InvalidConfig");
    }

    #[test]
    fn http_needs_url_and_key_env() {
        let p = ProviderSection {
            kind: ProviderKind::Http,
            ..Default::default()
        };
        assert_eq!(p.http_config().unwrap_err().code, "ProviderNotConfigured");
    }
}
