//! Command line, config file and environment handling.
//!
//! Precedence, lowest first: built-in defaults, the TOML file given by
//! `--config`, then `PC_*` environment variables. `--mock` replaces both
//! providers with offline mocks.

use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use promptcrafter_gateway::{ImageProviderConfig, ProviderConfig};
use serde::Deserialize;

pub const DEFAULT_LLM_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_LLM_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_IMAGE_MODEL: &str = "dall-e-2";

#[derive(Debug, Clone, Parser)]
#[command(
    name = "promptcrafter-server",
    version,
    about = "Step-by-step text-to-image prompt crafting service"
)]
pub struct Args {
    /// Port to listen on.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory holding sessions, event logs and images.
    #[arg(long, default_value = "./data")]
    pub data_dir: PathBuf,
    /// Use offline mock providers for both text and images.
    #[arg(long)]
    pub mock: bool,
    /// TOML file with `[llm]` and `[image]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub image: ImageSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSection {
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub size: Option<u32>,
    pub count: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Providers {
    Mock {
        size: u32,
        count: u32,
    },
    Remote {
        llm: ProviderConfig,
        image: ImageProviderConfig,
    },
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub port: u16,
    pub data_dir: PathBuf,
    pub providers: Providers,
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Resolve the final settings. `env` looks up an environment variable.
pub fn resolve(
    args: &Args,
    file: FileConfig,
    env: impl Fn(&str) -> Option<String>,
) -> anyhow::Result<Settings> {
    let image_defaults = ImageProviderConfig::default();
    let size = file.image.size.unwrap_or(image_defaults.size);
    let count = file.image.count.unwrap_or(image_defaults.count);
    let providers = if args.mock {
        Providers::Mock { size, count }
    } else {
        let mut llm = ProviderConfig::new(
            env("PC_LLM_BASE_URL")
                .or(file.llm.base_url)
                .unwrap_or_else(|| DEFAULT_LLM_BASE_URL.into()),
            env("PC_LLM_API_KEY")
                .or(file.llm.api_key)
                .unwrap_or_default(),
            env("PC_LLM_MODEL")
                .or(file.llm.model)
                .unwrap_or_else(|| DEFAULT_LLM_MODEL.into()),
        );
        if let Some(ms) = file.llm.timeout_ms {
            llm.timeout = Duration::from_millis(ms);
        }
        if let Some(n) = file.llm.max_retries {
            llm.max_retries = n;
        }
        if let Some(ms) = file.llm.backoff_ms {
            llm.backoff_base = Duration::from_millis(ms);
        }
        llm.validate()?;

        let image = ImageProviderConfig {
            base_url: env("PC_IMG_BASE_URL")
                .or(file.image.base_url)
                .unwrap_or(image_defaults.base_url),
            api_key: file.image.api_key.unwrap_or_else(|| llm.api_key.clone()),
            model: env("PC_IMG_MODEL")
                .or(file.image.model)
                .or_else(|| Some(DEFAULT_IMAGE_MODEL.into())),
            size,
            count,
            timeout: file
                .image
                .timeout_ms
                .map(Duration::from_millis)
                .unwrap_or(image_defaults.timeout),
            max_retries: file.image.max_retries.unwrap_or(image_defaults.max_retries),
            backoff_base: file
                .image
                .backoff_ms
                .map(Duration::from_millis)
                .unwrap_or(image_defaults.backoff_base),
        };
        image.validate()?;
        Providers::Remote { llm, image }
    };
    Ok(Settings {
        port: args.port,
        data_dir: args.data_dir.clone(),
        providers,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn args(extra: &[&str]) -> Args {
        Args::parse_from(std::iter::once("promptcrafter-server").chain(extra.iter().copied()))
    }

    #[test]
    fn defaults() {
        let a = args(&[]);
        assert_eq!(a.port, 8080);
        assert_eq!(a.data_dir, PathBuf::from("./data"));
        assert!(!a.mock);
        let s = resolve(&a, FileConfig::default(), |_| None).unwrap();
        let Providers::Remote { llm, image } = s.providers else {
            panic!("expected remote")
        };
        assert_eq!(llm.base_url, DEFAULT_LLM_BASE_URL);
        assert_eq!(llm.model, DEFAULT_LLM_MODEL);
        assert_eq!(image.size, 512);
        assert_eq!(image.count, 6);
        assert_eq!(image.model.as_deref(), Some(DEFAULT_IMAGE_MODEL));
    }

    #[test]
    fn mock_flag_selects_mocks() {
        let s = resolve(
            &args(&["--mock", "--port", "9000"]),
            FileConfig::default(),
            |_| None,
        )
        .unwrap();
        assert_eq!(s.port, 9000);
        assert!(matches!(
            s.providers,
            Providers::Mock {
                size: 512,
                count: 6
            }
        ));
    }

    #[test]
    fn env_overrides_file() {
        let file = FileConfig::parse(
            "[llm]\nbase_url = \"http://file\"\nmodel = \"file-model\"\napi_key = \"k1\"\ntimeout_ms = 1500\n\
             [image]\nbase_url = \"http://img-file\"\ncount = 3\n",
        )
        .unwrap();
        let env: HashMap<&str, &str> = [
            ("PC_LLM_BASE_URL", "http://env"),
            ("PC_IMG_MODEL", "img-env"),
        ]
        .into();
        let s = resolve(&args(&[]), file, |k| env.get(k).map(|v| v.to_string())).unwrap();
        let Providers::Remote { llm, image } = s.providers else {
            panic!("expected remote")
        };
        assert_eq!(llm.base_url, "http://env");
        assert_eq!(llm.model, "file-model");
        assert_eq!(llm.timeout, Duration::from_millis(1500));
        assert_eq!(image.base_url, "http://img-file");
        assert_eq!(image.model.as_deref(), Some("img-env"));
        assert_eq!(image.api_key, "k1");
        assert_eq!(image.count, 3);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(FileConfig::parse("[llm]\nbogus = 1\n").is_err());
        let file = FileConfig::parse("[image]\ncount = 11\n").unwrap();
        assert!(resolve(&args(&[]), file, |_| None).is_err());
    }
}
