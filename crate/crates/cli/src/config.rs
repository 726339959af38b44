//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use condwalk::{Environment, EnvironmentManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Condition,
    VerifyMain,
    VerifyFdd,
    VerifyUclt,
    VerifyTightness,
    VerifyHeatkernel,
    VerifyLemmas,
    MeanderTable,
    SigmaEstimate,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

/// A config file as written: the kind-specific `[params]` table is typed by
/// the caller so that unknown keys are reported against the file's lines.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile<P> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads; not part of the experiment identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentManifest>,
    /// Manifest file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment_path: Option<PathBuf>,
    #[serde(default)]
    pub params: P,
}

/// A validated experiment: everything needed to reproduce the run.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved<P> {
    pub kind: Kind,
    pub seed: u64,
    pub environment: EnvironmentManifest,
    pub params: P,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where the config text came from, for diagnostics.
pub struct Source {
    pub text: String,
    pub path: Option<PathBuf>,
}

impl Source {
    pub fn read(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self {
                text: String::new(),
                path: None,
            }),
            Some(p) => std::fs::read_to_string(p)
                .map(|text| Self {
                    text,
                    path: Some(p.to_path_buf()),
                })
                .map_err(|e| ConfigError(format!("{}: {e}", p.display()))),
        }
    }

    fn label(&self) -> String {
        self.path.as_ref().map_or_else(|| "<defaults>".into(), |p| p.display().to_string())
    }

    /// The `kind` key, read before the typed parse.
    pub fn kind(&self) -> Result<Option<Kind>, ConfigError> {
        #[derive(Deserialize)]
        struct KindOnly {
            kind: Option<Kind>,
        }
        toml::from_str::<KindOnly>(&self.text).map(|k| k.kind).map_err(|e| self.error(e))
    }

    fn error(&self, e: toml::de::Error) -> ConfigError {
        // toml messages already name the line and column
        ConfigError(format!("{}: {}", self.label(), e.to_string().trim_end()))
    }

    pub fn parse<P: DeserializeOwned + Default>(&self) -> Result<ConfigFile<P>, ConfigError> {
        toml::from_str(&self.text).map_err(|e| self.error(e))
    }

    /// Resolve the environment, seed and kind, with command-line overrides.
    pub fn resolve<P: DeserializeOwned + Default>(
        &self,
        kind: Kind,
        seed: Option<u64>,
    ) -> Result<(Resolved<P>, ConfigFile<()>), ConfigError> {
        let file: ConfigFile<P> = self.parse()?;
        if let Some(k) = file.kind {
            if k != kind {
                return Err(ConfigError(format!(
                    "{}: config is for kind {k:?} but the subcommand is {kind}",
                    self.label()
                )));
            }
        }
        let environment = match (&file.environment, &file.environment_path) {
            (Some(_), Some(_)) => {
                return Err(ConfigError(format!(
                    "{}: give either [environment] or environment_path, not both",
                    self.label()
                )))
            }
            (Some(m), None) => m.clone(),
            (None, Some(p)) => {
                let full = match &self.path {
                    Some(cfg) if p.is_relative() => cfg.parent().unwrap_or(Path::new(".")).join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&full).map_err(|e| ConfigError(format!("{}: {e}", full.display())))?;
                EnvironmentManifest::from_toml_str(&text).map_err(|e| ConfigError(format!("{}: {e}", full.display())))?
            }
            (None, None) => Environment::constant(2).expect("valid default").manifest(),
        };
        Environment::from_manifest(&environment).map_err(|e| ConfigError(format!("{}: {e}", self.label())))?;
        let rest = ConfigFile {
            kind: file.kind,
            seed: file.seed,
            workers: file.workers,
            out: file.out.clone(),
            environment: None,
            environment_path: None,
            params: (),
        };
        Ok((
            Resolved {
                kind,
                seed: seed.or(file.seed).unwrap_or(0),
                environment,
                params: file.params,
            },
            rest,
        ))
    }
}

impl<P: Serialize> Resolved<P> {
    /// The resolved experiment as a config file that re-runs it.
    pub fn to_toml(&self) -> String {
        let file = ConfigFile {
            kind: Some(self.kind),
            seed: Some(self.seed),
            workers: None,
            out: None,
            environment: Some(self.environment.clone()),
            environment_path: None,
            params: &self.params,
        };
        toml::to_string(&file).expect("config serializes")
    }
}
