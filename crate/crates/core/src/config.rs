//! Run configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//! b_field = 1.0
//!
//! [generate]
//! category = "single"
//! events = 1000
//! noise_rate = 30.0
//!
//! [finder]
//! phi_bins = 720
//!
//! [metrics]
//! bins_pt = [0.15, 0.5, 1.0, 1.5]
//! ```
//!
//! Every section and key is optional. `[geometry]` takes the layout keys of
//! [`GeometryConfig`]; when absent the BESIII chamber is used.

use crate::finder::FinderConfig;
use crate::fitter::FitterConfig;
use crate::geometry::{Geometry, GeometryConfig, GeometryError};
use crate::metrics::{default_cos_edges, default_pt_edges, validate_edges, MatchRule, MetricsError};
use crate::sim::{Category, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub category: Category,
    pub events: u64,
    pub noise_rate: f64,
    pub det_efficiency: f64,
    /// Single-wire resolution, cm.
    pub sigma_drift: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        GenerateConfig {
            category: Category::Single,
            events: 1000,
            noise_rate: sim.noise_rate,
            det_efficiency: sim.det_efficiency,
            sigma_drift: sim.sigma_drift,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub bins_pt: Vec<f64>,
    pub bins_cos: Vec<f64>,
    #[serde(flatten)]
    pub rule: MatchRule,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bins_pt: default_pt_edges(),
            bins_cos: default_cos_edges(),
            rule: MatchRule::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Solenoid field, T. Shared by simulation and reconstruction.
    pub b_field: Option<f64>,
    pub generate: GenerateConfig,
    pub geometry: Option<GeometryConfig>,
    pub finder: FinderConfig,
    pub fitter: FitterConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            source: Box::new(e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = self.b_field();
        if !(b.is_finite() && b > 0.0) {
            return Err(ConfigError::Invalid(format!("b_field must be positive, got {b}")));
        }
        let g = &self.generate;
        if !(g.noise_rate.is_finite() && g.noise_rate >= 0.0) {
            return Err(ConfigError::Invalid(format!("noise_rate must be >= 0, got {}", g.noise_rate)));
        }
        if !(0.0..=1.0).contains(&g.det_efficiency) {
            return Err(ConfigError::Invalid(format!(
                "det_efficiency must lie in [0, 1], got {}",
                g.det_efficiency
            )));
        }
        if !(g.sigma_drift.is_finite() && g.sigma_drift >= 0.0) {
            return Err(ConfigError::Invalid(format!("sigma_drift must be >= 0, got {}", g.sigma_drift)));
        }
        let f = &self.finder;
        if f.phi_bins == 0 || f.kappa_bins == 0 || !(f.kappa_max > 0.0) {
            return Err(ConfigError::Invalid("finder accumulator must be non-empty".into()));
        }
        if !(self.fitter.tolerance > 0.0) || self.fitter.max_iterations == 0 {
            return Err(ConfigError::Invalid(
                "fitter needs a positive tolerance and at least one iteration".into(),
            ));
        }
        validate_edges(&self.metrics.bins_pt)?;
        validate_edges(&self.metrics.bins_cos)?;
        self.metrics.rule.validate()?;
        self.geometry()?;
        Ok(())
    }

    pub fn b_field(&self) -> f64 {
        self.b_field.unwrap_or(SimConfig::default().b_field)
    }

    pub fn geometry(&self) -> Result<Geometry, GeometryError> {
        match &self.geometry {
            Some(g) => Geometry::from_config(g),
            None => Ok(Geometry::besiii()),
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            noise_rate: self.generate.noise_rate,
            det_efficiency: self.generate.det_efficiency,
            sigma_drift: self.generate.sigma_drift,
            b_field: self.b_field(),
        }
    }

    pub fn finder(&self) -> FinderConfig {
        FinderConfig {
            b_field: self.b_field(),
            ..self.finder.clone()
        }
    }

    pub fn fitter(&self) -> FitterConfig {
        FitterConfig {
            b_field: self.b_field(),
            ..self.fitter.clone()
        }
    }

    /// Canonical TOML rendering of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Record written next to a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub dataset_sha256: String,
    pub seed: u64,
    pub category: Category,
    pub events: u64,
    /// Events that kept at least one hit and appear in the file.
    pub events_written: u64,
    pub hits: u64,
    pub truth_tracks: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.finder().b_field, 1.0);
        assert_eq!(c.fitter().b_field, 1.0);
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::parse(
            "seed = 3\nb_field = 1.5\n[generate]\ncategory = \"close-by-two\"\nevents = 10\n\
             [finder]\nphi_bins = 360\n[metrics]\nbins_pt = [0.1, 1.0]\nmin_purity = 0.6\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.generate.category, Category::CloseByTwo);
        assert_eq!(c.finder().phi_bins, 360);
        assert_eq!(c.finder().b_field, 1.5);
        assert_eq!(c.sim().b_field, 1.5);
        assert_eq!(c.metrics.bins_pt, vec![0.1, 1.0]);
        assert_eq!(c.metrics.rule.min_purity, 0.6);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("b_field = -1.0").is_err());
        assert!(RunConfig::parse("[metrics]\nbins_pt = [1.0, 0.5]").is_err());
        assert!(RunConfig::parse("[generate]\ncategory = \"triple\"").is_err());
        assert!(RunConfig::parse("[generate]\nbogus = 1").is_err());
        assert!(RunConfig::parse("[generate]\ndet_efficiency = 1.5").is_err());
    }

    #[test]
    fn canonical_round_trip_keeps_hash() {
        let c = RunConfig::parse("seed = 9\n[fitter]\nmax_iterations = 7").unwrap();
        let again = RunConfig::parse(&c.canonical()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }
}
