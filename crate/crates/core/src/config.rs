//! Project configuration: a TOML file with one section per stage.
//!
//! Lookup order: an explicit path, else `$VDL_CONFIG`, else built-in defaults.
//! `$VDL_SEED` overrides every seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::FluidProperties;
use crate::error::{Error, Result};
use crate::neural::{VaeTrainConfig, WorkTrainConfig};
use crate::synth::AugmentSpec;
use crate::vdl::{ForestConfig, LabelSet};

pub const CONFIG_ENV: &str = "VDL_CONFIG";
pub const SEED_ENV: &str = "VDL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub artifacts_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data_dir: PathBuf::from("data"), artifacts_dir: PathBuf::from("artifacts") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub rho: f64,
    pub mu: f64,
    pub c: f64,
    pub sensor_spacing_cm: f64,
}

impl Default for Physics {
    fn default() -> Self {
        let f = FluidProperties::default();
        Physics { rho: f.rho, mu: f.mu, c: f.c, sensor_spacing_cm: crate::ingest::DEFAULT_SENSOR_SPACING_CM }
    }
}

impl Physics {
    pub fn fluid(&self) -> FluidProperties {
        FluidProperties { rho: self.rho, mu: self.mu, c: self.c }
    }
}

/// Which class names label the disease task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labels {
    /// The thirteen manometry groups.
    Clinical,
    /// Whatever labels appear in the data, in first-seen order.
    Observed,
    Custom(Vec<String>),
}

impl Labels {
    pub fn resolve<'a>(&self, present: impl IntoIterator<Item = &'a str>) -> LabelSet {
        match self {
            Labels::Clinical => LabelSet::clinical(),
            Labels::Observed => LabelSet::observed(present),
            Labels::Custom(n) => LabelSet { names: n.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: u64,
    pub paths: Paths,
    pub physics: Physics,
    pub vae: VaeTrainConfig,
    pub worknet: WorkTrainConfig,
    /// Fraction of regressor samples held out for validation.
    pub worknet_validation: f64,
    pub forest: ForestConfig,
    pub forest_test_fraction: f64,
    pub augment: AugmentSpec,
    pub labels: Labels,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            seed: 0,
            paths: Paths::default(),
            physics: Physics::default(),
            vae: VaeTrainConfig::default(),
            worknet: WorkTrainConfig::default(),
            worknet_validation: 0.2,
            forest: ForestConfig::default(),
            forest_test_fraction: 0.25,
            augment: AugmentSpec::default(),
            labels: Labels::Observed,
        }
    }
}

impl ProjectConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c: ProjectConfig = toml::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))?;
        c.sync_seeds();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Explicit path, then `$VDL_CONFIG`, then defaults; `$VDL_SEED` applied last.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let mut c = match explicit.map(PathBuf::from).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed = s.trim().parse().map_err(|_| Error::Invalid(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
            c.set_seed(seed);
        }
        Ok(c)
    }

    /// Sets the global seed and every per-stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.vae.seed = seed;
        self.worknet.seed = seed;
        self.forest.seed = seed;
    }

    /// Stage seeds left at zero inherit the global seed.
    fn sync_seeds(&mut self) {
        for s in [&mut self.vae.seed, &mut self.worknet.seed, &mut self.forest.seed] {
            if *s == 0 {
                *s = self.seed;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.physics;
        if !(p.rho > 0.0 && p.mu > 0.0 && p.c > 0.0 && p.sensor_spacing_cm > 0.0) {
            return Err(Error::Invalid("physical constants must be positive".into()));
        }
        self.vae.validate()?;
        self.worknet.validate()?;
        for (name, f) in [("worknet_validation", self.worknet_validation), ("forest_test_fraction", self.forest_test_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.augment.normal_clip > 0.0) {
            return Err(Error::Invalid("augment.normal_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ProjectConfig::default();
        assert_eq!(ProjectConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_and_seed_inheritance() {
        let c = ProjectConfig::parse("seed = 7\n[physics]\nc = 0.05\n[vae]\nepochs = 10\nschedule = [{ from_epoch = 0, lr = 1e-3 }]\n")
            .unwrap();
        assert_eq!(c.physics.c, 0.05);
        assert_eq!(c.physics.rho, 1000.0);
        assert_eq!(c.vae.epochs, 10);
        assert_eq!((c.vae.seed, c.worknet.seed, c.forest.seed), (7, 7, 7));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ProjectConfig::parse("[physics]\nrho = -1.0\n").is_err());
        assert!(ProjectConfig::parse("[physics]\nbogus = 1\n").is_err());
        assert!(ProjectConfig::parse("labels = { custom = [\"a\", \"b\"] }\n").is_ok());
    }
}
