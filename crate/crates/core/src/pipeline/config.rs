use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::networks::ArchConfig;

/// How a map is reduced to one number per subject.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Max,
    P99,
}

/// Training and scoring settings. On disk this is a flat TOML table whose
/// keys are exactly the field names; missing keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub lr_discriminator: f64,
    pub lr_other: f64,
    pub beta_constrained: f64,
    pub beta_unconstrained: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lncc_window: usize,
    pub lncc_eps: f64,
    /// Peak displacement in voxels of the random smooth warps applied to the

    /// `"phantom"` or the path of a cohort manifest.
    pub data_source: String,
    pub phantom_count: usize,
    pub phantom_grid: usize,
    pub phantom_variability: f64,
    /// Percentile normalization of volumes read from disk.
    pub normalize: bool,
    pub normalize_lo_pct: f64,
    pub normalize_hi_pct: f64,

    pub score_reduction: Reduction,
    /// Intensity above which a voxel counts as foreground when no mask is
    /// given.
    pub foreground_threshold: f32,
    /// Per-subject Adam steps refining the unconstrained field at inference
    /// (0 disables).
    pub refine_steps: usize,
    pub refine_lr: f64,

    pub levels: usize,
    pub base_channels: usize,
    pub latent_channels: usize,
    pub decoder_channels: usize,
    pub leaky_slope: f64,
    pub disc_levels: usize,
    pub disc_channels: usize,
    pub deformer_hidden: usize,
    pub deformer_blocks: usize,
    pub deformer_up_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        Self {
            stage1_epochs: 200,
            stage2_epochs: 100,
            lr_discriminator: 1.0e-4,
            lr_other: 5.0e-4,
            beta_constrained: 10.0,
            beta_unconstrained: 0.01,
            gamma: 0.05,
            batch_size: 4,
            seed: 0,
            lncc_window: 9,
            lncc_eps: 1e-5,
            data_source: "phantom".into(),
            phantom_count: 50,
            phantom_grid: 32,
            phantom_variability: 1.0,
            normalize: true,
            normalize_lo_pct: 0.5,
            normalize_hi_pct: 99.5,
            score_reduction: Reduction::Mean,
            foreground_threshold: 0.05,
            refine_steps: 100,
            refine_lr: 0.05,
            levels: arch.levels,
            base_channels: arch.base_channels,
            latent_channels: arch.latent_channels,
            decoder_channels: arch.decoder_channels,
            leaky_slope: arch.slope,
            disc_levels: arch.disc_levels,
            disc_channels: arch.disc_channels,
            deformer_hidden: arch.deformer_hidden,
            deformer_blocks: arch.deformer_blocks,
            deformer_up_channels: arch.deformer_up_channels,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs == 0 || self.stage2_epochs == 0 {
            return Err(Error::Config("epoch counts must be > 0".into()));
        }
        if !(self.lr_discriminator > 0.0 && self.lr_other > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(self.beta_constrained > self.beta_unconstrained) {
            return Err(Error::Config(format!(
                "beta_constrained ({}) must exceed beta_unconstrained ({})",
                self.beta_constrained, self.beta_unconstrained
            )));
        }
        if !(self.refine_lr > 0.0) {
            return Err(Error::Config(format!("refine_lr ({}) must be > 0", self.refine_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        self.loss(self.beta_constrained).validate()?;
        self.loss(self.beta_unconstrained).validate()?;
        self.arch().validate()
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            latent_channels: self.latent_channels,
            decoder_channels: self.decoder_channels,
            slope: self.leaky_slope,
            disc_levels: self.disc_levels,
            disc_channels: self.disc_channels,
            deformer_hidden: self.deformer_hidden,
            deformer_blocks: self.deformer_blocks,
            deformer_up_channels: self.deformer_up_channels,
        }
    }

    pub fn loss(&self, beta: f64) -> LossConfig {
        LossConfig {
            beta,
            gamma: self.gamma,
            window: self.lncc_window,
            eps: self.lncc_eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_full_training_schedule() {
        let c = TrainConfig::default();
        assert_eq!((c.stage1_epochs, c.stage2_epochs), (200, 100));
        assert_eq!((c.lr_discriminator, c.lr_other), (1.0e-4, 5.0e-4));
        assert_eq!((c.beta_constrained, c.beta_unconstrained), (10.0, 0.01));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig {
            seed: 9,
            score_reduction: Reduction::P99,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let partial = TrainConfig::from_toml("stage1_epochs = 3\ngamma = 0.0\n").unwrap();
        assert_eq!(partial.stage1_epochs, 3);
        assert_eq!(partial.stage2_epochs, 100);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig::from_toml("stage1_epochs = 0").is_err());
        assert!(TrainConfig::from_toml("beta_constrained = 0.001").is_err());
        assert!(TrainConfig::from_toml("lncc_window = 8").is_err());
        assert!(TrainConfig::from_toml("no_such_key = 1").is_err());
    }
}
