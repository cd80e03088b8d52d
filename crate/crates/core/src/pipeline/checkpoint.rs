use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{checkpoint, Adam, AdamConfig, Moments, NdArray, ParamStore};
use crate::error::{Error, Result};
use crate::networks::{init_params, ArchConfig, Model};

use super::TrainConfig;

const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub opt_disc: Adam<f32>,
    pub opt_other: Adam<f32>,
    /// Last completed stage (1 or 2).
    pub stage: u8,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamConfig,
    steps: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    stage: u8,
    arch: ArchConfig,
    config: TrainConfig,
    optimizers: BTreeMap<String, OptimizerMeta>,
}

impl Checkpoint {
    pub fn fresh(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: Model::new(config.arch(), config.seed)?,
            config: config.clone(),
            opt_disc: Adam::new(AdamConfig::with_lr(config.lr_discriminator)),
            opt_other: Adam::new(AdamConfig::with_lr(config.lr_other)),
            stage: 0,
        })
    }

    fn optimizers(&self) -> [(&'static str, &Adam<f32>); 2] {
        [("disc", &self.opt_disc), ("other", &self.opt_other)]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &NdArray<f32>)> = Vec::new();
        for (_, p) in self.model.params.iter() {
            tensors.push((format!("param/{}", p.name), &p.value));
        }
        let mut optimizers = BTreeMap::new();
        for (key, opt) in self.optimizers() {
            let mut steps = BTreeMap::new();
            for (name, m) in opt.moments() {
                tensors.push((format!("adam/{key}/{name}/m"), &m.m));
                tensors.push((format!("adam/{key}/{name}/v"), &m.v));
                steps.insert(name.clone(), m.step);
            }
            optimizers.insert(key.to_string(), OptimizerMeta { config: opt.config, steps });
        }
        let meta = Meta {
            format_version: FORMAT_VERSION,
            stage: self.stage,
            arch: self.model.arch.clone(),
            config: self.config.clone(),
            optimizers,
        };
        checkpoint::encode(serde_json::to_value(meta)?, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = checkpoint::decode(bytes)?;
        let meta: Meta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
        }
        let mut by_name: BTreeMap<String, NdArray<f32>> = tensors.into_iter().collect();

        // the architecture dictates which parameters must exist
        let template = init_params::<f32>(&meta.arch, 0)?;
        let mut params = ParamStore::new();
        for (_, p) in template.iter() {
            let value = by_name
                .remove(&format!("param/{}", p.name))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{}'", p.name)))?;
            if value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, architecture expects {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            params.insert(&p.name, value)?;
        }

        let mut opts = BTreeMap::new();
        for (key, om) in meta.optimizers {
            let mut adam = Adam::new(om.config);
            for (name, step) in om.steps {
                let mut take = |part: &str| {
                    by_name
                        .remove(&format!("adam/{key}/{name}/{part}"))
                        .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {key}/{name}/{part}")))
                };
                let m = take("m")?;
                let v = take("v")?;
                adam.set_moments(&name, Moments { m, v, step });
            }
            opts.insert(key, adam);
        }
        let mut take_opt = |key: &str| {
            opts.remove(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer '{key}'")))
        };
        Ok(Self {
            model: Model {
                arch: meta.arch,
                params,
            },
            config: meta.config,
            opt_disc: take_opt("disc")?,
            opt_other: take_opt("other")?,
            stage: meta.stage,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
