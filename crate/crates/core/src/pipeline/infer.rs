use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Graph, ParamStore};
use crate::deformation::{folding_map, jacobian_determinant, warp};
use crate::error::{Error, Result};
use crate::losses::{morph_loss, LossConfig};
use crate::networks::{HeadKind, Model};
use crate::volume::{percentile, save_field, save_volume, DeformationField, RegionMask, Volume};

use super::{Checkpoint, Reduction};

/// Which voxels count when reducing a map to one subject score.
#[derive(Clone, Copy, Debug)]
pub enum Foreground<'a> {
    /// Nonzero labels of a mask.
    Mask(&'a RegionMask),
    /// Input intensity strictly above a threshold.
    Threshold(f32),
}

/// Subject-level numbers derived from the maps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Reduction of the anomaly map (residual x folding).
    pub patient_score: f64,
    /// Same reduction of the residual map alone.
    pub residual_score: f64,
    /// Same reduction of the folding map alone.
    pub folding_score: f64,
    /// Total folding mass of the unconstrained field.
    pub folding_mass: f64,
    /// Total folding mass of the constrained field.
    pub folding_mass_constrained: f64,
    /// Mean anomaly per labelled region (empty without a mask).
    #[serde(default)]
    pub region_scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    pub input: Volume,
    pub x_recon: Volume,
    pub x_morph_constrained: Volume,
    pub field_constrained: DeformationField,
    pub field_unconstrained: DeformationField,
    /// `|x - x_morph|`.
    pub residual: Volume,
    /// `max(0, -det J)` of the unconstrained field.
    pub folding: Volume,
    /// `residual * folding`.
    pub anomaly: Volume,
    pub scores: Scores,
}

/// Options controlling the unconstrained field and the scalar scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreOptions {
    pub reduction: Reduction,
    pub foreground_threshold: f32,
    /// Adam steps refining the unconstrained head's field on the subject
    /// itself; 0 keeps the plain forward pass.
    pub refine_steps: usize,
    pub refine_lr: f64,
    /// Loss minimized by the refinement (the unconstrained `beta`).
    pub refine_loss: LossConfig,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            reduction: Reduction::Mean,
            foreground_threshold: 0.05,
            refine_steps: 0,
            refine_lr: 0.05,
            refine_loss: LossConfig::default(),
        }
    }
}

/// Minimizes the morph loss of `recon` against `x` over the displacement
/// itself, starting from `init`.
fn refine_field(init: &DeformationField, recon: &Volume, x: &Volume, opts: &ScoreOptions) -> Result<DeformationField> {
    let mut store = ParamStore::<f32>::new();
    let id = store.insert("u", init.to_array())?;
    let mut adam = Adam::new(AdamConfig::with_lr(opts.refine_lr));
    let (recon, x) = (recon.to_array(), x.to_array());
    for _ in 0..opts.refine_steps {
        let mut g = Graph::new();
        let u = g.param(&store, id);
        let src = g.constant(recon.clone());
        let target = g.constant(x.clone());
        let morphed = g.warp(src, u)?;
        let loss = morph_loss(&mut g, target, morphed, u, &opts.refine_loss)?;
        g.backward(loss, &mut store)?;
        adam.step(&mut store, &[id])?;
        store.zero_grad();
    }
    DeformationField::from_array(&store.get(id).value, 0)
}

/// Builds all maps and scores for one volume using the checkpoint's
/// scoring settings.
pub fn infer(ck: &Checkpoint, x: &Volume, mask: Option<&RegionMask>) -> Result<InferenceResult> {
    let opts = ScoreOptions {
        reduction: ck.config.score_reduction,
        foreground_threshold: ck.config.foreground_threshold,
        refine_steps: ck.config.refine_steps,
        refine_lr: ck.config.refine_lr,
        refine_loss: ck.config.loss(ck.config.beta_unconstrained),
    };
    infer_model(&ck.model, x, mask, &opts)
}

pub fn infer_model(model: &Model, x: &Volume, mask: Option<&RegionMask>, opts: &ScoreOptions) -> Result<InferenceResult> {
    model.arch.check_shape(x.shape())?;
    let decoded = model.reconstruct(x)?;
    let field_c = model.estimate_deformation(HeadKind::Constrained, &decoded, x)?;
    let mut field_u = model.estimate_deformation(HeadKind::Unconstrained, &decoded, x)?;
    if opts.refine_steps > 0 {
        field_u = refine_field(&field_u, &decoded.recon, x, opts)?;
    }
    let x_morph = warp(&decoded.recon, &field_c)?;
    let residual = x.zip_map(&x_morph, |a, b| (a - b).abs())?;
    let folding_u = folding_map(&jacobian_determinant(&field_u)?);
    let folding_c = folding_map(&jacobian_determinant(&field_c)?);
    let folding = folding_u.to_volume()?;
    let anomaly = residual.zip_map(&folding, |r, f| r * f)?;
    let mut result = InferenceResult {
        input: x.clone(),
        x_recon: decoded.recon,
        x_morph_constrained: x_morph,
        field_constrained: field_c,
        field_unconstrained: field_u,
        residual,
        folding,
        anomaly,
        scores: Scores::default(),
    };
    let fg = Foreground::Threshold(opts.foreground_threshold);
    result.scores = Scores {
        patient_score: reduce_map(&result.anomaly, &result.input, &fg, opts.reduction)?,
        residual_score: reduce_map(&result.residual, &result.input, &fg, opts.reduction)?,
        folding_score: reduce_map(&result.folding, &result.input, &fg, opts.reduction)?,
        folding_mass: folding_u.total(),
        folding_mass_constrained: folding_c.total(),
        region_scores: match mask {
            Some(m) => region_scores(&result, m)?,
            None => BTreeMap::new(),
        },
    };
    Ok(result)
}

fn foreground_voxels(input: &Volume, fg: &Foreground) -> Result<Vec<bool>> {
    let sel = match fg {
        Foreground::Mask(m) => {
            if m.shape() != input.shape() {
                return Err(Error::Shape(format!("mask {:?} vs volume {:?}", m.shape(), input.shape())));
            }
            m.foreground()
        }
        Foreground::Threshold(t) => input.data().iter().map(|&v| v > *t).collect(),
    };
    if !sel.iter().any(|&s| s) {
        return Err(Error::Empty("foreground selects no voxels".into()));
    }
    Ok(sel)
}

/// Reduces `map` over the foreground of `input`.
pub fn reduce_map(map: &Volume, input: &Volume, fg: &Foreground, reduction: Reduction) -> Result<f64> {
    if map.shape() != input.shape() {
        return Err(Error::Shape(format!("map {:?} vs volume {:?}", map.shape(), input.shape())));
    }
    let sel = foreground_voxels(input, fg)?;
    let values: Vec<f32> = map.data().iter().zip(&sel).filter(|(_, &s)| s).map(|(&v, _)| v).collect();
    Ok(match reduction {
        Reduction::Mean => values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64,
        Reduction::Max => values.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64,
        Reduction::P99 => percentile(&values, 99.0) as f64,
    })
}

/// Mean of the anomaly map over the foreground.
pub fn patient_score(r: &InferenceResult, fg: &Foreground) -> Result<f64> {
    reduce_map(&r.anomaly, &r.input, fg, Reduction::Mean)
}

/// Mean anomaly per legend entry. A legend region with no voxels scores 0.
pub fn region_scores(r: &InferenceResult, mask: &RegionMask) -> Result<BTreeMap<String, f64>> {
    region_means(&r.anomaly, mask)
}

pub fn region_means(map: &Volume, mask: &RegionMask) -> Result<BTreeMap<String, f64>> {
    if mask.shape() != map.shape() {
        return Err(Error::Shape(format!("mask {:?} vs map {:?}", mask.shape(), map.shape())));
    }
    let mut sums: BTreeMap<u16, (f64, usize)> = mask.legend().keys().map(|&l| (l, (0.0, 0))).collect();
    for (&l, &v) in mask.labels().iter().zip(map.data()) {
        if let Some(acc) = sums.get_mut(&l) {
            acc.0 += v as f64;
            acc.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(l, (s, n))| (mask.legend()[&l].clone(), if n == 0 { 0.0 } else { s / n as f64 }))
        .collect())
}

impl InferenceResult {
    /// Writes every map as raw+sidecar pairs plus `scores.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let maps = [
            ("x_recon", &self.x_recon),
            ("x_morph_constrained", &self.x_morph_constrained),
            ("residual", &self.residual),
            ("folding", &self.folding),
            ("anomaly", &self.anomaly),
        ];
        for (name, v) in maps {
            save_volume(v, &dir.join(name))?;
        }
        save_field(&self.field_constrained, &dir.join("field_constrained"))?;
        save_field(&self.field_unconstrained, &dir.join("field_unconstrained"))?;
        let path = dir.join("scores.json");
        let text = serde_json::to_string_pretty(&self.scores)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
