use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NdArray, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::losses::{
    deformation_penalty, discriminator_adv, generator_adv, lncc, morph_loss, mse_loss,
};
use crate::networks::{autoencode, discriminate, estimate_deformation, ArchConfig, Binder, HeadKind, AE_PREFIX, DISC_PREFIX};
use crate::volume::{batch_array, Volume};

use super::{Checkpoint, LossLog, TrainConfig};

/// Called after every epoch with `(stage, epoch, mean losses)`.
pub type Progress<'a> = &'a mut dyn FnMut(u8, usize, &BTreeMap<String, f64>);

fn check_inputs(arch: &ArchConfig, volumes: &[Volume]) -> Result<()> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Empty("training needs at least one healthy volume".into()))?;
    for v in volumes {
        if v.shape() != first.shape() {
            return Err(Error::Shape(format!("training volumes mix {:?} and {:?}", first.shape(), v.shape())));
        }
    }
    arch.check_shape(first.shape())
}

fn scalar(g: &Graph<f32>, v: Var) -> f64 {
    g.value(v).item() as f64
}

/// Running batch-size-weighted means of named losses.
#[derive(Default)]
struct EpochMeans {
    sums: BTreeMap<String, f64>,
    count: usize,
}

impl EpochMeans {
    fn add(&mut self, name: &str, value: f64, n: usize) {
        *self.sums.entry(name.to_string()).or_default() += value * n as f64;
    }

    fn finish(self) -> BTreeMap<String, f64> {
        let n = self.count.max(1) as f64;
        self.sums.into_iter().map(|(k, v)| (k, v / n)).collect()
    }
}

fn ensure_finite(stage: u8, epoch: usize, batch: usize, values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::Diverged(format!("stage {stage}, epoch {epoch}, batch {batch}: {name} = {v}")));
        }
    }
    Ok(())
}

fn ids_of(store: &ParamStore<f32>, prefixes: &[&str]) -> Vec<ParamId> {
    prefixes.iter().flat_map(|p| store.ids_with_prefix(p)).collect()
}

fn stack(parts: &[&NdArray<f32>]) -> Result<NdArray<f32>> {
    let first = parts.first().ok_or_else(|| Error::Empty("empty batch".into()))?;
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        if p.shape()[1..] != first.shape()[1..] {
            return Err(Error::Shape(format!("cannot stack {:?} with {:?}", p.shape(), first.shape())));
        }
        data.extend_from_slice(p.data());
    }
    NdArray::from_vec(&shape, data)
}

fn epoch_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Adversarial autoencoder training with the constrained deformer attached.
///
/// Per batch the discriminator is updated first against detached
/// reconstructions, then autoencoder and constrained head are updated on
/// `recon_loss + morph_loss(beta_constrained)` with the discriminator held
/// fixed.
pub fn train_stage1(cfg: &TrainConfig, volumes: &[Volume]) -> Result<(Checkpoint, LossLog)> {
    train_stage1_with(cfg, volumes, &mut |_, _, _| {})
}

pub fn train_stage1_with(cfg: &TrainConfig, volumes: &[Volume], progress: Progress) -> Result<(Checkpoint, LossLog)> {
    let mut ck = Checkpoint::fresh(cfg)?;
    let arch = ck.model.arch.clone();
    check_inputs(&arch, volumes)?;
    let loss_cfg = cfg.loss(cfg.beta_constrained);
    let params = &mut ck.model.params;
    let disc_ids = ids_of(params, &[DISC_PREFIX]);
    let gen_ids = ids_of(params, &[AE_PREFIX, HeadKind::Constrained.prefix()]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_0001);
    let mut log = LossLog::default();

    for epoch in 0..cfg.stage1_epochs {
        let mut means = EpochMeans::default();
        for (bi, chunk) in epoch_order(&mut rng, volumes.len()).chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Volume> = chunk.iter().map(|&i| &volumes[i]).collect();
            let xb = batch_array(&batch)?;
            let n = batch.len();

            // discriminator step on detached reconstructions
            let mut g = Graph::new();
            let x = g.constant(xb.clone());
            let d_loss = {
                let frozen = Binder::frozen(params);
                let train = Binder::trainable(params);
                let ae = autoencode(&arch, &frozen, &mut g, x)?;
                let real = discriminate(&arch, &train, &mut g, x)?;
                let fake = discriminate(&arch, &train, &mut g, ae.recon)?;
                discriminator_adv(&mut g, real, fake)?
            };
            ensure_finite(1, epoch, bi, &[("discriminator", scalar(&g, d_loss))])?;
            g.backward(d_loss, params)?;
            ck.opt_disc.step(params, &disc_ids)?;
            params.zero_grad();
            means.add("discriminator", scalar(&g, d_loss), n);

            // generator + constrained deformer step, discriminator fixed
            let mut g = Graph::new();
            let x = g.constant(xb);
            let (ae, field, fake) = {
                let frozen = Binder::frozen(params);
                let train = Binder::trainable(params);
                let ae = autoencode(&arch, &train, &mut g, x)?;
                let field = estimate_deformation(&arch, &train, &mut g, HeadKind::Constrained, ae.features, ae.recon, x)?;
                let fake = discriminate(&arch, &frozen, &mut g, ae.recon)?;
                (ae, field, fake)
            };
            let morphed = g.warp(ae.recon, field)?;
            let mse = mse_loss(&mut g, x, ae.recon)?;
            let adv = generator_adv(&mut g, fake)?;
            let weighted_adv = g.scale(adv, loss_cfg.gamma)?;
            let recon = g.add(mse, weighted_adv)?;
            let cc = lncc(&mut g, x, morphed, &loss_cfg)?;
            let pen = deformation_penalty(&mut g, field, 1.0)?;
            let morph = morph_loss(&mut g, x, morphed, field, &loss_cfg)?;
            let total = g.add(recon, morph)?;
            let values = [
                ("mse", scalar(&g, mse)),
                ("generator_adv", scalar(&g, adv)),
                ("recon", scalar(&g, recon)),
                ("lncc", scalar(&g, cc)),
                ("mean_sq_displacement", scalar(&g, pen)),
                ("morph", scalar(&g, morph)),
                ("total", scalar(&g, total)),
            ];
            ensure_finite(1, epoch, bi, &values)?;
            g.backward(total, params)?;
            ck.opt_other.step(params, &gen_ids)?;
            params.zero_grad();
            for (name, v) in values {
                means.add(name, v, n);
            }
            means.count += n;
        }
        let means = means.finish();
        for (name, v) in &means {
            log.push(epoch, 1, name, *v);
        }
        progress(1, epoch, &means);
    }
    ck.stage = 1;
    Ok((ck, log))
}

/// Frozen-autoencoder outputs of one volume.
struct Cached {
    x: NdArray<f32>,
    features: NdArray<f32>,
    recon: NdArray<f32>,
}

/// Deformer-only training: both heads learn `morph_loss` at their own
/// `beta` over the frozen autoencoder's outputs. Autoencoder and
/// discriminator weights are left bit-identical.
pub fn train_stage2(ck: Checkpoint, cfg: &TrainConfig, volumes: &[Volume]) -> Result<(Checkpoint, LossLog)> {
    train_stage2_with(ck, cfg, volumes, &mut |_, _, _| {})
}

pub fn train_stage2_with(mut ck: Checkpoint, cfg: &TrainConfig, volumes: &[Volume], progress: Progress) -> Result<(Checkpoint, LossLog)> {
    cfg.validate()?;
    if ck.stage < 1 {
        return Err(Error::Checkpoint("stage 2 needs a checkpoint that finished stage 1".into()));
    }
    let arch = ck.model.arch.clone();
    check_inputs(&arch, volumes)?;
    for head in HeadKind::ALL {
        if ck.model.params.ids_with_prefix(head.prefix()).is_empty() {
            return Err(Error::Checkpoint(format!("checkpoint has no '{}' deformer head", head.prefix())));
        }
    }
    let frozen_before = (ck.model.params.digest(AE_PREFIX), ck.model.params.digest(DISC_PREFIX));

    let cache: Vec<Cached> = volumes
        .iter()
        .map(|v| {
            let d = ck.model.reconstruct(v)?;
            Ok(Cached {
                x: v.to_array(),
                features: d.features,
                recon: d.recon.to_array(),
            })
        })
        .collect::<Result<_>>()?;

    let heads = [
        (HeadKind::Constrained, cfg.loss(cfg.beta_constrained), "constrained"),
        (HeadKind::Unconstrained, cfg.loss(cfg.beta_unconstrained), "unconstrained"),
    ];
    let params = &mut ck.model.params;
    let head_ids = ids_of(params, &[HeadKind::Constrained.prefix(), HeadKind::Unconstrained.prefix()]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_0002);
    let mut log = LossLog::default();

    for epoch in 0..cfg.stage2_epochs {
        let mut means = EpochMeans::default();
        for (bi, chunk) in epoch_order(&mut rng, cache.len()).chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Cached> = chunk.iter().map(|&i| &cache[i]).collect();
            let n = items.len();
            let mut g = Graph::new();
            let x = g.constant(stack(&items.iter().map(|c| &c.x).collect::<Vec<_>>())?);
            let feats = g.constant(stack(&items.iter().map(|c| &c.features).collect::<Vec<_>>())?);
            let recon = g.constant(stack(&items.iter().map(|c| &c.recon).collect::<Vec<_>>())?);
            let mut total = None;
            let mut values = Vec::new();
            for (head, loss_cfg, tag) in &heads {
                let field = {
                    let train = Binder::trainable(params);
                    estimate_deformation(&arch, &train, &mut g, *head, feats, recon, x)?
                };
                let morphed = g.warp(recon, field)?;
                let cc = lncc(&mut g, x, morphed, loss_cfg)?;
                let pen = deformation_penalty(&mut g, field, 1.0)?;
                let morph = morph_loss(&mut g, x, morphed, field, loss_cfg)?;
                values.push((format!("morph_{tag}"), scalar(&g, morph)));
                values.push((format!("lncc_{tag}"), scalar(&g, cc)));
                values.push((format!("mean_sq_displacement_{tag}"), scalar(&g, pen)));
                total = Some(match total {
                    None => morph,
                    Some(t) => g.add(t, morph)?,
                });
            }
            let total = total.expect("two heads");
            values.push(("total".into(), scalar(&g, total)));
            let named: Vec<(&str, f64)> = values.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            ensure_finite(2, epoch, bi, &named)?;
            g.backward(total, params)?;
            ck.opt_other.step(params, &head_ids)?;
            params.zero_grad();
            for (name, v) in named {
                means.add(name, v, n);
            }
            means.count += n;
        }
        let means = means.finish();
        for (name, v) in &means {
            log.push(epoch, 2, name, *v);
        }
        progress(2, epoch, &means);
    }

    let frozen_after = (ck.model.params.digest(AE_PREFIX), ck.model.params.digest(DISC_PREFIX));
    if frozen_before != frozen_after {
        return Err(Error::Checkpoint("frozen autoencoder or discriminator weights changed in stage 2".into()));
    }
    ck.stage = 2;
    Ok((ck, log))
}

/// Runs both stages with the config's schedule.
pub fn train_full(cfg: &TrainConfig, volumes: &[Volume], progress: Progress) -> Result<(Checkpoint, LossLog)> {
    let (ck, mut log) = train_stage1_with(cfg, volumes, progress)?;
    let (ck, log2) = train_stage2_with(ck, cfg, volumes, progress)?;
    log.extend(log2);
    Ok((ck, log))
}

/// Held-out reconstruction MSE of a model, averaged over volumes.
pub fn reconstruction_mse(model: &crate::networks::Model, volumes: &[Volume]) -> Result<f64> {
    if volumes.is_empty() {
        return Err(Error::Empty("no volumes to evaluate".into()));
    }
    let mut total = 0.0;
    for v in volumes {
        let r = model.reconstruct(v)?.recon;
        total += crate::metrics::mse(v, &r)?;
    }
    Ok(total / volumes.len() as f64)
}
