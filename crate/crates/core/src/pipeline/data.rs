use std::path::Path;

use crate::error::Result;
use crate::volume::{
    generate_phantom, load_mask, load_nifti, load_raw_volume, normalize_intensity, CohortManifest, ManifestEntry,
    PhantomSpec, RegionMask, Volume,
};

use super::TrainConfig;

/// Reads a `.nii` or raw+sidecar volume, normalizing it when configured.
pub fn load_volume(path: &Path, cfg: &TrainConfig) -> Result<Volume> {
    let v = match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => load_nifti(path)?,
        _ => load_raw_volume(path)?,
    };
    if cfg.normalize {
        normalize_intensity(&v, cfg.normalize_lo_pct, cfg.normalize_hi_pct)
    } else {
        Ok(v)
    }
}

/// A loaded manifest subject.
#[derive(Clone, Debug)]
pub struct Subject {
    pub entry: ManifestEntry,
    pub volume: Volume,
    pub mask: Option<RegionMask>,
}

pub fn load_subject(entry: &ManifestEntry, cfg: &TrainConfig) -> Result<Subject> {
    let volume = load_volume(&entry.volume, cfg)?;
    let mask = entry.mask.as_deref().map(load_mask).transpose()?;
    Ok(Subject {
        entry: entry.clone(),
        volume,
        mask,
    })
}

pub fn load_cohort(manifest: &CohortManifest, cfg: &TrainConfig) -> Result<Vec<Subject>> {
    manifest.entries.iter().map(|e| load_subject(e, cfg)).collect()
}

/// Seed of the `index`-th synthetic subject of a run seeded with `seed`.
pub fn phantom_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Healthy synthetic training set described by the config.
pub fn phantom_training_set(cfg: &TrainConfig) -> Result<Vec<Volume>> {
    (0..cfg.phantom_count)
        .map(|i| {
            let spec = PhantomSpec {
                variability: cfg.phantom_variability,
                ..PhantomSpec::healthy(phantom_seed(cfg.seed, i), cfg.phantom_grid)
            };
            Ok(generate_phantom(&spec)?.volume)
        })
        .collect()
}
