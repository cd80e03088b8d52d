//! Seeded synthetic "brain" phantoms with labelled subregions and an
//! optional atrophy-like contraction of one region with a known
//! ground-truth displacement field.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deformation::sampling::{warp_forward, warp_nearest};
use crate::error::{Error, Result};

use super::{linear_index, DeformationField, RegionMask, Volume};

/// Region names in label order (label = index + 1).
pub const REGION_NAMES: [&str; 5] = [
    "left_hippocampus",
    "right_hippocampus",
    "left_amygdala",
    "right_amygdala",
    "ventricle",
];

// Pull-field gain: u(p) = CONTRACTION_GAIN * severity * w(r) * (p - c).
const CONTRACTION_GAIN: f64 = 0.8;
// Fractional intensity loss at full severity in the contraction core.
const DARKENING: f64 = 0.35;
const EDGE_WIDTH: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub grid_size: usize,
    pub severity: f64,
    pub target_region: String,
    pub variability: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_size: 32,
            severity: 0.0,
            target_region: REGION_NAMES[0].to_string(),
            variability: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn healthy(seed: u64, grid_size: usize) -> Self {
        Self {
            seed,
            grid_size,
            ..Self::default()
        }
    }

    pub fn with_severity(mut self, severity: f64) -> Self {
        self.severity = severity;
        self
    }

    pub fn with_target(mut self, region: &str) -> Self {
        self.target_region = region.to_string();
        self
    }

    fn validate(&self) -> Result<u16> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::InvalidArgument(format!("severity {} outside [0, 1]", self.severity)));
        }
        if self.grid_size < 16 {
            return Err(Error::InvalidArgument(format!("grid size {} below 16", self.grid_size)));
        }
        if !(self.variability >= 0.0) {
            return Err(Error::InvalidArgument(format!("variability {} must be >= 0", self.variability)));
        }
        region_label(&self.target_region).ok_or_else(|| Error::UnknownRegion(self.target_region.clone()))
    }
}

/// Label of a region name; spaces and hyphens are accepted for underscores.
pub fn region_label(name: &str) -> Option<u16> {
    let canon = name.trim().to_lowercase().replace([' ', '-'], "_");
    REGION_NAMES.iter().position(|&n| n == canon).map(|i| i as u16 + 1)
}

pub fn region_legend() -> BTreeMap<u16, String> {
    REGION_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| (i as u16 + 1, n.to_string()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub mask: RegionMask,
    /// Ground-truth pull field that was applied (all zero at severity 0).
    pub field: DeformationField,
    pub target_label: u16,
    /// Voxels inside the support of the contraction weight (independent of
    /// severity).
    pub affected: Vec<bool>,
}

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
    intensity: f64,
}

impl Ellipsoid {
    /// Soft membership in (0, 1), 0.5 on the surface.
    fn membership(&self, p: [f64; 3]) -> f64 {
        let mut rho2 = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.semi[a];
            rho2 += d * d;
        }
        let mean_semi = (self.semi[0] + self.semi[1] + self.semi[2]) / 3.0;
        let signed = (rho2.sqrt() - 1.0) * mean_semi;
        1.0 / (1.0 + (signed / EDGE_WIDTH * 4.0).exp())
    }
}

fn jitter(rng: &mut ChaCha8Rng, amount: f64) -> f64 {
    if amount > 0.0 {
        rng.gen_range(-amount..=amount)
    } else {
        // keep the draw sequence independent of variability
        let _: f64 = rng.gen();
        0.0
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let target_label = spec.validate()?;
    let n = spec.grid_size;
    let shape = [n; 3];
    let half = n as f64 / 2.0;
    let mid = (n as f64 - 1.0) / 2.0;
    let var = spec.variability;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let scaled = |rel: [f64; 3], semi: [f64; 3], intensity: f64, rng: &mut ChaCha8Rng, pos_jit: f64, size_jit: f64| {
        let mut center = [0.0; 3];
        let mut s = [0.0; 3];
        for a in 0..3 {
            center[a] = mid + rel[a] * half + jitter(rng, pos_jit);
            s[a] = semi[a] * half * (1.0 + jitter(rng, size_jit));
        }
        Ellipsoid {
            center,
            semi: s,
            intensity: intensity + jitter(rng, 0.03 * var),
        }
    };

    let brain = scaled([0.0, 0.0, 0.0], [0.82, 0.86, 0.78], 0.55, &mut rng, 0.3 * var, 0.03 * var);
    let white = scaled([0.02, 0.0, 0.0], [0.5, 0.56, 0.48], 0.7, &mut rng, 0.3 * var, 0.05 * var);
    let mut regions = Vec::with_capacity(REGION_NAMES.len());
    // label order: left/right hippocampus, left/right amygdala, ventricle
    for side in [-1.0, 1.0] {
        regions.push(scaled([0.12, -0.14, 0.42 * side], [0.12, 0.22, 0.12], 0.92, &mut rng, var, 0.08 * var));
    }
    for side in [-1.0, 1.0] {
        regions.push(scaled([0.12, 0.22, 0.40 * side], [0.11, 0.11, 0.11], 0.82, &mut rng, var, 0.08 * var));
    }
    regions.push(scaled([-0.06, 0.0, 0.0], [0.14, 0.28, 0.09], 0.12, &mut rng, 0.5 * var, 0.08 * var));

    // low-frequency texture: a few random plane waves
    let waves: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let k = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            (k, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.004..0.008))
        })
        .collect();

    let vox = n * n * n;
    let mut data = vec![0.0f32; vox];
    let mut labels = vec![0u16; vox];
    // paint order: ventricle first so the bright structures sit on top
    let paint_order = [4usize, 2, 3, 0, 1];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [z as f64, y as f64, x as f64];
                let b = brain.membership(p);
                let mut v = brain.intensity;
                let wm = white.membership(p);
                v = v * (1.0 - wm) + white.intensity * wm;
                let mut label = 0u16;
                for &r in &paint_order {
                    let m = regions[r].membership(p);
                    v = v * (1.0 - m) + regions[r].intensity * m;
                    if m > 0.5 {
                        label = r as u16 + 1;
                    }
                }
                let t: f64 = waves
                    .iter()
                    .map(|(k, phase, amp)| amp * ((k[0] * p[0] + k[1] * p[1] + k[2] * p[2]) / half + phase).cos())
                    .sum();
                let noise = rng.gen_range(-0.01..=0.01);
                let idx = linear_index(shape, z, y, x);
                data[idx] = ((v + t + noise) * b).clamp(0.0, 1.0) as f32;
                labels[idx] = if b > 0.5 { label } else { 0 };
            }
        }
    }

    // the contraction weight follows the target's own ellipsoid: full
    // strength inside 0.9 of the surface, smooth falloff over a shell at
    // least two voxels thick along the shortest axis
    let target = &regions[target_label as usize - 1];
    let shortest = target.semi.iter().cloned().fold(f64::INFINITY, f64::min);
    let inner = 0.9;
    let outer = inner + 0.6f64.max(2.0 / shortest);
    let weight = |p: [f64; 3]| -> f64 {
        let rho = (0..3).map(|a| ((p[a] - target.center[a]) / target.semi[a]).powi(2)).sum::<f64>().sqrt();
        if rho <= inner {
            1.0
        } else if rho >= outer {
            0.0
        } else {
            let t = (rho - inner) / (outer - inner);
            1.0 - t * t * (3.0 - 2.0 * t)
        }
    };
    let mut affected = vec![false; vox];
    let mut gt = vec![0.0f32; 3 * vox];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [z as f64, y as f64, x as f64];
                let w = weight(p);
                let idx = linear_index(shape, z, y, x);
                affected[idx] = w > 0.0;
                if spec.severity > 0.0 {
                    for a in 0..3 {
                        gt[a * vox + idx] = (CONTRACTION_GAIN * spec.severity * w * (p[a] - target.center[a])) as f32;
                    }
                }
            }
        }
    }

    let legend = region_legend();
    if spec.severity > 0.0 {
        let mut warped = warp_forward(&data, &gt, shape, 1);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let idx = linear_index(shape, z, y, x);
                    let w = weight([z as f64, y as f64, x as f64]);
                    warped[idx] *= (1.0 - DARKENING * spec.severity * w) as f32;
                }
            }
        }
        data = warped;
        labels = warp_nearest(&labels, &gt, shape);
    }

    Ok(Phantom {
        volume: Volume::new(shape, data)?,
        mask: RegionMask::new(shape, labels, legend)?,
        field: DeformationField::new(shape, gt)?,
        target_label,
        affected,
    })
}
