//! Convolutional autoencoder, patch discriminator and deformer heads.
//!
//! All weights live in one [`ParamStore`] under dotted prefixes (`ae.`,
//! `disc.`, `deform_c.`, `deform_u.`). Forward passes record onto a caller's
//! [`Graph`] through a [`Binder`], which decides whether weights enter as
//! trainable parameters or as constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NdArray, ParamStore, Scalar, Var};
use crate::error::{Error, Result};
use crate::volume::{DeformationField, Volume};

pub const AE_PREFIX: &str = "ae.";
pub const DISC_PREFIX: &str = "disc.";

/// Layer layout. Serialized into checkpoints so inference never guesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Strided encoder blocks; inputs must be divisible by `2^levels`.
    pub levels: usize,
    /// Channels of the first encoder block, doubling per level.
    pub base_channels: usize,
    pub latent_channels: usize,
    /// Channels of the last (full-resolution) decoder block, doubling
    /// towards the bottleneck.
    pub decoder_channels: usize,
    pub slope: f64,
    pub disc_levels: usize,
    pub disc_channels: usize,
    /// Channels of the deformer's half-resolution trunk.
    pub deformer_hidden: usize,
    /// 3x3x3 convs in the half-resolution trunk.
    pub deformer_blocks: usize,
    /// Channels the trunk is upsampled to before the full-resolution output.
    pub deformer_up_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 16,
            latent_channels: 64,
            decoder_channels: 8,
            slope: 0.2,
            disc_levels: 3,
            disc_channels: 8,
            deformer_hidden: 16,
            deformer_blocks: 2,
            deformer_up_channels: 4,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.levels,
            self.base_channels,
            self.latent_channels,
            self.decoder_channels,
            self.disc_levels,
            self.disc_channels,
            self.deformer_hidden,
            self.deformer_up_channels,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        if self.disc_levels > self.levels {
            return Err(Error::Config("discriminator cannot be deeper than the encoder".into()));
        }
        if !(self.slope >= 0.0 && self.slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside [0, 1)", self.slope)));
        }
        Ok(())
    }

    /// Spatial factor every input extent must be divisible by.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn check_shape(&self, shape: [usize; 3]) -> Result<()> {
        let d = self.divisor();
        if shape.iter().any(|&s| s % d != 0 || s < d) {
            return Err(Error::ShapeNotDivisible(format!("{shape:?} by 2^{} = {d}", self.levels)));
        }
        Ok(())
    }

    fn decoder_width(&self, level: usize) -> usize {
        // level 0 is the full-resolution block
        self.decoder_channels << level
    }
}

/// Which deformer head: strong (`beta` high) or weak displacement penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Constrained,
    Unconstrained,
}

impl HeadKind {
    pub const ALL: [HeadKind; 2] = [HeadKind::Constrained, HeadKind::Unconstrained];

    pub fn prefix(self) -> &'static str {
        match self {
            HeadKind::Constrained => "deform_c.",
            HeadKind::Unconstrained => "deform_u.",
        }
    }
}

/// Resolves weight names to graph nodes.
pub struct Binder<'a, T: Scalar> {
    store: &'a ParamStore<T>,
    trainable: bool,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn trainable(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self { store, trainable: false }
    }

    fn get(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        Ok(if self.trainable {
            g.param(self.store, id)
        } else {
            g.constant(self.store.get(id).value.clone())
        })
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, name: &str, stride: usize, padding: usize) -> Result<Var> {
        let w = self.get(g, &format!("{name}.w"))?;
        let b = self.get(g, &format!("{name}.b"))?;
        g.conv3d(x, w, b, stride, padding)
    }

    fn conv_t(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let w = self.get(g, &format!("{name}.w"))?;
        let b = self.get(g, &format!("{name}.b"))?;
        g.conv3d_transpose(x, w, b, 2, 1)
    }
}

fn add_conv<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
    let bound = (1.0 / (c_in * k * k * k) as f64).sqrt();
    store.insert_uniform(&format!("{name}.w"), &[c_out, c_in, k, k, k], bound, rng)?;
    store.insert(&format!("{name}.b"), NdArray::zeros(&[c_out]))?;
    Ok(())
}

fn add_conv_t<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize) -> Result<()> {
    let bound = (1.0 / (c_in * 64) as f64).sqrt();
    // adjoint layout: [input channels, output channels, k, k, k]
    store.insert_uniform(&format!("{name}.w"), &[c_in, c_out, 4, 4, 4], bound, rng)?;
    store.insert(&format!("{name}.b"), NdArray::zeros(&[c_out]))?;
    Ok(())
}

/// Creates every parameter of the model, seeded.
pub fn init_params<T: Scalar>(arch: &ArchConfig, seed: u64) -> Result<ParamStore<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut c = 1;
    for i in 0..arch.levels {
        let out = arch.base_channels << i;
        add_conv(&mut store, &mut rng, &format!("ae.enc{i}"), c, out, 3)?;
        c = out;
    }
    add_conv(&mut store, &mut rng, "ae.bottleneck", c, arch.latent_channels, 3)?;
    c = arch.latent_channels;
    for i in (0..arch.levels).rev() {
        let out = arch.decoder_width(i);
        add_conv_t(&mut store, &mut rng, &format!("ae.dec{i}"), c, out)?;
        c = out;
    }
    add_conv(&mut store, &mut rng, "ae.out", c, 1, 3)?;

    let mut c = 1;
    for i in 0..arch.disc_levels {
        let out = arch.disc_channels << i;
        add_conv(&mut store, &mut rng, &format!("disc.c{i}"), c, out, 3)?;
        c = out;
    }
    add_conv(&mut store, &mut rng, "disc.logit", c, 1, 1)?;

    for head in HeadKind::ALL {
        let p = head.prefix();
        let c_in = arch.decoder_channels + 2;
        let hid = arch.deformer_hidden;
        add_conv(&mut store, &mut rng, &format!("{p}down"), c_in, hid, 3)?;
        for i in 0..arch.deformer_blocks {
            add_conv(&mut store, &mut rng, &format!("{p}block{i}"), hid, hid, 3)?;
        }
        add_conv_t(&mut store, &mut rng, &format!("{p}up"), hid, arch.deformer_up_channels)?;
        // zero-initialized output: the first emitted field is the identity
        store.insert(&format!("{p}out.w"), NdArray::zeros(&[3, arch.deformer_up_channels + c_in, 3, 3, 3]))?;
        store.insert(&format!("{p}out.b"), NdArray::zeros(&[3]))?;
    }
    Ok(store)
}

/// Graph nodes of one autoencoder pass.
#[derive(Clone, Copy, Debug)]
pub struct AeNodes {
    pub latent: Var,
    /// Last decoder feature map, full resolution, before the output conv.
    pub features: Var,
    pub recon: Var,
}

pub fn encode<T: Scalar>(arch: &ArchConfig, b: &Binder<T>, g: &mut Graph<T>, x: Var) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 5 || shape[1] != 1 {
        return Err(Error::Shape(format!("encoder expects [N, 1, D, H, W], got {shape:?}")));
    }
    arch.check_shape([shape[2], shape[3], shape[4]])?;
    let mut h = x;
    for i in 0..arch.levels {
        h = b.conv(g, h, &format!("ae.enc{i}"), 2, 1)?;
        h = g.leaky_relu(h, arch.slope)?;
    }
    b.conv(g, h, "ae.bottleneck", 1, 1)
}

/// Returns `(features, recon)`.
pub fn decode<T: Scalar>(arch: &ArchConfig, b: &Binder<T>, g: &mut Graph<T>, latent: Var) -> Result<(Var, Var)> {
    let mut h = latent;
    for i in (0..arch.levels).rev() {
        h = b.conv_t(g, h, &format!("ae.dec{i}"))?;
        h = g.leaky_relu(h, arch.slope)?;
    }
    let logits = b.conv(g, h, "ae.out", 1, 1)?;
    let recon = g.sigmoid(logits)?;
    Ok((h, recon))
}

pub fn autoencode<T: Scalar>(arch: &ArchConfig, b: &Binder<T>, g: &mut Graph<T>, x: Var) -> Result<AeNodes> {
    let latent = encode(arch, b, g, x)?;
    let (features, recon) = decode(arch, b, g, latent)?;
    Ok(AeNodes { latent, features, recon })
}

/// Patch logits, spatially `2^disc_levels` coarser than the input.
pub fn discriminate<T: Scalar>(arch: &ArchConfig, b: &Binder<T>, g: &mut Graph<T>, v: Var) -> Result<Var> {
    let mut h = v;
    for i in 0..arch.disc_levels {
        h = b.conv(g, h, &format!("disc.c{i}"), 2, 1)?;
        h = g.leaky_relu(h, arch.slope)?;
    }
    b.conv(g, h, "disc.logit", 1, 0)
}

/// Displacement field `[N, 3, D, H, W]` from decoder features, `x_recon`
/// and `x`.
///
/// A stride-2 conv and a few half-resolution convs widen the receptive field
/// enough to see displacements of a few voxels; the upsampled trunk is joined
/// with the full-resolution input before the output conv so sharp edges
/// survive.
pub fn estimate_deformation<T: Scalar>(
    arch: &ArchConfig,
    b: &Binder<T>,
    g: &mut Graph<T>,
    head: HeadKind,
    features: Var,
    recon: Var,
    x: Var,
) -> Result<Var> {
    let p = head.prefix();
    let input = g.concat_channels(&[features, recon, x])?;
    let h = b.conv(g, input, &format!("{p}down"), 2, 1)?;
    let mut h = g.leaky_relu(h, arch.slope)?;
    for i in 0..arch.deformer_blocks {
        h = b.conv(g, h, &format!("{p}block{i}"), 1, 1)?;
        h = g.leaky_relu(h, arch.slope)?;
    }
    let up = b.conv_t(g, h, &format!("{p}up"))?;
    let up = g.leaky_relu(up, arch.slope)?;
    let joined = g.concat_channels(&[up, input])?;
    b.conv(g, joined, &format!("{p}out"), 1, 1)
}

/// Latent grid of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub data: NdArray<f32>,
}

impl LatentCode {
    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[2], s[3], s[4]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchLogits {
    pub data: NdArray<f32>,
}

impl PatchLogits {
    pub fn spatial(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[2], s[3], s[4]]
    }

    pub fn mean(&self) -> f64 {
        self.data.sum_f64() / self.data.len() as f64
    }
}

/// Decoder output for one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub features: NdArray<f32>,
    pub recon: Volume,
}

/// Architecture plus weights, with single-volume inference helpers.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: ArchConfig,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let params = init_params(&arch, seed)?;
        Ok(Self { arch, params })
    }

    pub fn encode(&self, x: &Volume) -> Result<LatentCode> {
        let mut g = Graph::new();
        let b = Binder::frozen(&self.params);
        let xv = g.constant(x.to_array());
        let z = encode(&self.arch, &b, &mut g, xv)?;
        Ok(LatentCode { data: g.value(z).clone() })
    }

    pub fn decode(&self, z: &LatentCode) -> Result<Decoded> {
        let mut g = Graph::new();
        let b = Binder::frozen(&self.params);
        let zv = g.constant(z.data.clone());
        let (f, r) = decode(&self.arch, &b, &mut g, zv)?;
        Ok(Decoded {
            features: g.value(f).clone(),
            recon: Volume::from_array(g.value(r), 0, 0)?,
        })
    }

    pub fn reconstruct(&self, x: &Volume) -> Result<Decoded> {
        let d = self.decode(&self.encode(x)?)?;
        Ok(Decoded {
            recon: d.recon.with_spacing(x.spacing()),
            ..d
        })
    }

    pub fn estimate_deformation(&self, head: HeadKind, decoded: &Decoded, x: &Volume) -> Result<DeformationField> {
        if decoded.recon.shape() != x.shape() {
            return Err(Error::Shape(format!("recon {:?} vs input {:?}", decoded.recon.shape(), x.shape())));
        }
        let mut g = Graph::new();
        let b = Binder::frozen(&self.params);
        let f = g.constant(decoded.features.clone());
        let r = g.constant(decoded.recon.to_array());
        let xv = g.constant(x.to_array());
        let u = estimate_deformation(&self.arch, &b, &mut g, head, f, r, xv)?;
        DeformationField::from_array(g.value(u), 0)
    }

    pub fn discriminate(&self, v: &Volume) -> Result<PatchLogits> {
        let mut g = Graph::new();
        let b = Binder::frozen(&self.params);
        let xv = g.constant(v.to_array());
        let l = discriminate(&self.arch, &b, &mut g, xv)?;
        Ok(PatchLogits { data: g.value(l).clone() })
    }
}
