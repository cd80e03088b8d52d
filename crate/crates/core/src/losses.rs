//! Training objectives as graph nodes: reconstruction MSE, least-squares
//! adversarial terms, LNCC similarity and the displacement penalty.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Scalar, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the mean squared displacement penalty.
    pub beta: f64,
    /// Weight of the adversarial term in the reconstruction loss.
    pub gamma: f64,
    /// Odd LNCC window edge length.
    pub window: usize,
    /// Variance floor inside LNCC.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            gamma: 0.05,
            window: 9,
            eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("beta {} and gamma {} must be >= 0", self.beta, self.gamma)));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!("lncc window {} must be odd and >= 3", self.window)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("lncc eps {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

fn square<T: Scalar>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    g.mul(a, a)
}

pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let d = g.sub(x, y)?;
    let sq = square(g, d)?;
    g.mean(sq)
}

/// Mean LNCC over all voxels (not the loss; the loss term is `1 - lncc`).
pub fn lncc<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    g.lncc(x, y, cfg.window, cfg.eps)
}

/// `beta * mean_p |u(p)|^2` for a field `[N, 3, D, H, W]`.
pub fn deformation_penalty<T: Scalar>(g: &mut Graph<T>, field: Var, beta: f64) -> Result<Var> {
    let channels = *g
        .value(field)
        .shape()
        .get(1)
        .ok_or_else(|| Error::Shape("deformation penalty needs a [N, 3, D, H, W] field".into()))?;
    let sq = square(g, field)?;
    let m = g.mean(sq)?;
    // mean over all components times the component count = mean squared norm
    g.scale(m, beta * channels as f64)
}

/// `(1 - lncc(x, x_morph)) + beta * mean |u|^2`.
pub fn morph_loss<T: Scalar>(g: &mut Graph<T>, x: Var, x_morph: Var, field: Var, cfg: &LossConfig) -> Result<Var> {
    let cc = lncc(g, x, x_morph, cfg)?;
    let neg = g.scale(cc, -1.0)?;
    let dissim = g.add_scalar(neg, 1.0)?;
    let pen = deformation_penalty(g, field, cfg.beta)?;
    g.add(dissim, pen)
}

/// `mean((fake - 1)^2)`.
pub fn generator_adv<T: Scalar>(g: &mut Graph<T>, logits_fake: Var) -> Result<Var> {
    let d = g.add_scalar(logits_fake, -1.0)?;
    let sq = square(g, d)?;
    g.mean(sq)
}

/// `0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)`.
pub fn discriminator_adv<T: Scalar>(g: &mut Graph<T>, logits_real: Var, logits_fake: Var) -> Result<Var> {
    let real = generator_adv(g, logits_real)?;
    let fsq = square(g, logits_fake)?;
    let fake = g.mean(fsq)?;
    let both = g.add(real, fake)?;
    g.scale(both, 0.5)
}

/// `mse(x, x_recon) + gamma * generator_adv(fake)`.
pub fn recon_loss<T: Scalar>(g: &mut Graph<T>, x: Var, x_recon: Var, logits_fake: Var, cfg: &LossConfig) -> Result<Var> {
    let mse = mse_loss(g, x, x_recon)?;
    if cfg.gamma == 0.0 {
        return Ok(mse);
    }
    let adv = generator_adv(g, logits_fake)?;
    let weighted = g.scale(adv, cfg.gamma)?;
    g.add(mse, weighted)
}
