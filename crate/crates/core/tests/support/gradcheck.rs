//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance run.
//!
//! Analytic gradients come from an `f32` graph; the reference is a central
//! difference on an `f64` graph built by the same code, so the comparison
//! measures the f32 backward pass rather than f32 rounding in the probe.

use defae::autograd::{Graph, NdArray, ParamStore, Scalar, Var};
use defae::losses::{self, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 25;
pub const TOL: f64 = 1e-3;
pub const PROBES: usize = 24;
pub const STEP: f64 = 1e-5;

/// A scalar-valued function of a few tensors, generic over precision.
pub trait Case {
    fn name(&self) -> &'static str;
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>>;
    fn build<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Var;
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> NdArray<f64> {
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so kinks at 0 stay out of the stencil.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> NdArray<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() { m } else { -m }
        })
        .collect();
    NdArray::from_vec(shape, data).unwrap()
}

/// Random linear projection to a scalar so every output element matters.
pub fn project<T: Scalar>(g: &mut Graph<T>, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let r = uniform(&mut rng, &shape, -1.0, 1.0).cast::<T>();
    let r = g.constant(r);
    let prod = g.mul(out, r).unwrap();
    g.sum(prod).unwrap()
}

pub fn eval_f64<C: Case>(case: &C, inputs: &[NdArray<f64>]) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.constant(a.clone())).collect();
    let out = case.build(&mut g, &vars);
    g.value(out).item()
}

/// Worst norm-wise relative error over inputs for one seed.
pub fn check_seed<C: Case>(case: &C, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = case.inputs(&mut rng);

    let mut g = Graph::<f32>::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.input(a.cast::<f32>(), true)).collect();
    let out = case.build(&mut g, &vars);
    let mut store = ParamStore::new();
    let grads = g.backward(out, &mut store).unwrap();

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("input gradient");
        let n = inputs[k].len();
        let probes: Vec<usize> = if n <= PROBES { (0..n).collect() } else { (0..PROBES).map(|_| rng.gen_range(0..n)).collect() };
        let (mut diff, mut norm) = (0.0, 0.0);
        for &i in &probes {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval_f64(case, &plus) - eval_f64(case, &minus)) / (2.0 * STEP);
            let a = analytic.data()[i] as f64;
            diff += (a - numeric) * (a - numeric);
            norm += numeric * numeric;
        }
        // absolute floor for inputs whose gradient is legitimately ~0
        let rel = diff.sqrt() / norm.sqrt().max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Worst error over all seeds.
pub fn worst<C: Case>(case: &C) -> f64 {
    (0..SEEDS).map(|seed| check_seed(case, seed)).fold(0.0, f64::max)
}

pub fn check<C: Case>(case: C) {
    for seed in 0..SEEDS {
        let e = check_seed(&case, seed);
        assert!(e < TOL, "{}: seed {seed} relative error {e:.2e}", case.name());
    }
}

pub struct Conv {
    pub c_out: usize,
    pub stride: usize,
}

impl Case for Conv {
    fn name(&self) -> &'static str {
        "conv3d"
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        vec![
            uniform(rng, &[2, 2, 5, 6, 5], -1.0, 1.0),
            uniform(rng, &[self.c_out, 2, 3, 3, 3], -0.5, 0.5),
            uniform(rng, &[self.c_out], -0.5, 0.5),
        ]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let y = g.conv3d(v[0], v[1], v[2], self.stride, 1).unwrap();
        project(g, y, 1)
    }
}

pub struct ConvT;

impl Case for ConvT {
    fn name(&self) -> &'static str {
        "conv3d_transpose"
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        vec![
            uniform(rng, &[2, 3, 3, 2, 3], -1.0, 1.0),
            uniform(rng, &[3, 2, 4, 4, 4], -0.5, 0.5),
            uniform(rng, &[2], -0.5, 0.5),
        ]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let y = g.conv3d_transpose(v[0], v[1], v[2], 2, 1).unwrap();
        project(g, y, 2)
    }
}

#[derive(Clone, Copy)]
pub enum Act {
    LeakyRelu,
    Sigmoid,
    Abs,
}

impl Case for Act {
    fn name(&self) -> &'static str {
        match self {
            Act::LeakyRelu => "leaky_relu",
            Act::Sigmoid => "sigmoid",
            Act::Abs => "abs",
        }
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        vec![away_from_zero(rng, &[1, 2, 3, 4, 5])]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let y = match self {
            Act::LeakyRelu => g.leaky_relu(v[0], 0.2).unwrap(),
            Act::Sigmoid => g.sigmoid(v[0]).unwrap(),
            Act::Abs => g.abs(v[0]).unwrap(),
        };
        project(g, y, 3)
    }
}

pub struct Elementwise;

impl Case for Elementwise {
    fn name(&self) -> &'static str {
        "add/sub/mul/scale/concat/mean_over_window"
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        vec![uniform(rng, &[1, 1, 5, 5, 5], -1.0, 1.0), uniform(rng, &[1, 1, 5, 5, 5], -1.0, 1.0)]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let s = g.add(v[0], v[1]).unwrap();
        let d = g.sub(v[0], v[1]).unwrap();
        let p = g.mul(s, d).unwrap();
        let p = g.scale(p, 0.7).unwrap();
        let p = g.add_scalar(p, 0.3).unwrap();
        let c = g.concat_channels(&[p, v[1]]).unwrap();
        let m = g.mean_over_window(c, 3).unwrap();
        project(g, m, 4)
    }
}

/// Fields whose sample points keep their fractional parts in [0.15, 0.85]
/// and stay inside the grid, so the stencil never crosses a trilinear cell
/// boundary or the clamp.
pub fn jittered_field(rng: &mut ChaCha8Rng, n: usize, dims: [usize; 3]) -> NdArray<f64> {
    let vox: usize = dims.iter().product();
    let mut data = vec![0.0; n * 3 * vox];
    for s in 0..n {
        for a in 0..3 {
            for z in 0..dims[0] {
                for y in 0..dims[1] {
                    for x in 0..dims[2] {
                        let pos = [z, y, x][a] as f64;
                        let lo = 0.0_f64.max(pos - 1.5).floor();
                        let hi = (dims[a] as f64 - 2.0).min(pos + 1.5).floor();
                        let cell = rng.gen_range(lo as i64..=hi as i64) as f64;
                        let target = cell + rng.gen_range(0.15..0.85);
                        let idx = ((s * 3 + a) * dims[0] + z) * dims[1] * dims[2] + y * dims[2] + x;
                        data[idx] = target - pos;
                    }
                }
            }
        }
    }
    NdArray::from_vec(&[n, 3, dims[0], dims[1], dims[2]], data).unwrap()
}

pub struct Warp;

impl Case for Warp {
    fn name(&self) -> &'static str {
        "warp"
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        let dims = [5, 6, 4];
        vec![uniform(rng, &[2, 2, 5, 6, 4], 0.0, 1.0), jittered_field(rng, 2, dims)]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let y = g.warp(v[0], v[1]).unwrap();
        project(g, y, 5)
    }
}

pub struct Lncc {
    pub window: usize,
}

impl Case for Lncc {
    fn name(&self) -> &'static str {
        "lncc"
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        let x = uniform(rng, &[1, 1, 6, 7, 6], 0.0, 1.0);
        // partially correlated so the value is away from both extremes
        let noise = uniform(rng, &[1, 1, 6, 7, 6], 0.0, 1.0);
        let data = x.data().iter().zip(noise.data()).map(|(a, b)| 0.6 * a + 0.4 * b).collect();
        vec![x.clone(), NdArray::from_vec(x.shape(), data).unwrap()]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        g.lncc(v[0], v[1], self.window, 1e-5).unwrap()
    }
}

#[derive(Clone, Copy)]
pub enum Loss {
    Mse,
    Morph,
    Generator,
    Discriminator,
    Recon,
}

impl Case for Loss {
    fn name(&self) -> &'static str {
        match self {
            Loss::Mse => "mse_loss",
            Loss::Morph => "morph_loss",
            Loss::Generator => "generator_adv",
            Loss::Discriminator => "discriminator_adv",
            Loss::Recon => "recon_loss",
        }
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        let vol = [1, 1, 6, 6, 6];
        match self {
            Loss::Mse => vec![uniform(rng, &vol, 0.0, 1.0), uniform(rng, &vol, 0.0, 1.0)],
            Loss::Morph => vec![
                uniform(rng, &vol, 0.0, 1.0),
                uniform(rng, &vol, 0.0, 1.0),
                uniform(rng, &[1, 3, 6, 6, 6], -1.0, 1.0),
            ],
            Loss::Generator => vec![uniform(rng, &[2, 1, 2, 2, 2], -1.0, 2.0)],
            Loss::Discriminator => vec![uniform(rng, &[2, 1, 2, 2, 2], -1.0, 2.0), uniform(rng, &[2, 1, 2, 2, 2], -1.0, 2.0)],
            Loss::Recon => vec![
                uniform(rng, &vol, 0.0, 1.0),
                uniform(rng, &vol, 0.0, 1.0),
                uniform(rng, &[1, 1, 2, 2, 2], -1.0, 2.0),
            ],
        }
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let cfg = LossConfig {
            window: 3,
            ..LossConfig::default()
        };
        match self {
            Loss::Mse => losses::mse_loss(g, v[0], v[1]).unwrap(),
            Loss::Morph => losses::morph_loss(g, v[0], v[1], v[2], &cfg.with_beta(0.5)).unwrap(),
            Loss::Generator => losses::generator_adv(g, v[0]).unwrap(),
            Loss::Discriminator => losses::discriminator_adv(g, v[0], v[1]).unwrap(),
            Loss::Recon => losses::recon_loss(g, v[0], v[1], v[2], &cfg).unwrap(),
        }
    }
}

/// `a` feeds two branches that meet again: gradients must sum over paths.
pub struct Diamond;

impl Case for Diamond {
    fn name(&self) -> &'static str {
        "diamond"
    }
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<NdArray<f64>> {
        vec![away_from_zero(rng, &[1, 1, 4, 4, 4])]
    }
    fn build<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Var {
        let left = g.sigmoid(v[0]).unwrap();
        let right = g.leaky_relu(v[0], 0.1).unwrap();
        let joined = g.mul(left, right).unwrap();
        let again = g.add(joined, v[0]).unwrap();
        project(g, again, 6)
    }
}


/// Runs every case and reports `(name, worst error)`.
pub fn suite() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut run = |label: String, e: f64| out.push((label, e));
    for (c_out, stride) in [(3, 1), (6, 1), (3, 2)] {
        run(format!("conv3d c_out={c_out} stride={stride}"), worst(&Conv { c_out, stride }));
    }
    run("conv3d_transpose".into(), worst(&ConvT));
    for act in [Act::LeakyRelu, Act::Sigmoid, Act::Abs] {
        run(act.name().into(), worst(&act));
    }
    run(Elementwise.name().into(), worst(&Elementwise));
    run("warp".into(), worst(&Warp));
    for window in [3, 5] {
        run(format!("lncc window={window}"), worst(&Lncc { window }));
    }
    for loss in [Loss::Mse, Loss::Morph, Loss::Generator, Loss::Discriminator, Loss::Recon] {
        run(loss.name().into(), worst(&loss));
    }
    run("diamond".into(), worst(&Diamond));
    out
}
