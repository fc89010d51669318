//! 1D regression experiment: a GP-sampled curve, a one-hidden-layer main
//! network, and six ways of attaching an uncertainty to its predictions.
//!
//! The side learner (`slurp_*`) sees the main network's hidden activations
//! and its prediction. In sequential mode it is fitted afterwards to the
//! squashed absolute error of the frozen main network; in joint mode it
//! produces the log-variance of a Gaussian likelihood and is trained together
//! with the main network.

use nalgebra::{DMatrix, DVector};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelSeries;
use crate::loss::{scale_target, unscale_target, LossKind};
use crate::nn::{
    batch_loss, Activation, ForwardPass, Gradients, Mlp, Mode, Optimizer, OptimizerKind, ParamGroup,
    TrainConfig,
};
use crate::sparsify::{
    auroc, sparsify, ErrorStatistic, ReliabilityLabels, SparsificationConfig,
};

pub const TRAIN_SIZE: usize = 875;
pub const VALID_SIZE: usize = 175;
pub const TEST_SIZE: usize = 400;
pub const TRAIN_RANGE: (f64, f64) = (-7.0, 7.0);
pub const TEST_RANGE: (f64, f64) = (-10.0, 10.0);

/// Parameters of the synthetic curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub lengthscale: f64,
    pub signal_std: f64,
    pub noise_std: f64,
    /// Points of the dense grid the GP is sampled on.
    pub grid_points: usize,
    /// Diagonal jitter for the Cholesky factorisation.
    pub jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            signal_std: 1.0,
            noise_std: 0.1,
            grid_points: 801,
            jitter: 1e-6,
        }
    }
}

/// Noiseless curve on a dense grid, linearly interpolated in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
}

impl GroundTruth {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid_x.len();
        let (x0, x1) = (self.grid_x[0], self.grid_x[n - 1]);
        let t = ((x - x0) / (x1 - x0) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        let a = t - i as f64;
        self.grid_y[i] * (1.0 - a) + self.grid_y[i + 1] * a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub kernel: String,
    /// How the train/validation split was drawn.
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub valid_x: Vec<f64>,
    pub valid_y: Vec<f64>,
    /// Drawn uniformly; kept in draw order.
    pub test_x: Vec<f64>,
    /// Noiseless targets.
    pub test_y: Vec<f64>,
    pub truth: GroundTruth,
    pub meta: DatasetMeta,
}

/// Mixes a base seed with a stream label and index into an independent seed.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finaliser
    let mut z = base ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_dataset(seed: u64) -> Result<ToyDataset> {
    generate_dataset_with(seed, &GeneratorConfig::default())
}

/// Samples one GP function on a dense grid over the test range, then draws
/// 1050 evenly spaced inputs on the training range (every 6th to validation)
/// and 400 uniform test inputs.
pub fn generate_dataset_with(seed: u64, gen: &GeneratorConfig) -> Result<ToyDataset> {
    if gen.grid_points < 2 || !(gen.lengthscale > 0.0) || !(gen.signal_std > 0.0) || gen.noise_std < 0.0 {
        return Err(Error::InvalidArgument(format!("bad generator config {gen:?}")));
    }
    let g = gen.grid_points;
    let (lo, hi) = TEST_RANGE;
    let grid_x: Vec<f64> = (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect();
    let var = gen.signal_std * gen.signal_std;
    let two_l2 = 2.0 * gen.lengthscale * gen.lengthscale;
    let k = DMatrix::from_fn(g, g, |i, j| {
        let d = grid_x[i] - grid_x[j];
        var * (-d * d / two_l2).exp() + if i == j { gen.jitter } else { 0.0 }
    });
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("GP covariance is not positive definite; raise jitter".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gp", 0));
    let z = DVector::from_fn(g, |_, _| normal(&mut rng));
    let grid_y: Vec<f64> = (chol.l() * z).iter().copied().collect();
    let truth = GroundTruth { grid_x, grid_y };

    let total = TRAIN_SIZE + VALID_SIZE;
    let (a, b) = TRAIN_RANGE;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "noise", 0));
    let mut ds = ToyDataset {
        train_x: Vec::with_capacity(TRAIN_SIZE),
        train_y: Vec::with_capacity(TRAIN_SIZE),
        valid_x: Vec::with_capacity(VALID_SIZE),
        valid_y: Vec::with_capacity(VALID_SIZE),
        test_x: Vec::with_capacity(TEST_SIZE),
        test_y: Vec::with_capacity(TEST_SIZE),
        truth,
        meta: DatasetMeta {
            seed,
            generator: *gen,
            kernel: format!(
                "rbf(lengthscale={}, signal_std={})",
                gen.lengthscale, gen.signal_std
            ),
            split: "1050 evenly spaced points on [-7, 7]; every 6th to validation".into(),
        },
    };
    for i in 0..total {
        let x = a + (b - a) * i as f64 / (total - 1) as f64;
        let y = ds.truth.eval(x) + gen.noise_std * normal(&mut noise_rng);
        if i % 6 == 5 {
            ds.valid_x.push(x);
            ds.valid_y.push(y);
        } else {
            ds.train_x.push(x);
            ds.train_y.push(y);
        }
    }
    let mut test_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "test", 0));
    for _ in 0..TEST_SIZE {
        let x = test_rng.random_range(lo..hi);
        ds.test_x.push(x);
        ds.test_y.push(ds.truth.eval(x));
    }
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    McDropout,
    EmpiricalEnsemble,
    SinglePu,
    DeepEnsemble,
    SlurpSequential,
    SlurpJoint,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::McDropout,
        EstimatorKind::EmpiricalEnsemble,
        EstimatorKind::SinglePu,
        EstimatorKind::DeepEnsemble,
        EstimatorKind::SlurpSequential,
        EstimatorKind::SlurpJoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::McDropout => "mc_dropout",
            EstimatorKind::EmpiricalEnsemble => "empirical_ensemble",
            EstimatorKind::SinglePu => "single_pu",
            EstimatorKind::DeepEnsemble => "deep_ensemble",
            EstimatorKind::SlurpSequential => "slurp_sequential",
            EstimatorKind::SlurpJoint => "slurp_joint",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::McDropout => "MC-Dropout",
            EstimatorKind::EmpiricalEnsemble => "Empirical ensemble",
            EstimatorKind::SinglePu => "Single-PU",
            EstimatorKind::DeepEnsemble => "Deep ensemble",
            EstimatorKind::SlurpSequential => "SLURP sequential",
            EstimatorKind::SlurpJoint => "SLURP joint",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method `{name}` (expected one of {})",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// Learning rate / weight decay of every parameter group in the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyGroups {
    /// Main network of MC-Dropout, the empirical ensemble and SLURP
    /// sequential's frozen predictor.
    pub main: ParamGroup,
    /// Dual-output network of Single-PU / deep ensemble members.
    pub dual: ParamGroup,
    pub joint_main: ParamGroup,
    pub joint_extractor: ParamGroup,
    pub joint_blocks: ParamGroup,
    pub sequential_extractor: ParamGroup,
    pub sequential_blocks: ParamGroup,
}

impl Default for ToyGroups {
    fn default() -> Self {
        Self {
            main: ParamGroup::new(1e-3, 1e-2),
            dual: ParamGroup::new(5e-4, 1e-2),
            joint_main: ParamGroup::new(1e-3, 1e-2),
            joint_extractor: ParamGroup::new(1e-3, 1e-2),
            joint_blocks: ParamGroup::new(1e-4, 1e-3),
            sequential_extractor: ParamGroup::new(3e-4, 1e-3),
            sequential_blocks: ParamGroup::new(3e-4, 1e-2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub hidden_units: usize,
    /// Widths of the side learner's context block.
    pub context_widths: Vec<usize>,
    pub ensemble_size: usize,
    pub mc_passes: usize,
    pub dropout: f64,
    /// Inputs are multiplied by this before entering any network.
    pub input_scale: f64,
    pub optimizer: OptimizerKind,
    pub groups: ToyGroups,
    /// Scaled target assigned to the 95th percentile of training errors.
    pub slurp_target_at_p95: f64,
    pub methods: Vec<EstimatorKind>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: TrainConfig::default(),
            hidden_units: 3000,
            context_widths: vec![128, 64, 16],
            ensemble_size: 3,
            mc_passes: 8,
            dropout: 0.4,
            input_scale: 0.1,
            optimizer: OptimizerKind::Adam,
            groups: ToyGroups::default(),
            slurp_target_at_p95: 0.9,
            methods: EstimatorKind::ALL.to_vec(),
        }
    }
}

impl ToyConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.hidden_units == 0 || self.context_widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if self.ensemble_size == 0 || self.mc_passes == 0 {
            return Err(Error::InvalidArgument(
                "ensemble size and MC passes must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.slurp_target_at_p95 > 0.0 && self.slurp_target_at_p95 < 1.0) {
            return Err(Error::InvalidArgument("slurp_target_at_p95 must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub mean: f64,
    /// Predictive standard deviation.
    pub sigma: f64,
}

/// One estimate per test point, in test order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub kind: EstimatorKind,
    pub points: Vec<UncertaintyEstimate>,
}

impl Estimates {
    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sigma).collect()
    }
}

fn column(xs: &[f64], scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((xs.len(), 1), |(i, _)| xs[i] * scale)
}

fn gather(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

/// Shuffled minibatches for every epoch; `step` gets the sample indices.
fn for_each_batch(
    n: usize,
    train: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&[usize], &mut ChaCha8Rng) -> Result<()>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..train.epochs {
        order.shuffle(rng);
        for batch in order.chunks(train.batch_size) {
            step(batch, rng)?;
        }
    }
    Ok(())
}

fn fit_single(
    ds: &ToyDataset,
    cfg: &ToyConfig,
    sizes: &[usize],
    dropout: f64,
    loss: LossKind,
    group: &ParamGroup,
    seed: u64,
) -> Result<Mlp> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(sizes, Activation::Relu, Activation::Identity, dropout, &mut rng)?;
    let mut opt = Optimizer::new(cfg.optimizer);
    let x = column(&ds.train_x, cfg.input_scale);
    for_each_batch(ds.train_x.len(), &cfg.train, &mut rng, |batch, rng| {
        let xb = x.select(Axis(0), batch);
        let pass = net.forward(xb.view(), Mode::Train, rng);
        let (_, g) = batch_loss(loss, pass.output.view(), &gather(&ds.train_y, batch))?;
        let (grads, _) = net.backward(&pass, g.view());
        opt.step(&mut net, &grads, group);
        Ok(())
    })?;
    Ok(net)
}

fn main_seed(cfg: &ToyConfig, member: usize) -> u64 {
    derive_seed(cfg.train.seed, "main", member as u64)
}

fn dual_seed(cfg: &ToyConfig, member: usize) -> u64 {
    derive_seed(cfg.train.seed, "dual", member as u64)
}

/// Ensemble member `member` of the plain main-task network (member 0 is the
/// main network itself).
pub fn train_main_member(ds: &ToyDataset, cfg: &ToyConfig, member: usize) -> Result<Mlp> {
    fit_single(
        ds,
        cfg,
        &[1, cfg.hidden_units, 1],
        0.0,
        LossKind::MseRaw,
        &cfg.groups.main,
        main_seed(cfg, member),
    )
}

/// `1 → hidden → 1` ReLU network fitted with MSE.
pub fn train_main(ds: &ToyDataset, cfg: &ToyConfig) -> Result<Mlp> {
    train_main_member(ds, cfg, 0)
}

fn predict_scalar(net: &Mlp, xs: &[f64], scale: f64) -> Vec<f64> {
    net.predict(column(xs, scale).view()).column(0).to_vec()
}

/// Mean and population standard deviation, shifted by the first sample so
/// that identical samples give exactly zero spread.
fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let shift = samples[0];
    let offset = samples.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / n;
    (shift + offset, var.sqrt())
}

/// MC-Dropout outcome, keeping every stochastic pass for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct McDropoutRun {
    pub estimates: Estimates,
    /// `passes × test points`
    pub passes: Array2<f64>,
}

/// Main network trained with dropout, which stays active for `mc_passes`
/// forward passes at test time. `sigma` is the population standard
/// deviation over the passes.
pub fn run_mc_dropout(ds: &ToyDataset, cfg: &ToyConfig) -> Result<McDropoutRun> {
    let seed = derive_seed(cfg.train.seed, "mc_dropout", 0);
    let net = fit_single(
        ds,
        cfg,
        &[1, cfg.hidden_units, 1],
        cfg.dropout,
        LossKind::MseRaw,
        &cfg.groups.main,
        seed,
    )?;
    mc_dropout_passes(&net, ds, cfg, derive_seed(seed, "mc_passes", 0))
}

pub fn mc_dropout_passes(net: &Mlp, ds: &ToyDataset, cfg: &ToyConfig, seed: u64) -> Result<McDropoutRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = column(&ds.test_x, cfg.input_scale);
    let n = ds.test_x.len();
    let mut passes = Array2::zeros((cfg.mc_passes, n));
    for t in 0..cfg.mc_passes {
        let out = net.forward(x.view(), Mode::Train, &mut rng).output;
        passes.row_mut(t).assign(&out.column(0));
    }
    let points = (0..n)
        .map(|i| {
            let (mean, sigma) = mean_std(&passes.column(i).to_vec());
            UncertaintyEstimate { mean, sigma }
        })
        .collect();
    Ok(McDropoutRun {
        estimates: Estimates {
            kind: EstimatorKind::McDropout,
            points,
        },
        passes,
    })
}

fn spread_estimates(kind: EstimatorKind, member_preds: &[Vec<f64>]) -> Estimates {
    let n = member_preds[0].len();
    let points = (0..n)
        .map(|i| {
            let samples: Vec<f64> = member_preds.iter().map(|p| p[i]).collect();
            let (mean, sigma) = mean_std(&samples);
            UncertaintyEstimate { mean, sigma }
        })
        .collect();
    Estimates { kind, points }
}

/// Spread across `ensemble_size` independently seeded main networks.
pub fn run_empirical_ensemble(ds: &ToyDataset, cfg: &ToyConfig) -> Result<Estimates> {
    let preds = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|m| Ok(predict_scalar(&train_main_member(ds, cfg, m)?, &ds.test_x, cfg.input_scale)))
        .collect::<Result<Vec<_>>>()?;
    Ok(spread_estimates(EstimatorKind::EmpiricalEnsemble, &preds))
}

/// Dual-output `(mu, log_var)` network fitted with the Gaussian NLL.
pub fn train_dual_member(ds: &ToyDataset, cfg: &ToyConfig, member: usize) -> Result<Mlp> {
    fit_single(
        ds,
        cfg,
        &[1, cfg.hidden_units, 2],
        0.0,
        LossKind::GaussianNll,
        &cfg.groups.dual,
        dual_seed(cfg, member),
    )
}

fn dual_predictions(net: &Mlp, xs: &[f64], scale: f64) -> Vec<(f64, f64)> {
    let out = net.predict(column(xs, scale).view());
    out.rows().into_iter().map(|r| (r[0], r[1].exp())).collect()
}

pub fn run_single_pu(ds: &ToyDataset, cfg: &ToyConfig) -> Result<Estimates> {
    let net = train_dual_member(ds, cfg, 0)?;
    let points = dual_predictions(&net, &ds.test_x, cfg.input_scale)
        .into_iter()
        .map(|(mean, var)| UncertaintyEstimate {
            mean,
            sigma: var.sqrt(),
        })
        .collect();
    Ok(Estimates {
        kind: EstimatorKind::SinglePu,
        points,
    })
}

/// Uniform mixture of the members' Gaussians: mean of means, and
/// `mean(var_i + mu_i^2) - mean^2` as variance (evaluated as
/// `mean(var_i) + mean((mu_i - mean)^2)`).
pub fn run_deep_ensemble(ds: &ToyDataset, cfg: &ToyConfig) -> Result<Estimates> {
    let members = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|m| Ok(dual_predictions(&train_dual_member(ds, cfg, m)?, &ds.test_x, cfg.input_scale)))
        .collect::<Result<Vec<_>>>()?;
    let k = members.len() as f64;
    let points = (0..ds.test_x.len())
        .map(|i| {
            let mean = members.iter().map(|m| m[i].0).sum::<f64>() / k;
            let var = members.iter().map(|m| m[i].1 + (m[i].0 - mean).powi(2)).sum::<f64>() / k;
            UncertaintyEstimate {
                mean,
                sigma: var.sqrt(),
            }
        })
        .collect();
    Ok(Estimates {
        kind: EstimatorKind::DeepEnsemble,
        points,
    })
}

/// Side learner: a prediction-feature extractor (`1 → hidden`, ReLU) whose
/// output is concatenated with the main network's hidden activations and fed
/// to a context block ending in one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct SideLearner {
    pub extractor: Mlp,
    pub context: Mlp,
}

struct SidePass {
    extractor: ForwardPass,
    context: ForwardPass,
}

impl SideLearner {
    pub fn new(cfg: &ToyConfig, output: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        let extractor = Mlp::new(&[1, cfg.hidden_units], Activation::Relu, Activation::Relu, 0.0, rng)?;
        let mut sizes = vec![2 * cfg.hidden_units];
        sizes.extend(&cfg.context_widths);
        sizes.push(1);
        let context = Mlp::new(&sizes, Activation::Relu, output, 0.0, rng)?;
        Ok(Self { extractor, context })
    }

    fn forward(&self, latent: ArrayView2<f64>, prediction: ArrayView2<f64>, rng: &mut ChaCha8Rng) -> SidePass {
        let extractor = self.extractor.forward(prediction, Mode::Train, rng);
        let joined = concatenate![Axis(1), latent, extractor.output.view()];
        let context = self.context.forward(joined.view(), Mode::Train, rng);
        SidePass { extractor, context }
    }

    /// Returns gradients for both parts plus the gradients with respect to
    /// the latent input and the prediction input.
    fn backward(
        &self,
        pass: &SidePass,
        grad_output: ArrayView2<f64>,
    ) -> (Gradients, Gradients, Array2<f64>, Array2<f64>) {
        let width = self.extractor.output_width();
        let (g_context, g_joined) = self.context.backward(&pass.context, grad_output);
        let g_latent = g_joined.slice(s![.., ..width]).to_owned();
        let g_features = g_joined.slice(s![.., width..]);
        let (g_extractor, g_prediction) = self.extractor.backward(&pass.extractor, g_features);
        (g_extractor, g_context, g_latent, g_prediction)
    }

    /// Side output for the given main-network features.
    pub fn predict(&self, latent: ArrayView2<f64>, prediction: ArrayView2<f64>) -> Array2<f64> {
        let features = self.extractor.predict(prediction);
        let joined = concatenate![Axis(1), latent, features.view()];
        self.context.predict(joined.view())
    }
}

/// Hidden activations and prediction of a single-hidden-layer main network.
fn main_features(main: &Mlp, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let pass = main.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
    (pass.hidden(0).clone(), pass.output)
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlurpSequentialRun {
    pub estimates: Estimates,
    pub side: SideLearner,
    /// Stretch factor used for the training targets.
    pub lambda: f64,
}

/// Fits the side learner to `tanh(λ·|f(x) - y|)` on the training points with
/// `main` frozen, then maps its sigmoid output back through `atanh(u)/λ`.
pub fn run_slurp_sequential(ds: &ToyDataset, main: &Mlp, cfg: &ToyConfig) -> Result<SlurpSequentialRun> {
    cfg.validate()?;
    let x = column(&ds.train_x, cfg.input_scale);
    let (latent, prediction) = main_features(main, x.view());
    let errors: Vec<f64> = prediction
        .column(0)
        .iter()
        .zip(&ds.train_y)
        .map(|(p, y)| (p - y).abs())
        .collect();
    let p95 = percentile(&errors, 0.95);
    if !(p95 > 0.0) {
        return Err(Error::InvalidArgument(
            "main network fits the training set exactly; no error to learn".into(),
        ));
    }
    let lambda = cfg.slurp_target_at_p95.atanh() / p95;
    let targets: Vec<f64> = errors.iter().map(|&e| scale_target(e, lambda)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "slurp_sequential", 0));
    let mut side = SideLearner::new(cfg, Activation::Sigmoid, &mut rng)?;
    let mut opt_ext = Optimizer::new(cfg.optimizer);
    let mut opt_ctx = Optimizer::new(cfg.optimizer);
    for_each_batch(ds.train_x.len(), &cfg.train, &mut rng, |batch, rng| {
        let lat = latent.select(Axis(0), batch);
        let pred = prediction.select(Axis(0), batch);
        let pass = side.forward(lat.view(), pred.view(), rng);
        let (_, g) = batch_loss(LossKind::MseRaw, pass.context.output.view(), &gather(&targets, batch))?;
        let (g_ext, g_ctx, _, _) = side.backward(&pass, g.view());
        opt_ext.step(&mut side.extractor, &g_ext, &cfg.groups.sequential_extractor);
        opt_ctx.step(&mut side.context, &g_ctx, &cfg.groups.sequential_blocks);
        Ok(())
    })?;

    let test = column(&ds.test_x, cfg.input_scale);
    let (t_latent, t_pred) = main_features(main, test.view());
    let u = side.predict(t_latent.view(), t_pred.view());
    let points = t_pred
        .column(0)
        .iter()
        .zip(u.column(0))
        .map(|(&mean, &u)| UncertaintyEstimate {
            mean,
            sigma: unscale_target(u, lambda),
        })
        .collect();
    Ok(SlurpSequentialRun {
        estimates: Estimates {
            kind: EstimatorKind::SlurpSequential,
            points,
        },
        side,
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlurpJointRun {
    pub estimates: Estimates,
    pub main: Mlp,
    pub side: SideLearner,
}

/// Main network and side learner trained together on the Gaussian NLL, the
/// side learner supplying the log-variance. Gradients reach the main network
/// through both its prediction and its hidden activations.
pub fn run_slurp_joint(ds: &ToyDataset, cfg: &ToyConfig) -> Result<SlurpJointRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "slurp_joint", 0));
    let mut main = Mlp::new(&[1, cfg.hidden_units, 1], Activation::Relu, Activation::Identity, 0.0, &mut rng)?;
    let mut side = SideLearner::new(cfg, Activation::Identity, &mut rng)?;
    let (mut opt_main, mut opt_ext, mut opt_ctx) = (
        Optimizer::new(cfg.optimizer),
        Optimizer::new(cfg.optimizer),
        Optimizer::new(cfg.optimizer),
    );
    let x = column(&ds.train_x, cfg.input_scale);
    for_each_batch(ds.train_x.len(), &cfg.train, &mut rng, |batch, rng| {
        let xb = x.select(Axis(0), batch);
        let main_pass = main.forward(xb.view(), Mode::Train, rng);
        let side_pass = side.forward(main_pass.hidden(0).view(), main_pass.output.view(), rng);
        let joined = concatenate![Axis(1), main_pass.output.view(), side_pass.context.output.view()];
        let (_, g) = batch_loss(LossKind::GaussianNll, joined.view(), &gather(&ds.train_y, batch))?;
        let g_mu = g.slice(s![.., 0..1]);
        let g_log_var = g.slice(s![.., 1..2]);
        let (g_ext, g_ctx, g_latent, g_pred) = side.backward(&side_pass, g_log_var);
        let g_out = &g_mu + &g_pred;
        let (g_main, _) = main.backward_with(&main_pass, g_out.view(), &[(0, g_latent.view())]);
        opt_main.step(&mut main, &g_main, &cfg.groups.joint_main);
        opt_ext.step(&mut side.extractor, &g_ext, &cfg.groups.joint_extractor);
        opt_ctx.step(&mut side.context, &g_ctx, &cfg.groups.joint_blocks);
        Ok(())
    })?;

    let test = column(&ds.test_x, cfg.input_scale);
    let (t_latent, t_pred) = main_features(&main, test.view());
    let log_var = side.predict(t_latent.view(), t_pred.view());
    let points = t_pred
        .column(0)
        .iter()
        .zip(log_var.column(0))
        .map(|(&mean, &lv)| UncertaintyEstimate {
            mean,
            sigma: (0.5 * lv).exp(),
        })
        .collect();
    Ok(SlurpJointRun {
        estimates: Estimates {
            kind: EstimatorKind::SlurpJoint,
            points,
        },
        main,
        side,
    })
}

/// Fraction of points with `|y - mean| <= z·sigma`.
pub fn coverage(estimates: &[UncertaintyEstimate], truth: &[f64], z: f64) -> Result<f64> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "coverage inputs",
            expected: truth.len().to_string(),
            actual: estimates.len().to_string(),
        });
    }
    let hits = estimates
        .iter()
        .zip(truth)
        .filter(|(e, &y)| (y - e.mean).abs() <= z * e.sigma)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Average ranks (1-based), ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &p in &order[i..j] {
            ranks[p] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: EstimatorKind,
    pub ause: f64,
    /// `None` when every test point falls in the same reliability class.
    pub auroc: Option<f64>,
    pub spearman: f64,
    pub coverage_1sigma: f64,
    pub coverage_2sigma: f64,
    pub test_mse: f64,
    pub test_mse_in_range: f64,
    pub mean_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub main_test_mse: f64,
    /// Test points with `x` inside the training range.
    pub main_test_mse_in_range: f64,
    pub main_valid_mse: f64,
    /// AUSE of the main network's errors ranked by a constant score.
    pub constant_baseline_ause: f64,
    /// `|residual|` below this is reliable for the AUROC.
    pub reliability_threshold: f64,
    pub sparsification: SparsificationConfig,
    pub methods: Vec<MethodReport>,
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64
}

fn in_range_mse(xs: &[f64], pred: &[f64], truth: &[f64]) -> f64 {
    let (lo, hi) = TRAIN_RANGE;
    let (p, t): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(pred.iter().zip(truth))
        .filter(|(x, _)| (lo..=hi).contains(*x))
        .map(|(_, (p, t))| (*p, *t))
        .unzip();
    if t.is_empty() {
        0.0
    } else {
        mse(&p, &t)
    }
}

/// Absolute test residuals of a set of means, as a pixel series.
pub fn residual_series(means: &[f64], truth: &[f64]) -> Result<PixelSeries> {
    PixelSeries::from_values(means.iter().zip(truth).map(|(m, y)| (m - y).abs()).collect())
}

/// Treats the test points as a 1×N image and scores every method.
pub fn evaluate_toy(ds: &ToyDataset, main: &Mlp, cfg: &ToyConfig, all: &[Estimates]) -> Result<ToyReport> {
    let sp = SparsificationConfig::default();
    let main_test = predict_scalar(main, &ds.test_x, cfg.input_scale);
    let main_residuals = residual_series(&main_test, &ds.test_y)?;
    let threshold = percentile(main_residuals.values(), 0.5);
    let constant = PixelSeries::from_values(vec![0.0; ds.test_x.len()])?;
    let constant_baseline_ause = sparsify(&main_residuals, &constant, &sp, ErrorStatistic::Mean)?.ause;
    let main_valid = predict_scalar(main, &ds.valid_x, cfg.input_scale);

    let methods = all
        .iter()
        .map(|est| {
            let means = est.means();
            let sigmas = est.sigmas();
            let errors = residual_series(&means, &ds.test_y)?;
            let scores = PixelSeries::from_values(sigmas.clone())?;
            let labels = ReliabilityLabels {
                labels: errors.values().iter().map(|&e| e < threshold).collect(),
            };
            Ok(MethodReport {
                method: est.kind,
                ause: sparsify(&errors, &scores, &sp, ErrorStatistic::Mean)?.ause,
                auroc: auroc(&scores, &labels).ok(),
                spearman: spearman(&sigmas, errors.values()),
                coverage_1sigma: coverage(&est.points, &ds.test_y, 1.0)?,
                coverage_2sigma: coverage(&est.points, &ds.test_y, 2.0)?,
                test_mse: mse(&means, &ds.test_y),
                test_mse_in_range: in_range_mse(&ds.test_x, &means, &ds.test_y),
                mean_sigma: sigmas.iter().sum::<f64>() / sigmas.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyReport {
        main_test_mse: mse(&main_test, &ds.test_y),
        main_test_mse_in_range: in_range_mse(&ds.test_x, &main_test, &ds.test_y),
        main_valid_mse: mse(&main_valid, &ds.valid_y),
        constant_baseline_ause,
        reliability_threshold: threshold,
        sparsification: sp,
        methods,
    })
}

/// Everything produced by one experiment.
#[derive(Clone, Debug)]
pub struct ToyRun {
    pub config: ToyConfig,
    pub dataset: ToyDataset,
    pub main: Mlp,
    pub estimates: Vec<Estimates>,
    /// Main-network checksum before and after the sequential side learner
    /// was trained (equal unless something mutated the frozen network).
    pub main_checksum: (u64, u64),
    pub report: ToyReport,
}

impl ToyRun {
    pub fn estimates_for(&self, kind: EstimatorKind) -> Option<&Estimates> {
        self.estimates.iter().find(|e| e.kind == kind)
    }
}

/// Runs the selected estimators in parallel (each from its own seed, so the
/// outcome does not depend on scheduling).
pub fn run_toy(cfg: &ToyConfig) -> Result<ToyRun> {
    cfg.validate()?;
    let dataset = generate_dataset(cfg.seed)?;
    let main = train_main(&dataset, cfg)?;
    let before = main.checksum();
    let estimates = cfg
        .methods
        .par_iter()
        .map(|&kind| match kind {
            EstimatorKind::McDropout => run_mc_dropout(&dataset, cfg).map(|r| r.estimates),
            EstimatorKind::EmpiricalEnsemble => run_empirical_ensemble(&dataset, cfg),
            EstimatorKind::SinglePu => run_single_pu(&dataset, cfg),
            EstimatorKind::DeepEnsemble => run_deep_ensemble(&dataset, cfg),
            EstimatorKind::SlurpSequential => run_slurp_sequential(&dataset, &main, cfg).map(|r| r.estimates),
            EstimatorKind::SlurpJoint => run_slurp_joint(&dataset, cfg).map(|r| r.estimates),
        })
        .collect::<Result<Vec<_>>>()?;
    let after = main.checksum();
    let report = evaluate_toy(&dataset, &main, cfg, &estimates)?;
    Ok(ToyRun {
        config: cfg.clone(),
        dataset,
        main,
        estimates,
        main_checksum: (before, after),
        report,
    })
}
