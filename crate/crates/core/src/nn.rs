//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Batches are row-major `batch × features` matrices. Hidden layers may be
//! followed by inverted dropout, so evaluation needs no rescaling and
//! MC-Dropout simply runs [`Mode::Train`] forward passes at inference.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => crate::loss::sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::DimensionMismatch {
                what: "layer bias length",
                expected: weights.nrows().to_string(),
                actual: biases.len().to_string(),
            });
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("layer parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// He-uniform weights for ReLU layers, Xavier-uniform otherwise; biases
    /// uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = match activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let bias_bound = 1.0 / (fan_in as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
        let biases = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bias_bound..bias_bound));
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are sampled.
    Train,
    /// Deterministic.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    dropout: f64,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Input fed to each layer.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    /// Activation outputs before dropout.
    post: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers after each hidden layer.
    masks: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

impl ForwardPass {
    /// Output of hidden layer `layer` as seen by the next layer.
    pub fn hidden(&self, layer: usize) -> &Array2<f64> {
        &self.inputs[layer + 1]
    }

    /// Pre-activation values of layer `layer`.
    pub fn pre_activation(&self, layer: usize) -> &Array2<f64> {
        &self.pre[layer]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.len()),
                })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|&g| g == 0.0)
    }
}

/// Learning rate and weight decay shared by a group of parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl ParamGroup {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<DenseLayer>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {dropout}"
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch {
                    what: "consecutive layer widths",
                    expected: pair[0].outputs().to_string(),
                    actual: format!("{} (layer {})", pair[1].inputs(), i + 1),
                });
            }
        }
        Ok(Self { layers, dropout })
    }

    /// Randomly initialised network with layer widths `sizes`
    /// (`[input, hidden.., output]`).
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must list at least input and output widths, all positive: {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers, dropout)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn with_dropout(mut self, dropout: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {dropout}"
            )));
        }
        self.dropout = dropout;
        Ok(self)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for l in &self.layers {
            eat(&(l.inputs() as u64).to_le_bytes());
            eat(&(l.outputs() as u64).to_le_bytes());
            for v in l.weights.iter().chain(l.biases.iter()) {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> ForwardPass {
        assert_eq!(input.ncols(), self.input_width(), "input width");
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        inputs.push(input.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = inputs[i].dot(&layer.weights.t()) + &layer.biases;
            let a = z.mapv(|v| layer.activation.apply(v));
            let hidden = i + 1 < n;
            let mask = if hidden && mode == Mode::Train && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                Some(Array2::from_shape_fn(a.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                }))
            } else {
                None
            };
            let next = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            pre.push(z);
            post.push(a);
            masks.push(mask);
            inputs.push(next);
        }
        let output = inputs.pop().expect("at least one layer");
        ForwardPass {
            inputs,
            pre,
            post,
            masks,
            output,
        }
    }

    /// Deterministic evaluation-mode output.
    pub fn predict(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t()) + &layer.biases;
            z.mapv_inplace(|v| layer.activation.apply(v));
            x = z;
        }
        x
    }

    /// Reverse-mode gradients of `sum(grad_output ⊙ output)`: parameter
    /// gradients and the gradient with respect to the input batch.
    pub fn backward(&self, pass: &ForwardPass, grad_output: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        self.backward_with(pass, grad_output, &[])
    }

    /// Like [`Mlp::backward`], with extra upstream gradients added to hidden
    /// outputs: `(layer, grad)` refers to the output of `layer` as returned by
    /// [`ForwardPass::hidden`].
    pub fn backward_with(
        &self,
        pass: &ForwardPass,
        grad_output: ArrayView2<f64>,
        injected: &[(usize, ArrayView2<f64>)],
    ) -> (Gradients, Array2<f64>) {
        assert_eq!(grad_output.dim(), pass.output.dim(), "output gradient shape");
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (_, extra) in injected.iter().filter(|(l, _)| *l == i) {
                g += extra;
            }
            if let Some(mask) = &pass.masks[i] {
                g *= mask;
            }
            let act = layer.activation;
            Zip::from(&mut g)
                .and(&pass.pre[i])
                .and(&pass.post[i])
                .for_each(|g, &z, &a| *g *= act.derivative(z, a));
            let d_weights = g.t().dot(&pass.inputs[i]);
            let d_biases = g.sum_axis(Axis(0));
            g = g.dot(&layer.weights);
            grads.push(LayerGradients {
                weights: d_weights,
                biases: d_biases,
            });
        }
        grads.reverse();
        (Gradients { layers: grads }, g)
    }

    /// `w ← w − lr·(grad + weight_decay·w)` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, group: &ParamGroup) {
        let (lr, wd) = (group.learning_rate, group.weight_decay);
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .for_each(|w, &g| *w -= lr * (g + wd * *w));
            Zip::from(&mut layer.biases)
                .and(&g.biases)
                .for_each(|w, &g| *w -= lr * (g + wd * *w));
        }
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                return layer.weights.iter_mut().nth(index).expect("in range");
            }
            index -= nw;
            let nb = layer.biases.len();
            if index < nb {
                return &mut layer.biases[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient steps.
    Sgd,
    /// Adam moment estimates (β = 0.9, 0.999) as the step direction.
    Adam,
}

/// Per-network optimizer state. Every update goes through
/// [`Mlp::sgd_step`], so weight decay is decoupled from the step direction.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    moments: Option<(Gradients, Gradients)>,
    steps: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            moments: None,
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, group: &ParamGroup) {
        match self.kind {
            OptimizerKind::Sgd => net.sgd_step(grads, group),
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (Gradients::zeros_like(net), Gradients::zeros_like(net)));
                self.steps += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.steps);
                let c2 = 1.0 - Self::BETA2.powi(self.steps);
                let mut direction = Gradients::zeros_like(net);
                let update = |m: &mut f64, v: &mut f64, g: f64, d: &mut f64| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *d = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                };
                for (l, g) in grads.layers.iter().enumerate() {
                    Zip::from(&mut m.layers[l].weights)
                        .and(&mut v.layers[l].weights)
                        .and(&g.weights)
                        .and(&mut direction.layers[l].weights)
                        .for_each(|m, v, &g, d| update(m, v, g, d));
                    Zip::from(&mut m.layers[l].biases)
                        .and(&mut v.layers[l].biases)
                        .and(&g.biases)
                        .and(&mut direction.layers[l].biases)
                        .for_each(|m, v, &g, d| update(m, v, g, d));
                }
                net.sgd_step(&direction, group);
            }
        }
    }
}

/// Mean loss over a batch and the gradient of that mean with respect to the
/// network output.
pub fn batch_loss(kind: LossKind, output: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, Array2<f64>)> {
    if output.ncols() != kind.output_width() || output.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            what: "loss output batch",
            expected: format!("{}x{}", targets.len(), kind.output_width()),
            actual: format!("{}x{}", output.nrows(), output.ncols()),
        });
    }
    let n = targets.len() as f64;
    let mut grad = Array2::zeros(output.raw_dim());
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = output.row(i).to_vec();
        let mut g = vec![0.0; row.len()];
        total += kind.evaluate(&row, t, &mut g)?;
        for (j, gj) in g.into_iter().enumerate() {
            grad[[i, j]] = gj / n;
        }
    }
    Ok((total / n, grad))
}

/// Largest relative deviation between backpropagated parameter gradients and
/// central finite differences of the mean loss over `samples`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// vanishing gradients from amplifying round-off.
pub fn grad_check(net: &Mlp, loss: LossKind, samples: &[(Vec<f64>, f64)], h: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("grad_check needs samples".into()));
    }
    let width = net.input_width();
    let mut flat = Vec::with_capacity(samples.len() * width);
    for (x, _) in samples {
        if x.len() != width {
            return Err(Error::DimensionMismatch {
                what: "grad_check sample width",
                expected: width.to_string(),
                actual: x.len().to_string(),
            });
        }
        flat.extend_from_slice(x);
    }
    let inputs = Array2::from_shape_vec((samples.len(), width), flat).expect("shape checked");
    let targets: Vec<f64> = samples.iter().map(|(_, t)| *t).collect();

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let pass = net.forward(inputs.view(), Mode::Eval, &mut rng);
    let (_, grad_out) = batch_loss(loss, pass.output.view(), &targets)?;
    let (grads, _) = net.backward(&pass, grad_out.view());
    let analytic = grads.flat();

    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let plus = batch_loss(loss, probe.predict(inputs.view()).view(), &targets)?.0;
        *probe.param_mut(i) = orig - h;
        let minus = batch_loss(loss, probe.predict(inputs.view()).view(), &targets)?.0;
        *probe.param_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Smallest distance of any ReLU pre-activation to the kink at zero.
fn kink_margin(net: &Mlp, pass: &ForwardPass) -> f64 {
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.activation == Activation::Relu)
        .flat_map(|(i, _)| pass.pre_activation(i).iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// One randomized gradient check of `loss` composed with a fresh random
/// network (ReLU hidden layers; sigmoid output for MSE so that its
/// derivative is covered too). Inputs are redrawn until every ReLU
/// pre-activation is at least `1e-3` from the kink.
pub fn random_grad_check<R: Rng + ?Sized>(loss: LossKind, rng: &mut R) -> Result<f64> {
    let input = rng.random_range(1..=4);
    let mut sizes = vec![input];
    for _ in 0..rng.random_range(1..=2) {
        sizes.push(rng.random_range(2..=12));
    }
    sizes.push(loss.output_width());
    let out_act = if loss == LossKind::MseRaw {
        Activation::Sigmoid
    } else {
        Activation::Identity
    };
    let net = Mlp::new(&sizes, Activation::Relu, out_act, 0.0, rng)?;
    let count = rng.random_range(1..=8);
    let samples = loop {
        let samples: Vec<(Vec<f64>, f64)> = (0..count)
            .map(|_| {
                let x = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
                let t = match loss {
                    LossKind::BceScaled | LossKind::MseRaw => rng.random_range(0.0..1.0),
                    _ => rng.random_range(-2.0..2.0),
                };
                (x, t)
            })
            .collect();
        let flat: Vec<f64> = samples.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        let batch = Array2::from_shape_vec((count, input), flat).expect("shape matches");
        let pass = net.forward(batch.view(), Mode::Eval, rng);
        if kink_margin(&net, &pass) >= 1e-3 {
            break samples;
        }
    };
    grad_check(&net, loss, &samples, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn identity_net(n: usize) -> Mlp {
        let layer = DenseLayer::new(Array2::eye(n), Array1::zeros(n), Activation::Identity).unwrap();
        Mlp::from_layers(vec![layer], 0.0).unwrap()
    }

    #[test]
    fn identity_forward() {
        let x = array![[1.5, -2.0, 3.0]];
        let out = identity_net(3).forward(x.view(), Mode::Eval, &mut rng()).output;
        assert_eq!(out, x);
    }

    #[test]
    fn relu_forward() {
        let layer = DenseLayer::new(Array2::eye(2), Array1::zeros(2), Activation::Relu).unwrap();
        let net = Mlp::from_layers(vec![layer], 0.0).unwrap();
        assert_eq!(net.predict(array![[-1.0, 2.0]].view()), array![[0.0, 2.0]]);
    }

    #[test]
    fn dropout_inactive_in_eval() {
        let mut r = rng();
        let net = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Identity, 0.5, &mut r).unwrap();
        let plain = net.clone().with_dropout(0.0).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let a = net.forward(x.view(), Mode::Eval, &mut r).output;
        let b = plain.forward(x.view(), Mode::Eval, &mut r).output;
        assert_eq!(a, b);
        assert_eq!(a, net.predict(x.view()));
    }

    #[test]
    fn dropout_train_mode_is_inverted() {
        let mut r = rng();
        let ones = DenseLayer::new(Array2::ones((1000, 1)), Array1::zeros(1000), Activation::Identity).unwrap();
        let avg = DenseLayer::new(
            Array2::from_elem((1, 1000), 1.0 / 1000.0),
            Array1::zeros(1),
            Activation::Identity,
        )
        .unwrap();
        let net = Mlp::from_layers(vec![ones, avg], 0.4).unwrap();
        let out = net.forward(array![[1.0]].view(), Mode::Train, &mut r).output[[0, 0]];
        // Expected value 1 with std about 0.026
        assert!((out - 1.0).abs() < 0.15, "{out}");
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let layer = DenseLayer::new(array![[0.3, -0.7]], array![0.1], Activation::Identity).unwrap();
        let net = Mlp::from_layers(vec![layer], 0.0).unwrap();
        let x = array![[2.0, 5.0]];
        let pass = net.forward(x.view(), Mode::Eval, &mut rng());
        let (g, gin) = net.backward(&pass, array![[1.0]].view());
        assert_eq!(g.layers[0].weights, x);
        assert_eq!(g.layers[0].biases, array![1.0]);
        assert_eq!(gin, array![[0.3, -0.7]]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut r = rng();
        let net = Mlp::new(&[2, 5, 5, 1], Activation::Relu, Activation::Sigmoid, 0.0, &mut r).unwrap();
        let x = array![[0.3, -0.2], [1.0, 2.0]];
        let pass = net.forward(x.view(), Mode::Eval, &mut r);
        let (g, _) = net.backward(&pass, Array2::zeros((2, 1)).view());
        assert!(g.is_zero());
    }

    #[test]
    fn sgd_step_cases() {
        // f(w) = w^2 at w = 1: grad 2, lr 0.1 gives 0.8
        let layer = DenseLayer::new(array![[1.0]], array![0.0], Activation::Identity).unwrap();
        let mut net = Mlp::from_layers(vec![layer], 0.0).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[[0, 0]] = 2.0;
        net.sgd_step(&grads, &ParamGroup::new(0.1, 0.0));
        assert!((net.layers()[0].weights[[0, 0]] - 0.8).abs() < 1e-15);

        let before = net.clone();
        net.sgd_step(&Gradients::zeros_like(&net), &ParamGroup::new(0.1, 0.0));
        assert_eq!(net, before);

        net.sgd_step(&Gradients::zeros_like(&net), &ParamGroup::new(0.1, 0.5));
        assert!(net.layers()[0].weights[[0, 0]].abs() < before.layers()[0].weights[[0, 0]].abs());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        for kind in LossKind::ALL {
            let out_act = if kind == LossKind::MseRaw { Activation::Sigmoid } else { Activation::Identity };
            let net = Mlp::new(&[2, 16, 8, kind.output_width()], Activation::Relu, out_act, 0.0, &mut r)
                .unwrap();
            let samples: Vec<(Vec<f64>, f64)> = (0..6)
                .map(|_| {
                    (
                        vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                        r.random_range(0.0..1.0),
                    )
                })
                .collect();
            let err = grad_check(&net, kind, &samples, 1e-5).unwrap();
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn injected_hidden_gradient_matches_composition() {
        // d/dθ of sum(hidden) through backward_with equals an explicit
        // finite difference of the same objective.
        let mut r = rng();
        let net = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Identity, 0.0, &mut r).unwrap();
        let x = array![[0.4, -0.3], [0.9, 0.2]];
        let pass = net.forward(x.view(), Mode::Eval, &mut r);
        let ones = Array2::ones(pass.hidden(0).raw_dim());
        let (g, _) = net.backward_with(&pass, Array2::zeros((2, 1)).view(), &[(0, ones.view())]);
        let objective = |n: &Mlp| n.forward(x.view(), Mode::Eval, &mut rng()).hidden(0).sum();
        let mut probe = net.clone();
        let h = 1e-6;
        let orig = *probe.param_mut(0);
        *probe.param_mut(0) = orig + h;
        let plus = objective(&probe);
        *probe.param_mut(0) = orig - h;
        let minus = objective(&probe);
        let numeric = (plus - minus) / (2.0 * h);
        assert!((g.layers[0].weights[[0, 0]] - numeric).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let layer = DenseLayer::new(array![[1.0, -1.0]], array![0.5], Activation::Identity).unwrap();
        let mut net = Mlp::from_layers(vec![layer], 0.0).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[[0, 0]] = 3.0;
        grads.layers[0].weights[[0, 1]] = -0.01;
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        opt.step(&mut net, &grads, &ParamGroup::new(0.1, 0.0));
        let w = &net.layers()[0].weights;
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 0.9).abs() < 1e-5);
        assert_eq!(net.layers()[0].biases[0], 0.5);
    }

    #[test]
    fn sgd_optimizer_is_sgd_step() {
        let mut r = rng();
        let net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, 0.0, &mut r).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[1].weights.fill(0.5);
        let (mut a, mut b) = (net.clone(), net);
        a.sgd_step(&grads, &ParamGroup::new(0.1, 0.01));
        Optimizer::new(OptimizerKind::Sgd).step(&mut b, &grads, &ParamGroup::new(0.1, 0.01));
        assert_eq!(a, b);
    }

    #[test]
    fn construction_errors() {
        let a = DenseLayer::new(Array2::zeros((3, 2)), Array1::zeros(3), Activation::Relu).unwrap();
        let b = DenseLayer::new(Array2::zeros((1, 4)), Array1::zeros(1), Activation::Relu).unwrap();
        assert!(Mlp::from_layers(vec![a.clone(), b], 0.0).is_err());
        assert!(Mlp::from_layers(vec![a], 1.0).is_err());
        assert!(DenseLayer::new(Array2::zeros((2, 2)), Array1::zeros(3), Activation::Relu).is_err());
        assert!(DenseLayer::new(array![[f64::NAN]], array![0.0], Activation::Relu).is_err());
        assert!(Mlp::from_layers(vec![], 0.0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Mlp::new(&[1, 30, 1], Activation::Relu, Activation::Identity, 0.0, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = Mlp::new(&[1, 30, 1], Activation::Relu, Activation::Identity, 0.0, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a, b);
    }
}
