use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{log_sigmoid, relu, sigmoid, Action, HeadMode, PolicyConfig, PolicyError, WeightActivation};
use crate::env::PortfolioWeights;
use crate::linalg::Matrix;

/// First layer: `o₁ = relu(aᵀ f + b + uᵀ w_prev)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentLayer {
    /// `a`, feature_dim × width.
    pub input: Matrix,
    /// `b`.
    pub bias: Vec<f64>,
    /// `u`, action_dim × width.
    pub feedback: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// in × out.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        self.weights.accumulate_vec_mul(x, &mut z);
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub recurrent: RecurrentLayer,
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
}

impl PolicyParameters {
    pub fn feature_dim(&self) -> usize {
        self.recurrent.input.rows
    }

    pub fn action_dim(&self) -> usize {
        self.output.bias.len()
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every parameter block in a fixed order: recurrent `a`, `b`, `u`, then
    /// weights and bias of each dense layer, then the output layer.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.recurrent.input.data,
            &self.recurrent.bias,
            &self.recurrent.feedback.data,
        ];
        for l in &self.hidden {
            v.push(&l.weights.data);
            v.push(&l.bias);
        }
        v.push(&self.output.weights.data);
        v.push(&self.output.bias);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.recurrent.input.data,
            &mut self.recurrent.bias,
            &mut self.recurrent.feedback.data,
        ];
        for l in &mut self.hidden {
            v.push(&mut l.weights.data);
            v.push(&mut l.bias);
        }
        v.push(&mut self.output.weights.data);
        v.push(&mut self.output.bias);
        v
    }

    /// Labels matching [`blocks`](Self::blocks).
    pub fn block_names(&self) -> Vec<String> {
        let mut v = vec!["recurrent.a".to_string(), "recurrent.b".into(), "recurrent.u".into()];
        for i in 0..self.hidden.len() {
            v.push(format!("dense{}.a", i + 1));
            v.push(format!("dense{}.b", i + 1));
        }
        v.push("output.a".into());
        v.push("output.b".into());
        v
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.blocks();
        let b = other.blocks();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
            && self.recurrent.input.same_shape(&other.recurrent.input)
            && self.recurrent.feedback.same_shape(&other.recurrent.feedback)
            && self
                .hidden
                .iter()
                .zip(&other.hidden)
                .all(|(x, y)| x.weights.same_shape(&y.weights))
            && self.output.weights.same_shape(&other.output.weights)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale · other`. Shapes must already agree.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub(crate) fn check_shapes(&self) -> Result<(), PolicyError> {
        let width = self.recurrent.bias.len();
        if self.recurrent.input.cols != width || self.recurrent.feedback.cols != width {
            return Err(PolicyError::ShapeMismatch("recurrent layer widths disagree".into()));
        }
        let mut fan_in = width;
        for (i, l) in self.hidden.iter().enumerate() {
            if l.weights.rows != fan_in || l.weights.cols != l.bias.len() {
                return Err(PolicyError::ShapeMismatch(format!("dense layer {} has wrong shape", i + 1)));
            }
            fan_in = l.bias.len();
        }
        if self.output.weights.rows != fan_in || self.output.weights.cols != self.output.bias.len() {
            return Err(PolicyError::ShapeMismatch("output layer has wrong shape".into()));
        }
        if self.recurrent.feedback.rows != self.output.bias.len() {
            return Err(PolicyError::ShapeMismatch(
                "feedback matrix rows must equal the action dimension".into(),
            ));
        }
        Ok(())
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-s, s);
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    }
}

/// Glorot-uniform weights, zero biases, seeded from `cfg.seed`.
pub fn init_params(
    cfg: &PolicyConfig,
    feature_dim: usize,
    num_stocks: usize,
) -> Result<PolicyParameters, PolicyError> {
    cfg.validate()?;
    if feature_dim == 0 || num_stocks == 0 {
        return Err(PolicyError::ShapeMismatch(
            "feature dimension and stock count must be positive".into(),
        ));
    }
    let action_dim = cfg.action_dim(num_stocks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h1 = cfg.hidden_sizes[0];
    let recurrent = RecurrentLayer {
        input: xavier(&mut rng, feature_dim, h1),
        bias: vec![0.0; h1],
        feedback: xavier(&mut rng, action_dim, h1),
    };
    let mut hidden = Vec::new();
    for w in cfg.hidden_sizes.windows(2) {
        let mut l = DenseLayer::zeros(w[0], w[1]);
        l.weights = xavier(&mut rng, w[0], w[1]);
        hidden.push(l);
    }
    let last = *cfg.hidden_sizes.last().expect("validated non-empty");
    let mut output = DenseLayer::zeros(last, action_dim);
    output.weights = xavier(&mut rng, last, action_dim);
    Ok(PolicyParameters {
        recurrent,
        hidden,
        output,
    })
}

/// Inverted-dropout masks for one forward pass, one vector per hidden layer.
/// Entries are 0 (dropped) or `1/(1−rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMasks {
    pub layers: Vec<Vec<f64>>,
}

pub fn sample_masks<R: Rng>(cfg: &PolicyConfig, rng: &mut R) -> StepMasks {
    let keep = 1.0 - cfg.dropout_rate;
    let scale = 1.0 / keep;
    StepMasks {
        layers: cfg
            .hidden_sizes
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                    .collect()
            })
            .collect(),
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub features: Vec<f64>,
    pub feedback: Vec<f64>,
    /// Pre-activation of each hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-ReLU, post-dropout output of each hidden layer.
    pub post: Vec<Vec<f64>>,
    pub masks: Option<StepMasks>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

/// Forward pass from an already-encoded feedback vector (see
/// [`Action::feedback_input`](super::Action::feedback_input)).
pub fn forward_raw(
    features: &[f64],
    feedback: &[f64],
    params: &PolicyParameters,
    masks: Option<&StepMasks>,
    cfg: &PolicyConfig,
) -> Result<ForwardCache, PolicyError> {
    params.check_shapes()?;
    if features.len() != params.feature_dim() {
        return Err(PolicyError::ShapeMismatch(format!(
            "feature vector has {} entries, network expects {}",
            features.len(),
            params.feature_dim()
        )));
    }
    if feedback.len() != params.action_dim() {
        return Err(PolicyError::ShapeMismatch(format!(
            "previous action has {} entries, network expects {}",
            feedback.len(),
            params.action_dim()
        )));
    }
    if let Some(m) = masks {
        let widths: Vec<usize> = std::iter::once(params.recurrent.bias.len())
            .chain(params.hidden.iter().map(|l| l.bias.len()))
            .collect();
        if m.layers.len() != widths.len() || m.layers.iter().zip(&widths).any(|(l, w)| l.len() != *w) {
            return Err(PolicyError::ShapeMismatch("dropout masks do not match layer widths".into()));
        }
    }

    let mut pre = Vec::with_capacity(params.hidden.len() + 1);
    let mut post = Vec::with_capacity(params.hidden.len() + 1);

    let mut z1 = params.recurrent.bias.clone();
    params.recurrent.input.accumulate_vec_mul(features, &mut z1);
    params.recurrent.feedback.accumulate_vec_mul(feedback, &mut z1);
    let mut o = activate(&z1, masks.map(|m| m.layers[0].as_slice()));
    pre.push(z1);
    post.push(o.clone());

    for (i, layer) in params.hidden.iter().enumerate() {
        let z = layer.apply(&o);
        o = activate(&z, masks.map(|m| m.layers[i + 1].as_slice()));
        pre.push(z);
        post.push(o.clone());
    }

    let logits = params.output.apply(&o);
    let output = head(&logits, cfg);
    Ok(ForwardCache {
        features: features.to_vec(),
        feedback: feedback.to_vec(),
        pre,
        post,
        masks: masks.cloned(),
        logits,
        output,
    })
}

fn activate(z: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => z.iter().zip(m).map(|(v, k)| relu(*v) * k).collect(),
        None => z.iter().map(|v| relu(*v)).collect(),
    }
}

fn head(logits: &[f64], cfg: &PolicyConfig) -> Vec<f64> {
    match cfg.mode {
        HeadMode::WeightHead => {
            let scores: Vec<f64> = match cfg.weight_activation {
                WeightActivation::SigmoidNormalized => logits.iter().map(|&z| log_sigmoid(z)).collect(),
                WeightActivation::Softmax => logits.to_vec(),
            };
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|v| v / total).collect()
        }
        HeadMode::ShareHead => logits
            .iter()
            .map(|&z| (cfg.max_shares * z.tanh()).max(0.0))
            .collect(),
    }
}

/// One forward step of the policy.
pub fn forward(
    features: &[f64],
    prev: &Action,
    params: &PolicyParameters,
    masks: Option<&StepMasks>,
    cfg: &PolicyConfig,
) -> Result<(Action, ForwardCache), PolicyError> {
    let feedback = prev.feedback_input(cfg);
    let cache = forward_raw(features, &feedback, params, masks, cfg)?;
    let action = match cfg.mode {
        HeadMode::WeightHead => Action::Weights(
            PortfolioWeights::new(cache.output.clone())
                .map_err(|e| PolicyError::ShapeMismatch(e.to_string()))?,
        ),
        HeadMode::ShareHead => Action::Shares(cache.output.clone()),
    };
    Ok((action, cache))
}

/// Runs the policy over consecutive days, feeding each action back into the
/// next day. The first day sees [`PolicyConfig::initial_action`].
pub fn forward_sequence(
    features: &[Vec<f64>],
    params: &PolicyParameters,
    cfg: &PolicyConfig,
    masks: Option<&[StepMasks]>,
) -> Result<(Vec<Action>, Vec<ForwardCache>), PolicyError> {
    if features.is_empty() {
        return Err(PolicyError::EmptySlice);
    }
    if let Some(m) = masks {
        if m.len() != features.len() {
            return Err(PolicyError::ShapeMismatch(format!(
                "{} mask sets for {} days",
                m.len(),
                features.len()
            )));
        }
    }
    let num_stocks = match cfg.mode {
        HeadMode::WeightHead => params.action_dim().saturating_sub(1),
        HeadMode::ShareHead => params.action_dim(),
    };
    let mut prev = cfg.initial_action(num_stocks);
    let mut actions = Vec::with_capacity(features.len());
    let mut caches = Vec::with_capacity(features.len());
    for (t, f) in features.iter().enumerate() {
        let (a, c) = forward(f, &prev, params, masks.map(|m| &m[t]), cfg)?;
        prev = a.clone();
        actions.push(a);
        caches.push(c);
    }
    Ok((actions, caches))
}

/// Back-propagates `d_output` (the adjoint of the head output) through one
/// cached step, accumulating into `grad`. Returns the adjoint of the feedback
/// input vector.
pub fn backward_step(
    params: &PolicyParameters,
    cfg: &PolicyConfig,
    cache: &ForwardCache,
    d_output: &[f64],
    grad: &mut PolicyParameters,
) -> Vec<f64> {
    let out = &cache.output;
    let d_logits: Vec<f64> = match cfg.mode {
        HeadMode::WeightHead => {
            let inner: f64 = d_output.iter().zip(out).map(|(d, w)| d * w).sum();
            match cfg.weight_activation {
                WeightActivation::SigmoidNormalized => cache
                    .logits
                    .iter()
                    .zip(out)
                    .zip(d_output)
                    .map(|((&z, &w), &d)| w * (1.0 - sigmoid(z)) * (d - inner))
                    .collect(),
                WeightActivation::Softmax => out
                    .iter()
                    .zip(d_output)
                    .map(|(&w, &d)| w * (d - inner))
                    .collect(),
            }
        }
        HeadMode::ShareHead => cache
            .logits
            .iter()
            .zip(d_output)
            .map(|(&z, &d)| {
                let t = z.tanh();
                if t > 0.0 {
                    d * cfg.max_shares * (1.0 - t * t)
                } else {
                    0.0
                }
            })
            .collect(),
    };

    let n_hidden = cache.post.len();
    let last = &cache.post[n_hidden - 1];
    grad.output.weights.add_outer(last, &d_logits);
    add_into(&mut grad.output.bias, &d_logits);
    let mut d_post = vec![0.0; last.len()];
    params.output.weights.mul_vec(&d_logits, &mut d_post);

    for layer in (0..n_hidden).rev() {
        let d_pre = relu_backward(&cache.pre[layer], &d_post, cache.masks.as_ref().map(|m| m.layers[layer].as_slice()));
        if layer == 0 {
            let rec = &mut grad.recurrent;
            rec.input.add_outer(&cache.features, &d_pre);
            add_into(&mut rec.bias, &d_pre);
            rec.feedback.add_outer(&cache.feedback, &d_pre);
            let mut d_feedback = vec![0.0; cache.feedback.len()];
            params.recurrent.feedback.mul_vec(&d_pre, &mut d_feedback);
            return d_feedback;
        }
        let input = &cache.post[layer - 1];
        let dense = &params.hidden[layer - 1];
        let g = &mut grad.hidden[layer - 1];
        g.weights.add_outer(input, &d_pre);
        add_into(&mut g.bias, &d_pre);
        d_post = vec![0.0; input.len()];
        dense.weights.mul_vec(&d_pre, &mut d_post);
    }
    unreachable!("the recurrent layer always terminates the loop")
}

fn relu_backward(pre: &[f64], d_post: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    pre.iter()
        .zip(d_post)
        .enumerate()
        .map(|(i, (&z, &d))| {
            if z > 0.0 {
                d * mask.map_or(1.0, |m| m[i])
            } else {
                0.0
            }
        })
        .collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
