//! Small deterministic neural networks: fully connected layers with a soft
//! rectifier or ReLU, and an optional convolutional front-end ending in
//! either spatial-softmax feature points or a flattened map.
//!
//! Parameters live in a single canonical flat ordering (front-end kernels
//! and biases first, then each linear layer's weights and bias), which keeps
//! SGD, finite-difference audits, and checkpointing straightforward.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spatial;
use crate::error::GpsError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// log(1 + exp(z))
    SoftRect,
    /// max(0, z)
    Relu,
}

impl Nonlinearity {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Self::SoftRect => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Self::Relu => z.max(0.0),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Self::SoftRect => 1.0 / (1.0 + (-z).exp()),
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How the convolutional front-end is reduced before the linear layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontendHead {
    /// Per-channel softmax and expected pixel position (2 outputs/channel).
    SpatialSoftmax,
    /// Flatten all response maps.
    Flatten,
}

/// Convolutional front-end description. Square input, square kernels,
/// stride 1, no padding, no pooling, ReLU after every convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionSpec {
    pub in_side: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub head: FrontendHead,
}

impl VisionSpec {
    pub fn out_side(&self) -> usize {
        self.in_side - self.channels.len() * (self.kernel - 1)
    }

    pub fn image_pixels(&self) -> usize {
        self.in_side * self.in_side
    }

    /// Feature dimension delivered to the linear layers.
    pub fn feature_dim(&self) -> usize {
        let c = *self.channels.last().expect("at least one conv layer");
        match self.head {
            FrontendHead::SpatialSoftmax => 2 * c,
            FrontendHead::Flatten => c * self.out_side() * self.out_side(),
        }
    }
}

/// Complete architecture description; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub nonlin: Nonlinearity,
    pub vision: Option<VisionSpec>,
}

impl NetworkSpec {
    /// State-input policy: one hidden layer with a soft rectifier.
    pub fn state_policy(obs_dim: usize, action_dim: usize, hidden: Vec<usize>) -> Self {
        Self { obs_dim, action_dim, hidden, nonlin: Nonlinearity::SoftRect, vision: None }
    }

    fn mlp_input_dim(&self) -> usize {
        match &self.vision {
            Some(v) => v.feature_dim() + (self.obs_dim - v.image_pixels()),
            None => self.obs_dim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvLayer {
    /// kernels[out_channel][in_channel] is a k x k matrix.
    pub kernels: Vec<Vec<DMatrix<f64>>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub convs: Vec<ConvLayer>,
    pub linears: Vec<LinearLayer>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    /// Per conv layer: input maps to that layer.
    conv_inputs: Vec<Vec<DMatrix<f64>>>,
    /// Per conv layer: pre-activation output maps.
    conv_pre: Vec<Vec<DMatrix<f64>>>,
    /// Softmax distributions and points when the head is spatial-softmax.
    softmaxes: Vec<DMatrix<f64>>,
    points: DVector<f64>,
    /// Input to the first linear layer.
    mlp_input: DVector<f64>,
    /// Per linear layer (except the last): pre-activation vectors.
    mlp_pre: Vec<DVector<f64>>,
}

impl Network {
    /// Deterministic initialization from a seed (uniform Xavier fan-in/out).
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        if let Some(v) = &spec.vision {
            let mut in_c = 1;
            for &out_c in &v.channels {
                let fan_in = (in_c * v.kernel * v.kernel) as f64;
                let bound = (6.0 / (fan_in + out_c as f64)).sqrt();
                let kernels = (0..out_c)
                    .map(|_| {
                        (0..in_c)
                            .map(|_| {
                                DMatrix::from_fn(v.kernel, v.kernel, |_, _| {
                                    rng.gen_range(-bound..bound)
                                })
                            })
                            .collect()
                    })
                    .collect();
                convs.push(ConvLayer { kernels, bias: vec![0.0; out_c] });
                in_c = out_c;
            }
        }
        let mut linears = Vec::new();
        let mut dims = vec![spec.mlp_input_dim()];
        dims.extend(&spec.hidden);
        dims.push(spec.action_dim);
        for pair in dims.windows(2) {
            let (nin, nout) = (pair[0], pair[1]);
            let bound = (6.0 / (nin + nout) as f64).sqrt();
            linears.push(LinearLayer {
                w: DMatrix::from_fn(nout, nin, |_, _| rng.gen_range(-bound..bound)),
                b: DVector::zeros(nout),
            });
        }
        Self { spec, convs, linears }
    }

    /// All-zero-parameter network (used in tests).
    pub fn zeros(spec: NetworkSpec) -> Self {
        let mut net = Self::init(spec, 0);
        let n = net.param_count();
        net.set_params(&DVector::zeros(n));
        net
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for conv in &self.convs {
            for row in &conv.kernels {
                for k in row {
                    n += k.len();
                }
            }
            n += conv.bias.len();
        }
        for lin in &self.linears {
            n += lin.w.len() + lin.b.len();
        }
        n
    }

    /// Canonical flat parameter vector.
    pub fn get_params(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for conv in &self.convs {
            for row in &conv.kernels {
                for k in row {
                    out.extend(k.iter());
                }
            }
            out.extend(conv.bias.iter());
        }
        for lin in &self.linears {
            out.extend(lin.w.iter());
            out.extend(lin.b.iter());
        }
        DVector::from_vec(out)
    }

    pub fn set_params(&mut self, params: &DVector<f64>) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let mut idx = 0;
        for conv in &mut self.convs {
            for row in &mut conv.kernels {
                for k in row.iter_mut() {
                    for v in k.iter_mut() {
                        *v = params[idx];
                        idx += 1;
                    }
                }
            }
            for b in &mut conv.bias {
                *b = params[idx];
                idx += 1;
            }
        }
        for lin in &mut self.linears {
            for v in lin.w.iter_mut() {
                *v = params[idx];
                idx += 1;
            }
            for v in lin.b.iter_mut() {
                *v = params[idx];
                idx += 1;
            }
        }
    }

    /// Copy convolutional weights from another network with the same vision
    /// front-end shape (pose-pretraining transfer).
    pub fn transfer_frontend(&mut self, from: &Network) -> Result<()> {
        if self.convs.len() != from.convs.len() {
            return Err(GpsError::InvalidConfig(
                "front-end layer counts differ; cannot transfer weights".into(),
            ));
        }
        for (dst, src) in self.convs.iter_mut().zip(&from.convs) {
            if dst.bias.len() != src.bias.len()
                || dst.kernels.len() != src.kernels.len()
                || dst.kernels[0].len() != src.kernels[0].len()
            {
                return Err(GpsError::InvalidConfig(
                    "front-end shapes differ; cannot transfer weights".into(),
                ));
            }
            dst.bias.clone_from(&src.bias);
            dst.kernels.clone_from(&src.kernels);
        }
        Ok(())
    }

    /// Number of leading parameters belonging to the convolutional
    /// front-end (zero for state-input networks).
    pub fn frontend_param_count(&self) -> usize {
        let mut n = 0;
        for conv in &self.convs {
            for row in &conv.kernels {
                for k in row {
                    n += k.len();
                }
            }
            n += conv.bias.len();
        }
        n
    }

    /// Layer names and shapes in canonical parameter order.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            let k = conv.kernels[0][0].nrows();
            out.push((
                format!("conv{i}.kernels"),
                vec![conv.kernels.len(), conv.kernels[0].len(), k, k],
            ));
            out.push((format!("conv{i}.bias"), vec![conv.bias.len()]));
        }
        for (i, lin) in self.linears.iter().enumerate() {
            out.push((format!("linear{i}.w"), vec![lin.w.nrows(), lin.w.ncols()]));
            out.push((format!("linear{i}.b"), vec![lin.b.len()]));
        }
        out
    }

    /// Deterministic forward evaluation.
    pub fn forward(&self, obs: &DVector<f64>) -> Result<(DVector<f64>, ForwardCache)> {
        if obs.len() != self.spec.obs_dim {
            return Err(GpsError::DimensionMismatch {
                expected: self.spec.obs_dim,
                got: obs.len(),
            });
        }
        let mut cache = ForwardCache {
            conv_inputs: Vec::new(),
            conv_pre: Vec::new(),
            softmaxes: Vec::new(),
            points: DVector::zeros(0),
            mlp_input: DVector::zeros(0),
            mlp_pre: Vec::new(),
        };
        let mlp_input = match &self.spec.vision {
            Some(v) => {
                let pixels = v.image_pixels();
                let image = image_from_flat(&obs.rows(0, pixels).into_owned(), v.in_side);
                let proprio = obs.rows(pixels, obs.len() - pixels).into_owned();
                let mut maps = vec![image];
                for conv in &self.convs {
                    cache.conv_inputs.push(maps.clone());
                    let pre = conv_forward(conv, &maps);
                    cache.conv_pre.push(pre.clone());
                    maps = pre.iter().map(|m| m.map(|z| z.max(0.0))).collect();
                }
                let features = match v.head {
                    FrontendHead::SpatialSoftmax => {
                        let (points, softmaxes) = spatial::forward(&maps);
                        cache.points = points.clone();
                        cache.softmaxes = softmaxes;
                        points
                    }
                    FrontendHead::Flatten => flatten_maps(&maps),
                };
                let mut v_in = DVector::zeros(features.len() + proprio.len());
                v_in.rows_mut(0, features.len()).copy_from(&features);
                v_in.rows_mut(features.len(), proprio.len()).copy_from(&proprio);
                v_in
            }
            None => obs.clone(),
        };
        cache.mlp_input = mlp_input.clone();

        let mut activation = mlp_input;
        for (i, lin) in self.linears.iter().enumerate() {
            let pre = &lin.w * &activation + &lin.b;
            if i + 1 < self.linears.len() {
                cache.mlp_pre.push(pre.clone());
                activation = pre.map(|z| self.spec.nonlin.apply(z));
            } else {
                activation = pre;
            }
        }
        Ok((activation, cache))
    }

    /// Backpropagate `dout` (gradient of a scalar loss with respect to the
    /// network output) into `grad`, the canonical flat gradient accumulator.
    pub fn backward(&self, cache: &ForwardCache, dout: &DVector<f64>, grad: &mut DVector<f64>) {
        let n_lin = self.linears.len();
        let mut lin_w_grads: Vec<DMatrix<f64>> = Vec::with_capacity(n_lin);
        let mut lin_b_grads: Vec<DVector<f64>> = Vec::with_capacity(n_lin);

        // Activations entering each linear layer.
        let mut inputs = Vec::with_capacity(n_lin);
        inputs.push(cache.mlp_input.clone());
        for (i, pre) in cache.mlp_pre.iter().enumerate() {
            let _ = i;
            inputs.push(pre.map(|z| self.spec.nonlin.apply(z)));
        }

        let mut delta = dout.clone();
        for i in (0..n_lin).rev() {
            lin_w_grads.push(&delta * inputs[i].transpose());
            lin_b_grads.push(delta.clone());
            if i > 0 {
                let upstream = self.linears[i].w.transpose() * &delta;
                let pre = &cache.mlp_pre[i - 1];
                delta = DVector::from_fn(upstream.len(), |j, _| {
                    upstream[j] * self.spec.nonlin.derivative(pre[j])
                });
            } else {
                delta = self.linears[0].w.transpose() * &delta;
            }
        }
        lin_w_grads.reverse();
        lin_b_grads.reverse();

        // delta now holds the gradient with respect to the first linear
        // layer's input; push it through the front-end when present.
        let mut conv_kernel_grads: Vec<Vec<Vec<DMatrix<f64>>>> = Vec::new();
        let mut conv_bias_grads: Vec<Vec<f64>> = Vec::new();
        if let Some(v) = &self.spec.vision {
            let feat_dim = v.feature_dim();
            let dfeatures = delta.rows(0, feat_dim).into_owned();
            let last_maps: Vec<DMatrix<f64>> = cache
                .conv_pre
                .last()
                .expect("vision spec implies conv layers")
                .iter()
                .map(|m| m.map(|z| z.max(0.0)))
                .collect();
            let mut dmaps = match v.head {
                FrontendHead::SpatialSoftmax => {
                    spatial::backward(&cache.softmaxes, &cache.points, &dfeatures)
                }
                FrontendHead::Flatten => unflatten_like(&dfeatures, &last_maps),
            };
            for l in (0..self.convs.len()).rev() {
                // ReLU backward on this layer's pre-activations.
                for (dm, pre) in dmaps.iter_mut().zip(&cache.conv_pre[l]) {
                    for (g, &z) in dm.iter_mut().zip(pre.iter()) {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                let (kg, bg, dinput) =
                    conv_backward(&self.convs[l], &cache.conv_inputs[l], &dmaps);
                conv_kernel_grads.push(kg);
                conv_bias_grads.push(bg);
                dmaps = dinput;
            }
            conv_kernel_grads.reverse();
            conv_bias_grads.reverse();
        }

        // Accumulate in canonical order.
        let mut idx = 0;
        for (l, conv) in self.convs.iter().enumerate() {
            for (o, row) in conv.kernels.iter().enumerate() {
                for (ci, k) in row.iter().enumerate() {
                    let kg = &conv_kernel_grads[l][o][ci];
                    for (offset, g) in kg.iter().enumerate() {
                        grad[idx + offset] += g;
                    }
                    idx += k.len();
                }
            }
            for (o, _) in conv.bias.iter().enumerate() {
                grad[idx] += conv_bias_grads[l][o];
                idx += 1;
            }
        }
        for (i, lin) in self.linears.iter().enumerate() {
            for (offset, g) in lin_w_grads[i].iter().enumerate() {
                grad[idx + offset] += g;
            }
            idx += lin.w.len();
            for (offset, g) in lin_b_grads[i].iter().enumerate() {
                grad[idx + offset] += g;
            }
            idx += lin.b.len();
        }
        debug_assert_eq!(idx, self.param_count());
    }
}

fn image_from_flat(flat: &DVector<f64>, side: usize) -> DMatrix<f64> {
    DMatrix::from_fn(side, side, |r, c| flat[r * side + c])
}

fn flatten_maps(maps: &[DMatrix<f64>]) -> DVector<f64> {
    let per = maps[0].len();
    let mut out = DVector::zeros(maps.len() * per);
    for (c, map) in maps.iter().enumerate() {
        let (h, w) = map.shape();
        for r in 0..h {
            for col in 0..w {
                out[c * per + r * w + col] = map[(r, col)];
            }
        }
    }
    out
}

fn unflatten_like(flat: &DVector<f64>, like: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let per = like[0].len();
    like.iter()
        .enumerate()
        .map(|(c, map)| {
            let (h, w) = map.shape();
            DMatrix::from_fn(h, w, |r, col| flat[c * per + r * w + col])
        })
        .collect()
}

fn conv_forward(layer: &ConvLayer, inputs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let k = layer.kernels[0][0].nrows();
    let (h, w) = inputs[0].shape();
    let (oh, ow) = (h - k + 1, w - k + 1);
    layer
        .kernels
        .iter()
        .zip(&layer.bias)
        .map(|(row, &b)| {
            let mut out = DMatrix::from_element(oh, ow, b);
            for (input, kernel) in inputs.iter().zip(row) {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for a in 0..k {
                            for bb in 0..k {
                                acc += kernel[(a, bb)] * input[(i + a, j + bb)];
                            }
                        }
                        out[(i, j)] += acc;
                    }
                }
            }
            out
        })
        .collect()
}

/// Gradients of kernels, biases, and the layer input.
#[allow(clippy::type_complexity)]
fn conv_backward(
    layer: &ConvLayer,
    inputs: &[DMatrix<f64>],
    dout: &[DMatrix<f64>],
) -> (Vec<Vec<DMatrix<f64>>>, Vec<f64>, Vec<DMatrix<f64>>) {
    let k = layer.kernels[0][0].nrows();
    let (h, w) = inputs[0].shape();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut kernel_grads: Vec<Vec<DMatrix<f64>>> = layer
        .kernels
        .iter()
        .map(|row| row.iter().map(|_| DMatrix::zeros(k, k)).collect())
        .collect();
    let mut bias_grads = vec![0.0; layer.bias.len()];
    let mut dinputs: Vec<DMatrix<f64>> = inputs.iter().map(|_| DMatrix::zeros(h, w)).collect();

    for (o, dmap) in dout.iter().enumerate() {
        bias_grads[o] = dmap.iter().sum();
        for (ci, input) in inputs.iter().enumerate() {
            let kernel = &layer.kernels[o][ci];
            let kgrad = &mut kernel_grads[o][ci];
            let dinput = &mut dinputs[ci];
            for i in 0..oh {
                for j in 0..ow {
                    let g = dmap[(i, j)];
                    if g == 0.0 {
                        continue;
                    }
                    for a in 0..k {
                        for bb in 0..k {
                            kgrad[(a, bb)] += g * input[(i + a, j + bb)];
                            dinput[(i + a, j + bb)] += g * kernel[(a, bb)];
                        }
                    }
                }
            }
        }
    }
    (kernel_grads, bias_grads, dinputs)
}

/// Plain SGD with momentum over the canonical flat parameters.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: DVector<f64>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, param_count: usize) -> Self {
        Self { learning_rate, momentum, velocity: DVector::zeros(param_count) }
    }

    pub fn step(&mut self, net: &mut Network, grad: &DVector<f64>) {
        self.velocity = &self.velocity * self.momentum - grad * self.learning_rate;
        let params = net.get_params() + &self.velocity;
        net.set_params(&params);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_vision_spec(head: FrontendHead) -> NetworkSpec {
        NetworkSpec {
            obs_dim: 12 * 12 + 2,
            action_dim: 2,
            hidden: vec![8],
            nonlin: Nonlinearity::Relu,
            vision: Some(VisionSpec { in_side: 12, channels: vec![3, 4], kernel: 3, head }),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = Network::zeros(NetworkSpec::state_policy(3, 2, vec![5]));
        let (out, _) = net.forward(&DVector::from_row_slice(&[1.0, -2.0, 0.5])).unwrap();
        // softrect(0) = ln 2 feeds a zero weight matrix, so the output is 0.
        assert_eq!(out, DVector::zeros(2));
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let mut net = Network::init(NetworkSpec::state_policy(3, 2, vec![]), 7);
        let mut params = net.get_params();
        for (i, v) in params.iter_mut().enumerate() {
            *v = (i as f64 + 1.0) * 0.1;
        }
        net.set_params(&params);
        let obs = DVector::from_row_slice(&[0.3, -0.7, 1.1]);
        let (out, _) = net.forward(&obs).unwrap();
        let expected = &net.linears[0].w * &obs + &net.linears[0].b;
        assert_relative_eq!(out, expected, epsilon = 1e-14);
    }

    #[test]
    fn forward_matches_manual_evaluation() {
        // Independent reimplementation of a 2-layer soft-rectifier MLP.
        let net = Network::init(NetworkSpec::state_policy(2, 1, vec![3]), 11);
        let obs = DVector::from_row_slice(&[0.4, -0.9]);
        let (out, _) = net.forward(&obs).unwrap();
        let pre = &net.linears[0].w * &obs + &net.linears[0].b;
        let hid = DVector::from_fn(3, |i, _| {
            let z: f64 = pre[i];
            (1.0 + z.exp()).ln()
        });
        let expected = &net.linears[1].w * hid + &net.linears[1].b;
        assert_relative_eq!(out[0], expected[0], epsilon = 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Network::zeros(NetworkSpec::state_policy(3, 2, vec![4]));
        assert!(net.forward(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn param_roundtrip() {
        let net = Network::init(toy_vision_spec(FrontendHead::SpatialSoftmax), 3);
        let params = net.get_params();
        let mut other = Network::zeros(toy_vision_spec(FrontendHead::SpatialSoftmax));
        other.set_params(&params);
        assert_eq!(other.get_params(), params);
    }

    fn fd_check(spec: NetworkSpec, seed: u64) {
        let net = Network::init(spec.clone(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
        let obs = DVector::from_fn(spec.obs_dim, |_, _| rng.gen_range(0.0..1.0));
        let dout = DVector::from_fn(spec.action_dim, |_, _| rng.gen_range(-1.0..1.0));
        let (_, cache) = net.forward(&obs).unwrap();
        let mut grad = DVector::zeros(net.param_count());
        net.backward(&cache, &dout, &mut grad);

        let loss = |n: &Network| {
            let (out, _) = n.forward(&obs).unwrap();
            dout.dot(&out)
        };
        let params = net.get_params();
        let eps = 1e-6;
        let mut checked = 0;
        let stride = (params.len() / 60).max(1);
        for i in (0..params.len()).step_by(stride) {
            let mut np = net.clone();
            let mut pp = params.clone();
            pp[i] += eps;
            np.set_params(&pp);
            let up = loss(&np);
            pp[i] -= 2.0 * eps;
            np.set_params(&pp);
            let down = loss(&np);
            let fd = (up - down) / (2.0 * eps);
            assert_relative_eq!(fd, grad[i], epsilon = 1e-6, max_relative = 1e-4);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn gradients_match_fd_state_mlp() {
        fd_check(NetworkSpec::state_policy(4, 2, vec![10]), 21);
    }

    #[test]
    fn gradients_match_fd_vision_softmax() {
        fd_check(toy_vision_spec(FrontendHead::SpatialSoftmax), 22);
    }

    #[test]
    fn gradients_match_fd_vision_flatten() {
        fd_check(toy_vision_spec(FrontendHead::Flatten), 23);
    }

    #[test]
    fn frontend_transfer_copies_conv_weights() {
        let src = Network::init(toy_vision_spec(FrontendHead::SpatialSoftmax), 5);
        let mut dst = Network::init(toy_vision_spec(FrontendHead::SpatialSoftmax), 6);
        dst.transfer_frontend(&src).unwrap();
        assert_eq!(dst.convs[0].kernels[0][0], src.convs[0].kernels[0][0]);
        // Linear layers stay untouched.
        assert_ne!(dst.linears[0].w, src.linears[0].w);
    }
}
