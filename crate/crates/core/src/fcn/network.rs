//! Dense-connectivity fully convolutional network with hand-written backward pass.
//!
//! Layout (FC-DenseNet style):
//!
//! ```text
//! input -> [stem conv] -> { dense block -> 1x1 conv -> 2x2 avg pool } x depth
//!       -> bottleneck dense block
//!       -> { 1x1 conv -> 2x upsample -> concat skip -> dense block } x depth
//!       -> 1x1 head conv -> softmax over classes
//! ```
//!
//! Inside a dense block every layer sees the concatenation of the block input
//! and all earlier layer outputs, so a block with input width `c0`, `L`
//! layers and growth `g` emits `c0 + L * g` channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, Activation, ConvShape, Tensor};
use crate::error::{Error, Result};
use crate::model::{BScan, ClassProbabilityMap, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub layers: usize,
    pub growth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    /// Width of the initial convolution; 0 feeds the input straight into the first block.
    pub stem_channels: usize,
    /// Number of 2x downsampling (and matching upsampling) levels.
    pub depth: usize,
    /// `2 * depth + 1` blocks: encoder levels top-down, bottleneck, decoder levels bottom-up.
    pub dense_blocks: Vec<BlockSpec>,
    /// Output width of the 1x1 transition convolutions.
    pub transition_channels: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::uniform(2, 3, 8)
    }
}

impl NetworkConfig {
    /// Every block with the same layer count and growth rate.
    pub fn uniform(depth: usize, layers: usize, growth: usize) -> Self {
        NetworkConfig {
            input_channels: 1,
            num_classes: NUM_CLASSES,
            stem_channels: 8,
            depth,
            dense_blocks: vec![BlockSpec { layers, growth }; 2 * depth + 1],
            transition_channels: 16,
            kernel_size: 3,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    /// No hidden layers: a single 1x1 convolution from input to class logits.
    pub fn linear() -> Self {
        NetworkConfig {
            stem_channels: 0,
            depth: 0,
            dense_blocks: vec![BlockSpec { layers: 0, growth: 1 }],
            ..NetworkConfig::uniform(0, 0, 1)
        }
    }

    /// Total downsampling factor.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_channels == 0 {
            return fail("input_channels must be >= 1".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes must be >= 2".into());
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.dense_blocks.len() != 2 * self.depth + 1 {
            return fail(format!(
                "depth {} needs {} dense blocks, got {}",
                self.depth,
                2 * self.depth + 1,
                self.dense_blocks.len()
            ));
        }
        if self.dense_blocks.iter().any(|b| b.growth == 0) {
            return fail("growth rate must be >= 1".into());
        }
        if self.depth > 0 && self.transition_channels == 0 {
            return fail("transition_channels must be >= 1".into());
        }
        if self.depth > 16 {
            return fail(format!("depth {} is unreasonably large", self.depth));
        }
        Ok(())
    }
}

/// One named tensor of trainable values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// All trainable values of a network, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    pub groups: Vec<ParamGroup>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Parameters {
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup {
                    name: g.name.clone(),
                    shape: g.shape.clone(),
                    values: vec![0.0; g.values.len()],
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.values.iter().all(|v| v.is_finite()))
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    /// `self += scale * other`, group by group.
    pub fn add_scaled(&mut self, scale: f64, other: &Parameters) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.groups {
            g.values.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    shape: ConvShape,
    /// Index of the weight group; the bias group follows it.
    weight: usize,
}

#[derive(Debug, Clone)]
struct Block {
    in_channels: usize,
    growth: usize,
    layers: Vec<Conv>,
}

impl Block {
    fn out_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth
    }
}

#[derive(Debug, Clone)]
struct DownLevel {
    block: Block,
    transition: Conv,
}

#[derive(Debug, Clone)]
struct UpLevel {
    transition: Conv,
    block: Block,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    stem: Option<Tensor>,
    /// Per level: block features and the activated transition output (pre-pool).
    down: Vec<(Tensor, Tensor)>,
    bottleneck: Tensor,
    /// Per level, in execution order (deepest first): low-res transition output and block features.
    up: Vec<(Tensor, Tensor)>,
}

/// A compiled network layout; parameters are passed separately.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    names: Vec<(String, Vec<usize>)>,
    stem: Option<Conv>,
    down: Vec<DownLevel>,
    bottleneck: Block,
    /// Indexed by level (0 = full resolution).
    up: Vec<UpLevel>,
    head: Conv,
}

struct Builder {
    names: Vec<(String, Vec<usize>)>,
    kernel: usize,
}

impl Builder {
    fn conv(&mut self, name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Conv {
        let weight = self.names.len();
        self.names
            .push((format!("{name}.weight"), vec![out_channels, in_channels, kernel, kernel]));
        self.names.push((format!("{name}.bias"), vec![out_channels]));
        Conv {
            shape: ConvShape {
                in_channels,
                out_channels,
                kernel,
            },
            weight,
        }
    }

    fn block(&mut self, name: &str, in_channels: usize, spec: BlockSpec) -> Block {
        let layers = (0..spec.layers)
            .map(|i| {
                let k = self.kernel;
                self.conv(&format!("{name}.layer{i}"), in_channels + i * spec.growth, spec.growth, k)
            })
            .collect();
        Block {
            in_channels,
            growth: spec.growth,
            layers,
        }
    }
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            kernel: config.kernel_size,
        };
        let depth = config.depth;
        let stem = (config.stem_channels > 0)
            .then(|| b.conv("stem", config.input_channels, config.stem_channels, config.kernel_size));
        let mut width = if stem.is_some() {
            config.stem_channels
        } else {
            config.input_channels
        };
        let mut down = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        for l in 0..depth {
            let block = b.block(&format!("down{l}.block"), width, config.dense_blocks[l]);
            skips.push(block.out_channels());
            let transition = b.conv(
                &format!("down{l}.transition"),
                block.out_channels(),
                config.transition_channels,
                1,
            );
            width = config.transition_channels;
            down.push(DownLevel { block, transition });
        }
        let bottleneck = b.block("bottleneck", width, config.dense_blocks[depth]);
        width = bottleneck.out_channels();
        let mut up_rev = Vec::with_capacity(depth);
        for (i, l) in (0..depth).rev().enumerate() {
            let transition = b.conv(&format!("up{l}.transition"), width, config.transition_channels, 1);
            let block = b.block(
                &format!("up{l}.block"),
                config.transition_channels + skips[l],
                config.dense_blocks[depth + 1 + i],
            );
            width = block.out_channels();
            up_rev.push(UpLevel { transition, block });
        }
        up_rev.reverse();
        let head = b.conv("head", width, config.num_classes, 1);
        Ok(Network {
            config,
            names: b.names,
            stem,
            down,
            bottleneck,
            up: up_rev,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Parameter group names and shapes in storage order.
    pub fn group_layout(&self) -> &[(String, Vec<usize>)] {
        &self.names
    }

    /// Output width of every dense block: encoder, bottleneck, decoder (deepest first).
    pub fn block_widths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.down.iter().map(|d| d.block.out_channels()).collect();
        out.push(self.bottleneck.out_channels());
        out.extend(self.up.iter().rev().map(|u| u.block.out_channels()));
        out
    }

    /// He-normal weights, zero biases, drawn from the config seed.
    pub fn init_params(&self) -> Parameters {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let groups = self
            .names
            .iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let values = if name.ends_with(".bias") {
                    vec![0.0; len]
                } else {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                    let gain = if name.starts_with("head") { 1.0 } else { 2.0 };
                    let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("finite std");
                    (0..len).map(|_| normal.sample(&mut rng)).collect()
                };
                ParamGroup {
                    name: name.clone(),
                    shape: shape.clone(),
                    values,
                }
            })
            .collect();
        Parameters { groups }
    }

    /// Checks that `params` has this network's groups and shapes.
    pub fn check_params(&self, params: &Parameters) -> Result<()> {
        if params.groups.len() != self.names.len() {
            return Err(Error::Shape(format!(
                "network has {} parameter groups, got {}",
                self.names.len(),
                params.groups.len()
            )));
        }
        for (g, (name, shape)) in params.groups.iter().zip(&self.names) {
            if &g.name != name || &g.shape != shape || g.values.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "parameter group '{}' {:?} does not match expected '{name}' {shape:?}",
                    g.name, g.shape
                )));
            }
        }
        Ok(())
    }

    fn conv_forward(&self, conv: Conv, params: &Parameters, input: &[f64], h: usize, w: usize) -> Tensor {
        let mut out = Tensor::zeros(conv.shape.out_channels, h, w);
        ops::conv2d_forward(
            conv.shape,
            h,
            w,
            input,
            &params.groups[conv.weight].values,
            &params.groups[conv.weight + 1].values,
            &mut out.data,
        );
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        conv: Conv,
        params: &Parameters,
        input: &[f64],
        h: usize,
        w: usize,
        grad_out: &[f64],
        grad_input: Option<&mut [f64]>,
        grads: &mut Parameters,
    ) {
        let [gw, gb] = &mut grads.groups[conv.weight..conv.weight + 2] else {
            unreachable!("weight and bias groups are adjacent")
        };
        ops::conv2d_backward(
            conv.shape,
            h,
            w,
            input,
            &params.groups[conv.weight].values,
            grad_out,
            grad_input,
            &mut gw.values,
            &mut gb.values,
        );
    }

    /// `inputs` are written into the leading channels of the block features.
    fn block_forward(&self, block: &Block, params: &Parameters, inputs: &[&[f64]], h: usize, w: usize) -> Tensor {
        let n = h * w;
        let mut features = Tensor::zeros(block.out_channels(), h, w);
        let mut offset = 0;
        for part in inputs {
            features.data[offset..offset + part.len()].copy_from_slice(part);
            offset += part.len();
        }
        debug_assert_eq!(offset, block.in_channels * n);
        for (i, conv) in block.layers.iter().enumerate() {
            let cin = block.in_channels + i * block.growth;
            let (head, tail) = features.data.split_at_mut(cin * n);
            let out = &mut tail[..block.growth * n];
            ops::conv2d_forward(
                conv.shape,
                h,
                w,
                head,
                &params.groups[conv.weight].values,
                &params.groups[conv.weight + 1].values,
                out,
            );
            self.config.activation.apply(out);
        }
        features
    }

    /// Consumes the gradient of the full block output; returns the gradient of the block input.
    fn block_backward(
        &self,
        block: &Block,
        params: &Parameters,
        features: &Tensor,
        mut grad: Vec<f64>,
        grads: &mut Parameters,
    ) -> Vec<f64> {
        let (h, w) = (features.height, features.width);
        let n = h * w;
        for (i, conv) in block.layers.iter().enumerate().rev() {
            let cin = block.in_channels + i * block.growth;
            let (g_head, g_tail) = grad.split_at_mut(cin * n);
            let g_out = &mut g_tail[..block.growth * n];
            self.config
                .activation
                .backward(features.channel_range(cin, cin + block.growth), g_out);
            self.conv_backward(*conv, params, features.prefix(cin), h, w, g_out, Some(g_head), grads);
        }
        grad.truncate(block.in_channels * n);
        grad
    }

    /// Forward pass on a tensor whose spatial dims are multiples of the stride.
    /// Returns class probabilities (class-major) and the cache for [`Network::backward`].
    pub fn forward_tensor(&self, params: &Parameters, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let stride = self.config.stride();
        if input.channels != self.config.input_channels || !input.height.is_multiple_of(stride) || !input.width.is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "input {}x{}x{} incompatible with {} channel(s) and stride {stride}",
                input.channels, input.height, input.width, self.config.input_channels
            )));
        }
        let (mut h, mut w) = (input.height, input.width);
        let act = self.config.activation;

        let stem = self.stem.map(|conv| {
            let mut t = self.conv_forward(conv, params, &input.data, h, w);
            act.apply(&mut t.data);
            t
        });
        let mut cur: Vec<f64> = stem.as_ref().map_or_else(|| input.data.clone(), |t| t.data.clone());

        let mut down_cache = Vec::with_capacity(self.down.len());
        for level in &self.down {
            let features = self.block_forward(&level.block, params, &[&cur], h, w);
            let mut t = self.conv_forward(level.transition, params, &features.data, h, w);
            act.apply(&mut t.data);
            cur = ops::avg_pool2(t.channels, h, w, &t.data);
            h /= 2;
            w /= 2;
            down_cache.push((features, t));
        }

        let bottleneck = self.block_forward(&self.bottleneck, params, &[&cur], h, w);
        let mut last = bottleneck.clone();
        let mut up_cache = Vec::with_capacity(self.up.len());
        for (l, level) in self.up.iter().enumerate().rev() {
            let mut t = self.conv_forward(level.transition, params, &last.data, h, w);
            act.apply(&mut t.data);
            let mut upsampled = vec![0.0; t.data.len() * 4];
            ops::upsample2(t.channels, h, w, &t.data, &mut upsampled);
            h *= 2;
            w *= 2;
            let skip = &down_cache[l].0;
            let features = self.block_forward(&level.block, params, &[&upsampled, &skip.data], h, w);
            up_cache.push((t, features.clone()));
            last = features;
        }

        let mut probs = self.conv_forward(self.head, params, &last.data, h, w);
        ops::softmax_channels(probs.channels, h * w, &mut probs.data);
        let cache = ForwardCache {
            input: input.clone(),
            stem,
            down: down_cache,
            bottleneck,
            up: up_cache,
        };
        Ok((probs, cache))
    }

    /// Backpropagates the gradient of a loss with respect to the head logits.
    pub fn backward(&self, params: &Parameters, cache: &ForwardCache, grad_logits: &Tensor) -> Parameters {
        let mut grads = params.zeros_like();
        let act = self.config.activation;
        let depth = self.down.len();
        let (mut h, mut w) = (cache.input.height, cache.input.width);

        let last = cache.up.last().map_or(&cache.bottleneck, |(_, f)| f);
        let mut g_last = vec![0.0; last.data.len()];
        self.conv_backward(self.head, params, &last.data, h, w, &grad_logits.data, Some(&mut g_last), &mut grads);

        // Decoder, shallowest level first (reverse of execution order).
        let mut skip_grads: Vec<Vec<f64>> = vec![Vec::new(); depth];
        for (l, level) in self.up.iter().enumerate() {
            let exec = depth - 1 - l;
            let (t, features) = &cache.up[exec];
            let g_in = self.block_backward(&level.block, params, features, g_last, &mut grads);
            let n = h * w;
            let (g_up, g_skip) = g_in.split_at(level.transition.shape.out_channels * n);
            skip_grads[l] = g_skip.to_vec();
            let mut g_t = ops::upsample2_backward(t.channels, h / 2, w / 2, g_up);
            h /= 2;
            w /= 2;
            act.backward(&t.data, &mut g_t);
            let below = if exec == 0 {
                &cache.bottleneck
            } else {
                &cache.up[exec - 1].1
            };
            let mut g_below = vec![0.0; below.data.len()];
            self.conv_backward(level.transition, params, &below.data, h, w, &g_t, Some(&mut g_below), &mut grads);
            g_last = g_below;
        }

        let mut g_cur = self.block_backward(&self.bottleneck, params, &cache.bottleneck, g_last, &mut grads);

        for (l, level) in self.down.iter().enumerate().rev() {
            let (features, t) = &cache.down[l];
            let mut g_t = ops::avg_pool2_backward(t.channels, h * 2, w * 2, &g_cur);
            h *= 2;
            w *= 2;
            act.backward(&t.data, &mut g_t);
            let mut g_features = std::mem::take(&mut skip_grads[l]);
            if g_features.is_empty() {
                g_features = vec![0.0; features.data.len()];
            }
            self.conv_backward(level.transition, params, &features.data, h, w, &g_t, Some(&mut g_features), &mut grads);
            g_cur = self.block_backward(&level.block, params, features, g_features, &mut grads);
        }

        if let (Some(conv), Some(stem)) = (self.stem, &cache.stem) {
            act.backward(&stem.data, &mut g_cur);
            self.conv_backward(conv, params, &cache.input.data, h, w, &g_cur, None, &mut grads);
        }
        grads
    }

    /// Pads `scan` up to a multiple of the stride by reflection, runs the
    /// network, and crops the probabilities back to the scan's shape.
    pub fn forward(&self, params: &Parameters, scan: &BScan) -> Result<ClassProbabilityMap> {
        self.check_params(params)?;
        let (h, w) = (scan.height(), scan.width());
        let input = self.padded_input(scan);
        let (probs, _) = self.forward_tensor(params, &input)?;
        Ok(crop_probs(&probs, h, w))
    }

    /// Single-channel input tensor, reflect-padded at the bottom and right.
    pub fn padded_input(&self, scan: &BScan) -> Tensor {
        let stride = self.config.stride();
        let (h, w) = (scan.height(), scan.width());
        let (ph, pw) = (h.div_ceil(stride) * stride, w.div_ceil(stride) * stride);
        let mut t = Tensor::zeros(1, ph, pw);
        for r in 0..ph {
            let sr = reflect(r, h);
            for c in 0..pw {
                t.data[r * pw + c] = scan.pixels.at(sr, reflect(c, w));
            }
        }
        t
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

pub(crate) fn crop_probs(probs: &Tensor, h: usize, w: usize) -> ClassProbabilityMap {
    let (ph, pw) = (probs.height, probs.width);
    let mut data = Vec::with_capacity(probs.channels * h * w);
    for k in 0..probs.channels {
        for r in 0..h {
            let start = (k * ph + r) * pw;
            data.extend_from_slice(&probs.data[start..start + w]);
        }
    }
    ClassProbabilityMap::from_class_major(probs.channels, h, w, data).expect("crop dimensions are consistent")
}
