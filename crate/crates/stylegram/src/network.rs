//! Convolutional trunk: stacked 3x3 conv + ReLU layers with optional 2x2
//! average pooling between blocks.
//!
//! The forward pass records every post-ReLU activation volume; the backward
//! pass takes gradients injected at any subset of recorded layers and
//! accumulates them down to the input pixels. Only what style transfer
//! needs is implemented: no training, no fully connected head.

use std::collections::BTreeMap;
use std::fmt;

use crate::parallel;
use crate::rng::SplitMix64;
use crate::tensor::ActivationVolume;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkError {
    /// Input channel count does not match the layer's kernel.
    ChannelMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    /// Input spatial size is incompatible with the pooling schedule.
    SpatialDivisibility {
        required: usize,
        width: usize,
        height: usize,
    },
    /// A gradient was injected for a layer the network does not record.
    UnknownLayer { name: String },
    /// An injected gradient volume does not match the recorded shape.
    GradientShape { layer: String },
    /// Kernel/bias buffer lengths disagree with the declared channel counts.
    WeightShape {
        layer: String,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::ChannelMismatch {
                layer,
                expected,
                got,
            } => {
                write!(
                    f,
                    "layer {layer}: expected {expected} input channels, got {got}"
                )
            }
            NetworkError::SpatialDivisibility {
                required,
                width,
                height,
            } => write!(
                f,
                "input {width}x{height} must be divisible by {required} for the pooling schedule"
            ),
            NetworkError::UnknownLayer { name } => {
                write!(f, "no recorded layer named {name}")
            }
            NetworkError::GradientShape { layer } => {
                write!(f, "injected gradient shape mismatch at layer {layer}")
            }
            NetworkError::WeightShape {
                layer,
                expected,
                got,
            } => {
                write!(
                    f,
                    "layer {layer}: weight buffer length {got}, expected {expected}"
                )
            }
        }
    }
}

impl std::error::Error for NetworkError {}

/// Static description of one conv layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    /// 1-based depth index d(l).
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// 2x2 average pooling applied after this layer's ReLU.
    pub pool_after: bool,
}

/// Kernel and bias for one 3x3 conv layer.
///
/// The kernel is flattened as `[out][in][kx][ky]` with `kx`, `ky` in
/// `0..3`; index 1 is the center tap.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerWeights {
    pub fn new(
        layer: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, NetworkError> {
        let expected = out_channels * in_channels * 9;
        if kernel.len() != expected {
            return Err(NetworkError::WeightShape {
                layer: layer.to_string(),
                expected,
                got: kernel.len(),
            });
        }
        if bias.len() != out_channels {
            return Err(NetworkError::WeightShape {
                layer: layer.to_string(),
                expected: out_channels,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            bias,
        })
    }

    #[inline]
    fn tap(&self, o: usize, i: usize, kx: usize, ky: usize) -> f64 {
        self.kernel[((o * self.in_channels + i) * 3 + kx) * 3 + ky]
    }
}

/// All conv-layer weights of a network, aligned with its `LayerSpec` list.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<LayerWeights>,
}

/// Post-ReLU activation volumes recorded by a forward pass, in layer order.
#[derive(Debug, Clone)]
pub struct ActivationSet {
    names: Vec<String>,
    volumes: Vec<ActivationVolume>,
}

impl ActivationSet {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn volume(&self, position: usize) -> &ActivationVolume {
        &self.volumes[position]
    }

    pub fn name(&self, position: usize) -> &str {
        &self.names[position]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&ActivationVolume> {
        self.position(name).map(|i| &self.volumes[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ActivationVolume)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.volumes.iter())
    }
}

/// A stack of 3x3 conv layers with its weights.
#[derive(Debug, Clone)]
pub struct Network {
    pub specs: Vec<LayerSpec>,
    pub weights: NetworkWeights,
    pooling: PoolKind,
}

/// The fixed channel progression of the 16 conv layers.
pub const VGG19_CHANNELS: [usize; 16] = [
    64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512,
];

/// Layer table for the VGG-19 convolutional trunk: conv1_1 .. conv5_4,
/// pooling after conv1_2, conv2_2, conv3_4 and conv4_4.
pub fn vgg19_layer_specs() -> Vec<LayerSpec> {
    let block_sizes = [2usize, 2, 4, 4, 4];
    let mut specs = Vec::with_capacity(16);
    let mut index = 0usize;
    let mut in_channels = 3usize;
    for (block, &size) in block_sizes.iter().enumerate() {
        for layer in 0..size {
            let out_channels = VGG19_CHANNELS[index];
            index += 1;
            specs.push(LayerSpec {
                name: format!("conv{}_{}", block + 1, layer + 1),
                index,
                in_channels,
                out_channels,
                pool_after: layer + 1 == size && block < 4,
            });
            in_channels = out_channels;
        }
    }
    specs
}

/// 3x3 cross-correlation with stride 1 and zero padding 1; output keeps the
/// input's spatial size. No kernel flip: `out(o,x,y) = b_o +
/// sum_i sum_{dx,dy} k[o,i,dx+1,dy+1] * f(i, x+dx, y+dy)`.
pub fn conv3x3_forward(
    f: &ActivationVolume,
    weights: &LayerWeights,
) -> Result<ActivationVolume, NetworkError> {
    if f.channels() != weights.in_channels {
        return Err(NetworkError::ChannelMismatch {
            layer: String::new(),
            expected: weights.in_channels,
            got: f.channels(),
        });
    }
    let (w, h) = (f.width(), f.height());
    let mut out = ActivationVolume::zeros(weights.out_channels, w, h);
    parallel::for_each_chunk_mut(
        out.data_mut(),
        w * h,
        weights.in_channels * 9,
        |o, chunk| {
            chunk.fill(weights.bias[o]);
            for i in 0..weights.in_channels {
                let src = f.channel(i);
                for kx in 0..3usize {
                    let dx = kx as i64 - 1;
                    for ky in 0..3usize {
                        let dy = ky as i64 - 1;
                        let k = weights.tap(o, i, kx, ky);
                        if k == 0.0 {
                            continue;
                        }
                        accumulate_tap(chunk, src, w, h, dx, dy, k);
                    }
                }
            }
        },
    );
    Ok(out)
}

/// Gradient of [`conv3x3_forward`] with respect to its input: the
/// transposed-kernel correlation of the output gradient.
fn conv3x3_backward_input(grad_out: &ActivationVolume, weights: &LayerWeights) -> ActivationVolume {
    let (w, h) = (grad_out.width(), grad_out.height());
    let mut grad_in = ActivationVolume::zeros(weights.in_channels, w, h);
    parallel::for_each_chunk_mut(
        grad_in.data_mut(),
        w * h,
        weights.out_channels * 9,
        |i, chunk| {
            for o in 0..weights.out_channels {
                let src = grad_out.channel(o);
                for kx in 0..3usize {
                    let dx = kx as i64 - 1;
                    for ky in 0..3usize {
                        let dy = ky as i64 - 1;
                        let k = weights.tap(o, i, kx, ky);
                        if k == 0.0 {
                            continue;
                        }
                        // adjoint of the (dx, dy) tap reads at (-dx, -dy)
                        accumulate_tap(chunk, src, w, h, -dx, -dy, k);
                    }
                }
            }
        },
    );
    grad_in
}

/// `dst(x, y) += k * src(x + dx, y + dy)` over the in-bounds region, with
/// the contiguous `y` runs expressed as slice operations.
#[inline]
fn accumulate_tap(dst: &mut [f64], src: &[f64], w: usize, h: usize, dx: i64, dy: i64, k: f64) {
    let x0 = (-dx).max(0) as usize;
    let x1 = ((w as i64 - dx).min(w as i64)).max(0) as usize;
    let y0 = (-dy).max(0) as usize;
    let y1 = ((h as i64 - dy).min(h as i64)).max(0) as usize;
    if y0 >= y1 {
        return;
    }
    for x in x0..x1 {
        let sx = (x as i64 + dx) as usize;
        let d = &mut dst[x * h + y0..x * h + y1];
        let s = &src[sx * h + (y0 as i64 + dy) as usize..sx * h + (y1 as i64 + dy) as usize];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += k * sv;
        }
    }
}

fn relu_in_place(v: &mut ActivationVolume) {
    for x in v.data_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Pooling operator applied between blocks. Average is the default:
/// it gives smoother pixel gradients for statistic matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolKind {
    #[default]
    Average,
    Max,
}

/// 2x2 max pooling with stride 2.
fn max_pool(f: &ActivationVolume) -> ActivationVolume {
    let (k_n, h) = (f.channels(), f.height());
    let (ow, oh) = (f.width() / 2, f.height() / 2);
    let mut out = ActivationVolume::zeros(k_n, ow, oh);
    parallel::for_each_chunk_mut(out.data_mut(), ow * oh, 4, |k, chunk| {
        let src = f.channel(k);
        for x in 0..ow {
            for y in 0..oh {
                let base = (2 * x) * h + 2 * y;
                chunk[x * oh + y] = src[base]
                    .max(src[base + 1])
                    .max(src[base + h])
                    .max(src[base + h + 1]);
            }
        }
    });
    out
}

/// Backward of [`max_pool`]: the gradient flows to the first cell (scan
/// order) attaining the block maximum in the recorded input.
fn max_pool_backward(grad: &ActivationVolume, source: &ActivationVolume) -> ActivationVolume {
    let (k_n, oh) = (grad.channels(), grad.height() * 2);
    let (gw, gh) = (grad.width(), grad.height());
    let mut out = ActivationVolume::zeros(k_n, gw * 2, oh);
    parallel::for_each_chunk_mut(out.data_mut(), gw * 2 * oh, 1, |k, chunk| {
        let g = grad.channel(k);
        let src = source.channel(k);
        for x in 0..gw {
            for y in 0..gh {
                let base = (2 * x) * oh + 2 * y;
                let cells = [base, base + 1, base + oh, base + oh + 1];
                let mut best = cells[0];
                for &cell in &cells[1..] {
                    if src[cell] > src[best] {
                        best = cell;
                    }
                }
                chunk[best] = g[x * gh + y];
            }
        }
    });
    out
}

/// 2x2 average pooling with stride 2.
fn avg_pool(f: &ActivationVolume) -> ActivationVolume {
    let (k_n, h) = (f.channels(), f.height());
    let (ow, oh) = (f.width() / 2, f.height() / 2);
    let mut out = ActivationVolume::zeros(k_n, ow, oh);
    parallel::for_each_chunk_mut(out.data_mut(), ow * oh, 4, |k, chunk| {
        let src = f.channel(k);
        for x in 0..ow {
            for y in 0..oh {
                let base = (2 * x) * h + 2 * y;
                chunk[x * oh + y] =
                    0.25 * (src[base] + src[base + 1] + src[base + h] + src[base + h + 1]);
            }
        }
    });
    out
}

/// Backward of [`avg_pool`]: each coarse-grid gradient cell contributes a
/// quarter to each of the four cells it pooled.
fn avg_pool_backward(grad: &ActivationVolume) -> ActivationVolume {
    let (k_n, oh) = (grad.channels(), grad.height() * 2);
    let (gw, gh) = (grad.width(), grad.height());
    let mut out = ActivationVolume::zeros(k_n, gw * 2, oh);
    parallel::for_each_chunk_mut(out.data_mut(), gw * 2 * oh, 1, |k, chunk| {
        let src = grad.channel(k);
        for x in 0..gw {
            for y in 0..gh {
                let g = 0.25 * src[x * gh + y];
                let base = (2 * x) * oh + 2 * y;
                chunk[base] = g;
                chunk[base + 1] = g;
                chunk[base + oh] = g;
                chunk[base + oh + 1] = g;
            }
        }
    });
    out
}

impl Network {
    pub fn new(specs: Vec<LayerSpec>, weights: NetworkWeights) -> Self {
        assert_eq!(specs.len(), weights.layers.len());
        Self {
            specs,
            weights,
            pooling: PoolKind::default(),
        }
    }

    pub fn with_pooling(mut self, pooling: PoolKind) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn pooling(&self) -> PoolKind {
        self.pooling
    }

    fn pool(&self, f: &ActivationVolume) -> ActivationVolume {
        match self.pooling {
            PoolKind::Average => avg_pool(f),
            PoolKind::Max => max_pool(f),
        }
    }

    fn pool_backward(
        &self,
        grad: &ActivationVolume,
        source: &ActivationVolume,
    ) -> ActivationVolume {
        match self.pooling {
            PoolKind::Average => avg_pool_backward(grad),
            PoolKind::Max => max_pool_backward(grad, source),
        }
    }

    /// Number of pooling stages, i.e. the input must be divisible by
    /// `2^pool_count` in both spatial dimensions.
    pub fn pool_count(&self) -> usize {
        self.specs.iter().filter(|s| s.pool_after).count()
    }

    pub fn layer_position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Forward pass recording every post-ReLU activation volume.
    pub fn forward_record(&self, image: &ActivationVolume) -> Result<ActivationSet, NetworkError> {
        let required = 1usize << self.pool_count();
        if !image.width().is_multiple_of(required) || !image.height().is_multiple_of(required) {
            return Err(NetworkError::SpatialDivisibility {
                required,
                width: image.width(),
                height: image.height(),
            });
        }
        if image.channels() != self.specs[0].in_channels {
            return Err(NetworkError::ChannelMismatch {
                layer: self.specs[0].name.clone(),
                expected: self.specs[0].in_channels,
                got: image.channels(),
            });
        }

        let mut names = Vec::with_capacity(self.specs.len());
        let mut volumes: Vec<ActivationVolume> = Vec::with_capacity(self.specs.len());
        let mut current = image.clone();
        for (spec, layer) in self.specs.iter().zip(&self.weights.layers) {
            let mut out = conv3x3_forward(&current, layer).map_err(|e| match e {
                NetworkError::ChannelMismatch { expected, got, .. } => {
                    NetworkError::ChannelMismatch {
                        layer: spec.name.clone(),
                        expected,
                        got,
                    }
                }
                other => other,
            })?;
            relu_in_place(&mut out);
            names.push(spec.name.clone());
            current = if spec.pool_after {
                self.pool(&out)
            } else {
                out.clone()
            };
            volumes.push(out);
        }
        Ok(ActivationSet { names, volumes })
    }

    /// Back-propagate gradients injected at recorded layers down to the
    /// input image. The injected values are gradients of some loss with
    /// respect to the recorded post-ReLU volumes; ReLU gates them by the
    /// recorded sign pattern.
    pub fn backward_inject(
        &self,
        acts: &ActivationSet,
        grads: &BTreeMap<String, ActivationVolume>,
    ) -> Result<ActivationVolume, NetworkError> {
        let mut by_position: Vec<Option<&ActivationVolume>> = vec![None; self.specs.len()];
        for (name, grad) in grads {
            let pos = acts
                .position(name)
                .ok_or_else(|| NetworkError::UnknownLayer { name: name.clone() })?;
            if !grad.same_shape(acts.volume(pos)) {
                return Err(NetworkError::GradientShape {
                    layer: name.clone(),
                });
            }
            by_position[pos] = Some(grad);
        }

        let mut flowing: Option<ActivationVolume> = None;
        for pos in (0..self.specs.len()).rev() {
            let spec = &self.specs[pos];
            let recorded = acts.volume(pos);

            // gradient w.r.t. this layer's post-ReLU output
            let mut g_post = match flowing.take() {
                Some(g) => {
                    if spec.pool_after {
                        self.pool_backward(&g, recorded)
                    } else {
                        g
                    }
                }
                None => ActivationVolume::zeros(
                    recorded.channels(),
                    recorded.width(),
                    recorded.height(),
                ),
            };
            if let Some(injected) = by_position[pos] {
                g_post.accumulate(injected);
            }

            // ReLU gate: recorded zeros block the gradient
            for (g, a) in g_post.data_mut().iter_mut().zip(recorded.data()) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }

            flowing = Some(conv3x3_backward_input(&g_post, &self.weights.layers[pos]));
        }
        Ok(flowing.expect("network has at least one layer"))
    }

    /// Small randomly weighted network for desk-scale tests. `channel_plan`
    /// lists the output channels per layer, `pool_after` flags pooling per
    /// layer; weights are uniform in a fan-in scaled subrange of [-1, 1].
    pub fn toy(
        seed: u64,
        input_channels: usize,
        channel_plan: &[usize],
        pool_after: &[bool],
    ) -> Network {
        assert_eq!(channel_plan.len(), pool_after.len());
        let mut rng = SplitMix64::new(seed);
        let mut specs = Vec::with_capacity(channel_plan.len());
        let mut layers = Vec::with_capacity(channel_plan.len());
        let mut in_channels = input_channels;
        for (i, (&out_channels, &pool)) in channel_plan.iter().zip(pool_after).enumerate() {
            let scale = 1.0 / ((in_channels * 9) as f64).sqrt();
            let kernel: Vec<f64> = (0..out_channels * in_channels * 9)
                .map(|_| rng.next_signed_unit() * scale)
                .collect();
            let bias: Vec<f64> = (0..out_channels)
                .map(|_| rng.next_range(-0.1, 0.4))
                .collect();
            let name = format!("conv{}", i + 1);
            layers.push(LayerWeights::new(&name, in_channels, out_channels, kernel, bias).unwrap());
            specs.push(LayerSpec {
                name,
                index: i + 1,
                in_channels,
                out_channels,
                pool_after: pool,
            });
            in_channels = out_channels;
        }
        Network::new(specs, NetworkWeights { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorError;

    fn random_image(seed: u64, channels: usize, side: usize) -> ActivationVolume {
        let mut rng = SplitMix64::new(seed);
        let data = (0..channels * side * side)
            .map(|_| rng.next_unit())
            .collect();
        ActivationVolume::new(channels, side, side, data).unwrap()
    }

    fn vol(channels: usize, width: usize, height: usize, data: &[f64]) -> ActivationVolume {
        ActivationVolume::new(channels, width, height, data.to_vec()).unwrap()
    }

    #[test]
    fn vgg19_table_shape() {
        let specs = vgg19_layer_specs();
        assert_eq!(specs.len(), 16);
        assert_eq!(specs[0].name, "conv1_1");
        assert_eq!(specs[15].name, "conv5_4");
        assert_eq!(specs[0].in_channels, 3);
        let outs: Vec<usize> = specs.iter().map(|s| s.out_channels).collect();
        assert_eq!(outs.as_slice(), &VGG19_CHANNELS);
        let pooled: Vec<&str> = specs
            .iter()
            .filter(|s| s.pool_after)
            .map(|s| s.name.as_str())
            .collect();
        assert_eq!(pooled, ["conv1_2", "conv2_2", "conv3_4", "conv4_4"]);
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.index, i + 1);
        }
    }

    #[test]
    fn conv_zero_kernel_yields_bias() {
        let weights =
            LayerWeights::new("t", 2, 3, vec![0.0; 3 * 2 * 9], vec![0.5, -1.0, 2.0]).unwrap();
        let f = random_image(1, 2, 4);
        let out = conv3x3_forward(&f, &weights).unwrap();
        for o in 0..3 {
            for v in out.channel(o) {
                assert_eq!(*v, weights.bias[o]);
            }
        }
    }

    #[test]
    fn conv_center_weight_scales_single_cell() {
        let mut kernel = vec![0.0; 9];
        kernel[3 + 1] = 0.75; // center tap
        let weights = LayerWeights::new("t", 1, 1, kernel, vec![0.0]).unwrap();
        let f = ActivationVolume::new(1, 1, 1, vec![3.0]).unwrap();
        let out = conv3x3_forward(&f, &weights).unwrap();
        assert_eq!(out.data(), &[0.75 * 3.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut kernel = vec![0.0; 2 * 2 * 9];
        for c in 0..2 {
            kernel[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let weights = LayerWeights::new("t", 2, 2, kernel, vec![0.0, 0.0]).unwrap();
        let f = random_image(3, 2, 5);
        let out = conv3x3_forward(&f, &weights).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let weights = LayerWeights::new("t", 2, 1, vec![0.0; 18], vec![0.0]).unwrap();
        let f = ActivationVolume::zeros(3, 2, 2);
        assert!(matches!(
            conv3x3_forward(&f, &weights),
            Err(NetworkError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn forward_spatial_sizes_halve_per_block() {
        // Stand-in for the 32x32 -> 2x2 VGG claim at toy scale: two pools
        // quarter the final grid.
        let net = Network::toy(7, 3, &[2, 3, 2], &[true, true, false]);
        let image = random_image(2, 3, 8);
        let acts = net.forward_record(&image).unwrap();
        assert_eq!(acts.len(), 3);
        assert_eq!(acts.volume(0).width(), 8);
        assert_eq!(acts.volume(1).width(), 4);
        assert_eq!(acts.volume(2).width(), 2);
    }

    #[test]
    fn forward_rejects_bad_divisibility() {
        let net = Network::toy(7, 3, &[2, 2], &[true, false]);
        let image = random_image(2, 3, 5);
        assert!(matches!(
            net.forward_record(&image),
            Err(NetworkError::SpatialDivisibility { required: 2, .. })
        ));
    }

    #[test]
    fn forward_records_nonnegative_volumes() {
        let net = Network::toy(11, 3, &[4, 3], &[true, false]);
        let acts = net.forward_record(&random_image(3, 3, 4)).unwrap();
        for (_, v) in acts.iter() {
            assert!(v.data().iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn zero_image_propagates_bias_constants() {
        // On a 1x1 grid only the center tap sees data, so each layer's
        // output is relu(b_o + sum_i k_center[o][i] * c_i) with c the
        // previous layer's constant. Checked against that direct recurrence.
        let net = Network::toy(13, 3, &[2, 2], &[false, false]);
        let image = ActivationVolume::zeros(3, 1, 1);
        let acts = net.forward_record(&image).unwrap();

        let mut constants = vec![0.0; 3];
        for (pos, layer) in net.weights.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.out_channels);
            for o in 0..layer.out_channels {
                let mut pre = layer.bias[o];
                for (i, c) in constants.iter().enumerate() {
                    pre += layer.tap(o, i, 1, 1) * c;
                }
                next.push(pre.max(0.0));
            }
            for (o, expect) in next.iter().enumerate() {
                assert!((acts.volume(pos).get(o, 0, 0) - expect).abs() < 1e-12);
            }
            constants = next;
        }
    }

    #[test]
    fn backward_zero_injection_gives_zero_pixel_grad() {
        let net = Network::toy(17, 3, &[2, 3], &[true, false]);
        let image = random_image(5, 3, 4);
        let acts = net.forward_record(&image).unwrap();
        let mut grads = BTreeMap::new();
        let last = acts.volume(1);
        grads.insert(
            "conv2".to_string(),
            ActivationVolume::zeros(last.channels(), last.width(), last.height()),
        );
        let g = net.backward_inject(&acts, &grads).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_rejects_unknown_layer() {
        let net = Network::toy(17, 3, &[2], &[false]);
        let acts = net.forward_record(&random_image(5, 3, 4)).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("conv9".to_string(), ActivationVolume::zeros(2, 4, 4));
        assert!(matches!(
            net.backward_inject(&acts, &grads),
            Err(NetworkError::UnknownLayer { .. })
        ));
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let net = Network::toy(17, 3, &[2], &[false]);
        let acts = net.forward_record(&random_image(5, 3, 4)).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("conv1".to_string(), ActivationVolume::zeros(2, 2, 2));
        assert!(matches!(
            net.backward_inject(&acts, &grads),
            Err(NetworkError::GradientShape { .. })
        ));
    }

    #[test]
    fn backward_is_linear_in_injected_gradients() {
        let net = Network::toy(19, 3, &[2, 3], &[true, false]);
        let image = random_image(23, 3, 4);
        let acts = net.forward_record(&image).unwrap();

        let g1 = random_image(29, 3, 2);
        let g2 = random_image(31, 3, 2);
        let mut sum = g1.clone();
        sum.accumulate(&g2);

        let run = |g: &ActivationVolume| {
            let mut grads = BTreeMap::new();
            grads.insert("conv2".to_string(), g.clone());
            net.backward_inject(&acts, &grads).unwrap()
        };
        let combined = run(&sum);
        let mut separate = run(&g1);
        separate.accumulate(&run(&g2));
        for (a, b) in combined.data().iter().zip(separate.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_injection_matches_brute_force_jacobian() {
        // Loss = <g, F> for one conv+ReLU layer; the pixel gradient column
        // for pixel p is g . dF/dp, recovered by forward differencing the
        // linear-in-pixels network (exact up to ReLU gating at 0).
        let net = Network::toy(37, 3, &[2], &[false]);
        let image = random_image(41, 3, 4);
        let acts = net.forward_record(&image).unwrap();
        let upstream = random_image(43, 2, 4);

        let mut grads = BTreeMap::new();
        grads.insert("conv1".to_string(), upstream.clone());
        let analytic = net.backward_inject(&acts, &grads).unwrap();

        let eps = 1e-6;
        for flat in 0..image.data().len() {
            let mut plus = image.clone();
            plus.data_mut()[flat] += eps;
            let mut minus = image.clone();
            minus.data_mut()[flat] -= eps;
            let f_plus = net.forward_record(&plus).unwrap();
            let f_minus = net.forward_record(&minus).unwrap();
            let df =
                (upstream.dot(f_plus.volume(0)) - upstream.dot(f_minus.volume(0))) / (2.0 * eps);
            assert!(
                (df - analytic.data()[flat]).abs() < 1e-6,
                "pixel {flat}: fd {df} vs analytic {}",
                analytic.data()[flat]
            );
        }
    }

    #[test]
    fn layer_weights_reject_bad_lengths() {
        assert!(matches!(
            LayerWeights::new("t", 2, 2, vec![0.0; 10], vec![0.0; 2]),
            Err(NetworkError::WeightShape { .. })
        ));
        assert!(matches!(
            LayerWeights::new("t", 1, 2, vec![0.0; 18], vec![0.0; 3]),
            Err(NetworkError::WeightShape { .. })
        ));
    }

    #[test]
    fn pool_backward_distributes_quarter() {
        let g = ActivationVolume::new(1, 1, 1, vec![8.0]).unwrap();
        let back = avg_pool_backward(&g);
        assert_eq!(back.data(), &[2.0, 2.0, 2.0, 2.0]);
        // adjoint check against avg_pool
        let a = random_image(47, 2, 4);
        let b = random_image(53, 2, 2);
        let lhs = avg_pool(&a).dot(&b);
        let rhs = a.dot(&avg_pool_backward(&b));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn max_pool_switch_forward_and_backward() {
        let f = vol(1, 2, 2, &[1.0, 4.0, 2.0, 3.0]);
        let pooled = max_pool(&f);
        assert_eq!(pooled.data(), &[4.0]);
        // gradient routes to the argmax cell only
        let g = ActivationVolume::new(1, 1, 1, vec![5.0]).unwrap();
        let back = max_pool_backward(&g, &f);
        assert_eq!(back.data(), &[0.0, 5.0, 0.0, 0.0]);
        // first-wins tie break
        let tied = vol(1, 2, 2, &[7.0, 7.0, 7.0, 7.0]);
        let back = max_pool_backward(&g, &tied);
        assert_eq!(back.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pooling_switch_changes_forward() {
        let avg_net = Network::toy(61, 3, &[2, 2], &[true, false]);
        let max_net = avg_net.clone().with_pooling(PoolKind::Max);
        assert_eq!(avg_net.pooling(), PoolKind::Average);
        let image = random_image(67, 3, 4);
        let a = avg_net.forward_record(&image).unwrap();
        let b = max_net.forward_record(&image).unwrap();
        assert_eq!(a.volume(0).data(), b.volume(0).data());
        assert_ne!(a.volume(1).data(), b.volume(1).data());
    }

    /// Loss L(image) = sum_l <c_l, F_l> with constants injected at both
    /// layers of a two-layer net (channels 2 and 3, one pool between):
    /// the analytic pixel gradient must match central differences.
    #[test]
    fn multi_layer_injection_matches_finite_differences() {
        for pooling in [PoolKind::Average, PoolKind::Max] {
            let net = Network::toy(71, 3, &[2, 3], &[true, false]).with_pooling(pooling);
            let image = random_image(73, 3, 4);
            let acts = net.forward_record(&image).unwrap();

            let c1 = random_image(79, 2, 4);
            let c2 = random_image(83, 3, 2);
            let mut grads = BTreeMap::new();
            grads.insert("conv1".to_string(), c1.clone());
            grads.insert("conv2".to_string(), c2.clone());
            let analytic = net.backward_inject(&acts, &grads).unwrap();

            let loss = |img: &ActivationVolume| -> f64 {
                let acts = net.forward_record(img).unwrap();
                c1.dot(acts.volume(0)) + c2.dot(acts.volume(1))
            };
            let eps = 1e-5;
            let mut max_rel: f64 = 0.0;
            for flat in 0..image.data().len() {
                let mut plus = image.clone();
                plus.data_mut()[flat] += eps;
                let mut minus = image.clone();
                minus.data_mut()[flat] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let denom = fd.abs().max(analytic.data()[flat].abs()).max(1e-9);
                max_rel = max_rel.max((fd - analytic.data()[flat]).abs() / denom);
            }
            assert!(max_rel < 1e-6, "{pooling:?}: max relative error {max_rel}");
        }
    }

    #[test]
    fn volume_data_length_guard_holds() {
        assert!(matches!(
            ActivationVolume::new(2, 2, 2, vec![0.0; 7]),
            Err(TensorError::DataLength { .. })
        ));
    }
}
