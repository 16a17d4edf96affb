//! Fixed VGG-style feature extractor with named ReLU taps.
//!
//! Each convolution is followed by a ReLU whose output is addressed by a
//! [`LayerId`] such as `R42` (the ReLU after `conv4_2`). Blocks are separated by
//! 2x2 pooling. The encoder is never trained; gradients only flow back to the
//! input image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::cgwt::{Tensor, TensorFile};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward_input, conv2d_forward, pool_backward, pool_forward, pooled_extent,
    relu_backward, relu_forward, ConvKernel, FeatureMap, Image, Padding, PoolMode,
};

/// A ReLU tap, ordered by network depth (block, then position in block).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerId {
    block: u8,
    index: u8,
}

impl LayerId {
    pub const R11: LayerId = LayerId { block: 1, index: 1 };
    pub const R12: LayerId = LayerId { block: 1, index: 2 };
    pub const R21: LayerId = LayerId { block: 2, index: 1 };
    pub const R22: LayerId = LayerId { block: 2, index: 2 };
    pub const R31: LayerId = LayerId { block: 3, index: 1 };
    pub const R41: LayerId = LayerId { block: 4, index: 1 };
    pub const R42: LayerId = LayerId { block: 4, index: 2 };
    pub const R51: LayerId = LayerId { block: 5, index: 1 };

    /// The five conventional style taps, shallowest first.
    pub const STYLE_DEFAULT: [LayerId; 5] = [Self::R11, Self::R21, Self::R31, Self::R41, Self::R51];

    pub fn new(block: u8, index: u8) -> Result<Self> {
        if !(1..=9).contains(&block) || !(1..=9).contains(&index) {
            return Err(Error::UnknownLayer(format!("R{block}{index}")));
        }
        Ok(Self { block, index })
    }

    pub fn block(self) -> u8 {
        self.block
    }

    pub fn index(self) -> u8 {
        self.index
    }

    /// Name of the convolution feeding this ReLU, e.g. `conv4_2`.
    pub fn conv_name(self) -> String {
        format!("conv{}_{}", self.block, self.index)
    }

    /// Name of the decoder convolution mirroring this layer, e.g. `deconv4_2`.
    pub fn deconv_name(self) -> String {
        format!("deconv{}_{}", self.block, self.index)
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}{}", self.block, self.index)
    }
}

impl FromStr for LayerId {
    type Err = Error;

    /// Accepts `R42`, `r42`, `relu4_2` and `Relu4_2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownLayer(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        let digits: Vec<u8> = if let Some(rest) = lower.strip_prefix("relu") {
            let (b, i) = rest.split_once('_').ok_or_else(bad)?;
            vec![b.parse().map_err(|_| bad())?, i.parse().map_err(|_| bad())?]
        } else if let Some(rest) = lower.strip_prefix('r') {
            if rest.len() != 2 {
                return Err(bad());
            }
            rest.bytes()
                .map(|b| b.is_ascii_digit().then(|| b - b'0').ok_or_else(bad))
                .collect::<Result<_>>()?
        } else {
            return Err(bad());
        };
        LayerId::new(digits[0], digits[1]).map_err(|_| bad())
    }
}

/// A convolution (stride 1, "same" zero padding) followed by a ReLU tapped as `layer`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub layer: LayerId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn padding(&self) -> Padding {
        Padding::same(self.kernel)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stage {
    Conv(ConvSpec),
    Pool,
}

/// Encoder topology: an ordered list of conv+ReLU and pooling stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    stages: Vec<Stage>,
    pool_mode: PoolMode,
}

impl EncoderSpec {
    pub fn new(stages: Vec<Stage>, pool_mode: PoolMode) -> Result<Self> {
        let mut channels = 3;
        let mut last: Option<LayerId> = None;
        let mut any_conv = false;
        for stage in &stages {
            if let Stage::Conv(c) = stage {
                if c.in_channels != channels {
                    return Err(Error::Config(format!(
                        "{} expects {} input channels but the previous stage produces {channels}",
                        c.layer.conv_name(),
                        c.in_channels
                    )));
                }
                if c.out_channels == 0 || c.kernel == 0 || c.kernel % 2 == 0 {
                    return Err(Error::Config(format!(
                        "{}: need positive width and odd kernel size",
                        c.layer.conv_name()
                    )));
                }
                if last.is_some_and(|l| l >= c.layer) {
                    return Err(Error::Config(format!(
                        "{} does not come after {} in depth order",
                        c.layer,
                        last.unwrap()
                    )));
                }
                last = Some(c.layer);
                channels = c.out_channels;
                any_conv = true;
            }
        }
        if !any_conv {
            return Err(Error::Config("encoder has no convolutions".into()));
        }
        Ok(Self { stages, pool_mode })
    }

    /// VGG-style layout: `convs[b]` 3x3 (or `kernel`) convolutions of width
    /// `widths[b]` in block `b + 1`, with a pooling stage between blocks when
    /// `pool` is set.
    pub fn vgg(widths: &[usize], convs: &[usize], kernel: usize, pool: bool) -> Result<Self> {
        if widths.len() != convs.len() || widths.is_empty() {
            return Err(Error::Config(
                "widths and per-block conv counts must align".into(),
            ));
        }
        let mut stages = Vec::new();
        let mut channels = 3;
        for (b, (&w, &n)) in widths.iter().zip(convs).enumerate() {
            if b > 0 && pool {
                stages.push(Stage::Pool);
            }
            for i in 0..n {
                stages.push(Stage::Conv(ConvSpec {
                    layer: LayerId::new(b as u8 + 1, i as u8 + 1)?,
                    in_channels: channels,
                    out_channels: w,
                    kernel,
                }));
                channels = w;
            }
        }
        Self::new(stages, PoolMode::Max)
    }

    /// VGG-19 truncated after `conv5_1`, widths 64/128/256/512/512.
    pub fn vgg19() -> Self {
        Self::vgg(&[64, 128, 256, 512, 512], &[2, 2, 4, 4, 1], 3, true).unwrap()
    }

    /// Small test encoder with widths 4/8/16/32/32 that still exposes
    /// R11, R21, R31, R41, R42 and R51.
    pub fn tiny() -> Self {
        Self::vgg(&[4, 8, 16, 32, 32], &[1, 1, 1, 2, 1], 3, true).unwrap()
    }

    /// Reconstructs a VGG-style topology from the `convB_I.weight` tensors of a
    /// weight file. With a pool mode, a pooling stage is inserted wherever the
    /// block number changes; with `None` the encoder has no pooling.
    pub fn infer(tensors: &TensorFile, pool_mode: Option<PoolMode>) -> Result<Self> {
        let mut convs = BTreeMap::new();
        for t in tensors.iter() {
            let Some(rest) = t.name.strip_prefix("conv") else {
                continue;
            };
            let Some(stem) = rest.strip_suffix(".weight") else {
                continue;
            };
            let layer: LayerId = format!("relu{stem}")
                .parse()
                .map_err(|_| Error::Format(format!("cannot parse layer from `{}`", t.name)))?;
            if t.dims.len() != 4 || t.dims[2] != t.dims[3] {
                return Err(Error::TensorShape {
                    name: t.name.clone(),
                    expected: vec![0, 0, 0, 0],
                    found: t.dims.clone(),
                });
            }
            convs.insert(layer, (t.dims[1], t.dims[0], t.dims[2]));
        }
        let mut stages = Vec::new();
        let mut prev_block = None;
        for (layer, (in_c, out_c, k)) in convs {
            if pool_mode.is_some() && prev_block.is_some_and(|b| b != layer.block()) {
                stages.push(Stage::Pool);
            }
            prev_block = Some(layer.block());
            stages.push(Stage::Conv(ConvSpec {
                layer,
                in_channels: in_c,
                out_channels: out_c,
                kernel: k,
            }));
        }
        Self::new(stages, pool_mode.unwrap_or_default())
    }

    pub fn with_pool_mode(mut self, mode: PoolMode) -> Self {
        self.pool_mode = mode;
        self
    }

    pub fn pool_mode(&self) -> PoolMode {
        self.pool_mode
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Conv(c) => Some(c),
            Stage::Pool => None,
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.convs().map(|c| c.layer)
    }

    pub fn contains(&self, layer: LayerId) -> bool {
        self.layers().any(|l| l == layer)
    }

    pub fn conv(&self, layer: LayerId) -> Option<&ConvSpec> {
        self.convs().find(|c| c.layer == layer)
    }

    pub fn channels(&self, layer: LayerId) -> Result<usize> {
        self.conv(layer)
            .map(|c| c.out_channels)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// Channel width of every tap.
    pub fn channel_widths(&self) -> BTreeMap<LayerId, usize> {
        self.convs().map(|c| (c.layer, c.out_channels)).collect()
    }

    /// Index of the stage producing `layer`.
    pub fn stage_index(&self, layer: LayerId) -> Result<usize> {
        self.stages
            .iter()
            .position(|s| matches!(s, Stage::Conv(c) if c.layer == layer))
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// Output shape of every stage for an `h x w` input, in stage order.
    pub fn stage_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let mut shape = (3, h, w);
        self.stages
            .iter()
            .map(|s| {
                shape = match s {
                    Stage::Conv(c) => (c.out_channels, shape.1, shape.2),
                    Stage::Pool => (shape.0, pooled_extent(shape.1), pooled_extent(shape.2)),
                };
                shape
            })
            .collect()
    }

    pub fn output_shape(
        &self,
        layer: LayerId,
        h: usize,
        w: usize,
    ) -> Result<(usize, usize, usize)> {
        Ok(self.stage_shapes(h, w)[self.stage_index(layer)?])
    }

    /// Number of pooling stages before `layer`.
    pub fn pools_before(&self, layer: LayerId) -> Result<usize> {
        let idx = self.stage_index(layer)?;
        Ok(self.stages[..idx]
            .iter()
            .filter(|s| matches!(s, Stage::Pool))
            .count())
    }

    /// Smallest image side for which every pooling window before `layer`
    /// covers real pixels: `2^(pools + 1)`.
    pub fn min_input_side(&self, layer: LayerId) -> Result<usize> {
        Ok(1 << (self.pools_before(layer)? + 1))
    }
}

/// Per-channel affine map applied to images before the first convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Preprocess {
    pub const IDENTITY: Preprocess = Preprocess {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn apply(&self, image: &Image) -> FeatureMap {
        let mut out = image.as_map().clone();
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in out.channel_mut(c) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn backward(&self, grad: &mut FeatureMap) {
        for c in 0..3 {
            let s = self.std[c];
            for v in grad.channel_mut(c) {
                *v /= s;
            }
        }
    }
}

/// An [`EncoderSpec`] with bound weights. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    kernels: Vec<ConvKernel>,
    preprocess: Preprocess,
}

impl Encoder {
    /// `kernels` holds one kernel per conv stage, in stage order.
    pub fn new(
        spec: EncoderSpec,
        kernels: Vec<ConvKernel>,
        preprocess: Preprocess,
    ) -> Result<Self> {
        let convs: Vec<_> = spec.convs().collect();
        if convs.len() != kernels.len() {
            return Err(Error::Config(format!(
                "encoder has {} convolutions but {} kernels were given",
                convs.len(),
                kernels.len()
            )));
        }
        for (c, k) in convs.iter().zip(&kernels) {
            let want = [c.out_channels, c.in_channels, c.kernel, c.kernel];
            if k.dims() != want {
                return Err(Error::TensorShape {
                    name: format!("{}.weight", c.layer.conv_name()),
                    expected: want.to_vec(),
                    found: k.dims().to_vec(),
                });
            }
        }
        if preprocess.std.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::Config(
                "preprocessing std must be finite and non-zero".into(),
            ));
        }
        Ok(Self {
            spec,
            kernels,
            preprocess,
        })
    }

    /// All-zero weights with identity preprocessing.
    pub fn zeros(spec: EncoderSpec) -> Self {
        let kernels = spec
            .convs()
            .map(|c| ConvKernel::zeros(c.out_channels, c.in_channels, c.kernel, c.kernel))
            .collect();
        Self::new(spec, kernels, Preprocess::IDENTITY).unwrap()
    }

    /// Binds weights from a tensor file, checking every shape against `spec`.
    pub fn from_tensors(spec: EncoderSpec, file: &TensorFile) -> Result<Self> {
        let mean = file.expect("preproc.mean", &[3])?.to_f64();
        let std = file.expect("preproc.std", &[3])?.to_f64();
        let mut kernels = Vec::new();
        let mut known = BTreeSet::from(["preproc.mean".to_string(), "preproc.std".to_string()]);
        for c in spec.convs() {
            let name = c.layer.conv_name();
            let dims = [c.out_channels, c.in_channels, c.kernel, c.kernel];
            let w = file.expect(&format!("{name}.weight"), &dims)?.to_f64();
            let b = file
                .expect(&format!("{name}.bias"), &[c.out_channels])?
                .to_f64();
            kernels.push(ConvKernel::new(dims[0], dims[1], dims[2], dims[3], w, b)?);
            known.insert(format!("{name}.weight"));
            known.insert(format!("{name}.bias"));
        }
        if let Some(extra) = file.iter().find(|t| !known.contains(&t.name)) {
            return Err(Error::UnexpectedTensor(extra.name.clone()));
        }
        let preprocess = Preprocess {
            mean: [mean[0], mean[1], mean[2]],
            std: [std[0], std[1], std[2]],
        };
        Self::new(spec, kernels, preprocess)
    }

    /// Reads a CGWT weight file and binds it to `spec`.
    pub fn load(path: impl AsRef<Path>, spec: EncoderSpec) -> Result<Self> {
        Self::from_tensors(spec, &TensorFile::read(path)?)
    }

    /// Reads a CGWT weight file, inferring the topology from its tensor names.
    pub fn load_inferred(path: impl AsRef<Path>, pool_mode: Option<PoolMode>) -> Result<Self> {
        let file = TensorFile::read(path)?;
        Self::from_tensors(EncoderSpec::infer(&file, pool_mode)?, &file)
    }

    /// Weights as f32 tensors. Lossless when the weights are f32-representable.
    pub fn to_tensors(&self) -> TensorFile {
        let mut file = TensorFile::new();
        for (c, k) in self.spec.convs().zip(&self.kernels) {
            let name = c.layer.conv_name();
            file.push(
                Tensor::from_f64(format!("{name}.weight"), k.dims().to_vec(), &k.weight).unwrap(),
            )
            .unwrap();
            file.push(
                Tensor::from_f64(format!("{name}.bias"), vec![k.out_channels], &k.bias).unwrap(),
            )
            .unwrap();
        }
        file.push(Tensor::from_f64("preproc.mean", vec![3], &self.preprocess.mean).unwrap())
            .unwrap();
        file.push(Tensor::from_f64("preproc.std", vec![3], &self.preprocess.std).unwrap())
            .unwrap();
        file
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensors().write(path)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    pub fn kernel(&self, layer: LayerId) -> Result<&ConvKernel> {
        let pos = self
            .spec
            .convs()
            .position(|c| c.layer == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
        Ok(&self.kernels[pos])
    }

    /// Runs the network up to the deepest requested tap.
    pub fn forward(&self, image: &Image, taps: &[LayerId]) -> Result<ActivationTrace> {
        let mut tap_set = BTreeSet::new();
        let mut last_stage = 0;
        for &t in taps {
            last_stage = last_stage.max(self.spec.stage_index(t)?);
            tap_set.insert(t);
        }
        if tap_set.is_empty() {
            return Err(Error::Config("forward needs at least one tap".into()));
        }
        let input = self.preprocess.apply(image);
        let mut outputs: Vec<FeatureMap> = Vec::with_capacity(last_stage + 1);
        let mut kernels = self.kernels.iter();
        for stage in &self.spec.stages[..=last_stage] {
            let x = outputs.last().unwrap_or(&input);
            let y = match stage {
                Stage::Conv(c) => {
                    let k = kernels.next().unwrap();
                    relu_forward(&conv2d_forward(x, k, c.padding(), 1)?)
                }
                Stage::Pool => pool_forward(x, self.spec.pool_mode),
            };
            outputs.push(y);
        }
        Ok(ActivationTrace {
            image: image.clone(),
            input,
            outputs,
            taps: tap_set,
            stage_of: self
                .spec
                .layers()
                .filter_map(|l| self.spec.stage_index(l).ok().map(|i| (l, i)))
                .filter(|&(_, i)| i <= last_stage)
                .collect(),
        })
    }

    /// Sums the vector-Jacobian products of every tapped layer's cotangent
    /// back to the input pixels, including the preprocessing map.
    pub fn backward_to_image(
        &self,
        trace: &ActivationTrace,
        cotangents: &BTreeMap<LayerId, FeatureMap>,
    ) -> Result<FeatureMap> {
        let mut deepest = None;
        for (layer, cot) in cotangents {
            if !trace.taps.contains(layer) {
                return Err(Error::Config(format!(
                    "cotangent given for untapped layer {layer}"
                )));
            }
            let act = &trace.outputs[trace.stage_of[layer]];
            act.check_same_shape(cot, "backward_to_image")?;
            deepest = deepest.max(Some(trace.stage_of[layer]));
        }
        let (h, w) = (trace.image.height(), trace.image.width());
        let Some(deepest) = deepest else {
            return Ok(FeatureMap::zeros(3, h, w));
        };

        let conv_positions: Vec<usize> = self
            .spec
            .stages
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Stage::Conv(_)))
            .map(|(i, _)| i)
            .collect();
        let mut grad: Option<FeatureMap> = None;
        for idx in (0..=deepest).rev() {
            let x = if idx == 0 {
                &trace.input
            } else {
                &trace.outputs[idx - 1]
            };
            match &self.spec.stages[idx] {
                Stage::Conv(c) => {
                    if let Some(cot) = cotangents.get(&c.layer) {
                        match grad.as_mut() {
                            Some(g) => g.add_scaled(cot, 1.0),
                            None => grad = Some(cot.clone()),
                        }
                    }
                    if let Some(g) = grad.take() {
                        let pre = relu_backward(&trace.outputs[idx], &g)?;
                        let k =
                            &self.kernels[conv_positions.iter().position(|&p| p == idx).unwrap()];
                        grad = Some(conv2d_backward_input(x, k, c.padding(), 1, &pre)?);
                    }
                }
                Stage::Pool => {
                    if let Some(g) = grad.take() {
                        grad = Some(pool_backward(x, self.spec.pool_mode, &g)?);
                    }
                }
            }
        }
        let mut grad = grad.unwrap_or_else(|| FeatureMap::zeros(3, h, w));
        self.preprocess.backward(&mut grad);
        Ok(grad)
    }
}

/// Activations of one forward pass, with every intermediate kept for backward.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    image: Image,
    input: FeatureMap,
    outputs: Vec<FeatureMap>,
    taps: BTreeSet<LayerId>,
    stage_of: BTreeMap<LayerId, usize>,
}

impl ActivationTrace {
    pub fn image(&self) -> &Image {
        &self.image
    }

    /// Activation at a requested tap.
    pub fn get(&self, layer: LayerId) -> Result<&FeatureMap> {
        if !self.taps.contains(&layer) {
            return Err(Error::UnknownLayer(format!(
                "{layer} (not tapped in this trace)"
            )));
        }
        Ok(&self.outputs[self.stage_of[&layer]])
    }

    pub fn taps(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.taps.iter().copied()
    }
}
