//! Image reconstruction networks mirroring an encoder prefix.

use std::path::Path;

use crate::cgwt::{Tensor, TensorFile};
use crate::encoder::{ConvSpec, EncoderSpec, LayerId, Stage};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_forward, relu_forward, upsample_nearest, ConvKernel, FeatureMap, Image,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecoderStage {
    /// Convolution `deconvB_I` from the encoder conv's output width back to its input width.
    Deconv { conv: ConvSpec, relu: bool },
    /// Nearest-neighbour upsampling to the input size of encoder stage `stage`.
    Upsample { stage: usize },
}

/// The encoder from `layer` back to the image, reversed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderSpec {
    encoder: EncoderSpec,
    layer: LayerId,
    stages: Vec<DecoderStage>,
}

impl DecoderSpec {
    pub fn mirror(encoder: &EncoderSpec, layer: LayerId) -> Result<Self> {
        let last = encoder.stage_index(layer)?;
        let mut stages = Vec::new();
        for (idx, stage) in encoder.stages()[..=last].iter().enumerate().rev() {
            stages.push(match stage {
                Stage::Conv(c) => DecoderStage::Deconv {
                    conv: c.clone(),
                    relu: idx != 0,
                },
                Stage::Pool => DecoderStage::Upsample { stage: idx },
            });
        }
        Ok(Self {
            encoder: encoder.clone(),
            layer,
            stages,
        })
    }

    pub fn layer(&self) -> LayerId {
        self.layer
    }

    pub fn stages(&self) -> &[DecoderStage] {
        &self.stages
    }

    fn deconvs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.stages.iter().filter_map(|s| match s {
            DecoderStage::Deconv { conv, .. } => Some(conv),
            DecoderStage::Upsample { .. } => None,
        })
    }
}

/// A [`DecoderSpec`] with weights. Kernel `deconvB_I` is `[in_c, out_c, k, k]` of encoder conv `B_I`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    spec: DecoderSpec,
    kernels: Vec<ConvKernel>,
}

impl Decoder {
    /// `kernels` in decoder stage order (deepest first).
    pub fn new(spec: DecoderSpec, kernels: Vec<ConvKernel>) -> Result<Self> {
        let convs: Vec<_> = spec.deconvs().collect();
        if convs.len() != kernels.len() {
            return Err(Error::Config(format!(
                "decoder has {} convolutions but {} kernels were given",
                convs.len(),
                kernels.len()
            )));
        }
        for (c, k) in convs.iter().zip(&kernels) {
            let want = [c.in_channels, c.out_channels, c.kernel, c.kernel];
            if k.dims() != want {
                return Err(Error::TensorShape {
                    name: format!("{}.weight", c.layer.deconv_name()),
                    expected: want.to_vec(),
                    found: k.dims().to_vec(),
                });
            }
        }
        Ok(Self { spec, kernels })
    }

    pub fn from_tensors(spec: DecoderSpec, file: &TensorFile) -> Result<Self> {
        let mut kernels = Vec::new();
        let mut known = Vec::new();
        for c in spec.deconvs() {
            let name = c.layer.deconv_name();
            let dims = [c.in_channels, c.out_channels, c.kernel, c.kernel];
            let w = file.expect(&format!("{name}.weight"), &dims)?.to_f64();
            let b = file
                .expect(&format!("{name}.bias"), &[c.in_channels])?
                .to_f64();
            kernels.push(ConvKernel::new(dims[0], dims[1], dims[2], dims[3], w, b)?);
            known.push(format!("{name}.weight"));
            known.push(format!("{name}.bias"));
        }
        if let Some(extra) = file.iter().find(|t| !known.contains(&t.name)) {
            return Err(Error::UnexpectedTensor(extra.name.clone()));
        }
        Self::new(spec, kernels)
    }

    /// Reads the decoder for `layer` of `encoder`.
    pub fn load(path: impl AsRef<Path>, encoder: &EncoderSpec, layer: LayerId) -> Result<Self> {
        Self::from_tensors(
            DecoderSpec::mirror(encoder, layer)?,
            &TensorFile::read(path)?,
        )
    }

    pub fn to_tensors(&self) -> TensorFile {
        let mut file = TensorFile::new();
        for (c, k) in self.spec.deconvs().zip(&self.kernels) {
            let name = c.layer.deconv_name();
            file.push(
                Tensor::from_f64(format!("{name}.weight"), k.dims().to_vec(), &k.weight).unwrap(),
            )
            .unwrap();
            file.push(
                Tensor::from_f64(format!("{name}.bias"), vec![k.out_channels], &k.bias).unwrap(),
            )
            .unwrap();
        }
        file
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensors().write(path)
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    pub fn layer(&self) -> LayerId {
        self.spec.layer
    }

    /// Decodes activations of [`Decoder::layer`] into an `height x width` image.
    pub fn decode(&self, features: &FeatureMap, height: usize, width: usize) -> Result<Image> {
        let shapes = self.spec.encoder.stage_shapes(height, width);
        let want = self
            .spec
            .encoder
            .output_shape(self.spec.layer, height, width)?;
        if features.shape() != want {
            return Err(Error::shape(
                "Decoder::decode",
                format!(
                    "{} features for a {height}x{width} image, expected {}x{}x{}",
                    features.shape_string(),
                    want.0,
                    want.1,
                    want.2
                ),
            ));
        }
        let mut x = features.clone();
        let mut kernels = self.kernels.iter();
        for stage in &self.spec.stages {
            x = match stage {
                DecoderStage::Deconv { conv, relu } => {
                    let y = conv2d_forward(&x, kernels.next().unwrap(), conv.padding(), 1)?;
                    if *relu {
                        relu_forward(&y)
                    } else {
                        y
                    }
                }
                DecoderStage::Upsample { stage } => {
                    let (_, h, w) = if *stage == 0 {
                        (3, height, width)
                    } else {
                        shapes[stage - 1]
                    };
                    upsample_nearest(&x, h, w)?
                }
            };
        }
        Image::from_map(x)
    }
}
