//! Seeded synthetic weights and images for tests, examples and desk-scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::decoder::{Decoder, DecoderSpec, DecoderStage};
use crate::encoder::{Encoder, EncoderSpec, LayerId, Preprocess};
use crate::error::{Error, Result};
use crate::tensor::{ConvKernel, Image};

pub const IMAGENET: Preprocess = Preprocess {
    mean: [0.485, 0.456, 0.406],
    std: [0.229, 0.224, 0.225],
};

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// He-normal weights and small positive biases, all f32-representable.
pub fn seeded_encoder(spec: EncoderSpec, seed: u64) -> Encoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = spec
        .convs()
        .map(|c| {
            let fan_in = c.in_channels * c.kernel * c.kernel;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let weight = (0..c.out_channels * fan_in)
                .map(|_| f32_round(normal.sample(&mut rng)))
                .collect();
            let bias = (0..c.out_channels)
                .map(|_| f32_round(rng.random_range(0.0..0.05)))
                .collect();
            ConvKernel::new(
                c.out_channels,
                c.in_channels,
                c.kernel,
                c.kernel,
                weight,
                bias,
            )
            .unwrap()
        })
        .collect();
    let preprocess = Preprocess {
        mean: IMAGENET.mean.map(f32_round),
        std: IMAGENET.std.map(f32_round),
    };
    Encoder::new(spec, kernels, preprocess).unwrap()
}

/// [`seeded_encoder`] over [`EncoderSpec::tiny`].
pub fn tiny_encoder(seed: u64) -> Encoder {
    seeded_encoder(EncoderSpec::tiny(), seed)
}

/// A smooth random pattern plus a little noise, in `[0, 1]`.
pub fn test_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a6e);
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.random_range(0.1..0.3),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let noise: Vec<f64> = (0..3 * height * width)
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    Image::from_fn(height, width, |c, y, x| {
        let v = waves[3 * c..3 * c + 3]
            .iter()
            .map(|[a, fy, fx, ph]| a * (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum::<f64>();
        (0.5 + v + noise[(c * height + y) * width + x]).clamp(0.0, 1.0)
    })
}

/// Uniform noise in `[0, 1]`.
pub fn noise_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(height, width, |_, _, _| rng.random::<f64>())
}

/// Widths of [`invertible_encoder`]: blocks 1 to 5, one 1x1 conv each, no pooling.
pub const INVERTIBLE_WIDTHS: [usize; 5] = [4, 6, 8, 12, 16];

/// Preprocessed inputs are assumed to lie in this box when choosing biases;
/// it covers images in `[-1, 2]`.
const INPUT_BOX: (f64, f64) = (-3.0, 3.0);
const MARGIN: f64 = 0.1;

/// A 1x1-conv encoder with orthonormal weight columns whose biases keep every
/// pre-activation positive, so each layer is an injective affine map.
pub fn invertible_encoder(seed: u64) -> Encoder {
    let spec = EncoderSpec::vgg(&INVERTIBLE_WIDTHS, &[1; 5], 1, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = vec![INPUT_BOX.0; 3];
    let mut hi = vec![INPUT_BOX.1; 3];
    let mut kernels = Vec::new();
    for c in spec.convs() {
        let (n_out, n_in) = (c.out_channels, c.in_channels);
        let w = orthonormal_columns(n_out, n_in, &mut rng);
        let mut bias = vec![0.0; n_out];
        let (mut next_lo, mut next_hi) = (vec![0.0; n_out], vec![0.0; n_out]);
        for o in 0..n_out {
            let (mut zmin, mut zmax) = (0.0, 0.0);
            for i in 0..n_in {
                let (a, b) = (w[o * n_in + i] * lo[i], w[o * n_in + i] * hi[i]);
                zmin += a.min(b);
                zmax += a.max(b);
            }
            bias[o] = f32_round(MARGIN - zmin + 1e-3);
            next_lo[o] = zmin + bias[o];
            next_hi[o] = zmax + bias[o];
        }
        lo = next_lo;
        hi = next_hi;
        kernels.push(ConvKernel::new(n_out, n_in, 1, 1, w, bias).unwrap());
    }
    let preprocess = Preprocess {
        mean: [0.5; 3],
        std: [0.5; 3],
    };
    Encoder::new(spec, kernels, preprocess).unwrap()
}

/// Gaussian `rows x cols` matrix with Gram-Schmidt-orthonormalized columns, rounded to f32.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(rows >= cols);
    let mut cs: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while cs.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &cs {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            cs.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    (0..rows * cols)
        .map(|k| f32_round(cs[k % cols][k / cols]))
        .collect()
}

/// Decoder that exactly inverts an [`invertible_encoder`]-style encoder from
/// `layer` back to pixels, with the preprocessing undone in the last stage.
pub fn exact_inverse_decoder(encoder: &Encoder, layer: LayerId) -> Result<Decoder> {
    let spec = DecoderSpec::mirror(encoder.spec(), layer)?;
    let mut kernels = Vec::new();
    for stage in spec.stages() {
        let conv = match stage {
            DecoderStage::Deconv { conv, .. } => conv,
            DecoderStage::Upsample { .. } => {
                return Err(Error::Config(
                    "exact inverse needs an encoder without pooling".into(),
                ))
            }
        };
        if conv.kernel != 1 {
            return Err(Error::Config(format!(
                "{} is not a 1x1 convolution",
                conv.layer.conv_name()
            )));
        }
        let k = encoder.kernel(conv.layer)?;
        let (n_out, n_in) = (conv.out_channels, conv.in_channels);
        // a = W^T (z - b)
        let mut weight = vec![0.0; n_in * n_out];
        let mut bias = vec![0.0; n_in];
        for i in 0..n_in {
            for o in 0..n_out {
                let w = k.weight[o * n_in + i];
                weight[i * n_out + o] = w;
                bias[i] -= w * k.bias[o];
            }
        }
        if encoder.spec().stage_index(conv.layer)? == 0 {
            let pre = encoder.preprocess();
            for i in 0..n_in {
                for o in 0..n_out {
                    weight[i * n_out + o] *= pre.std[i];
                }
                bias[i] = bias[i] * pre.std[i] + pre.mean[i];
            }
        }
        kernels.push(ConvKernel::new(n_in, n_out, 1, 1, weight, bias)?);
    }
    Decoder::new(spec, kernels)
}
