use super::{for_each_channel, FeatureMap};
use crate::error::{Error, Result};

/// Zero padding added on each side of the input before a convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Padding that preserves spatial size for an odd kernel at stride 1.
    pub fn same(kernel: usize) -> Self {
        Self::uniform(kernel / 2)
    }
}

/// Convolution weights `[out_c, in_c, kh, kw]` plus one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if expected == 0 || weight.len() != expected || bias.len() != out_channels {
            return Err(Error::shape(
                "ConvKernel::new",
                format!(
                    "kernel {out_channels}x{in_channels}x{kernel_h}x{kernel_w} needs {expected} weights and {out_channels} biases, got {} and {}",
                    weight.len(),
                    bias.len()
                ),
            ));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weight,
            bias,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weight: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    #[inline]
    pub fn at(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_channels + c) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    fn shape_string(&self) -> String {
        let [o, i, h, w] = self.dims();
        format!("{o}x{i}x{h}x{w}")
    }
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad_top: isize,
    pad_left: isize,
}

impl Geometry {
    fn new(
        input: &FeatureMap,
        kernel: &ConvKernel,
        padding: Padding,
        stride: usize,
        op: &'static str,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        if kernel.in_channels != input.channels() {
            return Err(Error::shape(
                op,
                format!(
                    "kernel {} expects {} input channels, input is {}",
                    kernel.shape_string(),
                    kernel.in_channels,
                    input.shape_string()
                ),
            ));
        }
        let padded_h = input.height() + padding.top + padding.bottom;
        let padded_w = input.width() + padding.left + padding.right;
        if padded_h < kernel.kernel_h || padded_w < kernel.kernel_w {
            return Err(Error::shape(
                op,
                format!(
                    "kernel {} larger than padded input {}x{} (input {})",
                    kernel.shape_string(),
                    padded_h,
                    padded_w,
                    input.shape_string()
                ),
            ));
        }
        Ok(Self {
            in_h: input.height(),
            in_w: input.width(),
            out_h: (padded_h - kernel.kernel_h) / stride + 1,
            out_w: (padded_w - kernel.kernel_w) / stride + 1,
            stride,
            pad_top: padding.top as isize,
            pad_left: padding.left as isize,
        })
    }

    /// Input row touched by output row `oy` at kernel row `ky`, if inside the image.
    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad_top;
        (iy >= 0 && (iy as usize) < self.in_h).then_some(iy as usize)
    }

    #[inline]
    fn in_col(&self, ox: usize, kx: usize) -> Option<usize> {
        let ix = (ox * self.stride + kx) as isize - self.pad_left;
        (ix >= 0 && (ix as usize) < self.in_w).then_some(ix as usize)
    }

    /// Output column range whose input column `ox*stride + kx - pad` lies inside the image.
    fn valid_cols(&self, kx: usize) -> std::ops::Range<usize> {
        let lo = (0..self.out_w)
            .find(|&ox| self.in_col(ox, kx).is_some())
            .unwrap_or(self.out_w);
        let hi = (lo..self.out_w)
            .rfind(|&ox| self.in_col(ox, kx).is_some())
            .map_or(lo, |x| x + 1);
        lo..hi
    }
}

/// Cross-correlation (no kernel flip) with zero padding.
///
/// Each output element accumulates input channels outermost, then kernel
/// rows, then kernel columns, and finally adds the bias.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_forward(
    input: &FeatureMap,
    kernel: &ConvKernel,
    padding: Padding,
    stride: usize,
) -> Result<FeatureMap> {
    let g = Geometry::new(input, kernel, padding, stride, "conv2d_forward")?;
    let out_sites = g.out_h * g.out_w;
    let mut out = FeatureMap::zeros(kernel.out_channels, g.out_h, g.out_w);
    let work = out.len() * kernel.in_channels * kernel.kernel_h * kernel.kernel_w;
    let cols: Vec<_> = (0..kernel.kernel_w).map(|kx| g.valid_cols(kx)).collect();

    for_each_channel(out.data_mut(), out_sites, work, |o, acc| {
        for c in 0..kernel.in_channels {
            let src = input.channel(c);
            for ky in 0..kernel.kernel_h {
                for kx in 0..kernel.kernel_w {
                    let w = kernel.at(o, c, ky, kx);
                    for oy in 0..g.out_h {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        let dst = &mut acc[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in cols[kx].clone() {
                            let ix = ox * g.stride + kx - g.pad_left as usize;
                            dst[ox] += w * row[ix];
                        }
                    }
                }
            }
        }
        let b = kernel.bias[o];
        for v in acc.iter_mut() {
            *v += b;
        }
    });
    Ok(out)
}

fn check_upstream(
    g: &Geometry,
    kernel: &ConvKernel,
    upstream: &FeatureMap,
    op: &'static str,
) -> Result<()> {
    if upstream.shape() != (kernel.out_channels, g.out_h, g.out_w) {
        return Err(Error::shape(
            op,
            format!(
                "upstream is {}, forward output is {}x{}x{}",
                upstream.shape_string(),
                kernel.out_channels,
                g.out_h,
                g.out_w
            ),
        ));
    }
    Ok(())
}

/// Vector-Jacobian product of [`conv2d_forward`] with respect to its input only.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward_input(
    input: &FeatureMap,
    kernel: &ConvKernel,
    padding: Padding,
    stride: usize,
    upstream: &FeatureMap,
) -> Result<FeatureMap> {
    let g = Geometry::new(input, kernel, padding, stride, "conv2d_backward")?;
    check_upstream(&g, kernel, upstream, "conv2d_backward")?;
    let mut grad = FeatureMap::zeros(input.channels(), input.height(), input.width());
    let work = upstream.len() * kernel.in_channels * kernel.kernel_h * kernel.kernel_w;
    let cols: Vec<_> = (0..kernel.kernel_w).map(|kx| g.valid_cols(kx)).collect();

    for_each_channel(grad.data_mut(), g.in_h * g.in_w, work, |c, acc| {
        for o in 0..kernel.out_channels {
            let up = upstream.channel(o);
            for ky in 0..kernel.kernel_h {
                for kx in 0..kernel.kernel_w {
                    let w = kernel.at(o, c, ky, kx);
                    for oy in 0..g.out_h {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let up_row = &up[oy * g.out_w..(oy + 1) * g.out_w];
                        let dst = &mut acc[iy * g.in_w..(iy + 1) * g.in_w];
                        for ox in cols[kx].clone() {
                            let ix = ox * g.stride + kx - g.pad_left as usize;
                            dst[ix] += w * up_row[ox];
                        }
                    }
                }
            }
        }
    });
    Ok(grad)
}

/// Full vector-Jacobian product of [`conv2d_forward`]: input, kernel and bias gradients.
pub fn conv2d_backward(
    input: &FeatureMap,
    kernel: &ConvKernel,
    padding: Padding,
    stride: usize,
    upstream: &FeatureMap,
) -> Result<ConvGrads> {
    let grad_input = conv2d_backward_input(input, kernel, padding, stride, upstream)?;
    let g = Geometry::new(input, kernel, padding, stride, "conv2d_backward")?;
    let per_out = kernel.in_channels * kernel.kernel_h * kernel.kernel_w;
    let mut grad_kernel = vec![0.0; kernel.out_channels * per_out];
    let work = grad_kernel.len() * g.out_h * g.out_w;

    for_each_channel(&mut grad_kernel, per_out, work, |o, gk| {
        let up = upstream.channel(o);
        for c in 0..kernel.in_channels {
            let src = input.channel(c);
            for ky in 0..kernel.kernel_h {
                for kx in 0..kernel.kernel_w {
                    let mut acc = 0.0;
                    for oy in 0..g.out_h {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.in_col(ox, kx) {
                                acc += up[oy * g.out_w + ox] * src[iy * g.in_w + ix];
                            }
                        }
                    }
                    gk[(c * kernel.kernel_h + ky) * kernel.kernel_w + kx] = acc;
                }
            }
        }
    });

    let grad_bias = (0..kernel.out_channels)
        .map(|o| upstream.channel(o).iter().sum())
        .collect();
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng, o: usize, i: usize, k: usize) -> ConvKernel {
        ConvKernel::new(
            o,
            i,
            k,
            k,
            (0..o * i * k * k)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            (0..o).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Six nested loops straight from the definition.
    fn reference_conv(input: &FeatureMap, k: &ConvKernel, pad: usize, stride: usize) -> FeatureMap {
        let oh = (input.height() + 2 * pad - k.kernel_h) / stride + 1;
        let ow = (input.width() + 2 * pad - k.kernel_w) / stride + 1;
        FeatureMap::from_fn(k.out_channels, oh, ow, |o, oy, ox| {
            let mut s = 0.0;
            for c in 0..k.in_channels {
                for ky in 0..k.kernel_h {
                    for kx in 0..k.kernel_w {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0
                            && ix >= 0
                            && (iy as usize) < input.height()
                            && (ix as usize) < input.width()
                        {
                            s += k.at(o, c, ky, kx) * input.get(c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s + k.bias[o]
        })
    }

    #[test]
    fn identity_one_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 3, 4, 5);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let k = ConvKernel::new(3, 3, 1, 1, w, vec![0.0; 3]).unwrap();
        let y = conv2d_forward(&x, &k, Padding::default(), 1).unwrap();
        assert_eq!(y, x);
        let up = random_map(&mut rng, 3, 4, 5);
        let g = conv2d_backward(&x, &k, Padding::default(), 1, &up).unwrap();
        assert_eq!(g.input, up);
    }

    #[test]
    fn sum_of_ones() {
        let x = FeatureMap::filled(1, 3, 3, 1.0);
        let k = ConvKernel::new(1, 1, 3, 3, vec![1.0; 9], vec![0.0]).unwrap();
        let y = conv2d_forward(&x, &k, Padding::default(), 1).unwrap();
        assert_eq!(y.shape(), (1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
            let x = random_map(&mut rng, 2, 5, 5);
            let k = random_kernel(&mut rng, 3, 2, 3);
            let got = conv2d_forward(&x, &k, Padding::uniform(pad), stride).unwrap();
            let want = reference_conv(&x, &k, pad, stride);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn output_dims_formula() {
        let x = FeatureMap::zeros(1, 7, 6);
        let k = ConvKernel::zeros(2, 1, 3, 2);
        let y = conv2d_forward(&x, &k, Padding::uniform(1), 2).unwrap();
        assert_eq!(y.shape(), (2, (7 + 2 - 3) / 2 + 1, (6 + 2 - 2) / 2 + 1));
    }

    #[test]
    fn rejects_channel_mismatch_naming_shapes() {
        let x = FeatureMap::zeros(4, 5, 5);
        let k = ConvKernel::zeros(2, 3, 3, 3);
        let msg = conv2d_forward(&x, &k, Padding::default(), 1)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("2x3x3x3") && msg.contains("4x5x5"), "{msg}");
    }

    #[test]
    fn rejects_kernel_larger_than_input() {
        let x = FeatureMap::zeros(1, 2, 2);
        let k = ConvKernel::zeros(1, 1, 3, 3);
        assert!(conv2d_forward(&x, &k, Padding::default(), 1).is_err());
        assert!(conv2d_forward(&x, &k, Padding::uniform(1), 1).is_ok());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(&mut rng, 2, 4, 4);
        let k = random_kernel(&mut rng, 3, 2, 3);
        let up = FeatureMap::zeros(3, 4, 4);
        let g = conv2d_backward(&x, &k, Padding::uniform(1), 1, &up).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_bad_upstream() {
        let x = FeatureMap::zeros(2, 4, 4);
        let k = ConvKernel::zeros(3, 2, 3, 3);
        let up = FeatureMap::zeros(3, 2, 2);
        assert!(conv2d_backward(&x, &k, Padding::uniform(1), 1, &up).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_map(&mut rng, 2, 5, 5);
        let k = random_kernel(&mut rng, 3, 2, 3);
        let pad = Padding::uniform(1);
        for stride in [1, 2] {
            let y = conv2d_forward(&x, &k, pad, stride).unwrap();
            let up = random_map(&mut rng, y.channels(), y.height(), y.width());
            let g = conv2d_backward(&x, &k, pad, stride, &up).unwrap();
            let h = 1e-3;
            let objective = |x: &FeatureMap, k: &ConvKernel| {
                conv2d_forward(x, k, pad, stride).unwrap().dot(&up)
            };
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (objective(&xp, &k) - objective(&xm, &k)) / (2.0 * h);
                let an = g.input.data()[i];
                assert!(
                    (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-8),
                    "{fd} vs {an}"
                );
            }
            for i in 0..k.weight.len() {
                let mut kp = k.clone();
                kp.weight[i] += h;
                let mut km = k.clone();
                km.weight[i] -= h;
                let fd = (objective(&x, &kp) - objective(&x, &km)) / (2.0 * h);
                let an = g.kernel[i];
                assert!(
                    (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-8),
                    "{fd} vs {an}"
                );
            }
            for o in 0..k.out_channels {
                let mut kp = k.clone();
                kp.bias[o] += h;
                let mut km = k.clone();
                km.bias[o] -= h;
                let fd = (objective(&x, &kp) - objective(&x, &km)) / (2.0 * h);
                assert!((fd - g.bias[o]).abs() <= 1e-3 * fd.abs().max(1e-8));
            }
        }
    }
}
