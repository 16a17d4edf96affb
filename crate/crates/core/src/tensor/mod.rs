//! Dense channel-height-width arrays and the differentiable primitives the
//! encoder, gram and loss modules are built from.
//!
//! Every primitive is a pure function. Work may be split across output
//! channels, but each output element is always reduced by one thread in a
//! fixed sequential order, so results are bit-identical at any thread count.

mod conv;
mod pool;

pub use conv::{
    conv2d_backward, conv2d_backward_input, conv2d_forward, ConvGrads, ConvKernel, Padding,
};
pub use pool::{
    pool_backward, pool_forward, pooled_extent, upsample_backward, upsample_nearest, PoolMode,
};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Below this many multiply-adds a primitive runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// Runs `f(channel_index, channel_slice)` over every `sites`-long chunk of `out`.
pub(crate) fn for_each_channel<F>(out: &mut [f64], sites: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if work >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(sites)
            .enumerate()
            .for_each(|(c, chunk)| f(c, chunk));
    } else {
        out.chunks_mut(sites)
            .enumerate()
            .for_each(|(c, chunk)| f(c, chunk));
    }
}

/// One layer's activations, stored channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(
                "FeatureMap::new",
                format!("dimensions must be positive, got {channels}x{height}x{width}"),
            ));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "FeatureMap::new",
                format!(
                    "{channels}x{height}x{width} needs {} values, got {}",
                    channels * height * width,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty feature map");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut map = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    map.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        map
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Spatial site count `height * width`.
    pub fn sites(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.sites();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.sites();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureMap, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{} vs {}", self.shape_string(), other.shape_string()),
            ));
        }
        Ok(())
    }

    /// Sum of elementwise products, accumulated in storage order.
    pub fn dot(&self, other: &FeatureMap) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc + a * b)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &FeatureMap, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.dot(self)
    }
}

/// An RGB image: a three-channel [`FeatureMap`] with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(FeatureMap);

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Ok(Self(FeatureMap::new(3, height, width, data)?))
    }

    pub fn from_map(map: FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::shape(
                "Image::from_map",
                format!("an image has 3 channels, got {}", map.shape_string()),
            ));
        }
        Ok(Self(map))
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self(FeatureMap::from_fn(3, height, width, |c, _, _| rgb[c]))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        Self(FeatureMap::from_fn(3, height, width, f))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.0
    }

    pub fn as_map_mut(&mut self) -> &mut FeatureMap {
        &mut self.0
    }

    pub fn into_map(self) -> FeatureMap {
        self.0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.get(c, y, x)
    }

    /// Per-channel mean color.
    pub fn channel_means(&self) -> [f64; 3] {
        let n = self.0.sites() as f64;
        let mut out = [0.0; 3];
        for (c, m) in out.iter_mut().enumerate() {
            *m = self.0.channel(c).iter().sum::<f64>() / n;
        }
        out
    }

    pub fn clamped(&self) -> Image {
        Image(self.0.map(|v| v.clamp(0.0, 1.0)))
    }
}

pub fn relu_forward(x: &FeatureMap) -> FeatureMap {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(x: &FeatureMap, upstream: &FeatureMap) -> Result<FeatureMap> {
    x.check_same_shape(upstream, "relu_backward")?;
    let data = x
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&v, &u)| if v > 0.0 { u } else { 0.0 })
        .collect();
    Ok(FeatureMap { data, ..*x })
}
