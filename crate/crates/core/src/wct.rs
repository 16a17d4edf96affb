//! Whitening/coloring transforms over single or concatenated layers, and the
//! multi-level encode-transform-decode cascade built on them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decoder::Decoder;
use crate::eigen::SymmetricEigen;
use crate::encoder::{ActivationTrace, Encoder, LayerId};
use crate::error::{Error, Result};
use crate::tensor::{upsample_nearest, FeatureMap, Image};

/// Eigenvalues at or below this fraction of the largest are dropped.
pub const EIGEN_FLOOR: f64 = 1e-5;

/// Channels-by-sites matrix, optionally with the row means removed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Row means removed by [`FeatureMatrix::center`]; zero otherwise.
    mean: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(
                "FeatureMatrix::new",
                format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            rows,
            cols,
            data,
            mean: vec![0.0; rows],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Stored entries plus the removed mean.
    pub fn uncentered(&self) -> FeatureMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let m = self.mean[r];
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v += m;
            }
            out.mean[r] = 0.0;
        }
        out
    }

    /// Subtracts each row's mean, accumulating it into the stored mean.
    pub fn center(&mut self) {
        let n = self.cols as f64;
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            let m = row.iter().sum::<f64>() / n;
            for v in row.iter_mut() {
                *v -= m;
            }
            self.mean[r] += m;
        }
    }

    pub fn centered(&self) -> FeatureMatrix {
        let mut c = self.clone();
        c.center();
        c
    }

    /// Sample covariance `(1 / (P - 1)) X X^T` of the row-centered entries.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.cols < 2 {
            return Err(Error::Degenerate(format!(
                "covariance needs at least 2 sites, got {}",
                self.cols
            )));
        }
        let x = self.centered();
        let (k, p) = (self.rows, self.cols);
        let mut c = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .fold(0.0, |a, (s, t)| a + s * t)
                    / (p - 1) as f64;
                c[i * k + j] = v;
                c[j * k + i] = v;
            }
        }
        Ok(c)
    }

    /// `M X` for a row-major `rows x rows` matrix `m`; the stored mean is kept.
    fn left_multiply(&self, m: &[f64]) -> FeatureMatrix {
        let (k, p) = (self.rows, self.cols);
        let mut data = vec![0.0; k * p];
        for i in 0..k {
            let out = &mut data[i * p..(i + 1) * p];
            for j in 0..k {
                let w = m[i * k + j];
                if w == 0.0 {
                    continue;
                }
                for (o, x) in out.iter_mut().zip(self.row(j)) {
                    *o += w * x;
                }
            }
        }
        FeatureMatrix {
            rows: k,
            cols: p,
            data,
            mean: self.mean.clone(),
        }
    }
}

/// Stacks maps channel-wise after upsampling each to the first map's grid.
pub fn reshape_concat(maps: &[&FeatureMap]) -> Result<FeatureMatrix> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("reshape_concat needs at least one map".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::new();
    let mut rows = 0;
    for m in maps {
        let up = upsample_nearest(m, h, w)?;
        rows += up.channels();
        data.extend_from_slice(up.data());
    }
    FeatureMatrix::new(rows, h * w, data)
}

/// Inverse of [`reshape_concat`]: one `k x height x width` map per entry `k` of `widths`.
pub fn split(
    fm: &FeatureMatrix,
    widths: &[usize],
    height: usize,
    width: usize,
) -> Result<Vec<FeatureMap>> {
    let total: usize = widths.iter().sum();
    if total != fm.rows || height * width != fm.cols {
        return Err(Error::shape(
            "split",
            format!(
                "widths {widths:?} on a {height}x{width} grid do not cover a {}x{} matrix",
                fm.rows, fm.cols
            ),
        ));
    }
    let full = fm.uncentered();
    let mut start = 0;
    widths
        .iter()
        .map(|&k| {
            let block = full.data[start * fm.cols..(start + k) * fm.cols].to_vec();
            start += k;
            FeatureMap::new(k, height, width, block)
        })
        .collect()
}

/// Eigenbasis, retained eigenvalues and mean of a feature covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceStats {
    pub eigen: SymmetricEigen,
    pub retained: usize,
    pub mean: Vec<f64>,
}

impl CovarianceStats {
    pub fn of(fm: &FeatureMatrix) -> Result<Self> {
        let c = fm.covariance()?;
        let eigen = SymmetricEigen::new(&c, fm.rows)?;
        if eigen.values[0] <= 0.0 {
            return Err(Error::Degenerate("features have zero covariance".into()));
        }
        let retained = eigen.retained(EIGEN_FLOOR);
        let mean = fm.uncentered().centered().mean;
        Ok(Self {
            eigen,
            retained,
            mean,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigen.n
    }
}

/// Centers `fm` and maps it to identity covariance on its retained subspace.
pub fn whiten(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    let stats = CovarianceStats::of(fm)?;
    let w = stats.eigen.spectral_map(stats.retained, |v| 1.0 / v.sqrt());
    let mut out = fm.uncentered().centered().left_multiply(&w);
    out.mean = stats.mean;
    Ok(out)
}

/// Gives whitened features the style covariance and mean. The result is uncentered.
pub fn color(white: &FeatureMatrix, style: &CovarianceStats) -> Result<FeatureMatrix> {
    if white.rows != style.dim() {
        return Err(Error::shape(
            "color",
            format!(
                "{} feature rows, style statistics over {}",
                white.rows,
                style.dim()
            ),
        ));
    }
    let c = style.eigen.spectral_map(style.retained, f64::sqrt);
    let mut out = white.left_multiply(&c);
    let p = out.cols;
    for r in 0..out.rows {
        let m = style.mean[r];
        for v in &mut out.data[r * p..(r + 1) * p] {
            *v += m;
        }
        out.mean[r] = 0.0;
    }
    Ok(out)
}

/// Whitens `content` and colors it with `style`'s statistics.
pub fn wct(content: &FeatureMatrix, style: &FeatureMatrix) -> Result<FeatureMatrix> {
    color(&whiten(content)?, &CovarianceStats::of(style)?)
}

/// Which layer sets each cascade level controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SchemeKind {
    /// One layer per level.
    Individual,
    /// Each layer with the next finer one.
    #[default]
    PairwiseDescending,
    /// Each layer together with every finer one.
    Descending,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(Self::Individual),
            "pairwise-descending" | "pairwise" => Ok(Self::PairwiseDescending),
            "descending" => Ok(Self::Descending),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected individual, pairwise-descending or descending)"
            ))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Individual => "individual",
            Self::PairwiseDescending => "pairwise-descending",
            Self::Descending => "descending",
        })
    }
}

/// Ordered cascade levels, deepest first; each level is a set of layers, finest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelScheme {
    pub kind: SchemeKind,
    pub levels: Vec<Vec<LayerId>>,
    pub passes: usize,
}

impl LevelScheme {
    pub fn new(kind: SchemeKind, layers: &[LayerId], passes: usize) -> Result<Self> {
        let mut layers = layers.to_vec();
        layers.sort();
        layers.dedup();
        if layers.is_empty() {
            return Err(Error::Config("scheme needs at least one layer".into()));
        }
        if passes == 0 {
            return Err(Error::Config("passes must be at least 1".into()));
        }
        let n = layers.len();
        let levels = match kind {
            SchemeKind::Individual => layers.iter().rev().map(|&l| vec![l]).collect(),
            SchemeKind::PairwiseDescending if n == 1 => vec![layers.clone()],
            SchemeKind::PairwiseDescending => (1..n)
                .rev()
                .map(|i| vec![layers[i - 1], layers[i]])
                .collect(),
            SchemeKind::Descending => (1..=n).rev().map(|i| layers[..i].to_vec()).collect(),
        };
        Ok(Self {
            kind,
            levels,
            passes,
        })
    }

    /// Layers that need a decoder: the finest layer of every level.
    pub fn decoder_layers(&self) -> Vec<LayerId> {
        let mut out: Vec<LayerId> = self.levels.iter().map(|l| l[0]).collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Content and style features of `layers` (finest first), concatenated.
pub fn level_features(
    content: &ActivationTrace,
    style: &ActivationTrace,
    layers: &[LayerId],
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let c: Vec<&FeatureMap> = layers
        .iter()
        .map(|&l| content.get(l))
        .collect::<Result<_>>()?;
    let s: Vec<&FeatureMap> = layers
        .iter()
        .map(|&l| style.get(l))
        .collect::<Result<_>>()?;
    Ok((reshape_concat(&c)?, reshape_concat(&s)?))
}

/// Transformed features of one level: `blend * wct + (1 - blend) * content`.
pub fn transform_level(
    content: &FeatureMatrix,
    style: &FeatureMatrix,
    blend: f64,
) -> Result<FeatureMatrix> {
    if blend == 0.0 {
        return Ok(content.uncentered());
    }
    let mut t = wct(content, style)?;
    if blend != 1.0 {
        let orig = content.uncentered();
        for (v, o) in t.data.iter_mut().zip(&orig.data) {
            *v = blend * *v + (1.0 - blend) * o;
        }
    }
    Ok(t)
}

fn sorted_layers(layers: &[LayerId]) -> Result<Vec<LayerId>> {
    let mut l = layers.to_vec();
    l.sort();
    l.dedup();
    if l.is_empty() {
        return Err(Error::Config("empty layer set".into()));
    }
    Ok(l)
}

/// Encodes both images, transforms the concatenated `layers`, and decodes the finest one.
pub fn fct_level(
    content: &Image,
    style: &Image,
    layers: &[LayerId],
    blend: f64,
    encoder: &Encoder,
    decoder: &Decoder,
) -> Result<Image> {
    let layers = sorted_layers(layers)?;
    let finest = layers[0];
    if decoder.layer() != finest {
        return Err(Error::Config(format!(
            "level {layers:?} decodes {finest} but the decoder is for {}",
            decoder.layer()
        )));
    }
    let tc = encoder.forward(content, &layers)?;
    let ts = encoder.forward(style, &layers)?;
    let (fc, fs) = level_features(&tc, &ts, &layers)?;
    let t = transform_level(&fc, &fs, blend)?;
    let grid = tc.get(finest)?;
    let widths: Vec<usize> = layers
        .iter()
        .map(|&l| tc.get(l).map(FeatureMap::channels))
        .collect::<Result<_>>()?;
    let maps = split(&t, &widths, grid.height(), grid.width())?;
    decoder.decode(&maps[0], content.height(), content.width())
}

/// Zero-mean, unit-variance Gaussian noise used as texture-mode content.
pub fn noise_content(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(height, width, |_, _, _| StandardNormal.sample(&mut rng))
}

/// Runs every level of `scheme` in order, `scheme.passes` times.
///
/// Without `content` the cascade starts from [`noise_content`] of `size`
/// (default: the style's size).
#[allow(clippy::too_many_arguments)]
pub fn fct_pipeline(
    content: Option<&Image>,
    style: &Image,
    scheme: &LevelScheme,
    encoder: &Encoder,
    decoders: &BTreeMap<LayerId, Decoder>,
    blend: f64,
    seed: u64,
    size: Option<(usize, usize)>,
) -> Result<Image> {
    for layer in scheme.decoder_layers() {
        if !decoders.contains_key(&layer) {
            return Err(Error::MissingDecoder(layer.to_string()));
        }
    }
    let mut image = match content {
        Some(c) => c.clone(),
        None => {
            let (h, w) = size.unwrap_or((style.height(), style.width()));
            noise_content(h, w, seed)
        }
    };
    for pass in 0..scheme.passes {
        for level in &scheme.levels {
            log::info!("pass {} level {:?}", pass + 1, level);
            image = fct_level(&image, style, level, blend, encoder, &decoders[&level[0]])?;
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        FeatureMatrix::new(rows, cols, data).unwrap()
    }

    fn frob_rel(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let n: f64 = b.iter().map(|y| y * y).sum();
        (d / n).sqrt()
    }

    #[test]
    fn concat_orders_rows() {
        let a = FeatureMap::from_fn(2, 2, 2, |c, _, _| c as f64);
        let b = FeatureMap::from_fn(3, 1, 1, |c, _, _| 10.0 + c as f64);
        let fm = reshape_concat(&[&a, &b]).unwrap();
        assert_eq!((fm.rows(), fm.cols()), (5, 4));
        assert_eq!(fm.row(1), &[1.0; 4]);
        assert_eq!(fm.row(4), &[12.0; 4]);
        assert!(reshape_concat(&[]).is_err());
    }

    #[test]
    fn split_inverts_concat() {
        let a = FeatureMap::from_fn(2, 3, 2, |c, y, x| (c * 6 + y * 2 + x) as f64 * 0.1);
        let b = FeatureMap::from_fn(3, 3, 2, |c, y, x| (c + y) as f64 - x as f64);
        let fm = reshape_concat(&[&a, &b]).unwrap();
        let back = split(&fm, &[2, 3], 3, 2).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(split(&fm, &[2, 2], 3, 2).is_err());
    }

    #[test]
    fn whiten_gives_identity_covariance() {
        let x = random_matrix(6, 200, 1);
        let c = whiten(&x).unwrap().covariance().unwrap();
        let mut eye = vec![0.0; 36];
        for i in 0..6 {
            eye[i * 6 + i] = 1.0;
        }
        let err: f64 = c
            .iter()
            .zip(&eye)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn whiten_rejects_zero() {
        assert!(whiten(&FeatureMatrix::new(2, 5, vec![0.0; 10]).unwrap()).is_err());
    }

    #[test]
    fn rank_one_keeps_one_direction() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let data: Vec<f64> = [1.0, -2.0, 0.5]
            .iter()
            .flat_map(|a| v.iter().map(move |x| a * x))
            .collect();
        let fm = FeatureMatrix::new(3, 50, data).unwrap();
        assert_eq!(CovarianceStats::of(&fm).unwrap().retained, 1);
        let c = whiten(&fm).unwrap().covariance().unwrap();
        let trace: f64 = (0..3).map(|i| c[i * 3 + i]).sum();
        assert!((trace - 1.0).abs() < 1e-9);
    }

    #[test]
    fn color_matches_style_covariance_and_mean() {
        let content = random_matrix(6, 200, 2);
        let mut style = random_matrix(6, 200, 3);
        for (i, v) in style.data.iter_mut().enumerate() {
            *v = *v * (1.0 + (i / 200) as f64) + (i / 200) as f64;
        }
        let out = wct(&content, &style).unwrap();
        assert!(frob_rel(&out.covariance().unwrap(), &style.covariance().unwrap()) < 1e-6);
        let (m_out, m_s) = (out.centered().mean, style.centered().mean);
        for (a, b) in m_out.iter().zip(&m_s) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_color_is_rescale() {
        let white = FeatureMatrix::new(1, 4, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let style = FeatureMatrix::new(1, 4, vec![3.0, 7.0, 3.0, 7.0]).unwrap();
        let stats = CovarianceStats::of(&style).unwrap();
        let out = color(&white, &stats).unwrap();
        let sd = (16.0f64 / 3.0).sqrt();
        for (o, w) in out.data().iter().zip(white.data()) {
            assert!((o - (5.0 + sd * w)).abs() < 1e-12);
        }
    }

    #[test]
    fn scheme_levels() {
        let l = LayerId::STYLE_DEFAULT;
        let p = LevelScheme::new(SchemeKind::PairwiseDescending, &l, 1).unwrap();
        assert_eq!(p.levels[0], vec![LayerId::R41, LayerId::R51]);
        assert_eq!(p.levels[3], vec![LayerId::R11, LayerId::R21]);
        let d = LevelScheme::new(SchemeKind::Descending, &l, 1).unwrap();
        assert_eq!(d.levels.len(), 5);
        assert_eq!(d.levels[4], vec![LayerId::R11]);
        let i = LevelScheme::new(SchemeKind::Individual, &l, 3).unwrap();
        assert_eq!(i.levels[0], vec![LayerId::R51]);
        assert_eq!(i.decoder_layers(), l.to_vec());
        assert!("diagonal".parse::<SchemeKind>().is_err());
    }
}
