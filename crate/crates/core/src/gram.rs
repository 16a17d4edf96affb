//! Within-layer and cross-layer gram matrices.
//!
//! For a finer layer `l` and a coarser layer `m`, the cross-layer gram is
//! `G[i][j] = sum_p f_l[i, p] * up(f_m)[j, p]`, where `up` is nearest-neighbour
//! upsampling of `f_m` onto `f_l`'s grid. The within-layer gram is the special
//! case `l == m`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::cgwt::{Tensor, TensorFile};
use crate::encoder::LayerId;
use crate::error::{Error, Result};
use crate::tensor::{for_each_channel, upsample_backward, upsample_nearest, FeatureMap};

/// An ordered `(finer, coarser)` pair of style layers.
pub type LayerPair = (LayerId, LayerId);

/// Second-moment statistics between the channels of two layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Spatial sites of the finer layer the sum ran over.
    sites: usize,
    pair: Option<LayerPair>,
}

impl GramMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, sites: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "GramMatrix::new",
                format!(
                    "{rows}x{cols} needs {} entries, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            rows,
            cols,
            data,
            sites,
            pair: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            sites: 0,
            pair: None,
        }
    }

    pub fn labeled(mut self, pair: LayerPair) -> Self {
        self.pair = Some(pair);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn pair(&self) -> Option<LayerPair> {
        self.pair
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

fn check_cross_shapes(f_l: &FeatureMap, f_m: &FeatureMap, op: &'static str) -> Result<()> {
    if f_m.height() > f_l.height() || f_m.width() > f_l.width() {
        return Err(Error::shape(
            op,
            format!(
                "coarser map {} is spatially larger than finer map {}",
                f_m.shape_string(),
                f_l.shape_string()
            ),
        ));
    }
    Ok(())
}

/// `G[i][j] = sum_p a[i, p] * b[j, p]` with the site sum in row-major order.
fn outer_sites(a: &FeatureMap, b: &FeatureMap) -> Vec<f64> {
    let (rows, cols) = (a.channels(), b.channels());
    let mut data = vec![0.0; rows * cols];
    for_each_channel(&mut data, cols, rows * cols * a.sites(), |i, row| {
        let ai = a.channel(i);
        for (j, g) in row.iter_mut().enumerate() {
            *g = ai
                .iter()
                .zip(b.channel(j))
                .fold(0.0, |acc, (x, y)| acc + x * y);
        }
    });
    data
}

/// Within-layer gram `G[i][j] = sum_p f[i, p] f[j, p]`. Symmetric and PSD.
pub fn gram_within(f: &FeatureMap) -> GramMatrix {
    GramMatrix {
        rows: f.channels(),
        cols: f.channels(),
        data: outer_sites(f, f),
        sites: f.sites(),
        pair: None,
    }
}

/// Cross-layer gram between a finer map `f_l` and a coarser map `f_m`.
pub fn gram_cross(f_l: &FeatureMap, f_m: &FeatureMap) -> Result<GramMatrix> {
    check_cross_shapes(f_l, f_m, "gram_cross")?;
    let up = upsample_nearest(f_m, f_l.height(), f_l.width())?;
    Ok(GramMatrix {
        rows: f_l.channels(),
        cols: f_m.channels(),
        data: outer_sites(f_l, &up),
        sites: f_l.sites(),
        pair: None,
    })
}

/// Adjoint of [`gram_cross`]: returns the gradients with respect to `f_l` and `f_m`.
pub fn gram_backward(
    f_l: &FeatureMap,
    f_m: &FeatureMap,
    upstream: &GramMatrix,
) -> Result<(FeatureMap, FeatureMap)> {
    check_cross_shapes(f_l, f_m, "gram_backward")?;
    if upstream.rows != f_l.channels() || upstream.cols != f_m.channels() {
        return Err(Error::shape(
            "gram_backward",
            format!(
                "upstream is {}x{}, maps are {} and {}",
                upstream.rows,
                upstream.cols,
                f_l.shape_string(),
                f_m.shape_string()
            ),
        ));
    }
    let (h, w) = (f_l.height(), f_l.width());
    let sites = h * w;
    let up = upsample_nearest(f_m, h, w)?;
    let (kl, km) = (upstream.rows, upstream.cols);

    // grad_l[i, p] = sum_j dG[i][j] * up[j, p]
    let mut grad_l = FeatureMap::zeros(kl, h, w);
    for_each_channel(grad_l.data_mut(), sites, kl * km * sites, |i, dst| {
        for j in 0..km {
            let d = upstream.get(i, j);
            for (g, u) in dst.iter_mut().zip(up.channel(j)) {
                *g += d * u;
            }
        }
    });

    // grad_up[j, p] = sum_i dG[i][j] * f_l[i, p]
    let mut grad_up = FeatureMap::zeros(km, h, w);
    for_each_channel(grad_up.data_mut(), sites, kl * km * sites, |j, dst| {
        for i in 0..kl {
            let d = upstream.get(i, j);
            for (g, f) in dst.iter_mut().zip(f_l.channel(i)) {
                *g += d * f;
            }
        }
    });
    let grad_m = upsample_backward(&grad_up, f_m.height(), f_m.width())?;
    Ok((grad_l, grad_m))
}

/// Gradient of [`gram_within`]: both factor contributions summed.
pub fn gram_within_backward(f: &FeatureMap, upstream: &GramMatrix) -> Result<FeatureMap> {
    let (mut a, b) = gram_backward(f, f, upstream)?;
    a.add_scaled(&b, 1.0);
    Ok(a)
}

/// Which layer pairs a style loss controls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairStrategy {
    /// One within-layer gram per layer.
    Individual(Vec<LayerId>),
    /// Each layer paired with its next-deeper neighbour.
    PairwiseDescending(Vec<LayerId>),
    /// Every unordered pair of distinct layers.
    AllDistinctPairs(Vec<LayerId>),
    /// A hand-picked list; each pair is reoriented finer-first.
    Explicit(Vec<LayerPair>),
}

impl PairStrategy {
    /// Builds a strategy from its command-line name.
    pub fn from_name(name: &str, layers: Vec<LayerId>) -> Result<Self> {
        match name {
            "individual" | "within" => Ok(Self::Individual(layers)),
            "pairwise-descending" | "pairwise" => Ok(Self::PairwiseDescending(layers)),
            "all-distinct" | "all-distinct-pairs" => Ok(Self::AllDistinctPairs(layers)),
            other => Err(Error::Config(format!(
                "unknown pair strategy `{other}` (expected individual, pairwise-descending or all-distinct)"
            ))),
        }
    }

    /// Parses `R11-R21,R21-R31` into an explicit strategy.
    pub fn parse_explicit(list: &str) -> Result<Self> {
        let pairs = list
            .split(',')
            .map(|p| {
                let (a, b) = p.split_once('-').ok_or_else(|| {
                    Error::Config(format!("pair `{p}` is not of the form R11-R21"))
                })?;
                Ok((a.parse()?, b.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Explicit(pairs))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Individual(_) => "individual",
            Self::PairwiseDescending(_) => "pairwise-descending",
            Self::AllDistinctPairs(_) => "all-distinct",
            Self::Explicit(_) => "explicit",
        }
    }

    /// The resolved pair list, finer layer first in each pair.
    pub fn resolve(&self) -> Result<Vec<LayerPair>> {
        let sorted = |layers: &[LayerId]| -> Result<Vec<LayerId>> {
            let set: BTreeSet<_> = layers.iter().copied().collect();
            if set.len() != layers.len() {
                return Err(Error::Config("duplicate layer in pair strategy".into()));
            }
            if set.is_empty() {
                return Err(Error::Config("pair strategy names no layers".into()));
            }
            Ok(set.into_iter().collect())
        };
        let pairs = match self {
            Self::Individual(layers) => sorted(layers)?.into_iter().map(|l| (l, l)).collect(),
            Self::PairwiseDescending(layers) => {
                let s = sorted(layers)?;
                if s.len() < 2 {
                    return Err(Error::Config(
                        "pairwise-descending needs at least two layers".into(),
                    ));
                }
                s.windows(2).map(|w| (w[0], w[1])).collect()
            }
            Self::AllDistinctPairs(layers) => {
                let s = sorted(layers)?;
                if s.len() < 2 {
                    return Err(Error::Config(
                        "all-distinct needs at least two layers".into(),
                    ));
                }
                let mut out = Vec::new();
                for i in 0..s.len() {
                    for j in i + 1..s.len() {
                        out.push((s[i], s[j]));
                    }
                }
                out
            }
            Self::Explicit(pairs) => {
                let mut seen = BTreeSet::new();
                let mut out = Vec::new();
                for &(a, b) in pairs {
                    let p = if a <= b { (a, b) } else { (b, a) };
                    if !seen.insert(p) {
                        return Err(Error::Config(format!("duplicate pair {}-{}", p.0, p.1)));
                    }
                    out.push(p);
                }
                if out.is_empty() {
                    return Err(Error::Config("explicit strategy has no pairs".into()));
                }
                out
            }
        };
        Ok(pairs)
    }

    /// Every layer touched by the resolved pairs.
    pub fn layers(&self) -> Result<BTreeSet<LayerId>> {
        Ok(self
            .resolve()?
            .into_iter()
            .flat_map(|(a, b)| [a, b])
            .collect())
    }
}

impl fmt::Display for PairStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of gram entries a strategy controls: the sum of `K_l * K_m` over its pairs.
pub fn constraint_count(strategy: &PairStrategy, widths: &BTreeMap<LayerId, usize>) -> Result<u64> {
    strategy.resolve()?.iter().try_fold(0u64, |acc, (l, m)| {
        let kl = widths
            .get(l)
            .ok_or_else(|| Error::UnknownLayer(l.to_string()))?;
        let km = widths
            .get(m)
            .ok_or_else(|| Error::UnknownLayer(m.to_string()))?;
        Ok(acc + (*kl as u64) * (*km as u64))
    })
}

/// Grams as CGWT tensors `gram.<l>-<m>` (`[rows, cols]`) with site counts in `sites.<l>-<m>`.
pub fn grams_to_tensors(grams: &BTreeMap<LayerPair, GramMatrix>) -> Result<TensorFile> {
    let mut file = TensorFile::new();
    for ((l, m), g) in grams {
        file.push(Tensor::from_f64(
            format!("gram.{l}-{m}"),
            vec![g.rows, g.cols],
            &g.data,
        )?)?;
        file.push(Tensor::from_f64(
            format!("sites.{l}-{m}"),
            vec![1],
            &[g.sites as f64],
        )?)?;
    }
    Ok(file)
}

pub fn grams_from_tensors(file: &TensorFile) -> Result<BTreeMap<LayerPair, GramMatrix>> {
    let mut out = BTreeMap::new();
    for t in file.iter() {
        let Some(pair) = t.name.strip_prefix("gram.") else {
            if !t.name.starts_with("sites.") {
                return Err(Error::UnexpectedTensor(t.name.clone()));
            }
            continue;
        };
        let (l, m) = pair
            .split_once('-')
            .ok_or_else(|| Error::Format(format!("bad gram tensor name `{}`", t.name)))?;
        let (l, m): LayerPair = (l.parse()?, m.parse()?);
        if t.dims.len() != 2 {
            return Err(Error::TensorShape {
                name: t.name.clone(),
                expected: vec![0, 0],
                found: t.dims.clone(),
            });
        }
        let sites = file.expect(&format!("sites.{pair}"), &[1])?.data[0] as usize;
        let g = GramMatrix::new(t.dims[0], t.dims[1], t.to_f64(), sites)?.labeled((l, m));
        out.insert((l, m), g);
    }
    Ok(out)
}
