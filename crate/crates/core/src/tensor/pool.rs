use super::{for_each_channel, FeatureMap};
use crate::error::{Error, Result};

/// Reduction applied over each 2x2 pooling window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolMode {
    #[default]
    Max,
    Average,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "avg" | "average" => Ok(PoolMode::Average),
            other => Err(Error::Config(format!(
                "unknown pool mode `{other}` (expected max or average)"
            ))),
        }
    }
}

/// Output extent of a 2x2/stride-2 pool; an odd trailing row or column is
/// replicated so it still forms a full window.
pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// Source indices of the four window taps for output site (oy, ox), row-major,
/// with replicate padding at the far edges.
#[inline]
fn window(oy: usize, ox: usize, h: usize, w: usize) -> [(usize, usize); 4] {
    let y0 = 2 * oy;
    let x0 = 2 * ox;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    [(y0, x0), (y0, x1), (y1, x0), (y1, x1)]
}

/// Index within the window of the first maximal tap.
#[inline]
fn argmax(src: &[f64], w: usize, taps: &[(usize, usize); 4]) -> usize {
    let mut best = 0;
    let mut best_v = src[taps[0].0 * w + taps[0].1];
    for (i, &(y, x)) in taps.iter().enumerate().skip(1) {
        let v = src[y * w + x];
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// 2x2 pooling with stride 2; halves each spatial dimension (rounding up).
pub fn pool_forward(x: &FeatureMap, mode: PoolMode) -> FeatureMap {
    let (c, h, w) = x.shape();
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let mut out = FeatureMap::zeros(c, oh, ow);
    let work = out.len() * 4;
    for_each_channel(out.data_mut(), oh * ow, work, |ch, dst| {
        let src = x.channel(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let taps = window(oy, ox, h, w);
                dst[oy * ow + ox] = match mode {
                    PoolMode::Max => {
                        let (y, xx) = taps[argmax(src, w, &taps)];
                        src[y * w + xx]
                    }
                    PoolMode::Average => {
                        taps.iter().fold(0.0, |acc, &(y, xx)| acc + src[y * w + xx]) * 0.25
                    }
                };
            }
        }
    });
    out
}

/// Adjoint of [`pool_forward`]. Max mode routes each upstream value to the
/// first maximal tap of its window; average mode spreads it evenly.
pub fn pool_backward(x: &FeatureMap, mode: PoolMode, upstream: &FeatureMap) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    if upstream.shape() != (c, oh, ow) {
        return Err(Error::shape(
            "pool_backward",
            format!(
                "upstream is {}, pooled output of {} is {c}x{oh}x{ow}",
                upstream.shape_string(),
                x.shape_string()
            ),
        ));
    }
    let mut grad = FeatureMap::zeros(c, h, w);
    let work = upstream.len() * 4;
    for_each_channel(grad.data_mut(), h * w, work, |ch, dst| {
        let src = x.channel(ch);
        let up = upstream.channel(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let taps = window(oy, ox, h, w);
                let u = up[oy * ow + ox];
                match mode {
                    PoolMode::Max => {
                        let (y, xx) = taps[argmax(src, w, &taps)];
                        dst[y * w + xx] += u;
                    }
                    PoolMode::Average => {
                        for &(y, xx) in &taps {
                            dst[y * w + xx] += 0.25 * u;
                        }
                    }
                }
            }
        }
    });
    Ok(grad)
}

#[inline]
fn nearest_source(dst: usize, src_dim: usize, dst_dim: usize) -> usize {
    dst * src_dim / dst_dim
}

/// Nearest-neighbour upsampling: destination index `d` reads source `floor(d * src / dst)`.
pub fn upsample_nearest(x: &FeatureMap, target_h: usize, target_w: usize) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    if target_h < h || target_w < w {
        return Err(Error::shape(
            "upsample_nearest",
            format!(
                "cannot upsample {} to {target_h}x{target_w}",
                x.shape_string()
            ),
        ));
    }
    if (target_h, target_w) == (h, w) {
        return Ok(x.clone());
    }
    let rows: Vec<usize> = (0..target_h)
        .map(|d| nearest_source(d, h, target_h))
        .collect();
    let cols: Vec<usize> = (0..target_w)
        .map(|d| nearest_source(d, w, target_w))
        .collect();
    let mut out = FeatureMap::zeros(c, target_h, target_w);
    for_each_channel(
        out.data_mut(),
        target_h * target_w,
        c * target_h * target_w,
        |ch, dst| {
            let src = x.channel(ch);
            for (dy, &sy) in rows.iter().enumerate() {
                for (dx, &sx) in cols.iter().enumerate() {
                    dst[dy * target_w + dx] = src[sy * w + sx];
                }
            }
        },
    );
    Ok(out)
}

/// Adjoint of [`upsample_nearest`]: sums upstream over each source site's replicas.
pub fn upsample_backward(upstream: &FeatureMap, src_h: usize, src_w: usize) -> Result<FeatureMap> {
    let (c, th, tw) = upstream.shape();
    if src_h == 0 || src_w == 0 || th < src_h || tw < src_w {
        return Err(Error::shape(
            "upsample_backward",
            format!(
                "upstream {} is not an upsampling of {src_h}x{src_w}",
                upstream.shape_string()
            ),
        ));
    }
    if (th, tw) == (src_h, src_w) {
        return Ok(upstream.clone());
    }
    let mut grad = FeatureMap::zeros(c, src_h, src_w);
    for_each_channel(grad.data_mut(), src_h * src_w, c * th * tw, |ch, dst| {
        let up = upstream.channel(ch);
        for dy in 0..th {
            let sy = nearest_source(dy, src_h, th);
            for dx in 0..tw {
                let sx = nearest_source(dx, src_w, tw);
                dst[sy * src_w + sx] += up[dy * tw + dx];
            }
        }
    });
    Ok(grad)
}
