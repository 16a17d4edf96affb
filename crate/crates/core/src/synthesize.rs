//! Optimization-based style transfer and texture synthesis over pixels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::{Encoder, LayerId};
use crate::error::{Error, Result};
use crate::gram::gram_within;
use crate::lbfgs::{minimize, Evaluation, LbfgsConfig, Status};
use crate::loss::{LossConfig, LossContext, LossRecord};
use crate::tensor::Image;

/// Noise standard deviation of the noise-based initializations.
pub const INIT_SIGMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum InitPolicy {
    /// `N(0.5, 0.1)` per pixel, clamped to `[0, 1]`.
    GaussianNoise,
    /// Flat image of the style's mean color.
    MeanColor,
    /// `N(style channel mean, 0.1)` per pixel, clamped to `[0, 1]`.
    GaussianPlusStyleChannelMean,
    /// Start from the given image.
    Explicit(Image),
}

impl InitPolicy {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "noise" | "gaussian" | "gaussian-noise" => Ok(Self::GaussianNoise),
            "mean" | "mean-color" => Ok(Self::MeanColor),
            "shifted-noise" | "gaussian-plus-style-mean" => Ok(Self::GaussianPlusStyleChannelMean),
            other => Err(Error::Config(format!(
                "unknown init `{other}` (expected noise, mean-color or shifted-noise)"
            ))),
        }
    }

    /// Builds the starting image.
    pub fn initial_image(
        &self,
        height: usize,
        width: usize,
        style: &Image,
        seed: u64,
    ) -> Result<Image> {
        let noisy = |center: [f64; 3]| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, INIT_SIGMA).unwrap();
            Image::from_fn(height, width, |c, _, _| {
                (center[c] + normal.sample(&mut rng)).clamp(0.0, 1.0)
            })
        };
        match self {
            Self::GaussianNoise => Ok(noisy([0.5; 3])),
            Self::GaussianPlusStyleChannelMean => Ok(noisy(style.channel_means())),
            Self::MeanColor => Ok(Image::filled(height, width, style.channel_means())),
            Self::Explicit(img) => {
                if (img.height(), img.width()) != (height, width) {
                    return Err(Error::shape(
                        "initial_image",
                        format!(
                            "init image is {}x{}, output is {height}x{width}",
                            img.height(),
                            img.width()
                        ),
                    ));
                }
                Ok(img.clone())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisJob {
    /// Absent for texture synthesis.
    pub content: Option<Image>,
    pub style: Image,
    pub loss: LossConfig,
    /// `(height, width)`; defaults to the content size, or the style size without content.
    pub size: Option<(usize, usize)>,
    pub init: InitPolicy,
    pub seed: u64,
    pub optimizer: LbfgsConfig,
}

impl SynthesisJob {
    pub fn texture(style: Image, loss: LossConfig) -> Self {
        Self {
            content: None,
            style,
            loss,
            size: None,
            init: InitPolicy::GaussianNoise,
            seed: 0,
            optimizer: LbfgsConfig::default(),
        }
    }

    pub fn transfer(content: Image, style: Image, loss: LossConfig) -> Self {
        Self {
            content: Some(content),
            init: InitPolicy::GaussianNoise,
            ..Self::texture(style, loss)
        }
    }

    /// Output `(height, width)` after validating the job against itself.
    pub fn output_size(&self) -> Result<(usize, usize)> {
        match (&self.content, self.size) {
            (Some(c), Some(size)) if size != (c.height(), c.width()) => {
                Err(Error::Config(format!(
                    "output size {}x{} differs from content size {}x{}",
                    size.0,
                    size.1,
                    c.height(),
                    c.width()
                )))
            }
            (Some(c), _) => Ok((c.height(), c.width())),
            (None, Some(size)) => Ok(size),
            (None, None) => Ok((self.style.height(), self.style.width())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    /// Optimized pixels, unclamped.
    pub image: Image,
    /// One record per accepted iterate, starting at iteration 0.
    pub trace: Vec<LossRecord>,
    pub status: Status,
}

impl SynthesisResult {
    pub fn aborted(&self) -> bool {
        matches!(self.status, Status::NonFinite { .. })
    }
}

fn check_size(what: &str, h: usize, w: usize, min: usize) -> Result<()> {
    if h < min || w < min {
        return Err(Error::Undersized(format!(
            "{what} image is {h}x{w}; the deepest tapped layer needs at least {min}x{min}"
        )));
    }
    Ok(())
}

/// Runs the optimizer on `job`. Deterministic given the job and seed.
pub fn run(job: &SynthesisJob, encoder: &Encoder) -> Result<SynthesisResult> {
    if job.content.is_none() && job.loss.include_content {
        return Err(Error::Config(
            "content loss enabled but no content image given".into(),
        ));
    }
    let (h, w) = job.output_size()?;
    let mut taps: Vec<LayerId> = job.loss.style.layers()?.into_iter().collect();
    if job.loss.include_content {
        taps.push(job.loss.content_layer);
    }
    let deepest = taps
        .iter()
        .max()
        .copied()
        .ok_or_else(|| Error::Config("no layers".into()))?;
    let min = encoder.spec().min_input_side(deepest)?;
    check_size("style", job.style.height(), job.style.width(), min)?;
    check_size("output", h, w, min)?;

    let ctx = LossContext::new(encoder, job.loss.clone(), &job.style, job.content.as_ref())?;
    let init = job.init.initial_image(h, w, &job.style, job.seed)?;
    let outcome = minimize(
        |x: &[f64]| {
            let img = Image::new(h, w, x.to_vec())?;
            let (report, grad) = ctx.evaluate(&img)?;
            Ok(Evaluation {
                value: report.total,
                gradient: grad.into_data(),
                aux: report,
            })
        },
        init.into_map().into_data(),
        &job.optimizer,
    )?;
    let trace = outcome
        .history
        .into_iter()
        .map(|r| LossRecord {
            iter: r.iteration,
            report: r.aux,
        })
        .collect();
    Ok(SynthesisResult {
        image: Image::new(h, w, outcome.x)?,
        trace,
        status: outcome.status,
    })
}

/// Centered square crop with side `edge`.
pub fn crop_style(style: &Image, edge: usize) -> Result<Image> {
    let (h, w) = (style.height(), style.width());
    if edge == 0 || edge > h.min(w) {
        return Err(Error::Config(format!(
            "crop edge {edge} does not fit a {h}x{w} image"
        )));
    }
    let (top, left) = ((h - edge) / 2, (w - edge) / 2);
    Ok(Image::from_fn(edge, edge, |c, y, x| {
        style.get(c, top + y, left + x)
    }))
}

/// `sum_l ||G^l(a)/P_a - G^l(b)/P_b||^2 / ||G^l(b)/P_b||^2` over `layers`.
pub fn within_layer_discrepancy(
    encoder: &Encoder,
    a: &Image,
    b: &Image,
    layers: &[LayerId],
) -> Result<f64> {
    let ta = encoder.forward(a, layers)?;
    let tb = encoder.forward(b, layers)?;
    let mut total = 0.0;
    for &l in layers {
        let ga = gram_within(ta.get(l)?);
        let gb = gram_within(tb.get(l)?);
        let (pa, pb) = (ga.sites() as f64, gb.sites() as f64);
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in ga.data().iter().zip(gb.data()) {
            let d = x / pa - y / pb;
            num += d * d;
            den += (y / pb) * (y / pb);
        }
        total += if den > 0.0 { num / den } else { num };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gram::PairStrategy;

    #[test]
    fn crop_full_is_identity() {
        let img = fixtures::test_image(8, 8, 3);
        assert_eq!(crop_style(&img, 8).unwrap(), img);
    }

    #[test]
    fn crop_matches_index_arithmetic() {
        let img = Image::from_fn(12, 10, |c, y, x| (c * 1000 + y * 10 + x) as f64);
        let out = crop_style(&img, 6).unwrap();
        assert_eq!((out.height(), out.width()), (6, 6));
        assert_eq!(out.get(0, 0, 0), 3.0 * 10.0 + 2.0);
        assert_eq!(out.get(2, 5, 5), 2000.0 + 8.0 * 10.0 + 7.0);
        assert!(crop_style(&img, 11).is_err());
    }

    #[test]
    fn crop_768_to_256() {
        let img = Image::filled(768, 768, [0.2; 3]);
        let out = crop_style(&img, 256).unwrap();
        assert_eq!((out.height(), out.width()), (256, 256));
    }

    #[test]
    fn noise_init_is_seeded_and_clamped() {
        let style = fixtures::test_image(4, 4, 0);
        let a = InitPolicy::GaussianNoise
            .initial_image(5, 6, &style, 9)
            .unwrap();
        let b = InitPolicy::GaussianNoise
            .initial_image(5, 6, &style, 9)
            .unwrap();
        let c = InitPolicy::GaussianNoise
            .initial_image(5, 6, &style, 10)
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.as_map().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn style_equal_to_init_stops_at_zero() {
        let enc = fixtures::tiny_encoder(1);
        let style = fixtures::test_image(32, 32, 4);
        let mut job = SynthesisJob::texture(
            style.clone(),
            LossConfig::texture(PairStrategy::PairwiseDescending(
                LayerId::STYLE_DEFAULT.to_vec(),
            )),
        );
        job.init = InitPolicy::Explicit(style.clone());
        let out = run(&job, &enc).unwrap();
        assert_eq!(out.trace[0].report.total, 0.0);
        assert_eq!(out.status, Status::Converged);
        assert_eq!(out.image, style);
    }

    #[test]
    fn undersized_style_is_rejected() {
        let enc = fixtures::tiny_encoder(1);
        let job = SynthesisJob::texture(
            fixtures::test_image(16, 16, 4),
            LossConfig::texture(PairStrategy::Individual(LayerId::STYLE_DEFAULT.to_vec())),
        );
        assert!(matches!(run(&job, &enc), Err(Error::Undersized(_))));
    }
}
