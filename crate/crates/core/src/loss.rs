//! Content and style losses, their combination, and the pixel gradient.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::encoder::{ActivationTrace, Encoder, LayerId};
use crate::error::{Error, Result};
use crate::gram::{gram_backward, gram_cross, GramMatrix, LayerPair, PairStrategy};
use crate::tensor::{FeatureMap, Image};

/// How content and style losses are merged into one objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CombineMode {
    /// `L_c + alpha * L_s`
    Additive,
    /// `L_c * L_s`; needs no balance parameter.
    #[default]
    Multiplicative,
}

impl FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" | "add" => Ok(Self::Additive),
            "multiplicative" | "mul" => Ok(Self::Multiplicative),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected additive or multiplicative)"
            ))),
        }
    }
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Additive => "additive",
            Self::Multiplicative => "multiplicative",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub content_layer: LayerId,
    pub style: PairStrategy,
    /// Per-pair weights; pairs not listed weigh 1.
    pub pair_weights: BTreeMap<LayerPair, f64>,
    /// Style weight in additive mode.
    pub alpha: Option<f64>,
    pub combine: CombineMode,
    pub include_content: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            content_layer: LayerId::R42,
            style: PairStrategy::PairwiseDescending(LayerId::STYLE_DEFAULT.to_vec()),
            pair_weights: BTreeMap::new(),
            alpha: None,
            combine: CombineMode::Multiplicative,
            include_content: true,
        }
    }
}

impl LossConfig {
    /// Style-only objective for texture synthesis.
    pub fn texture(style: PairStrategy) -> Self {
        Self {
            style,
            include_content: false,
            ..Self::default()
        }
    }

    pub fn weight(&self, pair: LayerPair) -> f64 {
        self.pair_weights.get(&pair).copied().unwrap_or(1.0)
    }

    /// Checks the config against an encoder and returns the resolved pairs.
    pub fn validate(&self, encoder: &Encoder) -> Result<Vec<LayerPair>> {
        let pairs = self.style.resolve()?;
        let spec = encoder.spec();
        for &(l, m) in &pairs {
            for layer in [l, m] {
                if !spec.contains(layer) {
                    return Err(Error::UnknownLayer(layer.to_string()));
                }
            }
        }
        for (pair, w) in &self.pair_weights {
            if !pairs.contains(pair) {
                return Err(Error::Config(format!(
                    "weight given for pair {}-{} which the strategy does not use",
                    pair.0, pair.1
                )));
            }
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::Config(format!(
                    "weight for pair {}-{} must be positive, got {w}",
                    pair.0, pair.1
                )));
            }
        }
        if self.include_content {
            if !spec.contains(self.content_layer) {
                return Err(Error::UnknownLayer(self.content_layer.to_string()));
            }
            if self.combine == CombineMode::Additive {
                match self.alpha {
                    None => {
                        return Err(Error::Config("additive mode requires --alpha".into()));
                    }
                    Some(a) if !(a.is_finite() && a >= 0.0) => {
                        return Err(Error::Config(format!(
                            "alpha must be non-negative, got {a}"
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(pairs)
    }

    /// Factors `(wc, ws)` such that `grad total = wc * grad L_c + ws * grad L_s`.
    fn gradient_weights(&self, content: f64, style: f64) -> (f64, f64) {
        if !self.include_content {
            return (0.0, 1.0);
        }
        match self.combine {
            CombineMode::Additive => (1.0, self.alpha.unwrap_or(0.0)),
            CombineMode::Multiplicative => (style, content),
        }
    }

    fn total(&self, content: f64, style: f64) -> f64 {
        if !self.include_content {
            return style;
        }
        match self.combine {
            CombineMode::Additive => content + self.alpha.unwrap_or(0.0) * style,
            CombineMode::Multiplicative => content * style,
        }
    }
}

/// Loss values of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub content: f64,
    pub style: f64,
    /// Weighted, normalized contribution of each controlled pair.
    pub terms: Vec<(LayerPair, f64)>,
}

/// A [`LossReport`] tagged with its optimizer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub report: LossReport,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.8e}")
}

impl LossRecord {
    /// `iter=<n> total=<v> content=<v> style=<v> pair:<l>-<m>=<v> ...`
    pub fn to_log_line(&self) -> String {
        let r = &self.report;
        let mut line = format!(
            "iter={} total={} content={} style={}",
            self.iter,
            fmt_value(r.total),
            fmt_value(r.content),
            fmt_value(r.style)
        );
        for ((l, m), v) in &r.terms {
            write!(line, " pair:{l}-{m}={}", fmt_value(*v)).unwrap();
        }
        line
    }

    pub fn parse_log_line(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed loss log line `{line}`"));
        let mut fields = line.split_whitespace();
        let mut take = |key: &str| -> Result<String> {
            let f = fields.next().ok_or_else(bad)?;
            f.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(bad)
        };
        let iter = take("iter")?.parse().map_err(|_| bad())?;
        let total = take("total")?.parse().map_err(|_| bad())?;
        let content = take("content")?.parse().map_err(|_| bad())?;
        let style = take("style")?.parse().map_err(|_| bad())?;
        let mut terms = Vec::new();
        for f in fields {
            let rest = f.strip_prefix("pair:").ok_or_else(bad)?;
            let (pair, v) = rest.split_once('=').ok_or_else(bad)?;
            let (l, m) = pair.split_once('-').ok_or_else(bad)?;
            terms.push(((l.parse()?, m.parse()?), v.parse().map_err(|_| bad())?));
        }
        Ok(Self {
            iter,
            report: LossReport {
                total,
                content,
                style,
                terms,
            },
        })
    }
}

/// Gram targets keyed by layer pair.
pub type GramTargets = BTreeMap<LayerPair, GramMatrix>;

/// Gram matrices of `trace` for every pair; `trace` must tap every layer involved.
pub fn gram_targets(trace: &ActivationTrace, pairs: &[LayerPair]) -> Result<GramTargets> {
    pairs
        .iter()
        .map(|&(l, m)| {
            let g = gram_cross(trace.get(l)?, trace.get(m)?)?.labeled((l, m));
            Ok(((l, m), g))
        })
        .collect()
}

/// `1/2 * sum (f_n - f_c)^2` and its cotangent `f_n - f_c`.
pub fn content_loss_maps(f_n: &FeatureMap, f_c: &FeatureMap) -> Result<(f64, FeatureMap)> {
    f_n.check_same_shape(f_c, "content_loss")?;
    let mut cot = f_n.clone();
    cot.add_scaled(f_c, -1.0);
    let value = 0.5 * cot.squared_norm();
    Ok((value, cot))
}

pub fn content_loss(
    trace_n: &ActivationTrace,
    trace_c: &ActivationTrace,
    layer: LayerId,
) -> Result<(f64, FeatureMap)> {
    content_loss_maps(trace_n.get(layer)?, trace_c.get(layer)?)
}

#[derive(Clone, Debug)]
pub struct StyleLoss {
    pub value: f64,
    pub terms: Vec<(LayerPair, f64)>,
    /// Gradient of `value` with respect to each style layer's activation.
    pub cotangents: BTreeMap<LayerId, FeatureMap>,
}

/// Style loss over the resolved pairs of `config`.
///
/// Each pair contributes `w / (4 K_l K_m) * sum_ij (G_n/P_n - G_s/P_s)^2`, where
/// `P` is the finer layer's site count in the respective image. With equal
/// image sizes this is `w / (4 P^2 K_l K_m) * sum_ij (G_n - G_s)^2`.
pub fn style_loss(
    trace_n: &ActivationTrace,
    targets: &GramTargets,
    config: &LossConfig,
) -> Result<StyleLoss> {
    let pairs = config.style.resolve()?;
    style_loss_pairs(trace_n, targets, config, &pairs)
}

fn style_loss_pairs(
    trace_n: &ActivationTrace,
    targets: &GramTargets,
    config: &LossConfig,
    pairs: &[LayerPair],
) -> Result<StyleLoss> {
    let mut value = 0.0;
    let mut terms = Vec::with_capacity(pairs.len());
    let mut cotangents: BTreeMap<LayerId, FeatureMap> = BTreeMap::new();
    for &(l, m) in pairs {
        let target = targets
            .get(&(l, m))
            .ok_or_else(|| Error::Config(format!("no gram target for pair {l}-{m}")))?;
        let (f_l, f_m) = (trace_n.get(l)?, trace_n.get(m)?);
        let g = gram_cross(f_l, f_m)?;
        if (g.rows(), g.cols()) != (target.rows(), target.cols()) {
            return Err(Error::shape(
                "style_loss",
                format!(
                    "pair {l}-{m}: gram is {}x{}, target is {}x{}",
                    g.rows(),
                    g.cols(),
                    target.rows(),
                    target.cols()
                ),
            ));
        }
        let p_n = g.sites() as f64;
        let p_t = target.sites() as f64;
        let k = (g.rows() * g.cols()) as f64;
        let w = config.weight((l, m));
        let scale = w / (4.0 * k);

        let mut upstream = GramMatrix::zeros(g.rows(), g.cols());
        let mut sum = 0.0;
        for ((u, &gn), &gt) in upstream
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(target.data())
        {
            let d = gn / p_n - gt / p_t;
            sum += d * d;
            *u = 2.0 * scale * d / p_n;
        }
        let term = scale * sum;
        value += term;
        terms.push(((l, m), term));

        let (grad_l, grad_m) = gram_backward(f_l, f_m, &upstream)?;
        for (layer, grad) in [(l, grad_l), (m, grad_m)] {
            match cotangents.get_mut(&layer) {
                Some(acc) => acc.add_scaled(&grad, 1.0),
                None => {
                    cotangents.insert(layer, grad);
                }
            }
        }
    }
    Ok(StyleLoss {
        value,
        terms,
        cotangents,
    })
}

/// Merges content and style values and their image gradients according to `config`.
pub fn combine(
    content: f64,
    style: f64,
    content_grad: &FeatureMap,
    style_grad: &FeatureMap,
    config: &LossConfig,
) -> Result<(f64, FeatureMap)> {
    if content < 0.0 || style < 0.0 {
        return Err(Error::Config(format!(
            "loss values must be non-negative, got content={content} style={style}"
        )));
    }
    if config.include_content && config.combine == CombineMode::Additive && config.alpha.is_none() {
        return Err(Error::Config("additive mode requires --alpha".into()));
    }
    content_grad.check_same_shape(style_grad, "combine")?;
    let (wc, ws) = config.gradient_weights(content, style);
    let mut grad = FeatureMap::zeros(
        content_grad.channels(),
        content_grad.height(),
        content_grad.width(),
    );
    if wc != 0.0 {
        grad.add_scaled(content_grad, wc);
    }
    grad.add_scaled(style_grad, ws);
    Ok((config.total(content, style), grad))
}

/// The objective optimized over pixels: style targets and content
/// activations are computed once and reused for every evaluation.
#[derive(Clone, Debug)]
pub struct LossContext<'a> {
    encoder: &'a Encoder,
    config: LossConfig,
    pairs: Vec<LayerPair>,
    targets: GramTargets,
    content_target: Option<FeatureMap>,
    taps: Vec<LayerId>,
}

impl<'a> LossContext<'a> {
    /// Precomputes style grams from `style` and, when content is enabled, the
    /// content activation of `content`.
    pub fn new(
        encoder: &'a Encoder,
        config: LossConfig,
        style: &Image,
        content: Option<&Image>,
    ) -> Result<Self> {
        let pairs = config.validate(encoder)?;
        let style_layers: Vec<LayerId> = config.style.layers()?.into_iter().collect();
        let style_trace = encoder.forward(style, &style_layers)?;
        let targets = gram_targets(&style_trace, &pairs)?;
        let content_trace = match (config.include_content, content) {
            (true, Some(img)) => Some(encoder.forward(img, &[config.content_layer])?),
            (true, None) => {
                return Err(Error::Config(
                    "content loss enabled but no content image given".into(),
                ))
            }
            (false, _) => None,
        };
        Self::from_parts(encoder, config, targets, content_trace.as_ref())
    }

    pub fn from_parts(
        encoder: &'a Encoder,
        config: LossConfig,
        targets: GramTargets,
        content_trace: Option<&ActivationTrace>,
    ) -> Result<Self> {
        let pairs = config.validate(encoder)?;
        let mut taps: Vec<LayerId> = config.style.layers()?.into_iter().collect();
        let content_target = if config.include_content {
            let trace = content_trace.ok_or_else(|| {
                Error::Config("content loss enabled but no content trace given".into())
            })?;
            taps.push(config.content_layer);
            Some(trace.get(config.content_layer)?.clone())
        } else {
            None
        };
        taps.sort();
        taps.dedup();
        Ok(Self {
            encoder,
            config,
            pairs,
            targets,
            content_target,
            taps,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        self.encoder
    }

    pub fn pairs(&self) -> &[LayerPair] {
        &self.pairs
    }

    pub fn targets(&self) -> &GramTargets {
        &self.targets
    }

    /// One forward pass, every loss term, and one backward pass.
    pub fn evaluate(&self, image: &Image) -> Result<(LossReport, FeatureMap)> {
        let trace = self.encoder.forward(image, &self.taps)?;
        let style = style_loss_pairs(&trace, &self.targets, &self.config, &self.pairs)?;
        let content = match &self.content_target {
            Some(target) => Some(content_loss_maps(
                trace.get(self.config.content_layer)?,
                target,
            )?),
            None => None,
        };
        let content_value = content.as_ref().map_or(0.0, |c| c.0);
        let (wc, ws) = self.config.gradient_weights(content_value, style.value);

        let mut cotangents = style.cotangents;
        for cot in cotangents.values_mut() {
            cot.scale(ws);
        }
        if let Some((_, cot)) = content {
            let layer = self.config.content_layer;
            match cotangents.get_mut(&layer) {
                Some(acc) => acc.add_scaled(&cot, wc),
                None => {
                    let mut c = cot;
                    c.scale(wc);
                    cotangents.insert(layer, c);
                }
            }
        }
        let grad = self.encoder.backward_to_image(&trace, &cotangents)?;
        let report = LossReport {
            total: self.config.total(content_value, style.value),
            content: content_value,
            style: style.value,
            terms: style.terms,
        };
        Ok((report, grad))
    }
}

/// Evaluates the full objective at `image`.
pub fn evaluate(
    image: &Image,
    style_targets: &GramTargets,
    content_trace: Option<&ActivationTrace>,
    config: &LossConfig,
    encoder: &Encoder,
) -> Result<(LossReport, FeatureMap)> {
    LossContext::from_parts(
        encoder,
        config.clone(),
        style_targets.clone(),
        content_trace,
    )?
    .evaluate(image)
}
