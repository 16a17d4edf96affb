//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossgram::decoder::Decoder;
use crossgram::encoder::{ActivationTrace, LayerId};
use crossgram::fixtures;
use crossgram::gram::{constraint_count, gram_cross, gram_within, LayerPair, PairStrategy};
use crossgram::image_io::write_png;
use crossgram::lbfgs::{minimize, Evaluation, LbfgsConfig};
use crossgram::loss::{
    content_loss, gram_targets, style_loss, CombineMode, LossConfig, LossContext,
};
use crossgram::synthesize::{self, crop_style, within_layer_discrepancy, InitPolicy, SynthesisJob};
use crossgram::tensor::{FeatureMap, Image};
use crossgram::wct::{
    color, fct_pipeline, reshape_concat, whiten, CovarianceStats, FeatureMatrix, LevelScheme,
    SchemeKind,
};

use common::*;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:?}, budget {budget:?}"))?;
    Ok(t)
}

fn reference_widths() -> BTreeMap<LayerId, usize> {
    LayerId::STYLE_DEFAULT
        .into_iter()
        .zip([64, 128, 256, 512, 512])
        .collect()
}

fn c1_constraint_counts() -> Result<String, String> {
    let widths = reference_widths();
    let layers = LayerId::STYLE_DEFAULT.to_vec();
    let start = Instant::now();
    let pairwise = constraint_count(&PairStrategy::PairwiseDescending(layers.clone()), &widths)
        .map_err(|e| e.to_string())?;
    let individual =
        constraint_count(&PairStrategy::Individual(layers), &widths).map_err(|e| e.to_string())?;
    let t = within_budget(start, Duration::from_millis(1))?;
    ensure(pairwise == 434176, || {
        format!("pairwise-descending gave {pairwise}")
    })?;
    ensure(individual == 610304, || {
        format!("individual gave {individual}")
    })?;
    Ok(format!(
        "pairwise-descending={pairwise} individual={individual} in {t:?}"
    ))
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn c2_gradient_suite() -> Result<String, String> {
    let start = Instant::now();
    let enc = tiny_encoder();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let all = LayerId::STYLE_DEFAULT;
    for case in 0..12 {
        let cross = case % 2 == 1;
        let multiplicative = (case / 2) % 2 == 1;
        let with_content = (case / 4) % 2 == 0 || case >= 8;
        let n = rng.random_range(2..=5);
        let mut layers: Vec<LayerId> = all.to_vec();
        while layers.len() > n {
            layers.remove(rng.random_range(0..layers.len()));
        }
        let style = if cross {
            if rng.random_bool(0.5) {
                PairStrategy::PairwiseDescending(layers)
            } else {
                PairStrategy::AllDistinctPairs(layers)
            }
        } else {
            PairStrategy::Individual(layers)
        };
        let pairs = style.resolve().unwrap();
        let pair_weights = pairs
            .iter()
            .map(|&p| (p, rng.random_range(0.5..2.0)))
            .collect();
        let config = LossConfig {
            content_layer: if rng.random_bool(0.5) {
                LayerId::R42
            } else {
                LayerId::R31
            },
            style,
            pair_weights,
            alpha: if multiplicative {
                None
            } else {
                Some(rng.random_range(0.1..10.0))
            },
            combine: if multiplicative {
                CombineMode::Multiplicative
            } else {
                CombineMode::Additive
            },
            include_content: with_content,
        };
        let style_img = random_image(&mut rng, 16, 16);
        let content_img = random_image(&mut rng, 16, 16);
        let ctx = LossContext::new(&enc, config.clone(), &style_img, Some(&content_img))
            .map_err(|e| e.to_string())?;
        let x = random_image(&mut rng, 16, 16);
        let (_, grad) = ctx.evaluate(&x).map_err(|e| e.to_string())?;
        let scale = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-5;
        for _ in 0..20 {
            let (c, y, xx) = (
                rng.random_range(0..3),
                rng.random_range(0..16),
                rng.random_range(0..16),
            );
            let mut plus = x.clone();
            let mut minus = x.clone();
            let v = x.get(c, y, xx);
            plus.as_map_mut().set(c, y, xx, v + h);
            minus.as_map_mut().set(c, y, xx, v - h);
            let fp = ctx.evaluate(&plus).map_err(|e| e.to_string())?.0.total;
            let fm = ctx.evaluate(&minus).map_err(|e| e.to_string())?.0.total;
            let fd = (fp - fm) / (2.0 * h);
            let an = grad.get(c, y, xx);
            let err = rel_err(an, fd, 1e-6 * scale);
            worst = worst.max(err);
            checked += 1;
            ensure(err < 1e-3, || {
                format!("case {case} ({config:?}) pixel ({c},{y},{xx}): analytic {an:e} vs numeric {fd:e}, rel {err:e}")
            })?;
        }
    }
    let t = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "{checked} pixels over 12 configs, worst rel err {worst:.2e}, {t:?}"
    ))
}

fn naive_gram(f_l: &FeatureMap, f_m: &FeatureMap) -> Vec<f64> {
    let (kl, km) = (f_l.channels(), f_m.channels());
    let (h, w) = (f_l.height(), f_l.width());
    let mut g = vec![0.0; kl * km];
    for i in 0..kl {
        for j in 0..km {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let sy = y * f_m.height() / h;
                    let sx = x * f_m.width() / w;
                    s += f_l.get(i, y, x) * f_m.get(j, sy, sx);
                }
            }
            g[i * km + j] = s;
        }
    }
    g
}

fn naive_content(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let mut s = 0.0;
    for c in 0..a.channels() {
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(c, y, x) - b.get(c, y, x);
                s += d * d;
            }
        }
    }
    s / 2.0
}

fn naive_style(
    trace: &ActivationTrace,
    targets: &BTreeMap<LayerPair, Vec<f64>>,
    config: &LossConfig,
) -> f64 {
    let mut total = 0.0;
    for (&(l, m), target) in targets {
        let (fl, fm) = (trace.get(l).unwrap(), trace.get(m).unwrap());
        let g = naive_gram(fl, fm);
        let p = (fl.height() * fl.width()) as f64;
        let k = (fl.channels() * fm.channels()) as f64;
        let mut s = 0.0;
        for (a, b) in g.iter().zip(target) {
            s += (a - b) * (a - b);
        }
        total += config.weight((l, m)) * s / (4.0 * p * p * k);
    }
    total
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

fn c3_oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let enc = tiny_encoder();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut track = |name: &str, i: usize, a: f64, b: f64| -> Result<(), String> {
        let e = rel_err(a, b, 1e-12);
        worst = worst.max(e);
        ensure(e < 1e-5, || format!("{name} instance {i}: {a:e} vs {b:e}"))
    };
    for i in 0..50 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let (kl, km) = (rng.random_range(1..6), rng.random_range(1..6));
        let (hm, wm) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let fl = random_map(&mut rng, kl, h, w);
        let fm = random_map(&mut rng, km, hm, wm);
        let g = gram_within(&fl);
        for (a, b) in g.data().iter().zip(naive_gram(&fl, &fl)) {
            track("gram_within", i, *a, b)?;
        }
        let g = gram_cross(&fl, &fm).map_err(|e| e.to_string())?;
        for (a, b) in g.data().iter().zip(naive_gram(&fl, &fm)) {
            track("gram_cross", i, *a, b)?;
        }

        let side = [32, 40][i % 2];
        let img_n = random_image(&mut rng, side, side);
        let img_c = random_image(&mut rng, side, side);
        let img_s = random_image(&mut rng, side, side);
        let all = LayerId::STYLE_DEFAULT.to_vec();
        let strategy = match i % 3 {
            0 => PairStrategy::Individual(all.clone()),
            1 => PairStrategy::PairwiseDescending(all.clone()),
            _ => PairStrategy::AllDistinctPairs(all.clone()),
        };
        let pairs = strategy.resolve().unwrap();
        let config = LossConfig {
            pair_weights: pairs
                .iter()
                .map(|&p| (p, rng.random_range(0.5..2.0)))
                .collect(),
            ..LossConfig::texture(strategy)
        };
        let mut taps = all.clone();
        taps.push(LayerId::R42);
        let tn = enc.forward(&img_n, &taps).map_err(|e| e.to_string())?;
        let tc = enc.forward(&img_c, &taps).map_err(|e| e.to_string())?;
        let ts = enc.forward(&img_s, &taps).map_err(|e| e.to_string())?;
        let (cv, _) = content_loss(&tn, &tc, LayerId::R42).map_err(|e| e.to_string())?;
        track(
            "content_loss",
            i,
            cv,
            naive_content(tn.get(LayerId::R42).unwrap(), tc.get(LayerId::R42).unwrap()),
        )?;
        let targets = gram_targets(&ts, &pairs).map_err(|e| e.to_string())?;
        let naive_targets: BTreeMap<LayerPair, Vec<f64>> = pairs
            .iter()
            .map(|&(l, m)| ((l, m), naive_gram(ts.get(l).unwrap(), ts.get(m).unwrap())))
            .collect();
        let sv = style_loss(&tn, &targets, &config)
            .map_err(|e| e.to_string())?
            .value;
        track(
            "style_loss",
            i,
            sv,
            naive_style(&tn, &naive_targets, &config),
        )?;
    }
    let t = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("50 instances, worst rel err {worst:.2e}, {t:?}"))
}

fn covariance_blocks(cov: &[f64], n: usize, k1: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..k1 {
        for j in k1..n {
            out.push(cov[i * n + j]);
        }
    }
    out
}

/// Correlated, offset map. The mixing is `I + M` with `|M| < ~0.5`, so the
/// covariance stays well conditioned.
fn mixed_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    let raw = random_map(rng, c, h, w);
    let scale = 0.4 / (c as f64).sqrt();
    let mix: Vec<f64> = (0..c * c)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect();
    let offset: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
    FeatureMap::from_fn(c, h, w, |i, y, x| {
        (0..c)
            .map(|j| mix[i * c + j] * raw.get(j, y, x))
            .sum::<f64>()
            + raw.get(i, y, x)
            + offset[i]
    })
}

fn c4_wct_statistics() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_cov, mut worst_cross, mut worst_mean): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..20 {
        let concat = i % 2 == 1;
        let build = |rng: &mut ChaCha8Rng, k1: usize, k2: usize| -> FeatureMatrix {
            let fine = mixed_map(rng, k1, 20, 20);
            if concat {
                let coarse = mixed_map(rng, k2, 10, 10);
                reshape_concat(&[&fine, &coarse]).unwrap()
            } else {
                reshape_concat(&[&fine]).unwrap()
            }
        };
        let (k1, k2) = if concat {
            (rng.random_range(2..40), rng.random_range(2..24))
        } else {
            (rng.random_range(2..=64), 0)
        };
        let content = build(&mut rng, k1, k2);
        let style = build(&mut rng, k1, k2);
        let stats = CovarianceStats::of(&style).map_err(|e| e.to_string())?;
        let cstats = CovarianceStats::of(&content).map_err(|e| e.to_string())?;
        for (name, st) in [("style", &stats), ("content", &cstats)] {
            let v = &st.eigen.values;
            ensure(st.retained == k1 + k2, || {
                format!(
                    "instance {i}: {name} not full rank, eigenvalue ratio {:e}",
                    v[v.len() - 1] / v[0]
                )
            })?;
        }
        let out = color(&whiten(&content).map_err(|e| e.to_string())?, &stats)
            .map_err(|e| e.to_string())?;
        let (co, cs) = (out.covariance().unwrap(), style.covariance().unwrap());
        let e = frob_rel(&co, &cs);
        worst_cov = worst_cov.max(e);
        ensure(e < 1e-6, || {
            format!("instance {i}: covariance rel err {e:e}")
        })?;
        if concat {
            let n = k1 + k2;
            let e = frob_rel(
                &covariance_blocks(&co, n, k1),
                &covariance_blocks(&cs, n, k1),
            );
            worst_cross = worst_cross.max(e);
            ensure(e < 1e-6, || {
                format!("instance {i}: cross-block rel err {e:e}")
            })?;
        }
        let (mo, ms) = (
            out.centered().mean().to_vec(),
            style.centered().mean().to_vec(),
        );
        let e = max_abs_diff(&mo, &ms);
        worst_mean = worst_mean.max(e);
        ensure(e < 1e-6, || format!("instance {i}: mean err {e:e}"))?;
    }
    let t = within_budget(start, Duration::from_secs(10))?;
    Ok(format!(
        "20 pairs, worst cov {worst_cov:.2e}, cross-block {worst_cross:.2e}, mean {worst_mean:.2e}, {t:?}"
    ))
}

fn check_monotone(values: &[f64]) -> Result<(), String> {
    for (k, w) in values.windows(2).enumerate() {
        ensure(w[1] <= w[0], || {
            format!(
                "value rose at accepted step {}: {:e} -> {:e}",
                k + 1,
                w[0],
                w[1]
            )
        })?;
    }
    Ok(())
}

fn c5_optimizer() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = LbfgsConfig {
        grad_tol: 1e-12,
        max_iterations: 2000,
        ..LbfgsConfig::default()
    };
    let mut worst: f64 = 0.0;
    for q in 0..10 {
        let n = rng.random_range(2..=50);
        let b_mat = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = &b_mat.transpose() * &b_mat + DMatrix::identity(n, n) * 0.5;
        // Vertex form: the minimum value is 0, so f keeps full relative
        // precision near the solution and stays usable for descent checks.
        let exact = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let out = minimize(
            |x: &[f64]| {
                let r = DVector::from_column_slice(x) - &exact;
                let ar = &a * &r;
                Ok(Evaluation {
                    value: 0.5 * r.dot(&ar),
                    gradient: ar.as_slice().to_vec(),
                    aux: (),
                })
            },
            vec![0.0; n],
            &cfg,
        )
        .map_err(|e| e.to_string())?;
        check_monotone(&out.history.iter().map(|r| r.value).collect::<Vec<_>>())?;
        let err = max_abs_diff(&out.x, exact.as_slice());
        worst = worst.max(err);
        ensure(err < 1e-8, || {
            format!(
                "quadratic {q} (n={n}): error {err:e}, status {:?}",
                out.status
            )
        })?;
    }
    let rosen = minimize(
        |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            Ok(Evaluation {
                value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                gradient: vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
                aux: (),
            })
        },
        vec![-1.2, 1.0],
        &LbfgsConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    check_monotone(&rosen.history.iter().map(|r| r.value).collect::<Vec<_>>())?;
    ensure(rosen.value < 1e-10, || {
        format!(
            "Rosenbrock stopped at f={:e} ({:?})",
            rosen.value, rosen.status
        )
    })?;
    let t = within_budget(start, Duration::from_secs(5))?;
    Ok(format!(
        "10 quadratics worst error {worst:.2e}; Rosenbrock f={:.2e} in {} iterations; {t:?}",
        rosen.value, rosen.iterations
    ))
}

fn c6_synthesis_descent() -> Result<String, String> {
    let start = Instant::now();
    let enc = tiny_encoder();
    let style = crop_style(&fixtures::test_image(48, 48, 6), 32).map_err(|e| e.to_string())?;
    let job = SynthesisJob::texture(
        style.clone(),
        LossConfig::texture(PairStrategy::PairwiseDescending(
            LayerId::STYLE_DEFAULT.to_vec(),
        )),
    );
    let out = synthesize::run(&job, &enc).map_err(|e| e.to_string())?;
    ensure(out.trace.len() <= 501, || "more than 500 iterations".into())?;
    check_monotone(&out.trace.iter().map(|r| r.report.total).collect::<Vec<_>>())?;
    let first = out.trace[0].report.style;
    let last = out.trace.last().unwrap().report.style;
    let ratio = last / first;
    ensure(ratio <= 0.1, || format!("style loss ratio {ratio:e}"))?;
    let init = InitPolicy::GaussianNoise
        .initial_image(32, 32, &style, job.seed)
        .map_err(|e| e.to_string())?;
    let layers = LayerId::STYLE_DEFAULT;
    let d0 = within_layer_discrepancy(&enc, &init, &style, &layers).map_err(|e| e.to_string())?;
    let d1 =
        within_layer_discrepancy(&enc, &out.image, &style, &layers).map_err(|e| e.to_string())?;
    ensure(d1 <= 0.5 * d0, || {
        format!("within-layer discrepancy {d0:e} -> {d1:e}")
    })?;
    let t = within_budget(start, Duration::from_secs(120))?;
    Ok(format!(
        "style loss ratio {ratio:.2e} after {} iterations, within-layer discrepancy ratio {:.2e}, {t:?}",
        out.trace.len() - 1,
        d1 / d0
    ))
}

fn c7_degenerate_pairs() -> Result<String, String> {
    let enc = tiny_encoder();
    let style = fixtures::test_image(32, 32, 7);
    let layers = LayerId::STYLE_DEFAULT.to_vec();
    let run = |strategy: PairStrategy| {
        let mut job = SynthesisJob::texture(style.clone(), LossConfig::texture(strategy));
        job.seed = 17;
        job.optimizer.max_iterations = 100;
        synthesize::run(&job, &enc).map_err(|e| e.to_string())
    };
    let within = run(PairStrategy::Individual(layers.clone()))?;
    let cross = run(PairStrategy::Explicit(
        layers.iter().map(|&l| (l, l)).collect(),
    ))?;
    ensure(within.trace.len() == cross.trace.len(), || {
        "trace lengths differ".into()
    })?;
    for (a, b) in within.trace.iter().zip(&cross.trace) {
        let bits = |r: &crossgram::loss::LossRecord| {
            let mut v = vec![
                r.report.total.to_bits(),
                r.report.content.to_bits(),
                r.report.style.to_bits(),
            ];
            v.extend(r.report.terms.iter().map(|(_, x)| x.to_bits()));
            v
        };
        ensure(
            bits(a) == bits(b) && a.to_log_line() == b.to_log_line(),
            || format!("iteration {} differs", a.iter),
        )?;
    }
    let same_image = within
        .image
        .as_map()
        .data()
        .iter()
        .zip(cross.image.as_map().data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same_image, || "final images differ".into())?;
    Ok(format!(
        "{} identical trace records and final image",
        within.trace.len()
    ))
}

fn c8_fct_self_transfer() -> Result<String, String> {
    let enc = invertible_encoder();
    let mut decoders = BTreeMap::new();
    for layer in LayerId::STYLE_DEFAULT {
        let d = Decoder::load(
            decoder_dir().join(format!("{layer}.cgwt")),
            enc.spec(),
            layer,
        )
        .map_err(|e| e.to_string())?;
        decoders.insert(layer, d);
    }
    let img = fixtures::test_image(24, 24, 8);
    let mut report = Vec::new();
    for kind in [
        SchemeKind::Individual,
        SchemeKind::PairwiseDescending,
        SchemeKind::Descending,
    ] {
        let scheme =
            LevelScheme::new(kind, &LayerId::STYLE_DEFAULT, 1).map_err(|e| e.to_string())?;
        let out = fct_pipeline(Some(&img), &img, &scheme, &enc, &decoders, 1.0, 0, None)
            .map_err(|e| e.to_string())?;
        let err = max_abs_diff(out.as_map().data(), img.as_map().data());
        ensure(err < 1e-4, || {
            format!("{kind}: max per-pixel error {err:e}")
        })?;
        report.push(format!("{kind} {err:.1e}"));
    }
    Ok(format!("max per-pixel error: {}", report.join(", ")))
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crossgram"))
        .args(args)
        .env("CROSSGRAM_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn c9_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    write_png(p("content.png"), &fixtures::test_image(32, 32, 90)).map_err(|e| e.to_string())?;
    write_png(p("style.png"), &fixtures::test_image(40, 40, 91)).map_err(|e| e.to_string())?;
    let tiny = tiny_encoder_path().to_string_lossy().into_owned();
    let inv = invertible_encoder_path().to_string_lossy().into_owned();
    let decs = decoder_dir().to_string_lossy().into_owned();
    let mut checked = 0;
    for threads in ["1", "4"] {
        for run in ["a", "b"] {
            let out = |name: &str| p(&format!("{name}_{threads}_{run}"));
            run_cli(
                &[
                    "transfer",
                    "--content",
                    &p("content.png"),
                    "--style",
                    &p("style.png"),
                    "--weights",
                    &tiny,
                    "--max-iter",
                    "15",
                    "--seed",
                    "3",
                    "-o",
                    &(out("transfer") + ".png"),
                ],
                threads,
            )?;
            run_cli(
                &[
                    "synthesize",
                    "--style",
                    &p("style.png"),
                    "--weights",
                    &tiny,
                    "--size",
                    "32x32",
                    "--init",
                    "noise",
                    "--max-iter",
                    "15",
                    "--seed",
                    "4",
                    "-o",
                    &(out("synth") + ".png"),
                ],
                threads,
            )?;
            run_cli(
                &[
                    "fct",
                    "--style",
                    &p("style.png"),
                    "--weights",
                    &inv,
                    "--pool",
                    "none",
                    "--decoders",
                    &decs,
                    "--size",
                    "24x24",
                    "--seed",
                    "5",
                    "-o",
                    &(out("fct") + ".png"),
                ],
                threads,
            )?;
            run_cli(
                &[
                    "gram-stats",
                    "--image",
                    &p("content.png"),
                    "--weights",
                    &tiny,
                    "--pairs",
                    "all-distinct",
                    "-o",
                    &(out("grams") + ".cgwt"),
                ],
                threads,
            )?;
        }
        for name in ["transfer", "synth", "fct"] {
            for ext in ["png", "log"] {
                let a = read(Path::new(&p(&format!("{name}_{threads}_a.{ext}"))));
                let b = read(Path::new(&p(&format!("{name}_{threads}_b.{ext}"))));
                ensure(a == b, || {
                    format!("{name}.{ext} differs between runs with {threads} thread(s)")
                })?;
                checked += 1;
            }
        }
        let a = read(Path::new(&p(&format!("grams_{threads}_a.cgwt"))));
        let b = read(Path::new(&p(&format!("grams_{threads}_b.cgwt"))));
        ensure(a == b, || {
            format!("gram dump differs with {threads} thread(s)")
        })?;
        checked += 1;
    }
    Ok(format!(
        "{checked} output files bit-identical across repeated runs at 1 and 4 threads"
    ))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("1 constraint counts", c1_constraint_counts),
        ("2 gradient suite", c2_gradient_suite),
        ("3 oracle equivalence", c3_oracle_equivalence),
        ("4 WCT statistics matching", c4_wct_statistics),
        ("5 optimizer correctness", c5_optimizer),
        ("6 desk-scale synthesis descent", c6_synthesis_descent),
        ("7 degenerate-pair equivalence", c7_degenerate_pairs),
        ("8 FCT self-transfer", c8_fct_self_transfer),
        ("9 determinism", c9_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
