//! Texture synthesis, comparing within-layer and cross-layer gram constraints.
//!
//! ```text
//! cargo run --release --example texture_synthesis
//! ```

use crossgram::encoder::LayerId;
use crossgram::fixtures::{test_image, tiny_encoder};
use crossgram::gram::PairStrategy;
use crossgram::image_io::write_png;
use crossgram::loss::LossConfig;
use crossgram::synthesize::{self, crop_style, within_layer_discrepancy, SynthesisJob};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder = tiny_encoder(7);
    let style = crop_style(&test_image(48, 48, 3), 32)?;
    let layers = LayerId::STYLE_DEFAULT.to_vec();

    for (name, strategy) in [
        ("individual", PairStrategy::Individual(layers.clone())),
        ("pairwise", PairStrategy::PairwiseDescending(layers.clone())),
    ] {
        let job = SynthesisJob::texture(style.clone(), LossConfig::texture(strategy));
        let result = synthesize::run(&job, &encoder)?;
        let first = result.trace[0].report.style;
        let last = result.trace.last().unwrap().report.style;
        let d = within_layer_discrepancy(&encoder, &result.image, &style, &layers)?;
        println!(
            "{name:>10}: style loss {first:.3e} -> {last:.3e} in {} iterations, within-layer discrepancy {d:.3e}",
            result.trace.len() - 1
        );
        write_png(format!("texture_{name}.png"), &result.image)?;
    }
    Ok(())
}
