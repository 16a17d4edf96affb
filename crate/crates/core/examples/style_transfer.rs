//! Cross-layer style transfer with the seeded tiny encoder.
//!
//! ```text
//! cargo run --release --example style_transfer -- out.png
//! ```

use crossgram::fixtures::{test_image, tiny_encoder};
use crossgram::image_io::write_png;
use crossgram::loss::LossConfig;
use crossgram::synthesize::{self, SynthesisJob};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "style_transfer.png".into());
    let encoder = tiny_encoder(7);
    let content = test_image(48, 48, 1);
    let style = test_image(48, 48, 2);

    // Default loss: pairwise-descending cross-layer grams, multiplicative combine.
    let mut job = SynthesisJob::transfer(content, style, LossConfig::default());
    job.optimizer.max_iterations = 200;
    let result = synthesize::run(&job, &encoder)?;

    let (first, last) = (&result.trace[0], result.trace.last().unwrap());
    println!("{}", first.to_log_line());
    println!("{}", last.to_log_line());
    println!("status: {:?}", result.status);
    write_png(&out, &result.image)?;
    println!("wrote {out}");
    Ok(())
}
