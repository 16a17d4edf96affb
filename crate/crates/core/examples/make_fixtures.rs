//! Writes the committed test fixtures.
//!
//! ```text
//! cargo run --example make_fixtures -- crates/core/tests/fixtures
//! ```

use std::path::PathBuf;

use crossgram::encoder::LayerId;
use crossgram::fixtures::{exact_inverse_decoder, invertible_encoder, tiny_encoder};

const TINY_SEED: u64 = 7;
const INVERTIBLE_SEED: u64 = 11;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/tests/fixtures".into()),
    );
    let decoders = dir.join("decoders");
    std::fs::create_dir_all(&decoders)?;

    tiny_encoder(TINY_SEED).save(dir.join("tiny_encoder.cgwt"))?;
    let inv = invertible_encoder(INVERTIBLE_SEED);
    inv.save(dir.join("invertible_encoder.cgwt"))?;
    for layer in LayerId::STYLE_DEFAULT {
        exact_inverse_decoder(&inv, layer)?.save(decoders.join(format!("{layer}.cgwt")))?;
    }
    println!("fixtures written to {}", dir.display());
    Ok(())
}
