//! Constraint counts of each pairing strategy at the VGG-19 reference widths.
//!
//! ```text
//! cargo run --example gram_stats
//! ```

use crossgram::encoder::LayerId;
use crossgram::gram::{constraint_count, PairStrategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let widths = LayerId::STYLE_DEFAULT
        .into_iter()
        .zip([64, 128, 256, 512, 512])
        .collect();
    let layers = LayerId::STYLE_DEFAULT.to_vec();
    for strategy in [
        PairStrategy::Individual(layers.clone()),
        PairStrategy::PairwiseDescending(layers.clone()),
        PairStrategy::AllDistinctPairs(layers.clone()),
    ] {
        println!(
            "{strategy}: {} gram entries",
            constraint_count(&strategy, &widths)?
        );
        for (l, m) in strategy.resolve()? {
            println!("  {l}-{m}: {}x{}", widths[&l], widths[&m]);
        }
    }
    Ok(())
}
