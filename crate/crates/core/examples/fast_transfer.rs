//! Feed-forward cascade (whitening and coloring) with exact-inverse decoders.
//!
//! ```text
//! cargo run --release --example fast_transfer
//! ```

use std::collections::BTreeMap;

use crossgram::encoder::LayerId;
use crossgram::fixtures::{exact_inverse_decoder, invertible_encoder, test_image};
use crossgram::image_io::write_png;
use crossgram::wct::{fct_pipeline, LevelScheme, SchemeKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let encoder = invertible_encoder(11);
    let mut decoders = BTreeMap::new();
    for layer in LayerId::STYLE_DEFAULT {
        decoders.insert(layer, exact_inverse_decoder(&encoder, layer)?);
    }
    let content = test_image(40, 40, 4);
    let style = test_image(40, 40, 5);

    for kind in [
        SchemeKind::Individual,
        SchemeKind::PairwiseDescending,
        SchemeKind::Descending,
    ] {
        let scheme = LevelScheme::new(kind, &LayerId::STYLE_DEFAULT, 1)?;
        let out = fct_pipeline(
            Some(&content),
            &style,
            &scheme,
            &encoder,
            &decoders,
            1.0,
            0,
            None,
        )?;
        println!("{kind}: {} levels", scheme.levels.len());
        write_png(format!("fct_{kind}.png"), &out)?;
    }

    // Texture mode: start from noise, three passes.
    let scheme = LevelScheme::new(SchemeKind::PairwiseDescending, &LayerId::STYLE_DEFAULT, 3)?;
    let texture = fct_pipeline(
        None,
        &style,
        &scheme,
        &encoder,
        &decoders,
        1.0,
        42,
        Some((40, 60)),
    )?;
    write_png("fct_texture.png", &texture)?;
    Ok(())
}
