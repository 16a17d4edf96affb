#![allow(dead_code)]

use std::path::PathBuf;

use crossgram::encoder::{Encoder, EncoderSpec};

/// Seeds used by `examples/make_fixtures.rs`.
pub const TINY_SEED: u64 = 7;
pub const INVERTIBLE_SEED: u64 = 11;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn tiny_encoder_path() -> PathBuf {
    fixture_dir().join("tiny_encoder.cgwt")
}

pub fn invertible_encoder_path() -> PathBuf {
    fixture_dir().join("invertible_encoder.cgwt")
}

pub fn decoder_dir() -> PathBuf {
    fixture_dir().join("decoders")
}

pub fn tiny_encoder() -> Encoder {
    Encoder::load(tiny_encoder_path(), EncoderSpec::tiny()).unwrap()
}

pub fn invertible_encoder() -> Encoder {
    Encoder::load_inferred(invertible_encoder_path(), None).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Relative Frobenius distance `||a - b|| / ||b||`.
pub fn frob_rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
