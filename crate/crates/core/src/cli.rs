//! Command-line front end.
//!
//! Every option may also be given in a `key = value` file passed with
//! `--config`; the key is the long flag name. Flags override file keys,
//! which override defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::decoder::Decoder;
use crate::encoder::{Encoder, LayerId};
use crate::error::{Error, Result};
use crate::gram::{constraint_count, gram_cross, grams_to_tensors, LayerPair, PairStrategy};
use crate::image_io::{read_png, write_png};
use crate::lbfgs::{LbfgsConfig, Status};
use crate::loss::{CombineMode, LossConfig};
use crate::synthesize::{self, crop_style, InitPolicy, SynthesisJob, SynthesisResult};
use crate::tensor::{Image, PoolMode};
use crate::wct::{fct_pipeline, LevelScheme, SchemeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_ABORT: i32 = 4;

/// Environment variable capping worker threads; 0 means one per core.
pub const THREADS_ENV: &str = "CROSSGRAM_THREADS";

fn opt(name: &'static str, value: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name(value).help(help)
}

fn common(cmd: Command) -> Command {
    cmd.arg(opt("weights", "FILE", "encoder weights (CGWT)"))
        .arg(opt(
            "pool",
            "MODE",
            "pooling between blocks: max, avg or none [default: max]",
        ))
        .arg(opt("seed", "N", "RNG seed [default: 0]"))
        .arg(opt("output", "FILE", "output path").short('o'))
        .arg(opt(
            "config",
            "FILE",
            "key = value file with defaults for any flag",
        ))
        .arg(
            Arg::new("verbose")
                .long("verbose")
                .short('v')
                .action(ArgAction::SetTrue)
                .help("log progress and per-iteration losses"),
        )
}

fn style_opts(cmd: Command) -> Command {
    cmd.arg(opt("style", "PNG", "style image"))
        .arg(opt(
            "layers",
            "LIST",
            "style layers [default: R11,R21,R31,R41,R51]",
        ))
        .arg(opt(
            "style-crop",
            "EDGE",
            "centered square crop of the style image",
        ))
}

fn optimizer_opts(cmd: Command) -> Command {
    cmd.arg(opt(
        "pairs",
        "STRATEGY",
        "individual, pairwise-descending, all-distinct, or a list like R11-R21,R21-R31",
    ))
    .arg(opt(
        "pair-weights",
        "LIST",
        "per-pair weights, e.g. R11-R21=2,R21-R31=0.5",
    ))
    .arg(opt("max-iter", "N", "L-BFGS iterations [default: 500]"))
    .arg(opt(
        "tol",
        "X",
        "gradient infinity-norm tolerance [default: 1e-7]",
    ))
    .arg(opt("memory", "N", "L-BFGS history size [default: 10]"))
}

pub fn command() -> Command {
    let transfer = optimizer_opts(style_opts(common(Command::new("transfer"))))
        .about("Style transfer by pixel optimization")
        .arg(opt("content", "PNG", "content image"))
        .arg(opt(
            "content-layer",
            "LAYER",
            "content layer [default: R42]",
        ))
        .arg(opt(
            "mode",
            "MODE",
            "additive or multiplicative [default: multiplicative]",
        ))
        .arg(opt("alpha", "X", "style weight, required in additive mode"))
        .arg(opt(
            "init",
            "POLICY",
            "noise, mean-color or shifted-noise [default: noise]",
        ));
    let synthesize = optimizer_opts(style_opts(common(Command::new("synthesize"))))
        .about("Texture synthesis by pixel optimization")
        .arg(opt("size", "HxW", "output size [default: style size]"))
        .arg(opt(
            "init",
            "POLICY",
            "noise, mean-color or shifted-noise [default: mean-color]",
        ));
    let fct = style_opts(common(Command::new("fct")))
        .about("Fast transfer by whitening and coloring concatenated layer features")
        .arg(opt(
            "content",
            "PNG",
            "content image; omit for texture synthesis",
        ))
        .arg(opt(
            "decoders",
            "DIR",
            "directory holding <LAYER>.cgwt decoders",
        ))
        .arg(opt(
            "scheme",
            "SCHEME",
            "individual, pairwise-descending or descending [default: pairwise-descending]",
        ))
        .arg(opt(
            "passes",
            "N",
            "cascade repetitions [default: 1, or 3 without content]",
        ))
        .arg(opt(
            "blend",
            "X",
            "transformed/original feature blend [default: 1]",
        ))
        .arg(opt(
            "size",
            "HxW",
            "texture output size [default: style size]",
        ));
    let gram_stats = common(Command::new("gram-stats"))
        .about("Constraint counts and gram matrices of a pair strategy")
        .arg(opt(
            "widths",
            "LIST",
            "channel width per layer, e.g. 64,128,256,512,512",
        ))
        .arg(opt(
            "layers",
            "LIST",
            "style layers [default: R11,R21,R31,R41,R51]",
        ))
        .arg(opt(
            "pairs",
            "STRATEGY",
            "pair strategy [default: pairwise-descending]",
        ))
        .arg(opt(
            "image",
            "PNG",
            "image whose grams are dumped to --output",
        ));
    Command::new("crossgram")
        .about("Cross-layer gram style transfer, texture synthesis and fast transfer")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(transfer)
        .subcommand(synthesize)
        .subcommand(fct)
        .subcommand(gram_stats)
}

/// Parses `key = value` lines; blank lines and lines starting with `#` are ignored.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {}: expected `key = value`", n + 1))
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::Config(format!(
                "config line {}: duplicate key `{k}`",
                n + 1
            )));
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Option values after merging defaults, the config file and flags.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Merges `file` entries under `flags`, rejecting keys not in `known`.
    pub fn merge(
        known: &[String],
        file: Vec<(String, String)>,
        flags: Vec<(String, String)>,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in file {
            if !known.contains(&k) || k == "config" || k == "verbose" {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
            values.insert(k, v);
        }
        values.extend(flags);
        Ok(Self { values })
    }

    fn from_matches(cmd: &Command, m: &ArgMatches) -> Result<Self> {
        let known: Vec<String> = cmd
            .get_arguments()
            .map(|a| a.get_id().to_string())
            .collect();
        let mut flags = Vec::new();
        for id in &known {
            if id == "verbose" || m.value_source(id) != Some(ValueSource::CommandLine) {
                continue;
            }
            if let Some(v) = m.get_one::<String>(id) {
                flags.push((id.clone(), v.clone()));
            }
        }
        let file = match m.get_one::<String>("config") {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_config(&text)?
            }
            None => Vec::new(),
        };
        Self::merge(&known, file, flags)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required --{key}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("--{key}: cannot parse `{v}`"))),
        }
    }

    fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("--{key}: cannot parse `{v}`")))
            })
            .transpose()
    }
}

pub fn parse_layers(list: &str) -> Result<Vec<LayerId>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

/// `HxW` or a single side for square outputs.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--size: expected HxW, got `{s}`"));
    let (h, w) = s.split_once('x').unwrap_or((s, s));
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn parse_pairs(spec: &str, layers: Vec<LayerId>) -> Result<PairStrategy> {
    match spec {
        "individual"
        | "within"
        | "pairwise-descending"
        | "pairwise"
        | "all-distinct"
        | "all-distinct-pairs" => PairStrategy::from_name(spec, layers),
        list => PairStrategy::parse_explicit(list).map_err(|e| {
            Error::Config(format!(
                "--pairs `{list}` is neither a strategy name nor a pair list ({e})"
            ))
        }),
    }
}

pub fn parse_pair_weights(list: &str) -> Result<BTreeMap<LayerPair, f64>> {
    let mut out = BTreeMap::new();
    for item in list.split(',') {
        let bad = || Error::Config(format!("--pair-weights: expected R11-R21=2, got `{item}`"));
        let (pair, w) = item.split_once('=').ok_or_else(bad)?;
        let (a, b) = pair.trim().split_once('-').ok_or_else(bad)?;
        let (a, b): LayerPair = (a.parse()?, b.parse()?);
        let w: f64 = w.trim().parse().map_err(|_| bad())?;
        out.insert(if a <= b { (a, b) } else { (b, a) }, w);
    }
    Ok(out)
}

fn layers(s: &Settings) -> Result<Vec<LayerId>> {
    s.get("layers")
        .map(parse_layers)
        .unwrap_or_else(|| Ok(LayerId::STYLE_DEFAULT.to_vec()))
}

fn load_encoder(s: &Settings) -> Result<Encoder> {
    let pool = match s.get("pool").unwrap_or("max") {
        "none" => None,
        other => Some(other.parse::<PoolMode>()?),
    };
    Encoder::load_inferred(s.require("weights")?, pool)
}

fn load_style(s: &Settings) -> Result<Image> {
    let style = read_png(s.require("style")?)?;
    match s.parse_opt::<usize>("style-crop")? {
        Some(edge) => crop_style(&style, edge),
        None => Ok(style),
    }
}

fn optimizer(s: &Settings) -> Result<LbfgsConfig> {
    let d = LbfgsConfig::default();
    Ok(LbfgsConfig {
        max_iterations: s.parse_or("max-iter", d.max_iterations)?,
        grad_tol: s.parse_or("tol", d.grad_tol)?,
        memory: s.parse_or("memory", d.memory)?,
        ..d
    })
}

fn style_loss_config(s: &Settings) -> Result<LossConfig> {
    let strategy = parse_pairs(s.get("pairs").unwrap_or("pairwise-descending"), layers(s)?)?;
    let pair_weights = s
        .get("pair-weights")
        .map(parse_pair_weights)
        .transpose()?
        .unwrap_or_default();
    Ok(LossConfig {
        pair_weights,
        ..LossConfig::texture(strategy)
    })
}

/// Sidecar log path: `out.png` -> `out.log`.
pub fn log_path(output: &Path) -> PathBuf {
    output.with_extension("log")
}

/// Partial-result path: `out.png` -> `out.partial.png`.
pub fn partial_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy())
        .unwrap_or_default();
    output.with_file_name(format!("{stem}.partial.png"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn status_name(status: Status) -> String {
    match status {
        Status::Converged => "converged".into(),
        Status::MaxIterations => "max-iterations".into(),
        Status::LineSearchFailed => "line-search-failed".into(),
        Status::NonFinite { iteration } => format!("non-finite at iteration {iteration}"),
    }
}

fn finish_optimization(output: &Path, result: &SynthesisResult, seed: u64) -> Result<i32> {
    let mut log = String::new();
    for rec in &result.trace {
        log::info!("{}", rec.to_log_line());
        writeln!(log, "{}", rec.to_log_line()).unwrap();
    }
    writeln!(log, "# seed={seed} status={}", status_name(result.status)).unwrap();
    write_text(&log_path(output), &log)?;
    if result.aborted() {
        let partial = partial_path(output);
        write_png(&partial, &result.image)?;
        eprintln!(
            "error: optimizer aborted ({}); partial image written to {}",
            status_name(result.status),
            partial.display()
        );
        return Ok(EXIT_ABORT);
    }
    if result.status == Status::LineSearchFailed {
        log::warn!("line search failed; writing the best image found");
    }
    write_png(output, &result.image)?;
    Ok(EXIT_OK)
}

fn cmd_transfer(s: &Settings) -> Result<i32> {
    let output = PathBuf::from(s.require("output")?);
    let mut loss = style_loss_config(s)?;
    loss.include_content = true;
    loss.content_layer = s.parse_or("content-layer", LayerId::R42)?;
    loss.combine = s.parse_or("mode", CombineMode::Multiplicative)?;
    loss.alpha = s.parse_opt("alpha")?;
    if loss.combine == CombineMode::Additive && loss.alpha.is_none() {
        return Err(Error::Config("--mode additive requires --alpha".into()));
    }
    let init = InitPolicy::from_name(s.get("init").unwrap_or("noise"))?;
    let seed = s.parse_or("seed", 0u64)?;
    let optimizer = optimizer(s)?;
    s.require("content")?;
    s.require("style")?;
    let encoder = load_encoder(s)?;
    loss.validate(&encoder)?;
    let content = read_png(s.require("content")?)?;
    let style = load_style(s)?;
    eprintln!("seed={seed}");
    let job = SynthesisJob {
        content: Some(content),
        style,
        loss,
        size: None,
        init,
        seed,
        optimizer,
    };
    let result = synthesize::run(&job, &encoder)?;
    finish_optimization(&output, &result, seed)
}

fn cmd_synthesize(s: &Settings) -> Result<i32> {
    let output = PathBuf::from(s.require("output")?);
    let loss = style_loss_config(s)?;
    let init = InitPolicy::from_name(s.get("init").unwrap_or("mean-color"))?;
    let seed = s.parse_or("seed", 0u64)?;
    let size = s.get("size").map(parse_size).transpose()?;
    let optimizer = optimizer(s)?;
    s.require("style")?;
    let encoder = load_encoder(s)?;
    loss.validate(&encoder)?;
    let style = load_style(s)?;
    eprintln!("seed={seed}");
    let job = SynthesisJob {
        content: None,
        style,
        loss,
        size,
        init,
        seed,
        optimizer,
    };
    let result = synthesize::run(&job, &encoder)?;
    finish_optimization(&output, &result, seed)
}

/// Decoder file for `layer` inside `dir`.
pub fn decoder_path(dir: &Path, layer: LayerId) -> PathBuf {
    dir.join(format!("{layer}.cgwt"))
}

fn cmd_fct(s: &Settings) -> Result<i32> {
    let output = PathBuf::from(s.require("output")?);
    let kind: SchemeKind = s.parse_or("scheme", SchemeKind::PairwiseDescending)?;
    let texture = s.get("content").is_none();
    let passes = s.parse_or("passes", if texture { 3 } else { 1 })?;
    let blend: f64 = s.parse_or("blend", 1.0)?;
    if !(0.0..=1.0).contains(&blend) {
        return Err(Error::Config(format!(
            "--blend must lie in [0, 1], got {blend}"
        )));
    }
    let seed = s.parse_or("seed", 0u64)?;
    let size = s.get("size").map(parse_size).transpose()?;
    let scheme = LevelScheme::new(kind, &layers(s)?, passes)?;
    let dir = PathBuf::from(s.require("decoders")?);
    s.require("style")?;
    let encoder = load_encoder(s)?;
    let mut decoders = BTreeMap::new();
    for layer in scheme.decoder_layers() {
        let path = decoder_path(&dir, layer);
        if !path.is_file() {
            return Err(Error::MissingDecoder(format!(
                "{layer} ({} not found)",
                path.display()
            )));
        }
        decoders.insert(layer, Decoder::load(&path, encoder.spec(), layer)?);
    }
    let content = s.get("content").map(read_png).transpose()?;
    let style = load_style(s)?;
    eprintln!("seed={seed}");
    let image = fct_pipeline(
        content.as_ref(),
        &style,
        &scheme,
        &encoder,
        &decoders,
        blend,
        seed,
        size,
    )?;
    let mut log = String::new();
    for pass in 1..=scheme.passes {
        for level in &scheme.levels {
            let names: Vec<String> = level.iter().map(LayerId::to_string).collect();
            writeln!(
                log,
                "pass={pass} level={} decoder={}",
                names.join(","),
                level[0]
            )
            .unwrap();
        }
    }
    writeln!(
        log,
        "# seed={seed} scheme={kind} passes={} blend={blend}",
        scheme.passes
    )
    .unwrap();
    write_text(&log_path(&output), &log)?;
    write_png(&output, &image)?;
    Ok(EXIT_OK)
}

fn cmd_gram_stats(s: &Settings) -> Result<i32> {
    let layers = layers(s)?;
    let strategy = parse_pairs(
        s.get("pairs").unwrap_or("pairwise-descending"),
        layers.clone(),
    )?;
    let encoder = s.get("weights").map(|_| load_encoder(s)).transpose()?;
    let widths: BTreeMap<LayerId, usize> = match (s.get("widths"), &encoder) {
        (Some(list), _) => {
            let w: Vec<usize> = list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("--widths: bad width `{v}`")))
                })
                .collect::<Result<_>>()?;
            if w.len() != layers.len() {
                return Err(Error::Config(format!(
                    "--widths gives {} widths for {} layers",
                    w.len(),
                    layers.len()
                )));
            }
            let mut sorted = layers.clone();
            sorted.sort();
            sorted.into_iter().zip(w).collect()
        }
        (None, Some(enc)) => enc.spec().channel_widths(),
        (None, None) => {
            return Err(Error::Config(
                "missing required --widths or --weights".into(),
            ))
        }
    };
    for (l, m) in strategy.resolve()? {
        let (kl, km) = (widths.get(&l), widths.get(&m));
        let (kl, km) = kl
            .zip(km)
            .ok_or_else(|| Error::UnknownLayer(format!("{l} or {m}")))?;
        println!("pair={l}-{m} entries={}", kl * km);
    }
    println!(
        "strategy={strategy} constraints={}",
        constraint_count(&strategy, &widths)?
    );

    if let Some(path) = s.get("image") {
        let encoder = encoder.ok_or_else(|| Error::Config("--image requires --weights".into()))?;
        let output = PathBuf::from(s.require("output")?);
        let image = read_png(path)?;
        let taps: Vec<LayerId> = strategy.layers()?.into_iter().collect();
        let trace = encoder.forward(&image, &taps)?;
        let mut grams = BTreeMap::new();
        for (l, m) in strategy.resolve()? {
            let g = gram_cross(trace.get(l)?, trace.get(m)?)?.labeled((l, m));
            println!(
                "gram={l}-{m} shape={}x{} sites={} norm={:.8e}",
                g.rows(),
                g.cols(),
                g.sites(),
                g.squared_norm().sqrt()
            );
            grams.insert((l, m), g);
        }
        grams_to_tensors(&grams)?.write(&output)?;
    }
    Ok(EXIT_OK)
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Image { .. }
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::Truncated(_)
        | Error::TensorShape { .. }
        | Error::MissingTensor(_)
        | Error::UnexpectedTensor(_)
        | Error::Format(_)
        | Error::MissingDecoder(_) => EXIT_IO,
        Error::NonFinite { .. } => EXIT_ABORT,
        Error::Shape { .. }
        | Error::UnknownLayer(_)
        | Error::Config(_)
        | Error::Degenerate(_)
        | Error::Undersized(_) => EXIT_USAGE,
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse().map_err(|_| {
            Error::Config(format!("{THREADS_ENV}: expected a thread count, got `{v}`"))
        }),
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = command();
    let matches = match cmd.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand").clone();
    let level = if sub.get_flag("verbose") {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    log::set_max_level(level);

    let result = threads().and_then(|n| {
        let settings = Settings::from_matches(&sub_cmd, sub)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| match name {
            "transfer" => cmd_transfer(&settings),
            "synthesize" => cmd_synthesize(&settings),
            "fct" => cmd_fct(&settings),
            "gram-stats" => cmd_gram_stats(&settings),
            _ => unreachable!("clap rejects unknown subcommands"),
        })
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == EXIT_USAGE {
                eprintln!(
                    "\n{}",
                    sub_cmd
                        .clone()
                        .bin_name(format!("crossgram {name}"))
                        .render_usage()
                );
            }
            code
        }
    }
}
