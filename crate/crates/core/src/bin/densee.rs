use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use densee::densee::{
    extract_wavefront, make_training_set, patch_sources, train, DenseeModel, ExtractOptions, SamplingConfig,
    TrainConfig, SMOOTH_HEAD,
};
use densee::io::{self, Manifest, Record};
use densee::metrics::{mean_wf_mismatch, score_model, EvalReport};
use densee::neuralnet::reduced_architecture;
use densee::overlay;
use densee::phantoms::{analytic_wavefront, apply_higher_order_filter, rasterize, PhantomSampler};
use densee::radon::{self, canonical_map, dilate_lambda, inverse_canonical_map};
use densee::shearlet::{ShearletConfig, ShearletSystem};
use densee::tomography::{extract_sinogram_wavefront, layout_config, sinogram_to_image, LowDose};
use densee::wavefront::WavefrontSet;
use densee::Image;

#[derive(Parser)]
#[command(name = "densee", version, about = "Digital wavefront set extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random phantoms with analytic wavefront sets.
    Gen(GenArgs),
    /// Train classifier heads on a generated dataset.
    Train(TrainArgs),
    /// Extract the wavefront set of one image or sinogram layout.
    Extract(ExtractArgs),
    /// Score a model on held-out data.
    Eval(EvalArgs),
    /// Apply the digital canonical map or its inverse.
    Canon(CanonArgs),
    /// Radon transform, canonical layout or FBP of an image.
    Radon(RadonArgs),
    /// Render a wavefront set over its image as PNG.
    Overlay(OverlayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    /// Ellipses and parallelograms with jump edges.
    Jump,
    /// Jump phantoms smoothed by the elliptic filter.
    HigherOrder,
    /// Ellipses in the inscribed disk, with low-dose sinograms.
    Tomographic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Domain {
    Image,
    Reconstruction,
    Sinogram,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "jump")]
    kind: Kind,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Keep every `angle-step`-th projection angle (tomographic only).
    #[arg(long, default_value_t = 3)]
    angle_step: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Training settings readable from a TOML file; command-line flags win.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    heads: Option<Vec<usize>>,
    steps: Option<usize>,
    per_head: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    center_sigma: Option<f32>,
    edge_negatives: Option<f64>,
    domain: Option<Domain>,
    widths: Option<Vec<usize>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Heads to train (direction bins and 180 for the smooth head).
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<usize>>,
    #[arg(long)]
    steps: Option<usize>,
    /// Balanced patches sampled per head.
    #[arg(long)]
    per_head: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Gaussian centre window width in pixels; 0 disables it.
    #[arg(long)]
    center_sigma: Option<f32>,
    /// Share of negatives taken from edges with other orientations.
    #[arg(long)]
    edge_negatives: Option<f64>,
    #[arg(long, value_enum)]
    domain: Option<Domain>,
    /// Four stage widths and the hidden size of a smaller network.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    /// Image tensor, or a canonical-layout sinogram for sinogram models.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    gate_threshold: Option<f64>,
    /// Keep only directions whose head beats its neighbouring heads.
    #[arg(long)]
    peaks_only: bool,
    /// Angle columns to evaluate on a sinogram (default: all).
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<usize>>,
    /// Map a sinogram result back to the image domain.
    #[arg(long)]
    to_image: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "image")]
    domain: Domain,
    #[arg(long, default_value_t = 1000)]
    per_head: usize,
    /// Seed of the test patch sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also extract whole masks and report the mean wavefront mismatch.
    #[arg(long)]
    mismatch: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CanonArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    inverse: bool,
    /// Widen sinogram entries by this many λ bins before inverting.
    #[arg(long, default_value_t = 0)]
    dilate: usize,
}

#[derive(Args)]
struct RadonArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    angle_step: usize,
    /// Write the angle-interpolated canonical layout.
    #[arg(long, conflicts_with = "fbp")]
    layout: bool,
    /// Write the filtered backprojection.
    #[arg(long)]
    fbp: bool,
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    wavefront: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_corners: bool,
    /// Also write an orientation color wheel.
    #[arg(long)]
    legend: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Extract(a) => extract(a),
        Command::Eval(a) => eval(a),
        Command::Canon(a) => canon(a),
        Command::Radon(a) => radon_cmd(a),
        Command::Overlay(a) => overlay_cmd(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let sampler = match a.kind {
        Kind::Tomographic => PhantomSampler::tomographic(a.size),
        _ => PhantomSampler::new(a.size),
    };
    let kind = match a.kind {
        Kind::Jump => "jump",
        Kind::HigherOrder => "higher_order",
        Kind::Tomographic => "tomographic",
    };
    let mut manifest = Manifest::new(kind);
    if a.kind == Kind::Tomographic {
        manifest.angle_step = Some(a.angle_step);
    }
    for k in 0..a.count {
        let seed = a.seed.wrapping_add(k as u64);
        let spec = sampler.sample(seed)?;
        let mut image = rasterize(&spec);
        if a.kind == Kind::HigherOrder {
            image = apply_higher_order_filter(&image);
        }
        let wf = analytic_wavefront(&spec);
        let name = |what: &str| format!("{k:05}_{what}.wft");
        io::save_image(a.out.join(name("image")), &image)?;
        io::save_wavefront(a.out.join(name("wavefront")), &wf)?;
        let mut record = Record {
            image: name("image"),
            wavefront: Some(name("wavefront")),
            reconstruction: None,
            sinogram: None,
            sinogram_wavefront: None,
            seed: Some(seed),
            phantom: Some(spec),
            shape: vec![a.size, a.size],
            sinogram_shape: None,
        };
        if a.kind == Kind::Tomographic {
            let low = LowDose::measure(&image, a.angle_step)?;
            let layout = low.layout()?;
            io::save_image(a.out.join(name("reconstruction")), &low.reconstruct()?)?;
            io::save_image(a.out.join(name("sinogram")), &layout)?;
            io::save_wavefront(a.out.join(name("sinogram_wavefront")), &canonical_map(&wf)?)?;
            record.reconstruction = Some(name("reconstruction"));
            record.sinogram = Some(name("sinogram"));
            record.sinogram_wavefront = Some(name("sinogram_wavefront"));
            record.sinogram_shape = Some(vec![layout.rows(), layout.cols()]);
        }
        manifest.records.push(record);
    }
    manifest.save(a.out.join("manifest.json"))?;
    println!("wrote {} records to {}", a.count, a.out.display());
    Ok(())
}

/// Input and label tensors of every record for `domain`.
fn load_pairs(manifest_path: &Path, domain: Domain) -> Result<Vec<(Image, WavefrontSet)>> {
    let manifest = Manifest::load(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let mut out = Vec::new();
    for (k, r) in manifest.records.iter().enumerate() {
        let (input, label) = match domain {
            Domain::Image => (Some(&r.image), r.wavefront.as_ref()),
            Domain::Reconstruction => (r.reconstruction.as_ref(), r.wavefront.as_ref()),
            Domain::Sinogram => (r.sinogram.as_ref(), r.sinogram_wavefront.as_ref()),
        };
        let (Some(input), Some(label)) = (input, label) else {
            bail!("record {k} has no {domain:?} data");
        };
        out.push((
            io::load_image(io::resolve(manifest_path, input))?,
            io::load_wavefront(io::resolve(manifest_path, label))?,
        ));
    }
    if out.is_empty() {
        bail!("manifest {} has no records", manifest_path.display());
    }
    Ok(out)
}

/// Shearlet configuration for inputs shaped like `image` in `domain`.
fn config_for(image: &Image, domain: Domain) -> Result<ShearletConfig> {
    Ok(match domain {
        Domain::Sinogram => layout_config(&ShearletConfig::standard(image.rows())?, image.rows())?,
        _ => ShearletConfig::standard(image.rows())?,
    })
}

fn default_heads() -> Vec<usize> {
    (0..180).step_by(20).chain([SMOOTH_HEAD]).collect()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let file: TrainFile = match &a.config {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TrainFile::default(),
    };
    let domain = a.domain.or(file.domain).unwrap_or(Domain::Image);
    let heads = a.heads.or(file.heads).unwrap_or_else(default_heads);
    let per_head = a.per_head.or(file.per_head).unwrap_or(2000);
    let mut cfg = TrainConfig::new(a.steps.or(file.steps).unwrap_or(1500), a.seed);
    cfg.batch_size = a.batch_size.or(file.batch_size).unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.learning_rate.or(file.learning_rate).unwrap_or(cfg.learning_rate);
    let sigma = a.center_sigma.or(file.center_sigma).unwrap_or(2.0);
    let widths = a.widths.or(file.widths);

    let pairs = load_pairs(&a.data, domain)?;
    let config = config_for(&pairs[0].0, domain)?;
    let system = ShearletSystem::build(config.clone())?;
    let mut model = match widths {
        None => DenseeModel::new(config, a.seed)?,
        Some(w) => {
            let [w1, w2, w3, w4, hidden] = w[..] else {
                bail!("--widths takes five values: four stage widths and the hidden size");
            };
            let specs = reduced_architecture(system.channel_count(), [w1, w2, w3, w4], hidden);
            DenseeModel::with_architecture(config, specs, a.seed)?
        }
    };
    model.set_center_sigma((sigma > 0.0).then_some(sigma))?;
    let sources = patch_sources(&system, &pairs)?;
    model.fit_channel_scale(&sources)?;
    let mut sampling = SamplingConfig::new(per_head, a.seed);
    sampling.edge_negatives = a.edge_negatives.or(file.edge_negatives).unwrap_or(0.0);
    let data = make_training_set(Arc::new(sources), &heads, &sampling)?;
    for r in train(&mut model, &data, &cfg)? {
        match (&r.diverged, r.final_loss) {
            (Some(why), _) => println!("head {:3}: diverged ({why})", r.head),
            (None, Some(l)) => println!("head {:3}: final loss {l:.4}", r.head),
            (None, None) => println!("head {:3}: no steps", r.head),
        }
    }
    io::save_model(&a.out, &model)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn extract_options(threshold: f64, gate: Option<f64>, peaks_only: bool) -> ExtractOptions {
    ExtractOptions {
        threshold,
        gate_threshold: gate.unwrap_or(threshold),
        peaks_only,
    }
}

fn is_sinogram_model(model: &DenseeModel) -> bool {
    model.config().cols == radon::FULL_ANGLES && model.config().rows != radon::FULL_ANGLES
}

fn extract(a: ExtractArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let input = io::load_image(&a.input)?;
    let system = ShearletSystem::build(model.config().clone())?;
    let opts = extract_options(a.threshold, a.gate_threshold, a.peaks_only);
    let wf = if is_sinogram_model(&model) {
        let columns = a.columns.unwrap_or_else(|| (0..radon::FULL_ANGLES).collect());
        let y = extract_sinogram_wavefront(&input, &model, &system, &columns, &opts)?;
        if a.to_image {
            sinogram_to_image(&y, &columns)?
        } else {
            y
        }
    } else {
        if a.columns.is_some() || a.to_image {
            bail!("--columns and --to-image apply to sinogram models only");
        }
        extract_wavefront(&input, &model, &system, &opts)?
    };
    io::save_wavefront(&a.out, &wf)?;
    println!("{} entries at {} pixels", wf.count(), count_pixels(&wf));
    Ok(())
}

fn count_pixels(wf: &WavefrontSet) -> usize {
    (0..wf.rows())
        .flat_map(|i| (0..wf.cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| wf.any_at(i, j))
        .count()
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let system = ShearletSystem::build(model.config().clone())?;
    model.check_system(&system)?;
    let pairs = load_pairs(&a.data, a.domain)?;
    let heads = model.trained_heads();
    if heads.is_empty() {
        bail!("model has no trained heads");
    }
    let sources = patch_sources(&system, &pairs)?;
    let data = make_training_set(Arc::new(sources), &heads, &SamplingConfig::new(a.per_head, a.seed))?;
    let mut report = EvalReport::new(score_model(&model, &data, a.threshold)?)?;
    if a.mismatch {
        let opts = ExtractOptions::new(a.threshold);
        let bins: Vec<usize> = heads.iter().copied().filter(|&h| h != SMOOTH_HEAD).collect();
        let mut masks = Vec::new();
        for (image, truth) in &pairs {
            let pred = if is_sinogram_model(&model) {
                extract_sinogram_wavefront(image, &model, &system, &(0..radon::FULL_ANGLES).collect::<Vec<_>>(), &opts)?
            } else {
                extract_wavefront(image, &model, &system, &opts)?
            };
            masks.push((pred, truth.restrict_bins(&bins)));
        }
        report.mean_wf_mismatch = Some(mean_wf_mismatch(&masks)?);
    }
    for h in &report.heads {
        println!(
            "head {:3}: accuracy {:.3}  precision {:.3}  recall {:.3}  F {:.3}",
            h.head, h.accuracy, h.precision, h.recall, h.f_score
        );
    }
    println!("MF {:.4}  mean accuracy {:.4}", report.mf_score, report.mean_accuracy);
    if let Some(m) = report.mean_wf_mismatch {
        println!("mean wavefront mismatch {m:.1}");
    }
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}

fn canon(a: CanonArgs) -> Result<()> {
    let wf = io::load_wavefront(&a.input)?;
    let out = if a.inverse {
        inverse_canonical_map(&dilate_lambda(&wf, a.dilate))?
    } else {
        if a.dilate > 0 {
            bail!("--dilate applies to --inverse only");
        }
        canonical_map(&wf)?
    };
    io::save_wavefront(&a.out, &out)?;
    println!("{} -> {} entries", wf.count(), out.count());
    Ok(())
}

fn radon_cmd(a: RadonArgs) -> Result<()> {
    let image = io::load_image(&a.input)?;
    let low = LowDose::measure(&image, a.angle_step)?;
    let out = if a.layout {
        low.layout()?
    } else if a.fbp {
        low.reconstruct()?
    } else {
        low.sinogram.values().clone()
    };
    io::save_image(&a.out, &out)?;
    println!("wrote {}x{} to {}", out.rows(), out.cols(), a.out.display());
    Ok(())
}

fn overlay_cmd(a: OverlayArgs) -> Result<()> {
    let image = io::load_image(&a.image)?;
    let wf = match &a.wavefront {
        Some(p) => io::load_wavefront(p)?,
        None => WavefrontSet::empty(image.rows(), image.cols()),
    };
    overlay::render(&image, &wf, !a.no_corners)?.save_png(&a.out)?;
    if let Some(p) = &a.legend {
        overlay::legend(128).save_png(p)?;
    }
    Ok(())
}
