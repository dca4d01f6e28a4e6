//! Command-line interface. Exit status: 0 success, 1 validation failure,
//! 2 partial data failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use acm_core::density::{generate_density_map, KernelParams};
use acm_core::policy::classify_counts;
use acm_core::synth::synthetic_set;
use acm_core::{AttentionConfig, ModelBundle, Preset, Variant};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{AttentionSpec, RegionSpec, RunConfig};
use crate::dataset::{write_annotation, Entry, Manifest, Split};
use crate::error::{self, Error, Result};
use crate::evaluate::{evaluate, Predictor};
use crate::training::{self, TrainPlan};
use crate::{density_file, imageio};

#[derive(Debug, Parser)]
#[command(name = "acm", version, about = "Crowd counting with coarse/fine attention networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Trained parameters; a fresh model is built from --preset/--seed when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub n_centers: Option<usize>,
    /// Attention region, `0.4x0.3` (fractions) or `64x48` (pixels).
    #[arg(long)]
    pub region_size: Option<RegionSpec>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset (PNG images, annotations, manifest).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        test_count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 20)]
        mean_heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ground-truth density maps for every manifest entry, plus summary.csv.
    GenDensity {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Dense / sparse classification and the attention setting it implies.
    Classify {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train from a TOML run config; flags override config fields
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        n_centers: Option<usize>,
        #[arg(long)]
        region_size: Option<RegionSpec>,
    },
    /// MAE / MSE over a manifest; writes results.json.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Score precomputed density files (`<stem>.den`) instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long, value_parser = ["train", "test", "all"], default_value = "all")]
        split: String,
        /// Also write a heat-map PNG per image.
        #[arg(long)]
        pngs: bool,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Predicted count on stdout, density heat map PNG in --out-dir.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Attention regions as an overlay PNG and a plan JSON.
    AttentionViz {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: acm_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: acm_core::Error| e.to_string())
}

/// How a command finished when it did not fail outright.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some items could not be processed; the rest completed.
    Partial,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

pub fn exit_code(r: &Result<Outcome>) -> i32 {
    match r {
        Ok(o) => o.code(),
        Err(_) => 1,
    }
}

fn with_attention(mut a: AttentionConfig, n: Option<usize>, region: Option<RegionSpec>) -> AttentionConfig {
    if let Some(n) = n {
        a.n_centers = n;
    }
    if let Some(r) = region {
        a.region = r.into();
    }
    a
}

fn load_model(flags: &ModelFlags, in_channels: usize) -> Result<ModelBundle> {
    let mut bundle = match &flags.checkpoint {
        Some(p) => checkpoint::load(p)?.0,
        None => {
            eprintln!("note: no --checkpoint given, using an untrained model");
            ModelBundle::new(
                flags.preset.unwrap_or(Preset::Tiny),
                in_channels,
                AttentionConfig::sparse(),
                flags.seed.unwrap_or(0),
            )?
        }
    };
    bundle.attention = with_attention(bundle.attention, flags.n_centers, flags.region_size);
    bundle.attention.validate()?;
    Ok(bundle)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    error::write(path, text.as_bytes())
}

fn synth(
    out_dir: &Path,
    count: usize,
    test_count: usize,
    height: usize,
    width: usize,
    mean_heads: usize,
    seed: u64,
) -> Result<Outcome> {
    if count + test_count == 0 || height == 0 || width == 0 {
        return Err(Error::Config(vec!["synth: need at least one image of positive size".into()]));
    }
    let scenes = synthetic_set(count + test_count, height, width, 3, mean_heads, seed)?;
    let mut entries = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("img_{i:03}");
        imageio::save_image(&out_dir.join(format!("{name}.png")), &s.image)?;
        write_annotation(&out_dir.join(format!("{name}.json")), &s.annotation)?;
        entries.push(Entry {
            image: format!("{name}.png").into(),
            annotation: format!("{name}.json").into(),
            roi: None,
            split: if i < count { Split::Train } else { Split::Test },
        });
    }
    let manifest = Manifest {
        entries,
        density_class: None,
        root: out_dir.to_path_buf(),
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    println!("{}", out_dir.join("manifest.json").display());
    Ok(Outcome::Success)
}

fn gen_density(manifest_path: &Path, out_dir: &Path) -> Result<Outcome> {
    let m = Manifest::load(manifest_path)?;
    if m.entries.is_empty() {
        return Err(Error::Config(vec!["manifest is empty".into()]));
    }
    let params = KernelParams::default();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for e in &m.entries {
        let r = m.annotation(e).and_then(|a| {
            let map = generate_density_map(&a, &params)?;
            density_file::write(&out_dir.join(format!("{}.{}", e.stem(), density_file::EXTENSION)), &map)?;
            Ok((a.count(), map.sum()))
        });
        match r {
            Ok((n, sum)) => rows.push((e.stem(), n, sum)),
            Err(err) => failed.push(err.to_string()),
        }
    }
    let summary = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).map_err(|e| Error::Csv {
        path: summary.clone(),
        source: e,
    })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: summary.clone(),
        source: e,
    };
    w.write_record(["image", "head_count", "map_sum"]).map_err(csv_err)?;
    for (name, n, sum) in &rows {
        w.write_record(&[name.clone(), n.to_string(), format!("{sum:.12}")]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&summary, e))?;
    for f in &failed {
        eprintln!("missing or unreadable annotation: {f}");
    }
    Ok(if failed.is_empty() { Outcome::Success } else { Outcome::Partial })
}

#[derive(Serialize)]
struct ClassifyOutput {
    images: usize,
    average_count: f64,
    density_class: String,
    attention: AttentionSpec,
}

fn classify(manifest_path: &Path) -> Result<Outcome> {
    let m = Manifest::load(manifest_path)?;
    let counts = m
        .entries
        .iter()
        .map(|e| m.annotation(e).map(|a| a.count()))
        .collect::<Result<Vec<_>>>()?;
    let c = classify_counts(&counts)?;
    let out = ClassifyOutput {
        images: counts.len(),
        average_count: c.average_count,
        density_class: c.class.to_string(),
        attention: c.attention.into(),
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: &Path,
    manifest: Option<PathBuf>,
    out_dir: &Path,
    seed: Option<u64>,
    steps: Option<u64>,
    preset: Option<Preset>,
    variant: Option<Variant>,
    n_centers: Option<usize>,
    region: Option<RegionSpec>,
) -> Result<Outcome> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(m) = manifest {
        cfg.manifest = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(p) = preset {
        cfg.preset = p.to_string();
    }
    if let Some(v) = variant {
        cfg.variant = v.to_string();
    }
    if n_centers.is_some() || region.is_some() {
        let base = cfg.attention.map_or(AttentionConfig::sparse(), AttentionConfig::from);
        cfg.attention = Some(with_attention(base, n_centers, region).into());
    }
    let v = cfg.validate()?;
    let aug = cfg.augment.as_ref();
    let plan = TrainPlan {
        manifest: cfg.manifest.clone(),
        out_dir: out_dir.to_path_buf(),
        preset: v.preset,
        variant: v.variant,
        attention: v.attention,
        augment: v.augment,
        workers: aug.map_or(1, |a| a.workers),
        deterministic: aug.is_none_or(|a| a.deterministic),
        queue: aug.map_or(16, |a| a.queue),
        seed: cfg.seed,
        steps: cfg.steps,
        checkpoint_every: cfg.checkpoint_every,
        lambda: cfg.lambda,
        lr: cfg.lr,
        channels: 3,
    };
    let every = (cfg.steps / 20).max(1);
    let summary = training::run(&plan, |r| {
        if r.step % every == 0 {
            eprintln!("step {} l_a {:.6} l_b {:.6} l_overall {:.6}", r.step, r.l_a, r.l_b, r.l_overall);
        }
    })?;
    for p in &summary.checkpoints {
        println!("{}", p.display());
    }
    Ok(Outcome::Success)
}

fn eval(
    manifest_path: &Path,
    out_dir: &Path,
    predictions: Option<&Path>,
    split: &str,
    pngs: bool,
    flags: &ModelFlags,
) -> Result<Outcome> {
    let m = Manifest::load(manifest_path)?;
    let split = match split {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        _ => None,
    };
    let bundle;
    let predictor = match predictions {
        Some(dir) => Predictor::DensityDir(dir),
        None => {
            bundle = load_model(flags, 3)?;
            Predictor::Model {
                bundle: &bundle,
                variant: flags.variant.unwrap_or(Variant::CFS),
            }
        }
    };
    let png_dir = pngs.then(|| out_dir.join("density"));
    let report = evaluate(&m, predictor, split, png_dir.as_deref())?;
    write_json(&out_dir.join("results.json"), &report)?;
    for f in &report.failures {
        eprintln!("{}: {}", f.image, f.error);
    }
    match (report.mae, report.mse) {
        (Some(mae), Some(mse)) => println!("MAE {mae:.4} MSE {mse:.4} ({} images)", report.images.len()),
        _ => println!("no image could be evaluated"),
    }
    Ok(if report.failures.is_empty() { Outcome::Success } else { Outcome::Partial })
}

fn infer(image: &Path, out_dir: &Path, flags: &ModelFlags) -> Result<Outcome> {
    let bundle = load_model(flags, 3)?;
    let img = imageio::load_image(image, bundle.in_channels)?;
    let variant = flags.variant.unwrap_or(Variant::CFS);
    let (map, _) = bundle.ablation_forward(variant, &img)?;
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    imageio::save_density_png(&out_dir.join(format!("{stem}_density.png")), &map)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", map.sum()).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct PlanJson {
    height: usize,
    width: usize,
    n_centers: usize,
    centers: Vec<[usize; 2]>,
    regions: Vec<RegionJson>,
    covered_pixels: usize,
}

#[derive(Serialize)]
struct RegionJson {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

fn attention_viz(image: &Path, out_dir: &Path, flags: &ModelFlags) -> Result<Outcome> {
    let bundle = load_model(flags, 3)?;
    let img = imageio::load_image(image, bundle.in_channels)?;
    let (h, w) = img.spatial().expect("4-d image");
    bundle.attention.validate_for(h, w)?;
    let (_, plan) = bundle.predict(&img)?;
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    imageio::save_attention_overlay(&out_dir.join(format!("{stem}_attention.png")), &img, &plan)?;
    let json = PlanJson {
        height: plan.height,
        width: plan.width,
        n_centers: bundle.attention.n_centers,
        centers: plan.centers.iter().map(|&(r, c)| [r, c]).collect(),
        regions: plan
            .regions
            .iter()
            .map(|r| RegionJson {
                top: r.top,
                left: r.left,
                height: r.height,
                width: r.width,
            })
            .collect(),
        covered_pixels: plan.covered_pixels(),
    };
    write_json(&out_dir.join(format!("{stem}_plan.json")), &json)?;
    Ok(Outcome::Success)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth {
            out_dir,
            count,
            test_count,
            height,
            width,
            mean_heads,
            seed,
        } => synth(&out_dir, count, test_count, height, width, mean_heads, seed),
        Command::GenDensity { manifest, out_dir } => gen_density(&manifest, &out_dir),
        Command::Classify { manifest } => classify(&manifest),
        Command::Train {
            config,
            manifest,
            out_dir,
            seed,
            steps,
            preset,
            variant,
            n_centers,
            region_size,
        } => train(&config, manifest, &out_dir, seed, steps, preset, variant, n_centers, region_size),
        Command::Eval {
            manifest,
            out_dir,
            predictions,
            split,
            pngs,
            model,
        } => eval(&manifest, &out_dir, predictions.as_deref(), &split, pngs, &model),
        Command::Infer { image, out_dir, model } => infer(&image, &out_dir, &model),
        Command::AttentionViz { image, out_dir, model } => attention_viz(&image, &out_dir, &model),
    }
}
