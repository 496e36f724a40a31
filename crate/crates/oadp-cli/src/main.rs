//! Command-line surface: knowledge extraction, pseudo labels, losses, the
//! crop-strategy comparison grid, evaluation, and synthetic data generation.
//! Errors leave as structured JSON on stderr with a nonzero exit code.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use oadp_core::classify::CategoryTable;
use oadp_core::compare::{prototype_table, run_grid, Strategy};
use oadp_core::encoder::{load_weights, save_weights, EncoderConfig, EncoderWeights};
use oadp_core::io::config::RunConfig;
use oadp_core::io::manifest::{read_manifest, save_image, write_manifest, Annotation, ManifestEntry};
use oadp_core::pipeline::{
    read_pl_records, run_eval, run_losses, run_oake, run_pl, write_pl_records,
};
use oadp_core::synthetic::{
    distractor_scene_spec, gen_scene, gen_weights, read_scene_specs, write_scene_specs,
};
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "oadp", version, about = "Object-aware distillation pyramid toolkit")]
struct Cli {
    /// Worker threads for the data-parallel inner loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonInputs {
    /// JSON-lines dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Encoder weights (OADP-TENSORS).
    #[arg(long)]
    weights: PathBuf,
    /// Category table JSON.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-proposal teacher embeddings into an OADP-TENSORS file.
    Oake {
        #[command(flatten)]
        inputs: CommonInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate pseudo labels for novel categories (JSON-lines).
    Pl {
        #[command(flatten)]
        inputs: CommonInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the distillation loss pyramid and a gradient-check summary.
    Losses {
        #[command(flatten)]
        inputs: CommonInputs,
        /// Teacher object embeddings from `oake`.
        #[arg(long)]
        teacher_embeddings: PathBuf,
        /// Student stub seed (falls back to the config seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classification-precision grid over crop strategies on synthetic scenes.
    CompareCrops {
        /// Scene specs, one JSON object per line.
        #[arg(long)]
        scenes: PathBuf,
        /// Comma-separated subset of mbs,fixed,adaptive.
        #[arg(long, default_value = "mbs,fixed,adaptive")]
        strategies: String,
        /// true, false, or both.
        #[arg(long, default_value = "both")]
        masked: String,
        /// Encoder weights; generated from the config seed when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scale ratio for the adaptive strategy and the prototype framing
        /// (default 4: the adaptive square doubles the box side, one patch
        /// ring of context at the toy patch granularity).
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score pseudo labels against manifest ground truth.
    Eval {
        #[arg(long)]
        pl: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict AP to this table's novel categories.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset: scenes, images, manifest, weights, table.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of scenes/images.
        #[arg(long, default_value_t = 8)]
        images: usize,
        /// Pattern categories (2..=6); the first half are base, the rest novel.
        #[arg(long, default_value_t = 4)]
        categories: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => {
            Ok(RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_table(path: &Path) -> anyhow::Result<CategoryTable> {
    CategoryTable::load(path).with_context(|| format!("reading table {}", path.display()))
}

fn read_weights(path: &Path) -> anyhow::Result<EncoderWeights> {
    load_weights(path).with_context(|| format!("reading weights {}", path.display()))
}

fn read_entries(path: &Path) -> anyhow::Result<Vec<ManifestEntry>> {
    read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn toy_config_with_resolution(resolution: u32) -> EncoderConfig {
    EncoderConfig { resolution: resolution as usize, ..EncoderConfig::toy() }
}

fn emit(out: &Option<PathBuf>, value: &serde_json::Value) -> anyhow::Result<()> {
    let pretty = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            oadp_core::io::atomic_write(path, pretty.as_bytes())?;
            println!("{}", json!({ "written": path }));
        }
        None => println!("{pretty}"),
    }
    Ok(())
}

fn parse_strategies(arg: &str) -> anyhow::Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for part in arg.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            Strategy::parse(part)
                .with_context(|| format!("unknown strategy '{part}' (use mbs, fixed, adaptive)"))?,
        );
    }
    if out.is_empty() {
        anyhow::bail!("no strategies selected");
    }
    Ok(out)
}

fn parse_masked(arg: &str) -> anyhow::Result<Vec<bool>> {
    match arg {
        "true" => Ok(vec![true]),
        "false" => Ok(vec![false]),
        "both" => Ok(vec![false, true]),
        other => anyhow::bail!("--masked must be true, false, or both, got '{other}'"),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Oake { inputs, out } => {
            let config = load_config(&inputs.config)?;
            let weights = read_weights(&inputs.weights)?;
            let entries = read_entries(&inputs.manifest)?;
            if let Some(table) = &inputs.table {
                let table = load_table(table)?;
                check_categories(&entries, &table)?;
            }
            let outcome = run_oake(&inputs.manifest, &entries, &weights, &config)?;
            outcome.container.save(&out)?;
            println!(
                "{}",
                json!({
                    "written": out,
                    "images": entries.len(),
                    "proposals": outcome.proposals,
                    "skipped_empty_mask": outcome.skipped,
                })
            );
            Ok(())
        }
        Command::Pl { inputs, out } => {
            let config = load_config(&inputs.config)?;
            let weights = read_weights(&inputs.weights)?;
            let table_path =
                inputs.table.as_ref().context("pl requires --table for category embeddings")?;
            let table = load_table(table_path)?;
            let entries = read_entries(&inputs.manifest)?;
            let outcome = run_pl(&inputs.manifest, &entries, &weights, &table, &config)?;
            write_pl_records(&outcome.records, &out)?;
            let total: usize = outcome.records.iter().map(|r| r.pls.len()).sum();
            println!(
                "{}",
                json!({
                    "written": out,
                    "images": outcome.records.len(),
                    "pseudo_labels": total,
                    "skipped_empty_mask": outcome.skipped,
                })
            );
            Ok(())
        }
        Command::Losses { inputs, teacher_embeddings, seed, out } => {
            let config = load_config(&inputs.config)?;
            let weights = read_weights(&inputs.weights)?;
            let table_path =
                inputs.table.as_ref().context("losses requires --table for the detection loss")?;
            let table = load_table(table_path)?;
            let entries = read_entries(&inputs.manifest)?;
            let teacher = oadp_core::io::container::TensorContainer::load(&teacher_embeddings)
                .with_context(|| {
                    format!("reading teacher embeddings {}", teacher_embeddings.display())
                })?;
            let seed = seed.unwrap_or(config.seed);
            let report =
                run_losses(&inputs.manifest, &entries, &teacher, &weights, &table, &config, seed)?;
            emit(&out, &serde_json::to_value(&report)?)
        }
        Command::CompareCrops { scenes, strategies, masked, weights, config, r, out } => {
            let config = load_config(&config)?;
            let specs = read_scene_specs(&scenes)
                .with_context(|| format!("reading scenes {}", scenes.display()))?;
            let strategies = parse_strategies(&strategies)?;
            let masked = parse_masked(&masked)?;
            let weights = match &weights {
                Some(p) => read_weights(p)?,
                None => gen_weights(&toy_config_with_resolution(config.resolution), config.seed),
            };
            // The adaptive strategy is an enlarging square; without an
            // explicit ratio the square side doubles, leaving at least one
            // full patch ring of maskable context around the box.
            let scale_ratio = r.unwrap_or(4.0);
            let n_categories = specs
                .iter()
                .flat_map(|s| s.objects.iter().chain(&s.distractors))
                .map(|o| o.category + 1)
                .max()
                .context("scenes contain no objects")?;
            let table = prototype_table(&weights, n_categories, 0, scale_ratio)?;
            let cells = run_grid(&specs, &weights, &table, scale_ratio, &strategies, &masked)?;
            emit(
                &out,
                &json!({
                    "scenes": specs.len(),
                    "r": scale_ratio,
                    "cells": cells,
                }),
            )
        }
        Command::Eval { pl, manifest, table, out } => {
            let records = read_pl_records(&pl)?;
            let entries = read_entries(&manifest)?;
            let table = match &table {
                Some(p) => Some(load_table(p)?),
                None => None,
            };
            let report = run_eval(&records, &entries, table.as_ref());
            emit(&out, &serde_json::to_value(&report)?)
        }
        Command::GenData { out_dir, images, categories, config } => {
            let config = load_config(&config)?;
            anyhow::ensure!(
                (2..=oadp_core::synthetic::PATTERN_COUNT).contains(&categories),
                "--categories must lie in 2..=6"
            );
            std::fs::create_dir_all(&out_dir)?;
            let enc_cfg = toy_config_with_resolution(config.resolution);
            let weights = gen_weights(&enc_cfg, config.seed);
            save_weights(&weights, &out_dir.join("weights.oadp"))?;

            let n_base = categories.div_ceil(2);
            let table = prototype_table(&weights, n_base, categories - n_base, 4.0)?;
            table.save(&out_dir.join("table.json"))?;

            let specs: Vec<_> = (0..images)
                .map(|i| distractor_scene_spec(config.seed.wrapping_add(i as u64), categories))
                .collect();
            write_scene_specs(&specs, &out_dir.join("scenes.jsonl"))?;

            let mut entries = Vec::new();
            for (i, spec) in specs.iter().enumerate() {
                let scene = gen_scene(spec);
                let file = format!("img{i}.oadp");
                save_image(&scene.image, &out_dir.join(&file))?;
                entries.push(ManifestEntry {
                    image_id: i.to_string(),
                    image: file,
                    size: [spec.width, spec.height],
                    proposals: scene.proposals,
                    annotations: scene
                        .truths
                        .iter()
                        .map(|t| Annotation {
                            bbox: t.bbox,
                            category: table.categories[t.category].name.clone(),
                        })
                        .collect(),
                });
            }
            write_manifest(&entries, &out_dir.join("manifest.jsonl"))?;
            println!(
                "{}",
                json!({
                    "written": out_dir,
                    "images": images,
                    "categories": categories,
                    "files": ["weights.oadp", "table.json", "scenes.jsonl", "manifest.jsonl"],
                })
            );
            Ok(())
        }
    }
}

fn check_categories(entries: &[ManifestEntry], table: &CategoryTable) -> anyhow::Result<()> {
    for e in entries {
        for a in &e.annotations {
            anyhow::ensure!(
                table.index_of(&a.category).is_some(),
                "image {}: annotation category '{}' is not in the table",
                e.image_id,
                a.category
            );
        }
    }
    Ok(())
}

fn error_class(err: &anyhow::Error) -> &'static str {
    use oadp_core::pipeline::PipelineError;
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                PipelineError::Format(_) => "format",
                PipelineError::Encoder(_) => "encoder",
                PipelineError::Geometry(_) => "geometry",
                PipelineError::Tensor(_) => "tensor",
                PipelineError::Pl(_) => "pseudolabel",
                PipelineError::Distill(_) => "distill",
                PipelineError::Classify(_) => "classify",
                PipelineError::Image(_, _) => "io",
            };
        }
        if cause.downcast_ref::<oadp_core::io::FormatError>().is_some() {
            return "format";
        }
        if cause.downcast_ref::<oadp_core::encoder::EncoderError>().is_some() {
            return "encoder";
        }
        if cause.downcast_ref::<oadp_core::compare::CompareError>().is_some() {
            return "compare";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "usage"
}

fn main() {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": { "class": "usage", "message": e.to_string() } }));
            std::process::exit(1);
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.threads;
    if let Err(err) = run(cli) {
        let message = format!("{err:#}");
        eprintln!("{}", json!({ "error": { "class": error_class(&err), "message": message } }));
        std::process::exit(1);
    }
}
