//! `scda` command-line front end. Every subcommand writes into a run
//! directory (`--out`) together with the effective configuration it ran with.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scda::adapter::{train, transform, AdapterHead};
use scda::config::RunConfig;
use scda::embedding::{bgap, split_dataset, Split};
use scda::format::{load_bags, load_embeddings, read_manifest, save_bags, save_embeddings, write_bytes};
use scda::harness::{evaluate_split, fmt_f, run_crosscenter_grid, run_fewshot, DatasetView};
use scda::projection::pca2d;
use scda::sampler::TrainingPool;
use scda::stain::{estimate_stain_profile, normalize_to_target, RgbImage, StainProfile};
use scda::synth::generate;
use scda::{Matrix, Result, ScdaError};

const MANIFEST: &str = "dataset.json";

#[derive(Parser)]
#[command(name = "scda", version, about = "Cross-center slide embedding adaptation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, copied into every seeded section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Adam learning rate.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lr: Option<f64>,
    /// Training steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Contrastive temperature.
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Few-shot k values, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-center dataset (bags, pooled embeddings, split).
    Synth,
    /// Assign a stratified train/test split to a dataset.
    Split {
        #[arg(long)]
        data: PathBuf,
    },
    /// Pool patch bags into slide embeddings.
    Aggregate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train an adaptation head on the training split of every center.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Map a dataset's embeddings through a trained head.
    Transform {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: PathBuf,
    },
    /// Prototype evaluation on the test split, with or without a head.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Cross-center grid: every training group x method x test group.
    Grid {
        #[arg(long)]
        data: PathBuf,
    },
    /// Few-shot curve on a held-out center.
    Fewshot {
        #[arg(long)]
        data: PathBuf,
    },
    /// Estimate a stain profile from a PPM image.
    StainFit {
        #[arg(long)]
        image: PathBuf,
    },
    /// Normalize a PPM image toward a target image or stain profile JSON.
    StainNormalize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// 2-D PCA projection of (optionally transformed) embeddings.
    Project2d {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long)]
        no_svg: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("Usage", &e.kind().to_string()));
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "status": "error", "kind": kind, "message": message }).to_string()
}

fn effective_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.apply_seed(seed);
    }
    if let Some(lr) = c.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(steps) = c.steps {
        cfg.train.steps = steps;
    }
    if let Some(tau) = c.tau {
        cfg.train.temperature = tau;
    }
    if let Some(k) = &c.k {
        cfg.fewshot.k_values = k.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.common)?;
    let out = cli.common.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| ScdaError::io(out, e))?;
    cfg.save(&out.join("config.toml"))?;

    match cli.command {
        Command::Synth => {
            let ds = generate(&cfg.synth)?;
            let manifest = split_dataset(&ds.manifest, cfg.split.train_fraction, cfg.seed)?;
            let path = out.join(MANIFEST);
            save_bags(&path, &manifest, &ds.bags)?;
            save_embeddings(&path, &read_manifest(&path)?, &ds.embeddings()?)?;
        }
        Command::Split { data } => {
            // patch files stay where they are; the split copy carries embeddings only
            let (m, z) = load_embeddings(&data)?;
            let mut m = split_dataset(&m, cfg.split.train_fraction, cfg.seed)?;
            for s in &mut m.slides {
                s.file = None;
            }
            save_embeddings(&out.join(MANIFEST), &m, &z)?;
        }
        Command::Aggregate { data } => {
            let (m, bags) = load_bags(&data)?;
            let rows = bags.iter().map(|b| bgap(b).map(|e| e.z)).collect::<Result<Vec<_>>>()?;
            let mut m = m;
            for s in &mut m.slides {
                s.file = None;
            }
            save_embeddings(&out.join(MANIFEST), &m, &Matrix::from_rows(&rows)?)?;
        }
        Command::Train { data } => {
            let (m, z) = load_embeddings(&data)?;
            let view = DatasetView::new(&m, &z)?;
            let all: Vec<usize> = (0..m.centers.len()).collect();
            let idx = m.select(Split::Train, &all);
            let pool = TrainingPool::new(
                idx.iter().map(|&i| m.label(i)).collect(),
                idx.iter().map(|&i| m.center(i)).collect(),
                m.classes.len(),
                m.centers.len(),
            )?;
            let report = train(&view.embeddings.select_rows(&idx), &pool, &cfg.train)?;
            report.final_head.save(&out.join("head.scdh"))?;
            write_loss_trace(&out.join("loss_trace.csv"), &report)?;
        }
        Command::Transform { data, head } => {
            let (m, z) = load_embeddings(&data)?;
            let h = AdapterHead::load(&head)?;
            save_embeddings(&out.join(MANIFEST), &m, &transform(&h, &z)?)?;
        }
        Command::Eval { data, head } => {
            let (m, z) = load_embeddings(&data)?;
            let view = DatasetView::new(&m, &z)?;
            let h = head.as_deref().map(AdapterHead::load).transpose()?;
            evaluate_split(&view, h.as_ref(), cfg.seed)?.write_dir(out)?;
        }
        Command::Grid { data } => {
            let (m, z) = load_embeddings(&data)?;
            let view = DatasetView::new(&m, &z)?;
            run_crosscenter_grid(&view, &cfg.train, &cfg.grid.methods, &cfg.grid.seeds)?.write_dir(out)?;
        }
        Command::Fewshot { data } => {
            let (m, z) = load_embeddings(&data)?;
            let view = DatasetView::new(&m, &z)?;
            run_fewshot(&view, &cfg.fewshot, &cfg.train)?.write_dir(out)?;
        }
        Command::StainFit { image } => {
            let img = RgbImage::load_ppm(&image)?;
            estimate_stain_profile(&img, &cfg.macenko)?.save_json(&out.join("profile.json"))?;
        }
        Command::StainNormalize { image, target } => {
            let img = RgbImage::load_ppm(&image)?;
            let target = load_target(&target, &cfg)?;
            let source = estimate_stain_profile(&img, &cfg.macenko)?;
            source.save_json(&out.join("source_profile.json"))?;
            target.save_json(&out.join("target_profile.json"))?;
            normalize_to_target(&img, &source, &target, &cfg.macenko)?.save_ppm(&out.join("normalized.ppm"))?;
        }
        Command::Project2d { data, head, no_svg } => {
            let (m, z) = load_embeddings(&data)?;
            let z = match head {
                Some(h) => transform(&AdapterHead::load(&h)?, &z)?,
                None => z,
            };
            let p = pca2d(&z)?;
            p.write_csv(&out.join("projection.csv"), &m)?;
            if !no_svg {
                let title = format!("PCA ({:.1}% variance)", 100.0 * p.explained_variance_fraction);
                write_bytes(&out.join("projection.svg"), p.to_svg(&m, &title).as_bytes())?;
            }
        }
    }
    Ok(())
}

/// A `.json` target is read as a stain profile; anything else as a PPM image.
fn load_target(path: &Path, cfg: &RunConfig) -> Result<StainProfile> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        StainProfile::load_json(path)
    } else {
        estimate_stain_profile(&RgbImage::load_ppm(path)?, &cfg.macenko)
    }
}

fn write_loss_trace(path: &Path, report: &scda::TrainReport) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        w.write_record(["step", "loss", "scaled_loss", "anchors_used"])?;
        for (i, ((l, s), a)) in
            report.loss_trace.iter().zip(&report.scaled_loss_trace).zip(&report.anchors_used_trace).enumerate()
        {
            w.write_record([i.to_string(), fmt_f(*l), fmt_f(*s), a.to_string()])?;
        }
        w.flush().map_err(|e| ScdaError::io(path, e))?;
    }
    write_bytes(path, &buf)
}
