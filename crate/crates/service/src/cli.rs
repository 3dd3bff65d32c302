//! The `surgq` command line.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use surgq_core::corpus::{
    import_cholecseg, write_synthetic_project, ClassMapping, ImportOptions, Project, SyntheticSpec,
};
use surgq_core::fusion::fuse_with_report;
use surgq_core::geometry::PolygonScene;
use surgq_core::keyframes::{keyframes, read_sfv_file, FeatureSeries, KeyframeConfig};
use surgq_core::metrics::dice_report;
use surgq_core::scene::{read_class_map, read_section_mask, write_class_map, write_section_mask};
use surgq_core::search::{
    evaluate_a_at_n, parse_judgments, search, Reference, SearchParams, DEFAULT_K, DEFAULT_MIN_GAP_MS,
};
use surgq_core::Exec;

use crate::state::AppState;

#[derive(Debug, Parser)]
#[command(name = "surgq", version, about = "Surgical scene fusion, search-by-mask and quiz authoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a class map with a section mask.
    Fuse(FuseArgs),
    /// Pick keyframes from a feature file.
    Keyframes(KeyframesArgs),
    /// Search index maintenance.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Search a project's frames with a polygon scene.
    Search(SearchArgs),
    /// Evaluation harnesses.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Create or check a project.
    Project {
        #[command(subcommand)]
        command: ProjectCommand,
    },
    /// Import an annotated dataset.
    Import {
        #[command(subcommand)]
        command: ImportCommand,
    },
    /// Write a synthetic project with known ground truth.
    Synth(SynthArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub class_map: PathBuf,
    #[arg(long)]
    pub sections: PathBuf,
    #[arg(long)]
    pub out_class: PathBuf,
    #[arg(long)]
    pub out_sections: PathBuf,
    /// Write per-section vote tallies as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JsonOnly {
    Json,
}

#[derive(Debug, Args)]
pub struct KeyframesArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub window: usize,
    #[arg(long, default_value_t = 10)]
    pub sep: usize,
    #[arg(long, default_value_t = 0.01)]
    pub prom: f64,
    #[arg(long, value_enum, default_value = "json")]
    pub out: JsonOnly,
    /// Video id for the frame references.
    #[arg(long, default_value = "video")]
    pub video: String,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build {
        #[arg(long, env = "SURGQ_PROJECT")]
        project: PathBuf,
        /// Grid as WIDTHxHEIGHT.
        #[arg(long, default_value = "80x45", value_parser = parse_grid)]
        grid: (u32, u32),
    },
}

fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|_| "bad width")?;
    let h = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("grid must be non-empty".into());
    }
    Ok((w, h))
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, env = "SURGQ_PROJECT")]
    pub project: PathBuf,
    /// Polygon scene JSON.
    #[arg(long)]
    pub polygons: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_GAP_MS)]
    pub min_gap_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Pooled dice between class maps paired by file name.
    Dice {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        out: ReportFormat,
    },
    /// A@n from JSONL relevance judgments.
    AAtN {
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, default_value_t = 9)]
        n: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProjectCommand {
    Init {
        dir: PathBuf,
        #[arg(long, default_value = "project")]
        name: String,
    },
    Validate {
        dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ImportCommand {
    Cholecseg {
        #[arg(long, env = "SURGQ_PROJECT")]
        project: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Class mapping TOML; the shipped CholecSeg8k table when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of the new project.
    #[arg(long, env = "SURGQ_PROJECT")]
    pub project: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 854)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SURGQ_PROJECT")]
    pub project: PathBuf,
    #[arg(long, env = "SURGQ_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Remote inpainting backend; the local fill is used when unset or down.
    #[arg(long, env = "SURGQ_INPAINT_URL")]
    pub inpaint_url: Option<String>,
}

fn write_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    v.retain(|p| p.extension().is_some_and(|e| e == "png"));
    v.sort();
    Ok(v)
}

fn eval_dice(pred: &Path, truth: &Path, out: ReportFormat) -> Result<()> {
    let preds = png_files(pred)?;
    let mut p = Vec::new();
    let mut t = Vec::new();
    for path in &preds {
        let name = path.file_name().expect("listed files have names");
        let other = truth.join(name);
        if !other.is_file() {
            bail!("{} has no counterpart in {}", name.to_string_lossy(), truth.display());
        }
        p.push(read_class_map(path)?);
        t.push(read_class_map(&other)?);
    }
    if png_files(truth)?.len() != preds.len() {
        bail!("{} and {} hold different numbers of maps", pred.display(), truth.display());
    }
    let report = dice_report(&p, &t)?;
    match out {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Json => write_json(&report)?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse(a) => {
            let map = read_class_map(&a.class_map)?;
            let sections = read_section_mask(&a.sections)?;
            let (scene, report) = fuse_with_report(&map, &sections)?;
            write_class_map(&a.out_class, scene.class_map())?;
            write_section_mask(&a.out_sections, scene.section_mask())?;
            if let Some(p) = a.report {
                fs::write(&p, serde_json::to_string_pretty(&report)?)?;
            }
            eprintln!(
                "fused {} sections into {}",
                report.input_sections, report.output_sections
            );
        }
        Command::Keyframes(a) => {
            let (dim, data) = read_sfv_file(&a.features)?;
            let series = FeatureSeries::with_default_frames(dim, data, &a.video)?;
            let cfg = KeyframeConfig {
                half_width: a.window,
                min_separation: a.sep,
                min_prominence: a.prom,
            };
            write_json(&keyframes(&series, &cfg)?)?;
        }
        Command::Index {
            command: IndexCommand::Build { project, grid },
        } => {
            let mut p = Project::load(&project)?;
            let index = p.build_index(Exec::default(), grid)?;
            p.save()?;
            eprintln!("indexed {} frames, fingerprint {}", index.len(), index.fingerprint_hex());
        }
        Command::Search(a) => {
            let p = Project::load(&a.project)?;
            if p.index_is_stale() {
                bail!("the index is missing or stale; run `surgq index build`");
            }
            let index = p.load_index()?;
            let text = fs::read_to_string(&a.polygons)?;
            let scene: PolygonScene = serde_json::from_str(&text)?;
            let params = SearchParams {
                k: a.k,
                min_gap_ms: a.min_gap_ms,
            };
            write_json(&search(&index, &Reference::Polygons(scene), &params)?)?;
        }
        Command::Eval {
            command: EvalCommand::Dice { pred, truth, out },
        } => eval_dice(&pred, &truth, out)?,
        Command::Eval {
            command: EvalCommand::AAtN { judgments, n },
        } => {
            let q = parse_judgments(&fs::read_to_string(&judgments)?)?;
            println!("A@{n} = {:.4} over {} queries", evaluate_a_at_n(&q, n)?, q.len());
        }
        Command::Project {
            command: ProjectCommand::Init { dir, name },
        } => {
            Project::init(&dir, &name)?;
            eprintln!("initialised {}", dir.display());
        }
        Command::Project {
            command: ProjectCommand::Validate { dir },
        } => {
            let p = Project::load(&dir)?;
            let stale = if p.index_is_stale() { " (index stale)" } else { "" };
            println!("ok: {} frames, {} quizzes{stale}", p.frames().len(), p.quiz_ids().len());
        }
        Command::Import {
            command: ImportCommand::Cholecseg { project, src, map, strict },
        } => {
            let mapping = match map {
                Some(m) => ClassMapping::load(&m)?,
                None => ClassMapping::cholecseg8k(),
            };
            let mut p = if project.join(surgq_core::corpus::MANIFEST_FILE).exists() {
                Project::load(&project)?
            } else {
                Project::init(&project, &mapping.name)?
            };
            let report = import_cholecseg(&mut p, &src, &mapping, ImportOptions { strict }, Exec::default())?;
            println!("imported {} frames", report.frames);
            if report.unmapped_pixels() > 0 {
                println!("unmapped source values (pixels -> Background): {:?}", report.unmapped);
            }
        }
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                width: a.width,
                height: a.height,
                ..SyntheticSpec::new(a.frames, a.noise, a.seed)
            };
            let (p, _) = write_synthetic_project(&a.project, &spec, Exec::default())?;
            println!("wrote {} frames to {}", p.frames().len(), a.project.display());
        }
        Command::Serve(a) => {
            let state = AppState::open(&a.project, a.inpaint_url.as_deref())?;
            if state.index().is_none() {
                log::warn!("search index missing or stale; POST /index/rebuild before searching");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::serve(state.shared(), a.addr, async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            }))?;
        }
    }
    Ok(())
}
