mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use orvos_core::dataset::{
    corpus_stats, generate_synthetic, load_corpus, load_predictions, save_corpus, save_predictions,
    validate_corpus, AnnotatedSample,
};
use orvos_core::metrics::{report_csv, report_svg, score_corpus, shift_window_report};
use orvos_core::model::Model;
use orvos_core::numerics::ParamStore;
use orvos_core::stream::{causality_audit, predict_corpus, SegmenterOptions, SegmenterRegistry};
use orvos_core::trainer::{train_with, write_loss_curve};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "orvos", version, about = "Causal streaming segmentation from language queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write its checkpoint and loss curve.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for `model.ckpt` and `loss.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream every query of a corpus and write per-frame predictions.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured ablation arm.
        #[arg(long)]
        arm: Option<String>,
    },
    /// Replay every prefix of every stream and check outputs never change.
    Audit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Audit a deliberately broken segmenter instead (testing only).
        #[arg(long, value_parser = ["leak-future"])]
        mutant: Option<String>,
        #[arg(long)]
        max_videos: Option<usize>,
    },
    /// Score a prediction file against a corpus.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        /// CSV report path.
        #[arg(long)]
        report: PathBuf,
        /// Add one row per query category.
        #[arg(long)]
        per_category: bool,
        /// Add near-shift and off-shift rows for this window.
        #[arg(long)]
        shift_window: Option<usize>,
        /// Also write an SVG bar chart.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Boundary tolerance in cells; defaults to 0.8% of the diagonal.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Print corpus statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the full default configuration.
    DumpConfig,
}

fn load_data(dir: &Path) -> Result<Vec<AnnotatedSample>> {
    let corpus = load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    if corpus.is_empty() {
        bail!("no videos found in {}", dir.display());
    }
    let problems = validate_corpus(&corpus);
    if let Some(first) = problems.first() {
        bail!("corpus has {} schema violations, first: {first}", problems.len());
    }
    Ok(corpus)
}

fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<Arc<Model>> {
    let params = ParamStore::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok(Arc::new(Model::from_params(cfg.model.clone(), params)?))
}

/// Returns `false` when an audit finds a failure.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let corpus = generate_synthetic(&cfg.generator, seed.unwrap_or(cfg.seed))?;
            let problems = validate_corpus(&corpus);
            if !problems.is_empty() {
                bail!("generator produced {} schema violations", problems.len());
            }
            save_corpus(&corpus, &out)?;
            let s = corpus_stats(&corpus)?;
            println!(
                "wrote {} videos, {} queries to {} (shifts/query {:.3}, discontinuous {:.1}%)",
                s.videos,
                s.queries,
                out.display(),
                s.mean_shifts_per_query,
                100.0 * s.discontinuous_fraction
            );
        }
        Command::Train { config, data, out } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let corpus = load_data(&data)?;
            let model = Model::init(cfg.model.clone(), cfg.seed)?;
            let every = (cfg.train.iterations / 10).max(1);
            let outcome = train_with(model, &corpus, &cfg.train, |it, loss| {
                if it % every == 0 {
                    eprintln!("iteration {it}: loss {loss:.4}");
                }
            })?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            outcome.model.params.save(&out.join("model.ckpt"))?;
            write_loss_curve(&out.join("loss.csv"), &outcome.losses)?;
            println!(
                "trained {} iterations ({} parameters) into {}",
                outcome.losses.len(),
                outcome.model.params.param_count(),
                out.display()
            );
        }
        Command::Run {
            config,
            data,
            ckpt,
            out,
            arm,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let corpus = load_data(&data)?;
            let opts = SegmenterOptions {
                model: Some(load_model(&cfg, &ckpt)?),
                arm: arm.unwrap_or(cfg.train.arm.clone()),
                leak_from: cfg.audit.leak_from,
            };
            let seg = SegmenterRegistry::builtin().build("model", &opts)?;
            let records = predict_corpus(seg.as_ref(), &corpus)?;
            save_predictions(&out, &records)?;
            println!("wrote {} prediction records to {}", records.len(), out.display());
        }
        Command::Audit {
            config,
            data,
            ckpt,
            mutant,
            max_videos,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let corpus = load_data(&data)?;
            let opts = SegmenterOptions {
                model: Some(load_model(&cfg, &ckpt)?),
                arm: cfg.train.arm.clone(),
                leak_from: cfg.audit.leak_from,
            };
            let name = mutant.as_deref().unwrap_or("model");
            let seg = SegmenterRegistry::builtin().build(name, &opts)?;
            let limit = max_videos.or(cfg.audit.max_videos).unwrap_or(corpus.len());
            let (mut streams, mut failed) = (0, 0);
            for sample in corpus.iter().take(limit) {
                for q in &sample.queries {
                    let r = causality_audit(seg.as_ref(), sample, q)?;
                    streams += 1;
                    if !r.passed() {
                        failed += 1;
                        println!(
                            "FAIL {}/{}: first divergence {:?}, read ahead {:?}",
                            r.video_id, r.query_id, r.first_divergence, r.read_ahead
                        );
                    }
                }
            }
            println!("audit of {name}: {streams} streams, {failed} failed");
            return Ok(failed == 0);
        }
        Command::Eval {
            data,
            preds,
            report,
            per_category,
            shift_window,
            svg,
            radius,
        } => {
            let corpus = load_data(&data)?;
            let predictions = load_predictions(&preds, &corpus)?;
            let scores = score_corpus(&corpus, &predictions, radius)?;
            let shift = shift_window
                .map(|w| shift_window_report(&corpus, &predictions, w, radius))
                .transpose()?;
            let csv = report_csv(&scores, per_category, shift.as_ref());
            std::fs::write(&report, &csv).with_context(|| format!("writing {}", report.display()))?;
            if let Some(path) = svg {
                std::fs::write(&path, report_svg(&scores))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{csv}");
        }
        Command::Stats { data } => {
            let corpus = load_data(&data)?;
            let s = corpus_stats(&corpus)?;
            println!("videos                 {}", s.videos);
            println!("queries                {}", s.queries);
            println!("frames                 {}", s.frames);
            println!("mean video length      {:.2}", s.mean_video_len);
            println!("mean shifts per query  {:.3}", s.mean_shifts_per_query);
            println!("discontinuous queries  {:.2}%", 100.0 * s.discontinuous_fraction);
            for (c, n) in &s.queries_per_category {
                println!("  {:<20} {n}", c.as_str());
            }
        }
        Command::DumpConfig => print!("{}", RunConfig::default().dump()?),
    }
    Ok(true)
}

/// Usage-type problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    use orvos_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidArgument(_) | E::InvalidCapacity(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// Joins the error chain into a single line. TOML errors render a source
/// excerpt over several lines, so only their message is kept.
fn one_line(err: &anyhow::Error) -> String {
    err.chain()
        .map(|cause| match cause.downcast_ref::<toml::de::Error>() {
            Some(t) => t.message().trim().to_string(),
            None => cause.to_string().split_whitespace().collect::<Vec<_>>().join(" "),
        })
        .collect::<Vec<_>>()
        .join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
