//! `uavseg`: synth / train / eval / ablate / stats / overlay over the core
//! crate. Exit codes: 0 success, 2 input or config error, 3 divergence,
//! 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uavseg_core::data::codec::decode_mask_png;
use uavseg_core::data::record::read_corpus_jsonl;
use uavseg_core::data::split::SplitName;
use uavseg_core::data::stats::corpus_stats;
use uavseg_core::data::synth::synthesize_dataset;
use uavseg_core::error::Result;
use uavseg_core::harness::ablate::run_grid;
use uavseg_core::harness::config::load_config;
use uavseg_core::harness::evaluator::EvalSample;
use uavseg_core::harness::overlay::render_overlay;
use uavseg_core::harness::report::{to_csv, to_markdown, MetricRow};
use uavseg_core::harness::trainer::{evaluate_run, load_run, train};
use uavseg_core::model::Model;
use uavseg_core::params::ParamStore;
use uavseg_core::raster::ImageBuf;

#[derive(Parser)]
#[command(name = "uavseg", version, about = "Reasoning segmentation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the commands that build a RunConfig.
#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the CoT mode (on|off|mask|shuffle|semantic).
    #[arg(long)]
    cot: Option<String>,
    /// Dotted-path config overrides, e.g. --set train.epochs=2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, data_root: Option<&PathBuf>) -> Result<uavseg_core::harness::config::RunConfig> {
        let mut overrides = Vec::new();
        if let Some(root) = data_root {
            overrides.push(format!("data.root={}", root.display()));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(cot) = &self.cot {
            overrides.push(format!("cot_mode={cot}"));
        }
        overrides.extend(self.sets.iter().cloned());
        load_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (records.jsonl, images/, masks/).
    Synth {
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of records.
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Canvas side in pixels.
        #[arg(long, default_value_t = 64)]
        canvas: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model and write checkpoint, logs and reports.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus directory (shorthand for --set data.root=...).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run directory on one split.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Split to evaluate (train|val|test).
        #[arg(long, default_value = "val")]
        split: String,
        /// Write the metric table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the metric table as Markdown here.
        #[arg(long)]
        md: Option<PathBuf>,
        /// Directory for per-sample overlay PNGs.
        #[arg(long)]
        overlays: Option<PathBuf>,
        /// Cap on the number of overlays written.
        #[arg(long, default_value_t = 8)]
        overlay_count: usize,
    },
    /// Train every row of an ablation grid and emit a combined table.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus directory (shorthand for --set data.root=...).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Grid name: fusion_layers|decoder_depth|fusion_direction|cot.
        #[arg(long)]
        grid: String,
        /// Directory receiving per-row run dirs and the grid reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics.
    Stats {
        /// Corpus directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Render a prediction/target overlay for existing PNGs.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            count,
            canvas,
            seed,
        } => {
            let output = synthesize_dataset(&out, count, seed, canvas)?;
            let stats = corpus_stats(&out, &output.samples)?;
            println!(
                "wrote {} records under {}",
                output.samples.len(),
                out.display()
            );
            print!("{}", stats.to_markdown());
            Ok(())
        }
        Command::Train { config, data, out } => {
            let cfg = config.load(data.as_ref())?;
            let outcome = train(&cfg, &out)?;
            let rows: Vec<MetricRow> = outcome.report.splits.values().cloned().collect();
            std::fs::write(out.join("report.csv"), to_csv("split", &rows))?;
            std::fs::write(out.join("report.md"), to_markdown("split", &rows))?;
            println!(
                "trained {} steps in {:.1}s, final loss {:.4} (fingerprint {})",
                outcome.losses.len(),
                outcome.report.wall_clock_secs,
                outcome.report.final_loss,
                outcome.report.config_fingerprint
            );
            print!("{}", to_markdown("split", &rows));
            Ok(())
        }
        Command::Eval {
            run,
            split,
            csv,
            md,
            overlays,
            overlay_count,
        } => {
            let split = SplitName::parse(&split)?;
            let (cfg, vocab, store, model) = load_run(&run)?;
            let (row, samples) = evaluate_run(&cfg, &vocab, &store, &model, split)?;
            let rows = vec![row];
            if let Some(path) = csv {
                std::fs::write(path, to_csv("split", &rows))?;
            }
            if let Some(path) = md {
                std::fs::write(path, to_markdown("split", &rows))?;
            }
            if let Some(dir) = overlays {
                write_overlays(&dir, &model, &store, &vocab, &samples, overlay_count)?;
            }
            print!("{}", to_markdown("split", &rows));
            Ok(())
        }
        Command::Ablate {
            config,
            data,
            grid,
            out,
        } => {
            let base = config.load(data.as_ref())?;
            let rows = run_grid(&grid, &base, &out)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.csv"), to_csv(&grid, &rows))?;
            std::fs::write(out.join("report.md"), to_markdown(&grid, &rows))?;
            print!("{}", to_markdown(&grid, &rows));
            Ok(())
        }
        Command::Stats { data } => {
            let records = read_corpus_jsonl(&data.join("records.jsonl"), true)?;
            let stats = corpus_stats(&data, &records)?;
            print!("{}", stats.to_markdown());
            Ok(())
        }
        Command::Overlay {
            image,
            pred,
            target,
            out,
        } => {
            let image = ImageBuf::load_png(&image)?;
            let pred = decode_mask_png(&pred)?;
            let target = decode_mask_png(&target)?;
            let score = render_overlay(&image, &pred, &target, &out)?;
            println!("IoU {score:.3} -> {}", out.display());
            Ok(())
        }
    }
}

fn write_overlays(
    dir: &std::path::Path,
    model: &Model,
    store: &ParamStore,
    vocab: &uavseg_core::backbone::Vocabulary,
    samples: &[EvalSample],
    cap: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in samples.iter().take(cap) {
        let pred = model.predict_mask(store, &s.image, &s.instruction, vocab)?;
        let path = dir.join(format!("{}.png", s.id));
        let image = s.image.resized(s.target.height, s.target.width);
        render_overlay(&image, &pred, &s.target, &path)?;
    }
    Ok(())
}
