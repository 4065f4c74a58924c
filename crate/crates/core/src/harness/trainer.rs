//! End-to-end training: corpus load, CoT transform, vocabulary and split
//! construction, micro-batch gradient accumulation, AdamW updates, loss
//! logging, checkpointing, and end-of-run evaluation.
//!
//! Determinism contract: the micro-sample order depends only on (seed,
//! epoch, micro index), never on the batch/accumulation factorization, so
//! batch 1 x accum 4 and batch 4 x accum 1 consume identical data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Vocabulary;
use crate::data::record::read_corpus_jsonl;
use crate::data::split::{split_dataset, SplitName};
use crate::data::transforms::apply_cot_mode;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::harness::checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::evaluator::{evaluate_samples, load_samples, EvalSample};
use crate::harness::optim::AdamW;
use crate::harness::report::MetricRow;
use crate::model::{build_instruction, Model};
use crate::params::{Gradients, ParamStore};

/// One line of loss.jsonl.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub txt: f64,
    #[serde(rename = "ref")]
    pub ref_bce: f64,
    pub dice: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config_fingerprint: String,
    pub wall_clock_secs: f64,
    /// Mean logged total per epoch.
    pub epoch_losses: Vec<f64>,
    /// Logged total at global step 10; absent for runs under 10 steps.
    pub step10_loss: Option<f64>,
    pub final_loss: f64,
    /// Metric row per split name; empty splits carry all-n/a rows.
    pub splits: BTreeMap<String, MetricRow>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub losses: Vec<LossRecord>,
}

/// Trains per the config and writes checkpoint.bin, vocab.json,
/// config.json, loss.jsonl, and report.json under `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    // persist an absolute corpus root so the saved run evaluates from any
    // working directory
    let mut cfg = cfg.clone();
    cfg.data.root = std::path::absolute(&cfg.data.root)?
        .to_string_lossy()
        .into_owned();
    let cfg = &cfg;
    let started = Instant::now();
    let root = Path::new(&cfg.data.root);
    let mut records = read_corpus_jsonl(&root.join("records.jsonl"), true)?;
    apply_cot_mode(&mut records, cfg.cot_mode, cfg.seed);

    let vocab = build_vocabulary(&records);
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let split = split_dataset(&ids, cfg.data.split_seed)?;
    if split.train.is_empty() {
        return Err(Error::input(format!(
            "train split is empty ({} records total); provide a larger corpus",
            records.len()
        )));
    }

    let by_id: BTreeMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let out_size = cfg.model.decoder.output_size;
    let pick = |names: &[String]| -> Vec<_> {
        names
            .iter()
            .map(|n| records[by_id[n.as_str()]].clone())
            .collect::<Vec<_>>()
    };
    let train_samples = load_samples(root, &pick(&split.train), out_size)?;

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(&mut store, &mut rng, &cfg.model, vocab.len())?;
    let mut opt = AdamW::new(&store, cfg.optim.clone());

    let micro_per_step = cfg.train.batch_size * cfg.train.grad_accum_steps;
    let scale = 1.0 / micro_per_step as f32;
    let mut losses: Vec<LossRecord> = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.train.epochs {
        let order = epoch_order(train_samples.len(), cfg.seed, epoch);
        let mut epoch_total = 0.0f64;
        for step_in_epoch in 0..cfg.train.steps_per_epoch {
            let mut grads = Gradients::zeros(&store);
            let (mut sum_txt, mut sum_bce, mut sum_dice) = (0.0f64, 0.0f64, 0.0f64);
            for micro in 0..micro_per_step {
                let k = step_in_epoch * micro_per_step + micro;
                let sample = &train_samples[order[k % order.len()]];
                let mut g = Graph::new();
                let fwd = model.forward_train(
                    &mut g,
                    &store,
                    &sample.image,
                    &sample.instruction,
                    &sample.answer,
                    &sample.target,
                    &vocab,
                    &cfg.loss,
                )?;
                let total_val = g.value(fwd.total).item() as f64;
                if !total_val.is_finite() {
                    return Err(Error::Divergence {
                        step: global_step as u64 + 1,
                    });
                }
                sum_bce += g.value(fwd.bce).item() as f64;
                sum_dice += g.value(fwd.dice).item() as f64;
                if let Some(txt) = fwd.txt {
                    sum_txt += g.value(txt).item() as f64;
                }
                let micro_grads = g.backward(fwd.total, &store);
                grads.accumulate(&micro_grads, scale);
            }
            let lr = opt.step(&mut store, &grads)?;
            global_step += 1;

            let n = micro_per_step as f64;
            let (txt, ref_bce, dice) = (sum_txt / n, sum_bce / n, sum_dice / n);
            let total = cfg.loss.txt as f64 * txt
                + cfg.loss.ref_bce as f64 * ref_bce
                + cfg.loss.dice as f64 * dice;
            epoch_total += total;
            losses.push(LossRecord {
                step: global_step,
                total,
                txt,
                ref_bce,
                dice,
                lr,
            });
        }
        epoch_losses.push(epoch_total / cfg.train.steps_per_epoch as f64);
    }

    let final_loss = losses.last().map(|l| l.total).unwrap_or(f64::NAN);
    let step10_loss = losses.iter().find(|l| l.step == 10).map(|l| l.total);

    fs::create_dir_all(out_dir)?;
    checkpoint::save(&store, &out_dir.join("checkpoint.bin"))?;
    fs::write(out_dir.join("vocab.json"), vocab.to_json())?;
    fs::write(out_dir.join("config.json"), cfg.to_json_pretty())?;
    write_loss_log(&losses, &out_dir.join("loss.jsonl"))?;

    let mut splits = BTreeMap::new();
    for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let subset = pick(split.ids(name));
        let samples = load_samples(root, &subset, out_size)?;
        let acc = evaluate_samples(&model, &store, &vocab, &samples)?;
        splits.insert(
            name.as_str().to_string(),
            MetricRow::from_accumulator(name.as_str(), &acc),
        );
    }

    let report = RunReport {
        config_fingerprint: cfg.fingerprint(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        epoch_losses,
        step10_loss,
        final_loss,
        splits,
    };
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(TrainOutcome { report, losses })
}

/// Vocabulary over every record's instruction and answer so eval-split
/// text never hits <unk> for in-corpus words.
pub fn build_vocabulary(records: &[crate::data::record::ReasoningSample]) -> Vocabulary {
    let texts: Vec<String> = records
        .iter()
        .map(|r| {
            format!(
                "{} {}",
                build_instruction(&r.question, &r.cot),
                r.answer
            )
        })
        .collect();
    Vocabulary::build(texts.iter().map(|s| s.as_str()))
}

/// Shuffled index order for one epoch; cycled when the epoch consumes more
/// micro samples than the split holds.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x45504F43 + epoch as u64);
    order.shuffle(&mut rng);
    order
}

fn write_loss_log(losses: &[LossRecord], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for l in losses {
        let line = serde_json::to_string(l)?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Reads a loss log back; used by tests and the reproducibility check.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Restores a trained model for evaluation: config.json, vocab.json and
/// checkpoint.bin written by `train`.
pub fn load_run(run_dir: &Path) -> Result<(RunConfig, Vocabulary, ParamStore, Model)> {
    let cfg: RunConfig =
        serde_json::from_str(&fs::read_to_string(run_dir.join("config.json"))?)?;
    cfg.validate()?;
    let vocab = Vocabulary::from_json(&fs::read_to_string(run_dir.join("vocab.json"))?)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(&mut store, &mut rng, &cfg.model, vocab.len())?;
    checkpoint::load_into(&mut store, &run_dir.join("checkpoint.bin"))?;
    Ok((cfg, vocab, store, model))
}

/// Evaluates a restored run on one split of its configured corpus.
pub fn evaluate_run(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    store: &ParamStore,
    model: &Model,
    split_name: SplitName,
) -> Result<(MetricRow, Vec<EvalSample>)> {
    let root = Path::new(&cfg.data.root);
    let mut records = read_corpus_jsonl(&root.join("records.jsonl"), true)?;
    apply_cot_mode(&mut records, cfg.cot_mode, cfg.seed);
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let split = split_dataset(&ids, cfg.data.split_seed)?;
    let by_id: BTreeMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let subset: Vec<_> = split
        .ids(split_name)
        .iter()
        .map(|n| records[by_id[n.as_str()]].clone())
        .collect();
    let samples = load_samples(root, &subset, cfg.model.decoder.output_size)?;
    let acc = evaluate_samples(model, store, vocab, &samples)?;
    Ok((
        MetricRow::from_accumulator(split_name.as_str(), &acc),
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::data::synth::synthesize_dataset;
    use crate::decoder::DecoderConfig;
    use crate::encoder::EncoderConfig;
    use crate::harness::config::{DataConfig, TrainSchedule};
    use crate::model::ModelConfig;

    fn tiny_config(root: &Path, epochs: usize, steps_per_epoch: usize) -> RunConfig {
        RunConfig {
            model: ModelConfig {
                encoder: EncoderConfig {
                    global_input_size: 16,
                    fine_input_size: 32,
                    patch_size: 8,
                    global_channels: vec![8, 8, 8, 8],
                    fine_channels: vec![4, 6, 8],
                    ..Default::default()
                },
                backbone: BackboneConfig {
                    d_model: 16,
                    depth: 1,
                    heads: 2,
                    d_ff: 24,
                    embed_dim: 8,
                    max_seq: 128,
                    ..Default::default()
                },
                decoder: DecoderConfig {
                    depth: 2,
                    embed_dim: 8,
                    output_size: (32, 32),
                },
                ..Default::default()
            },
            data: DataConfig {
                root: root.to_string_lossy().into_owned(),
                split_seed: 1234,
            },
            train: TrainSchedule {
                batch_size: 1,
                grad_accum_steps: 2,
                epochs,
                steps_per_epoch,
            },
            ..Default::default()
        }
    }

    fn corpus(n: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        synthesize_dataset(dir.path(), n, 11, 32).unwrap();
        dir
    }

    #[test]
    fn grad_accum_factorizations_match() {
        let data = corpus(10);
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();

        let mut cfg_a = tiny_config(data.path(), 1, 5);
        cfg_a.train.batch_size = 1;
        cfg_a.train.grad_accum_steps = 4;
        let mut cfg_b = tiny_config(data.path(), 1, 5);
        cfg_b.train.batch_size = 4;
        cfg_b.train.grad_accum_steps = 1;

        let a = train(&cfg_a, out_a.path()).unwrap();
        let b = train(&cfg_b, out_b.path()).unwrap();

        let pa = checkpoint::load_raw(&out_a.path().join("checkpoint.bin")).unwrap();
        let pb = checkpoint::load_raw(&out_b.path().join("checkpoint.bin")).unwrap();
        let mut max_diff = 0.0f64;
        for ((na, ta), (nb, tb)) in pa.iter().zip(pb.iter()) {
            assert_eq!(na, nb);
            for (x, y) in ta.data().iter().zip(tb.data()) {
                max_diff = max_diff.max((*x as f64 - *y as f64).abs());
            }
        }
        assert!(max_diff < 1e-5, "parameter diff {max_diff}");
        for (la, lb) in a.losses.iter().zip(&b.losses) {
            assert!((la.total - lb.total).abs() < 1e-9, "{} vs {}", la.total, lb.total);
        }
    }

    #[test]
    fn identical_seeds_produce_identical_loss_logs() {
        let data = corpus(8);
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let cfg = tiny_config(data.path(), 2, 3);
        train(&cfg, out_a.path()).unwrap();
        train(&cfg, out_b.path()).unwrap();
        let log_a = fs::read_to_string(out_a.path().join("loss.jsonl")).unwrap();
        let log_b = fs::read_to_string(out_b.path().join("loss.jsonl")).unwrap();
        assert_eq!(log_a, log_b);
        assert!(!log_a.is_empty());
    }

    #[test]
    fn logged_total_is_the_weighted_component_sum() {
        let data = corpus(8);
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_config(data.path(), 1, 6);
        let outcome = train(&cfg, out.path()).unwrap();
        assert_eq!(outcome.losses.len(), 6);
        for l in &outcome.losses {
            let expect = cfg.loss.txt as f64 * l.txt
                + cfg.loss.ref_bce as f64 * l.ref_bce
                + cfg.loss.dice as f64 * l.dice;
            assert!((l.total - expect).abs() < 1e-6, "step {}", l.step);
        }
        let reread = read_loss_log(&out.path().join("loss.jsonl")).unwrap();
        assert_eq!(reread, outcome.losses);
    }

    #[test]
    fn huge_learning_rate_diverges_with_step_diagnostic() {
        let data = corpus(8);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(data.path(), 1, 50);
        cfg.optim.lr = 1e10;
        cfg.optim.warmup_steps = 0;
        let err = train(&cfg, out.path()).unwrap_err();
        match err {
            Error::Divergence { step } => assert!(step >= 1),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn empty_train_split_is_an_input_error() {
        let data = corpus(8);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(data.path(), 1, 1);
        // Point at a corpus directory with zero records.
        let empty = tempfile::tempdir().unwrap();
        fs::write(empty.path().join("records.jsonl"), "").unwrap();
        cfg.data.root = empty.path().to_string_lossy().into_owned();
        assert!(train(&cfg, out.path()).is_err());
        drop(data);
    }

    #[test]
    fn report_covers_every_split_and_checkpoint_restores() {
        let data = corpus(10);
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_config(data.path(), 1, 4);
        let outcome = train(&cfg, out.path()).unwrap();
        for split in ["train", "val", "test"] {
            assert!(outcome.report.splits.contains_key(split), "{split}");
        }
        // 10 records split 3:2:5.
        assert_eq!(outcome.report.splits["train"].samples, 3);
        assert_eq!(outcome.report.splits["val"].samples, 2);
        assert_eq!(outcome.report.splits["test"].samples, 5);
        assert_eq!(outcome.report.epoch_losses.len(), 1);
        assert!(outcome.report.step10_loss.is_none());

        let (rcfg, vocab, store, model) = load_run(out.path()).unwrap();
        assert_eq!(rcfg.fingerprint(), outcome.report.config_fingerprint);
        let (row, _) = evaluate_run(&rcfg, &vocab, &store, &model, SplitName::Val).unwrap();
        let trained_row = &outcome.report.splits["val"];
        assert_eq!(row.overall_giou, trained_row.overall_giou);
        assert_eq!(row.overall_ciou, trained_row.overall_ciou);
    }
}
