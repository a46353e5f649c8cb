//! Training loop, evaluation and the experiment configuration file.
//!
//! Batches come from a per-epoch permutation drawn from the shuffle stream.
//! Each batch is encoded once,
//! counterparts are sampled from a second stream, and the weighted sum of the
//! answer and distinguishing losses is minimized. Model initialisation, the
//! shuffle stream and the counterpart stream all derive from `seed`, so a
//! run with the distinguishing weight set to zero sees exactly the same
//! batches as an answer-loss-only trainer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterparts::{sample_counterparts, synthetic_collision_rate};
use crate::data::{dataset_hash, generate_synthetic, load_dataset, Dataset, DatasetSource, GenConfig, Split};
use crate::diff::{make_optimizer, OptimizerKind, Tape};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig};
use crate::metrics::PredictionRecord;
use crate::model::{Model, ModelConfig, ModelShape};

/// Stream ids of the per-run generators.
pub const SHUFFLE_STREAM: u64 = 1;
pub const COUNTERPART_STREAM: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds model initialisation, batch order and counterpart sampling.
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub loss: LossConfig,
    /// Evaluate both splits every this many epochs; 0 evaluates only after
    /// the last epoch (which is always evaluated).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            loss: LossConfig::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 so a batch can hold counterparts, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        self.loss.validate()
    }
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub vqa: f64,
    pub dis: f64,
    pub total: f64,
    pub real_terms: usize,
    pub synthetic_terms: usize,
    /// Instances run through the encoders during the step.
    pub encoded: u64,
}

pub fn loss_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from("step,epoch,l_vqa,l_dis,total,real_terms,synthetic_terms\n");
    for r in steps {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.epoch, r.vqa, r.dis, r.total, r.real_terms, r.synthetic_terms
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub count: usize,
    /// Percent.
    pub accuracy: f64,
}

/// Accuracies of one split, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: Split,
    pub count: usize,
    pub overall: f64,
    pub per_category: BTreeMap<String, CategoryScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<PredictionRecord>,
}

const EVAL_CHUNK: usize = 1024;

/// Predicts `argmax p` for every instance of the split and scores it with the
/// soft answer score. Categories are question types on synthetic data and
/// answer categories on ingested data.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split, keep_logits: bool) -> Result<EvalReport> {
    let insts = dataset.split(split);
    let mut records = Vec::with_capacity(insts.len());
    for chunk in insts.chunks(EVAL_CHUNK) {
        let batch: Vec<_> = chunk.iter().collect();
        let mut tape = Tape::new();
        let out = model.forward_batch(&mut tape, &batch)?;
        let (p, z) = (tape.value(out.probs), tape.value(out.logits));
        for (r, inst) in chunk.iter().enumerate() {
            let mut rec = PredictionRecord::new(inst, p.row(r).to_vec());
            if keep_logits {
                rec.logits = Some(z.row(r).to_vec());
            }
            records.push(rec);
        }
    }
    let category = |i: usize| -> String {
        let inst = &insts[i];
        if dataset.is_synthetic() {
            dataset.types.name(inst.question_type).to_string()
        } else {
            inst.category.map_or("Other", |c| c.label()).to_string()
        }
    };
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for (i, rec) in records.iter().enumerate() {
        total += rec.score;
        let e = sums.entry(category(i)).or_default();
        e.0 += rec.score;
        e.1 += 1;
    }
    let pct = |s: f64, n: usize| if n == 0 { 0.0 } else { 100.0 * s / n as f64 };
    let summary = EvalSummary {
        split,
        count: records.len(),
        overall: pct(total, records.len()),
        per_category: sums
            .into_iter()
            .map(|(k, (s, n))| (k, CategoryScore { count: n, accuracy: pct(s, n) }))
            .collect(),
    };
    Ok(EvalReport { summary, records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_vqa: f64,
    pub mean_dis: f64,
    pub mean_total: f64,
    /// Share of synthetic pairs whose donor image carries the anchor's
    /// answer; only known for generated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_collision_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<EvalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalSummary>,
}

pub const RUN_RECORD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset_source: DatasetSource,
    pub dataset_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub final_train: EvalSummary,
    pub final_test: EvalSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// The record with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub steps: Vec<StepRecord>,
    /// Final test-split predictions.
    pub test_records: Vec<PredictionRecord>,
}

pub fn model_shape(dataset: &Dataset) -> ModelShape {
    ModelShape {
        vocab_size: dataset.tokens.len(),
        feature_dim: dataset.feature_dim,
        num_answers: dataset.num_answers(),
    }
}

/// Batch index lists for one epoch: a permutation of `0..n` cut into
/// `batch_size` chunks, with a trailing singleton dropped.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains `model` in place on the train split.
pub fn train(dataset: &Dataset, model: &mut Model, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if model.shape() != model_shape(dataset) {
        return Err(Error::Config(format!(
            "model shape {:?} does not fit the dataset {:?}",
            model.shape(),
            model_shape(dataset)
        )));
    }
    if dataset.train.len() < 2 {
        return Err(Error::Data("the train split needs at least two instances".into()));
    }
    let started = Instant::now();
    let hash = dataset_hash(dataset)?;
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut cp_rng = stream_rng(config.seed, COUNTERPART_STREAM);
    let mut optimizer = make_optimizer(config.optimizer, config.lr);
    let k = match &dataset.source {
        DatasetSource::Synthetic { config, .. } => Some(config.answers_per_type),
        DatasetSource::Ingested { .. } => None,
    };
    let loss = &config.loss;

    let mut steps = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut last_eval = None;
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(dataset.train.len(), config.batch_size, &mut shuffle_rng);
        let (mut sv, mut sd, mut st) = (0.0, 0.0, 0.0);
        let (mut coll_sum, mut coll_n) = (0.0, 0usize);
        for idx in &batches {
            let batch: Vec<_> = idx.iter().map(|&i| &dataset.train[i]).collect();
            let before = model.encoded_count();
            let mut tape = Tape::new();
            let out = model.forward_batch(&mut tape, &batch)?;
            let encoded = model.encoded_count() - before;
            let plan = sample_counterparts(&batch, loss.n_real, loss.n_synthetic, &mut cp_rng);
            if let Some(rate) = k.and_then(|k| synthetic_collision_rate(&batch, &plan, k)) {
                coll_sum += rate;
                coll_n += 1;
            }
            let terms = total_loss(&mut tape, model, &out, &batch, &plan, loss)?;
            let total = tape.value(terms.total).item();
            let step = steps.len() + 1;
            if !(total.is_finite() && terms.vqa.is_finite() && terms.dis.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "step {step} (epoch {epoch}): total {total}, answer loss {}, distinguishing loss {}",
                    terms.vqa, terms.dis
                )));
            }
            model.params_mut().zero_grad();
            tape.backward(terms.total, model.params_mut())?;
            optimizer
                .step(model.params_mut())
                .map_err(|e| Error::NonFinite(format!("step {step} (epoch {epoch}): {e}")))?;
            sv += terms.vqa;
            sd += terms.dis;
            st += total;
            steps.push(StepRecord {
                step,
                epoch,
                vqa: terms.vqa,
                dis: terms.dis,
                total,
                real_terms: terms.real_terms,
                synthetic_terms: terms.synthetic_terms,
                encoded,
            });
        }
        let n = batches.len().max(1) as f64;
        let evaluate_now = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
        let (tr, te) = if evaluate_now {
            let tr = evaluate(model, dataset, Split::Train, false)?;
            let te = evaluate(model, dataset, Split::Test, false)?;
            log::info!(
                "epoch {epoch}: loss {:.5} train {:.2}% test {:.2}%",
                st / n,
                tr.summary.overall,
                te.summary.overall
            );
            let out = (Some(tr.summary.clone()), Some(te.summary.clone()));
            last_eval = Some((tr, te));
            out
        } else {
            log::debug!("epoch {epoch}: loss {:.5}", st / n);
            (None, None)
        };
        epochs.push(EpochRecord {
            epoch,
            steps: batches.len(),
            mean_vqa: sv / n,
            mean_dis: sd / n,
            mean_total: st / n,
            synthetic_collision_rate: (coll_n > 0).then(|| coll_sum / coll_n as f64),
            train: tr,
            test: te,
        });
    }
    let (tr, te) = last_eval.expect("last epoch is always evaluated");
    let record = RunRecord {
        version: RUN_RECORD_VERSION,
        model: model.config().clone(),
        train: config.clone(),
        dataset_source: dataset.source.clone(),
        dataset_hash: hash,
        epochs,
        final_train: tr.summary,
        final_test: te.summary,
        checkpoint: None,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        record,
        steps,
        test_records: te.records,
    })
}

/// Builds a freshly initialised model for the dataset and trains it.
pub fn train_new(dataset: &Dataset, model_config: &ModelConfig, config: &TrainConfig) -> Result<(Model, TrainOutcome)> {
    let mut model = Model::new(model_config.clone(), model_shape(dataset), config.seed)?;
    let outcome = train(dataset, &mut model, config)?;
    Ok((model, outcome))
}

/// One configuration of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepJob {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub struct SweepResult {
    pub name: String,
    pub model: Model,
    pub outcome: TrainOutcome,
}

/// Runs independent jobs in parallel; results come back in job order.
pub fn run_sweep(dataset: &Dataset, jobs: &[SweepJob]) -> Vec<Result<SweepResult>> {
    jobs.par_iter()
        .map(|job| {
            let (model, outcome) = train_new(dataset, &job.model, &job.train)?;
            Ok(SweepResult {
                name: job.name.clone(),
                model,
                outcome,
            })
        })
        .collect()
}

/// Jobs with `lambda_dis = ratio · lambda_vqa` for each ratio, all else as in `base`.
pub fn lambda_ratio_jobs(model: &ModelConfig, base: &TrainConfig, ratios: &[f64]) -> Vec<SweepJob> {
    ratios
        .iter()
        .map(|&r| {
            let mut train = base.clone();
            train.loss.lambda_dis = r * base.loss.lambda_vqa;
            SweepJob {
                name: format!("ratio-{r}"),
                model: model.clone(),
                train,
            }
        })
        .collect()
}

/// Where the training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        generator: GenConfig,
    },
    /// A dataset file written by `generate` or by ingestion.
    File { path: PathBuf },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synthetic {
            seed: 0,
            generator: GenConfig::default(),
        }
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Synthetic { seed, generator } => generate_synthetic(generator, *seed),
            DataSpec::File { path } => load_dataset(path),
        }
    }
}

/// Experiment file: `[data]`, `[model]`, `[train]` and `[train.loss]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        if let DataSpec::Synthetic { generator, .. } = &cfg.data {
            generator.validate()?;
        }
        Ok(cfg)
    }

    /// Reads a config file; a relative data path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let DataSpec::File { path: p } = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
