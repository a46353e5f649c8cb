use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dislab::counterparts::build_sss_index;
use dislab::data::{
    dataset_hash, generate_synthetic, ingest_vqa_json, save_dataset, Dataset, GenConfig, IngestOptions, Split,
    SplitFiles,
};
use dislab::metrics::{
    class_distance_summary, distributions_csv, distributions_svg, divergence_summary, export_answer_space,
    ground_truth_distribution, prediction_distribution, DistributionSource,
};
use dislab::model::{Checkpoint, Model};
use dislab::train::{evaluate, lambda_ratio_jobs, loss_csv, run_sweep, train_new, DataSpec, ExperimentConfig};
use dislab::{Error, Result};

#[derive(Parser)]
#[command(name = "dislab", version, about = "Train and analyze answer classifiers with a distinguishing loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic changed-prior benchmark.
    Generate {
        /// TOML file with generator settings; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert VQA-style question/annotation JSON plus a feature file into a dataset file.
    Ingest {
        #[arg(long)]
        train_questions: PathBuf,
        #[arg(long)]
        train_annotations: PathBuf,
        #[arg(long, requires = "test_annotations")]
        test_questions: Option<PathBuf>,
        #[arg(long, requires = "test_questions")]
        test_annotations: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        /// Keep answers seen at least this often in the train split.
        #[arg(long, default_value_t = 1)]
        min_answer_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print counterpart-index statistics of a dataset's train split as JSON.
    BuildIndex {
        /// Dataset file; the synthetic default is generated when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Split,
        /// Dataset file; defaults to the data the checkpoint was trained on.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also write every prediction as JSON lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Diagnostics for one or two run directories (e.g. baseline and distinguishing loss).
    Analyze {
        #[arg(long = "run", required = true, num_args = 1..=2)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also render SVG bar charts of the answer distributions.
        #[arg(long)]
        svg: bool,
        /// Export logits instead of probabilities in the answer-space CSVs.
        #[arg(long)]
        logits: bool,
    },
    /// Train one configuration for each distinguishing-to-answer weight ratio.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,4,12,24,48")]
        ratios: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_run(dir: &Path) -> Result<(ExperimentConfig, Model, Dataset)> {
    let ckpt = Checkpoint::load(&dir.join("checkpoint.json"))?;
    let exp: ExperimentConfig = serde_json::from_value(ckpt.meta["experiment"].clone())?;
    let ds = exp.data.load()?;
    Ok((exp, Model::from_checkpoint(ckpt)?, ds))
}

fn save_run(dir: &Path, exp: &ExperimentConfig, model: &Model, outcome: &dislab::train::TrainOutcome) -> Result<()> {
    mkdir(dir)?;
    let ckpt_path = dir.join("checkpoint.json");
    let meta = serde_json::json!({
        "experiment": exp,
        "dataset_hash": outcome.record.dataset_hash,
    });
    model.to_checkpoint(meta).save(&ckpt_path)?;
    let mut record = outcome.record.clone();
    record.checkpoint = Some("checkpoint.json".into());
    record.save(&dir.join("run.json"))?;
    write(&dir.join("losses.csv"), loss_csv(&outcome.steps))?;
    write(&dir.join("config.toml"), exp.to_toml()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let gen = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    GenConfig::from_toml(&text)?
                }
                None => GenConfig::default(),
            };
            let ds = generate_synthetic(&gen, seed)?;
            save_dataset(&ds, &out)?;
            println!("{}", serde_json::json!({"train": ds.train.len(), "test": ds.test.len(), "hash": dataset_hash(&ds)?}));
        }
        Command::Ingest {
            train_questions,
            train_annotations,
            test_questions,
            test_annotations,
            features,
            min_answer_count,
            out,
        } => {
            let train = SplitFiles {
                questions: train_questions,
                annotations: train_annotations,
            };
            let test = test_questions.zip(test_annotations).map(|(questions, annotations)| SplitFiles {
                questions,
                annotations,
            });
            let opts = IngestOptions {
                min_answer_count,
                ..IngestOptions::default()
            };
            let ds = ingest_vqa_json(&train, test.as_ref(), &features, &opts)?;
            save_dataset(&ds, &out)?;
            println!("{}", serde_json::json!({"train": ds.train.len(), "test": ds.test.len(), "answers": ds.num_answers()}));
        }
        Command::BuildIndex { dataset, out } => {
            let ds = match dataset {
                Some(p) => DataSpec::File { path: p }.load()?,
                None => DataSpec::default().load()?,
            };
            let stats = build_sss_index(&ds.train).stats();
            let text = serde_json::to_string_pretty(&stats)?;
            match out {
                Some(p) => write(&p, text)?,
                None => println!("{text}"),
            }
        }
        Command::Train { config, out } => {
            let exp = ExperimentConfig::load(&config)?;
            let ds = exp.data.load()?;
            let (model, outcome) = train_new(&ds, &exp.model, &exp.train)?;
            save_run(&out, &exp, &model, &outcome)?;
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({
                "train": outcome.record.final_train.overall,
                "test": outcome.record.final_test.overall,
                "out": out,
            }))?);
        }
        Command::Eval {
            checkpoint,
            split,
            dataset,
            predictions,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = match dataset {
                Some(p) => DataSpec::File { path: p }.load()?,
                None => {
                    let exp: ExperimentConfig = serde_json::from_value(ckpt.meta["experiment"].clone())
                        .map_err(|_| Error::Usage("checkpoint names no dataset; pass --dataset".into()))?;
                    exp.data.load()?
                }
            };
            let model = Model::from_checkpoint(ckpt)?;
            let rep = evaluate(&model, &ds, split, false)?;
            if let Some(p) = predictions {
                let mut s = String::new();
                for r in &rep.records {
                    s.push_str(&serde_json::to_string(r)?);
                    s.push('\n');
                }
                write(&p, s)?;
            }
            println!("{}", serde_json::to_string_pretty(&rep.summary)?);
        }
        Command::Analyze { runs, out, svg, logits } => {
            mkdir(&out)?;
            let mut summary = serde_json::Map::new();
            let mut loaded = Vec::new();
            for dir in &runs {
                let name = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into());
                let (_, model, ds) = load_run(dir)?;
                let rep = evaluate(&model, &ds, Split::Test, logits)?;
                loaded.push((name, ds, rep));
            }
            let names: Vec<&str> = loaded.iter().map(|(n, _, _)| n.as_str()).collect();
            if names.len() == 2 && names[0] == names[1] {
                return Err(Error::Usage("run directories must have distinct names".into()));
            }
            let mut class_json = serde_json::Map::new();
            for (name, ds, rep) in &loaded {
                let types = ds.types.len();
                let div = divergence_summary(&rep.records, &ds.train, &ds.test, types);
                summary.insert(name.clone(), serde_json::to_value(&div)?);
                class_json.insert(name.clone(), serde_json::to_value(class_distance_summary(&rep.records, types))?);
                let space_dir = out.join(format!("answer_space_{name}"));
                mkdir(&space_dir)?;
                for t in 0..types {
                    if rep.records.iter().any(|r| r.question_type == t) {
                        export_answer_space(&rep.records, t, &space_dir.join(format!("type_{t}.csv")), logits)?;
                    }
                }
            }
            write(&out.join("divergence.json"), serde_json::to_string_pretty(&summary)?)?;
            write(&out.join("class_distances.json"), serde_json::to_string_pretty(&class_json)?)?;
            let ds = &loaded[0].1;
            let dist_dir = out.join("distributions");
            mkdir(&dist_dir)?;
            for t in 0..ds.types.len() {
                let train_gt = ground_truth_distribution(&ds.train, t, DistributionSource::TrainGt);
                let test_gt = ground_truth_distribution(&ds.test, t, DistributionSource::TestGt);
                if train_gt.is_empty() && test_gt.is_empty() {
                    continue;
                }
                let preds: Vec<_> = loaded.iter().map(|(_, _, r)| prediction_distribution(&r.records, t)).collect();
                let mut series = vec![
                    (DistributionSource::TrainGt.label(), &train_gt),
                    (DistributionSource::TestGt.label(), &test_gt),
                ];
                series.extend(names.iter().copied().zip(preds.iter()));
                let csv = distributions_csv(&series, &ds.answers);
                write(&dist_dir.join(format!("type_{t}.csv")), csv)?;
                if svg {
                    let title = format!("answer distribution: {}", ds.types.name(t));
                    write(&dist_dir.join(format!("type_{t}.svg")), distributions_svg(&title, &series, &ds.answers))?;
                }
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { config, ratios, out } => {
            let exp = ExperimentConfig::load(&config)?;
            let ds = exp.data.load()?;
            let jobs = lambda_ratio_jobs(&exp.model, &exp.train, &ratios);
            let mut rows = Vec::new();
            for (job, res) in jobs.iter().zip(run_sweep(&ds, &jobs)) {
                let res = res?;
                let sub = ExperimentConfig {
                    data: exp.data.clone(),
                    model: job.model.clone(),
                    train: job.train.clone(),
                };
                save_run(&out.join(&job.name), &sub, &res.model, &res.outcome)?;
                rows.push(serde_json::json!({
                    "name": job.name,
                    "lambda_vqa": job.train.loss.lambda_vqa,
                    "lambda_dis": job.train.loss.lambda_dis,
                    "train": res.outcome.record.final_train.overall,
                    "test": res.outcome.record.final_test.overall,
                }));
            }
            let text = serde_json::to_string_pretty(&rows)?;
            write(&out.join("sweep.json"), &text)?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
