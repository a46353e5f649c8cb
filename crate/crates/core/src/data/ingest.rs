//! Reading VQA-style question and annotation JSON.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::dataset::{AnswerCategory, Dataset, DatasetSource, Instance};
use super::io::{read_features, FeatureStore};
use super::qtypes::{tokenize, QuestionTypeTable};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct QuestionFile {
    questions: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct QuestionRecord {
    question_id: u64,
    image_id: u64,
    question: String,
}

#[derive(Deserialize)]
struct AnnotationFile {
    annotations: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct AnnotationRecord {
    question_id: u64,
    image_id: u64,
    #[serde(default)]
    answer_type: Option<String>,
    multiple_choice_answer: String,
    answers: Vec<HumanAnswer>,
}

#[derive(Deserialize)]
struct HumanAnswer {
    answer: String,
}

/// Question and annotation files of one split.
#[derive(Clone, Debug)]
pub struct SplitFiles {
    pub questions: PathBuf,
    pub annotations: PathBuf,
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// Fixed answer vocabulary. When absent, every `multiple_choice_answer`
    /// seen at least `min_answer_count` times in the train split is used.
    pub answer_vocab: Option<Vec<String>>,
    pub min_answer_count: usize,
    pub types: QuestionTypeTable,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            answer_vocab: None,
            min_answer_count: 1,
            types: QuestionTypeTable::vqa_v2(),
        }
    }
}

/// Standard soft score for an answer given by `agreeing` annotators.
pub fn soft_score(agreeing: usize) -> f64 {
    (agreeing as f64 / 3.0).min(1.0)
}

fn normalize_answer(a: &str) -> String {
    a.trim().to_lowercase()
}

fn open_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

struct RawSplit {
    questions: Vec<QuestionRecord>,
    annotations: HashMap<u64, AnnotationRecord>,
}

fn load_split(files: &SplitFiles) -> Result<RawSplit> {
    let qf: QuestionFile = open_json(&files.questions)?;
    let af: AnnotationFile = open_json(&files.annotations)?;
    if af.annotations.is_empty() {
        return Err(Error::Data(format!(
            "{}: annotation file contains no annotations",
            files.annotations.display()
        )));
    }
    let mut questions = Vec::with_capacity(qf.questions.len());
    for (i, v) in qf.questions.into_iter().enumerate() {
        let id = v.get("question_id").cloned();
        let q: QuestionRecord = serde_json::from_value(v).map_err(|e| {
            Error::Data(format!(
                "{}: malformed question record #{i} (question_id {}): {e}",
                files.questions.display(),
                id.map_or("?".into(), |v| v.to_string())
            ))
        })?;
        questions.push(q);
    }
    let mut annotations = HashMap::with_capacity(af.annotations.len());
    for (i, v) in af.annotations.into_iter().enumerate() {
        let id = v.get("question_id").cloned();
        let a: AnnotationRecord = serde_json::from_value(v).map_err(|e| {
            Error::Data(format!(
                "{}: malformed annotation record #{i} (question_id {}): {e}",
                files.annotations.display(),
                id.map_or("?".into(), |v| v.to_string())
            ))
        })?;
        annotations.insert(a.question_id, a);
    }
    Ok(RawSplit {
        questions,
        annotations,
    })
}

fn build_vocab(train: &RawSplit, opts: &IngestOptions) -> Result<Vocab> {
    if let Some(list) = &opts.answer_vocab {
        return Vocab::try_from(list.iter().map(|a| normalize_answer(a)).collect::<Vec<_>>());
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for a in train.annotations.values() {
        *counts.entry(normalize_answer(&a.multiple_choice_answer)).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= opts.min_answer_count.max(1))
        .collect();
    // most frequent first, alphabetical among equals
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::try_from(ranked.into_iter().map(|(a, _)| a).collect::<Vec<_>>())
}

fn convert(
    raw: RawSplit,
    answers: &Vocab,
    tokens: &mut Vocab,
    types: &QuestionTypeTable,
    features: &FeatureStore,
    dropped: &mut usize,
) -> Result<Vec<Instance>> {
    let mut out = Vec::with_capacity(raw.questions.len());
    for q in raw.questions {
        let ann = raw.annotations.get(&q.question_id).ok_or_else(|| {
            Error::Data(format!("question {} has no annotation", q.question_id))
        })?;
        if ann.image_id != q.image_id {
            return Err(Error::Data(format!(
                "question {}: annotation image {} differs from question image {}",
                q.question_id, ann.image_id, q.image_id
            )));
        }
        let feats = features.get(q.image_id).ok_or_else(|| {
            Error::Data(format!(
                "question {}: image {} missing from feature file",
                q.question_id, q.image_id
            ))
        })?;
        let mut agree: BTreeMap<usize, usize> = BTreeMap::new();
        for h in &ann.answers {
            if let Some(i) = answers.get(&normalize_answer(&h.answer)) {
                *agree.entry(i).or_default() += 1;
            }
        }
        if agree.is_empty() {
            *dropped += 1;
            continue;
        }
        let words = tokenize(&q.question);
        if words.is_empty() {
            return Err(Error::Data(format!("question {}: empty question text", q.question_id)));
        }
        let qtype = types.classify(&words);
        let token_ids = words.iter().map(|w| tokens.intern(w)).collect();
        let scores = agree.into_iter().map(|(i, c)| (i, soft_score(c))).collect();
        let mut inst = Instance::new(
            q.question_id,
            q.image_id,
            feats.iter().map(|&x| f64::from(x)).collect(),
            token_ids,
            qtype,
            scores,
        )?;
        inst.category = Some(AnswerCategory::parse(ann.answer_type.as_deref().unwrap_or("other")));
        out.push(inst);
    }
    Ok(out)
}

/// Builds a dataset from VQA-format question/annotation files and a feature file.
///
/// Human answers outside the answer vocabulary are ignored; questions left
/// with no in-vocabulary answer are skipped.
pub fn ingest_vqa_json(
    train: &SplitFiles,
    test: Option<&SplitFiles>,
    feature_file: &Path,
    opts: &IngestOptions,
) -> Result<Dataset> {
    let features = read_features(feature_file)?;
    let raw_train = load_split(train)?;
    let raw_test = test.map(load_split).transpose()?;
    let answers = build_vocab(&raw_train, opts)?;
    if answers.is_empty() {
        return Err(Error::Data("answer vocabulary is empty".into()));
    }
    let mut tokens = Vocab::new();
    let mut dropped = 0;
    let train_insts = convert(raw_train, &answers, &mut tokens, &opts.types, &features, &mut dropped)?;
    let test_insts = match raw_test {
        Some(r) => convert(r, &answers, &mut tokens, &opts.types, &features, &mut dropped)?,
        None => Vec::new(),
    };
    if dropped > 0 {
        log::info!("skipped {dropped} questions with no in-vocabulary answer");
    }
    if train_insts.is_empty() {
        return Err(Error::Data("no usable training questions after ingestion".into()));
    }
    let mut files = vec![
        train.questions.display().to_string(),
        train.annotations.display().to_string(),
    ];
    if let Some(t) = test {
        files.push(t.questions.display().to_string());
        files.push(t.annotations.display().to_string());
    }
    files.push(feature_file.display().to_string());
    let ds = Dataset {
        answers,
        tokens,
        types: opts.types.clone(),
        feature_dim: features.dim,
        train: train_insts,
        test: test_insts,
        source: DatasetSource::Ingested { files },
    };
    ds.validate()?;
    Ok(ds)
}
