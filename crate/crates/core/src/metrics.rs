//! Prediction diagnostics: per-type answer distributions, Jensen-Shannon
//! divergence, class distances in the answer space and a linear 2D export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Instance, Vocab};
use crate::error::{Error, Result};

/// One evaluated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    /// `argmax probs`, lowest index on ties.
    pub predicted: usize,
    /// Ground-truth index.
    pub answer: usize,
    pub question_type: usize,
    /// Soft score of the predicted answer.
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(inst: &Instance, probs: Vec<f64>) -> Self {
        let predicted = argmax(&probs);
        PredictionRecord {
            id: inst.id,
            score: inst.score_of(predicted),
            probs,
            logits: None,
            predicted,
            answer: inst.answer,
            question_type: inst.question_type,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionSource {
    TrainGt,
    TestGt,
    Predictions,
}

impl DistributionSource {
    pub fn label(self) -> &'static str {
        match self {
            DistributionSource::TrainGt => "train-gt",
            DistributionSource::TestGt => "test-gt",
            DistributionSource::Predictions => "predictions",
        }
    }
}

/// Answer frequencies for one question type. An empty selection yields an
/// empty `freqs` map rather than a division by zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub question_type: usize,
    pub source: DistributionSource,
    pub count: usize,
    pub freqs: BTreeMap<usize, f64>,
}

impl AnswerDistribution {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn get(&self, answer: usize) -> f64 {
        self.freqs.get(&answer).copied().unwrap_or(0.0)
    }
}

/// Normalized counts of the answers given for `type_id`, from
/// `(question type, answer)` pairs.
pub fn answer_distribution(
    labels: impl IntoIterator<Item = (usize, usize)>,
    type_id: usize,
    source: DistributionSource,
) -> AnswerDistribution {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n = 0usize;
    for (t, a) in labels {
        if t == type_id {
            *counts.entry(a).or_default() += 1;
            n += 1;
        }
    }
    let freqs = counts
        .into_iter()
        .map(|(a, c)| (a, c as f64 / n as f64))
        .collect();
    AnswerDistribution {
        question_type: type_id,
        source,
        count: n,
        freqs,
    }
}

pub fn ground_truth_distribution(
    split: &[Instance],
    type_id: usize,
    source: DistributionSource,
) -> AnswerDistribution {
    answer_distribution(split.iter().map(|i| (i.question_type, i.answer)), type_id, source)
}

pub fn prediction_distribution(records: &[PredictionRecord], type_id: usize) -> AnswerDistribution {
    answer_distribution(
        records.iter().map(|r| (r.question_type, r.predicted)),
        type_id,
        DistributionSource::Predictions,
    )
}

fn entropy_term(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).log2()
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence in bits between two dense distributions.
pub fn js_divergence_dense(p: &[f64], q: &[f64]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        kl_p += entropy_term(a, m);
        kl_q += entropy_term(b, m);
    }
    (0.5 * kl_p + 0.5 * kl_q).clamp(0.0, 1.0)
}

/// Jensen-Shannon divergence over the union support, or `None` when either
/// distribution is empty.
pub fn js_divergence(d1: &AnswerDistribution, d2: &AnswerDistribution) -> Option<f64> {
    if d1.is_empty() || d2.is_empty() {
        return None;
    }
    let support: BTreeSet<usize> = d1.freqs.keys().chain(d2.freqs.keys()).copied().collect();
    let p: Vec<f64> = support.iter().map(|&a| d1.get(a)).collect();
    let q: Vec<f64> = support.iter().map(|&a| d2.get(a)).collect();
    Some(js_divergence_dense(&p, &q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeDivergence {
    pub question_type: usize,
    pub to_test_gt: Option<f64>,
    pub to_train_gt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub per_type: Vec<TypeDivergence>,
    /// Mean over types with a defined value.
    pub mean_to_test_gt: Option<f64>,
    pub mean_to_train_gt: Option<f64>,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Divergence of the predicted answer distribution from the train and test
/// ground-truth distributions, per question type.
pub fn divergence_summary(
    records: &[PredictionRecord],
    train: &[Instance],
    test: &[Instance],
    num_types: usize,
) -> DivergenceSummary {
    let per_type: Vec<TypeDivergence> = (0..num_types)
        .into_par_iter()
        .map(|t| {
            let pred = prediction_distribution(records, t);
            let te = ground_truth_distribution(test, t, DistributionSource::TestGt);
            let tr = ground_truth_distribution(train, t, DistributionSource::TrainGt);
            TypeDivergence {
                question_type: t,
                to_test_gt: js_divergence(&pred, &te),
                to_train_gt: js_divergence(&pred, &tr),
            }
        })
        .filter(|d| d.to_test_gt.is_some() || d.to_train_gt.is_some())
        .collect();
    DivergenceSummary {
        mean_to_test_gt: mean_defined(per_type.iter().map(|d| d.to_test_gt)),
        mean_to_train_gt: mean_defined(per_type.iter().map(|d| d.to_train_gt)),
        per_type,
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise distances within and across ground-truth classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistances {
    /// Mean within-class distance for every class with at least two members.
    pub intra: BTreeMap<usize, f64>,
    /// Mean distance over pairs from different classes; `None` with fewer than two classes.
    pub inter: Option<f64>,
    /// Classes left out of `intra` because they have a single member.
    pub omitted: Vec<usize>,
}

impl ClassDistances {
    /// Mean of the per-class intra distances.
    pub fn mean_intra(&self) -> Option<f64> {
        (!self.intra.is_empty()).then(|| self.intra.values().sum::<f64>() / self.intra.len() as f64)
    }

    /// `inter / mean_intra`; larger means classes are better separated.
    pub fn ratio(&self) -> Option<f64> {
        match (self.inter, self.mean_intra()) {
            (Some(e), Some(a)) if a > 0.0 => Some(e / a),
            _ => None,
        }
    }
}

/// Class distances of `vectors` grouped by `labels`.
pub fn class_distances_raw(vectors: &[&[f64]], labels: &[usize]) -> ClassDistances {
    let mut intra_sum: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let (mut inter_sum, mut inter_n) = (0.0, 0usize);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let d = euclid(vectors[i], vectors[j]);
            if labels[i] == labels[j] {
                let e = intra_sum.entry(labels[i]).or_default();
                e.0 += d;
                e.1 += 1;
            } else {
                inter_sum += d;
                inter_n += 1;
            }
        }
    }
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let omitted: Vec<usize> = sizes.iter().filter(|(_, &n)| n < 2).map(|(&l, _)| l).collect();
    if !omitted.is_empty() {
        log::warn!("classes {omitted:?} have a single member; intra distance omitted");
    }
    if sizes.len() < 2 {
        log::warn!("fewer than two classes; inter distance omitted");
    }
    ClassDistances {
        intra: intra_sum.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect(),
        inter: (inter_n > 0).then(|| inter_sum / inter_n as f64),
        omitted,
    }
}

/// Class distances over the probability vectors of one question type.
pub fn class_distances(records: &[PredictionRecord], type_id: usize) -> ClassDistances {
    let sel: Vec<&PredictionRecord> = records.iter().filter(|r| r.question_type == type_id).collect();
    let vectors: Vec<&[f64]> = sel.iter().map(|r| r.probs.as_slice()).collect();
    let labels: Vec<usize> = sel.iter().map(|r| r.answer).collect();
    class_distances_raw(&vectors, &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeClassDistances {
    pub question_type: usize,
    #[serde(flatten)]
    pub distances: ClassDistances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistanceSummary {
    pub per_type: Vec<TypeClassDistances>,
    /// Mean over types of `inter / mean_intra`.
    pub mean_ratio: Option<f64>,
}

pub fn class_distance_summary(records: &[PredictionRecord], num_types: usize) -> ClassDistanceSummary {
    let per_type: Vec<TypeClassDistances> = (0..num_types)
        .into_par_iter()
        .filter(|&t| records.iter().any(|r| r.question_type == t))
        .map(|t| TypeClassDistances {
            question_type: t,
            distances: class_distances(records, t),
        })
        .collect();
    ClassDistanceSummary {
        mean_ratio: mean_defined(per_type.iter().map(|d| d.distances.ratio())),
        per_type,
    }
}

/// Projection onto the top two principal components. Each component's sign
/// is fixed so that its largest-magnitude loading is positive.
pub fn pca_2d(rows: &[&[f64]]) -> Vec<[f64; 2]> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let d = rows[0].len();
    let mut x = DMatrix::<f64>::from_fn(n, d, |i, j| rows[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::new();
    for &k in order.iter().take(2) {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if lead < 0.0 {
            v = -v;
        }
        axes.push(v);
    }
    (0..n)
        .map(|i| {
            let row = x.row(i);
            let mut out = [0.0; 2];
            for (c, axis) in axes.iter().enumerate() {
                out[c] = row.iter().zip(axis.iter()).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect()
}

/// Writes `id,label,p0..,pc1,pc2` rows for one question type. With
/// `use_logits` the logits (when recorded) replace the probabilities.
pub fn export_answer_space(
    records: &[PredictionRecord],
    type_id: usize,
    out_path: &Path,
    use_logits: bool,
) -> Result<usize> {
    let sel: Vec<&PredictionRecord> = records.iter().filter(|r| r.question_type == type_id).collect();
    if sel.is_empty() {
        return Err(Error::Usage(format!("no records for question type {type_id}")));
    }
    let vectors: Vec<&[f64]> = sel
        .iter()
        .map(|r| match (&r.logits, use_logits) {
            (Some(z), true) => Ok(z.as_slice()),
            (None, true) => Err(Error::Usage(format!("record {} has no logits", r.id))),
            (_, false) => Ok(r.probs.as_slice()),
        })
        .collect::<Result<_>>()?;
    let proj = pca_2d(&vectors);
    let width = vectors[0].len();
    let prefix = if use_logits { "z" } else { "p" };
    let mut s = String::from("id,label");
    for k in 0..width {
        write!(s, ",{prefix}{k}").unwrap();
    }
    s.push_str(",pc1,pc2\n");
    for ((r, v), xy) in sel.iter().zip(&vectors).zip(&proj) {
        write!(s, "{},{}", r.id, r.answer).unwrap();
        for x in v.iter() {
            write!(s, ",{x}").unwrap();
        }
        writeln!(s, ",{},{}", xy[0], xy[1]).unwrap();
    }
    let mut f = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(out_path, e))?;
    Ok(sel.len())
}

/// CSV with one row per (series, answer). Each series is labelled, so
/// several prediction distributions can share a file.
pub fn distributions_csv(series: &[(&str, &AnswerDistribution)], answers: &Vocab) -> String {
    let mut s = String::from("question_type,series,answer,name,frequency\n");
    for (label, d) in series {
        for (&a, &f) in &d.freqs {
            let name = if a < answers.len() { answers.name(a) } else { "" };
            writeln!(s, "{},{},{},{},{}", d.question_type, csv_field(label), a, csv_field(name), f).unwrap();
        }
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 4] = ["#4477aa", "#ee6677", "#228833", "#ccbb44"];

/// Grouped bar chart of several distributions over the union of their answers.
pub fn distributions_svg(title: &str, dists: &[(&str, &AnswerDistribution)], answers: &Vocab) -> String {
    let support: BTreeSet<usize> = dists.iter().flat_map(|(_, d)| d.freqs.keys().copied()).collect();
    let (bar, gap, left, top, plot_h) = (14.0, 12.0, 50.0, 40.0, 200.0);
    let group = bar * dists.len() as f64 + gap;
    let width = left + group * support.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 90.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{left}" y="16" font-size="13">{}</text>"#, xml_escape(title)).unwrap();
    let base = top + plot_h;
    writeln!(s, r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, width - 10.0).unwrap();
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = base - tick * plot_h;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.0}%</text>"#, left - 4.0, y + 3.0, tick * 100.0).unwrap();
    }
    for (g, &a) in support.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group;
        for (k, (_, d)) in dists.iter().enumerate() {
            let h = d.get(a) * plot_h;
            writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{:.1}" fill="{}"/>"#,
                x0 + k as f64 * bar,
                base - h,
                h,
                PALETTE[k % PALETTE.len()]
            )
            .unwrap();
        }
        let name = if a < answers.len() { answers.name(a).to_string() } else { a.to_string() };
        let cx = x0 + bar * dists.len() as f64 / 2.0;
        writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" transform="rotate(45 {cx:.1} {:.1})">{}</text>"#,
            base + 12.0,
            base + 12.0,
            xml_escape(&name)
        )
        .unwrap();
    }
    for (k, (label, _)) in dists.iter().enumerate() {
        let x = left + k as f64 * 110.0;
        let y = height - 12.0;
        writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[k % PALETTE.len()]).unwrap();
        writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, xml_escape(label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
