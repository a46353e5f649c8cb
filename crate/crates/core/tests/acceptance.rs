//! Acceptance run: nine criteria, one PASS/FAIL line each, nonzero exit if
//! any fails.
//!
//! The trend criteria share one set of trained runs: thirteen
//! configurations times five seeds on the default benchmark with the default
//! schedule. Seed `s` generates the data and seeds the training run.
//! Everything runs sequentially on one core.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use dislab::counterparts::{build_sss_index, enumerate_sss};
use dislab::data::{generate_synthetic, Dataset, GenConfig, Instance};
use dislab::losses::{
    combine, dis_loss_modulated, dis_loss_simplified, dis_loss_symmetric, vqa_loss, DisVariant, LossConfig,
};
use dislab::metrics::{class_distance_summary, class_distances, divergence_summary, PredictionRecord};
use dislab::model::{Model, ModelConfig};
use dislab::train::{model_shape, train_new, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;
/// Wall-clock budget for the baseline-vs-distinguishing experiment.
const BUDGET_SECS: f64 = 15.0 * 60.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---- criterion 1 -------------------------------------------------------

fn gradients() -> Verdict {
    let started = Instant::now();
    let tally = common::gradcheck::run(20);
    let secs = started.elapsed().as_secs_f64();
    let pass = tally.failures.is_empty() && tally.cases >= 100 && secs < 60.0;
    let mut detail = format!(
        "{} cases, worst relative error {:.2e} (< {:.0e}), {secs:.1}s",
        tally.cases,
        tally.worst,
        common::gradcheck::TOL
    );
    for f in tally.failures.iter().take(3) {
        detail.push_str(&format!("; {f}"));
    }
    verdict(pass, detail)
}

// ---- criterion 2 -------------------------------------------------------

fn random_split(rng: &mut ChaCha8Rng, n: usize) -> Vec<Instance> {
    let (types, answers) = (rng.random_range(1..8), rng.random_range(1..10));
    (0..n)
        .map(|k| {
            let t = rng.random_range(0..types);
            let mut scores = vec![(rng.random_range(0..answers), 1.0)];
            let extra = rng.random_range(0..answers);
            if extra != scores[0].0 && rng.random_bool(0.3) {
                scores.push((extra, 0.6));
            }
            Instance::new(k as u64, rng.random_range(0..n as u64), vec![0.0], vec![0], t, scores).unwrap()
        })
        .collect()
}

fn index_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut anchors, mut mismatches) = (0, Vec::new());
    for case in 0..20 {
        let n = rng.random_range(1..=500);
        let split = random_split(&mut rng, n);
        let index = build_sss_index(&split);
        for (i, inst) in split.iter().enumerate() {
            let mut got = index.real_counterparts(inst.question_type, inst.answer);
            let brute = enumerate_sss(i, &split);
            let mut want = brute.real.clone();
            got.sort_unstable();
            want.sort_unstable();
            if got != want || brute.synthetic_images.len() != n - 1 {
                mismatches.push(format!("case {case} anchor {i}"));
            }
            anchors += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        mismatches.is_empty() && secs < 30.0,
        format!("20 splits, {anchors} anchors, {} mismatches, {secs:.1}s", mismatches.len()),
    )
}

// ---- criterion 3 -------------------------------------------------------

fn loss_fixtures() -> Verdict {
    let f = common::fixture::load();
    let e = &f.expected;
    let (i, j) = (&f.instances[0], &f.instances[1]);
    let (m, n) = (i.answer, j.answer);
    let s01 = &f.synthetic_probs["image_1_question_0"];
    let s10 = &f.synthetic_probs["image_0_question_1"];
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let vqa = vqa_loss(&[&i.probs, &j.probs], &[&i.scores, &j.scores]).unwrap();
    checks.push(("answer loss", vqa, e.answer_loss));
    checks.push(("symmetric", dis_loss_symmetric(&i.probs, &j.probs, m, Some(n)).unwrap(), e.symmetric_0_1));
    checks.push(("simplified", dis_loss_simplified(&i.probs, &j.probs, m).unwrap(), e.simplified_0_1));
    checks.push(("modulated", dis_loss_modulated(&i.probs, &j.probs, m).unwrap(), e.modulated_0_1));
    let batch = |f: fn(&[f64], &[f64], usize) -> dislab::Result<f64>| {
        (f(&i.probs, &j.probs, m).unwrap()
            + f(&i.probs, s01, m).unwrap()
            + f(&j.probs, &i.probs, n).unwrap()
            + f(&j.probs, s10, n).unwrap())
            / 2.0
    };
    let (bm, bs) = (batch(dis_loss_modulated), batch(dis_loss_simplified));
    checks.push(("batch modulated", bm, e.batch_distinguishing_modulated));
    checks.push(("batch simplified", bs, e.batch_distinguishing_simplified));
    let cfg = LossConfig::default();
    checks.push(("total modulated", combine(&cfg, vqa, bm), e.batch_total_modulated));
    checks.push(("total simplified", combine(&cfg, vqa, bs), e.batch_total_simplified));
    let ln2 = std::f64::consts::LN_2;
    checks.push(("equal probs, simplified", dis_loss_simplified(&[0.4], &[0.4], 0).unwrap(), ln2));
    checks.push((
        "equal probs, symmetric",
        dis_loss_symmetric(&[0.3, 0.6], &[0.3, 0.6], 0, Some(1)).unwrap(),
        2.0 * ln2,
    ));
    checks.push(("zero factor", dis_loss_modulated(&[0.2, 0.7], &[0.0, 0.9], 0).unwrap(), 0.0));

    // Full-sum identity on a 48-instance split.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let probs: Vec<Vec<f64>> = (0..48).map(|_| (0..5).map(|_| rng.random_range(0.01..0.99)).collect()).collect();
    let labels: Vec<(usize, usize)> = (0..48).map(|_| (rng.random_range(0..3), rng.random_range(0..5))).collect();
    let (mut sym, mut simp) = (0.0, 0.0);
    for a in 0..48 {
        for b in 0..48 {
            let ((ta, ma), (tb, mb)) = (labels[a], labels[b]);
            if a != b && ta == tb && ma != mb {
                sym += dis_loss_symmetric(&probs[a], &probs[b], ma, Some(mb)).unwrap();
                simp += dis_loss_simplified(&probs[a], &probs[b], ma).unwrap();
            }
        }
    }
    checks.push(("full-sum symmetric / 2", sym / 2.0, simp));

    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= 1e-9))
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    verdict(
        bad.is_empty(),
        format!("{} values at 1e-9{}", checks.len(), bad.iter().map(|b| format!("; {b}")).collect::<String>()),
    )
}

// ---- shared trained runs -----------------------------------------------

#[derive(Clone, Copy)]
struct Run {
    train: f64,
    test: f64,
    js: f64,
    ratio: f64,
    secs: f64,
}

struct Variant {
    name: &'static str,
    loss: LossConfig,
}

fn variants() -> Vec<Variant> {
    let base = LossConfig::default();
    let with = |name, f: &dyn Fn(&mut LossConfig)| {
        let mut loss = base.clone();
        f(&mut loss);
        Variant { name, loss }
    };
    vec![
        with("baseline", &|l| l.lambda_dis = 0.0),
        with("dm", &|_| {}),
        with("no-factor", &|l| l.variant = DisVariant::Simplified),
        with("synthetic-only", &|l| l.n_real = 0),
        with("real-only", &|l| l.n_synthetic = 0),
        with("n1=1,n2=2", &|l| l.n_synthetic = 2),
        with("n1=2,n2=1", &|l| l.n_real = 2),
        with("n1=1,n2=3", &|l| l.n_synthetic = 3),
        with("n1=3,n2=1", &|l| l.n_real = 3),
        with("ratio=1", &|l| l.lambda_dis = l.lambda_vqa),
        with("ratio=4", &|l| l.lambda_dis = 4.0 * l.lambda_vqa),
        with("ratio=24", &|l| l.lambda_dis = 24.0 * l.lambda_vqa),
        with("ratio=48", &|l| l.lambda_dis = 48.0 * l.lambda_vqa),
    ]
}

struct Runs {
    by_variant: BTreeMap<&'static str, Vec<Run>>,
    /// Test-split predictions of the first seed, for the distance oracle.
    dm_records: Vec<PredictionRecord>,
    gen: GenConfig,
    /// Generating all seeds' datasets.
    gen_secs: f64,
}

impl Runs {
    fn mean(&self, name: &str, f: impl Fn(&Run) -> f64) -> f64 {
        let runs = &self.by_variant[name];
        runs.iter().map(f).sum::<f64>() / runs.len() as f64
    }

    fn secs(&self, name: &str) -> f64 {
        self.by_variant[name].iter().map(|r| r.secs).sum()
    }
}

fn train_all() -> Runs {
    let gen = GenConfig::default();
    let model = ModelConfig::default();
    let started = Instant::now();
    let datasets: Vec<Dataset> = (0..SEEDS).map(|s| generate_synthetic(&gen, s).unwrap()).collect();
    let gen_secs = started.elapsed().as_secs_f64();
    let mut by_variant = BTreeMap::new();
    let mut dm_records = Vec::new();
    for v in variants() {
        let mut runs = Vec::new();
        for (seed, ds) in (0..SEEDS).zip(&datasets) {
            let config = TrainConfig {
                seed,
                loss: v.loss.clone(),
                ..TrainConfig::default()
            };
            let started = Instant::now();
            let (_, outcome) = train_new(ds, &model, &config).unwrap();
            let secs = started.elapsed().as_secs_f64();
            let recs = &outcome.test_records;
            let run = Run {
                train: outcome.record.final_train.overall,
                test: outcome.record.final_test.overall,
                js: divergence_summary(recs, &ds.train, &ds.test, gen.num_types).mean_to_test_gt.unwrap(),
                ratio: class_distance_summary(recs, gen.num_types).mean_ratio.unwrap(),
                secs,
            };
            eprintln!(
                "  {:<15} seed {seed}: train {:6.2} test {:6.2} js {:.3} ratio {:.3} ({secs:.1}s)",
                v.name, run.train, run.test, run.js, run.ratio
            );
            if v.name == "dm" && seed == 0 {
                dm_records = outcome.test_records;
            }
            runs.push(run);
        }
        by_variant.insert(v.name, runs);
    }
    Runs {
        by_variant,
        dm_records,
        gen,
        gen_secs,
    }
}

// ---- criteria 4 to 8 ---------------------------------------------------

fn debiasing(r: &Runs) -> Verdict {
    let (bt, dt) = (r.mean("baseline", |x| x.test), r.mean("dm", |x| x.test));
    let (btr, dtr) = (r.mean("baseline", |x| x.train), r.mean("dm", |x| x.train));
    let secs = r.gen_secs + r.secs("baseline") + r.secs("dm");
    let gap = dt - bt;
    verdict(
        gap >= 10.0 && btr >= dtr && secs <= BUDGET_SECS,
        format!(
            "test: dm {dt:.2} vs baseline {bt:.2} (gap {gap:+.2}, need >= 10); \
             train: baseline {btr:.2} vs dm {dtr:.2} (need baseline >= dm); {secs:.0}s of {BUDGET_SECS:.0}s"
        ),
    )
}

fn ablation(r: &Runs) -> Verdict {
    let t = |n| r.mean(n, |x| x.test);
    let (full, nof, base, syn, real) = (t("dm"), t("no-factor"), t("baseline"), t("synthetic-only"), t("real-only"));
    verdict(
        full >= nof && nof >= base && syn > real,
        format!(
            "dm {full:.2} >= no-factor {nof:.2} >= baseline {base:.2}: {}; synthetic-only {syn:.2} > real-only {real:.2}: {}",
            full >= nof && nof >= base,
            syn > real
        ),
    )
}

fn stability(r: &Runs) -> Verdict {
    let names = ["dm", "n1=1,n2=2", "n1=2,n2=1", "n1=1,n2=3", "n1=3,n2=1"];
    let tests: Vec<f64> = names.iter().map(|n| r.mean(n, |x| x.test)).collect();
    let lo = tests.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tests.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let listing: Vec<String> = names.iter().zip(&tests).map(|(n, t)| format!("{n} {t:.2}")).collect();
    verdict(
        hi - lo <= 2.0,
        format!("range {:.2} (need <= 2): {}", hi - lo, listing.join(", ")),
    )
}

fn lambda_sweep(r: &Runs) -> Verdict {
    let points = [
        (0, "baseline"),
        (1, "ratio=1"),
        (4, "ratio=4"),
        (12, "dm"),
        (24, "ratio=24"),
        (48, "ratio=48"),
    ];
    let train: Vec<f64> = points.iter().map(|(_, n)| r.mean(n, |x| x.train)).collect();
    let test: Vec<f64> = points.iter().map(|(_, n)| r.mean(n, |x| x.test)).collect();
    let monotone = train.windows(2).all(|w| w[1] <= w[0] + 0.5);
    let peak = (0..test.len()).max_by(|&a, &b| test[a].total_cmp(&test[b])).unwrap();
    let interior = peak > 0 && peak < test.len() - 1 && test[peak] > test[0] && test[peak] > test[test.len() - 1];
    let fmt = |v: &[f64]| {
        points
            .iter()
            .zip(v)
            .map(|((k, _), x)| format!("{k}:{x:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        monotone && interior,
        format!(
            "train non-increasing (0.5 slack): {monotone} [{}]; test peak at ratio {} interior: {interior} [{}]",
            fmt(&train),
            points[peak].0,
            fmt(&test)
        ),
    )
}

/// Mean distances over ordered pairs, straight from the definition.
fn distances_oracle(vectors: &[&[f64]], labels: &[usize]) -> (BTreeMap<usize, f64>, Option<f64>) {
    let mut intra: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let (mut inter, mut k) = (0.0, 0);
    for i in 0..vectors.len() {
        for j in 0..vectors.len() {
            if i == j {
                continue;
            }
            let d = vectors[i].iter().zip(vectors[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if labels[i] == labels[j] {
                let e = intra.entry(labels[i]).or_default();
                e.0 += d;
                e.1 += 1;
            } else {
                inter += d;
                k += 1;
            }
        }
    }
    (
        intra.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect(),
        (k > 0).then(|| inter / k as f64),
    )
}

fn diagnostics(r: &Runs) -> Verdict {
    let (bj, dj) = (r.mean("baseline", |x| x.js), r.mean("dm", |x| x.js));
    let (br, dr) = (r.mean("baseline", |x| x.ratio), r.mean("dm", |x| x.ratio));
    let mut worst: f64 = 0.0;
    let mut structure_ok = true;
    for t in 0..r.gen.num_types {
        let sel: Vec<&PredictionRecord> = r.dm_records.iter().filter(|x| x.question_type == t).collect();
        let vectors: Vec<&[f64]> = sel.iter().map(|x| x.probs.as_slice()).collect();
        let labels: Vec<usize> = sel.iter().map(|x| x.answer).collect();
        let got = class_distances(&r.dm_records, t);
        let (intra, inter) = distances_oracle(&vectors, &labels);
        structure_ok &= got.intra.keys().eq(intra.keys()) && got.inter.is_some() == inter.is_some();
        for (l, v) in &intra {
            worst = worst.max(got.intra.get(l).map_or(f64::INFINITY, |g| (g - v).abs()));
        }
        if let (Some(a), Some(b)) = (got.inter, inter) {
            worst = worst.max((a - b).abs());
        }
    }
    let oracle_ok = structure_ok && worst <= 1e-12;
    verdict(
        dj < bj && dr > br && oracle_ok,
        format!(
            "JS to test answers: dm {dj:.4} < baseline {bj:.4}: {}; inter/intra: dm {dr:.4} > baseline {br:.4}: {}; \
             distance oracle max deviation {worst:.1e}",
            dj < bj,
            dr > br
        ),
    )
}

// ---- criterion 9 -------------------------------------------------------

fn determinism() -> Verdict {
    let gen = GenConfig {
        train_size: 1000,
        test_size: 300,
        ..GenConfig::default()
    };
    let ds = generate_synthetic(&gen, 9).unwrap();
    let config = TrainConfig {
        epochs: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mc = ModelConfig::default();
    let (m1, a) = train_new(&ds, &mc, &config).unwrap();
    let (m2, b) = train_new(&ds, &mc, &config).unwrap();
    let same_record = serde_json::to_string(&a.record.without_timing()).unwrap()
        == serde_json::to_string(&b.record.without_timing()).unwrap();
    let same_params = m1.params() == m2.params();

    let base = TrainConfig {
        loss: LossConfig {
            lambda_dis: 0.0,
            ..LossConfig::default()
        },
        ..config
    };
    let mut reference = Model::new(mc.clone(), model_shape(&ds), base.seed).unwrap();
    let ref_losses = common::reference::answer_only_trainer(&ds, &mut reference, &base);
    let (trained, outcome) = train_new(&ds, &mc, &base).unwrap();
    let step_match = outcome.steps.len() == ref_losses.len()
        && outcome.steps.iter().zip(&ref_losses).all(|(s, r)| s.vqa.to_bits() == r.to_bits());
    let params_match = trained.params() == reference.params();
    verdict(
        same_record && same_params && step_match && params_match,
        format!(
            "repeat run: record identical {same_record}, weights identical {same_params}; \
             zero weight vs answer-only trainer over {} steps: losses identical {step_match}, weights identical {params_match}",
            ref_losses.len()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(&str, Verdict)> = vec![
        ("1 gradient correctness", gradients()),
        ("2 counterpart index oracle", index_oracle()),
        ("3 loss fixtures", loss_fixtures()),
    ];
    eprintln!("training {} configurations x {SEEDS} seeds", variants().len());
    let runs = train_all();
    results.push(("4 debiasing trend", debiasing(&runs)));
    results.push(("5 ablation trends", ablation(&runs)));
    results.push(("6 counterpart-count stability", stability(&runs)));
    results.push(("7 weight-ratio sweep shape", lambda_sweep(&runs)));
    results.push(("8 diagnostics trends", diagnostics(&runs)));
    results.push(("9 determinism and recovery", determinism()));

    println!();
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!(
        "{} of {} criteria passed ({:.0}s)",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
