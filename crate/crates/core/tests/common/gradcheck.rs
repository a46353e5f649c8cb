//! Finite-difference gradient suite shared by the gradient tests and the
//! acceptance run.
//!
//! Every tape op gets a handful of randomized cases; the last group runs the
//! full training objective on tiny models. Each case reduces the op output
//! to a scalar through a fixed random weighting so every output entry
//! contributes to the gradient.

use dislab::counterparts::{sample_counterparts, CounterpartBatchPlan};
use dislab::data::{generate_synthetic, GenConfig, Instance};
use dislab::diff::{finite_diff_gradient, max_gradient_error, softplus, ParamStore, Tape, Tensor, Var};
use dislab::losses::{total_loss, vqa_loss, DisNormalization, DisVariant, FactorPolicy, LossConfig};
use dislab::model::{Activation, Fusion, Model, ModelConfig};
use dislab::train::model_shape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Below this magnitude gradients are compared absolutely; finite-difference
/// round-off alone is around 1e-11 here.
pub const FLOOR: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[0.1, 1.5]`, away from the kink of relu.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.1, 1.5);
    for x in t.data_mut() {
        if rng.random_bool(0.5) {
            *x = -*x;
        }
    }
    t
}

type Build = dyn Fn(&mut Tape, &[Var]) -> dislab::Result<Var>;

/// Checks `sum(w ⊙ build(params))` and returns the worst relative error.
fn check(inputs: Vec<Tensor>, rng: &mut ChaCha8Rng, build: &Build) -> f64 {
    let mut store = ParamStore::new();
    for (i, t) in inputs.into_iter().enumerate() {
        store.add(format!("x{i}"), t).unwrap();
    }
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..store.len()).map(|i| tape.param(&store, dislab::diff::ParamId(i))).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let weights = rand_tensor(rng, &probe, -1.0, 1.0);
    let scalar = |store: &ParamStore| -> dislab::Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..store.len()).map(|i| tape.param(store, dislab::diff::ParamId(i))).collect();
        let out = build(&mut tape, &vars)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w)?;
        let root = tape.sum(prod);
        Ok((tape, root))
    };
    let (tape, root) = scalar(&store).unwrap();
    store.zero_grad();
    tape.backward(root, &mut store).unwrap();
    let numeric = finite_diff_gradient(
        |s| {
            let (t, r) = scalar(s)?;
            Ok(t.value(r).item())
        },
        &mut store,
        EPS,
    )
    .unwrap();
    max_gradient_error(&store, &numeric, FLOOR)
}

#[derive(Default)]
pub struct Tally {
    pub cases: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl Tally {
    fn record(&mut self, what: &str, err: f64) {
        if !(err < TOL) {
            self.failures.push(format!("{what}: relative gradient error {err:.3e}"));
        }
        self.cases += 1;
        self.worst = self.worst.max(err);
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

fn op_cases(rng: &mut ChaCha8Rng, tally: &mut Tally) {
    for _ in 0..8 {
        let (r, k) = dims(rng);
        let c = rng.random_range(1..5);
        let a = rand_tensor(rng, &[r, k], -2.0, 2.0);
        let b = rand_tensor(rng, &[k, c], -2.0, 2.0);
        tally.record("matmul", check(vec![a, b], rng, &|t, v| t.matmul(v[0], v[1])));
    }
    type Binary = fn(&mut Tape, Var, Var) -> dislab::Result<Var>;
    let binaries: [(&str, Binary); 3] = [("add", Tape::add), ("sub", Tape::sub), ("mul", Tape::mul)];
    for (name, f) in binaries {
        for _ in 0..6 {
            let (r, c) = dims(rng);
            let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
            let b = rand_tensor(rng, &[r, c], -2.0, 2.0);
            tally.record(name, check(vec![a, b], rng, &move |t, v| f(t, v[0], v[1])));
        }
    }
    for _ in 0..6 {
        let (r, c) = dims(rng);
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        let b = rand_tensor(rng, &[c], -2.0, 2.0);
        tally.record("add_row", check(vec![a, b], rng, &|t, v| t.add_row(v[0], v[1])));
    }
    for _ in 0..6 {
        let (r, c) = dims(rng);
        let f = rng.random_range(-3.0..3.0);
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        tally.record("scale", check(vec![a], rng, &move |t, v| Ok(t.scale(v[0], f))));
    }
    for _ in 0..4 {
        let (r, c) = dims(rng);
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        tally.record("neg", check(vec![a], rng, &|t, v| Ok(t.neg(v[0]))));
    }
    type Unary = fn(&mut Tape, Var) -> Var;
    let unaries: [(&str, Unary, f64); 3] = [
        ("sigmoid", Tape::sigmoid, 6.0),
        ("log_sigmoid", Tape::log_sigmoid, 8.0),
        ("tanh", Tape::tanh, 3.0),
    ];
    for (name, f, range) in unaries {
        for _ in 0..6 {
            let (r, c) = dims(rng);
            let a = rand_tensor(rng, &[r, c], -range, range);
            tally.record(name, check(vec![a], rng, &move |t, v| Ok(f(t, v[0]))));
        }
    }
    for _ in 0..6 {
        let (r, c) = dims(rng);
        let a = away_from_zero(rng, &[r, c]);
        tally.record("relu", check(vec![a], rng, &|t, v| Ok(t.relu(v[0]))));
    }
    for _ in 0..4 {
        let (r, c) = dims(rng);
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        tally.record("sum", check(vec![a], rng, &|t, v| Ok(t.sum(v[0]))));
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        tally.record("mean", check(vec![a], rng, &|t, v| Ok(t.mean(v[0]))));
    }
    for _ in 0..6 {
        let vocab = rng.random_range(2..7);
        let d = rng.random_range(1..5);
        let table = rand_tensor(rng, &[vocab, d], -1.0, 1.0);
        let bags: Vec<Vec<usize>> = (0..rng.random_range(1..5))
            .map(|_| (0..rng.random_range(1..5)).map(|_| rng.random_range(0..vocab)).collect())
            .collect();
        tally.record("embed_mean", check(vec![table], rng, &move |t, v| t.embed_mean(v[0], bags.clone())));
    }
    for _ in 0..6 {
        let (r, ca) = dims(rng);
        let cb = rng.random_range(1..5);
        let a = rand_tensor(rng, &[r, ca], -2.0, 2.0);
        let b = rand_tensor(rng, &[r, cb], -2.0, 2.0);
        tally.record("concat", check(vec![a, b], rng, &|t, v| t.concat(v[0], v[1])));
    }
    for _ in 0..6 {
        let (r, c) = dims(rng);
        let rows: Vec<usize> = (0..rng.random_range(1..7)).map(|_| rng.random_range(0..r)).collect();
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        tally.record("select_rows", check(vec![a], rng, &move |t, v| t.select_rows(v[0], rows.clone())));
    }
    for _ in 0..6 {
        let (r, c) = dims(rng);
        let at: Vec<(usize, usize)> = (0..rng.random_range(1..7))
            .map(|_| (rng.random_range(0..r), rng.random_range(0..c)))
            .collect();
        let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
        tally.record("gather", check(vec![a], rng, &move |t, v| t.gather(v[0], at.clone())));
    }
}

/// Three dense layers with mixed nonlinearities, ending in log-sigmoid.
fn network_cases(rng: &mut ChaCha8Rng, tally: &mut Tally) {
    for _ in 0..6 {
        let (n, d0) = (rng.random_range(1..5), rng.random_range(1..5));
        let (d1, d2) = (rng.random_range(1..5), rng.random_range(1..5));
        let inputs = vec![
            rand_tensor(rng, &[n, d0], -1.0, 1.0),
            rand_tensor(rng, &[d0, d1], -1.0, 1.0),
            rand_tensor(rng, &[d1], -0.5, 0.5),
            rand_tensor(rng, &[d1, d2], -1.0, 1.0),
            rand_tensor(rng, &[d2, 1], -1.0, 1.0),
        ];
        let err = check(inputs, rng, &|t, v| {
            let z = t.matmul(v[0], v[1])?;
            let z = t.add_row(z, v[2])?;
            let h = t.tanh(z);
            let z = t.matmul(h, v[3])?;
            let h = t.sigmoid(z);
            let z = t.matmul(h, v[4])?;
            Ok(t.log_sigmoid(z))
        });
        tally.record("network", err);
    }
}

fn tiny_dataset(seed: u64) -> dislab::data::Dataset {
    let gen = GenConfig {
        num_types: 2,
        answers_per_type: 3,
        train_size: 10,
        test_size: 2,
        subjects: 2,
        distractors: 2,
        ..GenConfig::default()
    };
    generate_synthetic(&gen, seed).unwrap()
}

/// The objective recomputed from `predict` and plain slices, independent of
/// the tape assembly in `total_loss`. Synthetic pairs are scored by running
/// the donor's image with the anchor's question from scratch. `frozen`
/// supplies modulating factors held constant (the detached policy).
fn reference_objective(
    m: &Model,
    batch: &[&Instance],
    plan: &CounterpartBatchPlan,
    loss: &LossConfig,
    frozen: Option<&[f64]>,
    factors: &mut Vec<f64>,
) -> f64 {
    let a = m.shape().num_answers;
    let probs = m.predict_batch(batch).unwrap();
    let targets: Vec<Vec<f64>> = batch.iter().map(|i| i.dense_scores(a)).collect();
    let p: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
    let t: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let vqa = vqa_loss(&p, &t).unwrap();
    let mut pairs: Vec<(f64, f64, bool)> = Vec::new();
    for (i, anchor) in plan.anchors.iter().enumerate() {
        let mi = batch[i].answer;
        for &j in &anchor.real {
            pairs.push((probs[i][mi], probs[j][mi], true));
            if loss.variant == DisVariant::Symmetric {
                let n = batch[j].answer;
                pairs.push((probs[j][n], probs[i][n], false));
            }
        }
        for &j in &anchor.synthetic {
            let q = m.predict(&batch[j].features, &batch[i].tokens).unwrap();
            pairs.push((probs[i][mi], q[mi], true));
        }
    }
    factors.clear();
    let mut dis = 0.0;
    for &(pa, pc, weighted) in &pairs {
        let w = if loss.variant == DisVariant::Modulated && weighted {
            factors.push(pc);
            frozen.map_or(pc, |f| f[factors.len() - 1])
        } else {
            1.0
        };
        dis += w * softplus(pc - pa);
    }
    let denom = match loss.normalization {
        DisNormalization::PerAnchor => batch.len(),
        // A two-sided term still counts once.
        DisNormalization::PerTerm => plan.real_terms() + plan.synthetic_terms(),
    };
    loss.lambda_vqa * vqa + loss.lambda_dis * dis / denom as f64
}

/// The whole objective, from parameters through both encoders, the head,
/// the re-paired synthetic head pass and every loss term.
fn full_loss_cases(rng: &mut ChaCha8Rng, tally: &mut Tally) {
    let variants = [DisVariant::Modulated, DisVariant::Simplified, DisVariant::Symmetric];
    let factors = [FactorPolicy::Detached, FactorPolicy::Differentiated];
    let norms = [DisNormalization::PerAnchor, DisNormalization::PerTerm];
    let mut case = 0u64;
    for variant in variants {
        for factor in factors {
            for normalization in norms {
                case += 1;
                let ds = tiny_dataset(case);
                let config = ModelConfig {
                    embed_dim: 3,
                    hidden: 4,
                    fusion: if case % 2 == 0 { Fusion::Concat } else { Fusion::Product },
                    activation: Activation::Tanh,
                };
                let model = Model::new(config, model_shape(&ds), case).unwrap();
                let loss = LossConfig {
                    variant,
                    factor,
                    normalization,
                    n_real: rng.random_range(1..3),
                    n_synthetic: rng.random_range(1..3),
                    ..LossConfig::default()
                };
                let batch: Vec<_> = ds.train.iter().take(6).collect();
                let plan = sample_counterparts(&batch, loss.n_real, loss.n_synthetic, rng);

                let mut analytic = model.clone();
                let mut tape = Tape::new();
                let out = analytic.forward_batch(&mut tape, &batch).unwrap();
                let l = total_loss(&mut tape, &analytic, &out, &batch, &plan, &loss).unwrap();
                let mut at_start = Vec::new();
                let reference = reference_objective(&model, &batch, &plan, &loss, None, &mut at_start);
                let value = tape.value(l.total).item();
                if (value - reference).abs() >= 1e-12 {
                    tally.failures.push(format!(
                        "{variant:?}/{factor:?}/{normalization:?} case {case}: objective {value} vs reference {reference}"
                    ));
                }
                analytic.params_mut().zero_grad();
                tape.backward(l.total, analytic.params_mut()).unwrap();

                let frozen = (factor == FactorPolicy::Detached).then_some(at_start.as_slice());
                let mut store = model.params().clone();
                let mut scratch = Vec::new();
                let numeric = finite_diff_gradient(
                    |s| {
                        let mut m = model.clone();
                        *m.params_mut() = s.clone();
                        Ok(reference_objective(&m, &batch, &plan, &loss, frozen, &mut scratch))
                    },
                    &mut store,
                    EPS,
                )
                .unwrap();
                let err = max_gradient_error(analytic.params(), &numeric, FLOOR);
                tally.record(&format!("total loss {variant:?}/{factor:?}/{normalization:?}"), err);
            }
        }
    }
}

/// Runs every group from one seed.
pub fn run(seed: u64) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    op_cases(&mut rng, &mut tally);
    network_cases(&mut rng, &mut tally);
    full_loss_cases(&mut rng, &mut tally);
    tally
}
