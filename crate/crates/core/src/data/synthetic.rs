//! Synthetic changed-prior benchmark.
//!
//! Each image carries one latent value for every attribute (one attribute per
//! question type). A question of type `t` asks for attribute `t`, so it can
//! only be answered by combining the type (from the question) with the value
//! (from the image). Image features are the one-hot codes of all attribute
//! values plus Gaussian noise, padded with high-variance distractor
//! dimensions and rotated by a fixed random orthogonal matrix. The rotation
//! hides the codes among the distractors, so reading the image is slow to
//! learn while the type prior is learned almost at once.
//!
//! The asked attribute's value is drawn from a per-type marginal that is
//! skewed towards a "head" value on the train split and inverted (or made
//! uniform) on the test split. The remaining attributes are uniform on both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetSource, Instance};
use super::qtypes::QuestionTypeTable;
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TestPrior {
    /// Head answer gets the mass `(1 - bias) / (k - 1)` of a single tail answer on train.
    #[default]
    Inverted,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_types: usize,
    pub answers_per_type: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Train-split probability of each type's head answer.
    pub bias: f64,
    /// Standard deviation of the Gaussian noise added to image features.
    pub noise: f64,
    pub test_prior: TestPrior,
    /// Size of the pool of subject words appended to each question.
    pub subjects: usize,
    /// Train-split probability that the subject word is the answer's cue word.
    /// Test questions always draw the subject uniformly.
    pub cue_strength: f64,
    /// Probability that an attribute other than the asked one is shown in
    /// the image; an absent attribute has an all-zero code.
    pub presence: f64,
    /// Each image's codes are scaled by a clarity drawn uniformly from
    /// `[min_clarity, 1]`.
    pub min_clarity: f64,
    /// Extra feature dimensions carrying only Gaussian noise of standard
    /// deviation `distractor_scale`.
    pub distractors: usize,
    pub distractor_scale: f64,
    /// Rotate every feature vector by one fixed random orthogonal matrix, so
    /// codes and distractors share all dimensions.
    pub mix: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_types: 6,
            answers_per_type: 4,
            train_size: 10_000,
            test_size: 4_000,
            bias: 0.8,
            noise: 0.3,
            test_prior: TestPrior::Inverted,
            subjects: 8,
            cue_strength: 0.0,
            presence: 1.0,
            min_clarity: 1.0,
            distractors: 72,
            distractor_scale: 2.5,
            mix: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.answers_per_type < 2 {
            return Err(Error::Config(format!(
                "answers_per_type must be at least 2, got {}",
                self.answers_per_type
            )));
        }
        if self.num_types == 0 {
            return Err(Error::Config("num_types must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::Config(format!("bias must lie in [0, 1], got {}", self.bias)));
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            return Err(Error::Config(format!(
                "cue_strength must lie in [0, 1], got {}",
                self.cue_strength
            )));
        }
        for (name, v) in [("presence", self.presence), ("min_clarity", self.min_clarity)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if !(self.distractor_scale >= 0.0 && self.distractor_scale.is_finite()) {
            return Err(Error::Config(format!(
                "distractor_scale must be finite and >= 0, got {}",
                self.distractor_scale
            )));
        }
        if self.subjects == 0 {
            return Err(Error::Config("subjects must be positive".into()));
        }
        Ok(())
    }

    /// Parses generator settings from TOML; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: GenConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn feature_dim(&self) -> usize {
        self.num_types * self.answers_per_type + self.distractors
    }

    /// Head value index of type `t`.
    pub fn head(&self, t: usize) -> usize {
        t % self.answers_per_type
    }

    /// Answer index of value `c` of type `t`.
    pub fn answer_index(&self, t: usize, c: usize) -> usize {
        t * self.answers_per_type + c
    }

    /// Marginal over the `k` values of an asked attribute on the given split.
    pub fn marginal(&self, train: bool, t: usize) -> Vec<f64> {
        let k = self.answers_per_type;
        let head = self.head(t);
        let head_mass = if train {
            self.bias
        } else {
            match self.test_prior {
                TestPrior::Inverted => (1.0 - self.bias) / (k - 1) as f64,
                TestPrior::Uniform => 1.0 / k as f64,
            }
        };
        let tail = (1.0 - head_mass) / (k - 1) as f64;
        (0..k).map(|c| if c == head { head_mass } else { tail }).collect()
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn subject_word(s: usize) -> String {
    format!("obj{s}")
}

/// Generates a dataset. `latent` holds every attribute's value, with `k`
/// marking an attribute absent from the image. The same `(config, seed)`
/// always yields the same data.
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (t_count, k) = (config.num_types, config.answers_per_type);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut tokens = Vocab::new();
    let what = tokens.intern("what");
    let of = tokens.intern("of");
    let attr_tokens: Vec<usize> = (0..t_count).map(|t| tokens.intern(&format!("attr{t}"))).collect();
    let subject_tokens: Vec<usize> = (0..config.subjects)
        .map(|s| tokens.intern(&subject_word(s)))
        .collect();

    let mut answers = Vocab::new();
    for t in 0..t_count {
        for c in 0..k {
            answers.intern(&format!("attr{t}_v{c}"));
        }
    }
    let types = QuestionTypeTable::new((0..t_count).map(|t| format!("what attr{t}")));

    // Drawn from its own generator so toggling `mix` leaves the samples alone.
    let rotation = config.mix.then(|| {
        let d = config.feature_dim();
        let mut mrng = ChaCha8Rng::seed_from_u64(seed);
        mrng.set_stream(7);
        let m = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut mrng));
        m.qr().q()
    });

    let mut make_split = |train: bool, size: usize, first_id: u64| -> Result<Vec<Instance>> {
        let marginals: Vec<Vec<f64>> = (0..t_count).map(|t| config.marginal(train, t)).collect();
        let uniform = vec![1.0 / k as f64; k];
        let mut out = Vec::with_capacity(size);
        for n in 0..size {
            let id = first_id + n as u64;
            let t = rng.random_range(0..t_count);
            let mut values: Vec<usize> = (0..t_count)
                .map(|a| {
                    let probs = if a == t { &marginals[t] } else { &uniform };
                    sample_categorical(&mut rng, probs)
                })
                .collect();
            let clarity = if config.min_clarity < 1.0 {
                rng.random_range(config.min_clarity..=1.0)
            } else {
                1.0
            };
            let mut features = vec![0.0; config.feature_dim()];
            for (a, v) in values.iter_mut().enumerate() {
                if a == t || config.presence >= 1.0 || rng.random::<f64>() < config.presence {
                    features[a * k + *v] = clarity;
                } else {
                    *v = k;
                }
            }
            let codes = t_count * k;
            for (i, f) in features.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *f += if i < codes { config.noise } else { config.distractor_scale } * z;
            }
            if let Some(q) = &rotation {
                features = (q * nalgebra::DVector::from_vec(features)).data.into();
            }
            let concept = values[t];
            let cued = train && rng.random::<f64>() < config.cue_strength;
            let subject = if cued {
                (t * k + concept) % config.subjects
            } else {
                rng.random_range(0..config.subjects)
            };
            let question = vec![what, attr_tokens[t], of, subject_tokens[subject]];
            let answer = config.answer_index(t, concept);
            let mut inst = Instance::new(id, id, features, question, t, vec![(answer, 1.0)])?;
            inst.latent = Some(values);
            out.push(inst);
        }
        Ok(out)
    };

    let train = make_split(true, config.train_size, 0)?;
    let test = make_split(false, config.test_size, config.train_size as u64)?;
    let ds = Dataset {
        answers,
        tokens,
        types,
        feature_dim: config.feature_dim(),
        train,
        test,
        source: DatasetSource::Synthetic {
            config: config.clone(),
            seed,
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::qtypes::question_type;

    fn small(bias: f64, k: usize) -> GenConfig {
        GenConfig {
            answers_per_type: k,
            bias,
            train_size: 300,
            test_size: 100,
            ..GenConfig::default()
        }
    }

    #[test]
    fn mixing_is_a_rotation_of_the_unmixed_features() {
        let mixed = GenConfig { train_size: 50, test_size: 20, ..GenConfig::default() };
        let plain = GenConfig { mix: false, ..mixed.clone() };
        let (a, b) = (generate_synthetic(&mixed, 3).unwrap(), generate_synthetic(&plain, 3).unwrap());
        assert_eq!(a.feature_dim, 96);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.latent, y.latent);
            let n = |v: &[f64]| v.iter().map(|f| f * f).sum::<f64>().sqrt();
            assert!((n(&x.features) - n(&y.features)).abs() < 1e-9);
            assert_ne!(x.features, y.features);
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(generate_synthetic(&small(0.8, 1), 1).is_err());
        assert!(generate_synthetic(&small(1.5, 4), 1).is_err());
        assert!(generate_synthetic(&small(-0.1, 4), 1).is_err());
    }

    #[test]
    fn marginals_sum_to_one() {
        let c = GenConfig::default();
        for train in [true, false] {
            for t in 0..c.num_types {
                let s: f64 = c.marginal(train, t).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_skew_when_bias_is_half_with_two_answers() {
        let c = small(0.5, 2);
        assert_eq!(c.marginal(true, 0), vec![0.5, 0.5]);
        assert_eq!(c.marginal(false, 0), vec![0.5, 0.5]);
    }

    #[test]
    fn question_types_are_exact() {
        let ds = generate_synthetic(&small(0.8, 4), 3).unwrap();
        for inst in ds.train.iter().chain(&ds.test) {
            let words: Vec<&str> = inst.tokens.iter().map(|&t| ds.tokens.name(t)).collect();
            assert_eq!(question_type(&words, &ds.types), inst.question_type);
            let t = inst.question_type;
            assert!(inst.answer / 4 == t, "answer outside the type's answer subset");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small(0.8, 4), 11).unwrap();
        let b = generate_synthetic(&small(0.8, 4), 11).unwrap();
        let c = generate_synthetic(&small(0.8, 4), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
