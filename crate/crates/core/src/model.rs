//! Two-stream answer classifier.
//!
//! The question stream averages token embeddings and applies one affine map
//! and a nonlinearity; the image stream applies an affine map and a
//! nonlinearity to the feature vector. The streams are fused (elementwise
//! product, or concatenation), passed through two hidden layers, and mapped
//! to one logit per answer. Probabilities are independent sigmoids.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Elementwise product of the projected streams.
    #[default]
    Product,
    /// Concatenation of the projected streams.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub fusion: Fusion,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden: 64,
            fusion: Fusion::Product,
            activation: Activation::Relu,
        }
    }
}

/// Sizes fixed by the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub num_answers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Ids {
    embed: ParamId,
    q_w: ParamId,
    q_b: ParamId,
    v_w: ParamId,
    v_b: ParamId,
    h1_w: ParamId,
    h1_b: ParamId,
    h2_w: ParamId,
    h2_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

const PARAM_NAMES: [&str; 11] = [
    "question.embed",
    "question.weight",
    "question.bias",
    "image.weight",
    "image.bias",
    "fusion1.weight",
    "fusion1.bias",
    "fusion2.weight",
    "fusion2.bias",
    "output.weight",
    "output.bias",
];

impl Ids {
    fn resolve(store: &ParamStore) -> Result<Self> {
        let get = |n: &str| {
            store
                .id_of(n)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {n:?}")))
        };
        Ok(Ids {
            embed: get(PARAM_NAMES[0])?,
            q_w: get(PARAM_NAMES[1])?,
            q_b: get(PARAM_NAMES[2])?,
            v_w: get(PARAM_NAMES[3])?,
            v_b: get(PARAM_NAMES[4])?,
            h1_w: get(PARAM_NAMES[5])?,
            h1_b: get(PARAM_NAMES[6])?,
            h2_w: get(PARAM_NAMES[7])?,
            h2_b: get(PARAM_NAMES[8])?,
            out_w: get(PARAM_NAMES[9])?,
            out_b: get(PARAM_NAMES[10])?,
        })
    }
}

/// Output of one batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    /// Encoded images `[B, d]`.
    pub image: Var,
    /// Encoded questions `[B, d]`.
    pub question: Var,
    /// Shared high-level features `[B, h]`.
    pub fused: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    shape: ModelShape,
    params: ParamStore,
    ids: Ids,
    encoded: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            shape: self.shape,
            params: self.params.clone(),
            ids: self.ids,
            encoded: AtomicU64::new(self.encoded.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.shape == other.shape && self.params == other.params
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform_init(rng, fan_in, fan_out, bound)
}

impl Model {
    pub fn new(config: ModelConfig, shape: ModelShape, seed: u64) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("embed_dim and hidden must be positive".into()));
        }
        if shape.vocab_size == 0 || shape.feature_dim == 0 || shape.num_answers == 0 {
            return Err(Error::Config(format!("degenerate model shape {shape:?}")));
        }
        let (d, h) = (config.embed_dim, config.hidden);
        let joint = match config.fusion {
            Fusion::Product => d,
            Fusion::Concat => 2 * d,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let tensors = [
            uniform_init(&mut rng, shape.vocab_size, d, 1.0),
            glorot(&mut rng, d, d),
            Tensor::zeros(&[d]),
            glorot(&mut rng, shape.feature_dim, d),
            Tensor::zeros(&[d]),
            glorot(&mut rng, joint, h),
            Tensor::zeros(&[h]),
            glorot(&mut rng, h, h),
            Tensor::zeros(&[h]),
            glorot(&mut rng, h, shape.num_answers),
            Tensor::zeros(&[shape.num_answers]),
        ];
        for (name, t) in PARAM_NAMES.iter().zip(tensors) {
            store.add(*name, t)?;
        }
        let ids = Ids::resolve(&store)?;
        Ok(Model {
            config,
            shape,
            params: store,
            ids,
            encoded: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Total instances run through the encoders since construction.
    pub fn encoded_count(&self) -> u64 {
        self.encoded.load(Ordering::Relaxed)
    }

    fn activate(&self, tape: &mut Tape, v: Var) -> Var {
        match self.config.activation {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
        }
    }

    fn affine(&self, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = tape.param(&self.params, w);
        let bv = tape.param(&self.params, b);
        let z = tape.matmul(x, wv)?;
        tape.add_row(z, bv)
    }

    /// Bag-of-embeddings question encoder; one row per question.
    pub fn encode_question(&self, tape: &mut Tape, questions: &[&[usize]]) -> Result<Var> {
        for (i, q) in questions.iter().enumerate() {
            if q.is_empty() {
                return Err(Error::Data(format!("question {i} in batch has no tokens")));
            }
            if let Some(&t) = q.iter().find(|&&t| t >= self.shape.vocab_size) {
                return Err(Error::Data(format!(
                    "question {i} in batch: token id {t} outside vocabulary of {}",
                    self.shape.vocab_size
                )));
            }
        }
        let table = tape.param(&self.params, self.ids.embed);
        let bags = questions.iter().map(|q| q.to_vec()).collect();
        let pooled = tape.embed_mean(table, bags)?;
        let z = self.affine(tape, pooled, self.ids.q_w, self.ids.q_b)?;
        Ok(self.activate(tape, z))
    }

    /// Affine projection of image features; one row per image.
    pub fn encode_image(&self, tape: &mut Tape, images: &[&[f64]]) -> Result<Var> {
        let w = self.shape.feature_dim;
        let mut data = Vec::with_capacity(images.len() * w);
        for (i, f) in images.iter().enumerate() {
            if f.len() != w {
                return Err(Error::Data(format!(
                    "image {i} in batch: expected {w} features, got {}",
                    f.len()
                )));
            }
            data.extend_from_slice(f);
        }
        let x = tape.constant(Tensor::matrix(images.len(), w, data)?);
        let z = self.affine(tape, x, self.ids.v_w, self.ids.v_b)?;
        Ok(self.activate(tape, z))
    }

    /// Fuses encoded image and question rows pairwise; returns the shared
    /// feature `[n, h]` and the logits `[n, |A|]`.
    pub fn head(&self, tape: &mut Tape, image: Var, question: Var) -> Result<(Var, Var)> {
        let joint = match self.config.fusion {
            Fusion::Product => tape.mul(image, question)?,
            Fusion::Concat => tape.concat(image, question)?,
        };
        let z1 = self.affine(tape, joint, self.ids.h1_w, self.ids.h1_b)?;
        let a1 = self.activate(tape, z1);
        let z2 = self.affine(tape, a1, self.ids.h2_w, self.ids.h2_b)?;
        let fused = self.activate(tape, z2);
        let logits = self.affine(tape, fused, self.ids.out_w, self.ids.out_b)?;
        Ok((fused, logits))
    }

    /// Runs every instance through the encoders and the head exactly once.
    pub fn forward_batch(&self, tape: &mut Tape, batch: &[&Instance]) -> Result<BatchOutput> {
        for inst in batch {
            if inst.features.len() != self.shape.feature_dim {
                return Err(Error::Data(format!(
                    "instance {}: expected {} image features, got {}",
                    inst.id,
                    self.shape.feature_dim,
                    inst.features.len()
                )));
            }
            if let Some(&t) = inst.tokens.iter().find(|&&t| t >= self.shape.vocab_size) {
                return Err(Error::Data(format!(
                    "instance {}: token id {t} outside vocabulary of {}",
                    inst.id, self.shape.vocab_size
                )));
            }
        }
        let images: Vec<&[f64]> = batch.iter().map(|i| i.features.as_slice()).collect();
        let questions: Vec<&[usize]> = batch.iter().map(|i| i.tokens.as_slice()).collect();
        let image = self.encode_image(tape, &images)?;
        let question = self.encode_question(tape, &questions)?;
        let (fused, logits) = self.head(tape, image, question)?;
        let probs = tape.sigmoid(logits);
        self.encoded.fetch_add(batch.len() as u64, Ordering::Relaxed);
        Ok(BatchOutput {
            image,
            question,
            fused,
            logits,
            probs,
        })
    }

    /// Answer probabilities for every instance, in order.
    pub fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let out = self.forward_batch(&mut tape, batch)?;
        let p = tape.value(out.probs);
        Ok((0..batch.len()).map(|r| p.row(r).to_vec()).collect())
    }

    /// Answer logits for every instance, in order.
    pub fn logits_batch(&self, batch: &[&Instance]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let out = self.forward_batch(&mut tape, batch)?;
        let z = tape.value(out.logits);
        Ok((0..batch.len()).map(|r| z.row(r).to_vec()).collect())
    }

    /// Answer probabilities for one image-question pair.
    pub fn predict(&self, features: &[f64], tokens: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.encode_image(&mut tape, &[features])?;
        let q = self.encode_question(&mut tape, &[tokens])?;
        let (_, logits) = self.head(&mut tape, v, q)?;
        let p = tape.sigmoid(logits);
        Ok(tape.value(p).row(0).to_vec())
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            shape: self.shape,
            params: self.params.clone(),
            meta,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        // Shapes are checked against a freshly initialised model.
        let reference = Model::new(ckpt.config.clone(), ckpt.shape, 0)?;
        for p in reference.params.iter() {
            let id = ckpt
                .params
                .id_of(p.name())
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {:?}", p.name())))?;
            let got = ckpt.params.get(id).value().shape();
            if got != p.value().shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter {:?} has shape {got:?}, expected {:?}",
                    p.name(),
                    p.value().shape()
                )));
            }
        }
        let ids = Ids::resolve(&ckpt.params)?;
        Ok(Model {
            config: ckpt.config,
            shape: ckpt.shape,
            params: ckpt.params,
            ids,
            encoded: AtomicU64::new(0),
        })
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: configuration, shapes and every parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub shape: ModelShape,
    pub params: ParamStore,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}
