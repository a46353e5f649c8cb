//! Answer loss and distinguishing loss.
//!
//! The answer loss is binary cross-entropy between the sigmoid outputs and
//! the soft answer scores. The distinguishing loss compares an anchor's
//! probability on its ground-truth answer `m` with a counterpart's
//! probability on the same answer, through `-log σ(p_im - p_jm)`:
//!
//! * symmetric: `-[log σ(p_im - p_jm) + log σ(p_jn - p_in)]`
//! * simplified: `-log σ(p_im - p_jm)`
//! * modulated: `-p_jm · log σ(p_im - p_jm)`, which weights counterparts
//!   the model finds hard (large `p_jm`) more heavily.
//!
//! The scalar functions here evaluate single terms on plain slices; the
//! batch objective [`total_loss`] builds the same quantities on a tape.

use serde::{Deserialize, Serialize};

use crate::counterparts::CounterpartBatchPlan;
use crate::data::Instance;
use crate::diff::{log_sigmoid, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{BatchOutput, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DisVariant {
    Symmetric,
    Simplified,
    #[default]
    Modulated,
}

/// Whether gradients flow through the modulating factor `p_jm`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FactorPolicy {
    #[default]
    Detached,
    Differentiated,
}

/// How the distinguishing terms of a batch are averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DisNormalization {
    /// Sum over each anchor's counterparts, mean over anchors.
    #[default]
    PerAnchor,
    /// Mean over all terms in the batch.
    PerTerm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_vqa: f64,
    pub lambda_dis: f64,
    pub variant: DisVariant,
    pub factor: FactorPolicy,
    pub normalization: DisNormalization,
    /// Real counterparts sampled per anchor.
    pub n_real: usize,
    /// Synthetic counterparts sampled per anchor.
    pub n_synthetic: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_vqa: 0.05,
            lambda_dis: 0.6,
            variant: DisVariant::Modulated,
            factor: FactorPolicy::Detached,
            normalization: DisNormalization::PerAnchor,
            n_real: 1,
            n_synthetic: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.lambda_vqa) || !ok(self.lambda_dis) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {} and {}",
                self.lambda_vqa, self.lambda_dis
            )));
        }
        Ok(())
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN in probability vector".into()));
    }
    Ok(())
}

/// Binary cross-entropy summed over answers and averaged over instances.
pub fn vqa_loss(probs: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::Usage(format!(
            "vqa_loss needs equal, nonempty batches (got {} and {})",
            probs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, a) in probs.iter().zip(targets) {
        check_probs(p)?;
        if p.len() != a.len() {
            return Err(Error::Usage("probability and target widths differ".into()));
        }
        for (&pk, &ak) in p.iter().zip(a.iter()) {
            total -= ak * pk.ln() + (1.0 - ak) * (1.0 - pk).ln();
        }
    }
    Ok(total / probs.len() as f64)
}

/// [`vqa_loss`] evaluated from logits with the stable log-sigmoid.
pub fn vqa_loss_from_logits(logits: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Usage("vqa_loss needs equal, nonempty batches".into()));
    }
    let mut total = 0.0;
    for (z, a) in logits.iter().zip(targets) {
        check_probs(z)?;
        for (&zk, &ak) in z.iter().zip(a.iter()) {
            total -= ak * log_sigmoid(zk) + (1.0 - ak) * log_sigmoid(-zk);
        }
    }
    Ok(total / logits.len() as f64)
}

/// Two-sided term for a real counterpart with answer `n`.
pub fn dis_loss_symmetric(p_i: &[f64], p_j: &[f64], m: usize, n: Option<usize>) -> Result<f64> {
    let n = n.ok_or_else(|| {
        Error::Usage("the symmetric term needs the counterpart's answer; synthetic counterparts have none".into())
    })?;
    check_probs(p_i)?;
    check_probs(p_j)?;
    Ok(-(log_sigmoid(p_i[m] - p_j[m]) + log_sigmoid(p_j[n] - p_i[n])))
}

pub fn dis_loss_simplified(p_i: &[f64], p_j: &[f64], m: usize) -> Result<f64> {
    check_probs(p_i)?;
    check_probs(p_j)?;
    Ok(-log_sigmoid(p_i[m] - p_j[m]))
}

/// Modulated term. Its value does not depend on the gradient policy.
pub fn dis_loss_modulated(p_i: &[f64], p_j: &[f64], m: usize) -> Result<f64> {
    check_probs(p_i)?;
    check_probs(p_j)?;
    Ok(-p_j[m] * log_sigmoid(p_i[m] - p_j[m]))
}

/// `λ_vqa · L_vqa + λ_dis · L_dis`.
pub fn combine(config: &LossConfig, vqa: f64, dis: f64) -> f64 {
    config.lambda_vqa * vqa + config.lambda_dis * dis
}

/// Scalar summary and the differentiable root of one batch objective.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub vqa: f64,
    pub dis: f64,
    pub real_terms: usize,
    pub synthetic_terms: usize,
}

/// Dense answer-score targets for a batch.
pub fn target_matrix(batch: &[&Instance], num_answers: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.len() * num_answers);
    for inst in batch {
        data.extend(inst.dense_scores(num_answers));
    }
    Tensor::matrix(batch.len(), num_answers, data)
}

/// Answer loss on the tape, from logits.
pub fn vqa_loss_on_tape(tape: &mut Tape, logits: Var, targets: &Tensor) -> Result<Var> {
    let rows = tape.value(logits).rows();
    let a = tape.constant(targets.clone());
    let not_a = tape.constant(targets.map(|x| 1.0 - x));
    let pos = tape.log_sigmoid(logits);
    let neg_logits = tape.neg(logits);
    let neg = tape.log_sigmoid(neg_logits);
    let t1 = tape.mul(a, pos)?;
    let t2 = tape.mul(not_a, neg)?;
    let both = tape.add(t1, t2)?;
    let s = tape.sum(both);
    Ok(tape.scale(s, -1.0 / rows as f64))
}

/// Sum of `-w · log σ(anchor - counterpart)` where `w` is 1 or the
/// (possibly detached) counterpart value.
fn pair_terms(
    tape: &mut Tape,
    anchor: Var,
    counterpart: Var,
    variant: DisVariant,
    factor: FactorPolicy,
) -> Result<Var> {
    let diff = tape.sub(anchor, counterpart)?;
    let ls = tape.log_sigmoid(diff);
    let weighted = match variant {
        DisVariant::Modulated => {
            let w = match factor {
                FactorPolicy::Detached => tape.detach(counterpart),
                FactorPolicy::Differentiated => counterpart,
            };
            tape.mul(w, ls)?
        }
        DisVariant::Simplified | DisVariant::Symmetric => ls,
    };
    let s = tape.sum(weighted);
    Ok(tape.neg(s))
}

/// Total objective for a batch whose forward pass is `out`.
///
/// Real counterparts reuse the batch's own probabilities. Synthetic
/// counterparts re-pair the already encoded image of the donor with the
/// anchor's encoded question and run only the fusion head.
pub fn total_loss(
    tape: &mut Tape,
    model: &Model,
    out: &BatchOutput,
    batch: &[&Instance],
    plan: &CounterpartBatchPlan,
    config: &LossConfig,
) -> Result<BatchLoss> {
    config.validate()?;
    if plan.anchors.len() != batch.len() {
        return Err(Error::Usage(format!(
            "plan covers {} anchors but the batch has {}",
            plan.anchors.len(),
            batch.len()
        )));
    }
    let targets = target_matrix(batch, model.shape().num_answers)?;
    let vqa = vqa_loss_on_tape(tape, out.logits, &targets)?;

    let mut real_anchor = Vec::new();
    let mut real_other = Vec::new();
    let mut rev_other = Vec::new();
    let mut rev_anchor = Vec::new();
    let mut syn_anchor = Vec::new();
    let mut syn_rows_q = Vec::new();
    let mut syn_rows_v = Vec::new();
    let mut syn_other = Vec::new();
    for (i, a) in plan.anchors.iter().enumerate() {
        let m = batch[i].answer;
        for &j in &a.real {
            real_anchor.push((i, m));
            real_other.push((j, m));
            let n = batch[j].answer;
            rev_other.push((j, n));
            rev_anchor.push((i, n));
        }
        for &j in &a.synthetic {
            syn_other.push((syn_anchor.len(), m));
            syn_anchor.push((i, m));
            syn_rows_q.push(i);
            syn_rows_v.push(j);
        }
    }
    let (n_real, n_syn) = (real_anchor.len(), syn_anchor.len());

    let mut parts: Vec<Var> = Vec::new();
    if n_real > 0 {
        let pa = tape.gather(out.probs, real_anchor)?;
        let pc = tape.gather(out.probs, real_other)?;
        parts.push(pair_terms(tape, pa, pc, config.variant, config.factor)?);
        if config.variant == DisVariant::Symmetric {
            let pj = tape.gather(out.probs, rev_other)?;
            let pi = tape.gather(out.probs, rev_anchor)?;
            parts.push(pair_terms(tape, pj, pi, DisVariant::Symmetric, config.factor)?);
        }
    }
    if n_syn > 0 {
        let q = tape.select_rows(out.question, syn_rows_q)?;
        let v = tape.select_rows(out.image, syn_rows_v)?;
        let (_, logits) = model.head(tape, v, q)?;
        let probs = tape.sigmoid(logits);
        let pa = tape.gather(out.probs, syn_anchor)?;
        let pc = tape.gather(probs, syn_other)?;
        let variant = match config.variant {
            DisVariant::Symmetric => DisVariant::Simplified,
            v => v,
        };
        parts.push(pair_terms(tape, pa, pc, variant, config.factor)?);
    }

    let dis = match parts.split_first() {
        None => tape.constant(Tensor::scalar(0.0)),
        Some((first, rest)) => {
            let mut acc = *first;
            for p in rest {
                acc = tape.add(acc, *p)?;
            }
            let denom = match config.normalization {
                DisNormalization::PerAnchor => batch.len(),
                DisNormalization::PerTerm => n_real + n_syn,
            };
            tape.scale(acc, 1.0 / denom as f64)
        }
    };
    let wv = tape.scale(vqa, config.lambda_vqa);
    let wd = tape.scale(dis, config.lambda_dis);
    let total = tape.add(wv, wd)?;
    Ok(BatchLoss {
        total,
        vqa: tape.value(vqa).item(),
        dis: tape.value(dis).item(),
        real_terms: n_real,
        synthetic_terms: n_syn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_two_answers_at_one_half() {
        let p = [0.5, 0.5];
        let a = [1.0, 0.0];
        let l = vqa_loss(&[&p], &[&a]).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-12);
        let l2 = vqa_loss_from_logits(&[&[0.0, 0.0]], &[&a]).unwrap();
        assert!((l2 - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_vanishes_at_perfect_prediction() {
        let a = [1.0, 0.0, 1.0];
        let l = vqa_loss_from_logits(&[&[40.0, -40.0, 40.0]], &[&a]).unwrap();
        assert!(l < 1e-15);
    }

    #[test]
    fn nan_input_aborts() {
        assert!(matches!(
            vqa_loss(&[&[f64::NAN]], &[&[1.0]]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn symmetric_needs_counterpart_answer() {
        let p = [0.5, 0.5];
        assert!(matches!(dis_loss_symmetric(&p, &p, 0, None), Err(Error::Usage(_))));
        let l = dis_loss_symmetric(&p, &p, 0, Some(1)).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_modulating_factor_zeroes_the_term() {
        for p_im in [0.0, 0.3, 0.99] {
            assert_eq!(dis_loss_modulated(&[p_im], &[0.0], 0).unwrap(), 0.0);
        }
        let l = dis_loss_modulated(&[0.5], &[0.5], 0).unwrap();
        assert!((l - 0.5 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn modulated_with_unit_factor_equals_simplified() {
        let (pi, pj) = ([0.3, 0.8], [0.1, 1.0]);
        assert_eq!(
            dis_loss_modulated(&pi, &pj, 1).unwrap(),
            dis_loss_simplified(&pi, &pj, 1).unwrap()
        );
    }

    #[test]
    fn combine_weights() {
        let c = LossConfig::default();
        assert!((combine(&c, 1.0, 0.5) - 0.35).abs() < 1e-15);
        let base = LossConfig { lambda_dis: 0.0, ..c };
        assert_eq!(combine(&base, 1.7, 123.0), 0.05 * 1.7);
    }

    #[test]
    fn negative_weight_rejected() {
        let c = LossConfig {
            lambda_dis: -1.0,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
