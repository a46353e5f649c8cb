//! A trainer with the answer loss only, written against the public pieces
//! (batching stream, encoder pass, loss, optimizer) and nothing else.

use dislab::data::{Dataset, Instance};
use dislab::diff::{make_optimizer, Tape};
use dislab::losses::{target_matrix, vqa_loss_on_tape};
use dislab::model::Model;
use dislab::train::{epoch_batches, stream_rng, TrainConfig, SHUFFLE_STREAM};

/// Trains in place; returns the answer loss of every step.
pub fn answer_only_trainer(ds: &Dataset, model: &mut Model, config: &TrainConfig) -> Vec<f64> {
    let mut rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut opt = make_optimizer(config.optimizer, config.lr);
    let mut losses = Vec::new();
    for _ in 0..config.epochs {
        for idx in epoch_batches(ds.train.len(), config.batch_size, &mut rng) {
            let batch: Vec<&Instance> = idx.iter().map(|&i| &ds.train[i]).collect();
            let mut tape = Tape::new();
            let out = model.forward_batch(&mut tape, &batch).unwrap();
            let targets = target_matrix(&batch, model.shape().num_answers).unwrap();
            let vqa = vqa_loss_on_tape(&mut tape, out.logits, &targets).unwrap();
            let total = tape.scale(vqa, config.loss.lambda_vqa);
            losses.push(tape.value(vqa).item());
            model.params_mut().zero_grad();
            tape.backward(total, model.params_mut()).unwrap();
            opt.step(model.params_mut()).unwrap();
        }
    }
    losses
}
