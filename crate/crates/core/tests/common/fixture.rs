//! The committed two-instance loss fixture.

use serde::Deserialize;

#[derive(Deserialize)]
pub struct FixtureInstance {
    pub probs: Vec<f64>,
    pub scores: Vec<f64>,
    pub answer: usize,
}

#[derive(Deserialize)]
pub struct Expected {
    pub answer_loss: f64,
    pub symmetric_0_1: f64,
    pub simplified_0_1: f64,
    pub modulated_0_1: f64,
    pub batch_distinguishing_modulated: f64,
    pub batch_distinguishing_simplified: f64,
    pub batch_total_modulated: f64,
    pub batch_total_simplified: f64,
}

#[derive(Deserialize)]
pub struct Fixture {
    pub instances: Vec<FixtureInstance>,
    pub synthetic_probs: std::collections::BTreeMap<String, Vec<f64>>,
    pub expected: Expected,
}

/// Values worked out with 40-digit arithmetic, see `fixtures/two_instances.json`.
pub fn load() -> Fixture {
    serde_json::from_str(include_str!("../fixtures/two_instances.json")).unwrap()
}

