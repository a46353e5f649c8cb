//! Oracles shared between integration test targets.
#![allow(dead_code)]

pub mod fixture;
pub mod gradcheck;
pub mod reference;
