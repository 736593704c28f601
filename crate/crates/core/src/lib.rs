//! Nonlinear MIMO precoding lab: constellation-oriented perturbation,
//! vector perturbation baselines, a modulo receiver and a Monte Carlo SER
//! harness.

pub mod cli;
pub mod constellation;
pub mod link;
pub mod montecarlo;
pub mod numerics;
pub mod precoder;
