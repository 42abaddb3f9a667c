//! Workloads shared by the benchmarks.

use filterstab::harness::random_model;
use filterstab::simulate::sample_trajectory;
use filterstab::{Density, FiniteModel, Observation};

/// A seeded positive model with `d` states and its observation record.
pub fn workload(d: usize, horizon: usize) -> (FiniteModel, Vec<Observation>) {
    let model = random_model(d as u64, d, 3, true).expect("valid random model");
    let traj = sample_trajectory(&model, &Density::uniform(&model.space), horizon, 17)
        .expect("positive horizon");
    (model, traj.observations)
}
