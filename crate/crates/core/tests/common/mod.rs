//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, non_snake_case)]

use nalgebra::{DMatrix, DVector};
use seqlqg::model::{double_integrator_benchmark, validate, DelayPmf, PlantModel, Scenario, SequenceConfig};
use seqlqg::sim::EpisodeTrace;

/// Benchmark plant and weights with the given links, tail and horizon.
pub fn benchmark(tail: usize, ca: DelayPmf, sc: DelayPmf, horizon: usize) -> Scenario {
    let (plant, mut weights, _) = double_integrator_benchmark();
    weights.horizon = horizon;
    validate(plant, weights, ca, sc, SequenceConfig::new(tail, DVector::zeros(1))).unwrap()
}

/// Time-varying LQR gains `u_k = L_k x_k` from the textbook Riccati recursion.
pub fn lqr_gains(
    A: &DMatrix<f64>,
    B: &DMatrix<f64>,
    Q: &DMatrix<f64>,
    R: &DMatrix<f64>,
    Qf: &DMatrix<f64>,
    horizon: usize,
) -> Vec<DMatrix<f64>> {
    let mut P = Qf.clone();
    let mut gains = vec![DMatrix::zeros(B.ncols(), A.nrows()); horizon];
    for k in (0..horizon).rev() {
        let S = R + B.transpose() * &P * B;
        let L = -(S.try_inverse().unwrap() * B.transpose() * &P * A);
        let Acl = A + B * &L;
        P = Q + L.transpose() * R * &L + Acl.transpose() * &P * &Acl;
        gains[k] = L;
    }
    gains
}

/// Plain covariance-form Kalman measurement update.
pub fn kalman_update(
    plant: &PlantModel,
    mean: &mut DVector<f64>,
    cov: &mut DMatrix<f64>,
    y: &DVector<f64>,
) {
    let S = &plant.C * &*cov * plant.C.transpose() + &plant.V;
    let K = &*cov * plant.C.transpose() * S.try_inverse().unwrap();
    *mean += &K * (y - &plant.C * &*mean);
    let n = mean.len();
    *cov = (DMatrix::identity(n, n) - &K * &plant.C) * &*cov;
    *cov = (&*cov + cov.transpose()) * 0.5;
}

pub fn kalman_predict(plant: &PlantModel, mean: &mut DVector<f64>, cov: &mut DMatrix<f64>, u: &DVector<f64>) {
    *mean = &plant.A * &*mean + &plant.B * u;
    *cov = &plant.A * &*cov * plant.A.transpose() + &plant.W;
}

/// Filters from the prior through step `k`, folding in every received
/// measurement at its origin step.
pub fn replay_filter(
    plant: &PlantModel,
    inputs: &[DVector<f64>],
    received: &[(usize, DVector<f64>)],
    k: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = plant.x0_mean.clone();
    let mut cov = plant.x0_cov.clone();
    for j in 0..=k {
        if j > 0 {
            kalman_predict(plant, &mut mean, &mut cov, &inputs[j - 1]);
        }
        for (_, y) in received.iter().filter(|(o, _)| *o == j) {
            kalman_update(plant, &mut mean, &mut cov, y);
        }
    }
    (mean, cov)
}

/// Measurements the controller had accepted by step `k`: delivered no later
/// than `k` and no more than `window` steps after they were taken.
pub fn received_by(trace: &EpisodeTrace, k: usize, window: usize) -> Vec<(usize, DVector<f64>)> {
    trace.steps[..=k]
        .iter()
        .flat_map(|s| {
            s.measurements
                .arrivals
                .iter()
                .filter(move |(o, _)| s.k - o <= window)
                .cloned()
        })
        .collect()
}

pub fn applied_inputs(trace: &EpisodeTrace) -> Vec<DVector<f64>> {
    trace.steps.iter().map(|s| s.u.clone()).collect()
}

/// Largest entrywise gap relative to `max(1, |reference|)`.
pub fn scaled_gap(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).amax() / reference.amax().max(1.0)
}

pub fn vector_gap(a: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (a - reference).amax() / reference.amax().max(1.0)
}
