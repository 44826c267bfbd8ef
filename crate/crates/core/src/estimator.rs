//! Conditional mean of the augmented state `ξ_k = [x_k; η_k]`.
//!
//! `η_k` is a deterministic function of the sequences already sent, so only
//! the plant state needs filtering. The filter keeps a window of received
//! measurements together with the posterior at every past step. When a late
//! measurement shows up it re-runs predict/update from that measurement's
//! origin step, using the inputs reconstructed from the acknowledgements.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::actuator::ControlSequence;
use crate::linalg;
use crate::mjls::AugmentedModel;
use crate::model::{PlantModel, SequenceConfig};
use crate::network::MeasurementSet;
use crate::EstimatorError;

/// Arrivals older than this many steps are dropped unless configured otherwise.
pub const DEFAULT_FILTER_WINDOW: usize = 12;

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone)]
pub struct EstimatorState {
    A: DMatrix<f64>,
    B: DMatrix<f64>,
    C: DMatrix<f64>,
    W: DMatrix<f64>,
    V: DMatrix<f64>,
    F: DMatrix<f64>,
    G: DMatrix<f64>,
    prior: Moments,
    tail: usize,
    m: usize,
    u_default: DVector<f64>,
    window: usize,

    sent: Vec<ControlSequence>,
    applied: Vec<DVector<f64>>,
    eta: DVector<f64>,
    eta_history: Vec<DVector<f64>>,
    meas_buffer: BTreeMap<usize, DVector<f64>>,
    /// Filtered moments for steps `0..posterior.len()`.
    posterior: Vec<Moments>,
    /// First step whose posterior must be recomputed.
    dirty_from: usize,
}

impl EstimatorState {
    pub fn new(
        plant: &PlantModel,
        seq: &SequenceConfig,
        model: &AugmentedModel,
        window: usize,
    ) -> Self {
        let eta = model.layout.initial_eta(&seq.u_default);
        Self {
            A: plant.A.clone(),
            B: plant.B.clone(),
            C: plant.C.clone(),
            W: plant.W.clone(),
            V: plant.V.clone(),
            F: model.F.clone(),
            G: model.G.clone(),
            prior: Moments {
                mean: plant.x0_mean.clone(),
                cov: plant.x0_cov.clone(),
            },
            tail: seq.tail,
            m: plant.input_dim(),
            u_default: seq.u_default.clone(),
            window,
            sent: Vec::new(),
            applied: Vec::new(),
            eta_history: vec![eta.clone()],
            eta,
            meas_buffer: BTreeMap::new(),
            posterior: Vec::new(),
            dirty_from: 0,
        }
    }

    /// Current step `k`: inputs `u_0 .. u_{k-1}` are known.
    pub fn step(&self) -> usize {
        self.applied.len()
    }

    pub fn applied_inputs(&self) -> &[DVector<f64>] {
        &self.applied
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn eta_history(&self) -> &[DVector<f64>] {
        &self.eta_history
    }

    /// Origins currently held in the measurement buffer.
    pub fn buffered_origins(&self) -> Vec<usize> {
        self.meas_buffer.keys().copied().collect()
    }

    /// Appends `U_k` and advances `η_{k+1} = F η_k + G U_k`.
    pub fn record_sent(&mut self, sequence: ControlSequence) -> Result<(), EstimatorError> {
        let expected = self.sent.len();
        if sequence.origin < expected {
            return Err(EstimatorError::DuplicateSend {
                step: sequence.origin,
            });
        }
        if sequence.origin > expected {
            return Err(EstimatorError::SendOutOfOrder {
                expected,
                found: sequence.origin,
            });
        }
        if sequence.entries.len() != self.tail + 1 {
            return Err(EstimatorError::SequenceLength {
                expected: self.tail + 1,
                found: sequence.entries.len(),
            });
        }
        self.eta = &self.F * &self.eta + &self.G * sequence.stacked();
        self.eta_history.push(self.eta.clone());
        self.sent.push(sequence);
        Ok(())
    }

    /// Consumes `θ_{k-1}` and stores the input the actuator applied at
    /// step `k - 1`, which moves the estimator to step `k`.
    pub fn ingest_ack(&mut self, theta_prev: usize) -> Result<(), EstimatorError> {
        if theta_prev > self.tail + 1 {
            return Err(EstimatorError::ModeOutOfRange {
                mode: theta_prev,
                max: self.tail + 1,
            });
        }
        let step = self.applied.len();
        if self.sent.len() <= step {
            return Err(EstimatorError::AckBeforeSend { step });
        }
        let u = if theta_prev <= self.tail && theta_prev <= step {
            self.sent[step - theta_prev].entries[theta_prev].clone()
        } else {
            self.u_default.clone()
        };
        debug_assert_eq!(u.len(), self.m);
        self.applied.push(u);
        Ok(())
    }

    /// Buffers the arrivals of `Z_k`. Measurements older than the window,
    /// or from the future, are ignored.
    pub fn ingest_measurements(&mut self, arrivals: &MeasurementSet) {
        let now = self.step();
        for (origin, y) in &arrivals.arrivals {
            if *origin > now || now - origin > self.window {
                continue;
            }
            self.meas_buffer.insert(*origin, y.clone());
            self.dirty_from = self.dirty_from.min(*origin);
        }
    }

    fn refresh(&mut self) {
        let now = self.step();
        let keep = self.dirty_from.min(self.posterior.len());
        self.posterior.truncate(keep);
        for t in keep..=now {
            let predicted = match t {
                0 => self.prior.clone(),
                _ => {
                    let last = &self.posterior[t - 1];
                    Moments {
                        mean: &self.A * &last.mean + &self.B * &self.applied[t - 1],
                        cov: linalg::symmetrize(
                            &(&self.A * &last.cov * self.A.transpose() + &self.W),
                        ),
                    }
                }
            };
            let filtered = match self.meas_buffer.get(&t) {
                Some(y) => self.update(predicted, y),
                None => predicted,
            };
            self.posterior.push(filtered);
        }
        self.dirty_from = now + 1;
        // Anything at or below `now - window` can never trigger a replay again.
        if let Some(cutoff) = now.checked_sub(self.window) {
            self.meas_buffer = self.meas_buffer.split_off(&(cutoff + 1));
        }
    }

    /// Measurement update in Joseph form.
    fn update(&self, predicted: Moments, y: &DVector<f64>) -> Moments {
        let n = predicted.mean.len();
        let innovation_cov = linalg::symmetrize(&(&self.C * &predicted.cov * self.C.transpose() + &self.V));
        let chol = innovation_cov
            .cholesky()
            .expect("innovation covariance is positive definite");
        let gain = chol.solve(&(&self.C * &predicted.cov)).transpose();
        let residual = y - &self.C * &predicted.mean;
        let mean = &predicted.mean + &gain * residual;
        let i_kc = DMatrix::<f64>::identity(n, n) - &gain * &self.C;
        let cov = &i_kc * &predicted.cov * i_kc.transpose() + &gain * &self.V * gain.transpose();
        Moments {
            mean,
            cov: linalg::symmetrize(&cov),
        }
    }

    /// `E{x_k | I_k}` and its covariance at the current step.
    pub fn plant_estimate(&mut self) -> (DVector<f64>, DMatrix<f64>) {
        self.refresh();
        let last = &self.posterior[self.step()];
        (last.mean.clone(), last.cov.clone())
    }

    /// `E{ξ_k | I_k} = [E{x_k | I_k}; η_k]`.
    pub fn augmented_estimate(&mut self, k: usize) -> Result<DVector<f64>, EstimatorError> {
        if k != self.step() || self.eta_history.len() != k + 1 {
            return Err(EstimatorError::StepMismatch {
                requested: k,
                current: self.step(),
            });
        }
        let (x, _) = self.plant_estimate();
        let n = x.len();
        let d = self.eta.len();
        let mut xi = DVector::zeros(n + d);
        xi.rows_mut(0, n).copy_from(&x);
        xi.rows_mut(n, d).copy_from(&self.eta);
        Ok(xi)
    }
}
