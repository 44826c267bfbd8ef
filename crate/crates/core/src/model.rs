//! Plant, cost, delay-distribution and sequence configuration types.
//!
//! Everything here is a plain value. [`validate`] checks the cross-field
//! invariants once and hands back a [`Scenario`] that the rest of the crate
//! takes by reference.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::ModelError;

/// Tolerance on `sum(probs) + loss == 1`.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// Linear stochastic plant `x' = A x + B u + w`, `y = C x + v`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub A: DMatrix<f64>,
    pub B: DMatrix<f64>,
    pub C: DMatrix<f64>,
    /// Process-noise covariance.
    pub W: DMatrix<f64>,
    /// Measurement-noise covariance.
    pub V: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
}

impl PlantModel {
    pub fn state_dim(&self) -> usize {
        self.A.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.B.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.C.nrows()
    }
}

/// Quadratic stage and terminal weights over a finite horizon.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub Q: DMatrix<f64>,
    pub R: DMatrix<f64>,
    pub Q_terminal: DMatrix<f64>,
    /// Number of control steps `K`; the terminal cost is charged on `x_K`.
    pub horizon: usize,
}

/// Per-packet delay distribution of one link. `probs[i]` is the probability
/// that a packet sent at step `k` is delivered at step `k + i`; `loss` is the
/// mass of never being delivered.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPmf {
    pub probs: Vec<f64>,
    pub loss: f64,
}

impl DelayPmf {
    pub fn new(probs: Vec<f64>, loss: f64) -> Self {
        Self { probs, loss }
    }

    /// A link that always delivers within the same step.
    pub fn perfect() -> Self {
        Self::new(vec![1.0], 0.0)
    }

    /// A link that never delivers.
    pub fn lossy() -> Self {
        Self::new(Vec::new(), 1.0)
    }

    /// Probability of a delay of exactly `i` steps (zero beyond the support).
    pub fn prob(&self, i: usize) -> f64 {
        self.probs.get(i).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.loss
    }

    pub fn check(&self, field: &'static str) -> Result<(), ModelError> {
        for (index, &p) in self.probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(ModelError::ProbabilityOutOfRange {
                    field,
                    index: Some(index),
                    value: p,
                });
            }
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(ModelError::ProbabilityOutOfRange {
                field,
                index: None,
                value: self.loss,
            });
        }
        let mass = self.total_mass();
        if (mass - 1.0).abs() > PMF_TOLERANCE {
            return Err(ModelError::PmfMass { field, mass });
        }
        Ok(())
    }
}

/// Sequence tail length `N` (each packet carries `N + 1` inputs) and the
/// default input applied when the actuator buffer runs dry.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub tail: usize,
    pub u_default: DVector<f64>,
}

impl SequenceConfig {
    pub fn new(tail: usize, u_default: DVector<f64>) -> Self {
        Self { tail, u_default }
    }

    /// Number of buffer-age modes, `N + 2`.
    pub fn modes(&self) -> usize {
        self.tail + 2
    }
}

/// A configuration whose invariants have been checked by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub plant: PlantModel,
    pub weights: CostWeights,
    pub ca: DelayPmf,
    pub sc: DelayPmf,
    pub seq: SequenceConfig,
}

impl Scenario {
    /// Re-checks a (possibly hand-edited) scenario.
    pub fn validated(self) -> Result<Self, ModelError> {
        validate(self.plant, self.weights, self.ca, self.sc, self.seq)
    }

    /// Same scenario with a different sequence tail length.
    pub fn with_tail(&self, tail: usize) -> Self {
        let mut out = self.clone();
        out.seq.tail = tail;
        out
    }
}

fn expect_shape(
    field: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    if m.shape() != (rows, cols) {
        return Err(ModelError::DimensionMismatch {
            field,
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn expect_len(field: &'static str, v: &DVector<f64>, len: usize) -> Result<(), ModelError> {
    if v.len() != len {
        return Err(ModelError::DimensionMismatch {
            field,
            expected: format!("{len}"),
            found: format!("{}", v.len()),
        });
    }
    Ok(())
}

fn expect_psd(field: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if !linalg::is_symmetric(m, linalg::SYMMETRY_TOLERANCE) {
        return Err(ModelError::NotSymmetric { field });
    }
    if !linalg::is_psd(m) {
        return Err(ModelError::NotPositiveSemidefinite { field });
    }
    Ok(())
}

fn expect_pd(field: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if !linalg::is_symmetric(m, linalg::SYMMETRY_TOLERANCE) {
        return Err(ModelError::NotSymmetric { field });
    }
    if !linalg::is_pd(m) {
        return Err(ModelError::NotPositiveDefinite { field });
    }
    Ok(())
}

/// Checks every type invariant and returns the configuration unchanged.
pub fn validate(
    plant: PlantModel,
    weights: CostWeights,
    ca: DelayPmf,
    sc: DelayPmf,
    seq: SequenceConfig,
) -> Result<Scenario, ModelError> {
    let n = plant.A.nrows();
    let m = plant.B.ncols();
    let q = plant.C.nrows();
    if n == 0 || m == 0 || q == 0 {
        return Err(ModelError::DimensionMismatch {
            field: "plant",
            expected: "nonzero state, input and output dimensions".into(),
            found: format!("n={n}, m={m}, q={q}"),
        });
    }
    expect_shape("A", &plant.A, n, n)?;
    expect_shape("B", &plant.B, n, m)?;
    expect_shape("C", &plant.C, q, n)?;
    expect_shape("W", &plant.W, n, n)?;
    expect_shape("V", &plant.V, q, q)?;
    expect_len("x0_mean", &plant.x0_mean, n)?;
    expect_shape("x0_cov", &plant.x0_cov, n, n)?;
    expect_psd("W", &plant.W)?;
    expect_pd("V", &plant.V)?;
    expect_psd("x0_cov", &plant.x0_cov)?;

    expect_shape("Q", &weights.Q, n, n)?;
    expect_shape("R", &weights.R, m, m)?;
    expect_shape("Q_terminal", &weights.Q_terminal, n, n)?;
    expect_psd("Q", &weights.Q)?;
    expect_pd("R", &weights.R)?;
    expect_psd("Q_terminal", &weights.Q_terminal)?;
    if weights.horizon == 0 {
        return Err(ModelError::ZeroHorizon);
    }

    ca.check("ca")?;
    sc.check("sc")?;
    expect_len("u_default", &seq.u_default, m)?;

    Ok(Scenario {
        plant,
        weights,
        ca,
        sc,
        seq,
    })
}

/// The double-integrator benchmark: position/velocity state, force input,
/// position measurement, horizon 40, zero default input.
pub fn double_integrator_benchmark() -> (PlantModel, CostWeights, SequenceConfig) {
    let plant = PlantModel {
        A: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        B: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        C: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        W: DMatrix::from_diagonal(&DVector::from_vec(vec![0.1 * 0.1, 0.1 * 0.1])),
        V: DMatrix::from_element(1, 1, 0.2 * 0.2),
        x0_mean: DVector::from_vec(vec![100.0, 0.0]),
        x0_cov: DMatrix::from_diagonal(&DVector::from_vec(vec![0.5 * 0.5, 0.5 * 0.5])),
    };
    let weights = CostWeights {
        Q: DMatrix::identity(2, 2),
        R: DMatrix::identity(1, 1),
        Q_terminal: DMatrix::identity(2, 2),
        horizon: 40,
    };
    let seq = SequenceConfig::new(0, DVector::zeros(1));
    (plant, weights, seq)
}

/// `x' Q x + u' R u`.
pub fn stage_cost(
    x: &DVector<f64>,
    u: &DVector<f64>,
    weights: &CostWeights,
) -> Result<f64, ModelError> {
    expect_len("x", x, weights.Q.nrows())?;
    expect_len("u", u, weights.R.nrows())?;
    Ok(linalg::quad_form(&weights.Q, x) + linalg::quad_form(&weights.R, u))
}

/// `x' Q_terminal x`.
pub fn terminal_cost(x: &DVector<f64>, weights: &CostWeights) -> Result<f64, ModelError> {
    expect_len("x", x, weights.Q_terminal.nrows())?;
    Ok(linalg::quad_form(&weights.Q_terminal, x))
}
