//! Optimal sequence gains by a backward recursion over the buffer-age modes.
//!
//! The mode `θ_k` is only acknowledged one step late, so every quantity is
//! conditioned on `θ_{k-1} = j` and averaged over `θ_k = i` with row `j` of
//! the transition matrix. The resulting input-weight sums are singular
//! whenever some sequence entries can never be applied (entries past the
//! horizon, or entries no delay realisation can deliver in time); the
//! pseudoinverse picks the minimum-norm gain, which zeroes those entries.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::actuator::ControlSequence;
use crate::linalg;
use crate::mjls::{AugmentedModel, TransitionMatrix};
use crate::model::CostWeights;
use crate::ControllerError;

pub use crate::linalg::pseudoinverse;

/// Relative eigenvalue cutoff used when pseudo-inverting the input weight.
pub const PINV_TOLERANCE: f64 = 1e-10;

/// Gains `L[k][j]` for `k < K` and expected cost-to-go matrices `EK[k][j]`
/// for `k ≤ K`, both indexed by the previous mode `j = θ_{k-1}`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub tail: usize,
    pub m: usize,
    pub L: Vec<Vec<DMatrix<f64>>>,
    pub EK: Vec<Vec<DMatrix<f64>>>,
    /// Diagnostic: weight of the estimation error in the cost-to-go.
    pub P: Vec<Vec<DMatrix<f64>>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.L.len()
    }

    pub fn modes(&self) -> usize {
        self.tail + 2
    }

    /// Mode assumed before step 0: the buffer starts out holding defaults.
    pub fn initial_mode(&self) -> usize {
        self.tail + 1
    }

    /// Copy with every gain passed through `f(k, j, gain)`. Cost-to-go
    /// matrices are kept as they were.
    pub fn map_gains<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize, usize, &DMatrix<f64>) -> DMatrix<f64>,
    {
        let mut out = self.clone();
        for (k, row) in out.L.iter_mut().enumerate() {
            for (j, gain) in row.iter_mut().enumerate() {
                *gain = f(k, j, gain);
            }
        }
        out
    }

    /// Dumps every matrix as one CSV line:
    /// `kind,k,j,rows,cols,v_00,v_01,...` (row-major).
    pub fn write_csv<W: Write>(&self, out: &mut W, label: &str) -> io::Result<()> {
        let mut line = |kind: &str, k: usize, j: usize, mat: &DMatrix<f64>| -> io::Result<()> {
            write!(out, "{label}{kind},{k},{j},{},{}", mat.nrows(), mat.ncols())?;
            for r in 0..mat.nrows() {
                for c in 0..mat.ncols() {
                    write!(out, ",{}", mat[(r, c)])?;
                }
            }
            writeln!(out)
        };
        for (k, row) in self.L.iter().enumerate() {
            for (j, mat) in row.iter().enumerate() {
                line("L", k, j, mat)?;
            }
        }
        for (k, row) in self.EK.iter().enumerate() {
            for (j, mat) in row.iter().enumerate() {
                line("EK", k, j, mat)?;
            }
        }
        Ok(())
    }
}

/// Runs the coupled Riccati recursion from the terminal weight back to step 0.
#[allow(non_snake_case)]
pub fn backward_recursion(
    model: &AugmentedModel,
    transitions: &TransitionMatrix,
    weights: &CostWeights,
) -> Result<GainSchedule, ControllerError> {
    let modes = model.modes();
    if transitions.modes() != modes {
        return Err(ControllerError::ModeCountMismatch {
            expected: modes,
            found: transitions.modes(),
        });
    }
    let horizon = weights.horizon;
    let dim = model.state_dim();
    let seq_dim = model.sequence_dim();

    let mut EK = vec![vec![model.Q_tilde_terminal.clone(); modes]; horizon + 1];
    let mut L = vec![Vec::with_capacity(modes); horizon];
    let mut P = vec![Vec::with_capacity(modes); horizon];

    for k in (0..horizon).rev() {
        // Mode-wise products with the next cost-to-go, shared by all rows j.
        let next = &EK[k + 1];
        let mut r_terms = Vec::with_capacity(modes);
        let mut ba_terms = Vec::with_capacity(modes);
        let mut qa_terms = Vec::with_capacity(modes);
        for i in 0..modes {
            let kb = &next[i] * &model.B_tilde[i];
            let ka = &next[i] * &model.A_tilde[i];
            r_terms.push(&model.R_tilde[i] + model.B_tilde[i].transpose() * &kb);
            ba_terms.push(model.B_tilde[i].transpose() * &ka);
            qa_terms.push(&model.Q_tilde[i] + model.A_tilde[i].transpose() * &ka);
        }

        let mut ek_row = Vec::with_capacity(modes);
        for j in 0..modes {
            let mut s_r = DMatrix::zeros(seq_dim, seq_dim);
            let mut s_ba = DMatrix::zeros(seq_dim, dim);
            let mut s_qa = DMatrix::zeros(dim, dim);
            for i in 0..modes {
                let p = transitions.p[(j, i)];
                if p == 0.0 {
                    continue;
                }
                s_r += &r_terms[i] * p;
                s_ba += &ba_terms[i] * p;
                s_qa += &qa_terms[i] * p;
            }
            let s_r = linalg::symmetrize(&s_r);
            let s_r_pinv = pseudoinverse(&s_r, PINV_TOLERANCE)
                .expect("symmetrized input weight is symmetric");
            let gain = -(&s_r_pinv * &s_ba);
            let p_kj = linalg::symmetrize(&(s_ba.transpose() * &s_r_pinv * &s_ba));
            ek_row.push(linalg::symmetrize(&(s_qa - &p_kj)));
            L[k].push(gain);
            P[k].push(p_kj);
        }
        EK[k] = ek_row;
    }

    Ok(GainSchedule {
        tail: model.tail(),
        m: model.m,
        L,
        EK,
        P,
    })
}

/// `U_k = L[k][θ_{k-1}] ξ̂_k`, packaged with origin `k`.
pub fn control_sequence(
    schedule: &GainSchedule,
    k: usize,
    theta_prev: usize,
    xi_hat: &DVector<f64>,
) -> Result<ControlSequence, ControllerError> {
    if k >= schedule.horizon() {
        return Err(ControllerError::StepOutOfHorizon {
            step: k,
            horizon: schedule.horizon(),
        });
    }
    if theta_prev >= schedule.modes() {
        return Err(ControllerError::ModeOutOfRange {
            mode: theta_prev,
            max: schedule.modes() - 1,
        });
    }
    let gain = &schedule.L[k][theta_prev];
    if xi_hat.len() != gain.ncols() {
        return Err(ControllerError::EstimateLength {
            expected: gain.ncols(),
            found: xi_hat.len(),
        });
    }
    Ok(ControlSequence::from_stacked(k, &(gain * xi_hat), schedule.m))
}
