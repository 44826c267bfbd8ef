//! Markov-jump model of network plus actuator.
//!
//! The buffer age `θ ∈ {0, ..., N+1}` is a Markov chain driven by the
//! controller→actuator delays. Stacking the plant state with `η`, the vector
//! of all previously sent inputs that could still be applied (plus the
//! default input), gives a linear system whose matrices switch with `θ`.
//!
//! Layout of `η` for tail length `N` and input dimension `m`: block `b`
//! (`b = 1..=N`) holds the `N + 1 - b` still-applicable entries of the
//! sequence sent `b` steps ago, oldest-step-first, i.e. `u_{k|k-b}` through
//! `u_{k+N-b|k-b}`. The last `m` entries hold the default input.

use nalgebra::{DMatrix, DVector};

use crate::model::{CostWeights, DelayPmf, PlantModel, SequenceConfig};
use crate::ModelError;

/// Dimension of `η`: `m + m * (1 + 2 + ... + N)`.
pub fn eta_dim(tail: usize, m: usize) -> usize {
    m + m * tail * (tail + 1) / 2
}

/// Offsets of the blocks inside `η`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtaLayout {
    pub tail: usize,
    pub m: usize,
}

impl EtaLayout {
    pub fn new(tail: usize, m: usize) -> Self {
        Self { tail, m }
    }

    pub fn dim(&self) -> usize {
        eta_dim(self.tail, self.m)
    }

    /// Number of entries in block `b` (the sequence sent `b` steps ago).
    pub fn block_len(&self, b: usize) -> usize {
        debug_assert!((1..=self.tail).contains(&b));
        self.tail + 1 - b
    }

    /// Row offset of entry `e` of block `b`.
    pub fn offset(&self, b: usize, e: usize) -> usize {
        debug_assert!(e < self.block_len(b));
        let before: usize = (1..b).map(|c| self.block_len(c)).sum();
        (before + e) * self.m
    }

    pub fn default_offset(&self) -> usize {
        self.dim() - self.m
    }

    /// Offset of the input that mode `θ` applies, or `None` for `θ = 0`
    /// (which takes the head of the freshly sent sequence instead).
    pub fn mode_offset(&self, theta: usize) -> Option<usize> {
        match theta {
            0 => None,
            t if t <= self.tail => Some(self.offset(t, 0)),
            t if t == self.tail + 1 => Some(self.default_offset()),
            t => panic!("mode {t} outside 0..={}", self.tail + 1),
        }
    }

    /// `η_0`: every slot holds the default input.
    pub fn initial_eta(&self, u_default: &DVector<f64>) -> DVector<f64> {
        let mut eta = DVector::zeros(self.dim());
        for chunk in 0..self.dim() / self.m {
            eta.rows_mut(chunk * self.m, self.m).copy_from(u_default);
        }
        eta
    }
}

/// Row-stochastic matrix of buffer-age transitions, `p[(i, j)] = P(θ' = j | θ = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub p: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn modes(&self) -> usize {
        self.p.nrows()
    }

    pub fn tail(&self) -> usize {
        self.modes() - 2
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.p.row(i).sum()
    }
}

/// Transition matrix for tail length `N` and controller→actuator delays `ca`.
///
/// A packet delayed by more than `N` steps can never supply an input, so its
/// mass is merged into the loss atom first. Row `i` then puts `q_j` on every
/// `j ≤ min(i, N)` and the remaining mass on `min(i + 1, N + 1)`.
pub fn build_transition_matrix(ca: &DelayPmf, tail: usize) -> Result<TransitionMatrix, ModelError> {
    ca.check("ca")?;
    let modes = tail + 2;
    let mut p = DMatrix::zeros(modes, modes);
    for i in 0..modes {
        let mut used = 0.0;
        for j in 0..=i.min(tail) {
            let q = ca.prob(j);
            p[(i, j)] = q;
            used += q;
        }
        p[(i, (i + 1).min(tail + 1))] += (1.0 - used).max(0.0);
    }
    Ok(TransitionMatrix { p })
}

/// Per-mode matrices of the augmented system
/// `ξ' = Ã_θ ξ + B̃_θ U + w̃` with `ξ = [x; η]` and stage cost
/// `ξ' Q̃_θ ξ + U' R̃_θ U`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub n: usize,
    pub m: usize,
    pub layout: EtaLayout,
    pub F: DMatrix<f64>,
    pub G: DMatrix<f64>,
    pub H: Vec<DMatrix<f64>>,
    pub J: Vec<DMatrix<f64>>,
    pub A_tilde: Vec<DMatrix<f64>>,
    pub B_tilde: Vec<DMatrix<f64>>,
    pub Q_tilde: Vec<DMatrix<f64>>,
    pub R_tilde: Vec<DMatrix<f64>>,
    pub Q_tilde_terminal: DMatrix<f64>,
    /// `blockdiag(W, 0)`.
    pub W_tilde: DMatrix<f64>,
}

impl AugmentedModel {
    pub fn tail(&self) -> usize {
        self.layout.tail
    }

    pub fn modes(&self) -> usize {
        self.layout.tail + 2
    }

    pub fn eta_dim(&self) -> usize {
        self.layout.dim()
    }

    /// Length of `ξ`.
    pub fn state_dim(&self) -> usize {
        self.n + self.eta_dim()
    }

    /// Length of the stacked sequence `U`.
    pub fn sequence_dim(&self) -> usize {
        self.m * (self.layout.tail + 1)
    }

    /// `η' = F η + G U`.
    pub fn advance_eta(&self, eta: &DVector<f64>, stacked: &DVector<f64>) -> DVector<f64> {
        &self.F * eta + &self.G * stacked
    }

    /// `u = H_θ η + J_θ U`.
    pub fn applied_input(&self, theta: usize, eta: &DVector<f64>, stacked: &DVector<f64>) -> DVector<f64> {
        &self.H[theta] * eta + &self.J[theta] * stacked
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Builds every mode matrix for a validated plant, weights and tail length.
#[allow(non_snake_case)]
pub fn build_augmented(
    plant: &PlantModel,
    weights: &CostWeights,
    seq: &SequenceConfig,
) -> AugmentedModel {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let tail = seq.tail;
    let layout = EtaLayout::new(tail, m);
    let d = layout.dim();
    let s = m * (tail + 1);
    let eye = DMatrix::<f64>::identity(m, m);

    // Shift: block b+1 of η' is block b of η without its head; u^d persists.
    let mut F = DMatrix::zeros(d, d);
    for b in 2..=tail {
        for e in 0..layout.block_len(b) {
            let row = layout.offset(b, e);
            let col = layout.offset(b - 1, e + 1);
            F.view_mut((row, col), (m, m)).copy_from(&eye);
        }
    }
    let ud = layout.default_offset();
    F.view_mut((ud, ud), (m, m)).copy_from(&eye);

    // Block 1 of η' is the tail u_{k+1|k} .. u_{k+N|k} of the sequence just sent.
    let mut G = DMatrix::zeros(d, s);
    for e in 0..tail {
        G.view_mut((layout.offset(1, e), (e + 1) * m), (m, m))
            .copy_from(&eye);
    }

    let modes = tail + 2;
    let mut H = Vec::with_capacity(modes);
    let mut J = Vec::with_capacity(modes);
    for theta in 0..modes {
        let mut h = DMatrix::zeros(m, d);
        let mut j = DMatrix::zeros(m, s);
        match layout.mode_offset(theta) {
            Some(col) => h.view_mut((0, col), (m, m)).copy_from(&eye),
            None => j.view_mut((0, 0), (m, m)).copy_from(&eye),
        }
        H.push(h);
        J.push(j);
    }

    let mut A_tilde = Vec::with_capacity(modes);
    let mut B_tilde = Vec::with_capacity(modes);
    let mut Q_tilde = Vec::with_capacity(modes);
    let mut R_tilde = Vec::with_capacity(modes);
    for theta in 0..modes {
        let mut a = DMatrix::zeros(n + d, n + d);
        a.view_mut((0, 0), (n, n)).copy_from(&plant.A);
        a.view_mut((0, n), (n, d)).copy_from(&(&plant.B * &H[theta]));
        a.view_mut((n, n), (d, d)).copy_from(&F);
        A_tilde.push(a);

        let mut b = DMatrix::zeros(n + d, s);
        b.view_mut((0, 0), (n, s)).copy_from(&(&plant.B * &J[theta]));
        b.view_mut((n, 0), (d, s)).copy_from(&G);
        B_tilde.push(b);

        let h_r_h = H[theta].transpose() * &weights.R * &H[theta];
        Q_tilde.push(block_diag(&weights.Q, &h_r_h));
        R_tilde.push(J[theta].transpose() * &weights.R * &J[theta]);
    }

    AugmentedModel {
        n,
        m,
        layout,
        Q_tilde_terminal: block_diag(&weights.Q_terminal, &DMatrix::zeros(d, d)),
        W_tilde: block_diag(&plant.W, &DMatrix::zeros(d, d)),
        F,
        G,
        H,
        J,
        A_tilde,
        B_tilde,
        Q_tilde,
        R_tilde,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::double_integrator_benchmark;

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        assert!((a - b).amax() <= tol, "{a}\nvs\n{b}");
    }

    #[test]
    fn eta_dim_examples() {
        assert_eq!(eta_dim(0, 1), 1);
        assert_eq!(eta_dim(2, 1), 4);
        assert_eq!(eta_dim(3, 2), 14);
    }

    #[test]
    fn transition_matrix_hand_example() {
        let t = build_transition_matrix(&DelayPmf::new(vec![0.5, 0.3], 0.2), 1).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, 0.5, 0.0, 0.5, 0.3, 0.2, 0.5, 0.3, 0.2],
        );
        assert_close(&t.p, &expected, 1e-15);
    }

    #[test]
    fn perfect_link_always_returns_to_zero() {
        let t = build_transition_matrix(&DelayPmf::perfect(), 3).unwrap();
        for i in 0..5 {
            assert_eq!(t.p[(i, 0)], 1.0);
            assert_eq!(t.row_sum(i), 1.0);
        }
    }

    #[test]
    fn dead_link_climbs_and_absorbs() {
        let tail = 3;
        let t = build_transition_matrix(&DelayPmf::lossy(), tail).unwrap();
        for i in 0..=tail {
            assert_eq!(t.p[(i, i + 1)], 1.0);
        }
        assert_eq!(t.p[(tail + 1, tail + 1)], 1.0);
        assert_eq!(t.p.sum(), (tail + 2) as f64);
    }

    #[test]
    fn long_delays_fold_into_loss() {
        let pmf = DelayPmf::new(vec![0.1, 0.2, 0.3, 0.4], 0.0);
        let t = build_transition_matrix(&pmf, 1).unwrap();
        assert!((t.p[(2, 2)] - 0.7).abs() < 1e-15);
        assert!((t.p[(1, 2)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn transition_structure_invariants() {
        let pmf = crate::network::fixtures::b_like();
        for tail in 0..6 {
            let t = build_transition_matrix(&pmf, tail).unwrap();
            for i in 0..t.modes() {
                assert!((t.row_sum(i) - 1.0).abs() < 1e-12);
                for j in 0..t.modes() {
                    assert!((0.0..=1.0).contains(&t.p[(i, j)]));
                    if j > i + 1 {
                        assert_eq!(t.p[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_pmf_is_rejected() {
        assert!(build_transition_matrix(&DelayPmf::new(vec![0.5], 0.1), 2).is_err());
    }

    #[test]
    fn tail_one_shift_and_injection() {
        let (plant, weights, mut seq) = double_integrator_benchmark();
        seq.tail = 1;
        let model = build_augmented(&plant, &weights, &seq);
        assert_eq!(model.F, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(model.G, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn tail_zero_modes() {
        let (plant, weights, seq) = double_integrator_benchmark();
        let model = build_augmented(&plant, &weights, &seq);
        assert_eq!(model.modes(), 2);
        assert_eq!(model.J[0], DMatrix::identity(1, 1));
        assert_eq!(model.H[1], DMatrix::identity(1, 1));
        assert_eq!(model.H[0], DMatrix::zeros(1, 1));
        assert_eq!(model.J[1], DMatrix::zeros(1, 1));
        assert_eq!(model.F, DMatrix::identity(1, 1));
        assert_eq!(model.G, DMatrix::zeros(1, 1));
    }

    #[test]
    fn benchmark_tail_two_block_assembly() {
        let (plant, weights, mut seq) = double_integrator_benchmark();
        seq.tail = 2;
        let model = build_augmented(&plant, &weights, &seq);
        let a0 = &model.A_tilde[0];
        assert_eq!(a0.shape(), (6, 6));
        assert_eq!(a0.view((0, 0), (2, 2)).into_owned(), plant.A);
        assert_eq!(a0.view((0, 2), (2, 4)).into_owned(), DMatrix::zeros(2, 4));
        // θ = 2 applies u_{k|k-2}, which sits at offset 2 of η.
        let a2 = &model.A_tilde[2];
        assert_eq!(a2[(1, 2 + 2)], 1.0);
        assert_eq!(model.layout.mode_offset(3), Some(3));
    }

    #[test]
    fn selectors_never_overlap_and_weights_are_psd() {
        let (plant, weights, _) = double_integrator_benchmark();
        for tail in 0..5 {
            let seq = SequenceConfig::new(tail, DVector::zeros(1));
            let model = build_augmented(&plant, &weights, &seq);
            for theta in 0..model.modes() {
                let cross = model.H[theta].transpose() * &weights.R * &model.J[theta];
                assert_eq!(cross.amax(), 0.0);
                assert!(linalg::is_psd(&model.Q_tilde[theta]));
                assert!(linalg::is_psd(&model.R_tilde[theta]));
                assert_eq!(model.Q_tilde[theta], model.Q_tilde[theta].transpose());
                if theta > 0 {
                    assert_eq!(model.R_tilde[theta].amax(), 0.0);
                }
            }
        }
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let layout = EtaLayout::new(3, 2);
        let mut expected = 0;
        for b in 1..=3 {
            for e in 0..layout.block_len(b) {
                assert_eq!(layout.offset(b, e), expected);
                expected += 2;
            }
        }
        assert_eq!(layout.default_offset(), expected);
        assert_eq!(layout.dim(), expected + 2);
    }
}
