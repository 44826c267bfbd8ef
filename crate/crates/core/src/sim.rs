//! Closed-loop episodes, Monte-Carlo batches and an exact expected-cost
//! oracle for small instances.
//!
//! Within one step the order is fixed: sensor→controller deliveries, the
//! controller (acknowledgement, measurements, estimate, send `U_k`),
//! controller→actuator deliveries, actuation, plant update, and finally the
//! sensor sampling `y_{k+1}`. A sequence with zero delay is therefore usable
//! in the step it was sent.
//!
//! Every noise source draws from its own ChaCha stream split off the episode
//! seed, and draws the same number of variates whatever the control law
//! does. Two episodes with the same seed share all noise and delay
//! realisations even when their controllers differ.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::actuator::{BufferState, ControlSequence};
use crate::controller::{backward_recursion, control_sequence, GainSchedule};
use crate::estimator::EstimatorState;
use crate::linalg;
use crate::mjls::{build_augmented, build_transition_matrix, AugmentedModel, TransitionMatrix};
use crate::model::{stage_cost, terminal_cost, DelayPmf, Scenario};
use crate::network::{AckChannel, MeasurementSet, Transport};
use crate::SimError;

/// Upper bound on enumerated mode paths in [`exact_expected_cost`].
pub const MAX_MODE_PATHS: usize = 100_000;

/// Minimum number of observed transitions for [`empirical_theta_frequencies`].
pub const MIN_TRANSITIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    InitialState = 0,
    Process = 1,
    Measurement = 2,
    ControllerActuator = 3,
    SensorController = 4,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

fn gaussian(root: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| StandardNormal.sample(rng));
    root * z
}

/// Everything one sweep cell needs, built once and shared read-only.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub model: AugmentedModel,
    pub transitions: TransitionMatrix,
    pub schedule: GainSchedule,
    pub filter_window: usize,
    x0_root: DMatrix<f64>,
    w_root: DMatrix<f64>,
    v_root: DMatrix<f64>,
}

impl Setup {
    pub fn new(scenario: Scenario, filter_window: usize) -> Result<Self, SimError> {
        let model = build_augmented(&scenario.plant, &scenario.weights, &scenario.seq);
        let transitions = build_transition_matrix(&scenario.ca, scenario.seq.tail)?;
        let schedule = backward_recursion(&model, &transitions, &scenario.weights)?;
        Ok(Self {
            x0_root: linalg::psd_sqrt(&scenario.plant.x0_cov),
            w_root: linalg::psd_sqrt(&scenario.plant.W),
            v_root: linalg::psd_sqrt(&scenario.plant.V),
            scenario,
            model,
            transitions,
            schedule,
            filter_window,
        })
    }

    pub fn horizon(&self) -> usize {
        self.scenario.weights.horizon
    }

    pub fn tail(&self) -> usize {
        self.scenario.seq.tail
    }
}

/// How the controller turns its estimate into a sequence.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// `U_k = L[k][θ_{k-1}] E{ξ_k | I_k}` with the given gains.
    Gains(&'a GainSchedule),
    /// Always sends the default input: the open-loop baseline.
    DefaultInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: DVector<f64>,
    /// `E{x_k | I_k}` used by the controller at this step.
    pub x_hat: DVector<f64>,
    pub sequence: ControlSequence,
    pub u: DVector<f64>,
    pub theta: usize,
    /// Origins of the sequences delivered to the actuator at this step.
    pub ca_arrivals: Vec<usize>,
    /// Measurements delivered to the controller at this step.
    pub measurements: MeasurementSet,
    pub stage_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub terminal_state: DVector<f64>,
    pub terminal_cost: f64,
    pub total_cost: f64,
}

impl EpisodeTrace {
    pub fn thetas(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.theta).collect()
    }

    /// `ξ_k - E{ξ_k | I_k}` per step. `η_k` is known exactly to the
    /// controller, so only the plant block can be nonzero.
    pub fn estimation_errors(&self, eta_dim: usize) -> Vec<DVector<f64>> {
        self.steps
            .iter()
            .map(|s| {
                let n = s.x.len();
                let mut e = DVector::zeros(n + eta_dim);
                e.rows_mut(0, n).copy_from(&(&s.x - &s.x_hat));
                e
            })
            .collect()
    }

    /// Recomputes the total from the stored states and inputs.
    pub fn audit_total(&self, scenario: &Scenario) -> f64 {
        let w = &scenario.weights;
        self.steps
            .iter()
            .map(|s| stage_cost(&s.x, &s.u, w).expect("trace dimensions match"))
            .sum::<f64>()
            + terminal_cost(&self.terminal_state, w).expect("trace dimensions match")
    }

    /// One row per step, then a terminal row with empty input and mode.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let n = self.terminal_state.len();
        let m = self.steps.first().map_or(0, |s| s.u.len());
        let mut header = vec!["k".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend(["theta", "stage_cost", "ca_arrivals", "sc_arrivals"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        let join = |v: &[usize]| {
            v.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("|")
        };
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            row.extend(s.x.iter().map(f64::to_string));
            row.extend(s.u.iter().map(f64::to_string));
            row.push(s.theta.to_string());
            row.push(s.stage_cost.to_string());
            row.push(join(&s.ca_arrivals));
            row.push(join(&s.measurements.origins()));
            writeln!(out, "{}", row.join(","))?;
        }
        let mut row = vec![self.steps.len().to_string()];
        row.extend(self.terminal_state.iter().map(f64::to_string));
        row.extend(std::iter::repeat_n(String::new(), m + 1));
        row.push(self.terminal_cost.to_string());
        row.extend([String::new(), String::new()]);
        writeln!(out, "{}", row.join(","))
    }
}

/// Simulates one closed-loop episode over the horizon. Fully determined by
/// `(setup, controller, seed)`.
pub fn run_episode(
    setup: &Setup,
    controller: Controller<'_>,
    seed: u64,
) -> Result<EpisodeTrace, SimError> {
    let sc = &setup.scenario;
    let plant = &sc.plant;
    let horizon = setup.horizon();
    let tail = setup.tail();
    if let Controller::Gains(gains) = controller {
        if gains.horizon() != horizon || gains.tail != tail {
            return Err(SimError::ScheduleMismatch(format!(
                "schedule has horizon {} and tail {}, scenario has {} and {}",
                gains.horizon(),
                gains.tail,
                horizon,
                tail
            )));
        }
    }

    let mut rng_x0 = stream(seed, Stream::InitialState);
    let mut rng_w = stream(seed, Stream::Process);
    let mut rng_v = stream(seed, Stream::Measurement);
    let mut rng_ca = stream(seed, Stream::ControllerActuator);
    let mut rng_sc = stream(seed, Stream::SensorController);

    let mut x = &plant.x0_mean + gaussian(&setup.x0_root, &mut rng_x0);
    let mut estimator = EstimatorState::new(plant, &sc.seq, &setup.model, setup.filter_window);
    let mut ca_link: Transport<ControlSequence> = Transport::new();
    let mut sc_link: Transport<DVector<f64>> = Transport::new();
    let mut buffer = BufferState::new();
    let mut acks = AckChannel::new();
    let mut steps = Vec::with_capacity(horizon);
    let mut total = 0.0;

    for k in 0..horizon {
        let z = MeasurementSet::from_packets(k, sc_link.transport_step(k));

        if let Some(theta_prev) = acks.latest_at(k) {
            estimator.ingest_ack(theta_prev)?;
        }
        estimator.ingest_measurements(&z);
        let xi_hat = estimator.augmented_estimate(k)?;
        let theta_prev = acks.latest_at(k).unwrap_or(tail + 1);
        let sequence = match controller {
            Controller::Gains(gains) => control_sequence(gains, k, theta_prev, &xi_hat)?,
            Controller::DefaultInput => ControlSequence::constant(k, &sc.seq.u_default, tail + 1),
        };
        estimator.record_sent(sequence.clone())?;
        ca_link.send_sampled(k, sequence.clone(), &sc.ca, &mut rng_ca);

        let delivered = ca_link.transport_step(k);
        let ca_arrivals = delivered.iter().map(|p| p.sent_at).collect();
        buffer.receive(delivered.into_iter().map(|p| p.payload));
        let (u, theta) = buffer.actuate(k, &sc.seq.u_default, tail);
        acks.publish(k, theta);

        let cost = stage_cost(&x, &u, &sc.weights).expect("validated dimensions");
        total += cost;

        let w = gaussian(&setup.w_root, &mut rng_w);
        let x_next = &plant.A * &x + &plant.B * &u + w;
        if k + 1 < horizon {
            let v = gaussian(&setup.v_root, &mut rng_v);
            let y = &plant.C * &x_next + v;
            sc_link.send_sampled(k + 1, y, &sc.sc, &mut rng_sc);
        }

        steps.push(StepRecord {
            k,
            x: std::mem::replace(&mut x, x_next),
            x_hat: xi_hat.rows(0, plant.state_dim()).into_owned(),
            sequence,
            u,
            theta,
            ca_arrivals,
            measurements: z,
            stage_cost: cost,
        });
    }

    let terminal = terminal_cost(&x, &sc.weights).expect("validated dimensions");
    Ok(EpisodeTrace {
        steps,
        terminal_state: x,
        terminal_cost: terminal,
        total_cost: total + terminal,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub runs: usize,
    pub mean_cost: f64,
    /// Sample standard deviation over `sqrt(runs)`; zero for a single run.
    pub std_error: f64,
    pub costs: Vec<f64>,
}

impl McSummary {
    /// Summarises per-run costs, summed in run order.
    pub fn from_costs(costs: Vec<f64>) -> Self {
        let runs = costs.len();
        let mean = costs.iter().sum::<f64>() / runs as f64;
        let std_error = if runs > 1 {
            let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            (var / runs as f64).sqrt()
        } else {
            0.0
        };
        Self {
            runs,
            mean_cost: mean,
            std_error,
            costs,
        }
    }
}

fn episode_cost(setup: &Setup, controller: Controller<'_>, seed: u64) -> Result<f64, SimError> {
    run_episode(setup, controller, seed).map(|t| t.total_cost)
}

/// Runs `runs` episodes with seeds `base_seed + i`, one after another.
pub fn monte_carlo_serial(
    setup: &Setup,
    controller: Controller<'_>,
    runs: usize,
    base_seed: u64,
) -> Result<McSummary, SimError> {
    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    let costs = (0..runs as u64)
        .map(|i| episode_cost(setup, controller, base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(McSummary::from_costs(costs))
}

/// Same as [`monte_carlo_serial`] with episodes spread over the rayon pool.
/// Results are collected by run index, so the summary is bit-identical.
#[cfg(feature = "parallel")]
pub fn monte_carlo_parallel(
    setup: &Setup,
    controller: Controller<'_>,
    runs: usize,
    base_seed: u64,
) -> Result<McSummary, SimError> {
    use rayon::prelude::*;

    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    let costs = (0..runs as u64)
        .into_par_iter()
        .map(|i| episode_cost(setup, controller, base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(McSummary::from_costs(costs))
}

/// Parallel when the `parallel` feature is on, serial otherwise.
pub fn monte_carlo(
    setup: &Setup,
    controller: Controller<'_>,
    runs: usize,
    base_seed: u64,
) -> Result<McSummary, SimError> {
    #[cfg(feature = "parallel")]
    {
        monte_carlo_parallel(setup, controller, runs, base_seed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        monte_carlo_serial(setup, controller, runs, base_seed)
    }
}

/// Expected cost of running `gains` on the augmented model with the state
/// measured exactly and instantly, computed by enumerating every mode path.
///
/// Along a path the augmented state stays Gaussian, so each stage cost is
/// `μ' S μ + tr(S Σ)` and the moments propagate through the closed-loop
/// matrix `Ã_θ + B̃_θ L[k][θ_{k-1}]`. Paths start from the default-filled
/// buffer mode `N + 1`.
pub fn exact_expected_cost(setup: &Setup, gains: &GainSchedule) -> Result<f64, SimError> {
    let modes = setup.model.modes();
    let horizon = setup.horizon();
    let paths = (modes as f64).powi(horizon as i32);
    if paths > MAX_MODE_PATHS as f64 {
        return Err(SimError::InstanceTooLarge {
            paths,
            limit: MAX_MODE_PATHS,
        });
    }
    if gains.horizon() != horizon || gains.modes() != modes {
        return Err(SimError::ScheduleMismatch(
            "gain schedule does not fit the scenario".into(),
        ));
    }
    let plant = &setup.scenario.plant;
    let n = plant.state_dim();
    let d = setup.model.eta_dim();
    let mut mean = DVector::zeros(n + d);
    mean.rows_mut(0, n).copy_from(&plant.x0_mean);
    mean.rows_mut(n, d)
        .copy_from(&setup.model.layout.initial_eta(&setup.scenario.seq.u_default));
    let mut cov = DMatrix::zeros(n + d, n + d);
    cov.view_mut((0, 0), (n, n)).copy_from(&plant.x0_cov);

    Ok(path_cost(setup, gains, 0, modes - 1, 1.0, &mean, &cov))
}

fn expected_quadratic(weight: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    linalg::quad_form(weight, mean) + (weight * cov).trace()
}

fn path_cost(
    setup: &Setup,
    gains: &GainSchedule,
    k: usize,
    theta_prev: usize,
    prob: f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> f64 {
    let model = &setup.model;
    if k == setup.horizon() {
        return prob * expected_quadratic(&model.Q_tilde_terminal, mean, cov);
    }
    let gain = &gains.L[k][theta_prev];
    let mut total = 0.0;
    for theta in 0..model.modes() {
        let p = setup.transitions.p[(theta_prev, theta)];
        if p == 0.0 {
            continue;
        }
        let closed = &model.A_tilde[theta] + &model.B_tilde[theta] * gain;
        let weight = &model.Q_tilde[theta] + gain.transpose() * &model.R_tilde[theta] * gain;
        let stage = expected_quadratic(&weight, mean, cov);
        let next_mean = &closed * mean;
        let next_cov = &closed * cov * closed.transpose() + &model.W_tilde;
        total += prob * p * stage
            + path_cost(setup, gains, k + 1, theta, prob * p, &next_mean, &next_cov);
    }
    total
}

/// Row-normalised counts of observed mode transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFrequencies {
    pub counts: DMatrix<f64>,
    pub estimate: DMatrix<f64>,
    pub transitions: usize,
}

impl ThetaFrequencies {
    /// Number of transitions observed out of mode `i`.
    pub fn visits(&self, i: usize) -> f64 {
        self.counts.row(i).sum()
    }
}

/// Estimates the mode transition matrix from one or more `θ` sequences.
pub fn empirical_theta_frequencies<I, S>(traces: I, modes: usize) -> Result<ThetaFrequencies, SimError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[usize]>,
{
    let mut counts = DMatrix::zeros(modes, modes);
    let mut transitions = 0;
    for trace in traces {
        for pair in trace.as_ref().windows(2) {
            counts[(pair[0], pair[1])] += 1.0;
            transitions += 1;
        }
    }
    if transitions < MIN_TRANSITIONS {
        return Err(SimError::InsufficientData {
            found: transitions,
            required: MIN_TRANSITIONS,
        });
    }
    let mut estimate = counts.clone();
    for mut row in estimate.row_iter_mut() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        }
    }
    Ok(ThetaFrequencies {
        counts,
        estimate,
        transitions,
    })
}

/// Buffer ages produced by the real transport and actuator over `steps`
/// steps, with a fresh sequence sent every step. No plant is involved.
pub fn simulate_modes(ca: &DelayPmf, tail: usize, steps: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Stream::ControllerActuator);
    let mut link: Transport<ControlSequence> = Transport::new();
    let mut buffer = BufferState::new();
    let ud = DVector::zeros(1);
    (0..steps)
        .map(|k| {
            link.send_sampled(k, ControlSequence::constant(k, &ud, tail + 1), ca, &mut rng);
            buffer.receive(link.transport_step(k).into_iter().map(|p| p.payload));
            buffer.actuate(k, &ud, tail).1
        })
        .collect()
}
