//! Experiment configuration files and cost-versus-sequence-length sweeps.
//!
//! A configuration is TOML with four sections:
//!
//! ```toml
//! [plant]
//! benchmark = "double_integrator"   # or inline A, B, C, W, V, x0_mean, x0_cov
//!
//! [cost]                            # optional with a benchmark plant
//! horizon = 40
//!
//! [network]
//! name = "A-like"
//! ca = { fixture = "A-like" }
//! sc = { probs = [0.7, 0.2], loss = 0.1 }
//!
//! [experiment]
//! sequence_lengths = [0, 1, 2, 3]
//! runs = 500
//! seed = 1
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::estimator::DEFAULT_FILTER_WINDOW;
use crate::model::{
    double_integrator_benchmark, validate, CostWeights, DelayPmf, PlantModel, Scenario,
    SequenceConfig,
};
use crate::network::fixtures;
use crate::sim::{monte_carlo, Controller, McSummary, Setup};
use crate::CliError;

pub const CSV_HEADER: &str = "network,N,runs,K,mean_cost,std_error,seed";

const BENCHMARK_NAME: &str = "double_integrator";

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    plant: Option<RawPlant>,
    cost: Option<RawCost>,
    network: Option<RawNetwork>,
    experiment: Option<RawExperiment>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    benchmark: Option<String>,
    #[serde(rename = "A")]
    a: Option<Rows>,
    #[serde(rename = "B")]
    b: Option<Rows>,
    #[serde(rename = "C")]
    c: Option<Rows>,
    #[serde(rename = "W")]
    w: Option<Rows>,
    #[serde(rename = "V")]
    v: Option<Rows>,
    x0_mean: Option<Vec<f64>>,
    x0_cov: Option<Rows>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    #[serde(rename = "Q")]
    q: Option<Rows>,
    #[serde(rename = "R")]
    r: Option<Rows>,
    #[serde(rename = "Q_terminal")]
    q_terminal: Option<Rows>,
    horizon: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    name: Option<String>,
    ca: Option<RawPmf>,
    sc: Option<RawPmf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPmf {
    fixture: Option<String>,
    probs: Option<Vec<f64>>,
    loss: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    sequence_lengths: Option<Vec<usize>>,
    runs: Option<usize>,
    seed: Option<u64>,
    filter_window: Option<usize>,
    output: Option<PathBuf>,
    u_default: Option<Vec<f64>>,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantModel,
    pub weights: CostWeights,
    pub network: String,
    pub ca: DelayPmf,
    pub sc: DelayPmf,
    pub sequence_lengths: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub filter_window: usize,
    pub output: Option<PathBuf>,
    pub u_default: DVector<f64>,
}

impl ExperimentConfig {
    /// One validated scenario per swept sequence length.
    pub fn cells(&self) -> Result<Vec<Scenario>, CliError> {
        self.sequence_lengths
            .iter()
            .map(|&tail| self.scenario(tail))
            .collect()
    }

    pub fn scenario(&self, tail: usize) -> Result<Scenario, CliError> {
        Ok(validate(
            self.plant.clone(),
            self.weights.clone(),
            self.ca.clone(),
            self.sc.clone(),
            SequenceConfig::new(tail, self.u_default.clone()),
        )?)
    }
}

fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Invalid(format!(
            "{field} must be a nonempty list of equal-length rows"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn pick(
    field: &str,
    given: &Option<Rows>,
    fallback: Option<&DMatrix<f64>>,
    section: &str,
) -> Result<DMatrix<f64>, CliError> {
    match (given, fallback) {
        (Some(rows), _) => matrix(field, rows),
        (None, Some(m)) => Ok(m.clone()),
        (None, None) => Err(CliError::MissingKey(format!("{section}.{field}"))),
    }
}

fn resolve_plant(raw: &RawPlant) -> Result<(PlantModel, Option<CostWeights>), CliError> {
    let base = match raw.benchmark.as_deref() {
        None => None,
        Some(BENCHMARK_NAME) => Some(double_integrator_benchmark()),
        Some(other) => {
            return Err(CliError::Invalid(format!(
                "unknown benchmark \"{other}\" (known: {BENCHMARK_NAME})"
            )))
        }
    };
    let bp = base.as_ref().map(|b| &b.0);
    let x0_mean = match (&raw.x0_mean, bp) {
        (Some(v), _) => DVector::from_vec(v.clone()),
        (None, Some(p)) => p.x0_mean.clone(),
        (None, None) => return Err(CliError::MissingKey("plant.x0_mean".into())),
    };
    let plant = PlantModel {
        A: pick("A", &raw.a, bp.map(|p| &p.A), "plant")?,
        B: pick("B", &raw.b, bp.map(|p| &p.B), "plant")?,
        C: pick("C", &raw.c, bp.map(|p| &p.C), "plant")?,
        W: pick("W", &raw.w, bp.map(|p| &p.W), "plant")?,
        V: pick("V", &raw.v, bp.map(|p| &p.V), "plant")?,
        x0_mean,
        x0_cov: pick("x0_cov", &raw.x0_cov, bp.map(|p| &p.x0_cov), "plant")?,
    };
    Ok((plant, base.map(|b| b.1)))
}

fn resolve_cost(raw: Option<&RawCost>, base: Option<CostWeights>) -> Result<CostWeights, CliError> {
    let Some(raw) = raw else {
        return base.ok_or(CliError::MissingSection("cost"));
    };
    let b = base.as_ref();
    let q = pick("Q", &raw.q, b.map(|w| &w.Q), "cost")?;
    // Without a benchmark the terminal weight defaults to the stage weight.
    let q_terminal = match &raw.q_terminal {
        Some(rows) => matrix("Q_terminal", rows)?,
        None => b.map_or_else(|| q.clone(), |w| w.Q_terminal.clone()),
    };
    let horizon = raw
        .horizon
        .or(b.map(|w| w.horizon))
        .ok_or_else(|| CliError::MissingKey("cost.horizon".into()))?;
    Ok(CostWeights {
        R: pick("R", &raw.r, b.map(|w| &w.R), "cost")?,
        Q: q,
        Q_terminal: q_terminal,
        horizon,
    })
}

fn resolve_pmf(raw: Option<&RawPmf>, link: &str) -> Result<(DelayPmf, Option<String>), CliError> {
    let raw = raw.ok_or_else(|| CliError::MissingKey(format!("network.{link}")))?;
    if raw.fixture.is_some() && (raw.probs.is_some() || raw.loss.is_some()) {
        return Err(CliError::Invalid(format!(
            "network.{link}: give either a fixture or probs and loss"
        )));
    }
    match (&raw.fixture, &raw.probs) {
        (Some(name), _) => fixtures::by_name(name)
            .map(|pmf| (pmf, Some(name.clone())))
            .ok_or_else(|| CliError::UnknownFixture(name.clone())),
        (None, Some(probs)) => Ok((DelayPmf::new(probs.clone(), raw.loss.unwrap_or(0.0)), None)),
        (None, None) => Err(CliError::MissingKey(format!(
            "network.{link}.fixture or network.{link}.probs"
        ))),
    }
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let raw_plant = raw.plant.as_ref().ok_or(CliError::MissingSection("plant"))?;
    let raw_network = raw.network.as_ref().ok_or(CliError::MissingSection("network"))?;
    let raw_exp = raw
        .experiment
        .as_ref()
        .ok_or(CliError::MissingSection("experiment"))?;

    let (plant, base_weights) = resolve_plant(raw_plant)?;
    let weights = resolve_cost(raw.cost.as_ref(), base_weights)?;
    let (ca, ca_fixture) = resolve_pmf(raw_network.ca.as_ref(), "ca")?;
    let (sc, _) = resolve_pmf(raw_network.sc.as_ref(), "sc")?;
    let network = raw_network
        .name
        .clone()
        .or(ca_fixture)
        .unwrap_or_else(|| "custom".into());
    if network.contains([',', '\n', '"']) {
        return Err(CliError::Invalid(format!(
            "network name {network:?} may not contain commas, quotes or newlines"
        )));
    }

    let sequence_lengths = raw_exp
        .sequence_lengths
        .clone()
        .ok_or_else(|| CliError::MissingKey("experiment.sequence_lengths".into()))?;
    if sequence_lengths.is_empty() {
        return Err(CliError::Invalid("experiment.sequence_lengths is empty".into()));
    }
    let runs = raw_exp
        .runs
        .ok_or_else(|| CliError::MissingKey("experiment.runs".into()))?;
    if runs == 0 {
        return Err(CliError::Invalid("experiment.runs must be at least 1".into()));
    }
    let u_default = raw_exp
        .u_default
        .clone()
        .map_or_else(|| DVector::zeros(plant.B.ncols()), DVector::from_vec);

    let config = ExperimentConfig {
        plant,
        weights,
        network,
        ca,
        sc,
        sequence_lengths,
        runs,
        seed: raw_exp.seed.unwrap_or(0),
        filter_window: raw_exp.filter_window.unwrap_or(DEFAULT_FILTER_WINDOW),
        output: raw_exp.output.clone(),
        u_default,
    };
    config.scenario(0)?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub network: String,
    pub tail: usize,
    pub runs: usize,
    pub horizon: usize,
    pub mean_cost: f64,
    pub std_error: f64,
    pub seed: u64,
}

impl fmt::Display for SweepRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.network,
            self.tail,
            self.runs,
            self.horizon,
            self.mean_cost,
            self.std_error,
            self.seed
        )
    }
}

/// One finished sweep cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub setup: Setup,
    pub summary: McSummary,
    pub row: SweepRow,
}

/// Builds the model and gains for sequence length `tail` and runs the batch.
pub fn run_cell(config: &ExperimentConfig, tail: usize) -> Result<CellResult, CliError> {
    let setup = Setup::new(config.scenario(tail)?, config.filter_window)?;
    let summary = monte_carlo(&setup, Controller::Gains(&setup.schedule), config.runs, config.seed)?;
    let row = SweepRow {
        network: config.network.clone(),
        tail,
        runs: summary.runs,
        horizon: setup.horizon(),
        mean_cost: summary.mean_cost,
        std_error: summary.std_error,
        seed: config.seed,
    };
    Ok(CellResult {
        setup,
        summary,
        row,
    })
}

/// Runs every cell in sweep order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>, CliError> {
    config
        .sequence_lengths
        .iter()
        .map(|&tail| run_cell(config, tail).map(|c| c.row))
        .collect()
}

pub fn write_rows<W: Write>(out: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Reads back a results CSV written by [`write_rows`].
pub fn parse_rows(text: &str) -> Result<Vec<SweepRow>, CliError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, CSV_HEADER)) => {}
        _ => {
            return Err(CliError::Csv {
                line: 1,
                message: format!("expected header {CSV_HEADER}"),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let bad = |message: String| CliError::Csv {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(bad(format!("expected 7 fields, found {}", fields.len())));
            }
            let num = |j: usize| fields[j].parse::<f64>().map_err(|e| bad(e.to_string()));
            let int = |j: usize| fields[j].parse::<u64>().map_err(|e| bad(e.to_string()));
            Ok(SweepRow {
                network: fields[0].to_string(),
                tail: int(1)? as usize,
                runs: int(2)? as usize,
                horizon: int(3)? as usize,
                mean_cost: num(4)?,
                std_error: num(5)?,
                seed: int(6)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[plant]
benchmark = "double_integrator"

[network]
ca = { fixture = "A-like" }
sc = { probs = [0.7, 0.2], loss = 0.1 }

[experiment]
sequence_lengths = [0, 1, 2, 3]
runs = 3
seed = 9
"#;

    #[test]
    fn minimal_config_resolves_benchmark() {
        let c = parse_config_str(MINIMAL).unwrap();
        let (plant, weights, _) = double_integrator_benchmark();
        assert_eq!(c.plant, plant);
        assert_eq!(c.weights, weights);
        assert_eq!(c.network, "A-like");
        assert_eq!(c.ca, fixtures::a_like());
        assert_eq!(c.sc, DelayPmf::new(vec![0.7, 0.2], 0.1));
        assert_eq!(c.filter_window, DEFAULT_FILTER_WINDOW);
        assert_eq!(c.cells().unwrap().len(), 4);
    }

    #[test]
    fn empty_file_names_the_missing_section() {
        let err = parse_config_str("").unwrap_err();
        assert_eq!(err.to_string(), "missing required section: plant");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replace("runs = 3", "runs = 3\nrepeats = 2");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("repeats"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_config_str("[plant]\nbenchmark = \n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn validation_errors_come_from_the_model() {
        let text = MINIMAL.replace("loss = 0.1", "loss = 0.0");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("sc: PMF mass 0.9"), "{err}");
        let text = MINIMAL.replace("benchmark = \"double_integrator\"", "benchmark = \"double_integrator\"\nV = [[0.0]]");
        assert!(parse_config_str(&text).is_err());
    }

    #[test]
    fn unknown_fixture_and_empty_sweep() {
        let text = MINIMAL.replace("\"A-like\"", "\"C-like\"");
        assert_eq!(parse_config_str(&text).unwrap_err(), CliError::UnknownFixture("C-like".into()));
        let text = MINIMAL.replace("[0, 1, 2, 3]", "[]");
        assert!(matches!(parse_config_str(&text), Err(CliError::Invalid(_))));
    }

    #[test]
    fn fixture_with_inline_probs_is_ambiguous() {
        let text = MINIMAL.replace("fixture = \"A-like\"", "fixture = \"A-like\", loss = 0.5");
        assert!(matches!(parse_config_str(&text), Err(CliError::Invalid(_))));
    }

    #[test]
    fn inline_plant_needs_cost_section() {
        let text = r#"
[plant]
A = [[0.5]]
B = [[1.0]]
C = [[1.0]]
W = [[0.1]]
V = [[0.1]]
x0_mean = [1.0]
x0_cov = [[0.0]]

[network]
name = "custom link"
ca = { probs = [1.0] }
sc = { probs = [1.0] }

[experiment]
sequence_lengths = [1]
runs = 2
"#;
        assert_eq!(parse_config_str(text).unwrap_err(), CliError::MissingSection("cost"));
        let with_cost = format!("{text}\n[cost]\nQ = [[1.0]]\nR = [[2.0]]\nhorizon = 5\n");
        let c = parse_config_str(&with_cost).unwrap();
        assert_eq!(c.weights.Q_terminal, c.weights.Q);
        assert_eq!(c.network, "custom link");
    }

    #[test]
    fn sweep_rows_round_trip() {
        let c = parse_config_str(MINIMAL).unwrap();
        let rows = run_sweep(&c).unwrap();
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("network,N,runs,K,mean_cost,std_error,seed\nA-like,0,3,40,"));
        assert_eq!(parse_rows(&text).unwrap(), rows);
    }

    #[test]
    fn single_run_single_step_row_matches_episode() {
        let text = MINIMAL
            .replace("[0, 1, 2, 3]", "[1]")
            .replace("runs = 3", "runs = 1")
            + "\n[cost]\nhorizon = 1\n";
        let c = parse_config_str(&text).unwrap();
        let cell = run_cell(&c, 1).unwrap();
        let t = crate::sim::run_episode(&cell.setup, Controller::Gains(&cell.setup.schedule), 9).unwrap();
        assert_eq!(cell.row.mean_cost, t.total_cost);
        assert_eq!(cell.row.horizon, 1);
    }
}
