//! The five commands. Each builds its complete output in memory and emits it
//! in a fixed order, so files are byte-identical for equal inputs.

use catdisp_core::classification::{adaptive_verdict, classify_varying_numeric};
use catdisp_core::oracle::{run_verification, Perturbation};
use catdisp_core::simulator::stream;
use catdisp_core::{
    classify_random, classify_varying_analytic, log_mean_trace, simulate as run_simulation, DispersalKind, DriftMethod,
    Environment, EnvironmentFamily, EnvironmentProcess, Error, SimulationConfig, SimulationResult, Tolerance, Verdict,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::format::{self, number};
use crate::scenario::{ClassifyMethod, GridPoint, Scenario};
use crate::{CliError, Sink};

/// Generation index of the per-point classification stream; replicate
/// streams use the index as generation, the environment stream `u64::MAX`.
pub const CLASSIFY_STREAM: u64 = u64::MAX - 1;
pub const ORDERING_SLACK: f64 = 1e-10;

const MEAN_HEADER: [&str; 9] = ["env_index", "theta", "lambda", "p", "d", "mu1", "mu2", "mu3", "mu4"];

fn csv_bytes<R: AsRef<[String]>>(header: &[&str], rows: &[R]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r.as_ref()).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Environments listed by the mean table for one grid point.
fn table_environments(scenario: &Scenario, process: &EnvironmentProcess) -> Result<Vec<Environment>, CliError> {
    let generations = scenario.mean_table.map(|m| m.generations);
    match &process.family {
        EnvironmentFamily::Iid { marginal } => {
            let atoms = marginal.atoms().ok_or_else(|| {
                CliError::BadInput("mean table needs fixed parameters in an i.i.d. product marginal".into())
            })?;
            Ok(atoms.iter().map(|(e, _)| process.env(e.theta, e.lambda, e.p, e.d)).collect::<Result<_, _>>()?)
        }
        family if process.is_deterministic() => {
            let default = match family {
                EnvironmentFamily::ExplicitSequence { steps } => steps.len() as u64,
                _ => 1,
            };
            Ok((0..generations.unwrap_or(default)).map(|n| process.deterministic_at(n)).collect::<Result<_, _>>()?)
        }
        _ => Err(CliError::BadInput("mean table needs a deterministic or finite i.i.d. environment family".into())),
    }
}

pub fn mean_table(scenario: &Scenario, sink: &mut Sink) -> Result<(), CliError> {
    let tol = Tolerance::default();
    let mut envs = Vec::new();
    for point in scenario.grid()? {
        envs.extend(table_environments(scenario, &point.process)?);
    }
    let means: Vec<Vec<_>> = envs
        .par_iter()
        .map(|env| DispersalKind::ALL.iter().map(|&m| Ok(env.offspring_mean(m, &tol)?.value)).collect::<Result<_, Error>>())
        .collect::<Result<_, _>>()?;
    let mut violations = Vec::new();
    let rows: Vec<Vec<String>> = envs
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(i, (env, mu))| {
            if mu.windows(2).any(|w| !(w[1] <= w[0] + ORDERING_SLACK)) {
                violations.push(i);
            }
            let mut row = vec![i.to_string(), number(env.theta), number(env.lambda), number(env.p), env.d.to_string()];
            row.extend(mu.iter().map(|&m| format::extended(m)));
            row
        })
        .collect();
    sink.emit("mean_table.csv", &csv_bytes(&MEAN_HEADER, &rows), true)?;
    if !violations.is_empty() {
        return Err(CliError::CheckFailed(format!("mean ordering violated at env_index {violations:?}")));
    }
    Ok(())
}

/// One line of the verdict stream.
#[derive(Debug, Serialize)]
pub struct VerdictRecord<'a> {
    pub scenario: &'a str,
    pub point: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub mechanism: DispersalKind,
    pub verdict: Verdict,
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Usage(_))
}

/// Verdict for one grid point and mechanism under the scenario's method.
pub fn classify_point(scenario: &Scenario, point: &GridPoint, mech: DispersalKind, seed: u64) -> Result<Verdict, Error> {
    let opts = &scenario.classification;
    let tol = Tolerance::default();
    let rng = || stream(seed, point.index as u64, CLASSIFY_STREAM);
    let process = &point.process;
    let numeric_varying = || -> Result<Verdict, Error> {
        let trace = log_mean_trace(process, mech, opts.horizon, rng(), &tol)?;
        Ok(classify_varying_numeric(&trace, opts.tol))
    };
    let adaptive_full = mech == DispersalKind::Full && matches!(process.family, EnvironmentFamily::AdaptiveSurvival { .. });
    let numeric_random = || -> Result<Verdict, Error> {
        if adaptive_full {
            adaptive_verdict(process, opts.horizon, opts.burn_in, rng())
        } else {
            classify_random(process, mech, DriftMethod::ErgodicAverage { path_len: opts.horizon }, rng(), &tol)
        }
    };
    match (process.is_deterministic(), opts.method) {
        (true, ClassifyMethod::Analytic) => classify_varying_analytic(process, mech, &tol),
        (true, ClassifyMethod::Numeric) => numeric_varying(),
        (true, ClassifyMethod::Auto) => match classify_varying_analytic(process, mech, &tol) {
            Err(e) if is_usage(&e) => numeric_varying(),
            other => other,
        },
        (false, ClassifyMethod::Analytic) => classify_random(process, mech, DriftMethod::ClosedForm, rng(), &tol),
        (false, ClassifyMethod::Numeric) => numeric_random(),
        (false, ClassifyMethod::Auto) => match classify_random(process, mech, DriftMethod::ClosedForm, rng(), &tol) {
            Err(e) if is_usage(&e) => numeric_random(),
            Ok(v) if v.outcome == catdisp_core::Outcome::CriticalIndeterminate && adaptive_full => numeric_random(),
            other => other,
        },
    }
}

fn verdict_lines(scenario: &Scenario, grid: &[GridPoint], seed: u64) -> Result<(Vec<u8>, Vec<Verdict>), CliError> {
    let mechs = scenario.mechanism.kinds();
    let jobs: Vec<(&GridPoint, DispersalKind)> = grid.iter().flat_map(|p| mechs.iter().map(move |&m| (p, m))).collect();
    let verdicts = jobs
        .par_iter()
        .map(|(p, m)| classify_point(scenario, p, *m, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let parameter = scenario.sweep.as_ref().map(|s| s.parameter.as_str());
    let mut out = Vec::new();
    for ((point, mech), verdict) in jobs.iter().zip(&verdicts) {
        let record = VerdictRecord {
            scenario: &scenario.name,
            point: point.index,
            parameter,
            value: point.value,
            mechanism: *mech,
            verdict: verdict.clone(),
        };
        serde_json::to_writer(&mut out, &record).expect("verdicts serialize");
        out.push(b'\n');
    }
    Ok((out, verdicts))
}

pub fn classify(scenario: &Scenario, seed: u64, sink: &mut Sink) -> Result<(), CliError> {
    let grid = scenario.grid()?;
    let (lines, _) = verdict_lines(scenario, &grid, seed)?;
    sink.emit("verdicts.jsonl", &lines, true)
}

fn run_point(scenario: &Scenario, point: &GridPoint, mech: DispersalKind, seed: u64) -> Result<SimulationResult, CliError> {
    let sim = &scenario.simulation;
    let config = SimulationConfig {
        generations: sim.generations,
        replicates: sim.replicates,
        survival_cap: sim.survival_cap,
        master_seed: seed,
        mechanism: mech,
        process: point.process.clone(),
    };
    Ok(run_simulation(&config)?)
}

fn file_stem(point: &GridPoint, grid_len: usize, mech: DispersalKind) -> String {
    if grid_len == 1 {
        mech.label().to_string()
    } else {
        format!("{}_{}", point.index, mech.label())
    }
}

pub fn simulate(scenario: &Scenario, seed: u64, sink: &mut Sink) -> Result<(), CliError> {
    let grid = scenario.grid()?;
    sink.note(&format!("master_seed {seed}"))?;
    for point in &grid {
        for mech in scenario.mechanism.kinds() {
            let result = run_point(scenario, point, mech, seed)?;
            let stem = file_stem(point, grid.len(), mech);
            let mut summary = serde_json::to_vec_pretty(&result).expect("summary serializes");
            summary.push(b'\n');
            sink.emit(&format!("simulation_{stem}.json"), &summary, true)?;
            let rows: Vec<[String; 4]> = result.records.iter().map(format::replicate_row).collect();
            sink.emit(&format!("replicates_{stem}.csv"), &csv_bytes(&format::REPLICATE_HEADER, &rows), false)?;
        }
    }
    Ok(())
}

const SCAN_HEADER: [&str; 10] =
    ["point", "value", "mechanism", "outcome", "basis", "survivors", "replicates", "survival_frequency", "ci_low", "ci_high"];

pub fn scan(scenario: &Scenario, seed: u64, sink: &mut Sink) -> Result<(), CliError> {
    let grid = scenario.grid()?;
    let (lines, verdicts) = verdict_lines(scenario, &grid, seed)?;
    let mechs = scenario.mechanism.kinds();
    let mut rows = Vec::new();
    let mut verdicts = verdicts.iter();
    for point in &grid {
        for &mech in &mechs {
            let verdict = verdicts.next().expect("one verdict per job");
            let result = run_point(scenario, point, mech, seed)?;
            rows.push(vec![
                point.index.to_string(),
                point.value.map(number).unwrap_or_default(),
                mech.label().to_string(),
                format!("{:?}", verdict.outcome),
                verdict.theorem().to_string(),
                result.survivors.to_string(),
                result.replicates.to_string(),
                number(result.survival_frequency),
                number(result.confidence_interval.0),
                number(result.confidence_interval.1),
            ]);
        }
    }
    sink.emit("verdicts.jsonl", &lines, false)?;
    sink.emit("scan.csv", &csv_bytes(&SCAN_HEADER, &rows), true)
}

pub fn verify(perturbation: Option<Perturbation>, sink: &mut Sink) -> Result<(), CliError> {
    let report = run_verification(perturbation)?;
    let rows: Vec<Vec<String>> = report
        .groups
        .iter()
        .map(|g| {
            let status = if g.passed() { "PASS" } else { "FAIL" };
            let first = g.failures.first().cloned().unwrap_or_default();
            vec![g.name.clone(), g.checks.to_string(), g.failures.len().to_string(), status.into(), first]
        })
        .collect();
    sink.emit("verify.csv", &csv_bytes(&["group", "checks", "failures", "status", "first_failure"], &rows), true)?;
    if !report.passed() {
        let failed: Vec<_> = report.groups.iter().filter(|g| !g.passed()).map(|g| g.name.as_str()).collect();
        return Err(CliError::CheckFailed(format!("oracle mismatch in {}", failed.join(", "))));
    }
    Ok(())
}
