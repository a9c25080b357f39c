//! Subcommand implementations. All files are written after the computation
//! finishes, so a failed command leaves no partial outputs behind.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use lfd_core::error::LfdError;
use lfd_core::eval::{
    dual_objective, evaluation_rows, exact_size_power, write_diagnostics_csv, AverageTestProbe,
    DiagnosticRow, EvalBackend, TestEvaluation,
};
use lfd_core::model::{gaussian_location_problem, validate, DiscreteProblem, TestingProblem};
use lfd_core::nptest::np_test;
use lfd_core::oracle::{
    baseline_schedule, concentration_harness, dual_grid_oracle, gaussian_oracle,
    reference_solution, ConcentrationSpec, OracleSolution, GRID_ORACLE_MAX_NULLS,
};
use lfd_core::rng::{domain, CounterStream};
use lfd_core::smd::{run_observed, run_randomized_epoch, SmdConfig, SmdOutput};

use crate::config::{ProblemSpec, RunConfig};

/// Exit-code class of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(anyhow::Error),
    /// Anything that went wrong while computing or writing (exit 2).
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<LfdError> for Failure {
    fn from(e: LfdError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

pub fn build_problem(cfg: &RunConfig) -> CmdResult<TestingProblem> {
    Ok(match cfg.problem_spec() {
        ProblemSpec::Gaussian { m, lo, hi, theta1 } => {
            gaussian_location_problem(m, lo, hi, theta1, cfg.alpha)?
        }
        ProblemSpec::Discrete { csv } => DiscreteProblem::load_csv(&csv)
            .with_context(|| format!("loading {}", csv.display()))?
            .into_problem(cfg.alpha)?,
    })
}

/// Solver settings. With a single null and no explicit `T`, the epoch count
/// comes from the radius-adjusted schedule since the plain one is empty.
pub fn smd_config(cfg: &RunConfig, problem: &TestingProblem) -> CmdResult<SmdConfig> {
    let mut c = SmdConfig::new(cfg.alpha, cfg.epsilon);
    c.n_draws = cfg.n_draws;
    c.omega = cfg.omega;
    c.seed = cfg.seed;
    c.t_override = cfg.t;
    c.eta_override = cfg.eta;
    c.record_trace = cfg.record_trace;
    c.eval_grid = match problem.discrete_table() {
        Some(table) => table.atoms().to_vec(),
        None => cfg.eval_grid.map(|g| g.points()).unwrap_or_default(),
    };
    if problem.num_nulls() < 2 && c.t_override.is_none() {
        c.t_override = Some(baseline_schedule(cfg.alpha, cfg.epsilon, problem.num_nulls())?.epochs);
    }
    c.validate().map_err(|e| Failure::Usage(e.into()))?;
    Ok(c)
}

fn oracle_for(cfg: &RunConfig, problem: &TestingProblem) -> CmdResult<OracleSolution> {
    match (cfg.problem_spec(), problem.discrete_table()) {
        (ProblemSpec::Gaussian { theta1, .. }, _) => Ok(gaussian_oracle(theta1, cfg.alpha)?),
        (ProblemSpec::Discrete { .. }, Some(table)) => {
            let m = table.num_nulls();
            match cfg.grid_points {
                Some(points) if (2..=GRID_ORACLE_MAX_NULLS).contains(&m) => {
                    Ok(dual_grid_oracle(table, cfg.alpha, points)?)
                }
                _ => Ok(reference_solution(table, cfg.alpha)?),
            }
        }
        (ProblemSpec::Discrete { .. }, None) => {
            Err(anyhow!("discrete problem without a table").into())
        }
    }
}

/// Collected file contents, written in one go.
struct Outputs {
    files: Vec<(&'static str, String)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &'static str, contents: String) {
        self.files.push((name, contents));
    }

    fn write(self, dir: &Path) -> CmdResult {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, contents) in self.files {
            let path = dir.join(name);
            std::fs::write(&path, contents)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn diagnostics_text(rows: &[DiagnosticRow]) -> CmdResult<String> {
    let mut buf = Vec::new();
    write_diagnostics_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).map_err(|e| anyhow!(e))?)
}

/// Seeds for the evaluation draws, kept apart from the solver's streams.
fn evaluation_seeds(seed: u64) -> (u64, u64) {
    let s = CounterStream::new(seed);
    (
        s.derive_seed(domain::EVALUATION, 0),
        s.derive_seed(domain::AVERAGE_TEST, 0),
    )
}

/// What `run` computed, for the summary line and for tests.
pub struct RunReport {
    pub output: SmdOutput,
    pub f_value: f64,
    pub f_std_error: f64,
    pub avg_test: TestEvaluation,
    pub v_bar: Option<f64>,
}

pub fn cmd_run(cfg: &RunConfig) -> CmdResult<RunReport> {
    let problem = build_problem(cfg)?;
    let config = smd_config(cfg, &problem)?;
    let (f_seed, probe_seed) = evaluation_seeds(cfg.seed);

    let (output, avg_test, dual) = match problem.discrete_table() {
        Some(table) => {
            let output = run_observed(&problem, &config, &mut ())?;
            let bars: Vec<f64> = output.avg_test_on_grid.iter().map(|(_, v)| *v).collect();
            let avg = exact_size_power(&bars, table)?;
            let dual = dual_objective(&output.kappa_bar, &problem, EvalBackend::Exact)?;
            (output, avg, dual)
        }
        None => {
            let epochs = config.resolve_schedule(problem.num_nulls())?.epochs;
            let mut probe =
                AverageTestProbe::new(problem.num_nulls(), epochs, cfg.eval_draws, probe_seed)?;
            let output = run_observed(&problem, &config, &mut probe)?;
            let avg = probe.evaluation()?;
            let backend = EvalBackend::MonteCarlo {
                draws: cfg.eval_draws,
                seed: f_seed,
            };
            let dual = dual_objective(&output.kappa_bar, &problem, backend)?;
            (output, avg, dual)
        }
    };

    let v_bar = if cfg.run_oracle {
        Some(oracle_for(cfg, &problem)?.v_bar)
    } else {
        None
    };

    let mut randomized = String::from("y,realized_epoch,reject\n");
    for (i, &y) in cfg.randomized_epoch_y.iter().enumerate() {
        let mut rng = CounterStream::new(cfg.seed).substream(domain::EPOCH_DRAW, i as u64, 0);
        let d = run_randomized_epoch(&problem, &config, y, &mut rng)?;
        writeln!(randomized, "{},{},{}", y, d.realized_epoch, d.reject as u8).unwrap();
    }

    let mut out = Outputs::new();

    let mut lambda = String::from("index,theta_or_atom,weight\n");
    for (i, (label, w)) in problem
        .null_labels()
        .iter()
        .zip(&output.lambda.weights)
        .enumerate()
    {
        writeln!(lambda, "{},{},{}", i + 1, csv_field(label), w).unwrap();
    }
    out.add("lambda.csv", lambda);

    let s = &output.schedule;
    out.add(
        "schedule.txt",
        format!(
            "T={}\neta={}\nguarantee_out_of_range={}\n",
            s.epochs, s.eta, s.guarantee_out_of_range
        ),
    );

    let draws = if avg_test.is_exact() {
        0
    } else {
        cfg.eval_draws
    };
    let mut rows = vec![
        DiagnosticRow::new("f_value", dual.f_value, dual.std_error, draws),
        DiagnosticRow::new("excess_type1_term", output.excess_type1_term, 0.0, 0),
    ];
    rows.extend(evaluation_rows("avg_test", &avg_test));
    if let Some(v) = v_bar {
        rows.push(DiagnosticRow::new("v_bar", v, 0.0, 0));
        rows.push(DiagnosticRow::new(
            "gap",
            dual.f_value - v,
            dual.std_error,
            draws,
        ));
    }
    out.add("diagnostics.csv", diagnostics_text(&rows)?);

    let mut avg_csv = String::from("y,avg_test,np_test_kappa_bar\n");
    for &(y, v) in &output.avg_test_on_grid {
        let blue = np_test(&output.kappa_bar, y, &problem)?;
        writeln!(avg_csv, "{},{},{}", y, v, blue as u8).unwrap();
    }
    out.add("avg_test.csv", avg_csv);

    if !cfg.randomized_epoch_y.is_empty() {
        out.add("randomized.csv", randomized);
    }
    if let Some(trace) = &output.trace {
        let mut k = Vec::new();
        trace.write_kappa_csv(&mut k)?;
        out.add("trace.csv", String::from_utf8(k).map_err(|e| anyhow!(e))?);
        let mut b = Vec::new();
        trace.write_grid_bits_csv(&mut b)?;
        out.add(
            "grid_bits.csv",
            String::from_utf8(b).map_err(|e| anyhow!(e))?,
        );
    }
    out.add("resolved_config.toml", cfg.to_toml()?);
    out.write(&cfg.output_dir)?;

    Ok(RunReport {
        f_value: dual.f_value,
        f_std_error: dual.std_error,
        avg_test,
        v_bar,
        output,
    })
}

pub fn cmd_oracle(cfg: &RunConfig) -> CmdResult<OracleSolution> {
    let problem = build_problem(cfg)?;
    let sol = oracle_for(cfg, &problem)?;
    let mut out = Outputs::new();
    out.add(
        "oracle.csv",
        format!(
            "v_bar,method,certificate_gap\n{},{},{}\n",
            sol.v_bar,
            sol.method_tag.as_str(),
            sol.certificate_gap()
        ),
    );
    if let (Some(test), Some(table)) = (&sol.test_on_atoms, problem.discrete_table()) {
        let mut t = String::from("atom,test\n");
        for (a, v) in table.atoms().iter().zip(test) {
            writeln!(t, "{a},{v}").unwrap();
        }
        out.add("oracle_test.csv", t);
    }
    out.add("resolved_config.toml", cfg.to_toml()?);
    out.write(&cfg.output_dir)?;
    Ok(sol)
}

pub fn cmd_concentration(cfg: &RunConfig) -> CmdResult<lfd_core::oracle::ConcentrationReport> {
    if cfg.runs == 0 {
        return Err(Failure::Usage(anyhow!("runs must be at least 1")));
    }
    let problem = build_problem(cfg)?;
    let spec = ConcentrationSpec {
        epsilon: cfg.epsilon,
        n_draws: cfg.n_draws,
        omega: cfg.omega,
        runs: cfg.runs,
        master_seed: cfg.seed,
    };
    let report = concentration_harness(&problem, &spec)?;
    let mut rows = Vec::new();
    report.write_csv(&mut rows)?;
    let summary = format!(
        "runs,failures,failure_rate,bound,target,v_bar,T,eta\n{},{},{},{},{},{},{},{}\n",
        report.rows.len(),
        report.failure_count,
        report.failure_rate(),
        report.bound,
        report.target,
        report.v_bar,
        report.schedule.epochs,
        report.schedule.eta
    );
    let mut out = Outputs::new();
    out.add(
        "concentration.csv",
        String::from_utf8(rows).map_err(|e| anyhow!(e))?,
    );
    out.add("concentration_summary.csv", summary);
    out.add("resolved_config.toml", cfg.to_toml()?);
    out.write(&cfg.output_dir)?;
    Ok(report)
}

/// `(N, seconds)` per draw count. Seconds depend on the machine; only the
/// trend is meaningful.
pub fn cmd_timing(cfg: &RunConfig) -> CmdResult<Vec<(usize, f64)>> {
    if cfg.draw_counts.is_empty() {
        return Err(Failure::Usage(anyhow!(
            "draw_counts must list at least one N"
        )));
    }
    if cfg.draw_counts.contains(&0) {
        return Err(Failure::Usage(anyhow!(
            "every N in draw_counts must be at least 1"
        )));
    }
    let problem = build_problem(cfg)?;
    let mut rows = Vec::with_capacity(cfg.draw_counts.len());
    for &n in &cfg.draw_counts {
        let mut config = smd_config(cfg, &problem)?;
        config.n_draws = n;
        config.eval_grid.clear();
        config.record_trace = false;
        let start = Instant::now();
        run_observed(&problem, &config, &mut ())?;
        rows.push((n, start.elapsed().as_secs_f64()));
    }
    let mut table = String::from("N,seconds\n");
    for (n, s) in &rows {
        writeln!(table, "{n},{s}").unwrap();
    }
    let mut out = Outputs::new();
    out.add("timing.csv", table);
    out.add("resolved_config.toml", cfg.to_toml()?);
    out.write(&cfg.output_dir)?;
    Ok(rows)
}

/// Outcome of `validate`.
#[derive(Debug, Default)]
pub struct Validation {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// Problem and solver checks; no errors means the setup is sound.
pub fn cmd_validate(cfg: &RunConfig) -> CmdResult<Validation> {
    let problem = build_problem(cfg)?;
    let mut v = Validation {
        errors: validate(&problem),
        warnings: Vec::new(),
    };
    match smd_config(cfg, &problem) {
        Ok(c) => {
            let s = c.resolve_schedule(problem.num_nulls())?;
            if s.guarantee_out_of_range {
                v.warnings.push(format!(
                    "alpha = {} with M = {} is outside the range covered by the finite-sample guarantee",
                    cfg.alpha,
                    problem.num_nulls()
                ));
            }
        }
        Err(Failure::Usage(e) | Failure::Runtime(e)) => v.errors.push(format!("{e:#}")),
    }
    Ok(v)
}
