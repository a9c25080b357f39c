//! Size, power and dual-objective evaluation, plus the diagnostics used to
//! judge a run: the excess type-I term, the ε-least-favorable and
//! nearly-optimal checks, and complementary slackness.

use std::io::Write;

use rand::RngCore;

use crate::error::{check_dim, LfdError, Result};
use crate::model::{DiscreteProblem, MixtureCache, TestingProblem};
use crate::nptest::{np_reject_log, Multipliers};
use crate::rng::{domain, CounterStream, StreamRng};
use crate::smd::{exact_rates, EpochObserver};

/// Default Monte-Carlo draws per distribution.
pub const DEFAULT_EVAL_DRAWS: usize = 100_000;

/// Rejection rates of a test under every null and under the alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct TestEvaluation {
    pub size_per_null: Vec<f64>,
    pub power: f64,
    /// Binomial standard errors of `size_per_null`; zero when exact.
    pub size_std_errors: Vec<f64>,
    pub power_std_error: f64,
    /// Draws per distribution; zero when exact.
    pub draws_used: usize,
}

impl TestEvaluation {
    /// `max_m size_m`.
    pub fn size(&self) -> f64 {
        self.size_per_null.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_exact(&self) -> bool {
        self.draws_used == 0
    }

    fn from_counts(counts: &[u64], draws: usize) -> Self {
        let n = draws as f64;
        let rate = |c: u64| c as f64 / n;
        let se = |p: f64| (p * (1.0 - p) / n).sqrt();
        let (nulls, alt) = counts.split_at(counts.len() - 1);
        let size_per_null: Vec<f64> = nulls.iter().map(|&c| rate(c)).collect();
        let power = rate(alt[0]);
        Self {
            size_std_errors: size_per_null.iter().map(|&p| se(p)).collect(),
            power_std_error: se(power),
            size_per_null,
            power,
            draws_used: draws,
        }
    }
}

fn check_draws(draws: usize) -> Result<()> {
    if draws == 0 {
        return Err(LfdError::InvalidArgument(
            "at least one evaluation draw is required".into(),
        ));
    }
    Ok(())
}

/// Monte-Carlo size and power of an arbitrary test, drawing sequentially from
/// `rng`: `draws` samples from each null in order, then from the alternative.
pub fn mc_size_power(
    test: &mut dyn FnMut(f64) -> f64,
    problem: &TestingProblem,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Result<TestEvaluation> {
    check_draws(draws)?;
    let n = draws as f64;
    let mut rates = Vec::with_capacity(problem.num_nulls() + 1);
    for member in problem
        .nulls()
        .iter()
        .chain(std::iter::once(problem.alternative()))
    {
        let mut total = 0.0;
        for _ in 0..draws {
            let v = test(member.sample(rng));
            if !(0.0..=1.0).contains(&v) {
                return Err(LfdError::InvalidArgument(format!(
                    "test value {v} outside [0,1]"
                )));
            }
            total += v;
        }
        rates.push(total / n);
    }
    let power = rates.pop().expect("alternative rate");
    // For a randomized test p(1−p)/n bounds the variance of the mean.
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    Ok(TestEvaluation {
        size_std_errors: rates.iter().map(|&p| se(p)).collect(),
        power_std_error: se(power),
        size_per_null: rates,
        power,
        draws_used: draws,
    })
}

/// Independent evaluation stream for distribution `d` (nulls first, then the
/// alternative).
pub fn evaluation_stream(seed: u64, d: usize) -> StreamRng {
    CounterStream::new(seed).substream(domain::EVALUATION, d as u64, 0)
}

/// Monte-Carlo size and power of `φ_κ`, with one keyed stream per
/// distribution.
pub fn np_size_power_mc(
    kappa: &Multipliers,
    problem: &TestingProblem,
    draws: usize,
    seed: u64,
) -> Result<TestEvaluation> {
    check_dim(problem.num_nulls(), kappa.len())?;
    check_draws(draws)?;
    let cache = MixtureCache::new(problem, &kappa.log_values());
    let mut buf = Vec::with_capacity(kappa.len());
    let mut counts = Vec::with_capacity(problem.num_nulls() + 1);
    for (d, member) in problem
        .nulls()
        .iter()
        .chain(std::iter::once(problem.alternative()))
        .enumerate()
    {
        let mut rng = evaluation_stream(seed, d);
        let mut c = 0u64;
        for _ in 0..draws {
            c += np_reject_log(&cache, member.sample(&mut rng), problem, &mut buf) as u64;
        }
        counts.push(c);
    }
    Ok(TestEvaluation::from_counts(&counts, draws))
}

/// Exact size and power of a test given by its value on every atom.
pub fn exact_size_power(test_on_atoms: &[f64], dp: &DiscreteProblem) -> Result<TestEvaluation> {
    check_dim(dp.num_atoms(), test_on_atoms.len())?;
    if let Some(v) = test_on_atoms.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(LfdError::InvalidArgument(format!(
            "test value {v} outside [0,1]"
        )));
    }
    let dot = |row: &[f64]| {
        row.iter()
            .zip(test_on_atoms)
            .map(|(p, t)| p * t)
            .sum::<f64>()
    };
    Ok(TestEvaluation {
        size_per_null: dp.null_masses().iter().map(|row| dot(row)).collect(),
        power: dot(dp.alt_masses()),
        size_std_errors: vec![0.0; dp.num_nulls()],
        power_std_error: 0.0,
        draws_used: 0,
    })
}

/// `φ_κ` on every atom of a discrete problem.
pub fn np_test_on_atoms(kappa: &Multipliers, dp: &DiscreteProblem) -> Result<Vec<f64>> {
    check_dim(dp.num_nulls(), kappa.len())?;
    let lk = kappa.log_values();
    let mut buf = Vec::new();
    Ok((0..dp.num_atoms())
        .map(|k| crate::nptest::np_reject_atom(&lk, k, dp, &mut buf) as u8 as f64)
        .collect())
}

/// How [`dual_objective`] evaluates size and power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalBackend {
    /// Summation over the atoms; requires a discrete problem.
    Exact,
    MonteCarlo {
        draws: usize,
        seed: u64,
    },
}

/// Dual objective and the quantities derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDiagnostics {
    /// `f(κ) = power(φ_κ) − Σ_m κ_m (size_m(φ_κ) − α)`.
    pub f_value: f64,
    /// Delta-method standard error; zero when exact.
    pub std_error: f64,
    pub v_bar_reference: Option<f64>,
    /// `f_value − v̄` when a reference is attached.
    pub gap: Option<f64>,
    /// `κ_m (size_m − α)`.
    pub slackness: Vec<f64>,
    pub evaluation: TestEvaluation,
}

impl DualDiagnostics {
    pub fn with_reference(mut self, v_bar: f64) -> Self {
        self.v_bar_reference = Some(v_bar);
        self.gap = Some(self.f_value - v_bar);
        self
    }
}

/// Evaluates `f(κ)` through the test `φ_κ`.
pub fn dual_objective(
    kappa: &Multipliers,
    problem: &TestingProblem,
    backend: EvalBackend,
) -> Result<DualDiagnostics> {
    check_dim(problem.num_nulls(), kappa.len())?;
    let evaluation = match backend {
        EvalBackend::Exact => {
            let table = problem.discrete_table().ok_or_else(|| {
                LfdError::NotDiscrete("exact evaluation needs a discrete problem".into())
            })?;
            let (sizes, power) = exact_rates(&kappa.log_values(), table, &mut Vec::new());
            TestEvaluation {
                size_std_errors: vec![0.0; sizes.len()],
                size_per_null: sizes,
                power,
                power_std_error: 0.0,
                draws_used: 0,
            }
        }
        EvalBackend::MonteCarlo { draws, seed } => np_size_power_mc(kappa, problem, draws, seed)?,
    };
    Ok(diagnostics_from(kappa, problem.alpha(), evaluation))
}

fn diagnostics_from(
    kappa: &Multipliers,
    alpha: f64,
    evaluation: TestEvaluation,
) -> DualDiagnostics {
    let slackness: Vec<f64> = kappa
        .values()
        .iter()
        .zip(&evaluation.size_per_null)
        .map(|(k, s)| k * (s - alpha))
        .collect();
    let f_value = evaluation.power - slackness.iter().sum::<f64>();
    // size and power estimates come from independent draws
    let variance = evaluation.power_std_error.powi(2)
        + kappa
            .values()
            .iter()
            .zip(&evaluation.size_std_errors)
            .map(|(k, se)| (k * se).powi(2))
            .sum::<f64>();
    DualDiagnostics {
        f_value,
        std_error: variance.sqrt(),
        v_bar_reference: None,
        gap: None,
        slackness,
        evaluation,
    }
}

/// Exact `f(κ)` on a discrete problem.
pub fn exact_dual_value(kappa: &Multipliers, problem: &TestingProblem) -> Result<f64> {
    Ok(dual_objective(kappa, problem, EvalBackend::Exact)?.f_value)
}

/// Exact subgradient `−(size_m(φ_κ) − α)` on a discrete problem.
pub fn exact_subgradient(kappa: &Multipliers, problem: &TestingProblem) -> Result<Vec<f64>> {
    let d = dual_objective(kappa, problem, EvalBackend::Exact)?;
    Ok(d.evaluation
        .size_per_null
        .iter()
        .map(|s| -(s - problem.alpha()))
        .collect())
}

/// `−(1/T) Σ_t Ĝ_N(κ_t)ᵀ κ_t` from recorded inner products.
pub fn excess_type1_term(inner_products: &[f64]) -> Result<f64> {
    if inner_products.is_empty() {
        return Err(LfdError::InvalidArgument(
            "excess term needs a nonempty trace".into(),
        ));
    }
    Ok(-inner_products.iter().sum::<f64>() / inner_products.len() as f64)
}

/// `(1 + 2Ω/√(ln M · N · (1−α)²)) ε`, the dual gap reached with probability
/// at least `1 − exp(−Ω²)`.
pub fn inflated_epsilon(alpha: f64, epsilon: f64, m: usize, n_draws: usize, omega: f64) -> f64 {
    inflated_epsilon_from_log_m(alpha, epsilon, (m as f64).ln(), n_draws, omega)
}

/// [`inflated_epsilon`] with `ln M` supplied directly.
pub fn inflated_epsilon_from_log_m(
    alpha: f64,
    epsilon: f64,
    ln_m: f64,
    n_draws: usize,
    omega: f64,
) -> f64 {
    let denom = (ln_m * n_draws as f64 * (1.0 - alpha).powi(2)).sqrt();
    (1.0 + 2.0 * omega / denom) * epsilon
}

/// Outcome of a one-sided bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    /// Distance to the bound; negative when violated.
    pub margin: f64,
}

/// `f(κ) ≤ v̄ + ε`.
pub fn epsilon_lfd_check(f_value: f64, v_bar: f64, epsilon_target: f64) -> BoundCheck {
    let margin = v_bar + epsilon_target - f_value;
    BoundCheck {
        holds: margin >= 0.0,
        margin,
    }
}

/// Size and power conditions for an `(ε, δ)`-nearly optimal test.
#[derive(Debug, Clone, PartialEq)]
pub struct NearOptimalReport {
    pub size_ok: bool,
    pub power_ok: bool,
    /// Null with the largest size excess over `α(1+δ)`.
    pub worst_null: usize,
    pub size_margin: f64,
    pub power_margin: f64,
}

impl NearOptimalReport {
    pub fn holds(&self) -> bool {
        self.size_ok && self.power_ok
    }
}

/// `size_m ≤ α(1+δ)` for all `m` and `power ≥ v̄ − ε`.
pub fn nearly_optimal_check(
    te: &TestEvaluation,
    v_bar: f64,
    alpha: f64,
    epsilon: f64,
    delta: f64,
) -> NearOptimalReport {
    nearly_optimal_check_with_slack(te, v_bar, alpha, epsilon, delta, 0.0)
}

/// As [`nearly_optimal_check`], widening every bound by `z` standard errors
/// of the quantity compared.
pub fn nearly_optimal_check_with_slack(
    te: &TestEvaluation,
    v_bar: f64,
    alpha: f64,
    epsilon: f64,
    delta: f64,
    z: f64,
) -> NearOptimalReport {
    let cap = alpha * (1.0 + delta);
    let (worst_null, size_margin) = te
        .size_per_null
        .iter()
        .zip(&te.size_std_errors)
        .map(|(s, se)| cap + z * se - s)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (m, margin)| {
            if margin < best.1 {
                (m, margin)
            } else {
                best
            }
        });
    let power_margin = te.power - (v_bar - epsilon - z * te.power_std_error);
    NearOptimalReport {
        size_ok: size_margin >= 0.0,
        power_ok: power_margin >= 0.0,
        worst_null,
        size_margin,
        power_margin,
    }
}

/// Residuals `κ_m (size_m − α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlacknessReport {
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    pub pass: bool,
}

pub fn complementary_slackness(
    kappa: &Multipliers,
    sizes: &[f64],
    alpha: f64,
    tol: f64,
) -> Result<SlacknessReport> {
    check_dim(kappa.len(), sizes.len())?;
    let residuals: Vec<f64> = kappa
        .values()
        .iter()
        .zip(sizes)
        .map(|(k, s)| k * (s - alpha))
        .collect();
    let max_abs = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    Ok(SlacknessReport {
        pass: max_abs <= tol,
        residuals,
        max_abs,
    })
}

/// Monte-Carlo evaluation of the averaged test `φ̄_T` during a run.
///
/// Storing `T` iterates is too costly at scale, so each evaluation draw is
/// tied to one epoch in advance: draw `j` of distribution `d` is tested with
/// `φ_{κ_t}` at `t = ⌊(j + U_d) T / D⌋ + 1`, `U_d` uniform on `[0,1)`. Across
/// `j` these epochs stratify `1..=T` evenly, so the rejection frequency is an
/// unbiased estimate of `∫ φ̄_T f_d`. Draws are independent across `j`.
pub struct AverageTestProbe {
    epochs: u64,
    draws: usize,
    offsets: Vec<f64>,
    next: Vec<usize>,
    streams: Vec<StreamRng>,
    counts: Vec<u64>,
    buf: Vec<f64>,
}

impl AverageTestProbe {
    /// Probe for a problem with `num_nulls` nulls and a run of `epochs` epochs.
    pub fn new(num_nulls: usize, epochs: u64, draws: usize, seed: u64) -> Result<Self> {
        check_draws(draws)?;
        if epochs == 0 {
            return Err(LfdError::InvalidArgument(
                "probe needs at least one epoch".into(),
            ));
        }
        let base = CounterStream::new(seed);
        let n_dist = num_nulls + 1;
        let offsets = (0..n_dist)
            .map(|d| {
                let mut r = base.substream(domain::AVERAGE_TEST_OFFSET, d as u64, 0);
                rand::Rng::random::<f64>(&mut r)
            })
            .collect();
        let streams = (0..n_dist)
            .map(|d| base.substream(domain::AVERAGE_TEST, d as u64, 0))
            .collect();
        Ok(Self {
            epochs,
            draws,
            offsets,
            next: vec![0; n_dist],
            streams,
            counts: vec![0; n_dist],
            buf: Vec::new(),
        })
    }

    fn epoch_of(&self, d: usize, j: usize) -> u64 {
        let x = (j as f64 + self.offsets[d]) * self.epochs as f64 / self.draws as f64;
        (x.floor() as u64).min(self.epochs - 1) + 1
    }

    /// True once every draw has been evaluated.
    pub fn is_complete(&self) -> bool {
        self.next.iter().all(|&j| j == self.draws)
    }

    pub fn evaluation(&self) -> Result<TestEvaluation> {
        if !self.is_complete() {
            return Err(LfdError::InvalidArgument(
                "probe has not seen every epoch".into(),
            ));
        }
        Ok(TestEvaluation::from_counts(&self.counts, self.draws))
    }
}

impl EpochObserver for AverageTestProbe {
    fn observe(&mut self, epoch: u64, mixture: &MixtureCache, problem: &TestingProblem) {
        for d in 0..self.counts.len() {
            let member = if d < problem.num_nulls() {
                &problem.nulls()[d]
            } else {
                problem.alternative()
            };
            while self.next[d] < self.draws && self.epoch_of(d, self.next[d]) == epoch {
                let y = member.sample(&mut self.streams[d]);
                self.counts[d] += np_reject_log(mixture, y, problem, &mut self.buf) as u64;
                self.next[d] += 1;
            }
        }
    }
}

/// One line of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub metric: String,
    /// 1-based null index for per-null metrics.
    pub null_index: Option<usize>,
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
}

impl DiagnosticRow {
    pub fn new(metric: &str, estimate: f64, std_error: f64, draws: usize) -> Self {
        Self {
            metric: metric.to_string(),
            null_index: None,
            estimate,
            std_error,
            draws,
        }
    }
}

/// Rows `{prefix}_size` per null and `{prefix}_power`.
pub fn evaluation_rows(prefix: &str, te: &TestEvaluation) -> Vec<DiagnosticRow> {
    let mut rows: Vec<DiagnosticRow> = te
        .size_per_null
        .iter()
        .zip(&te.size_std_errors)
        .enumerate()
        .map(|(m, (s, se))| DiagnosticRow {
            metric: format!("{prefix}_size"),
            null_index: Some(m + 1),
            estimate: *s,
            std_error: *se,
            draws: te.draws_used,
        })
        .collect();
    rows.push(DiagnosticRow::new(
        &format!("{prefix}_power"),
        te.power,
        te.power_std_error,
        te.draws_used,
    ));
    rows
}

/// Writes `metric,null_index,estimate,std_error,draws`.
pub fn write_diagnostics_csv<W: Write>(w: W, rows: &[DiagnosticRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "null_index", "estimate", "std_error", "draws"])?;
    for r in rows {
        out.write_record([
            r.metric.clone(),
            r.null_index.map(|m| m.to_string()).unwrap_or_default(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.draws.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
