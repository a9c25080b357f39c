//! Stochastic mirror descent on the dual problem with the negative-entropy
//! mirror map.
//!
//! The iterate is stored as `ln κ_t`. One epoch estimates the subgradient
//! `Ĝ_m = −(mean φ_{κ_t}(Y_{m,n}) − α)` from fresh draws of every null, takes
//! the multiplicative step `κ_m ← κ_m exp(−η Ĝ_m)` and rescales back into the
//! ball `‖κ‖₁ ≤ 1/α` when the step leaves it. The reported solution is the
//! running mean of the iterates `κ_1..κ_T`.

use std::io::Write;

use rand::{Rng, RngCore};

use crate::error::{check_dim, LfdError, Result};
use crate::model::{check_alpha, log_sum_exp, MixtureCache, TestingProblem};
use crate::nptest::{
    normalize, np_reject_atom, np_reject_log, Multipliers, SimplexWeights, BALL_TOLERANCE,
};
use crate::rng::EpochStream;

/// Epoch count and step size actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: u64,
    pub eta: f64,
    /// Set when `α ≥ 1/2` or `M ≤ e/α`, where the finite-sample guarantee
    /// attached to the formula does not apply.
    pub guarantee_out_of_range: bool,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(LfdError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )))
    }
}

/// `η = α ε / (2 (1−α)²)`.
pub fn step_size(alpha: f64, epsilon: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_epsilon(epsilon)?;
    Ok(alpha * epsilon / (2.0 * (1.0 - alpha) * (1.0 - alpha)))
}

/// `T = ⌈4(1−α)² ln M / (α² ε²)⌉` and `η = α ε / (2(1−α)²)`, with `ln M`
/// supplied directly.
pub fn schedule_from_log_m(alpha: f64, epsilon: f64, ln_m: f64) -> Result<Schedule> {
    let eta = step_size(alpha, epsilon)?;
    if !ln_m.is_finite() || ln_m <= 0.0 {
        return Err(LfdError::InvalidArgument(format!(
            "schedule needs M >= 2 (ln M = {ln_m})"
        )));
    }
    let raw = 4.0 * (1.0 - alpha).powi(2) / (alpha * alpha * epsilon * epsilon) * ln_m;
    let epochs = raw.ceil();
    if epochs > u64::MAX as f64 / 2.0 {
        return Err(LfdError::InvalidArgument(format!(
            "epoch count {raw} is not representable"
        )));
    }
    let guarantee_out_of_range = alpha >= 0.5 || ln_m <= 1.0 - alpha.ln();
    Ok(Schedule {
        epochs: epochs as u64,
        eta,
        guarantee_out_of_range,
    })
}

pub fn schedule(alpha: f64, epsilon: f64, m: usize) -> Result<Schedule> {
    if m < 2 {
        return Err(LfdError::InvalidArgument(format!(
            "schedule needs M >= 2, got {m}"
        )));
    }
    schedule_from_log_m(alpha, epsilon, (m as f64).ln())
}

/// Schedule with `ln M` replaced by `α·R²`, where `R²` is the Bregman radius
/// `sup_𝒳 Φ − Φ(κ_1)` of the actual starting point. Coincides with
/// [`schedule`] when `M ≥ e/α`; for smaller `M` the start is `1/e` per
/// coordinate and `α R² = ln(1/α) + α M / e`. Also defined for `M = 1`.
pub fn radius_adjusted_schedule(alpha: f64, epsilon: f64, m: usize) -> Result<Schedule> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(LfdError::InvalidArgument("M must be positive".into()));
    }
    let mf = m as f64;
    let radius = if mf >= std::f64::consts::E / alpha {
        mf.ln()
    } else {
        (1.0 / alpha).ln() + alpha * mf / std::f64::consts::E
    };
    let mut s = schedule_from_log_m(alpha, epsilon, radius)?;
    s.guarantee_out_of_range = alpha >= 0.5 || mf <= std::f64::consts::E / alpha;
    Ok(s)
}

/// Minimizer of the negative entropy over the ball: `1/e` per coordinate when
/// `M < e/α`, otherwise `1/(αM)`.
pub fn init_multipliers(alpha: f64, m: usize) -> Result<Multipliers> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(LfdError::InvalidArgument("M must be positive".into()));
    }
    let v = if (m as f64) < std::f64::consts::E / alpha {
        (-1.0f64).exp()
    } else {
        1.0 / (alpha * m as f64)
    };
    Multipliers::new(vec![v; m], alpha)
}

/// Where the subgradient comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Fresh Monte-Carlo draws every epoch.
    #[default]
    MonteCarlo,
    /// Exact sizes by summation over the atoms of a discrete problem.
    Exact,
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SmdConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Draws per null per epoch.
    pub n_draws: usize,
    /// Confidence parameter; only enters the reported bounds.
    pub omega: f64,
    pub seed: u64,
    pub t_override: Option<u64>,
    pub eta_override: Option<f64>,
    /// Points at which the running average test is accumulated.
    pub eval_grid: Vec<f64>,
    pub record_trace: bool,
    pub gradient: GradientMode,
}

impl SmdConfig {
    pub fn new(alpha: f64, epsilon: f64) -> Self {
        Self {
            alpha,
            epsilon,
            n_draws: 1,
            omega: (1.0 / alpha).ln().sqrt(),
            seed: 0,
            t_override: None,
            eta_override: None,
            eval_grid: Vec::new(),
            record_trace: false,
            gradient: GradientMode::MonteCarlo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_epsilon(self.epsilon)?;
        if self.n_draws == 0 {
            return Err(LfdError::InvalidArgument(
                "n_draws must be at least 1".into(),
            ));
        }
        if self.omega.is_nan() || self.omega <= 0.0 {
            return Err(LfdError::InvalidArgument(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        if self.t_override == Some(0) {
            return Err(LfdError::InvalidArgument(
                "T override must be at least 1".into(),
            ));
        }
        if let Some(eta) = self.eta_override {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(LfdError::InvalidArgument(format!(
                    "eta override must be positive, got {eta}"
                )));
            }
        }
        Ok(())
    }

    /// Schedule for `m` nulls after applying overrides.
    pub fn resolve_schedule(&self, m: usize) -> Result<Schedule> {
        self.validate()?;
        let eta = match self.eta_override {
            Some(eta) => eta,
            None => step_size(self.alpha, self.epsilon)?,
        };
        let out_of_range = self.alpha >= 0.5 || (m as f64) <= std::f64::consts::E / self.alpha;
        let epochs = match self.t_override {
            Some(t) => t,
            None => schedule(self.alpha, self.epsilon, m)?.epochs,
        };
        Ok(Schedule {
            epochs,
            eta,
            guarantee_out_of_range: out_of_range,
        })
    }
}

/// Monte-Carlo subgradient at `κ` with `n_draws` fresh draws per null.
/// Every coordinate lies in `[−(1−α), α]`.
pub fn estimate_subgradient(
    kappa: &Multipliers,
    problem: &TestingProblem,
    n_draws: usize,
    stream: &EpochStream,
) -> Result<Vec<f64>> {
    check_dim(problem.num_nulls(), kappa.len())?;
    if n_draws == 0 {
        return Err(LfdError::InvalidArgument(
            "n_draws must be at least 1".into(),
        ));
    }
    let cache = MixtureCache::new(problem, &kappa.log_values());
    let mut out = vec![0.0; kappa.len()];
    mc_subgradient(
        &cache,
        problem,
        kappa.alpha(),
        n_draws,
        stream,
        &mut Vec::new(),
        &mut out,
    );
    Ok(out)
}

fn mc_subgradient(
    mixture: &MixtureCache,
    problem: &TestingProblem,
    alpha: f64,
    n_draws: usize,
    stream: &EpochStream,
    buf: &mut Vec<f64>,
    out: &mut [f64],
) {
    for (m, (null, slot)) in problem.nulls().iter().zip(out.iter_mut()).enumerate() {
        let mut rng = stream.null_draws(m);
        let mut rejections = 0usize;
        for _ in 0..n_draws {
            let y = null.sample(&mut rng);
            rejections += np_reject_log(mixture, y, problem, buf) as usize;
        }
        *slot = -(rejections as f64 / n_draws as f64 - alpha);
    }
}

/// Exact rejection probability of `φ_κ` under every null, and under the
/// alternative, by summation over the atoms.
pub(crate) fn exact_rates(
    log_kappa: &[f64],
    table: &crate::model::DiscreteProblem,
    buf: &mut Vec<f64>,
) -> (Vec<f64>, f64) {
    let mut sizes = vec![0.0; table.num_nulls()];
    let mut power = 0.0;
    for k in 0..table.num_atoms() {
        if np_reject_atom(log_kappa, k, table, buf) {
            for (m, s) in sizes.iter_mut().enumerate() {
                *s += table.null_masses()[m][k];
            }
            power += table.alt_masses()[k];
        }
    }
    (sizes, power)
}

/// Log-domain entropic step. Overwrites `log_kappa` with
/// `ln c_t + ln κ_t − η Ĝ` and returns `ln c_t`.
pub(crate) fn entropic_step_log(log_kappa: &mut [f64], g_hat: &[f64], eta: f64, alpha: f64) -> f64 {
    for (lk, g) in log_kappa.iter_mut().zip(g_hat) {
        *lk -= eta * g;
    }
    let log_c = (-alpha.ln() - log_sum_exp(log_kappa)).min(0.0);
    if log_c < 0.0 {
        for lk in log_kappa.iter_mut() {
            *lk += log_c;
        }
    }
    log_c
}

/// `κ_{t+1,m} = c_t κ_{t,m} exp(−η Ĝ_m)` with
/// `c_t = min{1, 1/(α Σ_m κ_{t,m} exp(−η Ĝ_m))}`.
pub fn entropic_update(kappa_t: &Multipliers, g_hat: &[f64], eta: f64) -> Result<Multipliers> {
    check_dim(kappa_t.len(), g_hat.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LfdError::InvalidArgument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let mut lk = kappa_t.log_values();
    entropic_step_log(&mut lk, g_hat, eta, kappa_t.alpha());
    let values: Vec<f64> = lk.iter().map(|l| l.exp()).collect();
    Multipliers::new(values, kappa_t.alpha())
}

/// Hook called once per epoch with the iterate entering that epoch.
pub trait EpochObserver {
    fn observe(&mut self, epoch: u64, mixture: &MixtureCache, problem: &TestingProblem);
}

impl EpochObserver for () {
    fn observe(&mut self, _: u64, _: &MixtureCache, _: &TestingProblem) {}
}

/// The sequence `κ_1, κ_2, …` of one run. Draws are keyed by epoch, so the
/// prefix of a trajectory does not depend on how many epochs are executed.
pub struct Trajectory<'p> {
    problem: &'p TestingProblem,
    alpha: f64,
    eta: f64,
    n_draws: usize,
    gradient: GradientMode,
    seed: u64,
    epoch: u64,
    log_kappa: Vec<f64>,
    mixture: MixtureCache,
    // Linear copy; exact at t = 1, `exp(ln κ_t)` afterwards.
    kappa: Vec<f64>,
    buf: Vec<f64>,
}

impl<'p> Trajectory<'p> {
    pub fn new(problem: &'p TestingProblem, config: &SmdConfig, eta: f64) -> Result<Self> {
        let init = init_multipliers(config.alpha, problem.num_nulls())?;
        Self::starting_at(problem, config, eta, &init)
    }

    /// Trajectory started from an arbitrary point of the ball.
    pub fn starting_at(
        problem: &'p TestingProblem,
        config: &SmdConfig,
        eta: f64,
        start: &Multipliers,
    ) -> Result<Self> {
        config.validate()?;
        check_dim(problem.num_nulls(), start.len())?;
        let log_kappa = start.log_values();
        if problem.alpha() != config.alpha {
            return Err(LfdError::InvalidArgument(format!(
                "config alpha {} differs from problem alpha {}",
                config.alpha,
                problem.alpha()
            )));
        }
        if config.gradient == GradientMode::Exact && problem.discrete_table().is_none() {
            return Err(LfdError::NotDiscrete(
                "exact gradients need a discrete problem".into(),
            ));
        }
        if log_sum_exp(&log_kappa) > -config.alpha.ln() + BALL_TOLERANCE * config.alpha {
            return Err(LfdError::Infeasible(
                "starting point outside the ball".into(),
            ));
        }
        Ok(Self {
            problem,
            alpha: config.alpha,
            eta,
            n_draws: config.n_draws,
            gradient: config.gradient,
            seed: config.seed,
            epoch: 1,
            mixture: MixtureCache::new(problem, &log_kappa),
            buf: Vec::with_capacity(log_kappa.len()),
            log_kappa,
            kappa: start.values().to_vec(),
        })
    }

    /// Index `t` of the current iterate, starting at 1.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn log_kappa(&self) -> &[f64] {
        &self.log_kappa
    }

    /// Prepared mixture `Σ κ_{t,m} f_m` for the current iterate.
    pub fn mixture(&self) -> &MixtureCache {
        &self.mixture
    }

    pub fn kappa_values(&self) -> &[f64] {
        &self.kappa
    }

    pub fn kappa(&self) -> Multipliers {
        Multipliers::new(self.kappa.clone(), self.alpha).expect("iterate stays in the ball")
    }

    /// `φ_{κ_t}(y)`.
    pub fn rejects(&mut self, y: f64) -> bool {
        np_reject_log(&self.mixture, y, self.problem, &mut self.buf)
    }

    /// Subgradient estimate at the current iterate.
    pub fn subgradient(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.log_kappa.len()];
        match self.gradient {
            GradientMode::MonteCarlo => {
                let stream = EpochStream::new(self.seed, self.epoch);
                mc_subgradient(
                    &self.mixture,
                    self.problem,
                    self.alpha,
                    self.n_draws,
                    &stream,
                    &mut self.buf,
                    &mut out,
                );
            }
            GradientMode::Exact => {
                let table = self
                    .problem
                    .discrete_table()
                    .expect("checked at construction");
                let (sizes, _) = exact_rates(&self.log_kappa, table, &mut self.buf);
                for (o, s) in out.iter_mut().zip(sizes) {
                    *o = -(s - self.alpha);
                }
            }
        }
        out
    }

    /// Moves to `κ_{t+1}`.
    pub fn advance(&mut self, g_hat: &[f64]) {
        entropic_step_log(&mut self.log_kappa, g_hat, self.eta, self.alpha);
        for (k, lk) in self.kappa.iter_mut().zip(&self.log_kappa) {
            *k = lk.exp();
        }
        self.mixture = MixtureCache::new(self.problem, &self.log_kappa);
        self.epoch += 1;
    }

    /// Estimates the subgradient and advances.
    pub fn step(&mut self) {
        let g = self.subgradient();
        self.advance(&g);
    }

    fn check_feasible(&self) {
        let norm: f64 = self.kappa.iter().sum();
        assert!(
            norm <= 1.0 / self.alpha + BALL_TOLERANCE,
            "iterate left the feasible ball at epoch {}: {norm}",
            self.epoch
        );
    }
}

/// Per-epoch history, kept when `record_trace` is set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmdTrace {
    /// `κ_t` for `t = 1..T`.
    pub kappas: Vec<Vec<f64>>,
    /// `Ĝ_N(κ_t)ᵀ κ_t` for `t = 1..T`.
    pub inner_products: Vec<f64>,
    /// `grid_bits[g][t-1] = φ_{κ_t}(eval_grid[g])`.
    pub grid_bits: Vec<Vec<bool>>,
}

impl SmdTrace {
    /// Long-format `epoch,m,kappa` dump (1-based epoch and m).
    pub fn write_kappa_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,m,kappa")?;
        for (t, k) in self.kappas.iter().enumerate() {
            for (m, v) in k.iter().enumerate() {
                writeln!(w, "{},{},{}", t + 1, m + 1, v)?;
            }
        }
        Ok(())
    }

    /// `grid_index,epoch,bit` dump (0-based grid index, 1-based epoch).
    pub fn write_grid_bits_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "grid_index,epoch,bit")?;
        for (g, bits) in self.grid_bits.iter().enumerate() {
            for (t, b) in bits.iter().enumerate() {
                writeln!(w, "{},{},{}", g, t + 1, *b as u8)?;
            }
        }
        Ok(())
    }
}

/// Result of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SmdOutput {
    /// `κ̄_T = (1/T) Σ_{t=1..T} κ_t`.
    pub kappa_bar: Multipliers,
    /// Direction of `κ̄_T`, the approximate least-favorable distribution.
    pub lambda: SimplexWeights,
    pub schedule: Schedule,
    /// `−(1/T) Σ_t Ĝ_N(κ_t)ᵀ κ_t`.
    pub excess_type1_term: f64,
    /// `(y, φ̄_T(y))` over the configured grid.
    pub avg_test_on_grid: Vec<(f64, f64)>,
    /// `Σ_t φ_{κ_t}(y)` over the grid.
    pub grid_reject_counts: Vec<u64>,
    pub trace: Option<SmdTrace>,
}

pub fn run(problem: &TestingProblem, config: &SmdConfig) -> Result<SmdOutput> {
    run_observed(problem, config, &mut ())
}

/// [`run`] with a per-epoch hook.
pub fn run_observed(
    problem: &TestingProblem,
    config: &SmdConfig,
    observer: &mut dyn EpochObserver,
) -> Result<SmdOutput> {
    let schedule = config.resolve_schedule(problem.num_nulls())?;
    let mut traj = Trajectory::new(problem, config, schedule.eta)?;
    run_trajectory(&mut traj, config, schedule, observer)
}

pub(crate) fn run_trajectory(
    traj: &mut Trajectory<'_>,
    config: &SmdConfig,
    schedule: Schedule,
    observer: &mut dyn EpochObserver,
) -> Result<SmdOutput> {
    let problem = traj.problem;
    let m = problem.num_nulls();
    let big_t = schedule.epochs;
    let mut kappa_sum = vec![0.0; m];
    let mut excess_sum = 0.0;
    let mut counts = vec![0u64; config.eval_grid.len()];
    let mut trace = config.record_trace.then(|| SmdTrace {
        kappas: Vec::with_capacity(big_t as usize),
        inner_products: Vec::with_capacity(big_t as usize),
        grid_bits: vec![Vec::with_capacity(big_t as usize); config.eval_grid.len()],
    });

    for t in 1..=big_t {
        let kappa_t = traj.kappa.clone();
        for (s, k) in kappa_sum.iter_mut().zip(&kappa_t) {
            *s += k;
        }
        for (g, &y) in config.eval_grid.iter().enumerate() {
            let bit = traj.rejects(y);
            counts[g] += bit as u64;
            if let Some(tr) = trace.as_mut() {
                tr.grid_bits[g].push(bit);
            }
        }
        observer.observe(t, &traj.mixture, problem);

        let g_hat = traj.subgradient();
        let ip: f64 = g_hat.iter().zip(&kappa_t).map(|(g, k)| g * k).sum();
        excess_sum += ip;
        if let Some(tr) = trace.as_mut() {
            tr.kappas.push(kappa_t);
            tr.inner_products.push(ip);
        }
        if t < big_t {
            traj.advance(&g_hat);
            if cfg!(debug_assertions) || t % 1024 == 0 {
                traj.check_feasible();
            }
        }
    }

    let tf = big_t as f64;
    let kappa_bar = Multipliers::new(kappa_sum.iter().map(|s| s / tf).collect(), config.alpha)?;
    let lambda = normalize(&kappa_bar)?;
    Ok(SmdOutput {
        kappa_bar,
        lambda,
        schedule,
        excess_type1_term: -excess_sum / tf,
        avg_test_on_grid: config
            .eval_grid
            .iter()
            .zip(&counts)
            .map(|(&y, &c)| (y, c as f64 / tf))
            .collect(),
        grid_reject_counts: counts,
        trace,
    })
}

/// Outcome of the randomized-epoch test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomizedDecision {
    /// `t*`, uniform on `1..=T`.
    pub realized_epoch: u64,
    pub reject: bool,
}

/// Draws `t*` uniformly on `1..=T`, runs `t*` epochs and applies `φ_{κ_{t*}}`
/// at `y`. Equivalent in distribution to rejecting with probability `φ̄_T(y)`.
pub fn run_randomized_epoch(
    problem: &TestingProblem,
    config: &SmdConfig,
    y: f64,
    rng: &mut dyn RngCore,
) -> Result<RandomizedDecision> {
    let schedule = config.resolve_schedule(problem.num_nulls())?;
    let t_star = rng.random_range(1..=schedule.epochs);
    let mut traj = Trajectory::new(problem, config, schedule.eta)?;
    while traj.epoch() < t_star {
        traj.step();
    }
    Ok(RandomizedDecision {
        realized_epoch: t_star,
        reject: traj.rejects(y),
    })
}
