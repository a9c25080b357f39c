//! Mirror descent for the problem with several alternatives and
//! unbiasedness constraints `∫φ g_i ≥ α`.
//!
//! The dual has one multiplier per null (`κ`) and one per alternative (`μ`).
//! Both blocks get the same multiplicative step and share one rescale, so
//! that `‖κ‖₁ + ‖μ‖₁ ≤ 1/α` holds after every epoch. The objective density is
//! the mixture `g = Σ w_i g_i`. No finite-sample guarantee is attached to the
//! output.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{check_dim, LfdError, Result};
use crate::model::{
    log_sum_exp, DensityMember, DiscreteProblem, MixtureCache, TestingProblem, LOG_ZERO,
};
use crate::nptest::{extended_reject_log, AlternativeFamily, ExtendedMultipliers, BALL_TOLERANCE};
use crate::rng::EpochStream;
use crate::smd::{init_multipliers, GradientMode, Schedule, SmdConfig};

/// `Σ w_i g_i` as a density member.
#[derive(Debug, Clone)]
pub struct MixtureMember {
    components: Vec<Arc<dyn DensityMember>>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl MixtureMember {
    pub fn new(components: Vec<Arc<dyn DensityMember>>, weights: Vec<f64>) -> Result<Self> {
        check_simplex(&weights)?;
        check_dim(components.len(), weights.len())?;
        let log_weights = weights
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { LOG_ZERO })
            .collect();
        Ok(Self {
            components,
            weights,
            log_weights,
        })
    }
}

impl DensityMember for MixtureMember {
    fn log_pdf(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, c)| lw + c.log_pdf(y))
            .collect();
        log_sum_exp(&terms)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, c) in self.weights.iter().zip(&self.components) {
            acc += w;
            if u < acc {
                return c.sample(rng);
            }
        }
        let last = self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        self.components[last].sample(rng)
    }
}

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(LfdError::InvalidArgument(
            "at least one alternative is required".into(),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(LfdError::InvalidArgument(
            "alternative weights must be nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(LfdError::InvalidArgument(format!(
            "alternative weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Nulls, `I` alternatives and their weights.
#[derive(Debug, Clone)]
pub struct ExtendedProblem {
    problem: TestingProblem,
    alternatives: Vec<Arc<dyn DensityMember>>,
    weights: Vec<f64>,
    alt_masses: Option<Vec<Vec<f64>>>,
}

impl ExtendedProblem {
    /// Continuous problem; the base problem's alternative is the mixture.
    pub fn new(
        nulls: Vec<Arc<dyn DensityMember>>,
        alternatives: Vec<Arc<dyn DensityMember>>,
        weights: Vec<f64>,
        alpha: f64,
        null_labels: Vec<String>,
    ) -> Result<Self> {
        let mixture = Arc::new(MixtureMember::new(alternatives.clone(), weights.clone())?);
        let problem = TestingProblem::continuous(nulls, mixture, alpha, null_labels)?;
        Ok(Self {
            problem,
            alternatives,
            weights,
            alt_masses: None,
        })
    }

    /// Discrete problem on shared atoms; the base table's alternative column
    /// holds `Σ w_i g_i`.
    pub fn discrete(
        atoms: Vec<f64>,
        null_masses: Vec<Vec<f64>>,
        alt_masses: Vec<Vec<f64>>,
        weights: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        check_simplex(&weights)?;
        check_dim(weights.len(), alt_masses.len())?;
        let mut mixed = vec![0.0; atoms.len()];
        for (w, row) in weights.iter().zip(&alt_masses) {
            check_dim(atoms.len(), row.len())?;
            for (acc, p) in mixed.iter_mut().zip(row) {
                *acc += w * p;
            }
        }
        let table = DiscreteProblem::new_checked(atoms.clone(), null_masses, mixed)?;
        let problem = table.into_problem(alpha)?;
        let alternatives = alt_masses
            .iter()
            .map(|row| {
                let single =
                    DiscreteProblem::new_checked(atoms.clone(), vec![row.clone()], row.clone())?;
                Ok(single.into_problem(alpha)?.alternative().clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            alternatives,
            weights,
            alt_masses: Some(alt_masses),
        })
    }

    pub fn problem(&self) -> &TestingProblem {
        &self.problem
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alternatives(&self) -> &[Arc<dyn DensityMember>] {
        &self.alternatives
    }

    /// Exact power under each `g_i` of a test given per atom.
    pub fn exact_powers(&self, test_on_atoms: &[f64]) -> Result<Vec<f64>> {
        let masses = self
            .alt_masses
            .as_ref()
            .ok_or_else(|| LfdError::NotDiscrete("exact powers need a discrete problem".into()))?;
        check_dim(
            self.problem.discrete_table().map_or(0, |t| t.num_atoms()),
            test_on_atoms.len(),
        )?;
        Ok(masses
            .iter()
            .map(|row| row.iter().zip(test_on_atoms).map(|(p, t)| p * t).sum())
            .collect())
    }
}

impl AlternativeFamily for ExtendedProblem {
    fn num_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    fn log_alternative(&self, i: usize, y: f64) -> f64 {
        self.alternatives[i].log_pdf(y)
    }
}

/// Result of [`run_extended`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedOutput {
    pub kappa_bar: Vec<f64>,
    pub mu_bar: Vec<f64>,
    /// Averages packaged with the alternative weights.
    pub multipliers: ExtendedMultipliers,
    pub schedule: Schedule,
    /// `(y, φ̄_T(y))` of the averaged extended test.
    pub avg_test_on_grid: Vec<(f64, f64)>,
    /// Largest `‖κ_t‖₁ + ‖μ_t‖₁` seen over the run.
    pub max_joint_norm: f64,
    /// Always true: the convergence guarantee needs a norm bound on the
    /// unknown optimal multipliers.
    pub no_finite_sample_guarantee: bool,
}

/// Runs the joint `(κ, μ)` descent. `mu_init` gives the starting `μ`; zero
/// entries stay zero. If the start exceeds the joint cap it is rescaled
/// into the ball first.
pub fn run_extended(
    ep: &ExtendedProblem,
    config: &SmdConfig,
    mu_init: &[f64],
) -> Result<ExtendedOutput> {
    let problem = &ep.problem;
    let m = problem.num_nulls();
    let n_alt = ep.alternatives.len();
    check_dim(n_alt, mu_init.len())?;
    if config.gradient != GradientMode::MonteCarlo {
        return Err(LfdError::InvalidArgument(
            "the extended runner only supports Monte-Carlo gradients".into(),
        ));
    }
    if problem.alpha() != config.alpha {
        return Err(LfdError::InvalidArgument(format!(
            "config alpha {} differs from problem alpha {}",
            config.alpha,
            problem.alpha()
        )));
    }
    if mu_init.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(LfdError::InvalidArgument(
            "mu_init must be finite and nonnegative".into(),
        ));
    }
    let schedule = config.resolve_schedule(m)?;
    let alpha = config.alpha;
    let cap = 1.0 / alpha;

    let ln = |v: f64| if v > 0.0 { v.ln() } else { LOG_ZERO };
    let mut kappa = init_multipliers(alpha, m)?.into_values();
    let mut mu = mu_init.to_vec();
    let start_norm: f64 = kappa.iter().chain(&mu).sum();
    if start_norm > cap * (1.0 + 1e-12) {
        let c = cap / start_norm;
        kappa.iter_mut().chain(mu.iter_mut()).for_each(|v| *v *= c);
    }
    // log-domain state: null block followed by alternative block
    let mut log_state: Vec<f64> = kappa.iter().chain(&mu).map(|&v| ln(v)).collect();
    let mut linear: Vec<f64> = kappa.iter().chain(&mu).copied().collect();
    let log_w: Vec<f64> = ep.weights.iter().map(|&w| ln(w)).collect();

    let mut sums = vec![0.0; m + n_alt];
    let mut counts = vec![0u64; config.eval_grid.len()];
    let mut grad = vec![0.0; m + n_alt];
    let mut buf = Vec::with_capacity(m + n_alt);
    let mut max_joint_norm: f64 = 0.0;

    for t in 1..=schedule.epochs {
        let joint: f64 = linear.iter().sum();
        assert!(
            joint <= cap + BALL_TOLERANCE,
            "joint cap violated at epoch {t}: {joint}"
        );
        max_joint_norm = max_joint_norm.max(joint);
        for (s, v) in sums.iter_mut().zip(&linear) {
            *s += v;
        }
        let (lk, lmu) = log_state.split_at(m);
        let lk = &MixtureCache::new(problem, lk);
        for (g, &y) in config.eval_grid.iter().enumerate() {
            counts[g] += extended_reject_log(lk, lmu, &log_w, y, problem, ep, &mut buf) as u64;
        }
        if t == schedule.epochs {
            break;
        }

        let stream = EpochStream::new(config.seed, t);
        let n = config.n_draws as f64;
        for (j, null) in problem.nulls().iter().enumerate() {
            let mut rng = stream.null_draws(j);
            let mut rejections = 0usize;
            for _ in 0..config.n_draws {
                let y = null.sample(&mut rng);
                rejections +=
                    extended_reject_log(lk, lmu, &log_w, y, problem, ep, &mut buf) as usize;
            }
            grad[j] = -(rejections as f64 / n - alpha);
        }
        for (i, alt) in ep.alternatives.iter().enumerate() {
            let mut rng = stream.alternative_draws(i);
            let mut rejections = 0usize;
            for _ in 0..config.n_draws {
                let y = alt.sample(&mut rng);
                rejections +=
                    extended_reject_log(lk, lmu, &log_w, y, problem, ep, &mut buf) as usize;
            }
            grad[m + i] = rejections as f64 / n - alpha;
        }

        for (l, g) in log_state.iter_mut().zip(&grad) {
            *l -= schedule.eta * g;
        }
        let log_c = (-alpha.ln() - log_sum_exp(&log_state)).min(0.0);
        if log_c < 0.0 {
            for l in log_state.iter_mut() {
                *l += log_c;
            }
        }
        for (v, l) in linear.iter_mut().zip(&log_state) {
            *v = l.exp();
        }
    }

    let tf = schedule.epochs as f64;
    let kappa_bar: Vec<f64> = sums[..m].iter().map(|s| s / tf).collect();
    let mu_bar: Vec<f64> = sums[m..].iter().map(|s| s / tf).collect();
    let multipliers =
        ExtendedMultipliers::new(kappa_bar.clone(), mu_bar.clone(), ep.weights.clone())?;
    Ok(ExtendedOutput {
        kappa_bar,
        mu_bar,
        multipliers,
        schedule,
        avg_test_on_grid: config
            .eval_grid
            .iter()
            .zip(&counts)
            .map(|(&y, &c)| (y, c as f64 / tf))
            .collect(),
        max_joint_norm,
        no_finite_sample_guarantee: true,
    })
}
