//! Ground truth at desk scale.
//!
//! * The Gaussian location example has a closed-form optimal power.
//! * With one null the most powerful test is a fractional knapsack over
//!   likelihood ratios.
//! * With up to three nulls the dual is minimized directly: a grid search,
//!   a short exact-gradient descent, and an exhaustive pass over the vertices
//!   of the piecewise-linear dual, backed by a primal test as certificate.
//!
//! The oracles compute `f(κ) = Σ_k (g_k − Σ_m κ_m f_mk)_+ + α Σ_m κ_m`
//! directly from the masses and never go through the solver's test code.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LfdError, Result};
use crate::eval::{exact_dual_value, inflated_epsilon_from_log_m};
use crate::model::{check_alpha, DiscreteProblem, TestingProblem};
use crate::nptest::{Multipliers, BALL_TOLERANCE};
use crate::rng::{domain, CounterStream};
use crate::smd::{
    radius_adjusted_schedule, run, schedule, step_size, GradientMode, Schedule, SmdConfig,
    Trajectory,
};

/// Largest number of nulls the grid oracle accepts.
pub const GRID_ORACLE_MAX_NULLS: usize = 3;
/// Atoms whose likelihood margin `|g_k − Σ κ_m f_mk|` is below this are
/// treated as ties when building the primal certificate.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Largest tie set solved exactly by enumeration.
pub const MAX_TIE_ATOMS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    AnalyticGaussian,
    SortM1,
    GridPlusMD,
}

impl OracleMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            OracleMethod::AnalyticGaussian => "AnalyticGaussian",
            OracleMethod::SortM1 => "SortM1",
            OracleMethod::GridPlusMD => "GridPlusMD",
        }
    }
}

/// Stage values of the grid oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCertificate {
    /// Best `f` over the grid.
    pub grid_value: f64,
    /// `f` after exact-gradient descent from the best grid point.
    pub md_value: f64,
    /// `f` at the best vertex of the dual's linear pieces.
    pub polished_value: f64,
    /// Power of the primal-feasible test in `test_on_atoms`.
    pub primal_power: f64,
    /// `v_bar − primal_power`, an upper bound on the error of `v_bar`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Optimal power `v̄`, or an upper bound on it for the grid oracle.
    pub v_bar: f64,
    /// Primal-feasible test per atom.
    pub test_on_atoms: Option<Vec<f64>>,
    pub kappa_star: Option<Multipliers>,
    pub method_tag: OracleMethod,
    pub certificate: Option<GridCertificate>,
}

impl OracleSolution {
    /// Difference between the dual value and the primal power, zero for the
    /// exact oracles.
    pub fn certificate_gap(&self) -> f64 {
        self.certificate.as_ref().map_or(0.0, |c| c.gap)
    }
}

/// `v̄ = Φ(θ₁ − z_{1−α})`, the power of the one-sided test against the
/// boundary null `θ = 0`.
pub fn gaussian_oracle(theta1: f64, alpha: f64) -> Result<OracleSolution> {
    check_alpha(alpha)?;
    if !theta1.is_finite() {
        return Err(LfdError::InvalidArgument("theta1 must be finite".into()));
    }
    let normal = Normal::standard();
    let z = normal.inverse_cdf(1.0 - alpha);
    Ok(OracleSolution {
        v_bar: normal.cdf(theta1 - z),
        test_on_atoms: None,
        kappa_star: None,
        method_tag: OracleMethod::AnalyticGaussian,
        certificate: None,
    })
}

/// `Σ_k (g_k − Σ_m κ_m f_mk)_+ + α Σ_m κ_m`.
pub fn dual_value_direct(dp: &DiscreteProblem, kappa: &[f64], alpha: f64) -> f64 {
    let nulls = dp.null_masses();
    let mut total = 0.0;
    for (k, g) in dp.alt_masses().iter().enumerate() {
        let mix: f64 = kappa.iter().zip(nulls).map(|(c, row)| c * row[k]).sum();
        total += (g - mix).max(0.0);
    }
    total + alpha * kappa.iter().sum::<f64>()
}

fn exact_rates_of(dp: &DiscreteProblem, test: &[f64]) -> (Vec<f64>, f64) {
    let dot = |row: &[f64]| row.iter().zip(test).map(|(p, t)| p * t).sum::<f64>();
    (
        dp.null_masses().iter().map(|r| dot(r)).collect(),
        dot(dp.alt_masses()),
    )
}

/// Most powerful level-`α` test for a single null: reject atoms in order of
/// decreasing `g/f`, randomizing on the atom that exhausts the budget.
pub fn np_oracle_m1(dp: &DiscreteProblem, alpha: f64) -> Result<OracleSolution> {
    check_alpha(alpha)?;
    if dp.num_nulls() != 1 {
        return Err(LfdError::InvalidArgument(format!(
            "the sorting oracle needs M = 1, got M = {}",
            dp.num_nulls()
        )));
    }
    let f = &dp.null_masses()[0];
    let g = dp.alt_masses();
    let mut test = vec![0.0; dp.num_atoms()];
    let mut order = Vec::new();
    for k in 0..dp.num_atoms() {
        if g[k] > 0.0 {
            if f[k] > 0.0 {
                order.push(k);
            } else {
                // free rejection
                test[k] = 1.0;
            }
        }
    }
    order.sort_by(|&a, &b| (g[b] / f[b]).total_cmp(&(g[a] / f[a])).then(a.cmp(&b)));

    let mut budget = alpha;
    let mut kappa = 0.0;
    for (pos, &k) in order.iter().enumerate() {
        if f[k] <= budget {
            test[k] = 1.0;
            budget -= f[k];
            if budget <= 0.0 {
                // the budget ends exactly on an atom boundary
                kappa = order.get(pos + 1).map_or(0.0, |&n| g[n] / f[n]);
                break;
            }
        } else {
            test[k] = budget / f[k];
            kappa = g[k] / f[k];
            break;
        }
    }
    let (_, power) = exact_rates_of(dp, &test);
    let kappa = kappa.min(1.0 / alpha);
    Ok(OracleSolution {
        v_bar: power,
        test_on_atoms: Some(test),
        kappa_star: Some(Multipliers::new(vec![kappa], alpha)?),
        method_tag: OracleMethod::SortM1,
        certificate: None,
    })
}

/// Solves `A x = b` for a small square system by elimination with partial
/// pivoting. `None` when singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Calls `visit` with every `size`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, size: usize, visit: &mut dyn FnMut(&[usize])) {
    fn rec(
        start: usize,
        n: usize,
        size: usize,
        cur: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if cur.len() == size {
            visit(cur);
            return;
        }
        for i in start..n {
            if n - i < size - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, size, cur, visit);
            cur.pop();
        }
    }
    rec(0, n, size, &mut Vec::with_capacity(size), visit);
}

/// Best vertex of the arrangement formed by the atom hyperplanes
/// `Σ_m κ_m f_mk = g_k`, the coordinate planes and the cap `Σ κ = 1/α`.
/// `f` is linear on every cell, so its minimum over the ball sits on one of
/// these vertices.
fn vertex_minimum(dp: &DiscreteProblem, alpha: f64) -> (Vec<f64>, f64) {
    let m = dp.num_nulls();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..dp.num_atoms() {
        planes.push((
            (0..m).map(|j| dp.null_masses()[j][k]).collect(),
            dp.alt_masses()[k],
        ));
    }
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        planes.push((e, 0.0));
    }
    planes.push((vec![1.0; m], 1.0 / alpha));

    let mut best = (vec![0.0; m], dual_value_direct(dp, &vec![0.0; m], alpha));
    for_each_subset(planes.len(), m, &mut |idx| {
        let a = idx.iter().map(|&i| planes[i].0.clone()).collect();
        let b = idx.iter().map(|&i| planes[i].1).collect();
        let Some(mut x) = solve_small(a, b) else {
            return;
        };
        if x.iter().any(|&v| v < -1e-12) {
            return;
        }
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let norm: f64 = x.iter().sum();
        if norm > 1.0 / alpha + 1e-12 {
            return;
        }
        if norm > 1.0 / alpha {
            let c = 1.0 / (alpha * norm);
            x.iter_mut().for_each(|v| *v *= c);
        }
        let val = dual_value_direct(dp, &x, alpha);
        if val < best.1 {
            best = (x, val);
        }
    });
    best
}

/// Optimal test on the tie atoms: maximize `Σ_{k∈T} g_k φ_k` subject to
/// `Σ_{k∈T} f_mk φ_k ≤ budget_m`, `0 ≤ φ ≤ 1`. Some optimal vertex has at
/// most `M` fractional entries, each pinned by a binding constraint, so the
/// search enumerates 0/1 patterns, the fractional set and the binding rows.
fn solve_tie_lp(dp: &DiscreteProblem, ties: &[usize], budget: &[f64]) -> Option<Vec<f64>> {
    let m = dp.num_nulls();
    let t = ties.len();
    let nulls = dp.null_masses();
    let g = dp.alt_masses();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |phi: &[f64]| {
        for j in 0..m {
            let used: f64 = ties.iter().zip(phi).map(|(&k, p)| nulls[j][k] * p).sum();
            if used > budget[j] + 1e-12 {
                return;
            }
        }
        let value: f64 = ties.iter().zip(phi).map(|(&k, p)| g[k] * p).sum();
        if best.as_ref().is_none_or(|(v, _)| value > *v + 1e-15) {
            best = Some((value, phi.to_vec()));
        }
    };
    for free_count in 0..=m.min(t) {
        for_each_subset(t, free_count, &mut |free| {
            let fixed: Vec<usize> = (0..t).filter(|i| !free.contains(i)).collect();
            for pattern in 0u64..(1u64 << fixed.len()) {
                let mut phi = vec![0.0; t];
                for (bit, &i) in fixed.iter().enumerate() {
                    phi[i] = ((pattern >> bit) & 1) as f64;
                }
                if free.is_empty() {
                    consider(&phi);
                    continue;
                }
                for_each_subset(m, free_count, &mut |rows| {
                    let a = rows
                        .iter()
                        .map(|&j| free.iter().map(|&i| nulls[j][ties[i]]).collect())
                        .collect();
                    let b = rows
                        .iter()
                        .map(|&j| {
                            budget[j]
                                - fixed
                                    .iter()
                                    .map(|&i| nulls[j][ties[i]] * phi[i])
                                    .sum::<f64>()
                        })
                        .collect();
                    if let Some(x) = solve_small(a, b) {
                        if x.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)) {
                            let mut cand = phi.clone();
                            for (&i, v) in free.iter().zip(&x) {
                                cand[i] = v.clamp(0.0, 1.0);
                            }
                            consider(&cand);
                        }
                    }
                });
            }
        });
    }
    best.map(|(_, phi)| phi)
}

/// Primal-feasible test built from a dual point: reject strictly where
/// `g > Σ κ f`, then fill the ties as well as the remaining budget allows.
fn primal_certificate(dp: &DiscreteProblem, kappa: &[f64], alpha: f64) -> Vec<f64> {
    let n = dp.num_atoms();
    let nulls = dp.null_masses();
    let g = dp.alt_masses();
    let mut test = vec![0.0; n];
    let mut ties = Vec::new();
    for k in 0..n {
        let mix: f64 = kappa.iter().zip(nulls).map(|(c, row)| c * row[k]).sum();
        let margin = g[k] - mix;
        if margin > TIE_TOLERANCE {
            test[k] = 1.0;
        } else if margin.abs() <= TIE_TOLERANCE && g[k] > 0.0 {
            ties.push(k);
        }
    }
    let (sizes, _) = exact_rates_of(dp, &test);
    let budget: Vec<f64> = sizes.iter().map(|s| alpha - s).collect();
    if budget.iter().all(|&b| b >= -1e-12) {
        let tie_values = if ties.len() <= MAX_TIE_ATOMS {
            solve_tie_lp(dp, &ties, &budget)
        } else {
            None
        };
        if let Some(phi) = tie_values {
            for (&k, p) in ties.iter().zip(&phi) {
                test[k] = *p;
            }
            return test;
        }
    }
    if dp.num_nulls() == 1 {
        if let Ok(sol) = np_oracle_m1(dp, alpha) {
            return sol.test_on_atoms.expect("sorting oracle returns a test");
        }
    }
    // scale the strict rejection region down to level α
    let worst = sizes.iter().copied().fold(0.0, f64::max);
    if worst > alpha {
        let c = alpha / worst;
        test.iter_mut().for_each(|t| *t *= c);
    }
    test
}

/// Upper bound on `v̄` for `M ≤ 3` from a grid search over the ball,
/// exact-gradient descent from the best grid point and a vertex search,
/// with a primal-feasible test as certificate.
pub fn dual_grid_oracle(
    dp: &DiscreteProblem,
    alpha: f64,
    grid_points_per_axis: usize,
) -> Result<OracleSolution> {
    check_alpha(alpha)?;
    let m = dp.num_nulls();
    if m > GRID_ORACLE_MAX_NULLS {
        return Err(LfdError::TooManyNulls(m));
    }
    if grid_points_per_axis < 2 {
        return Err(LfdError::InvalidArgument(
            "grid needs at least 2 points per axis".into(),
        ));
    }
    let cap = 1.0 / alpha;
    let h = cap / (grid_points_per_axis - 1) as f64;

    // grid search
    let mut best_grid = (vec![0.0; m], f64::INFINITY);
    let mut idx = vec![0usize; m];
    loop {
        let point: Vec<f64> = idx.iter().map(|&i| i as f64 * h).collect();
        if point.iter().sum::<f64>() <= cap + BALL_TOLERANCE {
            let v = dual_value_direct(dp, &point, alpha);
            if v < best_grid.1 {
                best_grid = (point, v);
            }
        }
        let mut axis = 0;
        while axis < m {
            idx[axis] += 1;
            if idx[axis] < grid_points_per_axis {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == m {
            break;
        }
    }

    // exact-gradient descent from the best grid point, zeros floored so the
    // multiplicative steps can move them
    let problem = dp.clone().into_problem(alpha)?;
    let floor = 1e-6 * cap / m as f64;
    let mut start: Vec<f64> = best_grid.0.iter().map(|v| v.max(floor)).collect();
    let norm: f64 = start.iter().sum();
    if norm > cap {
        start.iter_mut().for_each(|v| *v *= cap / norm);
    }
    let md_epochs = 5_000u64;
    let mut config = SmdConfig::new(alpha, 0.01);
    config.gradient = GradientMode::Exact;
    let eta = step_size(alpha, 0.01)?;
    let mut traj =
        Trajectory::starting_at(&problem, &config, eta, &Multipliers::new(start, alpha)?)?;
    let mut sum = vec![0.0; m];
    for t in 1..=md_epochs {
        for (s, k) in sum.iter_mut().zip(traj.kappa_values()) {
            *s += k;
        }
        if t < md_epochs {
            traj.step();
        }
    }
    let md_point: Vec<f64> = sum
        .iter()
        .map(|s| (s / md_epochs as f64).min(cap))
        .collect();
    let md_value = dual_value_direct(dp, &md_point, alpha);

    let (vertex, polished_value) = vertex_minimum(dp, alpha);

    let candidates = [
        (&best_grid.0, best_grid.1),
        (&md_point, md_value),
        (&vertex, polished_value),
    ];
    let (kappa_star, v_bar) = candidates
        .iter()
        .fold((candidates[0].0, candidates[0].1), |b, c| {
            if c.1 < b.1 {
                (c.0, c.1)
            } else {
                b
            }
        });
    let kappa_star = kappa_star.clone();

    let test = primal_certificate(dp, &kappa_star, alpha);
    let (_, primal_power) = exact_rates_of(dp, &test);
    let kappa_mult = Multipliers::new(kappa_star, alpha)?;
    Ok(OracleSolution {
        v_bar,
        test_on_atoms: Some(test),
        kappa_star: Some(kappa_mult),
        method_tag: OracleMethod::GridPlusMD,
        certificate: Some(GridCertificate {
            grid_value: best_grid.1,
            md_value,
            polished_value,
            primal_power,
            gap: v_bar - primal_power,
        }),
    })
}

/// Grid resolution used by [`reference_solution`].
pub const DEFAULT_GRID_POINTS: [usize; 3] = [10_001, 401, 61];

/// The sorting oracle for `M = 1`, the grid oracle for `M ≤ 3`.
pub fn reference_solution(dp: &DiscreteProblem, alpha: f64) -> Result<OracleSolution> {
    match dp.num_nulls() {
        1 => np_oracle_m1(dp, alpha),
        m if m <= GRID_ORACLE_MAX_NULLS => dual_grid_oracle(dp, alpha, DEFAULT_GRID_POINTS[m - 1]),
        m => Err(LfdError::TooManyNulls(m)),
    }
}

/// Schedule used by the exact-gradient baseline: the standard formula for
/// `M ≥ 2`, the radius-adjusted one for `M = 1` where the formula gives no
/// epochs.
pub fn baseline_schedule(alpha: f64, epsilon: f64, m: usize) -> Result<Schedule> {
    if m >= 2 {
        schedule(alpha, epsilon, m)
    } else {
        radius_adjusted_schedule(alpha, epsilon, m)
    }
}

/// `ln M` as it enters the schedule, with the radius adjustment for `M = 1`.
pub fn effective_log_m(alpha: f64, m: usize) -> f64 {
    if m >= 2 {
        (m as f64).ln()
    } else {
        (1.0 / alpha).ln() + alpha * m as f64 / std::f64::consts::E
    }
}

/// Output of [`deterministic_md`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicMd {
    pub schedule: Schedule,
    pub kappa_bar: Multipliers,
    /// Exact `f(κ̄_T)`.
    pub f_value: f64,
    /// `φ̄_T` on every atom.
    pub avg_test_on_atoms: Vec<f64>,
}

/// Mirror descent with exact subgradients on a discrete problem.
pub fn deterministic_md(
    problem: &TestingProblem,
    epsilon: f64,
    t_override: Option<u64>,
    eta_override: Option<f64>,
) -> Result<DeterministicMd> {
    let table = problem.discrete_table().ok_or_else(|| {
        LfdError::NotDiscrete("exact-gradient descent needs a discrete problem".into())
    })?;
    let alpha = problem.alpha();
    let base = baseline_schedule(alpha, epsilon, problem.num_nulls())?;
    let mut config = SmdConfig::new(alpha, epsilon);
    config.gradient = GradientMode::Exact;
    config.t_override = Some(t_override.unwrap_or(base.epochs));
    config.eta_override = Some(eta_override.unwrap_or(base.eta));
    config.eval_grid = table.atoms().to_vec();
    let out = run(problem, &config)?;
    let f_value = exact_dual_value(&out.kappa_bar, problem)?;
    let mut schedule = out.schedule;
    schedule.guarantee_out_of_range = base.guarantee_out_of_range;
    Ok(DeterministicMd {
        schedule,
        f_value,
        avg_test_on_atoms: out.avg_test_on_grid.iter().map(|(_, v)| *v).collect(),
        kappa_bar: out.kappa_bar,
    })
}

/// Parameters of [`concentration_harness`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSpec {
    pub epsilon: f64,
    pub n_draws: usize,
    pub omega: f64,
    pub runs: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub run: usize,
    pub seed: u64,
    pub f_value: f64,
    pub gap: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub rows: Vec<ConcentrationRow>,
    pub v_bar: f64,
    /// Inflated gap target a run must meet.
    pub target: f64,
    /// `exp(−Ω²)`.
    pub bound: f64,
    pub failure_count: usize,
    pub schedule: Schedule,
}

impl ConcentrationReport {
    pub fn failure_rate(&self) -> f64 {
        self.failure_count as f64 / self.rows.len() as f64
    }

    /// Writes `run,seed,f_value,gap,failed`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["run", "seed", "f_value", "gap", "failed"])?;
        for r in &self.rows {
            out.write_record([
                r.run.to_string(),
                r.seed.to_string(),
                r.f_value.to_string(),
                r.gap.to_string(),
                (r.failed as u8).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Repeats the stochastic run with independent seeds and counts runs whose
/// exact dual gap exceeds `(1 + 2Ω/√(ln M · N · (1−α)²)) ε`.
pub fn concentration_harness(
    problem: &TestingProblem,
    spec: &ConcentrationSpec,
) -> Result<ConcentrationReport> {
    let table = problem.discrete_table().ok_or_else(|| {
        LfdError::NotDiscrete("the concentration harness needs a discrete problem".into())
    })?;
    if spec.runs == 0 {
        return Err(LfdError::InvalidArgument("runs must be at least 1".into()));
    }
    let alpha = problem.alpha();
    let m = problem.num_nulls();
    let v_bar = reference_solution(table, alpha)?.v_bar;
    let schedule = baseline_schedule(alpha, spec.epsilon, m)?;
    let log_m = effective_log_m(alpha, m);
    let target = inflated_epsilon_from_log_m(alpha, spec.epsilon, log_m, spec.n_draws, spec.omega);
    let seeds = CounterStream::new(spec.master_seed);
    let mut rows = Vec::with_capacity(spec.runs);
    for run_index in 0..spec.runs {
        let seed = seeds.derive_seed(domain::RUN_SEED, run_index as u64);
        let mut config = SmdConfig::new(alpha, spec.epsilon);
        config.n_draws = spec.n_draws;
        config.omega = spec.omega;
        config.seed = seed;
        config.t_override = Some(schedule.epochs);
        config.eta_override = Some(schedule.eta);
        let out = run(problem, &config)?;
        let f_value = exact_dual_value(&out.kappa_bar, problem)?;
        let gap = f_value - v_bar;
        rows.push(ConcentrationRow {
            run: run_index,
            seed,
            f_value,
            gap,
            failed: gap > target,
        });
    }
    let failure_count = rows.iter().filter(|r| r.failed).count();
    Ok(ConcentrationReport {
        rows,
        v_bar,
        target,
        bound: (-spec.omega * spec.omega).exp(),
        failure_count,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::eval::exact_size_power;
    use approx::assert_relative_eq;

    fn two_atom() -> DiscreteProblem {
        corpus::load("toy2").unwrap()
    }

    #[test]
    fn gaussian_examples() {
        // Φ(0.718448) = 0.763760; quoted to four places as 0.7638
        let v = gaussian_oracle(2.0, 0.1).unwrap().v_bar;
        assert_relative_eq!(v, 0.763_760, epsilon = 1e-6);
        assert!((v - 0.763_78).abs() <= 5e-5);
        let z = Normal::standard().inverse_cdf(0.9);
        assert_relative_eq!(gaussian_oracle(z, 0.1).unwrap().v_bar, 0.5, epsilon = 1e-9);
        // statrs inverts the CDF to about 1e-11
        assert_relative_eq!(
            gaussian_oracle(0.0, 0.1).unwrap().v_bar,
            0.1,
            epsilon = 1e-9
        );
        assert!(gaussian_oracle(2.0, 1.5).is_err());
    }

    #[test]
    fn sorting_oracle_examples() {
        let sol = np_oracle_m1(&two_atom(), 0.1).unwrap();
        assert_eq!(sol.v_bar, 0.5);
        assert_eq!(sol.test_on_atoms.as_deref(), Some(&[0.0, 1.0][..]));

        let sol = np_oracle_m1(&two_atom(), 0.2).unwrap();
        assert_relative_eq!(sol.v_bar, 0.5 + 0.5 / 9.0, epsilon = 1e-12);
        assert_relative_eq!(
            sol.test_on_atoms.as_ref().unwrap()[0],
            1.0 / 9.0,
            epsilon = 1e-12
        );

        let same = corpus::load("m1_identical").unwrap();
        for alpha in [0.05, 0.1, 0.3] {
            assert_relative_eq!(
                np_oracle_m1(&same, alpha).unwrap().v_bar,
                alpha,
                epsilon = 1e-12
            );
        }
        assert!(np_oracle_m1(&corpus::load("m2_k5").unwrap(), 0.1).is_err());
    }

    #[test]
    fn sorting_oracle_kappa_attains_value() {
        for (name, dp) in corpus::all()
            .unwrap()
            .into_iter()
            .filter(|(_, d)| d.num_nulls() == 1)
        {
            for alpha in [0.05, 0.1, 0.2] {
                let sol = np_oracle_m1(&dp, alpha).unwrap();
                let k = sol.kappa_star.as_ref().unwrap().values().to_vec();
                assert!(
                    (dual_value_direct(&dp, &k, alpha) - sol.v_bar).abs() <= 1e-12,
                    "{name} {alpha}"
                );
                let te = exact_size_power(sol.test_on_atoms.as_ref().unwrap(), &dp).unwrap();
                assert!(te.size_per_null[0] <= alpha + 1e-12);
            }
        }
    }

    #[test]
    fn grid_oracle_examples() {
        let sol = dual_grid_oracle(&two_atom(), 0.1, 10_000).unwrap();
        assert!((sol.v_bar - 0.5).abs() <= 1e-3);
        assert_eq!(sol.method_tag, OracleMethod::GridPlusMD);

        let same = corpus::load("m1_identical").unwrap();
        assert!((dual_grid_oracle(&same, 0.1, 1001).unwrap().v_bar - 0.1).abs() <= 1e-3);

        let dup = dual_grid_oracle(&corpus::load("m2_dup").unwrap(), 0.1, 401).unwrap();
        let single = np_oracle_m1(&corpus::load("m1_k6").unwrap(), 0.1).unwrap();
        assert!((dup.v_bar - single.v_bar).abs() <= 1e-3);

        let four =
            DiscreteProblem::new(vec![0.0, 1.0], vec![vec![0.5, 0.5]; 4], vec![0.5, 0.5]).unwrap();
        let err = dual_grid_oracle(&four, 0.1, 11).unwrap_err();
        assert!(matches!(err, LfdError::TooManyNulls(4)));
        assert!(err.to_string().contains("M ≤ 3 required"));
    }

    #[test]
    fn oracles_agree_on_single_null_problems() {
        for (name, dp) in corpus::all()
            .unwrap()
            .into_iter()
            .filter(|(_, d)| d.num_nulls() == 1)
        {
            let a = np_oracle_m1(&dp, 0.1).unwrap().v_bar;
            let b = dual_grid_oracle(&dp, 0.1, 10_001).unwrap().v_bar;
            assert!((a - b).abs() <= 1e-3, "{name}: {a} vs {b}");
        }
    }

    #[test]
    fn grid_oracle_primal_dual_sandwich() {
        for (name, dp) in corpus::all().unwrap() {
            let sol = reference_solution(&dp, 0.1).unwrap();
            let test = sol.test_on_atoms.as_ref().unwrap();
            let te = exact_size_power(test, &dp).unwrap();
            assert!(
                te.size_per_null.iter().all(|&s| s <= 0.1 + 1e-9),
                "{name}: {:?}",
                te.size_per_null
            );
            assert!(te.power <= sol.v_bar + 1e-9, "{name}");
            assert!(
                sol.v_bar - te.power <= 1e-6,
                "{name}: dual {} primal {}",
                sol.v_bar,
                te.power
            );
            // weak duality at a spread of points in the ball
            let m = dp.num_nulls();
            for i in 0..50 {
                let k: Vec<f64> = (0..m)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 * 10.0 / m as f64)
                    .collect();
                assert!(dual_value_direct(&dp, &k, 0.1) >= te.power - 1e-12);
            }
        }
    }

    #[test]
    fn vertex_search_beats_fine_grid() {
        let dp = corpus::load("m2_k12").unwrap();
        let (_, v) = vertex_minimum(&dp, 0.1);
        let n = 801;
        let h = 10.0 / (n - 1) as f64;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in 0..n - i {
                best = best.min(dual_value_direct(&dp, &[i as f64 * h, j as f64 * h], 0.1));
            }
        }
        assert!(v <= best + 1e-12 && best - v <= 1e-2, "{v} vs {best}");
    }

    #[test]
    fn tie_lp_randomizes_when_needed() {
        // Two nulls with a tie on both atoms; only a fractional test is optimal.
        let dp = DiscreteProblem::new(
            vec![0.0, 1.0],
            vec![vec![0.5, 0.5], vec![0.8, 0.2]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let phi = solve_tie_lp(&dp, &[0, 1], &[0.1, 0.1]).unwrap();
        let te = exact_size_power(&phi, &dp).unwrap();
        assert!(te.size_per_null.iter().all(|&s| s <= 0.1 + 1e-12));
        assert_relative_eq!(te.power, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_md_examples() {
        let p = two_atom().into_problem(0.1).unwrap();
        let run = deterministic_md(&p, 0.05, None, None).unwrap();
        assert!(run.f_value <= 0.5 + 0.05, "{}", run.f_value);

        let first = deterministic_md(&p, 0.05, Some(1), None).unwrap();
        let expected = 1.0 - (-1.0f64).exp() * (1.0 - 0.1);
        assert_relative_eq!(first.f_value, expected, epsilon = 1e-12);
        assert_relative_eq!(first.f_value, 0.6689, epsilon = 1e-4);

        let coarse = deterministic_md(&p, 0.1, None, None).unwrap();
        let fine = deterministic_md(&p, 0.05, None, None).unwrap();
        assert!(fine.f_value - 0.5 <= coarse.f_value - 0.5 + 1e-12);

        let g = crate::model::gaussian_location_problem(3, -1.0, 0.0, 2.0, 0.1).unwrap();
        assert!(deterministic_md(&g, 0.1, None, None).is_err());
    }

    #[test]
    fn concentration_examples() {
        let p = corpus::load("m2_k5").unwrap().into_problem(0.1).unwrap();
        let spec = ConcentrationSpec {
            epsilon: 1.5,
            n_draws: 1,
            omega: 10f64.ln().sqrt(),
            runs: 3,
            master_seed: 1,
        };
        let rep = concentration_harness(&p, &spec).unwrap();
        assert_eq!(rep.failure_count, 0);
        assert_relative_eq!(rep.bound, 0.1, epsilon = 1e-12);

        let spec = ConcentrationSpec {
            epsilon: 0.5,
            runs: 1,
            ..spec
        };
        let a = concentration_harness(&p, &spec).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a, concentration_harness(&p, &spec).unwrap());
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("run,seed,f_value,gap,failed\n0,"));
        assert!(concentration_harness(&p, &ConcentrationSpec { runs: 0, ..spec }).is_err());
    }
}
