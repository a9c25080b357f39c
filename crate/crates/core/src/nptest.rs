//! Neyman-Pearson form tests induced by Lagrange multipliers.

use crate::error::{check_dim, LfdError, Result};
use crate::model::{log_sum_exp, MixtureCache, TestingProblem, LOG_ZERO};

/// Slack allowed on `Σ κ_m ≤ 1/α`.
pub const BALL_TOLERANCE: f64 = 1e-9;

/// Nonnegative multipliers with `‖κ‖₁ ≤ 1/α`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    values: Vec<f64>,
    alpha: f64,
}

impl Multipliers {
    pub fn new(values: Vec<f64>, alpha: f64) -> Result<Self> {
        crate::model::check_alpha(alpha)?;
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(LfdError::Infeasible(format!(
                "coordinate {v} is not a finite nonnegative number"
            )));
        }
        let total: f64 = values.iter().sum();
        if total > 1.0 / alpha + BALL_TOLERANCE {
            return Err(LfdError::Infeasible(format!(
                "l1 norm {total} exceeds 1/alpha = {}",
                1.0 / alpha
            )));
        }
        Ok(Self { values, alpha })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| if v > 0.0 { v.ln() } else { LOG_ZERO })
            .collect()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Direction and scale of a multiplier vector: `κ = scale · weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    pub weights: Vec<f64>,
    pub scale: f64,
}

impl SimplexWeights {
    /// `scale · weights`.
    pub fn rescale(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w * self.scale).collect()
    }
}

/// Multipliers for the problem with unbiasedness constraints: `kappa` for the
/// size constraints, `mu` for the power-at-least-α constraints, `alt_weights`
/// mixing the alternatives into the objective density.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMultipliers {
    pub kappa: Vec<f64>,
    pub mu: Vec<f64>,
    pub alt_weights: Vec<f64>,
}

impl ExtendedMultipliers {
    pub fn new(kappa: Vec<f64>, mu: Vec<f64>, alt_weights: Vec<f64>) -> Result<Self> {
        check_dim(mu.len(), alt_weights.len())?;
        if kappa
            .iter()
            .chain(&mu)
            .chain(&alt_weights)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(LfdError::InvalidArgument(
                "extended multipliers must be finite and nonnegative".into(),
            ));
        }
        let w: f64 = alt_weights.iter().sum();
        if (w - 1.0).abs() > 1e-12 {
            return Err(LfdError::InvalidArgument(format!(
                "alternative weights sum to {w}, not 1"
            )));
        }
        Ok(Self {
            kappa,
            mu,
            alt_weights,
        })
    }
}

/// Log-domain Neyman-Pearson decision: reject iff `ln g(y) > ln Σ κ_m f_m(y)`.
#[inline]
pub(crate) fn np_reject_log(
    mixture: &MixtureCache,
    y: f64,
    problem: &TestingProblem,
    buf: &mut Vec<f64>,
) -> bool {
    let lg = problem.alternative().log_pdf(y);
    lg > mixture.log_mixture(problem, y, buf)
}

/// Same decision on atom `k` of a discrete table, without point lookup.
#[inline]
pub(crate) fn np_reject_atom(
    log_kappa: &[f64],
    k: usize,
    table: &crate::model::DiscreteProblem,
    buf: &mut Vec<f64>,
) -> bool {
    buf.clear();
    for (m, lk) in log_kappa.iter().enumerate() {
        if *lk == LOG_ZERO {
            continue;
        }
        buf.push(lk + table.log_null(m, k));
    }
    table.log_alt(k) > log_sum_exp(buf)
}

/// `φ_κ(y)`: true (reject) iff `g(y) > Σ κ_m f_m(y)`; ties accept.
pub fn np_test(kappa: &Multipliers, y: f64, problem: &TestingProblem) -> Result<bool> {
    check_dim(problem.num_nulls(), kappa.len())?;
    let cache = MixtureCache::new(problem, &kappa.log_values());
    Ok(np_reject_log(
        &cache,
        y,
        problem,
        &mut Vec::with_capacity(kappa.len()),
    ))
}

/// A problem with `I` alternatives on top of the nulls of a base problem.
pub trait AlternativeFamily {
    fn num_alternatives(&self) -> usize;
    fn log_alternative(&self, i: usize, y: f64) -> f64;
}

/// Reject iff `g(y) + Σ μ_i g_i(y) > Σ κ_m f_m(y)` where `g = Σ w_i g_i`.
pub fn extended_np_test(
    em: &ExtendedMultipliers,
    y: f64,
    problem: &TestingProblem,
    alternatives: &dyn AlternativeFamily,
) -> Result<bool> {
    check_dim(problem.num_nulls(), em.kappa.len())?;
    check_dim(alternatives.num_alternatives(), em.mu.len())?;
    let ln = |v: f64| if v > 0.0 { v.ln() } else { LOG_ZERO };
    let lk: Vec<f64> = em.kappa.iter().map(|&v| ln(v)).collect();
    let lw: Vec<f64> = em.alt_weights.iter().map(|&v| ln(v)).collect();
    let lmu: Vec<f64> = em.mu.iter().map(|&v| ln(v)).collect();
    let cache = MixtureCache::new(problem, &lk);
    Ok(extended_reject_log(
        &cache,
        &lmu,
        &lw,
        y,
        problem,
        alternatives,
        &mut Vec::new(),
    ))
}

#[inline]
pub(crate) fn extended_reject_log(
    mixture: &MixtureCache,
    log_mu: &[f64],
    log_w: &[f64],
    y: f64,
    problem: &TestingProblem,
    alternatives: &dyn AlternativeFamily,
    buf: &mut Vec<f64>,
) -> bool {
    let rhs = mixture.log_mixture(problem, y, buf);
    let log_gi: Vec<f64> = (0..alternatives.num_alternatives())
        .map(|i| alternatives.log_alternative(i, y))
        .collect();
    buf.clear();
    buf.extend(log_w.iter().zip(&log_gi).map(|(w, g)| w + g));
    let lg = log_sum_exp(buf);
    buf.clear();
    buf.push(lg);
    buf.extend(
        log_mu
            .iter()
            .zip(&log_gi)
            .filter(|(m, _)| **m != LOG_ZERO)
            .map(|(m, g)| m + g),
    );
    let lhs = log_sum_exp(buf);
    lhs > rhs
}

/// `κ ↦ (κ/‖κ‖₁, ‖κ‖₁)`.
pub fn normalize(kappa: &Multipliers) -> Result<SimplexWeights> {
    let scale = kappa.l1_norm();
    if scale.is_nan() || scale <= 0.0 {
        return Err(LfdError::Degenerate(
            "cannot normalize the zero multiplier vector".into(),
        ));
    }
    Ok(SimplexWeights {
        weights: kappa.values().iter().map(|v| v / scale).collect(),
        scale,
    })
}

/// Mean of per-epoch rejection bits.
pub fn average_test_value(per_epoch_bits: &[bool]) -> Result<f64> {
    if per_epoch_bits.is_empty() {
        return Err(LfdError::InvalidArgument(
            "average test needs at least one epoch".into(),
        ));
    }
    let ones = per_epoch_bits.iter().filter(|&&b| b).count();
    Ok(ones as f64 / per_epoch_bits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_location_problem, DiscreteProblem, GaussianLocation};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn single_gaussian() -> TestingProblem {
        TestingProblem::continuous(
            vec![Arc::new(GaussianLocation { mean: 0.0 })],
            Arc::new(GaussianLocation { mean: 2.0 }),
            0.1,
            vec!["0".into()],
        )
        .unwrap()
    }

    #[test]
    fn multipliers_enforce_ball() {
        assert!(Multipliers::new(vec![5.0, 5.0], 0.1).is_ok());
        assert!(Multipliers::new(vec![5.0, 5.1], 0.1).is_err());
        assert!(Multipliers::new(vec![-0.1], 0.1).is_err());
        assert!(Multipliers::new(vec![f64::NAN], 0.1).is_err());
    }

    #[test]
    fn zero_multipliers_reject_wherever_g_positive() {
        let p = gaussian_location_problem(3, -1.0, 0.0, 2.0, 0.1).unwrap();
        let k = Multipliers::new(vec![0.0; 3], 0.1).unwrap();
        for y in [-10.0, 0.0, 3.0] {
            assert!(np_test(&k, y, &p).unwrap());
        }
    }

    #[test]
    fn single_null_threshold_closed_form() {
        // g(y) > c f(y)  <=>  y > ln(c)/2 + 1
        let p = single_gaussian();
        let c = (2.0 * (1.281_551_565_544_600_5 - 1.0_f64)).exp();
        assert_relative_eq!(c, 1.756_11, epsilon = 1e-5);
        let k = Multipliers::new(vec![c], 0.1).unwrap();
        let cut = c.ln() / 2.0 + 1.0;
        assert_relative_eq!(cut, 1.281_551_565_544_600_5, epsilon = 1e-12);
        assert!(np_test(&k, cut + 1e-9, &p).unwrap());
        assert!(!np_test(&k, cut - 1e-9, &p).unwrap());
    }

    #[test]
    fn two_atom_decisions() {
        let d = DiscreteProblem::new(vec![1.0, 2.0], vec![vec![0.9, 0.1]], vec![0.5, 0.5])
            .unwrap()
            .into_problem(0.1)
            .unwrap();
        let k = Multipliers::new(vec![3.0], 0.1).unwrap();
        assert!(np_test(&k, 2.0, &d).unwrap());
        assert!(!np_test(&k, 1.0, &d).unwrap());
        assert!(np_test(&Multipliers::new(vec![1.0, 1.0], 0.1).unwrap(), 1.0, &d).is_err());
    }

    #[test]
    fn ties_accept() {
        let d = DiscreteProblem::new(vec![0.0, 1.0], vec![vec![0.5, 0.5]], vec![0.5, 0.5])
            .unwrap()
            .into_problem(0.1)
            .unwrap();
        let k = Multipliers::new(vec![1.0], 0.1).unwrap();
        assert!(!np_test(&k, 0.0, &d).unwrap());
    }

    struct SameAsG(Arc<dyn crate::model::DensityMember>);
    impl AlternativeFamily for SameAsG {
        fn num_alternatives(&self) -> usize {
            1
        }
        fn log_alternative(&self, _i: usize, y: f64) -> f64 {
            self.0.log_pdf(y)
        }
    }

    #[test]
    fn extended_test_reductions() {
        let p = single_gaussian();
        let fam = SameAsG(p.alternative().clone());
        let grid: Vec<f64> = (0..=200).map(|i| -5.0 + 0.05 * i as f64).collect();
        for &c in &[0.0, 0.3, 1.7557, 6.0] {
            let k = Multipliers::new(vec![c], 0.1).unwrap();
            let em0 = ExtendedMultipliers::new(vec![c], vec![0.0], vec![1.0]).unwrap();
            let em1 = ExtendedMultipliers::new(vec![c], vec![1.0], vec![1.0]).unwrap();
            let half = Multipliers::new(vec![c / 2.0], 0.1).unwrap();
            for &y in &grid {
                assert_eq!(
                    extended_np_test(&em0, y, &p, &fam).unwrap(),
                    np_test(&k, y, &p).unwrap()
                );
                // 2 g(y) > c f(y)  <=>  NP test with c/2
                let direct =
                    2.0 * p.alternative().log_pdf(y).exp() > c * p.nulls()[0].log_pdf(y).exp();
                assert_eq!(
                    extended_np_test(&em1, y, &p, &fam).unwrap(),
                    direct,
                    "c={c} y={y}"
                );
                assert_eq!(direct, np_test(&half, y, &p).unwrap(), "c={c} y={y}");
            }
        }
    }

    #[test]
    fn normalize_examples() {
        let k = Multipliers::new(vec![0.05; 200], 0.1).unwrap();
        let s = normalize(&k).unwrap();
        assert_relative_eq!(s.scale, 10.0, epsilon = 1e-12);
        for w in &s.weights {
            assert_relative_eq!(*w, 1.0 / 200.0, epsilon = 1e-15);
        }
        let s = normalize(&Multipliers::new(vec![2.0, 0.0], 0.1).unwrap()).unwrap();
        assert_eq!((s.weights.as_slice(), s.scale), (&[1.0, 0.0][..], 2.0));
        let s = normalize(&Multipliers::new(vec![1.0, 3.0], 0.1).unwrap()).unwrap();
        assert_eq!((s.weights.as_slice(), s.scale), (&[0.25, 0.75][..], 4.0));
        assert!(matches!(
            normalize(&Multipliers::new(vec![0.0, 0.0], 0.1).unwrap()),
            Err(LfdError::Degenerate(_))
        ));
    }

    #[test]
    fn average_test_examples() {
        assert_eq!(average_test_value(&[true; 5]).unwrap(), 1.0);
        assert_eq!(
            average_test_value(&[true, false, true, false]).unwrap(),
            0.5
        );
        assert!(average_test_value(&[]).is_err());
    }
}
