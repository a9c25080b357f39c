//! Testing problems: M null densities, one alternative density and a level.
//!
//! Densities are always handled through their logarithms. Continuous members
//! carry Lebesgue densities, discrete members carry counting-measure masses on
//! a shared finite set of atoms. A zero density is reported as
//! `f64::NEG_INFINITY`.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, LfdError, Result};
use crate::nptest::Multipliers;
use crate::rng::{domain, CounterStream};

/// Sentinel returned by `log_pdf` where the density vanishes.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// Tolerance on the total mass of a discrete member.
pub const MASS_TOLERANCE: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// One distribution of a testing problem.
pub trait DensityMember: Send + Sync + fmt::Debug {
    /// Natural-log density at `y`, [`LOG_ZERO`] where the density is zero.
    fn log_pdf(&self, y: f64) -> f64;

    /// One draw from the distribution.
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
}

/// `N(mean, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLocation {
    pub mean: f64,
}

impl DensityMember for GaussianLocation {
    #[inline]
    fn log_pdf(&self, y: f64) -> f64 {
        let d = y - self.mean;
        -HALF_LN_2PI - 0.5 * d * d
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + z
    }
}

/// A finite sample space with one mass vector per null and one for the alternative.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    atoms: Vec<f64>,
    null_masses: Vec<Vec<f64>>,
    alt_masses: Vec<f64>,
    null_names: Vec<String>,
    alt_name: String,
    log_null: Vec<Vec<f64>>,
    log_alt: Vec<f64>,
    // (atom, index) sorted by atom, for point lookup
    lookup: Vec<(f64, usize)>,
}

impl DiscreteProblem {
    /// Builds the table. Shapes and atoms are checked here; mass normalization
    /// is reported by [`validate`] instead so malformed tables can be inspected.
    pub fn new(atoms: Vec<f64>, null_masses: Vec<Vec<f64>>, alt_masses: Vec<f64>) -> Result<Self> {
        let m = null_masses.len();
        let names = (1..=m).map(|i| format!("f_{i}")).collect();
        Self::with_names(atoms, null_masses, alt_masses, names, "g".to_string())
    }

    pub fn with_names(
        atoms: Vec<f64>,
        null_masses: Vec<Vec<f64>>,
        alt_masses: Vec<f64>,
        null_names: Vec<String>,
        alt_name: String,
    ) -> Result<Self> {
        let k = atoms.len();
        if k == 0 {
            return Err(LfdError::InvalidTable("no atoms".into()));
        }
        if null_masses.is_empty() {
            return Err(LfdError::InvalidTable("no null columns".into()));
        }
        check_dim(null_masses.len(), null_names.len())?;
        for row in &null_masses {
            check_dim(k, row.len())?;
        }
        check_dim(k, alt_masses.len())?;
        if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(LfdError::InvalidTable(format!("atom {a} is not finite")));
        }
        let mut lookup: Vec<(f64, usize)> = atoms.iter().copied().zip(0..).collect();
        lookup.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = lookup.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(LfdError::InvalidTable(format!("duplicate atom {}", w[0].0)));
        }
        if let Some(x) = null_masses
            .iter()
            .flatten()
            .chain(&alt_masses)
            .find(|x| x.is_nan())
        {
            return Err(LfdError::InvalidTable(format!("mass {x} is not a number")));
        }
        let ln = |row: &Vec<f64>| {
            row.iter()
                .map(|&p| if p > 0.0 { p.ln() } else { LOG_ZERO })
                .collect::<Vec<_>>()
        };
        Ok(Self {
            log_null: null_masses.iter().map(ln).collect(),
            log_alt: ln(&alt_masses),
            atoms,
            null_masses,
            alt_masses,
            null_names,
            alt_name,
            lookup,
        })
    }

    /// Same as [`DiscreteProblem::new`] but also rejects tables with any
    /// normalization diagnostic.
    pub fn new_checked(
        atoms: Vec<f64>,
        null_masses: Vec<Vec<f64>>,
        alt_masses: Vec<f64>,
    ) -> Result<Self> {
        let dp = Self::new(atoms, null_masses, alt_masses)?;
        let diags = dp.mass_diagnostics();
        if diags.is_empty() {
            Ok(dp)
        } else {
            Err(LfdError::InvalidTable(diags.join("; ")))
        }
    }

    /// Reads the `atom,f_1,...,f_M,g` CSV layout.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 {
            return Err(LfdError::InvalidTable(format!(
                "header needs atom, at least one null and the alternative; got {} columns",
                header.len()
            )));
        }
        let m = header.len() - 2;
        let mut atoms = Vec::new();
        let mut nulls = vec![Vec::new(); m];
        let mut alt = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                let field = rec.get(i).unwrap_or("");
                field.parse::<f64>().map_err(|_| {
                    LfdError::InvalidTable(format!(
                        "row {}: cannot parse {:?} in column {}",
                        line + 1,
                        field,
                        header[i]
                    ))
                })
            };
            if rec.len() != header.len() {
                return Err(LfdError::InvalidTable(format!(
                    "row {}: expected {} fields, got {}",
                    line + 1,
                    header.len(),
                    rec.len()
                )));
            }
            atoms.push(parse(0)?);
            for (j, col) in nulls.iter_mut().enumerate() {
                col.push(parse(j + 1)?);
            }
            alt.push(parse(m + 1)?);
        }
        Self::with_names(
            atoms,
            nulls,
            alt,
            header[1..=m].to_vec(),
            header[m + 1].clone(),
        )
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| LfdError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(f)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("atom");
        for n in &self.null_names {
            out.push(',');
            out.push_str(n);
        }
        out.push(',');
        out.push_str(&self.alt_name);
        out.push('\n');
        for k in 0..self.atoms.len() {
            out.push_str(&self.atoms[k].to_string());
            for row in &self.null_masses {
                out.push(',');
                out.push_str(&row[k].to_string());
            }
            out.push(',');
            out.push_str(&self.alt_masses[k].to_string());
            out.push('\n');
        }
        out
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_nulls(&self) -> usize {
        self.null_masses.len()
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn null_masses(&self) -> &[Vec<f64>] {
        &self.null_masses
    }

    pub fn alt_masses(&self) -> &[f64] {
        &self.alt_masses
    }

    pub fn null_names(&self) -> &[String] {
        &self.null_names
    }

    #[inline]
    pub fn log_null(&self, m: usize, k: usize) -> f64 {
        self.log_null[m][k]
    }

    #[inline]
    pub fn log_alt(&self, k: usize) -> f64 {
        self.log_alt[k]
    }

    /// Index of the atom equal to `y`, if any.
    pub fn atom_index(&self, y: f64) -> Option<usize> {
        self.lookup
            .binary_search_by(|probe| probe.0.total_cmp(&y))
            .ok()
            .map(|pos| self.lookup[pos].1)
    }

    /// Normalization and sign problems, one line each.
    pub fn mass_diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |label: &str, row: &[f64]| {
            for (k, &p) in row.iter().enumerate() {
                if p < 0.0 {
                    out.push(format!("{label} atom {} negative mass {p}", self.atoms[k]));
                }
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > MASS_TOLERANCE {
                out.push(format!("{label} mass {total}"));
            }
        };
        for (m, row) in self.null_masses.iter().enumerate() {
            check(&format!("null {}", m + 1), row);
        }
        check("alternative", &self.alt_masses);
        out
    }

    /// Wraps the table as a testing problem at level `alpha`.
    pub fn into_problem(self, alpha: f64) -> Result<TestingProblem> {
        TestingProblem::discrete(Arc::new(self), alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Null(usize),
    Alternative,
}

/// A row of a [`DiscreteProblem`] seen as a density on the atoms.
#[derive(Debug, Clone)]
pub struct DiscreteMember {
    table: Arc<DiscreteProblem>,
    row: Row,
    cumulative: Vec<f64>,
}

impl DiscreteMember {
    fn new(table: Arc<DiscreteProblem>, row: Row) -> Self {
        let masses = match row {
            Row::Null(m) => &table.null_masses[m],
            Row::Alternative => &table.alt_masses,
        };
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|&p| {
                acc += p.max(0.0);
                acc
            })
            .collect();
        Self {
            table,
            row,
            cumulative,
        }
    }

    fn log_mass(&self, k: usize) -> f64 {
        match self.row {
            Row::Null(m) => self.table.log_null[m][k],
            Row::Alternative => self.table.log_alt[k],
        }
    }
}

impl DensityMember for DiscreteMember {
    fn log_pdf(&self, y: f64) -> f64 {
        self.table
            .atom_index(y)
            .map_or(LOG_ZERO, |k| self.log_mass(k))
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let total = *self.cumulative.last().expect("nonempty table");
        let u: f64 = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        // u < total always, but guard against a trailing run of zero masses
        let k = k.min(self.cumulative.len() - 1);
        self.table.atoms[k]
    }
}

/// Reference-measure tag of a problem.
#[derive(Debug, Clone)]
pub enum SampleSpace {
    Continuous,
    Discrete(Arc<DiscreteProblem>),
}

/// Nulls `f_1..f_M`, alternative `g`, level `alpha`.
#[derive(Debug, Clone)]
pub struct TestingProblem {
    nulls: Vec<Arc<dyn DensityMember>>,
    alternative: Arc<dyn DensityMember>,
    alpha: f64,
    sample_space: SampleSpace,
    null_labels: Vec<String>,
    location_grid: Option<LocationGrid>,
}

/// Unit-variance Gaussian nulls with means `theta0 − m·step`.
#[derive(Debug, Clone)]
struct LocationGrid {
    means: Vec<f64>,
    theta0: f64,
    step: f64,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(LfdError::InvalidArgument(format!(
            "alpha must lie in (0,1), got {alpha}"
        )))
    }
}

impl TestingProblem {
    /// A continuous problem from user-supplied members.
    pub fn continuous(
        nulls: Vec<Arc<dyn DensityMember>>,
        alternative: Arc<dyn DensityMember>,
        alpha: f64,
        null_labels: Vec<String>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if nulls.is_empty() {
            return Err(LfdError::InvalidArgument(
                "at least one null density is required".into(),
            ));
        }
        check_dim(nulls.len(), null_labels.len())?;
        Ok(Self {
            nulls,
            alternative,
            alpha,
            sample_space: SampleSpace::Continuous,
            null_labels,
            location_grid: None,
        })
    }

    pub fn discrete(table: Arc<DiscreteProblem>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let nulls = (0..table.num_nulls())
            .map(|m| {
                Arc::new(DiscreteMember::new(table.clone(), Row::Null(m))) as Arc<dyn DensityMember>
            })
            .collect();
        let alternative = Arc::new(DiscreteMember::new(table.clone(), Row::Alternative));
        Ok(Self {
            nulls,
            alternative,
            alpha,
            null_labels: table.null_names.clone(),
            sample_space: SampleSpace::Discrete(table),
            location_grid: None,
        })
    }

    pub fn num_nulls(&self) -> usize {
        self.nulls.len()
    }

    pub fn nulls(&self) -> &[Arc<dyn DensityMember>] {
        &self.nulls
    }

    pub fn alternative(&self) -> &Arc<dyn DensityMember> {
        &self.alternative
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sample_space(&self) -> &SampleSpace {
        &self.sample_space
    }

    /// The finite table behind a discrete problem.
    pub fn discrete_table(&self) -> Option<&Arc<DiscreteProblem>> {
        match &self.sample_space {
            SampleSpace::Discrete(t) => Some(t),
            SampleSpace::Continuous => None,
        }
    }

    /// Location parameter or column name per null, used when reporting weights.
    pub fn null_labels(&self) -> &[String] {
        &self.null_labels
    }

    /// Same problem at a different level.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }
}

/// Gaussian location problem: nulls `N(theta, 1)` for `M` equally spaced
/// `theta` on `[lo, hi]` ordered from `hi` down to `lo`, alternative `N(theta1, 1)`.
pub fn gaussian_location_problem(
    m: usize,
    lo: f64,
    hi: f64,
    theta1: f64,
    alpha: f64,
) -> Result<TestingProblem> {
    if m < 2 {
        return Err(LfdError::InvalidArgument(format!(
            "grid needs M >= 2 points, got {m}"
        )));
    }
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(LfdError::InvalidArgument(format!(
            "need lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !theta1.is_finite() {
        return Err(LfdError::InvalidArgument("theta1 must be finite".into()));
    }
    check_alpha(alpha)?;
    let step = (hi - lo) / (m - 1) as f64;
    let thetas: Vec<f64> = (0..m)
        .map(|i| if i == m - 1 { lo } else { hi - step * i as f64 })
        .collect();
    let nulls = thetas
        .iter()
        .map(|&t| Arc::new(GaussianLocation { mean: t }) as Arc<dyn DensityMember>)
        .collect();
    let labels = thetas.iter().map(|t| t.to_string()).collect();
    let mut problem = TestingProblem::continuous(
        nulls,
        Arc::new(GaussianLocation { mean: theta1 }),
        alpha,
        labels,
    )?;
    problem.location_grid = Some(LocationGrid {
        means: thetas,
        theta0: hi,
        step,
    });
    Ok(problem)
}

/// `ln Σ exp(terms)`, shifted by the maximum. Empty or all-`-inf` input gives `-inf`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|&a| (a - max).exp()).sum();
    max + sum.ln()
}

/// `ln Σ_m exp(log_weights[m]) f_m(y)` using `buf` as scratch.
#[inline]
pub(crate) fn log_mixture_with(
    log_weights: &[f64],
    y: f64,
    members: &[Arc<dyn DensityMember>],
    buf: &mut Vec<f64>,
) -> f64 {
    buf.clear();
    for (lw, member) in log_weights.iter().zip(members) {
        if *lw == LOG_ZERO {
            continue;
        }
        buf.push(lw + member.log_pdf(y));
    }
    log_sum_exp(buf)
}

// Beyond this value of |y|·(θ_0 − θ_{M−1}) the geometric evaluation could
// lose terms to underflow, so the generic path is used instead.
const GRID_SPAN_LIMIT: f64 = 300.0;

/// `ln Σ_m κ_m f_m(·)` for one fixed `κ`, prepared for repeated evaluation.
///
/// For the Gaussian location preset the nulls sit on an equally spaced grid
/// and `Σ_m κ_m φ(y − θ_m) = φ(y) e^{yθ_0} Σ_m κ_m e^{−θ_m²/2} z^m` with
/// `z = e^{−y·step}`, a polynomial in `z` evaluated by Horner's rule. This
/// avoids one `exp` per null and agrees with the log-sum-exp form to about
/// `M` ulps. Other problems use log-sum-exp directly.
#[derive(Debug, Clone)]
pub struct MixtureCache {
    log_weights: Vec<f64>,
    // (u_m = exp(b_m − B), B) with b_m = ln κ_m − θ_m²/2
    horner: Option<(Vec<f64>, f64)>,
}

impl MixtureCache {
    pub fn new(problem: &TestingProblem, log_weights: &[f64]) -> Self {
        let horner = problem.location_grid.as_ref().and_then(|grid| {
            let b: Vec<f64> = log_weights
                .iter()
                .zip(&grid.means)
                .map(|(lk, t)| lk - 0.5 * t * t)
                .collect();
            let big_b = b.iter().copied().fold(LOG_ZERO, f64::max);
            big_b
                .is_finite()
                .then(|| (b.iter().map(|bm| (bm - big_b).exp()).collect(), big_b))
        });
        Self {
            log_weights: log_weights.to_vec(),
            horner,
        }
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_mixture(&self, problem: &TestingProblem, y: f64, buf: &mut Vec<f64>) -> f64 {
        if let (Some((u, big_b)), Some(grid)) = (&self.horner, &problem.location_grid) {
            let span = grid.step * (u.len() - 1) as f64;
            if (y.abs() * span) <= GRID_SPAN_LIMIT {
                let z = (-y * grid.step).exp();
                let s = horner4(u, z);
                if s > 0.0 && s.is_finite() {
                    return -HALF_LN_2PI - 0.5 * y * y + big_b + y * grid.theta0 + s.ln();
                }
            }
        }
        log_mixture_with(&self.log_weights, y, problem.nulls(), buf)
    }
}

/// `Σ_m u_m z^m`, split into four interleaved Horner chains for
/// instruction-level parallelism.
#[inline]
fn horner4(u: &[f64], z: f64) -> f64 {
    let z4 = (z * z) * (z * z);
    let mut acc = [0.0f64; 4];
    let chunks = u.chunks_exact(4);
    let tail = chunks.remainder();
    // tail holds the highest powers; it seeds the chains
    for (j, &t) in tail.iter().enumerate() {
        acc[j] = t;
    }
    for c in chunks.rev() {
        for j in 0..4 {
            acc[j] = acc[j] * z4 + c[j];
        }
    }
    // chain j holds Σ_k u_{4k+j} z4^k
    ((acc[3] * z + acc[2]) * z + acc[1]) * z + acc[0]
}

/// `ln Σ_m κ_m f_m(y)`.
pub fn log_mixture(kappa: &Multipliers, y: f64, problem: &TestingProblem) -> Result<f64> {
    check_dim(problem.num_nulls(), kappa.len())?;
    let cache = MixtureCache::new(problem, &kappa.log_values());
    Ok(cache.log_mixture(problem, y, &mut Vec::with_capacity(kappa.len())))
}

/// Knobs for [`validate_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Draws per member for the continuous smoke check.
    pub draws: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            draws: 2_000,
            seed: 0,
        }
    }
}

/// Consistency diagnostics; empty when the problem looks sound.
pub fn validate(problem: &TestingProblem) -> Vec<String> {
    validate_with(problem, ValidationOptions::default())
}

pub fn validate_with(problem: &TestingProblem, opts: ValidationOptions) -> Vec<String> {
    match problem.sample_space() {
        SampleSpace::Discrete(table) => table.mass_diagnostics(),
        SampleSpace::Continuous => {
            let stream = CounterStream::new(opts.seed);
            let mut out = Vec::new();
            let members = problem
                .nulls()
                .iter()
                .enumerate()
                .map(|(m, d)| (format!("null {}", m + 1), d));
            for (idx, (label, member)) in members
                .chain(std::iter::once((
                    "alternative".to_string(),
                    problem.alternative(),
                )))
                .enumerate()
            {
                let mut rng = stream.substream(domain::VALIDATION, idx as u64, 0);
                if let Some(msg) = ks_smoke_check(member.as_ref(), opts.draws.max(10), &mut rng) {
                    out.push(format!("{label} {msg}"));
                }
            }
            out
        }
    }
}

/// Compares the empirical CDF of draws with the CDF obtained by integrating
/// `exp(log_pdf)` on a fine grid spanning the draws.
fn ks_smoke_check(
    member: &dyn DensityMember,
    draws: usize,
    rng: &mut dyn RngCore,
) -> Option<String> {
    let mut xs: Vec<f64> = (0..draws).map(|_| member.sample(rng)).collect();
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Some(format!("sampler produced non-finite value {bad}"));
    }
    xs.sort_by(f64::total_cmp);
    let (min, max) = (xs[0], xs[draws - 1]);
    let range = (max - min).max(1e-6);
    let (lo, hi) = (min - 0.5 * range, max + 0.5 * range);
    const CELLS: usize = 20_000;
    let h = (hi - lo) / CELLS as f64;
    let dens = |x: f64| {
        let l = member.log_pdf(x);
        if l.is_nan() {
            0.0
        } else {
            l.exp()
        }
    };
    let mut cdf = Vec::with_capacity(CELLS + 1);
    cdf.push(0.0);
    let mut prev = dens(lo);
    for i in 1..=CELLS {
        let cur = dens(lo + h * i as f64);
        cdf.push(cdf[i - 1] + 0.5 * h * (prev + cur));
        prev = cur;
    }
    let total = cdf[CELLS];
    if (total - 1.0).abs() > 0.05 {
        return Some(format!(
            "density integrates to {total:.4} over the sampled range"
        ));
    }
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let pos = ((x - lo) / h).clamp(0.0, CELLS as f64);
        let j = (pos.floor() as usize).min(CELLS - 1);
        let frac = pos - j as f64;
        let f = cdf[j] + frac * (cdf[j + 1] - cdf[j]);
        let lo_gap = (f - i as f64 / draws as f64).abs();
        let hi_gap = ((i + 1) as f64 / draws as f64 - f).abs();
        d = d.max(lo_gap).max(hi_gap);
    }
    let critical = 1.95 / (draws as f64).sqrt() + 0.01;
    (d > critical)
        .then(|| format!("sampler and log_pdf disagree: KS distance {d:.4} > {critical:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn two_atom() -> DiscreteProblem {
        DiscreteProblem::new(
            vec![1.0, 2.0],
            vec![vec![0.9, 0.1], vec![0.5, 0.5]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn gaussian_preset_grid() {
        let p = gaussian_location_problem(200, -5.0, 0.0, 2.0, 0.1).unwrap();
        assert_eq!(p.num_nulls(), 200);
        assert_eq!(p.null_labels()[0], "0");
        assert_eq!(p.null_labels()[199], "-5");
        // alternative mean 2: log g(2) is the peak value
        assert_relative_eq!(p.alternative().log_pdf(2.0), -HALF_LN_2PI, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_preset_degenerate_alternative() {
        let p = gaussian_location_problem(2, -1.0, 0.0, 0.0, 0.1).unwrap();
        assert_eq!(p.null_labels(), ["0", "-1"]);
        for y in [-2.0, 0.0, 0.7] {
            assert_eq!(p.nulls()[0].log_pdf(y), p.alternative().log_pdf(y));
        }
    }

    #[test]
    fn gaussian_preset_log_density_closed_form() {
        let p = gaussian_location_problem(3, 0.0, 1.0, 5.0, 0.05).unwrap();
        assert_eq!(p.null_labels(), ["1", "0.5", "0"]);
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(p.nulls()[1].log_pdf(0.5), expected, epsilon = 1e-15);
    }

    #[test]
    fn gaussian_preset_rejects_bad_args() {
        assert!(gaussian_location_problem(1, -1.0, 0.0, 1.0, 0.1).is_err());
        assert!(gaussian_location_problem(3, 0.0, 0.0, 1.0, 0.1).is_err());
        assert!(gaussian_location_problem(3, 1.0, 0.0, 1.0, 0.1).is_err());
        assert!(gaussian_location_problem(3, -1.0, 0.0, 1.0, 0.0).is_err());
        assert!(gaussian_location_problem(3, -1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn log_mixture_examples() {
        let p = gaussian_location_problem(2, -1.0, 0.0, 1.0, 0.1).unwrap();
        let zero = Multipliers::new(vec![0.0, 0.0], 0.1).unwrap();
        assert_eq!(log_mixture(&zero, 0.3, &p).unwrap(), LOG_ZERO);

        let single = TestingProblem::continuous(
            vec![Arc::new(GaussianLocation { mean: 0.0 })],
            Arc::new(GaussianLocation { mean: 2.0 }),
            0.1,
            vec!["0".into()],
        )
        .unwrap();
        let k = Multipliers::new(vec![2.0], 0.1).unwrap();
        assert_relative_eq!(
            log_mixture(&k, 0.0, &single).unwrap(),
            2f64.ln() - HALF_LN_2PI,
            epsilon = 1e-14
        );

        let d = two_atom().into_problem(0.1).unwrap();
        let k = Multipliers::new(vec![1.0, 1.0], 0.1).unwrap();
        assert_relative_eq!(
            log_mixture(&k, 2.0, &d).unwrap(),
            0.6f64.ln(),
            epsilon = 1e-14
        );
        assert!(matches!(
            log_mixture(&Multipliers::new(vec![1.0], 0.1).unwrap(), 2.0, &d),
            Err(LfdError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn discrete_log_pdf_off_support_is_sentinel() {
        let d = two_atom().into_problem(0.1).unwrap();
        assert_eq!(d.nulls()[0].log_pdf(3.0), LOG_ZERO);
        let z = DiscreteProblem::new(vec![0.0, 1.0], vec![vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(z.log_null(0, 1), LOG_ZERO);
    }

    #[test]
    fn discrete_sampler_frequencies() {
        let d = two_atom().into_problem(0.1).unwrap();
        let mut rng = CounterStream::new(3).substream(99, 0, 0);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| d.nulls()[0].sample(&mut rng) == 2.0)
            .count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.1).abs() < 4.0 * (0.09f64 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn validate_reports_mass_problems() {
        let bad =
            DiscreteProblem::new(vec![1.0, 2.0], vec![vec![0.9, 0.09]], vec![0.5, 0.5]).unwrap();
        let diags = validate(&bad.into_problem(0.1).unwrap());
        assert_eq!(diags, vec!["null 1 mass 0.99".to_string()]);

        let neg =
            DiscreteProblem::new(vec![1.0, 2.5], vec![vec![1.1, -0.1]], vec![0.5, 0.5]).unwrap();
        let diags = validate(&neg.into_problem(0.1).unwrap());
        assert_eq!(diags.len(), 1);
        assert!(diags[0].contains("atom 2.5"), "{diags:?}");

        assert!(validate(&two_atom().into_problem(0.1).unwrap()).is_empty());
        assert!(DiscreteProblem::new_checked(vec![1.0], vec![vec![0.5]], vec![1.0]).is_err());
    }

    #[test]
    fn validate_gaussian_is_clean() {
        let p = gaussian_location_problem(5, -1.0, 0.0, 2.0, 0.1).unwrap();
        assert!(validate(&p).is_empty());
    }

    #[derive(Debug)]
    struct Mismatched;
    impl DensityMember for Mismatched {
        fn log_pdf(&self, y: f64) -> f64 {
            GaussianLocation { mean: 0.0 }.log_pdf(y)
        }
        fn sample(&self, rng: &mut dyn RngCore) -> f64 {
            GaussianLocation { mean: 1.0 }.sample(rng)
        }
    }

    #[test]
    fn validate_flags_inconsistent_sampler() {
        let p = TestingProblem::continuous(
            vec![Arc::new(Mismatched)],
            Arc::new(GaussianLocation { mean: 0.0 }),
            0.1,
            vec!["x".into()],
        )
        .unwrap();
        let diags = validate(&p);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].starts_with("null 1"), "{diags:?}");
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "atom,f_1,f_2,g\n0,0.5,0.2,0.1\n1,0.5,0.8,0.9\n";
        let dp = DiscreteProblem::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(dp.num_nulls(), 2);
        assert_eq!(dp.null_masses()[1], vec![0.2, 0.8]);
        let again = DiscreteProblem::from_csv_reader(dp.to_csv_string().as_bytes()).unwrap();
        assert_eq!(again.alt_masses(), dp.alt_masses());

        assert!(DiscreteProblem::from_csv_reader("atom,g\n0,1\n".as_bytes()).is_err());
        assert!(DiscreteProblem::from_csv_reader("atom,f_1,g\n0,x,1\n".as_bytes()).is_err());
        assert!(
            DiscreteProblem::from_csv_reader("atom,f_1,g\n0,0.5,0.5\n0,0.5,0.5\n".as_bytes())
                .is_err()
        );
    }

    #[test]
    fn horner_matches_naive_sum() {
        for n in 1..13 {
            let u: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
            for z in [0.3f64, 1.0, 1.7] {
                let naive: f64 = u
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * z.powi(i as i32))
                    .sum();
                assert!(
                    (horner4(&u, z) - naive).abs() <= 1e-13 * naive,
                    "n={n} z={z}"
                );
            }
        }
    }

    #[test]
    fn prepared_mixture_matches_log_sum_exp() {
        let p = gaussian_location_problem(200, -5.0, 0.0, 2.0, 0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut buf = Vec::new();
        for _ in 0..200 {
            let lk: Vec<f64> = (0..200).map(|_| rng.random_range(-60.0..0.0)).collect();
            let cache = MixtureCache::new(&p, &lk);
            for y in [-40.0, -7.5, -1.0, 0.0, 0.3, 2.0, 9.0, 50.0] {
                let fast = cache.log_mixture(&p, y, &mut buf);
                let slow = log_mixture_with(&lk, y, p.nulls(), &mut buf);
                assert!(
                    (fast - slow).abs() <= 1e-11 * slow.abs().max(1.0),
                    "y={y}: {fast} vs {slow}"
                );
            }
        }
        // far outside the span limit the generic path is taken
        let lk = vec![0.0; 200];
        let cache = MixtureCache::new(&p, &lk);
        assert_eq!(
            cache.log_mixture(&p, 1e3, &mut buf),
            log_mixture_with(&lk, 1e3, p.nulls(), &mut buf)
        );
    }

    #[test]
    fn log_sum_exp_edges() {
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(
            log_sum_exp(&[-1000.0, -1000.0]),
            -1000.0 + 2f64.ln(),
            epsilon = 1e-12
        );
    }
}
