//! One-way analysis of variance over per-server traffic windows.
//!
//! Each group holds the traffic observed on one server port over a series of
//! monitoring windows. The F statistic compares between-group variation with
//! within-group variation; pairwise LSD comparisons identify which servers
//! differ once the F-test fires.

mod dist;

pub use dist::{
    f_critical, inverse_regularized_incomplete_beta, ln_gamma, regularized_incomplete_beta,
    t_critical,
};

use serde::Serialize;
use thiserror::Error;

/// Identifier attached to a sample group. Servers use their numeric id.
pub type GroupId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least two groups with samples, got {0}")]
    EmptyInput(usize),
    #[error("group {0} has no samples")]
    EmptyGroup(GroupId),
    #[error("group {group} holds invalid sample {value} (must be finite and non-negative)")]
    InvalidSample { group: GroupId, value: f64 },
    #[error("duplicate group id {0}")]
    DuplicateGroup(GroupId),
    #[error("within-group degrees of freedom must be at least 1 (N = {total}, k = {groups})")]
    InsufficientDegreesOfFreedom { total: usize, groups: usize },
    #[error("significance level {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("degrees of freedom must be at least 1")]
    InvalidDegreesOfFreedom,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// One group of observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    pub id: GroupId,
    pub samples: Vec<f64>,
}

impl Group {
    pub fn new(id: GroupId, samples: Vec<f64>) -> Self {
        Self { id, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Validated collection of sample groups (`k >= 2`, every group non-empty,
/// all samples finite and non-negative).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleGroups {
    groups: Vec<Group>,
}

impl SampleGroups {
    pub fn new(groups: Vec<Group>) -> Result<Self, StatsError> {
        if groups.len() < 2 {
            return Err(StatsError::EmptyInput(groups.len()));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(StatsError::EmptyGroup(g.id));
            }
            if let Some(&value) = g.samples.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(StatsError::InvalidSample { group: g.id, value });
            }
            if groups[..i].iter().any(|h| h.id == g.id) {
                return Err(StatsError::DuplicateGroup(g.id));
            }
        }
        Ok(Self { groups })
    }

    /// Builds groups with ids `0..k` from plain sample vectors.
    pub fn from_vecs(data: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        Self::new(
            data.into_iter()
                .enumerate()
                .map(|(i, s)| Group::new(i as GroupId, s))
                .collect(),
        )
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Number of groups, `k`.
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    /// Total sample count, `N`.
    pub fn total(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn map_samples(&self, f: impl Fn(f64) -> f64) -> Result<Self, StatsError> {
        Self::new(
            self.groups
                .iter()
                .map(|g| Group::new(g.id, g.samples.iter().map(|&x| f(x)).collect()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SumSquares {
    pub total: f64,
    pub between: f64,
    pub within: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaReport {
    pub grand_mean: f64,
    pub ss_t: f64,
    pub ss_b: f64,
    pub ss_w: f64,
    pub df_b: u64,
    pub df_w: u64,
    pub ms_b: f64,
    pub ms_w: f64,
    /// `+inf` when within-group variance is zero but the group means differ.
    pub f_value: f64,
    pub f_critical: f64,
    pub alpha: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairComparison {
    pub pair: (GroupId, GroupId),
    pub mean_diff: f64,
    pub t_value: f64,
    pub lsd_threshold: f64,
    pub significant: bool,
}

/// Mean of every sample across all groups.
pub fn grand_mean(data: &SampleGroups) -> f64 {
    let n = data.total();
    data.groups
        .iter()
        .flat_map(|g| g.samples.iter())
        .sum::<f64>()
        / n as f64
}

pub fn sum_squares(data: &SampleGroups) -> SumSquares {
    let gm = grand_mean(data);
    let mut total = 0.0;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in &data.groups {
        let m = g.mean();
        between += g.len() as f64 * (m - gm) * (m - gm);
        for &x in &g.samples {
            total += (x - gm) * (x - gm);
            within += (x - m) * (x - m);
        }
    }
    SumSquares {
        total,
        between,
        within,
    }
}

/// One-way ANOVA F-test at significance level `alpha`.
pub fn f_test(data: &SampleGroups, alpha: f64) -> Result<AnovaReport, StatsError> {
    let k = data.k();
    let n = data.total();
    if n <= k {
        return Err(StatsError::InsufficientDegreesOfFreedom {
            total: n,
            groups: k,
        });
    }
    let df_b = (k - 1) as u64;
    let df_w = (n - k) as u64;
    let crit = f_critical(alpha, df_b, df_w)?;
    Ok(report_with_critical(data, alpha, crit))
}

/// Same as [`f_test`] with a precomputed critical value; `alpha` is only recorded.
pub(crate) fn report_with_critical(data: &SampleGroups, alpha: f64, crit: f64) -> AnovaReport {
    let k = data.k();
    let n = data.total();
    let ss = sum_squares(data);
    let df_b = (k - 1) as u64;
    let df_w = (n - k) as u64;
    let ms_b = ss.between / df_b as f64;
    let ms_w = ss.within / df_w as f64;
    let f_value = degenerate_aware_ratio(ms_b, ms_w, ss.total);
    AnovaReport {
        grand_mean: grand_mean(data),
        ss_t: ss.total,
        ss_b: ss.between,
        ss_w: ss.within,
        df_b,
        df_w,
        ms_b,
        ms_w,
        f_value,
        f_critical: crit,
        alpha,
        significant: f_value > crit,
    }
}

/// `ms_b / ms_w`, treating rounding-level within variance as zero.
fn degenerate_aware_ratio(ms_b: f64, ms_w: f64, ss_t: f64) -> f64 {
    let noise = 1e-12 * ss_t.max(f64::MIN_POSITIVE);
    if ms_w > noise {
        ms_b / ms_w
    } else if ms_b > noise {
        f64::INFINITY
    } else {
        0.0
    }
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Pooled two-sample t statistic using the ANOVA error mean square.
///
/// `df_w` is carried for interface symmetry with the LSD threshold; the
/// statistic itself does not depend on it.
pub fn t_test_pair(g0: &[f64], g1: &[f64], ms_w: f64, df_w: u64) -> Result<f64, StatsError> {
    if g0.is_empty() || g1.is_empty() {
        return Err(StatsError::InvalidArgument("t-test needs non-empty groups"));
    }
    if df_w == 0 {
        return Err(StatsError::InvalidDegreesOfFreedom);
    }
    if !ms_w.is_finite() || ms_w < 0.0 {
        return Err(StatsError::InvalidArgument("ms_w must be finite and >= 0"));
    }
    let diff = (mean(g0) - mean(g1)).abs();
    let se2 = ms_w * (1.0 / g0.len() as f64 + 1.0 / g1.len() as f64);
    if se2 > 0.0 {
        Ok(diff / se2.sqrt())
    } else if diff > 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(0.0)
    }
}

/// Balanced-design least significant difference, `t_alpha(df_w) * sqrt(2 ms_w / n)`.
pub fn lsd_threshold(alpha: f64, df_w: u64, ms_w: f64, n: usize) -> Result<f64, StatsError> {
    lsd_threshold_pair(alpha, df_w, ms_w, n, n)
}

/// LSD for groups of sizes `n_i` and `n_j`; reduces to the balanced form when equal.
pub fn lsd_threshold_pair(
    alpha: f64,
    df_w: u64,
    ms_w: f64,
    n_i: usize,
    n_j: usize,
) -> Result<f64, StatsError> {
    let t = t_critical(alpha, df_w)?;
    lsd_from_critical(t, ms_w, n_i, n_j)
}

fn lsd_from_critical(t: f64, ms_w: f64, n_i: usize, n_j: usize) -> Result<f64, StatsError> {
    if n_i == 0 || n_j == 0 {
        return Err(StatsError::InvalidArgument("group size must be at least 1"));
    }
    if !ms_w.is_finite() || ms_w < 0.0 {
        return Err(StatsError::InvalidArgument("ms_w must be finite and >= 0"));
    }
    Ok(t * (ms_w * (1.0 / n_i as f64 + 1.0 / n_j as f64)).sqrt())
}

/// LSD post-hoc comparison of every unordered pair of groups.
///
/// Pairs are returned with the smaller id first, sorted lexicographically.
pub fn multiple_comparisons(
    data: &SampleGroups,
    alpha: f64,
) -> Result<Vec<PairComparison>, StatsError> {
    let report = f_test(data, alpha)?;
    let t = t_critical(alpha, report.df_w)?;
    comparisons_with_critical(data, &report, t)
}

pub(crate) fn comparisons_with_critical(
    data: &SampleGroups,
    report: &AnovaReport,
    t_crit: f64,
) -> Result<Vec<PairComparison>, StatsError> {
    let mut order: Vec<&Group> = data.groups.iter().collect();
    order.sort_by_key(|g| g.id);
    let mut out = Vec::with_capacity(order.len() * (order.len() - 1) / 2);
    for (i, a) in order.iter().enumerate() {
        for b in &order[i + 1..] {
            let mean_diff = (a.mean() - b.mean()).abs();
            let t_value = t_test_pair(&a.samples, &b.samples, report.ms_w, report.df_w)?;
            let lsd = lsd_from_critical(t_crit, report.ms_w, a.len(), b.len())?;
            out.push(PairComparison {
                pair: (a.id, b.id),
                mean_diff,
                t_value,
                lsd_threshold: lsd,
                // a zero threshold (no error variance) must not flag equal means
                significant: mean_diff > 0.0 && mean_diff >= lsd,
            });
        }
    }
    Ok(out)
}

/// Looks up the comparison for an unordered pair.
pub fn find_pair(
    comparisons: &[PairComparison],
    a: GroupId,
    b: GroupId,
) -> Option<&PairComparison> {
    let key = if a <= b { (a, b) } else { (b, a) };
    comparisons.iter().find(|c| c.pair == key)
}
