//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's statistics code.
#![allow(dead_code)]

use rand::Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

pub struct AnovaOracle {
    pub ss_t: f64,
    pub ss_b: f64,
    pub ss_w: f64,
    pub df_b: f64,
    pub df_w: f64,
    pub ms_w: f64,
    pub f: f64,
}

/// One-way ANOVA written straight from the textbook sums.
pub fn anova(groups: &[Vec<f64>]) -> AnovaOracle {
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    let mut all = 0.0;
    for g in groups {
        for x in g {
            all += x;
        }
    }
    let grand = all / n as f64;
    let mut ss_t = 0.0;
    let mut ss_b = 0.0;
    let mut ss_w = 0.0;
    for g in groups {
        let mut s = 0.0;
        for x in g {
            s += x;
        }
        let m = s / g.len() as f64;
        ss_b += g.len() as f64 * (m - grand) * (m - grand);
        for x in g {
            ss_t += (x - grand) * (x - grand);
            ss_w += (x - m) * (x - m);
        }
    }
    let df_b = (k - 1) as f64;
    let df_w = (n - k) as f64;
    let ms_w = ss_w / df_w;
    AnovaOracle {
        ss_t,
        ss_b,
        ss_w,
        df_b,
        df_w,
        ms_w,
        f: (ss_b / df_b) / ms_w,
    }
}

pub fn t_crit(alpha: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .unwrap()
        .inverse_cdf(1.0 - alpha / 2.0)
}

pub fn f_crit(alpha: f64, d1: f64, d2: f64) -> f64 {
    FisherSnedecor::new(d1, d2)
        .unwrap()
        .inverse_cdf(1.0 - alpha)
}

pub struct PairOracle {
    pub i: usize,
    pub j: usize,
    pub diff: f64,
    pub t: f64,
    pub lsd: f64,
    pub significant: bool,
}

/// Every unordered pair under the LSD rule, in index order.
pub fn lsd_pairs(groups: &[Vec<f64>], alpha: f64) -> Vec<PairOracle> {
    let a = anova(groups);
    let t_a = t_crit(alpha, a.df_w);
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let inv = 1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64;
            let se = (a.ms_w * inv).sqrt();
            let diff = (means[i] - means[j]).abs();
            let lsd = t_a * se;
            out.push(PairOracle {
                i,
                j,
                diff,
                t: diff / se,
                lsd,
                significant: diff > 0.0 && diff >= lsd,
            });
        }
    }
    out
}

/// Random groups with k in 2..=6 and sizes in 2..=20, values in [0, 1000).
pub fn random_groups<R: Rng>(rng: &mut R) -> Vec<Vec<f64>> {
    let k = rng.random_range(2..=6);
    (0..k)
        .map(|_| {
            let n = rng.random_range(2..=20);
            let offset = rng.random_range(0.0..500.0);
            (0..n)
                .map(|_| offset + rng.random_range(0.0..500.0))
                .collect()
        })
        .collect()
}

/// Small instances built from a few well-separated levels plus integer
/// jitter, in the spirit of `[[1,1,1],[1,1,1],[10,10,10]]`.
pub fn separated_groups<R: Rng>(rng: &mut R) -> Vec<Vec<f64>> {
    let k = rng.random_range(2..=5);
    let levels = [1.0, 10.0, 25.0];
    let jitter: i32 = rng.random_range(0..=2);
    (0..k)
        .map(|_| {
            let level = levels[rng.random_range(0..levels.len())];
            let n = rng.random_range(2..=6);
            (0..n)
                .map(|_| level + f64::from(rng.random_range(-jitter..=jitter)))
                .map(|x: f64| x.max(0.0))
                .collect()
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
