//! Posterior summaries: coefficient inference, additive-effect rankings,
//! the multiplicative matrix and clustering of latent positions.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::fmt_real;
use crate::sampler::Chain;

/// Posterior mean, sd and the 2.5/50/97.5% quantiles of a scalar.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectSummary {
    pub id: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl EffectSummary {
    pub fn from_draws(id: impl Into<String>, xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Input("no draws to summarize".into()));
        }
        let (mean, sd) = mean_sd(xs);
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            id: id.into(),
            mean,
            sd,
            q025: quantile_sorted(&sorted, 0.025),
            q50: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
        })
    }

    /// Whether the central 95% interval excludes zero.
    pub fn excludes_zero(&self) -> bool {
        self.q025 > 0.0 || self.q975 < 0.0
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided posterior tail probability `2 min(P(x > 0), P(x < 0))`.
pub fn tail_probability(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let pos = xs.iter().filter(|&&x| x > 0.0).count() as f64 / n;
    let neg = xs.iter().filter(|&&x| x < 0.0).count() as f64 / n;
    (2.0 * pos.min(neg)).min(1.0)
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
/// A constant series returns its length.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let autocov = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|t| (xs[t] - mean) * (xs[t + lag] - mean))
            .sum::<f64>()
            / n as f64
    };
    let g0 = autocov(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (-g0 + 2.0 * sum) / g0;
    if tau > 0.0 {
        n as f64 / tau
    } else {
        n as f64
    }
}

/// Monte Carlo standard error of the mean, `sd / sqrt(ESS)`.
pub fn mcse(xs: &[f64]) -> f64 {
    mean_sd(xs).1 / effective_sample_size(xs).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientSummary {
    #[serde(flatten)]
    pub summary: EffectSummary,
    pub tail_probability: f64,
    pub significant: bool,
    pub ess: f64,
}

fn require_draws(chain: &Chain) -> Result<()> {
    if chain.draws.is_empty() {
        Err(Error::Input("chain has no stored draws".into()))
    } else {
        Ok(())
    }
}

pub fn coefficient_summary(chain: &Chain) -> Result<Vec<CoefficientSummary>> {
    require_draws(chain)?;
    chain
        .coefficient_names
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let xs: Vec<f64> = chain.draws.iter().map(|d| d.params.beta[s]).collect();
            let summary = EffectSummary::from_draws(name.clone(), &xs)?;
            Ok(CoefficientSummary {
                significant: summary.excludes_zero(),
                tail_probability: tail_probability(&xs),
                ess: effective_sample_size(&xs),
                summary,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Sender effects `a`.
    Row,
    /// Receiver effects `b`.
    Column,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Row => "row",
            Side::Column => "column",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Largest,
    Smallest,
}

/// Summaries of every node's additive effect on one side, in node order.
pub fn additive_summaries(chain: &Chain, side: Side) -> Result<Vec<EffectSummary>> {
    require_draws(chain)?;
    if !chain.spec.variant.has_additive() {
        return Err(Error::Spec(format!(
            "{} has no additive effects",
            chain.spec.variant
        )));
    }
    chain
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let xs: Vec<f64> = chain
                .draws
                .iter()
                .map(|d| match side {
                    Side::Row => d.params.a[i],
                    Side::Column => d.params.b[i],
                })
                .collect();
            EffectSummary::from_draws(id.clone(), &xs)
        })
        .collect()
}

/// The `k` nodes with the largest (or smallest) posterior mean effect.
/// Nodes are totally ordered by mean, then by node id; `Smallest` is the
/// exact reverse of `Largest`.
pub fn rank_additive_effects(
    chain: &Chain,
    side: Side,
    direction: Direction,
    k: usize,
) -> Result<Vec<EffectSummary>> {
    let n = chain.node_ids.len();
    if k > n {
        return Err(Error::Input(format!("k = {k} exceeds the {n} nodes")));
    }
    let mut all = additive_summaries(chain, side)?;
    all.sort_by(|x, y| {
        y.mean
            .total_cmp(&x.mean)
            .then_with(|| x.id.cmp(&y.id))
    });
    if direction == Direction::Smallest {
        all.reverse();
    }
    all.truncate(k);
    Ok(all)
}

/// Posterior mean of `u_i' v_j` (mean of per-draw products), restricted to
/// `subset` in the given order, or all nodes when `subset` is `None`.
pub fn multiplicative_matrix(
    chain: &Chain,
    subset: Option<&[String]>,
) -> Result<(Vec<String>, DMatrix<f64>)> {
    require_draws(chain)?;
    if !chain.spec.variant.has_multiplicative() {
        return Err(Error::Spec(format!(
            "{} has no multiplicative effects",
            chain.spec.variant
        )));
    }
    let idx: Vec<usize> = match subset {
        None => (0..chain.node_ids.len()).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                chain
                    .node_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::Input(format!("unknown node id {id:?}")))
            })
            .collect::<Result<_>>()?,
    };
    let m = idx.len();
    let mut acc = DMatrix::zeros(m, m);
    for d in &chain.draws {
        let u = d.params.u.select_rows(idx.iter());
        let v = d.params.v.select_rows(idx.iter());
        acc += u * v.transpose();
    }
    acc /= chain.draws.len() as f64;
    let ids = idx.iter().map(|&i| chain.node_ids[i].clone()).collect();
    Ok((ids, acc))
}

/// Rotation-stable latent positions: the left singular vectors of the
/// posterior-mean `UV'` scaled by the square roots of the leading `R`
/// singular values. Each column's sign is fixed so its largest-magnitude
/// entry is positive.
pub fn stabilized_positions(chain: &Chain) -> Result<DMatrix<f64>> {
    let (_, m) = multiplicative_matrix(chain, None)?;
    let r = chain.spec.latent_rank;
    let n = m.nrows();
    let svd = m.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::numerical("SVD failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(n, r);
    for (c, &k) in order.iter().take(r).enumerate() {
        let scale = svd.singular_values[k].sqrt();
        let col = u.column(k);
        let pivot = col.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[(i, c)] = sign * scale * col[i];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub node_id: String,
    pub cluster: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// Labels in `0..k`, numbered by first appearance in row order.
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub wcss: f64,
}

pub const KMEANS_RESTARTS: usize = 50;
const LLOYD_MAX_ITER: usize = 300;

/// K-means on the rows of `points`: k-means++ seeding, Lloyd iterations,
/// best within-cluster sum of squares over `restarts` runs. Restart `r`
/// uses stream `r` of the generator seeded with `seed`.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Input(format!("cannot form {k} clusters from {n} points")));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let fit = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| fit.wcss < b.wcss) {
            best = Some(fit);
        }
    }
    Ok(canonical_labels(best.expect("at least one restart")))
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(centroids.row(c).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn plus_plus<R: Rng>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    centroids.set_row(0, &points.row(first));
    chosen[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a centroid; take an unused one
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.set_row(c, &points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    (0..points.nrows())
        .map(|i| {
            (0..centroids.nrows())
                .map(|c| (c, sq_dist(points, i, centroids, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("k >= 1")
        })
        .unzip()
}

fn lloyd(points: &DMatrix<f64>, mut centroids: DMatrix<f64>) -> KMeans {
    let (n, k) = (points.nrows(), centroids.nrows());
    let (mut labels, mut d2) = assign(points, &centroids);
    for _ in 0..LLOYD_MAX_ITER {
        let mut sums = DMatrix::zeros(k, points.ncols());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += points.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.set_row(c, &(sums.row(c) / counts[c] as f64));
            } else {
                // refill an empty cluster with the worst-fitting point
                let far = (0..n)
                    .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids.set_row(c, &points.row(far));
                d2[far] = 0.0;
            }
        }
        let (new_labels, new_d2) = assign(points, &centroids);
        let settled = new_labels == labels;
        labels = new_labels;
        d2 = new_d2;
        if settled {
            break;
        }
    }
    KMeans {
        wcss: d2.iter().sum(),
        labels,
        centroids,
    }
}

fn canonical_labels(fit: KMeans) -> KMeans {
    let k = fit.centroids.nrows();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &fit.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = next;
        next += 1;
    }
    let mut centroids = fit.centroids.clone();
    for (old, &new) in map.iter().enumerate() {
        centroids.set_row(new, &fit.centroids.row(old));
    }
    KMeans {
        labels: fit.labels.iter().map(|&l| map[l]).collect(),
        centroids,
        wcss: fit.wcss,
    }
}

/// K-means clusters of the rotation-stabilized latent positions.
pub fn cluster_multiplicative(chain: &Chain, k: usize, seed: u64) -> Result<Vec<ClusterAssignment>> {
    let points = stabilized_positions(chain)?;
    let fit = kmeans(&points, k, KMEANS_RESTARTS, seed)?;
    Ok(chain
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| ClusterAssignment {
            node_id: id.clone(),
            cluster: fit.labels[i],
            distance: sq_dist(&points, i, &fit.centroids, fit.labels[i]).sqrt(),
        })
        .collect())
}

pub fn write_coefficients_csv<W: Write>(mut out: W, rows: &[CoefficientSummary]) -> Result<()> {
    writeln!(out, "coefficient,mean,sd,q025,q50,q975,tail_probability,significant,ess")?;
    for r in rows {
        let s = &r.summary;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.id,
            fmt_real(s.mean),
            fmt_real(s.sd),
            fmt_real(s.q025),
            fmt_real(s.q50),
            fmt_real(s.q975),
            fmt_real(r.tail_probability),
            r.significant,
            fmt_real(r.ess)
        )?;
    }
    Ok(())
}

/// Additive effects for both sides, one row per (node, side).
pub fn write_additive_csv<W: Write>(mut out: W, chain: &Chain) -> Result<()> {
    writeln!(out, "node_id,side,mean,sd,q025,q50,q975")?;
    for side in [Side::Row, Side::Column] {
        for s in additive_summaries(chain, side)? {
            write_effect_row(&mut out, side.label(), &s)?;
        }
    }
    Ok(())
}

fn write_effect_row<W: Write>(out: &mut W, tag: &str, s: &EffectSummary) -> Result<()> {
    writeln!(
        out,
        "{},{tag},{},{},{},{},{}",
        s.id,
        fmt_real(s.mean),
        fmt_real(s.sd),
        fmt_real(s.q025),
        fmt_real(s.q50),
        fmt_real(s.q975)
    )?;
    Ok(())
}

/// Top-k rankings for every (side, direction) combination.
pub fn write_rankings_csv<W: Write>(mut out: W, chain: &Chain, k: usize) -> Result<()> {
    writeln!(out, "side,direction,rank,node_id,mean,sd,q025,q50,q975")?;
    for side in [Side::Row, Side::Column] {
        for (dir, label) in [(Direction::Largest, "largest"), (Direction::Smallest, "smallest")] {
            for (rank, s) in rank_additive_effects(chain, side, dir, k)?.iter().enumerate() {
                writeln!(
                    out,
                    "{},{label},{},{},{},{},{},{},{}",
                    side.label(),
                    rank + 1,
                    s.id,
                    fmt_real(s.mean),
                    fmt_real(s.sd),
                    fmt_real(s.q025),
                    fmt_real(s.q50),
                    fmt_real(s.q975)
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_matrix_csv<W: Write>(mut out: W, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    write!(out, "node_id")?;
    for id in ids {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    for (r, id) in ids.iter().enumerate() {
        write!(out, "{id}")?;
        for c in 0..m.ncols() {
            write!(out, ",{}", fmt_real(m[(r, c)]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_clusters_csv<W: Write>(mut out: W, rows: &[ClusterAssignment]) -> Result<()> {
    writeln!(out, "node_id,cluster,distance")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.node_id, r.cluster, fmt_real(r.distance))?;
    }
    Ok(())
}
