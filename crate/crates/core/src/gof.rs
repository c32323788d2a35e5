//! Goodness-of-fit statistics and posterior-predictive tables.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariates::CovariateTable;
use crate::error::{Error, Result};
use crate::format::fmt_opt;
use crate::model::{latent_from_predictor, predictor_with, Design, ModelSpec, Params};
use crate::network::DirectedNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GofStats {
    /// Sample sd over nodes of the out-tie proportion.
    pub sd_rowmean: f64,
    /// Sample sd over nodes of the in-tie proportion.
    pub sd_colmean: f64,
    /// Correlation of `y_ij` with `y_ji`; `None` when undefined.
    pub dyad_dep: Option<f64>,
    /// Normalized cyclic third moment; `None` when undefined.
    pub triad_dep: Option<f64>,
}

impl GofStats {
    pub const NAMES: [&'static str; 4] = ["sd_rowmean", "sd_colmean", "dyad_dep", "triad_dep"];

    pub fn values(&self) -> [Option<f64>; 4] {
        [
            Some(self.sd_rowmean),
            Some(self.sd_colmean),
            self.dyad_dep,
            self.triad_dep,
        ]
    }
}

pub fn gof_stats(net: &DirectedNetwork) -> Result<GofStats> {
    if net.n() < 3 {
        return Err(Error::Network(format!(
            "goodness-of-fit statistics need n >= 3, got {}",
            net.n()
        )));
    }
    Ok(stats_from(net.n(), |i, j| net.tie(i, j)))
}

pub(crate) fn stats_from(n: usize, tie: impl Fn(usize, usize) -> bool) -> GofStats {
    let mut y = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if i != j && tie(i, j) {
                y[(i, j)] = 1.0;
            }
        }
    }
    let m = (n * (n - 1)) as f64;
    let rows: Vec<f64> = (0..n).map(|i| y.row(i).sum() / (n - 1) as f64).collect();
    let cols: Vec<f64> = (0..n).map(|j| y.column(j).sum() / (n - 1) as f64).collect();
    let ybar = y.sum() / m;

    let mut e = y.add_scalar(-ybar);
    e.fill_diagonal(0.0);
    // same summation order for both, so symmetric inputs give exactly 1
    let mut ss = 0.0;
    let mut cross = 0.0;
    for j in 0..n {
        for i in 0..n {
            ss += e[(i, j)] * e[(i, j)];
            cross += e[(i, j)] * e[(j, i)];
        }
    }
    let (dyad_dep, triad_dep) = if ss > 0.0 {
        // trace(E^3) with a zero diagonal sums over distinct triples only
        let e2 = &e * &e;
        let trace3 = e2.component_mul(&e.transpose()).sum();
        let s = (ss / (m - 1.0)).sqrt();
        let triples = (n * (n - 1) * (n - 2)) as f64;
        (Some(cross / ss), Some(trace3 / (triples * s.powi(3))))
    } else {
        (None, None)
    };
    GofStats {
        sd_rowmean: sample_sd(&rows),
        sd_colmean: sample_sd(&cols),
        dyad_dep,
        triad_dep,
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Posterior-predictive GOF for one fitted model.
#[derive(Clone, Debug, PartialEq)]
pub struct GofTable {
    pub model: String,
    pub observed: GofStats,
    pub predictive: Vec<GofStats>,
}

impl GofTable {
    /// Rows in the table: one per replicate plus the observed row.
    pub fn rows(&self) -> usize {
        self.predictive.len() + 1
    }

    /// Predictive values of one statistic, skipping undefined ones.
    pub fn column(&self, stat: usize) -> Vec<f64> {
        self.predictive.iter().filter_map(|g| g.values()[stat]).collect()
    }
}

/// Simulates `per_state` networks from each parameter draw and returns
/// their statistics in draw order. Replicate `k` uses stream `k + 1` of the
/// generator seeded with `seed`, so results do not depend on thread count.
pub fn simulate_predictive<P: AsRef<Params> + Sync>(
    draws: &[P],
    x: &CovariateTable,
    spec: &ModelSpec,
    per_state: usize,
    seed: u64,
) -> Vec<GofStats> {
    let design = Design::new(spec, x);
    let n = x.n();
    (0..draws.len() * per_state)
        .into_par_iter()
        .map(|k| {
            let params = draws[k / per_state].as_ref();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mean = predictor_with(&design, params, spec);
            let z = latent_from_predictor(&mean, params.rho, spec.symmetric, None, &mut rng);
            stats_from(n, |i, j| z[(i, j)] > 0.0)
        })
        .collect()
}

/// Predictive table for a fitted chain together with the observed network.
pub fn posterior_predictive_gof<P: AsRef<Params> + Sync>(
    draws: &[P],
    y: &DirectedNetwork,
    x: &CovariateTable,
    spec: &ModelSpec,
    seed: u64,
) -> Result<GofTable> {
    if draws.is_empty() {
        return Err(Error::Input("posterior predictive check needs at least one draw".into()));
    }
    if y.n() != x.n() {
        return Err(Error::Dimension(format!(
            "network has {} nodes, covariates {}",
            y.n(),
            x.n()
        )));
    }
    let observed = gof_stats(y)?;
    let predictive = simulate_predictive(draws, x, spec, spec.gof_draws_per_state, seed);
    Ok(GofTable {
        model: spec.model_label(),
        observed,
        predictive,
    })
}

pub const GOF_HEADER: &str = "model,statistic,draw_index,value,observed";

/// Long-format CSV: one row per (replicate, statistic) and one observed row
/// per statistic with `draw_index = NA`.
pub fn write_gof_csv<W: Write>(mut out: W, tables: &[GofTable]) -> Result<()> {
    writeln!(out, "{GOF_HEADER}")?;
    for t in tables {
        for (s, name) in GofStats::NAMES.iter().enumerate() {
            for (k, g) in t.predictive.iter().enumerate() {
                writeln!(out, "{},{name},{k},{},false", t.model, fmt_opt(g.values()[s]))?;
            }
            writeln!(out, "{},{name},NA,{},true", t.model, fmt_opt(t.observed.values()[s]))?;
        }
    }
    Ok(())
}
