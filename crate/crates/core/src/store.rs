//! Chain persistence: long-format samples and the JSON run summary.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::{coefficient_summary, CoefficientSummary, EffectSummary};
use crate::error::{Error, Result};
use crate::format::fmt_real;
use crate::model::{ModelSpec, Params, Variant};
use crate::sampler::{Chain, Draw};

pub const SAMPLES_HEADER: [&str; 3] = ["iteration", "parameter", "value"];

/// Names of the stored parameters in write order. Blocks a variant does not
/// have are omitted; tied blocks of symmetric models appear once.
pub fn parameter_names(spec: &ModelSpec, node_ids: &[String], coefficients: &[String]) -> Vec<String> {
    let mut names: Vec<String> = coefficients.iter().map(|c| format!("beta[{c}]")).collect();
    let v = spec.variant;
    if v.has_additive() {
        names.extend(node_ids.iter().map(|id| format!("a[{id}]")));
        if !spec.symmetric {
            names.extend(node_ids.iter().map(|id| format!("b[{id}]")));
        }
    }
    if v.has_multiplicative() {
        let r = spec.latent_rank;
        let blocks: &[&str] = if spec.symmetric { &["u"] } else { &["u", "v"] };
        for block in blocks {
            for id in node_ids {
                names.extend((1..=r).map(|k| format!("{block}[{id},{k}]")));
            }
        }
    }
    if v.has_additive() {
        names.extend(matrix_names("sigma_ab", spec.effect_dim()));
    }
    if v.has_multiplicative() {
        names.extend(matrix_names("psi", spec.factor_dim()));
    }
    if estimates_rho(spec) {
        names.push("rho".into());
    }
    names
}

fn matrix_names(block: &str, d: usize) -> Vec<String> {
    (1..=d)
        .flat_map(|r| (1..=d).map(move |c| format!("{block}[{r},{c}]")))
        .collect()
}

fn estimates_rho(spec: &ModelSpec) -> bool {
    spec.variant.estimates_rho() && !spec.symmetric
}

/// Values in the order of [`parameter_names`].
fn parameter_values(p: &Params, spec: &ModelSpec) -> Vec<f64> {
    let mut out: Vec<f64> = p.beta.iter().copied().collect();
    let v = spec.variant;
    if v.has_additive() {
        out.extend(p.a.iter());
        if !spec.symmetric {
            out.extend(p.b.iter());
        }
    }
    if v.has_multiplicative() {
        let blocks = if spec.symmetric { vec![&p.u] } else { vec![&p.u, &p.v] };
        for m in blocks {
            for i in 0..m.nrows() {
                out.extend(m.row(i).iter());
            }
        }
    }
    if v.has_additive() {
        out.extend(row_major(&p.sigma_ab));
    }
    if v.has_multiplicative() {
        out.extend(row_major(&p.psi));
    }
    if estimates_rho(spec) {
        out.push(p.rho);
    }
    out
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
        .collect()
}

/// Writes every stored draw as `iteration,parameter,value` rows.
pub fn write_samples_csv<W: Write>(out: W, chain: &Chain) -> Result<()> {
    let names = parameter_names(&chain.spec, &chain.node_ids, &chain.coefficient_names);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(SAMPLES_HEADER)?;
    for d in &chain.draws {
        let it = d.iteration.to_string();
        let values = parameter_values(&d.params, &chain.spec);
        debug_assert_eq!(values.len(), names.len());
        for (name, v) in names.iter().zip(values) {
            w.write_record([it.as_str(), name.as_str(), fmt_real(v).as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads draws written by [`write_samples_csv`]. Returns the coefficient
/// names recovered from the `beta[...]` rows and the draws.
pub fn read_samples_csv<R: Read>(
    input: R,
    spec: &ModelSpec,
    node_ids: &[String],
) -> Result<(Vec<String>, Vec<Draw>)> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(SAMPLES_HEADER) {
        return Err(Error::Schema {
            line: 1,
            message: format!("expected header {}", SAMPLES_HEADER.join(",")),
        });
    }
    let mut groups: Vec<(usize, Vec<(String, f64)>)> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k as u64 + 2;
        let bad = |message: String| Error::Schema { line, message };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let it: usize = rec[0].parse().map_err(|_| bad(format!("bad iteration {:?}", &rec[0])))?;
        let value = match &rec[2] {
            "NA" => f64::NAN,
            s => s.parse().map_err(|_| bad(format!("bad value {s:?}")))?,
        };
        match groups.last_mut() {
            Some((last, rows)) if *last == it => rows.push((rec[1].to_string(), value)),
            _ => groups.push((it, vec![(rec[1].to_string(), value)])),
        }
    }
    let Some((_, first)) = groups.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let coefficients: Vec<String> = first
        .iter()
        .filter_map(|(name, _)| name.strip_prefix("beta[")?.strip_suffix(']').map(String::from))
        .collect();
    let names = parameter_names(spec, node_ids, &coefficients);
    let draws = groups
        .into_iter()
        .map(|(iteration, rows)| {
            if rows.len() != names.len() || rows.iter().zip(&names).any(|(r, n)| &r.0 != n) {
                return Err(Error::Input(format!(
                    "draw at iteration {iteration} does not match the {} layout",
                    spec.model_label()
                )));
            }
            let values: Vec<f64> = rows.into_iter().map(|r| r.1).collect();
            Ok(Draw {
                iteration,
                params: params_from_values(&values, spec, node_ids.len(), coefficients.len()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((coefficients, draws))
}

fn params_from_values(values: &[f64], spec: &ModelSpec, n: usize, q: usize) -> Params {
    let mut p = Params::zeros(spec, n, 0);
    let mut it = values.iter().copied();
    let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
    p.beta = DVector::from_vec(take(q));
    let v = spec.variant;
    if v.has_additive() {
        p.a = DVector::from_vec(take(n));
        p.b = if spec.symmetric { p.a.clone() } else { DVector::from_vec(take(n)) };
    }
    if v.has_multiplicative() {
        let r = spec.latent_rank;
        p.u = DMatrix::from_row_slice(n, r, &take(n * r));
        p.v = if spec.symmetric { p.u.clone() } else { DMatrix::from_row_slice(n, r, &take(n * r)) };
    }
    if v.has_additive() {
        let d = spec.effect_dim();
        p.sigma_ab = DMatrix::from_row_slice(d, d, &take(d * d));
    }
    if v.has_multiplicative() {
        let d = spec.factor_dim();
        p.psi = DMatrix::from_row_slice(d, d, &take(d * d));
    }
    if estimates_rho(spec) {
        p.rho = take(1)[0];
    }
    p
}

/// Posterior summary written next to the samples.
#[derive(Clone, Debug, Serialize)]
pub struct ChainSummary {
    pub model: String,
    pub variant: Variant,
    pub nodes: usize,
    pub draws: usize,
    pub rho_acceptance: Option<f64>,
    pub coefficients: Vec<CoefficientSummary>,
    pub sigma_ab: Vec<EffectSummary>,
    pub psi: Vec<EffectSummary>,
    pub rho: Option<EffectSummary>,
    /// Prior settings actually used, after any empirical-Bayes pilot.
    pub prior: Vec<(String, String)>,
}

pub fn chain_summary(chain: &Chain) -> Result<ChainSummary> {
    let spec = &chain.spec;
    let entries = |block: &str, get: fn(&Params) -> &DMatrix<f64>, d: usize| {
        matrix_names(block, d)
            .into_iter()
            .enumerate()
            .map(|(k, id)| {
                let xs: Vec<f64> = chain.draws.iter().map(|dr| row_major(get(&dr.params))[k]).collect();
                EffectSummary::from_draws(id, &xs)
            })
            .collect::<Result<Vec<_>>>()
    };
    let sigma_ab = if spec.variant.has_additive() {
        entries("sigma_ab", |p| &p.sigma_ab, spec.effect_dim())?
    } else {
        Vec::new()
    };
    let psi = if spec.variant.has_multiplicative() {
        entries("psi", |p| &p.psi, spec.factor_dim())?
    } else {
        Vec::new()
    };
    let rho = if estimates_rho(spec) {
        let xs: Vec<f64> = chain.draws.iter().map(|d| d.params.rho).collect();
        Some(EffectSummary::from_draws("rho", &xs)?)
    } else {
        None
    };
    const PRIOR_KEYS: [&str; 6] = [
        "beta_prior_variance",
        "sab_iw_df",
        "sab_iw_scale",
        "psi_iw_df",
        "psi_iw_scale",
        "rho_proposal_sd",
    ];
    Ok(ChainSummary {
        model: spec.model_label(),
        variant: spec.variant,
        nodes: chain.node_ids.len(),
        draws: chain.draws.len(),
        rho_acceptance: chain.rho_acceptance,
        coefficients: coefficient_summary(chain)?,
        sigma_ab,
        psi,
        rho,
        prior: spec
            .config_pairs()
            .into_iter()
            .filter(|(k, _)| PRIOR_KEYS.contains(k))
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    })
}
