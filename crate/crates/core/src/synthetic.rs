//! Networks simulated from known parameters, plus small exact references
//! that the sampler and the goodness-of-fit code can be checked against.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::analysis::{mcse, mean_sd};
use crate::covariates::CovariateTable;
use crate::error::{Error, Result};
use crate::gof::{gof_stats, GofStats};
use crate::linalg::sample_mvn;
use crate::model::{
    latent_from_predictor, predictor_with, Design, McmcSettings, ModelSpec, ParameterState, Params,
    Variant,
};
use crate::network::DirectedNetwork;
use crate::sampler::Sampler;
use crate::truncnorm::{log_norm_cdf, sample_signed};

/// One simulated nodal covariate.
#[derive(Clone, Debug, PartialEq)]
pub enum CovariateSpec {
    /// Standard normal column.
    Continuous(String),
    /// Levels drawn with the given probabilities. The first level is the
    /// reference; every other level becomes a `name_level` dummy column.
    Categorical {
        name: String,
        levels: Vec<(String, f64)>,
    },
}

impl CovariateSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        CovariateSpec::Continuous(name.into())
    }

    /// A single 0/1 column equal to 1 with probability `freq`.
    pub fn binary(name: impl Into<String>, freq: f64) -> Self {
        CovariateSpec::Categorical {
            name: name.into(),
            levels: vec![("0".into(), 1.0 - freq), ("1".into(), freq)],
        }
    }

    fn columns(&self) -> Vec<String> {
        match self {
            CovariateSpec::Continuous(name) => vec![name.clone()],
            CovariateSpec::Categorical { name, levels } if levels.len() == 2 && levels[1].0 == "1" => {
                vec![name.clone()]
            }
            CovariateSpec::Categorical { name, levels } => levels[1..]
                .iter()
                .map(|(level, _)| format!("{name}_{level}"))
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if let CovariateSpec::Categorical { name, levels } = self {
            if levels.len() < 2 {
                return Err(Error::Spec(format!("covariate {name} needs at least two levels")));
            }
            let total: f64 = levels.iter().map(|l| l.1).sum();
            if levels.iter().any(|l| !(l.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Spec(format!(
                    "level frequencies of {name} must be non-negative and sum to 1"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters a synthetic network is generated from. Effects are drawn
/// from `sigma_ab` and `psi` when the variant has them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueParams {
    pub covariates: Vec<CovariateSpec>,
    /// Same layout as the fitted coefficients.
    pub beta: DVector<f64>,
    pub sigma_ab: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub rho: f64,
}

impl TrueParams {
    /// Intercept `mu`, no covariates, identity covariances, `rho = 0`.
    pub fn intercept_only(spec: &ModelSpec, mu: f64) -> Self {
        Self {
            covariates: Vec::new(),
            beta: DVector::from_element(1, mu),
            sigma_ab: DMatrix::identity(spec.effect_dim(), spec.effect_dim()),
            psi: DMatrix::identity(spec.factor_dim(), spec.factor_dim()),
            rho: 0.0,
        }
    }

    /// Number of covariate columns the specs expand to.
    pub fn covariate_columns(&self) -> usize {
        self.covariates.iter().map(|c| c.columns().len()).sum()
    }
}

/// Everything used to produce a synthetic network.
#[derive(Clone, Debug)]
pub struct GenerativeTruth {
    pub state: ParameterState,
    pub network: DirectedNetwork,
    pub covariates: CovariateTable,
}

/// Node ids `node000`, `node001`, ... padded so they sort in index order.
pub fn node_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|k| format!("node{k:0width$}")).collect()
}

/// Simulates covariates, effects and a latent matrix from `truth` and
/// thresholds it at zero. Deterministic given `seed`.
pub fn generate(spec: &ModelSpec, n: usize, truth: &TrueParams, seed: u64) -> Result<GenerativeTruth> {
    spec.validate()?;
    for c in &truth.covariates {
        c.check()?;
    }
    if n < 2 {
        return Err(Error::Spec(format!("need at least 2 nodes, got {n}")));
    }
    let p = truth.covariate_columns();
    let q = spec.coefficient_count(p);
    if truth.beta.len() != q {
        return Err(Error::Dimension(format!(
            "{} coefficients given, the variant needs {q}",
            truth.beta.len()
        )));
    }
    let (ed, fd) = (spec.effect_dim(), spec.factor_dim());
    if spec.variant.has_additive() && truth.sigma_ab.shape() != (ed, ed) {
        return Err(Error::Dimension(format!("Sigma_ab must be {ed}x{ed}")));
    }
    if spec.variant.has_multiplicative() && truth.psi.shape() != (fd, fd) {
        return Err(Error::Dimension(format!("Psi must be {fd}x{fd}")));
    }
    if !(truth.rho > -1.0 && truth.rho < 1.0) || (spec.symmetric && truth.rho != 0.0) {
        return Err(Error::Spec(format!(
            "rho = {} must lie in (-1, 1), and be 0 for symmetric networks",
            truth.rho
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = node_ids(n);
    let x = draw_covariates(&ids, &truth.covariates, &mut rng)?;

    let mut params = Params::zeros(spec, n, p);
    params.beta.copy_from(&truth.beta);
    params.rho = truth.rho;
    if spec.variant.has_additive() {
        params.sigma_ab = truth.sigma_ab.clone();
        for i in 0..n {
            let w = sample_mvn(&truth.sigma_ab, &mut rng, "Sigma_ab")?;
            params.a[i] = w[0];
            params.b[i] = if spec.symmetric { w[0] } else { w[1] };
        }
    }
    if spec.variant.has_multiplicative() {
        let r = spec.latent_rank;
        params.psi = truth.psi.clone();
        for i in 0..n {
            let w = sample_mvn(&truth.psi, &mut rng, "Psi")?;
            for k in 0..r {
                params.u[(i, k)] = w[k];
                params.v[(i, k)] = if spec.symmetric { w[k] } else { w[r + k] };
            }
        }
    }

    let design = Design::new(spec, &x);
    let mean = predictor_with(&design, &params, spec);
    let z = latent_from_predictor(&mean, params.rho, spec.symmetric, None, &mut rng);
    let network = DirectedNetwork::from_fn(ids, spec.symmetric, |i, j| z[(i, j)] > 0.0)?;
    Ok(GenerativeTruth {
        state: ParameterState { z, params },
        network,
        covariates: x,
    })
}

fn draw_covariates<R: Rng + ?Sized>(
    ids: &[String],
    specs: &[CovariateSpec],
    rng: &mut R,
) -> Result<CovariateTable> {
    let n = ids.len();
    let columns: Vec<String> = specs.iter().flat_map(|c| c.columns()).collect();
    let mut values = DMatrix::zeros(n, columns.len());
    for i in 0..n {
        let mut col = 0;
        for c in specs {
            match c {
                CovariateSpec::Continuous(_) => {
                    values[(i, col)] = StandardNormal.sample(rng);
                    col += 1;
                }
                CovariateSpec::Categorical { levels, .. } => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut level = levels.len() - 1;
                    for (k, (_, f)) in levels.iter().enumerate() {
                        acc += f;
                        if u < acc {
                            level = k;
                            break;
                        }
                    }
                    if level > 0 {
                        values[(i, col + level - 1)] = 1.0;
                    }
                    col += levels.len() - 1;
                }
            }
        }
    }
    CovariateTable::new(ids.to_vec(), columns, values)
}

/// Independent Bernoulli(`density`) ties on every ordered pair.
pub fn random_network(n: usize, density: f64, seed: u64) -> Result<DirectedNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DirectedNetwork::from_fn(node_ids(n), false, |_, _| rng.random::<f64>() < density)
}

/// The four goodness-of-fit statistics computed with plain loops over
/// pairs and triples, as an independent check on the matrix version.
pub fn naive_gof_stats(net: &DirectedNetwork) -> Result<GofStats> {
    let n = net.n();
    if n < 3 {
        return Err(Error::Network(format!("need n >= 3, got {n}")));
    }
    let y = |i: usize, j: usize| if net.tie(i, j) { 1.0 } else { 0.0 };
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let mut rows = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = 0.0;
        let mut c = 0.0;
        for j in 0..n {
            if j != i {
                r += y(i, j);
                c += y(j, i);
            }
        }
        rows.push(r / (n - 1) as f64);
        cols.push(c / (n - 1) as f64);
    }

    let pairs = (n * (n - 1)) as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += y(i, j);
            }
        }
    }
    let ybar = total / pairs;
    let e = |i: usize, j: usize| if i == j { 0.0 } else { y(i, j) - ybar };
    let mut ss = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                ss += e(i, j) * e(i, j);
                cross += e(i, j) * e(j, i);
            }
        }
    }
    let (dyad_dep, triad_dep) = if ss > 0.0 {
        let s = (ss / (pairs - 1.0)).sqrt();
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i != j && j != k && k != i {
                        t += e(i, j) * e(j, k) * e(k, i);
                    }
                }
            }
        }
        let triples = (n * (n - 1) * (n - 2)) as f64;
        (Some(cross / ss), Some(t / (triples * s.powi(3))))
    } else {
        (None, None)
    };
    Ok(GofStats {
        sd_rowmean: sd(&rows),
        sd_colmean: sd(&cols),
        dyad_dep,
        triad_dep,
    })
}

/// Posterior mean and sd of a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub sd: f64,
}

const QUAD_START: usize = 256;
const QUAD_MAX: usize = 1 << 24;
const QUAD_RTOL: f64 = 1e-10;

/// Exact posterior of the intercept for a 3-node SRG network by composite
/// Simpson quadrature of `prod Phi(+-mu) * N(mu; 0, s^2)`, halving the step
/// until the mean and sd stop moving.
pub fn exact_small_posterior(y: &DirectedNetwork, spec: &ModelSpec) -> Result<PosteriorMoments> {
    if spec.variant != Variant::Srg || y.n() != 3 {
        return Err(Error::Spec("the exact posterior needs a 3-node network and SRG".into()));
    }
    let s2 = spec.prior.beta_prior_variance;
    let (ones, zeros) = tie_counts(y, spec.symmetric);
    let log_f = |mu: f64| {
        ones as f64 * log_norm_cdf(mu) + zeros as f64 * log_norm_cdf(-mu) - mu * mu / (2.0 * s2)
    };
    // the prior tail beyond 12 sd carries no mass at double precision
    let half = 12.0 * s2.sqrt() + 10.0;
    let center = mode(&log_f, half);
    let shift = log_f(center);

    let moments = |intervals: usize| {
        let h = 2.0 * half / intervals as f64;
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..=intervals {
            let mu = center - half + k as f64 * h;
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let f = w * (log_f(mu) - shift).exp();
            m0 += f;
            m1 += f * mu;
            m2 += f * mu * mu;
        }
        let mean = m1 / m0;
        PosteriorMoments {
            mean,
            sd: (m2 / m0 - mean * mean).max(0.0).sqrt(),
        }
    };

    // start with a step well below the posterior scale, which is at most
    // the prior sd
    let step = s2.sqrt().min(1.0) / 8.0;
    let mut intervals = QUAD_START.max(2 * ((half / step).ceil() as usize));
    let mut prev = moments(intervals);
    while intervals < QUAD_MAX {
        intervals *= 2;
        let next = moments(intervals);
        let scale = next.sd.max(1e-12);
        if (next.mean - prev.mean).abs() <= QUAD_RTOL * scale
            && (next.sd - prev.sd).abs() <= QUAD_RTOL * scale
        {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::numerical("quadrature did not converge"))
}

fn tie_counts(y: &DirectedNetwork, symmetric: bool) -> (usize, usize) {
    let n = y.n();
    let mut ones = 0;
    let mut zeros = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) {
                continue;
            }
            if y.tie(i, j) {
                ones += 1;
            } else {
                zeros += 1;
            }
        }
    }
    (ones, zeros)
}

/// Maximizer of a unimodal log density on `[-half, half]` by golden section.
fn mode(f: &impl Fn(f64) -> f64, half: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (-half, half);
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    (lo + hi) / 2.0
}

/// Gibbs estimate of the intercept's posterior mean with its Monte Carlo
/// standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainEstimate {
    pub mean: f64,
    pub mcse: f64,
    pub draws: usize,
}

/// Runs the sampler on `y` with an intercept-only model and summarizes the
/// stored intercept draws.
pub fn gibbs_intercept(y: &DirectedNetwork, spec: &ModelSpec) -> Result<ChainEstimate> {
    let x = CovariateTable::empty(y.node_ids().to_vec());
    let (draws, _, _) = Sampler::new(y, &x, spec)?.run()?;
    let mu: Vec<f64> = draws.iter().map(|d| d.params.beta[0]).collect();
    Ok(ChainEstimate {
        mean: mean_sd(&mu).0,
        mcse: mcse(&mu),
        draws: mu.len(),
    })
}

/// Outcome of one oracle in the verification suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<OracleCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{tag} {}: {}", c.name, c.detail);
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(s, "{passed}/{} oracles passed (seed {})", self.checks.len(), self.seed);
        s
    }
}

type Oracle = fn(u64) -> Result<(bool, String)>;

const ORACLES: [(&str, Oracle); 8] = [
    ("gof_matrix_vs_loops", oracle_gof_loops),
    ("gof_symmetric_dyad_dep", oracle_symmetric_dyad),
    ("truncated_normal_moments", oracle_truncnorm),
    ("quadrature_sign_forcing", oracle_sign_forcing),
    ("quadrature_symmetry", oracle_quadrature_symmetry),
    ("gibbs_vs_quadrature", oracle_gibbs_quadrature),
    ("generator_saturation", oracle_saturation),
    ("generator_density", oracle_density),
];

/// Runs every oracle. An oracle that errors is reported as failed.
pub fn verify(seed: u64) -> VerifyReport {
    let checks = ORACLES
        .iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let (passed, detail) = match f(seed.wrapping_add(k as u64)) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            OracleCheck {
                name: name.to_string(),
                passed,
                detail,
            }
        })
        .collect();
    VerifyReport { seed, checks }
}

/// Largest absolute difference over the four statistics; undefined values
/// must agree on being undefined.
pub fn max_stat_difference(a: &GofStats, b: &GofStats) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

fn oracle_gof_loops(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (k, n) in [5, 10, 30].iter().cycle().take(12).enumerate() {
        let net = random_network(*n, 0.3, seed.wrapping_add(k as u64))?;
        worst = worst.max(max_stat_difference(&gof_stats(&net)?, &naive_gof_stats(&net)?));
    }
    Ok((worst <= 1e-12, format!("max difference {worst:.3e} over 12 networks")))
}

fn oracle_symmetric_dyad(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for k in 0..10 {
        let net = random_network(12, 0.3, seed.wrapping_add(k)).map(|n| n.symmetrize())?;
        let d = gof_stats(&net)?.dyad_dep.unwrap_or(f64::NAN);
        worst = worst.max((d - 1.0).abs());
    }
    Ok((worst <= 1e-12, format!("max |dyad_dep - 1| = {worst:.3e}")))
}

fn oracle_truncnorm(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| sample_signed(0.5, 1.0, true, &mut rng))
        .collect();
    let (mean, sd) = mean_sd(&draws);
    // mean of N(0.5, 1) truncated to (0, inf): 0.5 + phi(0.5) / Phi(0.5)
    let phi = (-0.125f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let exact = 0.5 + phi / log_norm_cdf(0.5).exp();
    let se = sd / (draws.len() as f64).sqrt();
    let z = (mean - exact) / se;
    Ok((z.abs() < 4.0, format!("mean {mean:.5} vs exact {exact:.5} ({z:.2} se)")))
}

fn three_node(ones: usize) -> Result<DirectedNetwork> {
    let mut k = 0;
    DirectedNetwork::from_fn(node_ids(3), false, |_, _| {
        k += 1;
        k <= ones
    })
}

fn srg_spec() -> ModelSpec {
    ModelSpec::new(Variant::Srg, false)
}

fn oracle_sign_forcing(_: u64) -> Result<(bool, String)> {
    let p = exact_small_posterior(&three_node(6)?, &srg_spec())?;
    Ok((p.mean > 0.0, format!("all ties present: mean {:.6}", p.mean)))
}

fn oracle_quadrature_symmetry(_: u64) -> Result<(bool, String)> {
    let p = exact_small_posterior(&three_node(3)?, &srg_spec())?;
    Ok((p.mean.abs() < 1e-8, format!("half the ties present: mean {:.3e}", p.mean)))
}

fn oracle_gibbs_quadrature(seed: u64) -> Result<(bool, String)> {
    let y = three_node(4)?;
    let mut spec = srg_spec();
    spec.mcmc = McmcSettings {
        iterations: 11_000,
        burn_in: 1_000,
        thinning: 1,
        seed,
    };
    let exact = exact_small_posterior(&y, &spec)?;
    let est = gibbs_intercept(&y, &spec)?;
    let z = (est.mean - exact.mean) / est.mcse;
    Ok((
        z.abs() <= 3.0,
        format!("gibbs {:.5} vs exact {:.5} ({z:.2} mcse)", est.mean, exact.mean),
    ))
}

fn oracle_saturation(seed: u64) -> Result<(bool, String)> {
    let spec = srg_spec();
    let g = generate(&spec, 50, &TrueParams::intercept_only(&spec, -20.0), seed)?;
    let e = g.network.edge_count();
    Ok((e == 0, format!("mu = -20 gives {e} ties")))
}

fn oracle_density(seed: u64) -> Result<(bool, String)> {
    let spec = srg_spec();
    let n = 200;
    let g = generate(&spec, n, &TrueParams::intercept_only(&spec, 0.0), seed)?;
    let pairs = (n * (n - 1)) as f64;
    let d = g.network.density();
    let z = (d - 0.5) / (0.25 / pairs).sqrt();
    Ok((z.abs() <= 3.0, format!("mu = 0 density {d:.5} ({z:.2} binomial sd)")))
}
