//! Model variants, prior hyperparameters, MCMC settings and parameter state.
//!
//! The latent value for the ordered pair `(i, j)` is
//!
//! ```text
//! z_ij = mu + beta_r' x_i + beta_c' x_j + a_i + b_j + u_i' v_j + e_ij
//! ```
//!
//! with `(e_ij, e_ji)` bivariate normal, unit variances and correlation `rho`,
//! and `y_ij = 1(z_ij > 0)`. Each variant switches blocks of this predictor
//! off. Symmetric networks use one latent value per unordered pair and tie
//! `b = a`, `v = u`, `beta_c = beta_r`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateTable;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sample_inverse_wishart, sample_mvn};
use crate::network::DirectedNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Intercept only.
    #[serde(rename = "SRG")]
    Srg,
    /// Intercept and additive row/column effects.
    #[serde(rename = "SRM")]
    Srm,
    /// Additive effects and nodal covariates.
    #[serde(rename = "SRRM")]
    Srrm,
    /// Nodal covariates with independent errors.
    #[serde(rename = "IIDREG")]
    IidReg,
    /// Additive and multiplicative effects with covariates.
    #[serde(rename = "AME")]
    Ame,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Srg,
        Variant::Srm,
        Variant::Srrm,
        Variant::IidReg,
        Variant::Ame,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Srg => "SRG",
            Variant::Srm => "SRM",
            Variant::Srrm => "SRRM",
            Variant::IidReg => "IIDREG",
            Variant::Ame => "AME",
        }
    }

    pub fn has_covariates(self) -> bool {
        matches!(self, Variant::Srrm | Variant::IidReg | Variant::Ame)
    }

    pub fn has_additive(self) -> bool {
        matches!(self, Variant::Srm | Variant::Srrm | Variant::Ame)
    }

    pub fn has_multiplicative(self) -> bool {
        self == Variant::Ame
    }

    /// Whether the within-dyad correlation is estimated; otherwise it is 0.
    pub fn estimates_rho(self) -> bool {
        self.has_additive()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Spec(format!("unknown variant {s:?}")))
    }
}

/// Prior hyperparameters. Matrix dimensions follow the spec: `Sigma_ab` is
/// 2x2 (1x1 for symmetric networks), `Psi` is 2R x 2R (R x R).
#[derive(Clone, Debug, PartialEq)]
pub struct PriorHyper {
    pub beta_prior_variance: f64,
    pub sab_iw_df: f64,
    pub sab_iw_scale: DMatrix<f64>,
    pub psi_iw_df: f64,
    pub psi_iw_scale: DMatrix<f64>,
    pub rho_proposal_sd: f64,
}

impl PriorHyper {
    /// Diffuse defaults: `beta ~ N(0, 100)`, inverse-Wishart priors with
    /// `df = dim + 2` and identity scale (prior mean identity).
    pub fn default_for(effect_dim: usize, factor_dim: usize) -> Self {
        Self {
            beta_prior_variance: 100.0,
            sab_iw_df: effect_dim as f64 + 2.0,
            sab_iw_scale: DMatrix::identity(effect_dim, effect_dim),
            psi_iw_df: factor_dim as f64 + 2.0,
            psi_iw_scale: DMatrix::identity(factor_dim, factor_dim),
            rho_proposal_sd: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            thinning: 10,
            seed: 0,
        }
    }
}

impl McmcSettings {
    /// Number of stored states.
    pub fn stored(&self) -> usize {
        (self.iterations.saturating_sub(self.burn_in)) / self.thinning.max(1)
    }
}

/// Empirical-Bayes pilot settings for the covariance hyperpriors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PilotSettings {
    pub enabled: bool,
    pub iterations: usize,
    pub burn_in: usize,
}

impl Default for PilotSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            iterations: 1_000,
            burn_in: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub latent_rank: usize,
    pub symmetric: bool,
    pub prior: PriorHyper,
    pub mcmc: McmcSettings,
    pub pilot: PilotSettings,
    /// Posterior-predictive networks simulated per stored state.
    pub gof_draws_per_state: usize,
}

impl ModelSpec {
    /// Spec with default priors and MCMC settings. AME uses rank 3.
    pub fn new(variant: Variant, symmetric: bool) -> Self {
        let rank = if variant.has_multiplicative() { 3 } else { 0 };
        Self::with_rank(variant, rank, symmetric)
    }

    pub fn with_rank(variant: Variant, latent_rank: usize, symmetric: bool) -> Self {
        let mut spec = Self {
            variant,
            latent_rank,
            symmetric,
            prior: PriorHyper::default_for(1, 1),
            mcmc: McmcSettings::default(),
            pilot: PilotSettings::default(),
            gof_draws_per_state: 1,
        };
        spec.prior = PriorHyper::default_for(spec.effect_dim(), spec.factor_dim());
        spec
    }

    /// Length of the per-node additive effect vector: `(a_i, b_i)` or `a_i`.
    pub fn effect_dim(&self) -> usize {
        if self.symmetric {
            1
        } else {
            2
        }
    }

    /// Length of the per-node multiplicative vector: `(u_i, v_i)` or `u_i`.
    pub fn factor_dim(&self) -> usize {
        if self.symmetric {
            self.latent_rank
        } else {
            2 * self.latent_rank
        }
    }

    /// Number of regression coefficients including the intercept.
    pub fn coefficient_count(&self, p: usize) -> usize {
        match (self.variant.has_covariates(), self.symmetric) {
            (false, _) => 1,
            (true, true) => 1 + p,
            (true, false) => 1 + 2 * p,
        }
    }

    pub fn coefficient_names(&self, x: &CovariateTable) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        if self.variant.has_covariates() {
            if self.symmetric {
                names.extend(x.columns().iter().cloned());
            } else {
                names.extend(x.columns().iter().map(|c| format!("row:{c}")));
                names.extend(x.columns().iter().map(|c| format!("col:{c}")));
            }
        }
        names
    }

    pub fn model_label(&self) -> String {
        let structure = if self.symmetric { "sym" } else { "asym" };
        format!("{}-{structure}", self.variant)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.has_multiplicative() && self.latent_rank == 0 {
            return Err(Error::Spec("AME requires latent_rank >= 1".into()));
        }
        if !self.variant.has_multiplicative() && self.latent_rank != 0 {
            return Err(Error::Spec(format!(
                "{} requires latent_rank = 0",
                self.variant
            )));
        }
        let p = &self.prior;
        if !(p.beta_prior_variance > 0.0 && p.beta_prior_variance.is_finite()) {
            return Err(Error::Spec("beta_prior_variance must be positive".into()));
        }
        if !(p.rho_proposal_sd >= 0.0 && p.rho_proposal_sd.is_finite()) {
            return Err(Error::Spec("rho_proposal_sd must be non-negative".into()));
        }
        check_iw("Sigma_ab", p.sab_iw_df, &p.sab_iw_scale, self.effect_dim())?;
        check_iw("Psi", p.psi_iw_df, &p.psi_iw_scale, self.factor_dim())?;
        let m = &self.mcmc;
        if m.thinning == 0 {
            return Err(Error::Spec("thinning must be >= 1".into()));
        }
        if m.burn_in >= m.iterations {
            return Err(Error::Spec("burn_in must be smaller than iterations".into()));
        }
        if self.pilot.enabled && self.pilot.burn_in >= self.pilot.iterations {
            return Err(Error::Spec(
                "eb_pilot_burn_in must be smaller than eb_pilot_iterations".into(),
            ));
        }
        if self.gof_draws_per_state == 0 {
            return Err(Error::Spec("gof_draws_per_state must be >= 1".into()));
        }
        Ok(())
    }

    /// Reads a flat `key = value` config. Unset keys keep their defaults;
    /// `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        Self::from_config_map(&parse_config(text)?)
    }

    /// Builds a spec from already-split config pairs.
    pub fn from_config_map(kv: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(key) = kv.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let variant: Variant = get("variant").unwrap_or("AME").parse()?;
        let symmetric = get("symmetric").map(parse_bool).transpose()?.unwrap_or(false);
        let rank = match get("latent_rank") {
            Some(r) => parse_num::<usize>("latent_rank", r)?,
            None if variant.has_multiplicative() => 3,
            None => 0,
        };
        let mut spec = Self::with_rank(variant, rank, symmetric);
        let (ed, fd) = (spec.effect_dim(), spec.factor_dim());
        let prior = &mut spec.prior;
        if let Some(v) = get("beta_prior_variance") {
            prior.beta_prior_variance = parse_num("beta_prior_variance", v)?;
        }
        if let Some(v) = get("sab_iw_df") {
            prior.sab_iw_df = parse_num("sab_iw_df", v)?;
        }
        if let Some(v) = get("sab_iw_scale") {
            prior.sab_iw_scale = parse_matrix("sab_iw_scale", v, ed)?;
        }
        if let Some(v) = get("psi_iw_df") {
            prior.psi_iw_df = parse_num("psi_iw_df", v)?;
        }
        if let Some(v) = get("psi_iw_scale") {
            prior.psi_iw_scale = parse_matrix("psi_iw_scale", v, fd)?;
        }
        if let Some(v) = get("rho_proposal_sd") {
            prior.rho_proposal_sd = parse_num("rho_proposal_sd", v)?;
        }
        let m = &mut spec.mcmc;
        if let Some(v) = get("iterations") {
            m.iterations = parse_num("iterations", v)?;
        }
        if let Some(v) = get("burn_in") {
            m.burn_in = parse_num("burn_in", v)?;
        }
        if let Some(v) = get("thinning") {
            m.thinning = parse_num("thinning", v)?;
        }
        if let Some(v) = get("seed") {
            m.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("empirical_bayes") {
            spec.pilot.enabled = parse_bool(v)?;
        }
        if let Some(v) = get("eb_pilot_iterations") {
            spec.pilot.iterations = parse_num("eb_pilot_iterations", v)?;
        }
        if let Some(v) = get("eb_pilot_burn_in") {
            spec.pilot.burn_in = parse_num("eb_pilot_burn_in", v)?;
        }
        if let Some(v) = get("gof_draws_per_state") {
            spec.gof_draws_per_state = parse_num("gof_draws_per_state", v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical config text; parsing it yields an identical spec.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.config_pairs() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Every config key with its effective value, in a fixed order.
    pub fn config_pairs(&self) -> Vec<(&'static str, String)> {
        let p = &self.prior;
        vec![
            ("variant", self.variant.label().to_string()),
            ("latent_rank", self.latent_rank.to_string()),
            ("symmetric", self.symmetric.to_string()),
            ("iterations", self.mcmc.iterations.to_string()),
            ("burn_in", self.mcmc.burn_in.to_string()),
            ("thinning", self.mcmc.thinning.to_string()),
            ("seed", self.mcmc.seed.to_string()),
            ("beta_prior_variance", p.beta_prior_variance.to_string()),
            ("sab_iw_df", p.sab_iw_df.to_string()),
            ("sab_iw_scale", matrix_text(&p.sab_iw_scale)),
            ("psi_iw_df", p.psi_iw_df.to_string()),
            ("psi_iw_scale", matrix_text(&p.psi_iw_scale)),
            ("rho_proposal_sd", p.rho_proposal_sd.to_string()),
            ("empirical_bayes", self.pilot.enabled.to_string()),
            ("eb_pilot_iterations", self.pilot.iterations.to_string()),
            ("eb_pilot_burn_in", self.pilot.burn_in.to_string()),
            ("gof_draws_per_state", self.gof_draws_per_state.to_string()),
        ]
    }
}

/// Splits config text into key/value pairs, rejecting unknown and
/// duplicate keys.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = k.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "line {}: unknown key {key:?}",
                lineno + 1
            )));
        }
        if kv.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
    }
    Ok(kv)
}

pub const CONFIG_KEYS: [&str; 17] = [
    "variant",
    "latent_rank",
    "symmetric",
    "iterations",
    "burn_in",
    "thinning",
    "seed",
    "beta_prior_variance",
    "sab_iw_df",
    "sab_iw_scale",
    "psi_iw_df",
    "psi_iw_scale",
    "rho_proposal_sd",
    "empirical_bayes",
    "eb_pilot_iterations",
    "eb_pilot_burn_in",
    "gof_draws_per_state",
];

fn check_iw(what: &str, df: f64, scale: &DMatrix<f64>, dim: usize) -> Result<()> {
    if dim == 0 {
        return Ok(());
    }
    if scale.nrows() != dim || scale.ncols() != dim {
        return Err(Error::Spec(format!(
            "{what} scale must be {dim}x{dim}, got {}x{}",
            scale.nrows(),
            scale.ncols()
        )));
    }
    if !(df > dim as f64 - 1.0) {
        return Err(Error::Spec(format!(
            "{what} inverse-Wishart df {df} must exceed {}",
            dim - 1
        )));
    }
    if (scale - scale.transpose()).amax() > 1e-12 || min_eigenvalue(scale) <= 0.0 {
        return Err(Error::Spec(format!(
            "{what} scale must be symmetric positive definite"
        )));
    }
    Ok(())
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("not a boolean: {s:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
}

/// `identity`, a scalar `c` (meaning `c I`), or `dim^2` comma-separated
/// row-major entries.
fn parse_matrix(key: &str, s: &str, dim: usize) -> Result<DMatrix<f64>> {
    if s.eq_ignore_ascii_case("identity") {
        return Ok(DMatrix::identity(dim, dim));
    }
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| parse_num(key, t.trim()))
        .collect::<Result<_>>()?;
    match vals.len() {
        1 => Ok(DMatrix::identity(dim, dim) * vals[0]),
        k if k == dim * dim => Ok(DMatrix::from_row_slice(dim, dim, &vals)),
        k => Err(Error::Config(format!(
            "{key}: expected 1 or {} entries, got {k}",
            dim * dim
        ))),
    }
}

fn matrix_text(m: &DMatrix<f64>) -> String {
    if m.nrows() == 0 {
        return "identity".into();
    }
    let mut parts = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            parts.push(m[(i, j)].to_string());
        }
    }
    parts.join(",")
}

/// Model parameters other than the latent matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    /// Intercept, then row coefficients, then column coefficients.
    pub beta: DVector<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma_ab: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub rho: f64,
}

impl Params {
    /// All-zero effects with identity covariances.
    pub fn zeros(spec: &ModelSpec, n: usize, p: usize) -> Self {
        let r = spec.latent_rank;
        Self {
            beta: DVector::zeros(spec.coefficient_count(p)),
            a: DVector::zeros(n),
            b: DVector::zeros(n),
            u: DMatrix::zeros(n, r),
            v: DMatrix::zeros(n, r),
            sigma_ab: DMatrix::identity(spec.effect_dim(), spec.effect_dim()),
            psi: DMatrix::identity(spec.factor_dim(), spec.factor_dim()),
            rho: 0.0,
        }
    }

    /// `U V^T`.
    pub fn multiplicative(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// Per-node additive vector `(a_i, b_i)` or `a_i`.
    pub fn effect_rows(&self, symmetric: bool) -> DMatrix<f64> {
        if symmetric {
            DMatrix::from_column_slice(self.a.len(), 1, self.a.as_slice())
        } else {
            DMatrix::from_fn(self.a.len(), 2, |i, c| if c == 0 { self.a[i] } else { self.b[i] })
        }
    }

    /// Per-node multiplicative vector `(u_i, v_i)` or `u_i`.
    pub fn factor_rows(&self, symmetric: bool) -> DMatrix<f64> {
        if symmetric {
            self.u.clone()
        } else {
            let (n, r) = self.u.shape();
            DMatrix::from_fn(n, 2 * r, |i, c| {
                if c < r {
                    self.u[(i, c)]
                } else {
                    self.v[(i, c - r)]
                }
            })
        }
    }

    fn check(&self, spec: &ModelSpec, x: &CovariateTable) -> Result<()> {
        let n = x.n();
        let q = spec.coefficient_count(x.p());
        let r = spec.latent_rank;
        let ok = self.beta.len() == q
            && self.a.len() == n
            && self.b.len() == n
            && self.u.shape() == (n, r)
            && self.v.shape() == (n, r);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "parameters do not match n = {n}, {q} coefficients, rank {r}"
            )))
        }
    }
}

impl AsRef<Params> for Params {
    fn as_ref(&self) -> &Params {
        self
    }
}

/// One full MCMC state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterState {
    /// Latent matrix; `NaN` on the diagonal.
    pub z: DMatrix<f64>,
    pub params: Params,
}

impl ParameterState {
    /// True when `z_ij > 0` exactly where `y_ij = 1`.
    pub fn agrees_with(&self, y: &DirectedNetwork) -> bool {
        let n = y.n();
        (0..n).all(|i| (0..n).all(|j| i == j || (self.z[(i, j)] > 0.0) == y.tie(i, j)))
    }
}

/// Precomputed nodal design. For an ordered pair the design row is
/// `[1, x_i, x_j]` (asymmetric) or `[1, x_i + x_j]` (symmetric);
/// variants without covariates keep only the intercept.
#[derive(Clone, Debug)]
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub symmetric: bool,
    pub covariates: bool,
    pub x: DMatrix<f64>,
    pub sum_x: DVector<f64>,
    /// Asymmetric: sum over ordered pairs of `d_ij d_ij'`.
    /// Symmetric: sum over unordered pairs.
    pub g0: DMatrix<f64>,
    /// Asymmetric only: sum over ordered pairs of `d_ij d_ji'`.
    pub g1: DMatrix<f64>,
}

impl Design {
    pub fn new(spec: &ModelSpec, x: &CovariateTable) -> Self {
        let n = x.n();
        let covariates = spec.variant.has_covariates();
        let p = if covariates { x.p() } else { 0 };
        let q = spec.coefficient_count(p);
        let xm = if covariates {
            x.values().clone()
        } else {
            DMatrix::zeros(n, 0)
        };
        let sum_x = xm.row_sum().transpose();
        let mut d = Self {
            n,
            p,
            q,
            symmetric: spec.symmetric,
            covariates,
            x: xm,
            sum_x,
            g0: DMatrix::zeros(q, q),
            g1: DMatrix::zeros(q, q),
        };
        let mut g0 = DMatrix::zeros(q, q);
        let mut g1 = DMatrix::zeros(q, q);
        for i in 0..n {
            for j in 0..n {
                if i == j || (d.symmetric && j < i) {
                    continue;
                }
                let dij = d.row(i, j);
                g0 += &dij * dij.transpose();
                if !d.symmetric {
                    g1 += &dij * d.row(j, i).transpose();
                }
            }
        }
        d.g0 = g0;
        d.g1 = g1;
        d
    }

    /// Design row for pair `(i, j)`.
    pub fn row(&self, i: usize, j: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.q);
        out[0] = 1.0;
        for c in 0..self.p {
            if self.symmetric {
                out[1 + c] = self.x[(i, c)] + self.x[(j, c)];
            } else {
                out[1 + c] = self.x[(i, c)];
                out[1 + self.p + c] = self.x[(j, c)];
            }
        }
        out
    }

    /// `mu + beta_r' x_i` for every node.
    pub fn row_term(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut t = DVector::from_element(self.n, beta[0]);
        if self.p > 0 {
            t += &self.x * beta.rows(1, self.p);
        }
        t
    }

    /// `beta_c' x_j` for every node (the shared `beta` when symmetric).
    pub fn col_term(&self, beta: &DVector<f64>) -> DVector<f64> {
        if self.p == 0 {
            return DVector::zeros(self.n);
        }
        let start = if self.symmetric { 1 } else { 1 + self.p };
        &self.x * beta.rows(start, self.p)
    }

    /// `sum m_ij d_ij` from the off-diagonal row sums, column sums and total
    /// of `m`: over ordered pairs, or over unordered pairs for a symmetric
    /// design (where `m` must be symmetric).
    pub fn project(&self, total: f64, rows: &DVector<f64>, cols: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.q);
        out[0] = if self.symmetric { 0.5 * total } else { total };
        if self.p > 0 {
            let xr = self.x.transpose() * rows;
            let xc = self.x.transpose() * cols;
            if self.symmetric {
                out.rows_mut(1, self.p).copy_from(&xr);
            } else {
                out.rows_mut(1, self.p).copy_from(&xr);
                out.rows_mut(1 + self.p, self.p).copy_from(&xc);
            }
        }
        out
    }

    /// `sum_{j != i} d_ij` and `sum_{j != i} d_ji` for node `i`.
    pub fn node_sums(&self, i: usize) -> (DVector<f64>, DVector<f64>) {
        let n1 = (self.n - 1) as f64;
        let mut out_sum = DVector::zeros(self.q);
        let mut in_sum = DVector::zeros(self.q);
        out_sum[0] = n1;
        in_sum[0] = n1;
        for c in 0..self.p {
            let xi = self.x[(i, c)];
            let others = self.sum_x[c] - xi;
            if self.symmetric {
                out_sum[1 + c] = n1 * xi + others;
                in_sum[1 + c] = n1 * xi + others;
            } else {
                out_sum[1 + c] = n1 * xi;
                out_sum[1 + self.p + c] = others;
                in_sum[1 + c] = others;
                in_sum[1 + self.p + c] = n1 * xi;
            }
        }
        (out_sum, in_sum)
    }
}

/// Systematic part of the latent matrix for every ordered pair, with `NaN`
/// on the diagonal. Blocks absent from the variant must be zero in `params`
/// and contribute nothing.
pub fn linear_predictor(
    params: &Params,
    x: &CovariateTable,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    params.check(spec, x)?;
    let design = Design::new(spec, x);
    Ok(predictor_with(&design, params, spec))
}

pub(crate) fn predictor_with(design: &Design, params: &Params, spec: &ModelSpec) -> DMatrix<f64> {
    let n = design.n;
    let mut row = design.row_term(&params.beta);
    let mut col = design.col_term(&params.beta);
    if spec.variant.has_additive() {
        row += &params.a;
        col += if spec.symmetric { &params.a } else { &params.b };
    }
    let mut m = if spec.variant.has_multiplicative() {
        let v = if spec.symmetric { &params.u } else { &params.v };
        &params.u * v.transpose()
    } else {
        DMatrix::zeros(n, n)
    };
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = if i == j { f64::NAN } else { m[(i, j)] + row[i] + col[j] };
        }
    }
    m
}

/// Draws a state from the prior: covariances from their inverse-Wishart
/// priors, effects given those, coefficients from the diffuse normal and
/// `rho` uniform when estimated. `Z` is the predictor plus dyad-correlated
/// noise, with signs flipped to agree with `y` when supplied.
pub fn sample_prior_state(
    spec: &ModelSpec,
    x: &CovariateTable,
    y: Option<&DirectedNetwork>,
    seed: u64,
) -> Result<ParameterState> {
    spec.validate()?;
    let n = x.n();
    if let Some(y) = y {
        if y.n() != n {
            return Err(Error::Dimension(format!(
                "network has {} nodes, covariates {n}",
                y.n()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(spec, n, x.p());
    let sd = spec.prior.beta_prior_variance.sqrt();
    for b in params.beta.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *b = sd * e;
    }
    let prior = &spec.prior;
    if spec.variant.has_additive() {
        params.sigma_ab = sample_inverse_wishart(prior.sab_iw_df, &prior.sab_iw_scale, &mut rng)?;
        for i in 0..n {
            let w = sample_mvn(&params.sigma_ab, &mut rng, "Sigma_ab")?;
            params.a[i] = w[0];
            params.b[i] = if spec.symmetric { w[0] } else { w[1] };
        }
    }
    if spec.variant.has_multiplicative() {
        let r = spec.latent_rank;
        params.psi = sample_inverse_wishart(prior.psi_iw_df, &prior.psi_iw_scale, &mut rng)?;
        for i in 0..n {
            let w = sample_mvn(&params.psi, &mut rng, "Psi")?;
            for k in 0..r {
                params.u[(i, k)] = w[k];
                params.v[(i, k)] = if spec.symmetric { w[k] } else { w[r + k] };
            }
        }
    }
    if spec.variant.estimates_rho() && !spec.symmetric {
        params.rho = rng.random_range(-1.0..1.0);
    }
    let design = Design::new(spec, x);
    let mean = predictor_with(&design, &params, spec);
    let z = latent_from_predictor(&mean, params.rho, spec.symmetric, y, &mut rng);
    Ok(ParameterState { z, params })
}

/// `mean + e` with unit-variance dyad noise of correlation `rho`, optionally
/// sign-corrected to `y`.
pub(crate) fn latent_from_predictor<R: Rng + ?Sized>(
    mean: &DMatrix<f64>,
    rho: f64,
    symmetric: bool,
    y: Option<&DirectedNetwork>,
    rng: &mut R,
) -> DMatrix<f64> {
    let n = mean.nrows();
    let mut z = mean.clone();
    let s = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            let e1: f64 = StandardNormal.sample(rng);
            let e2: f64 = StandardNormal.sample(rng);
            if symmetric {
                z[(i, j)] += e1;
                z[(j, i)] = z[(i, j)];
            } else {
                z[(i, j)] += e1;
                z[(j, i)] += rho * e1 + s * e2;
            }
        }
    }
    if let Some(y) = y {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v = z[(i, j)];
                    z[(i, j)] = match (y.tie(i, j), v > 0.0) {
                        (true, false) => (-v).max(f64::MIN_POSITIVE),
                        (false, true) => -v,
                        _ => v,
                    };
                }
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("n{k}")).collect()
    }

    #[test]
    fn variant_rank_invariant() {
        assert!(ModelSpec::with_rank(Variant::Ame, 0, false).validate().is_err());
        assert!(ModelSpec::with_rank(Variant::Srrm, 2, false).validate().is_err());
        assert_eq!(ModelSpec::new(Variant::Ame, false).latent_rank, 3);
        assert_eq!(ModelSpec::new(Variant::Srm, false).latent_rank, 0);
    }

    #[test]
    fn srg_with_zero_intercept_gives_zero_predictor() {
        let spec = ModelSpec::new(Variant::Srg, false);
        let x = CovariateTable::empty(ids(3));
        let m = linear_predictor(&Params::zeros(&spec, 3, 0), &x, &spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!(m[(i, j)].is_nan());
                } else {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn srm_predictor_arithmetic() {
        let spec = ModelSpec::new(Variant::Srm, false);
        let x = CovariateTable::empty(ids(2));
        let mut p = Params::zeros(&spec, 2, 0);
        p.beta[0] = 0.5;
        p.a = DVector::from_vec(vec![1.0, 0.0]);
        p.b = DVector::from_vec(vec![0.0, -1.0]);
        let m = linear_predictor(&p, &x, &spec).unwrap();
        // mu + a_1 + b_2 = 0.5 + 1 - 1; mu + a_2 + b_1 = 0.5 + 0 + 0
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(1, 0)], 0.5);
    }

    #[test]
    fn ame_rank_one_predictor_arithmetic() {
        let spec = ModelSpec::with_rank(Variant::Ame, 1, false);
        let x = CovariateTable::empty(ids(2));
        let mut p = Params::zeros(&spec, 2, 0);
        p.u = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        p.v = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let m = linear_predictor(&p, &x, &spec).unwrap();
        assert_eq!(m[(0, 1)], 4.0);
        assert_eq!(m[(1, 0)], 6.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = ModelSpec::new(Variant::Srm, false);
        let p = Params::zeros(&spec, 3, 0);
        let x = CovariateTable::empty(ids(4));
        assert!(matches!(linear_predictor(&p, &x, &spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn covariate_terms_enter_row_and_column() {
        let spec = ModelSpec::new(Variant::Srrm, false);
        let x = CovariateTable::new(
            ids(3),
            vec!["x".into()],
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
        )
        .unwrap();
        let mut p = Params::zeros(&spec, 3, 1);
        p.beta = DVector::from_vec(vec![0.1, 10.0, 100.0]);
        let m = linear_predictor(&p, &x, &spec).unwrap();
        assert!((m[(0, 2)] - (0.1 + 10.0 + 300.0)).abs() < 1e-12);
        assert!((m[(2, 1)] - (0.1 + 30.0 + 200.0)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_predictor_is_symmetric() {
        let spec = ModelSpec::with_rank(Variant::Ame, 2, true);
        let x = CovariateTable::new(
            ids(4),
            vec!["x".into()],
            DMatrix::from_column_slice(4, 1, &[0.3, -1.0, 2.0, 0.5]),
        )
        .unwrap();
        let st = sample_prior_state(&spec, &x, None, 4).unwrap();
        let m = linear_predictor(&st.params, &x, &spec).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-12);
                    assert_eq!(st.z[(i, j)], st.z[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn design_sums_match_brute_force() {
        for symmetric in [false, true] {
            let spec = ModelSpec::new(Variant::Srrm, symmetric);
            let x = CovariateTable::new(
                ids(5),
                vec!["x".into(), "w".into()],
                DMatrix::from_fn(5, 2, |i, c| ((i * 7 + c * 3) % 5) as f64 - 1.5),
            )
            .unwrap();
            let d = Design::new(&spec, &x);
            for i in 0..5 {
                let (o, inn) = d.node_sums(i);
                let mut o2 = DVector::zeros(d.q);
                let mut i2 = DVector::zeros(d.q);
                for j in 0..5 {
                    if j != i {
                        o2 += d.row(i, j);
                        i2 += d.row(j, i);
                    }
                }
                assert!((o - o2).amax() < 1e-12);
                assert!((inn - i2).amax() < 1e-12);
            }
            let mut m = DMatrix::from_fn(5, 5, |i, j| (i as f64 * 1.3 - j as f64).sin());
            if symmetric {
                m = &m + m.transpose();
            }
            let mut direct = DVector::zeros(d.q);
            for i in 0..5 {
                for j in 0..5 {
                    if i != j && !(symmetric && j < i) {
                        direct += d.row(i, j) * m[(i, j)];
                    }
                }
            }
            let rows = DVector::from_fn(5, |i, _| (0..5).filter(|&j| j != i).map(|j| m[(i, j)]).sum());
            let cols = DVector::from_fn(5, |j, _| (0..5).filter(|&i| i != j).map(|i| m[(i, j)]).sum());
            let total = rows.sum();
            let fast = d.project(total, &rows, &cols);
            assert!((fast - direct).amax() < 1e-12);
        }
    }

    #[test]
    fn srg_prior_state_has_zero_effects() {
        let spec = ModelSpec::new(Variant::Srg, false);
        let x = CovariateTable::empty(ids(6));
        let st = sample_prior_state(&spec, &x, None, 1).unwrap();
        assert!(st.params.a.iter().all(|&v| v == 0.0));
        assert!(st.params.b.iter().all(|&v| v == 0.0));
        assert_eq!(st.params.u.len(), 0);
        assert_eq!(st.params.rho, 0.0);
    }

    #[test]
    fn prior_state_sign_corrected_to_network() {
        let spec = ModelSpec::with_rank(Variant::Ame, 2, false);
        let x = CovariateTable::empty(ids(8));
        let y = DirectedNetwork::from_fn(ids(8), false, |i, j| (i * 3 + j) % 4 == 0).unwrap();
        let st = sample_prior_state(&spec, &x, Some(&y), 9).unwrap();
        assert!(st.agrees_with(&y));
    }

    #[test]
    fn prior_effect_covariance_by_monte_carlo() {
        // (a_i, b_i) ~ N(0, I): draw many nodes from a fixed Sigma_ab = I by
        // pinning the inverse-Wishart to a near-point mass
        let n = 100_000;
        let mut spec = ModelSpec::new(Variant::Srm, false);
        spec.prior.sab_iw_df = 1e9;
        spec.prior.sab_iw_scale = DMatrix::identity(2, 2) * (1e9 - 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sigma = sample_inverse_wishart(spec.prior.sab_iw_df, &spec.prior.sab_iw_scale, &mut rng).unwrap();
        assert!((&sigma - DMatrix::<f64>::identity(2, 2)).amax() < 1e-3);
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let w = sample_mvn(&sigma, &mut rng, "t").unwrap();
            acc += &w * w.transpose();
        }
        acc /= n as f64;
        assert!((acc - DMatrix::<f64>::identity(2, 2)).amax() < 0.02);
    }

    #[test]
    fn psi_prior_mean_is_identity() {
        // df = 2R + 2 with scale (df - 2R - 1) I has mean I
        let r = 2;
        let dim = 2 * r;
        let df = dim as f64 + 2.0;
        let scale = DMatrix::identity(dim, dim) * (df - dim as f64 - 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = 200_000;
        let mut acc = DMatrix::zeros(dim, dim);
        for _ in 0..draws {
            acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
        }
        acc /= draws as f64;
        // df = dim + 2 has infinite variance, so tolerance is loose off the
        // diagonal and checked in relative terms on it
        for i in 0..dim {
            assert!((acc[(i, i)] - 1.0).abs() < 0.1, "{acc}");
        }
    }

    #[test]
    fn config_round_trip_and_errors() {
        let text = "# demo\nvariant = SRRM\nsymmetric = true\niterations = 500\nburn_in = 100\n\
                    thinning = 5\nsab_iw_scale = 2\nrho_proposal_sd = 0.1 # trailing\n";
        let spec = ModelSpec::from_config_str(text).unwrap();
        assert_eq!(spec.variant, Variant::Srrm);
        assert!(spec.symmetric);
        assert_eq!(spec.prior.sab_iw_scale, DMatrix::identity(1, 1) * 2.0);
        let again = ModelSpec::from_config_str(&spec.to_config_string()).unwrap();
        assert_eq!(again, spec);

        assert!(ModelSpec::from_config_str("bogus = 1").is_err());
        assert!(ModelSpec::from_config_str("variant = XYZ").is_err());
        assert!(ModelSpec::from_config_str("variant = AME\nlatent_rank = 0").is_err());
        assert!(ModelSpec::from_config_str("sab_iw_scale = 1,2,3").is_err());
        assert!(ModelSpec::from_config_str("sab_iw_scale = 1,2,2,1").is_err());
        assert!(ModelSpec::from_config_str("sab_iw_df = 0.5").is_err());
        assert!(ModelSpec::from_config_str("iterations = 10\nburn_in = 10").is_err());
    }
}
