//! Gibbs sampler over the latent matrix, regression coefficients, additive
//! and multiplicative effects, their covariances and the dyadic correlation.
//!
//! One iteration runs the updates in a fixed order: `Z`, `(beta, a, b)`,
//! `Sigma_ab`, `(U, V)`, `Psi`, `rho`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariates::CovariateTable;
use crate::error::{Error, Result};
use crate::gof::{posterior_predictive_gof, GofTable};
use crate::linalg::{cholesky, sample_canonical, sample_inverse_wishart, symmetrize, CompoundOperator};
use crate::model::{
    latent_from_predictor, predictor_with, Design, McmcSettings, ModelSpec, ParameterState, Params,
    Variant,
};
use crate::network::DirectedNetwork;
use crate::truncnorm::{norm_quantile, sample_signed};

/// Offset between the main chain seed and the empirical-Bayes pilot seed.
const PILOT_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Redraws every latent value from its truncated normal full conditional.
/// For each unordered pair, `z_ij` is drawn given `z_ji`, then `z_ji` given
/// the new `z_ij`.
pub fn update_z<R: Rng + ?Sized>(
    state: &mut ParameterState,
    y: &DirectedNetwork,
    design: &Design,
    spec: &ModelSpec,
    rng: &mut R,
) {
    let m = predictor_with(design, &state.params, spec);
    let z = &mut state.z;
    let n = m.nrows();
    if spec.symmetric {
        for j in 1..n {
            for i in 0..j {
                let v = sample_signed(m[(i, j)], 1.0, y.tie(i, j), rng);
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
        }
        return;
    }
    let rho = state.params.rho;
    let sd = (1.0 - rho * rho).sqrt();
    for j in 1..n {
        for i in 0..j {
            let (mij, mji) = (m[(i, j)], m[(j, i)]);
            let zij = sample_signed(mij + rho * (z[(j, i)] - mji), sd, y.tie(i, j), rng);
            z[(i, j)] = zij;
            z[(j, i)] = sample_signed(mji + rho * (zij - mij), sd, y.tie(j, i), rng);
        }
    }
}

/// `(c, d)` such that `c e_ij + d e_ji` are iid unit normals when
/// `(e_ij, e_ji)` have correlation `rho`.
pub fn decorrelation(rho: f64) -> (f64, f64) {
    let plus = 1.0 / (1.0 + rho).sqrt();
    let minus = 1.0 / (1.0 - rho).sqrt();
    (0.5 * (plus + minus), 0.5 * (plus - minus))
}

/// Gaussian full conditional of `(beta, a, b)` given `Z - UV'`, `rho` and
/// `Sigma_ab`, with the effects integrated out for the coefficient block.
///
/// After the decorrelating transform the model is an iid-error linear model
/// in `beta` and transformed effects whose posterior precision has the
/// structure `A (x) I + B (x) 11'`.
struct LinearSystem {
    /// Marginal precision and linear term of `beta`.
    precision: DMatrix<f64>,
    linear: DVector<f64>,
    effects: Option<EffectBlock>,
}

struct EffectBlock {
    op: CompoundOperator,
    k: usize,
    /// `Q^-1 W' E`.
    base: DMatrix<f64>,
    /// `Q^-1 W' D` for each coefficient.
    per_coef: Vec<DMatrix<f64>>,
    /// Maps transformed effects back to `(a_i, b_i)`.
    back: DMatrix<f64>,
}

impl LinearSystem {
    fn new(state: &ParameterState, design: &Design, spec: &ModelSpec) -> Result<Self> {
        let n = design.n;
        let q = design.q;
        let p = &state.params;
        let mut e = state.z.clone();
        if spec.variant.has_multiplicative() {
            let v = if spec.symmetric { &p.u } else { &p.v };
            e -= &p.u * v.transpose();
        }
        e.fill_diagonal(0.0);

        let rho = if spec.symmetric { 0.0 } else { p.rho };
        let (c, d) = decorrelation(rho);
        if !spec.symmetric && d != 0.0 {
            e = &e * c + e.transpose() * d;
        }
        let rows = e.column_sum();
        let cols = e.row_sum().transpose();
        let total = rows.sum();

        let (dtd, dte) = if spec.symmetric {
            (design.g0.clone(), design.project(total, &rows, &cols))
        } else {
            let cross = &design.g1 + design.g1.transpose();
            (
                &design.g0 * (c * c + d * d) + cross * (c * d),
                design.project(total, &rows, &cols) * c + design.project(total, &cols, &rows) * d,
            )
        };
        let mut precision = dtd + DMatrix::identity(q, q) / spec.prior.beta_prior_variance;
        let mut linear = dte;

        let effects = if spec.variant.has_additive() {
            let k = spec.effect_dim();
            let nf = n as f64;
            let (t, back, a0, b0) = if spec.symmetric {
                let one = DMatrix::identity(1, 1);
                (
                    one.clone(),
                    one.clone(),
                    DMatrix::from_element(1, 1, nf - 2.0),
                    one,
                )
            } else {
                let t = DMatrix::from_row_slice(2, 2, &[c, d, d, c]);
                let back = DMatrix::from_row_slice(2, 2, &[c, -d, -d, c]) / (c * c - d * d);
                (
                    t,
                    back,
                    DMatrix::from_row_slice(2, 2, &[nf - 1.0, -1.0, -1.0, nf - 1.0]),
                    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
                )
            };
            let prior_cov = &t * &p.sigma_ab * t.transpose();
            let prior_prec = cholesky(&prior_cov, "Sigma_ab")?.inverse();
            let op = CompoundOperator::new(&(a0 + prior_prec), &b0, n)?;

            let wte = if spec.symmetric {
                DMatrix::from_row_slice(1, n, rows.as_slice())
            } else {
                let mut w = DMatrix::zeros(2, n);
                w.set_row(0, &rows.transpose());
                w.set_row(1, &cols.transpose());
                w
            };
            let mut wtd = vec![DMatrix::zeros(k, n); q];
            for i in 0..n {
                let (out_s, in_s) = design.node_sums(i);
                for (s, w) in wtd.iter_mut().enumerate() {
                    if spec.symmetric {
                        w[(0, i)] = out_s[s];
                    } else {
                        w[(0, i)] = c * out_s[s] + d * in_s[s];
                        w[(1, i)] = c * in_s[s] + d * out_s[s];
                    }
                }
            }
            let base = op.solve(&wte);
            let per_coef: Vec<DMatrix<f64>> = wtd.iter().map(|w| op.solve(w)).collect();
            for s in 0..q {
                linear[s] -= per_coef[s].dot(&wte);
                for r in 0..q {
                    precision[(s, r)] -= per_coef[s].dot(&wtd[r]);
                }
            }
            precision = symmetrize(&precision);
            Some(EffectBlock {
                op,
                k,
                base,
                per_coef,
                back,
            })
        } else {
            None
        };
        Ok(Self {
            precision,
            linear,
            effects,
        })
    }

    /// Effects given `beta`, at their conditional mean plus `noise`.
    fn effects_given(
        &self,
        beta: &DVector<f64>,
        noise: Option<DMatrix<f64>>,
        symmetric: bool,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let fx = self.effects.as_ref()?;
        let mut theta = fx.base.clone();
        for (s, w) in fx.per_coef.iter().enumerate() {
            theta -= w * beta[s];
        }
        if let Some(noise) = noise {
            theta += noise;
        }
        let ab = &fx.back * theta;
        let a = ab.row(0).transpose();
        let b = if symmetric { a.clone() } else { ab.row(1).transpose() };
        Some((a, b))
    }
}

/// Mean and precision of the full conditional of `beta` with the additive
/// effects integrated out.
pub fn beta_conditional(
    state: &ParameterState,
    design: &Design,
    spec: &ModelSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sys = LinearSystem::new(state, design, spec)?;
    let mean = cholesky(&sys.precision, "coefficient precision")?.solve(&sys.linear);
    Ok((mean, sys.precision))
}

/// Joint conditional mean of `(beta, a, b)`.
pub fn beta_ab_conditional_mean(
    state: &ParameterState,
    design: &Design,
    spec: &ModelSpec,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let sys = LinearSystem::new(state, design, spec)?;
    let beta = cholesky(&sys.precision, "coefficient precision")?.solve(&sys.linear);
    let (a, b) = sys
        .effects_given(&beta, None, spec.symmetric)
        .unwrap_or_else(|| (DVector::zeros(design.n), DVector::zeros(design.n)));
    Ok((beta, a, b))
}

/// Draws `(beta, a, b)` jointly from their exact full conditional.
pub fn update_beta_ab<R: Rng + ?Sized>(
    state: &mut ParameterState,
    design: &Design,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    let sys = LinearSystem::new(state, design, spec)?;
    let beta = sample_canonical(&sys.precision, &sys.linear, rng, "coefficient precision")?;
    let noise = sys.effects.as_ref().map(|fx| fx.op.sample(fx.k, rng));
    if let Some((a, b)) = sys.effects_given(&beta, noise, spec.symmetric) {
        state.params.a = a;
        state.params.b = b;
    }
    state.params.beta = beta;
    Ok(())
}

/// Inverse-Wishart full conditional given the per-node rows `w_i`:
/// `(df + n, scale + sum w_i w_i')`.
pub fn inverse_wishart_posterior(
    df: f64,
    scale: &DMatrix<f64>,
    rows: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    (df + rows.nrows() as f64, scale + rows.transpose() * rows)
}

pub fn update_sigma_ab<R: Rng + ?Sized>(
    state: &mut ParameterState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    if !spec.variant.has_additive() {
        return Ok(());
    }
    let rows = state.params.effect_rows(spec.symmetric);
    let (df, scale) = inverse_wishart_posterior(spec.prior.sab_iw_df, &spec.prior.sab_iw_scale, &rows);
    state.params.sigma_ab = sample_inverse_wishart(df, &scale, rng)?;
    Ok(())
}

pub fn update_psi<R: Rng + ?Sized>(
    state: &mut ParameterState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    if !spec.variant.has_multiplicative() {
        return Ok(());
    }
    let rows = state.params.factor_rows(spec.symmetric);
    let (df, scale) = inverse_wishart_posterior(spec.prior.psi_iw_df, &spec.prior.psi_iw_scale, &rows);
    state.params.psi = sample_inverse_wishart(df, &scale, rng)?;
    Ok(())
}

/// `Z` minus the regression and additive terms, zero on the diagonal.
fn additive_residual(state: &ParameterState, design: &Design, spec: &ModelSpec) -> DMatrix<f64> {
    let p = &state.params;
    let mut row = design.row_term(&p.beta);
    let mut col = design.col_term(&p.beta);
    if spec.variant.has_additive() {
        row += &p.a;
        col += if spec.symmetric { &p.a } else { &p.b };
    }
    let n = design.n;
    let mut e = state.z.clone();
    for j in 0..n {
        for i in 0..n {
            e[(i, j)] = if i == j { 0.0 } else { e[(i, j)] - row[i] - col[j] };
        }
    }
    e
}

/// Sums `sum_j u_j u_j'`, `sum_j v_j v_j'` and `sum_j v_j u_j'`.
struct FactorSums {
    uu: DMatrix<f64>,
    vv: DMatrix<f64>,
    vu: DMatrix<f64>,
}

impl FactorSums {
    fn new(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Self {
        Self {
            uu: u.transpose() * u,
            vv: v.transpose() * v,
            vu: v.transpose() * u,
        }
    }

    fn shift(&mut self, u: &DVector<f64>, v: &DVector<f64>, sign: f64) {
        self.uu += u * u.transpose() * sign;
        self.vv += v * v.transpose() * sign;
        self.vu += v * u.transpose() * sign;
    }
}

/// Precision and linear term of node `i`'s multiplicative vector given the
/// other nodes. `sums` must exclude node `i`.
fn node_system(
    e: &DMatrix<f64>,
    params: &Params,
    psi_inv: &DMatrix<f64>,
    sums: &FactorSums,
    symmetric: bool,
    i: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = e.nrows();
    let r = params.u.ncols();
    let (u, v) = (&params.u, &params.v);
    if symmetric {
        let prec = psi_inv + &sums.uu;
        let mut lin = DVector::zeros(r);
        for k in 0..r {
            let mut acc = 0.0;
            for j in 0..n {
                acc += u[(j, k)] * e[(i, j)];
            }
            lin[k] = acc;
        }
        return (prec, lin);
    }
    let rho = params.rho;
    let s = 1.0 / (1.0 - rho * rho);
    let mut prec = psi_inv.clone();
    let mut tl = prec.view_mut((0, 0), (r, r));
    tl += &sums.vv * s;
    let mut br = prec.view_mut((r, r), (r, r));
    br += &sums.uu * s;
    let cross = &sums.vu * (-rho * s);
    let mut tr = prec.view_mut((0, r), (r, r));
    tr += &cross;
    let mut bl = prec.view_mut((r, 0), (r, r));
    bl += cross.transpose();

    let mut lin = DVector::zeros(2 * r);
    for k in 0..r {
        let (mut lu, mut lv) = (0.0, 0.0);
        for j in 0..n {
            let (eij, eji) = (e[(i, j)], e[(j, i)]);
            lu += v[(j, k)] * (eij - rho * eji);
            lv += u[(j, k)] * (eji - rho * eij);
        }
        lin[k] = s * lu;
        lin[r + k] = s * lv;
    }
    (prec, lin)
}

/// Mean and precision of node `i`'s multiplicative vector `(u_i, v_i)`
/// (`u_i` when symmetric) given everything else.
pub fn factor_conditional(
    state: &ParameterState,
    design: &Design,
    spec: &ModelSpec,
    i: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let e = additive_residual(state, design, spec);
    let p = &state.params;
    let psi_inv = cholesky(&p.psi, "Psi")?.inverse();
    let mut sums = FactorSums::new(&p.u, &p.v);
    sums.shift(&p.u.row(i).transpose(), &p.v.row(i).transpose(), -1.0);
    let (prec, lin) = node_system(&e, p, &psi_inv, &sums, spec.symmetric, i);
    let mean = cholesky(&prec, "factor precision")?.solve(&lin);
    Ok((mean, prec))
}

/// Sweeps the nodes in order, redrawing each node's multiplicative vector
/// from its exact Gaussian full conditional.
pub fn update_uv<R: Rng + ?Sized>(
    state: &mut ParameterState,
    design: &Design,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    if !spec.variant.has_multiplicative() {
        return Ok(());
    }
    let e = additive_residual(state, design, spec);
    let r = spec.latent_rank;
    let psi_inv = cholesky(&state.params.psi, "Psi")?.inverse();
    let p = &mut state.params;
    if spec.symmetric {
        p.v = p.u.clone();
    }
    let mut sums = FactorSums::new(&p.u, &p.v);
    for i in 0..design.n {
        let (ui, vi) = (p.u.row(i).transpose(), p.v.row(i).transpose());
        sums.shift(&ui, &vi, -1.0);
        let (prec, lin) = node_system(&e, p, &psi_inv, &sums, spec.symmetric, i);
        let w = sample_canonical(&prec, &lin, rng, "factor precision")?;
        let new_u = w.rows(0, r).into_owned();
        let new_v = if spec.symmetric {
            new_u.clone()
        } else {
            w.rows(r, r).into_owned()
        };
        p.u.set_row(i, &new_u.transpose());
        p.v.set_row(i, &new_v.transpose());
        sums.shift(&new_u, &new_v, 1.0);
    }
    Ok(())
}

/// Sufficient statistics of the dyad residuals `e = Z - M`: number of
/// unordered pairs, `sum e_ij^2 + e_ji^2` and `sum e_ij e_ji`.
pub fn dyad_sums(z: &DMatrix<f64>, m: &DMatrix<f64>) -> (usize, f64, f64) {
    let n = z.nrows();
    let (mut sq, mut x) = (0.0, 0.0);
    for j in 1..n {
        for i in 0..j {
            let a = z[(i, j)] - m[(i, j)];
            let b = z[(j, i)] - m[(j, i)];
            sq += a * a + b * b;
            x += a * b;
        }
    }
    (n * (n - 1) / 2, sq, x)
}

/// Log-likelihood of `rho` from the dyad residual sums (unit variances).
pub fn rho_log_likelihood(rho: f64, dyads: usize, sq: f64, cross: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    -0.5 * dyads as f64 * one_m.ln() - (sq - 2.0 * rho * cross) / (2.0 * one_m)
}

/// Random-walk Metropolis step on `atanh(rho)` under a uniform prior.
/// Returns whether the proposal was accepted, or `None` when `rho` is not
/// sampled for this model.
pub fn update_rho<R: Rng + ?Sized>(
    state: &mut ParameterState,
    design: &Design,
    spec: &ModelSpec,
    rng: &mut R,
) -> Option<bool> {
    if !spec.variant.estimates_rho() || spec.symmetric {
        return None;
    }
    let m = predictor_with(design, &state.params, spec);
    let (dyads, sq, cross) = dyad_sums(&state.z, &m);
    let rho = state.params.rho;
    let step: f64 = StandardNormal.sample(rng);
    let proposal = (rho.atanh() + spec.prior.rho_proposal_sd * step).tanh();
    let u: f64 = rng.random();
    if !(proposal.abs() < 1.0) {
        return Some(false);
    }
    // uniform prior on rho; the atanh scale adds the Jacobian 1 - rho^2
    let log_ratio = rho_log_likelihood(proposal, dyads, sq, cross)
        - rho_log_likelihood(rho, dyads, sq, cross)
        + (1.0 - proposal * proposal).ln()
        - (1.0 - rho * rho).ln();
    let accept = u.ln() < log_ratio || log_ratio >= 0.0;
    if accept {
        state.params.rho = proposal;
    }
    Some(accept)
}

/// A stored post-burn-in state. The latent matrix is not kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    /// One-based iteration that produced the state.
    pub iteration: usize,
    pub params: Params,
}

impl AsRef<Params> for Draw {
    fn as_ref(&self) -> &Params {
        &self.params
    }
}

/// Output of a single chain.
#[derive(Clone, Debug)]
pub struct Chain {
    /// Effective spec, including hyperpriors set by an empirical-Bayes pilot.
    pub spec: ModelSpec,
    pub node_ids: Vec<String>,
    pub coefficient_names: Vec<String>,
    pub draws: Vec<Draw>,
    /// Full state after the last iteration; absent for chains read back
    /// from disk.
    pub last_state: Option<ParameterState>,
    /// Metropolis acceptance rate for `rho`, when it is sampled.
    pub rho_acceptance: Option<f64>,
    /// Posterior-predictive table computed at fit time.
    pub gof: Option<GofTable>,
}

/// Sequential Gibbs sampler owning one chain's state.
pub struct Sampler<'a> {
    spec: ModelSpec,
    y: &'a DirectedNetwork,
    design: Design,
    state: ParameterState,
    rng: ChaCha8Rng,
    rho_proposed: usize,
    rho_accepted: usize,
}

impl<'a> Sampler<'a> {
    /// Starts from a deterministic neutral state: intercept at the probit of
    /// the density, other effects zero, covariances at their prior means.
    pub fn new(y: &'a DirectedNetwork, x: &CovariateTable, spec: &ModelSpec) -> Result<Self> {
        check_inputs(y, x, spec)?;
        let design = Design::new(spec, x);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.mcmc.seed);
        let state = initial_state(y, &design, spec, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            y,
            design,
            state,
            rng,
            rho_proposed: 0,
            rho_accepted: 0,
        })
    }

    /// Starts from a given state; the latent matrix must agree with `y`.
    pub fn with_state(
        y: &'a DirectedNetwork,
        x: &CovariateTable,
        spec: &ModelSpec,
        state: ParameterState,
    ) -> Result<Self> {
        let mut s = Self::new(y, x, spec)?;
        if state.z.shape() != (y.n(), y.n()) || !state.agrees_with(y) {
            return Err(Error::Input("initial latent matrix disagrees with the network".into()));
        }
        s.state = state;
        Ok(s)
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn rho_acceptance(&self) -> Option<f64> {
        (self.rho_proposed > 0).then(|| self.rho_accepted as f64 / self.rho_proposed as f64)
    }

    /// One full Gibbs iteration.
    pub fn sweep(&mut self) -> Result<()> {
        let (spec, design, rng) = (&self.spec, &self.design, &mut self.rng);
        let state = &mut self.state;
        update_z(state, self.y, design, spec, rng);
        update_beta_ab(state, design, spec, rng)?;
        update_sigma_ab(state, spec, rng)?;
        update_uv(state, design, spec, rng)?;
        update_psi(state, spec, rng)?;
        if let Some(accepted) = update_rho(state, design, spec, rng) {
            self.rho_proposed += 1;
            self.rho_accepted += usize::from(accepted);
        }
        Ok(())
    }

    /// Runs the configured number of iterations and returns the thinned
    /// post-burn-in draws.
    pub fn run(mut self) -> Result<(Vec<Draw>, ParameterState, Option<f64>)> {
        let McmcSettings {
            iterations,
            burn_in,
            thinning,
            ..
        } = self.spec.mcmc;
        let mut draws = Vec::with_capacity(self.spec.mcmc.stored());
        for it in 1..=iterations {
            self.sweep().map_err(|e| e.at_iteration(it))?;
            if it > burn_in && (it - burn_in) % thinning == 0 {
                draws.push(Draw {
                    iteration: it,
                    params: self.state.params.clone(),
                });
            }
        }
        let acc = self.rho_acceptance();
        Ok((draws, self.state, acc))
    }
}

fn check_inputs(y: &DirectedNetwork, x: &CovariateTable, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if y.n() != x.n() {
        return Err(Error::Dimension(format!(
            "network has {} nodes, covariates {}",
            y.n(),
            x.n()
        )));
    }
    if y.node_ids() != x.node_ids() {
        return Err(Error::Input("covariate rows are not in network node order".into()));
    }
    if y.n() < 2 {
        return Err(Error::Network("need at least 2 nodes".into()));
    }
    if spec.symmetric {
        let n = y.n();
        if (0..n).any(|i| (0..i).any(|j| y.tie(i, j) != y.tie(j, i))) {
            return Err(Error::Input("symmetric model requires a symmetric network".into()));
        }
    }
    Ok(())
}

fn prior_mean(df: f64, scale: &DMatrix<f64>) -> DMatrix<f64> {
    let excess = df - scale.nrows() as f64 - 1.0;
    if excess > 0.0 {
        scale / excess
    } else {
        scale.clone()
    }
}

fn initial_state<R: Rng + ?Sized>(
    y: &DirectedNetwork,
    design: &Design,
    spec: &ModelSpec,
    rng: &mut R,
) -> ParameterState {
    let n = y.n();
    let pairs = (n * (n - 1)) as f64;
    let mut params = Params::zeros(spec, n, design.p);
    let floor = 0.5 / pairs;
    let density = (y.edge_count() as f64 / pairs).clamp(floor, 1.0 - floor);
    params.beta[0] = norm_quantile(density);
    params.sigma_ab = prior_mean(spec.prior.sab_iw_df, &spec.prior.sab_iw_scale);
    params.psi = prior_mean(spec.prior.psi_iw_df, &spec.prior.psi_iw_scale);
    let m = predictor_with(design, &params, spec);
    let z = latent_from_predictor(&m, 0.0, spec.symmetric, Some(y), rng);
    ParameterState { z, params }
}

/// Replaces the inverse-Wishart scales with posterior means from short
/// pilot runs (SRRM for `Sigma_ab`, AME with default priors for `Psi`),
/// keeping `df = dim + 2` so the prior mean equals the pilot estimate.
pub fn empirical_bayes(
    y: &DirectedNetwork,
    x: &CovariateTable,
    spec: &ModelSpec,
) -> Result<ModelSpec> {
    let mut out = spec.clone();
    if !spec.pilot.enabled {
        return Ok(out);
    }
    let mcmc = McmcSettings {
        iterations: spec.pilot.iterations,
        burn_in: spec.pilot.burn_in,
        thinning: 1,
        seed: spec.mcmc.seed.wrapping_add(PILOT_SEED_OFFSET),
    };
    let pilot = |variant: Variant, rank: usize| -> Result<Vec<Draw>> {
        let mut ps = ModelSpec::with_rank(variant, rank, spec.symmetric);
        ps.prior.beta_prior_variance = spec.prior.beta_prior_variance;
        ps.prior.rho_proposal_sd = spec.prior.rho_proposal_sd;
        ps.mcmc = mcmc.clone();
        Ok(Sampler::new(y, x, &ps)?.run()?.0)
    };
    let mean_of = |draws: &[Draw], f: fn(&Params) -> &DMatrix<f64>| {
        let mut acc = f(&draws[0].params).clone() * 0.0;
        for d in draws {
            acc += f(&d.params);
        }
        symmetrize(&(acc / draws.len() as f64))
    };
    if spec.variant.has_additive() {
        let draws = pilot(Variant::Srrm, 0)?;
        out.prior.sab_iw_scale = mean_of(&draws, |p| &p.sigma_ab);
        out.prior.sab_iw_df = spec.effect_dim() as f64 + 2.0;
    }
    if spec.variant.has_multiplicative() {
        let draws = pilot(Variant::Ame, spec.latent_rank)?;
        out.prior.psi_iw_scale = mean_of(&draws, |p| &p.psi);
        out.prior.psi_iw_df = spec.factor_dim() as f64 + 2.0;
    }
    out.validate()?;
    Ok(out)
}

/// Fits one chain: optional empirical-Bayes pilot, the Gibbs run, and the
/// posterior-predictive goodness-of-fit table (one simulated network per
/// stored state by default). Deterministic given the seed in `spec`.
pub fn run_chain(y: &DirectedNetwork, x: &CovariateTable, spec: &ModelSpec) -> Result<Chain> {
    if y.n() < 3 {
        return Err(Error::Network("need at least 3 nodes to fit a model".into()));
    }
    let spec = empirical_bayes(y, x, spec)?;
    let (draws, last_state, rho_acceptance) = Sampler::new(y, x, &spec)?.run()?;
    let gof = posterior_predictive_gof(&draws, y, x, &spec, spec.mcmc.seed)?;
    Ok(Chain {
        coefficient_names: spec.coefficient_names(x),
        node_ids: y.node_ids().to_vec(),
        spec,
        draws,
        last_state: Some(last_state),
        rho_acceptance,
        gof: Some(gof),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::model::sample_prior_state;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("n{k:02}")).collect()
    }

    fn net(n: usize, seed: u64, symmetric: bool) -> DirectedNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<bool> = (0..n * n).map(|_| rng.random::<f64>() < 0.3).collect();
        let d = DirectedNetwork::from_fn(ids(n), false, |i, j| bits[i * n + j]).unwrap();
        if symmetric {
            d.symmetrize()
        } else {
            d
        }
    }

    fn covariates(n: usize, p: usize) -> CovariateTable {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cols = (0..p).map(|c| format!("x{c}")).collect();
        let vals = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        CovariateTable::new(ids(n), cols, vals).unwrap()
    }

    /// State with a generic continuous latent matrix (no sign constraints).
    fn free_state(spec: &ModelSpec, x: &CovariateTable, seed: u64) -> ParameterState {
        let mut st = sample_prior_state(spec, x, None, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let n = x.n();
        for i in 0..n {
            for j in 0..n {
                if i != j && !(spec.symmetric && j < i) {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    st.z[(i, j)] = v + 0.3 * i as f64 - 0.2 * j as f64;
                    if spec.symmetric {
                        st.z[(j, i)] = st.z[(i, j)];
                    }
                }
            }
        }
        if !spec.symmetric && spec.variant.estimates_rho() {
            st.params.rho = 0.6;
        }
        st
    }

    /// Dense generalized-least-squares posterior of (beta, a, b) built from
    /// one explicit observation row per pair.
    fn dense_posterior(
        st: &ParameterState,
        design: &Design,
        spec: &ModelSpec,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = design.n;
        let q = design.q;
        let sym = spec.symmetric;
        let additive = spec.variant.has_additive();
        let k = if !additive { 0 } else if sym { n } else { 2 * n };
        let dim = q + k;
        let p = &st.params;
        let mut uv = DMatrix::zeros(n, n);
        if spec.variant.has_multiplicative() {
            uv = &p.u * if sym { p.u.transpose() } else { p.v.transpose() };
        }
        let obs_row = |i: usize, j: usize| {
            let mut r = DVector::zeros(dim);
            r.rows_mut(0, q).copy_from(&design.row(i, j));
            if additive {
                r[q + i] += 1.0;
                r[if sym { q + j } else { q + n + j }] += 1.0;
            }
            r
        };
        let mut prec = DMatrix::zeros(dim, dim);
        let mut lin = DVector::zeros(dim);
        for j in 0..n {
            for i in 0..j {
                if sym {
                    let x = obs_row(i, j);
                    prec += &x * x.transpose();
                    lin += &x * (st.z[(i, j)] - uv[(i, j)]);
                } else {
                    let rho = p.rho;
                    let xs = [obs_row(i, j), obs_row(j, i)];
                    let es = [st.z[(i, j)] - uv[(i, j)], st.z[(j, i)] - uv[(j, i)]];
                    let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
                    let w = cov.try_inverse().unwrap();
                    for s in 0..2 {
                        for t in 0..2 {
                            prec += &xs[s] * xs[t].transpose() * w[(s, t)];
                            lin += &xs[s] * (w[(s, t)] * es[t]);
                        }
                    }
                }
            }
        }
        for s in 0..q {
            prec[(s, s)] += 1.0 / spec.prior.beta_prior_variance;
        }
        if additive {
            let sinv = p.sigma_ab.clone().try_inverse().unwrap();
            for i in 0..n {
                if sym {
                    prec[(q + i, q + i)] += sinv[(0, 0)];
                } else {
                    let idx = [q + i, q + n + i];
                    for s in 0..2 {
                        for t in 0..2 {
                            prec[(idx[s], idx[t])] += sinv[(s, t)];
                        }
                    }
                }
            }
        }
        let cov = prec.try_inverse().unwrap();
        (&cov * lin, cov)
    }

    #[test]
    fn latent_update_respects_signs() {
        for symmetric in [false, true] {
            let spec = ModelSpec::with_rank(Variant::Ame, 2, symmetric);
            let y = net(12, 4, symmetric);
            let x = covariates(12, 2);
            let mut st = sample_prior_state(&spec, &x, Some(&y), 3).unwrap();
            if !symmetric {
                st.params.rho = 0.85;
            }
            let design = Design::new(&spec, &x);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..20 {
                update_z(&mut st, &y, &design, &spec, &mut rng);
                assert!(st.agrees_with(&y));
            }
        }
    }

    #[test]
    fn srg_intercept_is_conjugate_normal() {
        let spec = ModelSpec::new(Variant::Srg, false);
        let x = CovariateTable::empty(ids(6));
        let st = free_state(&spec, &x, 5);
        let design = Design::new(&spec, &x);
        let (mean, prec) = beta_conditional(&st, &design, &spec).unwrap();
        let total: f64 = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| st.z[(i, j)])
            .sum();
        let p0 = 30.0 + 1.0 / spec.prior.beta_prior_variance;
        assert!((prec[(0, 0)] - p0).abs() < 1e-10);
        assert!((mean[0] - total / p0).abs() < 1e-10);
    }

    #[test]
    fn no_data_draws_follow_the_prior() {
        for variant in [Variant::Srg, Variant::IidReg] {
            let spec = ModelSpec::new(variant, false);
            let x = covariates(0, 1);
            let design = Design::new(&spec, &x);
            let mut st = ParameterState {
                z: DMatrix::zeros(0, 0),
                params: Params::zeros(&spec, 0, 1),
            };
            let (mean, prec) = beta_conditional(&st, &design, &spec).unwrap();
            assert!(mean.iter().all(|&m| m == 0.0));
            assert!((prec - DMatrix::identity(design.q, design.q) * 0.01).amax() < 1e-15);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let draws = 40_000;
            let mut ss = 0.0;
            for _ in 0..draws {
                update_beta_ab(&mut st, &design, &spec, &mut rng).unwrap();
                ss += st.params.beta[0].powi(2);
            }
            let var = ss / draws as f64;
            assert!((var - 100.0).abs() < 3.0, "{var}");
        }
    }

    #[test]
    fn structured_conditional_matches_dense_algebra() {
        let cases = [
            (Variant::Srm, false, 0),
            (Variant::Srrm, false, 0),
            (Variant::Srrm, true, 0),
            (Variant::IidReg, false, 0),
            (Variant::IidReg, true, 0),
            (Variant::Ame, false, 2),
            (Variant::Ame, true, 2),
        ];
        for (variant, symmetric, rank) in cases {
            let spec = ModelSpec::with_rank(variant, rank, symmetric);
            let x = covariates(6, 2);
            let mut st = free_state(&spec, &x, 7);
            if spec.variant.has_additive() && !symmetric {
                st.params.sigma_ab = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
            }
            let design = Design::new(&spec, &x);
            let (dense_mean, dense_cov) = dense_posterior(&st, &design, &spec);
            let q = design.q;
            let (beta, a, b) = beta_ab_conditional_mean(&st, &design, &spec).unwrap();
            let label = format!("{variant} sym={symmetric}");
            assert!((&beta - dense_mean.rows(0, q)).amax() < 1e-9, "{label}");
            if spec.variant.has_additive() {
                assert!((&a - dense_mean.rows(q, 6)).amax() < 1e-9, "{label}");
                let b_dense = if symmetric { dense_mean.rows(q, 6) } else { dense_mean.rows(q + 6, 6) };
                assert!((&b - b_dense).amax() < 1e-9, "{label}");
            }
            let (_, prec) = beta_conditional(&st, &design, &spec).unwrap();
            let marginal = dense_cov.view((0, 0), (q, q)).into_owned().try_inverse().unwrap();
            assert!((prec - &marginal).amax() < 1e-8 * marginal.amax(), "{label}");
        }
    }

    #[test]
    fn joint_draw_covariance_matches_dense_algebra() {
        let spec = ModelSpec::new(Variant::Srrm, false);
        let x = covariates(4, 1);
        let mut st = free_state(&spec, &x, 11);
        st.params.rho = -0.5;
        let design = Design::new(&spec, &x);
        let (mean, cov) = dense_posterior(&st, &design, &spec);
        let dim = mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut m1 = DVector::zeros(dim);
        let mut m2 = DMatrix::zeros(dim, dim);
        for _ in 0..draws {
            update_beta_ab(&mut st, &design, &spec, &mut rng).unwrap();
            let p = &st.params;
            let theta = DVector::from_iterator(
                dim,
                p.beta.iter().chain(p.a.iter()).chain(p.b.iter()).copied(),
            );
            m1 += &theta;
            m2 += &theta * theta.transpose();
        }
        m1 /= draws as f64;
        let sample_cov = m2 / draws as f64 - &m1 * m1.transpose();
        for s in 0..dim {
            let se = (cov[(s, s)] / draws as f64).sqrt();
            assert!((m1[s] - mean[s]).abs() < 4.5 * se, "mean {s}");
            for t in 0..dim {
                let tol = 0.03 * (cov[(s, s)] * cov[(t, t)]).sqrt();
                assert!((sample_cov[(s, t)] - cov[(s, t)]).abs() < tol, "cov {s},{t}");
            }
        }
    }

    /// Batch-means Monte Carlo standard error.
    fn mcse(xs: &[f64]) -> (f64, f64) {
        let batches = 50;
        let size = xs.len() / batches;
        let means: Vec<f64> = (0..batches)
            .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
            .collect();
        let m = means.iter().sum::<f64>() / batches as f64;
        let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        (m, (v / batches as f64).sqrt())
    }

    #[test]
    fn additive_effects_match_single_site_reference_sampler() {
        // Z held fixed on n = 4, rho = 0: blocked draws of (mu, a, b) plus
        // Sigma_ab against a one-coordinate-at-a-time Gibbs sampler
        let n = 4;
        let spec = ModelSpec::new(Variant::Srm, false);
        let x = CovariateTable::empty(ids(n));
        let design = Design::new(&spec, &x);
        let mut st = free_state(&spec, &x, 21);
        st.params.rho = 0.0;
        let z = st.z.clone();
        let sweeps = 50_000;

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ours = vec![Vec::with_capacity(sweeps); n];
        for _ in 0..sweeps {
            update_beta_ab(&mut st, &design, &spec, &mut rng).unwrap();
            update_sigma_ab(&mut st, &spec, &mut rng).unwrap();
            for i in 0..n {
                ours[i].push(st.params.a[i]);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v0 = spec.prior.beta_prior_variance;
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        let mut sigma = DMatrix::<f64>::identity(2, 2);
        let mut reference = vec![Vec::with_capacity(sweeps); n];
        let normal = |rng: &mut ChaCha8Rng, prec: f64, lin: f64| {
            let e: f64 = StandardNormal.sample(rng);
            lin / prec + e / prec.sqrt()
        };
        for _ in 0..sweeps {
            let mut lin = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        lin += z[(i, j)] - a[i] - b[j];
                    }
                }
            }
            let mu = normal(&mut rng, (n * (n - 1)) as f64 + 1.0 / v0, lin);
            let sinv = sigma.clone().try_inverse().unwrap();
            for i in 0..n {
                // a_i | b_i has prior mean (Sigma^-1)_ab b_i / (Sigma^-1)_aa scaled
                let mut lin = -sinv[(0, 1)] * b[i];
                for j in 0..n {
                    if j != i {
                        lin += z[(i, j)] - mu - b[j];
                    }
                }
                a[i] = normal(&mut rng, (n - 1) as f64 + sinv[(0, 0)], lin);
            }
            for j in 0..n {
                let mut lin = -sinv[(0, 1)] * a[j];
                for i in 0..n {
                    if i != j {
                        lin += z[(i, j)] - mu - a[i];
                    }
                }
                b[j] = normal(&mut rng, (n - 1) as f64 + sinv[(1, 1)], lin);
            }
            let rows = DMatrix::from_fn(n, 2, |i, c| if c == 0 { a[i] } else { b[i] });
            let (df, scale) =
                inverse_wishart_posterior(spec.prior.sab_iw_df, &spec.prior.sab_iw_scale, &rows);
            sigma = sample_inverse_wishart(df, &scale, &mut rng).unwrap();
            for i in 0..n {
                reference[i].push(a[i]);
            }
        }
        for i in 0..n {
            let (m1, s1) = mcse(&ours[i]);
            let (m2, s2) = mcse(&reference[i]);
            let tol = 3.0 * (s1 * s1 + s2 * s2).sqrt();
            assert!((m1 - m2).abs() < tol, "a[{i}]: {m1} vs {m2} (tol {tol})");
        }
    }

    #[test]
    fn inverse_wishart_posterior_cases() {
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (df, s) = inverse_wishart_posterior(4.0, &scale, &DMatrix::zeros(0, 2));
        assert_eq!((df, &s), (4.0, &scale));
        let (df, s) = inverse_wishart_posterior(4.0, &scale, &DMatrix::zeros(7, 2));
        assert_eq!((df, &s), (11.0, &scale));

        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = ModelSpec::new(Variant::Srm, false);
        let mut st = ParameterState {
            z: DMatrix::zeros(n, n),
            params: Params::zeros(&spec, n, 0),
        };
        for i in 0..n {
            let (e1, e2): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            st.params.a[i] = 2.0 * e1;
            st.params.b[i] = e2;
        }
        let mut acc = DMatrix::zeros(2, 2);
        let reps = 2000;
        for _ in 0..reps {
            update_sigma_ab(&mut st, &spec, &mut rng).unwrap();
            acc += &st.params.sigma_ab;
        }
        acc /= reps as f64;
        assert!((acc[(0, 0)] - 4.0).abs() < 0.4, "{acc}");
        assert!((acc[(1, 1)] - 1.0).abs() < 0.1, "{acc}");
    }

    #[test]
    fn lone_factor_has_prior_conditional() {
        let spec = ModelSpec::with_rank(Variant::Ame, 1, false);
        let x = CovariateTable::empty(ids(5));
        let mut st = free_state(&spec, &x, 2);
        st.params.u.fill(0.0);
        st.params.v.fill(0.0);
        st.params.rho = 0.0;
        st.params.psi = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let design = Design::new(&spec, &x);
        let (mean, prec) = factor_conditional(&st, &design, &spec, 2).unwrap();
        assert!(mean.amax() < 1e-15);
        let psi_inv = st.params.psi.clone().try_inverse().unwrap();
        assert!((prec - psi_inv).amax() < 1e-12);
    }

    #[test]
    fn factor_conditional_matches_dense_regression() {
        for symmetric in [false, true] {
            let spec = ModelSpec::with_rank(Variant::Ame, 2, symmetric);
            let x = covariates(6, 1);
            let mut st = free_state(&spec, &x, 3);
            if !symmetric {
                st.params.rho = -0.4;
            }
            let design = Design::new(&spec, &x);
            let i = 3;
            let (mean, prec) = factor_conditional(&st, &design, &spec, i).unwrap();
            // brute force: regress the pairs touching node i on w = (u_i, v_i)
            let e = additive_residual(&st, &design, &spec);
            let p = &st.params;
            let dim = spec.factor_dim();
            let mut dp = p.psi.clone().try_inverse().unwrap();
            let mut dl = DVector::zeros(dim);
            for j in 0..6 {
                if j == i {
                    continue;
                }
                if symmetric {
                    let xr = p.u.row(j).transpose();
                    dp += &xr * xr.transpose();
                    dl += &xr * e[(i, j)];
                } else {
                    let mut x1 = DVector::zeros(dim);
                    let mut x2 = DVector::zeros(dim);
                    for k in 0..2 {
                        x1[k] = p.v[(j, k)];
                        x2[2 + k] = p.u[(j, k)];
                    }
                    let w = DMatrix::from_row_slice(2, 2, &[1.0, p.rho, p.rho, 1.0])
                        .try_inverse()
                        .unwrap();
                    let xs = [x1, x2];
                    let es = [e[(i, j)], e[(j, i)]];
                    for s in 0..2 {
                        for t in 0..2 {
                            dp += &xs[s] * xs[t].transpose() * w[(s, t)];
                            dl += &xs[s] * (w[(s, t)] * es[t]);
                        }
                    }
                }
            }
            assert!((&prec - &dp).amax() < 1e-10);
            let dm = dp.try_inverse().unwrap() * dl;
            assert!((mean - dm).amax() < 1e-10);
        }
    }

    #[test]
    fn planted_rank_one_structure_is_recovered() {
        let n = 30;
        let spec = ModelSpec::with_rank(Variant::Ame, 1, false);
        let x = CovariateTable::empty(ids(n));
        let design = Design::new(&spec, &x);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u0: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let v0: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let planted = &u0 * v0.transpose() * 3.0;
        let mut st = ParameterState {
            z: planted.clone(),
            params: Params::zeros(&spec, n, 0),
        };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    st.z[(i, j)] += e;
                }
            }
        }
        let mut mean = DMatrix::zeros(n, n);
        let (burn, keep) = (200, 800);
        for it in 0..burn + keep {
            update_uv(&mut st, &design, &spec, &mut rng).unwrap();
            update_psi(&mut st, &spec, &mut rng).unwrap();
            if it >= burn {
                mean += st.params.multiplicative();
            }
        }
        mean /= keep as f64;
        let (mut xs, mut ys) = (vec![], vec![]);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    xs.push(mean[(i, j)]);
                    ys.push(planted[(i, j)]);
                }
            }
        }
        let r = pearson(&xs, &ys);
        assert!(r > 0.95, "{r}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for k in 0..a.len() {
            sab += (a[k] - ma) * (b[k] - mb);
            saa += (a[k] - ma).powi(2);
            sbb += (b[k] - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn factor_sweep_is_rotation_equivariant_in_distribution() {
        let n = 6;
        let spec = ModelSpec::with_rank(Variant::Ame, 2, false);
        let x = CovariateTable::empty(ids(n));
        let design = Design::new(&spec, &x);
        let mut base = free_state(&spec, &x, 17);
        base.params.psi = DMatrix::identity(4, 4);
        base.params.rho = 0.3;
        let angle: f64 = 0.7;
        let q = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let mut rotated = base.clone();
        rotated.params.u = &base.params.u * &q;
        rotated.params.v = &base.params.v * &q;
        assert!((base.params.multiplicative() - rotated.params.multiplicative()).amax() < 1e-12);

        let reps = 4000;
        let collect = |start: &ParameterState, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s1 = DMatrix::zeros(n, n);
            let mut s2 = DMatrix::zeros(n, n);
            for _ in 0..reps {
                let mut st = start.clone();
                update_uv(&mut st, &design, &spec, &mut rng).unwrap();
                let m = st.params.multiplicative();
                s2 += m.component_mul(&m);
                s1 += m;
            }
            let mean = &s1 / reps as f64;
            let var = &s2 / reps as f64 - mean.component_mul(&mean);
            (mean, var)
        };
        let (m1, v1) = collect(&base, 1);
        let (m2, v2) = collect(&rotated, 2);
        for i in 0..n {
            for j in 0..n {
                let se = ((v1[(i, j)] + v2[(i, j)]) / reps as f64).sqrt();
                assert!((m1[(i, j)] - m2[(i, j)]).abs() < 4.5 * se, "({i},{j})");
            }
        }
    }

    fn rho_chain(true_rho: f64, proposal_sd: f64, iters: usize) -> (f64, f64, f64) {
        let n = 200;
        let mut spec = ModelSpec::new(Variant::Srm, false);
        spec.prior.rho_proposal_sd = proposal_sd;
        let x = CovariateTable::empty(ids(n));
        let design = Design::new(&spec, &x);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut params = Params::zeros(&spec, n, 0);
        params.beta[0] = 0.0;
        let z = latent_from_predictor(&DMatrix::zeros(n, n), true_rho, false, None, &mut rng);
        let mut st = ParameterState { z, params };
        st.params.rho = 0.2;
        let (mut sum, mut acc) = (0.0, 0usize);
        for _ in 0..iters {
            acc += usize::from(update_rho(&mut st, &design, &spec, &mut rng).unwrap());
            sum += st.params.rho;
        }
        (sum / iters as f64, acc as f64 / iters as f64, st.params.rho)
    }

    #[test]
    fn rho_is_recovered_from_residual_dyads() {
        let (mean, acc, _) = rho_chain(0.6, 0.02, 3000);
        assert!(mean > 0.5 && mean < 0.7, "{mean}");
        assert!(acc > 0.1 && acc < 0.95, "{acc}");
        let (mean, _, _) = rho_chain(0.0, 0.02, 3000);
        assert!(mean.abs() < 0.1, "{mean}");
    }

    #[test]
    fn vanishing_proposal_always_accepts_and_stays_put() {
        let (mean, acc, last) = rho_chain(0.6, 1e-12, 500);
        assert_eq!(acc, 1.0);
        assert!((mean - 0.2).abs() < 1e-9 && (last - 0.2).abs() < 1e-9);
    }

    #[test]
    fn rho_likelihood_peaks_near_the_sample_correlation() {
        // 1000 dyads with sq = 2000 and cross = 500 imply rho near 0.5
        let f = |r| rho_log_likelihood(r, 1000, 2000.0, 500.0);
        assert!(f(0.5) > f(0.4) && f(0.5) > f(0.6));
    }

    fn short(spec: &mut ModelSpec, iters: usize, burn: usize, thin: usize, seed: u64) {
        spec.mcmc = McmcSettings {
            iterations: iters,
            burn_in: burn,
            thinning: thin,
            seed,
        };
    }

    #[test]
    fn chains_are_deterministic_and_sized() {
        let y = net(10, 2, false);
        let x = covariates(10, 1);
        let mut spec = ModelSpec::with_rank(Variant::Ame, 2, false);
        short(&mut spec, 53, 10, 4, 77);
        let c1 = run_chain(&y, &x, &spec).unwrap();
        let c2 = run_chain(&y, &x, &spec).unwrap();
        assert_eq!(c1.draws.len(), (53 - 10) / 4);
        assert_eq!(c1.draws, c2.draws);
        assert_eq!(c1.gof, c2.gof);
        let (s1, s2) = (c1.last_state.unwrap(), c2.last_state.unwrap());
        assert_eq!(s1.params, s2.params);
        assert_eq!(s1.z.map(f64::to_bits), s2.z.map(f64::to_bits));
        assert_eq!(c1.gof.unwrap().rows(), c1.draws.len() + 1);
        assert!(c1.rho_acceptance.is_some());
        assert_eq!(c1.draws[0].iteration, 14);
        spec.mcmc.seed = 78;
        let c3 = run_chain(&y, &x, &spec).unwrap();
        assert_ne!(c1.draws, c3.draws);
    }

    #[test]
    fn srg_chain_moves_only_the_intercept() {
        let y = net(9, 5, false);
        let x = covariates(9, 2);
        let mut spec = ModelSpec::new(Variant::Srg, false);
        short(&mut spec, 40, 0, 1, 3);
        let c = run_chain(&y, &x, &spec).unwrap();
        assert_eq!(c.coefficient_names, vec!["intercept"]);
        assert!(c.rho_acceptance.is_none());
        let mus: Vec<f64> = c.draws.iter().map(|d| d.params.beta[0]).collect();
        assert!(mus.windows(2).any(|w| w[0] != w[1]));
        for d in &c.draws {
            let p = &d.params;
            assert!(p.a.iter().chain(p.b.iter()).all(|&v| v == 0.0));
            assert_eq!(p.rho, 0.0);
            assert_eq!(p.u.len(), 0);
        }
    }

    #[test]
    fn covariances_stay_positive_definite_and_symmetric_fits_run() {
        for symmetric in [false, true] {
            let y = net(15, 8, symmetric);
            let x = covariates(15, 2);
            let mut spec = ModelSpec::with_rank(Variant::Ame, 2, symmetric);
            short(&mut spec, 150, 50, 1, 5);
            let c = run_chain(&y, &x, &spec).unwrap();
            assert!(c.last_state.as_ref().unwrap().agrees_with(&y));
            for d in &c.draws {
                assert!(min_eigenvalue(&d.params.sigma_ab) > 0.0);
                assert!(min_eigenvalue(&d.params.psi) > 0.0);
                if symmetric {
                    assert_eq!(d.params.a, d.params.b);
                    assert_eq!(d.params.u, d.params.v);
                }
            }
        }
    }

    #[test]
    fn symmetric_model_rejects_directed_data() {
        let y = net(8, 1, false);
        let x = covariates(8, 0);
        let spec = ModelSpec::new(Variant::Srm, true);
        assert!(run_chain(&y, &x, &spec).is_err());
    }

    #[test]
    fn empirical_bayes_sets_scales_from_pilot() {
        let y = net(12, 3, false);
        let x = covariates(12, 1);
        let mut spec = ModelSpec::with_rank(Variant::Ame, 1, false);
        spec.pilot.enabled = true;
        spec.pilot.iterations = 60;
        spec.pilot.burn_in = 20;
        let eff = empirical_bayes(&y, &x, &spec).unwrap();
        assert_ne!(eff.prior.sab_iw_scale, spec.prior.sab_iw_scale);
        assert_ne!(eff.prior.psi_iw_scale, spec.prior.psi_iw_scale);
        assert_eq!(eff.prior.sab_iw_df, 4.0);
        assert_eq!(eff.prior.psi_iw_df, 4.0);
        assert!(min_eigenvalue(&eff.prior.psi_iw_scale) > 0.0);
    }

    #[test]
    fn srrm_predictor_equals_ame_with_zero_factors() {
        let x = covariates(7, 2);
        let ame = ModelSpec::with_rank(Variant::Ame, 2, false);
        let srrm = ModelSpec::new(Variant::Srrm, false);
        let mut st = sample_prior_state(&ame, &x, None, 4).unwrap();
        st.params.u.fill(0.0);
        st.params.v.fill(0.0);
        let m_ame = predictor_with(&Design::new(&ame, &x), &st.params, &ame);
        let mut p = st.params.clone();
        p.u = DMatrix::zeros(7, 0);
        p.v = DMatrix::zeros(7, 0);
        let m_srrm = predictor_with(&Design::new(&srrm, &x), &p, &srrm);
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    assert_eq!(m_ame[(i, j)], m_srrm[(i, j)]);
                }
            }
        }
    }
}
