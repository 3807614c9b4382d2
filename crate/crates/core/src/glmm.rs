//! Random-intercept (optionally random-slope) logistic regression.
//!
//! The marginal likelihood integrates each cluster's random effects out with
//! either the Laplace approximation or adaptive Gauss–Hermite quadrature
//! centred at the conditional mode. Fixed effects and log standard deviations
//! of the random effects are estimated jointly by BFGS.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DifDataset;
use crate::error::{Error, Result};
use crate::glm::{self, CoefficientTable, DesignSpec, GlmOptions};
use crate::linalg::{Matrix, PivotedCholesky};
use crate::optim::{self, BfgsOptions};
use crate::quadrature::GaussHermite;
use crate::scalar::{log_sum_exp, pairwise_sum, Scalar};

/// Level-1 residual variance of the logistic latent scale, `π²/3`.
pub const LOGISTIC_RESIDUAL_VARIANCE: f64 = PI * PI / 3.0;

/// Variance below which the random-intercept variance is reported as on the boundary.
pub const BOUNDARY_TAU2: f64 = 1e-8;

/// Approximation of the per-cluster integral; serialized as `laplace` or `agq:<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Laplace,
    /// Adaptive Gauss–Hermite quadrature with this many nodes.
    Agq(usize),
}

impl Method {
    fn nodes(self) -> usize {
        match self {
            Method::Laplace => 1,
            Method::Agq(q) => q,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Laplace => write!(f, "laplace"),
            Method::Agq(q) => write!(f, "agq:{q}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "laplace" {
            return Ok(Method::Laplace);
        }
        if let Some(n) = s.strip_prefix("agq:") {
            let q: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("invalid node count in {s:?}")))?;
            if q == 0 {
                return Err(Error::Config("AGQ needs at least one node".into()));
            }
            return Ok(Method::Agq(q));
        }
        Err(Error::Config(format!("unknown method {s:?} (expected laplace or agq:<n>)")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which level-1 coefficients vary by cluster. The intercept always does.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub trait_slope: bool,
    pub group_slope: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmDesign {
    pub fixed: DesignSpec,
    pub random: RandomEffects,
}

impl GlmmDesign {
    pub fn random_intercept(fixed: DesignSpec) -> Self {
        Self { fixed, random: RandomEffects::default() }
    }

    pub fn random_labels(&self) -> Vec<String> {
        let mut v = vec!["(Intercept)".to_string()];
        if self.random.trait_slope {
            v.push("trait".into());
        }
        if self.random.group_slope {
            v.push("group".into());
        }
        v
    }

    pub fn n_random(&self) -> usize {
        1 + usize::from(self.random.trait_slope) + usize::from(self.random.group_slope)
    }
}

/// Fixed effects plus random-effect variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GlmmParams<T> {
    pub fixed: Vec<T>,
    /// Variance of each random effect, intercept first.
    pub variances: Vec<T>,
}

struct Cluster<T> {
    id: usize,
    x: Matrix<T>,
    y: Vec<T>,
    /// Random-effect design, `n_i × r`.
    z: Matrix<T>,
}

/// Per-cluster contribution at given parameters.
#[derive(Debug, Clone)]
struct ClusterEval<T> {
    loglik: T,
    grad: Vec<T>,
    mode: Vec<T>,
    /// `|∂/∂u|` of the penalized log-likelihood at the returned mode.
    stationarity: T,
}

/// Negative approximate marginal log-likelihood as a function of
/// `θ = (β, log τ_1, …, log τ_r)` where `τ_j` are random-effect standard deviations.
pub struct GlmmObjective<T> {
    clusters: Vec<Cluster<T>>,
    k: usize,
    r: usize,
    n: usize,

    gh: GaussHermite,
}

const INNER_MAX_ITER: usize = 200;

impl<T: Scalar> GlmmObjective<T> {
    pub fn new(ds: &DifDataset, design: &GlmmDesign, method: Method) -> Result<Self> {
        if ds.cluster_count() < 2 {
            return Err(Error::Precondition(format!(
                "multilevel model needs at least 2 clusters, dataset has {}",
                ds.cluster_count()
            )));
        }
        let r = design.n_random();
        if r > 1 && method.nodes() > 1 {
            return Err(Error::Config(
                "random slopes are only available with the Laplace approximation".into(),
            ));
        }
        if method.nodes() == 0 {
            return Err(Error::Config("AGQ needs at least one node".into()));
        }
        let (x, y) = design.fixed.model_matrix::<T>(ds)?;
        let k = x.cols();
        let m = ds.cluster_count();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (i, rec) in ds.records().iter().enumerate() {
            members[rec.cluster().expect("clustered dataset")].push(i);
        }
        let mut clusters = Vec::with_capacity(m);
        for (id, rows) in members.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let mut cx = Matrix::zeros(rows.len(), k);
            let mut cz = Matrix::zeros(rows.len(), r);
            let mut cy = Vec::with_capacity(rows.len());
            for (a, &i) in rows.iter().enumerate() {
                for j in 0..k {
                    cx[(a, j)] = x[(i, j)];
                }
                let rec = &ds.records()[i];
                let mut col = 0;
                cz[(a, col)] = T::one();
                if design.random.trait_slope {
                    col += 1;
                    cz[(a, col)] = T::lit(rec.trait_score());
                }
                if design.random.group_slope {
                    col += 1;
                    cz[(a, col)] = T::lit(rec.group() as f64);
                }
                cy.push(y[i]);
            }
            clusters.push(Cluster { id, x: cx, y: cy, z: cz });
        }
        Ok(Self { clusters, k, r, n: ds.len(), gh: GaussHermite::new(method.nodes()) })
    }

    pub fn n_fixed(&self) -> usize {
        self.k
    }

    pub fn n_random(&self) -> usize {
        self.r
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Negative approximate marginal log-likelihood.
    pub fn value(&self, theta: &[T]) -> Result<T> {
        Ok(-self.total(theta, false)?.0)
    }

    /// Value and gradient of the negative approximate marginal log-likelihood.
    pub fn value_and_gradient(&self, theta: &[T]) -> Result<(T, Vec<T>)> {
        if self.r == 1 {
            let (ll, g, _) = self.total(theta, true)?;
            Ok((-ll, g.into_iter().map(|v| -v).collect()))
        } else {
            let f = self.value(theta)?;
            Ok((f, self.fd_gradient(theta)?))
        }
    }

    /// Conditional modes of the random effects and the inner stationarity residual.
    pub fn modes(&self, theta: &[T]) -> Result<Vec<(Vec<T>, T)>> {
        let evals = self.evaluate(theta, false)?;
        Ok(evals.into_iter().map(|e| (e.mode, e.stationarity)).collect())
    }

    fn check_theta(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.k + self.r {
            return Err(Error::Precondition(format!(
                "expected {} parameters, got {}",
                self.k + self.r,
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("parameters must be finite".into()));
        }
        Ok(())
    }

    fn evaluate(&self, theta: &[T], grad: bool) -> Result<Vec<ClusterEval<T>>> {
        self.check_theta(theta)?;
        let beta = &theta[..self.k];
        let log_sd = &theta[self.k..];
        self.clusters
            .par_iter()
            .map(|c| {
                if self.r == 1 {
                    self.eval_intercept(c, beta, log_sd[0], grad)
                } else {
                    self.eval_laplace_multi(c, beta, log_sd)
                }
            })
            .collect()
    }

    fn total(&self, theta: &[T], grad: bool) -> Result<(T, Vec<T>, Vec<Vec<T>>)> {
        let evals = self.evaluate(theta, grad)?;
        let lls: Vec<T> = evals.iter().map(|e| e.loglik).collect();
        let ll = pairwise_sum(&lls);
        let mut g = Vec::new();
        if grad {
            g = (0..theta.len())
                .map(|j| {
                    let col: Vec<T> = evals.iter().map(|e| e.grad[j]).collect();
                    pairwise_sum(&col)
                })
                .collect();
        }
        Ok((ll, g, evals.into_iter().map(|e| e.mode).collect()))
    }

    fn fd_gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        let mut g = Vec::with_capacity(theta.len());
        let mut t = theta.to_vec();
        for j in 0..theta.len() {
            let h = T::lit(1e-5) * (T::one() + theta[j].abs());
            t[j] = theta[j] + h;
            let fp = self.value(&t)?;
            t[j] = theta[j] - h;
            let fm = self.value(&t)?;
            t[j] = theta[j];
            g.push((fp - fm) / (h + h));
        }
        Ok(g)
    }

    /// Fixed part of the linear predictor for one cluster.
    fn eta_fixed(c: &Cluster<T>, beta: &[T]) -> Vec<T> {
        c.x.mul_vec(beta)
    }

    /// One random intercept: Laplace (1 node) or adaptive GHQ, with analytic gradient.
    fn eval_intercept(&self, c: &Cluster<T>, beta: &[T], log_sd: T, want_grad: bool) -> Result<ClusterEval<T>> {
        let two = T::lit(2.0);
        let half = T::lit(0.5);
        let eta0 = Self::eta_fixed(c, beta);
        let prec = (-two * log_sd).exp();

        // penalized log-likelihood G(u), its derivative and curvature
        let g_at = |u: T| -> T {
            eta0.iter().zip(&c.y).map(|(&e, &y)| y * (e + u) - (e + u).softplus()).sum::<T>()
                - half * u * u * prec
        };
        let deriv = |u: T| -> (T, T) {
            let mut d1 = T::zero();
            let mut w = T::zero();
            for (&e, &y) in eta0.iter().zip(&c.y) {
                let p = (e + u).logistic();
                d1 = d1 + (y - p);
                w = w + p * (T::one() - p);
            }
            (d1 - u * prec, w + prec)
        };

        let mut u = T::zero();
        let mut gu = g_at(u);
        let (mut d1, mut h) = deriv(u);
        let tol = T::lit(1e-10).max(T::lit(16.0 * eta0.len() as f64) * T::epsilon());
        let mut it = 0;
        while d1.abs() > tol * (T::one() + h.sqrt()) {
            it += 1;
            if it > INNER_MAX_ITER {
                return Err(Error::Numerical(format!("inner Newton did not converge in cluster {}", c.id)));
            }
            let mut step = d1 / h;
            let mut next = u + step;
            let mut g_next = g_at(next);
            let mut halvings = 0;
            while !(g_next >= gu - T::lit(1e-12) * (T::one() + gu.abs())) {
                step = step * half;
                next = u + step;
                g_next = g_at(next);
                halvings += 1;
                if halvings > 60 {
                    return Err(Error::Numerical(format!("inner Newton diverged in cluster {}", c.id)));
                }
            }
            if !g_next.is_finite() {
                return Err(Error::Numerical(format!("inner Newton diverged in cluster {}", c.id)));
            }
            u = next;
            gu = g_next;
            let (a, b) = deriv(u);
            d1 = a;
            h = b;
            if step.abs() < T::lit(4.0) * T::epsilon() * (T::one() + u.abs()) {
                break;
            }
        }
        let mode = u;
        let hess = h;
        let scale = (two / hess).sqrt();

        // nodes u_k = û + √(2/H) x_k
        let q = self.gh.len();
        let mut terms = Vec::with_capacity(q);
        let mut node_u = Vec::with_capacity(q);
        for k in 0..q {
            let xk = T::lit(self.gh.nodes[k]);
            let uk = mode + scale * xk;
            let gk = if q == 1 { gu } else { g_at(uk) };
            terms.push(T::lit(self.gh.weights[k].ln()) + xk * xk + gk);
            node_u.push(uk);
        }
        let lse = log_sum_exp(&terms);
        let loglik = lse + half * two.ln() - half * hess.ln() - half * T::lit(2.0 * PI).ln() - log_sd;

        let mut grad = Vec::new();
        if want_grad {
            let kf = self.k;
            // implicit derivatives of the mode and curvature
            let mut sum_wx = vec![T::zero(); kf];
            let mut wprime = Vec::with_capacity(eta0.len());
            for (i, &e) in eta0.iter().enumerate() {
                let p = (e + mode).logistic();
                let w = p * (T::one() - p);
                wprime.push(w * (T::one() - two * p));
                let row = c.x.row(i);
                for j in 0..kf {
                    sum_wx[j] = sum_wx[j] + w * row[j];
                }
            }
            let mut du = vec![T::zero(); kf + 1];
            let mut dh = vec![T::zero(); kf + 1];
            for j in 0..kf {
                du[j] = -sum_wx[j] / hess;
            }
            du[kf] = two * mode * prec / hess;
            for (i, &wp) in wprime.iter().enumerate() {
                let row = c.x.row(i);
                for j in 0..kf {
                    dh[j] = dh[j] + wp * (row[j] + du[j]);
                }
                dh[kf] = dh[kf] + wp * du[kf];
            }
            dh[kf] = dh[kf] - two * prec;

            let omega: Vec<T> = terms.iter().map(|&t| (t - lse).exp()).collect();
            grad = vec![T::zero(); kf + 1];
            for k in 0..q {
                let uk = node_u[k];
                // ∂G/∂β_j and G'(u) at the node
                let mut dg_beta = vec![T::zero(); kf];
                let mut resid_sum = T::zero();
                for (i, (&e, &y)) in eta0.iter().zip(&c.y).enumerate() {
                    let r = y - (e + uk).logistic();
                    resid_sum = resid_sum + r;
                    let row = c.x.row(i);
                    for j in 0..kf {
                        dg_beta[j] = dg_beta[j] + r * row[j];
                    }
                }
                let g_prime = resid_sum - uk * prec;
                let offset = uk - mode;
                for j in 0..=kf {
                    let partial = if j < kf { dg_beta[j] } else { uk * uk * prec };
                    let duk = du[j] - half * offset * dh[j] / hess;
                    grad[j] = grad[j] + omega[k] * (partial + g_prime * duk);
                }
            }
            for j in 0..=kf {
                grad[j] = grad[j] - half * dh[j] / hess;
            }
            grad[kf] = grad[kf] - T::one();
        }
        Ok(ClusterEval { loglik, grad, mode: vec![mode], stationarity: d1.abs() })
    }

    /// Several independent random effects under the Laplace approximation.
    fn eval_laplace_multi(&self, c: &Cluster<T>, beta: &[T], log_sd: &[T]) -> Result<ClusterEval<T>> {
        let r = self.r;
        let two = T::lit(2.0);
        let half = T::lit(0.5);
        let eta0 = Self::eta_fixed(c, beta);
        let prec: Vec<T> = log_sd.iter().map(|&s| (-two * s).exp()).collect();
        let lin = |u: &[T], i: usize| -> T {
            let zr = c.z.row(i);
            eta0[i] + zr.iter().zip(u).fold(T::zero(), |a, (&z, &v)| a + z * v)
        };
        let g_at = |u: &[T]| -> T {
            let ll: T = (0..eta0.len()).map(|i| {
                let e = lin(u, i);
                c.y[i] * e - e.softplus()
            }).sum();
            ll - half * u.iter().zip(&prec).fold(T::zero(), |a, (&v, &p)| a + v * v * p)
        };
        let derivs = |u: &[T]| -> (Vec<T>, Matrix<T>) {
            let mut g = vec![T::zero(); r];
            let mut h = Matrix::zeros(r, r);
            for i in 0..eta0.len() {
                let p = lin(u, i).logistic();
                let w = p * (T::one() - p);
                let zr = c.z.row(i);
                for a in 0..r {
                    g[a] = g[a] + (c.y[i] - p) * zr[a];
                    for b in 0..r {
                        h[(a, b)] = h[(a, b)] + w * zr[a] * zr[b];
                    }
                }
            }
            for a in 0..r {
                g[a] = g[a] - u[a] * prec[a];
                h[(a, a)] = h[(a, a)] + prec[a];
            }
            (g, h)
        };

        let mut u = vec![T::zero(); r];
        let mut gu = g_at(&u);
        let (mut grad, mut hess) = derivs(&u);
        let mut it = 0;
        loop {
            let norm = grad.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if norm <= T::lit(1e-10) * (T::one() + hess.diagonal().iter().fold(T::zero(), |m, v| m.max(*v)).sqrt()) {
                break;
            }
            it += 1;
            if it > INNER_MAX_ITER {
                return Err(Error::Numerical(format!("inner Newton did not converge in cluster {}", c.id)));
            }
            let step = PivotedCholesky::factor(&hess)
                .map_err(|_| Error::Numerical(format!("singular inner Hessian in cluster {}", c.id)))?
                .solve(&grad);
            let mut t = T::one();
            let mut next: Vec<T>;
            let mut g_next;
            let mut halvings = 0;
            loop {
                next = u.iter().zip(&step).map(|(&a, &b)| a + t * b).collect();
                g_next = g_at(&next);
                if g_next >= gu - T::lit(1e-12) * (T::one() + gu.abs()) {
                    break;
                }
                t = t * half;
                halvings += 1;
                if halvings > 60 {
                    return Err(Error::Numerical(format!("inner Newton diverged in cluster {}", c.id)));
                }
            }
            let moved = step.iter().fold(T::zero(), |m, v| m.max((t * *v).abs()));
            u = next;
            gu = g_next;
            let d = derivs(&u);
            grad = d.0;
            hess = d.1;
            if moved < T::lit(4.0) * T::epsilon() {
                break;
            }
        }
        let logdet = PivotedCholesky::factor(&hess)
            .map_err(|_| Error::Numerical(format!("singular inner Hessian in cluster {}", c.id)))?
            .log_det();
        let loglik = gu - half * logdet - log_sd.iter().copied().sum::<T>();
        let stationarity = grad.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        Ok(ClusterEval { loglik, grad: Vec::new(), mode: u, stationarity })
    }
}

/// Approximate marginal log-likelihood at explicit parameters.
///
/// Random effects with zero variance are dropped from the integral; with all
/// variances zero the value is the ordinary logistic log-likelihood.
pub fn marginal_loglik<T: Scalar>(
    params: &GlmmParams<T>,
    ds: &DifDataset,
    design: &GlmmDesign,
    method: Method,
) -> Result<T> {
    if params.variances.len() != design.n_random() {
        return Err(Error::Precondition(format!(
            "expected {} variances, got {}",
            design.n_random(),
            params.variances.len()
        )));
    }
    if params.variances.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
        return Err(Error::Precondition("variances must be finite and non-negative".into()));
    }
    let labels = design.random_labels();
    let active: Vec<usize> = (0..labels.len()).filter(|&j| params.variances[j] > T::zero()).collect();
    if active.is_empty() {
        let (x, y) = design.fixed.model_matrix::<T>(ds)?;
        return Ok(glm::log_likelihood(&x, &y, &params.fixed));
    }
    if !active.contains(&0) {
        return Err(Error::Precondition("random slopes require a positive intercept variance".into()));
    }
    let reduced = GlmmDesign {
        fixed: design.fixed.clone(),
        random: RandomEffects {
            trait_slope: design.random.trait_slope && params.variances[1] > T::zero(),
            group_slope: design.random.group_slope
                && params.variances[labels.iter().position(|l| l == "group").unwrap_or(0)] > T::zero(),
        },
    };
    let obj = GlmmObjective::new(ds, &reduced, method)?;
    let mut theta = params.fixed.clone();
    theta.extend(active.iter().map(|&j| T::lit(0.5) * params.variances[j].ln()));
    Ok(-obj.value(&theta)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmmOptions {
    /// Starting random-intercept variances for the restarts.
    pub start_variances: Vec<f64>,
    pub bfgs: BfgsOptions,
}

impl Default for GlmmOptions {
    fn default() -> Self {
        Self { start_variances: vec![0.1, 0.5, 1.0], bfgs: BfgsOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    /// Starting intercept variance, or `None` for the boundary (τ² = 0) candidate.
    pub start_tau2: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FittedGlmm<T> {
    pub terms: Vec<String>,
    pub fixed_effects: Vec<T>,
    pub std_errors: Vec<T>,
    pub covariance: Matrix<T>,
    pub random_terms: Vec<String>,
    /// Random-effect variances (diagonal covariance), intercept first.
    pub variances: Vec<T>,
    pub log_likelihood: T,
    pub n: usize,
    pub k_params: usize,
    pub n_clusters: usize,
    /// Conditional modes per cluster (one entry per random effect).
    pub conditional_modes: Vec<Vec<T>>,
    pub method: Method,
    pub converged: bool,
    /// Random-intercept variance below [`BOUNDARY_TAU2`].
    pub boundary: bool,
    pub iterations: usize,
    pub restarts: Vec<RestartSummary>,
    pub warnings: Vec<String>,
    pub design: GlmmDesign,
}

impl<T: Scalar> FittedGlmm<T> {
    /// Random-intercept variance τ0².
    pub fn tau2(&self) -> T {
        self.variances[0]
    }

    pub fn sigma2(&self) -> T {
        T::lit(LOGISTIC_RESIDUAL_VARIANCE)
    }

    pub fn deviance(&self) -> T {
        -T::lit(2.0) * self.log_likelihood
    }

    pub fn aic(&self) -> T {
        self.deviance() + T::lit(2.0 * self.k_params as f64)
    }

    pub fn bic(&self) -> T {
        self.deviance() + T::lit(self.k_params as f64 * (self.n as f64).ln())
    }

    pub fn coef(&self, label: &str) -> Option<(T, T)> {
        self.index_of(label).map(|i| (self.fixed_effects[i], self.std_errors[i]))
    }

    /// Random-intercept modes, one per cluster.
    pub fn intercept_modes(&self) -> Vec<T> {
        self.conditional_modes.iter().map(|m| m[0]).collect()
    }
}

impl<T: Scalar> CoefficientTable<T> for FittedGlmm<T> {
    fn term_labels(&self) -> &[String] {
        &self.terms
    }
    fn estimates(&self) -> &[T] {
        &self.fixed_effects
    }
    fn std_errors(&self) -> &[T] {
        &self.std_errors
    }
    fn covariance(&self) -> &Matrix<T> {
        &self.covariance
    }
    fn is_converged(&self) -> bool {
        self.converged
    }
}

pub fn fit_glmm<T: Scalar>(ds: &DifDataset, design: &GlmmDesign, method: Method) -> Result<FittedGlmm<T>> {
    fit_glmm_with(ds, design, method, &GlmmOptions::default())
}

struct Candidate<T> {
    theta: Vec<T>,
    loglik: T,
    converged: bool,
    iterations: usize,
    boundary: bool,
}

pub fn fit_glmm_with<T: Scalar>(
    ds: &DifDataset,
    design: &GlmmDesign,
    method: Method,
    opts: &GlmmOptions,
) -> Result<FittedGlmm<T>> {
    let obj = GlmmObjective::<T>::new(ds, design, method)?;
    let k = obj.n_fixed();
    let r = obj.n_random();

    // single-level fit: starting values, scaling, and the τ² = 0 candidate
    let glm_fit = glm::fit_logistic_with::<T>(ds, &design.fixed, &GlmOptions::default())?;
    let m = obj.n_clusters() as f64;
    let mut seed = Matrix::zeros(k + r, k + r);
    for i in 0..k {
        for j in 0..k {
            seed[(i, j)] = glm_fit.covariance[(i, j)];
        }
    }
    for j in k..k + r {
        seed[(j, j)] = T::lit(1.0 / m);
    }

    let mut restarts = Vec::new();
    let mut candidates: Vec<Candidate<T>> = Vec::new();
    for &tau2 in &opts.start_variances {
        let mut x0 = glm_fit.coefficients.clone();
        x0.extend(std::iter::repeat_n(T::lit(0.5 * tau2.ln()), r));
        let run = optim::minimize(|t| obj.value_and_gradient(t), x0, seed.clone(), &opts.bfgs);
        match run {
            Ok(res) => {
                restarts.push(RestartSummary {
                    start_tau2: Some(tau2),
                    log_likelihood: Some(-res.f.as_f64()),
                    converged: res.converged,
                    iterations: res.iterations,
                    error: None,
                });
                candidates.push(Candidate {
                    theta: res.x,
                    loglik: -res.f,
                    converged: res.converged,
                    iterations: res.iterations,
                    boundary: false,
                });
            }
            Err(e) => restarts.push(RestartSummary {
                start_tau2: Some(tau2),
                log_likelihood: None,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    restarts.push(RestartSummary {
        start_tau2: None,
        log_likelihood: Some(glm_fit.log_likelihood.as_f64()),
        converged: glm_fit.converged,
        iterations: glm_fit.iterations,
        error: None,
    });
    let mut boundary_theta = glm_fit.coefficients.clone();
    boundary_theta.extend(std::iter::repeat_n(T::neg_infinity(), r));
    candidates.push(Candidate {
        theta: boundary_theta,
        loglik: glm_fit.log_likelihood,
        converged: glm_fit.converged,
        iterations: glm_fit.iterations,
        boundary: true,
    });

    let best = candidates
        .into_iter()
        .reduce(|a, b| if b.loglik > a.loglik { b } else { a })
        .expect("boundary candidate always present");

    let mut warnings = Vec::new();
    let beta = best.theta[..k].to_vec();
    let log_sd = &best.theta[k..];
    let variances: Vec<T> = log_sd.iter().map(|&s| (T::lit(2.0) * s).exp()).collect();
    let boundary = best.boundary || variances[0] < T::lit(BOUNDARY_TAU2);
    if boundary {
        warnings.push("random-intercept variance estimated on the boundary (τ0² ≈ 0)".to_string());
    }
    if !best.converged {
        warnings.push("outer optimizer did not meet its convergence criterion".to_string());
    }

    let (covariance, modes) = if best.boundary {
        let modes = vec![vec![T::zero(); r]; obj.n_clusters()];
        (glm_fit.covariance.clone(), modes)
    } else {
        let cov = fixed_effect_covariance(&obj, &best.theta)?;
        let modes = obj.modes(&best.theta)?.into_iter().map(|(u, _)| u).collect();
        (cov, modes)
    };
    let std_errors = covariance.diagonal().iter().map(|v| v.max(T::zero()).sqrt()).collect();

    Ok(FittedGlmm {
        terms: design.fixed.labels(),
        fixed_effects: beta,
        std_errors,
        covariance,
        random_terms: design.random_labels(),
        variances,
        log_likelihood: best.loglik,
        n: obj.n_obs(),
        k_params: k + r,
        n_clusters: obj.n_clusters(),
        conditional_modes: modes,
        method,
        converged: best.converged,
        boundary,
        iterations: best.iterations,
        restarts,
        warnings,
        design: design.clone(),
    })
}

/// Inverse observed information for the fixed effects, variances held fixed.
fn fixed_effect_covariance<T: Scalar>(obj: &GlmmObjective<T>, theta: &[T]) -> Result<Matrix<T>> {
    let k = obj.n_fixed();
    let mut hess = Matrix::zeros(k, k);
    let mut t = theta.to_vec();
    if obj.n_random() == 1 {
        // central differences of the analytic gradient
        for j in 0..k {
            let h = T::lit(1e-4) * (T::one() + theta[j].abs());
            t[j] = theta[j] + h;
            let (_, gp) = obj.value_and_gradient(&t)?;
            t[j] = theta[j] - h;
            let (_, gm) = obj.value_and_gradient(&t)?;
            t[j] = theta[j];
            for i in 0..k {
                hess[(i, j)] = (gp[i] - gm[i]) / (h + h);
            }
        }
    } else {
        let f0 = obj.value(theta)?;
        let hs: Vec<T> = (0..k).map(|j| T::lit(1e-3) * (T::one() + theta[j].abs())).collect();
        for i in 0..k {
            for j in 0..=i {
                let v = if i == j {
                    t[i] = theta[i] + hs[i];
                    let fp = obj.value(&t)?;
                    t[i] = theta[i] - hs[i];
                    let fm = obj.value(&t)?;
                    t[i] = theta[i];
                    (fp - T::lit(2.0) * f0 + fm) / (hs[i] * hs[i])
                } else {
                    let mut eval = |di: T, dj: T| -> Result<T> {
                        t[i] = theta[i] + di;
                        t[j] = theta[j] + dj;
                        let f = obj.value(&t);
                        t[i] = theta[i];
                        t[j] = theta[j];
                        f
                    };
                    let fpp = eval(hs[i], hs[j])?;
                    let fpm = eval(hs[i], -hs[j])?;
                    let fmp = eval(-hs[i], hs[j])?;
                    let fmm = eval(-hs[i], -hs[j])?;
                    (fpp - fpm - fmp + fmm) / (T::lit(4.0) * hs[i] * hs[j])
                };
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
    }
    hess.symmetrize();
    PivotedCholesky::factor(&hess)
        .map(|c| c.inverse())
        .map_err(|e| Error::Numerical(format!("fixed-effect information not positive definite: {e}")))
}

/// Adjusted intraclass correlation `τ0² / (τ0² + π²/3)`.
pub fn adjusted_icc<T: Scalar>(fit: &FittedGlmm<T>) -> T {
    icc_from_tau2(fit.tau2())
}

pub fn icc_from_tau2<T: Scalar>(tau2: T) -> T {
    tau2 / (tau2 + T::lit(LOGISTIC_RESIDUAL_VARIANCE))
}

/// Marginal and conditional R² on the latent logistic scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSquared<T> {
    pub marginal: T,
    pub conditional: T,
}

/// Sample variance (n − 1 denominator).
pub(crate) fn sample_variance<T: Scalar>(v: &[T]) -> T {
    let n = v.len();
    if n < 2 {
        return T::zero();
    }
    let mean = v.iter().copied().sum::<T>() / T::lit(n as f64);
    v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / T::lit((n - 1) as f64)
}

pub fn r2_nakagawa<T: Scalar>(fit: &FittedGlmm<T>, ds: &DifDataset) -> Result<RSquared<T>> {
    if ds.len() != fit.n {
        return Err(Error::Precondition(format!(
            "fit used {} records, dataset has {}",
            fit.n,
            ds.len()
        )));
    }
    let (x, _) = fit.design.fixed.model_matrix::<T>(ds)?;
    let eta = glm::linear_predictor(&x, &fit.fixed_effects);
    let fixed_var = sample_variance(&eta);
    // random-effect variance averaged over observations: mean of z' D z
    let mut random_var = fit.variances[0];
    if fit.variances.len() > 1 {
        let mut acc = Vec::with_capacity(ds.len());
        for rec in ds.records() {
            let mut v = fit.variances[0];
            let mut j = 1;
            if fit.design.random.trait_slope {
                v = v + fit.variances[j] * T::lit(rec.trait_score().powi(2));
                j += 1;
            }
            if fit.design.random.group_slope {
                v = v + fit.variances[j] * T::lit(rec.group() as f64);
            }
            acc.push(v);
        }
        random_var = acc.iter().copied().sum::<T>() / T::lit(acc.len() as f64);
    }
    let resid = T::lit(LOGISTIC_RESIDUAL_VARIANCE);
    let total = fixed_var + random_var + resid;
    Ok(RSquared { marginal: fixed_var / total, conditional: (fixed_var + random_var) / total })
}

/// Marginal R² of a single-level logistic fit, `σf² / (σf² + π²/3)`.
pub fn r2_glm<T: Scalar>(fit: &glm::FittedGlm<T>, ds: &DifDataset, design: &DesignSpec) -> Result<T> {
    let (x, _) = design.model_matrix::<T>(ds)?;
    let eta = glm::linear_predictor(&x, &fit.coefficients);
    let v = sample_variance(&eta);
    Ok(v / (v + T::lit(LOGISTIC_RESIDUAL_VARIANCE)))
}
