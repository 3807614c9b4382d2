//! Binary logistic regression fitted by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

use crate::data::DifDataset;
use crate::dist::{chi2_sf, normal_two_sided};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, PivotedCholesky};
use crate::scalar::Scalar;

/// A column of the fixed-effects design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Trait,
    Group,
    /// Trait × group interaction (non-uniform DIF).
    TraitGroup,
    /// Respondent-level covariate registered on the design by name.
    Covariate(String),
    /// Cluster-level covariate registered on the design by name.
    Level2(String),
    /// Cross-level interaction of a cluster-level covariate with group.
    Level2Group(String),
}

impl Term {
    pub fn label(&self) -> String {
        match self {
            Term::Intercept => "(Intercept)".into(),
            Term::Trait => "trait".into(),
            Term::Group => "group".into(),
            Term::TraitGroup => "trait:group".into(),
            Term::Covariate(n) => n.clone(),
            Term::Level2(n) => format!("L2:{n}"),
            Term::Level2Group(n) => format!("L2:{n}:group"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    /// One value per record.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level2Covariate {
    pub name: String,
    /// One value per cluster, indexed by internal cluster id.
    pub values: Vec<f64>,
}

/// Ordered list of fixed-effect terms plus the covariate values they reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    terms: Vec<Term>,
    covariates: Vec<Covariate>,
    level2: Vec<Level2Covariate>,
}

impl DesignSpec {
    /// The intercept must be present and terms must be unique.
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if !terms.contains(&Term::Intercept) {
            return Err(Error::Config("design must contain an intercept".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(Error::Config(format!("term {} listed twice", t.label())));
            }
        }
        Ok(Self { terms, covariates: Vec::new(), level2: Vec::new() })
    }

    pub fn intercept_only() -> Self {
        Self::new(vec![Term::Intercept]).expect("valid")
    }

    pub fn trait_only() -> Self {
        Self::new(vec![Term::Intercept, Term::Trait]).expect("valid")
    }

    /// `{intercept, trait, group}`.
    pub fn main_effects() -> Self {
        Self::new(vec![Term::Intercept, Term::Trait, Term::Group]).expect("valid")
    }

    /// `{intercept, trait, group, trait×group}`.
    pub fn with_interaction() -> Self {
        Self::new(vec![Term::Intercept, Term::Trait, Term::Group, Term::TraitGroup]).expect("valid")
    }

    /// Adds a respondent-level covariate column (and its term).
    pub fn with_covariate(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        let term = Term::Covariate(name.into());
        if self.terms.contains(&term) {
            return Err(Error::Config(format!("covariate {name} listed twice")));
        }
        self.covariates.push(Covariate { name: name.into(), values });
        self.terms.push(term);
        Ok(self)
    }

    /// Adds a cluster-level covariate with its main effect and, when
    /// `cross_with_group`, its interaction with group.
    pub fn with_level2(mut self, name: &str, values: Vec<f64>, cross_with_group: bool) -> Result<Self> {
        let term = Term::Level2(name.into());
        if self.terms.contains(&term) {
            return Err(Error::Config(format!("level-2 covariate {name} listed twice")));
        }
        self.level2.push(Level2Covariate { name: name.into(), values });
        self.terms.push(term);
        if cross_with_group {
            self.terms.push(Term::Level2Group(name.into()));
        }
        Ok(self)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(Term::label).collect()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &Term) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// Builds the `n × k` model matrix and response vector.
    pub fn model_matrix<T: Scalar>(&self, ds: &DifDataset) -> Result<(Matrix<T>, Vec<T>)> {
        let n = ds.len();
        for c in &self.covariates {
            if c.values.len() != n {
                return Err(Error::Config(format!(
                    "covariate {} has {} values for {n} records",
                    c.name,
                    c.values.len()
                )));
            }
        }
        for c in &self.level2 {
            if ds.cluster_count() == 0 {
                return Err(Error::Precondition(format!(
                    "level-2 covariate {} needs cluster labels",
                    c.name
                )));
            }
            if c.values.len() != ds.cluster_count() {
                return Err(Error::Config(format!(
                    "level-2 covariate {} has {} values for {} clusters",
                    c.name,
                    c.values.len(),
                    ds.cluster_count()
                )));
            }
        }
        let k = self.terms.len();
        let mut x = Matrix::zeros(n, k);
        let mut y = Vec::with_capacity(n);
        for (i, r) in ds.records().iter().enumerate() {
            let g = r.group() as f64;
            let th = r.trait_score();
            for (j, t) in self.terms.iter().enumerate() {
                let v = match t {
                    Term::Intercept => 1.0,
                    Term::Trait => th,
                    Term::Group => g,
                    Term::TraitGroup => th * g,
                    Term::Covariate(name) => self.covariate(name)?.values[i],
                    Term::Level2(name) => self.level2_value(name, r.cluster())?,
                    Term::Level2Group(name) => self.level2_value(name, r.cluster())? * g,
                };
                x[(i, j)] = T::lit(v);
            }
            y.push(T::lit(r.response() as f64));
        }
        Ok((x, y))
    }

    fn covariate(&self, name: &str) -> Result<&Covariate> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("covariate {name} has no values")))
    }

    fn level2_value(&self, name: &str, cluster: Option<usize>) -> Result<f64> {
        let cov = self
            .level2
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("level-2 covariate {name} has no values")))?;
        let c = cluster.ok_or_else(|| Error::Precondition("record without cluster".into()))?;
        Ok(cov.values[c])
    }
}

/// IRLS controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    /// Convergence when the largest coefficient step falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond this magnitude on the logit scale flag separation.
    pub separation_bound: f64,
    /// Probabilities are clamped to `[eps, 1 - eps]` when forming weights.
    pub prob_clamp: f64,
    pub max_halvings: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50, separation_bound: 15.0, prob_clamp: 1e-10, max_halvings: 30 }
    }
}

/// Estimates, standard errors and covariance of a fitted regression.
pub trait CoefficientTable<T: Scalar> {
    fn term_labels(&self) -> &[String];
    fn estimates(&self) -> &[T];
    fn std_errors(&self) -> &[T];
    fn covariance(&self) -> &Matrix<T>;
    fn is_converged(&self) -> bool;

    fn index_of(&self, label: &str) -> Option<usize> {
        self.term_labels().iter().position(|t| t == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FittedGlm<T> {
    pub terms: Vec<String>,
    pub coefficients: Vec<T>,
    pub std_errors: Vec<T>,
    pub covariance: Matrix<T>,
    pub log_likelihood: T,
    pub n: usize,
    pub k_params: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Deviance after each accepted IRLS step, starting with the initial value.
    pub deviance_trace: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> FittedGlm<T> {
    pub fn deviance(&self) -> T {
        -T::lit(2.0) * self.log_likelihood
    }

    pub fn aic(&self) -> T {
        self.deviance() + T::lit(2.0 * self.k_params as f64)
    }

    pub fn bic(&self) -> T {
        self.deviance() + T::lit(self.k_params as f64 * (self.n as f64).ln())
    }

    /// `(estimate, standard error)` of a term by label.
    pub fn coef(&self, label: &str) -> Option<(T, T)> {
        self.index_of(label).map(|i| (self.coefficients[i], self.std_errors[i]))
    }
}

impl<T: Scalar> CoefficientTable<T> for FittedGlm<T> {
    fn term_labels(&self) -> &[String] {
        &self.terms
    }
    fn estimates(&self) -> &[T] {
        &self.coefficients
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

/// Linear predictor `Xβ`.
pub fn linear_predictor<T: Scalar>(x: &Matrix<T>, beta: &[T]) -> Vec<T> {
    x.mul_vec(beta)
}

/// Bernoulli log-likelihood `Σ y η − ln(1 + e^η)`.
pub fn log_likelihood<T: Scalar>(x: &Matrix<T>, y: &[T], beta: &[T]) -> T {
    let eta = linear_predictor(x, beta);
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - e.softplus()).sum()
}

/// Score vector `X'(y − π)`.
pub fn score<T: Scalar>(x: &Matrix<T>, y: &[T], beta: &[T]) -> Vec<T> {
    let k = x.cols();
    let mut g = vec![T::zero(); k];
    for i in 0..x.rows() {
        let row = x.row(i);
        let eta = row.iter().zip(beta).fold(T::zero(), |a, (&xv, &b)| a + xv * b);
        let r = y[i] - eta.logistic();
        for j in 0..k {
            g[j] = g[j] + row[j] * r;
        }
    }
    g
}

/// Weighted cross-product `X'WX` with clamped Bernoulli weights.
pub fn information<T: Scalar>(x: &Matrix<T>, beta: &[T], clamp: f64) -> Matrix<T> {
    let k = x.cols();
    let lo = T::lit(clamp);
    let hi = T::one() - lo;
    let mut xtwx = Matrix::zeros(k, k);
    for i in 0..x.rows() {
        let row = x.row(i);
        let eta = row.iter().zip(beta).fold(T::zero(), |a, (&xv, &b)| a + xv * b);
        let p = eta.logistic().max(lo).min(hi);
        let w = p * (T::one() - p);
        for a in 0..k {
            let wa = w * row[a];
            for b in 0..=a {
                xtwx[(a, b)] = xtwx[(a, b)] + wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }
    xtwx
}

/// Fits `design` to `ds` with default options.
pub fn fit_logistic<T: Scalar>(ds: &DifDataset, design: &DesignSpec) -> Result<FittedGlm<T>> {
    fit_logistic_with(ds, design, &GlmOptions::default())
}

pub fn fit_logistic_with<T: Scalar>(
    ds: &DifDataset,
    design: &DesignSpec,
    opts: &GlmOptions,
) -> Result<FittedGlm<T>> {
    let (x, y) = design.model_matrix::<T>(ds)?;
    fit_matrix(&x, &y, design.labels(), opts)
}

/// IRLS on an explicit model matrix.
pub fn fit_matrix<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    labels: Vec<String>,
    opts: &GlmOptions,
) -> Result<FittedGlm<T>> {
    let n = x.rows();
    let k = x.cols();
    if n <= k {
        return Err(Error::Precondition(format!("{n} observations for {k} parameters")));
    }
    let two = T::lit(2.0);
    let lo = T::lit(opts.prob_clamp);
    let hi = T::one() - lo;

    let mut beta = vec![T::zero(); k];
    if let Some(ic) = labels.iter().position(|l| l == "(Intercept)") {
        let mean = y.iter().copied().sum::<T>() / T::lit(n as f64);
        let m = mean.max(T::lit(1e-4)).min(T::lit(1.0 - 1e-4));
        beta[ic] = (m / (T::one() - m)).ln();
    }
    let mut dev = -two * log_likelihood(x, y, &beta);
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;
    let mut warnings = Vec::new();

    for it in 1..=opts.max_iter {
        iterations = it;
        // weighted least squares on the working response
        let mut xtwx = Matrix::zeros(k, k);
        let mut xtwz = vec![T::zero(); k];
        for i in 0..n {
            let row = x.row(i);
            let eta = row.iter().zip(&beta).fold(T::zero(), |a, (&xv, &b)| a + xv * b);
            let p = eta.logistic().max(lo).min(hi);
            let w = p * (T::one() - p);
            let z = eta + (y[i] - p) / w;
            for a in 0..k {
                let wa = w * row[a];
                xtwz[a] = xtwz[a] + wa * z;
                for b in 0..=a {
                    xtwx[(a, b)] = xtwx[(a, b)] + wa * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let chol = PivotedCholesky::factor(&xtwx)?;
        let mut candidate = chol.solve(&xtwz);
        let mut new_dev = -two * log_likelihood(x, y, &candidate);
        let mut halvings = 0;
        while !(new_dev <= dev * (T::one() + T::lit(1e-12)) + T::lit(1e-12)) && halvings < opts.max_halvings {
            for (c, b) in candidate.iter_mut().zip(&beta) {
                *c = (*c + *b) / two;
            }
            new_dev = -two * log_likelihood(x, y, &candidate);
            halvings += 1;
        }
        if !new_dev.is_finite() {
            return Err(Error::Numerical("deviance became non-finite during IRLS".into()));
        }
        let slack = dev.abs() * T::lit(1e-12) + T::lit(1e-12);
        if !(new_dev <= dev + slack) {
            // no descent left: at the optimum up to rounding
            converged = (dev - new_dev).abs() <= T::lit(1e-8) * (dev.abs() + T::lit(0.1));
            break;
        }
        let step = candidate.iter().zip(&beta).fold(T::zero(), |m, (c, b)| m.max((*c - *b).abs()));
        beta = candidate;
        dev = new_dev;
        trace.push(dev);
        if step < T::lit(opts.tol) {
            converged = true;
            break;
        }
    }

    if let Some(j) = beta.iter().position(|b| b.abs() > T::lit(opts.separation_bound)) {
        warnings.push(format!(
            "possible separation: |{}| = {:.2} exceeds {}",
            labels[j],
            beta[j].abs().as_f64(),
            opts.separation_bound
        ));
        converged = false;
    }
    if !converged && warnings.is_empty() {
        warnings.push(format!("IRLS did not converge in {} iterations", opts.max_iter));
    }

    let covariance = PivotedCholesky::factor(&information(x, &beta, opts.prob_clamp))?.inverse();
    let std_errors = covariance.diagonal().iter().map(|v| v.max(T::zero()).sqrt()).collect();
    Ok(FittedGlm {
        terms: labels,
        coefficients: beta,
        std_errors,
        covariance,
        log_likelihood: -dev / two,
        n,
        k_params: k,
        converged,
        iterations,
        deviance_trace: trace,
        warnings,
    })
}

/// Single-coefficient Wald z test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p: f64,
}

pub fn wald_test<T: Scalar, F: CoefficientTable<T> + ?Sized>(fit: &F, index: usize) -> Result<WaldTest> {
    if !fit.is_converged() {
        return Err(Error::Precondition("Wald test on a fit that did not converge".into()));
    }
    let k = fit.estimates().len();
    if index >= k {
        return Err(Error::Precondition(format!("coefficient index {index} out of range 0..{k}")));
    }
    let estimate = fit.estimates()[index].as_f64();
    let std_error = fit.std_errors()[index].as_f64();
    if !(std_error > 0.0) || !std_error.is_finite() {
        return Err(Error::Degenerate(format!(
            "standard error of {} is {std_error}",
            fit.term_labels()[index]
        )));
    }
    let z = estimate / std_error;
    Ok(WaldTest { estimate, std_error, z, p: normal_two_sided(z) })
}

/// Chi-square test with its degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
}

/// Joint Wald test `b' V⁻¹ b` that the listed coefficients are all zero.
pub fn wald_joint<T: Scalar, F: CoefficientTable<T> + ?Sized>(
    fit: &F,
    indices: &[usize],
) -> Result<ChiSquareTest> {
    if !fit.is_converged() {
        return Err(Error::Precondition("Wald test on a fit that did not converge".into()));
    }
    let k = fit.estimates().len();
    if indices.is_empty() || indices.iter().any(|&i| i >= k) {
        return Err(Error::Precondition(format!("invalid coefficient indices {indices:?}")));
    }
    let m = indices.len();
    let cov = fit.covariance();
    let mut sub = Matrix::<f64>::zeros(m, m);
    for (a, &i) in indices.iter().enumerate() {
        for (b, &j) in indices.iter().enumerate() {
            sub[(a, b)] = cov[(i, j)].as_f64();
        }
    }
    let b: Vec<f64> = indices.iter().map(|&i| fit.estimates()[i].as_f64()).collect();
    let chol = PivotedCholesky::factor(&sub)
        .map_err(|_| Error::Degenerate("covariance block is singular".into()))?;
    let v = chol.solve(&b);
    let chi2: f64 = b.iter().zip(&v).map(|(a, c)| a * c).sum();
    Ok(ChiSquareTest { chi2, df: m, p: chi2_sf(chi2, m) })
}

/// Likelihood-ratio test of nested logistic fits.
pub fn lr_test<T: Scalar>(full: &FittedGlm<T>, reduced: &FittedGlm<T>) -> Result<ChiSquareTest> {
    if full.n != reduced.n {
        return Err(Error::Precondition(format!(
            "fits use different data (n = {} vs {})",
            full.n, reduced.n
        )));
    }
    if let Some(t) = reduced.terms.iter().find(|t| !full.terms.contains(t)) {
        return Err(Error::Precondition(format!("designs are not nested: {t} missing from full model")));
    }
    lr_statistic(full.log_likelihood.as_f64(), reduced.log_likelihood.as_f64(), full.k_params - reduced.k_params)
}

pub(crate) fn lr_statistic(ll_full: f64, ll_reduced: f64, df: usize) -> Result<ChiSquareTest> {
    let raw = 2.0 * (ll_full - ll_reduced);
    // tolerate optimizer noise; a clearly negative statistic means the fits are not nested
    if raw < -1e-6 * (1.0 + ll_full.abs()) {
        return Err(Error::Precondition(format!(
            "full model log-likelihood {ll_full} below reduced {ll_reduced}"
        )));
    }
    let chi2 = raw.max(0.0);
    Ok(ChiSquareTest { chi2, df, p: if df == 0 { 1.0 } else { chi2_sf(chi2, df) } })
}
