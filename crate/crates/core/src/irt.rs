//! Rasch / 1PL calibration by marginal maximum likelihood.
//!
//! Bock–Aitkin EM on a fixed normal-density grid, followed by Newton steps on
//! the marginal log-likelihood. Standard errors come from the observed
//! information (Louis form: posterior expected Hessian plus posterior score
//! covariance).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{find_column, is_missing, normalize_code, sniff_delimiter};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, PivotedCholesky};
use crate::quadrature::NormalGrid;
use crate::scalar::{log_sum_exp, Scalar};

/// Binary item responses with a reference (0) / focal (1) label per person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponseMatrix {
    item_names: Vec<String>,
    /// Row-major `n_persons × n_items`.
    responses: Vec<u8>,
    group: Vec<u8>,
}

impl ItemResponseMatrix {
    pub fn new(item_names: Vec<String>, rows: Vec<Vec<u8>>, group: Vec<u8>) -> Result<Self> {
        if rows.len() != group.len() {
            return Err(Error::Data(format!("{} response rows but {} group labels", rows.len(), group.len())));
        }
        let k = item_names.len();
        let mut responses = Vec::with_capacity(rows.len() * k);
        for (p, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Data(format!("person {p} has {} responses, expected {k}", row.len())));
            }
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::Data(format!("person {p} has non-binary response {v}")));
            }
            responses.extend_from_slice(row);
        }
        if let Some(g) = group.iter().find(|&&g| g > 1) {
            return Err(Error::Data(format!("group label {g} is not 0 or 1")));
        }
        Ok(Self { item_names, responses, group })
    }

    /// Reads a delimited file; `items` selects columns (all non-group columns when `None`).
    pub fn from_csv(path: impl AsRef<Path>, group_column: &str, items: Option<&[String]>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv_str(&text, group_column, items)
    }

    pub fn from_csv_str(text: &str, group_column: &str, items: Option<&[String]>) -> Result<Self> {
        let delim = sniff_delimiter(text.lines().next().unwrap_or(""));
        let mut rdr = csv::ReaderBuilder::new().delimiter(delim).from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let gcol = find_column(&headers, group_column)?;
        let cols: Vec<usize> = match items {
            Some(names) => names.iter().map(|n| find_column(&headers, n)).collect::<Result<_>>()?,
            None => (0..headers.len()).filter(|&i| i != gcol).collect(),
        };
        let names = cols.iter().map(|&i| headers[i].trim().to_string()).collect();
        let mut rows = Vec::new();
        let mut group = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = line + 2;
            let parse = |raw: &str, what: &str| -> Result<u8> {
                if is_missing(raw) {
                    return Err(Error::Data(format!("line {line}: missing {what}")));
                }
                match normalize_code(raw).as_str() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Data(format!("line {line}: {what} value {other:?} is not 0 or 1"))),
                }
            };
            group.push(parse(rec.get(gcol).unwrap_or(""), group_column)?);
            let row = cols
                .iter()
                .map(|&i| parse(rec.get(i).unwrap_or(""), &headers[i]))
                .collect::<Result<Vec<u8>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Data("item-response file has no data rows".into()));
        }
        Self::new(names, rows, group)
    }

    pub fn n_persons(&self) -> usize {
        self.group.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_names.len()
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn group(&self) -> &[u8] {
        &self.group
    }

    pub fn row(&self, p: usize) -> &[u8] {
        let k = self.n_items();
        &self.responses[p * k..(p + 1) * k]
    }

    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.item_names.iter().position(|n| n == name)
    }

    /// Keeps the named items in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.item_index(n).ok_or_else(|| Error::Precondition(format!("unknown item {n:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let rows = (0..self.n_persons()).map(|p| idx.iter().map(|&i| self.row(p)[i]).collect()).collect();
        Self::new(names.to_vec(), rows, self.group.clone())
    }

    pub fn with_swapped_groups(&self) -> Self {
        Self { group: self.group.iter().map(|g| 1 - g).collect(), ..self.clone() }
    }
}

/// Which persons enter a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupFilter {
    All,
    Only(u8),
}

impl GroupFilter {
    fn keeps(self, g: u8) -> bool {
        match self {
            GroupFilter::All => true,
            GroupFilter::Only(x) => x == g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub grid_points: usize,
    /// Grid spans `[-grid_range, grid_range]`.
    pub grid_range: f64,
    /// Relative log-likelihood change that stops EM.
    pub tol: f64,
    pub max_iter: usize,
    /// Estimate one discrimination shared by all items instead of fixing it at 1.
    pub estimate_discrimination: bool,
    pub min_persons: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            grid_points: 21,
            grid_range: 5.0,
            tol: 1e-6,
            max_iter: 500,
            estimate_discrimination: false,
            min_persons: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IrtCalibration<T> {
    pub group: GroupFilter,
    /// Retained items, in input order.
    pub item_names: Vec<String>,
    pub difficulties: Vec<T>,
    pub variances: Vec<T>,
    /// Covariance of `(b_1, …, b_k[, log a])`.
    pub covariance: Matrix<T>,
    pub discrimination: T,
    pub discrimination_estimated: bool,
    pub n_persons: usize,
    pub log_likelihood: T,
    /// Marginal log-likelihood after each EM iteration.
    pub em_trace: Vec<T>,
    pub iterations: usize,
    /// Shift added by linking (0 for an unlinked calibration).
    pub linking_shift: T,
    pub excluded_items: Vec<String>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> IrtCalibration<T> {
    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.item_names.iter().position(|n| n == name)
    }

    pub fn mean_difficulty(&self) -> T {
        self.difficulties.iter().copied().sum::<T>() / T::lit(self.difficulties.len() as f64)
    }
}

struct Problem<T> {
    y: Vec<Vec<u8>>,
    x: Vec<T>,
    log_w: Vec<T>,
    n_items: usize,
    est_a: bool,
}

struct Eval<T> {
    ll: T,
    /// Expected persons at each node.
    n_q: Vec<T>,
    /// Expected correct responses per node and item.
    r_qi: Vec<Vec<T>>,
}

impl<T: Scalar> Problem<T> {
    fn n_params(&self) -> usize {
        self.n_items + usize::from(self.est_a)
    }

    fn split(&self, p: &[T]) -> (Vec<T>, T) {
        let a = if self.est_a { p[self.n_items].exp() } else { T::one() };
        (p[..self.n_items].to_vec(), a)
    }

    /// Per-node log P and log(1−P) for every item.
    fn node_logs(&self, b: &[T], a: T) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut lp = Vec::with_capacity(self.x.len());
        let mut lq = Vec::with_capacity(self.x.len());
        for &x in &self.x {
            lp.push(b.iter().map(|&bi| -(-(a * (x - bi))).softplus()).collect());
            lq.push(b.iter().map(|&bi| -(a * (x - bi)).softplus()).collect());
        }
        (lp, lq)
    }

    /// Posterior node probabilities for one person and the person's log marginal.
    fn posterior(&self, row: &[u8], lp: &[Vec<T>], lq: &[Vec<T>]) -> (Vec<T>, T) {
        let t: Vec<T> = (0..self.x.len())
            .map(|q| {
                row.iter()
                    .enumerate()
                    .fold(self.log_w[q], |acc, (i, &v)| acc + if v == 1 { lp[q][i] } else { lq[q][i] })
            })
            .collect();
        let lse = log_sum_exp(&t);
        (t.iter().map(|&v| (v - lse).exp()).collect(), lse)
    }

    fn e_step(&self, p: &[T]) -> Eval<T> {
        let (b, a) = self.split(p);
        let (lp, lq) = self.node_logs(&b, a);
        let q = self.x.len();
        let mut n_q = vec![T::zero(); q];
        let mut r_qi = vec![vec![T::zero(); self.n_items]; q];
        let mut ll = T::zero();
        for row in &self.y {
            let (post, lse) = self.posterior(row, &lp, &lq);
            ll = ll + lse;
            for k in 0..q {
                n_q[k] = n_q[k] + post[k];
                for (i, &v) in row.iter().enumerate() {
                    if v == 1 {
                        r_qi[k][i] = r_qi[k][i] + post[k];
                    }
                }
            }
        }
        Eval { ll, n_q, r_qi }
    }

    fn loglik(&self, p: &[T]) -> T {
        let (b, a) = self.split(p);
        let (lp, lq) = self.node_logs(&b, a);
        self.y.iter().map(|row| self.posterior(row, &lp, &lq).1).sum()
    }

    /// Expected complete-data log-likelihood for item `i`.
    fn q_item(&self, e: &Eval<T>, i: usize, b: T, a: T) -> T {
        (0..self.x.len())
            .map(|k| {
                let eta = a * (self.x[k] - b);
                e.r_qi[k][i] * -(-eta).softplus() + (e.n_q[k] - e.r_qi[k][i]) * -eta.softplus()
            })
            .sum()
    }

    fn m_step(&self, e: &Eval<T>, p: &mut [T]) {
        let (_, a) = self.split(p);
        for i in 0..self.n_items {
            let mut b = p[i];
            for _ in 0..25 {
                let (mut g, mut h) = (T::zero(), T::zero());
                for k in 0..self.x.len() {
                    let pr = (a * (self.x[k] - b)).logistic();
                    g = g - a * (e.r_qi[k][i] - e.n_q[k] * pr);
                    h = h + a * a * e.n_q[k] * pr * (T::one() - pr);
                }
                if h <= T::zero() {
                    break;
                }
                let base = self.q_item(e, i, b, a);
                let mut step = g / h;
                let mut accepted = false;
                for _ in 0..40 {
                    if self.q_item(e, i, b + step, a) >= base {
                        accepted = true;
                        break;
                    }
                    step = step * T::lit(0.5);
                }
                if !accepted {
                    break;
                }
                b = b + step;
                if step.abs() < T::lit(1e-12) {
                    break;
                }
            }
            p[i] = b;
        }
        if self.est_a {
            let k = self.n_items;
            let q_all = |alpha: T, p: &[T]| -> T {
                (0..self.n_items).map(|i| self.q_item(e, i, p[i], alpha.exp())).sum()
            };
            for _ in 0..25 {
                let alpha = p[k];
                let a = alpha.exp();
                let (mut g, mut h) = (T::zero(), T::zero());
                for i in 0..self.n_items {
                    for q in 0..self.x.len() {
                        let d = self.x[q] - p[i];
                        let pr = (a * d).logistic();
                        let resid = e.r_qi[q][i] - e.n_q[q] * pr;
                        g = g + resid * a * d;
                        h = h + resid * a * d - e.n_q[q] * pr * (T::one() - pr) * a * a * d * d;
                    }
                }
                let base = q_all(alpha, p);
                let mut step = if h < T::zero() { -g / h } else { g.signum() * T::lit(0.1) };
                let mut accepted = false;
                for _ in 0..40 {
                    if q_all(alpha + step, p) >= base {
                        accepted = true;
                        break;
                    }
                    step = step * T::lit(0.5);
                }
                if !accepted {
                    break;
                }
                p[k] = alpha + step;
                if step.abs() < T::lit(1e-12) {
                    break;
                }
            }
        }
    }

    /// Log-likelihood, gradient and Hessian of the marginal log-likelihood.
    fn derivatives(&self, p: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let (b, a) = self.split(p);
        let (lp, lq) = self.node_logs(&b, a);
        let m = self.n_params();
        let nq = self.x.len();
        let mut grad = vec![T::zero(); m];
        let mut hess = Matrix::zeros(m, m);
        let mut ll = T::zero();
        let probs: Vec<Vec<T>> = self
            .x
            .iter()
            .map(|&x| b.iter().map(|&bi| (a * (x - bi)).logistic()).collect())
            .collect();
        for row in &self.y {
            let (post, lse) = self.posterior(row, &lp, &lq);
            ll = ll + lse;
            let mut mean_g = vec![T::zero(); m];
            let mut acc = Matrix::zeros(m, m);
            for k in 0..nq {
                let w = post[k];
                let x = self.x[k];
                let mut g = vec![T::zero(); m];
                for i in 0..self.n_items {
                    let resid = T::lit(row[i] as f64) - probs[k][i];
                    g[i] = -a * resid;
                    if self.est_a {
                        g[self.n_items] = g[self.n_items] + a * resid * (x - b[i]);
                    }
                }
                for r in 0..m {
                    mean_g[r] = mean_g[r] + w * g[r];
                    for c in 0..m {
                        acc[(r, c)] = acc[(r, c)] + w * g[r] * g[c];
                    }
                }
                // node Hessian of log L
                for i in 0..self.n_items {
                    let pq = probs[k][i] * (T::one() - probs[k][i]);
                    acc[(i, i)] = acc[(i, i)] - w * a * a * pq;
                    if self.est_a {
                        let d = x - b[i];
                        let resid = T::lit(row[i] as f64) - probs[k][i];
                        let cross = -a * resid + a * a * pq * d;
                        let j = self.n_items;
                        acc[(i, j)] = acc[(i, j)] + w * cross;
                        acc[(j, i)] = acc[(j, i)] + w * cross;
                        acc[(j, j)] = acc[(j, j)] + w * (a * resid * d - a * a * pq * d * d);
                    }
                }
            }
            for r in 0..m {
                grad[r] = grad[r] + mean_g[r];
                for c in 0..m {
                    hess[(r, c)] = hess[(r, c)] + acc[(r, c)] - mean_g[r] * mean_g[c];
                }
            }
        }
        (ll, grad, hess)
    }
}

/// Calibrates the persons selected by `filter` under the 1PL model.
pub fn fit_1pl<T: Scalar>(
    matrix: &ItemResponseMatrix,
    filter: GroupFilter,
    opts: &CalibrationOptions,
) -> Result<IrtCalibration<T>> {
    if matrix.n_items() < 2 {
        return Err(Error::Precondition("calibration needs at least 2 items".into()));
    }
    let persons: Vec<usize> = (0..matrix.n_persons()).filter(|&p| filter.keeps(matrix.group()[p])).collect();
    if persons.len() < opts.min_persons {
        return Err(Error::Precondition(format!(
            "calibration group has {} persons, at least {} required",
            persons.len(),
            opts.min_persons
        )));
    }
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, name) in matrix.item_names().iter().enumerate() {
        let ones = persons.iter().filter(|&&p| matrix.row(p)[i] == 1).count();
        if ones == 0 || ones == persons.len() {
            warnings.push(format!("item {name} excluded: every response is {}", u8::from(ones > 0)));
            excluded.push(name.clone());
        } else {
            kept.push(i);
        }
    }
    if kept.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} non-degenerate item(s) left for calibration",
            kept.len()
        )));
    }
    let grid = NormalGrid::<T>::new(opts.grid_points, opts.grid_range);
    let prob = Problem {
        y: persons.iter().map(|&p| kept.iter().map(|&i| matrix.row(p)[i]).collect()).collect(),
        log_w: grid.weights.iter().map(|w| w.ln()).collect(),
        x: grid.nodes,
        n_items: kept.len(),
        est_a: opts.estimate_discrimination,
    };

    // start from logits of the item proportions
    let n = T::lit(persons.len() as f64);
    let mut p: Vec<T> = (0..kept.len())
        .map(|i| {
            let ones = T::lit(prob.y.iter().filter(|r| r[i] == 1).count() as f64);
            ((n - ones) / ones).ln()
        })
        .collect();
    if prob.est_a {
        p.push(T::zero());
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut prev: Option<T> = None;
    while iterations < opts.max_iter {
        iterations += 1;
        let e = prob.e_step(&p);
        if let Some(old) = prev {
            if ((e.ll - old) / old.abs()).abs() < T::lit(opts.tol) {
                trace.push(e.ll);
                converged = true;
                break;
            }
        }
        trace.push(e.ll);
        prev = Some(e.ll);
        prob.m_step(&e, &mut p);
    }
    if !converged {
        let tail: Vec<String> = trace.iter().rev().take(3).map(|v| format!("{:.6}", v.as_f64())).collect();
        return Err(Error::Numerical(format!(
            "EM did not converge in {} iterations (last log-likelihoods {})",
            opts.max_iter,
            tail.join(", ")
        )));
    }

    // Newton polish on the marginal log-likelihood
    let (mut ll, mut g, mut h) = prob.derivatives(&p);
    for _ in 0..50 {
        let gmax = g.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if gmax < T::lit(1e-9) * (T::one() + ll.abs()).sqrt() {
            break;
        }
        let mut neg = h.clone();
        for r in 0..neg.rows() {
            for c in 0..neg.cols() {
                neg[(r, c)] = -neg[(r, c)];
            }
        }
        let Ok(chol) = PivotedCholesky::factor(&neg) else { break };
        let step = chol.solve(&g);
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<T> = p.iter().zip(&step).map(|(&a, &s)| a + t * s).collect();
            let lt = prob.loglik(&trial);
            if lt >= ll {
                p = trial;
                moved = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        if !moved {
            break;
        }
        let d = prob.derivatives(&p);
        ll = d.0;
        g = d.1;
        h = d.2;
    }

    let mut info = h;
    for r in 0..info.rows() {
        for c in 0..info.cols() {
            info[(r, c)] = -info[(r, c)];
        }
    }
    info.symmetrize();
    let covariance = PivotedCholesky::factor(&info)
        .map_err(|e| Error::Numerical(format!("item information not positive definite: {e}")))?
        .inverse();
    let k = kept.len();
    let variances: Vec<T> = covariance.diagonal()[..k].to_vec();
    if variances.iter().any(|v| !(*v > T::zero())) {
        return Err(Error::Numerical("non-positive difficulty variance".into()));
    }
    let (b, a) = prob.split(&p);
    Ok(IrtCalibration {
        group: filter,
        item_names: kept.iter().map(|&i| matrix.item_names()[i].clone()).collect(),
        difficulties: b,
        variances,
        covariance,
        discrimination: a,
        discrimination_estimated: prob.est_a,
        n_persons: persons.len(),
        log_likelihood: ll,
        em_trace: trace,
        iterations,
        linking_shift: T::zero(),
        excluded_items: excluded,
        warnings,
    })
}

/// Mean–mean linking: shifts the focal difficulties so both calibrations share a mean.
pub fn link_calibrations<T: Scalar>(
    reference: &IrtCalibration<T>,
    focal: &IrtCalibration<T>,
) -> Result<IrtCalibration<T>> {
    if reference.item_names != focal.item_names {
        return Err(Error::Precondition("linked calibrations must cover the same items".into()));
    }
    let shift = reference.mean_difficulty() - focal.mean_difficulty();
    let mut out = focal.clone();
    for b in &mut out.difficulties {
        *b = *b + shift;
    }
    out.linking_shift = focal.linking_shift + shift;
    Ok(out)
}

/// Posterior (EAP) trait means for every person in `matrix` under a calibration.
pub fn posterior_means<T: Scalar>(
    cal: &IrtCalibration<T>,
    matrix: &ItemResponseMatrix,
    opts: &CalibrationOptions,
) -> Result<Vec<T>> {
    let sub = matrix.select(&cal.item_names)?;
    let grid = NormalGrid::<T>::new(opts.grid_points, opts.grid_range);
    let prob = Problem {
        y: Vec::new(),
        log_w: grid.weights.iter().map(|w| w.ln()).collect(),
        x: grid.nodes,
        n_items: cal.item_names.len(),
        est_a: false,
    };
    let (lp, lq) = prob.node_logs(&cal.difficulties, cal.discrimination);
    Ok((0..sub.n_persons())
        .map(|p| {
            let (post, _) = prob.posterior(sub.row(p), &lp, &lq);
            post.iter().zip(&prob.x).map(|(&w, &x)| w * x).sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rasch(n: usize, b: &[f64], focal_shift: f64, seed: u64) -> ItemResponseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sn = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut group = Vec::new();
        for p in 0..n {
            let g = (p % 2) as u8;
            let theta = sn.sample(&mut rng) + focal_shift * g as f64;
            rows.push(b.iter().map(|&bi| u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (bi - theta).exp()))).collect());
            group.push(g);
        }
        let names = (0..b.len()).map(|i| format!("i{i}")).collect();
        ItemResponseMatrix::new(names, rows, group).unwrap()
    }

    #[test]
    fn rejects_non_binary() {
        assert!(ItemResponseMatrix::new(vec!["a".into()], vec![vec![2]], vec![0]).is_err());
        assert!(ItemResponseMatrix::new(vec!["a".into()], vec![vec![1]], vec![3]).is_err());
        assert!(ItemResponseMatrix::from_csv_str("a,b,g\n1,0,0\n1,x,1\n", "g", None).is_err());
    }

    #[test]
    fn reads_csv_with_item_selection() {
        let m = ItemResponseMatrix::from_csv_str("a,b,c,g\n1,0,1,0\n0,0,1.0,1\n", "g", Some(&["c".into(), "a".into()])).unwrap();
        assert_eq!(m.item_names(), ["c", "a"]);
        assert_eq!(m.row(1), [1, 0]);
        assert_eq!(m.group(), [0, 1]);
    }

    #[test]
    fn em_is_monotone_and_converges() {
        let m = rasch(600, &[-1.0, -0.3, 0.0, 0.4, 1.2], 0.0, 11);
        let cal = fit_1pl::<f64>(&m, GroupFilter::All, &CalibrationOptions::default()).unwrap();
        for w in cal.em_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
        assert!(cal.log_likelihood >= *cal.em_trace.last().unwrap() - 1e-10);
        assert!(cal.variances.iter().all(|&v| v > 0.0));
        // EM itself must do the work, not the final Newton polish
        assert!(cal.em_trace.len() > 3);
        assert!((cal.log_likelihood - *cal.em_trace.last().unwrap()).abs() < 1e-2);
    }

    #[test]
    fn louis_information_matches_numeric_hessian() {
        let m = rasch(200, &[-0.5, 0.2, 0.8], 0.0, 12);
        for est_a in [false, true] {
            let grid = NormalGrid::<f64>::new(21, 5.0);
            let prob = Problem {
                y: (0..m.n_persons()).map(|p| m.row(p).to_vec()).collect(),
                log_w: grid.weights.iter().map(|w| w.ln()).collect(),
                x: grid.nodes,
                n_items: 3,
                est_a,
            };
            let mut p = vec![-0.4, 0.1, 0.9];
            if est_a {
                p.push(0.2);
            }
            let (_, g, h) = prob.derivatives(&p);
            let eps = 1e-5;
            for j in 0..p.len() {
                let mut pp = p.clone();
                pp[j] += eps;
                let mut pm = p.clone();
                pm[j] -= eps;
                let fd = (prob.loglik(&pp) - prob.loglik(&pm)) / (2.0 * eps);
                assert!((fd - g[j]).abs() < 1e-5, "grad {j}");
                let (_, gp, _) = prob.derivatives(&pp);
                let (_, gm, _) = prob.derivatives(&pm);
                for i in 0..p.len() {
                    let fd2 = (gp[i] - gm[i]) / (2.0 * eps);
                    assert!((fd2 - h[(i, j)]).abs() < 1e-4 * (1.0 + h[(i, j)].abs()), "hess {i},{j}");
                }
            }
        }
    }

    #[test]
    fn degenerate_items_are_excluded() {
        let mut m = rasch(100, &[-0.5, 0.0, 0.5], 0.0, 13);
        let rows: Vec<Vec<u8>> = (0..m.n_persons()).map(|p| {
            let mut r = m.row(p).to_vec();
            r.push(1);
            r
        }).collect();
        let mut names = m.item_names().to_vec();
        names.push("always".into());
        m = ItemResponseMatrix::new(names, rows, m.group().to_vec()).unwrap();
        let cal = fit_1pl::<f64>(&m, GroupFilter::All, &CalibrationOptions::default()).unwrap();
        assert_eq!(cal.excluded_items, ["always"]);
        assert_eq!(cal.difficulties.len(), 3);
        assert_eq!(cal.warnings.len(), 1);
    }

    #[test]
    fn too_few_persons() {
        let m = rasch(40, &[0.0, 0.5], 0.0, 14);
        let r = fit_1pl::<f64>(&m, GroupFilter::Only(1), &CalibrationOptions::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn linking_removes_constant_shift() {
        let m = rasch(400, &[-1.0, 0.0, 1.0], 0.0, 15);
        let r = fit_1pl::<f64>(&m, GroupFilter::All, &CalibrationOptions::default()).unwrap();
        let same = link_calibrations(&r, &r).unwrap();
        assert_eq!(same.difficulties, r.difficulties);
        assert_eq!(same.linking_shift, 0.0);
        let mut f = r.clone();
        for b in &mut f.difficulties {
            *b += 0.3;
        }
        let linked = link_calibrations(&r, &f).unwrap();
        assert!((linked.linking_shift + 0.3).abs() < 1e-12);
        for (a, b) in linked.difficulties.iter().zip(&r.difficulties) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut other = r.clone();
        other.item_names[0] = "zzz".into();
        assert!(link_calibrations(&r, &other).is_err());
    }

    #[test]
    fn estimated_discrimination_recovers_scale() {
        let b = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let sn = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<u8>> = (0..3000)
            .map(|_| {
                let t: f64 = sn.sample(&mut rng);
                b.iter().map(|&bi| u8::from(rng.gen::<f64>() < 1.0 / (1.0 + (-1.7 * (t - bi)).exp()))).collect()
            })
            .collect();
        let m = ItemResponseMatrix::new((0..6).map(|i| format!("i{i}")).collect(), rows, vec![0; 3000]).unwrap();
        let opts = CalibrationOptions { estimate_discrimination: true, ..Default::default() };
        let cal = fit_1pl::<f64>(&m, GroupFilter::All, &opts).unwrap();
        assert!((cal.discrimination - 1.7).abs() < 0.2, "a = {}", cal.discrimination);
        for w in cal.em_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
    }

    #[test]
    fn posterior_means_follow_raw_scores() {
        let m = rasch(300, &[-1.0, 0.0, 0.5, 1.0], 0.0, 17);
        let opts = CalibrationOptions::default();
        let cal = fit_1pl::<f64>(&m, GroupFilter::All, &opts).unwrap();
        let eap = posterior_means(&cal, &m, &opts).unwrap();
        let score = |p: usize| m.row(p).iter().map(|&v| v as u32).sum::<u32>();
        for i in 0..m.n_persons() {
            for j in 0..m.n_persons() {
                if score(i) < score(j) {
                    assert!(eap[i] < eap[j]);
                }
            }
        }
    }
}
