//! Quasi-Newton minimization (BFGS with backtracking line search).

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once half the squared Newton decrement `g' H⁻¹ g / 2` drops below this.
    pub decrement_tol: f64,
    /// Stop when the objective changes by less than `f_tol * (1 + |f|)` twice in a row.
    pub f_tol: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, decrement_tol: 1e-10, f_tol: 1e-14, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Minimizes `f` from `x0`. `inv_hessian0` seeds the inverse-Hessian
/// approximation and should reflect the parameter scales.
///
/// `f` returns the value and gradient; an `Err` at a trial point is treated
/// as an infinite value and the step is shortened.
pub fn minimize<T, F>(mut f: F, x0: Vec<T>, inv_hessian0: Matrix<T>, opts: &BfgsOptions) -> Result<BfgsResult<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut hinv = inv_hessian0;
    let c1 = T::lit(1e-4);
    let half = T::lit(0.5);
    let mut small_changes = 0;

    for iter in 0..opts.max_iter {
        let dir: Vec<T> = hinv.mul_vec(&g).into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        let mut dir = dir;
        if !(slope < T::zero()) {
            // lost descent: restart from the scaled identity
            hinv = Matrix::identity(n);
            dir = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &dir);
        }
        if -slope * half < T::lit(opts.decrement_tol) {
            return Ok(BfgsResult { x, f: fx, grad: g, iterations: iter, converged: true });
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step = step * half;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // no progress possible along a descent direction: at numerical optimum
            let dec = -slope * half;
            return Ok(BfgsResult {
                x,
                f: fx,
                grad: g,
                iterations: iter,
                converged: dec < T::lit(opts.decrement_tol.sqrt()),
            });
        };

        let s: Vec<T> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > T::lit(1e-12) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > T::zero() {
            if iter == 0 {
                // Shanno–Phua scaling of the initial approximation
                let scale = sy / dot(&y, &hinv.mul_vec(&y));
                if scale.is_finite() && scale > T::zero() {
                    for i in 0..n {
                        for j in 0..n {
                            hinv[(i, j)] = hinv[(i, j)] * scale;
                        }
                    }
                }
            }
            let rho = T::one() / sy;
            let hy = hinv.mul_vec(&y);
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    let v = hinv[(i, j)] - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                    hinv[(i, j)] = v;
                }
            }
        }

        let change = (fx - f_new).abs();
        x = x_new;
        g = g_new;
        let f_old = fx;
        fx = f_new;
        if change <= T::lit(opts.f_tol) * (T::one() + f_old.abs()) {
            small_changes += 1;
            if small_changes >= 2 {
                return Ok(BfgsResult { x, f: fx, grad: g, iterations: iter + 1, converged: true });
            }
        } else {
            small_changes = 0;
        }
    }
    Ok(BfgsResult { x, f: fx, grad: g, iterations: opts.max_iter, converged: false })
}
