//! Quadrature rules over the real line.

use crate::scalar::Scalar;

/// Gauss–Hermite rule for `∫ f(x) exp(-x²) dx ≈ Σ w_k f(x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes are roots of the physicists' Hermite polynomial H_n, found by
    /// Newton iteration on the orthonormal three-term recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Equally spaced grid over `[-range, range]` with weights proportional to
/// the standard normal density, normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalGrid<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> NormalGrid<T> {
    pub fn new(points: usize, range: f64) -> Self {
        assert!(points >= 2, "grid needs at least two points");
        let step = 2.0 * range / (points - 1) as f64;
        let x: Vec<f64> = (0..points).map(|i| -range + step * i as f64).collect();
        let dens: Vec<f64> = x.iter().map(|v| (-0.5 * v * v).exp()).collect();
        let total: f64 = dens.iter().sum();
        Self {
            nodes: x.into_iter().map(T::lit).collect(),
            weights: dens.into_iter().map(|d| T::lit(d / total)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
