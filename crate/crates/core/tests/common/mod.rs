//! Independent reference computations shared by the oracle suites and the
//! acceptance target. Nothing here calls the library's numerical kernels.
#![allow(dead_code)]

use mldif::data::{DifDataset, Provenance, RespondentRecord};
use mldif::dif::StratumTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Straight-line MH sums per stratum: observed a, its expectation and variance.
pub fn mh_direct(tables: &[StratumTable]) -> (f64, f64) {
    let mut a_sum = 0.0;
    let mut e_sum = 0.0;
    let mut v_sum = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in tables {
        let a = t.a as f64;
        let n = (t.a + t.b + t.c + t.d) as f64;
        let m1 = (t.a + t.b) as f64; // reference
        let m2 = (t.c + t.d) as f64; // focal
        let n1 = (t.a + t.c) as f64; // yes
        let n2 = (t.b + t.d) as f64; // no
        a_sum += a;
        e_sum += m1 * n1 / n;
        v_sum += (m1 / 10.0 * m2 / 10.0 * n1 / 10.0 * n2 / 10.0) / (n * n * (n - 1.0)) * 1e4;
        num += t.a as f64 * t.d as f64 / n;
        den += t.b as f64 * t.c as f64 / n;
    }
    let chi = ((a_sum - e_sum).abs() - 0.5).powi(2) / v_sum;
    (chi, num / den)
}

/// Random strata, each with at least two respondents and both groups present.
pub fn random_tables(r: &mut ChaCha8Rng) -> Vec<StratumTable> {
    let k = r.gen_range(2..8);
    (0..k)
        .map(|level| {
            let mut t = StratumTable {
                level: level as f64,
                a: r.gen_range(0..40),
                b: r.gen_range(0..40),
                c: r.gen_range(0..40),
                d: r.gen_range(0..40),
            };
            t.a += 1;
            t.d += 1;
            t
        })
        .collect()
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting; returns
/// the solution and `A⁻¹`.
pub fn gauss_jordan(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.push(b[i]);
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in &mut m[col] {
            *v /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..m[i].len() {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    let x = m.iter().map(|r| r[n]).collect();
    let inv = m.iter().map(|r| r[n + 1..].to_vec()).collect();
    (x, inv)
}

/// Rows `[1, trait, group, trait·group]` built directly from the records.
pub fn interaction_rows(ds: &DifDataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = ds
        .records()
        .iter()
        .map(|r| {
            let t = r.trait_score();
            let g = r.group() as f64;
            vec![1.0, t, g, t * g]
        })
        .collect();
    let y = ds.records().iter().map(|r| r.response() as f64).collect();
    (x, y)
}

pub fn logistic_loglik(x: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            yi * eta - (1.0 + eta.exp()).ln()
        })
        .sum()
}

/// Plain Newton-Raphson from zero; returns estimates and inverse information.
pub fn newton_logistic(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = x[0].len();
    let mut beta = vec![0.0; k];
    let mut inv = vec![vec![0.0; k]; k];
    for _ in 0..100 {
        let mut grad = vec![0.0; k];
        let mut info = vec![vec![0.0; k]; k];
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            for i in 0..k {
                grad[i] += (yi - p) * row[i];
                for j in 0..k {
                    info[i][j] += p * (1.0 - p) * row[i] * row[j];
                }
            }
        }
        let (step, inverse) = gauss_jordan(&info, &grad);
        inv = inverse;
        let mut big = 0.0f64;
        for i in 0..k {
            beta[i] += step[i];
            big = big.max(step[i].abs());
        }
        if big < 1e-13 {
            break;
        }
    }
    // information at the final estimate
    let mut info = vec![vec![0.0; k]; k];
    for row in x {
        let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let p = 1.0 / (1.0 + (-eta).exp());
        for i in 0..k {
            for j in 0..k {
                info[i][j] += p * (1.0 - p) * row[i] * row[j];
            }
        }
    }
    let (_, final_inv) = gauss_jordan(&info, &vec![0.0; k]);
    let _ = inv;
    (beta, final_inv)
}

/// Unclustered fixture with moderate effects.
pub fn logistic_fixture(seed: u64, n: usize) -> DifDataset {
    let mut r = rng(seed);
    let sn = Normal::new(0.0, 1.0).unwrap();
    let b: [f64; 4] = [r.gen_range(-1.0..1.0), r.gen_range(0.3..1.2), r.gen_range(-0.8..0.8), r.gen_range(-0.4..0.4)];
    let recs = (0..n)
        .map(|_| {
            let g = u8::from(r.gen_bool(0.45));
            let t: f64 = sn.sample(&mut r);
            let eta = b[0] + b[1] * t + b[2] * g as f64 + b[3] * t * g as f64;
            let y = u8::from(r.gen::<f64>() < 1.0 / (1.0 + (-eta).exp()));
            RespondentRecord::new(y, g, t, None).unwrap()
        })
        .collect();
    DifDataset::new(recs, vec![], Provenance::new("oracle fixture")).unwrap()
}

/// Clustered fixture: `m` clusters of random size in `[lo, hi)`.
pub fn clustered_fixture(seed: u64, m: usize, lo: usize, hi: usize, tau: f64) -> DifDataset {
    let mut r = rng(seed);
    let sn = Normal::new(0.0, 1.0).unwrap();
    let mut recs = Vec::new();
    for c in 0..m {
        let u = tau * sn.sample(&mut r);
        let size = r.gen_range(lo..hi);
        for _ in 0..size {
            let g = u8::from(r.gen_bool(0.5));
            let t: f64 = sn.sample(&mut r);
            let eta = -0.4 + 0.9 * t - 0.3 * g as f64 + u;
            let y = u8::from(r.gen::<f64>() < 1.0 / (1.0 + (-eta).exp()));
            recs.push(RespondentRecord::new(y, g, t, Some(c)).unwrap());
        }
    }
    DifDataset::new(recs, (0..m).map(|c| c.to_string()).collect(), Provenance::new("oracle fixture")).unwrap()
}

/// Random-intercept marginal log-likelihood by the trapezoid rule on
/// `[-8τ, 8τ]` with `points` nodes per cluster (main-effects design).
pub fn trapezoid_marginal(ds: &DifDataset, beta: &[f64; 3], tau2: f64, points: usize) -> f64 {
    let tau = tau2.sqrt();
    let lo = -8.0 * tau;
    let h = 16.0 * tau / (points - 1) as f64;
    let mut clusters: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ds.cluster_count()];
    for r in ds.records() {
        let eta = beta[0] + beta[1] * r.trait_score() + beta[2] * r.group() as f64;
        clusters[r.cluster().unwrap()].push((eta, r.response() as f64));
    }
    let mut total = 0.0;
    for c in clusters.iter().filter(|c| !c.is_empty()) {
        let logf: Vec<f64> = (0..points)
            .map(|k| {
                let u = lo + h * k as f64;
                let ll: f64 = c.iter().map(|&(e, y)| y * (e + u) - (1.0 + (e + u).exp()).ln()).sum();
                ll - 0.5 * u * u / tau2 - 0.5 * (2.0 * std::f64::consts::PI * tau2).ln()
            })
            .collect();
        let mx = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logf
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let w = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
                w * (v - mx).exp()
            })
            .sum();
        total += mx + (s * h).ln();
    }
    total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Relative deviation used for gradient checks: `|a − b| / max(1, |b|)`.
pub fn scaled_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Largest relative χ² / α̂ discrepancy between `mh_test` and [`mh_direct`].
pub fn mh_suite(fixtures: usize) -> f64 {
    let mut r = rng(0x6d68);
    let mut worst = 0.0f64;
    for _ in 0..fixtures {
        let tables = random_tables(&mut r);
        let got = mldif::dif::mh_test(&tables, 0.05).expect("mh on oracle fixture");
        let (chi, alpha) = mh_direct(&tables);
        worst = worst.max(rel_err(got.chi2, chi)).max(rel_err(got.alpha_hat, alpha));
    }
    worst
}

/// Largest coefficient / SE discrepancy between IRLS and the Newton oracle.
pub fn glm_suite(fixtures: usize) -> f64 {
    let mut worst = 0.0f64;
    for f in 0..fixtures {
        let ds = logistic_fixture(1000 + f as u64, 400 + 37 * f);
        let fit = mldif::glm::fit_logistic::<f64>(&ds, &mldif::DesignSpec::with_interaction())
            .expect("glm on oracle fixture");
        let (x, y) = interaction_rows(&ds);
        let (beta, inv) = newton_logistic(&x, &y);
        for j in 0..4 {
            worst = worst
                .max((fit.coefficients[j] - beta[j]).abs())
                .max((fit.std_errors[j] - inv[j][j].sqrt()).abs());
        }
        worst = worst.max((fit.log_likelihood - logistic_loglik(&x, &y, &beta)).abs() / y.len() as f64);
    }
    worst
}

/// Largest relative discrepancy between AGQ(25) and the trapezoid integral.
pub fn agq_suite(fixtures: usize) -> f64 {
    let mut worst = 0.0f64;
    for f in 0..fixtures {
        let mut r = rng(2000 + f as u64);
        let tau2: f64 = r.gen_range(0.2..1.5);
        let ds = clustered_fixture(3000 + f as u64, 8, 5, 30, tau2.sqrt());
        let beta = [r.gen_range(-1.0..1.0), r.gen_range(0.2..1.2), r.gen_range(-0.7..0.7)];
        let params = mldif::GlmmParams { fixed: beta.to_vec(), variances: vec![tau2] };
        let design = mldif::GlmmDesign::random_intercept(mldif::DesignSpec::main_effects());
        let got = mldif::glmm::marginal_loglik(&params, &ds, &design, mldif::Method::Agq(25))
            .expect("agq on oracle fixture");
        let want = trapezoid_marginal(&ds, &beta, tau2, 10_001);
        worst = worst.max(rel_err(got, want));
    }
    worst
}

/// Largest scaled gradient discrepancy against central differences:
/// `(glmm, glm)`.
pub fn gradient_suite(fixtures: usize) -> (f64, f64) {
    let (mut g_worst, mut l_worst) = (0.0f64, 0.0f64);
    let h = 1e-5;
    for f in 0..fixtures {
        let mut r = rng(4000 + f as u64);
        let ds = clustered_fixture(5000 + f as u64, 10, 10, 40, 0.8);
        for method in [mldif::Method::Laplace, mldif::Method::Agq(9)] {
            let design = mldif::GlmmDesign::random_intercept(mldif::DesignSpec::with_interaction());
            let obj = mldif::glmm::GlmmObjective::<f64>::new(&ds, &design, method).unwrap();
            let theta: Vec<f64> = vec![
                r.gen_range(-1.0..1.0),
                r.gen_range(0.2..1.2),
                r.gen_range(-0.7..0.7),
                r.gen_range(-0.3..0.3),
                r.gen_range(-1.0..0.5),
            ];
            let (_, grad) = obj.value_and_gradient(&theta).unwrap();
            for j in 0..theta.len() {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (obj.value(&up).unwrap() - obj.value(&dn).unwrap()) / (2.0 * h);
                g_worst = g_worst.max(scaled_err(grad[j], fd));
            }
        }
        let glm_ds = logistic_fixture(6000 + f as u64, 300);
        let (x, y) = mldif::DesignSpec::with_interaction().model_matrix::<f64>(&glm_ds).unwrap();
        let beta: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let s = mldif::glm::score(&x, &y, &beta);
        for j in 0..4 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (mldif::glm::log_likelihood(&x, &y, &up) - mldif::glm::log_likelihood(&x, &y, &dn)) / (2.0 * h);
            l_worst = l_worst.max(scaled_err(s[j], fd));
        }
    }
    (g_worst, l_worst)
}
