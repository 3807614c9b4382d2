//! Seeded generator of clustered DIF data and a Monte Carlo harness.
//!
//! Replication `i` draws from ChaCha8 seeded with `seed ^ splitmix64(i)`, so
//! every replication is reproducible on its own and independent of thread
//! scheduling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DifDataset, Provenance, RespondentRecord};
use crate::dif::{lr_dif, mh_dif, mlr_dif, DifDetails, DifMethod, LogisticOptions, MultilevelOptions};
use crate::error::{Error, Result};
use crate::glmm::Method;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalSpec {
    pub mean: f64,
    pub sd: f64,
}

impl Default for NormalSpec {
    fn default() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterSize {
    Uniform(usize),
    PerCluster(Vec<usize>),
}

fn default_focal_prob() -> f64 {
    0.5
}

fn default_alpha() -> f64 {
    crate::dif::DEFAULT_ALPHA
}

fn default_methods() -> Vec<DifMethod> {
    vec![DifMethod::Mh, DifMethod::Lr, DifMethod::Mlr]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_clusters: usize,
    pub cluster_size: ClusterSize,
    pub tau2: f64,
    #[serde(default)]
    pub trait_reference: NormalSpec,
    #[serde(default)]
    pub trait_focal: NormalSpec,
    #[serde(default = "default_focal_prob")]
    pub focal_prob: f64,
    /// `(β0, β1, β2, β3)`: intercept, trait, group, trait × group.
    pub beta: [f64; 4],
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<DifMethod>,
    /// Fit the multilevel model with the interaction term.
    #[serde(default)]
    pub mlr_interaction: bool,
    #[serde(default)]
    pub glmm_method: Method,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(format!("simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_clusters == 0 {
            return bad("n_clusters must be at least 1".into());
        }
        match &self.cluster_size {
            ClusterSize::Uniform(0) => return bad("cluster_size must be positive".into()),
            ClusterSize::PerCluster(v) if v.len() != self.n_clusters => {
                return bad(format!("cluster_size lists {} sizes for {} clusters", v.len(), self.n_clusters))
            }
            ClusterSize::PerCluster(v) if v.contains(&0) => {
                return bad("every cluster size must be positive".into())
            }
            _ => {}
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return bad(format!("tau2 must be finite and non-negative, got {}", self.tau2));
        }
        if !(0.0..=1.0).contains(&self.focal_prob) {
            return bad(format!("focal_prob must lie in [0, 1], got {}", self.focal_prob));
        }
        for (name, n) in [("trait_reference", self.trait_reference), ("trait_focal", self.trait_focal)] {
            if !(n.sd > 0.0 && n.sd.is_finite() && n.mean.is_finite()) {
                return bad(format!("{name} needs a finite mean and positive sd"));
            }
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return bad("beta must be finite".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let Some(m) = self.methods.iter().find(|m| **m == DifMethod::Lord) {
            return bad(format!("method {m} is not available in simulation studies"));
        }
        Ok(())
    }

    pub fn size_of(&self, cluster: usize) -> usize {
        match &self.cluster_size {
            ClusterSize::Uniform(s) => *s,
            ClusterSize::PerCluster(v) => v[cluster],
        }
    }

    pub fn total_size(&self) -> usize {
        (0..self.n_clusters).map(|c| self.size_of(c)).sum()
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ splitmix64(index))
}

/// One simulated dataset; identical `(config, index)` give identical data.
pub fn generate(config: &SimConfig, index: u64) -> Result<DifDataset> {
    config.validate()?;
    let mut rng = replication_rng(config.seed, index);
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let tau = config.tau2.sqrt();
    let [b0, b1, b2, b3] = config.beta;
    let mut records = Vec::with_capacity(config.total_size());
    for c in 0..config.n_clusters {
        let u = tau * std.sample(&mut rng);
        for _ in 0..config.size_of(c) {
            let g = u8::from(rng.gen_bool(config.focal_prob));
            let spec = if g == 1 { config.trait_focal } else { config.trait_reference };
            let theta = spec.mean + spec.sd * std.sample(&mut rng);
            let g_f = g as f64;
            let eta = b0 + u + b1 * theta + b2 * g_f + b3 * theta * g_f;
            let p = 1.0 / (1.0 + (-eta).exp());
            let y = u8::from(rng.gen::<f64>() < p);
            records.push(RespondentRecord::new(y, g, theta, Some(c))?);
        }
    }
    let labels = (1..=config.n_clusters).map(|c| c.to_string()).collect();
    let mut prov = Provenance::new(format!("simulation seed={} replication={index}", config.seed));
    prov.rows_read = records.len();
    DifDataset::new(records, labels, prov)
}

/// Rejection indicator and group-effect estimate on the β2 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    rejected: bool,
    estimate: f64,
}

fn run_method(ds: &DifDataset, method: DifMethod, config: &SimConfig) -> Result<Outcome> {
    let decision = match method {
        DifMethod::Mh => mh_dif(ds, config.alpha)?,
        DifMethod::Lr => lr_dif(ds, &LogisticOptions { alpha: config.alpha, ..Default::default() })?,
        DifMethod::Mlr => mlr_dif(
            ds,
            &MultilevelOptions {
                alpha: config.alpha,
                interaction: config.mlr_interaction,
                method: config.glmm_method,
                ..Default::default()
            },
        )?,
        DifMethod::Lord => return Err(Error::Config("lord is not available in simulation studies".into())),
    };
    let estimate = match &decision.details {
        DifDetails::Mh(r) => -r.alpha_hat.ln(),
        _ => decision.effect.unwrap_or(f64::NAN),
    };
    Ok(Outcome { rejected: decision.verdict.is_dif(), estimate })
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    abs_err: f64,
}

impl Moments {
    fn push(&mut self, x: f64, truth: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.abs_err += (x - truth).abs();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: DifMethod,
    /// Replications whose analysis completed.
    pub completed: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// `√(r(1−r)/R)` over completed replications.
    pub mc_se: f64,
    pub estimate_mean: f64,
    pub estimate_sd: f64,
    pub bias: f64,
    pub mean_abs_error: f64,
    /// First few failure messages with their replication index.
    pub failure_messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub replications: usize,
    pub methods: Vec<MethodSummary>,
}

impl SimReport {
    pub fn method(&self, m: DifMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

const MAX_FAILURE_MESSAGES: usize = 5;

/// Runs every replication in parallel and tabulates rejections and estimates.
pub fn run_study(config: &SimConfig, methods: &[DifMethod]) -> Result<SimReport> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    if methods.contains(&DifMethod::Lord) {
        return Err(Error::Config("lord is not available in simulation studies".into()));
    }
    let per_rep: Vec<Vec<std::result::Result<Outcome, String>>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|i| match generate(config, i) {
            Ok(ds) => methods.iter().map(|&m| run_method(&ds, m, config).map_err(|e| e.to_string())).collect(),
            Err(e) => vec![Err(e.to_string()); methods.len()],
        })
        .collect();

    let truth = config.beta[2];
    let mut summaries = Vec::with_capacity(methods.len());
    for (j, &method) in methods.iter().enumerate() {
        let mut moments = Moments::default();
        let mut rejections = 0;
        let mut failures = 0;
        let mut messages = Vec::new();
        for (i, rep) in per_rep.iter().enumerate() {
            match &rep[j] {
                Ok(o) => {
                    rejections += usize::from(o.rejected);
                    moments.push(o.estimate, truth);
                }
                Err(e) => {
                    failures += 1;
                    if messages.len() < MAX_FAILURE_MESSAGES {
                        messages.push(format!("replication {i}: {e}"));
                    }
                }
            }
        }
        let completed = moments.n;
        let (rate, se) = if completed == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let r = rejections as f64 / completed as f64;
            (r, (r * (1.0 - r) / completed as f64).sqrt())
        };
        let sd = if completed > 1 { (moments.m2 / (completed - 1) as f64).sqrt() } else { 0.0 };
        summaries.push(MethodSummary {
            method,
            completed,
            failures,
            rejections,
            rejection_rate: rate,
            mc_se: se,
            estimate_mean: if completed > 0 { moments.mean } else { f64::NAN },
            estimate_sd: sd,
            bias: if completed > 0 { moments.mean - truth } else { f64::NAN },
            mean_abs_error: if completed > 0 { moments.abs_err / completed as f64 } else { f64::NAN },
            failure_messages: messages,
        });
    }
    Ok(SimReport { config: config.clone(), replications: config.replications, methods: summaries })
}
