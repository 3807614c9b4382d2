use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_alpha, DifDecision, DifDetails, DifMethod, Verdict};
use crate::data::DifDataset;
use crate::dist::{chi2_sf, normal_upper_quantile};
use crate::error::{Error, Result};

/// Traits with more distinct values than this are binned into deciles.
pub const MAX_DISTINCT_LEVELS: usize = 30;

/// Counts at one trait level: `a` reference-Yes, `b` reference-No,
/// `c` focal-Yes, `d` focal-No.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumTable {
    /// Trait value, or the smallest trait value in a binned stratum.
    pub level: f64,
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl StratumTable {
    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn swapped(&self) -> Self {
        Self { level: self.level, a: self.c, b: self.d, c: self.a, d: self.b }
    }

    fn add(&mut self, response: u8, group: u8) {
        match (group, response) {
            (0, 1) => self.a += 1,
            (0, _) => self.b += 1,
            (_, 1) => self.c += 1,
            _ => self.d += 1,
        }
    }
}

/// One table per distinct trait value, or per decile bin when there are
/// more than [`MAX_DISTINCT_LEVELS`] distinct values.
pub fn stratify(ds: &DifDataset) -> Vec<StratumTable> {
    let mut levels: Vec<f64> = ds.records().iter().map(|r| r.trait_score()).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let empty = |level| StratumTable { level, a: 0, b: 0, c: 0, d: 0 };

    if levels.len() <= MAX_DISTINCT_LEVELS {
        let mut map: BTreeMap<usize, StratumTable> = BTreeMap::new();
        for r in ds.records() {
            let k = levels.partition_point(|&v| v < r.trait_score());
            map.entry(k).or_insert_with(|| empty(levels[k])).add(r.response(), r.group());
        }
        return map.into_values().collect();
    }

    // decile cut points on the sorted sample; ties stay in one bin
    let mut sorted: Vec<f64> = ds.records().iter().map(|r| r.trait_score()).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..10).map(|k| sorted[(k * n / 10).min(n - 1)]).collect();
    cuts.dedup();
    let mut map: BTreeMap<usize, StratumTable> = BTreeMap::new();
    for r in ds.records() {
        let k = cuts.partition_point(|&c| c <= r.trait_score());
        let lower = if k == 0 { sorted[0] } else { cuts[k - 1] };
        map.entry(k).or_insert_with(|| empty(lower)).add(r.response(), r.group());
    }
    map.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtsClass {
    A,
    B,
    C,
}

impl std::fmt::Display for EtsClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhResult {
    pub chi2: f64,
    pub p: f64,
    pub alpha_hat: f64,
    pub delta_hat: f64,
    /// Standard error of `ln α̂` (Robins–Breslow–Greenland).
    pub log_odds_se: f64,
    pub ets_class: EtsClass,
    pub strata_used: usize,
    pub strata_skipped: usize,
    pub sum_a: f64,
    pub sum_expected: f64,
    pub sum_variance: f64,
}

/// Mantel-Haenszel χ² with continuity correction, common odds ratio and ETS class.
///
/// `alpha` is the level used for the ETS significance conditions.
pub fn mh_test(tables: &[StratumTable], alpha: f64) -> Result<MhResult> {
    check_alpha(alpha)?;
    let (mut sum_a, mut sum_e, mut sum_v) = (0.0, 0.0, 0.0);
    let (mut r_sum, mut s_sum) = (0.0, 0.0);
    let (mut pr, mut ps_qr, mut qs) = (0.0, 0.0, 0.0);
    let mut used = 0;
    let mut skipped = 0;
    for t in tables {
        let n = t.n() as f64;
        let (a, b, c, d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
        let n_ref = a + b;
        let n_foc = c + d;
        let yes = a + c;
        let no = b + d;
        let var = if n >= 2.0 { n_ref * n_foc * yes * no / (n * n * (n - 1.0)) } else { 0.0 };
        if var <= 0.0 {
            skipped += 1;
            continue;
        }
        used += 1;
        sum_a += a;
        sum_e += n_ref * yes / n;
        sum_v += var;
        let r = a * d / n;
        let s = b * c / n;
        let p = (a + d) / n;
        let q = (b + c) / n;
        r_sum += r;
        s_sum += s;
        pr += p * r;
        ps_qr += p * s + q * r;
        qs += q * s;
    }
    if used == 0 {
        return Err(Error::Degenerate("MH test untestable: every stratum is degenerate".into()));
    }
    if r_sum == 0.0 || s_sum == 0.0 {
        return Err(Error::Degenerate("common odds ratio is 0 or infinite".into()));
    }
    let chi2 = ((sum_a - sum_e).abs() - 0.5).powi(2) / sum_v;
    let p = chi2_sf(chi2, 1);
    let alpha_hat = r_sum / s_sum;
    let delta_hat = -2.35 * alpha_hat.ln();
    let log_odds_se =
        (pr / (2.0 * r_sum * r_sum) + ps_qr / (2.0 * r_sum * s_sum) + qs / (2.0 * s_sum * s_sum)).sqrt();

    let abs_delta = delta_hat.abs();
    let ets_class = if abs_delta < 1.0 || p >= alpha {
        EtsClass::A
    } else {
        let z = (abs_delta - 1.0) / (2.35 * log_odds_se);
        if abs_delta >= 1.5 && z > normal_upper_quantile(alpha) {
            EtsClass::C
        } else {
            EtsClass::B
        }
    };
    Ok(MhResult {
        chi2,
        p,
        alpha_hat,
        delta_hat,
        log_odds_se,
        ets_class,
        strata_used: used,
        strata_skipped: skipped,
        sum_a,
        sum_expected: sum_e,
        sum_variance: sum_v,
    })
}

/// Stratifies on the trait and runs [`mh_test`]; `dif` iff `p < alpha`.
pub fn mh_dif(ds: &DifDataset, alpha: f64) -> Result<DifDecision> {
    ds.require_both_groups()?;
    let res = mh_test(&stratify(ds), alpha)?;
    Ok(DifDecision {
        method: DifMethod::Mh,
        statistic: res.chi2,
        df: 1,
        p: res.p,
        effect: Some(res.delta_hat),
        alpha,
        verdict: if res.p < alpha { Verdict::Dif } else { Verdict::NoDif },
        details: DifDetails::Mh(res),
    })
}
