use serde::{Deserialize, Serialize};

use super::{check_alpha, DifDecision, DifDetails, DifMethod, Verdict, DEFAULT_ALPHA};
use crate::dist::chi2_sf;
use crate::error::{Error, Result};
use crate::irt::{fit_1pl, link_calibrations, CalibrationOptions, GroupFilter, IrtCalibration, ItemResponseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LordOptions {
    pub alpha: f64,
    pub calibration: CalibrationOptions,
}

impl Default for LordOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, calibration: CalibrationOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LordDetails {
    pub studied_item: String,
    /// Items both calibrations retained.
    pub items: Vec<String>,
    pub b_reference: f64,
    /// Focal difficulty after linking to the reference scale.
    pub b_focal: f64,
    pub var_reference: f64,
    pub var_focal: f64,
    pub z: f64,
    pub reference: IrtCalibration<f64>,
    /// Linked focal calibration.
    pub focal: IrtCalibration<f64>,
    pub warnings: Vec<String>,
}

fn calibrate_pair(
    matrix: &ItemResponseMatrix,
    opts: &CalibrationOptions,
) -> Result<(IrtCalibration<f64>, IrtCalibration<f64>)> {
    Ok((fit_1pl(matrix, GroupFilter::Only(0), opts)?, fit_1pl(matrix, GroupFilter::Only(1), opts)?))
}

/// Lord's Wald test for one item under 1PL calibrations of each group.
pub fn lord_test(
    matrix: &ItemResponseMatrix,
    studied: &str,
    item_set: &[String],
    opts: &LordOptions,
) -> Result<DifDecision> {
    check_alpha(opts.alpha)?;
    if !item_set.iter().any(|i| i == studied) {
        return Err(Error::Precondition(format!("item set does not contain the studied item {studied:?}")));
    }
    if item_set.len() < 2 {
        return Err(Error::Precondition("item set needs the studied item and at least one other".into()));
    }
    let sub = matrix.select(item_set)?;
    let (mut reference, mut focal) = calibrate_pair(&sub, &opts.calibration)?;
    let mut warnings: Vec<String> = reference
        .warnings
        .iter()
        .map(|w| format!("reference: {w}"))
        .chain(focal.warnings.iter().map(|w| format!("focal: {w}")))
        .collect();
    if reference.item_names != focal.item_names {
        let common: Vec<String> =
            reference.item_names.iter().filter(|n| focal.item_names.contains(n)).cloned().collect();
        if !common.iter().any(|n| n == studied) {
            return Err(Error::Degenerate(format!("studied item {studied:?} is degenerate in a group")));
        }
        if common.len() < 2 {
            return Err(Error::Degenerate("fewer than 2 items usable in both groups".into()));
        }
        warnings.push(format!("recalibrated both groups on {} shared items", common.len()));
        (reference, focal) = calibrate_pair(&sub.select(&common)?, &opts.calibration)?;
    }
    let linked = link_calibrations(&reference, &focal)?;
    let k = reference
        .item_index(studied)
        .ok_or_else(|| Error::Degenerate(format!("studied item {studied:?} was excluded")))?;
    let (b_r, b_f) = (reference.difficulties[k], linked.difficulties[k]);
    let (v_r, v_f) = (reference.variances[k], linked.variances[k]);
    let z = (b_f - b_r) / (v_f + v_r).sqrt();
    let chi2 = z * z;
    let p = chi2_sf(chi2, 1);
    Ok(DifDecision {
        method: DifMethod::Lord,
        statistic: chi2,
        df: 1,
        p,
        effect: Some(b_f - b_r),
        alpha: opts.alpha,
        verdict: if p < opts.alpha { Verdict::Dif } else { Verdict::NoDif },
        details: DifDetails::Lord(Box::new(LordDetails {
            studied_item: studied.to_string(),
            items: reference.item_names.clone(),
            b_reference: b_r,
            b_focal: b_f,
            var_reference: v_r,
            var_focal: v_f,
            z,
            reference,
            focal: linked,
            warnings,
        })),
    })
}
