//! Model comparison (Models 0–3) and renderers for reports and DIF decisions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{ClusterTable, DifDataset, Provenance};
use crate::dif::{DifDecision, DifDetails, DifMethod};
use crate::error::{Error, Result};
use crate::glm::{self, CoefficientTable, DesignSpec};
use crate::glmm::{self, GlmmDesign, Method, LOGISTIC_RESIDUAL_VARIANCE};
use crate::sim::SimReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format {other:?} (expected md, csv or json)"))),
        }
    }
}

/// Significance stars at .05 / .01 / .001.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCell {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelColumn {
    pub name: String,
    pub multilevel: bool,
    /// Set when the fit failed; every statistic is then absent.
    pub error: Option<String>,
    pub coefficients: Vec<CoefficientCell>,
    pub tau2: Option<f64>,
    pub sigma2: Option<f64>,
    pub n: Option<usize>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub neg2ll: Option<f64>,
    pub icc: Option<f64>,
    pub r2_marginal: Option<f64>,
    pub r2_conditional: Option<f64>,
    pub converged: Option<bool>,
    pub boundary: Option<bool>,
    pub warnings: Vec<String>,
}

impl ModelColumn {
    fn failed(name: &str, multilevel: bool, err: &Error) -> Self {
        Self {
            name: name.into(),
            multilevel,
            error: Some(err.to_string()),
            coefficients: Vec::new(),
            tau2: None,
            sigma2: None,
            n: None,
            aic: None,
            bic: None,
            neg2ll: None,
            icc: None,
            r2_marginal: None,
            r2_conditional: None,
            converged: None,
            boundary: None,
            warnings: Vec::new(),
        }
    }

    pub fn coef(&self, term: &str) -> Option<&CoefficientCell> {
        self.coefficients.iter().find(|c| c.term == term)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparisonReport {
    pub method: Method,
    pub models: Vec<ModelColumn>,
}

impl ModelComparisonReport {
    pub fn model(&self, name: &str) -> Option<&ModelColumn> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn coefficient_cells<F: CoefficientTable<f64>>(fit: &F) -> Result<Vec<CoefficientCell>> {
    (0..fit.estimates().len())
        .map(|i| {
            let w = glm::wald_test(fit, i)?;
            Ok(CoefficientCell {
                term: fit.term_labels()[i].clone(),
                estimate: w.estimate,
                std_error: w.std_error,
                p: w.p,
                stars: stars(w.p).into(),
            })
        })
        .collect()
}

fn multilevel_column(name: &str, ds: &DifDataset, fixed: DesignSpec, method: Method) -> Result<ModelColumn> {
    let fit = glmm::fit_glmm::<f64>(ds, &GlmmDesign::random_intercept(fixed), method)?;
    let r2 = glmm::r2_nakagawa(&fit, ds)?;
    Ok(ModelColumn {
        name: name.into(),
        multilevel: true,
        error: None,
        coefficients: coefficient_cells(&fit)?,
        tau2: Some(fit.tau2()),
        sigma2: Some(LOGISTIC_RESIDUAL_VARIANCE),
        n: Some(fit.n),
        aic: Some(fit.aic()),
        bic: Some(fit.bic()),
        neg2ll: Some(fit.deviance()),
        icc: Some(glmm::adjusted_icc(&fit)),
        r2_marginal: Some(r2.marginal),
        r2_conditional: Some(r2.conditional),
        converged: Some(fit.converged),
        boundary: Some(fit.boundary),
        warnings: fit.warnings.clone(),
    })
}

fn single_level_column(name: &str, ds: &DifDataset) -> Result<ModelColumn> {
    let design = DesignSpec::with_interaction();
    let fit = glm::fit_logistic::<f64>(ds, &design)?;
    Ok(ModelColumn {
        name: name.into(),
        multilevel: false,
        error: None,
        coefficients: coefficient_cells(&fit)?,
        tau2: None,
        sigma2: None,
        n: Some(fit.n),
        aic: Some(fit.aic()),
        bic: Some(fit.bic()),
        neg2ll: Some(fit.deviance()),
        icc: None,
        r2_marginal: Some(glmm::r2_glm(&fit, ds, &design)?),
        r2_conditional: None,
        converged: Some(fit.converged),
        boundary: None,
        warnings: fit.warnings.clone(),
    })
}

/// Fits Models 0–3. A failing model yields a failed column; the others still run.
pub fn compare_models(ds: &DifDataset, method: Method) -> ModelComparisonReport {
    let specs = [
        ("Model 0", DesignSpec::intercept_only()),
        ("Model 1", DesignSpec::main_effects()),
        ("Model 2", DesignSpec::with_interaction()),
    ];
    let mut models: Vec<ModelColumn> = specs
        .into_iter()
        .map(|(name, spec)| multilevel_column(name, ds, spec, method).unwrap_or_else(|e| ModelColumn::failed(name, true, &e)))
        .collect();
    models.push(single_level_column("Model 3", ds).unwrap_or_else(|e| ModelColumn::failed("Model 3", false, &e)));
    ModelComparisonReport { method, models }
}

const TERM_ROWS: [(&str, &str); 4] =
    [("(Intercept)", "β0"), ("trait", "β1"), ("group", "β2"), ("trait:group", "β3")];

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

fn md_row(out: &mut String, cells: &[String]) {
    out.push_str("| ");
    out.push_str(&cells.join(" | "));
    out.push_str(" |\n");
}

/// Markdown table: one column per model, coefficient rows with SE rows beneath, then fit statistics.
pub fn comparison_markdown(r: &ModelComparisonReport) -> String {
    let mut out = String::new();
    let mut header = vec![String::new()];
    header.extend(r.models.iter().map(|m| m.name.clone()));
    md_row(&mut out, &header);
    let mut sep = vec!["---".to_string()];
    sep.extend(r.models.iter().map(|_| "---:".to_string()));
    md_row(&mut out, &sep);

    let blank_row = |label: &str| {
        let mut v = vec![label.to_string()];
        v.extend(r.models.iter().map(|_| String::new()));
        v
    };
    md_row(&mut out, &blank_row("**Fixed effects**"));
    let mut terms: Vec<(String, String)> = TERM_ROWS.iter().map(|(t, l)| (t.to_string(), l.to_string())).collect();
    for m in &r.models {
        for c in &m.coefficients {
            if !terms.iter().any(|(t, _)| *t == c.term) {
                terms.push((c.term.clone(), c.term.clone()));
            }
        }
    }
    for (term, label) in &terms {
        if !r.models.iter().any(|m| m.coef(term).is_some()) {
            continue;
        }
        let mut est = vec![label.clone()];
        let mut se = vec![String::new()];
        for m in &r.models {
            match m.coef(term) {
                Some(c) => {
                    est.push(format!("{:.2}{}", c.estimate, c.stars));
                    se.push(format!("({:.2})", c.std_error));
                }
                None => {
                    est.push(String::new());
                    se.push(String::new());
                }
            }
        }
        md_row(&mut out, &est);
        md_row(&mut out, &se);
    }
    md_row(&mut out, &blank_row("**Variances**"));
    let stat_row = |label: &str, f: &dyn Fn(&ModelColumn) -> String| {
        let mut v = vec![label.to_string()];
        v.extend(r.models.iter().map(f));
        v
    };
    md_row(&mut out, &stat_row("τ0²", &|m| opt(m.tau2, 2)));
    md_row(&mut out, &stat_row("σ²", &|m| opt(m.sigma2, 2)));
    md_row(&mut out, &stat_row("N", &|m| m.n.map(|n| n.to_string()).unwrap_or_default()));
    md_row(&mut out, &stat_row("AIC", &|m| opt(m.aic, 0)));
    md_row(&mut out, &stat_row("BIC", &|m| opt(m.bic, 0)));
    md_row(&mut out, &stat_row("-2LL", &|m| opt(m.neg2ll, 0)));
    md_row(&mut out, &stat_row("ICC", &|m| opt(m.icc, 3)));
    md_row(&mut out, &stat_row("R²marg", &|m| opt(m.r2_marginal, 3)));
    md_row(&mut out, &stat_row("R²cond", &|m| opt(m.r2_conditional, 3)));
    out.push_str("\n*p<0.05; **p<0.01; ***p<0.001. Standard errors in parentheses.\n");
    for m in &r.models {
        if let Some(e) = &m.error {
            let _ = writeln!(out, "\n{} failed: {e}", m.name);
        }
        for w in &m.warnings {
            let _ = writeln!(out, "\n{} warning: {w}", m.name);
        }
    }
    out
}

/// Long-format CSV: one row per model and quantity.
pub fn comparison_csv(r: &ModelComparisonReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "quantity", "estimate", "std_error", "p", "stars"])?;
    let f = |v: f64| format!("{v}");
    for m in &r.models {
        if let Some(e) = &m.error {
            w.write_record([m.name.as_str(), "error", e.as_str(), "", "", ""])?;
            continue;
        }
        for c in &m.coefficients {
            w.write_record([&m.name, &c.term, &f(c.estimate), &f(c.std_error), &f(c.p), &c.stars])?;
        }
        let stats = [
            ("tau2", m.tau2),
            ("sigma2", m.sigma2),
            ("N", m.n.map(|n| n as f64)),
            ("AIC", m.aic),
            ("BIC", m.bic),
            ("-2LL", m.neg2ll),
            ("ICC", m.icc),
            ("R2_marginal", m.r2_marginal),
            ("R2_conditional", m.r2_conditional),
        ];
        for (name, v) in stats {
            if let Some(v) = v {
                w.write_record([m.name.as_str(), name, &f(v), "", "", ""])?;
            }
        }
    }
    csv_string(w)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("JSON serialization failed: {e}")))
}

/// One-row Markdown table for an MH decision: χ², α̂, Δ̂ and ETS class.
pub fn mh_markdown(d: &DifDecision) -> Result<String> {
    let DifDetails::Mh(r) = &d.details else {
        return Err(Error::Precondition("not a Mantel-Haenszel decision".into()));
    };
    let mut out = String::new();
    md_row(&mut out, &["Measure".into(), "Statistic".into(), "p-value".into()]);
    md_row(&mut out, &["---".into(), "---:".into(), "---:".into()]);
    md_row(&mut out, &["χ²MH".into(), format!("{:.3}{}", r.chi2, stars(r.p)), format!("{:.4}", r.p)]);
    md_row(&mut out, &["αMH".into(), format!("{:.3}", r.alpha_hat), String::new()]);
    md_row(&mut out, &["ΔMH".into(), format!("{:.3}", r.delta_hat), String::new()]);
    md_row(&mut out, &["Effect Size".into(), r.ets_class.to_string(), String::new()]);
    let _ = writeln!(
        out,
        "\nStrata used: {}; skipped: {}. Verdict at α = {}: {}.",
        r.strata_used, r.strata_skipped, d.alpha, d.verdict
    );
    Ok(out)
}

/// Markdown table with one row per labelled Lord decision.
pub fn lord_markdown(rows: &[(String, DifDecision)]) -> String {
    let mut out = String::new();
    md_row(&mut out, &["Item set".into(), "χ²Lord".into(), "p-value".into(), "Verdict".into()]);
    md_row(&mut out, &["---".into(), "---:".into(), "---:".into(), "---".into()]);
    for (label, d) in rows {
        md_row(
            &mut out,
            &[label.clone(), format!("{:.4}{}", d.statistic, stars(d.p)), format!("{:.4}", d.p), d.verdict.to_string()],
        );
    }
    out
}

/// Generic decision table, followed by the coefficient table for logistic methods.
pub fn decision_markdown(d: &DifDecision) -> Result<String> {
    match d.method {
        DifMethod::Mh => return mh_markdown(d),
        DifMethod::Lord => {
            let label = match &d.details {
                DifDetails::Lord(l) => format!("{} ({} items)", l.studied_item, l.items.len()),
                _ => String::new(),
            };
            return Ok(lord_markdown(&[(label, d.clone())]));
        }
        _ => {}
    }
    let mut out = String::new();
    md_row(&mut out, &["Method".into(), "Statistic".into(), "df".into(), "p-value".into(), "Effect".into(), "Verdict".into()]);
    md_row(&mut out, &["---".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into(), "---".into()]);
    md_row(
        &mut out,
        &[
            d.method.to_string(),
            format!("{:.3}{}", d.statistic, stars(d.p)),
            d.df.to_string(),
            format!("{:.4}", d.p),
            d.effect.map(|e| format!("{e:.2}")).unwrap_or_default(),
            d.verdict.to_string(),
        ],
    );
    let cells = match &d.details {
        DifDetails::Lr(l) => coefficient_cells(&l.full)?,
        DifDetails::Mlr(m) => coefficient_cells(&m.fit)?,
        _ => Vec::new(),
    };
    out.push('\n');
    md_row(&mut out, &["Term".into(), "Estimate".into(), "SE".into(), "p-value".into()]);
    md_row(&mut out, &["---".into(), "---:".into(), "---:".into(), "---:".into()]);
    for c in cells {
        md_row(&mut out, &[c.term, format!("{:.2}{}", c.estimate, c.stars), format!("{:.2}", c.std_error), format!("{:.4}", c.p)]);
    }
    if let DifDetails::Mlr(m) = &d.details {
        let _ = writeln!(out, "\nτ0² = {:.2}, ICC = {:.3}", m.fit.tau2(), glmm::adjusted_icc(&m.fit));
    }
    Ok(out)
}

pub fn decision_csv(d: &DifDecision) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "statistic", "df", "p", "effect", "alpha", "verdict"])?;
    w.write_record([
        d.method.to_string(),
        format!("{}", d.statistic),
        d.df.to_string(),
        format!("{}", d.p),
        d.effect.map(|e| format!("{e}")).unwrap_or_default(),
        format!("{}", d.alpha),
        d.verdict.to_string(),
    ])?;
    csv_string(w)
}

/// Respondents per cluster by group and response.
pub fn cluster_table_markdown(t: &ClusterTable) -> String {
    let mut out = String::new();
    md_row(&mut out, &["Cluster".into(), "Reference".into(), "Focal".into(), "No".into(), "Yes".into(), "Total".into()]);
    md_row(&mut out, &["---".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into()]);
    for r in t.rows.iter().chain(std::iter::once(&t.totals())) {
        md_row(
            &mut out,
            &[r.label.clone(), r.reference.to_string(), r.focal.to_string(), r.no.to_string(), r.yes.to_string(), r.total().to_string()],
        );
    }
    out
}

pub fn cluster_table_csv(t: &ClusterTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cluster", "reference", "focal", "no", "yes", "total"])?;
    for r in t.rows.iter().chain(std::iter::once(&t.totals())) {
        w.write_record([
            r.label.clone(),
            r.reference.to_string(),
            r.focal.to_string(),
            r.no.to_string(),
            r.yes.to_string(),
            r.total().to_string(),
        ])?;
    }
    csv_string(w)
}

/// Summary of a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub records: usize,
    pub clusters: usize,
    pub group_counts: [usize; 2],
    pub response_counts: [usize; 2],
    pub provenance: Provenance,
    pub cluster_table: Option<ClusterTable>,
}

impl PrepareSummary {
    pub fn new(ds: &DifDataset) -> Self {
        Self {
            records: ds.len(),
            clusters: ds.cluster_count(),
            group_counts: ds.group_counts(),
            response_counts: ds.response_counts(),
            provenance: ds.provenance().clone(),
            cluster_table: crate::data::cluster_table(ds).ok(),
        }
    }

    pub fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Source: {}", self.provenance.source);
        let _ = writeln!(out, "Rows read: {}", self.provenance.rows_read);
        for (reason, n) in &self.provenance.dropped {
            let _ = writeln!(out, "Dropped ({reason}): {n}");
        }
        let _ = writeln!(out, "Records retained: {}", self.records);
        let _ = writeln!(out, "Clusters: {}", self.clusters);
        let _ = writeln!(out, "Reference / focal: {} / {}", self.group_counts[0], self.group_counts[1]);
        let _ = writeln!(out, "No / yes: {} / {}", self.response_counts[0], self.response_counts[1]);
        if let Some(t) = &self.cluster_table {
            out.push('\n');
            out.push_str(&cluster_table_markdown(t));
        }
        out
    }
}

pub fn sim_markdown(r: &SimReport) -> String {
    let mut out = String::new();
    let c = &r.config;
    let _ = writeln!(
        out,
        "Replications: {}; clusters: {}; τ0² = {}; β = ({}, {}, {}, {}); α = {}; seed = {}\n",
        r.replications, c.n_clusters, c.tau2, c.beta[0], c.beta[1], c.beta[2], c.beta[3], c.alpha, c.seed
    );
    md_row(
        &mut out,
        &[
            "Method".into(),
            "Rejection rate".into(),
            "MC SE".into(),
            "Mean β̂2".into(),
            "SD β̂2".into(),
            "Bias".into(),
            "Completed".into(),
            "Failures".into(),
        ],
    );
    md_row(&mut out, &["---".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into(), "---:".into()]);
    for m in &r.methods {
        md_row(
            &mut out,
            &[
                m.method.to_string(),
                format!("{:.3}", m.rejection_rate),
                format!("{:.3}", m.mc_se),
                format!("{:.3}", m.estimate_mean),
                format!("{:.3}", m.estimate_sd),
                format!("{:.3}", m.bias),
                m.completed.to_string(),
                m.failures.to_string(),
            ],
        );
    }
    for m in &r.methods {
        for msg in &m.failure_messages {
            let _ = writeln!(out, "\n{} failure: {msg}", m.method);
        }
    }
    out
}

pub fn sim_csv(r: &SimReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "rejection_rate",
        "mc_se",
        "estimate_mean",
        "estimate_sd",
        "bias",
        "mean_abs_error",
        "completed",
        "failures",
    ])?;
    for m in &r.methods {
        w.write_record([
            m.method.to_string(),
            format!("{}", m.rejection_rate),
            format!("{}", m.mc_se),
            format!("{}", m.estimate_mean),
            format!("{}", m.estimate_sd),
            format!("{}", m.bias),
            format!("{}", m.mean_abs_error),
            m.completed.to_string(),
            m.failures.to_string(),
        ])?;
    }
    csv_string(w)
}

/// Splits the first Markdown table in `text` into trimmed cells, skipping the
/// alignment row.
pub fn parse_markdown_table(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .skip_while(|l| !l.starts_with('|'))
        .take_while(|l| l.starts_with('|'))
        .filter(|l| !l.trim_matches(|c| c == '|' || c == '-' || c == ':' || c == ' ').is_empty() || l.contains(char::is_alphanumeric))
        .filter(|l| !l.split('|').all(|c| c.trim().chars().all(|ch| ch == '-' || ch == ':')))
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect()
}

/// Parses a rendered number, dropping significance stars and parentheses.
pub fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim_matches(|c| c == '*' || c == '(' || c == ')' || c == ' ').parse().ok()
}
