use serde::{Deserialize, Serialize};

use super::{check_alpha, DifDecision, DifDetails, DifMethod, Verdict, DEFAULT_ALPHA};
use crate::data::DifDataset;
use crate::error::{Error, Result};
use crate::glm::{self, ChiSquareTest, CoefficientTable, DesignSpec, FittedGlm, Level2Covariate, Term, WaldTest};
use crate::glmm::{self, FittedGlmm, GlmmDesign, Method, RandomEffects};

/// How the group and interaction tests combine into a verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// A joint 2-df test of group and interaction must reject first; the
    /// single-coefficient tests then name the kind of DIF.
    #[default]
    Gated,
    /// Interaction test at α, then group test at α, with no joint gate.
    Sequential,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTest {
    #[default]
    Wald,
    /// Likelihood-ratio tests on the nested sequence trait ⊂ +group ⊂ +interaction.
    LikelihoodRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub alpha: f64,
    pub rule: DecisionRule,
    pub test: SignificanceTest,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, rule: DecisionRule::default(), test: SignificanceTest::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticDetails {
    pub full: FittedGlm<f64>,
    /// Main-effects fit, present for likelihood-ratio testing.
    pub main_effects: Option<FittedGlm<f64>>,
    pub trait_only: Option<FittedGlm<f64>>,
    pub group_test: ChiSquareTest,
    pub interaction_test: ChiSquareTest,
    pub joint_test: ChiSquareTest,
    pub rule: DecisionRule,
    pub test: SignificanceTest,
}

fn wald_chi(w: WaldTest) -> ChiSquareTest {
    ChiSquareTest { chi2: w.z * w.z, df: 1, p: w.p }
}

/// Combines the group, interaction and joint tests into a verdict and the
/// headline statistic.
fn decide(
    group: ChiSquareTest,
    interaction: ChiSquareTest,
    joint: ChiSquareTest,
    alpha: f64,
    rule: DecisionRule,
) -> (Verdict, ChiSquareTest) {
    match rule {
        DecisionRule::Gated => {
            let verdict = if joint.p >= alpha {
                Verdict::NoDif
            } else if interaction.p < alpha {
                Verdict::NonuniformDif
            } else if group.p < alpha {
                Verdict::UniformDif
            } else {
                Verdict::Dif
            };
            (verdict, joint)
        }
        DecisionRule::Sequential => {
            if interaction.p < alpha {
                (Verdict::NonuniformDif, interaction)
            } else if group.p < alpha {
                (Verdict::UniformDif, group)
            } else {
                (Verdict::NoDif, group)
            }
        }
    }
}

fn interaction_design() -> DesignSpec {
    DesignSpec::with_interaction()
}

fn group_index<F: CoefficientTable<f64> + ?Sized>(fit: &F, label: &str) -> Result<usize> {
    fit.index_of(label).ok_or_else(|| Error::Precondition(format!("fit has no {label} term")))
}

/// Single-level logistic regression DIF with the trait × group interaction.
pub fn lr_dif(ds: &DifDataset, opts: &LogisticOptions) -> Result<DifDecision> {
    check_alpha(opts.alpha)?;
    ds.require_both_groups()?;
    let full = glm::fit_logistic::<f64>(ds, &interaction_design())?;
    let gi = group_index(&full, "group")?;
    let ii = group_index(&full, "trait:group")?;
    let effect = full.coefficients[gi];
    let (group_test, interaction_test, joint_test, main_effects, trait_only) = match opts.test {
        SignificanceTest::Wald => {
            if !full.converged {
                return Err(Error::Numerical("logistic fit did not converge".into()));
            }
            let g = wald_chi(glm::wald_test(&full, gi)?);
            let i = wald_chi(glm::wald_test(&full, ii)?);
            let j = glm::wald_joint(&full, &[gi, ii])?;
            (g, i, j, None, None)
        }
        SignificanceTest::LikelihoodRatio => {
            let main = glm::fit_logistic::<f64>(ds, &DesignSpec::main_effects())?;
            let base = glm::fit_logistic::<f64>(ds, &DesignSpec::trait_only())?;
            let i = glm::lr_test(&full, &main)?;
            let g = glm::lr_test(&main, &base)?;
            let j = glm::lr_test(&full, &base)?;
            (g, i, j, Some(main), Some(base))
        }
    };
    let (verdict, headline) = decide(group_test, interaction_test, joint_test, opts.alpha, opts.rule);
    Ok(DifDecision {
        method: DifMethod::Lr,
        statistic: headline.chi2,
        df: headline.df,
        p: headline.p,
        effect: Some(effect),
        alpha: opts.alpha,
        verdict,
        details: DifDetails::Lr(Box::new(LogisticDetails {
            full,
            main_effects,
            trait_only,
            group_test,
            interaction_test,
            joint_test,
            rule: opts.rule,
            test: opts.test,
        })),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelOptions {
    pub alpha: f64,
    /// Include the trait × group interaction (Model 2) instead of main effects only (Model 1).
    pub interaction: bool,
    pub method: Method,
    pub random: RandomEffects,
    /// Cluster-level covariates; the flag adds a cross-level interaction with group.
    pub level2: Vec<(Level2Covariate, bool)>,
    pub rule: DecisionRule,
}

impl Default for MultilevelOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            interaction: false,
            method: Method::Laplace,
            random: RandomEffects::default(),
            level2: Vec::new(),
            rule: DecisionRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelDetails {
    pub fit: FittedGlmm<f64>,
    pub group_test: ChiSquareTest,
    pub interaction_test: Option<ChiSquareTest>,
    pub joint_test: Option<ChiSquareTest>,
    pub rule: DecisionRule,
}

/// Multilevel (random-intercept) logistic regression DIF.
pub fn mlr_dif(ds: &DifDataset, opts: &MultilevelOptions) -> Result<DifDecision> {
    check_alpha(opts.alpha)?;
    ds.require_both_groups()?;
    let mut fixed = if opts.interaction { DesignSpec::with_interaction() } else { DesignSpec::main_effects() };
    for (cov, cross) in &opts.level2 {
        fixed = fixed.with_level2(&cov.name, cov.values.clone(), *cross)?;
    }
    let design = GlmmDesign { fixed, random: opts.random };
    let fit = glmm::fit_glmm::<f64>(ds, &design, opts.method)?;
    let gi = group_index(&fit, "group")?;
    let effect = fit.fixed_effects[gi];
    if !fit.converged {
        return Err(Error::Numerical("multilevel fit did not converge".into()));
    }
    let group_test = wald_chi(glm::wald_test(&fit, gi)?);
    let (verdict, headline, interaction_test, joint_test) = if opts.interaction {
        let ii = fit
            .index_of(&Term::TraitGroup.label())
            .ok_or_else(|| Error::Precondition("fit has no trait:group term".into()))?;
        let it = wald_chi(glm::wald_test(&fit, ii)?);
        let jt = glm::wald_joint(&fit, &[gi, ii])?;
        let (v, h) = decide(group_test, it, jt, opts.alpha, opts.rule);
        (v, h, Some(it), Some(jt))
    } else {
        let v = if group_test.p < opts.alpha { Verdict::Dif } else { Verdict::NoDif };
        (v, group_test, None, None)
    };
    Ok(DifDecision {
        method: DifMethod::Mlr,
        statistic: headline.chi2,
        df: headline.df,
        p: headline.p,
        effect: Some(effect),
        alpha: opts.alpha,
        verdict,
        details: DifDetails::Mlr(Box::new(MultilevelDetails {
            fit,
            group_test,
            interaction_test,
            joint_test,
            rule: opts.rule,
        })),
    })
}
