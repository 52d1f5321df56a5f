//! Random-intercept linear mixed models, Wald and likelihood-ratio tests,
//! and fit reports.

mod design;
mod lmm;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use design::{build_design, Design, Factor, Observation, RegressionSpec, Term, WordIndexMode};
pub use lmm::{
    chi2_upper_tail, fit_mixed, fixed_corr, lrt, normal_two_sided, wald_tests, Criterion, FitOptions, LrtResult,
    MixedModelFit, WaldTest, WALD_METHOD,
};

/// Serializable summary of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub formula: String,
    pub criterion: Criterion,
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub p_method: String,
    pub tau2: f64,
    pub sigma2: f64,
    pub deviance_ml: f64,
    pub deviance_reml: f64,
    pub fixed_corr: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_items: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

impl FitReport {
    pub fn new(spec: &RegressionSpec, fit: &MixedModelFit) -> Self {
        let wald = wald_tests(fit);
        FitReport {
            formula: spec.formula(),
            criterion: fit.criterion,
            terms: fit.terms.clone(),
            beta: fit.beta.clone(),
            se: fit.se.clone(),
            t: wald.iter().map(|w| w.t).collect(),
            p: wald.iter().map(|w| w.p).collect(),
            p_method: WALD_METHOD.into(),
            tau2: fit.tau2,
            sigma2: fit.sigma2,
            deviance_ml: fit.deviance_ml,
            deviance_reml: fit.deviance_reml,
            fixed_corr: fixed_corr(fit),
            n_obs: fit.n_obs,
            n_items: fit.n_items,
            converged: fit.converged,
            dropped: fit.dropped.clone(),
        }
    }

    pub fn coefficient(&self, term: &str) -> Option<(f64, f64)> {
        self.terms.iter().position(|t| t == term).map(|i| (self.beta[i], self.p[i]))
    }

    pub fn markdown(&self, title: &str) -> String {
        let mut s = format!("### {title}\n\n`{}` ({:?}, n = {}, items = {})\n\n", self.formula, self.criterion, self.n_obs, self.n_items);
        s.push_str("| term | β | SE | z | p |\n|---|---:|---:|---:|---:|\n");
        for i in 0..self.terms.len() {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.3} | {} |",
                self.terms[i],
                self.beta[i],
                self.se[i],
                self.t[i],
                format_p(self.p[i])
            );
        }
        let _ = writeln!(
            s,
            "\nτ² = {:.4}, σ² = {:.4}, deviance (ML) = {:.3}, deviance (REML) = {:.3}. p-values: {}.",
            self.tau2, self.sigma2, self.deviance_ml, self.deviance_reml, self.p_method
        );
        s
    }
}

pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Significance marker used in the report tables.
pub fn stars(p: f64) -> &'static str {
    if p < 0.05 {
        "*"
    } else {
        ""
    }
}
