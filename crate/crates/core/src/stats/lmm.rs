use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::design::Design;
use crate::error::{Error, Result};

const THETA_MAX: f64 = 1e6;
const REL_TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;
const LRT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "REML")]
    Reml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub criterion: Criterion,
    /// Fix θ = τ²/σ² instead of estimating it.
    pub fixed_theta: Option<f64>,
}

impl FitOptions {
    pub fn ml() -> Self {
        FitOptions { criterion: Criterion::Ml, fixed_theta: None }
    }

    pub fn reml() -> Self {
        FitOptions { criterion: Criterion::Reml, fixed_theta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub cov_beta: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub tau2: f64,
    pub theta: f64,
    pub deviance_ml: f64,
    pub deviance_reml: f64,
    pub criterion: Criterion,
    pub n_obs: usize,
    pub n_items: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Design columns dropped before fitting (all zero).
    pub dropped: Vec<String>,
    /// Fingerprint of the response and grouping, for LRT same-data checks.
    pub data_key: u64,
}

/// Sufficient statistics per group for closed-form V⁻¹ products.
struct Suff {
    p: usize,
    n: usize,
    sizes: Vec<f64>,
    xtx: Vec<DMatrix<f64>>,
    xsum: Vec<DVector<f64>>,
    xty: Vec<DVector<f64>>,
    ysum: Vec<f64>,
    yty: f64,
}

impl Suff {
    fn new(x: &DMatrix<f64>, y: &[f64], groups: &[usize], n_groups: usize) -> Self {
        let p = x.ncols();
        let mut s = Suff {
            p,
            n: y.len(),
            sizes: vec![0.0; n_groups],
            xtx: vec![DMatrix::zeros(p, p); n_groups],
            xsum: vec![DVector::zeros(p); n_groups],
            xty: vec![DVector::zeros(p); n_groups],
            ysum: vec![0.0; n_groups],
            yty: 0.0,
        };
        for (i, (&g, &yi)) in groups.iter().zip(y).enumerate() {
            let row = x.row(i).transpose();
            s.sizes[g] += 1.0;
            s.xtx[g] += &row * row.transpose();
            s.xsum[g] += &row;
            s.xty[g] += &row * yi;
            s.ysum[g] += yi;
            s.yty += yi * yi;
        }
        s
    }
}

struct Eval {
    dev_ml: f64,
    dev_reml: f64,
    beta: DVector<f64>,
    xvx_inv: DMatrix<f64>,
    q: f64,
}

fn evaluate(s: &Suff, theta: f64) -> Result<Eval> {
    let mut xvx = DMatrix::zeros(s.p, s.p);
    let mut xvy = DVector::zeros(s.p);
    let mut yvy = s.yty;
    let mut logdet_v = 0.0;
    for g in 0..s.sizes.len() {
        let c = theta / (1.0 + s.sizes[g] * theta);
        xvx += &s.xtx[g] - &s.xsum[g] * s.xsum[g].transpose() * c;
        xvy += &s.xty[g] - &s.xsum[g] * (s.ysum[g] * c);
        yvy -= c * s.ysum[g] * s.ysum[g];
        logdet_v += (1.0 + s.sizes[g] * theta).ln();
    }
    let chol = xvx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Stats("singular design: X'V⁻¹X is not positive definite".into()))?;
    let beta = chol.solve(&xvy);
    let q = (yvy - beta.dot(&xvy)).max(0.0);
    let n = s.n as f64;
    let np = (s.n - s.p) as f64;
    let logdet_xvx = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let two_pi = 2.0 * std::f64::consts::PI;
    let dev_ml = n * (1.0 + (two_pi * q / n).ln()) + logdet_v;
    let dev_reml = np * (1.0 + (two_pi * q / np).ln()) + logdet_v + logdet_xvx;
    Ok(Eval {
        dev_ml,
        dev_reml,
        beta,
        xvx_inv: chol.inverse(),
        q,
    })
}

fn objective(s: &Suff, theta: f64, c: Criterion) -> Result<f64> {
    let e = evaluate(s, theta)?;
    Ok(match c {
        Criterion::Ml => e.dev_ml,
        Criterion::Reml => e.dev_reml,
    })
}

/// Brent's minimizer on `[a, b]`; returns (x, f(x), iterations).
fn brent(mut f: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64, usize, bool)> {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for iter in 1..=MAX_ITER {
        let m = 0.5 * (a + b);
        let tol1 = REL_TOL * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok((x, fx, iter, true));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1 * d.signum() };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x, fx, MAX_ITER, false))
}

/// Grid over {0} ∪ log-spaced points of (0, 1e6].
fn theta_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((0..=48).map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / 48.0)));
    g
}

/// Random-intercept linear mixed model fitted by profiling β and σ² out
/// of the likelihood and optimizing θ = τ²/σ².
pub fn fit_mixed(design: &Design, opts: FitOptions) -> Result<MixedModelFit> {
    let (x, names, dropped) = design.fit_matrix();
    let p = x.ncols();
    let n = design.y.len();
    if n <= p + 1 {
        return Err(Error::Stats(format!("need more than {} observations for {p} fixed effects, got {n}", p + 1)));
    }
    let s = Suff::new(&x, &design.y, &design.groups, design.n_groups());
    let (theta, iterations, converged) = match opts.fixed_theta {
        Some(t) if t >= 0.0 && t.is_finite() => (t, 0, true),
        Some(t) => return Err(Error::Stats(format!("fixed theta must be finite and non-negative, got {t}"))),
        None => {
            let grid = theta_grid();
            let vals = grid.iter().map(|&t| objective(&s, t, opts.criterion)).collect::<Result<Vec<_>>>()?;
            let best = (0..grid.len()).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
            let lo = grid[best.saturating_sub(1)];
            let hi = grid[(best + 1).min(grid.len() - 1)];
            let (t, ft, it, ok) = brent(|t| objective(&s, t, opts.criterion), lo, hi)?;
            if !ok {
                return Err(Error::Numerical(format!("theta search did not converge in {MAX_ITER} iterations")));
            }
            // boundary and grid candidates can beat the interior search
            let mut cands = vec![(t, ft), (grid[best], vals[best])];
            if lo == 0.0 {
                cands.push((0.0, vals[0]));
            }
            let (t, _) = cands.into_iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0))).unwrap();
            (t.min(THETA_MAX), it, true)
        }
    };
    let e = evaluate(&s, theta)?;
    let denom = match opts.criterion {
        Criterion::Ml => n as f64,
        Criterion::Reml => (n - p) as f64,
    };
    let sigma2 = e.q / denom;
    if sigma2 <= 0.0 || !sigma2.is_finite() {
        return Err(Error::Numerical(format!("residual variance {sigma2} is not positive")));
    }
    let cov = &e.xvx_inv * sigma2;
    let se: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(MixedModelFit {
        terms: names,
        beta: e.beta.iter().copied().collect(),
        se,
        cov_beta: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        sigma2,
        tau2: theta * sigma2,
        theta,
        deviance_ml: e.dev_ml,
        deviance_reml: e.dev_reml,
        criterion: opts.criterion,
        n_obs: n,
        n_items: design.n_groups(),
        converged,
        iterations,
        dropped,
        data_key: design.data_key(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub term: String,
    pub t: f64,
    pub p: f64,
    /// Standard error was zero; the p-value is a placeholder.
    pub degenerate: bool,
}

pub const WALD_METHOD: &str = "Wald z (normal approximation)";

/// Two-sided normal p-value of a z statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * n.cdf(-z.abs())).min(1.0)
}

pub fn wald_tests(fit: &MixedModelFit) -> Vec<WaldTest> {
    fit.terms
        .iter()
        .zip(fit.beta.iter().zip(&fit.se))
        .map(|(term, (&b, &se))| {
            if se == 0.0 {
                WaldTest { term: term.clone(), t: if b == 0.0 { 0.0 } else { f64::INFINITY.copysign(b) }, p: 0.0, degenerate: true }
            } else {
                let t = b / se;
                WaldTest { term: term.clone(), t, p: normal_two_sided(t), degenerate: false }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Upper-tail probability of a chi-square variable.
pub fn chi2_upper_tail(chi2: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Stats("chi-square df must be at least 1".into()));
    }
    if chi2 <= 0.0 {
        return Ok(1.0);
    }
    let d = ChiSquared::new(df as f64).map_err(|e| Error::Stats(e.to_string()))?;
    Ok(d.sf(chi2).clamp(0.0, 1.0))
}

/// Likelihood-ratio test of a restricted model against a fuller one.
pub fn lrt(restricted: &MixedModelFit, full: &MixedModelFit) -> Result<LrtResult> {
    if restricted.criterion != Criterion::Ml || full.criterion != Criterion::Ml {
        return Err(Error::Stats("likelihood-ratio tests over fixed effects need ML fits, not REML".into()));
    }
    if restricted.data_key != full.data_key || restricted.n_obs != full.n_obs {
        return Err(Error::Stats("models were fitted to different data".into()));
    }
    if let Some(t) = restricted.terms.iter().find(|t| !full.terms.contains(t)) {
        return Err(Error::Stats(format!("models are not nested: {t} is missing from the full model")));
    }
    let df = full.terms.len() - restricted.terms.len();
    if df == 0 {
        if restricted.terms.len() == full.terms.len() && (restricted.deviance_ml - full.deviance_ml).abs() <= LRT_SLACK {
            return Ok(LrtResult { chi2: 0.0, df: 0, p_value: 1.0 });
        }
        return Err(Error::Stats("models are not nested: same number of parameters".into()));
    }
    let mut chi2 = restricted.deviance_ml - full.deviance_ml;
    if chi2 < 0.0 {
        if chi2 < -LRT_SLACK {
            return Err(Error::Numerical(format!("negative likelihood-ratio statistic {chi2}")));
        }
        chi2 = 0.0;
    }
    Ok(LrtResult { chi2, df, p_value: chi2_upper_tail(chi2, df)? })
}

/// Correlation matrix of the fixed-effect estimates.
pub fn fixed_corr(fit: &MixedModelFit) -> Vec<Vec<f64>> {
    let p = fit.beta.len();
    let c = &fit.cov_beta;
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        let d = (c[i][i] * c[j][j]).sqrt();
                        let cij = 0.5 * (c[i][j] + c[j][i]);
                        if d > 0.0 { cij / d } else { 0.0 }
                    }
                })
                .collect()
        })
        .collect()
}
