//! Maximum-likelihood fits: binary logistic and 3-level proportional odds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use crate::linalg::{inverse_spd, solve_spd};
use crate::models::sigmoid;
use crate::{Error, Result};

pub const FLAG_RIDGE_REFIT: &str = "ridge_refit";
pub const FLAG_NOT_CONVERGED: &str = "not_converged";
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 40;
const RIDGE_LAMBDA: f64 = 1.0;
/// Linear predictors beyond this magnitude signal (quasi-)separation.
const SEPARATION_ETA: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub model: String,
    /// Parameter names; ordinal fits lead with `threshold[1]`, `threshold[2]`.
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    /// Inverse observed (penalized) information.
    pub cov: Vec<Vec<f64>>,
    pub loglik: f64,
    /// Log-likelihood after every accepted step, starting at the initial point.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
    pub dropped: Vec<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl GlmFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn se(&self, i: usize) -> f64 {
        self.cov[i][i].max(0.0).sqrt()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let k = self.coef.len();
        DMatrix::from_fn(k, k, |i, j| self.cov[i][j])
    }
}

fn cov_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Penalty applies to every column except the intercept.
fn penalty_mask(d: &DesignMatrix) -> Vec<f64> {
    d.columns.iter().map(|c| if c == super::design::INTERCEPT { 0.0 } else { 1.0 }).collect()
}

fn logistic_loglik(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    y.iter().zip(eta.iter()).map(|(&yi, &e)| if yi > 0.5 { log_sigmoid(e) } else { log_sigmoid(-e) }).sum()
}

struct NewtonOut {
    beta: DVector<f64>,
    info: DMatrix<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn logistic_newton(x: &DMatrix<f64>, y: &[f64], lambda: f64, mask: &[f64]) -> NewtonOut {
    let p = x.ncols();
    let pen = |b: &DVector<f64>| 0.5 * lambda * b.iter().zip(mask).map(|(v, m)| m * v * v).sum::<f64>();
    let objective = |b: &DVector<f64>| logistic_loglik(x, y, b) - pen(b);
    let mut beta = DVector::zeros(p);
    let mut obj = objective(&beta);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(p, p);
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let eta = x * &beta;
        let mut grad = DVector::zeros(p);
        let mut xw = x.clone();
        for i in 0..x.nrows() {
            let pi = sigmoid(eta[i]);
            let w = pi * (1.0 - pi);
            grad += x.row(i).transpose() * (y[i] - pi);
            xw.row_mut(i).scale_mut(w);
        }
        info = x.transpose() * &xw;
        for j in 0..p {
            grad[j] -= lambda * mask[j] * beta[j];
            info[(j, j)] += lambda * mask[j];
        }
        let Some((step, _)) = solve_spd(&info, &grad, 1e-10) else { break };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let c = objective(&cand);
            if c >= obj {
                beta = cand;
                let delta = c - obj;
                obj = c;
                trace.push(obj);
                accepted = true;
                if delta <= 1e-15 * (1.0 + obj.abs()) || step.amax() * t < 1e-10 {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = grad.amax() < 1e-6 * x.nrows() as f64;
            break;
        }
        if converged {
            break;
        }
    }
    NewtonOut { beta, info, trace, iterations, converged }
}

/// Newton-Raphson with step halving; a non-converged or separated fit is
/// refit with a unit ridge penalty on the non-intercept coefficients.
pub fn fit_logistic_mle(d: &DesignMatrix) -> Result<GlmFit> {
    if d.x.ncols() == 0 {
        return Err(Error::Degenerate("design matrix has no columns".into()));
    }
    let mask = penalty_mask(d);
    let mut flags = Vec::new();
    let mut out = logistic_newton(&d.x, &d.response, 0.0, &mask);
    let separated = (&d.x * &out.beta).amax() > SEPARATION_ETA;
    if !out.converged || separated {
        flags.push(FLAG_RIDGE_REFIT.to_string());
        out = logistic_newton(&d.x, &d.response, RIDGE_LAMBDA, &mask);
    }
    if !out.converged {
        flags.push(FLAG_NOT_CONVERGED.to_string());
    }
    let cov = inverse_spd(&out.info).ok_or_else(|| Error::Degenerate("singular information matrix".into()))?;
    Ok(GlmFit {
        model: "logistic".into(),
        names: d.columns.clone(),
        coef: out.beta.iter().copied().collect(),
        cov: cov_rows(&cov),
        loglik: logistic_loglik(&d.x, &d.response, &out.beta),
        trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
        n: d.n(),
        dropped: d.dropped.clone(),
        flags,
    })
}

fn dens(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// Proportional-odds log-likelihood, gradient and Hessian for
/// `P(Y <= j) = sigmoid(theta_j - x beta)`, parameters `[theta1, theta2, beta]`.
fn ordinal_terms(x: &DMatrix<f64>, y: &[f64], par: &DVector<f64>, derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = x.ncols();
    let k = p + 2;
    let beta = par.rows(2, p).into_owned();
    let eta = x * &beta;
    let (t1, t2) = (par[0], par[1]);
    let mut ll = 0.0;
    let mut g = DVector::zeros(if derivs { k } else { 0 });
    let mut h = DMatrix::zeros(if derivs { k } else { 0 }, if derivs { k } else { 0 });
    for i in 0..x.nrows() {
        let a = t1 - eta[i];
        let b = t2 - eta[i];
        // Derivatives of the row log-likelihood in (a, b).
        let (l, la, lb, laa, lbb, lab) = match y[i].round() as i64 {
            0 => (log_sigmoid(a), 1.0 - sigmoid(a), 0.0, -dens(a), 0.0, 0.0),
            2 => (log_sigmoid(-b), 0.0, -sigmoid(b), 0.0, -dens(b), 0.0),
            _ => {
                let (fa, fb) = (sigmoid(a), sigmoid(b));
                let dd = (fb - fa).max(1e-300);
                let (da, db) = (dens(a), dens(b));
                let (dpa, dpb) = (da * (1.0 - 2.0 * fa), db * (1.0 - 2.0 * fb));
                let l = dd.ln();
                (l, -da / dd, db / dd, -dpa / dd - da * da / (dd * dd), dpb / dd - db * db / (dd * dd), da * db / (dd * dd))
            }
        };
        ll += l;
        if !derivs {
            continue;
        }
        // a = theta1 - x beta, b = theta2 - x beta.
        let xi = x.row(i);
        let lx = -(la + lb);
        g[0] += la;
        g[1] += lb;
        for j in 0..p {
            g[2 + j] += lx * xi[j];
        }
        h[(0, 0)] += laa;
        h[(1, 1)] += lbb;
        h[(0, 1)] += lab;
        let c0 = -(laa + lab);
        let c1 = -(lab + lbb);
        let cxx = laa + 2.0 * lab + lbb;
        for j in 0..p {
            h[(0, 2 + j)] += c0 * xi[j];
            h[(1, 2 + j)] += c1 * xi[j];
            for m in j..p {
                h[(2 + j, 2 + m)] += cxx * xi[j] * xi[m];
            }
        }
    }
    if derivs {
        for r in 0..k {
            for c in 0..r {
                h[(r, c)] = h[(c, r)];
            }
        }
    }
    (ll, g, h)
}

pub fn ordinal_loglik(x: &DMatrix<f64>, y: &[f64], par: &DVector<f64>) -> f64 {
    if par[1] <= par[0] {
        return f64::NEG_INFINITY;
    }
    ordinal_terms(x, y, par, false).0
}

/// Proportional-odds fit by Newton ascent with step halving; every accepted
/// step keeps the thresholds ordered and does not decrease the likelihood.
pub fn fit_ordinal_po(d: &DesignMatrix) -> Result<GlmFit> {
    let y = &d.response;
    let n = y.len() as f64;
    let count = |l: f64| y.iter().filter(|&&v| (v - l).abs() < 0.5).count() as f64;
    let (c0, c1, c2) = (count(0.0), count(1.0), count(2.0));
    if [c0, c1, c2].iter().filter(|&&c| c > 0.0).count() < 2 {
        return Err(Error::Degenerate("confidence response has a single level".into()));
    }
    let p = d.x.ncols();
    let k = p + 2;
    let logit = |q: f64| {
        let q = q.clamp(1e-3, 1.0 - 1e-3);
        (q / (1.0 - q)).ln()
    };
    let mut par = DVector::zeros(k);
    par[0] = logit(c0 / n);
    par[1] = logit((c0 + c1) / n).max(par[0] + 1e-3);
    let mut ll = ordinal_loglik(&d.x, y, &par);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut flags = Vec::new();
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let (_, g, h) = ordinal_terms(&d.x, y, &par, true);
        let Some((step, _)) = solve_spd(&-h, &g, 1e-10) else { break };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &par + &step * t;
            let c = ordinal_loglik(&d.x, y, &cand);
            if c >= ll {
                par = cand;
                let delta = c - ll;
                ll = c;
                trace.push(ll);
                accepted = true;
                converged = delta <= 1e-15 * (1.0 + ll.abs()) || step.amax() * t < 1e-10;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = g.amax() < 1e-6 * n;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        flags.push(FLAG_NOT_CONVERGED.to_string());
    }
    let (_, _, h) = ordinal_terms(&d.x, y, &par, true);
    let info = -h;
    let cov = inverse_spd(&info).ok_or_else(|| Error::Degenerate("singular information matrix".into()))?;
    let mut names = vec!["threshold[1]".to_string(), "threshold[2]".to_string()];
    names.extend(d.columns.iter().cloned());
    Ok(GlmFit {
        model: "ordinal_po".into(),
        names,
        coef: par.iter().copied().collect(),
        cov: cov_rows(&cov),
        loglik: ll,
        trace,
        iterations,
        converged,
        n: d.n(),
        dropped: d.dropped.clone(),
        flags,
    })
}
