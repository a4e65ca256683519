//! Small dense least-squares and logistic-regression solvers.
//!
//! Designs in this crate are narrow (stratum dummies, a handful of features),
//! so everything goes through the Gram matrix `XᵀX` and a Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance for declaring a column collinear with the ones before it.
const RANK_TOL: f64 = 1e-10;

/// Row-major design matrix with named columns.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    pub rows: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>) -> Self {
        Design { names, rows: 0, data: Vec::new() }
    }

    pub fn with_capacity(names: Vec<String>, rows: usize) -> Self {
        let cols = names.len();
        Design { names, rows: 0, data: Vec::with_capacity(rows * cols) }
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols());
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.data[i * p..(i + 1) * p]
    }
}

/// Weighted Gram matrix `Xᵀ W X`.
fn gram(x: &Design, weights: Option<&[f64]>) -> DMatrix<f64> {
    let p = x.cols();
    let mut g = DMatrix::<f64>::zeros(p, p);
    for i in 0..x.rows {
        let r = x.row(i);
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let ra = r[a] * w;
            if ra == 0.0 {
                continue;
            }
            for b in a..p {
                g[(a, b)] += ra * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

/// Names of columns that are (numerically) linear combinations of earlier columns.
///
/// Runs an incremental Cholesky on the Gram matrix and flags every pivot whose
/// squared residual norm falls below `RANK_TOL` times the column's own norm.
pub(crate) fn collinear_columns(g: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let p = g.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut keep = vec![false; p];
    let mut bad = Vec::new();
    for j in 0..p {
        let mut d = g[(j, j)];
        for k in 0..j {
            if keep[k] {
                d -= l[(j, k)] * l[(j, k)];
            }
        }
        if g[(j, j)] <= 0.0 || d <= RANK_TOL * g[(j, j)] {
            bad.push(names[j].clone());
            continue;
        }
        keep[j] = true;
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..p {
            let mut s = g[(i, j)];
            for k in 0..j {
                if keep[k] {
                    s -= l[(i, k)] * l[(j, k)];
                }
            }
            l[(i, j)] = s / ljj;
        }
    }
    bad
}

fn invert_spd(g: DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let bad = collinear_columns(&g, names);
    if !bad.is_empty() {
        return Err(Error::numerical(format!(
            "rank-deficient design; collinear columns: {}",
            bad.join(", ")
        )));
    }
    g.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numerical("design Gram matrix is not positive definite"))
}

/// Ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(XᵀX)⁻¹`
    pub bread: DMatrix<f64>,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }

    /// Mean squared residual with `n − p` degrees of freedom (0 when saturated).
    pub fn residual_variance(&self) -> f64 {
        let n = self.residuals.len();
        let p = self.coef.len();
        if n <= p {
            return 0.0;
        }
        self.residuals.iter().map(|e| e * e).sum::<f64>() / (n - p) as f64
    }

    /// HC1 heteroskedasticity-robust covariance of the coefficients.
    pub fn hc1_covariance(&self, x: &Design) -> DMatrix<f64> {
        let n = x.rows;
        let p = x.cols();
        let e2: Vec<f64> = self.residuals.iter().map(|e| e * e).collect();
        let meat = gram(x, Some(&e2));
        let scale = if n > p { n as f64 / (n - p) as f64 } else { 1.0 };
        (&self.bread * meat * &self.bread) * scale
    }
}

/// Least squares of `y` on `x` with a rank check that names collinear columns.
pub fn ols(x: &Design, y: &[f64]) -> Result<OlsFit> {
    if x.rows != y.len() {
        return Err(Error::validation("design and response lengths differ"));
    }
    if x.rows < x.cols() {
        return Err(Error::numerical(format!(
            "rank-deficient design: {} rows for {} columns",
            x.rows,
            x.cols()
        )));
    }
    let bread = invert_spd(gram(x, None), &x.names)?;
    let mut xty = DVector::<f64>::zeros(x.cols());
    for i in 0..x.rows {
        for (a, v) in x.row(i).iter().enumerate() {
            xty[a] += v * y[i];
        }
    }
    let coef = &bread * xty;
    let coef: Vec<f64> = coef.iter().copied().collect();
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::numerical("non-finite least-squares coefficients"));
    }
    let residuals = (0..x.rows)
        .map(|i| y[i] - x.row(i).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    Ok(OlsFit { coef, residuals, bread })
}

/// Settings for the IRLS logistic-regression solver.
#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_ll_tol: f64,
    /// L2 penalty on every coefficient except column 0 (the intercept).
    pub ridge: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { max_iter: 100, grad_tol: 1e-8, rel_ll_tol: 1e-10, ridge: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LogitFit {
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn penalized_ll(x: &Design, y: &[f64], w: &[f64], beta: &[f64], ridge: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..x.rows {
        let eta: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
        ll += w[i] * (y[i] * eta - softplus(eta));
    }
    ll - 0.5 * ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>()
}

/// Weighted (optionally ridge-penalized) logistic regression by Newton/IRLS
/// with step-halving whenever the penalized log-likelihood decreases.
///
/// `y` holds 0/1 labels; `weights` are non-negative observation weights.
pub fn logit_irls(x: &Design, y: &[f64], weights: &[f64], opts: IrlsOptions) -> Result<LogitFit> {
    let p = x.cols();
    let n = x.rows;
    if y.len() != n || weights.len() != n {
        return Err(Error::validation("logit inputs have mismatched lengths"));
    }
    let mut beta = vec![0.0; p];
    // Start the intercept at the weighted log-odds.
    let wsum: f64 = weights.iter().sum();
    let wpos: f64 = weights.iter().zip(y).map(|(w, y)| w * y).sum();
    if wsum > 0.0 && wpos > 0.0 && wpos < wsum && p > 0 {
        let share = wpos / wsum;
        beta[0] = (share / (1.0 - share)).ln();
    }
    let mut ll = penalized_ll(x, y, weights, &beta, opts.ridge);
    for iter in 1..=opts.max_iter {
        let mut grad = DVector::<f64>::zeros(p);
        let mut hw = vec![0.0; n];
        for i in 0..n {
            let r = x.row(i);
            let eta: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            hw[i] = weights[i] * mu * (1.0 - mu);
            let resid = weights[i] * (y[i] - mu);
            for a in 0..p {
                grad[a] += r[a] * resid;
            }
        }
        for a in 1..p {
            grad[a] -= opts.ridge * beta[a];
        }
        if grad.amax() < opts.grad_tol {
            return Ok(LogitFit { coef: beta, iterations: iter - 1, log_likelihood: ll });
        }
        let mut h = gram(x, Some(&hw));
        for a in 1..p {
            h[(a, a)] += opts.ridge;
        }
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                let bad = collinear_columns(&h, &x.names);
                return Err(Error::numerical(if bad.is_empty() {
                    "logit Hessian is singular".to_string()
                } else {
                    format!("logit Hessian is singular; degenerate columns: {}", bad.join(", "))
                }));
            }
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let cll = penalized_ll(x, y, weights, &cand, opts.ridge);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, cll));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, cll)) = accepted else {
            return Err(Error::numerical("logit line search failed to improve the likelihood"));
        };
        if cand.iter().any(|b| !b.is_finite()) {
            return Err(Error::numerical("logit coefficients diverged"));
        }
        let rel = (cll - ll).abs() / ll.abs().max(1e-300);
        beta = cand;
        ll = cll;
        if rel < opts.rel_ll_tol {
            return Ok(LogitFit { coef: beta, iterations: iter, log_likelihood: ll });
        }
    }
    Err(Error::numerical(format!("logit did not converge after {} iterations", opts.max_iter)))
}

/// Sample mean and standard deviation (denominator `n − 1`).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Mean and `sd/√n` standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let (m, sd) = mean_sd(values);
    (m, sd / (values.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(names: &[&str], rows: &[&[f64]]) -> Design {
        let mut d = Design::new(names.iter().map(|s| s.to_string()).collect());
        for r in rows {
            d.push_row(r);
        }
        d
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = design(&["1", "t"], &[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0]]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = ols(&x, &y).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-12);
        assert!((fit.coef[1] - 2.0).abs() < 1e-12);
        assert!(fit.residual_variance() < 1e-20);
    }

    #[test]
    fn ols_names_duplicated_column() {
        let x = design(&["1", "a", "a_copy"], &[&[1.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[1.0, 0.0, 0.0], &[1.0, 1.0, 1.0]]);
        let err = ols(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap_err();
        assert!(err.to_string().contains("a_copy"), "{err}");
    }

    #[test]
    fn hc1_matches_hand_formula_for_mean() {
        // Intercept-only: HC1 variance = n/(n-1) * Σe²/n² = sd²/n.
        let x = design(&["1"], &[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let y = [2.0, -2.0, 4.0, 0.0];
        let fit = ols(&x, &y).unwrap();
        let v = fit.hc1_covariance(&x)[(0, 0)];
        let (_, se) = mean_se(&y);
        assert!((v.sqrt() - se).abs() < 1e-12);
    }

    #[test]
    fn logit_intercept_only_matches_share() {
        let x = design(&["1"], &[&[1.0][..]; 6]);
        let y = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let fit = logit_irls(&x, &y, &[1.0; 6], IrlsOptions::default()).unwrap();
        assert!((sigmoid(fit.coef[0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
    }
}
