use serde::Serialize;

use super::AnalyticsError;

/// Relative pivot threshold below which a column is treated as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Mlr,
    Mpr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub model: Model,
    /// Term names, intercept first.
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// `y = b0 + b1*x1 + b2*x2 + ...` over the named predictors.
pub fn fit_mlr(y: &[f64], predictors: &[(&str, &[f64])]) -> Result<RegressionFit, AnalyticsError> {
    let columns: Vec<(String, Vec<f64>)> = predictors.iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect();
    let (coefficients, r_squared) = fit_least_squares(y, &columns)?;
    Ok(RegressionFit {
        model: Model::Mlr,
        terms: std::iter::once("1".to_string())
            .chain(columns.into_iter().map(|c| c.0))
            .collect(),
        coefficients,
        r_squared,
        n: y.len(),
    })
}

/// Degree-2 polynomial in two predictors: `1, X, Y, X^2, Y^2, X*Y`.
pub fn fit_mpr(y: &[f64], x: (&str, &[f64]), z: (&str, &[f64])) -> Result<RegressionFit, AnalyticsError> {
    if x.1.len() != y.len() || z.1.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(y.len(), x.1.len().min(z.1.len())));
    }
    let (xn, xv) = x;
    let (zn, zv) = z;
    let columns = vec![
        (xn.to_string(), xv.to_vec()),
        (zn.to_string(), zv.to_vec()),
        (format!("{xn}^2"), xv.iter().map(|a| a * a).collect()),
        (format!("{zn}^2"), zv.iter().map(|b| b * b).collect()),
        (format!("{xn}*{zn}"), xv.iter().zip(zv).map(|(a, b)| a * b).collect()),
    ];
    let (coefficients, r_squared) = fit_least_squares(y, &columns)?;
    Ok(RegressionFit {
        model: Model::Mpr,
        terms: std::iter::once("1".to_string())
            .chain(columns.into_iter().map(|c| c.0))
            .collect(),
        coefficients,
        r_squared,
        n: y.len(),
    })
}

/// Ordinary least squares with an implicit intercept.
///
/// Columns are centred and scaled to unit norm, the normal equations are
/// factored with a diagonally pivoted Cholesky, and one round of iterative
/// refinement is applied. Returns coefficients (intercept first) and R².
pub fn fit_least_squares(y: &[f64], columns: &[(String, Vec<f64>)]) -> Result<(Vec<f64>, f64), AnalyticsError> {
    let n = y.len();
    let p = columns.len();
    for (_, c) in columns {
        if c.len() != n {
            return Err(AnalyticsError::LengthMismatch(n, c.len()));
        }
    }
    if n < p + 2 {
        return Err(AnalyticsError::TooFewSamples { needed: p + 2, have: n });
    }
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    if y.iter().all(|v| *v == y[0]) {
        // constant response: every slope is zero
        let mut beta = vec![0.0; p + 1];
        beta[0] = y[0];
        return Ok((beta, 0.0));
    }

    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut constant = Vec::new();
    for (name, c) in columns {
        let m = c.iter().sum::<f64>() / nf;
        let centred: Vec<f64> = c.iter().map(|v| v - m).collect();
        let s = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
        if s == 0.0 || c.iter().all(|v| *v == c[0]) {
            constant.push(name.clone());
        }
        means.push(m);
        scales.push(s);
        z.push(centred.into_iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect());
    }
    if !constant.is_empty() {
        return Err(AnalyticsError::Degenerate { terms: constant });
    }
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut g = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let d = dot(&z[i], &z[j]);
            g[i][j] = d;
            g[j][i] = d;
        }
    }
    let chol = PivotedCholesky::factor(&g).map_err(|dependent| AnalyticsError::Degenerate {
        terms: dependent.into_iter().map(|i| columns[i].0.clone()).collect(),
    })?;

    let b: Vec<f64> = z.iter().map(|zi| dot(zi, &yc)).collect();
    let mut gamma = chol.solve(&b);
    // one step of refinement against the actual residual
    let resid: Vec<f64> = (0..n)
        .map(|r| yc[r] - (0..p).map(|j| z[j][r] * gamma[j]).sum::<f64>())
        .collect();
    let rhs: Vec<f64> = z.iter().map(|zi| dot(zi, &resid)).collect();
    let delta = chol.solve(&rhs);
    for (g, d) in gamma.iter_mut().zip(delta) {
        *g += d;
    }

    let slopes: Vec<f64> = gamma.iter().zip(&scales).map(|(g, s)| g / s).collect();
    let intercept = y_mean - slopes.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let mut sse = 0.0;
    let mut sst = 0.0;
    for r in 0..n {
        let fit = intercept + (0..p).map(|j| slopes[j] * columns[j].1[r]).sum::<f64>();
        sse += (y[r] - fit).powi(2);
        sst += (y[r] - y_mean).powi(2);
    }
    let r2 = if sst > 0.0 {
        (1.0 - sse / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut beta = Vec::with_capacity(p + 1);
    beta.push(intercept);
    beta.extend(slopes);
    Ok((beta, r2))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `P G Pᵀ = L Lᵀ` with diagonal pivoting.
struct PivotedCholesky {
    l: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl PivotedCholesky {
    /// On rank deficiency returns the original indices of the columns that
    /// could not be pivoted in.
    fn factor(g: &[Vec<f64>]) -> Result<Self, Vec<usize>> {
        let p = g.len();
        let mut a: Vec<Vec<f64>> = g.to_vec();
        let mut perm: Vec<usize> = (0..p).collect();
        let scale = (0..p).map(|i| g[i][i]).fold(0.0, f64::max);
        let tol = RANK_TOL * scale.max(f64::MIN_POSITIVE);
        let mut l = vec![vec![0.0; p]; p];
        for k in 0..p {
            // residual diagonals after k eliminations
            let (piv, best) = (k..p)
                .map(|i| (i, a[i][i] - (0..k).map(|m| l[i][m] * l[i][m]).sum::<f64>()))
                .fold((k, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= tol {
                let mut dependent: Vec<usize> = perm[k..].to_vec();
                dependent.sort();
                return Err(dependent);
            }
            if piv != k {
                perm.swap(k, piv);
                a.swap(k, piv);
                for row in a.iter_mut() {
                    row.swap(k, piv);
                }
                l.swap(k, piv);
            }
            let d = best.sqrt();
            l[k][k] = d;
            for i in k + 1..p {
                let s = a[i][k] - (0..k).map(|m| l[i][m] * l[k][m]).sum::<f64>();
                l[i][k] = s / d;
            }
        }
        Ok(Self { l, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = b.len();
        let pb: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        let mut w = vec![0.0; p];
        for i in 0..p {
            w[i] = (pb[i] - (0..i).map(|j| self.l[i][j] * w[j]).sum::<f64>()) / self.l[i][i];
        }
        let mut v = vec![0.0; p];
        for i in (0..p).rev() {
            v[i] = (w[i] - (i + 1..p).map(|j| self.l[j][i] * v[j]).sum::<f64>()) / self.l[i][i];
        }
        let mut out = vec![0.0; p];
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }
}
