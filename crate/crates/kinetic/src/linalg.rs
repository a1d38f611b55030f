//! Restarted GMRES for matrix-free operators with a user inner product.

use crate::error::{KineticError, Result};

/// Outcome of a GMRES solve.
#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Settings for [`gmres`].
#[derive(Clone, Copy, Debug)]
pub struct GmresSettings {
    pub restart: usize,
    pub max_iterations: usize,
    pub rel_tol: f64,
}

impl Default for GmresSettings {
    fn default() -> Self {
        GmresSettings {
            restart: 80,
            max_iterations: 2000,
            rel_tol: 1e-10,
        }
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Solves `A x = b` starting from `x0`.
///
/// `apply` evaluates `A x` and may fail; `inner` is the scalar product in
/// which residuals are minimised.
pub fn gmres<A, I>(
    mut apply: A,
    inner: I,
    b: &[f64],
    x0: Option<&[f64]>,
    settings: GmresSettings,
) -> Result<GmresOutcome>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    I: Fn(&[f64], &[f64]) -> f64,
{
    let n = b.len();
    let norm = |v: &[f64]| inner(v, v).max(0.0).sqrt();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let m = settings.restart.max(1);
    let mut total = 0;
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let mut rel = beta / bnorm;
        if rel <= settings.rel_tol || total >= settings.max_iterations {
            return Ok(GmresOutcome {
                solution: x,
                iterations: total,
                relative_residual: rel,
                converged: rel <= settings.rel_tol,
            });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        for j in 0..m {
            let mut w = apply(&basis[j])?;
            total += 1;
            let mut col = vec![0.0; j + 2];
            // modified Gram-Schmidt, repeated once for stability
            for _ in 0..2 {
                for (k, q) in basis.iter().enumerate() {
                    let c = inner(&w, q);
                    col[k] += c;
                    axpy(-c, q, &mut w);
                }
            }
            let hn = norm(&w);
            col[j + 1] = hn;
            for k in 0..j {
                let t = cs[k] * col[k] + sn[k] * col[k + 1];
                col[k + 1] = -sn[k] * col[k] + cs[k] * col[k + 1];
                col[k] = t;
            }
            let d = col[j].hypot(col[j + 1]);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (col[j] / d, col[j + 1] / d) };
            cs.push(c);
            sn.push(s);
            col[j] = d;
            col[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(col);
            rel = g[j + 1].abs() / bnorm;
            let breakdown = hn <= 1e-300;
            if !breakdown {
                basis.push(w.iter().map(|v| v / hn).collect());
            }
            if rel <= settings.rel_tol || breakdown || total >= settings.max_iterations || j + 1 == m {
                let k = j + 1;
                let mut y = vec![0.0; k];
                for i in (0..k).rev() {
                    let mut s = g[i];
                    for (l, yl) in y.iter().enumerate().take(k).skip(i + 1) {
                        s -= h[l][i] * yl;
                    }
                    if h[i][i] == 0.0 {
                        return Err(KineticError::Singular("GMRES Hessenberg pivot".into()));
                    }
                    y[i] = s / h[i][i];
                }
                for (i, yi) in y.iter().enumerate() {
                    axpy(*yi, &basis[i], &mut x);
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 30;
        let a = |x: &[f64]| -> Result<Vec<f64>> {
            Ok((0..n)
                .map(|i| {
                    let mut s = 3.0 * x[i];
                    if i > 0 {
                        s -= x[i - 1];
                    }
                    if i + 2 < n {
                        s += 0.5 * x[i + 2];
                    }
                    s
                })
                .collect())
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let ip = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let s = GmresSettings {
            restart: 7,
            max_iterations: 500,
            rel_tol: 1e-12,
        };
        let out = gmres(a, ip, &b, None, s).unwrap();
        assert!(out.converged);
        let r = a(&out.solution).unwrap();
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }
}
