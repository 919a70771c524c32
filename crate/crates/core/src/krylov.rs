//! Restarted, right-preconditioned GMRES.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result, StmgError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_iter: 1000,
            restart: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
    /// Residual norm estimate after each iteration, starting with ‖r₀‖.
    pub residual_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` with right preconditioning `A M⁻¹ y = b`, `x = M⁻¹ y`.
/// Stops once the residual is at most `max(abs_tol, rel_tol ‖r₀‖)`.
/// Not converging within `max_iter` is reported in the stats, not as an error.
pub fn gmres<A, P>(mut apply: A, mut precond: P, b: &[f64], x: &mut [f64], settings: &GmresSettings) -> Result<SolveStats>
where
    A: FnMut(&[f64], &mut [f64]) -> Result<()>,
    P: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = b.len();
    check_len(n, x.len())?;
    if settings.restart == 0 {
        return invalid("GMRES restart length must be positive");
    }
    if !(settings.abs_tol >= 0.0 && settings.rel_tol >= 0.0) {
        return invalid("GMRES tolerances must be non-negative");
    }
    let nan = |what: &str| StmgError::NumericFailure(format!("non-finite value in GMRES {what}"));
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];

    let residual = |apply: &mut A, x: &[f64], r: &mut [f64]| -> Result<f64> {
        apply(x, r)?;
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        Ok(norm(r))
    };

    let r0 = residual(&mut apply, x, &mut r)?;
    if !r0.is_finite() {
        return Err(nan("initial residual"));
    }
    let threshold = settings.abs_tol.max(settings.rel_tol * r0);
    let mut stats = SolveStats {
        initial_residual: r0,
        final_residual: r0,
        residual_history: vec![r0],
        ..Default::default()
    };
    if r0 <= threshold {
        stats.converged = true;
        return Ok(stats);
    }
    let m = settings.restart;
    let mut beta = r0;
    while stats.iterations < settings.max_iter {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut j = 0;
        let mut res = beta;
        while j < m && stats.iterations < settings.max_iter {
            precond(&basis[j], &mut z)?;
            apply(&z, &mut w)?;
            let w_norm0 = norm(&w);
            if !w_norm0.is_finite() {
                return Err(nan("Krylov vector"));
            }
            for (i, v) in basis.iter().enumerate() {
                let d = dot(&w, v);
                h[i][j] = d;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= d * b);
            }
            let mut wn = norm(&w);
            // second Gram-Schmidt pass when orthogonality is visibly lost
            let loss = basis.iter().map(|v| dot(&w, v).abs()).fold(0.0, f64::max) / wn.max(f64::MIN_POSITIVE);
            if loss > 1e-10 {
                for (i, v) in basis.iter().enumerate() {
                    let d = dot(&w, v);
                    h[i][j] += d;
                    w.iter_mut().zip(v).for_each(|(a, b)| *a -= d * b);
                }
                wn = norm(&w);
            }
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            if d == 0.0 {
                return Err(StmgError::NumericFailure("GMRES Hessenberg breakdown".into()));
            }
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            res = g[j + 1].abs();
            if !res.is_finite() {
                return Err(nan("residual estimate"));
            }
            stats.iterations += 1;
            stats.residual_history.push(res);
            j += 1;
            let happy = wn <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE);
            if res <= threshold || happy {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back substitution and update x += M⁻¹ V y
        let mut y = vec![0.0; j];
        for i in (0..j).rev() {
            let s: f64 = (i + 1..j).map(|l| h[i][l] * y[l]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut vy = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            vy.iter_mut().zip(v).for_each(|(a, b)| *a += yi * b);
        }
        precond(&vy, &mut z)?;
        x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        stats.final_residual = res;
        if res <= threshold {
            stats.converged = true;
            break;
        }
        beta = residual(&mut apply, x, &mut r)?;
        if !beta.is_finite() {
            return Err(nan("restart residual"));
        }
        stats.final_residual = beta;
        if beta <= threshold {
            stats.converged = true;
            break;
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(nan("solution"));
    }
    Ok(stats)
}
