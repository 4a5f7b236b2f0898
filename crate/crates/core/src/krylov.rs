//! Restarted GMRES for matrix-free linear solves.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmresConfig {
    pub restart: usize,
    pub max_iterations: usize,
    /// Stop once `‖b − A x‖ ≤ rel_tol ‖b‖ + abs_tol`.
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { restart: 60, max_iterations: 2000, rel_tol: 1e-12, abs_tol: 1e-15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` with `A` given by `apply`, starting from zero.
pub fn gmres(mut apply: impl FnMut(&[f64]) -> Vec<f64>, b: &[f64], cfg: &GmresConfig) -> GmresOutcome {
    let n = b.len();
    let mut x = vec![0.0; n];
    let target = cfg.rel_tol * norm(b) + cfg.abs_tol;
    let mut iterations = 0;
    let mut r: Vec<f64> = b.to_vec();
    let mut beta = norm(&r);
    if beta <= target || n == 0 {
        return GmresOutcome { x, iterations, residual: beta, converged: true };
    }
    let restart = cfg.restart.max(1).min(n.max(1));
    while iterations < cfg.max_iterations {
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut used = 0;
        for k in 0..restart {
            iterations += 1;
            let mut w = apply(&basis[k]);
            for (i, v) in basis.iter().enumerate() {
                let hik = dot(&w, v);
                h[i][k] = hik;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= hik * b);
            }
            // One reorthogonalization pass.
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[i][k] += c;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            if den == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / den;
                sn[k] = h[k + 1][k] / den;
            }
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            used = k + 1;
            let breakdown = wn <= 1e-300;
            if g[k + 1].abs() <= target || iterations >= cfg.max_iterations || breakdown {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut yk = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|j| h[i][j] * yk[j]).sum();
            yk[i] = if h[i][i] != 0.0 { (g[i] - s) / h[i][i] } else { 0.0 };
        }
        for (i, c) in yk.iter().enumerate() {
            x.iter_mut().zip(&basis[i]).for_each(|(a, b)| *a += c * b);
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        beta = norm(&r);
        if beta <= target {
            return GmresOutcome { x, iterations, residual: beta, converged: true };
        }
    }
    GmresOutcome { x, iterations, residual: beta, converged: false }
}
