//! One-dimensional quadrature rules on the reference interval `[0, 1]`.
//!
//! Nodes are computed on `[-1, 1]` as roots of Legendre-type polynomials
//! (bracketed by sign changes, then polished by safeguarded Newton steps) and
//! mapped affinely to `[0, 1]`. Weights are rescaled so that they sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureKind {
    /// Gauss-Radau with the fixed node at the right endpoint.
    GaussRadauRight,
    GaussLobatto,
    Gauss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: QuadratureKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Polynomial degree integrated exactly by this rule.
    pub fn exactness_degree(&self) -> usize {
        let n = self.len();
        match self.kind {
            QuadratureKind::Gauss => 2 * n - 1,
            QuadratureKind::GaussRadauRight => 2 * n - 2,
            QuadratureKind::GaussLobatto => 2 * n - 3,
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for m in 2..=n {
        let mf = m as f64;
        let p2 = ((2.0 * mf - 1.0) * x * p1 - (mf - 1.0) * p0) / mf;
        p0 = p1;
        p1 = p2;
    }
    // P_n' from the three-term relation; valid away from x = ±1.
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() > 1e-300 {
        nf * (x * p1 - p0) / (x * x - 1.0)
    } else {
        0.5 * nf * (nf + 1.0) * x.powi(n as i32 + 1)
    };
    (p1, dp)
}

/// Second derivative of `P_n` from the Legendre differential equation.
fn legendre_second(n: usize, x: f64) -> f64 {
    let (p, dp) = legendre(n, x);
    let nf = n as f64;
    (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x)
}

/// All roots of `f` in the open interval `(-1, 1)` found by sign-change scanning
/// followed by safeguarded Newton iteration.
fn interior_roots(
    expected: usize,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
) -> Vec<f64> {
    if expected == 0 {
        return Vec::new();
    }
    let samples = 400 * (expected + 1);
    let mut roots = Vec::with_capacity(expected);
    let xs: Vec<f64> = (1..samples)
        .map(|i| -1.0 + 2.0 * i as f64 / samples as f64)
        .collect();
    for w in xs.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (mut fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa * fb > 0.0 {
            continue;
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..NEWTON_MAX_ITER {
            let fx = f(x);
            if fx == 0.0 {
                break;
            }
            if fa * fx < 0.0 {
                b = x;
            } else {
                a = x;
                fa = fx;
            }
            let d = df(x);
            let mut next = x - fx / d;
            if !next.is_finite() || next <= a || next >= b {
                next = 0.5 * (a + b);
            }
            let step = (next - x).abs();
            x = next;
            if step < NEWTON_TOL {
                break;
            }
        }
        roots.push(x);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    debug_assert_eq!(roots.len(), expected, "root scan missed a root");
    roots
}

fn to_unit_interval(points: Vec<f64>, weights: Vec<f64>, kind: QuadratureKind) -> QuadratureRule {
    let mut pairs: Vec<(f64, f64)> = points
        .into_iter()
        .zip(weights)
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (points, mut weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    QuadratureRule {
        points,
        weights,
        kind,
    }
}

/// `n`-point Gauss-Legendre rule, exact for degree `2n - 1`.
pub fn gauss(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return invalid("Gauss rule needs at least one point");
    }
    let xs = interior_roots(n, |x| legendre(n, x).0, |x| legendre(n, x).1);
    let ws = xs
        .iter()
        .map(|&x| {
            let dp = legendre(n, x).1;
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    Ok(to_unit_interval(xs, ws, QuadratureKind::Gauss))
}

/// `n`-point right-sided Gauss-Radau rule; the last node is exactly `1`.
pub fn gauss_radau_right(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return invalid("Gauss-Radau rule needs at least one point");
    }
    let nf = n as f64;
    // Free nodes are the roots of P_{n-1} - P_n other than x = 1.
    let mut xs = interior_roots(
        n - 1,
        |x| legendre(n - 1, x).0 - legendre(n, x).0,
        |x| legendre(n - 1, x).1 - legendre(n, x).1,
    );
    let mut ws: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let p = legendre(n - 1, x).0;
            (1.0 + x) / (nf * nf * p * p)
        })
        .collect();
    xs.push(1.0);
    ws.push(2.0 / (nf * nf));
    let mut rule = to_unit_interval(xs, ws, QuadratureKind::GaussRadauRight);
    *rule.points.last_mut().expect("nonempty") = 1.0;
    Ok(rule)
}

/// `n`-point Gauss-Lobatto rule with both endpoints, exact for degree `2n - 3`.
pub fn gauss_lobatto(n: usize) -> Result<QuadratureRule> {
    if n < 2 {
        return invalid("Gauss-Lobatto rule needs at least two points");
    }
    let nf = n as f64;
    let m = n - 1;
    let mut xs = vec![-1.0];
    xs.extend(interior_roots(
        n - 2,
        |x| legendre(m, x).1,
        |x| legendre_second(m, x),
    ));
    xs.push(1.0);
    let ws = xs
        .iter()
        .map(|&x| {
            let p = legendre(m, x).0;
            2.0 / (nf * (nf - 1.0) * p * p)
        })
        .collect();
    let mut rule = to_unit_interval(xs, ws, QuadratureKind::GaussLobatto);
    rule.points[0] = 0.0;
    *rule.points.last_mut().expect("nonempty") = 1.0;
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn check_moments(rule: &QuadratureRule) {
        for q in 0..=rule.exactness_degree() {
            let exact = 1.0 / (q as f64 + 1.0);
            let approx = rule.integrate(|t| t.powi(q as i32));
            assert!(
                (approx - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                "{:?} n={} q={q}: {approx} vs {exact}",
                rule.kind,
                rule.len()
            );
        }
    }

    #[test]
    fn radau_small_rules() {
        let r1 = gauss_radau_right(1).unwrap();
        assert_eq!(r1.points, vec![1.0]);
        assert_relative_eq!(r1.weights[0], 1.0, epsilon = 1e-15);
        let r2 = gauss_radau_right(2).unwrap();
        assert_relative_eq!(r2.points[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r2.points[1], 1.0);
        assert_relative_eq!(r2.weights[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(r2.weights[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn lobatto_small_rules() {
        let l2 = gauss_lobatto(2).unwrap();
        assert_eq!(l2.points, vec![0.0, 1.0]);
        assert_relative_eq!(l2.weights[0], 0.5, epsilon = 1e-15);
        let l3 = gauss_lobatto(3).unwrap();
        assert_relative_eq!(l3.points[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(l3.weights[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(l3.weights[1], 2.0 / 3.0, epsilon = 1e-15);
        let l4 = gauss_lobatto(4).unwrap();
        let s = 1.0 / 5f64.sqrt();
        assert_relative_eq!(l4.points[1], 0.5 * (1.0 - s), epsilon = 1e-15);
        assert_relative_eq!(l4.points[2], 0.5 * (1.0 + s), epsilon = 1e-15);
        check_moments(&l4);
    }

    #[test]
    fn exactness_up_to_thirteen_points() {
        for n in 1..=13 {
            check_moments(&gauss(n).unwrap());
            check_moments(&gauss_radau_right(n).unwrap());
            if n >= 2 {
                check_moments(&gauss_lobatto(n).unwrap());
            }
        }
    }

    #[test]
    fn structural_invariants() {
        for n in 2..=13 {
            for rule in [
                gauss(n).unwrap(),
                gauss_radau_right(n).unwrap(),
                gauss_lobatto(n).unwrap(),
            ] {
                let sum: f64 = rule.weights.iter().sum();
                assert!((sum - 1.0).abs() < 1e-14, "{:?} n={n} weight sum {sum}", rule.kind);
                assert!(rule.weights.iter().all(|&w| w > 0.0));
                assert!(rule.points.windows(2).all(|w| w[0] < w[1]));
                assert!(rule.points.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
            assert_eq!(*gauss_radau_right(n).unwrap().points.last().unwrap(), 1.0);
            let l = gauss_lobatto(n).unwrap();
            assert_eq!(l.points[0], 0.0);
            assert_eq!(*l.points.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn argument_errors() {
        assert!(gauss(0).is_err());
        assert!(gauss_radau_right(0).is_err());
        assert!(gauss_lobatto(1).is_err());
    }
}
