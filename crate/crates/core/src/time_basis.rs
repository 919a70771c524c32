//! Temporal Lagrange bases and the reference weight matrices of the DG(k) and
//! CGP(k) time discretizations.
//!
//! All matrices live on the reference interval `[0, 1]`; the step size enters
//! only where the weights are used (mass-type terms scale with `tau`,
//! derivative and jump terms do not).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quadrature::{gauss, gauss_lobatto, gauss_radau_right};

/// Cardinal polynomial basis on a set of distinct nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    /// `1 / prod_{m != i} (x_i - x_m)`
    denominators: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Result<Self> {
        if nodes.is_empty() {
            return invalid("Lagrange basis needs at least one node");
        }
        let mut denominators = Vec::with_capacity(nodes.len());
        for (i, &xi) in nodes.iter().enumerate() {
            let mut d = 1.0;
            for (m, &xm) in nodes.iter().enumerate() {
                if m != i {
                    if xi == xm {
                        return invalid("Lagrange nodes must be distinct");
                    }
                    d *= xi - xm;
                }
            }
            denominators.push(1.0 / d);
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            denominators,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.nodes.len() {
            return invalid(format!(
                "basis index {i} out of range for degree {}",
                self.degree()
            ));
        }
        Ok(())
    }

    pub fn eval(&self, i: usize, t: f64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.value(i, t))
    }

    pub fn deriv(&self, i: usize, t: f64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.derivative(i, t))
    }

    #[inline]
    pub(crate) fn value(&self, i: usize, t: f64) -> f64 {
        let mut v = self.denominators[i];
        for (m, &xm) in self.nodes.iter().enumerate() {
            if m != i {
                v *= t - xm;
            }
        }
        v
    }

    pub(crate) fn derivative(&self, i: usize, t: f64) -> f64 {
        let n = self.nodes.len();
        let mut sum = 0.0;
        for l in 0..n {
            if l == i {
                continue;
            }
            let mut prod = 1.0;
            for m in 0..n {
                if m != i && m != l {
                    prod *= t - self.nodes[m];
                }
            }
            sum += prod;
        }
        sum * self.denominators[i]
    }

    /// Values of all basis functions at `t`.
    pub fn values(&self, t: f64) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i, t)).collect()
    }

    pub fn derivatives(&self, t: f64) -> Vec<f64> {
        (0..self.len()).map(|i| self.derivative(i, t)).collect()
    }
}

/// Free function form of [`LagrangeBasis::eval`].
pub fn lagrange_eval(basis: &LagrangeBasis, i: usize, t: f64) -> Result<f64> {
    basis.eval(i, t)
}

/// Free function form of [`LagrangeBasis::deriv`].
pub fn lagrange_deriv(basis: &LagrangeBasis, i: usize, t: f64) -> Result<f64> {
    basis.deriv(i, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeScheme {
    #[serde(rename = "dg")]
    DG,
    #[serde(rename = "cgp")]
    CGP,
}

impl TimeScheme {
    pub fn min_order(self) -> usize {
        match self {
            TimeScheme::DG => 0,
            TimeScheme::CGP => 1,
        }
    }

    /// Temporal unknowns per interval at order `k`.
    pub fn n_t(self, k: usize) -> usize {
        match self {
            TimeScheme::DG => k + 1,
            TimeScheme::CGP => k,
        }
    }
}

impl std::fmt::Display for TimeScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeScheme::DG => write!(f, "dg"),
            TimeScheme::CGP => write!(f, "cgp"),
        }
    }
}

/// Reference temporal weights of one time discretization.
///
/// DG(k): trial = test = Lagrange basis at the `k+1` right Radau nodes,
/// `m_ij = ∫ξ_j ξ_i`, `a_ij = ∫ξ_j' ξ_i + ξ_j(0) ξ_i(0)`, `alpha_i = ξ_i(0)`.
///
/// CGP(k): trial = Lagrange basis at the `k+1` Lobatto nodes, test = Lagrange
/// basis at the last `k` Lobatto nodes. The first trial function carries the
/// continuity constraint and its couplings are split off into
/// `beta_i = ∫ξ_1 ψ_i` and `alpha_i = ∫ξ_1' ψ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWeights {
    pub scheme: TimeScheme,
    pub k: usize,
    pub n_t: usize,
    pub m_tau: DMatrix<f64>,
    pub a_tau: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    /// Full trial basis on `[0, 1]`. For CGP its first function belongs to the
    /// constrained value carried over from the previous interval.
    pub trial: LagrangeBasis,
}

impl TemporalWeights {
    pub fn new(scheme: TimeScheme, k: usize) -> Result<Self> {
        match scheme {
            TimeScheme::DG => dg_weights(k),
            TimeScheme::CGP => cgp_weights(k),
        }
    }

    /// Reference positions of the unknown temporal values within an interval.
    pub fn dof_nodes(&self) -> &[f64] {
        match self.scheme {
            TimeScheme::DG => self.trial.nodes(),
            TimeScheme::CGP => &self.trial.nodes()[1..],
        }
    }

    /// Index into the unknowns of the value at the interval end (`t̂ = 1`).
    pub fn last(&self) -> usize {
        self.n_t - 1
    }

    /// Coefficients `(c_start, c)` such that the discrete solution at reference
    /// time `t` equals `c_start * u_start + sum_j c_j u^j`. `c_start` is zero
    /// for DG.
    pub fn eval_coefficients(&self, t: f64) -> (f64, Vec<f64>) {
        let vals = self.trial.values(t);
        match self.scheme {
            TimeScheme::DG => (0.0, vals),
            TimeScheme::CGP => (vals[0], vals[1..].to_vec()),
        }
    }
}

/// Weights of the discontinuous Galerkin scheme of order `k`.
pub fn dg_weights(k: usize) -> Result<TemporalWeights> {
    let radau = gauss_radau_right(k + 1)?;
    let basis = LagrangeBasis::new(&radau.points)?;
    let quad = gauss(k + 2)?;
    let n = k + 1;
    let mut m = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    for (&t, &w) in quad.points.iter().zip(&quad.weights) {
        let v = basis.values(t);
        let d = basis.derivatives(t);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w * v[j] * v[i];
                a[(i, j)] += w * d[j] * v[i];
            }
        }
    }
    let at_zero = basis.values(0.0);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] += at_zero[j] * at_zero[i];
        }
    }
    Ok(TemporalWeights {
        scheme: TimeScheme::DG,
        k,
        n_t: n,
        m_tau: m,
        a_tau: a,
        alpha: DVector::from_vec(at_zero),
        beta: DVector::zeros(n),
        trial: basis,
    })
}

/// Weights of the continuous Galerkin-Petrov scheme of order `k >= 1`.
pub fn cgp_weights(k: usize) -> Result<TemporalWeights> {
    if k == 0 {
        return invalid("CGP order must be at least 1");
    }
    let lobatto = gauss_lobatto(k + 1)?;
    let trial = LagrangeBasis::new(&lobatto.points)?;
    let test = LagrangeBasis::new(&lobatto.points[1..])?;
    let quad = gauss(k + 1)?;
    let n = k;
    let mut m = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    let mut alpha = DVector::zeros(n);
    let mut beta = DVector::zeros(n);
    for (&t, &w) in quad.points.iter().zip(&quad.weights) {
        let xi = trial.values(t);
        let dxi = trial.derivatives(t);
        let psi = test.values(t);
        for i in 0..n {
            beta[i] += w * xi[0] * psi[i];
            alpha[i] += w * dxi[0] * psi[i];
            for j in 1..=n {
                m[(i, j - 1)] += w * xi[j] * psi[i];
                a[(i, j - 1)] += w * dxi[j] * psi[i];
            }
        }
    }
    Ok(TemporalWeights {
        scheme: TimeScheme::CGP,
        k,
        n_t: n,
        m_tau: m,
        a_tau: a,
        alpha,
        beta,
        trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lagrange_examples() {
        let lin = LagrangeBasis::new(&[0.0, 1.0]).unwrap();
        assert_relative_eq!(lagrange_eval(&lin, 0, 0.25).unwrap(), 0.75);
        for t in [0.0, 0.3, 0.9] {
            assert_relative_eq!(lagrange_deriv(&lin, 1, t).unwrap(), 1.0);
        }
        let quad = LagrangeBasis::new(&[0.0, 0.5, 1.0]).unwrap();
        assert_relative_eq!(lagrange_eval(&quad, 1, 0.25).unwrap(), 0.75, epsilon = 1e-15);
        assert!(lagrange_eval(&quad, 3, 0.1).is_err());
        assert!(lagrange_deriv(&quad, 3, 0.1).is_err());
    }

    #[test]
    fn lagrange_cardinal_partition_and_fd_derivative() {
        for n in 2..=8 {
            let nodes = gauss_lobatto(n).unwrap().points;
            let b = LagrangeBasis::new(&nodes).unwrap();
            for i in 0..n {
                for (j, &x) in nodes.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((b.value(i, x) - expect).abs() < 1e-13);
                }
            }
            for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
                let s: f64 = b.values(t).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                for i in 0..n {
                    let h = 1e-6;
                    let fd = (b.value(i, t + h) - b.value(i, t - h)) / (2.0 * h);
                    assert!((fd - b.derivative(i, t)).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn dg0_is_backward_euler() {
        let w = dg_weights(0).unwrap();
        assert_relative_eq!(w.m_tau[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w.a_tau[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w.alpha[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cgp1_weights() {
        let w = cgp_weights(1).unwrap();
        assert_relative_eq!(w.m_tau[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w.a_tau[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(w.beta[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w.alpha[0], -1.0, epsilon = 1e-15);
        assert!(cgp_weights(0).is_err());
    }

    #[test]
    fn constant_consistency() {
        for k in 0..=8 {
            let w = dg_weights(k).unwrap();
            let ones = DVector::from_element(w.n_t, 1.0);
            let r = &w.a_tau * &ones - &w.alpha;
            assert!(r.amax() < 1e-12, "DG({k}) A·1 != alpha");
        }
        for k in 1..=8 {
            let w = cgp_weights(k).unwrap();
            let ones = DVector::from_element(w.n_t, 1.0);
            let r = &w.a_tau * &ones + &w.alpha;
            assert!(r.amax() < 1e-12, "CGP({k}) A·1 != -alpha");
            let test = LagrangeBasis::new(&w.trial.nodes()[1..]).unwrap();
            let g = gauss(k + 1).unwrap();
            for i in 0..k {
                let int_psi = g.integrate(|t| test.value(i, t));
                let lhs: f64 = (0..k).map(|j| w.m_tau[(i, j)]).sum();
                assert!((lhs - (int_psi - w.beta[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_construction() {
        for k in 1..=6 {
            assert_eq!(dg_weights(k).unwrap(), dg_weights(k).unwrap());
            assert_eq!(cgp_weights(k).unwrap(), cgp_weights(k).unwrap());
        }
    }
}
