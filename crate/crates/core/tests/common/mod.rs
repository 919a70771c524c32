//! Dense oracles shared by the integration test targets.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_xoshiro::Xoshiro256PlusPlus;
use stmg_core::mesh::{coefficient_shm, make_cartesian, Extent};
use stmg_core::space_fem::{FeSpace, OperatorKind};
use stmg_core::st_operator::{Equation, SpaceTimeOperator, SpaceTimeVector};
use stmg_core::time_basis::{TemporalWeights, TimeScheme};

pub fn space(dim: usize, cells: usize, p: usize, perturbed: bool) -> Arc<FeSpace> {
    let h = make_cartesian(dim, &Extent::cube(dim, 0.0, 1.0), 0, cells).unwrap();
    let mut m = h.finest().clone();
    if perturbed {
        m = m.perturb(0.15, 11).unwrap();
    }
    Arc::new(FeSpace::new(m, p, coefficient_shm(dim)).unwrap())
}

/// Free-DoF restrictions of the assembled mass and stiffness matrices.
pub fn free_matrices(s: &FeSpace) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
    let free: Vec<usize> = (0..s.n_dofs()).filter(|&i| !s.dofmap.is_constrained(i)).collect();
    let m = s.assemble_sparse(OperatorKind::Mass).to_dense();
    let a = s.assemble_sparse(OperatorKind::Stiffness).to_dense();
    let pick = |d: &DMatrix<f64>| DMatrix::from_fn(free.len(), free.len(), |i, j| d[(free[i], free[j])]);
    (free.clone(), pick(&m), pick(&a))
}

pub fn kron(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x.kronecker(y)
}

pub fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

/// Temporal coefficient pairs `(X, Y)` of block `(s, j)` written out per
/// equation and scheme.
pub fn oracle_blocks(eq: Equation, w: &TemporalWeights, tau: f64, c: usize) -> Vec<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let nt = w.n_t;
    let l = nt - 1;
    let m = &w.m_tau;
    let a = &w.a_tau;
    let mi = m.clone().try_inverse().unwrap();
    let alpha = &w.alpha;
    let beta = &w.beta;
    let el = unit(nt, l);
    let z = DMatrix::zeros(nt, nt);
    let mut b = vec![vec![(z.clone(), z.clone()); c]; c];
    let cgp = w.scheme == TimeScheme::CGP;
    for s in 0..c {
        b[s][s].0 = m * tau;
        b[s][s].1 = match eq {
            Equation::Heat => a.clone(),
            Equation::Wave => a * &mi * a / tau,
        };
    }
    match (eq, cgp) {
        (Equation::Heat, false) => {
            for s in 1..c {
                b[s][s - 1].1 = -alpha * el.transpose();
            }
        }
        (Equation::Heat, true) => {
            for s in 1..c {
                b[s][s - 1].0 = beta * tau * el.transpose();
                b[s][s - 1].1 = alpha * el.transpose();
            }
        }
        (Equation::Wave, false) => {
            let mia_row = (&mi * a).row(l).transpose();
            let mialpha = (&mi * alpha)[l];
            for s in 1..c {
                b[s][s - 1].1 = -(alpha * mia_row.transpose()) / tau - (a * &mi * alpha) * el.transpose() / tau;
                if s >= 2 {
                    b[s][s - 2].1 = alpha * el.transpose() * (mialpha / tau);
                }
            }
        }
        (Equation::Wave, true) => {
            let mia_row = (&mi * a).row(l).transpose() / tau;
            let g = -(&mi * beta)[l];
            let zz = (&mi * alpha)[l] / tau;
            let alpha_a = alpha - a * &mi * beta;
            for i in 1..c {
                b[i][i - 1].0 = beta * tau * el.transpose();
                b[i][i - 1].1 = (a * &mi * alpha) * el.transpose() / tau;
                for j in 0..i {
                    let mut wv = &mia_row * g.powi((i - 1 - j) as i32);
                    if j + 2 <= i {
                        wv[l] += zz * g.powi((i - 2 - j) as i32);
                    }
                    b[i][j].1 += &alpha_a * wv.transpose();
                }
            }
        }
    }
    b
}

pub fn oracle_matrix(eq: Equation, w: &TemporalWeights, tau: f64, c: usize, m: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let nf = m.nrows();
    let nt = w.n_t;
    let blk = nt * nf;
    let mut d = DMatrix::zeros(c * blk, c * blk);
    for (s, row) in oracle_blocks(eq, w, tau, c).iter().enumerate() {
        for (j, (x, y)) in row.iter().enumerate() {
            let k = kron(x, a) + kron(y, m);
            d.view_mut((s * blk, j * blk), (blk, blk)).copy_from(&k);
        }
    }
    d
}

pub fn random_st(op: &SpaceTimeOperator, rng: &mut Xoshiro256PlusPlus) -> SpaceTimeVector {
    let mut v = op.zeros();
    v.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    v
}

/// Free entries of a space-time vector in oracle layout.
pub fn gather(v: &SpaceTimeVector, free: &[usize]) -> DVector<f64> {
    let mut out = Vec::new();
    for s in 0..v.n_steps {
        for i in 0..v.n_t {
            out.extend(free.iter().map(|&f| v.block(s, i)[f]));
        }
    }
    DVector::from_vec(out)
}

pub fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

