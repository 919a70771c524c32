//! Space-time block operators for batches of time steps.
//!
//! Each step carries `n_t` temporal unknowns per spatial DoF. The diagonal
//! block is `τ m ⊗ A_h + K ⊗ M_h` with `K = a` (heat) or `K = a m⁻¹ a / τ`
//! (wave, velocity condensed out). Steps are coupled through the value (and
//! for the wave equation the velocity) at the end of the previous step; the
//! batched operator is block lower triangular and is applied by running that
//! recursion on cached spatial products `M_h u` and `A_h u`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result, StmgError};
use crate::space_fem::{FeSpace, OperatorKind};
use crate::time_basis::{TemporalWeights, TimeScheme};

/// Upper bound on the number of blocks pushed through one batched spatial pass.
const LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Heat,
    Wave,
}

impl std::fmt::Display for Equation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Equation::Heat => write!(f, "heat"),
            Equation::Wave => write!(f, "wave"),
        }
    }
}

/// Block vector over `n_steps × n_t` spatial blocks, step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeVector {
    pub n_steps: usize,
    pub n_t: usize,
    pub n_x: usize,
    pub data: Vec<f64>,
}

impl SpaceTimeVector {
    pub fn zeros(n_steps: usize, n_t: usize, n_x: usize) -> Self {
        Self {
            n_steps,
            n_t,
            n_x,
            data: vec![0.0; n_steps * n_t * n_x],
        }
    }

    pub fn from_vec(n_steps: usize, n_t: usize, n_x: usize, data: Vec<f64>) -> Result<Self> {
        check_len(n_steps * n_t * n_x, data.len())?;
        Ok(Self {
            n_steps,
            n_t,
            n_x,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, s: usize, i: usize) -> usize {
        (s * self.n_t + i) * self.n_x
    }

    pub fn block(&self, s: usize, i: usize) -> &[f64] {
        let o = self.offset(s, i);
        &self.data[o..o + self.n_x]
    }

    pub fn block_mut(&mut self, s: usize, i: usize) -> &mut [f64] {
        let o = self.offset(s, i);
        &mut self.data[o..o + self.n_x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_steps == other.n_steps && self.n_t == other.n_t && self.n_x == other.n_x
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Values carried from the end of the previous batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub u_prev: Vec<f64>,
    /// Empty for the heat equation.
    pub v_prev: Vec<f64>,
}

impl StepState {
    pub fn zeros(equation: Equation, n_x: usize) -> Self {
        Self {
            u_prev: vec![0.0; n_x],
            v_prev: match equation {
                Equation::Heat => Vec::new(),
                Equation::Wave => vec![0.0; n_x],
            },
        }
    }
}

/// Scalar source or boundary data `g(x, t)`.
pub type SpaceTimeFn<'a> = &'a (dyn Fn(&[f64], f64) -> f64 + Sync);

/// Coupling of one step to the end of the previous step:
/// `y_s += h_mu M u_prev + h_au A u_prev + h_mv M v_prev`, and the velocity at
/// the end of step `s` is `ve_u · U_s + ve_u_prev u_prev + ve_v_prev v_prev`.
#[derive(Debug, Clone)]
struct History {
    h_mu: DVector<f64>,
    h_au: DVector<f64>,
    h_mv: DVector<f64>,
    ve_u: DVector<f64>,
    ve_u_prev: f64,
    ve_v_prev: f64,
}

/// Batched space-time operator of one level.
#[derive(Debug, Clone)]
pub struct SpaceTimeOperator {
    pub equation: Equation,
    pub weights: TemporalWeights,
    pub tau: f64,
    pub n_steps: usize,
    pub space: Arc<FeSpace>,
    /// Coefficient of `A_h` in the diagonal block (`τ m`).
    pub stiff_coef: DMatrix<f64>,
    /// Coefficient of `M_h` in the diagonal block.
    pub mass_coef: DMatrix<f64>,
    /// Nodal velocities: `V = vel_u U + vel_u_prev u_prev + vel_v_prev v_prev`.
    vel_u: DMatrix<f64>,
    vel_u_prev: DVector<f64>,
    vel_v_prev: DVector<f64>,
    hist: History,
}

impl SpaceTimeOperator {
    pub fn new(
        equation: Equation,
        weights: TemporalWeights,
        tau: f64,
        n_steps: usize,
        space: Arc<FeSpace>,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return invalid(format!("step size must be positive, got {tau}"));
        }
        if n_steps == 0 {
            return invalid("batch must contain at least one step");
        }
        let nt = weights.n_t;
        let m = &weights.m_tau;
        let a = &weights.a_tau;
        let alpha = &weights.alpha;
        let beta = &weights.beta;
        let m_inv = m.clone().lu().try_inverse().ok_or_else(|| {
            StmgError::NumericFailure("temporal mass matrix is singular".into())
        })?;
        log::debug!(
            "temporal mass condition number {:.3e}",
            m.norm() * m_inv.norm()
        );
        let last = nt - 1;
        let stiff_coef = m * tau;
        let zeros = DVector::zeros(nt);
        let mi_a = &m_inv * a;
        let mi_alpha = &m_inv * alpha;
        let mi_beta = &m_inv * beta;
        let cgp = weights.scheme == TimeScheme::CGP;
        let (mass_coef, hist, vel_u, vel_u_prev, vel_v_prev) = match equation {
            Equation::Heat => {
                let hist = History {
                    h_mu: if cgp { alpha.clone() } else { -alpha },
                    h_au: if cgp { beta * tau } else { zeros.clone() },
                    h_mv: zeros.clone(),
                    ve_u: zeros.clone(),
                    ve_u_prev: 0.0,
                    ve_v_prev: 0.0,
                };
                (a.clone(), hist, DMatrix::zeros(nt, nt), zeros.clone(), zeros.clone())
            }
            Equation::Wave => {
                let sign = if cgp { 1.0 } else { -1.0 };
                let a_mi_alpha = a * &mi_alpha / tau;
                let hist = History {
                    h_mu: &a_mi_alpha * sign,
                    h_au: if cgp { beta * tau } else { zeros.clone() },
                    h_mv: if cgp { alpha - a * &mi_beta } else { -alpha },
                    ve_u: mi_a.row(last).transpose() / tau,
                    ve_u_prev: sign * mi_alpha[last] / tau,
                    ve_v_prev: if cgp { -mi_beta[last] } else { 0.0 },
                };
                let vel_v_prev = if cgp { -&mi_beta } else { zeros.clone() };
                (
                    a * &mi_a / tau,
                    hist,
                    &mi_a / tau,
                    &mi_alpha * (sign / tau),
                    vel_v_prev,
                )
            }
        };
        Ok(Self {
            equation,
            weights,
            tau,
            n_steps,
            space,
            stiff_coef,
            mass_coef,
            vel_u,
            vel_u_prev,
            vel_v_prev,
            hist,
        })
    }

    pub fn n_t(&self) -> usize {
        self.weights.n_t
    }

    pub fn n_x(&self) -> usize {
        self.space.n_dofs()
    }

    pub fn len(&self) -> usize {
        self.n_steps * self.n_t() * self.n_x()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(&self) -> SpaceTimeVector {
        SpaceTimeVector::zeros(self.n_steps, self.n_t(), self.n_x())
    }

    fn check(&self, v: &SpaceTimeVector) -> Result<()> {
        check_len(self.len(), v.len())?;
        if v.n_steps != self.n_steps || v.n_t != self.n_t() {
            return invalid("space-time vector layout does not match the operator");
        }
        Ok(())
    }

    /// `y = S u` for the batch with homogeneous history and Dirichlet rows
    /// replaced by the identity.
    pub fn apply(&self, u: &SpaceTimeVector, y: &mut SpaceTimeVector) -> Result<()> {
        self.check(u)?;
        self.check(y)?;
        self.sweep(Some(u), None, true, y)
    }

    /// The batch recursion `y = S u − H(u, state)`, where `H` collects the
    /// couplings to the end values of previous steps (or of `state` for the
    /// first step). With `constrained`, Dirichlet entries of `u` are ignored
    /// and the corresponding rows of `y` equal `u`.
    fn sweep(
        &self,
        u: Option<&SpaceTimeVector>,
        state: Option<&StepState>,
        constrained: bool,
        y: &mut SpaceTimeVector,
    ) -> Result<()> {
        let nx = self.n_x();
        let nt = self.n_t();
        let wave = self.equation == Equation::Wave;
        let space = &self.space;
        let mut mu_prev = vec![0.0; nx];
        let mut au_prev = vec![0.0; nx];
        let mut mv_prev = vec![0.0; nx];
        let mut have_prev = false;
        if let Some(st) = state {
            check_len(nx, st.u_prev.len())?;
            space.apply_pair(&st.u_prev, &mut mu_prev, &mut au_prev)?;
            if wave {
                check_len(nx, st.v_prev.len())?;
                space.apply(OperatorKind::Mass, &st.v_prev, &mut mv_prev)?;
            }
            have_prev = true;
        }
        // spatial products of every block do not depend on the recursion
        let len = self.n_steps * nt * nx;
        let (mut mu_all, mut au_all) = (vec![0.0; len], vec![0.0; len]);
        if let Some(u) = u {
            let mut buf = u.data.clone();
            if constrained {
                buf.chunks_mut(nx).for_each(|b| space.zero_constrained(b));
            }
            let group = LANES.max(nt) / nt * nt * nx;
            for ((src, m), a) in buf.chunks(group).zip(mu_all.chunks_mut(group)).zip(au_all.chunks_mut(group)) {
                space.apply_pair_batch(src, src.len() / nx, m, a)?;
            }
        }
        let h = &self.hist;
        for s in 0..self.n_steps {
            let step = s * nt * nx..(s + 1) * nt * nx;
            let mu: Vec<&[f64]> = mu_all[step.clone()].chunks(nx).collect();
            let au: Vec<&[f64]> = au_all[step].chunks(nx).collect();
            for i in 0..nt {
                let out = y.block_mut(s, i);
                out.iter_mut().for_each(|v| *v = 0.0);
                if u.is_some() {
                    for j in 0..nt {
                        axpy(self.stiff_coef[(i, j)], au[j], out);
                        axpy(self.mass_coef[(i, j)], mu[j], out);
                    }
                }
                if have_prev {
                    axpy(h.h_mu[i], &mu_prev, out);
                    axpy(h.h_au[i], &au_prev, out);
                    if wave {
                        axpy(h.h_mv[i], &mv_prev, out);
                    }
                }
                if constrained {
                    let src = u.map(|u| u.block(s, i));
                    for &b in &space.dofmap.boundary_dofs {
                        out[b] = src.map_or(0.0, |v| v[b]);
                    }
                }
            }
            // advance the end values to this step (products are zero without `u`)
            if wave {
                let mut mv_new = vec![0.0; nx];
                for j in 0..nt {
                    axpy(h.ve_u[j], mu[j], &mut mv_new);
                }
                if have_prev {
                    axpy(h.ve_u_prev, &mu_prev, &mut mv_new);
                    axpy(h.ve_v_prev, &mv_prev, &mut mv_new);
                }
                mv_prev = mv_new;
            }
            mu_prev.copy_from_slice(mu[nt - 1]);
            au_prev.copy_from_slice(au[nt - 1]);
            have_prev = u.is_some() || wave;
        }
        Ok(())
    }

    /// Physical time of temporal unknown `i` of step `s`.
    pub fn node_time(&self, t_start: f64, s: usize, i: usize) -> f64 {
        t_start + self.tau * (s as f64 + self.weights.dof_nodes()[i])
    }

    /// Right-hand side of the batch starting at `t_start` from `state`.
    ///
    /// The source is interpolated at the temporal unknowns (and for CGP at the
    /// start of each step) and weighted with `τ m ⊗ M_h` (plus `τ β ⊗ M_h`).
    /// Inhomogeneous Dirichlet data `g` is lifted out of the free rows; the
    /// constrained rows hold `g`.
    pub fn build_rhs(
        &self,
        f: SpaceTimeFn,
        dirichlet: Option<SpaceTimeFn>,
        state: &StepState,
        t_start: f64,
    ) -> Result<SpaceTimeVector> {
        let nx = self.n_x();
        let nt = self.n_t();
        let space = &self.space;
        let mut rhs = self.zeros();
        let cgp = self.weights.scheme == TimeScheme::CGP;
        let mut mf = vec![vec![0.0; nx]; nt];
        let mut mf_start = vec![0.0; nx];
        for s in 0..self.n_steps {
            for (i, mfi) in mf.iter_mut().enumerate() {
                let t = self.node_time(t_start, s, i);
                let fv = space.interpolate(|x| f(x, t));
                space.apply(OperatorKind::Mass, &fv, mfi)?;
            }
            if cgp {
                let t0 = t_start + self.tau * s as f64;
                let fv = space.interpolate(|x| f(x, t0));
                space.apply(OperatorKind::Mass, &fv, &mut mf_start)?;
            }
            for i in 0..nt {
                let out = rhs.block_mut(s, i);
                for (j, mfj) in mf.iter().enumerate() {
                    axpy(self.stiff_coef[(i, j)], mfj, out);
                }
                if cgp {
                    axpy(self.tau * self.weights.beta[i], &mf_start, out);
                }
            }
        }
        // subtract S g − H(g, state) with g the boundary lift
        let lift = dirichlet.map(|g| self.boundary_lift(g, t_start));
        let mut hist = self.zeros();
        self.sweep(lift.as_ref(), Some(state), false, &mut hist)?;
        for (r, h) in rhs.data.iter_mut().zip(&hist.data) {
            *r -= h;
        }
        for s in 0..self.n_steps {
            for i in 0..nt {
                let out = rhs.block_mut(s, i);
                match &lift {
                    Some(l) => {
                        let src = l.block(s, i);
                        for &b in &space.dofmap.boundary_dofs {
                            out[b] = src[b];
                        }
                    }
                    None => {
                        space.zero_constrained(out);
                    }
                }
            }
        }
        Ok(rhs)
    }

    /// Dirichlet values at the temporal unknowns, zero in the interior.
    pub fn boundary_lift(&self, g: SpaceTimeFn, t_start: f64) -> SpaceTimeVector {
        let mut lift = self.zeros();
        let dim = self.space.dim();
        for s in 0..self.n_steps {
            for i in 0..self.n_t() {
                let t = self.node_time(t_start, s, i);
                let out = lift.block_mut(s, i);
                for &b in &self.space.dofmap.boundary_dofs {
                    out[b] = g(&self.space.support_points[b][..dim], t);
                }
            }
        }
        lift
    }

    /// Nodal velocities of every step of a solved batch (wave equation only).
    pub fn velocity_update(&self, u: &SpaceTimeVector, state: &StepState) -> Result<SpaceTimeVector> {
        if self.equation != Equation::Wave {
            return invalid("velocities exist only for the wave equation");
        }
        self.check(u)?;
        let nx = self.n_x();
        let nt = self.n_t();
        let mut v = self.zeros();
        let mut u_prev = state.u_prev.clone();
        let mut v_prev = state.v_prev.clone();
        check_len(nx, u_prev.len())?;
        check_len(nx, v_prev.len())?;
        for s in 0..self.n_steps {
            for i in 0..nt {
                let out = v.block_mut(s, i);
                for j in 0..nt {
                    axpy(self.vel_u[(i, j)], u.block(s, j), out);
                }
                axpy(self.vel_u_prev[i], &u_prev, out);
                axpy(self.vel_v_prev[i], &v_prev, out);
            }
            u_prev.copy_from_slice(u.block(s, nt - 1));
            v_prev.copy_from_slice(v.block(s, nt - 1));
        }
        Ok(v)
    }

    /// State at the end of a solved batch.
    pub fn end_state(&self, u: &SpaceTimeVector, v: Option<&SpaceTimeVector>) -> StepState {
        let (s, i) = (self.n_steps - 1, self.n_t() - 1);
        StepState {
            u_prev: u.block(s, i).to_vec(),
            v_prev: v.map(|v| v.block(s, i).to_vec()).unwrap_or_default(),
        }
    }

    /// Temporal coefficient matrices `(X_sj, Y_sj)` of the batched operator:
    /// block `(s, j)` equals `X_sj ⊗ A_h + Y_sj ⊗ M_h` (before constraints).
    /// Obtained by running the batch recursion on coefficients.
    pub fn temporal_blocks(&self) -> Vec<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        let nt = self.n_t();
        let c = self.n_steps;
        let h = &self.hist;
        let wave = self.equation == Equation::Wave;
        let zero = DMatrix::zeros(nt, nt);
        let mut blocks = vec![vec![(zero.clone(), zero.clone()); c]; c];
        // mass-space coefficients of M v_end over all (step, node) unknowns
        let mut mv = vec![0.0; c * nt];
        for s in 0..c {
            blocks[s][s].0 += &self.stiff_coef;
            blocks[s][s].1 += &self.mass_coef;
            if s > 0 {
                let (x, y) = &mut blocks[s][s - 1];
                for i in 0..nt {
                    y[(i, nt - 1)] += h.h_mu[i];
                    x[(i, nt - 1)] += h.h_au[i];
                }
            }
            if wave {
                for (idx, &coef) in mv.iter().enumerate() {
                    if coef == 0.0 {
                        continue;
                    }
                    let (j, l) = (idx / nt, idx % nt);
                    for i in 0..nt {
                        blocks[s][j].1[(i, l)] += h.h_mv[i] * coef;
                    }
                }
                let mut next: Vec<f64> = mv.iter().map(|&c| c * h.ve_v_prev).collect();
                for l in 0..nt {
                    next[s * nt + l] += h.ve_u[l];
                }
                if s > 0 {
                    next[(s - 1) * nt + nt - 1] += h.ve_u_prev;
                }
                mv = next;
            }
        }
        blocks
    }

    /// Dense matrix of the constrained batched operator from the temporal
    /// blocks and assembled spatial matrices.
    pub fn assemble_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n > crate::space_fem::DENSE_LIMIT {
            return Err(StmgError::SizeLimit(format!(
                "dense space-time operator with {n} unknowns"
            )));
        }
        let a = self.space.assemble_sparse(OperatorKind::Stiffness);
        let m = self.space.assemble_sparse(OperatorKind::Mass);
        let nx = self.n_x();
        let nt = self.n_t();
        let mask = self.space.dofmap.constrained_mask();
        let mut d = DMatrix::zeros(n, n);
        for (s, row) in self.temporal_blocks().iter().enumerate() {
            for (j, (x, y)) in row.iter().enumerate() {
                for i in 0..nt {
                    for l in 0..nt {
                        let (cx, cy) = (x[(i, l)], y[(i, l)]);
                        if cx == 0.0 && cy == 0.0 {
                            continue;
                        }
                        let r0 = (s * nt + i) * nx;
                        let c0 = (j * nt + l) * nx;
                        for p in 0..nx {
                            if mask[p] {
                                continue;
                            }
                            for q in a.row_ptr[p]..a.row_ptr[p + 1] {
                                let col = a.cols[q];
                                if !mask[col] {
                                    d[(r0 + p, c0 + col)] += cx * a.vals[q];
                                }
                            }
                            for q in m.row_ptr[p]..m.row_ptr[p + 1] {
                                let col = m.cols[q];
                                if !mask[col] {
                                    d[(r0 + p, c0 + col)] += cy * m.vals[q];
                                }
                            }
                        }
                    }
                }
            }
        }
        for blk in 0..self.n_steps * nt {
            for &b in &self.space.dofmap.boundary_dofs {
                d[(blk * nx + b, blk * nx + b)] = 1.0;
            }
        }
        Ok(d)
    }
}

/// Temporal blocks of the batched wave-CGP system in closed form.
#[derive(Debug, Clone)]
pub struct WaveCgpBlocks {
    /// Decay factor of the end velocity from one step to the next.
    pub g: f64,
    /// Weight of the previous end displacement in the end velocity.
    pub z: f64,
    /// `α − a m⁻¹ β`: coupling of the previous end velocity.
    pub alpha_a: DVector<f64>,
    /// Sub-diagonal block `B = B_A ⊗ A_h + B_M ⊗ M_h`.
    pub b_stiff: DMatrix<f64>,
    pub b_mass: DMatrix<f64>,
    /// `e[i][j]` for `j < i`: mass coefficient of the velocity history,
    /// `α_A ⊗ M_h` times the end-velocity weights of step `j`.
    pub e: Vec<Vec<Option<DMatrix<f64>>>>,
}

/// Closed-form wave-CGP batch blocks. `M_τ = τ m` is diagonal for CGP
/// (Lobatto collocation), which the recursion weights rely on.
pub fn wave_cgp_blocks(weights: &TemporalWeights, tau: f64, c: usize) -> Result<WaveCgpBlocks> {
    if weights.scheme != TimeScheme::CGP {
        return invalid("wave CGP blocks need CGP weights");
    }
    let nt = weights.n_t;
    let k = nt - 1;
    let m_tau = &weights.m_tau * tau;
    let mkk = m_tau[(k, k)];
    let a = &weights.a_tau;
    let alpha = &weights.alpha;
    let beta_s = &weights.beta * tau;
    let m_inv = m_tau.clone().lu().try_inverse().ok_or_else(|| {
        StmgError::NumericFailure("temporal mass matrix is singular".into())
    })?;
    let g = -beta_s[k] / mkk;
    let z = alpha[k] / mkk;
    let alpha_a = alpha - a * &m_inv * &beta_s;
    let mut e_last = DVector::zeros(nt);
    e_last[k] = 1.0;
    let b_stiff = &beta_s * e_last.transpose();
    let b_mass = a * &m_inv * alpha * e_last.transpose();
    let a_row = a.row(k).transpose();
    let mut e = vec![vec![None; c]; c];
    for i in 0..c {
        for j in 0..i {
            let mut w: DVector<f64> = &a_row * (g.powi((i - 1 - j) as i32) / mkk);
            if j + 2 <= i {
                w[k] += z * g.powi((i - 2 - j) as i32);
            }
            e[i][j] = Some(&alpha_a * w.transpose());
        }
    }
    Ok(WaveCgpBlocks {
        g,
        z,
        alpha_a,
        b_stiff,
        b_mass,
        e,
    })
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
