//! Space-time multigrid: level planning, transfers between levels, the
//! cell-wise additive Schwarz smoother, relaxation estimation and the V-cycle.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result, StmgError};
use crate::krylov::{gmres, GmresSettings};
use crate::mesh::{CoefficientField, MeshHierarchy};
use crate::space_fem::{CsrMatrix, FeSpace, OperatorKind};
use crate::st_operator::{Equation, SpaceTimeOperator, SpaceTimeVector};
use crate::time_basis::{TemporalWeights, TimeScheme};

/// What changes between a level and the next coarser one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coarsening {
    /// One mesh level coarser.
    H,
    /// Spatial degree `p → max(1, ⌊p/2⌋)`.
    P,
    /// Half as many time steps.
    Tau,
    /// Temporal order lowered by one.
    K,
}

impl std::str::FromStr for Coarsening {
    type Err = StmgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h" => Ok(Self::H),
            "p" => Ok(Self::P),
            "tau" | "t" => Ok(Self::Tau),
            "k" => Ok(Self::K),
            other => invalid(format!("unknown coarsening '{other}' (expected h, p, tau or k)")),
        }
    }
}

/// Discretization parameters of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDesc {
    /// How this level was obtained from the finer one (`None` on the finest).
    pub coarsening: Option<Coarsening>,
    pub mesh_level: usize,
    pub p: usize,
    pub k: usize,
    pub n_steps: usize,
}

/// Levels from finest to coarsest; every entry changes exactly one attribute.
pub fn plan_levels(finest: LevelDesc, scheme: TimeScheme, strategy: &[Coarsening]) -> Result<Vec<LevelDesc>> {
    let mut levels = vec![LevelDesc {
        coarsening: None,
        ..finest
    }];
    for &step in strategy {
        let mut next = *levels.last().expect("nonempty");
        next.coarsening = Some(step);
        match step {
            Coarsening::H => {
                if next.mesh_level == 0 {
                    return invalid("h-coarsening below the coarsest mesh");
                }
                next.mesh_level -= 1;
            }
            Coarsening::P => {
                if next.p <= 1 {
                    return invalid("p-coarsening below degree 1");
                }
                next.p = (next.p / 2).max(1);
            }
            Coarsening::Tau => {
                if next.n_steps < 2 || next.n_steps % 2 != 0 {
                    return invalid(format!("tau-coarsening needs an even step count, got {}", next.n_steps));
                }
                next.n_steps /= 2;
            }
            Coarsening::K => {
                if next.k <= scheme.min_order() {
                    return invalid(format!("k-coarsening below the minimal {scheme} order"));
                }
                next.k -= 1;
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

/// Space first (all h, then p), then time (τ, then k).
pub fn default_strategy(finest: LevelDesc, scheme: TimeScheme) -> Vec<Coarsening> {
    let mut s = vec![Coarsening::H; finest.mesh_level];
    let mut p = finest.p;
    while p > 1 {
        s.push(Coarsening::P);
        p = (p / 2).max(1);
    }
    let mut n = finest.n_steps;
    while n >= 2 && n.is_multiple_of(2) {
        s.push(Coarsening::Tau);
        n /= 2;
    }
    for _ in scheme.min_order()..finest.k {
        s.push(Coarsening::K);
    }
    s
}

/// Transfer between a level and the next coarser one.
#[derive(Debug, Clone)]
pub enum Transfer {
    /// Spatial interpolation matrix `P` (fine × coarse) applied to every block.
    Space(CsrMatrix),
    /// Temporal map: fine block `(s, i)` = Σ weight · coarse block.
    Time {
        map: Vec<Vec<(usize, f64)>>,
        n_coarse_blocks: usize,
    },
}

impl Transfer {
    /// `fine = P coarse`.
    pub fn prolongate(&self, coarse: &SpaceTimeVector, fine: &mut SpaceTimeVector) {
        match self {
            Transfer::Space(p) => {
                let nxf = fine.n_x;
                for (cb, fb) in coarse.data.chunks(coarse.n_x).zip(fine.data.chunks_mut(nxf)) {
                    p.matvec(cb, fb);
                }
            }
            Transfer::Time { map, .. } => {
                let nx = fine.n_x;
                fine.data.iter_mut().for_each(|v| *v = 0.0);
                for (fb, entries) in map.iter().enumerate() {
                    let dst = &mut fine.data[fb * nx..(fb + 1) * nx];
                    for &(cb, w) in entries {
                        let src = &coarse.data[cb * nx..(cb + 1) * nx];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }

    /// `coarse = Pᵀ fine`.
    pub fn restrict(&self, fine: &SpaceTimeVector, coarse: &mut SpaceTimeVector) {
        match self {
            Transfer::Space(p) => {
                for (fb, cb) in fine.data.chunks(fine.n_x).zip(coarse.data.chunks_mut(coarse.n_x)) {
                    cb.iter_mut().for_each(|v| *v = 0.0);
                    for (i, &fi) in fb.iter().enumerate() {
                        for q in p.row_ptr[i]..p.row_ptr[i + 1] {
                            cb[p.cols[q]] += p.vals[q] * fi;
                        }
                    }
                }
            }
            Transfer::Time { map, .. } => {
                let nx = fine.n_x;
                coarse.data.iter_mut().for_each(|v| *v = 0.0);
                for (fb, entries) in map.iter().enumerate() {
                    let src = &fine.data[fb * nx..(fb + 1) * nx];
                    for &(cb, w) in entries {
                        let dst = &mut coarse.data[cb * nx..(cb + 1) * nx];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
}

/// Interpolation of a coarse `Q_p` space into a finer one. With `constrained`,
/// rows of fine Dirichlet DoFs and columns of coarse Dirichlet DoFs are dropped.
pub fn space_transfer(fine: &FeSpace, coarse: &FeSpace, constrained: bool) -> Result<CsrMatrix> {
    let dim = fine.dim();
    let same_mesh = fine.mesh.cells_per_axis == coarse.mesh.cells_per_axis;
    let parent = if same_mesh {
        None
    } else {
        let parent = fine
            .mesh
            .parent
            .as_ref()
            .ok_or_else(|| StmgError::InvalidArgument("fine mesh has no parent map".into()))?;
        if coarse.mesh.cells_per_axis.iter().zip(&fine.mesh.cells_per_axis).any(|(c, f)| 2 * c != *f) {
            return invalid("meshes are not one refinement apart");
        }
        Some(parent)
    };
    let n1f = fine.degree() + 1;
    let nodes_f = fine.basis.nodes().to_vec();
    let mut visited = vec![false; fine.n_dofs()];
    let mut trip = Vec::new();
    for cf in 0..fine.mesh.n_cells() {
        let (cc, off, scale) = match parent {
            None => (cf, [0usize; 3], 1.0),
            Some(par) => {
                let cc = par[cf];
                let fi = fine.mesh.cell_index(cf);
                let ci = coarse.mesh.cell_index(cc);
                let mut off = [0usize; 3];
                for a in 0..dim {
                    off[a] = fi[a] - 2 * ci[a];
                }
                (cc, off, 0.5)
            }
        };
        let coarse_dofs = coarse.dofmap.cell_dofs(cc);
        for (l, &gf) in fine.dofmap.cell_dofs(cf).iter().enumerate() {
            if visited[gf] {
                continue;
            }
            visited[gf] = true;
            if constrained && fine.dofmap.is_constrained(gf) {
                continue;
            }
            let li = crate::space_fem::split_index(l, n1f, dim);
            let per_axis: Vec<Vec<f64>> = (0..dim)
                .map(|a| coarse.basis.values(scale * (off[a] as f64 + nodes_f[li[a]])))
                .collect();
            let n1c = coarse.degree() + 1;
            for (m, &gc) in coarse_dofs.iter().enumerate() {
                if constrained && coarse.dofmap.is_constrained(gc) {
                    continue;
                }
                let mi = crate::space_fem::split_index(m, n1c, dim);
                let w: f64 = (0..dim).map(|a| per_axis[a][mi[a]]).product();
                if w.abs() > 1e-14 {
                    trip.push((gf, gc, w));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.n_dofs(), trip))
}

/// Temporal map for τ- or k-coarsening. Fine step `s` lies in coarse step
/// `s / ratio` at reference offset `(s % ratio) / ratio`.
pub fn time_transfer(fine: &TemporalWeights, fine_steps: usize, coarse: &TemporalWeights, coarse_steps: usize) -> Result<Transfer> {
    if fine.scheme != coarse.scheme {
        return invalid("temporal transfer between different schemes");
    }
    if coarse_steps == 0 || !fine_steps.is_multiple_of(coarse_steps) {
        return invalid("fine step count must be a multiple of the coarse one");
    }
    let ratio = fine_steps / coarse_steps;
    let (ntf, ntc) = (fine.n_t, coarse.n_t);
    let mut map = Vec::with_capacity(fine_steps * ntf);
    for s in 0..fine_steps {
        let sc = s / ratio;
        let h = (s % ratio) as f64;
        for &t in fine.dof_nodes() {
            let theta = (h + t) / ratio as f64;
            let (c_start, c) = coarse.eval_coefficients(theta);
            let mut entries = Vec::new();
            for (j, &w) in c.iter().enumerate() {
                if w.abs() > 1e-14 {
                    entries.push((sc * ntc + j, w));
                }
            }
            // CGP: the coarse start value is the previous coarse end value,
            // fixed (zero correction) at the batch start
            if sc > 0 && c_start.abs() > 1e-14 {
                entries.push(((sc - 1) * ntc + ntc - 1, c_start));
            }
            map.push(entries);
        }
    }
    Ok(Transfer::Time {
        map,
        n_coarse_blocks: coarse_steps * ntc,
    })
}

/// Cell-wise additive Schwarz smoother: one dense block per spatial cell and
/// time step, shared across the steps of the batch.
#[derive(Debug, Clone)]
pub struct AsmSmoother {
    n_t: usize,
    /// Free global DoFs of every cell.
    cell_free: Vec<Vec<usize>>,
    /// Inverse block per cell, ordered `(i, local dof)`.
    inverses: Vec<DMatrix<f64>>,
    boundary: Vec<usize>,
}

impl AsmSmoother {
    pub fn new(op: &SpaceTimeOperator) -> Result<Self> {
        let space = &op.space;
        let a = space.assemble_sparse(OperatorKind::Stiffness);
        let m = space.assemble_sparse(OperatorKind::Mass);
        let n_cells = space.mesh.n_cells();
        let cell_free: Vec<Vec<usize>> = (0..n_cells)
            .map(|c| {
                space
                    .dofmap
                    .cell_dofs(c)
                    .iter()
                    .copied()
                    .filter(|&g| !space.dofmap.is_constrained(g))
                    .collect()
            })
            .collect();
        let inverses: Result<Vec<DMatrix<f64>>> = cell_free
            .par_iter()
            .enumerate()
            .map(|(c, free)| {
                let block = local_block(op, &a, &m, free);
                let n = block.nrows();
                if n == 0 {
                    return Ok(block);
                }
                let scale = block.amax();
                let lu = block.lu();
                let u = lu.u();
                let min_pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
                if !(min_pivot > 1e-14 * scale) {
                    return Err(StmgError::NumericFailure(format!(
                        "singular smoother block in cell {c}"
                    )));
                }
                lu.try_inverse()
                    .ok_or_else(|| StmgError::NumericFailure(format!("singular smoother block in cell {c}")))
            })
            .collect();
        Ok(Self {
            n_t: op.n_t(),
            cell_free,
            inverses: inverses?,
            boundary: space.dofmap.boundary_dofs.clone(),
        })
    }

    /// Dense block `R_T S R_Tᵀ` of cell `cell` (free DoFs only).
    pub fn block(op: &SpaceTimeOperator, cell: usize) -> DMatrix<f64> {
        let space = &op.space;
        let a = space.assemble_sparse(OperatorKind::Stiffness);
        let m = space.assemble_sparse(OperatorKind::Mass);
        let free: Vec<usize> = space
            .dofmap
            .cell_dofs(cell)
            .iter()
            .copied()
            .filter(|&g| !space.dofmap.is_constrained(g))
            .collect();
        local_block(op, &a, &m, &free)
    }

    /// `out = Σ_T R_Tᵀ B_T⁻¹ R_T r`; Dirichlet entries are passed through.
    pub fn apply(&self, r: &SpaceTimeVector, out: &mut SpaceTimeVector) {
        let nt = self.n_t;
        let nx = r.n_x;
        let ns = r.n_steps;
        out.data.iter_mut().for_each(|v| *v = 0.0);
        // one product per cell covering every step, so each inverse is read once
        let locals: Vec<DMatrix<f64>> = self
            .cell_free
            .par_iter()
            .zip(&self.inverses)
            .map(|(free, inv)| {
                let nf = free.len();
                let x = DMatrix::from_fn(nt * nf, ns, |row, s| {
                    let (i, p) = (row / nf, row % nf);
                    r.data[(s * nt + i) * nx + free[p]]
                });
                inv * x
            })
            .collect();
        for (free, y) in self.cell_free.iter().zip(&locals) {
            let nf = free.len();
            for s in 0..ns {
                let col = y.column(s);
                for i in 0..nt {
                    let blk = &mut out.data[(s * nt + i) * nx..(s * nt + i + 1) * nx];
                    for (p, &g) in free.iter().enumerate() {
                        blk[g] += col[i * nf + p];
                    }
                }
            }
        }
        for blk in 0..ns * nt {
            let o = blk * nx;
            for &b in &self.boundary {
                out.data[o + b] = r.data[o + b];
            }
        }
    }

    pub fn block_size(&self, cell: usize) -> usize {
        self.inverses[cell].nrows()
    }
}

fn local_block(op: &SpaceTimeOperator, a: &CsrMatrix, m: &CsrMatrix, free: &[usize]) -> DMatrix<f64> {
    let nt = op.n_t();
    let nf = free.len();
    let mut block = DMatrix::zeros(nt * nf, nt * nf);
    for (p, &gp) in free.iter().enumerate() {
        for (q, &gq) in free.iter().enumerate() {
            let (av, mv) = (a.get(gp, gq), m.get(gp, gq));
            for i in 0..nt {
                for j in 0..nt {
                    block[(i * nf + p, j * nf + q)] = op.stiff_coef[(i, j)] * av + op.mass_coef[(i, j)] * mv;
                }
            }
        }
    }
    block
}

/// `ω = 2 / (s·λ_max + λ_min)` from Ritz values of `P⁻¹S` after `iters`
/// Arnoldi steps with a seeded random start. Real parts are used, `λ_min ≥ 0`,
/// and `s ≥ 1` is a safety factor on the largest eigenvalue (`s = 1` gives the
/// plain two-sided formula).
pub fn estimate_relaxation(op: &SpaceTimeOperator, smoother: &AsmSmoother, iters: usize, seed: u64, safety: f64) -> f64 {
    let n = op.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut v0 = op.zeros();
    for x in v0.data.iter_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
    for s in 0..op.n_steps {
        for i in 0..op.n_t() {
            op.space.zero_constrained(v0.block_mut(s, i));
        }
    }
    let norm = v0.norm();
    if !(norm > 0.0) || n == 0 {
        log::warn!("relaxation estimate: zero start vector, using omega = 1");
        return 1.0;
    }
    v0.data.iter_mut().for_each(|x| *x /= norm);
    let m = iters.max(1);
    let mut basis = vec![v0];
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut sv = op.zeros();
    let mut w = op.zeros();
    let mut steps = 0;
    for j in 0..m {
        if op.apply(&basis[j], &mut sv).is_err() {
            break;
        }
        smoother.apply(&sv, &mut w);
        let w0 = w.norm();
        for _pass in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let d = dot(&w.data, &b.data);
                h[(i, j)] += d;
                for (x, y) in w.data.iter_mut().zip(&b.data) {
                    *x -= d * y;
                }
            }
        }
        steps = j + 1;
        let nw = w.norm();
        h[(j + 1, j)] = nw;
        // invariant subspace found (relative test, round-off otherwise adds a spurious zero)
        if !(nw > 1e-10 * w0) {
            break;
        }
        let mut next = w.clone();
        next.data.iter_mut().for_each(|x| *x /= nw);
        basis.push(next);
    }
    if steps == 0 {
        log::warn!("relaxation estimate broke down, using omega = 1");
        return 1.0;
    }
    let hs = h.view((0, 0), (steps, steps)).into_owned();
    let ev = hs.complex_eigenvalues();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in ev.iter() {
        lo = lo.min(e.re);
        hi = hi.max(e.re);
    }
    let lo = lo.max(0.0);
    let omega = 2.0 / (safety.max(1.0) * hi + lo);
    if !omega.is_finite() || omega <= 0.0 {
        log::warn!("relaxation estimate not usable (λ in [{lo}, {hi}]), using omega = 1");
        return 1.0;
    }
    omega.min(1.2)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulated wall time of the multigrid sections.
#[derive(Debug, Default)]
pub struct SectionTimers {
    vcycle_ns: AtomicU64,
    smoother_ns: AtomicU64,
    operator_ns: AtomicU64,
}

impl SectionTimers {
    pub fn add_operator(&self, secs: f64) {
        self.operator_ns.fetch_add((secs * 1e9) as u64, Ordering::Relaxed);
    }

    /// Total time inside V-cycles (smoother included).
    pub fn vcycle(&self) -> f64 {
        self.vcycle_ns.load(Ordering::Relaxed) as f64 * 1e-9
    }

    pub fn smoother(&self) -> f64 {
        self.smoother_ns.load(Ordering::Relaxed) as f64 * 1e-9
    }

    /// Operator applications outside the preconditioner.
    pub fn operator(&self) -> f64 {
        self.operator_ns.load(Ordering::Relaxed) as f64 * 1e-9
    }

    pub fn reset(&self) {
        self.vcycle_ns.store(0, Ordering::Relaxed);
        self.smoother_ns.store(0, Ordering::Relaxed);
        self.operator_ns.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MultigridSettings {
    /// Pre- and post-smoothing steps.
    pub n_smooth: usize,
    /// Coarse systems up to this size are solved by dense LU.
    pub coarse_dense_limit: usize,
    pub relaxation_iters: usize,
    /// Factor applied to the estimated largest eigenvalue.
    pub lambda_max_safety: f64,
    pub seed: u64,
    /// Fixed relaxation on every level instead of the eigenvalue estimate.
    pub omega: Option<f64>,
}

impl Default for MultigridSettings {
    fn default() -> Self {
        Self {
            n_smooth: 1,
            coarse_dense_limit: 3000,
            relaxation_iters: 20,
            lambda_max_safety: 1.2,
            seed: 0x5eed,
            omega: None,
        }
    }
}

/// One level of the hierarchy.
#[derive(Debug)]
pub struct LevelSystem {
    pub desc: LevelDesc,
    pub op: SpaceTimeOperator,
    pub smoother: AsmSmoother,
    pub omega: f64,
    /// Transfer to the next coarser level.
    pub transfer: Option<Transfer>,
    pub smoother_sweeps: AtomicUsize,
    pub operator_applies: AtomicUsize,
}

enum CoarseSolver {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Iterative,
}

/// Summary of one level for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSummary {
    pub coarsening: Option<Coarsening>,
    pub mesh_level: usize,
    pub p: usize,
    pub k: usize,
    pub n_steps: usize,
    pub unknowns: usize,
    pub omega: f64,
}

/// The V-cycle preconditioner over a level hierarchy (finest first).
pub struct Multigrid {
    pub levels: Vec<LevelSystem>,
    coarse: CoarseSolver,
    pub settings: MultigridSettings,
    pub timers: Arc<SectionTimers>,
}

impl std::fmt::Debug for Multigrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Multigrid").field("levels", &self.summaries()).finish()
    }
}

impl Multigrid {
    /// Rediscretize the operator on every planned level.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        equation: Equation,
        scheme: TimeScheme,
        tau_fine: f64,
        plan: &[LevelDesc],
        meshes: &MeshHierarchy,
        coefficient: &CoefficientField,
        settings: MultigridSettings,
    ) -> Result<Self> {
        if plan.is_empty() {
            return invalid("empty level plan");
        }
        let mut spaces: HashMap<(usize, usize), Arc<FeSpace>> = HashMap::new();
        let mut space_for = |ml: usize, p: usize| -> Result<Arc<FeSpace>> {
            if let Some(s) = spaces.get(&(ml, p)) {
                return Ok(s.clone());
            }
            let mesh = meshes
                .levels
                .get(ml)
                .ok_or_else(|| StmgError::InvalidArgument(format!("mesh level {ml} missing")))?;
            let s = Arc::new(FeSpace::new(mesh.clone(), p, coefficient.clone())?);
            spaces.insert((ml, p), s.clone());
            Ok(s)
        };
        let fine_steps = plan[0].n_steps;
        let mut ops = Vec::new();
        for d in plan {
            let w = TemporalWeights::new(scheme, d.k)?;
            let tau = tau_fine * fine_steps as f64 / d.n_steps as f64;
            ops.push(SpaceTimeOperator::new(equation, w, tau, d.n_steps, space_for(d.mesh_level, d.p)?)?);
        }
        let mut levels = Vec::new();
        for (l, (d, op)) in plan.iter().zip(ops.iter()).enumerate() {
            let transfer = match plan.get(l + 1) {
                None => None,
                Some(c) => Some(match c.coarsening {
                    Some(Coarsening::H) | Some(Coarsening::P) => {
                        Transfer::Space(space_transfer(&op.space, &ops[l + 1].space, true)?)
                    }
                    Some(Coarsening::Tau) | Some(Coarsening::K) => {
                        time_transfer(&op.weights, op.n_steps, &ops[l + 1].weights, ops[l + 1].n_steps)?
                    }
                    None => return invalid("coarse level without coarsening type"),
                }),
            };
            let smoother = AsmSmoother::new(op)?;
            let omega = if let Some(w) = settings.omega {
                w
            } else if l + 1 < plan.len() {
                estimate_relaxation(
                    op,
                    &smoother,
                    settings.relaxation_iters,
                    settings.seed + l as u64,
                    settings.lambda_max_safety,
                )
            } else {
                1.0
            };
            log::debug!("level {l}: {d:?}, {} unknowns, omega {omega:.3}", op.len());
            levels.push(LevelSystem {
                desc: *d,
                op: op.clone(),
                smoother,
                omega,
                transfer,
                smoother_sweeps: AtomicUsize::new(0),
                operator_applies: AtomicUsize::new(0),
            });
        }
        let coarsest = &levels.last().expect("nonempty").op;
        let coarse = if coarsest.len() <= settings.coarse_dense_limit {
            CoarseSolver::Dense(coarsest.assemble_dense()?.lu())
        } else {
            CoarseSolver::Iterative
        };
        Ok(Self {
            levels,
            coarse,
            settings,
            timers: Arc::new(SectionTimers::default()),
        })
    }

    pub fn finest(&self) -> &SpaceTimeOperator {
        &self.levels[0].op
    }

    pub fn summaries(&self) -> Vec<LevelSummary> {
        self.levels
            .iter()
            .map(|l| LevelSummary {
                coarsening: l.desc.coarsening,
                mesh_level: l.desc.mesh_level,
                p: l.desc.p,
                k: l.desc.k,
                n_steps: l.desc.n_steps,
                unknowns: l.op.len(),
                omega: l.omega,
            })
            .collect()
    }

    pub fn reset_counters(&self) {
        for l in &self.levels {
            l.smoother_sweeps.store(0, Ordering::Relaxed);
            l.operator_applies.store(0, Ordering::Relaxed);
        }
    }

    /// One V-cycle with zero initial guess: `x ≈ S⁻¹ r`.
    pub fn precondition(&self, r: &SpaceTimeVector) -> Result<SpaceTimeVector> {
        check_len(self.levels[0].op.len(), r.len())?;
        let start = Instant::now();
        let mut x = self.levels[0].op.zeros();
        self.vcycle(0, r, &mut x, true)?;
        self.timers
            .vcycle_ns
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        Ok(x)
    }

    fn smooth(&self, l: usize, f: &SpaceTimeVector, u: &mut SpaceTimeVector, zero_guess: bool) -> Result<()> {
        let lev = &self.levels[l];
        let residual = if zero_guess {
            f.clone()
        } else {
            self.residual(l, f, u)?
        };
        let start = Instant::now();
        let mut corr = lev.op.zeros();
        lev.smoother.apply(&residual, &mut corr);
        lev.smoother_sweeps.fetch_add(1, Ordering::Relaxed);
        self.timers
            .smoother_ns
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        let mask = lev.op.space.dofmap.constrained_mask();
        let nx = lev.op.n_x();
        for (idx, (x, c)) in u.data.iter_mut().zip(&corr.data).enumerate() {
            // Dirichlet rows are the identity: take the full correction
            *x += if mask[idx % nx] { *c } else { lev.omega * c };
        }
        Ok(())
    }

    fn residual(&self, l: usize, f: &SpaceTimeVector, u: &SpaceTimeVector) -> Result<SpaceTimeVector> {
        let lev = &self.levels[l];
        let mut r = lev.op.zeros();
        lev.op.apply(u, &mut r)?;
        lev.operator_applies.fetch_add(1, Ordering::Relaxed);
        for (ri, fi) in r.data.iter_mut().zip(&f.data) {
            *ri = fi - *ri;
        }
        Ok(r)
    }

    fn vcycle(&self, l: usize, f: &SpaceTimeVector, u: &mut SpaceTimeVector, zero_guess: bool) -> Result<()> {
        if l + 1 == self.levels.len() {
            return self.coarse_solve(f, u, zero_guess);
        }
        let nu = self.settings.n_smooth;
        for i in 0..nu {
            self.smooth(l, f, u, zero_guess && i == 0)?;
        }
        let r = self.residual(l, f, u)?;
        let lev = &self.levels[l];
        let coarse_op = &self.levels[l + 1].op;
        let transfer = lev.transfer.as_ref().expect("transfer to coarser level");
        let mut rc = coarse_op.zeros();
        transfer.restrict(&r, &mut rc);
        zero_dirichlet(coarse_op, &mut rc);
        let mut ec = coarse_op.zeros();
        self.vcycle(l + 1, &rc, &mut ec, true)?;
        let mut ef = lev.op.zeros();
        transfer.prolongate(&ec, &mut ef);
        zero_dirichlet(&lev.op, &mut ef);
        for (x, e) in u.data.iter_mut().zip(&ef.data) {
            *x += e;
        }
        for _ in 0..nu {
            self.smooth(l, f, u, false)?;
        }
        Ok(())
    }

    fn coarse_solve(&self, f: &SpaceTimeVector, u: &mut SpaceTimeVector, zero_guess: bool) -> Result<()> {
        let lev = self.levels.last().expect("nonempty");
        let r = if zero_guess {
            f.clone()
        } else {
            self.residual(self.levels.len() - 1, f, u)?
        };
        let corr: Vec<f64> = match &self.coarse {
            CoarseSolver::Dense(lu) => lu
                .solve(&DVector::from_column_slice(&r.data))
                .ok_or_else(|| StmgError::NumericFailure("coarse LU solve failed".into()))?
                .as_slice()
                .to_vec(),
            CoarseSolver::Iterative => {
                let op = &lev.op;
                let settings = GmresSettings {
                    abs_tol: 0.0,
                    rel_tol: 1e-3,
                    max_iter: 500,
                    restart: 100,
                };
                let mut x = vec![0.0; r.len()];
                let shape = (op.n_steps, op.n_t(), op.n_x());
                gmres(
                    |v, y| {
                        let v = SpaceTimeVector::from_vec(shape.0, shape.1, shape.2, v.to_vec())?;
                        let mut out = op.zeros();
                        op.apply(&v, &mut out)?;
                        y.copy_from_slice(&out.data);
                        Ok(())
                    },
                    |v, y| {
                        y.copy_from_slice(v);
                        Ok(())
                    },
                    &r.data,
                    &mut x,
                    &settings,
                )?;
                x
            }
        };
        for (x, c) in u.data.iter_mut().zip(&corr) {
            *x += c;
        }
        Ok(())
    }
}

fn zero_dirichlet(op: &SpaceTimeOperator, v: &mut SpaceTimeVector) {
    for s in 0..op.n_steps {
        for i in 0..op.n_t() {
            op.space.zero_constrained(v.block_mut(s, i));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine(ml: usize, p: usize, k: usize, n: usize) -> LevelDesc {
        LevelDesc {
            coarsening: None,
            mesh_level: ml,
            p,
            k,
            n_steps: n,
        }
    }

    #[test]
    fn plan_bookkeeping() {
        let l = plan_levels(fine(2, 1, 1, 4), TimeScheme::DG, &[Coarsening::H, Coarsening::H]).unwrap();
        assert_eq!(l.len(), 3);
        assert!(l.iter().all(|d| d.k == 1 && d.n_steps == 4));
        let l = plan_levels(fine(1, 1, 1, 4), TimeScheme::DG, &[Coarsening::H, Coarsening::Tau]).unwrap();
        assert_eq!(l.iter().map(|d| d.n_steps).collect::<Vec<_>>(), vec![4, 4, 2]);
        let l = plan_levels(fine(0, 1, 2, 1), TimeScheme::DG, &[Coarsening::K]).unwrap();
        assert_eq!(l[1].k, 1);
        assert_eq!(plan_levels(fine(0, 5, 1, 1), TimeScheme::DG, &[Coarsening::P, Coarsening::P]).unwrap()[2].p, 1);
    }

    #[test]
    fn plan_rejects_invalid_steps() {
        assert!(plan_levels(fine(0, 1, 1, 2), TimeScheme::DG, &[Coarsening::H]).is_err());
        assert!(plan_levels(fine(1, 1, 1, 2), TimeScheme::CGP, &[Coarsening::K]).is_err());
        assert!(plan_levels(fine(1, 1, 0, 2), TimeScheme::DG, &[Coarsening::K]).is_err());
        assert!(plan_levels(fine(1, 1, 1, 3), TimeScheme::DG, &[Coarsening::Tau]).is_err());
        assert!(plan_levels(fine(1, 1, 1, 3), TimeScheme::DG, &[Coarsening::P]).is_err());
    }

    #[test]
    fn default_order_is_space_then_time() {
        let s = default_strategy(fine(2, 3, 2, 4), TimeScheme::DG);
        use Coarsening::*;
        assert_eq!(s, vec![H, H, P, Tau, Tau, K, K]);
        let s = default_strategy(fine(1, 1, 1, 1), TimeScheme::CGP);
        assert_eq!(s, vec![H]);
        assert_eq!("tau".parse::<Coarsening>().unwrap(), Tau);
        assert!("x".parse::<Coarsening>().is_err());
    }
}
