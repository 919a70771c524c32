//! Continuous `Q_p` finite elements on tensor-product meshes.
//!
//! Degrees of freedom sit on the Gauss-Lobatto lattice of each cell and are
//! numbered lexicographically over the global lattice (first axis fastest).
//! Mass and stiffness are applied cell by cell with sum factorization on a
//! `(p+1)`-point Gauss rule per axis; the geometry (multilinear cell map) is
//! evaluated once at setup and cached per quadrature point.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::error::{check_len, invalid, Result, StmgError};
use crate::mesh::{CoefficientField, MeshLevel};
use crate::quadrature::{gauss, gauss_lobatto};
use crate::time_basis::LagrangeBasis;

/// Largest system for which [`FeSpace::assemble_dense`] is allowed.
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Mass,
    Stiffness,
}

/// 1D shape tables: values and derivatives of the nodal basis at quadrature
/// points, stored row-major as `[q * n_basis + i]`.
#[derive(Debug, Clone)]
pub struct ShapeTables {
    pub n_basis: usize,
    pub n_q: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ShapeTables {
    pub fn new(basis: &LagrangeBasis, n_q: usize) -> Result<Self> {
        let rule = gauss(n_q)?;
        let n_basis = basis.len();
        let mut values = Vec::with_capacity(n_q * n_basis);
        let mut grads = Vec::with_capacity(n_q * n_basis);
        for &t in &rule.points {
            values.extend(basis.values(t));
            grads.extend(basis.derivatives(t));
        }
        Ok(Self {
            n_basis,
            n_q,
            points: rule.points,
            weights: rule.weights,
            values,
            grads,
        })
    }
}

/// Contract one tensor axis with a `rows × cols` matrix.
///
/// Forward: `out[.., r, ..] = Σ_c mat[r, c] inp[.., c, ..]`.
/// Transposed: `out[.., c, ..] = Σ_r mat[r, c] inp[.., r, ..]`.
/// `shape` is the input shape; the output replaces `shape[axis]`. `lanes`
/// independent tensors are interleaved with the lane index fastest.
#[allow(clippy::too_many_arguments)]
fn contract(
    mat: &[f64],
    rows: usize,
    cols: usize,
    axis: usize,
    shape: [usize; 3],
    lanes: usize,
    inp: &[f64],
    out: &mut [f64],
    transpose: bool,
) {
    let pre: usize = lanes * shape[..axis].iter().product::<usize>();
    let post: usize = shape[axis + 1..].iter().product();
    let (n_in, n_out) = if transpose { (rows, cols) } else { (cols, rows) };
    debug_assert_eq!(shape[axis], n_in);
    if pre == 1 {
        for b in 0..post {
            let src = &inp[n_in * b..n_in * (b + 1)];
            for o in 0..n_out {
                out[o + n_out * b] = if transpose {
                    src.iter().enumerate().map(|(j, x)| mat[j * cols + o] * x).sum()
                } else {
                    mat[o * cols..o * cols + n_in].iter().zip(src).map(|(m, x)| m * x).sum()
                };
            }
        }
        return;
    }
    for b in 0..post {
        for o in 0..n_out {
            let dst = &mut out[pre * (o + n_out * b)..pre * (o + n_out * b + 1)];
            dst.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..n_in {
                let m = if transpose {
                    mat[j * cols + o]
                } else {
                    mat[o * cols + j]
                };
                if m == 0.0 {
                    continue;
                }
                let src = &inp[pre * (j + n_in * b)..pre * (j + n_in * b + 1)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += m * s;
                }
            }
        }
    }
}

/// Degree-of-freedom numbering of a continuous `Q_p` space.
#[derive(Debug, Clone)]
pub struct SpatialDofMap {
    pub dim: usize,
    pub degree: usize,
    pub nodes_per_axis: Vec<usize>,
    pub n_dofs: usize,
    pub dofs_per_cell: usize,
    cell_dofs: Vec<usize>,
    /// Sorted Dirichlet (boundary) indices.
    pub boundary_dofs: Vec<usize>,
    constrained: Vec<bool>,
}

impl SpatialDofMap {
    pub fn new(mesh: &MeshLevel, degree: usize) -> Result<Self> {
        if degree == 0 {
            return invalid("spatial degree must be at least 1");
        }
        let dim = mesh.dim;
        let nodes_per_axis: Vec<usize> = mesh.cells_per_axis.iter().map(|&c| c * degree + 1).collect();
        let n_dofs: usize = nodes_per_axis.iter().product();
        let n1 = degree + 1;
        let dofs_per_cell = n1.pow(dim as u32);
        let mut cell_dofs = Vec::with_capacity(mesh.n_cells() * dofs_per_cell);
        for c in 0..mesh.n_cells() {
            let ci = mesh.cell_index(c);
            for l in 0..dofs_per_cell {
                let mut idx = [0usize; 3];
                let mut rem = l;
                for a in 0..dim {
                    idx[a] = ci[a] * degree + rem % n1;
                    rem /= n1;
                }
                cell_dofs.push(lattice_to_dof(&nodes_per_axis, idx));
            }
        }
        let mut constrained = vec![false; n_dofs];
        let mut boundary_dofs = Vec::new();
        for (i, flag) in constrained.iter_mut().enumerate() {
            let idx = dof_to_lattice(&nodes_per_axis, i);
            if (0..dim).any(|a| idx[a] == 0 || idx[a] + 1 == nodes_per_axis[a]) {
                *flag = true;
                boundary_dofs.push(i);
            }
        }
        Ok(Self {
            dim,
            degree,
            nodes_per_axis,
            n_dofs,
            dofs_per_cell,
            cell_dofs,
            boundary_dofs,
            constrained,
        })
    }

    /// Global indices of a cell's local DoFs (lexicographic, first axis fastest).
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        &self.cell_dofs[cell * self.dofs_per_cell..(cell + 1) * self.dofs_per_cell]
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained[dof]
    }

    pub fn constrained_mask(&self) -> &[bool] {
        &self.constrained
    }

    pub fn lattice_index(&self, dof: usize) -> [usize; 3] {
        dof_to_lattice(&self.nodes_per_axis, dof)
    }

    pub fn dof_at(&self, idx: [usize; 3]) -> usize {
        lattice_to_dof(&self.nodes_per_axis, idx)
    }
}

fn lattice_to_dof(n: &[usize], idx: [usize; 3]) -> usize {
    let mut d = 0;
    let mut stride = 1;
    for (a, &na) in n.iter().enumerate() {
        d += idx[a] * stride;
        stride *= na;
    }
    d
}

fn dof_to_lattice(n: &[usize], dof: usize) -> [usize; 3] {
    let mut idx = [0; 3];
    let mut rem = dof;
    for (a, &na) in n.iter().enumerate() {
        idx[a] = rem % na;
        rem /= na;
    }
    idx
}

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(pos) => self.vals[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(|p| self.vals[p] * x[self.cols[p]])
                .sum();
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.cols[p])] = self.vals[p];
            }
        }
        d
    }
}

/// Counts of spatial operator applications.
#[derive(Debug, Default)]
pub struct ApplyCounters {
    mass: AtomicUsize,
    stiffness: AtomicUsize,
}

impl ApplyCounters {
    pub fn mass(&self) -> usize {
        self.mass.load(Ordering::Relaxed)
    }

    pub fn stiffness(&self) -> usize {
        self.stiffness.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.mass.store(0, Ordering::Relaxed);
        self.stiffness.store(0, Ordering::Relaxed);
    }
}

struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    grads: Vec<Vec<f64>>,
    local: Vec<f64>,
}

impl Scratch {
    fn new(size: usize, dim: usize) -> Self {
        Self {
            a: vec![0.0; size],
            b: vec![0.0; size],
            c: vec![0.0; size],
            grads: vec![vec![0.0; size]; dim],
            local: vec![0.0; size],
        }
    }
}

/// A continuous `Q_p` space on one mesh level with its mass and stiffness
/// operators.
pub struct FeSpace {
    pub mesh: MeshLevel,
    pub dofmap: SpatialDofMap,
    pub coefficient: CoefficientField,
    /// Nodal basis on the Gauss-Lobatto points of `[0, 1]`.
    pub basis: LagrangeBasis,
    pub tables: ShapeTables,
    /// `det J · w` per cell and quadrature point.
    jxw: Vec<f64>,
    /// `ρ det J w J^{-1} J^{-T}` per cell and quadrature point, `dim × dim`.
    metric: Vec<f64>,
    pub support_points: Vec<[f64; 3]>,
    pub counters: ApplyCounters,
}

impl std::fmt::Debug for FeSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeSpace")
            .field("dim", &self.mesh.dim)
            .field("degree", &self.dofmap.degree)
            .field("cells", &self.mesh.n_cells())
            .field("n_dofs", &self.dofmap.n_dofs)
            .finish()
    }
}

/// Padded Jacobian (identity on unused axes) at a reference point.
fn padded_jacobian(mesh: &MeshLevel, cell: usize, xi: &[f64]) -> Matrix3<f64> {
    let j = mesh.jacobian(cell, xi);
    let mut m = Matrix3::identity();
    for b in 0..mesh.dim {
        for a in 0..mesh.dim {
            m[(b, a)] = j[b][a];
        }
    }
    m
}

impl FeSpace {
    pub fn new(mesh: MeshLevel, degree: usize, coefficient: CoefficientField) -> Result<Self> {
        let dofmap = SpatialDofMap::new(&mesh, degree)?;
        let basis = LagrangeBasis::new(&gauss_lobatto(degree + 1)?.points)?;
        let tables = ShapeTables::new(&basis, degree + 1)?;
        let dim = mesh.dim;
        let nq = tables.n_q;
        let nq_cell = nq.pow(dim as u32);
        let n_cells = mesh.n_cells();
        let mut jxw = vec![0.0; n_cells * nq_cell];
        let mut metric = vec![0.0; n_cells * nq_cell * dim * dim];
        for c in 0..n_cells {
            for q in 0..nq_cell {
                let (xi, w) = tensor_point(&tables.points, &tables.weights, dim, q);
                let jac = padded_jacobian(&mesh, c, &xi[..dim]);
                let det = jac.determinant();
                if det <= 0.0 {
                    return Err(StmgError::NumericFailure(format!(
                        "non-positive Jacobian in cell {c}"
                    )));
                }
                let inv = jac.try_inverse().ok_or_else(|| {
                    StmgError::NumericFailure(format!("singular Jacobian in cell {c}"))
                })?;
                let x = mesh.map_point(c, &xi[..dim]);
                let rho = coefficient.eval(&x[..dim]);
                jxw[c * nq_cell + q] = det * w;
                let g = &mut metric[(c * nq_cell + q) * dim * dim..(c * nq_cell + q + 1) * dim * dim];
                for a in 0..dim {
                    for b in 0..dim {
                        let s: f64 = (0..dim).map(|e| inv[(a, e)] * inv[(b, e)]).sum();
                        g[a * dim + b] = rho * det * w * s;
                    }
                }
            }
        }
        let mut support_points = vec![[0.0; 3]; dofmap.n_dofs];
        let nodes = basis.nodes().to_vec();
        let n1 = degree + 1;
        for c in 0..n_cells {
            for (l, &g) in dofmap.cell_dofs(c).iter().enumerate() {
                let xi = local_node(&nodes, dim, n1, l);
                support_points[g] = mesh.map_point(c, &xi[..dim]);
            }
        }
        Ok(Self {
            mesh,
            dofmap,
            coefficient,
            basis,
            tables,
            jxw,
            metric,
            support_points,
            counters: ApplyCounters::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    pub fn degree(&self) -> usize {
        self.dofmap.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.dofmap.n_dofs
    }

    fn nq_cell(&self) -> usize {
        self.tables.n_q.pow(self.dim() as u32)
    }

    /// `y = M_h u` (no constraints).
    pub fn apply_mass(&self, u: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply(OperatorKind::Mass, u, y)
    }

    /// `y = A_h u` (no constraints).
    pub fn apply_stiffness(&self, u: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply(OperatorKind::Stiffness, u, y)
    }

    pub fn apply(&self, kind: OperatorKind, u: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.n_dofs(), u.len())?;
        check_len(self.n_dofs(), y.len())?;
        match kind {
            OperatorKind::Mass => self.counters.mass.fetch_add(1, Ordering::Relaxed),
            OperatorKind::Stiffness => self.counters.stiffness.fetch_add(1, Ordering::Relaxed),
        };
        let n_loc = self.dofmap.dofs_per_cell;
        let n_cells = self.mesh.n_cells();
        let size = n_loc.max(self.nq_cell());
        let dim = self.dim();
        let mut local = vec![0.0; n_cells * n_loc];
        local
            .par_chunks_mut(n_loc)
            .enumerate()
            .for_each_init(
                || Scratch::new(size, dim),
                |s, (c, out)| {
                    for (l, &g) in self.dofmap.cell_dofs(c).iter().enumerate() {
                        s.local[l] = u[g];
                    }
                    match kind {
                        OperatorKind::Mass => self.cell_mass(c, 1, s, out),
                        OperatorKind::Stiffness => self.cell_stiffness(c, 1, s, out),
                    }
                },
            );
        y.iter_mut().for_each(|v| *v = 0.0);
        for (c, vals) in local.chunks(n_loc).enumerate() {
            for (&g, &v) in self.dofmap.cell_dofs(c).iter().zip(vals) {
                y[g] += v;
            }
        }
        Ok(())
    }

    /// `ym = M_h u` and `ya = A_h u` in one pass over the cells. Counts as one
    /// application of each operator.
    pub fn apply_pair(&self, u: &[f64], ym: &mut [f64], ya: &mut [f64]) -> Result<()> {
        self.apply_pair_batch(u, 1, ym, ya)
    }

    /// [`apply_pair`](Self::apply_pair) for `nb` vectors stored one after the
    /// other. All vectors share each pass over a cell. Counts as `nb`
    /// applications of each operator.
    pub fn apply_pair_batch(&self, u: &[f64], nb: usize, ym: &mut [f64], ya: &mut [f64]) -> Result<()> {
        let n = self.n_dofs();
        check_len(n * nb, u.len())?;
        check_len(n * nb, ym.len())?;
        check_len(n * nb, ya.len())?;
        if nb == 0 {
            return Ok(());
        }
        self.counters.mass.fetch_add(nb, Ordering::Relaxed);
        self.counters.stiffness.fetch_add(nb, Ordering::Relaxed);
        let n_loc = self.dofmap.dofs_per_cell;
        let size = n_loc.max(self.nq_cell()) * nb;
        let dim = self.dim();
        let chunk = 2 * n_loc * nb;
        let mut local = vec![0.0; self.mesh.n_cells() * chunk];
        local.par_chunks_mut(chunk).enumerate().for_each_init(
            || Scratch::new(size, dim),
            |s, (c, out)| {
                for (l, &g) in self.dofmap.cell_dofs(c).iter().enumerate() {
                    for b in 0..nb {
                        s.local[l * nb + b] = u[b * n + g];
                    }
                }
                let (om, oa) = out.split_at_mut(n_loc * nb);
                self.cell_mass(c, nb, s, om);
                self.cell_stiffness(c, nb, s, oa);
            },
        );
        ym.iter_mut().for_each(|v| *v = 0.0);
        ya.iter_mut().for_each(|v| *v = 0.0);
        for (c, vals) in local.chunks(chunk).enumerate() {
            let (vm, va) = vals.split_at(n_loc * nb);
            for (l, &g) in self.dofmap.cell_dofs(c).iter().enumerate() {
                for b in 0..nb {
                    ym[b * n + g] += vm[l * nb + b];
                    ya[b * n + g] += va[l * nb + b];
                }
            }
        }
        Ok(())
    }

    /// Interpolate (or, with `transpose`, integrate) `lanes` interleaved
    /// nodal tensors with per-axis matrices; `mats[a]` is `(nq × n1)`.
    /// Result lands in `s_a`.
    fn sweep(&self, mats: [&[f64]; 3], lanes: usize, input: &[f64], s_a: &mut [f64], s_b: &mut [f64], transpose: bool) {
        let dim = self.dim();
        let (n1, nq) = (self.tables.n_basis, self.tables.n_q);
        let (n_from, n_to) = if transpose { (nq, n1) } else { (n1, nq) };
        let mut shape = [1usize; 3];
        for sh in shape.iter_mut().take(dim) {
            *sh = n_from;
        }
        let total_in: usize = lanes * shape.iter().product::<usize>();
        s_a[..total_in].copy_from_slice(&input[..total_in]);
        for (a, mat) in mats.iter().enumerate().take(dim) {
            contract(mat, nq, n1, a, shape, lanes, s_a, s_b, transpose);
            shape[a] = n_to;
            let total: usize = lanes * shape.iter().product::<usize>();
            s_a[..total].copy_from_slice(&s_b[..total]);
        }
    }

    fn cell_mass(&self, c: usize, nb: usize, s: &mut Scratch, out: &mut [f64]) {
        let v = self.tables.values.as_slice();
        let nqc = self.nq_cell();
        self.sweep([v, v, v], nb, &s.local, &mut s.a, &mut s.b, false);
        for q in 0..nqc {
            let w = self.jxw[c * nqc + q];
            for b in 0..nb {
                s.c[q * nb + b] = s.a[q * nb + b] * w;
            }
        }
        let input = std::mem::take(&mut s.c);
        self.sweep([v, v, v], nb, &input, &mut s.a, &mut s.b, true);
        s.c = input;
        out.copy_from_slice(&s.a[..out.len()]);
    }

    fn cell_stiffness(&self, c: usize, nb: usize, s: &mut Scratch, out: &mut [f64]) {
        let dim = self.dim();
        let v = self.tables.values.as_slice();
        let d = self.tables.grads.as_slice();
        let nqc = self.nq_cell();
        for a in 0..dim {
            let mut mats = [v, v, v];
            mats[a] = d;
            self.sweep(mats, nb, &s.local, &mut s.a, &mut s.b, false);
            s.grads[a][..nqc * nb].copy_from_slice(&s.a[..nqc * nb]);
        }
        // flux_b = Σ_a G[b][a] grad_a, stored back into grads
        let mut g = [0.0; 3];
        for q in 0..nqc {
            let m = &self.metric[(c * nqc + q) * dim * dim..(c * nqc + q + 1) * dim * dim];
            for l in q * nb..(q + 1) * nb {
                for (a, ga) in g.iter_mut().enumerate().take(dim) {
                    *ga = s.grads[a][l];
                }
                for b in 0..dim {
                    s.grads[b][l] = (0..dim).map(|a| m[b * dim + a] * g[a]).sum();
                }
            }
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        for b in 0..dim {
            let mut mats = [v, v, v];
            mats[b] = d;
            let input = std::mem::take(&mut s.grads[b]);
            self.sweep(mats, nb, &input, &mut s.a, &mut s.b, true);
            s.grads[b] = input;
            for (o, x) in out.iter_mut().zip(&s.a) {
                *o += x;
            }
        }
    }

    /// Element matrix of one cell by direct quadrature over local basis
    /// functions (no sum factorization).
    pub fn element_matrix(&self, kind: OperatorKind, cell: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let n1 = self.tables.n_basis;
        let nq = self.tables.n_q;
        let n_loc = self.dofmap.dofs_per_cell;
        let nqc = self.nq_cell();
        let mut k = DMatrix::zeros(n_loc, n_loc);
        let mut val = vec![0.0; n_loc];
        let mut grad = vec![[0.0; 3]; n_loc];
        for q in 0..nqc {
            let qi = split_index(q, nq, dim);
            for l in 0..n_loc {
                let li = split_index(l, n1, dim);
                let mut v = 1.0;
                let mut gr = [1.0; 3];
                for a in 0..dim {
                    let phi = self.tables.values[qi[a] * n1 + li[a]];
                    let dphi = self.tables.grads[qi[a] * n1 + li[a]];
                    v *= phi;
                    for (b, gb) in gr.iter_mut().enumerate().take(dim) {
                        *gb *= if a == b { dphi } else { phi };
                    }
                }
                val[l] = v;
                grad[l] = gr;
            }
            match kind {
                OperatorKind::Mass => {
                    let w = self.jxw[cell * nqc + q];
                    for i in 0..n_loc {
                        for j in 0..n_loc {
                            k[(i, j)] += w * val[i] * val[j];
                        }
                    }
                }
                OperatorKind::Stiffness => {
                    let m = &self.metric[(cell * nqc + q) * dim * dim..(cell * nqc + q + 1) * dim * dim];
                    for i in 0..n_loc {
                        for j in 0..n_loc {
                            let mut s = 0.0;
                            for a in 0..dim {
                                for b in 0..dim {
                                    s += grad[i][a] * m[a * dim + b] * grad[j][b];
                                }
                            }
                            k[(i, j)] += s;
                        }
                    }
                }
            }
        }
        k
    }

    /// Global sparse matrix assembled from element matrices.
    pub fn assemble_sparse(&self, kind: OperatorKind) -> CsrMatrix {
        let n_loc = self.dofmap.dofs_per_cell;
        let elems: Vec<DMatrix<f64>> = (0..self.mesh.n_cells())
            .into_par_iter()
            .map(|c| self.element_matrix(kind, c))
            .collect();
        let mut trip = Vec::with_capacity(elems.len() * n_loc * n_loc);
        for (c, k) in elems.iter().enumerate() {
            let dofs = self.dofmap.cell_dofs(c);
            for (i, &gi) in dofs.iter().enumerate() {
                for (j, &gj) in dofs.iter().enumerate() {
                    trip.push((gi, gj, k[(i, j)]));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_dofs(), trip)
    }

    /// Dense matrix of the matrix-free operator, column by column.
    pub fn assemble_dense(&self, kind: OperatorKind) -> Result<DMatrix<f64>> {
        let n = self.n_dofs();
        if n > DENSE_LIMIT {
            return Err(StmgError::SizeLimit(format!(
                "dense assembly of {n} DoFs exceeds {DENSE_LIMIT}"
            )));
        }
        let mut dense = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(kind, &e, &mut col)?;
            dense.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        Ok(dense)
    }

    /// Zero the constrained entries of `u`.
    pub fn zero_constrained(&self, u: &mut [f64]) {
        for &b in &self.dofmap.boundary_dofs {
            u[b] = 0.0;
        }
    }

    /// Operator with symmetric elimination of the Dirichlet DoFs: constrained
    /// inputs are dropped and constrained outputs equal the input (unit
    /// diagonal).
    pub fn apply_dirichlet(&self, kind: OperatorKind, u: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.n_dofs(), u.len())?;
        let mut free = u.to_vec();
        self.zero_constrained(&mut free);
        self.apply(kind, &free, y)?;
        for &b in &self.dofmap.boundary_dofs {
            y[b] = u[b];
        }
        Ok(())
    }

    /// Nodal interpolation of `f` at the support points.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let dim = self.dim();
        self.support_points.iter().map(|x| f(&x[..dim])).collect()
    }

    /// Value of the finite element function `u` at reference point `xi` of `cell`.
    pub fn evaluate(&self, u: &[f64], cell: usize, xi: &[f64]) -> f64 {
        let dim = self.dim();
        let n1 = self.tables.n_basis;
        let per_axis: Vec<Vec<f64>> = xi.iter().take(dim).map(|&t| self.basis.values(t)).collect();
        self.dofmap
            .cell_dofs(cell)
            .iter()
            .enumerate()
            .map(|(l, &g)| {
                let li = split_index(l, n1, dim);
                let w: f64 = (0..dim).map(|a| per_axis[a][li[a]]).product();
                w * u[g]
            })
            .sum()
    }

    /// Find the cell containing physical point `x` and the reference
    /// coordinates within it.
    pub fn locate(&self, x: &[f64]) -> Result<(usize, [f64; 3])> {
        let dim = self.dim();
        check_len(dim, x.len())?;
        if !self.mesh.extent.contains(x, 1e-12) {
            return invalid(format!("point {x:?} lies outside the domain"));
        }
        let guess = self.mesh.grid().locate(x);
        let gi = self.mesh.cell_index(guess);
        // the guess is exact on Cartesian meshes; perturbed cells may hand the
        // point to a neighbour
        let mut candidates = vec![guess];
        for off in 0..3usize.pow(dim as u32) {
            let mut idx = gi;
            let mut ok = true;
            for a in 0..dim {
                let o = (off / 3usize.pow(a as u32)) % 3;
                let v = gi[a] as isize + o as isize - 1;
                if v < 0 || v as usize >= self.mesh.cells_per_axis[a] {
                    ok = false;
                }
                idx[a] = v.max(0) as usize;
            }
            let c = self.mesh.cell_from_index(idx);
            if ok && c != guess {
                candidates.push(c);
            }
        }
        for c in candidates {
            if let Some(xi) = self.inverse_map(c, x) {
                if xi[..dim].iter().all(|&t| (-1e-10..=1.0 + 1e-10).contains(&t)) {
                    let mut xi = xi;
                    for t in xi.iter_mut().take(dim) {
                        *t = t.clamp(0.0, 1.0);
                    }
                    return Ok((c, xi));
                }
            }
        }
        Err(StmgError::NumericFailure(format!("could not locate point {x:?}")))
    }

    fn inverse_map(&self, cell: usize, x: &[f64]) -> Option<[f64; 3]> {
        let dim = self.dim();
        let mut xi = [0.5; 3];
        for _ in 0..50 {
            let y = self.mesh.map_point(cell, &xi[..dim]);
            let mut r = nalgebra::Vector3::zeros();
            for a in 0..dim {
                r[a] = x[a] - y[a];
            }
            if r.norm() < 1e-14 {
                return Some(xi);
            }
            let jac = padded_jacobian(&self.mesh, cell, &xi[..dim]);
            let dx = jac.lu().solve(&r)?;
            for a in 0..dim {
                xi[a] += dx[a];
            }
            if dx.norm() < 1e-15 {
                return Some(xi);
            }
        }
        Some(xi)
    }

    /// Value of `u` at physical point `x`.
    pub fn point_value(&self, u: &[f64], x: &[f64]) -> Result<f64> {
        let (c, xi) = self.locate(x)?;
        Ok(self.evaluate(u, c, &xi[..self.dim()]))
    }

    /// Gauss rule with `n_q` points per axis on every cell, for error norms.
    pub fn quadrature_cache(&self, n_q: usize) -> Result<QuadratureCache> {
        let dim = self.dim();
        let t = ShapeTables::new(&self.basis, n_q)?;
        let nq_cell = n_q.pow(dim as u32);
        let n1 = t.n_basis;
        let n_loc = self.dofmap.dofs_per_cell;
        let mut values = vec![0.0; nq_cell * n_loc];
        for q in 0..nq_cell {
            let qi = split_index(q, n_q, dim);
            for l in 0..n_loc {
                let li = split_index(l, n1, dim);
                values[q * n_loc + l] = (0..dim).map(|a| t.values[qi[a] * n1 + li[a]]).product();
            }
        }
        let n_cells = self.mesh.n_cells();
        let mut points = Vec::with_capacity(n_cells * nq_cell);
        let mut jxw = Vec::with_capacity(n_cells * nq_cell);
        for c in 0..n_cells {
            for q in 0..nq_cell {
                let (xi, w) = tensor_point(&t.points, &t.weights, dim, q);
                jxw.push(padded_jacobian(&self.mesh, c, &xi[..dim]).determinant() * w);
                points.push(self.mesh.map_point(c, &xi[..dim]));
            }
        }
        Ok(QuadratureCache {
            nq_cell,
            values,
            points,
            jxw,
        })
    }

    /// `(∫ (u - g)², max |u - g|)` over the quadrature points of `cache`.
    pub fn error_integrals(&self, cache: &QuadratureCache, u: &[f64], exact: impl Fn(&[f64]) -> f64 + Sync) -> (f64, f64) {
        let dim = self.dim();
        let nq = cache.nq_cell;
        let n_loc = self.dofmap.dofs_per_cell;
        (0..self.mesh.n_cells())
            .into_par_iter()
            .map(|c| {
                let dofs = self.dofmap.cell_dofs(c);
                let (mut l2, mut linf) = (0.0f64, 0.0f64);
                for q in 0..nq {
                    let row = &cache.values[q * n_loc..(q + 1) * n_loc];
                    let uh: f64 = row.iter().zip(dofs).map(|(v, &g)| v * u[g]).sum();
                    let x = &cache.points[c * nq + q];
                    let e = uh - exact(&x[..dim]);
                    l2 += cache.jxw[c * nq + q] * e * e;
                    linf = linf.max(e.abs());
                }
                (l2, linf)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)))
    }
}

/// Multi-index of a lexicographic tensor index with `n` entries per axis.
pub(crate) fn split_index(l: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut idx = [0; 3];
    let mut rem = l;
    for i in idx.iter_mut().take(dim) {
        *i = rem % n;
        rem /= n;
    }
    idx
}

fn local_node(nodes: &[f64], dim: usize, n1: usize, l: usize) -> [f64; 3] {
    let li = split_index(l, n1, dim);
    let mut xi = [0.0; 3];
    for a in 0..dim {
        xi[a] = nodes[li[a]];
    }
    xi
}

/// Physical quadrature points, weights and basis values for error integrals.
#[derive(Debug, Clone)]
pub struct QuadratureCache {
    nq_cell: usize,
    values: Vec<f64>,
    points: Vec<[f64; 3]>,
    jxw: Vec<f64>,
}

/// Tensor quadrature point and weight.
pub(crate) fn tensor_point(points: &[f64], weights: &[f64], dim: usize, q: usize) -> ([f64; 3], f64) {
    let qi = split_index(q, points.len(), dim);
    let mut xi = [0.0; 3];
    let mut w = 1.0;
    for a in 0..dim {
        xi[a] = points[qi[a]];
        w *= weights[qi[a]];
    }
    (xi, w)
}
