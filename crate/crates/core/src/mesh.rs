//! Structured tensor-product meshes (intervals, quadrilaterals, hexahedra) with
//! uniform refinement hierarchies, random vertex perturbation and cell-wise
//! coefficient fields.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, StmgError};
use crate::quadrature::gauss;

const MAX_CELLS: usize = 1 << 28;

/// Axis-aligned box `[lower, upper]` in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Extent {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }
}

/// Uniform grid of cells used to look up piecewise data by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub extent: Extent,
    pub cells: Vec<usize>,
}

impl CellGrid {
    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    /// Lexicographic index (first axis fastest) of the cell containing `x`;
    /// points outside the box are clamped to the nearest cell.
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.cells.len() {
            let (lo, hi) = (self.extent.lower[a], self.extent.upper[a]);
            let n = self.cells[a];
            let s = ((x[a] - lo) / (hi - lo) * n as f64).floor();
            let i = (s.max(0.0) as usize).min(n - 1);
            idx += i * stride;
            stride *= n;
        }
        idx
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let mut rem = cell;
        (0..self.cells.len())
            .map(|a| {
                let n = self.cells[a];
                let i = rem % n;
                rem /= n;
                let h = (self.extent.upper[a] - self.extent.lower[a]) / n as f64;
                self.extent.lower[a] + (i as f64 + 0.5) * h
            })
            .collect()
    }
}

/// One level of a structured mesh hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshLevel {
    pub dim: usize,
    pub extent: Extent,
    pub cells_per_axis: Vec<usize>,
    /// Vertex coordinates, lexicographic over the `(n_a + 1)` vertex grid.
    pub vertices: Vec<[f64; 3]>,
    pub level: usize,
    /// For each cell, the index of its parent on the next coarser level.
    pub parent: Option<Vec<usize>>,
    pub perturbed: bool,
}

impl MeshLevel {
    pub fn n_cells(&self) -> usize {
        self.cells_per_axis.iter().product()
    }

    pub fn n_vertices(&self) -> usize {
        self.cells_per_axis.iter().map(|n| n + 1).product()
    }

    pub fn n_cell_vertices(&self) -> usize {
        1 << self.dim
    }

    pub fn grid(&self) -> CellGrid {
        CellGrid {
            extent: self.extent.clone(),
            cells: self.cells_per_axis.clone(),
        }
    }

    /// Multi-index of a cell.
    pub fn cell_index(&self, cell: usize) -> [usize; 3] {
        let mut rem = cell;
        let mut idx = [0; 3];
        for a in 0..self.dim {
            idx[a] = rem % self.cells_per_axis[a];
            rem /= self.cells_per_axis[a];
        }
        idx
    }

    pub fn cell_from_index(&self, idx: [usize; 3]) -> usize {
        let mut c = 0;
        let mut stride = 1;
        for a in 0..self.dim {
            c += idx[a] * stride;
            stride *= self.cells_per_axis[a];
        }
        c
    }

    pub fn vertex_from_index(&self, idx: [usize; 3]) -> usize {
        let mut v = 0;
        let mut stride = 1;
        for a in 0..self.dim {
            v += idx[a] * stride;
            stride *= self.cells_per_axis[a] + 1;
        }
        v
    }

    pub fn vertex_index(&self, vertex: usize) -> [usize; 3] {
        let mut rem = vertex;
        let mut idx = [0; 3];
        for a in 0..self.dim {
            let n = self.cells_per_axis[a] + 1;
            idx[a] = rem % n;
            rem /= n;
        }
        idx
    }

    /// Vertices of a cell in lexicographic order (first axis fastest).
    pub fn cell_vertices(&self, cell: usize) -> Vec<usize> {
        let base = self.cell_index(cell);
        (0..self.n_cell_vertices())
            .map(|corner| {
                let mut idx = base;
                for (a, i) in idx.iter_mut().enumerate().take(self.dim) {
                    *i += (corner >> a) & 1;
                }
                self.vertex_from_index(idx)
            })
            .collect()
    }

    /// Cell-to-vertex connectivity.
    pub fn cell_to_vertex(&self) -> Vec<Vec<usize>> {
        (0..self.n_cells()).map(|c| self.cell_vertices(c)).collect()
    }

    fn corner_coords(&self, cell: usize) -> Vec<[f64; 3]> {
        self.cell_vertices(cell)
            .into_iter()
            .map(|v| self.vertices[v])
            .collect()
    }

    /// Physical position of the reference point `xi ∈ [0,1]^d` in `cell`
    /// under the multilinear cell map.
    pub fn map_point(&self, cell: usize, xi: &[f64]) -> [f64; 3] {
        let corners = self.corner_coords(cell);
        let mut x = [0.0; 3];
        for (corner, xc) in corners.iter().enumerate() {
            let mut w = 1.0;
            for (a, &s) in xi.iter().enumerate().take(self.dim) {
                w *= if (corner >> a) & 1 == 1 { s } else { 1.0 - s };
            }
            for b in 0..self.dim {
                x[b] += w * xc[b];
            }
        }
        x
    }

    /// Jacobian `J[b][a] = ∂x_b / ∂xi_a` of the cell map at `xi`.
    pub fn jacobian(&self, cell: usize, xi: &[f64]) -> [[f64; 3]; 3] {
        let corners = self.corner_coords(cell);
        let mut jac = [[0.0; 3]; 3];
        for (corner, xc) in corners.iter().enumerate() {
            for a in 0..self.dim {
                let mut w = 1.0;
                for (c, &s) in xi.iter().enumerate().take(self.dim) {
                    let bit = (corner >> c) & 1 == 1;
                    w *= if c == a {
                        if bit {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if bit {
                        s
                    } else {
                        1.0 - s
                    };
                }
                for b in 0..self.dim {
                    jac[b][a] += w * xc[b];
                }
            }
        }
        jac
    }

    /// Smallest and largest edge length over the mesh.
    pub fn edge_length_range(&self) -> (f64, f64) {
        let mut hmin = f64::INFINITY;
        let mut hmax: f64 = 0.0;
        for v in 0..self.n_vertices() {
            let idx = self.vertex_index(v);
            for a in 0..self.dim {
                if idx[a] < self.cells_per_axis[a] {
                    let mut n = idx;
                    n[a] += 1;
                    let l = dist(&self.vertices[v], &self.vertices[self.vertex_from_index(n)]);
                    hmin = hmin.min(l);
                    hmax = hmax.max(l);
                }
            }
        }
        (hmin, hmax)
    }

    fn min_adjacent_edge(&self, v: usize) -> f64 {
        let idx = self.vertex_index(v);
        let mut m = f64::INFINITY;
        for a in 0..self.dim {
            for dir in [-1i64, 1] {
                let j = idx[a] as i64 + dir;
                if j < 0 || j > self.cells_per_axis[a] as i64 {
                    continue;
                }
                let mut n = idx;
                n[a] = j as usize;
                m = m.min(dist(&self.vertices[v], &self.vertices[self.vertex_from_index(n)]));
            }
        }
        m
    }

    /// Minimal Jacobian determinant over corners and a 6-point Gauss grid of
    /// every cell, together with the cell where it occurs.
    pub fn min_jacobian(&self) -> (f64, usize) {
        let g = gauss(6).expect("valid rule").points;
        let mut pts: Vec<f64> = vec![0.0, 1.0];
        pts.extend(g);
        let n = pts.len();
        let total = n.pow(self.dim as u32);
        let mut worst = (f64::INFINITY, 0);
        for cell in 0..self.n_cells() {
            for q in 0..total {
                let mut xi = [0.0; 3];
                let mut rem = q;
                for x in xi.iter_mut().take(self.dim) {
                    *x = pts[rem % n];
                    rem /= n;
                }
                let det = determinant(&self.jacobian(cell, &xi[..self.dim]), self.dim);
                if det < worst.0 {
                    worst = (det, cell);
                }
            }
        }
        worst
    }

    /// Random vertex displacement by `magnitude` times the shortest adjacent
    /// edge. Boundary vertices only move within their boundary facet; corners
    /// stay fixed.
    pub fn perturb(&self, magnitude: f64, seed: u64) -> Result<MeshLevel> {
        if !(0.0..0.5).contains(&magnitude) {
            return invalid(format!("perturbation magnitude {magnitude} not in [0, 0.5)"));
        }
        let mut out = self.clone();
        if magnitude == 0.0 {
            return Ok(out);
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        for v in 0..self.n_vertices() {
            let mut dir = [0.0; 3];
            let mut norm2: f64 = 0.0;
            while norm2 < 1e-24 {
                norm2 = 0.0;
                for d in dir.iter_mut().take(self.dim) {
                    *d = StandardNormal.sample(&mut rng);
                    norm2 += *d * *d;
                }
            }
            let len = magnitude * self.min_adjacent_edge(v) / norm2.sqrt();
            let idx = self.vertex_index(v);
            for a in 0..self.dim {
                let on_boundary = idx[a] == 0 || idx[a] == self.cells_per_axis[a];
                if !on_boundary {
                    out.vertices[v][a] += len * dir[a];
                }
            }
        }
        out.perturbed = true;
        let (det, cell) = out.min_jacobian();
        if det <= 0.0 {
            return Err(StmgError::PerturbationFailure { cell });
        }
        Ok(out)
    }

    /// Summary used in JSON reports.
    pub fn summary(&self) -> MeshSummary {
        let (h_min, h_max) = self.edge_length_range();
        MeshSummary {
            level: self.level,
            cells: self.n_cells(),
            vertices: self.n_vertices(),
            cells_per_axis: self.cells_per_axis.clone(),
            h_min,
            h_max,
            perturbed: self.perturbed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub level: usize,
    pub cells: usize,
    pub vertices: usize,
    pub cells_per_axis: Vec<usize>,
    pub h_min: f64,
    pub h_max: f64,
    pub perturbed: bool,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub(crate) fn determinant(j: &[[f64; 3]; 3], dim: usize) -> f64 {
    match dim {
        1 => j[0][0],
        2 => j[0][0] * j[1][1] - j[0][1] * j[1][0],
        _ => {
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
        }
    }
}

/// Nested levels, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshHierarchy {
    pub levels: Vec<MeshLevel>,
}

impl MeshHierarchy {
    pub fn finest(&self) -> &MeshLevel {
        self.levels.last().expect("hierarchy is never empty")
    }

    pub fn coarsest(&self) -> &MeshLevel {
        &self.levels[0]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Perturbs the finest level; coarser levels take the perturbed positions
    /// of the fine vertices they coincide with, so vertex positions stay nested.
    pub fn perturb(&self, magnitude: f64, seed: u64) -> Result<MeshHierarchy> {
        let mut levels = self.levels.clone();
        let fine = self.finest().perturb(magnitude, seed)?;
        let n = levels.len();
        levels[n - 1] = fine;
        for l in (0..n - 1).rev() {
            let (coarse_part, fine_part) = levels.split_at_mut(l + 1);
            let coarse = &mut coarse_part[l];
            let finer = &fine_part[0];
            for v in 0..coarse.n_vertices() {
                let mut idx = coarse.vertex_index(v);
                for i in idx.iter_mut().take(coarse.dim) {
                    *i *= 2;
                }
                coarse.vertices[v] = finer.vertices[finer.vertex_from_index(idx)];
            }
            coarse.perturbed = magnitude > 0.0;
            let (det, cell) = coarse.min_jacobian();
            if det <= 0.0 {
                return Err(StmgError::PerturbationFailure { cell });
            }
        }
        Ok(MeshHierarchy { levels })
    }

    pub fn summaries(&self) -> Vec<MeshSummary> {
        self.levels.iter().map(MeshLevel::summary).collect()
    }
}

fn cartesian_level(dim: usize, extent: &Extent, cells: Vec<usize>, level: usize) -> MeshLevel {
    let mut mesh = MeshLevel {
        dim,
        extent: extent.clone(),
        cells_per_axis: cells,
        vertices: Vec::new(),
        level,
        parent: None,
        perturbed: false,
    };
    let nv = mesh.n_vertices();
    mesh.vertices = (0..nv)
        .map(|v| {
            let idx = mesh.vertex_index(v);
            let mut x = [0.0; 3];
            for a in 0..dim {
                let n = mesh.cells_per_axis[a];
                let (lo, hi) = (extent.lower[a], extent.upper[a]);
                x[a] = if idx[a] == n {
                    hi
                } else {
                    lo + (hi - lo) * idx[a] as f64 / n as f64
                };
            }
            x
        })
        .collect();
    mesh
}

/// Builds `refinements + 1` nested Cartesian levels; level `l` has
/// `base_cells_per_axis * 2^l` cells per axis.
pub fn make_cartesian(
    dim: usize,
    extent: &Extent,
    refinements: usize,
    base_cells_per_axis: usize,
) -> Result<MeshHierarchy> {
    if !(1..=3).contains(&dim) {
        return invalid(format!("dimension {dim} not in 1..=3"));
    }
    if extent.dim() != dim || extent.upper.len() != dim {
        return invalid("extent dimension does not match mesh dimension");
    }
    if extent
        .lower
        .iter()
        .zip(&extent.upper)
        .any(|(lo, hi)| !(hi > lo))
    {
        return invalid("empty extent");
    }
    if base_cells_per_axis == 0 {
        return invalid("base mesh needs at least one cell per axis");
    }
    let fine_per_axis = 1usize
        .checked_shl(refinements as u32)
        .and_then(|f| f.checked_mul(base_cells_per_axis))
        .filter(|_| refinements < 40)
        .ok_or_else(|| StmgError::SizeLimit("cells per axis overflow".into()))?;
    let total = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(fine_per_axis));
    match total {
        Some(t) if t <= MAX_CELLS => {}
        _ => {
            return Err(StmgError::SizeLimit(format!(
                "{fine_per_axis}^{dim} cells exceeds the limit of {MAX_CELLS}"
            )))
        }
    }
    let mut levels: Vec<MeshLevel> = Vec::with_capacity(refinements + 1);
    for l in 0..=refinements {
        let n = base_cells_per_axis << l;
        let mut mesh = cartesian_level(dim, extent, vec![n; dim], l);
        if l > 0 {
            let coarse = &levels[l - 1];
            let parent = (0..mesh.n_cells())
                .map(|c| {
                    let mut idx = mesh.cell_index(c);
                    for i in idx.iter_mut().take(dim) {
                        *i /= 2;
                    }
                    coarse.cell_from_index(idx)
                })
                .collect();
            mesh.parent = Some(parent);
        }
        levels.push(mesh);
    }
    Ok(MeshHierarchy { levels })
}

/// Scalar coefficient (diffusivity or squared sound speed) over the domain.
#[derive(Clone)]
pub enum CoefficientField {
    Constant(f64),
    PiecewiseByCoarseCell { grid: CellGrid, values: Vec<f64> },
    Callable(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Self::PiecewiseByCoarseCell { grid, values } => f
                .debug_struct("PiecewiseByCoarseCell")
                .field("cells", &grid.cells)
                .field("values", &values.len())
                .finish(),
            Self::Callable(_) => f.write_str("Callable"),
        }
    }
}

impl CoefficientField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::PiecewiseByCoarseCell { grid, values } => values[grid.locate(x)],
            Self::Callable(f) => f(x),
        }
    }

    /// Multiplies the field by one factor `c ~ U[lo, hi]` per cell of `grid`.
    pub fn randomize(&self, grid: &CellGrid, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi) {
            return invalid(format!("randomization range [{lo}, {hi}] invalid"));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let factors: Vec<f64> = if lo == hi {
            vec![lo; grid.n_cells()]
        } else {
            let dist = Uniform::new_inclusive(lo, hi)
                .map_err(|e| StmgError::InvalidArgument(e.to_string()))?;
            (0..grid.n_cells()).map(|_| dist.sample(&mut rng)).collect()
        };
        Ok(match self {
            Self::Constant(c) => Self::PiecewiseByCoarseCell {
                grid: grid.clone(),
                values: factors.iter().map(|f| f * c).collect(),
            },
            Self::PiecewiseByCoarseCell { grid: g, values } if g == grid => {
                Self::PiecewiseByCoarseCell {
                    grid: grid.clone(),
                    values: values.iter().zip(&factors).map(|(v, f)| v * f).collect(),
                }
            }
            other => {
                let base = other.clone();
                let grid = grid.clone();
                Self::Callable(Arc::new(move |x: &[f64]| {
                    base.eval(x) * factors[grid.locate(x)]
                }))
            }
        })
    }

    pub fn min_on_samples(&self, pts: &[Vec<f64>]) -> f64 {
        pts.iter().map(|p| self.eval(p)).fold(f64::INFINITY, f64::min)
    }
}

/// Layered coefficient of the heterogeneous wave example: 1 below `y = 0.2`,
/// above it 9 for `z < 0.2` and 16 otherwise. In 2D the `z` clause is dropped.
pub fn coefficient_shm(dim: usize) -> CoefficientField {
    CoefficientField::Callable(Arc::new(move |x: &[f64]| {
        let y = if x.len() > 1 { x[1] } else { 0.0 };
        if y < 0.2 {
            1.0
        } else if dim < 3 || x[2] < 0.2 {
            9.0
        } else {
            16.0
        }
    }))
}
