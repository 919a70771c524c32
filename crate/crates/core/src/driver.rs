//! Time marching over batches of steps, manufactured-solution studies, error
//! norms, work accounting and the heterogeneous wave demo.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, StmgError};
use crate::krylov::{gmres, GmresSettings, SolveStats};
use crate::mesh::{coefficient_shm, make_cartesian, CoefficientField, Extent, MeshSummary};
use crate::quadrature::gauss;
use crate::space_fem::{split_index, FeSpace};
use crate::st_operator::{Equation, SpaceTimeOperator, SpaceTimeVector, StepState};
use crate::stmg::{default_strategy, plan_levels, Coarsening, LevelDesc, LevelSummary, Multigrid, MultigridSettings};
use crate::time_basis::TimeScheme;

/// `f(x, t)`.
pub type ScalarFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// `g(x)`.
pub type InitialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Data of the initial-boundary value problem. Missing entries are zero.
#[derive(Clone, Default)]
pub struct ProblemData {
    pub source: Option<ScalarFn>,
    pub dirichlet: Option<ScalarFn>,
    pub u0: Option<InitialFn>,
    pub v0: Option<InitialFn>,
    pub exact_u: Option<ScalarFn>,
    pub exact_v: Option<ScalarFn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Shift length as a fraction of the shortest adjacent edge.
    pub magnitude: f64,
    pub seed: u64,
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub equation: Equation,
    pub scheme: TimeScheme,
    pub k: usize,
    pub p: usize,
    pub dim: usize,
    pub domain: Extent,
    pub t_final: f64,
    /// Spatial refinements; time is refined once more.
    pub refinements: usize,
    pub base_cells: usize,
    pub base_intervals: usize,
    /// Time steps solved together.
    pub batch: usize,
    pub coefficient: CoefficientField,
    pub data: ProblemData,
    pub perturbation: Option<Perturbation>,
    pub gmres: GmresSettings,
    pub multigrid: MultigridSettings,
    /// Coarsening sequence; space first, then time when `None`.
    pub strategy: Option<Vec<Coarsening>>,
    pub probes: Vec<Vec<f64>>,
    /// Probe samples per time step.
    pub probe_samples: usize,
    /// Keep every step's coefficients in the report.
    pub keep_trajectory: bool,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("equation", &self.equation)
            .field("scheme", &self.scheme)
            .field("k", &self.k)
            .field("p", &self.p)
            .field("dim", &self.dim)
            .field("refinements", &self.refinements)
            .field("batch", &self.batch)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn n_steps(&self) -> usize {
        self.base_intervals << (self.refinements + 1)
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.n_steps() as f64
    }

    pub fn cells_per_axis(&self) -> usize {
        self.base_cells << self.refinements
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) || self.domain.dim() != self.dim {
            return invalid("dimension must be 1, 2 or 3 and match the domain");
        }
        if self.p == 0 || self.p > 8 {
            return invalid(format!("spatial degree {} outside 1..=8", self.p));
        }
        if self.k < self.scheme.min_order() || self.k > 8 {
            return invalid(format!("temporal order {} unsupported for {}", self.k, self.scheme));
        }
        if !(self.t_final > 0.0) {
            return invalid("final time must be positive");
        }
        if self.base_cells == 0 || self.base_intervals == 0 || self.batch == 0 {
            return invalid("base cells, base intervals and batch size must be positive");
        }
        if self.refinements > 12 {
            return invalid("too many refinements");
        }
        if !self.n_steps().is_multiple_of(self.batch) {
            return invalid(format!(
                "batch size {} does not divide the {} time steps",
                self.batch,
                self.n_steps()
            ));
        }
        for x in &self.probes {
            if x.len() != self.dim || !self.domain.contains(x, 1e-12) {
                return invalid(format!("probe {x:?} lies outside the domain"));
            }
        }
        Ok(())
    }

    /// Multigrid levels, finest first.
    pub fn plan(&self) -> Result<Vec<LevelDesc>> {
        let finest = LevelDesc {
            coarsening: None,
            mesh_level: self.refinements,
            p: self.p,
            k: self.k,
            n_steps: self.batch,
        };
        let strategy = match &self.strategy {
            Some(s) => s.clone(),
            None => default_strategy(finest, self.scheme),
        };
        plan_levels(finest, self.scheme, &strategy)
    }
}

/// Error norms of one field over the space-time domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub linf_linf: f64,
    pub l2_l2: f64,
    pub linf_l2: f64,
}

#[derive(Debug, Clone, Default)]
struct ErrorAccumulator {
    linf: f64,
    l2_sq: f64,
    linf_l2: f64,
}

impl ErrorAccumulator {
    fn add(&mut self, weight: f64, l2_sq: f64, linf: f64) {
        self.linf = self.linf.max(linf);
        self.l2_sq += weight * l2_sq;
        self.linf_l2 = self.linf_l2.max(l2_sq.sqrt());
    }

    fn finish(&self) -> ErrorRecord {
        ErrorRecord {
            linf_linf: self.linf,
            l2_l2: self.l2_sq.sqrt(),
            linf_l2: self.linf_l2,
        }
    }
}

/// Wall time per program section, in seconds. The four sections sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionTimes {
    pub gmg_without_smoother: f64,
    pub smoother: f64,
    pub operator_without_gmg: f64,
    pub other: f64,
    pub total: f64,
    pub dofs_per_second: f64,
}

impl SectionTimes {
    pub const NAMES: [&'static str; 4] = ["GMG w/o Smoother", "Smoother", "Operator w/o GMG", "Other"];

    pub fn values(&self) -> [f64; 4] {
        [self.gmg_without_smoother, self.smoother, self.operator_without_gmg, self.other]
    }
}

/// Point values of the displacement over time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// `values[probe][sample]`.
    pub values: Vec<Vec<f64>>,
}

/// Result of one `march`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub equation: String,
    pub scheme: String,
    pub k: usize,
    pub p: usize,
    pub dim: usize,
    pub refinements: usize,
    pub batch: usize,
    pub n_steps: usize,
    pub tau: f64,
    pub spatial_dofs: usize,
    /// Space-time unknowns of the whole run.
    pub total_dofs: usize,
    pub mesh: Option<MeshSummary>,
    pub errors_u: Option<ErrorRecord>,
    pub errors_v: Option<ErrorRecord>,
    /// GMRES iterations per batch.
    pub iterations: Vec<usize>,
    pub mean_iterations: f64,
    pub work: f64,
    pub converged: bool,
    /// CGP: largest relative value jump at step boundaries.
    pub continuity_defect: Option<f64>,
    /// DG: largest nodal jump `|u(t_n⁺) − u(t_n⁻)|` at step boundaries.
    pub max_jump: Option<f64>,
    pub sections: SectionTimes,
    pub hierarchy: Vec<LevelSummary>,
    pub probes: Option<ProbeSeries>,
    pub notes: Vec<String>,
    /// Coefficients of every step (`n_t · n_x` each) when requested.
    #[serde(skip)]
    pub trajectory: Vec<Vec<f64>>,
}

/// `w = Σ N_t · N_x · N_iter` over the solved batch systems.
pub fn work_metric(n_t: usize, n_x: usize, iterations: &[usize]) -> f64 {
    iterations.iter().map(|&it| (n_t * n_x * it) as f64).sum()
}

/// Experimental orders `log2(e_r / e_{r+1})`.
pub fn eoc(errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None];
    for w in errors.windows(2) {
        out.push(if w[0] > 0.0 && w[1] > 0.0 {
            Some((w[0] / w[1]).log2())
        } else {
            None
        });
    }
    out
}

/// Interpolation weights of a point: `u(x) = Σ w_i u[dof_i]`.
pub fn probe_weights(space: &FeSpace, x: &[f64]) -> Result<Vec<(usize, f64)>> {
    let (cell, xi) = space.locate(x)?;
    let dim = space.dim();
    let n1 = space.degree() + 1;
    let per_axis: Vec<Vec<f64>> = (0..dim).map(|a| space.basis.values(xi[a])).collect();
    Ok(space
        .dofmap
        .cell_dofs(cell)
        .iter()
        .enumerate()
        .map(|(l, &g)| {
            let li = split_index(l, n1, dim);
            (g, (0..dim).map(|a| per_axis[a][li[a]]).product())
        })
        .collect())
}

/// `c_start · prev + Σ c_j blocks_j` for one step.
fn combine(c_start: f64, prev: &[f64], c: &[f64], v: &SpaceTimeVector, s: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = c_start * prev.get(i).copied().unwrap_or(0.0);
    }
    for (j, &cj) in c.iter().enumerate() {
        if cj != 0.0 {
            for (o, x) in out.iter_mut().zip(v.block(s, j)) {
                *o += cj * x;
            }
        }
    }
}

/// Solve the space-time problem batch by batch.
pub fn march(spec: &ProblemSpec) -> Result<RunReport> {
    let start = Instant::now();
    spec.validate()?;
    let mut meshes = make_cartesian(spec.dim, &spec.domain, spec.refinements, spec.base_cells)?;
    if let Some(pert) = spec.perturbation {
        meshes = meshes.perturb(pert.magnitude, pert.seed)?;
    }
    let plan = spec.plan()?;
    let tau = spec.tau();
    let mg = Multigrid::build(
        spec.equation,
        spec.scheme,
        tau,
        &plan,
        &meshes,
        &spec.coefficient,
        spec.multigrid,
    )?;
    let op = mg.finest();
    let space = op.space.clone();
    let (nt, nx) = (op.n_t(), op.n_x());
    let wave = spec.equation == Equation::Wave;
    let weights = op.weights.clone();

    let zero_f = |_: &[f64], _: f64| 0.0;
    let source: &(dyn Fn(&[f64], f64) -> f64 + Sync) = match &spec.data.source {
        Some(f) => f.as_ref(),
        None => &zero_f,
    };
    let dirichlet = spec.data.dirichlet.as_ref().map(|g| g.as_ref() as &(dyn Fn(&[f64], f64) -> f64 + Sync));

    let mut state = StepState::zeros(spec.equation, nx);
    if let Some(u0) = &spec.data.u0 {
        state.u_prev = space.interpolate(|x| u0(x));
    }
    if wave {
        if let Some(v0) = &spec.data.v0 {
            state.v_prev = space.interpolate(|x| v0(x));
        }
    }
    if let Some(g) = &spec.data.dirichlet {
        for &b in &space.dofmap.boundary_dofs {
            let x = &space.support_points[b][..spec.dim];
            state.u_prev[b] = g(x, 0.0);
        }
    }

    // temporal and spatial quadrature for the error norms
    let tq = gauss(spec.k + 2)?;
    let tq_coef: Vec<(f64, Vec<f64>)> = tq.points.iter().map(|&t| weights.eval_coefficients(t)).collect();
    let quad = if spec.data.exact_u.is_some() {
        Some(space.quadrature_cache(spec.p + 2)?)
    } else {
        None
    };
    let mut err_u = ErrorAccumulator::default();
    let mut err_v = ErrorAccumulator::default();

    let probe_w: Vec<Vec<(usize, f64)>> =
        spec.probes.iter().map(|x| probe_weights(&space, x)).collect::<Result<_>>()?;
    let samples = spec.probe_samples.max(1);
    let sample_coef: Vec<(f64, Vec<f64>)> =
        (0..samples).map(|j| weights.eval_coefficients(j as f64 / samples as f64)).collect();
    let mut probes = ProbeSeries {
        points: spec.probes.clone(),
        values: vec![Vec::new(); spec.probes.len()],
        ..Default::default()
    };
    let start_coef = weights.eval_coefficients(0.0);
    let end_coef = weights.eval_coefficients(1.0);

    let mut report = RunReport {
        equation: spec.equation.to_string(),
        scheme: spec.scheme.to_string(),
        k: spec.k,
        p: spec.p,
        dim: spec.dim,
        refinements: spec.refinements,
        batch: spec.batch,
        n_steps: spec.n_steps(),
        tau,
        spatial_dofs: nx,
        total_dofs: spec.n_steps() * nt * nx,
        mesh: Some(meshes.finest().summary()),
        hierarchy: mg.summaries(),
        converged: true,
        ..Default::default()
    };

    let shape = (op.n_steps, nt, nx);
    let timers = mg.timers.clone();
    timers.reset();
    let mut jump: f64 = 0.0;
    let mut continuity: f64 = 0.0;
    let mut tmp = vec![0.0; nx];
    let mut tmp2 = vec![0.0; nx];
    let n_batches = spec.n_steps() / spec.batch;
    for b in 0..n_batches {
        let t_start = b as f64 * spec.batch as f64 * tau;
        let rhs = op.build_rhs(source, dirichlet, &state, t_start)?;
        let mut x = vec![0.0; rhs.len()];
        for blk in 0..op.n_steps * nt {
            for &d in &space.dofmap.boundary_dofs {
                x[blk * nx + d] = rhs.data[blk * nx + d];
            }
        }
        let stats = solve_batch(op, &mg, &rhs, &mut x, &spec.gmres, shape)?;
        report.iterations.push(stats.iterations);
        if !stats.converged {
            report.converged = false;
            return Err(StmgError::NotConverged(format!(
                "batch {b} stopped after {} iterations at residual {:.3e} (initial {:.3e})",
                stats.iterations, stats.final_residual, stats.initial_residual
            )));
        }
        let u = SpaceTimeVector::from_vec(shape.0, shape.1, shape.2, x)?;
        let v = if wave { Some(op.velocity_update(&u, &state)?) } else { None };

        // step boundary behaviour against the previous step
        for s in 0..op.n_steps {
            let prev_end: Vec<f64> = if s == 0 {
                state.u_prev.clone()
            } else {
                u.block(s - 1, nt - 1).to_vec()
            };
            let is_first = b == 0 && s == 0;
            if !is_first {
                combine(start_coef.0, &prev_end, &start_coef.1, &u, s, &mut tmp);
                let d = tmp.iter().zip(&prev_end).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
                let scale = prev_end.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                match spec.scheme {
                    TimeScheme::DG => jump = jump.max(d),
                    TimeScheme::CGP => continuity = continuity.max(d / scale),
                }
            }
            // the last temporal unknown is the step end value
            combine(end_coef.0, &prev_end, &end_coef.1, &u, s, &mut tmp);
            let d = tmp.iter().zip(u.block(s, nt - 1)).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            if spec.scheme == TimeScheme::CGP {
                let scale = tmp.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                continuity = continuity.max(d / scale);
            }
        }

        if let (Some(q), Some(exact)) = (&quad, &spec.data.exact_u) {
            for s in 0..op.n_steps {
                let t0 = t_start + s as f64 * tau;
                let prev_u: &[f64] = if s == 0 { &state.u_prev } else { u.block(s - 1, nt - 1) };
                for (qi, (c0, c)) in tq_coef.iter().enumerate() {
                    let t = t0 + tau * tq.points[qi];
                    combine(*c0, prev_u, c, &u, s, &mut tmp);
                    let (l2, li) = space.error_integrals(q, &tmp, |x| exact(x, t));
                    err_u.add(tau * tq.weights[qi], l2, li);
                    if let (Some(v), Some(exact_v)) = (&v, &spec.data.exact_v) {
                        let prev_v: &[f64] = if s == 0 { &state.v_prev } else { v.block(s - 1, nt - 1) };
                        combine(*c0, prev_v, c, v, s, &mut tmp2);
                        let (l2, li) = space.error_integrals(q, &tmp2, |x| exact_v(x, t));
                        err_v.add(tau * tq.weights[qi], l2, li);
                    }
                }
            }
        }

        if !probe_w.is_empty() {
            for s in 0..op.n_steps {
                let t0 = t_start + s as f64 * tau;
                let prev_u: &[f64] = if s == 0 { &state.u_prev } else { u.block(s - 1, nt - 1) };
                for (j, (c0, c)) in sample_coef.iter().enumerate() {
                    probes.times.push(t0 + tau * j as f64 / samples as f64);
                    for (pw, series) in probe_w.iter().zip(probes.values.iter_mut()) {
                        let mut val = 0.0;
                        for &(g, w) in pw {
                            let mut ug = c0 * prev_u[g];
                            for (i, ci) in c.iter().enumerate() {
                                ug += ci * u.block(s, i)[g];
                            }
                            val += w * ug;
                        }
                        series.push(val);
                    }
                }
            }
        }

        if spec.keep_trajectory {
            for s in 0..op.n_steps {
                report.trajectory.push(u.data[s * nt * nx..(s + 1) * nt * nx].to_vec());
            }
        }
        state = op.end_state(&u, v.as_ref());
    }
    if !probe_w.is_empty() {
        probes.times.push(spec.t_final);
        for (pw, series) in probe_w.iter().zip(probes.values.iter_mut()) {
            series.push(pw.iter().map(|&(g, w)| w * state.u_prev[g]).sum());
        }
        report.probes = Some(probes);
    }
    if quad.is_some() {
        report.errors_u = Some(err_u.finish());
        if wave && spec.data.exact_v.is_some() {
            report.errors_v = Some(err_v.finish());
        }
    }
    match spec.scheme {
        TimeScheme::DG => report.max_jump = Some(jump),
        TimeScheme::CGP => report.continuity_defect = Some(continuity),
    }
    report.mean_iterations = report.iterations.iter().sum::<usize>() as f64 / report.iterations.len().max(1) as f64;
    report.work = work_metric(nt * spec.batch, nx, &report.iterations);

    let total = start.elapsed().as_secs_f64();
    let smoother = timers.smoother();
    let gmg = (timers.vcycle() - smoother).max(0.0);
    let operator = timers.operator();
    report.sections = SectionTimes {
        gmg_without_smoother: gmg,
        smoother,
        operator_without_gmg: operator,
        other: (total - gmg - smoother - operator).max(0.0),
        total,
        dofs_per_second: report.total_dofs as f64 / total.max(1e-12),
    };
    // keep the closure exact when clock granularity makes "other" negative
    report.sections.total = report.sections.values().iter().sum();
    Ok(report)
}

fn solve_batch(
    op: &SpaceTimeOperator,
    mg: &Multigrid,
    rhs: &SpaceTimeVector,
    x: &mut [f64],
    settings: &GmresSettings,
    shape: (usize, usize, usize),
) -> Result<SolveStats> {
    let timers = mg.timers.clone();
    gmres(
        |v, y| {
            let t = Instant::now();
            let vin = SpaceTimeVector::from_vec(shape.0, shape.1, shape.2, v.to_vec())?;
            let mut out = op.zeros();
            op.apply(&vin, &mut out)?;
            y.copy_from_slice(&out.data);
            timers.add_operator(t.elapsed().as_secs_f64());
            Ok(())
        },
        |v, y| {
            let vin = SpaceTimeVector::from_vec(shape.0, shape.1, shape.2, v.to_vec())?;
            let c = mg.precondition(&vin)?;
            y.copy_from_slice(&c.data);
            Ok(())
        },
        &rhs.data,
        x,
        settings,
    )
}

/// Tolerances of the convergence study.
pub fn study_gmres() -> GmresSettings {
    GmresSettings {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        max_iter: 500,
        restart: 100,
    }
}

/// `u = sin(2π f t) Π_a sin(2π f x_a)` on the unit cube over `[0, 1]`,
/// homogeneous Dirichlet data and unit coefficient. The coarse grid has two
/// cells per axis and two time steps, so no vertex sits on every zero of `u`.
pub fn manufactured(equation: Equation, scheme: TimeScheme, k: usize, p: usize, dim: usize, refinements: usize, freq: f64) -> ProblemSpec {
    let w = 2.0 * PI * freq;
    let space_part = move |x: &[f64]| x.iter().map(|&xa| (w * xa).sin()).product::<f64>();
    let exact_u: ScalarFn = Arc::new(move |x, t| (w * t).sin() * space_part(x));
    let lap = dim as f64 * w * w;
    let (source, exact_v, v0): (ScalarFn, Option<ScalarFn>, Option<InitialFn>) = match equation {
        Equation::Heat => (
            Arc::new(move |x, t| (w * (w * t).cos() + lap * (w * t).sin()) * space_part(x)),
            None,
            None,
        ),
        Equation::Wave => (
            Arc::new(move |x, t| (lap - w * w) * (w * t).sin() * space_part(x)),
            Some(Arc::new(move |x, t| w * (w * t).cos() * space_part(x))),
            Some(Arc::new(move |x| w * space_part(x))),
        ),
    };
    ProblemSpec {
        equation,
        scheme,
        k,
        p,
        dim,
        domain: Extent::cube(dim, 0.0, 1.0),
        t_final: 1.0,
        refinements,
        base_cells: 2,
        base_intervals: 2,
        batch: 2,
        coefficient: CoefficientField::Constant(1.0),
        data: ProblemData {
            source: Some(source),
            dirichlet: None,
            u0: None,
            v0,
            exact_u: Some(exact_u),
            exact_v,
        },
        perturbation: None,
        gmres: study_gmres(),
        multigrid: MultigridSettings::default(),
        strategy: None,
        probes: Vec::new(),
        probe_samples: 16,
        keep_trajectory: false,
    }
}

/// Default probe locations of the heterogeneous wave demo.
pub fn shm_probes() -> Vec<Vec<f64>> {
    vec![vec![0.75, 0.0, 0.0], vec![0.0, 0.0, 0.75], vec![0.75, 0.1, 0.75]]
}

/// Initial displacement `e^{-|x/s|²}(1 − |x/s|²)` inside `|x| < s`.
pub fn shm_pulse(s: f64) -> InitialFn {
    Arc::new(move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| (v / s) * (v / s)).sum();
        if r2 < 1.0 {
            (-r2).exp() * (1.0 - r2)
        } else {
            0.0
        }
    })
}

/// Heterogeneous wave problem on `[-1, 1]³ × [0, 2]` with layered speed of
/// sound and a compact initial pulse of radius `s`.
pub fn shm_spec(scheme: TimeScheme, k: usize, p: usize, refinements: usize, s: f64) -> ProblemSpec {
    let dim = 3;
    ProblemSpec {
        equation: Equation::Wave,
        scheme,
        k,
        p,
        dim,
        domain: Extent::cube(dim, -1.0, 1.0),
        t_final: 2.0,
        refinements,
        base_cells: 5,
        base_intervals: 5,
        batch: 2,
        coefficient: coefficient_shm(dim),
        data: ProblemData {
            u0: Some(shm_pulse(s)),
            ..Default::default()
        },
        perturbation: None,
        gmres: GmresSettings {
            abs_tol: 1e-10,
            rel_tol: 1e-12,
            max_iter: 500,
            restart: 100,
        },
        multigrid: MultigridSettings::default(),
        strategy: None,
        probes: shm_probes(),
        probe_samples: 16,
        keep_trajectory: false,
    }
}

/// Relative L² distance of two probe series sampled at the same times.
pub fn probe_distance(a: &ProbeSeries, b: &ProbeSeries) -> Result<f64> {
    if a.values.len() != b.values.len() || a.times.len() != b.times.len() {
        return invalid("probe series sampled differently");
    }
    let (mut d, mut n) = (0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        for (u, v) in x.iter().zip(y) {
            d += (u - v) * (u - v);
            n += u * u;
        }
    }
    Ok((d / n.max(1e-300)).sqrt())
}

/// Coarsen probe samples by an integer factor (matching a run with half the steps).
pub fn subsample(series: &ProbeSeries, factor: usize) -> ProbeSeries {
    let pick = |v: &Vec<f64>| v.iter().step_by(factor.max(1)).copied().collect::<Vec<_>>();
    ProbeSeries {
        points: series.points.clone(),
        times: pick(&series.times),
        values: series.values.iter().map(pick).collect(),
    }
}
