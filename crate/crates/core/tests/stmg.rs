use std::sync::atomic::Ordering;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use stmg_core::krylov::{gmres, GmresSettings};
use stmg_core::mesh::{coefficient_shm, make_cartesian, CoefficientField, Extent, MeshHierarchy};
use stmg_core::space_fem::FeSpace;
use stmg_core::st_operator::{Equation, SpaceTimeOperator, SpaceTimeVector};
use stmg_core::stmg::{
    default_strategy, estimate_relaxation, plan_levels, space_transfer, time_transfer, AsmSmoother, Coarsening,
    LevelDesc, Multigrid, MultigridSettings, Transfer,
};
use stmg_core::time_basis::{TemporalWeights, TimeScheme};

const CASES: [(Equation, TimeScheme); 4] = [
    (Equation::Heat, TimeScheme::DG),
    (Equation::Heat, TimeScheme::CGP),
    (Equation::Wave, TimeScheme::DG),
    (Equation::Wave, TimeScheme::CGP),
];

fn meshes(dim: usize, refinements: usize, base: usize) -> MeshHierarchy {
    make_cartesian(dim, &Extent::cube(dim, 0.0, 1.0), refinements, base).unwrap()
}

fn random(n: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn st(nsteps: usize, nt: usize, nx: usize, data: Vec<f64>) -> SpaceTimeVector {
    SpaceTimeVector::from_vec(nsteps, nt, nx, data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn op(eq: Equation, scheme: TimeScheme, k: usize, tau: f64, steps: usize, space: Arc<FeSpace>) -> SpaceTimeOperator {
    SpaceTimeOperator::new(eq, TemporalWeights::new(scheme, k).unwrap(), tau, steps, space).unwrap()
}

/// Adjointness `⟨P x, y⟩ = ⟨x, R y⟩` and exact reproduction of coarse functions.
#[test]
fn space_transfer_adjoint_and_exact() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    for dim in [1, 2, 3] {
        let h = meshes(dim, 1, 2);
        let coef = CoefficientField::Constant(1.0);
        let pairs = [
            (FeSpace::new(h.levels[1].clone(), 2, coef.clone()).unwrap(), FeSpace::new(h.levels[0].clone(), 2, coef.clone()).unwrap()),
            (FeSpace::new(h.levels[1].clone(), 4, coef.clone()).unwrap(), FeSpace::new(h.levels[1].clone(), 2, coef.clone()).unwrap()),
        ];
        for (fine, coarse) in &pairs {
            // coarse-space function: degree ≤ 2 per axis
            let f = |x: &[f64]| x.iter().enumerate().map(|(a, v)| (a + 1) as f64 * v * v - v).product::<f64>() + 0.3;
            let p = space_transfer(fine, coarse, false).unwrap();
            let uc = coarse.interpolate(f);
            let mut uf = vec![0.0; fine.n_dofs()];
            p.matvec(&uc, &mut uf);
            let expect = fine.interpolate(f);
            for (a, b) in uf.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "dim {dim}: {a} vs {b}");
            }
            let t = Transfer::Space(space_transfer(fine, coarse, true).unwrap());
            for _ in 0..5 {
                let x = st(2, 2, coarse.n_dofs(), random(4 * coarse.n_dofs(), &mut rng));
                let y = st(2, 2, fine.n_dofs(), random(4 * fine.n_dofs(), &mut rng));
                let mut px = st(2, 2, fine.n_dofs(), vec![0.0; 4 * fine.n_dofs()]);
                let mut ry = st(2, 2, coarse.n_dofs(), vec![0.0; 4 * coarse.n_dofs()]);
                t.prolongate(&x, &mut px);
                t.restrict(&y, &mut ry);
                let (l, r) = (dot(&px.data, &y.data), dot(&x.data, &ry.data));
                assert!((l - r).abs() < 1e-12 * (1.0 + l.abs()));
            }
            // constrained version never produces Dirichlet values
            let pc = space_transfer(fine, coarse, true).unwrap();
            let mut v = vec![0.0; fine.n_dofs()];
            pc.matvec(&vec![1.0; coarse.n_dofs()], &mut v);
            for &b in &fine.dofmap.boundary_dofs {
                assert_eq!(v[b], 0.0);
            }
        }
    }
}

#[test]
fn time_transfer_adjoint_and_exact() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    for scheme in [TimeScheme::DG, TimeScheme::CGP] {
        for k in scheme.min_order().max(1)..=3 {
            // τ-coarsening 4 → 2 steps, and k-coarsening k → k-1 on 2 steps
            let mut pairs = vec![(k, 4usize, k, 2usize)];
            if k > scheme.min_order() {
                pairs.push((k, 2, k - 1, 2));
            }
            for (kf, nf, kc, nc) in pairs {
                let wf = TemporalWeights::new(scheme, kf).unwrap();
                let wc = TemporalWeights::new(scheme, kc).unwrap();
                let t = time_transfer(&wf, nf, &wc, nc).unwrap();
                // global polynomial of degree kc lies in both spaces; CGP needs g(0) = 0
                let g = |t: f64| if kc == 0 { 0.7 } else { t * (1.0 + 0.5 * t).powi(kc as i32 - 1) };
                let tf = 1.0 / nf as f64;
                let tc = 1.0 / nc as f64;
                let coarse: Vec<f64> = (0..nc)
                    .flat_map(|s| wc.dof_nodes().iter().map(move |&x| (s as f64 + x) * tc).collect::<Vec<_>>())
                    .map(g)
                    .collect();
                let mut fine = st(nf, wf.n_t, 1, vec![0.0; nf * wf.n_t]);
                t.prolongate(&st(nc, wc.n_t, 1, coarse), &mut fine);
                let mut idx = 0;
                for s in 0..nf {
                    for &x in wf.dof_nodes() {
                        let e = g((s as f64 + x) * tf);
                        assert!((fine.data[idx] - e).abs() < 1e-12, "{scheme} k={kf}->{kc}: {} vs {e}", fine.data[idx]);
                        idx += 1;
                    }
                }
                let nx = 3;
                let x = st(nc, wc.n_t, nx, random(nc * wc.n_t * nx, &mut rng));
                let y = st(nf, wf.n_t, nx, random(nf * wf.n_t * nx, &mut rng));
                let mut px = st(nf, wf.n_t, nx, vec![0.0; nf * wf.n_t * nx]);
                let mut ry = st(nc, wc.n_t, nx, vec![0.0; nc * wc.n_t * nx]);
                t.prolongate(&x, &mut px);
                t.restrict(&y, &mut ry);
                let (l, r) = (dot(&px.data, &y.data), dot(&x.data, &ry.data));
                assert!((l - r).abs() < 1e-12 * (1.0 + l.abs()));
            }
        }
    }
    let w = TemporalWeights::new(TimeScheme::DG, 1).unwrap();
    assert!(time_transfer(&w, 3, &w, 2).is_err());
}

/// Each smoother block equals the cell's free rows/columns of the dense operator.
#[test]
fn asm_block_matches_dense_operator() {
    for (eq, scheme) in CASES {
        let h = meshes(2, 0, 2).perturb(0.1, 3).unwrap();
        let space = Arc::new(FeSpace::new(h.finest().clone(), 2, coefficient_shm(2)).unwrap());
        let o = op(eq, scheme, 2, 0.1, 2, space.clone());
        let dense = o.assemble_dense().unwrap();
        let (nt, nx) = (o.n_t(), o.n_x());
        for cell in 0..space.mesh.n_cells() {
            let free: Vec<usize> = space
                .dofmap
                .cell_dofs(cell)
                .iter()
                .copied()
                .filter(|&g| !space.dofmap.is_constrained(g))
                .collect();
            let b = AsmSmoother::block(&o, cell);
            let nf = free.len();
            for step in 0..2 {
                for i in 0..nt {
                    for j in 0..nt {
                        for (p, &gp) in free.iter().enumerate() {
                            for (q, &gq) in free.iter().enumerate() {
                                let d = dense[((step * nt + i) * nx + gp, (step * nt + j) * nx + gq)];
                                let e = b[(i * nf + p, j * nf + q)];
                                assert!((d - e).abs() < 1e-12 * (1.0 + d.abs()), "{eq} {scheme}");
                            }
                        }
                    }
                }
            }
        }
    }
}

/// On a single cell the smoother is the exact inverse and ω = 1.
#[test]
fn single_cell_smoother_is_exact() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(13);
    for (eq, scheme) in CASES {
        let h = meshes(2, 0, 1);
        let space = Arc::new(FeSpace::new(h.finest().clone(), 3, CoefficientField::Constant(1.0)).unwrap());
        let o = op(eq, scheme, 2, 0.2, 1, space);
        let s = AsmSmoother::new(&o).unwrap();
        let u = st(1, o.n_t(), o.n_x(), random(o.len(), &mut rng));
        let mut su = o.zeros();
        o.apply(&u, &mut su).unwrap();
        let mut back = o.zeros();
        s.apply(&su, &mut back);
        for (a, b) in back.data.iter().zip(&u.data) {
            assert!((a - b).abs() < 1e-10, "{eq} {scheme}");
        }
        let w = estimate_relaxation(&o, &s, 20, 1, 1.0);
        assert!((w - 1.0).abs() < 1e-10, "omega {w}");
    }
}

/// Arnoldi estimate against the spectrum of the dense preconditioned operator.
#[test]
fn relaxation_matches_dense_eigenvalues() {
    for (eq, scheme) in [(Equation::Heat, TimeScheme::DG), (Equation::Wave, TimeScheme::CGP)] {
        let h = meshes(1, 0, 8);
        let space = Arc::new(FeSpace::new(h.finest().clone(), 1, CoefficientField::Constant(1.0)).unwrap());
        let o = op(eq, scheme, 1, 0.05, 1, space.clone());
        let s = AsmSmoother::new(&o).unwrap();
        let nx = o.n_x();
        let free: Vec<usize> = (0..o.len()).filter(|i| !space.dofmap.is_constrained(i % nx)).collect();
        let mut ps = DMatrix::zeros(free.len(), free.len());
        for (c, &j) in free.iter().enumerate() {
            let mut e = o.zeros();
            e.data[j] = 1.0;
            let mut se = o.zeros();
            o.apply(&e, &mut se).unwrap();
            let mut pe = o.zeros();
            s.apply(&se, &mut pe);
            for (r, &i) in free.iter().enumerate() {
                ps[(r, c)] = pe.data[i];
            }
        }
        let ev = ps.complex_eigenvalues();
        let hi = ev.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        let lo = ev.iter().map(|e| e.re).fold(f64::INFINITY, f64::min).max(0.0);
        let exact = (2.0 / (hi + lo)).min(1.2);
        let w = estimate_relaxation(&o, &s, 20, 7, 1.0);
        assert!((w - exact).abs() < 0.05 * exact, "{eq} {scheme}: {w} vs {exact}");
    }
}

fn build(eq: Equation, scheme: TimeScheme, dim: usize, refinements: usize, p: usize, k: usize, steps: usize, strategy: Option<&[Coarsening]>) -> Multigrid {
    build_with(eq, scheme, dim, refinements, p, k, steps, strategy, MultigridSettings::default())
}

#[allow(clippy::too_many_arguments)]
fn build_with(eq: Equation, scheme: TimeScheme, dim: usize, refinements: usize, p: usize, k: usize, steps: usize, strategy: Option<&[Coarsening]>, settings: MultigridSettings) -> Multigrid {
    let h = meshes(dim, refinements, 2);
    let finest = LevelDesc {
        coarsening: None,
        mesh_level: refinements,
        p,
        k,
        n_steps: steps,
    };
    let strat = strategy.map(|s| s.to_vec()).unwrap_or_else(|| default_strategy(finest, scheme));
    let plan = plan_levels(finest, scheme, &strat).unwrap();
    let tau = 0.5 / (2usize.pow(refinements as u32) * steps) as f64;
    Multigrid::build(eq, scheme, tau, &plan, &h, &CoefficientField::Constant(1.0), settings).unwrap()
}

/// Residual reduction of the stationary V-cycle iteration `u ← u + V(f - S u)`.
fn contraction(mg: &Multigrid, rng: &mut Xoshiro256PlusPlus) -> f64 {
    let o = mg.finest();
    let f = st(o.n_steps, o.n_t(), o.n_x(), random(o.len(), rng));
    let mut u = o.zeros();
    let mut r = f.clone();
    let mut norms = vec![r.norm()];
    for _ in 0..6 {
        let c = mg.precondition(&r).unwrap();
        for (a, b) in u.data.iter_mut().zip(&c.data) {
            *a += b;
        }
        let mut su = o.zeros();
        o.apply(&u, &mut su).unwrap();
        for ((ri, fi), si) in r.data.iter_mut().zip(&f.data).zip(&su.data) {
            *ri = fi - si;
        }
        norms.push(r.norm());
    }
    (norms[6] / norms[2]).powf(0.25)
}

#[test]
fn vcycle_contracts() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(14);
    for (eq, scheme) in CASES {
        // 1D two-level
        let mg = build(eq, scheme, 1, 1, 2, 2, 2, Some(&[Coarsening::H]));
        let rho = contraction(&mg, &mut rng);
        assert!(rho < 0.5, "1D {eq} {scheme}: contraction {rho}");
        // 2D full default hierarchy
        let mg = build(eq, scheme, 2, 2, 2, 2, 2, None);
        let rho = contraction(&mg, &mut rng);
        assert!(rho < 0.9, "2D {eq} {scheme}: contraction {rho}");
        // estimated relaxation beats the unrelaxed smoother
        let plain = build_with(eq, scheme, 2, 1, 2, 2, 2, Some(&[Coarsening::H]), MultigridSettings { omega: Some(1.0), ..Default::default() });
        let est = build(eq, scheme, 2, 1, 2, 2, 2, Some(&[Coarsening::H]));
        assert!(contraction(&est, &mut rng) < contraction(&plain, &mut rng));
    }
}

#[test]
fn vcycle_counts_and_dirichlet_rows() {
    let mg = build(Equation::Heat, TimeScheme::DG, 2, 2, 1, 1, 2, Some(&[Coarsening::H, Coarsening::H]));
    assert_eq!(mg.levels.len(), 3);
    let o = mg.finest();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(15);
    let r = st(o.n_steps, o.n_t(), o.n_x(), random(o.len(), &mut rng));
    mg.reset_counters();
    let x = mg.precondition(&r).unwrap();
    for l in &mg.levels[..2] {
        assert_eq!(l.smoother_sweeps.load(Ordering::Relaxed), 2);
        assert_eq!(l.operator_applies.load(Ordering::Relaxed), 2);
    }
    let nx = o.n_x();
    for (i, (a, b)) in x.data.iter().zip(&r.data).enumerate() {
        if o.space.dofmap.is_constrained(i % nx) {
            assert_eq!(a, b);
        }
    }
}

/// Every single coarsening type, and mixed hierarchies, give a working preconditioner.
#[test]
fn gmres_with_each_coarsening() {
    use Coarsening::*;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(16);
    let runs: Vec<(TimeScheme, usize, usize, usize, Vec<Coarsening>)> = vec![
        (TimeScheme::DG, 1, 2, 1, vec![H]),
        (TimeScheme::DG, 0, 4, 1, vec![P]),
        (TimeScheme::DG, 0, 2, 1, vec![K]),
        (TimeScheme::CGP, 0, 2, 2, vec![K]),
        (TimeScheme::CGP, 1, 2, 2, vec![Tau, H]),
        (TimeScheme::DG, 1, 2, 2, vec![H, P, Tau, K]),
    ];
    for (scheme, refinements, p, k, strat) in runs {
        for eq in [Equation::Heat, Equation::Wave] {
            let steps = 2;
            let mg = build(eq, scheme, 2, refinements, p, k, steps, Some(&strat));
            let o = mg.finest();
            let b = random(o.len(), &mut rng);
            let shape = (o.n_steps, o.n_t(), o.n_x());
            let mut x = vec![0.0; b.len()];
            let stats = gmres(
                |v, y| {
                    let mut out = o.zeros();
                    o.apply(&st(shape.0, shape.1, shape.2, v.to_vec()), &mut out)?;
                    y.copy_from_slice(&out.data);
                    Ok(())
                },
                |v, y| {
                    let c = mg.precondition(&st(shape.0, shape.1, shape.2, v.to_vec()))?;
                    y.copy_from_slice(&c.data);
                    Ok(())
                },
                &b,
                &mut x,
                &GmresSettings {
                    abs_tol: 0.0,
                    rel_tol: 1e-10,
                    max_iter: 200,
                    restart: 100,
                },
            )
            .unwrap();
            assert!(stats.converged, "{eq} {scheme} {strat:?}");
            assert!(stats.iterations < 40, "{eq} {scheme} {strat:?}: {} iterations", stats.iterations);
            let dense = o.assemble_dense().unwrap();
            let xd = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
            let err = x.iter().zip(xd.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / xd.norm();
            assert!(err < 1e-7, "{eq} {scheme} {strat:?}: {err}");
        }
    }
}

#[test]
fn hat_prolongation_and_k_duplication() {
    let h = meshes(1, 1, 1);
    let c = CoefficientField::Constant(1.0);
    let fine = FeSpace::new(h.levels[1].clone(), 1, c.clone()).unwrap();
    let coarse = FeSpace::new(h.levels[0].clone(), 1, c).unwrap();
    let p = space_transfer(&fine, &coarse, false).unwrap();
    let mut y = vec![0.0; 3];
    p.matvec(&[2.0, 5.0], &mut y);
    assert_eq!(y, vec![2.0, 3.5, 5.0]);

    let w1 = TemporalWeights::new(TimeScheme::DG, 1).unwrap();
    let w0 = TemporalWeights::new(TimeScheme::DG, 0).unwrap();
    let t = time_transfer(&w1, 1, &w0, 1).unwrap();
    let mut fine = st(1, 2, 1, vec![0.0; 2]);
    t.prolongate(&st(1, 1, 1, vec![3.0]), &mut fine);
    assert!((fine.data[0] - 3.0).abs() < 1e-14 && (fine.data[1] - 3.0).abs() < 1e-14);
    let mut coarse = st(1, 1, 1, vec![0.0]);
    t.restrict(&st(1, 2, 1, vec![1.0, 2.0]), &mut coarse);
    assert!((coarse.data[0] - 3.0).abs() < 1e-14);
}

/// One sweep against the dense additive Schwarz formula, and symmetry for heat.
#[test]
fn smoother_matches_dense_formula() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
    for (eq, scheme) in [(Equation::Heat, TimeScheme::DG), (Equation::Wave, TimeScheme::CGP)] {
        let h = meshes(1, 0, 4);
        let space = Arc::new(FeSpace::new(h.finest().clone(), 1, CoefficientField::Constant(1.0)).unwrap());
        let o = op(eq, scheme, 1, 0.1, 2, space.clone());
        let dense = o.assemble_dense().unwrap();
        let s = AsmSmoother::new(&o).unwrap();
        let (nt, nx) = (o.n_t(), o.n_x());
        let mut pinv = DMatrix::<f64>::zeros(o.len(), o.len());
        for b in &space.dofmap.boundary_dofs {
            for blk in 0..o.n_steps * nt {
                pinv[(blk * nx + b, blk * nx + b)] = 1.0;
            }
        }
        for step in 0..o.n_steps {
            for cell in 0..space.mesh.n_cells() {
                let idx: Vec<usize> = (0..nt)
                    .flat_map(|i| {
                        space
                            .dofmap
                            .cell_dofs(cell)
                            .iter()
                            .filter(|g| !space.dofmap.is_constrained(**g))
                            .map(move |g| (step * nt + i) * nx + g)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| dense[(idx[a], idx[b])]);
                let inv = sub.try_inverse().unwrap();
                for (a, &ia) in idx.iter().enumerate() {
                    for (b, &ib) in idx.iter().enumerate() {
                        pinv[(ia, ib)] += inv[(a, b)];
                    }
                }
            }
        }
        let r = random(o.len(), &mut rng);
        let mut out = o.zeros();
        s.apply(&st(o.n_steps, nt, nx, r.clone()), &mut out);
        let expect = &pinv * nalgebra::DVector::from_vec(r);
        for (a, b) in out.data.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
    // heat with symmetric temporal blocks (DG k=0): the smoother is symmetric
    let h = meshes(2, 0, 3);
    let space = Arc::new(FeSpace::new(h.finest().clone(), 2, CoefficientField::Constant(1.0)).unwrap());
    let o = op(Equation::Heat, TimeScheme::DG, 0, 0.1, 1, space);
    let s = AsmSmoother::new(&o).unwrap();
    let (a, b) = (random(o.len(), &mut rng), random(o.len(), &mut rng));
    let (mut pa, mut pb) = (o.zeros(), o.zeros());
    s.apply(&st(1, 1, o.n_x(), a.clone()), &mut pa);
    s.apply(&st(1, 1, o.n_x(), b.clone()), &mut pb);
    let (l, r) = (dot(&pa.data, &b), dot(&a, &pb.data));
    assert!((l - r).abs() < 1e-11 * l.abs().max(1.0));
}
