use std::sync::Arc;

use stmg_core::driver::{eoc, manufactured, march, probe_distance, shm_spec, ProblemData, ProblemSpec, ScalarFn};
use stmg_core::st_operator::Equation;
use stmg_core::time_basis::TimeScheme;

const SCHEMES: [TimeScheme; 2] = [TimeScheme::DG, TimeScheme::CGP];
const EQUATIONS: [Equation; 2] = [Equation::Heat, Equation::Wave];

fn constant_spec(eq: Equation, scheme: TimeScheme, value: f64) -> ProblemSpec {
    let mut s = manufactured(eq, scheme, 2, 2, 2, 1, 1.0);
    let g: ScalarFn = Arc::new(move |_, _| value);
    s.data = ProblemData {
        dirichlet: Some(g.clone()),
        u0: Some(Arc::new(move |_| value)),
        exact_u: Some(g),
        exact_v: (eq == Equation::Wave).then(|| Arc::new(|_: &[f64], _: f64| 0.0) as ScalarFn),
        ..Default::default()
    };
    s
}

#[test]
fn constant_state_is_reproduced() {
    for eq in EQUATIONS {
        for scheme in SCHEMES {
            let rep = march(&constant_spec(eq, scheme, 1.5)).unwrap();
            let e = rep.errors_u.unwrap();
            assert!(e.linf_linf < 1e-9, "{eq} {scheme}: {e:?}");
            if let Some(ev) = rep.errors_v {
                assert!(ev.linf_linf < 1e-8, "{eq} {scheme} velocity: {ev:?}");
            }
        }
    }
}

#[test]
fn error_norms_of_a_unit_offset() {
    // numerical solution 1 against exact 0 on the unit square over [0, 1]
    let mut s = constant_spec(Equation::Heat, TimeScheme::DG, 1.0);
    s.data.exact_u = Some(Arc::new(|_, _| 0.0));
    let e = march(&s).unwrap().errors_u.unwrap();
    assert!((e.l2_l2 - 1.0).abs() < 1e-9, "{e:?}");
    assert!((e.linf_l2 - 1.0).abs() < 1e-9);
    assert!((e.linf_linf - 1.0).abs() < 1e-9);
}

#[test]
fn heat_1d_converges_at_order_k_plus_one() {
    for scheme in SCHEMES {
        for k in 1..=2 {
            let errs: Vec<f64> = (2..=4)
                .map(|r| march(&manufactured(Equation::Heat, scheme, k, k, 1, r, 1.0)).unwrap().errors_u.unwrap().l2_l2)
                .collect();
            let rate = eoc(&errs).last().copied().flatten().unwrap();
            assert!((rate - (k + 1) as f64).abs() < 0.25, "{scheme} k={k}: {errs:?} rate {rate}");
        }
    }
}

#[test]
fn wave_1d_converges_at_order_k_plus_one() {
    for scheme in SCHEMES {
        let k = 2;
        let errs: Vec<f64> = (2..=4)
            .map(|r| march(&manufactured(Equation::Wave, scheme, k, k, 1, r, 1.0)).unwrap().errors_u.unwrap().l2_l2)
            .collect();
        let rate = eoc(&errs).last().copied().flatten().unwrap();
        assert!((rate - 3.0).abs() < 0.25, "{scheme}: {errs:?} rate {rate}");
    }
}

#[test]
fn batching_leaves_the_trajectory_unchanged() {
    for eq in EQUATIONS {
        for scheme in SCHEMES {
            let run = |c: usize| {
                let mut s = manufactured(eq, scheme, 2, 2, 1, 2, 1.0);
                s.batch = c;
                s.keep_trajectory = true;
                s.gmres.abs_tol = 1e-13;
                march(&s).unwrap()
            };
            let seq = run(1);
            for c in [2, 4] {
                let bat = run(c);
                assert_eq!(seq.trajectory.len(), bat.trajectory.len());
                let (mut diff, mut norm) = (0.0f64, 0.0f64);
                for (a, b) in seq.trajectory.iter().zip(&bat.trajectory) {
                    for (x, y) in a.iter().zip(b) {
                        diff = diff.max((x - y).abs());
                        norm = norm.max(x.abs());
                    }
                }
                assert!(diff <= 1e-9 * norm.max(1.0), "{eq} {scheme} c={c}: {diff:e}");
            }
        }
    }
}

#[test]
fn cgp_is_continuous_and_dg_jumps_decay() {
    for eq in EQUATIONS {
        let rep = march(&manufactured(eq, TimeScheme::CGP, 2, 2, 1, 3, 1.0)).unwrap();
        assert!(rep.continuity_defect.unwrap() <= 1e-12, "{eq}: {:?}", rep.continuity_defect);
    }
    for k in 1..=2 {
        let jumps: Vec<f64> = (2..=4)
            // one extra spatial degree keeps the spatial error out of the jump
            .map(|r| march(&manufactured(Equation::Heat, TimeScheme::DG, k, k + 1, 1, r, 1.0)).unwrap().max_jump.unwrap())
            .collect();
        let rate = eoc(&jumps).last().copied().flatten().unwrap();
        assert!(rate >= k as f64 + 1.0 - 0.1, "k={k}: jumps {jumps:?} rate {rate}");
    }
}

#[test]
fn shm_pulse_is_mirror_symmetric() {
    let mut s = shm_spec(TimeScheme::DG, 1, 2, 0, 0.3);
    s.probes = vec![vec![0.6, 0.0, 0.0], vec![-0.6, 0.0, 0.0]];
    s.t_final = 0.8;
    s.base_intervals = 2;
    let rep = march(&s).unwrap();
    let p = rep.probes.unwrap();
    let scale = p.values[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 1e-3);
    for (a, b) in p.values[0].iter().zip(&p.values[1]) {
        assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
    }
    assert_eq!(probe_distance(&p, &p).unwrap(), 0.0);
}
