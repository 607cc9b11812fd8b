//! Randomized invariants of the parser, meshes, assembly and post-processing.

mod common;

use dnpsolve::diagnostics::convergence_table;
use dnpsolve::fem::{jacobian_mismatch, StepData};
use dnpsolve::mesh::{unit_interval_mesh, unit_square_mesh, BoundaryTag};
use dnpsolve::quadrature::element_rule;
use dnpsolve::validate::{check_a4, legendre_psi};
use dnpsolve::{bundled, parse_expr, Bindings};
use proptest::prelude::*;

use common::{scalar_1d, setup};

fn expr_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0u32..100).prop_map(|v| v.to_string()),
        Just("u1".to_string()),
        Just("x".to_string()),
        Just("pi".to_string()),
        Just("2.5e-1".to_string()),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^"]))
                .prop_map(|(a, b, op)| format!("({a}) {op} ({b})")),
            inner.clone().prop_map(|a| format!("-({a})")),
            (inner.clone(), prop::sample::select(vec!["sin", "cos", "tanh", "abs", "exp"]))
                .prop_map(|(a, f)| format!("{f}({a})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("max({a}, {b})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_expressions_reparse_to_the_same_tree(src in expr_source()) {
        let e = parse_expr(&src).unwrap();
        let back = parse_expr(&e.to_string()).unwrap();
        prop_assert_eq!(&e, &back);
        let b = Bindings::at(&[0.3], [0.7, 0.0], 0.0);
        match (e.eval(&b), back.eval(&b)) {
            (Ok(a), Ok(c)) => prop_assert!(a == c || (a - c).abs() <= 1e-12 * a.abs()),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "evaluation disagrees"),
        }
    }

    #[test]
    fn generated_meshes_partition_the_domain(nx in 1usize..12, ny in 1usize..12) {
        let mesh = unit_square_mesh(nx, ny, |_| BoundaryTag::Dirichlet).unwrap();
        prop_assert!((mesh.total_volume() - 1.0).abs() < 1e-12);
        for e in 0..mesh.num_elements() {
            prop_assert!((mesh.volume(e) - 0.5 / (nx * ny) as f64).abs() < 1e-14);
        }
        prop_assert!((mesh.boundary_measure(BoundaryTag::Dirichlet) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_nests_nodes(n in 1usize..20) {
        let tags = (BoundaryTag::Dirichlet, BoundaryTag::Unilateral);
        let coarse = unit_interval_mesh(n, tags).unwrap();
        let fine = unit_interval_mesh(2 * n, tags).unwrap();
        for p in coarse.nodes() {
            prop_assert!(fine.nodes().iter().any(|q| (q[0] - p[0]).abs() < 1e-14));
        }
        let sq = unit_square_mesh(n, n + 1, |_| BoundaryTag::Neumann).unwrap();
        let sq_fine = unit_square_mesh(2 * n, 2 * n + 2, |_| BoundaryTag::Neumann).unwrap();
        for p in sq.nodes() {
            prop_assert!(sq_fine.nodes().iter().any(|q| (q[0] - p[0]).abs() < 1e-14 && (q[1] - p[1]).abs() < 1e-14));
        }
    }

    #[test]
    fn penalty_pairing_is_nonnegative_and_monotone(
        u in prop::collection::vec(-2.0f64..2.0, 81),
        v in prop::collection::vec(-2.0f64..2.0, 81),
    ) {
        let (disc, _) = setup("twocomp2d");
        let n = disc.num_dofs();
        let (u, v) = (&u.iter().cycle().take(n).copied().collect::<Vec<_>>(), &v.iter().cycle().take(n).copied().collect::<Vec<_>>());
        let (bu, pu) = disc.penalty_form(u);
        let (bv, _) = disc.penalty_form(v);
        prop_assert!(pu >= 0.0);
        let m = disc.m();
        let mut quad_positive = false;
        for f in disc.mesh.facets().iter().filter(|f| f.tag == BoundaryTag::Unilateral) {
            for (l, _) in element_rule(1) {
                for j in 0..m {
                    quad_positive |= l[0] * u[f.nodes[0] * m + j] + l[1] * u[f.nodes[1] * m + j] > 0.0;
                }
            }
        }
        prop_assert_eq!(pu > 0.0, quad_positive);
        if disc.constrained_dofs().iter().all(|&d| u[d] <= 0.0) {
            prop_assert_eq!(pu, 0.0);
        }
        let mono: f64 = (0..n).map(|i| (bu[i] - bv[i]) * (u[i] - v[i])).sum();
        prop_assert!(mono >= -1e-14);
    }

    #[test]
    fn residual_is_affine_in_the_data(a in -3.0f64..3.0, b in -3.0f64..3.0, vals in prop::collection::vec(-1.0f64..1.0, 9)) {
        let run = |f: f64, g: f64| {
            let (disc, _) = scalar_1d(8, &format!("B1 = u1 + u1^3\nK11 = 1 + u1^2\nF1 = {f}*(1 + x)\ng1 = {g}"), "gamma1 = left\ngamma2 = right");
            let mut u = vals.clone();
            u[0] = 0.0;
            let old = vec![0.0; 9];
            let step = StepData { u_old: &old, t: 0.1, dt: 0.1, eps: None };
            disc.assemble_residual(&u, &step).unwrap().residual
        };
        let r0 = run(0.0, 0.0);
        let ra = run(a, 0.0);
        let rb = run(0.0, b);
        let rab = run(a, b);
        for i in 0..r0.len() {
            prop_assert!((rab[i] - (ra[i] + rb[i] - r0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(seed in 0u64..1000, name in prop::sample::select(bundled::ADMISSIBLE.to_vec())) {
        use rand::{Rng, SeedableRng};
        let (disc, config) = setup(name);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        disc.apply_dirichlet(&mut u, config.dt).unwrap();
        let old: Vec<f64> = (0..disc.num_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..disc.free_dofs().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let step = StepData { u_old: &old, t: config.dt, dt: config.dt, eps: Some(1e-2) };
        let rel = jacobian_mismatch(&disc, &u, &step, &v).unwrap();
        prop_assert!(rel <= 1e-5, "{name}: {rel:e}");
    }

    #[test]
    fn psi_of_identity_storage_is_half_square(z in prop::collection::vec(-50.0f64..50.0, 2)) {
        let spec = dnpsolve::ProblemSpec::parse(
            "[problem]\nm = 2\ndim = 1\nnu = 1\np = 1\nalpha = 1\n[coefficients]\nB1 = u1\nB2 = u2\nK11 = 1\nK22 = 1\n[boundary]\ngamma1 = left, right\n",
        ).unwrap();
        let psi = legendre_psi(&spec, &z, 16).unwrap();
        let half = 0.5 * (z[0] * z[0] + z[1] * z[1]);
        prop_assert!((psi - half).abs() <= 1e-12 * (1.0 + half));
    }

    #[test]
    fn exponent_check_rejects_p_above_nu(nu in 0.1f64..5.0, extra in 1e-6f64..3.0, alpha in 0.01f64..5.0, n in 1usize..4) {
        prop_assert!(!check_a4(nu, nu + extra, alpha, n).holds);
        // the small-alpha clause alone is sufficient
        let small = alpha.min(nu.min(1.0));
        prop_assert!(check_a4(nu, nu, small, n).holds);
    }

    #[test]
    fn observed_order_ignores_row_order(
        c in 0.1f64..10.0,
        q in 0.5f64..3.0,
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let hs: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
        let rows: Vec<(f64, f64)> = perm.iter().map(|&k| (hs[k], c * hs[k].powf(q))).collect();
        let t = convergence_table(&rows);
        prop_assert!((t.order.unwrap() - q).abs() < 1e-9);
        let sorted: Vec<(f64, f64)> = hs.iter().map(|&h| (h, c * h.powf(q))).collect();
        prop_assert_eq!(t.order, convergence_table(&sorted).order);
    }
}
