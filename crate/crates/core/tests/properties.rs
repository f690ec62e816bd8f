use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use fbsde_core::hjb::{min_hamiltonian, required_nt, solve_hjb, GridSpec, ValueField};
use fbsde_core::lab::ExperimentConfig;
use fbsde_core::linalg::Vector;
use fbsde_core::model::{preset, validate_all, Coefficients, ControlSet, ProblemSpec};
use fbsde_core::mollify::{make_kernel, smooth_coefficients, smooth_scalar, BumpKernel};
use fbsde_core::policy::{extract_policy, AdmissibleControl};
use fbsde_core::relaxed::{chattering_reduce, Atom, DiscreteMeasure};
use fbsde_core::simulate::{simulate_forward, SimConfig};

fn kernel() -> &'static BumpKernel {
    static K: OnceLock<BumpKernel> = OnceLock::new();
    K.get_or_init(|| make_kernel(1, 64).unwrap())
}

fn solve(spec: &ProblemSpec, nx: usize, nt: Option<usize>) -> ValueField {
    let c = smooth_coefficients(spec.clone(), 0.2, 32).unwrap();
    let g0 = GridSpec::cube(1, 5.0, nx, 1, 0.0, spec.horizon()).unwrap();
    let g = g0.with_nt(nt.unwrap_or_else(|| required_nt(&c, &g0, c.controls()))).unwrap();
    solve_hjb(&c, &g, c.controls()).unwrap()
}

fn profile(kind: u8) -> (fn(f64) -> f64, f64) {
    match kind % 3 {
        0 => (f64::abs, 1.0),
        1 => (|x: f64| (2.0 * x).tanh(), 2.0),
        _ => (|x: f64| x.sin().max(0.0), 1.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_error_is_at_most_lipschitz_times_radius(kind in 0u8..3, x in -3.0f64..3.0, d in 0.01f64..1.0) {
        let (g, l) = profile(kind);
        let gd = smooth_scalar(|p| g(p[0]), kernel(), d, &[x]);
        prop_assert!((gd - g(x)).abs() <= l * d + 1e-6);
    }

    #[test]
    fn smoothing_is_lipschitz_in_the_radius(kind in 0u8..3, x in -3.0f64..3.0, a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let (g, l) = profile(kind);
        let ga = smooth_scalar(|p| g(p[0]), kernel(), a, &[x]);
        let gb = smooth_scalar(|p| g(p[0]), kernel(), b, &[x]);
        prop_assert!((ga - gb).abs() <= l * (a - b).abs() + 1e-6);
    }

    #[test]
    fn smoothing_keeps_bounds_constants_and_affine_maps(x in -3.0f64..3.0, d in 0.01f64..1.0, c in -5.0f64..5.0, s in -3.0f64..3.0) {
        let t = smooth_scalar(|p| p[0].tanh(), kernel(), d, &[x]);
        prop_assert!(t.abs() <= 1.0);
        prop_assert!((smooth_scalar(|_| c, kernel(), d, &[x]) - c).abs() <= 1e-12);
        prop_assert!((smooth_scalar(|p| c + s * p[0], kernel(), d, &[x]) - (c + s * x)).abs() <= 1e-10);
    }

    #[test]
    fn presets_pass_every_audit_for_any_seed(seed in any::<u64>(), which in 0usize..3) {
        let name = ["uncontrolled-linear", "B1", "B2"][which];
        let report = validate_all(&preset(name).unwrap(), 10_000, seed).unwrap();
        prop_assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn audit_is_deterministic_and_monotone_in_samples(seed in any::<u64>(), n in 2usize..300) {
        let b2 = preset("B2").unwrap();
        let a = validate_all(&b2, n, seed).unwrap();
        prop_assert_eq!(&a, &validate_all(&b2, n, seed).unwrap());
        let more = validate_all(&b2, 2 * n, seed).unwrap();
        prop_assert!(more.empirical_k >= a.empirical_k);
        prop_assert!(more.empirical_lambda <= a.empirical_lambda);
        prop_assert!(more.empirical_bound >= a.empirical_bound);
    }

    #[test]
    fn reduction_alpha_is_a_sum_of_squares(
        ws in proptest::collection::vec(-3.0f64..3.0, 2..4),
        ps in proptest::collection::vec(0.05f64..1.0, 4),
        us in proptest::collection::vec(0usize..41, 4),
        x in -3.0f64..3.0,
        y in -2.0f64..2.0,
    ) {
        let b2 = preset("B2").unwrap();
        let n = ws.len();
        let total: f64 = ps[..n].iter().sum();
        let mut weights: Vec<f64> = ps[..n].iter().map(|p| p / total).collect();
        let head: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - head;
        let grid = b2.controls().grid();
        let atoms: Vec<Atom> = (0..n).map(|i| Atom { u: grid[us[i]], w: Vector::scalar(ws[i]) }).collect();
        let mu = DiscreteMeasure::new(atoms.clone(), weights.clone()).unwrap();
        let r = chattering_reduce(&mu, &Vector::scalar(x), y, &b2);
        prop_assert!(r.alpha >= -1e-12);
        prop_assert!((r.alpha - r.alpha_spread).abs() <= 1e-10);
        prop_assert!((r.theta_bar.powi(2) - r.alpha.max(0.0)).abs() <= 1e-10);
        let sigma = b2.diffusion(&Vector::scalar(x), y).get(0, 0);
        prop_assert!(r.theta_bar <= 2.0 * 3.0 * sigma + 1e-12);
        let dirac_w = ws.iter().all(|w| *w == ws[0]);
        prop_assert_eq!(r.theta_bar == 0.0 || r.theta_bar < 1e-7, dirac_w || r.theta_bar < 1e-7);

        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let swapped = DiscreteMeasure::new(
            order.iter().map(|&i| atoms[i]).collect(),
            order.iter().map(|&i| weights[i]).collect(),
        );
        if let Ok(swapped) = swapped {
            let s = chattering_reduce(&swapped, &Vector::scalar(x), y, &b2);
            prop_assert_eq!(s.u_bar, r.u_bar);
            prop_assert!((s.w_bar[0] - r.w_bar[0]).abs() <= 1e-12);
            prop_assert!((s.alpha - r.alpha).abs() <= 1e-10);
            prop_assert!((s.residual - r.residual).abs() <= 1e-12);
        }
    }

    #[test]
    fn dirac_w_marginal_gives_zero_theta(w in -3.0f64..3.0, p in 0.05f64..0.95, u0 in 0usize..41, u1 in 0usize..41, x in -3.0f64..3.0) {
        let b2 = preset("B2").unwrap();
        let grid = b2.controls().grid();
        let mu = DiscreteMeasure::new(
            vec![Atom { u: grid[u0], w: Vector::scalar(w) }, Atom { u: grid[u1], w: Vector::scalar(w) }],
            vec![p, 1.0 - p],
        ).unwrap();
        let r = chattering_reduce(&mu, &Vector::scalar(x), 0.3, &b2);
        prop_assert!(r.theta_bar <= 1e-7);
        prop_assert!((r.w_bar[0] - w).abs() <= 1e-12);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), nx in 3usize..500, paths in 1usize..100_000, t in 0.0f64..0.9, x in -5.0f64..5.0) {
        let mut cfg = ExperimentConfig { seed, grid_nx: nx, paths, ..ExperimentConfig::default() };
        cfg.probes = vec![fbsde_core::lab::Probe::new(t, Vector::scalar(x))];
        let back = ExperimentConfig::parse(&cfg.to_text(), std::path::Path::new("p")).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn larger_driver_gives_larger_value(shift in 0.0f64..0.5, which in 0usize..2) {
        let base = preset(["B1", "B2"][which]).unwrap();
        let low = solve(&base, 41, None);
        let high = solve(&base.with_driver_shift(shift), 41, Some(low.grid().nt()));
        for (a, b) in low.values().iter().zip(high.values()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn values_respect_the_a_priori_bound(which in 0usize..3, horizon in 0.2f64..1.5) {
        let spec = preset(["uncontrolled-linear", "B1", "B2"][which]).unwrap().with_horizon(horizon).unwrap();
        let field = solve(&spec, 41, None);
        let m = spec.constants().bound;
        prop_assert!(field.sup_abs() <= m + horizon * m);
        let c = smooth_coefficients(spec.clone(), 0.2, 32).unwrap();
        let g = field.grid();
        for idx in 0..g.n_nodes() {
            prop_assert_eq!(field.level(g.nt())[idx], c.terminal(&g.node(idx)));
        }
    }

    #[test]
    fn refining_the_control_grid_never_raises_the_value(coarse in 2usize..6) {
        let fine = 2 * coarse - 1;
        let b2 = preset("B2").unwrap();
        let a = b2.with_controls(ControlSet::interval(-1.0, 1.0, coarse).unwrap());
        let b = b2.with_controls(ControlSet::interval(-1.0, 1.0, fine).unwrap());
        prop_assert!(a.controls().grid().iter().all(|u| b.controls().grid().contains(u)));
        let vb = solve(&b, 41, None);
        let va = solve(&a, 41, Some(vb.grid().nt()));
        for (x, y) in va.values().iter().zip(vb.values()) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn policy_entries_minimize_the_hamiltonian(level_frac in 0.0f64..1.0, node in 2usize..39) {
        let b2 = preset("B2").unwrap();
        let c = smooth_coefficients(b2.clone(), 0.2, 32).unwrap();
        let field = solve(&b2, 41, None);
        let policy = extract_policy(&field, &c, c.controls());
        prop_assert_eq!(&policy, &extract_policy(&field, &c, c.controls()));
        let g = field.grid();
        let level = ((level_frac * g.nt() as f64) as usize).min(g.nt());
        let jet = field.node_jet(level, node);
        let x = g.node(node);
        let chosen = policy.at_node(level, node);
        prop_assert!(c.controls().contains(chosen));
        let (best, _) = min_hamiltonian(&c, &x, jet.value, &jet.grad, &jet.hess, c.controls());
        let at = fbsde_core::hjb::hamiltonian(&c, &x, jet.value, &jet.grad, &jet.hess, chosen);
        prop_assert_eq!(at, best);
        for &u in c.controls().grid() {
            prop_assert!(fbsde_core::hjb::hamiltonian(&c, &x, jet.value, &jet.grad, &jet.hess, u) >= at);
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), x in -2.0f64..2.0, u in 0usize..41) {
        let b2 = preset("B2").unwrap();
        let field = ValueField::from_fn(GridSpec::cube(1, 5.0, 41, 10, 0.0, 1.0).unwrap(), 0.0, |_, x| x[0].tanh());
        let control = AdmissibleControl::constant(b2.controls().grid()[u], b2.controls()).unwrap();
        let cfg = SimConfig::new(50, 20, seed).unwrap();
        let a = simulate_forward(&b2, &field, &control, 0.0, &Vector::scalar(x), &cfg).unwrap();
        let b = simulate_forward(&b2, &field, &control, 0.0, &Vector::scalar(x), &cfg).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        let _ = Arc::new(a);
    }
}
