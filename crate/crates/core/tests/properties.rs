use dptco::config::ScenarioConfig;
use dptco::controller::{adaptive_rhs, auxiliary_rhs, tracking_torque, AgentGains, ControlGains, Phase, TrackingInput};
use dptco::design::{
    compute_constants, smallgain_check, subsystem_descriptors, synthesize, verify_design, NetworkConstants, DEFAULT_MARGIN,
};
use dptco::gain::{GainForm, GainFunction, PrescribedGain, DEFAULT_MU_CAP};
use dptco::graph::{laplacian, relative_output, spectrum, Topology};
use dptco::objective::{
    optimum_closed_form, optimum_gradient_descent, optimum_oracle, AgentObjective, Point, QuadraticObjective,
};
use dptco::plant::{coriolis_matrix, forward_dynamics, mass_matrix, ManipulatorParams};
use dptco::sim::diagnostics::conservation_residual;
use dptco::sim::Simulator;
use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use proptest::prelude::*;

fn power_gain() -> impl Strategy<Value = (GainFunction, f64, f64, f64)> {
    (1.0..4.0f64, 0.1..10.0f64, -5.0..5.0f64, 0.1..10.0f64).prop_map(|(m, scale, t0, horizon)| {
        let g = GainFunction::new(GainForm::Power { m, scale }, t0, horizon, DEFAULT_MU_CAP).unwrap();
        (g, m, scale, horizon)
    })
}

/// Symmetric nonnegative weights on a connected graph: a random spanning path
/// plus random extra edges.
fn connected_graph(max_nodes: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_nodes)
        .prop_flat_map(|n| {
            (
                Just(n),
                Just(()).prop_perturb(move |_, mut rng| {
                    let mut order: Vec<usize> = (0..n).collect();
                    for i in (1..n).rev() {
                        order.swap(i, rng.random_range(0..=i));
                    }
                    order
                }),
                proptest::collection::vec(0u8..=16, n * n),
            )
        })
        .prop_map(|(n, order, raw)| {
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    // Quarter steps keep every sum exact.
                    let w = f64::from(raw[i * n + j]) / 4.0;
                    let w = if raw[j * n + i] % 3 == 0 { w } else { 0.0 };
                    a[(i, j)] = w;
                    a[(j, i)] = w;
                }
            }
            for pair in order.windows(2) {
                let w = a[(pair[0], pair[1])].max(0.25);
                a[(pair[0], pair[1])] = w;
                a[(pair[1], pair[0])] = w;
            }
            a
        })
}

fn objective(n: usize) -> impl Strategy<Value = QuadraticObjective> {
    let point = || (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y)| Point::new(x, y));
    (
        point(),
        proptest::collection::vec((0.0..3.0f64, 0.05..3.0f64, point(), point(), any::<bool>()), n),
    )
        .prop_map(|(d_star, raw)| {
            let agents = raw
                .into_iter()
                .map(|(a, b, omega, anchor, swap)| {
                    let (s1, s2) = if swap { (b, a) } else { (a, b) };
                    AgentObjective { s1, s2, omega, anchor }
                })
                .collect();
            QuadraticObjective::new(d_star, agents).unwrap()
        })
}

fn network_constants() -> impl Strategy<Value = NetworkConstants> {
    (
        1usize..=8,
        0.05..5.0f64,
        1.0..5.0f64,
        0.05..5.0f64,
        1.0..3.0f64,
        0.01..1.0f64,
        proptest::collection::vec(1.0..50.0f64, 8),
        1e-3..1.0f64,
    )
        .prop_map(|(n, lambda2, spread, rho_c, ratio, lower, uppers, b_tilde)| {
            let k_m_upper: Vec<f64> = uppers[..n].iter().map(|u| lower * u).collect();
            NetworkConstants {
                lambda2,
                lambda_n: lambda2 * spread,
                rho_c,
                varrho_c: rho_c * ratio,
                k_m_lower_min: lower,
                k_m_upper_max: k_m_upper.iter().cloned().fold(0.0, f64::max),
                k_m_upper,
                b_tilde,
            }
        })
}

fn vec2(r: f64) -> impl Strategy<Value = Vector2<f64>> {
    (-r..r, -r..r).prop_map(|(x, y)| Vector2::new(x, y))
}

proptest! {
    #[test]
    fn power_gain_matches_closed_form((g, m, scale, horizon) in power_gain(), frac in 0.0..0.999f64) {
        let t = g.t0() + frac * horizon;
        let expected = scale * (horizon / (horizon + g.t0() - t)).powf(m);
        prop_assume!(expected < DEFAULT_MU_CAP);
        let mu = g.eval_mu(t).unwrap();
        prop_assert!((mu - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn gain_derivative_bound_and_ratio((g, _, _, horizon) in power_gain(), frac in 0.0..0.999f64) {
        let t = g.t0() + frac * horizon;
        let mu = g.eval_mu(t).unwrap();
        prop_assume!(mu < DEFAULT_MU_CAP);
        let mu_dot = g.eval_mu_dot(t).unwrap();
        prop_assert!(mu_dot <= g.b_tilde() * mu * mu + 1e-9 * mu * mu);
        let product = g.eval_mu_tilde(t).unwrap() * mu;
        prop_assert!((product - mu_dot).abs() <= 1e-10 * mu_dot.abs());
    }

    #[test]
    fn negative_kappa_is_nonincreasing_and_bounded(m in 1.0..3.0f64, scale in 0.1..1.0f64, horizon in 0.1..2.0f64, iota in -3.0..-0.1f64) {
        // Small enough that the exponent stays far from underflow.
        let g = GainFunction::new(GainForm::Power { m, scale }, 0.0, horizon, DEFAULT_MU_CAP).unwrap();
        let step = horizon / 400.0;
        let mut prev = 1.0;
        for k in 1..=20 {
            let t = g.t0() + horizon * 0.045 * k as f64;
            let kappa = g.kappa(iota, |s| s, t, step).unwrap();
            prop_assert!(kappa > 0.0 && kappa <= 1.0);
            prop_assert!(kappa <= prev);
            prev = kappa;
        }
    }

    #[test]
    fn laplacian_rows_and_columns_sum_to_zero(a in connected_graph(10)) {
        let l = laplacian(&Topology::new(a).unwrap());
        let ones = DVector::from_element(l.nrows(), 1.0);
        prop_assert!((&l * &ones).iter().all(|&x| x == 0.0));
        prop_assert!((ones.transpose() * &l).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relative_output_matches_neighbour_sums(a in connected_graph(8), seed in proptest::collection::vec(-10.0..10.0f64, 16)) {
        let n = a.nrows();
        let y = DVector::from_iterator(2 * n, seed.iter().cycle().take(2 * n).copied());
        let top = Topology::new(a.clone()).unwrap();
        let got = relative_output(&top, &y, 2).unwrap();
        for i in 0..n {
            for d in 0..2 {
                let brute: f64 = (0..n).map(|j| a[(i, j)] * (y[2 * i + d] - y[2 * j + d])).sum();
                prop_assert!((got[2 * i + d] - brute).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_is_invariant_under_relabelling(a in connected_graph(8), shift in 0usize..8) {
        let n = a.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let b = DMatrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);
        let sa = spectrum(&laplacian(&Topology::new(a).unwrap())).unwrap();
        let sb = spectrum(&laplacian(&Topology::new(b).unwrap())).unwrap();
        for (x, y) in sa.eigenvalues.iter().zip(&sb.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!(sa.is_connected());
    }

    #[test]
    fn gradients_satisfy_convexity_constants(obj in objective(5), x in vec2(10.0), y in vec2(10.0), agent in 0usize..5) {
        let c = obj.constants();
        let dg = obj.local_gradient(agent, &x) - obj.local_gradient(agent, &y);
        let dx = x - y;
        let tol = 1e-9 * (1.0 + dx.norm_squared() * c.varrho_c);
        prop_assert!(dg.dot(&dx) >= c.rho_c * dx.norm_squared() - tol);
        prop_assert!(dg.norm() <= c.varrho_c * dx.norm() + tol);
    }

    #[test]
    fn oracle_routes_agree(obj in objective(6)) {
        let top = Topology::ring(6).unwrap();
        let oracle = optimum_oracle(&obj, &top).unwrap();
        let iterative = optimum_gradient_descent(&obj, 1_000_000).unwrap();
        prop_assert!((optimum_closed_form(&obj) - iterative.z_star).norm() <= 1e-8);
        let stacked = vec![oracle.z_star; 6];
        prop_assert!(obj.global_gradient_norm(&stacked).unwrap() <= 1e-10);
    }

    #[test]
    fn forward_dynamics_solves_the_equation_of_motion(q in vec2(3.2), qdot in vec2(10.0), tau in vec2(50.0)) {
        let theta = ManipulatorParams::nominal();
        let qddot = forward_dynamics(&theta, &q, &qdot, &tau).unwrap();
        let residual = mass_matrix(&theta, &q) * qddot + coriolis_matrix(&theta, &q, &qdot) * qdot - tau;
        prop_assert!(residual.norm() <= 1e-11 * (1.0 + tau.norm()));
    }

    #[test]
    fn torque_vanishes_at_zero_error(
        q in vec2(3.2),
        theta in (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64),
        log_mu in 0.0..9.0f64,
        mu_tilde in 0.0..100.0f64,
    ) {
        let mu = 10f64.powf(log_mu);
        let gains = AgentGains { k1: 5.0, k2: 30.0, sigma: 4.0 };
        let theta_hat = Vector3::new(theta.0, theta.1, theta.2);
        let input = TrackingInput::new(q, Vector2::zeros(), q, theta_hat, mu, mu_tilde);
        prop_assert_eq!(tracking_torque(&input, gains, 2.44, Phase::Active), Vector2::zeros());
        // Only the leak remains, so the estimate shrinks in norm.
        let d = adaptive_rhs(&input, gains, 2.44, Phase::Active).unwrap();
        prop_assert_eq!(d, -gains.sigma * mu * theta_hat);
        prop_assert!(theta_hat.dot(&d) <= 0.0);
    }

    #[test]
    fn frozen_phase_holds_everything(q in vec2(3.2), qdot in vec2(10.0), v in vec2(5.0), grad in vec2(5.0), chi in vec2(5.0)) {
        let input = TrackingInput::new(q, qdot, q + Vector2::new(0.3, -0.2), Vector3::new(2.0, 2.0, 2.0), 7.0, 1.0);
        let gains = AgentGains { k1: 5.0, k2: 30.0, sigma: 4.0 };
        prop_assert_eq!(tracking_torque(&input, gains, 2.44, Phase::Frozen), Vector2::zeros());
        prop_assert_eq!(auxiliary_rhs(1.3, &v, &grad, &chi, 7.0, Phase::Frozen), (Point::zeros(), Point::zeros()));
        prop_assert!(adaptive_rhs(&input, gains, 2.44, Phase::Frozen).is_err());
    }

    #[test]
    fn auxiliary_law_conserves_sum_of_v(a in connected_graph(8), seed in proptest::collection::vec(-10.0..10.0f64, 16), mu in 1.0..1e6f64) {
        let n = a.nrows();
        let y = DVector::from_iterator(2 * n, seed.iter().cycle().take(2 * n).copied());
        let chi = relative_output(&Topology::new(a).unwrap(), &y, 2).unwrap();
        let mut total = Point::zeros();
        for i in 0..n {
            let c_i = Point::new(chi[2 * i], chi[2 * i + 1]);
            let (_, dv) = auxiliary_rhs(1.3, &Point::zeros(), &Point::zeros(), &c_i, mu, Phase::Active);
            total += dv;
        }
        prop_assert!(total.norm() <= 1e-12 * mu * (1.0 + chi.amax()));
    }

    #[test]
    fn design_constants_are_monotone(nc in network_constants(), scale in 1.01..3.0f64) {
        let gains = ControlGains::uniform(nc.agent_count(), 1.3, 2.5, 5.0, 30.0, 4.0);
        let base = compute_constants(&nc, &gains, 1.0);
        let wider = NetworkConstants { lambda_n: nc.lambda_n * scale, ..nc.clone() };
        prop_assert!(compute_constants(&wider, &gains, 1.0).c_s > base.c_s);
        let stronger = ControlGains { c: gains.c * scale, ..gains.clone() };
        prop_assert!(compute_constants(&nc, &stronger, 1.0).c_s > base.c_s);

        // On the 4 / lambda2 branch delta falls as lambda2 grows.
        let tiny = NetworkConstants { lambda2: 1e-3, lambda_n: 1e-3 * scale, ..nc.clone() };
        let grown = NetworkConstants { lambda2: 1e-3 * scale, lambda_n: 1e-3 * scale, ..nc.clone() };
        prop_assert!(compute_constants(&grown, &gains, 1.0).delta < compute_constants(&tiny, &gains, 1.0).delta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn synthesized_gains_pass_verification(nc in network_constants(), c_star in 1e-3..2.0f64, iota in 2.01..4.0f64) {
        let gains = synthesize(&nc, c_star, iota, DEFAULT_MARGIN).unwrap();
        let report = verify_design(&nc, &gains, c_star);
        prop_assert!(report.all_pass, "{:?}", report.checks);

        let dc = compute_constants(&nc, &gains, c_star);
        let (d1, d2) = subsystem_descriptors(&dc, c_star, 1.0);
        let sg = smallgain_check(&d1, &d2);
        prop_assert!(sg.pass);
        // l1 l2 from its defining formulas.
        let direct = dc.c_delta / dc.k_tilde * dc.c_s / (c_star * dc.delta_underbar);
        prop_assert!((direct - sg.l1l2).abs() <= 1e-12 * direct);
        prop_assert!((report.small_gain_product - sg.l1l2).abs() <= 1e-12 * direct);

        let alpha = sg.alpha_tilde.unwrap();
        prop_assert!(alpha.eval(0.0) > 0.0);
        let grid: Vec<f64> = (0..50).map(|k| alpha.eval(k as f64 * 0.5)).collect();
        prop_assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn short_runs_conserve_sum_of_v(offsets in proptest::collection::vec((-0.5..0.5f64, -0.5..0.5f64), 6)) {
        let mut cfg = ScenarioConfig::default();
        for (q, (dx, dy)) in cfg.init.q.iter_mut().zip(&offsets) {
            q[0] += dx;
            q[1] += dy;
        }
        let mean_x = offsets.iter().map(|o| o.0).sum::<f64>() / 6.0;
        cfg.init.v = Some(offsets.iter().map(|o| [o.0 - mean_x, 0.0]).collect());
        cfg.sim.t_end = 0.05;
        cfg.sim.record_interval = 1e-3;
        let sim = Simulator::new(cfg.build().unwrap().scenario).unwrap();
        let out = sim.run().unwrap();
        for s in &out.trace.samples {
            prop_assert!(conservation_residual(&s.agents) <= 1e-8);
        }
    }

    #[test]
    fn config_round_trips(step in 1e-5..1e-3f64, c in 0.1..5.0f64, k2 in proptest::collection::vec(1.0..100.0f64, 6)) {
        let mut cfg = ScenarioConfig::default();
        cfg.sim.step = step;
        cfg.control.c = c;
        cfg.control.k2 = k2;
        let text = cfg.to_toml_string();
        prop_assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
