use proptest::prelude::*;
use smpc_core::horizon::assemble_horizon;
use smpc_core::powertrain::{battery_internal, battery_inverse, motor_electrical, traction_power};
use smpc_core::solver::StepCost;
use smpc_core::{BatteryParams, DriverScenario, ExperimentConfig, Quadratic};

fn battery(v: f64, r: f64) -> BatteryParams {
    BatteryParams { open_circuit_voltage: v, internal_resistance: r, capacity: 1e7, soc_min: 0.0, soc_max: 1e7 }
}

proptest! {
    #[test]
    fn battery_chain_round_trip(
        c0 in 0.0f64..1000.0, c1 in 0.9f64..1.1, c2 in 1e-7f64..1e-5,
        v in 200.0f64..800.0, r in 0.01f64..0.5, frac in 0.0f64..1.0,
    ) {
        let beta = Quadratic::new(c0, c1, c2);
        let b = battery(v, r);
        // motor powers on the increasing branch whose terminal power the
        // circuit can deliver
        let floor = beta.vertex();
        let p_em = floor + frac * (60_000.0 - floor);
        let p_c = motor_electrical(p_em, &beta).unwrap();
        prop_assume!(p_c <= 0.99 * b.max_terminal_power());
        let u = battery_internal(p_c, &b).unwrap();
        let back = battery_inverse(u, &beta, &b).unwrap();
        prop_assert!((back - p_em).abs() <= 1e-9 * p_em.abs().max(1.0), "{back} vs {p_em}");
    }

    #[test]
    fn internal_power_exceeds_terminal_power_and_increases(
        v in 200.0f64..800.0, r in 0.01f64..0.5, a in -1.0f64..0.99, d in 1e-3f64..0.01,
    ) {
        let b = battery(v, r);
        let p = a * b.max_terminal_power();
        let q = (p + d * b.max_terminal_power()).min(b.max_terminal_power());
        let (gp, gq) = (battery_internal(p, &b).unwrap(), battery_internal(q, &b).unwrap());
        // resistive losses: drawing P_c costs at least P_c internally
        prop_assert!(gp >= p - 1e-9 * p.abs().max(1.0));
        prop_assert!(gq > gp);
    }

    #[test]
    fn traction_power_matches_force_balance(
        v in 0.0f64..40.0, a in -3.0f64..3.0, theta in -0.1f64..0.1,
    ) {
        let cfg = ExperimentConfig::default();
        let p = &cfg.powertrain.vehicle;
        let drag = 0.5 * p.air_density * p.drag_coeff * p.frontal_area * v * v;
        let grade = p.mass * p.gravity * (theta.sin() + p.rolling_resist * theta.cos());
        let expected = (p.mass * a + drag + grade) * v;
        let got = traction_power(v, a, theta, p);
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn composed_fuel_cost_is_convex_and_non_increasing(
        v in 1.0f64..35.0, a in -1.5f64..1.5, theta in -0.06f64..0.06,
    ) {
        let cfg = ExperimentConfig::default();
        let scn = DriverScenario::new(vec![v], vec![theta], vec![a]).unwrap();
        let h = assemble_horizon(&scn, &cfg.policy(), &cfg.powertrain, cfg.initial_energy());
        prop_assume!(h.is_ok());
        let step = h.unwrap().steps[0];
        prop_assume!(step.engine_on && step.u_hi - step.u_lo > 1.0);
        let cost = StepCost::from(&step);
        let m = 64;
        let us: Vec<f64> = (0..=m).map(|i| step.u_lo + (step.u_hi - step.u_lo) * i as f64 / m as f64).collect();
        let f: Vec<f64> = us.iter().map(|&u| cost.fuel(u)).collect();
        let scale = f.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        for w in f.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * scale);
        }
        for w in f.windows(3) {
            // midpoint convexity on the uniform grid
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12 * scale);
        }
    }
}
