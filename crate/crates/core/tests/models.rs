use std::cell::Cell;

use clonestat_core::integrate::{rk4_integrate, IntegrateError, IntegratorConfig, Method};
use clonestat_core::models::{dow_algebraic, dow_rhs, sir_rhs, DowParams, SirParams, ALGEBRAIC_TOL};

fn decay(_t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), IntegrateError> {
    dx[0] = -x[0];
    Ok(())
}

#[test]
fn rk4_error_drops_sixteenfold_per_halving() {
    let err = |h: f64| {
        let tr = rk4_integrate(decay, &[1.0], &[0.0, 1.0], h).unwrap();
        (tr.last().unwrap()[0] - (-1f64).exp()).abs()
    };
    for h in [0.2, 0.1, 0.05] {
        let ratio = err(h) / err(h / 2.0);
        assert!((14.0..=18.0).contains(&ratio), "h={h}: ratio {ratio}");
    }
}

#[test]
fn sir_population_is_conserved() {
    let p = SirParams {
        beta: 6.2e-4,
        alpha: 0.096,
        i0: 5,
        n: 261,
    };
    let field = |_t: f64, x: &[f64], dx: &mut [f64]| {
        dx.copy_from_slice(&sir_rhs([x[0], x[1], x[2]], &p));
        Ok(())
    };
    let times: Vec<f64> = (0..=130).map(f64::from).collect();
    for method in [Method::Adaptive, Method::FixedRk4] {
        let cfg = IntegratorConfig {
            method,
            ..Default::default()
        };
        let tr = cfg.integrate(field, &p.initial_state(), 0.0, &times).unwrap();
        assert_eq!(tr.len(), 131);
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let total: f64 = x.iter().sum();
            assert!((total - 261.0).abs() < 1e-6, "{method:?} t={t}: {total}");
            assert!(x.iter().all(|v| *v >= -1e-9));
        }
        // The epidemic actually runs: most of the town is removed by day 130.
        assert!(tr.last().unwrap()[2] > 150.0);
    }
}

fn dow_params() -> DowParams {
    DowParams {
        k: [1.3, 0.4, 2.1],
        theta7: 0.05,
        theta8: 0.2,
        theta9: 0.8,
        q: 0.0131,
    }
}

/// y7 + Q − y6 − Σ θ v/(θ + y7), evaluated here from the returned values.
fn closure_residual(y: [f64; 6], p: &DowParams, alg: [f64; 4]) -> f64 {
    let [y7, y8, y9, y10] = alg;
    let r1 = y7 - (-p.q + y[5] + y8 + y9 + y10);
    let r2 = y8 - p.theta8 * y[0] / (p.theta8 + y7);
    let r3 = y9 - p.theta9 * y[2] / (p.theta9 + y7);
    let r4 = y10 - p.theta7 * y[4] / (p.theta7 + y7);
    let scale = 1.0 + y[5].abs() + p.q.abs() + y8.abs() + y9.abs() + y10.abs();
    [r1, r2, r3, r4].iter().map(|r| r.abs()).fold(0.0, f64::max) / scale
}

#[test]
fn dow_closure_holds_along_a_trajectory() {
    let p = dow_params();
    let worst = Cell::new(0.0f64);
    let evals = Cell::new(0usize);
    let field = |_t: f64, x: &[f64], dx: &mut [f64]| {
        let y = [x[0], x[1], x[2], x[3], x[4], x[5]];
        let alg = dow_algebraic(y, &p).map_err(|e| IntegrateError::BadConfig(e.to_string()))?;
        let r = closure_residual(y, &p, alg);
        worst.set(worst.get().max(r));
        evals.set(evals.get() + 1);
        dx.copy_from_slice(&dow_rhs(y, &p).map_err(|e| IntegrateError::BadConfig(e.to_string()))?);
        Ok(())
    };
    // dy3 carries −k2·y8·y2 as printed, so y3 starts well above zero to keep
    // the trajectory inside the domain of the algebraic block.
    let y0 = [1.7243, 8.2728, 3.0, 0.5, 0.2, 0.0131];
    let times: Vec<f64> = (0..=40).map(|i| 0.05 * i as f64).collect();
    let tr = rk4_integrate(field, &y0, &times, 0.01).unwrap();
    assert_eq!(tr.len(), 41);
    assert!(evals.get() >= 4 * 200);
    assert!(tr.states.iter().flatten().all(|v| *v > 0.0));
    assert!(worst.get() <= ALGEBRAIC_TOL, "worst closure residual {:e}", worst.get());
    // y1 is consumed monotonically.
    for w in tr.states.windows(2) {
        assert!(w[1][0] <= w[0][0] + 1e-12);
    }
    assert!(tr.last().unwrap()[0] < y0[0]);

    let adaptive = IntegratorConfig::default()
        .integrate(field, &y0, 0.0, &times)
        .unwrap();
    for (a, b) in adaptive.states.iter().zip(&tr.states) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() < 1e-6 * (1.0 + v.abs()));
        }
    }
    assert!(worst.get() <= ALGEBRAIC_TOL);
}

#[test]
fn dow_quadratic_case() {
    let p = DowParams {
        k: [1.0; 3],
        theta7: 1.0,
        theta8: 1.0,
        theta9: 1.0,
        q: 0.0,
    };
    let alg = dow_algebraic([1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &p).unwrap();
    assert!((alg[0] - 1.302_775_6).abs() < 1e-7);
    // y7 solves y7² + y7 − 3 = 0.
    assert!((alg[0] * alg[0] + alg[0] - 3.0).abs() < 1e-12);
    assert!(closure_residual([1.0, 0.0, 1.0, 0.0, 1.0, 0.0], &p, alg) < 1e-15);
}
