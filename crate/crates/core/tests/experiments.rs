use num_complex::Complex;
use shell_ld::experiments::*;
use shell_ld::rng::member_stream;
use shell_ld::sampling::{random_state, StateFamily};
use shell_ld::*;
use statrs::distribution::{ContinuousCDF, Normal};

const G: f64 = (1.0 - 3.354_626_279_025_119e-4) / 8.0; // (1 - e^{-8}) / 8

fn linear_spec(
    conv: WienerConvention,
    paths: usize,
    u0: ShellState<f64>,
    steps: usize,
) -> EnsembleSpec<f64> {
    let model = Model::new(
        ModelParams::linear(1, 1.0, 1.0).unwrap(),
        NoiseCoefficient::single_mode(1, 1),
        CovarianceSpec::explicit(vec![1.0])
            .unwrap()
            .with_convention(conv),
        Forcing::Zero,
    )
    .unwrap();
    EnsembleSpec {
        model,
        u0,
        grid: TimeGrid::new(0.0, 1.0, steps).unwrap(),
        paths,
        master_seed: 11,
        epsilon: 0.1,
    }
}

fn goy6(nu: f64, paths: usize, steps: usize) -> EnsembleSpec<f64> {
    let params = ModelParams::goy_standard(6, 1.0, nu).unwrap();
    let k = params.wavenumbers();
    let sigma = NoiseCoefficient::additive(vec![Complex::new(1.0, 0.0); 6]).unwrap();
    let model = Model::new(params, sigma, CovarianceSpec::default_for(6), Forcing::Zero).unwrap();
    let u0 = random_state(&k, StateFamily::Kolmogorov, &mut member_stream(5, 0));
    EnsembleSpec {
        model,
        u0,
        grid: TimeGrid::new(0.0, 1.0, steps).unwrap(),
        paths,
        master_seed: 2,
        epsilon: 0.0,
    }
}

/// `2 PhiBar(delta / sqrt(eps G))`
fn two_sided_tail(delta: f64, eps: f64) -> f64 {
    2.0 * Normal::standard().sf(delta / (eps * G).sqrt())
}

#[test]
fn desk_energy_estimates_hold() {
    let spec = linear_spec(
        WienerConvention::Complex,
        200,
        ShellState::basis(1, 1),
        1000,
    );
    let r = verify_energy_estimates(&spec, 1.0).unwrap();
    assert_eq!(r.rows.len(), 4);
    for row in &r.rows {
        assert!(row.margin >= 0.0 && row.holds, "{row:?}");
    }
    assert!(r.measured_m <= r.m);
}

#[test]
fn energy_refuses_above_threshold() {
    let mut spec = linear_spec(WienerConvention::Complex, 10, ShellState::basis(1, 1), 100);
    spec.epsilon = 0.51;
    match verify_energy_estimates(&spec, 1.0) {
        Err(Error::EpsilonThreshold { bound, .. }) => assert!(bound.contains("nu/2K")),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn weak_convergence_linear_slope_is_one() {
    let spec = linear_spec(WienerConvention::Complex, 200, ShellState::basis(1, 1), 200);
    let v = ControlPath::constant(spec.grid, ShellState::from_real(&[0.5]).unwrap());
    let r = weak_convergence_study(&v, &[1e-1, 1e-2, 1e-3, 1e-4], &spec).unwrap();
    let slope = r.loglog_slope.unwrap();
    assert!((0.9..=1.1).contains(&slope), "slope {slope}");
    assert!(r.strictly_decreasing && r.within_envelope);
}

#[test]
fn weak_convergence_nonlinear_goy() {
    let spec = goy6(0.2, 200, 1000);
    let v = ControlPath::constant(spec.grid, ShellState::basis(6, 1).scale(0.5));
    let r = weak_convergence_study(&v, &[1e-1, 1e-2, 1e-3, 1e-4], &spec).unwrap();
    assert!(r.strictly_decreasing, "{:?}", r.rows);
    assert!(r.within_envelope, "{:?}", r.rows);
}

#[test]
fn naive_estimate_matches_gaussian_tail() {
    let spec = linear_spec(WienerConvention::Real, 20_000, ShellState::zeros(1), 100);
    let r = rare_event_probability(&SphereEvent { delta: 0.5 }, 0.05, &spec, &[]).unwrap();
    let exact = two_sided_tail(0.5, 0.05);
    assert!(r.flagged || (r.ci_low <= exact && exact <= r.ci_high));
    // a larger event is well inside naive range
    let r = rare_event_probability(&SphereEvent { delta: 0.1 }, 0.05, &spec, &[]).unwrap();
    let exact = two_sided_tail(0.1, 0.05);
    assert!(r.ci_low <= exact && exact <= r.ci_high, "{r:?} vs {exact}");
}

#[test]
fn ldp_linear_oracle() {
    let spec = linear_spec(WienerConvention::Real, 4000, ShellState::zeros(1), 200);
    let eps = [0.01, 0.05, 0.02];
    let t = ldp_check(&SphereEvent { delta: 0.5 }, &eps, &spec, None).unwrap();
    let i_exact = 0.25 / (2.0 * G);
    assert!(
        (t.i_ref - i_exact).abs() <= 1e-3 * i_exact,
        "{} vs {i_exact}",
        t.i_ref
    );
    assert!(t.rows.windows(2).all(|w| w[0].epsilon >= w[1].epsilon));
    let is_rows: Vec<_> = t
        .rows
        .iter()
        .filter(|r| r.estimator == Estimator::Importance)
        .collect();
    let expected = [1.105, 1.051, 1.029];
    for (row, approx) in is_rows.iter().zip(expected) {
        let exact = -row.epsilon * two_sided_tail(0.5, row.epsilon).ln();
        assert!((exact - approx).abs() < 1e-3);
        assert!(
            row.neg_eps_log_ci_low <= exact && exact <= row.neg_eps_log_ci_high,
            "{row:?} vs {exact}"
        );
        assert!(row.ci_low <= row.p_hat && row.p_hat <= row.ci_high);
    }
    let last = is_rows.last().unwrap();
    let exact = two_sided_tail(0.5, 0.01);
    assert!(
        (last.p_hat - exact).abs() <= 3.0 * last.std_err,
        "{last:?} vs {exact}"
    );
    assert!(t.importance_monotone && t.importance_above_ref);
    assert!(t
        .rows
        .iter()
        .filter(|r| r.estimator == Estimator::Naive)
        .all(|r| r.flagged));
}

#[test]
fn ldp_nonlinear_estimators_agree() {
    let spec = goy6(0.2, 4000, 1000);
    let t = ldp_check(&SphereEvent { delta: 0.25 }, &[0.1], &spec, None).unwrap();
    assert!(t.rate_converged);
    assert_eq!(t.estimators_consistent, Some(true), "{:?}", t.rows);
}

#[test]
fn large_event_flags_naive_only() {
    let spec = linear_spec(WienerConvention::Real, 500, ShellState::zeros(1), 100);
    let t = ldp_check(&SphereEvent { delta: 1.5 }, &[0.05], &spec, None).unwrap();
    let (naive, is) = (&t.rows[0], &t.rows[1]);
    assert!(naive.flagged && naive.hits == 0);
    assert!(!is.flagged && is.log_p_hat.is_finite());
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let spec = goy6(0.3, 64, 200);
    let v = ControlPath::constant(spec.grid, ShellState::basis(6, 2).scale(0.3));
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let w = weak_convergence_study(&v, &[0.1, 0.01], &spec).unwrap();
            let r = rare_event_probability(
                &SphereEvent { delta: 0.1 },
                0.1,
                &spec,
                std::slice::from_ref(&v),
            )
            .unwrap();
            (w, r)
        })
    };
    assert_eq!(run(1), run(4));
}
