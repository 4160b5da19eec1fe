use num_complex::Complex;
use shell_ld::action::sphere_initial_control;
use shell_ld::experiments::noiseless_terminal;
use shell_ld::rng::member_stream;
use shell_ld::sampling::{random_state, StateFamily};
use shell_ld::*;

fn single_mode(target: ShellState<f64>) -> ActionProblem<f64> {
    let model = Model::new(
        ModelParams::linear(1, 1.0, 1.0).unwrap(),
        NoiseCoefficient::single_mode(1, 1),
        CovarianceSpec::explicit(vec![1.0]).unwrap(),
        Forcing::Zero,
    )
    .unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    ActionProblem::new(model, ShellState::zeros(1), grid, Target::Point(target)).unwrap()
}

fn gram() -> f64 {
    (1.0 - (-8.0f64).exp()) / 8.0
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let n = 8;
    let params = ModelParams::goy_standard(n, 1.0, 0.1).unwrap();
    let k = params.wavenumbers();
    let sigma = NoiseCoefficient::additive(
        (0..n)
            .map(|i| Complex::new(1.0 / (1.0 + i as f64), 0.0))
            .collect(),
    )
    .unwrap();
    let model = Model::new(params, sigma, CovarianceSpec::default_for(n), Forcing::Zero).unwrap();
    let grid = TimeGrid::new(0.0, 0.5, 64).unwrap();
    let mut rng = member_stream(2024, 0);
    let u0 = random_state(&k, StateFamily::Kolmogorov, &mut rng).scale(0.5);
    let phi = random_state(&k, StateFamily::Kolmogorov, &mut rng).scale(0.5);
    let mut prob = ActionProblem::new(model, u0, grid, Target::Point(phi)).unwrap();
    prob.penalty = 10.0;
    let path = |rng: &mut shell_ld::rng::Stream, s: f64| {
        ControlPath::from_values(
            grid,
            (0..64)
                .map(|_| random_state(&k, StateFamily::UniformMagnitude, rng).scale(s))
                .collect(),
        )
        .unwrap()
    };
    let v = path(&mut rng, 0.3);
    let g = action_gradient(&v, &prob).unwrap();
    for _ in 0..20 {
        let d = path(&mut rng, 1.0);
        let h = 1e-5;
        let (mut vp, mut vm) = (v.clone(), v.clone());
        vp.axpy(h, &d);
        vm.axpy(-h, &d);
        let fd = (penalized_objective(&vp, &prob).unwrap()
            - penalized_objective(&vm, &prob).unwrap())
            / (2.0 * h);
        let an = g.inner(&d, &prob.model.q);
        assert!((an - fd).abs() <= 1e-6 * fd.abs(), "adjoint {an} fd {fd}");
    }
}

#[test]
fn single_mode_gramian_rate() {
    let p = single_mode(ShellState::basis(1, 1));
    let (r, _) = minimize_action(&p, &ControlPath::zeros(p.grid, 1)).unwrap();
    let exact = 0.5 / gram();
    assert!(r.converged);
    assert!(
        (r.action_value - exact).abs() <= 1e-3 * exact,
        "{} vs {exact}",
        r.action_value
    );
    assert!((r.rate - p.model.q.kappa() * r.action_value).abs() == 0.0);
}

#[test]
fn rate_scales_quadratically() {
    let base = single_mode(ShellState::basis(1, 1));
    let i1 = minimize_action(&base, &ControlPath::zeros(base.grid, 1))
        .unwrap()
        .0
        .action_value;
    for c in [0.5, 2.0, 3.0] {
        let p = base
            .with_target(Target::Point(ShellState::basis(1, 1).scale(c)))
            .unwrap();
        let ic = minimize_action(&p, &ControlPath::zeros(p.grid, 1))
            .unwrap()
            .0
            .action_value;
        assert!(
            (ic - c * c * i1).abs() <= 1e-6 * c * c * i1,
            "c={c}: {ic} vs {}",
            c * c * i1
        );
    }
}

#[test]
fn noiseless_terminal_costs_nothing() {
    let params = ModelParams::goy_standard(6, 1.0, 0.3).unwrap();
    let k = params.wavenumbers();
    let model = Model::new(
        params,
        NoiseCoefficient::single_mode(6, 1),
        CovarianceSpec::default_for(6),
        Forcing::Zero,
    )
    .unwrap();
    let u0 = random_state(&k, StateFamily::Kolmogorov, &mut member_stream(8, 0));
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let zero = ControlPath::zeros(grid, 6);
    let free = integrate_skeleton(&model, &zero, &u0, &grid).unwrap();
    let p = ActionProblem::new(model, u0, grid, Target::Point(free.terminal().clone())).unwrap();
    let (r, _) = minimize_action(&p, &zero).unwrap();
    assert!(r.action_value <= 1e-10);
}

#[test]
fn unreachable_direction_is_infinite() {
    // noise drives shell 1 only; a linear model cannot move shell 2
    let model = Model::new(
        ModelParams::<f64>::linear(2, 1.0, 1.0).unwrap(),
        NoiseCoefficient::single_mode(2, 1),
        CovarianceSpec::default_for(2),
        Forcing::Zero,
    )
    .unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let p = ActionProblem::new(
        model,
        ShellState::zeros(2),
        grid,
        Target::Point(ShellState::basis(2, 2)),
    )
    .unwrap();
    let rows = rate_function(
        &[
            Target::Point(ShellState::basis(2, 1)),
            Target::Point(ShellState::basis(2, 2)),
        ],
        &p,
    )
    .unwrap();
    assert!(rows[0].action_value.is_finite() && rows[0].converged);
    assert!(rows[1].action_value.is_infinite() && !rows[1].converged);
}

#[test]
fn nonlinear_sphere_minimizer_converges() {
    let params = ModelParams::<f64>::goy_standard(6, 1.0, 0.2).unwrap();
    let k = params.wavenumbers();
    let model = Model::new(
        params,
        NoiseCoefficient::additive(vec![Complex::new(1.0, 0.0); 6]).unwrap(),
        CovarianceSpec::default_for(6),
        Forcing::Zero,
    )
    .unwrap();
    let u0 = random_state(&k, StateFamily::Kolmogorov, &mut member_stream(5, 0));
    let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
    let spec = EnsembleSpec {
        model: model.clone(),
        u0: u0.clone(),
        grid,
        paths: 1,
        master_seed: 0,
        epsilon: 0.0,
    };
    let center = noiseless_terminal(&spec).unwrap();
    let p = ActionProblem::new(
        model,
        u0,
        grid,
        Target::Sphere {
            center,
            radius: 0.25,
        },
    )
    .unwrap();
    let (r, trace) = minimize_action(&p, &sphere_initial_control(&p)).unwrap();
    assert!(r.converged, "{r:?}");
    assert!(r.grad_norm <= p.grad_tol * (1.0 + r.energy.sqrt()));
    assert!(trace
        .windows(2)
        .all(|w| w[0].stage != w[1].stage || w[1].objective <= w[0].objective));
    // the linearization predicts roughly delta^2 / (2 G_max)
    assert!(r.action_value > 0.0 && r.action_value < 1.0);
}

#[test]
fn optimizer_is_deterministic() {
    let p = single_mode(ShellState::basis(1, 1).scale(0.7));
    let a = minimize_action(&p, &ControlPath::zeros(p.grid, 1)).unwrap();
    let b = minimize_action(&p, &ControlPath::zeros(p.grid, 1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn continuation_extends_while_gap_shrinks() {
    let model = Model::new(
        ModelParams::goy_standard(8, 1.0, 1.0).unwrap(),
        NoiseCoefficient::single_mode(8, 1),
        CovarianceSpec::default_for(8),
        Forcing::Zero,
    )
    .unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let target = Target::Point(ShellState::basis(8, 1).scale(2.0));
    let p = ActionProblem::new(model, ShellState::basis(8, 1), grid, target).unwrap();
    let (r, trace) = minimize_action(&p, &ControlPath::zeros(grid, 8)).unwrap();
    assert!(r.converged && !r.unreachable, "{r:?}");
    assert!(r.terminal_gap <= 1e-6 * 3.0);
    let stages = trace.iter().map(|t| t.stage).max().unwrap() + 1;
    assert!(stages > p.penalty_stages && stages <= p.penalty_stages + action::EXTRA_PENALTY_STAGES);
}
