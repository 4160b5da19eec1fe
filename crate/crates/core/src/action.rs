//! Cameron–Martin action, adjoint gradients, and minimum-action optimization.
//!
//! Controls are piecewise constant on the integration grid. The objective is
//! discretize-then-optimize: gradients are exact derivatives of the discrete
//! Lawson RK4 skeleton map, obtained by reverse sweeps through its stages.
//! Gradients are Riesz representatives in `L^2(0, T; H_0)`, whose discrete
//! inner product is `<a, b> = sum_j dt (a_j, b_j)_0`.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{integrate_skeleton, Model, Skeleton, Stages, TimeGrid, Trajectory};
use crate::noise::{h0_dot, h0_norm_sq, CovarianceSpec, WienerConvention};
use crate::operators::nonlinear_jacobian;
use crate::scalar::{CompensatedSum, Real};
use crate::shell_space::{h_norm_sq, v_norm_sq, ShellState};

/// Piecewise-constant control, one value per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlPath<T> {
    grid: TimeGrid<T>,
    values: Vec<ShellState<T>>,
    energy_cap: Option<T>,
}

impl<T: Real> ControlPath<T> {
    pub fn zeros(grid: TimeGrid<T>, num_shells: usize) -> Self {
        Self {
            grid,
            values: vec![ShellState::zeros(num_shells); grid.steps()],
            energy_cap: None,
        }
    }

    pub fn constant(grid: TimeGrid<T>, v: ShellState<T>) -> Self {
        Self {
            grid,
            values: vec![v; grid.steps()],
            energy_cap: None,
        }
    }

    pub fn from_values(grid: TimeGrid<T>, values: Vec<ShellState<T>>) -> Result<Self> {
        if values.len() != grid.steps() {
            return Err(Error::InvalidArgument(format!(
                "control has {} cells, grid has {}",
                values.len(),
                grid.steps()
            )));
        }
        let n = values[0].len();
        for v in &values {
            v.check_len(n)?;
            if !v.is_finite() {
                return Err(Error::NonFinite("control"));
            }
        }
        Ok(Self {
            grid,
            values,
            energy_cap: None,
        })
    }

    /// Control sampled at cell midpoints from `f(t)`.
    pub fn from_fn(grid: TimeGrid<T>, mut f: impl FnMut(T) -> ShellState<T>) -> Result<Self> {
        let half = T::lit(0.5);
        let values = (0..grid.steps())
            .map(|j| f(grid.time(j) + grid.dt() * half))
            .collect();
        Self::from_values(grid, values)
    }

    /// Attaches the `S_M` constraint `int |v|_0^2 dt <= cap`.
    pub fn with_energy_cap(mut self, cap: T, q: &CovarianceSpec<T>) -> Result<Self> {
        let e = self.energy(q)?;
        if e > cap {
            return Err(Error::EnergyCapExceeded {
                energy: e.to_f64_lossy(),
                cap: cap.to_f64_lossy(),
            });
        }
        self.energy_cap = Some(cap);
        Ok(self)
    }

    pub fn energy_cap(&self) -> Option<T> {
        self.energy_cap
    }
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }
    pub fn cell(&self, j: usize) -> &ShellState<T> {
        &self.values[j]
    }
    pub fn cells(&self) -> &[ShellState<T>] {
        &self.values
    }
    pub fn num_shells(&self) -> usize {
        self.values[0].len()
    }
    pub fn is_real(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.iter().all(|z| z.im == T::zero()))
    }

    pub fn real_part(&self) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.real_part()).collect(),
            energy_cap: self.energy_cap,
        }
    }

    /// `int |v|_0^2 dt` (exact sum over cells).
    pub fn energy(&self, q: &CovarianceSpec<T>) -> Result<T> {
        q.check_len(self.num_shells())?;
        let dt = self.grid.dt();
        Ok(crate::scalar::compensated_sum(
            self.values
                .iter()
                .map(|v| h0_norm_sq(v.as_slice(), q.eigenvalues()) * dt),
        ))
    }

    /// `<self, other> = sum_j dt (self_j, other_j)_0`
    pub fn inner(&self, other: &Self, q: &CovarianceSpec<T>) -> T {
        let dt = self.grid.dt();
        let lambda = q.eigenvalues();
        crate::scalar::compensated_sum(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| h0_dot(a.as_slice(), b.as_slice(), lambda) * dt),
        )
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v.scale(alpha)).collect(),
            energy_cap: self.energy_cap,
        }
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: T, x: &Self) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            a.axpy(alpha, b);
        }
    }
}

/// Half the Cameron–Martin energy, `1/2 sum_j |v_j|_0^2 dt`.
pub fn action_value<T: Real>(v: &ControlPath<T>, q: &CovarianceSpec<T>) -> Result<T> {
    Ok(v.energy(q)? * T::lit(0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Target<T> {
    Point(ShellState<T>),
    /// Exit event `|u(T) - center| >= radius`.
    Sphere {
        center: ShellState<T>,
        radius: T,
    },
}

impl<T: Real> Target<T> {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Target::Point(p) => p.check_len(n),
            Target::Sphere { center, radius } => {
                center.check_len(n)?;
                if !(*radius > T::zero()) {
                    return Err(Error::InvalidArgument(format!(
                        "sphere radius must be positive, got {radius}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Penalty `P` (so that `J = action + rho/2 P`), terminal gap, and the
    /// H-gradient of `P / 2`.
    fn penalty(&self, u: &[Complex<T>]) -> (T, T, Vec<Complex<T>>) {
        match self {
            Target::Point(phi) => {
                let d: Vec<Complex<T>> = u.iter().zip(phi.iter()).map(|(a, b)| a - b).collect();
                let p = h_norm_sq(&d);
                (p, p.sqrt(), d)
            }
            Target::Sphere { center, radius } => {
                let d: Vec<Complex<T>> = u.iter().zip(center.iter()).map(|(a, b)| a - b).collect();
                let r = h_norm_sq(&d).sqrt();
                let gap = (*radius - r).max(T::zero());
                if gap == T::zero() || r == T::zero() {
                    let grad = vec![Complex::new(T::zero(), T::zero()); u.len()];
                    return (gap * gap, gap, grad);
                }
                let scale = -gap / r;
                (gap * gap, gap, d.into_iter().map(|z| z * scale).collect())
            }
        }
    }

    fn gap_tolerance(&self) -> T {
        let scale = match self {
            Target::Point(phi) => h_norm_sq(phi.as_slice()).sqrt(),
            Target::Sphere { radius, .. } => *radius,
        };
        T::lit(1e-6) * (T::one() + scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionProblem<T> {
    pub model: Model<T>,
    pub u0: ShellState<T>,
    pub grid: TimeGrid<T>,
    pub target: Target<T>,
    /// Initial penalty weight.
    pub penalty: T,
    pub penalty_growth: T,
    pub penalty_stages: usize,
    /// Stop a stage when `||g|| <= grad_tol (1 + ||v||)`.
    pub grad_tol: T,
    /// Stop a stage when the relative decrease of `J` falls below `step_tol`.
    pub step_tol: T,
    /// Total iteration budget over all stages.
    pub max_iters: usize,
    /// Quasi-Newton memory; `0` gives plain gradient descent.
    pub memory: usize,
}

impl<T: Real> ActionProblem<T> {
    pub fn new(
        model: Model<T>,
        u0: ShellState<T>,
        grid: TimeGrid<T>,
        target: Target<T>,
    ) -> Result<Self> {
        let p = Self {
            model,
            u0,
            grid,
            target,
            penalty: T::lit(1e3),
            penalty_growth: T::lit(10.0),
            penalty_stages: 5,
            grad_tol: T::lit(1e-6),
            step_tol: T::lit(1e-15),
            max_iters: 500,
            memory: 10,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.num_shells();
        self.u0.check_len(n)?;
        self.target.validate(n)?;
        if !(self.penalty > T::zero())
            || !(self.penalty_growth >= T::one())
            || self.penalty_stages == 0
        {
            return Err(Error::InvalidArgument(
                "penalty must be positive with growth >= 1 and >= 1 stage".into(),
            ));
        }
        if !(self.grad_tol >= T::zero()) || !(self.step_tol >= T::zero()) {
            return Err(Error::InvalidArgument(
                "tolerances must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn with_target(&self, target: Target<T>) -> Result<Self> {
        let mut p = self.clone();
        p.target = target;
        p.validate()?;
        Ok(p)
    }
}

/// Objective pieces at one control.
struct Eval<T> {
    j: T,
    action: T,
    gap: T,
    terminal: ShellState<T>,
    grad: Option<ControlPath<T>>,
}

fn evaluate<T: Real>(
    prob: &ActionProblem<T>,
    v: &ControlPath<T>,
    rho: T,
    want_grad: bool,
) -> Result<Eval<T>> {
    let model = &prob.model;
    let grid = &prob.grid;
    let n = model.num_shells();
    let steps = grid.steps();
    let mut sk = Skeleton::new(model, grid);
    let mut u = prob.u0.as_slice().to_vec();
    let mut stages: Vec<Stages<T>> = Vec::new();
    if want_grad {
        stages.reserve(steps);
    }
    for j in 0..steps {
        if want_grad {
            let mut s: Stages<T> = Default::default();
            for y in s.iter_mut() {
                y.resize(n, Complex::new(T::zero(), T::zero()));
            }
            sk.step(&mut u, j, v.cell(j).as_slice(), Some(&mut s));
            stages.push(s);
        } else {
            sk.step(&mut u, j, v.cell(j).as_slice(), None);
        }
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Blowup {
                step: j + 1,
                t: grid.time(j + 1).to_f64_lossy(),
            });
        }
    }
    let action = action_value(v, &model.q)?;
    let (p, gap, dp) = prob.target.penalty(&u);
    let half = T::lit(0.5);
    let j = action + rho * half * p;
    let grad = if want_grad {
        let ubar: Vec<Complex<T>> = dp.into_iter().map(|z| z * rho).collect();
        Some(backward(prob, v, &stages, ubar, &sk)?)
    } else {
        None
    };
    Ok(Eval {
        j,
        action,
        gap,
        terminal: ShellState::from_vec_unchecked(u),
        grad,
    })
}

/// Reverse sweep through the Lawson RK4 stages. `ubar` is the H-gradient of
/// the terminal cost.
fn backward<T: Real>(
    prob: &ActionProblem<T>,
    v: &ControlPath<T>,
    stages: &[Stages<T>],
    mut ubar: Vec<Complex<T>>,
    sk: &Skeleton<'_, T>,
) -> Result<ControlPath<T>> {
    let model = &prob.model;
    let fac = &sk.fac;
    let n = ubar.len();
    let h = fac.dt;
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let zero = Complex::new(T::zero(), T::zero());
    let lambda = model.q.eigenvalues();
    let real_controls = model.q.convention() == WienerConvention::Real;
    let mut grads = vec![ShellState::zeros(n); stages.len()];
    let mut kbar: [Vec<Complex<T>>; 4] = Default::default();
    for kb in kbar.iter_mut() {
        kb.resize(n, zero);
    }
    let mut ybar = vec![zero; n];
    let mut vbar = vec![zero; n];
    let mut tmp = vec![zero; n];

    for j in (0..stages.len()).rev() {
        let vj = v.cell(j).as_slice();
        let st = &stages[j];
        // u' = E u + h/6 (E k1 + 2 E2 k2 + 2 E2 k3 + k4)
        for i in 0..n {
            let (e, e2) = (fac.e[i], fac.e2[i]);
            kbar[0][i] = ubar[i] * (h * sixth * e);
            kbar[1][i] = ubar[i] * (h * sixth * (e2 + e2));
            kbar[2][i] = ubar[i] * (h * sixth * (e2 + e2));
            kbar[3][i] = ubar[i] * (h * sixth);
            ubar[i] *= e;
        }
        for z in vbar.iter_mut() {
            *z = zero;
        }
        for s in (0..4).rev() {
            // k_s = N(y_s): ybar = (DN)^T kbar, vbar += sigma(y)^* kbar
            stage_adjoint(model, &fac.k, &st[s], vj, &kbar[s], &mut ybar, &mut tmp);
            model.sigma.adjoint_into(&st[s], &kbar[s], &mut tmp);
            for (a, b) in vbar.iter_mut().zip(&tmp) {
                *a += b;
            }
            match s {
                // y4 = E u + h E2 k3
                3 => {
                    for i in 0..n {
                        ubar[i] += ybar[i] * fac.e[i];
                        let add = ybar[i] * (h * fac.e2[i]);
                        kbar[2][i] += add;
                    }
                }
                // y3 = E2 u + h/2 k2
                2 => {
                    for i in 0..n {
                        ubar[i] += ybar[i] * fac.e2[i];
                        let add = ybar[i] * (h * half);
                        kbar[1][i] += add;
                    }
                }
                // y2 = E2 (u + h/2 k1)
                1 => {
                    for i in 0..n {
                        ubar[i] += ybar[i] * fac.e2[i];
                        let add = ybar[i] * (h * half * fac.e2[i]);
                        kbar[0][i] += add;
                    }
                }
                // y1 = u
                _ => {
                    for i in 0..n {
                        ubar[i] += ybar[i];
                    }
                }
            }
        }
        if ubar.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::AdjointNonFinite { step: j });
        }
        // Riesz map: g_j = v_j + Q vbar_j / dt
        let g = grads[j].as_mut_slice();
        for i in 0..n {
            let mut z = vj[i] + vbar[i] * (lambda[i] / h);
            if real_controls {
                z.im = T::zero();
            }
            g[i] = z;
        }
    }
    ControlPath::from_values(prob.grid, grads)
}

/// `ybar = (D N(y))^T kbar` with `N(y) = -B(y, y) + f + sigma(y) v`.
fn stage_adjoint<T: Real>(
    model: &Model<T>,
    k: &[T],
    y: &[Complex<T>],
    v: &[Complex<T>],
    kbar: &[Complex<T>],
    ybar: &mut [Complex<T>],
    tmp: &mut [Complex<T>],
) {
    let (a, b, c) = model.params.coefficients();
    let linear = a == T::zero() && b == T::zero() && c == T::zero();
    if linear {
        for z in ybar.iter_mut() {
            *z = Complex::new(T::zero(), T::zero());
        }
    } else {
        let jac = nonlinear_jacobian(y, k, &model.params);
        jac.apply_transpose(kbar, tmp);
        for (o, t) in ybar.iter_mut().zip(tmp.iter()) {
            *o = -*t;
        }
    }
    model.sigma.add_state_adjoint(v, kbar, ybar);
}

/// Gradient of `J(v) = action(v) + rho/2 P(u_v(T))` at `rho = prob.penalty`,
/// as a control path (Riesz representative in `L^2(0, T; H_0)`).
pub fn action_gradient<T: Real>(
    v: &ControlPath<T>,
    prob: &ActionProblem<T>,
) -> Result<ControlPath<T>> {
    prob.validate()?;
    check_control(prob, v)?;
    let e = evaluate(prob, v, prob.penalty, true)?;
    Ok(e.grad.expect("gradient requested"))
}

/// Penalized objective `J(v)` at `rho = prob.penalty`.
pub fn penalized_objective<T: Real>(v: &ControlPath<T>, prob: &ActionProblem<T>) -> Result<T> {
    check_control(prob, v)?;
    Ok(evaluate(prob, v, prob.penalty, false)?.j)
}

fn check_control<T: Real>(prob: &ActionProblem<T>, v: &ControlPath<T>) -> Result<()> {
    if v.grid() != &prob.grid {
        return Err(Error::InvalidArgument(
            "control grid differs from problem grid".into(),
        ));
    }
    v.cells()[0].check_len(prob.model.num_shells())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow<T> {
    pub stage: usize,
    pub iteration: usize,
    pub penalty: T,
    pub objective: T,
    pub action: T,
    pub gap: T,
    pub step: T,
    pub grad_norm: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionResult<T> {
    pub v_star: ControlPath<T>,
    /// Estimate of `I`: the action of `v_star`, or `inf` when the target is
    /// unreachable.
    pub action_value: T,
    /// `int |v_star|_0^2 dt`
    pub energy: T,
    /// `kappa * action_value`: the rate in the noise's own scaling.
    pub rate: T,
    pub terminal_gap: T,
    pub terminal_state: ShellState<T>,
    pub iterations: usize,
    pub converged: bool,
    pub unreachable: bool,
    pub final_penalty: T,
    pub grad_norm: T,
}

/// L-BFGS two-loop recursion in the `L^2(0, T; H_0)` inner product.
struct Lbfgs<T> {
    memory: usize,
    pairs: Vec<(ControlPath<T>, ControlPath<T>, T)>,
}

impl<T: Real> Lbfgs<T> {
    fn direction(&self, g: &ControlPath<T>, q: &CovarianceSpec<T>) -> ControlPath<T> {
        let mut d = g.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = *rho * s.inner(&d, q);
            d.axpy(-a, y);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.last() {
            let yy = y.inner(y, q);
            if yy > T::zero() {
                d = d.scale(s.inner(y, q) / yy);
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * y.inner(&d, q);
            d.axpy(a - b, s);
        }
        d.scale(-T::one())
    }

    fn push(&mut self, s: ControlPath<T>, y: ControlPath<T>, q: &CovarianceSpec<T>) {
        if self.memory == 0 {
            return;
        }
        let sy = s.inner(&y, q);
        if sy > T::lit(1e-300).max(T::min_positive_value()) {
            if self.pairs.len() == self.memory {
                self.pairs.remove(0);
            }
            self.pairs.push((s, y, T::one() / sy));
        }
    }
}

/// Continuation stages allowed beyond `penalty_stages` while the terminal gap
/// keeps shrinking.
pub const EXTRA_PENALTY_STAGES: usize = 3;

/// Minimizes `J(v) = action(v) + rho/2 P(u_v(T))` with Armijo-backtracked
/// L-BFGS and geometric penalty continuation. Returns the result and the
/// optimizer trace.
pub fn minimize_action<T: Real>(
    prob: &ActionProblem<T>,
    v_init: &ControlPath<T>,
) -> Result<(ActionResult<T>, Vec<TraceRow<T>>)> {
    prob.validate()?;
    check_control(prob, v_init)?;
    let q = &prob.model.q;
    let real_controls = q.convention() == WienerConvention::Real;
    let mut v = if real_controls {
        v_init.real_part()
    } else {
        v_init.clone()
    };
    let gap_tol = prob.target.gap_tolerance();
    let armijo = T::lit(1e-4);
    let half = T::lit(0.5);

    let mut rho = prob.penalty;
    let mut trace = Vec::new();
    let mut iters = 0usize;
    let mut stage_gaps: Vec<T> = Vec::new();
    let mut cur = evaluate(prob, &v, rho, true)?;
    let mut grad_norm = T::zero();
    let mut grad_ok = false;

    let mut stage = 0usize;
    loop {
        if stage >= prob.penalty_stages {
            // keep raising rho past the schedule while the gap still shrinks
            let shrinking = match stage_gaps.as_slice() {
                [.., prev, last] => *last <= *prev * half,
                _ => false,
            };
            if stage >= prob.penalty_stages + EXTRA_PENALTY_STAGES || !shrinking {
                break;
            }
        }
        if stage > 0 {
            rho *= prob.penalty_growth;
            cur = evaluate(prob, &v, rho, true)?;
        }
        let mut lbfgs = Lbfgs {
            memory: prob.memory,
            pairs: Vec::new(),
        };
        loop {
            let g = cur.grad.as_ref().expect("gradient");
            grad_norm = g.inner(g, q).max(T::zero()).sqrt();
            let vnorm = v.inner(&v, q).max(T::zero()).sqrt();
            grad_ok = grad_norm <= prob.grad_tol * (T::one() + vnorm);
            trace.push(TraceRow {
                stage,
                iteration: iters,
                penalty: rho,
                objective: cur.j,
                action: cur.action,
                gap: cur.gap,
                step: T::zero(),
                grad_norm,
            });
            if grad_ok || iters >= prob.max_iters {
                break;
            }
            let mut d = lbfgs.direction(g, q);
            let mut slope = g.inner(&d, q);
            if !(slope < T::zero()) {
                lbfgs.pairs.clear();
                d = g.scale(-T::one());
                slope = -grad_norm * grad_norm;
            }
            let mut alpha = T::one();
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial = v.clone();
                trial.axpy(alpha, &d);
                match evaluate(prob, &trial, rho, false) {
                    Ok(e) if e.j <= cur.j + armijo * alpha * slope => {
                        accepted = Some((trial, e));
                        break;
                    }
                    _ => alpha *= half,
                }
            }
            iters += 1;
            let Some((trial, _)) = accepted else { break };
            let next = evaluate(prob, &trial, rho, true)?;
            let decrease = cur.j - next.j;
            let mut s = trial.clone();
            s.axpy(-T::one(), &v);
            let mut y = next.grad.clone().expect("gradient");
            y.axpy(-T::one(), g);
            lbfgs.push(s, y, q);
            if let Some(row) = trace.last_mut() {
                row.step = alpha;
            }
            v = trial;
            cur = next;
            if decrease <= prob.step_tol * cur.j.abs().max(T::min_positive_value()) {
                let g = cur.grad.as_ref().expect("gradient");
                grad_norm = g.inner(g, q).max(T::zero()).sqrt();
                let vnorm = v.inner(&v, q).max(T::zero()).sqrt();
                grad_ok = grad_norm <= prob.grad_tol * (T::one() + vnorm);
                break;
            }
        }
        stage_gaps.push(cur.gap);
        if cur.gap <= gap_tol || iters >= prob.max_iters {
            break;
        }
        stage += 1;
    }

    let gap_ok = cur.gap <= gap_tol;
    // A reachable target shrinks the gap roughly by the penalty growth factor
    // per stage; a gap that does not move despite a growing penalty means no
    // admissible control exists.
    let unreachable = !gap_ok
        && stage_gaps.len() >= 2
        && stage_gaps.last().copied().unwrap_or(T::zero()) > stage_gaps[0] * half;
    let action = if unreachable {
        T::infinity()
    } else {
        cur.action
    };
    let energy = v.energy(q)?;
    Ok((
        ActionResult {
            v_star: v,
            action_value: action,
            energy,
            rate: action * q.kappa(),
            terminal_gap: cur.gap,
            terminal_state: cur.terminal,
            iterations: iters,
            converged: gap_ok && grad_ok,
            unreachable,
            final_penalty: rho,
            grad_norm,
        },
        trace,
    ))
}

/// Initial control for a sphere target: the single-mode minimum-energy
/// profile of the linearized problem, `v(t) ~ e^{-nu k_n^2 (T - t)}`, in the
/// mode that is cheapest to excite, scaled to reach the sphere.
pub fn sphere_initial_control<T: Real>(prob: &ActionProblem<T>) -> ControlPath<T> {
    let n = prob.model.num_shells();
    let grid = prob.grid;
    let (center, radius) = match &prob.target {
        Target::Sphere { center, radius } => (center, *radius),
        Target::Point(p) => (p, T::zero()),
    };
    let k = prob.model.params.wavenumbers();
    let nu = prob.model.params.nu();
    let horizon = grid.horizon();
    let lambda = prob.model.q.eigenvalues();
    let two = T::lit(2.0);
    let gram = |a: T| {
        if a > T::zero() {
            -(-two * a * horizon).exp_m1() / (two * a)
        } else {
            horizon
        }
    };
    let mut best: Option<(usize, T, Complex<T>)> = None;
    for m in 0..n {
        let s = prob.model.sigma.diag(center.as_slice(), m);
        let w = lambda[m] * s.norm_sqr() * gram(nu * k[m] * k[m]);
        if w > T::zero() && best.is_none_or(|(_, bw, _)| w > bw) {
            best = Some((m, w, s));
        }
    }
    let Some((m, _, s)) = best else {
        return ControlPath::zeros(grid, n);
    };
    let a = nu * k[m] * k[m];
    let g = gram(a);
    let t_end = grid.t_end();
    ControlPath::from_fn(grid, |t| {
        let mut v = ShellState::zeros(n);
        v.as_mut_slice()[m] = s.conj() * (radius * (-a * (t_end - t)).exp() / (s.norm_sqr() * g));
        v
    })
    .expect("finite initial control")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow<T> {
    pub target: Target<T>,
    /// `I` in action units (`inf` when unreachable).
    pub action_value: T,
    pub rate: T,
    pub terminal_gap: T,
    pub converged: bool,
    pub v_star: ControlPath<T>,
}

/// Minimizes the action for each target (in parallel, results in input order).
pub fn rate_function<T: Real>(
    targets: &[Target<T>],
    template: &ActionProblem<T>,
) -> Result<Vec<RateRow<T>>> {
    targets
        .par_iter()
        .map(|t| {
            let prob = template.with_target(t.clone())?;
            let init = match t {
                Target::Sphere { .. } => sphere_initial_control(&prob),
                Target::Point(_) => ControlPath::zeros(prob.grid, prob.model.num_shells()),
            };
            let (res, _) = minimize_action(&prob, &init)?;
            Ok(RateRow {
                target: t.clone(),
                action_value: res.action_value,
                rate: res.rate,
                terminal_gap: res.terminal_gap,
                converged: res.converged,
                v_star: res.v_star,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityRow<T> {
    pub index: usize,
    /// `sup_t |u_n(t) - u(t)|^2`
    pub sup_term: T,
    /// `int_0^T ||u_n(t) - u(t)||^2 dt` (trapezoid)
    pub integral_term: T,
    /// `sup_term + integral_term`
    pub x_metric: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport<T> {
    pub rows: Vec<ContinuityRow<T>>,
    pub energy_cap: Option<T>,
    pub tolerance: T,
    /// Last distance below `tolerance`.
    pub below_tolerance: bool,
    /// Last distance below the first.
    pub decreased: bool,
}

/// X-metric distances between the skeleton paths of `v_seq[i]` and `v_lim`.
pub fn continuity_check<T: Real>(
    v_seq: &[ControlPath<T>],
    v_lim: &ControlPath<T>,
    prob: &ActionProblem<T>,
    tolerance: T,
) -> Result<ContinuityReport<T>> {
    let model = &prob.model;
    let cap = v_lim.energy_cap();
    if let Some(c) = cap {
        for v in v_seq.iter().chain(std::iter::once(v_lim)) {
            let e = v.energy(&model.q)?;
            if e > c {
                return Err(Error::EnergyCapExceeded {
                    energy: e.to_f64_lossy(),
                    cap: c.to_f64_lossy(),
                });
            }
        }
    }
    let lim = integrate_skeleton(model, v_lim, &prob.u0, &prob.grid)?;
    let rows = v_seq
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let tr = integrate_skeleton(model, v, &prob.u0, &prob.grid)?;
            let (sup_term, integral_term) = x_metric(&tr, &lim, &model.params.wavenumbers());
            Ok(ContinuityRow {
                index: i,
                sup_term,
                integral_term,
                x_metric: sup_term + integral_term,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = rows.first().map(|r| r.x_metric).unwrap_or(T::zero());
    let last = rows.last().map(|r| r.x_metric).unwrap_or(T::zero());
    Ok(ContinuityReport {
        energy_cap: cap,
        tolerance,
        below_tolerance: last <= tolerance,
        decreased: last <= first,
        rows,
    })
}

/// `(sup_t |a - b|^2, int ||a - b||^2 dt)` with the trapezoid rule.
pub(crate) fn x_metric<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>, k: &[T]) -> (T, T) {
    let dt = a.grid.dt();
    let half = T::lit(0.5);
    let mut sup = T::zero();
    let mut int = CompensatedSum::new();
    let mut prev = T::zero();
    for (j, (x, y)) in a.states.iter().zip(&b.states).enumerate() {
        let d = x - y;
        sup = sup.max(h_norm_sq(d.as_slice()));
        let cur = v_norm_sq(d.as_slice(), k);
        if j > 0 {
            int.add((prev + cur) * half * dt);
        }
        prev = cur;
    }
    (sup, int.value())
}
