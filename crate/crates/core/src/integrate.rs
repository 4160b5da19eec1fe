//! Time integrators for the skeleton, small-noise, and controlled equations.
//!
//! The stiff linear part `-nu A` is always integrated exactly by the factor
//! `exp(-nu k_n^2 dt)`:
//! - skeleton: Lawson (integrating-factor) RK4, fourth order;
//! - SDE: exponential Euler–Maruyama. The drift remainder is weighted by
//!   `phi1(x) = (1 - e^-x) / x` and the noise by `Gamma(x) = sqrt((1 - e^-2x) / 2x)`
//!   with `x = nu k_n^2 dt`, so the Ornstein–Uhlenbeck part is sampled exactly.
//!
//! The controlled SDE replaces `sqrt(eps) dW` by `sqrt(eps) dW + v dt`; the shift
//! enters through the same factor `Gamma`, which makes the accumulated
//! Girsanov weight the exact likelihood ratio of the discrete chain.

use num_complex::Complex;
use rand::Rng;
use serde::Serialize;

use crate::action::ControlPath;
use crate::error::{Error, Result};
use crate::noise::{
    fill_increment, h0_dot, h0_norm_sq, lq_norm_sq, CovarianceSpec, NoiseCoefficient,
    WienerConvention,
};
use crate::operators::model_bilinear_into;
use crate::scalar::{CompensatedSum, Real};
use crate::shell_space::{dot, h_norm_sq, v_norm_sq, ModelParams, ShellState};

const BLOWUP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid<T> {
    t0: T,
    t_end: T,
    steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, t_end: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "grid needs at least one step".into(),
            ));
        }
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs finite T > t0, got [{t0}, {t_end}]"
            )));
        }
        Ok(Self { t0, t_end, steps })
    }

    pub fn t0(&self) -> T {
        self.t0
    }
    pub fn t_end(&self) -> T {
        self.t_end
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn horizon(&self) -> T {
        self.t_end - self.t0
    }
    pub fn dt(&self) -> T {
        (self.t_end - self.t0) / T::from_usize_lossy(self.steps)
    }
    /// Time of node `j` (`0..=steps`).
    pub fn time(&self, j: usize) -> T {
        if j == self.steps {
            self.t_end
        } else {
            self.t0 + self.dt() * T::from_usize_lossy(j)
        }
    }
    pub fn times(&self) -> Vec<T> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Forcing<T> {
    Zero,
    Constant(ShellState<T>),
    /// One value per grid node (`steps + 1` entries), linearly interpolated
    /// at half steps.
    Table(Vec<ShellState<T>>),
}

impl<T: Real> Forcing<T> {
    pub fn validate(&self, num_shells: usize, grid: Option<&TimeGrid<T>>) -> Result<()> {
        match self {
            Forcing::Zero => Ok(()),
            Forcing::Constant(f) => {
                f.check_len(num_shells)?;
                if !f.is_finite() {
                    return Err(Error::NonFinite("forcing"));
                }
                Ok(())
            }
            Forcing::Table(values) => {
                if let Some(g) = grid {
                    if values.len() != g.steps() + 1 {
                        return Err(Error::InvalidArgument(format!(
                            "forcing table has {} entries, grid needs {}",
                            values.len(),
                            g.steps() + 1
                        )));
                    }
                }
                for f in values {
                    f.check_len(num_shells)?;
                    if !f.is_finite() {
                        return Err(Error::NonFinite("forcing"));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    /// Adds `f` at node `j` (`half = false`) or at `t_j + dt/2` (`half = true`).
    fn add_at(&self, j: usize, half: bool, out: &mut [Complex<T>]) {
        match self {
            Forcing::Zero => {}
            Forcing::Constant(f) => {
                for (o, z) in out.iter_mut().zip(f.iter()) {
                    *o += z;
                }
            }
            Forcing::Table(values) => {
                if half {
                    let h = T::lit(0.5);
                    for ((o, a), b) in out
                        .iter_mut()
                        .zip(values[j].iter())
                        .zip(values[j + 1].iter())
                    {
                        *o += (a + b) * h;
                    }
                } else {
                    for (o, z) in out.iter_mut().zip(values[j].iter()) {
                        *o += z;
                    }
                }
            }
        }
    }

    /// `f` at node `j` as a state.
    pub fn at_node(&self, j: usize, num_shells: usize) -> ShellState<T> {
        let mut out = vec![Complex::new(T::zero(), T::zero()); num_shells];
        self.add_at(j, false, &mut out);
        ShellState::from_vec_unchecked(out)
    }
}

/// Model, noise, and forcing bundle shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Model<T> {
    pub params: ModelParams<T>,
    pub sigma: NoiseCoefficient<T>,
    pub q: CovarianceSpec<T>,
    pub forcing: Forcing<T>,
}

impl<T: Real> Model<T> {
    pub fn new(
        params: ModelParams<T>,
        sigma: NoiseCoefficient<T>,
        q: CovarianceSpec<T>,
        forcing: Forcing<T>,
    ) -> Result<Self> {
        let n = params.num_shells();
        sigma.check_len(n)?;
        q.check_len(n)?;
        forcing.validate(n, None)?;
        Ok(Self {
            params,
            sigma,
            q,
            forcing,
        })
    }

    pub fn num_shells(&self) -> usize {
        self.params.num_shells()
    }

    fn check(&self, u0: &ShellState<T>, grid: &TimeGrid<T>) -> Result<()> {
        u0.check_len(self.num_shells())?;
        if !u0.is_finite() {
            return Err(Error::NonFinite("initial condition"));
        }
        self.forcing.validate(self.num_shells(), Some(grid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<T> {
    pub grid: TimeGrid<T>,
    pub states: Vec<ShellState<T>>,
    /// Per-step Wiener increments; absent for deterministic runs.
    pub increments: Option<Vec<ShellState<T>>>,
    pub girsanov_log_lr: Option<T>,
    pub epsilon: T,
}

impl<T: Real> Trajectory<T> {
    pub fn from_parts(
        grid: TimeGrid<T>,
        states: Vec<ShellState<T>>,
        increments: Option<Vec<ShellState<T>>>,
        girsanov_log_lr: Option<T>,
        epsilon: T,
    ) -> Result<Self> {
        if states.len() != grid.steps() + 1 {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} states, grid needs {}",
                states.len(),
                grid.steps() + 1
            )));
        }
        if let Some(inc) = &increments {
            if inc.len() != grid.steps() {
                return Err(Error::InvalidArgument(
                    "increment record length must equal steps".into(),
                ));
            }
        }
        Ok(Self {
            grid,
            states,
            increments,
            girsanov_log_lr,
            epsilon,
        })
    }

    pub fn terminal(&self) -> &ShellState<T> {
        self.states
            .last()
            .expect("trajectory has at least two nodes")
    }

    pub fn num_shells(&self) -> usize {
        self.states[0].len()
    }
}

/// Precomputed per-shell factors for one grid and viscosity.
pub(crate) struct Factors<T> {
    pub k: Vec<T>,
    pub e: Vec<T>,
    pub e2: Vec<T>,
    pub phi1: Vec<T>,
    pub gamma: Vec<T>,
    pub dt: T,
}

impl<T: Real> Factors<T> {
    pub fn new(params: &ModelParams<T>, dt: T) -> Self {
        let k = params.wavenumbers();
        let nu = params.nu();
        let two = T::lit(2.0);
        let mut e = Vec::with_capacity(k.len());
        let mut e2 = Vec::with_capacity(k.len());
        let mut phi1 = Vec::with_capacity(k.len());
        let mut gamma = Vec::with_capacity(k.len());
        for &kn in &k {
            let x = nu * kn * kn * dt;
            e.push((-x).exp());
            e2.push((-x / two).exp());
            if x > T::zero() {
                phi1.push(-(-x).exp_m1() / x);
                gamma.push((-(-x * two).exp_m1() / (x * two)).sqrt());
            } else {
                phi1.push(T::one());
                gamma.push(T::one());
            }
        }
        Self {
            k,
            e,
            e2,
            phi1,
            gamma,
            dt,
        }
    }
}

fn zeros<T: Real>(n: usize) -> Vec<Complex<T>> {
    vec![Complex::new(T::zero(), T::zero()); n]
}

fn check_blowup<T: Real>(u: &[Complex<T>], step: usize, grid: &TimeGrid<T>) -> Result<()> {
    let cap = T::lit(BLOWUP);
    for z in u {
        if !(z.re.abs() <= cap && z.im.abs() <= cap) {
            return Err(Error::Blowup {
                step,
                t: grid.time(step).to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// Lawson RK4 skeleton stepper; stage inputs are exposed for the adjoint.
pub(crate) struct Skeleton<'a, T> {
    pub model: &'a Model<T>,
    pub fac: Factors<T>,
    tmp: Vec<Complex<T>>,
}

/// Stage inputs `y_1..y_4` of one Lawson RK4 step.
pub(crate) type Stages<T> = [Vec<Complex<T>>; 4];

impl<'a, T: Real> Skeleton<'a, T> {
    pub fn new(model: &'a Model<T>, grid: &TimeGrid<T>) -> Self {
        let n = model.num_shells();
        Self {
            model,
            fac: Factors::new(&model.params, grid.dt()),
            tmp: zeros(n),
        }
    }

    /// `N(y) = -B(y, y) + f + sigma(y) v`
    fn rhs(
        &mut self,
        y: &[Complex<T>],
        j: usize,
        half: bool,
        v: &[Complex<T>],
        out: &mut [Complex<T>],
    ) {
        model_bilinear_into(y, y, &self.fac.k, &self.model.params, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
        self.model.forcing.add_at(j, half, out);
        self.model.sigma.apply_into(y, v, &mut self.tmp);
        for (o, t) in out.iter_mut().zip(&self.tmp) {
            *o += t;
        }
    }

    /// Advances `u` over cell `j` with control value `v`; optionally records
    /// the four stage inputs.
    pub fn step(
        &mut self,
        u: &mut [Complex<T>],
        j: usize,
        v: &[Complex<T>],
        mut stages: Option<&mut Stages<T>>,
    ) {
        let n = u.len();
        let h = self.fac.dt;
        let half = T::lit(0.5);
        let sixth = T::one() / T::lit(6.0);
        let (mut k1, mut k2, mut k3, mut k4) = (zeros(n), zeros(n), zeros(n), zeros(n));
        let mut y = u.to_vec();
        if let Some(s) = stages.as_deref_mut() {
            s[0].clone_from(&y);
        }
        self.rhs(&y, j, false, v, &mut k1);
        for i in 0..n {
            y[i] = (u[i] + k1[i] * (h * half)) * self.fac.e2[i];
        }
        if let Some(s) = stages.as_deref_mut() {
            s[1].clone_from(&y);
        }
        self.rhs(&y, j, true, v, &mut k2);
        for i in 0..n {
            y[i] = u[i] * self.fac.e2[i] + k2[i] * (h * half);
        }
        if let Some(s) = stages.as_deref_mut() {
            s[2].clone_from(&y);
        }
        self.rhs(&y, j, true, v, &mut k3);
        for i in 0..n {
            y[i] = u[i] * self.fac.e[i] + k3[i] * (h * self.fac.e2[i]);
        }
        if let Some(s) = stages {
            s[3].clone_from(&y);
        }
        self.rhs(&y, j, false, v, &mut k4);
        for i in 0..n {
            let (e, e2) = (self.fac.e[i], self.fac.e2[i]);
            let incr = k1[i] * e + (k2[i] + k3[i]) * (e2 + e2) + k4[i];
            u[i] = u[i] * e + incr * (h * sixth);
        }
    }
}

fn check_control<T: Real>(v: &ControlPath<T>, grid: &TimeGrid<T>, n: usize) -> Result<()> {
    if v.grid() != grid {
        return Err(Error::InvalidArgument(
            "control grid differs from integration grid".into(),
        ));
    }
    if v.num_shells() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.num_shells(),
        });
    }
    Ok(())
}

/// Skeleton equation `du + [nu A u + B(u, u)] dt = f dt + sigma(u) v dt`
/// by Lawson RK4.
pub fn integrate_skeleton<T: Real>(
    model: &Model<T>,
    v: &ControlPath<T>,
    u0: &ShellState<T>,
    grid: &TimeGrid<T>,
) -> Result<Trajectory<T>> {
    model.check(u0, grid)?;
    check_control(v, grid, model.num_shells())?;
    let mut sk = Skeleton::new(model, grid);
    let mut u = u0.as_slice().to_vec();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(u0.clone());
    for j in 0..grid.steps() {
        sk.step(&mut u, j, v.cell(j).as_slice(), None);
        check_blowup(&u, j + 1, grid)?;
        states.push(ShellState::from_vec_unchecked(u.clone()));
    }
    Ok(Trajectory {
        grid: *grid,
        states,
        increments: None,
        girsanov_log_lr: None,
        epsilon: T::zero(),
    })
}

/// One exponential Euler–Maruyama step. `shift` is the already-scaled
/// stochastic forcing `sqrt(eps) dW + v dt` (or `None` for no forcing).
pub(crate) struct ExpEuler<'a, T> {
    pub model: &'a Model<T>,
    pub fac: Factors<T>,
    drift: Vec<Complex<T>>,
    noise: Vec<Complex<T>>,
}

impl<'a, T: Real> ExpEuler<'a, T> {
    pub fn new(model: &'a Model<T>, grid: &TimeGrid<T>) -> Self {
        let n = model.num_shells();
        Self {
            model,
            fac: Factors::new(&model.params, grid.dt()),
            drift: zeros(n),
            noise: zeros(n),
        }
    }

    pub fn step(&mut self, u: &mut [Complex<T>], j: usize, shift: Option<&[Complex<T>]>) {
        model_bilinear_into(u, u, &self.fac.k, &self.model.params, &mut self.drift);
        for d in self.drift.iter_mut() {
            *d = -*d;
        }
        self.model.forcing.add_at(j, false, &mut self.drift);
        if let Some(s) = shift {
            self.model.sigma.apply_into(u, s, &mut self.noise);
        }
        let dt = self.fac.dt;
        for i in 0..u.len() {
            let mut next = u[i] * self.fac.e[i] + self.drift[i] * (dt * self.fac.phi1[i]);
            if shift.is_some() {
                next += self.noise[i] * self.fac.gamma[i];
            }
            u[i] = next;
        }
    }
}

/// Core Euler–Maruyama loop shared by every stochastic driver.
///
/// `noise(j, dw)` fills the raw increment of step `j`; `observe(j, u)` sees
/// every node. Returns the Girsanov log weight when a control is present.
pub(crate) fn run_exp_euler<T: Real>(
    model: &Model<T>,
    epsilon: T,
    control: Option<&ControlPath<T>>,
    u0: &[Complex<T>],
    grid: &TimeGrid<T>,
    noise: &mut dyn FnMut(usize, &mut [Complex<T>]),
    observe: &mut dyn FnMut(usize, &[Complex<T>]),
) -> Result<Option<T>> {
    let n = u0.len();
    let dt = grid.dt();
    let sqrt_eps = epsilon.sqrt();
    let mut stepper = ExpEuler::new(model, grid);
    let mut u = u0.to_vec();
    let mut dw = zeros(n);
    let mut shift = zeros(n);
    let lambda = model.q.eigenvalues();
    let kappa = model.q.kappa();
    let mut cross = CompensatedSum::new();
    let mut energy = CompensatedSum::new();
    let stochastic = epsilon > T::zero();
    observe(0, &u);
    for j in 0..grid.steps() {
        if stochastic {
            noise(j, &mut dw);
        }
        let forced = stochastic || control.is_some();
        if forced {
            for i in 0..n {
                shift[i] = dw[i] * sqrt_eps;
            }
            if let Some(v) = control {
                let vj = v.cell(j).as_slice();
                for i in 0..n {
                    shift[i] += vj[i] * dt;
                }
                if stochastic {
                    cross.add(h0_dot(vj, &dw, lambda));
                }
                energy.add(h0_norm_sq(vj, lambda) * dt);
            }
        }
        stepper.step(&mut u, j, if forced { Some(&shift) } else { None });
        check_blowup(&u, j + 1, grid)?;
        observe(j + 1, &u);
    }
    Ok(control
        .filter(|_| stochastic)
        .map(|_| -kappa * (cross.value() / sqrt_eps + energy.value() / (T::lit(2.0) * epsilon))))
}

fn record_path<T: Real>(
    model: &Model<T>,
    epsilon: T,
    control: Option<&ControlPath<T>>,
    u0: &ShellState<T>,
    grid: &TimeGrid<T>,
    noise: &mut dyn FnMut(usize, &mut [Complex<T>]),
) -> Result<Trajectory<T>> {
    let mut states = Vec::with_capacity(grid.steps() + 1);
    let mut incs = Vec::new();
    let stochastic = epsilon > T::zero();
    let mut recorder = |j: usize, dw: &mut [Complex<T>]| {
        noise(j, dw);
        incs.push(ShellState::from_vec_unchecked(dw.to_vec()));
    };
    let log_lr = run_exp_euler(
        model,
        epsilon,
        control,
        u0.as_slice(),
        grid,
        &mut recorder,
        &mut |_, u| states.push(ShellState::from_vec_unchecked(u.to_vec())),
    )?;
    Ok(Trajectory {
        grid: *grid,
        states,
        increments: if stochastic { Some(incs) } else { None },
        girsanov_log_lr: log_lr,
        epsilon,
    })
}

fn check_epsilon<T: Real>(epsilon: T) -> Result<()> {
    if !(epsilon >= T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    Ok(())
}

/// Small-noise SDE `du + [nu A u + B(u, u)] dt = f dt + sqrt(eps) sigma(u) dW`,
/// increments drawn from `stream`.
pub fn integrate_sde<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    epsilon: T,
    u0: &ShellState<T>,
    grid: &TimeGrid<T>,
    stream: &mut R,
) -> Result<Trajectory<T>> {
    check_epsilon(epsilon)?;
    model.check(u0, grid)?;
    let dt = grid.dt();
    record_path(model, epsilon, None, u0, grid, &mut |_, dw| {
        fill_increment(&model.q, dt, stream, dw)
    })
}

/// Same scheme driven by given increments (one per step).
pub fn integrate_sde_with_increments<T: Real>(
    model: &Model<T>,
    epsilon: T,
    u0: &ShellState<T>,
    grid: &TimeGrid<T>,
    increments: &[ShellState<T>],
) -> Result<Trajectory<T>> {
    check_epsilon(epsilon)?;
    model.check(u0, grid)?;
    if increments.len() != grid.steps() {
        return Err(Error::InvalidArgument(format!(
            "{} increments supplied for {} steps",
            increments.len(),
            grid.steps()
        )));
    }
    for inc in increments {
        inc.check_len(model.num_shells())?;
    }
    record_path(model, epsilon, None, u0, grid, &mut |j, dw| {
        dw.copy_from_slice(increments[j].as_slice())
    })
}

fn check_real_control<T: Real>(model: &Model<T>, v: &ControlPath<T>) -> Result<()> {
    if model.q.convention() == WienerConvention::Real && !v.is_real() {
        return Err(Error::InvalidArgument(
            "real Wiener convention admits only real-valued controls".into(),
        ));
    }
    Ok(())
}

/// Controlled SDE with drift `f + sigma(u) v` and noise `sqrt(eps) sigma(u) dW`;
/// accumulates `log LR = -kappa [ (v, dW)_0 / sqrt(eps) + |v|_0^2 dt / (2 eps) ]`.
pub fn integrate_controlled_sde<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    epsilon: T,
    v: &ControlPath<T>,
    u0: &ShellState<T>,
    grid: &TimeGrid<T>,
    stream: &mut R,
) -> Result<Trajectory<T>> {
    check_epsilon(epsilon)?;
    if epsilon == T::zero() {
        return Err(Error::InvalidArgument(
            "controlled SDE needs epsilon > 0; use integrate_skeleton".into(),
        ));
    }
    model.check(u0, grid)?;
    check_control(v, grid, model.num_shells())?;
    check_real_control(model, v)?;
    let dt = grid.dt();
    record_path(model, epsilon, Some(v), u0, grid, &mut |_, dw| {
        fill_increment(&model.q, dt, stream, dw)
    })
}

/// First-order skeleton on the stochastic scheme's grid: the controlled
/// Euler–Maruyama recursion with the noise switched off. Used as the exact
/// `eps -> 0` reference of the stochastic drivers.
pub fn integrate_skeleton_euler<T: Real>(
    model: &Model<T>,
    v: &ControlPath<T>,
    u0: &ShellState<T>,
    grid: &TimeGrid<T>,
) -> Result<Trajectory<T>> {
    model.check(u0, grid)?;
    check_control(v, grid, model.num_shells())?;
    record_path(model, T::zero(), Some(v), u0, grid, &mut |_, _| {})
}

/// Per-node energy bookkeeping along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBudget<T> {
    pub t: Vec<T>,
    /// `|u(t)|^2`
    pub energy: Vec<T>,
    /// `2 nu int_0^t ||u||^2` (trapezoid)
    pub dissipation: Vec<T>,
    /// `2 int_0^t (f, u)` (trapezoid)
    pub forcing_work: Vec<T>,
    /// `eps int_0^t |sigma(u)|_{L_Q}^2` (left point)
    pub ito_correction: Vec<T>,
    /// `2 sqrt(eps) sum (sigma(u_j) dW_j, u_j)`; zero without a noise record
    pub martingale: Vec<T>,
    /// `|u(t)|^2 - |u(0)|^2 + dissipation - work - ito - martingale`
    pub residual: Vec<T>,
}

pub fn energy_budget<T: Real>(traj: &Trajectory<T>, model: &Model<T>) -> Result<EnergyBudget<T>> {
    let n = model.num_shells();
    if traj.num_shells() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: traj.num_shells(),
        });
    }
    let grid = &traj.grid;
    model.forcing.validate(n, Some(grid))?;
    let k = model.params.wavenumbers();
    let nu = model.params.nu();
    let dt = grid.dt();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let eps = traj.epsilon;
    let lambda = model.q.eigenvalues();
    let len = traj.states.len();
    let mut out = EnergyBudget {
        t: grid.times(),
        energy: Vec::with_capacity(len),
        dissipation: Vec::with_capacity(len),
        forcing_work: Vec::with_capacity(len),
        ito_correction: Vec::with_capacity(len),
        martingale: Vec::with_capacity(len),
        residual: Vec::with_capacity(len),
    };
    let (mut diss, mut work, mut ito, mut mart) = (
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
    );
    let dens_diss = |u: &ShellState<T>| two * nu * v_norm_sq(u.as_slice(), &k);
    let dens_work = |j: usize, u: &ShellState<T>| {
        two * dot(model.forcing.at_node(j, n).as_slice(), u.as_slice())
    };
    let mut buf = zeros(n);
    let e0 = h_norm_sq(traj.states[0].as_slice());
    for (j, u) in traj.states.iter().enumerate() {
        if j > 0 {
            let prev = &traj.states[j - 1];
            diss.add((dens_diss(prev) + dens_diss(u)) * half * dt);
            work.add((dens_work(j - 1, prev) + dens_work(j, u)) * half * dt);
            ito.add(eps * lq_norm_sq(&model.sigma, prev.as_slice(), lambda) * dt);
            if let Some(inc) = &traj.increments {
                model
                    .sigma
                    .apply_into(prev.as_slice(), inc[j - 1].as_slice(), &mut buf);
                mart.add(two * eps.sqrt() * dot(&buf, prev.as_slice()));
            }
        }
        let e = h_norm_sq(u.as_slice());
        out.energy.push(e);
        out.dissipation.push(diss.value());
        out.forcing_work.push(work.value());
        out.ito_correction.push(ito.value());
        out.martingale.push(mart.value());
        out.residual
            .push(e - e0 + diss.value() - work.value() - ito.value() - mart.value());
    }
    Ok(out)
}
