//! Monte Carlo checks of the energy estimates, the small-noise weak
//! convergence of controlled paths, and large-deviation scaling of
//! terminal exit probabilities.
//!
//! Member `j` of every ensemble draws from its own stream derived from the
//! master seed and a per-experiment tag; members run in parallel and their
//! statistics are reduced sequentially in member order, so results do not
//! depend on the number of workers.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::action::{rate_function, ActionProblem, ControlPath, Target};
use crate::error::{Error, Result};
use crate::integrate::{integrate_skeleton_euler, run_exp_euler, Model, TimeGrid};
use crate::noise::{
    check_noise_hypotheses, fill_increment, h0_dot, NoiseHypothesesReport, WienerConvention,
};
use crate::rng::{member_stream, mix64, Stream};
use crate::scalar::{CompensatedSum, Real};
use crate::shell_space::{h_norm_sq, v_norm_sq, ShellState};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

const TAG_ENERGY: u64 = 0x454e_4552;
const TAG_WEAK: u64 = 0x5745_414b;
const TAG_NAIVE: u64 = 0x4e41_4956;
const TAG_IMPORTANCE: u64 = 0x494d_5054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSpec<T> {
    pub model: Model<T>,
    pub u0: ShellState<T>,
    pub grid: TimeGrid<T>,
    pub paths: usize,
    pub master_seed: u64,
    pub epsilon: T,
}

impl<T: Real> EnsembleSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidArgument(
                "ensemble needs at least one path".into(),
            ));
        }
        if !(self.epsilon >= T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        self.u0.check_len(self.model.num_shells())?;
        self.model
            .forcing
            .validate(self.model.num_shells(), Some(&self.grid))
    }

    pub fn with_epsilon(&self, epsilon: T) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// Runs `f(j, stream_j)` for every member in parallel; results in member order.
    fn map_members<R: Send>(
        &self,
        tag: u64,
        f: impl Fn(usize, &mut Stream) -> Result<R> + Sync,
    ) -> Result<Vec<R>> {
        let seed = mix64(self.master_seed, tag);
        (0..self.paths)
            .into_par_iter()
            .map(|j| f(j, &mut member_stream(seed, j as u64)))
            .collect()
    }
}

fn mean<T: Real>(xs: impl IntoIterator<Item = T>) -> (T, usize) {
    let mut acc = CompensatedSum::new();
    let mut n = 0;
    for x in xs {
        acc.add(x);
        n += 1;
    }
    (acc.value() / T::from_usize_lossy(n.max(1)), n)
}

/// Mean and standard error in member order.
fn mean_se<T: Real>(xs: &[T]) -> (T, T) {
    let (m, n) = mean(xs.iter().copied());
    if n < 2 {
        return (m, T::zero());
    }
    let (ss, _) = mean(xs.iter().map(|&x| (x - m) * (x - m)));
    let var = ss * T::from_usize_lossy(n) / T::from_usize_lossy(n - 1);
    (m, (var / T::from_usize_lossy(n)).sqrt())
}

// ---------------------------------------------------------------------------
// Energy estimates

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRow<T> {
    pub name: &'static str,
    pub lhs: T,
    pub rhs: T,
    /// `rhs - lhs`, minimized over nodes for the pointwise-in-time estimates.
    pub margin: T,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport<T> {
    pub epsilon: T,
    pub delta: T,
    pub paths: usize,
    pub noise: NoiseHypothesesReport<T>,
    /// Right-hand side of the first estimate at `t = T`.
    pub r1: T,
    /// Constant of the supremum estimate, `(R1 + sqrt(2 eps) K T) / (1 - sqrt(2 eps) K max(1, 2/nu))`.
    pub c2: T,
    /// `4 nu - 8 eps K`
    pub c_nu: T,
    /// `27 k_N^4 / delta^3`
    pub c_delta_t: T,
    /// `8 K R1`
    pub m: T,
    /// Smallest `M` for which the fourth-moment estimate would still hold.
    pub measured_m: T,
    pub rows: Vec<EnergyRow<T>>,
    pub all_hold: bool,
}

struct PathMoments<T> {
    e: Vec<T>,
    diss: Vec<T>,
    diss_w: Vec<T>,
    sup2: T,
    sup4: T,
}

/// Ensemble estimates of the four energy inequalities.
///
/// - Pointwise estimates hold at every node with `int_0^t`.
/// - The supremum estimates use `sup_t (|u(t)|^2 + nu/2 int_0^t ...)` and
///   `sup_t (|u|^4 e^{-delta t} + C_nu int_0^t ...)`, the quantities their
///   derivations bound.
pub fn verify_energy_estimates<T: Real>(
    spec: &EnsembleSpec<T>,
    delta: T,
) -> Result<EnergyReport<T>> {
    spec.validate()?;
    if !(delta > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "delta weight must be positive, got {delta}"
        )));
    }
    let model = &spec.model;
    let params = &model.params;
    let eps = spec.epsilon;
    let noise = check_noise_hypotheses(&model.sigma, &model.q, params, 64, spec.master_seed)?;
    let g = &noise.epsilon_guards;
    for (bound, threshold) in [
        ("nu/2K (energy1)", g.nu_over_2k),
        ("nu/2K ^ 1/2K^2 (energy2)", g.nu_over_2k_and_half_inv_k_sq),
        ("3nu/2K (energy3)", g.three_nu_over_2k),
        ("nu/3K (energy4)", g.nu_over_3k),
    ] {
        if !(eps < threshold) {
            return Err(Error::EpsilonThreshold {
                bound,
                epsilon: eps.to_f64_lossy(),
                threshold: threshold.to_f64_lossy(),
            });
        }
    }

    let grid = &spec.grid;
    let nodes = grid.steps() + 1;
    let times = grid.times();
    let dt = grid.dt();
    let k = params.wavenumbers();
    let nu = params.nu();
    let kk = noise.k;
    let (half, two) = (T::lit(0.5), T::lit(2.0));
    let kn = *k.last().expect("at least one shell");
    let c_nu = T::lit(4.0) * nu - T::lit(8.0) * eps * kk;
    let weight: Vec<T> = times
        .iter()
        .map(|&t| (-delta * (t - grid.t0())).exp())
        .collect();

    let moments = spec.map_members(TAG_ENERGY, |_, rng| {
        let mut m = PathMoments {
            e: Vec::with_capacity(nodes),
            diss: Vec::with_capacity(nodes),
            diss_w: Vec::with_capacity(nodes),
            sup2: T::zero(),
            sup4: T::zero(),
        };
        let (mut i2, mut i3, mut i4) = (
            CompensatedSum::new(),
            CompensatedSum::new(),
            CompensatedSum::new(),
        );
        let (mut p2, mut p3, mut p4) = (T::zero(), T::zero(), T::zero());
        run_exp_euler(
            model,
            eps,
            None,
            spec.u0.as_slice(),
            grid,
            &mut |_, dw| fill_increment(&model.q, dt, rng, dw),
            &mut |j, u| {
                let e = h_norm_sq(u);
                let v = v_norm_sq(u, &k);
                let (d2, d3, d4) = (v, v * weight[j], v * e * weight[j]);
                if j > 0 {
                    i2.add((p2 + d2) * half * dt);
                    i3.add((p3 + d3) * half * dt);
                    i4.add((p4 + d4) * half * dt);
                }
                (p2, p3, p4) = (d2, d3, d4);
                m.sup2 = m.sup2.max(e + nu * half * i2.value());
                m.sup4 = m.sup4.max(e * e * weight[j] + c_nu * i4.value());
                m.e.push(e);
                m.diss.push(i2.value());
                m.diss_w.push(i3.value());
            },
        )?;
        Ok(m)
    })?;

    // Forcing integrals along the grid (trapezoid).
    let n = model.num_shells();
    let fnode: Vec<ShellState<T>> = (0..nodes).map(|j| model.forcing.at_node(j, n)).collect();
    let vdual = |f: &ShellState<T>| {
        f.iter()
            .zip(&k)
            .map(|(z, &kn)| z.norm_sqr() / (kn * kn))
            .sum::<T>()
    };
    let cumulative = |dens: &dyn Fn(usize) -> T| {
        let mut acc = CompensatedSum::new();
        let mut out = vec![T::zero(); nodes];
        for j in 1..nodes {
            acc.add((dens(j - 1) + dens(j)) * half * dt);
            out[j] = acc.value();
        }
        out
    };
    let f_vdual = cumulative(&|j| vdual(&fnode[j]));
    let f_h_w = cumulative(&|j| h_norm_sq(fnode[j].as_slice()) * weight[j]);
    let f_vdual4_w = cumulative(&|j| vdual(&fnode[j]).powi(2) * weight[j]);

    let e0 = h_norm_sq(spec.u0.as_slice());
    let horizon = grid.horizon();
    let avg = |sel: &dyn Fn(&PathMoments<T>) -> T| mean(moments.iter().map(sel)).0;

    let mut rows = Vec::new();
    // (energy1)
    {
        let mut worst: Option<(T, T, T)> = None;
        for j in 0..nodes {
            let lhs = avg(&|m| m.e[j]) + nu * half * avg(&|m| m.diss[j]);
            let rhs = e0 + f_vdual[j] / nu + eps * kk * horizon;
            if worst.is_none_or(|(_, _, w)| rhs - lhs < w) {
                worst = Some((lhs, rhs, rhs - lhs));
            }
        }
        let (lhs, rhs, margin) = worst.expect("nodes");
        rows.push(EnergyRow {
            name: "energy1",
            lhs,
            rhs,
            margin,
            holds: margin >= T::zero(),
        });
    }
    let r1 = e0 + f_vdual[nodes - 1] / nu + eps * kk * horizon;
    let beta = (two * eps).sqrt() * kk;
    let denom = T::one() - beta * T::one().max(two / nu);
    let c2 = if denom > T::zero() {
        (r1 + beta * horizon) / denom
    } else {
        T::infinity()
    };
    {
        let lhs = avg(&|m| m.sup2);
        rows.push(EnergyRow {
            name: "energy2",
            lhs,
            rhs: c2,
            margin: c2 - lhs,
            holds: lhs <= c2,
        });
    }
    // (energy3)
    {
        let rhs = e0 + f_h_w[nodes - 1] / delta + eps * kk / delta;
        let mut worst: Option<(T, T)> = None;
        for j in 0..nodes {
            let lhs = avg(&|m| m.e[j]) * weight[j] + nu * half * avg(&|m| m.diss_w[j]);
            if worst.is_none_or(|(_, w)| rhs - lhs < w) {
                worst = Some((lhs, rhs - lhs));
            }
        }
        let (lhs, margin) = worst.expect("nodes");
        rows.push(EnergyRow {
            name: "energy3",
            lhs,
            rhs,
            margin,
            holds: margin >= T::zero(),
        });
    }
    // (energy4)
    let c_delta_t = T::lit(27.0) * kn.powi(4) / delta.powi(3);
    let m_const = T::lit(8.0) * kk * r1;
    let base4 = e0 * e0 + c_delta_t * f_vdual4_w[nodes - 1];
    let lhs4 = avg(&|m| m.sup4);
    let rhs4 = base4 + eps * m_const / delta;
    rows.push(EnergyRow {
        name: "energy4",
        lhs: lhs4,
        rhs: rhs4,
        margin: rhs4 - lhs4,
        holds: lhs4 <= rhs4,
    });
    let measured_m = if eps > T::zero() {
        ((lhs4 - base4) * delta / eps).max(T::zero())
    } else {
        T::zero()
    };

    let all_hold = rows.iter().all(|r| r.holds);
    Ok(EnergyReport {
        epsilon: eps,
        delta,
        paths: spec.paths,
        noise,
        r1,
        c2,
        c_nu,
        c_delta_t,
        m: m_const,
        measured_m,
        rows,
        all_hold,
    })
}

// ---------------------------------------------------------------------------
// Weak convergence

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakRow<T> {
    pub epsilon: T,
    /// `E[ sup_t |u^eps_v - u_v|^2 + nu int ||u^eps_v - u_v||^2 ]`
    pub d: T,
    pub std_err: T,
    /// `C sqrt(eps)` with `C` calibrated at the largest `eps`.
    pub envelope: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakReport<T> {
    pub rows: Vec<WeakRow<T>>,
    pub c_calibrated: T,
    pub strictly_decreasing: bool,
    pub within_envelope: bool,
    /// Least-squares slope of `log D` against `log eps` over positive rows.
    pub loglog_slope: Option<T>,
}

/// Distance between controlled SDE paths and the controlled skeleton of the
/// same scheme, for each `eps` (common random numbers across `eps`).
pub fn weak_convergence_study<T: Real>(
    v: &ControlPath<T>,
    eps_list: &[T],
    spec: &EnsembleSpec<T>,
) -> Result<WeakReport<T>> {
    spec.validate()?;
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("empty epsilon list".into()));
    }
    if eps_list
        .iter()
        .any(|e| !(*e >= T::zero()) || !e.is_finite())
    {
        return Err(Error::InvalidArgument(
            "epsilon values must be finite and nonnegative".into(),
        ));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(
            "epsilon list must be strictly decreasing".into(),
        ));
    }
    let model = &spec.model;
    if model.q.convention() == WienerConvention::Real && !v.is_real() {
        return Err(Error::InvalidArgument(
            "real Wiener convention admits only real-valued controls".into(),
        ));
    }
    let grid = &spec.grid;
    let reference = integrate_skeleton_euler(model, v, &spec.u0, grid)?;
    let k = model.params.wavenumbers();
    let nu = model.params.nu();
    let dt = grid.dt();
    let half = T::lit(0.5);

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let dists = spec.map_members(TAG_WEAK, |_, rng| {
            let mut sup = T::zero();
            let mut int = CompensatedSum::new();
            let mut prev = T::zero();
            run_exp_euler(
                model,
                eps,
                Some(v),
                spec.u0.as_slice(),
                grid,
                &mut |_, dw| fill_increment(&model.q, dt, rng, dw),
                &mut |j, u| {
                    let r = reference.states[j].as_slice();
                    let d: Vec<Complex<T>> = u.iter().zip(r).map(|(a, b)| a - b).collect();
                    sup = sup.max(h_norm_sq(&d));
                    let cur = v_norm_sq(&d, &k);
                    if j > 0 {
                        int.add((prev + cur) * half * dt);
                    }
                    prev = cur;
                },
            )?;
            Ok(sup + nu * int.value())
        })?;
        let (d, se) = mean_se(&dists);
        rows.push(WeakRow {
            epsilon: eps,
            d,
            std_err: se,
            envelope: T::zero(),
        });
    }
    let (e_max, d_max) = (rows[0].epsilon, rows[0].d);
    let c = if e_max > T::zero() {
        d_max / e_max.sqrt()
    } else {
        T::zero()
    };
    for r in rows.iter_mut() {
        r.envelope = c * r.epsilon.sqrt();
    }
    let tol = T::one() + T::lit(1e-12);
    let within_envelope = rows.iter().all(|r| r.d <= r.envelope * tol);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].d < w[0].d);
    let pts: Vec<(T, T)> = rows
        .iter()
        .filter(|r| r.epsilon > T::zero() && r.d > T::zero())
        .map(|r| (r.epsilon.ln(), r.d.ln()))
        .collect();
    let loglog_slope = if pts.len() >= 2 {
        let (mx, _) = mean(pts.iter().map(|p| p.0));
        let (my, _) = mean(pts.iter().map(|p| p.1));
        let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(WeakReport {
        rows,
        c_calibrated: c,
        strictly_decreasing,
        within_envelope,
        loglog_slope,
    })
}

// ---------------------------------------------------------------------------
// Rare events

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Estimator {
    Naive,
    Importance,
}

/// Terminal exit event `|u^eps(T) - u^0(T)|_H >= delta` at the grid horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereEvent<T> {
    pub delta: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareEventEstimate<T> {
    pub estimator: Estimator,
    pub epsilon: T,
    pub delta: T,
    pub paths: usize,
    pub hits: usize,
    pub p_hat: T,
    pub ci_low: T,
    pub ci_high: T,
    /// Natural logarithms of the estimate and interval; finite even when the
    /// probabilities themselves underflow.
    pub log_p_hat: T,
    pub log_ci_low: T,
    pub log_ci_high: T,
    pub std_err: T,
    /// Zero hits: only `ci_high` is informative.
    pub flagged: bool,
}

/// Wilson score interval for `hits / n`.
pub fn wilson_interval<T: Real>(hits: usize, n: usize, z: T) -> (T, T) {
    let nf = T::from_usize_lossy(n);
    let p = T::from_usize_lossy(hits) / nf;
    let z2 = z * z;
    let denom = T::one() + z2 / nf;
    let center = (p + z2 / (T::lit(2.0) * nf)) / denom;
    let half = z * (p * (T::one() - p) / nf + z2 / (T::lit(4.0) * nf * nf)).sqrt() / denom;
    (
        (center - half).max(T::zero()).min(p),
        (center + half).min(T::one()).max(p),
    )
}

/// Noiseless terminal state of the stochastic scheme.
pub fn noiseless_terminal<T: Real>(spec: &EnsembleSpec<T>) -> Result<ShellState<T>> {
    let zero = ControlPath::zeros(spec.grid, spec.model.num_shells());
    Ok(
        integrate_skeleton_euler(&spec.model, &zero, &spec.u0, &spec.grid)?
            .terminal()
            .clone(),
    )
}

/// Naive (no tilts) or importance-sampled exit probability.
///
/// With tilts `v_1..v_m`, member `j` is driven by `v_{j mod m}` and weighted
/// by the deterministic-mixture likelihood ratio `1 / sum_c a_c dQ_c/dP`
/// (`a_c` the share of members on tilt `c`), which stays unbiased and covers
/// events with several minimizing controls (e.g. `v*` and `-v*` on a sphere).
pub fn rare_event_probability<T: Real>(
    event: &SphereEvent<T>,
    epsilon: T,
    spec: &EnsembleSpec<T>,
    tilts: &[ControlPath<T>],
) -> Result<RareEventEstimate<T>> {
    let spec = spec.with_epsilon(epsilon);
    spec.validate()?;
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidArgument(
            "rare-event estimation needs epsilon > 0".into(),
        ));
    }
    if !(event.delta >= T::zero()) {
        return Err(Error::InvalidArgument(
            "event radius must be nonnegative".into(),
        ));
    }
    let center = noiseless_terminal(&spec)?;
    let model = &spec.model;
    let grid = &spec.grid;
    let dt = grid.dt();
    let steps = grid.steps();
    let delta2 = event.delta * event.delta;
    let m = tilts.len();
    let tag = if m > 0 { TAG_IMPORTANCE } else { TAG_NAIVE };
    for v in tilts {
        if v.grid() != grid || v.num_shells() != model.num_shells() {
            return Err(Error::InvalidArgument(
                "tilt grid or dimension differs from ensemble".into(),
            ));
        }
        if model.q.convention() == WienerConvention::Real && !v.is_real() {
            return Err(Error::InvalidArgument(
                "real Wiener convention admits only real-valued controls".into(),
            ));
        }
    }
    let lambda = model.q.eigenvalues();
    let kappa = model.q.kappa();
    let sqrt_eps = epsilon.sqrt();
    // gram[i][c] = int (v_i, v_c)_0 dt
    let gram: Vec<Vec<T>> = tilts
        .iter()
        .map(|vi| {
            tilts
                .iter()
                .map(|vc| {
                    crate::scalar::compensated_sum(
                        vi.cells()
                            .iter()
                            .zip(vc.cells())
                            .map(|(a, b)| h0_dot(a.as_slice(), b.as_slice(), lambda) * dt),
                    )
                })
                .collect()
        })
        .collect();
    let share: Vec<T> = (0..m)
        .map(|c| {
            T::from_usize_lossy((spec.paths + m - 1 - c) / m) / T::from_usize_lossy(spec.paths)
        })
        .collect();

    // Per member: (hit, log weight).
    let samples = spec.map_members(tag, |j, rng| {
        let mut hit = false;
        let comp = if m > 0 { j % m } else { 0 };
        let mut cross = vec![CompensatedSum::new(); m];
        run_exp_euler(
            model,
            epsilon,
            tilts.get(comp),
            spec.u0.as_slice(),
            grid,
            &mut |step, dw| {
                fill_increment(&model.q, dt, rng, dw);
                for (acc, v) in cross.iter_mut().zip(tilts) {
                    acc.add(h0_dot(v.cell(step).as_slice(), dw, lambda));
                }
            },
            &mut |node, u| {
                if node == steps {
                    let d2: T = crate::scalar::compensated_sum(
                        u.iter().zip(center.iter()).map(|(a, b)| (a - b).norm_sqr()),
                    );
                    hit = d2 >= delta2;
                }
            },
        )?;
        if m == 0 {
            return Ok((hit, T::zero()));
        }
        // log dQ_i/dP along the sampled path, then log-sum-exp over the mixture.
        let logs: Vec<T> = (0..m)
            .map(|i| {
                share[i].ln()
                    + kappa
                        * (cross[i].value() / sqrt_eps + gram[i][comp] / epsilon
                            - gram[i][i] / (T::lit(2.0) * epsilon))
            })
            .collect();
        let top = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = top + logs.iter().map(|&l| (l - top).exp()).sum::<T>().ln();
        Ok((hit, -lse))
    })?;

    let n = spec.paths;
    let hits = samples.iter().filter(|s| s.0).count();
    let z = T::lit(Z95);
    let nf = T::from_usize_lossy(n);
    let est = match m {
        0 => {
            let p = T::from_usize_lossy(hits) / nf;
            let (lo, hi) = wilson_interval(hits, n, z);
            let se = (p * (T::one() - p) / nf).sqrt();
            RareEventEstimate {
                estimator: Estimator::Naive,
                epsilon,
                delta: event.delta,
                paths: n,
                hits,
                p_hat: p,
                ci_low: lo,
                ci_high: hi,
                log_p_hat: p.ln(),
                log_ci_low: lo.ln(),
                log_ci_high: hi.ln(),
                std_err: se,
                flagged: hits == 0,
            }
        }
        _ => {
            let logs: Vec<T> = samples.iter().filter(|s| s.0).map(|s| s.1).collect();
            if logs.is_empty() {
                RareEventEstimate {
                    estimator: Estimator::Importance,
                    epsilon,
                    delta: event.delta,
                    paths: n,
                    hits,
                    p_hat: T::zero(),
                    ci_low: T::zero(),
                    ci_high: T::infinity(),
                    log_p_hat: T::neg_infinity(),
                    log_ci_low: T::neg_infinity(),
                    log_ci_high: T::infinity(),
                    std_err: T::infinity(),
                    flagged: true,
                }
            } else {
                let m = logs.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s1 = CompensatedSum::new();
                let mut s2 = CompensatedSum::new();
                for &lw in &logs {
                    let w = (lw - m).exp();
                    s1.add(w);
                    s2.add(w * w);
                }
                let (m1, m2) = (s1.value() / nf, s2.value() / nf);
                let log_p = m + m1.ln();
                let rel_var = if n > 1 {
                    ((m2 / (m1 * m1) - T::one()) * nf / T::from_usize_lossy(n - 1)).max(T::zero())
                } else {
                    T::zero()
                };
                let rel_se = (rel_var / nf).sqrt();
                let p = log_p.exp();
                RareEventEstimate {
                    estimator: Estimator::Importance,
                    epsilon,
                    delta: event.delta,
                    paths: n,
                    hits,
                    p_hat: p,
                    ci_low: (log_p - z * rel_se).exp(),
                    ci_high: (log_p + z * rel_se).exp(),
                    log_p_hat: log_p,
                    log_ci_low: log_p - z * rel_se,
                    log_ci_high: log_p + z * rel_se,
                    std_err: p * rel_se,
                    flagged: false,
                }
            }
        }
    };
    Ok(est)
}

// ---------------------------------------------------------------------------
// LDP table

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpRow<T> {
    pub epsilon: T,
    pub estimator: Estimator,
    pub p_hat: T,
    pub ci_low: T,
    pub ci_high: T,
    pub log_p_hat: T,
    /// `-eps log p_hat`
    pub neg_eps_log_p: T,
    /// `-eps log` of the interval ends (low end from `ci_high`).
    pub neg_eps_log_ci_low: T,
    pub neg_eps_log_ci_high: T,
    pub i_ref: T,
    pub std_err: T,
    pub hits: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpTable<T> {
    pub delta: T,
    pub horizon: T,
    /// Rate of the event in the noise's own scaling (`kappa` times the action).
    pub i_ref: T,
    pub rate_converged: bool,
    /// Descending `eps`; naive row first within each `eps`.
    pub rows: Vec<LdpRow<T>>,
    /// Importance rows: `-eps log p_hat` decreases as `eps` decreases.
    pub importance_monotone: bool,
    /// Importance rows: every interval reaches `i_ref` or above.
    pub importance_above_ref: bool,
    /// Naive and importance intervals overlap wherever naive has >= 100 hits
    /// (`None` if no such row).
    pub estimators_consistent: Option<bool>,
    /// Minimizing control; the importance mixture uses `v*` and `-v*`.
    pub tilt: ControlPath<T>,
}

fn ldp_row<T: Real>(est: &RareEventEstimate<T>, i_ref: T) -> LdpRow<T> {
    let e = est.epsilon;
    LdpRow {
        epsilon: e,
        estimator: est.estimator,
        p_hat: est.p_hat,
        ci_low: est.ci_low,
        ci_high: est.ci_high,
        log_p_hat: est.log_p_hat,
        neg_eps_log_p: -e * est.log_p_hat,
        neg_eps_log_ci_low: -e * est.log_ci_high,
        neg_eps_log_ci_high: -e * est.log_ci_low,
        i_ref,
        std_err: est.std_err,
        hits: est.hits,
        flagged: est.flagged,
    }
}

/// Rate of the exit event by minimum action, then naive and importance
/// estimates of `-eps log P` for each `eps`. `template` supplies optimizer
/// settings; its model, grid, initial state and target are overwritten.
pub fn ldp_check<T: Real>(
    event: &SphereEvent<T>,
    eps_list: &[T],
    spec: &EnsembleSpec<T>,
    template: Option<&ActionProblem<T>>,
) -> Result<LdpTable<T>> {
    spec.validate()?;
    if !(event.delta > T::zero()) {
        return Err(Error::InvalidArgument(
            "event radius must be positive for a rate".into(),
        ));
    }
    let center = noiseless_terminal(spec)?;
    let target = Target::Sphere {
        center,
        radius: event.delta,
    };
    let mut prob = ActionProblem::new(
        spec.model.clone(),
        spec.u0.clone(),
        spec.grid,
        target.clone(),
    )?;
    if let Some(t) = template {
        prob.penalty = t.penalty;
        prob.penalty_growth = t.penalty_growth;
        prob.penalty_stages = t.penalty_stages;
        prob.grad_tol = t.grad_tol;
        prob.step_tol = t.step_tol;
        prob.max_iters = t.max_iters;
        prob.memory = t.memory;
    }
    let rate = rate_function(std::slice::from_ref(&target), &prob)?.remove(0);
    let i_ref = rate.rate;
    let tilt = rate.v_star;
    let tilts = [tilt.clone(), tilt.scale(-T::one())];

    let mut eps: Vec<T> = eps_list.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut rows = Vec::with_capacity(2 * eps.len());
    for &e in &eps {
        let naive = rare_event_probability(event, e, spec, &[])?;
        let is = rare_event_probability(event, e, spec, &tilts)?;
        rows.push(ldp_row(&naive, i_ref));
        rows.push(ldp_row(&is, i_ref));
    }
    let is_rows: Vec<&LdpRow<T>> = rows
        .iter()
        .filter(|r| r.estimator == Estimator::Importance)
        .collect();
    let importance_monotone = is_rows
        .windows(2)
        .all(|w| w[1].neg_eps_log_p < w[0].neg_eps_log_p);
    let importance_above_ref = is_rows.iter().all(|r| r.neg_eps_log_ci_high >= i_ref);
    let mut consistent = None;
    for pair in rows.chunks(2) {
        let (nv, is) = (&pair[0], &pair[1]);
        if nv.hits >= 100 {
            let overlap = nv.ci_low <= is.ci_high && is.ci_low <= nv.ci_high;
            consistent = Some(consistent.unwrap_or(true) && overlap);
        }
    }
    Ok(LdpTable {
        delta: event.delta,
        horizon: spec.grid.horizon(),
        i_ref,
        rate_converged: rate.converged,
        rows,
        importance_monotone,
        importance_above_ref,
        estimators_consistent: consistent,
        tilt,
    })
}
