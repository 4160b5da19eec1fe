//! Dissipation `A`, shell nonlinearities `B`, the drift `F = -nu A - B`, and
//! empirical estimates of the operator constants.

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::auxiliary_stream;
use crate::sampling::{family_for, random_state};
use crate::scalar::Real;
use crate::shell_space::{dot, ghost, h_norm_sq, v_norm_sq, ModelParams, ShellState, Variant};

#[inline]
fn mul_i<T: Real>(z: Complex<T>) -> Complex<T> {
    Complex::new(-z.im, z.re)
}

/// `(Au)_n = k_n^2 u_n`.
pub fn apply_a<T: Real>(u: &ShellState<T>, params: &ModelParams<T>) -> ShellState<T> {
    let k = params.wavenumbers();
    ShellState::from_vec_unchecked(u.iter().zip(&k).map(|(z, &kn)| z * (kn * kn)).collect())
}

/// GOY bilinear form with the fixed coefficients `1/4, 1/2, 1/8`:
///
/// `B_n(u, v) = i k_n ( u*_{n+1} v*_{n-1} / 4
///                    - (u*_{n+1} v*_{n+2} + u*_{n+2} v*_{n+1}) / 2
///                    + u*_{n-1} v*_{n-2} / 8 )`
pub(crate) fn b_goy_into<T: Real>(
    u: &[Complex<T>],
    v: &[Complex<T>],
    k: &[T],
    out: &mut [Complex<T>],
) {
    let quarter = T::lit(0.25);
    let half = T::lit(0.5);
    let eighth = T::lit(0.125);
    for (idx, o) in out.iter_mut().enumerate() {
        let n = idx as isize + 1;
        let t1 = (ghost(u, n + 1).conj() * ghost(v, n - 1).conj()) * quarter;
        let t2 = (ghost(u, n + 1).conj() * ghost(v, n + 2).conj()
            + ghost(u, n + 2).conj() * ghost(v, n + 1).conj())
            * (-half);
        let t3 = (ghost(u, n - 1).conj() * ghost(v, n - 2).conj()) * eighth;
        *o = mul_i((t1 + t2 + t3) * k[idx]);
    }
}

/// General GOY coefficients, bilinear in the slot order of the quadratic
/// term: `i (b k_{n-1} u*_{n-1} v*_{n+1} + a k_n u*_{n+1} v*_{n+2} +
/// c k_{n-2} u*_{n-1} v*_{n-2})`. Evaluated on the diagonal it equals the
/// nonlinear term of the GOY equation of motion.
pub(crate) fn b_general_into<T: Real>(
    u: &[Complex<T>],
    v: &[Complex<T>],
    k: &[T],
    (a, b, c): (T, T, T),
    out: &mut [Complex<T>],
) {
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    for (idx, o) in out.iter_mut().enumerate() {
        let n = idx as isize + 1;
        let kn = k[idx];
        let g1 = (ghost(u, n - 1).conj() * ghost(v, n + 1).conj()) * (b * (kn * half));
        let g2 = (ghost(u, n + 1).conj() * ghost(v, n + 2).conj()) * (a * kn);
        let g3 = (ghost(u, n - 1).conj() * ghost(v, n - 2).conj()) * (c * (kn * quarter));
        *o = mul_i(g1 + g2 + g3);
    }
}

/// Sabra bilinear form, first written factor from `u`, second from `v`:
/// `i (a k_{n+1} u_{n+2} v*_{n+1} + b k_n u_{n+1} v*_{n-1} - c k_{n-1} u_{n-1} v_{n-2})`.
pub(crate) fn b_sabra_into<T: Real>(
    u: &[Complex<T>],
    v: &[Complex<T>],
    k: &[T],
    (a, b, c): (T, T, T),
    out: &mut [Complex<T>],
) {
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    for (idx, o) in out.iter_mut().enumerate() {
        let n = idx as isize + 1;
        let kn = k[idx];
        let s1 = (ghost(u, n + 2) * ghost(v, n + 1).conj()) * (a * (kn * two));
        let s2 = (ghost(u, n + 1) * ghost(v, n - 1).conj()) * (b * kn);
        let s3 = (ghost(u, n - 1) * ghost(v, n - 2)) * (c * (kn * half));
        *o = mul_i(s1 + s2 - s3);
    }
}

/// `B(u, v)` of the GOY model with the fixed `1/4, 1/2, 1/8` coefficients.
pub fn apply_b<T: Real>(
    u: &ShellState<T>,
    v: &ShellState<T>,
    params: &ModelParams<T>,
) -> Result<ShellState<T>> {
    if params.variant() != Variant::Goy {
        return Err(Error::VariantMismatch { expected: "GOY" });
    }
    u.check_len(params.num_shells())?;
    v.check_len(params.num_shells())?;
    let k = params.wavenumbers();
    let mut out = ShellState::zeros(u.len());
    b_goy_into(u.as_slice(), v.as_slice(), &k, out.as_mut_slice());
    Ok(out)
}

/// GOY nonlinear term with the model's `(a, b, c)`.
pub fn apply_b_general<T: Real>(
    u: &ShellState<T>,
    params: &ModelParams<T>,
) -> Result<ShellState<T>> {
    u.check_len(params.num_shells())?;
    let (a, b, c) = params.coefficients();
    if a + b + c != T::zero() {
        return Err(Error::ConservationViolated {
            sum: (a + b + c).to_f64_lossy(),
        });
    }
    let k = params.wavenumbers();
    let mut out = ShellState::zeros(u.len());
    b_general_into(
        u.as_slice(),
        u.as_slice(),
        &k,
        params.coefficients(),
        out.as_mut_slice(),
    );
    Ok(out)
}

/// Sabra nonlinearity (bilinear extension); `B(u, u)` is the model term.
pub fn apply_b_sabra<T: Real>(
    u: &ShellState<T>,
    v: &ShellState<T>,
    params: &ModelParams<T>,
) -> Result<ShellState<T>> {
    if params.variant() != Variant::Sabra {
        return Err(Error::VariantMismatch { expected: "SABRA" });
    }
    u.check_len(params.num_shells())?;
    v.check_len(params.num_shells())?;
    let k = params.wavenumbers();
    let mut out = ShellState::zeros(u.len());
    b_sabra_into(
        u.as_slice(),
        v.as_slice(),
        &k,
        params.coefficients(),
        out.as_mut_slice(),
    );
    Ok(out)
}

/// Bilinear form whose diagonal is the model's nonlinear term, dispatched on
/// the variant (GOY with general coefficients, or Sabra).
pub(crate) fn model_bilinear_into<T: Real>(
    u: &[Complex<T>],
    v: &[Complex<T>],
    k: &[T],
    params: &ModelParams<T>,
    out: &mut [Complex<T>],
) {
    match params.variant() {
        Variant::Goy => b_general_into(u, v, k, params.coefficients(), out),
        Variant::Sabra => b_sabra_into(u, v, k, params.coefficients(), out),
    }
}

/// Bilinear form used by the operator-constant study: the fixed-coefficient
/// GOY operator for GOY models, the Sabra form otherwise.
fn study_bilinear_into<T: Real>(
    u: &[Complex<T>],
    v: &[Complex<T>],
    k: &[T],
    params: &ModelParams<T>,
    out: &mut [Complex<T>],
) {
    match params.variant() {
        Variant::Goy => b_goy_into(u, v, k, out),
        Variant::Sabra => b_sabra_into(u, v, k, params.coefficients(), out),
    }
}

/// Model nonlinear term `B(u, u)`.
pub fn nonlinear_term<T: Real>(
    u: &ShellState<T>,
    params: &ModelParams<T>,
) -> Result<ShellState<T>> {
    u.check_len(params.num_shells())?;
    let k = params.wavenumbers();
    let mut out = ShellState::zeros(u.len());
    model_bilinear_into(u.as_slice(), u.as_slice(), &k, params, out.as_mut_slice());
    Ok(out)
}

/// `F(u) = -nu A u - B(u, u)`.
pub fn drift_f<T: Real>(u: &ShellState<T>, params: &ModelParams<T>) -> Result<ShellState<T>> {
    u.check_len(params.num_shells())?;
    let k = params.wavenumbers();
    let mut out = ShellState::zeros(u.len());
    drift_into(u.as_slice(), &k, params, out.as_mut_slice());
    Ok(out)
}

fn drift_into<T: Real>(u: &[Complex<T>], k: &[T], params: &ModelParams<T>, out: &mut [Complex<T>]) {
    model_bilinear_into(u, u, k, params, out);
    let nu = params.nu();
    for ((o, z), &kn) in out.iter_mut().zip(u).zip(k) {
        *o = -(z * (nu * kn * kn)) - *o;
    }
}

/// Dense real matrix of a real-linear map on `C^N`, in coordinates
/// `(re_1, im_1, re_2, im_2, ...)`.
#[derive(Debug, Clone)]
pub struct RealJacobian<T> {
    dim: usize,
    // column-major, dim x dim with dim = 2N
    cols: Vec<T>,
}

impl<T: Real> RealJacobian<T> {
    /// Assembles the matrix by applying `map` to the real basis `e_m`, `i e_m`.
    pub fn assemble<F>(n: usize, mut map: F) -> Self
    where
        F: FnMut(&[Complex<T>], &mut [Complex<T>]),
    {
        let dim = 2 * n;
        let mut cols = vec![T::zero(); dim * dim];
        let mut basis = vec![Complex::new(T::zero(), T::zero()); n];
        let mut image = vec![Complex::new(T::zero(), T::zero()); n];
        for m in 0..n {
            for (part, unit) in [
                Complex::new(T::one(), T::zero()),
                Complex::new(T::zero(), T::one()),
            ]
            .into_iter()
            .enumerate()
            {
                basis[m] = unit;
                map(&basis, &mut image);
                let col = 2 * m + part;
                for (i, z) in image.iter().enumerate() {
                    cols[col * dim + 2 * i] = z.re;
                    cols[col * dim + 2 * i + 1] = z.im;
                }
                basis[m] = Complex::new(T::zero(), T::zero());
            }
        }
        Self { dim, cols }
    }

    pub fn apply(&self, w: &[Complex<T>], out: &mut [Complex<T>]) {
        let dim = self.dim;
        for z in out.iter_mut() {
            *z = Complex::new(T::zero(), T::zero());
        }
        for (m, wm) in w.iter().enumerate() {
            for (part, coef) in [wm.re, wm.im].into_iter().enumerate() {
                if coef == T::zero() {
                    continue;
                }
                let col = &self.cols[(2 * m + part) * dim..(2 * m + part + 1) * dim];
                for (i, o) in out.iter_mut().enumerate() {
                    o.re += col[2 * i] * coef;
                    o.im += col[2 * i + 1] * coef;
                }
            }
        }
    }

    /// Transpose with respect to the real inner product `Re sum a conj b`.
    pub fn apply_transpose(&self, p: &[Complex<T>], out: &mut [Complex<T>]) {
        let dim = self.dim;
        for (m, o) in out.iter_mut().enumerate() {
            let mut re = T::zero();
            let mut im = T::zero();
            let c_re = &self.cols[(2 * m) * dim..(2 * m + 1) * dim];
            let c_im = &self.cols[(2 * m + 1) * dim..(2 * m + 2) * dim];
            for (i, pi) in p.iter().enumerate() {
                re += c_re[2 * i] * pi.re + c_re[2 * i + 1] * pi.im;
                im += c_im[2 * i] * pi.re + c_im[2 * i + 1] * pi.im;
            }
            *o = Complex::new(re, im);
        }
    }
}

/// Real Jacobian of the model nonlinearity at `u`:
/// `w -> B(u, w) + B(w, u)`.
pub fn nonlinear_jacobian<T: Real>(
    u: &[Complex<T>],
    k: &[T],
    params: &ModelParams<T>,
) -> RealJacobian<T> {
    let n = u.len();
    let mut tmp = vec![Complex::new(T::zero(), T::zero()); n];
    RealJacobian::assemble(n, |w, out| {
        model_bilinear_into(u, w, k, params, out);
        model_bilinear_into(w, u, k, params, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorConstantsReport<T> {
    pub num_shells: usize,
    /// `sup |B(u,v)| / (||u|| |v|)`
    pub c1: T,
    /// `sup |B(u,v)| / (|u| ||v||)`
    pub c2: T,
    /// `sup ||B(u,v)||_{V'} / (|u| |v|)`
    pub c3: T,
    /// `sup ||B(u,v)||_V / (|u| |Av|)`
    pub c4: T,
    /// Smallest relative slack of the local monotonicity inequality,
    /// `1 - lhs / rhs` with `rhs = nu/2 ||w||^2 + r^4/nu^3 |w|^2`; it is
    /// nonnegative exactly when no sample violates the inequality.
    pub monotonicity_margin: T,
    pub monotonicity_violations: usize,
    pub samples: usize,
    pub rng_seed: u64,
}

/// Empirical suprema of the operator-bound ratios and the worst slack of the
/// local monotonicity inequality with `r = ||v||_{l^4}`.
pub fn estimate_operator_constants<T: Real>(
    params: &ModelParams<T>,
    samples: usize,
    seed: u64,
) -> Result<OperatorConstantsReport<T>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let nu = params.nu();
    if !(nu > T::zero()) {
        return Err(Error::InvalidArgument(
            "constant estimation needs nu > 0".into(),
        ));
    }
    let k = params.wavenumbers();
    let n = k.len();
    let mut rng = auxiliary_stream(seed);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut fu = vec![Complex::new(T::zero(), T::zero()); n];
    let mut fv = vec![Complex::new(T::zero(), T::zero()); n];
    let (mut c1, mut c2, mut c3, mut c4) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut margin = T::infinity();
    let mut violations = 0;
    let tiny = T::min_positive_value();
    for i in 0..samples {
        let u = random_state(&k, family_for(i), &mut rng);
        let v = random_state(&k, family_for(i + 1), &mut rng);
        let (us, vs) = (u.as_slice(), v.as_slice());
        study_bilinear_into(us, vs, &k, params, &mut buf);

        let b_h = h_norm_sq(&buf).sqrt();
        let b_v = v_norm_sq(&buf, &k).sqrt();
        let b_vdual = buf
            .iter()
            .zip(&k)
            .map(|(z, &kn)| z.norm_sqr() / (kn * kn))
            .sum::<T>()
            .sqrt();
        let u_h = h_norm_sq(us).sqrt();
        let v_h = h_norm_sq(vs).sqrt();
        let u_v = v_norm_sq(us, &k).sqrt();
        let v_v = v_norm_sq(vs, &k).sqrt();
        let av = vs
            .iter()
            .zip(&k)
            .map(|(z, &kn)| z.norm_sqr() * kn.powi(4))
            .sum::<T>()
            .sqrt();
        let ratio = |num: T, den: T| if den > tiny { num / den } else { T::zero() };
        c1 = c1.max(ratio(b_h, u_v * v_h));
        c2 = c2.max(ratio(b_h, u_h * v_v));
        c3 = c3.max(ratio(b_vdual, u_h * v_h));
        c4 = c4.max(ratio(b_v, u_h * av));

        // Local monotonicity with r = ||v||_{l^4}.
        drift_into(us, &k, params, &mut fu);
        drift_into(vs, &k, params, &mut fv);
        let w: Vec<Complex<T>> = us.iter().zip(vs).map(|(a, b)| a - b).collect();
        let df: Vec<Complex<T>> = fu.iter().zip(&fv).map(|(a, b)| a - b).collect();
        let lhs = dot(&df, &w);
        let r4: T = vs.iter().map(|z| z.norm_sqr() * z.norm_sqr()).sum();
        let rhs = -(nu * T::lit(0.5) * v_norm_sq(&w, &k)) + r4 / nu.powi(3) * h_norm_sq(&w);
        // lhs <= rhs  <=>  -lhs + rhs >= 0; normalise by the rhs bound scale.
        let scale = nu * T::lit(0.5) * v_norm_sq(&w, &k) + r4 / nu.powi(3) * h_norm_sq(&w);
        if scale > tiny {
            let slack = (rhs - lhs) / scale;
            if slack < T::zero() {
                violations += 1;
            }
            margin = margin.min(slack);
        }
    }
    Ok(OperatorConstantsReport {
        num_shells: n,
        c1,
        c2,
        c3,
        c4,
        monotonicity_margin: margin,
        monotonicity_violations: violations,
        samples,
        rng_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::member_stream;
    use crate::sampling::StateFamily;
    use crate::shell_space::inner_h;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn std_params(n: usize) -> ModelParams<f64> {
        ModelParams::goy_standard(n, 1.0, 1.0).unwrap()
    }

    #[test]
    fn a_is_diagonal() {
        let p = std_params(4);
        let e3 = ShellState::basis(4, 3);
        assert_eq!(apply_a(&e3, &p), e3.scale(64.0));
        assert_eq!(apply_a(&ShellState::zeros(4), &p), ShellState::zeros(4));
    }

    #[test]
    fn a_is_self_adjoint() {
        let p = std_params(8);
        let k = p.wavenumbers();
        let mut rng = member_stream(1, 0);
        for i in 0..50 {
            let u = random_state(&k, family_for(i), &mut rng);
            let v = random_state(&k, family_for(i + 1), &mut rng);
            let l = inner_h(&apply_a(&u, &p), &v).unwrap();
            let r = inner_h(&u, &apply_a(&v, &p)).unwrap();
            assert!((l - r).abs() <= 1e-13 * l.abs().max(1.0));
        }
    }

    #[test]
    fn b_hand_expansions() {
        let p = std_params(4);
        let b = apply_b(&ShellState::basis(4, 2), &ShellState::basis(4, 3), &p).unwrap();
        assert_eq!(
            b.as_slice(),
            &[c(0.0, -1.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]
        );
        let e1 = ShellState::basis(4, 1);
        assert_eq!(apply_b(&e1, &e1, &p).unwrap(), ShellState::zeros(4));

        let p = std_params(5);
        let u = ShellState::from_real(&[1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = apply_b(&u, &u, &p).unwrap();
        assert_eq!(
            b.as_slice(),
            &[
                c(0.0, -2.0),
                c(0.0, 1.0),
                c(0.0, 1.0),
                c(0.0, 2.0),
                c(0.0, 0.0)
            ]
        );
        assert_eq!(inner_h(&b, &u).unwrap(), 0.0);
    }

    #[test]
    fn b_rejects_mismatch() {
        let p = std_params(4);
        assert!(apply_b(&ShellState::basis(4, 1), &ShellState::basis(3, 1), &p).is_err());
        let s = ModelParams::sabra_standard(4, 1.0, 1.0).unwrap();
        assert!(matches!(
            apply_b(&ShellState::basis(4, 1), &ShellState::basis(4, 1), &s),
            Err(Error::VariantMismatch { .. })
        ));
        assert!(apply_b_sabra(&ShellState::basis(4, 1), &ShellState::basis(4, 1), &p).is_err());
    }

    #[test]
    fn general_matches_verbatim_at_standard_coefficients() {
        let p = std_params(8);
        let k = p.wavenumbers();
        let mut rng = member_stream(2, 0);
        for i in 0..200 {
            let u = random_state(&k, family_for(i), &mut rng);
            let g = apply_b_general(&u, &p).unwrap();
            let b = apply_b(&u, &u, &p).unwrap();
            for (x, y) in g.iter().zip(b.iter()) {
                assert!((x - y).norm() <= 1e-15 * y.norm());
            }
        }
    }

    #[test]
    fn zero_coefficients_vanish() {
        let p = ModelParams::linear(6, 1.0, 1.0).unwrap();
        let k = p.wavenumbers();
        let mut rng = member_stream(3, 0);
        let u = random_state(&k, StateFamily::Kolmogorov, &mut rng);
        assert_eq!(apply_b_general(&u, &p).unwrap(), ShellState::zeros(6));
        let s = ModelParams::new(6, 1.0, 1.0, 0.0, 0.0, 0.0, Variant::Sabra).unwrap();
        assert_eq!(apply_b_sabra(&u, &u, &s).unwrap(), ShellState::zeros(6));
    }

    #[test]
    fn sabra_single_mode_is_zero() {
        let s = ModelParams::sabra_standard(5, 1.0, 1.0).unwrap();
        let e1 = ShellState::basis(5, 1);
        assert_eq!(apply_b_sabra(&e1, &e1, &s).unwrap(), ShellState::zeros(5));
    }

    #[test]
    fn drift_examples() {
        let p = std_params(4);
        assert_eq!(
            drift_f(&ShellState::basis(4, 2), &p).unwrap(),
            ShellState::basis(4, 2).scale(-16.0)
        );
        assert_eq!(
            drift_f(&ShellState::zeros(4), &p).unwrap(),
            ShellState::zeros(4)
        );
    }

    #[test]
    fn jacobian_matches_directional_derivative() {
        for params in [
            std_params(6),
            ModelParams::sabra_standard(6, 1.0, 1.0).unwrap(),
        ] {
            let k = params.wavenumbers();
            let mut rng = member_stream(9, 0);
            let u = random_state(&k, StateFamily::Kolmogorov, &mut rng);
            let w = random_state(&k, StateFamily::UniformMagnitude, &mut rng);
            let jac = nonlinear_jacobian(u.as_slice(), &k, &params);
            let mut jw = vec![c(0.0, 0.0); 6];
            jac.apply(w.as_slice(), &mut jw);
            // B is quadratic: B(u + h w) - B(u - h w) = 2 h DB(u) w exactly.
            let h = 1e-3;
            let mut up = u.clone();
            up.axpy(h, &w);
            let mut um = u.clone();
            um.axpy(-h, &w);
            let bp = nonlinear_term(&up, &params).unwrap();
            let bm = nonlinear_term(&um, &params).unwrap();
            for (i, z) in jw.iter().enumerate() {
                let fd = (bp[i] - bm[i]) / (2.0 * h);
                assert!((fd - z).norm() <= 1e-9 * (1.0 + z.norm()));
            }
            // Transpose identity (Jw, p) = (w, J^T p).
            let pvec = random_state(&k, StateFamily::Kolmogorov, &mut rng);
            let mut jtp = vec![c(0.0, 0.0); 6];
            jac.apply_transpose(pvec.as_slice(), &mut jtp);
            let l = dot(&jw, pvec.as_slice());
            let r = dot(w.as_slice(), &jtp);
            assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn constants_report_is_deterministic() {
        let p = std_params(8);
        assert!(estimate_operator_constants(&p, 0, 1).is_err());
        let a = estimate_operator_constants(&p, 500, 11).unwrap();
        let b = estimate_operator_constants(&p, 500, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.c1.is_finite() && a.c2.is_finite() && a.c3.is_finite() && a.c4.is_finite());
        assert!(a.monotonicity_margin >= 0.0);
    }

    fn arb_state(n: usize) -> impl Strategy<Value = ShellState<f64>> {
        prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), n).prop_map(|v| {
            ShellState::from_vec(v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn b_is_real_bilinear(u in arb_state(7), u2 in arb_state(7), v in arb_state(7),
                              ar in -2.0..2.0f64, ai in -2.0..2.0f64) {
            let p = std_params(7);
            let alpha = c(ar, ai);
            let lhs = apply_b(&(&u + &u2), &v, &p).unwrap();
            let rhs = &apply_b(&u, &v, &p).unwrap() + &apply_b(&u2, &v, &p).unwrap();
            let scaled = apply_b(&u.scale_complex(alpha), &v, &p).unwrap();
            let conj_scaled = apply_b(&u, &v, &p).unwrap().scale_complex(alpha.conj());
            let scaled_v = apply_b(&u, &v.scale_complex(alpha), &p).unwrap();
            for i in 0..7 {
                prop_assert!((lhs[i] - rhs[i]).norm() <= 1e-12 * (1.0 + rhs[i].norm()));
                prop_assert!((scaled[i] - conj_scaled[i]).norm() <= 1e-12 * (1.0 + conj_scaled[i].norm()));
                prop_assert!((scaled_v[i] - conj_scaled[i]).norm() <= 1e-12 * (1.0 + conj_scaled[i].norm()));
            }
        }

        #[test]
        fn general_and_sabra_conserve_energy(u in arb_state(9), a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let c_ = -(a + b);
            let g = ModelParams::new(9, 1.0, 1.0, a, b, c_, Variant::Goy).unwrap();
            let s = ModelParams::new(9, 1.0, 1.0, a, b, c_, Variant::Sabra).unwrap();
            let scale = 1e-12 * 512.0 * 27.0 * (1.0 + a.abs() + b.abs()) * h_norm_sq(u.as_slice()).powf(1.5);
            prop_assert!(inner_h(&apply_b_general(&u, &g).unwrap(), &u).unwrap().abs() <= scale);
            prop_assert!(inner_h(&apply_b_sabra(&u, &u, &s).unwrap(), &u).unwrap().abs() <= scale);
        }

        #[test]
        fn drift_energy_identity(u in arb_state(8), nu in 0.1..3.0f64) {
            let p = ModelParams::goy_standard(8, 1.0, nu).unwrap();
            let k = p.wavenumbers();
            let f = drift_f(&u, &p).unwrap();
            let lhs = inner_h(&f, &u).unwrap();
            let rhs = -nu * v_norm_sq(u.as_slice(), &k);
            prop_assert!((lhs - rhs).abs() <= 1e-11 * rhs.abs().max(1.0));
        }
    }
}
