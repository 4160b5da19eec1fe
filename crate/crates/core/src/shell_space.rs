//! Galerkin-truncated shell space: model parameters, states, norms.
//!
//! Shell indices are 1-based. Positions `n < 1` and `n > N` read as zero, so
//! the boundary condition `u_{-1} = u_0 = 0` and the truncation ghosts are
//! never stored.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Goy,
    Sabra,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams<T> {
    num_shells: usize,
    k0: T,
    nu: T,
    a: T,
    b: T,
    c: T,
    variant: Variant,
}

impl<T: Real> ModelParams<T> {
    /// Validates `N >= 1`, `k0 > 0`, `nu >= 0` and `a + b + c == 0` exactly.
    pub fn new(
        num_shells: usize,
        k0: T,
        nu: T,
        a: T,
        b: T,
        c: T,
        variant: Variant,
    ) -> Result<Self> {
        if num_shells == 0 {
            return Err(Error::InvalidParams("num_shells must be at least 1".into()));
        }
        if !(k0 > T::zero()) || !k0.is_finite() {
            return Err(Error::InvalidParams(format!(
                "k0 must be positive, got {k0}"
            )));
        }
        if !(nu >= T::zero()) || !nu.is_finite() {
            return Err(Error::InvalidParams(format!(
                "nu must be nonnegative, got {nu}"
            )));
        }
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::NonFinite("nonlinearity coefficients"));
        }
        let sum = a + b + c;
        if sum != T::zero() {
            return Err(Error::ConservationViolated {
                sum: sum.to_f64_lossy(),
            });
        }
        // 2^n must stay representable.
        if num_shells > 120 {
            return Err(Error::InvalidParams(format!(
                "num_shells = {num_shells} is too large"
            )));
        }
        Ok(Self {
            num_shells,
            k0,
            nu,
            a,
            b,
            c,
            variant,
        })
    }

    /// Standard GOY coefficients `(a, b, c) = (-1, 1/2, 1/2)`.
    pub fn goy_standard(num_shells: usize, k0: T, nu: T) -> Result<Self> {
        let half = T::lit(0.5);
        Self::new(num_shells, k0, nu, -T::one(), half, half, Variant::Goy)
    }

    pub fn sabra_standard(num_shells: usize, k0: T, nu: T) -> Result<Self> {
        let half = T::lit(0.5);
        Self::new(num_shells, k0, nu, -T::one(), half, half, Variant::Sabra)
    }

    /// Nonlinearity switched off; the model reduces to decoupled linear modes.
    pub fn linear(num_shells: usize, k0: T, nu: T) -> Result<Self> {
        Self::new(
            num_shells,
            k0,
            nu,
            T::zero(),
            T::zero(),
            T::zero(),
            Variant::Goy,
        )
    }

    pub fn num_shells(&self) -> usize {
        self.num_shells
    }
    pub fn k0(&self) -> T {
        self.k0
    }
    pub fn nu(&self) -> T {
        self.nu
    }
    pub fn coefficients(&self) -> (T, T, T) {
        (self.a, self.b, self.c)
    }
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn with_nu(&self, nu: T) -> Result<Self> {
        Self::new(
            self.num_shells,
            self.k0,
            nu,
            self.a,
            self.b,
            self.c,
            self.variant,
        )
    }

    /// `k_n = k0 * 2^n` for `n = 1..=N`.
    pub fn wavenumbers(&self) -> Vec<T> {
        wavenumbers(self)
    }

    /// `k_n` for any integer `n` (including ghosts); `k_n = k0 * 2^n`.
    #[inline]
    pub fn wavenumber(&self, n: i32) -> T {
        self.k0 * T::lit(2.0).powi(n)
    }
}

/// `k_n = k0 * 2^n`, `n = 1..=N`, strictly increasing.
pub fn wavenumbers<T: Real>(params: &ModelParams<T>) -> Vec<T> {
    (1..=params.num_shells as i32)
        .map(|n| params.wavenumber(n))
        .collect()
}

/// Truncated state `u_1..u_N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShellState<T> {
    u: Vec<Complex<T>>,
}

impl<T: Real> ShellState<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![Complex::new(T::zero(), T::zero()); n],
        }
    }

    /// Unit vector `e_m` (1-based).
    pub fn basis(n: usize, m: usize) -> Self {
        assert!(m >= 1 && m <= n, "basis index {m} outside 1..={n}");
        let mut s = Self::zeros(n);
        s.u[m - 1] = Complex::new(T::one(), T::zero());
        s
    }

    /// Rejects non-finite entries.
    pub fn from_vec(u: Vec<Complex<T>>) -> Result<Self> {
        if u.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("shell state"));
        }
        Ok(Self { u })
    }

    pub fn from_real(values: &[T]) -> Result<Self> {
        Self::from_vec(values.iter().map(|&x| Complex::new(x, T::zero())).collect())
    }

    pub(crate) fn from_vec_unchecked(u: Vec<Complex<T>>) -> Self {
        Self { u }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.u
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.u
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.u
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Complex<T>> {
        self.u.iter()
    }

    /// 1-based access with ghost zeros outside `1..=N`.
    #[inline]
    pub fn shell(&self, n: isize) -> Complex<T> {
        ghost(&self.u, n)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            u: self.u.iter().map(|z| z * alpha).collect(),
        }
    }

    pub fn scale_complex(&self, alpha: Complex<T>) -> Self {
        Self {
            u: self.u.iter().map(|z| z * alpha).collect(),
        }
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: T, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (y, xi) in self.u.iter_mut().zip(&x.u) {
            *y += xi * alpha;
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            u: self.u.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Elementwise product with a real diagonal.
    pub fn mul_diag(&self, d: &[T]) -> Self {
        Self {
            u: self.u.iter().zip(d).map(|(z, &w)| z * w).collect(),
        }
    }

    /// Zeroes imaginary parts.
    pub fn real_part(&self) -> Self {
        Self {
            u: self
                .u
                .iter()
                .map(|z| Complex::new(z.re, T::zero()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.u.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.len(),
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn ghost<T: Real>(u: &[Complex<T>], n: isize) -> Complex<T> {
    if n >= 1 && (n as usize) <= u.len() {
        u[n as usize - 1]
    } else {
        Complex::new(T::zero(), T::zero())
    }
}

impl<T> Index<usize> for ShellState<T> {
    type Output = Complex<T>;
    /// 0-based storage index (`state[0]` is `u_1`).
    fn index(&self, i: usize) -> &Complex<T> {
        &self.u[i]
    }
}

impl<T> IndexMut<usize> for ShellState<T> {
    fn index_mut(&mut self, i: usize) -> &mut Complex<T> {
        &mut self.u[i]
    }
}

impl<T: Real> Add for &ShellState<T> {
    type Output = ShellState<T>;
    fn add(self, rhs: &ShellState<T>) -> ShellState<T> {
        debug_assert_eq!(self.len(), rhs.len());
        ShellState {
            u: self.u.iter().zip(&rhs.u).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &ShellState<T> {
    type Output = ShellState<T>;
    fn sub(self, rhs: &ShellState<T>) -> ShellState<T> {
        debug_assert_eq!(self.len(), rhs.len());
        ShellState {
            u: self.u.iter().zip(&rhs.u).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<T: Real> AddAssign<&ShellState<T>> for ShellState<T> {
    fn add_assign(&mut self, rhs: &ShellState<T>) {
        for (a, b) in self.u.iter_mut().zip(&rhs.u) {
            *a += b;
        }
    }
}

impl<T: Real> SubAssign<&ShellState<T>> for ShellState<T> {
    fn sub_assign(&mut self, rhs: &ShellState<T>) {
        for (a, b) in self.u.iter_mut().zip(&rhs.u) {
            *a -= b;
        }
    }
}

impl<T: Real> Neg for &ShellState<T> {
    type Output = ShellState<T>;
    fn neg(self) -> ShellState<T> {
        ShellState {
            u: self.u.iter().map(|z| -z).collect(),
        }
    }
}

impl<T: Real> Mul<T> for &ShellState<T> {
    type Output = ShellState<T>;
    fn mul(self, rhs: T) -> ShellState<T> {
        self.scale(rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NormKind<T> {
    /// `(sum |u_n|^2)^(1/2)`
    H,
    /// `(sum k_n^2 |u_n|^2)^(1/2)`
    V,
    /// `(sum k_n^4 |u_n|^2)^(1/2)` = `|Au|`
    DA,
    /// `(sum |u_n|^4)^(1/4)`
    L4,
    /// `||A^{s/2} u||_p`; `p = inf` gives the supremum.
    W { s: T, p: T },
}

/// Norm of `u` of the requested kind. `V` is routed through `W(1, 2)`, so the
/// two agree bit for bit.
pub fn norm<T: Real>(u: &ShellState<T>, kind: NormKind<T>, params: &ModelParams<T>) -> Result<T> {
    if !u.is_finite() {
        return Err(Error::NonFinite("norm input"));
    }
    u.check_len(params.num_shells())?;
    let k = params.wavenumbers();
    let two = T::lit(2.0);
    Ok(match kind {
        NormKind::H => weighted_sq_sum(u.as_slice(), &k, T::zero()).sqrt(),
        NormKind::V => sobolev(u.as_slice(), &k, T::one(), two),
        NormKind::DA => weighted_sq_sum(u.as_slice(), &k, two).sqrt(),
        NormKind::L4 => {
            let mut acc = CompensatedSum::new();
            for z in u.iter() {
                let m = z.norm_sqr();
                acc.add(m * m);
            }
            acc.value().sqrt().sqrt()
        }
        NormKind::W { s, p } => {
            if !(p >= T::one()) {
                return Err(Error::InvalidNorm(format!(
                    "W(s, p) requires p >= 1, got {p}"
                )));
            }
            if !s.is_finite() {
                return Err(Error::InvalidNorm("W(s, p) requires finite s".into()));
            }
            sobolev(u.as_slice(), &k, s, p)
        }
    })
}

/// `sum_n k_n^(2s) |u_n|^2` in ascending shell order, compensated.
pub(crate) fn weighted_sq_sum<T: Real>(u: &[Complex<T>], k: &[T], s: T) -> T {
    let mut acc = CompensatedSum::new();
    for (z, &kn) in u.iter().zip(k) {
        let w = if s == T::zero() {
            T::one()
        } else {
            kn.powf(s + s)
        };
        acc.add(w * z.norm_sqr());
    }
    acc.value()
}

fn sobolev<T: Real>(u: &[Complex<T>], k: &[T], s: T, p: T) -> T {
    if p.is_infinite() {
        return u
            .iter()
            .zip(k)
            .fold(T::zero(), |m, (z, &kn)| m.max(kn.powf(s) * z.norm()));
    }
    if p == T::lit(2.0) {
        return weighted_sq_sum(u, k, s).sqrt();
    }
    let mut acc = CompensatedSum::new();
    for (z, &kn) in u.iter().zip(k) {
        acc.add((kn.powf(s) * z.norm()).powf(p));
    }
    acc.value().powf(p.recip())
}

/// `(u, v)_H = Re sum u_n conj(v_n)`.
pub fn inner_h<T: Real>(u: &ShellState<T>, v: &ShellState<T>) -> Result<T> {
    v.check_len(u.len())?;
    Ok(dot(u.as_slice(), v.as_slice()))
}

#[inline]
pub(crate) fn dot<T: Real>(u: &[Complex<T>], v: &[Complex<T>]) -> T {
    let mut acc = CompensatedSum::new();
    for (a, b) in u.iter().zip(v) {
        // Re(a conj b) = a.re b.re + a.im b.im
        acc.add(a.re * b.re + a.im * b.im);
    }
    acc.value()
}

/// Fast internal norms without validation.
#[inline]
pub(crate) fn h_norm_sq<T: Real>(u: &[Complex<T>]) -> T {
    let mut acc = CompensatedSum::new();
    for z in u {
        acc.add(z.norm_sqr());
    }
    acc.value()
}

#[inline]
pub(crate) fn v_norm_sq<T: Real>(u: &[Complex<T>], k: &[T]) -> T {
    let mut acc = CompensatedSum::new();
    for (z, &kn) in u.iter().zip(k) {
        acc.add(kn * kn * z.norm_sqr());
    }
    acc.value()
}

/// `P_m u`: keeps shells `1..=m`, zeroes the rest.
pub fn project<T: Real>(u: &ShellState<T>, m: usize) -> Result<ShellState<T>> {
    if m > u.len() {
        return Err(Error::CutoffTooLarge { m, n: u.len() });
    }
    let mut out = u.clone();
    for z in out.as_mut_slice()[m..].iter_mut() {
        *z = Complex::new(T::zero(), T::zero());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn wavenumber_ladder() {
        let p = ModelParams::goy_standard(4, 1.0, 1.0).unwrap();
        assert_eq!(wavenumbers(&p), vec![2.0, 4.0, 8.0, 16.0]);
        let p = ModelParams::goy_standard(1, 0.5, 1.0).unwrap();
        assert_eq!(wavenumbers(&p), vec![1.0]);
        let p = ModelParams::goy_standard(3, 2.0, 1.0).unwrap();
        assert_eq!(wavenumbers(&p), vec![4.0, 8.0, 16.0]);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            ModelParams::new(4, 1.0, 1.0, 1.0, 1.0, 1.0, Variant::Goy),
            Err(Error::ConservationViolated { .. })
        ));
        assert!(ModelParams::goy_standard(0, 1.0, 1.0).is_err());
        assert!(ModelParams::goy_standard(3, 0.0, 1.0).is_err());
        assert!(ModelParams::goy_standard(3, 1.0, -1.0).is_err());
        assert!(ModelParams::goy_standard(3, 1.0, 0.0).is_ok());
    }

    #[test]
    fn norms_of_simple_states() {
        let p = ModelParams::goy_standard(4, 1.0, 1.0).unwrap();
        let e1 = ShellState::basis(4, 1);
        assert_eq!(norm(&e1, NormKind::H, &p).unwrap(), 1.0);
        assert_eq!(norm(&e1, NormKind::V, &p).unwrap(), 2.0);
        let z = ShellState::<f64>::zeros(4);
        for kind in [
            NormKind::H,
            NormKind::V,
            NormKind::DA,
            NormKind::L4,
            NormKind::W { s: 0.5, p: 3.0 },
            NormKind::W {
                s: 1.0,
                p: f64::INFINITY,
            },
        ] {
            assert_eq!(norm(&z, kind, &p).unwrap(), 0.0);
        }
        let u = ShellState::from_real(&[1.0, 1.0, 1.0, 0.0]).unwrap();
        let vn = norm(&u, NormKind::V, &p).unwrap();
        assert!((vn - 84f64.sqrt()).abs() < 1e-14);
        assert!((vn - 9.16515).abs() < 1e-5);
    }

    #[test]
    fn norm_rejects_bad_input() {
        let p = ModelParams::goy_standard(2, 1.0, 1.0).unwrap();
        let u = ShellState::from_vec_unchecked(vec![c(f64::NAN, 0.0), c(0.0, 0.0)]);
        assert!(norm(&u, NormKind::H, &p).is_err());
        let u = ShellState::basis(2, 1);
        assert!(norm(&u, NormKind::W { s: 1.0, p: 0.5 }, &p).is_err());
        assert!(ShellState::from_vec(vec![c(f64::INFINITY, 0.0)]).is_err());
    }

    #[test]
    fn inner_products() {
        let e1 = ShellState::basis(3, 1);
        let ie1 = e1.scale_complex(c(0.0, 1.0));
        assert_eq!(inner_h(&e1, &ie1).unwrap(), 0.0);
        let e2 = ShellState::<f64>::basis(3, 2);
        assert_eq!(inner_h(&e2, &e2).unwrap(), 1.0);
        let u = e1.scale_complex(c(1.0, 1.0));
        let v = e1.scale_complex(c(1.0, -1.0));
        assert_eq!(inner_h(&u, &v).unwrap(), 0.0);
        assert!(inner_h(&e1, &ShellState::basis(2, 1)).is_err());
    }

    #[test]
    fn projection() {
        let e3 = ShellState::<f64>::basis(4, 3);
        assert_eq!(project(&e3, 2).unwrap(), ShellState::zeros(4));
        let u = ShellState::from_vec(vec![c(1.0, 2.0), c(3.0, -1.0), c(0.5, 0.5), c(-2.0, 0.0)])
            .unwrap();
        assert_eq!(project(&u, 4).unwrap(), u);
        let p3 = project(&u, 3).unwrap();
        assert_eq!(project(&p3, 3).unwrap(), p3);
        assert!(project(&u, 5).is_err());
    }

    #[test]
    fn ghost_shells_read_zero() {
        let u = ShellState::<f64>::from_real(&[1.0, 2.0]).unwrap();
        assert_eq!(u.shell(-1), c(0.0, 0.0));
        assert_eq!(u.shell(0), c(0.0, 0.0));
        assert_eq!(u.shell(1), c(1.0, 0.0));
        assert_eq!(u.shell(3), c(0.0, 0.0));
    }

    fn state_strategy(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), n)
    }

    proptest! {
        #[test]
        fn norm_monotonicity(n in 1usize..20, raw in state_strategy(20), k0 in 0.25..4.0f64) {
            let p = ModelParams::goy_standard(n, k0, 1.0).unwrap();
            let u = ShellState::from_vec(raw[..n].iter().map(|&(a, b)| c(a, b)).collect()).unwrap();
            let k1 = p.wavenumber(1);
            let h = norm(&u, NormKind::H, &p).unwrap();
            let v = norm(&u, NormKind::V, &p).unwrap();
            let da = norm(&u, NormKind::DA, &p).unwrap();
            prop_assert!(h <= v / k1 * (1.0 + 1e-14));
            prop_assert!(v / k1 <= da / (k1 * k1) * (1.0 + 1e-14));
        }

        #[test]
        fn w12_matches_v_bitwise(n in 1usize..20, raw in state_strategy(20)) {
            let p = ModelParams::goy_standard(n, 1.0, 1.0).unwrap();
            let u = ShellState::from_vec(raw[..n].iter().map(|&(a, b)| c(a, b)).collect()).unwrap();
            let v = norm(&u, NormKind::V, &p).unwrap();
            let w = norm(&u, NormKind::W { s: 1.0, p: 2.0 }, &p).unwrap();
            prop_assert_eq!(v.to_bits(), w.to_bits());
        }

        #[test]
        fn projection_contracts(n in 2usize..16, m in 1usize..16, raw in state_strategy(16)) {
            let m = m.min(n);
            let p = ModelParams::goy_standard(n, 1.0, 1.0).unwrap();
            let u = ShellState::from_vec(raw[..n].iter().map(|&(a, b)| c(a, b)).collect()).unwrap();
            let pu = project(&u, m).unwrap();
            for kind in [NormKind::H, NormKind::V, NormKind::DA, NormKind::L4,
                         NormKind::W { s: -0.5, p: 1.5 }, NormKind::W { s: 2.0, p: f64::INFINITY }] {
                prop_assert!(norm(&pu, kind, &p).unwrap() <= norm(&u, kind, &p).unwrap());
            }
        }
    }
}
