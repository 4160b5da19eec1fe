//! Diagonal trace-class covariance, noise coefficients, and Wiener increments.
//!
//! Two increment conventions are supported:
//! - [`WienerConvention::Complex`]: real and imaginary parts independent with
//!   variance `lambda_n dt / 2` each, so `E|dW_n|^2 = lambda_n dt`.
//! - [`WienerConvention::Real`]: one real Brownian motion per shell with
//!   variance `lambda_n dt`; controls live in the real subspace.
//!
//! The Gaussian density of the increment in the `(.,.)_0` geometry differs
//! by the factor [`WienerConvention::kappa`]: the exact Girsanov weight of a
//! shift `v` is `-kappa [ (v, dW)_0 / sqrt(eps) + |v|_0^2 dt / (2 eps) ]`, and
//! the large-deviation rate is `kappa` times the action `1/2 int |v|_0^2`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::auxiliary_stream;
use crate::sampling::{family_for, random_state};
use crate::scalar::{CompensatedSum, Real};
use crate::shell_space::{v_norm_sq, ModelParams, ShellState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum WienerConvention {
    #[default]
    Complex,
    Real,
}

impl WienerConvention {
    pub fn kappa<T: Real>(self) -> T {
        match self {
            WienerConvention::Complex => T::lit(2.0),
            WienerConvention::Real => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CovarianceGenerator<T> {
    /// `lambda_n = lambda0 * 2^(-gamma n)`
    Geometric {
        lambda0: T,
        gamma: T,
    },
    Explicit,
}

/// Diagonal covariance `Q e_n = lambda_n e_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceSpec<T> {
    lambda: Vec<T>,
    generator: CovarianceGenerator<T>,
    convention: WienerConvention,
}

impl<T: Real> CovarianceSpec<T> {
    pub fn geometric(num_shells: usize, lambda0: T, gamma: T) -> Result<Self> {
        if !(lambda0 > T::zero()) || !lambda0.is_finite() || !gamma.is_finite() {
            return Err(Error::InvalidCovariance(format!(
                "geometric generator needs lambda0 > 0 and finite gamma, got ({lambda0}, {gamma})"
            )));
        }
        let two = T::lit(2.0);
        let lambda = (1..=num_shells)
            .map(|n| lambda0 * two.powf(-gamma * T::from_usize_lossy(n)))
            .collect();
        let mut q = Self::explicit(lambda)?;
        q.generator = CovarianceGenerator::Geometric { lambda0, gamma };
        Ok(q)
    }

    /// Default covariance `lambda_n = 2^-n`.
    pub fn default_for(num_shells: usize) -> Self {
        Self::geometric(num_shells, T::one(), T::one()).expect("valid default covariance")
    }

    pub fn explicit(lambda: Vec<T>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidCovariance("empty eigenvalue list".into()));
        }
        if let Some((i, l)) = lambda
            .iter()
            .enumerate()
            .find(|(_, l)| !(**l > T::zero()) || !l.is_finite())
        {
            return Err(Error::InvalidCovariance(format!(
                "lambda_{} = {l} must be positive and finite",
                i + 1
            )));
        }
        Ok(Self {
            lambda,
            generator: CovarianceGenerator::Explicit,
            convention: WienerConvention::Complex,
        })
    }

    pub fn with_convention(mut self, convention: WienerConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.lambda
    }
    pub fn len(&self) -> usize {
        self.lambda.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
    pub fn generator(&self) -> &CovarianceGenerator<T> {
        &self.generator
    }
    pub fn convention(&self) -> WienerConvention {
        self.convention
    }
    pub fn kappa(&self) -> T {
        self.convention.kappa()
    }
    pub fn trace(&self) -> T {
        crate::scalar::compensated_sum(self.lambda.iter().copied())
    }

    /// `Q^{1/2} w`
    pub fn sqrt_apply(&self, w: &ShellState<T>) -> Result<ShellState<T>> {
        w.check_len(self.len())?;
        let d: Vec<T> = self.lambda.iter().map(|l| l.sqrt()).collect();
        Ok(w.mul_diag(&d))
    }

    /// `Q w`
    pub fn apply(&self, w: &ShellState<T>) -> Result<ShellState<T>> {
        w.check_len(self.len())?;
        Ok(w.mul_diag(&self.lambda))
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

/// Diagonal noise coefficient: `(sigma(u) w)_n = sigma_n(u_n) w_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum NoiseCoefficient<T> {
    /// `sigma_n(u) = s_n`
    Additive(Vec<Complex<T>>),
    /// `sigma_n(u) = c_n u_n`
    DiagonalMultiplicative(Vec<Complex<T>>),
}

impl<T: Real> NoiseCoefficient<T> {
    pub fn additive(s: Vec<Complex<T>>) -> Result<Self> {
        Self::check_finite(&s)?;
        Ok(Self::Additive(s))
    }

    pub fn multiplicative(c: Vec<Complex<T>>) -> Result<Self> {
        Self::check_finite(&c)?;
        Ok(Self::DiagonalMultiplicative(c))
    }

    /// Additive noise on shell `m` (1-based) only, unit amplitude.
    pub fn single_mode(num_shells: usize, m: usize) -> Self {
        Self::Additive(ShellState::<T>::basis(num_shells, m).into_vec())
    }

    pub fn zero(num_shells: usize) -> Self {
        Self::Additive(vec![Complex::new(T::zero(), T::zero()); num_shells])
    }

    fn check_finite(v: &[Complex<T>]) -> Result<()> {
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("noise coefficients"));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> &[Complex<T>] {
        match self {
            Self::Additive(s) | Self::DiagonalMultiplicative(s) => s,
        }
    }

    pub fn len(&self) -> usize {
        self.coefficients().len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients().is_empty()
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, Self::Additive(_))
    }

    /// Time independence flag; constant coefficients only.
    pub fn is_time_independent(&self) -> bool {
        true
    }

    #[inline]
    pub(crate) fn diag(&self, u: &[Complex<T>], n: usize) -> Complex<T> {
        match self {
            Self::Additive(s) => s[n],
            Self::DiagonalMultiplicative(c) => c[n] * u[n],
        }
    }

    /// `out = sigma(u) w`
    pub(crate) fn apply_into(&self, u: &[Complex<T>], w: &[Complex<T>], out: &mut [Complex<T>]) {
        for (n, o) in out.iter_mut().enumerate() {
            *o = self.diag(u, n) * w[n];
        }
    }

    /// `out = sigma(u)^* p` (adjoint for the real inner product).
    pub(crate) fn adjoint_into(&self, u: &[Complex<T>], p: &[Complex<T>], out: &mut [Complex<T>]) {
        for (n, o) in out.iter_mut().enumerate() {
            *o = self.diag(u, n).conj() * p[n];
        }
    }

    /// Adds `(D_u [sigma(u) v])^* p` to `out`; zero for additive noise.
    pub(crate) fn add_state_adjoint(
        &self,
        v: &[Complex<T>],
        p: &[Complex<T>],
        out: &mut [Complex<T>],
    ) {
        if let Self::DiagonalMultiplicative(c) = self {
            for n in 0..out.len() {
                out[n] += (c[n] * v[n]).conj() * p[n];
            }
        }
    }

    /// `sigma(u) w` as a state.
    pub fn apply(&self, u: &ShellState<T>, w: &ShellState<T>) -> Result<ShellState<T>> {
        u.check_len(self.len())?;
        w.check_len(self.len())?;
        let mut out = ShellState::zeros(self.len());
        self.apply_into(u.as_slice(), w.as_slice(), out.as_mut_slice());
        Ok(out)
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

/// `|v|_0 = (sum |v_n|^2 / lambda_n)^(1/2)`
pub fn h0_norm<T: Real>(v: &ShellState<T>, q: &CovarianceSpec<T>) -> Result<T> {
    v.check_len(q.len())?;
    Ok(h0_norm_sq(v.as_slice(), q.eigenvalues()).sqrt())
}

/// `(u, v)_0 = Re sum u_n conj(v_n) / lambda_n`
pub fn h0_inner<T: Real>(u: &ShellState<T>, v: &ShellState<T>, q: &CovarianceSpec<T>) -> Result<T> {
    u.check_len(q.len())?;
    v.check_len(q.len())?;
    Ok(h0_dot(u.as_slice(), v.as_slice(), q.eigenvalues()))
}

#[inline]
pub(crate) fn h0_norm_sq<T: Real>(v: &[Complex<T>], lambda: &[T]) -> T {
    let mut acc = CompensatedSum::new();
    for (z, &l) in v.iter().zip(lambda) {
        acc.add(z.norm_sqr() / l);
    }
    acc.value()
}

#[inline]
pub(crate) fn h0_dot<T: Real>(u: &[Complex<T>], v: &[Complex<T>], lambda: &[T]) -> T {
    let mut acc = CompensatedSum::new();
    for ((a, b), &l) in u.iter().zip(v).zip(lambda) {
        acc.add((a.re * b.re + a.im * b.im) / l);
    }
    acc.value()
}

/// `|sigma(u)|_{L_Q} = (sum lambda_n |sigma_n(u_n)|^2)^(1/2)`
pub fn lq_norm<T: Real>(
    sigma: &NoiseCoefficient<T>,
    u: &ShellState<T>,
    q: &CovarianceSpec<T>,
) -> Result<T> {
    u.check_len(q.len())?;
    sigma.check_len(q.len())?;
    Ok(lq_norm_sq(sigma, u.as_slice(), q.eigenvalues()).sqrt())
}

/// `|sigma(u) - sigma(v)|_{L_Q}`
pub fn lq_norm_diff<T: Real>(
    sigma: &NoiseCoefficient<T>,
    u: &ShellState<T>,
    v: &ShellState<T>,
    q: &CovarianceSpec<T>,
) -> Result<T> {
    u.check_len(q.len())?;
    v.check_len(q.len())?;
    sigma.check_len(q.len())?;
    let (us, vs) = (u.as_slice(), v.as_slice());
    let mut acc = CompensatedSum::new();
    for (n, &l) in q.eigenvalues().iter().enumerate() {
        acc.add(l * (sigma.diag(us, n) - sigma.diag(vs, n)).norm_sqr());
    }
    Ok(acc.value().sqrt())
}

pub(crate) fn lq_norm_sq<T: Real>(
    sigma: &NoiseCoefficient<T>,
    u: &[Complex<T>],
    lambda: &[T],
) -> T {
    let mut acc = CompensatedSum::new();
    for (n, &l) in lambda.iter().enumerate() {
        acc.add(l * sigma.diag(u, n).norm_sqr());
    }
    acc.value()
}

/// One Q-Wiener increment over a step `dt`.
pub fn sample_wiener_increment<T: Real, R: Rng + ?Sized>(
    q: &CovarianceSpec<T>,
    dt: T,
    rng: &mut R,
) -> Result<ShellState<T>> {
    if !(dt >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "dt must be nonnegative, got {dt}"
        )));
    }
    let mut out = vec![Complex::new(T::zero(), T::zero()); q.len()];
    fill_increment(q, dt, rng, &mut out);
    Ok(ShellState::from_vec_unchecked(out))
}

/// Fills `out` with an increment; consumes the same number of deviates for
/// any `dt`, so streams stay aligned across grids.
pub(crate) fn fill_increment<T: Real, R: Rng + ?Sized>(
    q: &CovarianceSpec<T>,
    dt: T,
    rng: &mut R,
    out: &mut [Complex<T>],
) {
    match q.convention() {
        WienerConvention::Complex => {
            let half = T::lit(0.5);
            for (o, &l) in out.iter_mut().zip(q.eigenvalues()) {
                let sd = (l * dt * half).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *o = Complex::new(T::lit(re) * sd, T::lit(im) * sd);
            }
        }
        WienerConvention::Real => {
            for (o, &l) in out.iter_mut().zip(q.eigenvalues()) {
                let sd = (l * dt).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                *o = Complex::new(T::lit(re) * sd, T::zero());
            }
        }
    }
}

/// Largest `eps` allowed by each small-noise condition; `inf` when the
/// relevant constant vanishes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonGuards<T> {
    /// `nu / 2K`: first energy estimate
    pub nu_over_2k: T,
    /// `nu / 2K ^ 1 / 2K^2`: supremum energy estimate
    pub nu_over_2k_and_half_inv_k_sq: T,
    /// `nu / 4K`
    pub nu_over_4k: T,
    /// `3 nu / 2K`: weighted energy estimate
    pub three_nu_over_2k: T,
    /// `nu / 3K`: fourth-moment estimate
    pub nu_over_3k: T,
    /// `nu / 2L`: monotonicity of the noisy pair
    pub nu_over_2l: T,
    /// `nu / L`: well-posedness
    pub nu_over_l: T,
}

impl<T: Real> EpsilonGuards<T> {
    pub fn new(nu: T, k: T, l: T) -> Self {
        let div = |num: T, den: T| {
            if den > T::zero() {
                num / den
            } else {
                T::infinity()
            }
        };
        let two = T::lit(2.0);
        Self {
            nu_over_2k: div(nu, two * k),
            nu_over_2k_and_half_inv_k_sq: div(nu, two * k).min(div(T::one(), two * k * k)),
            nu_over_4k: div(nu, T::lit(4.0) * k),
            three_nu_over_2k: div(T::lit(3.0) * nu, two * k),
            nu_over_3k: div(nu, T::lit(3.0) * k),
            nu_over_2l: div(nu, two * l),
            nu_over_l: div(nu, l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseHypothesesReport<T> {
    /// Growth constant: `|sigma(u)|_{L_Q}^2 <= K (1 + ||u||^2)`.
    pub k: T,
    /// Lipschitz constant: `|sigma(u) - sigma(v)|_{L_Q}^2 <= L ||u - v||^2`.
    pub l: T,
    /// Pointwise growth `|sigma_n(u_n)|^2 <= K1 k_n^2 |u_n|^2`; `None` when it
    /// cannot hold (additive noise with `sigma(0) != 0`).
    pub k1: Option<T>,
    /// Pointwise Lipschitz `|sigma_n(u) - sigma_n(v)|^2 <= K2 k_n^2 |u - v|^2`.
    pub k2: T,
    pub epsilon_guards: EpsilonGuards<T>,
    /// `"a.1-a.2"` when the pointwise hypotheses hold, `"A.2-A.3 only"` otherwise.
    pub hypothesis_class: &'static str,
    /// Sampled suprema of the two ratios; never exceed `k` and `l`.
    pub sampled_k: T,
    pub sampled_l: T,
    pub samples: usize,
    pub rng_seed: u64,
}

/// Closed-form noise constants plus a sampled cross-check.
pub fn check_noise_hypotheses<T: Real>(
    sigma: &NoiseCoefficient<T>,
    q: &CovarianceSpec<T>,
    params: &ModelParams<T>,
    samples: usize,
    seed: u64,
) -> Result<NoiseHypothesesReport<T>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let n = params.num_shells();
    sigma.check_len(n)?;
    q.check_len(n)?;
    let k = params.wavenumbers();
    let lambda = q.eigenvalues();
    let coef = sigma.coefficients();

    let (kk, ll, k1, k2, class) = match sigma {
        NoiseCoefficient::Additive(_) => {
            let k_add = crate::scalar::compensated_sum(
                coef.iter().zip(lambda).map(|(s, &l)| l * s.norm_sqr()),
            );
            let zero = coef.iter().all(|s| s.norm_sqr() == T::zero());
            let class = if zero { "a.1-a.2" } else { "A.2-A.3 only" };
            (
                k_add,
                T::zero(),
                if zero { Some(T::zero()) } else { None },
                T::zero(),
                class,
            )
        }
        NoiseCoefficient::DiagonalMultiplicative(_) => {
            let mut kl = T::zero();
            let mut k12 = T::zero();
            for ((c, &l), &kn) in coef.iter().zip(lambda).zip(&k) {
                kl = kl.max(l * c.norm_sqr() / (kn * kn));
                k12 = k12.max(c.norm_sqr() / (kn * kn));
            }
            (kl, kl, Some(k12), k12, "a.1-a.2")
        }
    };

    let mut rng = auxiliary_stream(seed);
    let mut sampled_k = T::zero();
    let mut sampled_l = T::zero();
    for i in 0..samples {
        let u = random_state(&k, family_for(i), &mut rng);
        let v = random_state(&k, family_for(i + 1), &mut rng);
        let gu = lq_norm_sq(sigma, u.as_slice(), lambda);
        sampled_k = sampled_k.max(gu / (T::one() + v_norm_sq(u.as_slice(), &k)));
        let w = &u - &v;
        let dw = v_norm_sq(w.as_slice(), &k);
        if dw > T::zero() {
            let mut acc = CompensatedSum::new();
            for (j, &l) in lambda.iter().enumerate() {
                acc.add(l * (sigma.diag(u.as_slice(), j) - sigma.diag(v.as_slice(), j)).norm_sqr());
            }
            sampled_l = sampled_l.max(acc.value() / dw);
        }
    }

    Ok(NoiseHypothesesReport {
        k: kk,
        l: ll,
        k1,
        k2,
        epsilon_guards: EpsilonGuards::new(params.nu(), kk, ll),
        hypothesis_class: class,
        sampled_k,
        sampled_l,
        samples,
        rng_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::member_stream;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn h0_norm_examples() {
        let q = CovarianceSpec::<f64>::default_for(4);
        assert!((h0_norm(&ShellState::basis(4, 1), &q).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(h0_norm(&ShellState::zeros(4), &q).unwrap(), 0.0);
        let half_e2 = ShellState::basis(4, 2).scale(0.5);
        assert!((h0_norm(&half_e2, &q).unwrap() - 1.0).abs() < 1e-15);
        assert!(h0_norm(&ShellState::zeros(3), &q).is_err());
    }

    #[test]
    fn covariance_validation() {
        assert!(CovarianceSpec::<f64>::explicit(vec![1.0, 0.0]).is_err());
        assert!(CovarianceSpec::<f64>::explicit(vec![]).is_err());
        assert!(CovarianceSpec::<f64>::geometric(3, -1.0, 1.0).is_err());
        let q = CovarianceSpec::<f64>::geometric(3, 1.0, 1.0).unwrap();
        assert_eq!(q.eigenvalues(), &[0.5, 0.25, 0.125]);
    }

    #[test]
    fn lq_norm_examples() {
        let q = CovarianceSpec::<f64>::default_for(3);
        let s = NoiseCoefficient::additive(vec![c(1.0, 0.0); 3]).unwrap();
        let v = lq_norm(&s, &ShellState::zeros(3), &q).unwrap();
        assert!((v - 0.875f64.sqrt()).abs() < 1e-15);
        let m = NoiseCoefficient::multiplicative(vec![c(1.0, 2.0); 3]).unwrap();
        assert_eq!(lq_norm(&m, &ShellState::zeros(3), &q).unwrap(), 0.0);
    }

    #[test]
    fn increment_basics() {
        let q = CovarianceSpec::<f64>::default_for(4);
        let mut rng = member_stream(1, 0);
        assert_eq!(
            sample_wiener_increment(&q, 0.0, &mut rng).unwrap(),
            ShellState::zeros(4)
        );
        assert!(sample_wiener_increment(&q, -1.0, &mut rng).is_err());
        let a = sample_wiener_increment(&q, 0.1, &mut member_stream(5, 2)).unwrap();
        let b = sample_wiener_increment(&q, 0.1, &mut member_stream(5, 2)).unwrap();
        assert_eq!(a, b);
        let r = sample_wiener_increment(
            &q.clone().with_convention(WienerConvention::Real),
            0.1,
            &mut rng,
        )
        .unwrap();
        assert!(r.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn hypotheses_closed_forms() {
        let p = ModelParams::goy_standard(4, 1.0, 1.0).unwrap();
        let q = CovarianceSpec::<f64>::default_for(4);
        let s = NoiseCoefficient::additive(vec![c(1.0, 0.0); 4]).unwrap();
        let r = check_noise_hypotheses(&s, &q, &p, 200, 3).unwrap();
        assert_eq!(r.l, 0.0);
        assert!((r.k - 0.9375).abs() < 1e-15);
        assert_eq!(r.k1, None);
        assert_eq!(r.hypothesis_class, "A.2-A.3 only");
        assert!(r.sampled_k <= r.k * (1.0 + 1e-12));
        assert_eq!(r, check_noise_hypotheses(&s, &q, &p, 200, 3).unwrap());

        let k = p.wavenumbers();
        let m = NoiseCoefficient::multiplicative(k.iter().map(|&kn| c(kn, 0.0)).collect()).unwrap();
        let r = check_noise_hypotheses(&m, &q, &p, 200, 3).unwrap();
        assert_eq!(r.k1, Some(1.0));
        assert_eq!(r.k2, 1.0);
        assert!(r.sampled_k <= r.k * (1.0 + 1e-12));
        assert!(r.sampled_l <= r.l * (1.0 + 1e-12));
        assert!(check_noise_hypotheses(&m, &q, &p, 0, 3).is_err());
    }

    #[test]
    fn guards_handle_zero_constants() {
        let g = EpsilonGuards::new(1.0f64, 0.0, 0.0);
        assert!(g.nu_over_2k.is_infinite() && g.nu_over_l.is_infinite());
        let g = EpsilonGuards::new(1.0f64, 1.0, 0.5);
        assert_eq!(g.nu_over_2k, 0.5);
        assert_eq!(g.nu_over_2k_and_half_inv_k_sq, 0.5);
        assert_eq!(g.nu_over_3k, 1.0 / 3.0);
        assert_eq!(g.nu_over_2l, 1.0);
    }
}
