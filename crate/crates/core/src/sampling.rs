//! Random test states for identity checks and constant estimation.
//!
//! Two families are drawn alternately:
//! - complex Gaussian entries scaled by `k_n^{-1/3}` (a Kolmogorov-like
//!   spectrum),
//! - uniform magnitudes in `[0, 1)` with uniform phases.
//!
//! Both are multiplied by a global amplitude `10^U(-1, 1)`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;
use crate::shell_space::ShellState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFamily {
    Kolmogorov,
    UniformMagnitude,
    /// Only the first two and last two shells populated.
    Boundary,
}

pub fn random_state<T: Real, R: Rng + ?Sized>(
    k: &[T],
    family: StateFamily,
    rng: &mut R,
) -> ShellState<T> {
    let n = k.len();
    let scale: f64 = 10f64.powf(rng.random_range(-1.0..1.0));
    let mut u = Vec::with_capacity(n);
    for (i, &kn) in k.iter().enumerate() {
        let z = match family {
            StateFamily::Kolmogorov => {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let w = kn.to_f64_lossy().powf(-1.0 / 3.0);
                Complex::new(re * w, im * w)
            }
            StateFamily::UniformMagnitude | StateFamily::Boundary => {
                let r: f64 = rng.random();
                let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let keep = family == StateFamily::UniformMagnitude || i < 2 || i + 2 >= n;
                if keep {
                    Complex::from_polar(r, th)
                } else {
                    Complex::new(0.0, 0.0)
                }
            }
        };
        u.push(Complex::new(T::lit(z.re * scale), T::lit(z.im * scale)));
    }
    ShellState::from_vec_unchecked(u)
}

/// Family for sample index `i`: alternates the two bulk families and puts a
/// boundary-supported state every fifth draw.
pub fn family_for(i: usize) -> StateFamily {
    if i % 5 == 4 {
        StateFamily::Boundary
    } else if i.is_multiple_of(2) {
        StateFamily::Kolmogorov
    } else {
        StateFamily::UniformMagnitude
    }
}
