//! Scalar special functions: the odd Jacobi theta function and its
//! derivatives, the Dedekind eta function, the two-modulus phase function
//! Omega, the Gaussian alpha, the Weierstrass p-function, and the basis
//! theta functions of level kappa.
//!
//! Conventions. theta(t,tau) = -sum_{j in Z} exp(i pi (j+1/2)^2 tau
//! + 2 pi i (j+1/2)(t+1/2)); it is odd, 1-antiperiodic, and satisfies
//! theta(t+tau) = -e^{-pi i tau - 2 pi i t} theta(t). All series and
//! products are truncated per [`TruncationPolicy`].

use crate::{c, exp_2pi_i, exp_pi_i, C, Real, TruncationPolicy, I, ONE, ZERO};
use std::f64::consts::PI;

/// First Jacobi theta function theta(t, tau).
pub fn theta(t: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_series(0, t, tau, pol)
}

/// First t-derivative of theta.
pub fn theta_prime(t: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_series(1, t, tau, pol)
}

/// Second t-derivative of theta.
pub fn theta_d2(t: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_series(2, t, tau, pol)
}

/// Third t-derivative of theta.
pub fn theta_d3(t: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_series(3, t, tau, pol)
}

/// tau-derivative of theta, from the heat relation
/// 4 pi i d_tau theta = d_t^2 theta satisfied term by term.
pub fn theta_dtau(t: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_d2(t, tau, pol) / (4.0 * PI * I)
}

/// Term-wise differentiated theta series. Each term of order d carries the
/// factor (2 pi i (j+1/2))^d.
fn theta_series(order: u32, t: C, tau: C, pol: &TruncationPolicy) -> C {
    assert!(tau.im > 0.0, "theta requires Im tau > 0, got {}", tau.im);
    let jmax = pol.theta_cutoff(tau.im, t.im);
    let mut sum = ZERO;
    for j in -jmax..jmax {
        let h = j as Real + 0.5;
        let term = exp_pi_i(tau * (h * h) + (t + 0.5) * (2.0 * h));
        let factor = (2.0 * PI * I * h).powu(order);
        sum += factor * term;
    }
    -sum
}

/// Dedekind eta function e^{pi i tau / 12} prod_{j>=1} (1 - e^{2 pi i j tau}).
pub fn dedekind_eta(tau: C, pol: &TruncationPolicy) -> C {
    assert!(tau.im > 0.0, "eta requires Im tau > 0, got {}", tau.im);
    let q = exp_2pi_i(tau);
    let mut prod = ONE;
    let mut qj = q;
    for _ in 0..pol.product_terms {
        prod *= ONE - qj;
        if qj.norm() < 1e-18 {
            break;
        }
        qj *= q;
    }
    exp_pi_i(tau / 12.0) * prod
}

/// Logarithmic tau-derivative of eta:
/// d_tau log eta = pi i / 12 - sum_{j>=1} 2 pi i j q^j / (1 - q^j), q = e^{2 pi i tau}.
pub fn dedekind_eta_log_deriv(tau: C, pol: &TruncationPolicy) -> C {
    assert!(tau.im > 0.0, "eta requires Im tau > 0, got {}", tau.im);
    let q = exp_2pi_i(tau);
    let mut sum = ZERO;
    let mut qj = q;
    for j in 1..=pol.product_terms {
        sum += (2.0 * PI * I * j as Real) * qj / (ONE - qj);
        if qj.norm() < 1e-18 {
            break;
        }
        qj *= q;
    }
    PI * I / 12.0 - sum
}

/// Phase function Omega_a(z, tau, p), the double product
///
/// prod_{j,k>=0} (1 - e^{2 pi i (z - a + j tau + k p)})(1 - e^{2 pi i (-z - a + (j+1) tau + (k+1) p)})
///             / (1 - e^{2 pi i (z + a + j tau + k p)})(1 - e^{2 pi i (-z + a + (j+1) tau + (k+1) p)})
///
/// truncated at j, k < product_terms. Symmetric in (tau, p); satisfies
/// Omega_a(z + p) = e^{2 pi i a} theta(z + a, tau) / theta(z - a, tau) * Omega_a(z)
/// and is 1-periodic in z.
pub fn omega_phase(a: C, z: C, tau: C, p: C, pol: &TruncationPolicy) -> C {
    assert!(tau.im > 0.0 && p.im > 0.0, "omega requires both moduli in the upper half plane");
    let qt = exp_2pi_i(tau);
    let qp = exp_2pi_i(p);
    // Leading factor arguments at j = k = 0; the (j,k) cell multiplies them
    // by qt^j qp^k. Branch choices of the individual logs cancel in exp.
    let mut row = [
        exp_2pi_i(z - a),
        exp_2pi_i(-z - a + tau + p),
        exp_2pi_i(z + a),
        exp_2pi_i(-z + a + tau + p),
    ];
    let mut log_sum = ZERO;
    for _k in 0..pol.product_terms {
        let mut cell = row;
        for _j in 0..pol.product_terms {
            for (idx, x) in cell.iter().enumerate() {
                let f = ONE - x;
                assert!(
                    f.norm() > 1e-12,
                    "singular parameter: a factor of the Omega product vanishes (index {idx})"
                );
                let l = f.ln();
                if idx < 2 {
                    log_sum += l;
                } else {
                    log_sum -= l;
                }
            }
            if cell.iter().all(|x| x.norm() < 1e-18) {
                break;
            }
            for x in cell.iter_mut() {
                *x *= qt;
            }
        }
        if row.iter().all(|x| x.norm() < 1e-18) {
            break;
        }
        for x in row.iter_mut() {
            *x *= qp;
        }
    }
    log_sum.exp()
}

/// Gaussian alpha(lambda) = exp(-pi i lambda^2 / (4 eta)).
pub fn alpha_gauss(lambda: C, eta: C) -> C {
    assert!(eta != ZERO, "alpha requires eta != 0");
    exp_pi_i(-lambda * lambda / (4.0 * eta))
}

/// Weierstrass p-function with periods 1 and tau, Laurent-normalized as
/// p(t) = 1/t^2 + O(t^2).
///
/// Computed as the negative second logarithmic derivative of theta plus the
/// constant theta'''(0) / (3 theta'(0)) that removes the constant Laurent
/// term; a direct lattice sum serves as the test oracle.
pub fn weierstrass_p(t: C, tau: C, pol: &TruncationPolicy) -> C {
    let th = theta(t, tau, pol);
    assert!(th.norm() > 1e-12, "weierstrass_p evaluated at a lattice point");
    let th1 = theta_prime(t, tau, pol);
    let th2 = theta_d2(t, tau, pol);
    let c0 = theta_d3(ZERO, tau, pol) / (3.0 * theta_prime(ZERO, tau, pol));
    -(th2 * th - th1 * th1) / (th * th) + c0
}

/// Level-kappa theta function
/// theta_{j,kappa}(lambda, tau) = sum_{r in Z + j/(2 kappa)} e^{2 pi i kappa (r^2 tau + r lambda)}.
///
/// The index j matters only modulo 2 kappa.
pub fn theta_level(j: i64, kappa: u32, lambda: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_level_series(0, 0, j, kappa, lambda, tau, pol)
}

/// Exact term-wise tau-derivative of theta_level.
pub fn theta_level_dtau(j: i64, kappa: u32, lambda: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_level_series(1, 0, j, kappa, lambda, tau, pol)
}

/// Exact term-wise lambda-derivative of theta_level.
pub fn theta_level_dlambda(j: i64, kappa: u32, lambda: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_level_series(0, 1, j, kappa, lambda, tau, pol)
}

/// Exact term-wise second lambda-derivative of theta_level.
pub fn theta_level_dlambda2(j: i64, kappa: u32, lambda: C, tau: C, pol: &TruncationPolicy) -> C {
    theta_level_series(0, 2, j, kappa, lambda, tau, pol)
}

fn theta_level_series(
    dtau: u32,
    dlambda: u32,
    j: i64,
    kappa: u32,
    lambda: C,
    tau: C,
    pol: &TruncationPolicy,
) -> C {
    assert!(tau.im > 0.0, "theta_level requires Im tau > 0, got {}", tau.im);
    assert!(kappa >= 1, "theta_level requires kappa >= 1");
    let kf = kappa as Real;
    // Gaussian tail: terms decay like exp(-2 pi kappa Im tau r^2); the peak
    // shifts to r = -Im lambda / (2 Im tau) for complex lambda.
    let tail = (pol.target_abs_err.ln().abs() / (2.0 * PI * kf * tau.im)).sqrt().ceil() as i64 + 4;
    let shift = (lambda.im.abs() / (2.0 * tau.im)).ceil() as i64;
    let nmax = tail.max(pol.series_terms as i64 / 2 + 1) + shift;
    let frac = j as Real / (2.0 * kf);
    let mut sum = ZERO;
    for n in -nmax..=nmax {
        let r = n as Real + frac;
        let term = exp_2pi_i((tau * r + lambda) * (kf * r));
        let ftau = (2.0 * PI * I * kf * r * r).powu(dtau);
        let flam = (2.0 * PI * I * kf * r).powu(dlambda);
        sum += ftau * flam * term;
    }
    sum
}
