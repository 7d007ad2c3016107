//! Numerical machinery for the q-deformed KZB heat equation of sl2 on the
//! torus: elliptic special functions, dynamical R-matrices, qKZB difference
//! operators, the elliptic Shapovalov pairing, hypergeometric integral
//! kernels, discrete heat and connection operators, and the verification
//! suites that check their defining identities at desk scale.
//!
//! Everything is double-precision complex arithmetic. All evaluators are
//! pure functions; truncation of infinite series and products is controlled
//! by [`TruncationPolicy`].

use std::f64::consts::PI;

pub mod blocks;
pub mod elliptic;
pub mod hyper;
pub mod qkzb;
pub mod quad;
pub mod report;
pub mod rmatrix;
pub mod semiclassical;
pub mod shapovalov;
pub mod weights;

/// Base real scalar. Switch here to retarget the whole crate.
pub type Real = f64;
/// Complex scalar built on [`Real`].
pub type C = num_complex::Complex<Real>;

/// The imaginary unit.
pub const I: C = C::new(0.0, 1.0);

/// Complex zero.
pub const ZERO: C = C::new(0.0, 0.0);

/// Complex one.
pub const ONE: C = C::new(1.0, 0.0);

/// e^{i pi w} for complex w.
#[inline]
pub fn exp_pi_i(w: C) -> C {
    (I * PI * w).exp()
}

/// e^{2 i pi w} for complex w.
#[inline]
pub fn exp_2pi_i(w: C) -> C {
    (I * (2.0 * PI) * w).exp()
}

/// Convenience constructor for a complex number.
#[inline]
pub fn c(re: Real, im: Real) -> C {
    C::new(re, im)
}

/// Errors surfaced by configuration validation and checked constructors.
///
/// Scalar evaluators assert their documented domain conditions instead of
/// returning `Result`; the harness validates configurations up front and
/// maps these errors to its exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular parameter: {0}")]
    Singular(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Truncation control for theta series and the Omega double product.
///
/// `series_terms` is a floor on the symmetric theta cutoff J; the effective
/// cutoff also honors `target_abs_err` through a Gaussian tail bound and
/// grows with the imaginary part of the argument. `product_terms` bounds
/// both indices of the Omega double product.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationPolicy {
    pub series_terms: usize,
    pub product_terms: usize,
    pub target_abs_err: Real,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            series_terms: 24,
            product_terms: 60,
            target_abs_err: 1e-13,
        }
    }
}

impl TruncationPolicy {
    /// Same target accuracy with both cutoffs doubled. Used by the
    /// self-consistency checks: doubling must not move any value by more
    /// than `target_abs_err`.
    pub fn doubled(&self) -> Self {
        TruncationPolicy {
            series_terms: 2 * self.series_terms,
            product_terms: 2 * self.product_terms,
            target_abs_err: self.target_abs_err,
        }
    }

    /// Symmetric cutoff J for a theta-type series with nome e^{i pi tau}:
    /// terms are kept for |j + 1/2| <= J. The Gaussian tail of the series
    /// gives J ~ sqrt(|log eps| / (pi Im tau)); the summand peaks away from
    /// j = 0 when the argument has an imaginary part, which shifts the
    /// cutoff by |Im t| / Im tau.
    pub(crate) fn theta_cutoff(&self, im_tau: Real, im_t: Real) -> i64 {
        assert!(im_tau > 0.0, "theta cutoff requires Im tau > 0");
        let tail = (self.target_abs_err.ln().abs() / (PI * im_tau)).sqrt().ceil() as i64 + 4;
        let shift = (im_t.abs() / im_tau).ceil() as i64;
        tail.max(self.series_terms as i64) + shift
    }
}

/// Global parameters shared by every operator: the two elliptic moduli, the
/// deformation step eta, and the highest weights of the tensor factors.
#[derive(Clone, Debug)]
pub struct ParameterSet {
    pub tau: C,
    pub p: C,
    pub eta: C,
    pub weights: Vec<Real>,
}

impl ParameterSet {
    pub fn new(tau: C, p: C, eta: C, weights: Vec<Real>) -> Result<Self> {
        if tau.im <= 0.0 {
            return Err(Error::Domain(format!("Im tau = {} must be positive", tau.im)));
        }
        if p.im <= 0.0 {
            return Err(Error::Domain(format!("Im p = {} must be positive", p.im)));
        }
        if eta == ZERO {
            return Err(Error::Domain("eta must be nonzero".into()));
        }
        Ok(ParameterSet { tau, p, eta, weights })
    }
}
