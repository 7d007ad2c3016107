//! Weight modules of sl2 and the zero-weight subspace of a tensor product.
//!
//! The module with highest weight Lambda has basis e_0, e_1, ... with
//! h e_k = (Lambda - 2k) e_k; only the slice relevant to the zero-weight
//! space of the tensor product is ever touched. Tensor basis vectors are
//! labelled by multi-indices I = (i_1, ..., i_n) with sum i_k = m.

use crate::{Error, Real, Result, C, ZERO};

/// Highest weights (Lambda_1, ..., Lambda_n) with m = sum Lambda_i / 2 a
/// nonnegative integer.
#[derive(Clone, Debug, PartialEq)]
pub struct HighestWeights {
    lambdas: Vec<Real>,
}

impl HighestWeights {
    pub fn new(lambdas: Vec<Real>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Config("at least one highest weight is required".into()));
        }
        let total: Real = lambdas.iter().sum();
        let m = total / 2.0;
        if m < 0.0 || (m - m.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sum of highest weights must be an even nonnegative integer, got {total}"
            )));
        }
        Ok(HighestWeights { lambdas })
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// Total zero-weight level m = sum Lambda_i / 2.
    pub fn m(&self) -> usize {
        (self.lambdas.iter().sum::<Real>() / 2.0).round() as usize
    }

    pub fn lambda(&self, k: usize) -> Real {
        self.lambdas[k]
    }

    pub fn lambdas(&self) -> &[Real] {
        &self.lambdas
    }

    /// True when every weight is a nonnegative integer.
    pub fn all_integer(&self) -> bool {
        self.lambdas.iter().all(|&l| l >= 0.0 && (l - l.round()).abs() < 1e-9)
    }

    /// Weights in reversed slot order.
    pub fn reversed(&self) -> Self {
        let mut lambdas = self.lambdas.clone();
        lambdas.reverse();
        HighestWeights { lambdas }
    }
}

/// Multi-index I = (i_1, ..., i_n) labelling e_I = e_{i_1} x ... x e_{i_n}.
pub type BasisIndex = Vec<usize>;

/// Weight of the basis vector e_k of the module with highest weight Lambda.
pub fn weight_of(k: usize, lambda: Real) -> Real {
    lambda - 2.0 * k as Real
}

/// All zero-weight multi-indices (sum i_k = m), lexicographically ordered;
/// with `finite` set, restricted to i_k <= Lambda_k (integer weights).
pub fn zero_weight_basis(weights: &HighestWeights, finite: bool) -> Vec<BasisIndex> {
    let mut out = Vec::new();
    let mut current = vec![0usize; weights.n()];
    enumerate(weights, finite, 0, weights.m(), &mut current, &mut out);
    out
}

fn enumerate(
    weights: &HighestWeights,
    finite: bool,
    slot: usize,
    remaining: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<BasisIndex>,
) {
    if slot == weights.n() {
        if remaining == 0 {
            out.push(current.clone());
        }
        return;
    }
    let cap = if finite {
        let l = weights.lambda(slot);
        if l < 0.0 {
            return;
        }
        remaining.min(l.round() as usize)
    } else {
        remaining
    };
    for i in 0..=cap {
        current[slot] = i;
        enumerate(weights, finite, slot + 1, remaining - i, current, out);
    }
    current[slot] = 0;
}

/// True iff i_a <= Lambda_a for every slot; meaningful for integer weights.
pub fn is_admissible(index: &BasisIndex, weights: &HighestWeights) -> Result<bool> {
    if !weights.all_integer() {
        return Err(Error::Domain("admissibility requires nonnegative integer weights".into()));
    }
    Ok(index
        .iter()
        .zip(weights.lambdas())
        .all(|(&i, &l)| (i as Real) <= l.round()))
}

/// A vector in the zero-weight space, stored as coefficients over the
/// lexicographically ordered basis returned by [`zero_weight_basis`].
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroWeightVector {
    pub basis: Vec<BasisIndex>,
    pub coeffs: Vec<C>,
}

impl ZeroWeightVector {
    pub fn zero(basis: Vec<BasisIndex>) -> Self {
        let coeffs = vec![ZERO; basis.len()];
        ZeroWeightVector { basis, coeffs }
    }

    pub fn basis_vector(basis: Vec<BasisIndex>, which: usize) -> Self {
        let mut v = Self::zero(basis);
        v.coeffs[which] = crate::ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Position of a multi-index in the lexicographic basis ordering.
    pub fn position(&self, index: &BasisIndex) -> Option<usize> {
        self.basis.iter().position(|b| b == index)
    }
}

/// The flip P e_{i_1} x ... x e_{i_n} = e_{i_n} x ... x e_{i_1}, from the
/// zero-weight space for Lambda to the one for reversed Lambda (both in
/// their own lexicographic orderings).
pub fn flip_p(v: &ZeroWeightVector, weights: &HighestWeights) -> ZeroWeightVector {
    let target_basis = zero_weight_basis(&weights.reversed(), weights.all_integer());
    let mut out = ZeroWeightVector::zero(target_basis);
    for (idx, coeff) in v.basis.iter().zip(v.coeffs.iter()) {
        let mut rev = idx.clone();
        rev.reverse();
        let pos = out
            .position(&rev)
            .expect("reversed index must lie in the reversed zero-weight basis");
        out.coeffs[pos] += *coeff;
    }
    out
}
