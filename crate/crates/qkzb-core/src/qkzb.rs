//! The qKZB difference operators K_j, their mirror versions K_j^vee, the
//! shift Gamma_j, and the diagonal multipliers D_j, D_j^vee, together with
//! residuals for the compatibility and commutation identities they satisfy.
//!
//! Functions of lambda with values in the zero-weight space are represented
//! either as closures or, for 2 N eta = 1, as samples on the grid
//! lambda_k = eps + k/N, k = 0..2N-1, on which all shifts by -2 eta mu act
//! as exact index shifts.

use crate::elliptic::{alpha_gauss, theta};
use crate::rmatrix::r_matrix;
use crate::weights::{zero_weight_basis, HighestWeights, ZeroWeightVector};
use crate::{c, exp_pi_i, C, Error, Real, Result, TruncationPolicy, ZERO};
use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::Arc;

/// Default generic grid offset; fixed so that reports are reproducible.
pub const DEFAULT_EPS: C = C::new(0.2357, 0.0113);

/// The lambda grid for rational eta: lambda_k = eps + k/N, k = 0..2N-1,
/// with 2-periodic continuation.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub n: usize,
    pub eps: C,
}

impl GridSpec {
    pub fn new(n: usize, eps: C) -> Self {
        assert!(n >= 1, "grid requires N >= 1");
        GridSpec { n, eps }
    }

    pub fn len(&self) -> usize {
        2 * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lambda(&self, k: usize) -> C {
        self.eps + c(k as Real / self.n as Real, 0.0)
    }

    /// Grid index of a lambda value, using 2-periodicity; errors off grid.
    pub fn index_of(&self, lambda: C) -> Result<usize> {
        let x = (lambda - self.eps) * self.n as Real;
        if x.im.abs() > 1e-9 || (x.re - x.re.round()).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "grid mismatch: lambda {lambda} is not a grid point"
            )));
        }
        Ok((x.re.round() as i64).rem_euclid(2 * self.n as i64) as usize)
    }
}

/// Parameters of the qKZB operator family.
#[derive(Clone, Debug)]
pub struct QkzbConfig {
    pub zs: Vec<C>,
    pub tau: C,
    pub p: C,
    pub eta: C,
    pub weights: HighestWeights,
}

impl QkzbConfig {
    pub fn new(zs: Vec<C>, tau: C, p: C, eta: C, weights: HighestWeights) -> Result<Self> {
        if zs.len() != weights.n() {
            return Err(Error::Config(format!(
                "{} marked points for {} weights",
                zs.len(),
                weights.n()
            )));
        }
        if tau.im <= 0.0 || p.im <= 0.0 {
            return Err(Error::Config("tau and p must have positive imaginary part".into()));
        }
        if eta.norm() < 1e-12 {
            return Err(Error::Config("eta must be nonzero".into()));
        }
        Ok(QkzbConfig { zs, tau, p, eta, weights })
    }

    fn integer_weight(&self, slot: usize) -> Result<usize> {
        let l = self.weights.lambda(slot);
        if (l - l.round()).abs() > 1e-9 || l < 1.0 {
            return Err(Error::Domain(format!(
                "qKZB operators need positive integer weights, got {l}"
            )));
        }
        Ok(l.round() as usize)
    }
}

/// A function of lambda valued in the zero-weight space.
#[derive(Clone)]
pub struct GridFunction {
    pub weights: HighestWeights,
    pub eta: C,
    repr: Repr,
}

#[derive(Clone)]
enum Repr {
    Grid { spec: GridSpec, values: Vec<ZeroWeightVector> },
    Closure(Arc<dyn Fn(C) -> ZeroWeightVector + Send + Sync>),
}

impl GridFunction {
    pub fn from_grid(
        weights: HighestWeights,
        eta: C,
        spec: GridSpec,
        values: Vec<ZeroWeightVector>,
    ) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Config(format!(
                "grid of length {} needs {} samples",
                values.len(),
                spec.len()
            )));
        }
        Ok(GridFunction { weights, eta, repr: Repr::Grid { spec, values } })
    }

    pub fn from_closure<F>(weights: HighestWeights, eta: C, f: F) -> Self
    where
        F: Fn(C) -> ZeroWeightVector + Send + Sync + 'static,
    {
        GridFunction { weights, eta, repr: Repr::Closure(Arc::new(f)) }
    }

    /// Grid delta function: the basis vector `pos` planted at grid index k.
    pub fn delta(weights: HighestWeights, eta: C, spec: GridSpec, k: usize, pos: usize) -> Self {
        let basis = zero_weight_basis(&weights, weights.all_integer());
        let mut values = vec![ZeroWeightVector::zero(basis.clone()); spec.len()];
        values[k] = ZeroWeightVector::basis_vector(basis, pos);
        GridFunction { weights, eta, repr: Repr::Grid { spec, values } }
    }

    pub fn eval(&self, lambda: C) -> Result<ZeroWeightVector> {
        match &self.repr {
            Repr::Grid { spec, values } => Ok(values[spec.index_of(lambda)?].clone()),
            Repr::Closure(f) => Ok(f(lambda)),
        }
    }

    pub fn grid_values(&self) -> Option<(&GridSpec, &Vec<ZeroWeightVector>)> {
        match &self.repr {
            Repr::Grid { spec, values } => Some((spec, values)),
            Repr::Closure(_) => None,
        }
    }
}

/// The shift (Gamma_j f)(lambda) = f(lambda - 2 eta mu) on components where
/// slot j carries h-eigenvalue mu. On grids the shift must land on grid
/// points, which holds exactly when 2 N eta = 1 and the weights are
/// integers.
pub fn gamma_shift(j: usize, f: &GridFunction) -> Result<GridFunction> {
    let weights = f.weights.clone();
    let eta = f.eta;
    match &f.repr {
        Repr::Grid { spec, values } => {
            if (2.0 * spec.n as Real * eta - 1.0).norm() > 1e-9 {
                return Err(Error::Domain(
                    "grid mismatch: Gamma needs 2 N eta = 1 on grid mode".into(),
                ));
            }
            if !weights.all_integer() {
                return Err(Error::Domain("grid mismatch: Gamma needs integer weights".into()));
            }
            let len = spec.len() as i64;
            let mut out = values.clone();
            for (k, slot) in out.iter_mut().enumerate() {
                for (pos, idx) in slot.basis.clone().iter().enumerate() {
                    let mu = weights.lambda(j).round() as i64 - 2 * idx[j] as i64;
                    let src = ((k as i64 - mu).rem_euclid(len)) as usize;
                    slot.coeffs[pos] = values[src].coeffs[pos];
                }
            }
            GridFunction::from_grid(weights, eta, *spec, out)
        }
        Repr::Closure(inner) => {
            let inner = inner.clone();
            let w = weights.clone();
            Ok(GridFunction::from_closure(weights, eta, move |lambda| {
                let probe = inner(lambda);
                let mut out = ZeroWeightVector::zero(probe.basis.clone());
                let mut cache: HashMap<i64, ZeroWeightVector> = HashMap::new();
                for (pos, idx) in probe.basis.iter().enumerate() {
                    let mu = w.lambda(j) - 2.0 * idx[j] as Real;
                    let key = (2.0 * mu).round() as i64;
                    let shifted = cache
                        .entry(key)
                        .or_insert_with(|| inner(lambda - 2.0 * eta * mu));
                    out.coeffs[pos] = shifted.coeffs[pos];
                }
                out
            }))
        }
    }
}

/// One dynamical R-matrix factor acting pointwise in lambda on a
/// zero-weight vector: slots (slot_j, slot_k) of the index, with lambda
/// shifted by -2 eta times the total h-eigenvalue over `shift_slots`.
fn apply_r_pointwise(
    v: &ZeroWeightVector,
    weights: &HighestWeights,
    slot_j: usize,
    slot_k: usize,
    z: C,
    lambda: C,
    shift_slots: &[usize],
    modulus: C,
    eta: C,
    pol: &TruncationPolicy,
) -> ZeroWeightVector {
    let lj = weights.lambda(slot_j).round() as usize;
    let lk = weights.lambda(slot_k).round() as usize;
    let mut memo: HashMap<i64, crate::rmatrix::RMatrixValue> = HashMap::new();
    let mut out = ZeroWeightVector::zero(v.basis.clone());
    for (pos, &amp) in v.coeffs.iter().enumerate() {
        if amp == ZERO {
            continue;
        }
        let idx = &v.basis[pos];
        let sigma: Real = shift_slots
            .iter()
            .map(|&l| weights.lambda(l) - 2.0 * idx[l] as Real)
            .sum();
        let key = (2.0 * sigma).round() as i64;
        let r = memo
            .entry(key)
            .or_insert_with(|| r_matrix(lj, lk, z, lambda - 2.0 * eta * sigma, modulus, eta, pol));
        let a = idx[slot_j];
        let b = idx[slot_k];
        for a2 in 0..=lj {
            for b2 in 0..=lk {
                if a2 + b2 != a + b {
                    continue;
                }
                let entry = r.entry(a2, b2, a, b);
                if entry == ZERO {
                    continue;
                }
                let mut idx2 = idx.clone();
                idx2[slot_j] = a2;
                idx2[slot_k] = b2;
                if let Some(pos2) = out.position(&idx2) {
                    out.coeffs[pos2] += entry * amp;
                }
            }
        }
    }
    out
}

/// Factor plan for K_j or K_j^vee: (other slot, spectral argument,
/// dynamical shift slots), in order of application (rightmost first),
/// split into the part before Gamma_j and the part after it.
struct KPlan {
    before_gamma: Vec<(usize, C, Vec<usize>)>,
    after_gamma: Vec<(usize, C, Vec<usize>)>,
    modulus: C,
}

fn k_plan(j: usize, cfg: &QkzbConfig, mirror: bool) -> KPlan {
    let n = cfg.zs.len();
    let (mut before, mut after) = (Vec::new(), Vec::new());
    if !mirror {
        // K_j: right group k = j+1..n at z_j - z_k, then Gamma_j, then left
        // group k = 1..j-1 at z_j - z_k + p; R_{j,k} shifts over l < k,
        // l != j.
        for k in j + 1..n {
            let shift: Vec<usize> = (0..k).filter(|&l| l != j).collect();
            before.push((k, cfg.zs[j] - cfg.zs[k], shift));
        }
        for k in 0..j {
            let shift: Vec<usize> = (0..k).filter(|&l| l != j).collect();
            after.push((k, cfg.zs[j] - cfg.zs[k] + cfg.p, shift));
        }
        KPlan { before_gamma: before, after_gamma: after, modulus: cfg.tau }
    } else {
        // K_j^vee: right group k = j-1..1 at z_j - z_k, then Gamma_j, then
        // left group k = n..j+1 at z_j - z_k + tau; R^vee_{j,k} shifts over
        // l > k, l != j; all R-matrices at modulus p.
        for k in (0..j).rev() {
            let shift: Vec<usize> = (k + 1..n).filter(|&l| l != j).collect();
            before.push((k, cfg.zs[j] - cfg.zs[k], shift));
        }
        for k in (j + 1..n).rev() {
            let shift: Vec<usize> = (k + 1..n).filter(|&l| l != j).collect();
            after.push((k, cfg.zs[j] - cfg.zs[k] + cfg.tau, shift));
        }
        KPlan { before_gamma: before, after_gamma: after, modulus: cfg.p }
    }
}

/// Pre-flight pole check for the factors of one operator at the lambda
/// values it will see, identifying the offending factor.
fn check_plan_poles(
    j: usize,
    plan: &KPlan,
    cfg: &QkzbConfig,
    lambdas: &[C],
    pol: &TruncationPolicy,
) -> Result<()> {
    let basis = zero_weight_basis(&cfg.weights, cfg.weights.all_integer());
    for (k, z, shift) in plan.before_gamma.iter().chain(plan.after_gamma.iter()) {
        if theta(*z - 2.0 * cfg.eta, plan.modulus, pol).norm() < 1e-13 {
            return Err(Error::Singular(format!(
                "R factor ({j},{k}) at z = {z}: theta(z - 2 eta) vanishes"
            )));
        }
        for lambda in lambdas {
            for idx in &basis {
                let sigma: Real = shift
                    .iter()
                    .map(|&l| cfg.weights.lambda(l) - 2.0 * idx[l] as Real)
                    .sum();
                if theta(*lambda - 2.0 * cfg.eta * sigma, plan.modulus, pol).norm() < 1e-13 {
                    return Err(Error::Singular(format!(
                        "R factor ({j},{k}): theta(lambda) vanishes at lambda = {lambda}"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn apply_k_general(
    j: usize,
    cfg: &QkzbConfig,
    f: &GridFunction,
    mirror: bool,
    pol: &TruncationPolicy,
) -> Result<GridFunction> {
    let n = cfg.zs.len();
    if j >= n {
        return Err(Error::Config(format!("slot {j} out of range for n = {n}")));
    }
    for s in 0..n {
        cfg.integer_weight(s)?;
    }
    let plan = k_plan(j, cfg, mirror);
    let weights = cfg.weights.clone();
    let eta = cfg.eta;

    match &f.repr {
        Repr::Grid { spec, values } => {
            let lambdas: Vec<C> = (0..spec.len()).map(|k| spec.lambda(k)).collect();
            check_plan_poles(j, &plan, cfg, &lambdas, pol)?;
            let mut stage: Vec<ZeroWeightVector> = Vec::with_capacity(spec.len());
            for (k, v) in values.iter().enumerate() {
                let mut w = v.clone();
                for (slot, z, shift) in &plan.before_gamma {
                    w = apply_r_pointwise(&w, &weights, j, *slot, *z, lambdas[k], shift, plan.modulus, eta, pol);
                }
                stage.push(w);
            }
            let mid = GridFunction::from_grid(weights.clone(), eta, *spec, stage)?;
            let shifted = gamma_shift(j, &mid)?;
            let (spec, values) = shifted.grid_values().expect("gamma keeps grid mode");
            let mut out: Vec<ZeroWeightVector> = Vec::with_capacity(spec.len());
            for (k, v) in values.iter().enumerate() {
                let mut w = v.clone();
                for (slot, z, shift) in &plan.after_gamma {
                    w = apply_r_pointwise(&w, &weights, j, *slot, *z, lambdas[k], shift, plan.modulus, eta, pol);
                }
                out.push(w);
            }
            GridFunction::from_grid(weights, eta, *spec, out)
        }
        Repr::Closure(_) => {
            let before = GridFunction {
                weights: weights.clone(),
                eta,
                repr: f.repr.clone(),
            };
            let w2 = weights.clone();
            let cfgc = cfg.clone();
            let polc = pol.clone();
            let pre = GridFunction::from_closure(weights.clone(), eta, move |lambda| {
                let plan = k_plan(j, &cfgc, mirror);
                let mut v = before.eval(lambda).expect("closure evaluation");
                for (slot, z, shift) in &plan.before_gamma {
                    v = apply_r_pointwise(&v, &w2, j, *slot, *z, lambda, shift, plan.modulus, cfgc.eta, &polc);
                }
                v
            });
            let shifted = gamma_shift(j, &pre)?;
            let w3 = weights.clone();
            let cfgc = cfg.clone();
            let polc = pol.clone();
            Ok(GridFunction::from_closure(weights, eta, move |lambda| {
                let plan = k_plan(j, &cfgc, mirror);
                let mut v = shifted.eval(lambda).expect("closure evaluation");
                for (slot, z, shift) in &plan.after_gamma {
                    v = apply_r_pointwise(&v, &w3, j, *slot, *z, lambda, shift, plan.modulus, cfgc.eta, &polc);
                }
                v
            }))
        }
    }
}

/// The qKZB operator K_j(zs, tau, p): R-matrix factors at modulus tau, with
/// the Gamma_j shift in the middle and spectral arguments shifted by p on
/// the left factors.
pub fn apply_k(j: usize, cfg: &QkzbConfig, f: &GridFunction, pol: &TruncationPolicy) -> Result<GridFunction> {
    apply_k_general(j, cfg, f, false, pol)
}

/// The mirror operator K_j^vee(zs, p, tau): R-matrix factors at modulus p,
/// mirrored factor ordering, spectral arguments shifted by tau on the left
/// factors.
pub fn apply_k_vee(j: usize, cfg: &QkzbConfig, f: &GridFunction, pol: &TruncationPolicy) -> Result<GridFunction> {
    apply_k_general(j, cfg, f, true, pol)
}

/// Which diagonal multiplier family to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DKind {
    D,
    DVee,
}

/// Diagonal entries of D_j(mu) or D_j^vee(lambda) over the lexicographic
/// zero-weight basis:
///
/// D_j(mu)     e_I = alpha(mu - 2 eta sum_{k>j} w_k) / alpha(mu - 2 eta sum_{k>=j} w_k)
///                   * e^{+pi i eta Lambda_j (sum_{l<j} Lambda_l - sum_{l>j} Lambda_l)} e_I,
/// D_j^vee(la) e_I = alpha(la - 2 eta sum_{k<j} w_k) / alpha(la - 2 eta sum_{k<=j} w_k)
///                   * e^{-pi i eta Lambda_j (sum_{l<j} Lambda_l - sum_{l>j} Lambda_l)} e_I,
///
/// with w_k = Lambda_k - 2 i_k the slot weights of e_I.
pub fn d_multiplier(j: usize, arg: C, kind: DKind, weights: &HighestWeights, eta: C) -> Vec<C> {
    let basis = zero_weight_basis(weights, weights.all_integer());
    let n = weights.n();
    let lam_sum_before: Real = (0..j).map(|l| weights.lambda(l)).sum();
    let lam_sum_after: Real = (j + 1..n).map(|l| weights.lambda(l)).sum();
    let sign = if kind == DKind::D { 1.0 } else { -1.0 };
    let prefactor = exp_pi_i(sign * eta * weights.lambda(j) * (lam_sum_before - lam_sum_after));
    basis
        .iter()
        .map(|idx| {
            let w = |k: usize| weights.lambda(k) - 2.0 * idx[k] as Real;
            let (strict, inclusive): (Real, Real) = match kind {
                DKind::D => ((j + 1..n).map(w).sum(), (j..n).map(w).sum()),
                DKind::DVee => ((0..j).map(w).sum(), (0..=j).map(w).sum()),
            };
            prefactor * alpha_gauss(arg - 2.0 * eta * strict, eta)
                / alpha_gauss(arg - 2.0 * eta * inclusive, eta)
        })
        .collect()
}

/// Materialize K_j (or K_j^vee) as a dense matrix on the grid space, with
/// index (grid point k) * dim + (basis position).
pub fn k_matrix(
    j: usize,
    cfg: &QkzbConfig,
    spec: GridSpec,
    mirror: bool,
    pol: &TruncationPolicy,
) -> Result<DMatrix<C>> {
    let basis = zero_weight_basis(&cfg.weights, cfg.weights.all_integer());
    let dim = basis.len();
    let total = spec.len() * dim;
    let mut m = DMatrix::from_element(total, total, ZERO);
    for k in 0..spec.len() {
        for pos in 0..dim {
            let f = GridFunction::delta(cfg.weights.clone(), cfg.eta, spec, k, pos);
            let g = apply_k_general(j, cfg, &f, mirror, pol)?;
            let (_, values) = g.grid_values().expect("grid in, grid out");
            for (k2, v) in values.iter().enumerate() {
                for (pos2, &coeff) in v.coeffs.iter().enumerate() {
                    m[(k2 * dim + pos2, k * dim + pos)] = coeff;
                }
            }
        }
    }
    Ok(m)
}

fn shifted_config(cfg: &QkzbConfig, slot: usize, by: C) -> QkzbConfig {
    let mut out = cfg.clone();
    out.zs[slot] += by;
    out
}

/// Compatibility residual of the qKZB system on the grid:
/// K_j(zs + p delta_l) K_l(zs) - K_l(zs + p delta_j) K_j(zs), max norm.
pub fn eq0_residual(
    j: usize,
    l: usize,
    cfg: &QkzbConfig,
    spec: GridSpec,
    pol: &TruncationPolicy,
) -> Result<Real> {
    let kj_shift = k_matrix(j, &shifted_config(cfg, l, cfg.p), spec, false, pol)?;
    let kl = k_matrix(l, cfg, spec, false, pol)?;
    let kl_shift = k_matrix(l, &shifted_config(cfg, j, cfg.p), spec, false, pol)?;
    let kj = k_matrix(j, cfg, spec, false, pol)?;
    let diff = kj_shift * kl - kl_shift * kj;
    Ok(diff.map(|x| x.norm()).max())
}

/// Compatibility residual of the mirror system, with shifts by tau:
/// K_j^vee(zs + tau delta_l) K_l^vee(zs) - K_l^vee(zs + tau delta_j) K_j^vee(zs).
pub fn eq0_vee_residual(
    j: usize,
    l: usize,
    cfg: &QkzbConfig,
    spec: GridSpec,
    pol: &TruncationPolicy,
) -> Result<Real> {
    let kj_shift = k_matrix(j, &shifted_config(cfg, l, cfg.tau), spec, true, pol)?;
    let kl = k_matrix(l, cfg, spec, true, pol)?;
    let kl_shift = k_matrix(l, &shifted_config(cfg, j, cfg.tau), spec, true, pol)?;
    let kj = k_matrix(j, cfg, spec, true, pol)?;
    let diff = kj_shift * kl - kl_shift * kj;
    Ok(diff.map(|x| x.norm()).max())
}

/// Residual of the mirror relation
/// K_i^vee(zs, p, tau; weights) = P^{-1} K_{n+1-i}(zs reversed, p, tau; weights reversed) P.
pub fn mirror_residual(
    i: usize,
    cfg: &QkzbConfig,
    spec: GridSpec,
    pol: &TruncationPolicy,
) -> Result<Real> {
    let n = cfg.zs.len();
    let vee = k_matrix(i, cfg, spec, true, pol)?;

    // The mirrored K acts on the reversed tensor order with tau and p
    // swapped relative to the K_j signature.
    let mut rev_zs = cfg.zs.clone();
    rev_zs.reverse();
    let rev_cfg = QkzbConfig {
        zs: rev_zs,
        tau: cfg.p,
        p: cfg.tau,
        eta: cfg.eta,
        weights: cfg.weights.reversed(),
    };
    let mirrored = k_matrix(n - 1 - i, &rev_cfg, spec, false, pol)?;

    // Permutation on basis positions induced by index reversal, extended
    // blockwise over the grid.
    let basis = zero_weight_basis(&cfg.weights, cfg.weights.all_integer());
    let rev_basis = zero_weight_basis(&cfg.weights.reversed(), cfg.weights.all_integer());
    let dim = basis.len();
    let perm: Vec<usize> = basis
        .iter()
        .map(|idx| {
            let mut r = idx.clone();
            r.reverse();
            rev_basis.iter().position(|b| b == &r).expect("reversal stays in basis")
        })
        .collect();

    let total = spec.len() * dim;
    let mut conjugated = DMatrix::from_element(total, total, ZERO);
    for k2 in 0..spec.len() {
        for p2 in 0..dim {
            for k in 0..spec.len() {
                for pz in 0..dim {
                    conjugated[(k2 * dim + p2, k * dim + pz)] =
                        mirrored[(k2 * dim + perm[p2], k * dim + perm[pz])];
                }
            }
        }
    }
    Ok((vee - conjugated).map(|x| x.norm()).max())
}

/// Relative residuals of the two commutation identities
///
/// alpha (D_j^vee)^{-1} K_j(zs, tau, p + tau) = K_j(zs, tau, p) alpha e^{-pi i eta Lambda_j sum_{l != j} Lambda_l},
/// alpha (D_j)^{-1} K_j^vee(zs, p, tau + p) = K_j^vee(zs, p, tau) alpha e^{-pi i eta Lambda_j sum_{l != j} Lambda_l},
///
/// measured on constant and oscillating test functions at sample points.
pub fn lemma16_identity_residuals(
    j: usize,
    cfg: &QkzbConfig,
    pol: &TruncationPolicy,
) -> Result<(Real, Real)> {
    let basis = zero_weight_basis(&cfg.weights, cfg.weights.all_integer());
    let n = cfg.weights.n();
    let phase = exp_pi_i(
        -cfg.eta
            * cfg.weights.lambda(j)
            * (0..n).filter(|&l| l != j).map(|l| cfg.weights.lambda(l)).sum::<Real>(),
    );
    let samples = [c(0.31, 0.05), c(-0.47, 0.11), c(0.83, -0.04)];

    let run = |mirror: bool| -> Result<Real> {
        let extended = QkzbConfig {
            tau: cfg.tau,
            p: if mirror { cfg.p } else { cfg.p + cfg.tau },
            ..cfg.clone()
        };
        let extended = if mirror {
            QkzbConfig { tau: cfg.tau + cfg.p, ..extended }
        } else {
            extended
        };
        let dkind = if mirror { DKind::D } else { DKind::DVee };
        let mut worst: Real = 0.0;
        for pos in 0..basis.len() {
            for oscillate in [false, true] {
                let b = basis.clone();
                let test = GridFunction::from_closure(cfg.weights.clone(), cfg.eta, move |lambda| {
                    let mut v = ZeroWeightVector::basis_vector(b.clone(), pos);
                    if oscillate {
                        let s = exp_pi_i(lambda);
                        for cseq in v.coeffs.iter_mut() {
                            *cseq *= s;
                        }
                    }
                    v
                });
                let lhs_fun = apply_k_general(j, &extended, &test, mirror, pol)?;

                let b = basis.clone();
                let eta = cfg.eta;
                let alpha_test =
                    GridFunction::from_closure(cfg.weights.clone(), cfg.eta, move |lambda| {
                        let mut v = ZeroWeightVector::basis_vector(b.clone(), pos);
                        if oscillate {
                            let s = exp_pi_i(lambda);
                            for cseq in v.coeffs.iter_mut() {
                                *cseq *= s;
                            }
                        }
                        let a = alpha_gauss(lambda, eta);
                        for cseq in v.coeffs.iter_mut() {
                            *cseq *= a;
                        }
                        v
                    });
                let rhs_fun = apply_k_general(j, cfg, &alpha_test, mirror, pol)?;

                for &lambda in &samples {
                    let dv = d_multiplier(j, lambda, dkind, &cfg.weights, cfg.eta);
                    let a = alpha_gauss(lambda, cfg.eta);
                    let lv = lhs_fun.eval(lambda)?;
                    let rv = rhs_fun.eval(lambda)?;
                    let mut num: Real = 0.0;
                    let mut den: Real = 0.0;
                    for (posn, (&lc, &rc)) in lv.coeffs.iter().zip(rv.coeffs.iter()).enumerate() {
                        let lhs = a / dv[posn] * lc;
                        let rhs = phase * rc;
                        num = num.max((lhs - rhs).norm());
                        den = den.max(lhs.norm().max(rhs.norm()));
                    }
                    worst = worst.max(num / den.max(1.0));
                }
            }
        }
        Ok(worst)
    };

    Ok((run(false)?, run(true)?))
}

/// Max of the two identity residuals of [`lemma16_identity_residuals`].
pub fn lemma16_residual(j: usize, cfg: &QkzbConfig, pol: &TruncationPolicy) -> Result<Real> {
    let (a, b) = lemma16_identity_residuals(j, cfg, pol)?;
    Ok(a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c;

    fn pol() -> TruncationPolicy {
        TruncationPolicy::default()
    }

    fn config_n2(eta: C) -> QkzbConfig {
        QkzbConfig::new(
            vec![c(0.1, 0.25), c(-0.3, 0.18)],
            c(0.15, 0.9),
            c(0.05, 0.7),
            eta,
            HighestWeights::new(vec![1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn rational_eta(n: usize) -> C {
        c(1.0 / (2.0 * n as Real), 0.0)
    }

    #[test]
    fn grid_indexing_and_periodicity() {
        let spec = GridSpec::new(5, DEFAULT_EPS);
        assert_eq!(spec.len(), 10);
        assert_eq!(spec.index_of(spec.lambda(3)).unwrap(), 3);
        // 2-periodic wrap: lambda_3 + 2 is the same grid point.
        assert_eq!(spec.index_of(spec.lambda(3) + 2.0).unwrap(), 3);
        assert!(spec.index_of(spec.lambda(3) + 0.01).is_err());
    }

    #[test]
    fn gamma_is_identity_on_weight_zero_slots() {
        // n = 1, Lambda = 2: the only zero-weight index is (1), with slot
        // weight 0, so Gamma_1 acts trivially.
        let w = HighestWeights::new(vec![2.0]).unwrap();
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let f = GridFunction::delta(w, rational_eta(5), spec, 3, 0);
        let g = gamma_shift(0, &f).unwrap();
        let (_, values) = g.grid_values().unwrap();
        assert_eq!(values[3].coeffs[0], crate::ONE);
        assert_eq!(values[2].coeffs[0], ZERO);
    }

    #[test]
    fn gamma_shifts_components_oppositely() {
        // n = 2, weights (1,1): slot-0 weights of (0,1) and (1,0) are +1
        // and -1, so the two coefficients shift one step in opposite
        // directions.
        let w = HighestWeights::new(vec![1.0, 1.0]).unwrap();
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let basis = zero_weight_basis(&w, true);
        let mut values = vec![ZeroWeightVector::zero(basis.clone()); spec.len()];
        for (k, v) in values.iter_mut().enumerate() {
            v.coeffs[0] = c(k as Real, 0.0);
            v.coeffs[1] = c(0.0, k as Real);
        }
        let f = GridFunction::from_grid(w, rational_eta(5), spec, values).unwrap();
        let g = gamma_shift(0, &f).unwrap();
        let (_, out) = g.grid_values().unwrap();
        // Component (0,1) carries slot-0 weight +1: f(lambda - 2 eta).
        assert_eq!(out[4].coeffs[0], c(3.0, 0.0));
        // Component (1,0) carries slot-0 weight -1: f(lambda + 2 eta).
        assert_eq!(out[4].coeffs[1], c(0.0, 5.0));
        // Wrap-around uses 2-periodicity.
        assert_eq!(out[0].coeffs[0], c(9.0, 0.0));
    }

    #[test]
    fn gamma_rejects_mismatched_grids() {
        let w = HighestWeights::new(vec![1.0, 1.0]).unwrap();
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let f = GridFunction::delta(w, c(0.11, 0.0), spec, 0, 0);
        assert!(matches!(gamma_shift(0, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn k_is_identity_for_a_single_marked_point() {
        let w = HighestWeights::new(vec![2.0]).unwrap();
        let cfg = QkzbConfig::new(vec![c(0.1, 0.25)], c(0.15, 0.9), c(0.05, 0.7), rational_eta(5), w.clone()).unwrap();
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let m = k_matrix(0, &cfg, spec, false, &pol()).unwrap();
        let mv = k_matrix(0, &cfg, spec, true, &pol()).unwrap();
        for mat in [m, mv] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    let want = if i == j { crate::ONE } else { ZERO };
                    assert!((mat[(i, j)] - want).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn k_matrices_are_finite_and_linear() {
        let cfg = config_n2(rational_eta(5));
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let m = k_matrix(0, &cfg, spec, false, &pol()).unwrap();
        assert!(m.iter().all(|x| x.re.is_finite() && x.im.is_finite()));

        // Linearity: K(a f + b g) = a K f + b K g on random grid data.
        let basis = zero_weight_basis(&cfg.weights, true);
        let mk = |seed: u64| {
            let mut state = seed;
            let mut values = Vec::new();
            for _ in 0..spec.len() {
                let mut v = ZeroWeightVector::zero(basis.clone());
                for cc in v.coeffs.iter_mut() {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let x = (state >> 11) as Real / (1u64 << 53) as Real - 0.5;
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let y = (state >> 11) as Real / (1u64 << 53) as Real - 0.5;
                    *cc = c(x, y);
                }
                values.push(v);
            }
            GridFunction::from_grid(cfg.weights.clone(), cfg.eta, spec, values).unwrap()
        };
        let (f, g) = (mk(17), mk(99));
        let (a, b) = (c(0.7, -0.2), c(-1.3, 0.4));
        let mut combo_values = Vec::new();
        let (_, fv) = f.grid_values().unwrap();
        let (_, gv) = g.grid_values().unwrap();
        for (x, y) in fv.iter().zip(gv.iter()) {
            let mut v = ZeroWeightVector::zero(basis.clone());
            for (pos, cc) in v.coeffs.iter_mut().enumerate() {
                *cc = a * x.coeffs[pos] + b * y.coeffs[pos];
            }
            combo_values.push(v);
        }
        let combo = GridFunction::from_grid(cfg.weights.clone(), cfg.eta, spec, combo_values).unwrap();
        let kf = apply_k(0, &cfg, &f, &pol()).unwrap();
        let kg = apply_k(0, &cfg, &g, &pol()).unwrap();
        let kc = apply_k(0, &cfg, &combo, &pol()).unwrap();
        let (_, kfv) = kf.grid_values().unwrap();
        let (_, kgv) = kg.grid_values().unwrap();
        let (_, kcv) = kc.grid_values().unwrap();
        for k in 0..spec.len() {
            for pos in 0..basis.len() {
                let want = a * kfv[k].coeffs[pos] + b * kgv[k].coeffs[pos];
                assert!((kcv[k].coeffs[pos] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn k_times_numerical_inverse_is_identity() {
        let cfg = config_n2(rational_eta(5));
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let m = k_matrix(1, &cfg, spec, false, &pol()).unwrap();
        let inv = m.clone().try_inverse().expect("K invertible at generic parameters");
        let prod = m * inv;
        let mut worst: Real = 0.0;
        for i in 0..prod.nrows() {
            for j in 0..prod.ncols() {
                let want = if i == j { crate::ONE } else { ZERO };
                worst = worst.max((prod[(i, j)] - want).norm());
            }
        }
        assert!(worst < 1e-8, "K K^-1 deviates from identity by {worst}");
    }

    #[test]
    fn qkzb_system_is_compatible_on_the_grid() {
        let cfg = config_n2(rational_eta(5));
        let spec = GridSpec::new(5, DEFAULT_EPS);
        let res = eq0_residual(0, 1, &cfg, spec, &pol()).unwrap();
        assert!(res < 1e-9, "compatibility residual {res}");
        let res_vee = eq0_vee_residual(0, 1, &cfg, spec, &pol()).unwrap();
        assert!(res_vee < 1e-9, "mirror compatibility residual {res_vee}");
    }

    #[test]
    fn mirror_relation_holds() {
        let cfg = config_n2(rational_eta(5));
        let spec = GridSpec::new(5, DEFAULT_EPS);
        for i in 0..2 {
            let res = mirror_residual(i, &cfg, spec, &pol()).unwrap();
            assert!(res < 1e-9, "mirror residual for slot {i}: {res}");
        }
    }

    #[test]
    fn d_multiplier_matches_direct_evaluation() {
        let w = HighestWeights::new(vec![2.0]).unwrap();
        let one = d_multiplier(0, c(0.3, 0.1), DKind::D, &w, c(0.04, -0.11));
        assert_eq!(one.len(), 1);
        assert!((one[0] - crate::ONE).norm() < 1e-14);

        // n = 2, weights (1,1), basis [(0,1),(1,0)]: on e_0 x e_1 the slot-2
        // weight is -1, so D_2 = alpha(mu)/alpha(mu + 2 eta) e^{pi i eta}.
        let w = HighestWeights::new(vec![1.0, 1.0]).unwrap();
        let (mu, eta) = (c(0.37, 0.09), c(0.04, -0.11));
        let d2 = d_multiplier(1, mu, DKind::D, &w, eta);
        let want = alpha_gauss(mu, eta) / alpha_gauss(mu + 2.0 * eta, eta) * exp_pi_i(eta);
        assert!((d2[0] - want).norm() < 1e-13);

        // Telescoping: D_j(mu) D_j^vee(mu) = e^{-2 pi i mu w_j} on each
        // basis vector, by cancellation of the alpha-ratios.
        for j in 0..2 {
            let d = d_multiplier(j, mu, DKind::D, &w, eta);
            let dv = d_multiplier(j, mu, DKind::DVee, &w, eta);
            let basis = zero_weight_basis(&w, true);
            for (pos, idx) in basis.iter().enumerate() {
                let wj = w.lambda(j) - 2.0 * idx[j] as Real;
                let want = crate::exp_2pi_i(-mu * wj);
                assert!(
                    (d[pos] * dv[pos] - want).norm() < 1e-12,
                    "telescoping fails at j={j}, pos={pos}"
                );
            }
        }
    }

    #[test]
    fn modulus_commutation_identities_hold() {
        // n = 1, Lambda = 2: both identities are scalar and exact.
        let w = HighestWeights::new(vec![2.0]).unwrap();
        let cfg = QkzbConfig::new(vec![c(0.1, 0.25)], c(0.15, 0.9), c(0.05, 0.7), c(0.04, -0.11), w).unwrap();
        let (a, b) = lemma16_identity_residuals(0, &cfg, &pol()).unwrap();
        assert!(a < 1e-9, "n=1 first identity: {a}");
        assert!(b < 1e-9, "n=1 second identity: {b}");

        // n = 2, weights (1,1), generic eta.
        let cfg = config_n2(c(0.04, -0.11));
        for j in 0..2 {
            let (a, b) = lemma16_identity_residuals(j, &cfg, &pol()).unwrap();
            assert!(a < 1e-8, "first identity at j={j}: {a}");
            assert!(b < 1e-8, "second identity at j={j}: {b}");
        }
    }
}
