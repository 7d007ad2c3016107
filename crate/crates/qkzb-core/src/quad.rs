//! Quadrature: Gauss-Legendre rules of arbitrary order and piecewise
//! contours in the complex plane built from line segments and circular
//! arcs, with a node/weight view that lets operators tabulate expensive
//! integrand factors once per contour.

use crate::{c, C, Real, ZERO};
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre polynomial P_n with the
/// Chebyshev-like initial guess cos(pi (i + 3/4) / (n + 1/2)); accurate to
/// machine precision for the orders used here (n <= 4096). Results are
/// cached per order.
pub fn gauss_legendre(n: usize) -> Arc<Vec<(Real, Real)>> {
    static CACHE: Lazy<Mutex<HashMap<usize, Arc<Vec<(Real, Real)>>>>> =
        Lazy::new(|| Mutex::new(HashMap::new()));
    if let Some(rule) = CACHE.lock().unwrap().get(&n) {
        return rule.clone();
    }
    let rule = Arc::new(compute_gauss_legendre(n));
    CACHE.lock().unwrap().insert(n, rule.clone());
    rule
}

fn compute_gauss_legendre(n: usize) -> Vec<(Real, Real)> {
    assert!(n >= 1, "quadrature order must be positive");
    let mut rule = Vec::with_capacity(n);
    // Roots come in +/- pairs; find those in [0, 1) and mirror.
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as Real + 0.75) / (n as Real + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (p2, d2) = legendre_with_deriv(n, x);
                dp = d2;
                x -= p2 / d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((-x, w));
        if x != 0.0 {
            rule.push((x, w));
        }
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// Value and derivative of the Legendre polynomial P_n at x via the
/// three-term recurrence.
fn legendre_with_deriv(n: usize, x: Real) -> (Real, Real) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as Real;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as Real * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// One piece of a contour.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub enum Segment {
    /// Straight segment from `from` to `to`.
    Line { from: C, to: C },
    /// Circular arc around `center` traversed from `from_angle` to
    /// `to_angle` (radians, counterclockwise when increasing).
    Arc { center: C, radius: Real, from_angle: Real, to_angle: Real },
}

/// A piecewise contour in the complex plane with a Gauss-Legendre rule of
/// `nodes_per_segment` points on every piece.
#[derive(Clone, Debug)]
pub struct Contour {
    pub segments: Vec<Segment>,
    pub nodes_per_segment: usize,
}

impl Contour {
    /// Straight path from `a` to `b` with an n-point rule.
    pub fn line(a: C, b: C, n: usize) -> Self {
        Contour { segments: vec![Segment::Line { from: a, to: b }], nodes_per_segment: n }
    }

    /// Straight path from `a` to `b` split into `panels` equal pieces with
    /// an n-point rule on each.
    pub fn panelled_line(a: C, b: C, panels: usize, n: usize) -> Self {
        assert!(panels >= 1);
        let mut segments = Vec::with_capacity(panels);
        for k in 0..panels {
            let s0 = k as Real / panels as Real;
            let s1 = (k + 1) as Real / panels as Real;
            segments.push(Segment::Line { from: a + (b - a) * s0, to: a + (b - a) * s1 });
        }
        Contour { segments, nodes_per_segment: n }
    }

    /// Append another segment, consuming and returning self.
    pub fn then(mut self, seg: Segment) -> Self {
        self.segments.push(seg);
        self
    }

    /// Same path with `factor` times as many nodes per segment.
    pub fn refined(&self, factor: usize) -> Self {
        Contour {
            segments: self.segments.clone(),
            nodes_per_segment: self.nodes_per_segment * factor,
        }
    }

    /// Quadrature nodes as (point, weight) pairs, where the weight already
    /// contains the complex line element dz, so that the integral of f is
    /// the plain sum of f(point) * weight.
    pub fn nodes(&self) -> Vec<(C, C)> {
        let rule = gauss_legendre(self.nodes_per_segment);
        let mut out = Vec::with_capacity(self.segments.len() * self.nodes_per_segment);
        for seg in &self.segments {
            match *seg {
                Segment::Line { from, to } => {
                    let half = (to - from) * 0.5;
                    let mid = (to + from) * 0.5;
                    for &(x, w) in rule.iter() {
                        out.push((mid + half * x, half * w));
                    }
                }
                Segment::Arc { center, radius, from_angle, to_angle } => {
                    let half = (to_angle - from_angle) * 0.5;
                    let mid = (to_angle + from_angle) * 0.5;
                    for &(x, w) in rule.iter() {
                        let ang = mid + half * x;
                        let point = center + c(radius, 0.0) * c(ang.cos(), ang.sin());
                        // dz = i r e^{i ang} d ang
                        let dz = crate::I * c(radius, 0.0) * c(ang.cos(), ang.sin()) * (half * w);
                        out.push((point, dz));
                    }
                }
            }
        }
        out
    }

    /// Integrate a function along the contour.
    pub fn integrate<F: Fn(C) -> C>(&self, f: F) -> C {
        self.nodes().iter().fold(ZERO, |acc, &(z, w)| acc + f(z) * w)
    }
}
