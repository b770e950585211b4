//! Adaptive Gauss–Legendre integration and Gauss–Hermite expectations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

const LOW_ORDER: usize = 12;
const MAX_INTERVALS: usize = 5_000;
const INITIAL_PANELS: usize = 8;

struct Rules {
    low: Vec<(f64, f64)>,
    high: Vec<(f64, f64)>,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let pairs = |n: usize| {
            GaussLegendre::new(NonZeroUsize::new(n).unwrap())
                .as_node_weight_pairs()
                .to_vec()
        };
        Rules { low: pairs(LOW_ORDER), high: pairs(2 * LOW_ORDER) }
    })
}

fn apply(rule: &[(f64, f64)], a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    half * rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>()
}

struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive bisection: the panel with the largest 12/24-point
/// Gauss–Legendre discrepancy is split until the summed discrepancy is below
/// `max(abs_tol, rel_tol·|I|)`.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let r = rules();
    let span = (b - a).abs();
    let eval = |lo: f64, hi: f64| -> Result<Panel> {
        let fine = apply(&r.high, lo, hi, &f);
        if !fine.is_finite() {
            return Err(Error::Numeric {
                what: format!("non-finite integrand on [{lo}, {hi}]"),
                residual: f64::INFINITY,
            });
        }
        let err = (fine - apply(&r.low, lo, hi, &f)).abs();
        Ok(Panel { lo, hi, value: fine, error: err })
    };
    let mut heap = BinaryHeap::new();
    let h = (b - a) / INITIAL_PANELS as f64;
    for i in 0..INITIAL_PANELS {
        let hi = if i + 1 == INITIAL_PANELS { b } else { a + h * (i + 1) as f64 };
        heap.push(eval(a + h * i as f64, hi)?);
    }
    loop {
        let value: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Estimate { value, error });
        }
        let worst = heap.pop().expect("heap is never empty");
        if (worst.hi - worst.lo).abs() <= 1e-13 * span || heap.len() >= MAX_INTERVALS {
            // no further refinement possible
            if error <= 1e3 * f64::EPSILON * value.abs() {
                return Ok(Estimate { value, error });
            }
            return Err(Error::Numeric {
                what: format!("adaptive quadrature on [{a}, {b}] did not converge"),
                residual: error,
            });
        }
        let mid = 0.5 * (worst.lo + worst.hi);
        heap.push(eval(worst.lo, mid)?);
        heap.push(eval(mid, worst.hi)?);
    }
}

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)`: `Σ w_i f(z_i)` with `Σ w_i = 1`.
pub fn normal_rule(order: usize) -> Vec<(f64, f64)> {
    let gh = GaussHermite::new(NonZeroUsize::new(order.max(1)).unwrap());
    let norm = std::f64::consts::PI.sqrt();
    gh.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / norm))
        .collect()
}

/// Expectation of `f` over a `dim`-dimensional standard normal vector via a
/// tensor-product rule of the given per-axis order.
pub fn normal_expectation(dim: usize, order: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let rule = normal_rule(order);
    let n = rule.len();
    let mut counter = vec![0usize; dim];
    let mut z = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for (slot, &c) in z.iter_mut().zip(&counter) {
            *slot = rule[c].0;
            w *= rule[c].1;
        }
        total += w * f(&z);
        // odometer increment
        let mut axis = dim;
        loop {
            if axis == 0 {
                return total;
            }
            axis -= 1;
            counter[axis] += 1;
            if counter[axis] < n {
                break;
            }
            counter[axis] = 0;
        }
    }
}
