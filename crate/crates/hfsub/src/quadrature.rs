//! Adaptive Gauss-Legendre quadrature over piecewise smooth integrands.
//!
//! The rule never evaluates interval endpoints, so integrands may be
//! discontinuous exactly at the supplied breakpoints.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 40;
const MAX_EVALS: usize = 2_000_000;

const NODES: [f64; 5] = [
    0.0,
    0.538_469_310_105_683_1,
    -0.538_469_310_105_683_1,
    0.906_179_845_938_664,
    -0.906_179_845_938_664,
];
const WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
    0.236_926_885_056_189_08,
];

fn gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * NODES
        .iter()
        .zip(WEIGHTS.iter())
        .map(|(x, w)| w * f(c + h * x))
        .sum::<f64>()
}

/// Integrates `f` over `[min(breaks), max(breaks)]`, splitting at every breakpoint.
///
/// `tol` is an absolute tolerance for the whole integral.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> Result<f64> {
    let mut b: Vec<f64> = breaks.iter().copied().filter(|x| x.is_finite()).collect();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    if b.len() < 2 {
        return Ok(0.0);
    }
    let span = b[b.len() - 1] - b[0];
    let mut budget = MAX_EVALS;
    let mut total = 0.0;
    for w in b.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let whole = gauss(f, lo, hi);
        total += refine(
            f,
            lo,
            hi,
            whole,
            tol * (hi - lo) / span,
            MAX_DEPTH,
            &mut budget,
        )?;
    }
    Ok(total)
}

fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = gauss(f, a, m);
    let right = gauss(f, m, b);
    *budget = budget.saturating_sub(10);
    if (left + right - whole).abs() <= tol {
        return Ok(left + right);
    }
    if depth == 0 || *budget == 0 {
        return Err(Error::QuadratureFailure {
            tol,
            detail: format!("no convergence on [{a}, {b}]"),
        });
    }
    Ok(refine(f, a, m, left, 0.5 * tol, depth - 1, budget)?
        + refine(f, m, b, right, 0.5 * tol, depth - 1, budget)?)
}
