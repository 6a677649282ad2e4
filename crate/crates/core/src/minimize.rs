//! One-dimensional convex minimization by derivative bisection.

/// Minimizes a convex `f` over `[lo, hi]` given its right derivative `df`.
///
/// `df` only needs to be nondecreasing, so kinks (jumps in `df`) are fine.
/// The result is within `tol` of a minimizer and never worse than `f(lo)`.
pub(crate) fn argmin_convex(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> f64 {
    if hi <= lo || df(lo) >= 0.0 {
        return lo;
    }
    if df(hi) < 0.0 {
        // still descending at the end, possibly of an interval below `tol`
        return hi;
    }
    // invariant: df(a) < 0, minimizer in [a, b]
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if df(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    // ties go to `b`: the minimizer is in `[a, b]` and `b` makes progress
    if f(b) <= f(a) {
        b
    } else {
        a
    }
}

/// Replaces `x` by the first candidate in `[lo, hi]` that is a minimizer by
/// its one-sided derivatives `dl` (left) and `dr` (right).
///
/// Bisection on a snapped derivative stops where the snap starts, just short
/// of a breakpoint; the exact minimizer is then the breakpoint itself.
pub(crate) fn prefer_kinks(
    dl: impl Fn(f64) -> f64,
    dr: impl Fn(f64) -> f64,
    x: f64,
    lo: f64,
    hi: f64,
    mut candidates: impl Iterator<Item = f64>,
) -> f64 {
    candidates
        .find(|&c| c >= lo && c <= hi && (c == lo || dl(c) <= 0.0) && (c == hi || dr(c) >= 0.0))
        .unwrap_or(x)
}
