//! Per-server load functions.
//!
//! A load function `f(l)` gives the average processing time of a request on a
//! server currently holding load `l`. Every function here is convex and
//! nondecreasing on `[0, l_max]`, and evaluation beyond `l_max` is an error.
//!
//! Besides `f` itself the balancing algorithms need the total processing time
//! `h(l) = l·f(l)` and its derivative, the marginal cost `g(l) = f(l) + l·f'(l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when validating convexity of measured samples.
pub const FIT_TOLERANCE: f64 = 1e-9;
/// Load tolerance of the budget bisection.
pub const BISECT_TOLERANCE: f64 = 1e-10;

/// Loads this close to a breakpoint (relative to the curve's span) count as
/// sitting on it when choosing a one-sided slope. Solvers stop near kinks up
/// to rounding, and the slope on the wrong side would misreport a large
/// imbalance there.
pub const KINK_SNAP: f64 = 1e-9;
/// Breakpoints this close to a step's end, relative to the curve's span, are
/// tried as exact targets.
pub const KINK_REACH: f64 = 1e-6;

/// The analytic family (or measured curve) behind a [`LoadFunction`].
#[derive(Debug, Clone, PartialEq)]
pub enum Kind {
    /// M/M/1 service time `1 / (mu - l)`.
    Queuing { mu: f64 },
    /// Batch flow time `l / (2 s)`.
    Batch { s: f64 },
    /// `a + b·l`.
    Affine { a: f64, b: f64 },
    /// Piecewise-linear interpolation of measured `(load, time)` samples.
    Empirical(PiecewiseLinear),
}

/// Convex, nondecreasing piecewise-linear curve starting at load zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl PiecewiseLinear {
    /// Builds the curve from breakpoints that are already sorted by load.
    ///
    /// If the first breakpoint lies above zero load, its segment is extended
    /// down to zero.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewSamples);
        }
        if points.iter().any(|(l, t)| !l.is_finite() || !t.is_finite()) {
            return Err(Error::InvalidParameter("sample is not finite".into()));
        }
        if points[0].0 < 0.0 {
            return Err(Error::InvalidParameter("sample load is negative".into()));
        }
        let mut slopes = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            let (l0, t0) = w[0];
            let (l1, t1) = w[1];
            if l1 <= l0 {
                return Err(Error::InvalidParameter(format!(
                    "sample loads must be strictly increasing ({l0} then {l1})"
                )));
            }
            slopes.push((t1 - t0) / (l1 - l0));
        }
        for (k, s) in slopes.iter().enumerate() {
            if *s < -FIT_TOLERANCE {
                return Err(Error::NotConvex(format!(
                    "time decreases between loads {} and {}",
                    points[k].0,
                    points[k + 1].0
                )));
            }
        }
        for (k, w) in slopes.windows(2).enumerate() {
            if w[1] < w[0] - FIT_TOLERANCE {
                return Err(Error::NotConvex(format!(
                    "slope drops from {} to {} at load {}",
                    w[0],
                    w[1],
                    points[k + 1].0
                )));
            }
        }
        let mut points = points;
        let mut slopes = slopes;
        if points[0].0 > 0.0 {
            let (l0, t0) = points[0];
            let at_zero = t0 - slopes[0] * l0;
            if at_zero < 0.0 {
                return Err(Error::InvalidParameter(
                    "extending the first segment to zero load gives a negative time".into(),
                ));
            }
            points.insert(0, (0.0, at_zero));
            slopes.insert(0, slopes[0]);
        }
        Ok(PiecewiseLinear { points, slopes })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn last_load(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Index of the segment `[p_k, p_{k+1})` containing `l` (last segment for `l` at the end).
    fn segment_right(&self, l: f64) -> usize {
        let k = self.points.partition_point(|p| p.0 <= l);
        k.saturating_sub(1).min(self.slopes.len() - 1)
    }

    /// Index of the segment `(p_k, p_{k+1}]` containing `l` (first segment at zero).
    fn segment_left(&self, l: f64) -> usize {
        let k = self.points.partition_point(|p| p.0 < l);
        k.saturating_sub(1).min(self.slopes.len() - 1)
    }

    /// Moves `l` onto a breakpoint closer than `KINK_SNAP` times the curve's span.
    fn snap(&self, l: f64) -> f64 {
        let eps = KINK_SNAP * self.last_load();
        let k = self.points.partition_point(|p| p.0 < l);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter_map(|k| self.points.get(k))
            .map(|p| p.0)
            .find(|x| (x - l).abs() <= eps)
            .unwrap_or(l)
    }

    fn value(&self, l: f64) -> f64 {
        let k = self.segment_right(l);
        let (l0, t0) = self.points[k];
        let (l1, t1) = self.points[k + 1];
        if l == l1 {
            // samples read back exactly
            return t1;
        }
        t0 + self.slopes[k] * (l - l0)
    }
}

/// Upper bounds on the first and second derivative of `f` over `[0, l_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub u1: f64,
    pub u2: f64,
}

/// A convex, nondecreasing load function restricted to `[0, l_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadFunction {
    kind: Kind,
    l_max: f64,
}

impl LoadFunction {
    pub fn new(kind: Kind, l_max: f64) -> Result<Self> {
        if !(l_max.is_finite() && l_max >= 0.0) {
            return Err(Error::InvalidParameter(format!("l_max must be finite and nonnegative, got {l_max}")));
        }
        match &kind {
            Kind::Queuing { mu } => {
                if !(mu.is_finite() && *mu > 0.0) {
                    return Err(Error::InvalidParameter(format!("queuing rate must be positive, got {mu}")));
                }
                if l_max >= *mu {
                    return Err(Error::InvalidParameter(format!(
                        "queuing l_max {l_max} must stay below the service rate {mu}"
                    )));
                }
            }
            Kind::Batch { s } => {
                if !(s.is_finite() && *s > 0.0) {
                    return Err(Error::InvalidParameter(format!("batch speed must be positive, got {s}")));
                }
            }
            Kind::Affine { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a >= 0.0 && *b >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "affine coefficients must be nonnegative, got a={a} b={b}"
                    )));
                }
            }
            Kind::Empirical(pw) => {
                if l_max > pw.last_load() {
                    return Err(Error::InvalidParameter(format!(
                        "l_max {l_max} exceeds the last measured load {}",
                        pw.last_load()
                    )));
                }
            }
        }
        Ok(LoadFunction { kind, l_max })
    }

    pub fn queuing(mu: f64, l_max: f64) -> Result<Self> {
        Self::new(Kind::Queuing { mu }, l_max)
    }

    pub fn batch(s: f64, l_max: f64) -> Result<Self> {
        Self::new(Kind::Batch { s }, l_max)
    }

    pub fn affine(a: f64, b: f64, l_max: f64) -> Result<Self> {
        Self::new(Kind::Affine { a, b }, l_max)
    }

    /// Builds the function with `l_max` chosen as the largest load whose
    /// processing time stays within `t_max`.
    pub fn with_budget(kind: Kind, t_max: f64) -> Result<Self> {
        let l_max = l_max_from_budget(&kind, t_max)?;
        Self::new(kind, l_max)
    }

    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    /// Breakpoints within `KINK_REACH` of `l`; none for the analytic families.
    pub fn kinks_near(&self, l: f64) -> impl Iterator<Item = f64> + '_ {
        let points = match &self.kind {
            Kind::Empirical(pw) => pw.points(),
            _ => &[],
        };
        let reach = points.last().map_or(0.0, |p| KINK_REACH * p.0);
        points.iter().map(|p| p.0).filter(move |p| (p - l).abs() <= reach)
    }

    fn check(&self, l: f64) -> Result<()> {
        if l >= 0.0 && l <= self.l_max {
            Ok(())
        } else {
            Err(Error::LoadOutOfRange { load: l, l_max: self.l_max })
        }
    }

    /// Average processing time `f(l)`.
    pub fn eval_f(&self, l: f64) -> Result<f64> {
        self.check(l)?;
        Ok(self.f(l))
    }

    /// `f'(l)`; for measured curves, the slope of the segment to the right of `l`.
    pub fn eval_derivative(&self, l: f64) -> Result<f64> {
        self.check(l)?;
        Ok(self.df(l))
    }

    /// `f''(l)`; zero almost everywhere for measured curves.
    pub fn eval_second_derivative(&self, l: f64) -> Result<f64> {
        self.check(l)?;
        Ok(match &self.kind {
            Kind::Queuing { mu } => 2.0 / (mu - l).powi(3),
            _ => 0.0,
        })
    }

    /// Marginal cost `g(l) = f(l) + l·f'(l)`, the derivative of [`eval_total`](Self::eval_total).
    pub fn eval_marginal(&self, l: f64) -> Result<f64> {
        self.check(l)?;
        Ok(self.g(l))
    }

    /// Total processing time `h(l) = l·f(l)`.
    pub fn eval_total(&self, l: f64) -> Result<f64> {
        self.check(l)?;
        Ok(self.h(l))
    }

    pub(crate) fn f(&self, l: f64) -> f64 {
        match &self.kind {
            Kind::Queuing { mu } => 1.0 / (mu - l),
            Kind::Batch { s } => l / (2.0 * s),
            Kind::Affine { a, b } => a + b * l,
            Kind::Empirical(pw) => pw.value(l),
        }
    }

    fn df(&self, l: f64) -> f64 {
        match &self.kind {
            Kind::Queuing { mu } => 1.0 / (mu - l).powi(2),
            Kind::Batch { s } => 0.5 / s,
            Kind::Affine { b, .. } => *b,
            Kind::Empirical(pw) => {
                if l >= self.l_max {
                    pw.slopes[pw.segment_left(l)]
                } else {
                    pw.slopes[pw.segment_right(l)]
                }
            }
        }
    }

    pub(crate) fn h(&self, l: f64) -> f64 {
        if l == 0.0 {
            0.0
        } else {
            l * self.f(l)
        }
    }

    pub(crate) fn g(&self, l: f64) -> f64 {
        match &self.kind {
            Kind::Queuing { mu } => mu / (mu - l).powi(2),
            Kind::Batch { s } => l / s,
            Kind::Affine { a, b } => a + 2.0 * b * l,
            Kind::Empirical(_) => self.f(l) + l * self.df(l),
        }
    }

    /// One-sided marginal cost when removing load at `l` (left derivative of `h`).
    pub(crate) fn g_below(&self, l: f64) -> f64 {
        match &self.kind {
            Kind::Empirical(pw) => pw.value(l) + l * pw.slopes[pw.segment_left(pw.snap(l))],
            _ => self.g(l),
        }
    }

    /// One-sided marginal cost when adding load at `l` (right derivative of `h`).
    pub(crate) fn g_above(&self, l: f64) -> f64 {
        match &self.kind {
            Kind::Empirical(pw) => pw.value(l) + l * pw.slopes[pw.segment_right(pw.snap(l))],
            _ => self.g(l),
        }
    }

    /// Upper bounds `U1 ≥ f'` and `U2 ≥ |f''|` over `[0, l_max]`.
    ///
    /// Exact for the analytic families. For measured curves `U1` is the steepest
    /// slope reached below `l_max` and `U2` the largest slope jump divided by the
    /// narrower of the two segments meeting at the kink.
    pub fn derivative_bounds(&self) -> DerivativeBounds {
        match &self.kind {
            Kind::Queuing { mu } => {
                let gap = mu - self.l_max;
                DerivativeBounds { u1: 1.0 / (gap * gap), u2: 2.0 / (gap * gap * gap) }
            }
            Kind::Batch { s } => DerivativeBounds { u1: 0.5 / s, u2: 0.0 },
            Kind::Affine { b, .. } => DerivativeBounds { u1: *b, u2: 0.0 },
            Kind::Empirical(pw) => {
                let last = pw.segment_left(self.l_max);
                let u1 = pw.slopes[last];
                let mut u2: f64 = 0.0;
                for k in 1..=last {
                    let jump = pw.slopes[k] - pw.slopes[k - 1];
                    let w_left = pw.points[k].0 - pw.points[k - 1].0;
                    let w_right = pw.points[k + 1].0 - pw.points[k].0;
                    u2 = u2.max(jump / w_left.min(w_right));
                }
                DerivativeBounds { u1, u2 }
            }
        }
    }
}

/// Fits a piecewise-linear load function through measured `(load, time)` samples.
///
/// Samples are sorted by load; `l_max` becomes the largest measured load.
pub fn fit_empirical(samples: &[(f64, f64)]) -> Result<LoadFunction> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples);
    }
    let mut points = samples.to_vec();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    if points.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::TooFewSamples);
    }
    let l_max = points[points.len() - 1].0;
    LoadFunction::new(Kind::Empirical(PiecewiseLinear::new(points)?), l_max)
}

/// Largest load whose processing time stays within `t_max`.
///
/// Found by bisection on load. Queuing functions stay strictly below their
/// service rate and measured curves below their last sample.
pub fn l_max_from_budget(kind: &Kind, t_max: f64) -> Result<f64> {
    let f = |l: f64| match kind {
        Kind::Queuing { mu } => 1.0 / (mu - l),
        Kind::Batch { s } => l / (2.0 * s),
        Kind::Affine { a, b } => a + b * l,
        Kind::Empirical(pw) => pw.value(l),
    };
    let at_zero = f(0.0);
    if at_zero > t_max {
        return Err(Error::BudgetUnreachable { at_zero, t_max });
    }
    let mut hi = match kind {
        Kind::Queuing { mu } => *mu,
        Kind::Empirical(pw) => {
            let end = pw.last_load();
            if f(end) <= t_max {
                return Ok(end);
            }
            end
        }
        Kind::Affine { b, .. } if *b == 0.0 => {
            return Err(Error::InvalidParameter(
                "constant load function never reaches a time budget; give l_max instead".into(),
            ))
        }
        _ => {
            let mut hi = 1.0;
            while f(hi) <= t_max {
                hi *= 2.0;
            }
            hi
        }
    };
    let mut lo = 0.0;
    while hi - lo > BISECT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        // Queuing: f is negative past the pole, so treat l >= mu as over budget.
        let over = match kind {
            Kind::Queuing { mu } if mid >= *mu => true,
            _ => f(mid) > t_max,
        };
        if over {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn evaluates_queuing_and_batch() {
        let q = LoadFunction::queuing(2.0, 1.5).unwrap();
        assert_eq!(q.eval_f(1.0).unwrap(), 1.0);
        assert!(matches!(q.eval_f(1.8), Err(Error::LoadOutOfRange { .. })));
        assert!(matches!(q.eval_f(-0.1), Err(Error::LoadOutOfRange { .. })));
        let b = LoadFunction::batch(1.0, 10.0).unwrap();
        assert_eq!(b.eval_f(4.0).unwrap(), 2.0);
    }

    #[test]
    fn marginal_and_total() {
        let q = LoadFunction::queuing(2.0, 1.5).unwrap();
        assert_eq!(q.eval_marginal(1.0).unwrap(), 2.0);
        assert!(close(q.eval_total(0.75).unwrap(), 0.6, 1e-15));
        assert_eq!(q.eval_marginal(0.0).unwrap(), q.eval_f(0.0).unwrap());
        let b = LoadFunction::batch(1.0, 10.0).unwrap();
        assert_eq!(b.eval_marginal(6.0).unwrap(), 6.0);
        assert_eq!(b.eval_total(6.0).unwrap(), 18.0);
        assert_eq!(b.eval_total(0.0).unwrap(), 0.0);
    }

    #[test]
    fn bounds_of_each_family() {
        let q = LoadFunction::queuing(2.0, 1.0).unwrap().derivative_bounds();
        assert_eq!((q.u1, q.u2), (1.0, 2.0));
        let b = LoadFunction::batch(1.0, 10.0).unwrap().derivative_bounds();
        assert_eq!((b.u1, b.u2), (0.5, 0.0));
        let a = LoadFunction::affine(1.0, 0.0, 10.0).unwrap().derivative_bounds();
        assert_eq!((a.u1, a.u2), (0.0, 0.0));
    }

    #[test]
    fn queuing_limit_must_stay_below_rate() {
        assert!(LoadFunction::queuing(2.0, 2.0).is_err());
    }

    #[test]
    fn fit_linear_samples() {
        let lf = fit_empirical(&[(4.0, 2.0), (0.0, 0.0), (2.0, 1.0)]).unwrap();
        assert_eq!(lf.l_max(), 4.0);
        assert_eq!(lf.eval_f(4.0).unwrap(), 2.0);
        assert_eq!(lf.eval_f(3.0).unwrap(), 1.5);
        let bounds = lf.derivative_bounds();
        assert_eq!((bounds.u1, bounds.u2), (0.5, 0.0));
    }

    #[test]
    fn fit_rejects_bad_samples() {
        assert!(matches!(
            fit_empirical(&[(0.0, 0.0), (2.0, 3.0), (4.0, 2.0)]),
            Err(Error::NotConvex(_))
        ));
        assert!(matches!(
            fit_empirical(&[(0.0, 0.0), (2.0, 2.0), (4.0, 3.0)]),
            Err(Error::NotConvex(_))
        ));
        assert!(matches!(fit_empirical(&[(0.0, 1.0)]), Err(Error::TooFewSamples)));
        assert!(matches!(fit_empirical(&[(1.0, 1.0), (1.0, 2.0)]), Err(Error::TooFewSamples)));
    }

    #[test]
    fn fit_flat_samples() {
        let lf = fit_empirical(&[(0.0, 1.0), (10.0, 1.0)]).unwrap();
        assert_eq!(lf.eval_f(7.0).unwrap(), 1.0);
        assert_eq!(lf.derivative_bounds().u1, 0.0);
    }

    #[test]
    fn fit_extends_first_segment_to_zero() {
        let lf = fit_empirical(&[(1.0, 1.5), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_eq!(lf.eval_f(0.0).unwrap(), 1.0);
        assert_eq!(lf.eval_f(1.0).unwrap(), 1.5);
    }

    #[test]
    fn kinked_marginals_are_one_sided() {
        let lf = fit_empirical(&[(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(lf.g_below(1.0), 2.0);
        assert_eq!(lf.g_above(1.0), 3.0);
        // slope jump 1 over segments of width 1
        assert_eq!(lf.derivative_bounds().u2, 1.0);
    }

    #[test]
    fn budget_bisection() {
        let l = l_max_from_budget(&Kind::Queuing { mu: 2.0 }, 1.0).unwrap();
        assert!(close(l, 1.0, 1e-9));
        let l = l_max_from_budget(&Kind::Batch { s: 1.0 }, 5.0).unwrap();
        assert!(close(l, 10.0, 1e-9));
        let l = l_max_from_budget(&Kind::Queuing { mu: 2.0 }, 0.5).unwrap();
        assert!(close(l, 0.0, 1e-9));
        assert!(matches!(
            l_max_from_budget(&Kind::Queuing { mu: 2.0 }, 0.4),
            Err(Error::BudgetUnreachable { .. })
        ));
        assert!(l_max_from_budget(&Kind::Affine { a: 1.0, b: 0.0 }, 2.0).is_err());
    }

    #[test]
    fn budget_on_measured_curve_caps_at_last_sample() {
        let pw = PiecewiseLinear::new(vec![(0.0, 0.0), (2.0, 1.0), (4.0, 3.0)]).unwrap();
        let l = l_max_from_budget(&Kind::Empirical(pw.clone()), 2.0).unwrap();
        assert!(close(l, 3.0, 1e-9));
        assert_eq!(l_max_from_budget(&Kind::Empirical(pw), 10.0).unwrap(), 4.0);
    }
}
