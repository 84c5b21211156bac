//! Grid-based smooth curves on a common interval.
//!
//! A [`Curve`] stores values on a [`TimeGrid`] together with a natural cubic
//! interpolant, so it can be evaluated and differentiated anywhere in `[a, b]`
//! and integrated against other curves by trapezoid quadrature.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::warp::WarpFn;

/// Default number of quadrature nodes for L2 inner products.
pub const DEFAULT_QUAD_POINTS: usize = 501;

/// Relative slack allowed when clamping arguments to the domain; absorbs
/// floating-point overshoot from warp evaluation and root finding.
const DOMAIN_SLACK: f64 = 1e-7;

/// A strictly increasing grid of time points spanning `[a, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid from explicit points. Requires at least 4 strictly
    /// increasing finite points (cubic interpolation needs 4).
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Contract(format!(
                "time grid needs at least 4 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Contract("time grid contains non-finite points".into()));
        }
        for w in points.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Contract(format!(
                    "time grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { points })
    }

    /// Uniform grid of `m` points on `[a, b]`.
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Contract(format!("invalid interval [{a}, {b}]")));
        }
        if m < 4 {
            return Err(Error::Contract(format!("grid needs at least 4 points, got {m}")));
        }
        let h = (b - a) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| a + h * j as f64).collect();
        points[m - 1] = b;
        Ok(Self { points })
    }

    pub fn a(&self) -> f64 {
        self.points[0]
    }

    pub fn b(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn span(&self) -> f64 {
        self.b() - self.a()
    }

    /// Refines the grid by splitting every interval into `factor` equal parts.
    pub fn refine(&self, factor: usize) -> TimeGrid {
        let factor = factor.max(1);
        let mut points = Vec::with_capacity((self.len() - 1) * factor + 1);
        for w in self.points.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            for s in 0..factor {
                points.push(w[0] + h * s as f64);
            }
        }
        points.push(self.b());
        TimeGrid { points }
    }

    /// Trapezoid quadrature weights for this grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let m = self.len();
        let mut w = vec![0.0; m];
        for j in 0..m - 1 {
            let h = self.points[j + 1] - self.points[j];
            w[j] += 0.5 * h;
            w[j + 1] += 0.5 * h;
        }
        w
    }
}

/// A smooth function on `[a, b]`: values on a grid plus a natural cubic
/// interpolant through them.
#[derive(Clone, Debug)]
pub struct Curve {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    /// Second derivatives of the natural cubic spline at the grid nodes.
    second_derivs: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "curve has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("curve values must be finite".into()));
        }
        let second_derivs = natural_spline_second_derivs(grid.points(), &values);
        Ok(Self { grid, values, second_derivs })
    }

    /// Samples a function on the given grid.
    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Curve::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn a(&self) -> f64 {
        self.grid.a()
    }

    pub fn b(&self) -> f64 {
        self.grid.b()
    }

    fn clamp_arg(&self, t: f64) -> Result<f64> {
        let (a, b) = (self.a(), self.b());
        let slack = DOMAIN_SLACK * self.grid.span();
        if t < a - slack || t > b + slack {
            return Err(Error::Domain(format!(
                "argument {t} outside curve domain [{a}, {b}]"
            )));
        }
        Ok(t.clamp(a, b))
    }

    fn segment(&self, t: f64) -> usize {
        let pts = self.grid.points();
        // index of the segment [pts[j], pts[j+1]] containing t
        let j = pts.partition_point(|&p| p <= t);
        j.saturating_sub(1).min(pts.len() - 2)
    }

    fn eval_segment(&self, j: usize, t: f64) -> f64 {
        let pts = self.grid.points();
        let h = pts[j + 1] - pts[j];
        let alpha = (pts[j + 1] - t) / h;
        let beta = (t - pts[j]) / h;
        alpha * self.values[j]
            + beta * self.values[j + 1]
            + ((alpha * alpha * alpha - alpha) * self.second_derivs[j]
                + (beta * beta * beta - beta) * self.second_derivs[j + 1])
                * h
                * h
                / 6.0
    }

    fn deriv_segment(&self, j: usize, t: f64) -> f64 {
        let pts = self.grid.points();
        let h = pts[j + 1] - pts[j];
        let alpha = (pts[j + 1] - t) / h;
        let beta = (t - pts[j]) / h;
        (self.values[j + 1] - self.values[j]) / h
            - (3.0 * alpha * alpha - 1.0) * h * self.second_derivs[j] / 6.0
            + (3.0 * beta * beta - 1.0) * h * self.second_derivs[j + 1] / 6.0
    }

    /// Interpolant value at `t`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let t = self.clamp_arg(t)?;
        Ok(self.eval_segment(self.segment(t), t))
    }

    /// First derivative of the interpolant at `t`.
    pub fn deriv(&self, t: f64) -> Result<f64> {
        let t = self.clamp_arg(t)?;
        Ok(self.deriv_segment(self.segment(t), t))
    }

    /// Value or first derivative, selected by `order` (0 or 1).
    pub fn eval_order(&self, t: f64, order: u8) -> Result<f64> {
        match order {
            0 => self.eval(t),
            1 => self.deriv(t),
            _ => Err(Error::Contract(format!("derivative order {order} not supported"))),
        }
    }

    /// Evaluates the curve at a non-decreasing sequence of arguments,
    /// walking the segments forward instead of binary-searching each one.
    /// Arguments are clamped to the domain with the usual slack.
    pub fn eval_sorted_into(&self, ts: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(ts.len(), out.len());
        let pts = self.grid.points();
        let mut j = 0usize;
        for (k, &raw) in ts.iter().enumerate() {
            let t = self.clamp_arg(raw)?;
            while j + 2 < pts.len() && pts[j + 1] <= t {
                j += 1;
            }
            out[k] = self.eval_segment(j, t);
        }
        Ok(())
    }

    /// Same walk-forward evaluation for the first derivative.
    pub fn deriv_sorted_into(&self, ts: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(ts.len(), out.len());
        let pts = self.grid.points();
        let mut j = 0usize;
        for (k, &raw) in ts.iter().enumerate() {
            let t = self.clamp_arg(raw)?;
            while j + 2 < pts.len() && pts[j + 1] <= t {
                j += 1;
            }
            out[k] = self.deriv_segment(j, t);
        }
        Ok(())
    }

    /// The curve `t -> f(g(t))` sampled on this curve's grid; `g` must map
    /// `[a, b]` into `[a, b]`.
    pub fn compose_fn(&self, g: impl Fn(f64) -> f64) -> Result<Curve> {
        let values = self
            .grid
            .points()
            .iter()
            .map(|&t| self.eval(g(t)))
            .collect::<Result<Vec<_>>>()?;
        Curve::new(self.grid.clone(), values)
    }
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn natural_spline_second_derivs(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the tridiagonal system; natural ends pin m[0] and
    // m[n-1] at zero.
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for j in 1..n - 1 {
        let h0 = x[j] - x[j - 1];
        let h1 = x[j + 1] - x[j];
        diag[j] = (h0 + h1) / 3.0;
        upper[j] = h1 / 6.0;
        rhs[j] = (y[j + 1] - y[j]) / h1 - (y[j] - y[j - 1]) / h0;
    }
    for j in 2..n - 1 {
        let h0 = x[j] - x[j - 1];
        let lower = h0 / 6.0;
        let w = lower / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    for j in (1..n - 1).rev() {
        m[j] = (rhs[j] - upper[j] * m[j + 1]) / diag[j];
    }
    m
}

/// A quadrature grid: nodes with trapezoid weights, typically a uniform
/// refinement of a working [`TimeGrid`].
#[derive(Clone, Debug)]
pub struct QuadGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Index of each original working-grid node inside `nodes`.
    working_index: Vec<usize>,
}

impl QuadGrid {
    /// Refines `grid` by splitting every interval into `factor` parts.
    pub fn refine_grid(grid: &TimeGrid, factor: usize) -> Self {
        let factor = factor.max(1);
        let refined = grid.refine(factor);
        let weights = refined.trapezoid_weights();
        let working_index = (0..grid.len()).map(|g| g * factor).collect();
        Self { nodes: refined.points().to_vec(), weights, working_index }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Positions of the original working-grid nodes within this grid.
    pub fn working_index(&self) -> &[usize] {
        &self.working_index
    }

    /// Weighted dot product `sum_v w_v f_v g_v`.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for v in 0..self.nodes.len() {
            acc += self.weights[v] * f[v] * g[v];
        }
        acc
    }

    /// Weighted squared norm.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.dot(f, f)
    }

    /// Cumulative trapezoid integral of `f` from the left endpoint to every
    /// node; `out[0] = 0`.
    pub fn cumtrapz_into(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.nodes.len());
        debug_assert_eq!(out.len(), self.nodes.len());
        out[0] = 0.0;
        let mut acc = 0.0;
        for v in 1..self.nodes.len() {
            acc += 0.5 * (self.nodes[v] - self.nodes[v - 1]) * (f[v - 1] + f[v]);
            out[v] = acc;
        }
    }
}

/// A shared-grid sample of `n >= 1` curves.
#[derive(Clone, Debug)]
pub struct CurveSample {
    grid: Arc<TimeGrid>,
    curves: Vec<Curve>,
}

impl CurveSample {
    pub fn new(curves: Vec<Curve>) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::Contract("curve sample must contain at least one curve".into()))?;
        let grid = first.grid().clone();
        for (i, c) in curves.iter().enumerate() {
            if c.grid().points() != grid.points() {
                return Err(Error::Contract(format!(
                    "curve {i} does not share the sample grid"
                )));
            }
        }
        Ok(Self { grid, curves })
    }

    /// Builds a sample from a shared grid and one value column per curve.
    pub fn from_columns(grid: Arc<TimeGrid>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let curves = columns
            .into_iter()
            .map(|v| Curve::new(grid.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        CurveSample::new(curves)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn curve(&self, i: usize) -> &Curve {
        &self.curves[i]
    }

    /// Pointwise sample mean as a curve on the shared grid.
    pub fn mean(&self) -> Curve {
        let m = self.grid.len();
        let mut values = vec![0.0; m];
        for c in &self.curves {
            for (v, cv) in values.iter_mut().zip(c.values()) {
                *v += cv;
            }
        }
        let n = self.curves.len() as f64;
        for v in &mut values {
            *v /= n;
        }
        Curve::new(self.grid.clone(), values).expect("mean of valid curves is valid")
    }
}

/// Merges the grids of `f` and `g` and refines the union until it has at
/// least `quad_points` nodes.
fn union_quadrature_grid(f: &Curve, g: &Curve, quad_points: usize) -> Result<Vec<f64>> {
    let (af, bf) = (f.a(), f.b());
    let (ag, bg) = (g.a(), g.b());
    let slack = DOMAIN_SLACK * f.grid().span();
    if (af - ag).abs() > slack || (bf - bg).abs() > slack {
        return Err(Error::Domain(format!(
            "curves live on different intervals [{af}, {bf}] vs [{ag}, {bg}]"
        )));
    }
    let mut union: Vec<f64> = f
        .grid()
        .points()
        .iter()
        .chain(g.grid().points().iter())
        .copied()
        .collect();
    union.sort_by(|a, b| a.partial_cmp(b).unwrap());
    union.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON * f.grid().span());
    if union.len() >= quad_points {
        return Ok(union);
    }
    let factor = (quad_points - 1).div_ceil(union.len() - 1);
    let mut grid = Vec::with_capacity((union.len() - 1) * factor + 1);
    for w in union.windows(2) {
        let h = (w[1] - w[0]) / factor as f64;
        for s in 0..factor {
            grid.push(w[0] + h * s as f64);
        }
    }
    grid.push(*union.last().unwrap());
    Ok(grid)
}

/// L2 inner product by composite trapezoid quadrature at a given resolution,
/// with the Euler-Maclaurin endpoint correction (exact through cubic
/// integrands, O(h^4) for smooth ones).
pub fn inner_product_with(f: &Curve, g: &Curve, quad_points: usize) -> Result<f64> {
    let nodes = union_quadrature_grid(f, g, quad_points)?;
    let mut fv = vec![0.0; nodes.len()];
    let mut gv = vec![0.0; nodes.len()];
    f.eval_sorted_into(&nodes, &mut fv)?;
    g.eval_sorted_into(&nodes, &mut gv)?;
    let mut acc = 0.0;
    let mut uniform = true;
    let h0 = nodes[1] - nodes[0];
    for j in 0..nodes.len() - 1 {
        let h = nodes[j + 1] - nodes[j];
        if (h - h0).abs() > 1e-12 * h0 {
            uniform = false;
        }
        acc += 0.5 * h * (fv[j] * gv[j] + fv[j + 1] * gv[j + 1]);
    }
    if uniform {
        let (a, b) = (nodes[0], *nodes.last().unwrap());
        let da = f.deriv(a)? * g.eval(a)? + f.eval(a)? * g.deriv(a)?;
        let db = f.deriv(b)? * g.eval(b)? + f.eval(b)? * g.deriv(b)?;
        acc -= h0 * h0 / 12.0 * (db - da);
    }
    Ok(acc)
}

/// L2 inner product at the default quadrature resolution.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    inner_product_with(f, g, DEFAULT_QUAD_POINTS)
}

/// L2 norm `sqrt(<f, f>)`.
pub fn l2_norm(f: &Curve) -> f64 {
    inner_product(f, f).expect("inner product of a curve with itself").max(0.0).sqrt()
}

/// Composes a curve with a warp from the Hermite family: `t -> f(w(t))`.
pub fn compose_warp(f: &Curve, w: &WarpFn) -> Result<Curve> {
    let slack = DOMAIN_SLACK * f.grid().span();
    if (w.domain().0 - f.a()).abs() > slack || (w.domain().1 - f.b()).abs() > slack {
        return Err(Error::Domain("warp domain does not match curve domain".into()));
    }
    if !w.is_strictly_increasing() {
        return Err(Error::Domain("warp is not strictly increasing".into()));
    }
    f.compose_fn(|t| w.eval(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_grid(m: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(0.0, 1.0, m).unwrap())
    }

    #[test]
    fn constant_curve_eval_and_deriv() {
        let grid = unit_grid(11);
        let c = Curve::from_fn(grid, |_| 2.5).unwrap();
        for &t in &[0.0, 0.13, 0.5, 0.99, 1.0] {
            assert_abs_diff_eq!(c.eval(t).unwrap(), 2.5, epsilon = 1e-14);
            assert_abs_diff_eq!(c.deriv(t).unwrap(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn eval_reproduces_grid_values_exactly() {
        let grid = unit_grid(21);
        let c = Curve::from_fn(grid.clone(), |t| (3.0 * t).sin() + t * t).unwrap();
        for (j, &t) in grid.points().iter().enumerate() {
            assert_eq!(c.eval(t).unwrap(), c.values()[j]);
        }
    }

    #[test]
    fn sine_eval_close_to_closed_form() {
        let grid = unit_grid(101);
        let c = Curve::from_fn(grid, |t| (2.0 * PI * t).sin()).unwrap();
        assert_abs_diff_eq!(c.eval(0.25).unwrap(), 1.0, epsilon = 1e-6);
        // derivative oracle: 2*pi*cos(2*pi*t)
        assert_abs_diff_eq!(c.deriv(0.5).unwrap(), -2.0 * PI, epsilon = 1e-3);
    }

    #[test]
    fn eval_outside_domain_errors() {
        let grid = unit_grid(11);
        let c = Curve::from_fn(grid, |t| t).unwrap();
        assert!(matches!(c.eval(-0.1), Err(Error::Domain(_))));
        assert!(matches!(c.eval(1.1), Err(Error::Domain(_))));
        // tiny overshoot is clamped
        assert!(c.eval(1.0 + 1e-12).is_ok());
    }

    #[test]
    fn inner_product_of_ones_is_one() {
        let grid = unit_grid(11);
        let one = Curve::from_fn(grid, |_| 1.0).unwrap();
        assert_abs_diff_eq!(inner_product(&one, &one).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sine_cosine_orthogonal() {
        let grid = unit_grid(101);
        let s = Curve::from_fn(grid.clone(), |t| (2.0 * PI * t).sin()).unwrap();
        let c = Curve::from_fn(grid, |t| (2.0 * PI * t).cos()).unwrap();
        assert_abs_diff_eq!(inner_product(&s, &c).unwrap(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn identity_squared_integrates_to_third() {
        let grid = unit_grid(101);
        let t = Curve::from_fn(grid, |t| t).unwrap();
        assert_abs_diff_eq!(inner_product(&t, &t).unwrap(), 1.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn inner_product_exact_for_linear_integrands() {
        // trapezoid is exact when f*g has degree <= 1
        let grid = Arc::new(TimeGrid::new(vec![0.0, 0.17, 0.3, 0.55, 0.8, 1.0]).unwrap());
        let lin = Curve::from_fn(grid.clone(), |t| 2.0 * t - 0.5).unwrap();
        let one = Curve::from_fn(grid, |_| 3.0).unwrap();
        // integral of 3(2t - 1/2) over [0,1] = 3(1 - 1/2) = 1.5
        assert_abs_diff_eq!(inner_product(&lin, &one).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_intervals_error() {
        let f = Curve::from_fn(unit_grid(11), |t| t).unwrap();
        let g = Curve::from_fn(Arc::new(TimeGrid::uniform(0.0, 2.0, 11).unwrap()), |t| t).unwrap();
        assert!(matches!(inner_product(&f, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn l2_norms() {
        let grid = unit_grid(101);
        let zero = Curve::from_fn(grid.clone(), |_| 0.0).unwrap();
        let two = Curve::from_fn(grid.clone(), |_| 2.0).unwrap();
        let t = Curve::from_fn(grid, |t| t).unwrap();
        assert_eq!(l2_norm(&zero), 0.0);
        assert_abs_diff_eq!(l2_norm(&two), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l2_norm(&t), 1.0 / 3.0_f64.sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn compose_with_identity_preserves_values() {
        let grid = unit_grid(25);
        let f = Curve::from_fn(grid, |t| (5.0 * t).cos()).unwrap();
        let g = f.compose_fn(|t| t).unwrap();
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn compose_square_matches_closed_form() {
        let grid = unit_grid(101);
        let f = Curve::from_fn(grid.clone(), |t| t).unwrap();
        let g = f.compose_fn(|t| t * t).unwrap();
        for &t in grid.points() {
            assert_abs_diff_eq!(g.eval(t).unwrap(), t * t, epsilon = 1e-6);
        }
    }

    #[test]
    fn sorted_eval_matches_pointwise_eval() {
        let grid = unit_grid(51);
        let f = Curve::from_fn(grid, |t| (7.0 * t).sin() * t).unwrap();
        let ts: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
        let mut out = vec![0.0; ts.len()];
        f.eval_sorted_into(&ts, &mut out).unwrap();
        for (&t, &v) in ts.iter().zip(&out) {
            assert_eq!(v, f.eval(t).unwrap());
        }
    }

    #[test]
    fn sample_mean_is_pointwise() {
        let grid = unit_grid(11);
        let c1 = Curve::from_fn(grid.clone(), |t| t).unwrap();
        let c2 = Curve::from_fn(grid.clone(), |t| 3.0 - t).unwrap();
        let sample = CurveSample::new(vec![c1, c2]).unwrap();
        let mean = sample.mean();
        for &t in grid.points() {
            assert_abs_diff_eq!(mean.eval(t).unwrap(), 1.5, epsilon = 1e-12);
        }
    }
}
