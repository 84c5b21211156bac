//! Monotone time warps: cubic Hermite splines over fixed knots, made
//! monotone by the Fritsch-Carlson derivative construction and
//! parameterized without constraints through the Jupp transform.
//!
//! A warp `w` maps `[a, b]` onto itself, fixes both endpoints, and is
//! strictly increasing. Its knot values `c` are the landmark positions
//! `w(tau_k)`; the unconstrained parameter `theta` is the log-ratio of
//! consecutive knot gaps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Optimizers clamp warp parameters to this box; beyond it the warp is
/// degenerate (one segment carries essentially the whole interval).
pub const THETA_CLAMP: f64 = 20.0;

/// Largest parameter magnitude `jupp_inv` accepts before exp scaling is
/// meaningless.
const THETA_OVERFLOW: f64 = 700.0;

/// Floor factor applied to zero knot derivatives so the warp stays strictly
/// increasing.
const DERIV_FLOOR_FACTOR: f64 = 1e-8;

/// Fixed warp knots `tau_0 = a < tau_1 < ... < tau_{r+1} = b`; the `r`
/// interior knots carry the free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    tau: Vec<f64>,
}

impl KnotVector {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.len() < 2 {
            return Err(Error::Contract("warp knots need both endpoints".into()));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::Contract("warp knots must be finite".into()));
        }
        for w in tau.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Contract(format!(
                    "warp knots not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { tau })
    }

    /// `r` equispaced interior knots on `(a, b)`.
    pub fn equispaced(a: f64, b: f64, r: usize) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Contract(format!("invalid interval [{a}, {b}]")));
        }
        let h = (b - a) / (r + 1) as f64;
        let mut tau: Vec<f64> = (0..r + 2).map(|k| a + h * k as f64).collect();
        tau[r + 1] = b;
        KnotVector::new(tau)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Number of interior knots (the dimension of `theta`).
    pub fn interior_count(&self) -> usize {
        self.tau.len() - 2
    }

    pub fn a(&self) -> f64 {
        self.tau[0]
    }

    pub fn b(&self) -> f64 {
        *self.tau.last().unwrap()
    }

    fn check_domain(&self, t: f64) -> Result<f64> {
        let (a, b) = (self.a(), self.b());
        let slack = 1e-7 * (b - a);
        if t < a - slack || t > b + slack {
            return Err(Error::Domain(format!("argument {t} outside [{a}, {b}]")));
        }
        Ok(t.clamp(a, b))
    }
}

fn h0(t: f64) -> f64 {
    if (0.0..=1.0).contains(&t) {
        (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t)
    } else {
        0.0
    }
}

fn h1(t: f64) -> f64 {
    if (0.0..=1.0).contains(&t) {
        t * (1.0 - t) * (1.0 - t)
    } else {
        0.0
    }
}

/// Evaluates the Hermite value basis `eta_k` and slope basis `xi_k`
/// (`k = 0..=r+1`) at `t`.
pub fn hermite_basis(knots: &KnotVector, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = knots.check_domain(t)?;
    let tau = knots.tau();
    let last = tau.len() - 1;
    let mut eta = vec![0.0; tau.len()];
    let mut xi = vec![0.0; tau.len()];
    for k in 0..tau.len() {
        if k == 0 {
            let h = tau[1] - tau[0];
            eta[k] = h0((t - tau[0]) / h);
            xi[k] = h1((t - tau[0]) / h) * h;
        } else if k == last {
            let h = tau[last] - tau[last - 1];
            eta[k] = h0((tau[last] - t) / h);
            xi[k] = -h1((tau[last] - t) / h) * h;
        } else {
            let hr = tau[k + 1] - tau[k];
            let hl = tau[k] - tau[k - 1];
            let ind = if t == tau[k] { 1.0 } else { 0.0 };
            eta[k] = h0((t - tau[k]) / hr) + h0((tau[k] - t) / hl) - ind;
            xi[k] = h1((t - tau[k]) / hr) * hr - h1((tau[k] - t) / hl) * hl;
        }
    }
    Ok((eta, xi))
}

/// Fritsch-Carlson knot derivatives for strictly increasing knot values:
/// harmonic mean of adjacent secant slopes inside, one-sided secants at the
/// ends, followed by the circle projection and a strict-increase floor.
pub fn fritsch_carlson(c: &[f64], knots: &KnotVector) -> Result<Vec<f64>> {
    let tau = knots.tau();
    if c.len() != tau.len() {
        return Err(Error::Contract(format!(
            "expected {} knot values, got {}",
            tau.len(),
            c.len()
        )));
    }
    let nseg = tau.len() - 1;
    let mut slopes = vec![0.0; nseg];
    for k in 0..nseg {
        let dc = c[k + 1] - c[k];
        if dc <= 0.0 {
            return Err(Error::Contract(format!(
                "knot values not strictly increasing at index {k}"
            )));
        }
        slopes[k] = dc / (tau[k + 1] - tau[k]);
    }

    let mut d = vec![0.0; tau.len()];
    d[0] = slopes[0];
    d[nseg] = slopes[nseg - 1];
    for k in 1..nseg {
        let (sl, sr) = (slopes[k - 1], slopes[k]);
        d[k] = if sl > 0.0 && sr > 0.0 {
            2.0 * sl * sr / (sl + sr)
        } else {
            0.0
        };
    }

    // Circle projection: on each segment the normalized derivatives must
    // satisfy alpha^2 + beta^2 <= 9 for monotonicity. The harmonic mean
    // already lands inside, but the projection keeps arbitrary inputs safe.
    for k in 0..nseg {
        let alpha = d[k] / slopes[k];
        let beta = d[k + 1] / slopes[k];
        let s = alpha * alpha + beta * beta;
        if s > 9.0 {
            let scale = 3.0 / s.sqrt();
            d[k] = scale * alpha * slopes[k];
            d[k + 1] = scale * beta * slopes[k];
        }
    }

    let floor = DERIV_FLOOR_FACTOR * slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    for dk in &mut d {
        if *dk <= 0.0 {
            *dk = floor;
        }
    }
    Ok(d)
}

/// Jupp transform: `theta_k = log((c_{k+1} - c_k) / (c_k - c_{k-1}))` for the
/// interior knots. `c` is the full knot-value vector including endpoints.
pub fn jupp(c: &[f64], knots: &KnotVector) -> Result<Vec<f64>> {
    let r = knots.interior_count();
    if c.len() != r + 2 {
        return Err(Error::Contract(format!(
            "expected {} knot values, got {}",
            r + 2,
            c.len()
        )));
    }
    let mut theta = vec![0.0; r];
    for k in 1..=r {
        let num = c[k + 1] - c[k];
        let den = c[k] - c[k - 1];
        if num <= 0.0 || den <= 0.0 {
            return Err(Error::Contract(format!(
                "knot values must be strictly increasing (tie near index {k})"
            )));
        }
        theta[k - 1] = (num / den).ln();
    }
    Ok(theta)
}

/// Inverse Jupp transform: unconstrained `theta` to strictly increasing knot
/// values with the endpoints pinned at `a` and `b`.
pub fn jupp_inv(theta: &[f64], knots: &KnotVector) -> Result<Vec<f64>> {
    let r = knots.interior_count();
    if theta.len() != r {
        return Err(Error::Contract(format!(
            "expected {} warp parameters, got {}",
            r,
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite() || t.abs() > THETA_OVERFLOW) {
        return Err(Error::Contract("warp parameter out of range (|theta| > 700)".into()));
    }
    let (a, b) = (knots.a(), knots.b());
    // segment lengths proportional to cumulative products of exp(theta);
    // shift by the max cumulative sum to avoid overflow
    let mut cum = vec![0.0; r + 1];
    for k in 1..=r {
        cum[k] = cum[k - 1] + theta[k - 1];
    }
    let top = cum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = cum.iter().map(|&q| (q - top).exp()).collect();
    let total: f64 = p.iter().sum();
    let mut c = vec![a; r + 2];
    let mut prefix = 0.0;
    for k in 1..=r {
        prefix += p[k - 1];
        c[k] = a + (b - a) * prefix / total;
    }
    c[r + 1] = b;
    Ok(c)
}

/// Jacobian `d c_interior / d theta` of the inverse Jupp transform (r x r).
fn jupp_inv_jacobian(theta: &[f64], knots: &KnotVector) -> DMatrix<f64> {
    let r = theta.len();
    let mut cum = vec![0.0; r + 1];
    for k in 1..=r {
        cum[k] = cum[k - 1] + theta[k - 1];
    }
    let top = cum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = cum.iter().map(|&q| (q - top).exp()).collect();
    // prefix[k] = p_0 + ... + p_{k-1}
    let mut prefix = vec![0.0; r + 2];
    for k in 1..=r + 1 {
        prefix[k] = prefix[k - 1] + p[k - 1];
    }
    let total = prefix[r + 1];
    let span = knots.b() - knots.a();
    let mut jac = DMatrix::zeros(r, r);
    for k in 1..=r {
        for m in 1..=r {
            let dsk = if m < k { prefix[k] - prefix[m] } else { 0.0 };
            let dstot = total - prefix[m];
            jac[(k - 1, m - 1)] = span * (dsk * total - prefix[k] * dstot) / (total * total);
        }
    }
    jac
}

/// Unconstrained warp parameters over a fixed knot vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpParams {
    knots: KnotVector,
    theta: Vec<f64>,
}

impl WarpParams {
    pub fn new(knots: KnotVector, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != knots.interior_count() {
            return Err(Error::Contract(format!(
                "theta has {} entries for {} interior knots",
                theta.len(),
                knots.interior_count()
            )));
        }
        Ok(Self { knots, theta })
    }

    /// The identity warp: knot values equal to the knots themselves. For
    /// equispaced knots this is `theta = 0`.
    pub fn identity(knots: KnotVector) -> Self {
        let theta = jupp(&knots.tau().to_vec(), &knots).expect("knots are strictly increasing");
        Self { knots, theta }
    }

    /// Parameters whose expansion interpolates the given knot values.
    pub fn from_knot_values(knots: KnotVector, c: &[f64]) -> Result<Self> {
        let theta = jupp(c, &knots)?;
        Ok(Self { knots, theta })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Expands to the concrete warp function (inverse Jupp + Fritsch-Carlson).
    pub fn expand(&self) -> Result<WarpFn> {
        let c = jupp_inv(&self.theta, &self.knots)?;
        let d = fritsch_carlson(&c, &self.knots)?;
        Ok(WarpFn { knots: self.knots.clone(), c, d })
    }

    /// Expansion plus the Jacobian of the interior knot values with respect
    /// to `theta`, used for analytic warp gradients.
    pub fn expand_with_gradient(&self) -> Result<WarpExpansion> {
        let warp = self.expand()?;
        let dc_dtheta = jupp_inv_jacobian(&self.theta, &self.knots);
        Ok(WarpExpansion { warp, dc_dtheta })
    }
}

/// A concrete monotone warp: knot values `c` and knot derivatives `d` over
/// fixed knots, evaluated as a cubic Hermite spline.
#[derive(Clone, Debug)]
pub struct WarpFn {
    knots: KnotVector,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl WarpFn {
    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    /// Knot values `w(tau_k)`.
    pub fn knot_values(&self) -> &[f64] {
        &self.c
    }

    /// Knot derivatives `w'(tau_k)`.
    pub fn knot_derivs(&self) -> &[f64] {
        &self.d
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots.a(), self.knots.b())
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.c.windows(2).all(|w| w[1] > w[0]) && self.d.iter().all(|&d| d > 0.0)
    }

    fn segment(&self, t: f64) -> usize {
        let tau = self.knots.tau();
        let j = tau.partition_point(|&p| p <= t);
        j.saturating_sub(1).min(tau.len() - 2)
    }

    fn eval_segment(&self, j: usize, t: f64) -> f64 {
        let tau = self.knots.tau();
        let h = tau[j + 1] - tau[j];
        let u = (t - tau[j]) / h;
        let um1 = 1.0 - u;
        let h00 = (1.0 + 2.0 * u) * um1 * um1;
        let h10 = u * um1 * um1;
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        self.c[j] * h00 + h * self.d[j] * h10 + self.c[j + 1] * h01 + h * self.d[j + 1] * h11
    }

    fn deriv_segment(&self, j: usize, t: f64) -> f64 {
        let tau = self.knots.tau();
        let h = tau[j + 1] - tau[j];
        let u = (t - tau[j]) / h;
        let d00 = 6.0 * u * u - 6.0 * u;
        let d10 = 3.0 * u * u - 4.0 * u + 1.0;
        let d01 = 6.0 * u - 6.0 * u * u;
        let d11 = 3.0 * u * u - 2.0 * u;
        (self.c[j] * d00 + self.c[j + 1] * d01) / h + self.d[j] * d10 + self.d[j + 1] * d11
    }

    /// `w(t)`; arguments are assumed inside the domain (clamped).
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(self.knots.a(), self.knots.b());
        self.eval_segment(self.segment(t), t)
    }

    /// `w'(t)`.
    pub fn deriv(&self, t: f64) -> f64 {
        let t = t.clamp(self.knots.a(), self.knots.b());
        self.deriv_segment(self.segment(t), t)
    }

    /// Walk-forward evaluation at a non-decreasing argument sequence.
    pub fn eval_sorted_into(&self, ts: &[f64], out: &mut [f64]) {
        debug_assert_eq!(ts.len(), out.len());
        let tau = self.knots.tau();
        let mut j = 0usize;
        for (k, &raw) in ts.iter().enumerate() {
            let t = raw.clamp(self.knots.a(), self.knots.b());
            while j + 2 < tau.len() && tau[j + 1] <= t {
                j += 1;
            }
            out[k] = self.eval_segment(j, t);
        }
    }

    /// Walk-forward derivative evaluation at a non-decreasing sequence.
    pub fn deriv_sorted_into(&self, ts: &[f64], out: &mut [f64]) {
        debug_assert_eq!(ts.len(), out.len());
        let tau = self.knots.tau();
        let mut j = 0usize;
        for (k, &raw) in ts.iter().enumerate() {
            let t = raw.clamp(self.knots.a(), self.knots.b());
            while j + 2 < tau.len() && tau[j + 1] <= t {
                j += 1;
            }
            out[k] = self.deriv_segment(j, t);
        }
    }

    /// Solves `w(t) = u` by bisection-safeguarded Newton; the solution exists
    /// and is unique because the warp is a strictly increasing surjection.
    pub fn inverse(&self, u: f64) -> f64 {
        let (a, b) = self.domain();
        let u = u.clamp(a, b);
        let tol = 1e-10 * (b - a);
        let (mut lo, mut hi) = (a, b);
        // identity start
        let mut t = u;
        for _ in 0..200 {
            let f = self.eval(t) - u;
            if f.abs() <= tol {
                return t;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let df = self.deriv(t);
            let mut next = if df > 1e-14 { t - f / df } else { f64::NAN };
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            t = next;
        }
        t
    }
}

/// A warp expansion bundled with `d c / d theta` for analytic gradients.
#[derive(Clone, Debug)]
pub struct WarpExpansion {
    pub warp: WarpFn,
    dc_dtheta: DMatrix<f64>,
}

impl WarpExpansion {
    /// Gradient of `w(t, theta)` with respect to `theta`, holding the
    /// Fritsch-Carlson derivatives fixed: `eta_interior(t)^T dc/dtheta`.
    pub fn gradient_at(&self, t: f64) -> Result<DVector<f64>> {
        let r = self.warp.knots.interior_count();
        let (eta, _) = hermite_basis(&self.warp.knots, t)?;
        let eta_int = DVector::from_iterator(r, eta[1..=r].iter().copied());
        Ok(self.dc_dtheta.transpose() * eta_int)
    }

    /// Gradients at a non-decreasing argument sequence, one row per argument.
    pub fn gradient_sorted_into(&self, ts: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let r = self.warp.knots.interior_count();
        debug_assert_eq!(out.nrows(), ts.len());
        debug_assert_eq!(out.ncols(), r);
        for (row, &t) in ts.iter().enumerate() {
            let (eta, _) = hermite_basis(&self.warp.knots, t)?;
            for m in 0..r {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += eta[k + 1] * self.dc_dtheta[(k, m)];
                }
                out[(row, m)] = acc;
            }
        }
        Ok(())
    }
}

/// Evaluates `w(t, theta)` with an optional analytic gradient in `theta`.
pub fn warp_eval(params: &WarpParams, t: f64, want_gradient: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let t = params.knots().check_domain(t)?;
    if want_gradient {
        let exp = params.expand_with_gradient()?;
        let grad = exp.gradient_at(t)?;
        Ok((exp.warp.eval(t), Some(grad.iter().copied().collect())))
    } else {
        Ok((params.expand()?.eval(t), None))
    }
}

/// Solves `w(t, theta) = u` for `t`.
pub fn warp_inverse(params: &WarpParams, u: f64) -> Result<f64> {
    let u = params.knots().check_domain(u)?;
    Ok(params.expand()?.inverse(u))
}

/// Full finite-difference gradient of `w(t, theta)` in `theta`, including the
/// dependence of the Fritsch-Carlson derivatives on the knot values. Used to
/// validate the analytic gradient, which follows the eta-only form.
pub fn warp_gradient_full_fd(params: &WarpParams, t: f64, step: f64) -> Result<Vec<f64>> {
    let r = params.knots().interior_count();
    let mut grad = vec![0.0; r];
    for k in 0..r {
        let mut up = params.theta().to_vec();
        let mut dn = up.clone();
        up[k] += step;
        dn[k] -= step;
        let wp = WarpParams::new(params.knots().clone(), up)?.expand()?.eval(t);
        let wm = WarpParams::new(params.knots().clone(), dn)?.expand()?.eval(t);
        grad[k] = (wp - wm) / (2.0 * step);
    }
    Ok(grad)
}
