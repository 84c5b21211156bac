//! Univariate B-spline bases and the causal truncated tensor-product basis.
//!
//! The bivariate basis functions are `phi_k(s, t) = psi_i(s) psi_j(t) I{s <= t}`
//! with pairs whose product vanishes on the causal triangle dropped. On the
//! triangle the retained functions sum to one, so the slope surface inherits
//! the causality restriction `beta(s, t) = 0` for `s > t` exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default per-axis quadrature resolution for the Gram matrix.
pub const DEFAULT_OMEGA_QUAD: usize = 201;

/// A univariate B-spline basis with clamped (repeated) boundary knots.
#[derive(Clone, Debug)]
pub struct UniSplineBasis {
    a: f64,
    b: f64,
    order: usize,
    interior: Vec<f64>,
    /// Padded knot vector: `order` copies of `a`, the interior knots, then
    /// `order` copies of `b`.
    knots: Vec<f64>,
}

impl UniSplineBasis {
    /// Basis of the given order (2 = linear, 4 = cubic) with explicit
    /// interior knots in `(a, b)`.
    pub fn new(a: f64, b: f64, order: usize, interior: Vec<f64>) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Contract(format!("invalid domain [{a}, {b}]")));
        }
        if order < 2 {
            return Err(Error::Contract(format!("spline order must be >= 2, got {order}")));
        }
        for w in interior.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Contract("interior knots must be strictly increasing".into()));
            }
        }
        if interior.iter().any(|&k| k <= a || k >= b) {
            return Err(Error::Contract("interior knots must lie strictly inside (a, b)".into()));
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * order);
        knots.extend(std::iter::repeat(a).take(order));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat(b).take(order));
        Ok(Self { a, b, order, interior, knots })
    }

    /// `k` equispaced interior knots on `(a, b)`.
    pub fn equispaced_interior(a: f64, b: f64, order: usize, k: usize) -> Result<Self> {
        let h = (b - a) / (k + 1) as f64;
        let interior = (1..=k).map(|j| a + h * j as f64).collect();
        UniSplineBasis::new(a, b, order, interior)
    }

    /// Basis over explicit breakpoints (the first and last entries are the
    /// domain endpoints; the rest become interior knots).
    pub fn from_breakpoints(order: usize, breakpoints: &[f64]) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Contract("need at least two breakpoints".into()));
        }
        let a = breakpoints[0];
        let b = *breakpoints.last().unwrap();
        UniSplineBasis::new(a, b, order, breakpoints[1..breakpoints.len() - 1].to_vec())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Number of basis functions, `k + q`.
    pub fn count(&self) -> usize {
        self.interior.len() + self.order
    }

    /// Support interval of `psi_j` in terms of the padded knot vector.
    pub fn support(&self, j: usize) -> (f64, f64) {
        (self.knots[j], self.knots[j + self.order])
    }

    fn check_domain(&self, t: f64) -> Result<f64> {
        let slack = 1e-7 * (self.b - self.a);
        if t < self.a - slack || t > self.b + slack {
            return Err(Error::Domain(format!(
                "argument {t} outside basis domain [{}, {}]",
                self.a, self.b
            )));
        }
        Ok(t.clamp(self.a, self.b))
    }

    fn span_index(&self, t: f64) -> usize {
        let q = self.order;
        let hi = self.count(); // last span left index is count - 1... see below
        // spans live between knot indices q-1 and count; pick i with
        // knots[i] <= t < knots[i+1], closing the last span at b
        if t >= self.b {
            return hi - 1 + q - q; // count - 1 collapses below; kept explicit
        }
        let mut lo = q - 1;
        let mut up = hi; // exclusive
        while up - lo > 1 {
            let mid = (lo + up) / 2;
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                up = mid;
            }
        }
        lo
    }

    /// Evaluates the `order` active basis functions at `t` by the Cox-de Boor
    /// recursion. Returns the index of the first active function; `values`
    /// must have length `order`.
    pub fn eval_active_into(&self, t: f64, values: &mut [f64]) -> Result<usize> {
        let t = self.check_domain(t)?;
        debug_assert_eq!(values.len(), self.order);
        let q = self.order;
        let i = if t >= self.b { self.count() - 1 } else { self.span_index(t) };
        values[0] = 1.0;
        let mut left = vec![0.0; q];
        let mut right = vec![0.0; q];
        for j in 1..q {
            left[j] = t - self.knots[i + 1 - j];
            right[j] = self.knots[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let term = values[r] / denom;
                values[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            values[j] = saved;
        }
        Ok(i + 1 - q)
    }

    /// Full basis vector at `t` (length `count()`).
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut active = vec![0.0; self.order];
        let start = self.eval_active_into(t, &mut active)?;
        let mut out = vec![0.0; self.count()];
        out[start..start + self.order].copy_from_slice(&active);
        Ok(out)
    }

    /// Dense matrix of basis values on a node sequence (rows = nodes).
    pub fn values_on(&self, nodes: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(nodes.len(), self.count());
        let mut active = vec![0.0; self.order];
        for (row, &t) in nodes.iter().enumerate() {
            let start = self.eval_active_into(t, &mut active)?;
            for (off, &v) in active.iter().enumerate() {
                out[(row, start + off)] = v;
            }
        }
        Ok(out)
    }
}

/// Slope coefficients paired with a causal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeCoefficients {
    b: DVector<f64>,
}

impl SlopeCoefficients {
    pub fn new(b: DVector<f64>) -> Self {
        Self { b }
    }

    pub fn zeros(p: usize) -> Self {
        Self { b: DVector::zeros(p) }
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.len() == 0
    }
}

/// The causal truncated tensor-product basis with its Gram penalty matrix.
#[derive(Clone, Debug)]
pub struct CausalBasis {
    uni: UniSplineBasis,
    /// Retained index pairs `(i, j)`; `phi_k(s,t) = psi_i(s) psi_j(t) I{s<=t}`.
    retained: Vec<(usize, usize)>,
    /// For each t-axis index `j`, the retained pairs `(k, i)` with that `j`.
    by_t_axis: Vec<Vec<(usize, usize)>>,
    omega: DMatrix<f64>,
}

impl CausalBasis {
    pub fn uni(&self) -> &UniSplineBasis {
        &self.uni
    }

    /// Number of retained basis surfaces.
    pub fn p(&self) -> usize {
        self.retained.len()
    }

    pub fn retained(&self) -> &[(usize, usize)] {
        &self.retained
    }

    /// Retained pairs grouped by the t-axis univariate index.
    pub fn by_t_axis(&self) -> &[Vec<(usize, usize)>] {
        &self.by_t_axis
    }

    /// Gram matrix of the retained surfaces over the causal triangle.
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn domain(&self) -> (f64, f64) {
        self.uni.domain()
    }

    /// Active entries of `phi(s, t)` as `(k, value)` pairs; empty for `s > t`.
    pub fn eval_phi_sparse(&self, s: f64, t: f64, out: &mut Vec<(usize, f64)>) -> Result<()> {
        out.clear();
        let s = self.uni.check_domain(s)?;
        let t = self.uni.check_domain(t)?;
        if s > t {
            return Ok(());
        }
        let q = self.uni.order();
        let mut sv = vec![0.0; q];
        let mut tv = vec![0.0; q];
        let s0 = self.uni.eval_active_into(s, &mut sv)?;
        let t0 = self.uni.eval_active_into(t, &mut tv)?;
        for (jo, &pj) in tv.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for &(k, i) in &self.by_t_axis[t0 + jo] {
                if i >= s0 && i < s0 + q {
                    let v = sv[i - s0] * pj;
                    if v != 0.0 {
                        out.push((k, v));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full `phi(s, t)` vector of length `p`; exactly zero for `s > t`.
    pub fn eval_phi(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        let mut sparse = Vec::with_capacity(self.uni.order() * self.uni.order());
        self.eval_phi_sparse(s, t, &mut sparse)?;
        let mut out = vec![0.0; self.p()];
        for (k, v) in sparse {
            out[k] = v;
        }
        Ok(out)
    }

    /// Quadratic penalty `b' Omega b`, equal to the squared L2 norm of the
    /// slope surface.
    pub fn coeff_penalty(&self, b: &SlopeCoefficients) -> f64 {
        (b.coeffs().transpose() * &self.omega * b.coeffs())[(0, 0)]
    }

    /// Slope surface `beta(s, t) = sum_k b_k phi_k(s, t)`.
    pub fn beta_surface(&self, b: &SlopeCoefficients, s: f64, t: f64) -> Result<f64> {
        if b.len() != self.p() {
            return Err(Error::Contract(format!(
                "coefficient length {} does not match basis size {}",
                b.len(),
                self.p()
            )));
        }
        let mut sparse = Vec::with_capacity(self.uni.order() * self.uni.order());
        self.eval_phi_sparse(s, t, &mut sparse)?;
        Ok(sparse.iter().map(|&(k, v)| b.coeffs()[k] * v).sum())
    }
}

/// Builds the causal basis: retains the tensor pairs whose supports meet the
/// open triangle `{s < t}` (decided from the knot spans) and assembles the
/// Gram matrix by tensor trapezoid quadrature at `quad_resolution` nodes per
/// axis.
pub fn build_causal_basis(uni: UniSplineBasis, quad_resolution: usize) -> Result<CausalBasis> {
    if quad_resolution < 51 {
        return Err(Error::Contract(format!(
            "quad_resolution must be at least 51, got {quad_resolution}"
        )));
    }
    let nb = uni.count();
    let mut retained = Vec::new();
    let mut by_t_axis = vec![Vec::new(); nb];
    for i in 0..nb {
        for j in 0..nb {
            // the product meets {s < t} iff the left end of supp(psi_i) is
            // below the right end of supp(psi_j)
            if uni.support(i).0 < uni.support(j).1 {
                let k = retained.len();
                retained.push((i, j));
                by_t_axis[j].push((k, i));
            }
        }
    }

    let omega = assemble_omega(&uni, &retained, &by_t_axis, quad_resolution)?;
    let basis = CausalBasis { uni, retained, by_t_axis, omega };
    verify_partition_of_unity(&basis)?;
    Ok(basis)
}

fn assemble_omega(
    uni: &UniSplineBasis,
    retained: &[(usize, usize)],
    by_t_axis: &[Vec<(usize, usize)>],
    quad_resolution: usize,
) -> Result<DMatrix<f64>> {
    let (a, b) = uni.domain();
    let nq = quad_resolution;
    let h = (b - a) / (nq - 1) as f64;
    let nodes: Vec<f64> = (0..nq).map(|v| a + h * v as f64).collect();
    let nb = uni.count();
    let bmat = uni.values_on(&nodes)?; // nq x nb

    // cumulative trapezoid integrals of psi_i * psi_i' up to each node
    let npairs = nb * (nb + 1) / 2;
    let pair_index = |i: usize, ip: usize| -> usize {
        let (lo, hi) = if i <= ip { (i, ip) } else { (ip, i) };
        lo * nb - lo * (lo + 1) / 2 + hi
    };
    let mut cum = vec![0.0; npairs * nq];
    for i in 0..nb {
        for ip in i..nb {
            let row = pair_index(i, ip);
            let base = row * nq;
            let mut acc = 0.0;
            cum[base] = 0.0;
            for v in 1..nq {
                let f0 = bmat[(v - 1, i)] * bmat[(v - 1, ip)];
                let f1 = bmat[(v, i)] * bmat[(v, ip)];
                acc += 0.5 * h * (f0 + f1);
                cum[base + v] = acc;
            }
        }
    }

    let p = retained.len();
    let q = uni.order();
    let mut omega = DMatrix::zeros(p, p);
    let mut active = vec![0.0; q];
    for (v, &t) in nodes.iter().enumerate() {
        let wv = if v == 0 || v == nq - 1 { 0.5 * h } else { h };
        let t0 = uni.eval_active_into(t, &mut active)?;
        for (jo, &pj) in active.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for (jpo, &pjp) in active.iter().enumerate() {
                if pjp == 0.0 {
                    continue;
                }
                let wjj = wv * pj * pjp;
                for &(k, i) in &by_t_axis[t0 + jo] {
                    for &(l, ip) in &by_t_axis[t0 + jpo] {
                        if k <= l {
                            omega[(k, l)] += wjj * cum[pair_index(i, ip) * nq + v];
                        }
                    }
                }
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            omega[(k, l)] = omega[(l, k)];
        }
    }
    Ok(omega)
}

/// The retained surfaces must sum to one on the causal triangle; dropping
/// identically-zero pairs already preserves this, so the rescaling mentioned
/// in the construction is a verified no-op.
fn verify_partition_of_unity(basis: &CausalBasis) -> Result<()> {
    let (a, b) = basis.domain();
    let mut sparse = Vec::new();
    let grid = 41;
    for vi in 0..grid {
        let t = a + (b - a) * vi as f64 / (grid - 1) as f64;
        for ui in 0..=vi {
            let s = a + (b - a) * ui as f64 / (grid - 1) as f64;
            basis.eval_phi_sparse(s, t, &mut sparse)?;
            let sum: f64 = sparse.iter().map(|&(_, v)| v).sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::Contract(format!(
                    "causal basis partition of unity violated at ({s}, {t}): sum = {sum}"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cubic(k: usize) -> UniSplineBasis {
        UniSplineBasis::equispaced_interior(0.0, 1.0, 4, k).unwrap()
    }

    #[test]
    fn uni_partition_of_unity() {
        let basis = cubic(5);
        for j in 0..=100 {
            let t = j as f64 / 100.0;
            let vals = basis.eval(t).unwrap();
            let sum: f64 = vals.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(vals.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn uni_clamped_endpoint_interpolation() {
        let basis = cubic(5);
        let at_a = basis.eval(0.0).unwrap();
        assert_abs_diff_eq!(at_a[0], 1.0, epsilon = 1e-14);
        assert!(at_a[1..].iter().all(|&v| v == 0.0));
        let at_b = basis.eval(1.0).unwrap();
        assert_abs_diff_eq!(*at_b.last().unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn linear_hat_values() {
        // breakpoints {0, .5, 1}: three hats; at t = .25 the active pair
        // splits evenly
        let basis = UniSplineBasis::from_breakpoints(2, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(basis.count(), 3);
        let vals = basis.eval(0.25).unwrap();
        assert_abs_diff_eq!(vals[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[2], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn out_of_domain_errors() {
        let basis = cubic(3);
        assert!(basis.eval(-0.2).is_err());
        assert!(basis.eval(1.2).is_err());
    }

    #[test]
    fn retained_counts_match_reference_configurations() {
        let b66 = build_causal_basis(cubic(5), 101).unwrap();
        assert_eq!(b66.p(), 66);
        let b141 = build_causal_basis(cubic(10), 101).unwrap();
        assert_eq!(b141.p(), 141);
        // 10 equispaced breakpoints per axis (8 interior knots), linear order
        let lin = UniSplineBasis::equispaced_interior(0.0, 1.0, 2, 8).unwrap();
        let b64 = build_causal_basis(lin, 101).unwrap();
        assert_eq!(b64.p(), 64);
    }

    #[test]
    fn causality_is_exact() {
        let basis = build_causal_basis(cubic(5), 101).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut sparse = Vec::new();
        let mut checked = 0;
        while checked < 10_000 {
            let s: f64 = rng.gen_range(0.0..1.0);
            let t: f64 = rng.gen_range(0.0..1.0);
            if s <= t {
                continue;
            }
            basis.eval_phi_sparse(s, t, &mut sparse).unwrap();
            assert!(sparse.is_empty());
            let full = basis.eval_phi(s, t).unwrap();
            assert!(full.iter().all(|&v| v == 0.0));
            checked += 1;
        }
    }

    #[test]
    fn triangle_partition_of_unity() {
        let basis = build_causal_basis(cubic(5), 101).unwrap();
        let mut worst: f64 = 0.0;
        for vi in 0..101 {
            let t = vi as f64 / 100.0;
            for ui in 0..=vi {
                let s = ui as f64 / 100.0;
                let sum: f64 = basis.eval_phi(s, t).unwrap().iter().sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        assert!(worst <= 1e-10, "partition deviation {worst}");
    }

    #[test]
    fn corner_has_single_active_pair() {
        let basis = build_causal_basis(cubic(5), 101).unwrap();
        let mut sparse = Vec::new();
        basis.eval_phi_sparse(0.0, 0.0, &mut sparse).unwrap();
        assert_eq!(sparse.len(), 1);
        let (k, v) = sparse[0];
        assert_eq!(basis.retained()[k], (0, 0));
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn omega_symmetric_positive_semidefinite() {
        let basis = build_causal_basis(cubic(5), 101).unwrap();
        let omega = basis.omega();
        let mut asym: f64 = 0.0;
        for k in 0..omega.nrows() {
            for l in 0..omega.ncols() {
                asym = asym.max((omega[(k, l)] - omega[(l, k)]).abs());
            }
        }
        assert!(asym <= 1e-12);
        let eig = omega.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "omega min eigenvalue {min}");
    }

    #[test]
    fn penalty_matches_direct_surface_quadrature() {
        // two routes to the same number: b' Omega b versus brute-force
        // quadrature of beta^2 with the same iterated trapezoid rule
        let nq = 201;
        let basis = build_causal_basis(cubic(5), nq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = basis.p();
        let b = SlopeCoefficients::new(DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0)));

        let quad = (basis.coeff_penalty(&b), {
            let h = 1.0 / (nq - 1) as f64;
            let nodes: Vec<f64> = (0..nq).map(|v| v as f64 * h).collect();
            let mut total = 0.0;
            for (v, &t) in nodes.iter().enumerate() {
                let wv = if v == 0 || v == nq - 1 { 0.5 * h } else { h };
                // inner cumulative trapezoid over s <= t
                let mut inner = 0.0;
                for u in 1..=v {
                    let f0 = basis.beta_surface(&b, nodes[u - 1], t).unwrap().powi(2);
                    let f1 = basis.beta_surface(&b, nodes[u], t).unwrap().powi(2);
                    inner += 0.5 * h * (f0 + f1);
                }
                total += wv * inner;
            }
            total
        });
        let (via_omega, direct) = quad;
        assert!(
            (via_omega - direct).abs() <= 1e-6 * direct.abs().max(1e-12),
            "penalty mismatch: {via_omega} vs {direct}"
        );
    }

    #[test]
    fn beta_surface_examples() {
        let basis = build_causal_basis(cubic(5), 101).unwrap();
        let p = basis.p();
        let zero = SlopeCoefficients::zeros(p);
        let ones = SlopeCoefficients::new(DVector::from_element(p, 1.0));
        for &(s, t) in &[(0.1, 0.4), (0.5, 0.5), (0.0, 1.0), (0.3, 0.9)] {
            assert_eq!(basis.beta_surface(&zero, s, t).unwrap(), 0.0);
            assert_abs_diff_eq!(basis.beta_surface(&ones, s, t).unwrap(), 1.0, epsilon = 1e-10);
        }
        // s > t is exactly zero for any coefficients
        assert_eq!(basis.beta_surface(&ones, 0.8, 0.2).unwrap(), 0.0);
        let wrong = SlopeCoefficients::zeros(p + 1);
        assert!(matches!(basis.beta_surface(&wrong, 0.1, 0.2), Err(Error::Contract(_))));
    }
}
