//! The alternating penalized least-squares estimator.
//!
//! For fixed warps the problem is a ridge regression in the slope
//! coefficients; for fixed coefficients each subject's warp parameters take
//! one damped Gauss-Newton step. The two phases alternate, with the warp
//! knot values re-centered after every sweep so the cross-subject mean warp
//! stays at the identity, until the penalized objective stabilizes.
//!
//! All integrals run on one quadrature grid (the working grid refined by
//! `FitConfig::quad_refine`), so the estimator is deterministic and exactly
//! reproducible.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::{build_causal_basis, CausalBasis, SlopeCoefficients, UniSplineBasis};
use crate::curves::{Curve, CurveSample, QuadGrid, TimeGrid};
use crate::error::{Error, Result};
use crate::warp::{KnotVector, WarpExpansion, WarpParams, THETA_CLAMP};

/// Reciprocal-condition threshold below which a ridge system is reported as
/// singular.
const RCOND_LIMIT: f64 = 1e-14;

/// Minimum knot gap (relative to the span) preserved by the centering
/// projection.
const CENTER_MIN_GAP: f64 = 1e-6;

/// Knot layout for the regression basis.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisKnots {
    /// `k` equispaced interior knots strictly inside the data interval.
    EquispacedInterior(usize),
    /// Explicit interior knots.
    Interior(Vec<f64>),
    /// Explicit breakpoints including both endpoints.
    Breakpoints(Vec<f64>),
}

/// Regression-basis specification, resolved against the data interval when a
/// fit starts.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    pub order: usize,
    pub knots: BasisKnots,
}

impl BasisSpec {
    pub fn cubic_equispaced(k: usize) -> Self {
        Self { order: 4, knots: BasisKnots::EquispacedInterior(k) }
    }

    pub fn resolve(&self, a: f64, b: f64) -> Result<UniSplineBasis> {
        match &self.knots {
            BasisKnots::EquispacedInterior(k) => UniSplineBasis::equispaced_interior(a, b, self.order, *k),
            BasisKnots::Interior(knots) => UniSplineBasis::new(a, b, self.order, knots.clone()),
            BasisKnots::Breakpoints(bp) => UniSplineBasis::from_breakpoints(self.order, bp),
        }
    }
}

/// The default penalty grid: `10^-nu` for `nu = 1, 1.25, ..., 5`, ascending.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..17).map(|j| 10f64.powf(-(1.0 + 0.25 * j as f64))).collect();
    grid.reverse();
    grid
}

/// Configuration of the alternating estimator.
#[derive(Clone, Debug)]
pub struct FitConfig {
    pub basis: BasisSpec,
    pub warp_knots: KnotVector,
    /// Positive, sorted ascending.
    pub lambda_grid: Vec<f64>,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub backtrack_max: usize,
    /// Quadrature refinement factor of the working grid.
    pub quad_refine: usize,
    /// Per-axis resolution for the Gram matrix.
    pub omega_quad: usize,
    /// Seed echoed into artifacts and used by resampling procedures.
    pub seed: u64,
}

impl FitConfig {
    pub fn new(basis: BasisSpec, warp_knots: KnotVector) -> Self {
        Self {
            basis,
            warp_knots,
            lambda_grid: default_lambda_grid(),
            max_outer: 200,
            rel_tol: 1e-6,
            backtrack_max: 10,
            quad_refine: 5,
            omega_quad: crate::basis::DEFAULT_OMEGA_QUAD,
            seed: 0,
        }
    }

    /// Disables warping: the warp family shrinks to the identity only, which
    /// reproduces the classical penalized causal regression estimator.
    pub fn without_warping(mut self) -> Self {
        let (a, b) = (self.warp_knots.a(), self.warp_knots.b());
        self.warp_knots = KnotVector::new(vec![a, b]).expect("valid endpoints");
        self
    }

    fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::Contract("lambda grid must not be empty".into()));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Contract("lambda grid entries must be positive".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("lambda grid must be sorted ascending".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Contract("rel_tol must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::Contract("max_outer must be positive".into()));
        }
        Ok(())
    }
}

/// Per-lambda diagnostics along the selection path.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaDiagnostics {
    pub lambda: f64,
    pub df: f64,
    pub mse: f64,
    /// `None` when `df >= n - 2` leaves the criterion undefined.
    pub aicc: Option<f64>,
    /// `None` when `df >= n`.
    pub gcv: Option<f64>,
    pub converged: bool,
}

/// Result of a fit at one penalty value (optionally carrying the whole
/// selection path).
#[derive(Clone, Debug)]
pub struct FitResult {
    pub basis: Arc<CausalBasis>,
    pub warp_knots: KnotVector,
    pub b_hat: SlopeCoefficients,
    pub alpha_hat: Curve,
    pub warps: Vec<WarpParams>,
    pub lambda_hat: f64,
    pub df: f64,
    pub mse: f64,
    pub aicc: Option<f64>,
    pub gcv: Option<f64>,
    pub mu_x_tilde: Curve,
    pub mu_y_tilde: Curve,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Diagnostics for every grid value when the fit came from selection.
    pub paths: Vec<LambdaDiagnostics>,
    /// Set when the AICC minimum sat on a boundary of the grid.
    pub aicc_boundary: bool,
    /// Quadrature refinement the fit was computed with.
    pub quad_refine: usize,
}

impl FitResult {
    /// Slope surface at `(s, t)`; exactly zero for `s > t`.
    pub fn beta_at(&self, s: f64, t: f64) -> Result<f64> {
        self.basis.beta_surface(&self.b_hat, s, t)
    }
}

/// Corrected Akaike criterion `MSE * exp[1 + 2(df+1) / (n - df - 2)]`.
pub fn aicc(mse: f64, df: f64, n: usize) -> Result<f64> {
    let denom = n as f64 - df - 2.0;
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "AICC undefined: df = {df} leaves n - df - 2 = {denom} <= 0"
        )));
    }
    Ok(mse * (1.0 + 2.0 * (df + 1.0) / denom).exp())
}

/// Generalized cross-validation `MSE / (1 - df/n)^2`.
pub fn gcv(mse: f64, df: f64, n: usize) -> Result<f64> {
    if df >= n as f64 {
        return Err(Error::Domain(format!("GCV undefined: df = {df} >= n = {n}")));
    }
    let denom = 1.0 - df / n as f64;
    Ok(mse / (denom * denom))
}

// ---------------------------------------------------------------------------
// Basis evaluated on the quadrature nodes
// ---------------------------------------------------------------------------

/// The causal basis pre-evaluated on a quadrature grid.
pub(crate) struct NodeBasis {
    pub qg: QuadGrid,
    /// Active univariate values per node (`nq x order`).
    pub act: DMatrix<f64>,
    /// First active univariate index per node.
    pub act0: Vec<usize>,
    /// Dense univariate values (`nq x nb`).
    pub ub: DMatrix<f64>,
}

impl NodeBasis {
    pub fn new(basis: &CausalBasis, grid: &TimeGrid, quad_refine: usize) -> Result<Self> {
        let qg = QuadGrid::refine_grid(grid, quad_refine);
        let nq = qg.len();
        let q = basis.uni().order();
        let nb = basis.uni().count();
        let mut act = DMatrix::zeros(nq, q);
        let mut act0 = vec![0usize; nq];
        let mut ub = DMatrix::zeros(nq, nb);
        let mut scratch = vec![0.0; q];
        for (v, &t) in qg.nodes().iter().enumerate() {
            let start = basis.uni().eval_active_into(t, &mut scratch)?;
            act0[v] = start;
            for (jo, &val) in scratch.iter().enumerate() {
                act[(v, jo)] = val;
                ub[(v, start + jo)] = val;
            }
        }
        Ok(Self { qg, act, act0, ub })
    }

    /// Cumulative integrals of `psi_idx * f` from `a` to every node, one row
    /// per univariate basis function.
    pub fn cum_psi_into(&self, f: &[f64], out: &mut DMatrix<f64>) {
        let nq = self.qg.len();
        let nb = self.ub.ncols();
        debug_assert_eq!(out.nrows(), nb);
        debug_assert_eq!(out.ncols(), nq);
        let nodes = self.qg.nodes();
        for idx in 0..nb {
            out[(idx, 0)] = 0.0;
            let mut acc = 0.0;
            for v in 1..nq {
                let h = nodes[v] - nodes[v - 1];
                acc += 0.5 * h * (self.ub[(v - 1, idx)] * f[v - 1] + self.ub[(v, idx)] * f[v]);
                out[(idx, v)] = acc;
            }
        }
    }

    /// `(B g)(t_v) = sum_k b_k psi_{j_k}(t_v) * cum[i_k](t_v)` for a function
    /// `g` whose cumulative basis integrals are in `cum`.
    pub fn apply_beta_into(
        &self,
        basis: &CausalBasis,
        b: &DVector<f64>,
        cum: &DMatrix<f64>,
        out: &mut [f64],
    ) {
        let q = self.act.ncols();
        let by_t = basis.by_t_axis();
        for v in 0..self.qg.len() {
            let mut acc = 0.0;
            for jo in 0..q {
                let pj = self.act[(v, jo)];
                if pj == 0.0 {
                    continue;
                }
                let j = self.act0[v] + jo;
                let mut inner = 0.0;
                for &(k, i) in &by_t[j] {
                    inner += b[k] * cum[(i, v)];
                }
                acc += pj * inner;
            }
            out[v] = acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Regressor curves (public, inspectable representation)
// ---------------------------------------------------------------------------

/// The vector regressors `z_i(t) = <phi(., t), x~*_i>` materialized on the
/// quadrature nodes, one `nq x p` matrix per subject.
pub struct RegressorCurves {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    working_index: Vec<usize>,
    z: Vec<DMatrix<f64>>,
    mu_x_tilde: Vec<f64>,
}

impl RegressorCurves {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Regressor matrix of subject `i` (rows = nodes, cols = basis index).
    pub fn z(&self, i: usize) -> &DMatrix<f64> {
        &self.z[i]
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Warped covariate mean on the nodes.
    pub fn mu_x_tilde(&self) -> &[f64] {
        &self.mu_x_tilde
    }

    /// Values of subject `i`'s regressors at the working-grid nodes.
    pub fn z_on_working_grid(&self, i: usize) -> DMatrix<f64> {
        let m = self.working_index.len();
        let p = self.z[i].ncols();
        let mut out = DMatrix::zeros(m, p);
        for (g, &v) in self.working_index.iter().enumerate() {
            for k in 0..p {
                out[(g, k)] = self.z[i][(v, k)];
            }
        }
        out
    }
}

/// Materializes the regressor curves for the given warps: warp the
/// covariates, center them at their warped sample mean, and integrate them
/// against the basis surfaces.
pub fn compute_regressors(
    x: &CurveSample,
    warps: &[WarpParams],
    basis: &CausalBasis,
    quad_refine: usize,
) -> Result<RegressorCurves> {
    if warps.len() != x.len() {
        return Err(Error::Contract(format!(
            "{} warps for {} subjects",
            warps.len(),
            x.len()
        )));
    }
    let nb_ctx = NodeBasis::new(basis, x.grid(), quad_refine)?;
    let nq = nb_ctx.qg.len();
    let n = x.len();
    let nodes = nb_ctx.qg.nodes().to_vec();

    let mut xw = vec![vec![0.0; nq]; n];
    let mut wv = vec![0.0; nq];
    for i in 0..n {
        let w = warps[i].expand()?;
        w.eval_sorted_into(&nodes, &mut wv);
        x.curve(i).eval_sorted_into(&wv, &mut xw[i])?;
    }
    let mut mu = vec![0.0; nq];
    for row in &xw {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }

    let p = basis.p();
    let nb = basis.uni().count();
    let by_t = basis.by_t_axis();
    let q = basis.uni().order();
    let mut cum = DMatrix::zeros(nb, nq);
    let mut z = Vec::with_capacity(n);
    let mut centered = vec![0.0; nq];
    for row in &xw {
        for v in 0..nq {
            centered[v] = row[v] - mu[v];
        }
        nb_ctx.cum_psi_into(&centered, &mut cum);
        let mut zi = DMatrix::zeros(nq, p);
        for v in 0..nq {
            for jo in 0..q {
                let pj = nb_ctx.act[(v, jo)];
                if pj == 0.0 {
                    continue;
                }
                let j = nb_ctx.act0[v] + jo;
                for &(k, iu) in &by_t[j] {
                    zi[(v, k)] = pj * cum[(iu, v)];
                }
            }
        }
        z.push(zi);
    }

    Ok(RegressorCurves {
        nodes,
        weights: nb_ctx.qg.weights().to_vec(),
        working_index: nb_ctx.qg.working_index().to_vec(),
        z,
        mu_x_tilde: mu,
    })
}

/// Warps and centers the responses on the regressors' quadrature nodes.
pub fn center_warped_responses(
    y: &CurveSample,
    warps: &[WarpParams],
    reg: &RegressorCurves,
) -> Result<Vec<DVector<f64>>> {
    let n = y.len();
    if warps.len() != n {
        return Err(Error::Contract(format!("{} warps for {n} subjects", warps.len())));
    }
    let nq = reg.nodes.len();
    let mut yw = vec![vec![0.0; nq]; n];
    let mut wv = vec![0.0; nq];
    for i in 0..n {
        let w = warps[i].expand()?;
        w.eval_sorted_into(&reg.nodes, &mut wv);
        y.curve(i).eval_sorted_into(&wv, &mut yw[i])?;
    }
    let mut mu = vec![0.0; nq];
    for row in &yw {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    Ok(yw
        .into_iter()
        .map(|row| DVector::from_iterator(nq, row.iter().zip(&mu).map(|(v, m)| v - m)))
        .collect())
}

fn cholesky_checked(a_lambda: DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let chol = Cholesky::new(a_lambda).ok_or_else(|| Error::Singular {
        lambda,
        detail: "ridge system is not positive definite".into(),
    })?;
    let diag = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for k in 0..diag.nrows() {
        let d = diag[(k, k)];
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if dmax <= 0.0 || (dmin / dmax) * (dmin / dmax) < RCOND_LIMIT {
        return Err(Error::Singular {
            lambda,
            detail: format!(
                "reciprocal condition estimate {:.3e} below 1e-14",
                (dmin / dmax) * (dmin / dmax)
            ),
        });
    }
    Ok(chol)
}

/// Dense normal-equations assembly `A = sum_i <z_i, z_i'>`,
/// `rhs = sum_i <z_i, y*_i>` from materialized regressors.
fn dense_normal_equations(
    reg: &RegressorCurves,
    y_star: &[DVector<f64>],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = reg.z[0].ncols();
    let nq = reg.nodes.len();
    let mut a = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (zi, yi) in reg.z.iter().zip(y_star) {
        for v in 0..nq {
            let w = reg.weights[v];
            for k in 0..p {
                let zk = zi[(v, k)];
                if zk == 0.0 {
                    continue;
                }
                rhs[k] += w * zk * yi[v];
                for l in k..p {
                    a[(k, l)] += w * zk * zi[(v, l)];
                }
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            a[(k, l)] = a[(l, k)];
        }
    }
    (a, rhs)
}

/// Ridge step: solves `(sum_i <z_i, z_i'> + n lambda Omega) b = sum_i <z_i, y*_i>`
/// by a symmetric positive-definite factorization.
pub fn ridge_step(
    reg: &RegressorCurves,
    y_star: &[DVector<f64>],
    basis: &CausalBasis,
    lambda: f64,
) -> Result<SlopeCoefficients> {
    if lambda < 0.0 {
        return Err(Error::Contract("lambda must be non-negative".into()));
    }
    let n = reg.z.len();
    if y_star.len() != n {
        return Err(Error::Contract("response count does not match regressors".into()));
    }
    let (a, rhs) = dense_normal_equations(reg, y_star);
    let a_lambda = &a + basis.omega() * (n as f64 * lambda);
    let chol = cholesky_checked(a_lambda, lambda)?;
    Ok(SlopeCoefficients::new(chol.solve(&rhs)))
}

/// Effective degrees of freedom `tr(A_lambda^{-1} A)`.
pub fn effective_df(reg: &RegressorCurves, basis: &CausalBasis, lambda: f64) -> Result<f64> {
    let n = reg.z.len();
    let (a, _) = dense_normal_equations(reg, &vec![DVector::zeros(reg.nodes.len()); n]);
    let a_lambda = &a + basis.omega() * (n as f64 * lambda);
    let chol = cholesky_checked(a_lambda, lambda)?;
    let solved = chol.solve(&a);
    Ok(solved.trace())
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct Engine<'d> {
    x: &'d CurveSample,
    y: &'d CurveSample,
    n: usize,
    basis: Arc<CausalBasis>,
    warp_knots: KnotVector,
    r: usize,
    nb: NodeBasis,
    cfg: FitConfig,
}

/// Mutable per-fit state on the quadrature nodes.
struct State {
    warps: Vec<WarpParams>,
    exps: Vec<WarpExpansion>,
    /// Warped covariates and responses at the nodes.
    xw: Vec<Vec<f64>>,
    yw: Vec<Vec<f64>>,
    /// Node means of the warped curves.
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    /// Per-subject cumulative integrals of `psi * (xw_i - mu_x)`.
    ucum: Vec<DMatrix<f64>>,
    /// Cumulative integrals of `psi * mu_x`.
    mucum: DMatrix<f64>,
    /// Residual curves `rho_i = yw_i - (B xw_i)` for the current slope.
    rho: Vec<Vec<f64>>,
    rho_bar: Vec<f64>,
    /// Per-subject Levenberg damping carried across outer iterations.
    damping: Vec<f64>,
}

impl<'d> Engine<'d> {
    fn new(x: &'d CurveSample, y: &'d CurveSample, cfg: &FitConfig) -> Result<Self> {
        cfg.validate()?;
        if x.len() != y.len() {
            return Err(Error::Contract(format!(
                "{} covariate curves vs {} response curves",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::Contract("fitting requires at least 2 subjects".into()));
        }
        if x.grid().points() != y.grid().points() {
            return Err(Error::Contract("covariates and responses must share one grid".into()));
        }
        let (a, b) = (x.grid().a(), x.grid().b());
        if (cfg.warp_knots.a() - a).abs() > 1e-9 * (b - a) || (cfg.warp_knots.b() - b).abs() > 1e-9 * (b - a) {
            return Err(Error::Contract(
                "warp knots must span the data interval exactly".into(),
            ));
        }
        let uni = cfg.basis.resolve(a, b)?;
        let basis = Arc::new(build_causal_basis(uni, cfg.omega_quad)?);
        let nb = NodeBasis::new(&basis, x.grid(), cfg.quad_refine)?;
        Ok(Self {
            x,
            y,
            n: x.len(),
            basis,
            warp_knots: cfg.warp_knots.clone(),
            r: cfg.warp_knots.interior_count(),
            nb,
            cfg: cfg.clone(),
        })
    }

    fn init_state(&self, warm: Option<&[WarpParams]>) -> Result<State> {
        let warps: Vec<WarpParams> = match warm {
            Some(w) => {
                if w.len() != self.n {
                    return Err(Error::Contract("warm-start warp count mismatch".into()));
                }
                w.to_vec()
            }
            None => (0..self.n)
                .map(|_| WarpParams::identity(self.warp_knots.clone()))
                .collect(),
        };
        let nq = self.nb.qg.len();
        let nbc = self.basis.uni().count();
        let mut state = State {
            exps: Vec::new(),
            warps,
            xw: vec![vec![0.0; nq]; self.n],
            yw: vec![vec![0.0; nq]; self.n],
            mu_x: vec![0.0; nq],
            mu_y: vec![0.0; nq],
            ucum: vec![DMatrix::zeros(nbc, nq); self.n],
            mucum: DMatrix::zeros(nbc, nq),
            rho: vec![vec![0.0; nq]; self.n],
            rho_bar: vec![0.0; nq],
            damping: vec![1e-3; self.n],
        };
        self.refresh_warped(&mut state)?;
        Ok(state)
    }

    /// Recomputes warped curves, means, and centered cumulative integrals
    /// from the current warps.
    fn refresh_warped(&self, state: &mut State) -> Result<()> {
        let nq = self.nb.qg.len();
        let nodes = self.nb.qg.nodes();
        state.exps = state
            .warps
            .iter()
            .map(|w| w.expand_with_gradient())
            .collect::<Result<Vec<_>>>()?;
        let mut wv = vec![0.0; nq];
        for i in 0..self.n {
            state.exps[i].warp.eval_sorted_into(nodes, &mut wv);
            self.x.curve(i).eval_sorted_into(&wv, &mut state.xw[i])?;
            self.y.curve(i).eval_sorted_into(&wv, &mut state.yw[i])?;
        }
        for v in 0..nq {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for i in 0..self.n {
                sx += state.xw[i][v];
                sy += state.yw[i][v];
            }
            state.mu_x[v] = sx / self.n as f64;
            state.mu_y[v] = sy / self.n as f64;
        }
        self.nb.cum_psi_into(&state.mu_x, &mut state.mucum);
        let mut centered = vec![0.0; nq];
        for i in 0..self.n {
            for v in 0..nq {
                centered[v] = state.xw[i][v] - state.mu_x[v];
            }
            self.nb.cum_psi_into(&centered, &mut state.ucum[i]);
        }
        Ok(())
    }

    /// Assembles `A = sum_i <z_i, z_i'>` and `rhs = sum_i <z_i, y*_i>` from
    /// the sparse per-node regressor entries.
    fn assemble(&self, state: &State) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.basis.p();
        let q = self.basis.uni().order();
        let by_t = self.basis.by_t_axis();
        let nq = self.nb.qg.len();
        let weights = self.nb.qg.weights();
        let mut a = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        // per-subject partial sums keep the reduction order canonical, so
        // reordering subjects permutes exact summands instead of reshuffling
        // a single accumulator
        let mut a_i = DMatrix::zeros(p, p);
        let mut rhs_i = DVector::zeros(p);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(q * self.basis.uni().count());
        for i in 0..self.n {
            let ucum = &state.ucum[i];
            a_i.fill(0.0);
            rhs_i.fill(0.0);
            for v in 0..nq {
                entries.clear();
                for jo in 0..q {
                    let pj = self.nb.act[(v, jo)];
                    if pj == 0.0 {
                        continue;
                    }
                    let j = self.nb.act0[v] + jo;
                    for &(k, iu) in &by_t[j] {
                        let z = pj * ucum[(iu, v)];
                        if z != 0.0 {
                            entries.push((k, z));
                        }
                    }
                }
                if entries.is_empty() {
                    continue;
                }
                let w = weights[v];
                let ystar = state.yw[i][v] - state.mu_y[v];
                for (ai, &(ka, za)) in entries.iter().enumerate() {
                    rhs_i[ka] += w * za * ystar;
                    let wza = w * za;
                    for &(kb, zb) in &entries[ai..] {
                        if ka <= kb {
                            a_i[(ka, kb)] += wza * zb;
                        } else {
                            a_i[(kb, ka)] += wza * zb;
                        }
                    }
                }
            }
            a += &a_i;
            rhs += &rhs_i;
        }
        for k in 0..p {
            for l in 0..k {
                a[(k, l)] = a[(l, k)];
            }
        }
        (a, rhs)
    }

    /// Residuals `rho_i = yw_i - (B xw_i)` for the given slope, via the
    /// centered decomposition `B xw_i = B (xw_i - mu_x) + B mu_x`.
    fn refresh_rho(&self, state: &mut State, b: &DVector<f64>) {
        let nq = self.nb.qg.len();
        let mut mu_beta = vec![0.0; nq];
        self.nb.apply_beta_into(&self.basis, b, &state.mucum, &mut mu_beta);
        let mut bx = vec![0.0; nq];
        for i in 0..self.n {
            self.nb.apply_beta_into(&self.basis, b, &state.ucum[i], &mut bx);
            for v in 0..nq {
                state.rho[i][v] = state.yw[i][v] - bx[v] - mu_beta[v];
            }
        }
        for v in 0..nq {
            let mut s = 0.0;
            for i in 0..self.n {
                s += state.rho[i][v];
            }
            state.rho_bar[v] = s / self.n as f64;
        }
    }

    /// `MSE = n^{-1} sum_i || rho_i - rho_bar ||^2`.
    fn mse(&self, state: &State) -> f64 {
        let nq = self.nb.qg.len();
        let w = self.nb.qg.weights();
        let mut total = 0.0;
        for i in 0..self.n {
            let mut acc = 0.0;
            for v in 0..nq {
                let e = state.rho[i][v] - state.rho_bar[v];
                acc += w[v] * e * e;
            }
            total += acc;
        }
        total / self.n as f64
    }

    fn solve_ridge(&self, a: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let a_lambda = a + self.basis.omega() * (self.n as f64 * lambda);
        let chol = cholesky_checked(a_lambda, lambda)?;
        Ok(chol.solve(rhs))
    }

    fn df(&self, a: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        let a_lambda = a + self.basis.omega() * (self.n as f64 * lambda);
        let chol = cholesky_checked(a_lambda, lambda)?;
        Ok(chol.solve(a).trace())
    }

    /// One damped Gauss-Newton step on subject `i`'s warp parameters, with
    /// acceptance on the subject residual against the sweep-frozen mean
    /// residual. Returns `true` when a step was accepted.
    fn subject_step(&self, state: &mut State, i: usize, b: &DVector<f64>) -> Result<bool> {
        let nq = self.nb.qg.len();
        let r = self.r;
        let weights = self.nb.qg.weights();
        let nodes = self.nb.qg.nodes();

        // current subject objective: ||rho_i - rho_bar||^2
        let cur_obj: f64 = (0..nq)
            .map(|v| {
                let e = state.rho[i][v] - state.rho_bar[v];
                weights[v] * e * e
            })
            .sum();

        // Jacobian of the subject residual in theta: D_theta rho_i
        // = y'(w(t)) Dw(t) - B[x'(w(s)) Dw(s)](t), column per parameter
        let exp = &state.exps[i];
        let mut wv = vec![0.0; nq];
        exp.warp.eval_sorted_into(nodes, &mut wv);
        let mut ydw = vec![0.0; nq];
        self.y.curve(i).deriv_sorted_into(&wv, &mut ydw)?;
        let mut xdw = vec![0.0; nq];
        self.x.curve(i).deriv_sorted_into(&wv, &mut xdw)?;
        let mut grad = DMatrix::zeros(nq, r);
        exp.gradient_sorted_into(nodes, &mut grad)?;

        let nbc = self.basis.uni().count();
        let mut jac = DMatrix::zeros(nq, r);
        let mut prod = vec![0.0; nq];
        let mut vcum = DMatrix::zeros(nbc, nq);
        let mut bterm = vec![0.0; nq];
        for c in 0..r {
            for v in 0..nq {
                prod[v] = xdw[v] * grad[(v, c)];
            }
            self.nb.cum_psi_into(&prod, &mut vcum);
            self.nb.apply_beta_into(&self.basis, b, &vcum, &mut bterm);
            for v in 0..nq {
                jac[(v, c)] = ydw[v] * grad[(v, c)] - bterm[v];
            }
        }

        // normal equations with weights
        let mut jtj = DMatrix::zeros(r, r);
        let mut jte = DVector::zeros(r);
        for v in 0..nq {
            let w = weights[v];
            let e = state.rho[i][v] - state.rho_bar[v];
            for c in 0..r {
                let jc = jac[(v, c)];
                jte[c] += w * jc * e;
                for cc in c..r {
                    jtj[(c, cc)] += w * jc * jac[(v, cc)];
                }
            }
        }
        for c in 0..r {
            for cc in 0..c {
                jtj[(c, cc)] = jtj[(cc, c)];
            }
        }

        // a subject at its stationary point proposes nothing
        let gnorm = jte.norm();
        let scale = jtj.diagonal().amax().max(1e-300);
        if gnorm <= 1e-12 * scale.max(1.0) {
            return Ok(false);
        }

        let mut nu = state.damping[i];
        let mut rho_cand = vec![0.0; nq];
        let mut xw_cand = vec![0.0; nq];
        let mut yw_cand = vec![0.0; nq];
        let mut ucum_cand = DMatrix::zeros(nbc, nq);
        let mut centered = vec![0.0; nq];
        let mut mu_beta = vec![0.0; nq];
        self.nb.apply_beta_into(&self.basis, b, &state.mucum, &mut mu_beta);

        for _try in 0..self.cfg.backtrack_max {
            let mut damped = jtj.clone();
            for c in 0..r {
                damped[(c, c)] += nu;
            }
            let delta = match Cholesky::new(damped) {
                Some(ch) => ch.solve(&(-&jte)),
                None => {
                    nu = (nu * 10.0).min(1e12);
                    continue;
                }
            };
            let step = delta.norm();
            let theta_norm = state.warps[i].theta().iter().map(|t| t * t).sum::<f64>().sqrt();
            if step <= 1e-13 * (1.0 + theta_norm) {
                break;
            }
            let theta_new: Vec<f64> = state.warps[i]
                .theta()
                .iter()
                .zip(delta.iter())
                .map(|(t, d): (&f64, &f64)| (t + d).clamp(-THETA_CLAMP, THETA_CLAMP))
                .collect();
            let cand = WarpParams::new(self.warp_knots.clone(), theta_new)?;
            let cand_exp = cand.expand_with_gradient()?;
            cand_exp.warp.eval_sorted_into(nodes, &mut wv);
            self.x.curve(i).eval_sorted_into(&wv, &mut xw_cand)?;
            self.y.curve(i).eval_sorted_into(&wv, &mut yw_cand)?;
            for v in 0..nq {
                centered[v] = xw_cand[v] - state.mu_x[v];
            }
            self.nb.cum_psi_into(&centered, &mut ucum_cand);
            self.nb.apply_beta_into(&self.basis, b, &ucum_cand, &mut rho_cand);
            for v in 0..nq {
                rho_cand[v] = yw_cand[v] - rho_cand[v] - mu_beta[v];
            }
            let cand_obj: f64 = (0..nq)
                .map(|v| {
                    let e = rho_cand[v] - state.rho_bar[v];
                    weights[v] * e * e
                })
                .sum();
            if cand_obj < cur_obj {
                // accept; the mean residual stays frozen for the whole sweep
                // (Jacobi style), which keeps the sweep order-independent
                // while still decreasing the total objective
                state.rho[i].copy_from_slice(&rho_cand);
                state.xw[i].copy_from_slice(&xw_cand);
                state.yw[i].copy_from_slice(&yw_cand);
                state.ucum[i].copy_from(&ucum_cand);
                state.warps[i] = cand;
                state.exps[i] = cand_exp;
                state.damping[i] = (nu / 10.0).max(1e-12);
                return Ok(true);
            }
            nu = (nu * 10.0).min(1e12);
        }
        state.damping[i] = nu;
        Ok(false)
    }

    /// Penalized objective `MSE + lambda b' Omega b`.
    fn objective(&self, state: &State, b: &DVector<f64>, lambda: f64) -> f64 {
        let pen = (b.transpose() * self.basis.omega() * b)[(0, 0)];
        self.mse(state) + lambda * pen
    }

    fn fit_at(&self, lambda: f64, warm: Option<&[WarpParams]>) -> Result<FitResult> {
        let mut state = self.init_state(warm)?;
        let mut trace: Vec<f64> = Vec::new();
        let mut b: DVector<f64>;
        let mut converged = false;

        for _outer in 0..self.cfg.max_outer {
            self.refresh_warped(&mut state)?;
            let (a, rhs) = self.assemble(&state);
            b = self.solve_ridge(&a, &rhs, lambda)?;
            self.refresh_rho(&mut state, &b);
            let obj_ridge = self.objective(&state, &b, lambda);
            let mut obj = obj_ridge;

            if self.r > 0 {
                let pre_sweep: Vec<WarpParams> = state.warps.clone();
                // damping restarts each sweep: the slope update changed the
                // subproblems, and a saturated value would freeze a subject
                for d in &mut state.damping {
                    *d = 1e-3;
                }
                for i in 0..self.n {
                    self.subject_step(&mut state, i, &b)?;
                }
                let post_sweep: Vec<WarpParams> = state.warps.clone();
                obj = self.center_with_backtracking(
                    &mut state,
                    &b,
                    lambda,
                    obj_ridge,
                    &pre_sweep,
                    &post_sweep,
                )?;
            }

            let improved = trace.last().map_or(true, |&prev| {
                (prev - obj).abs() > self.cfg.rel_tol * prev.abs().max(1e-12)
            });
            trace.push(obj);
            if !improved {
                converged = true;
                break;
            }
        }

        // final ridge refresh so the returned coefficients are exactly
        // optimal for the returned warps
        self.refresh_warped(&mut state)?;
        let (a, rhs) = self.assemble(&state);
        b = self.solve_ridge(&a, &rhs, lambda)?;
        self.refresh_rho(&mut state, &b);
        let obj = self.objective(&state, &b, lambda);
        if trace.last().map_or(true, |&prev| obj < prev) {
            trace.push(obj);
        }
        let df = self.df(&a, lambda)?;
        let mse = self.mse(&state);

        Ok(self.build_result(state, b, lambda, df, mse, trace, converged))
    }

    /// Centers the post-sweep warps; when the centered configuration would
    /// push the objective above the post-ridge value, the sweep displacement
    /// is halved (in parameter space) until the centered objective descends.
    /// Falling back to the pre-sweep warps is always valid since those are
    /// centered already.
    #[allow(clippy::too_many_arguments)]
    fn center_with_backtracking(
        &self,
        state: &mut State,
        b: &DVector<f64>,
        lambda: f64,
        obj_ridge: f64,
        pre_sweep: &[WarpParams],
        post_sweep: &[WarpParams],
    ) -> Result<f64> {
        let mut scale = 1.0;
        for _ in 0..=self.cfg.backtrack_max {
            let blended: Vec<WarpParams> = pre_sweep
                .iter()
                .zip(post_sweep)
                .map(|(p0, p1)| {
                    let theta: Vec<f64> = p0
                        .theta()
                        .iter()
                        .zip(p1.theta())
                        .map(|(a, bb)| a + scale * (bb - a))
                        .collect();
                    WarpParams::new(self.warp_knots.clone(), theta)
                })
                .collect::<Result<Vec<_>>>()?;
            let centered = match center_warps(&blended) {
                Ok(c) => c,
                // projection could not restore the constraint at this step
                // size; shrink the sweep and retry
                Err(Error::Contract(_)) => {
                    scale *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            state.warps = centered;
            self.refresh_warped(state)?;
            self.refresh_rho(state, b);
            let obj = self.objective(state, b, lambda);
            if obj <= obj_ridge + 1e-12 * obj_ridge.abs().max(1e-12) {
                return Ok(obj);
            }
            scale *= 0.5;
        }

        // no scaled sweep helped: keep the pre-sweep (already centered) warps
        state.warps = pre_sweep.to_vec();
        self.refresh_warped(state)?;
        self.refresh_rho(state, b);
        Ok(self.objective(state, b, lambda))
    }

    fn build_result(
        &self,
        state: State,
        b: DVector<f64>,
        lambda: f64,
        df: f64,
        mse: f64,
        trace: Vec<f64>,
        converged: bool,
    ) -> FitResult {
        let widx = self.nb.qg.working_index();
        let grid = self.x.grid().clone();
        let sample = |vals: &[f64]| -> Curve {
            let v: Vec<f64> = widx.iter().map(|&ix| vals[ix]).collect();
            Curve::new(grid.clone(), v).expect("working-grid curve")
        };
        // alpha = mu_y~ - B[mu_x~] = mean residual curve
        let alpha_hat = sample(&state.rho_bar);
        let mu_x_tilde = sample(&state.mu_x);
        let mu_y_tilde = sample(&state.mu_y);
        let n = self.n;
        FitResult {
            basis: self.basis.clone(),
            warp_knots: self.warp_knots.clone(),
            b_hat: SlopeCoefficients::new(b),
            alpha_hat,
            warps: state.warps,
            lambda_hat: lambda,
            df,
            mse,
            aicc: aicc(mse, df, n).ok(),
            gcv: gcv(mse, df, n).ok(),
            mu_x_tilde,
            mu_y_tilde,
            objective_trace: trace,
            converged,
            paths: Vec::new(),
            aicc_boundary: false,
            quad_refine: self.cfg.quad_refine,
        }
    }

    /// Fits every grid value in descending lambda order with warm-started
    /// warps; results are returned in ascending grid order.
    fn fit_grid(&self) -> Result<Vec<FitResult>> {
        let grid = &self.cfg.lambda_grid;
        let mut results: Vec<Option<FitResult>> = (0..grid.len()).map(|_| None).collect();
        if self.r == 0 {
            // warps are pinned at the identity: one assembly serves the
            // whole grid
            let mut state = self.init_state(None)?;
            self.refresh_warped(&mut state)?;
            let (a, rhs) = self.assemble(&state);
            for (idx, &lambda) in grid.iter().enumerate() {
                let b = self.solve_ridge(&a, &rhs, lambda)?;
                self.refresh_rho(&mut state, &b);
                let df = self.df(&a, lambda)?;
                let mse = self.mse(&state);
                let obj = self.objective(&state, &b, lambda);
                let mut res =
                    self.build_result_shallow(&state, b, lambda, df, mse, vec![obj], true)?;
                res.converged = true;
                results[idx] = Some(res);
            }
        } else {
            let mut warm: Option<Vec<WarpParams>> = None;
            for idx in (0..grid.len()).rev() {
                let fit = self.fit_at(grid[idx], warm.as_deref())?;
                warm = Some(fit.warps.clone());
                results[idx] = Some(fit);
            }
        }
        Ok(results.into_iter().map(|r| r.expect("fit for every grid value")).collect())
    }

    fn build_result_shallow(
        &self,
        state: &State,
        b: DVector<f64>,
        lambda: f64,
        df: f64,
        mse: f64,
        trace: Vec<f64>,
        converged: bool,
    ) -> Result<FitResult> {
        let widx = self.nb.qg.working_index();
        let grid = self.x.grid().clone();
        let sample = |vals: &[f64]| -> Result<Curve> {
            let v: Vec<f64> = widx.iter().map(|&ix| vals[ix]).collect();
            Curve::new(grid.clone(), v)
        };
        let n = self.n;
        Ok(FitResult {
            basis: self.basis.clone(),
            warp_knots: self.warp_knots.clone(),
            b_hat: SlopeCoefficients::new(b),
            alpha_hat: sample(&state.rho_bar)?,
            warps: state.warps.clone(),
            lambda_hat: lambda,
            df,
            mse,
            aicc: aicc(mse, df, n).ok(),
            gcv: gcv(mse, df, n).ok(),
            mu_x_tilde: sample(&state.mu_x)?,
            mu_y_tilde: sample(&state.mu_y)?,
            objective_trace: trace,
            converged,
            paths: Vec::new(),
            aicc_boundary: false,
            quad_refine: self.cfg.quad_refine,
        })
    }
}

/// Shifts every subject's warp knot values by the cross-subject mean
/// deviation so the mean warp interpolates the identity at the knots.
/// A sort-preserving projection restores strict monotonicity if the shift
/// breaks it; if projection and re-centering cannot agree, the subject is
/// reported in a contract error.
pub fn center_warps(warps: &[WarpParams]) -> Result<Vec<WarpParams>> {
    let n = warps.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let knots = warps[0].knots().clone();
    let r = knots.interior_count();
    if r == 0 {
        return Ok(warps.to_vec());
    }
    let tau = knots.tau();
    let span = knots.b() - knots.a();

    let mut cs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for w in warps {
        if w.knots() != &knots {
            return Err(Error::Contract("warps share different knot vectors".into()));
        }
        cs.push(w.expand()?.knot_values().to_vec());
    }
    // per-subject gap floor: global scale, but never larger than half the
    // subject's own tightest gap (near-degenerate warps stay untouched when
    // they are already monotone)
    let gap_floor: Vec<f64> = cs
        .iter()
        .map(|c| {
            let own = c.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            (CENTER_MIN_GAP * span).min(0.5 * own)
        })
        .collect();

    for round in 0..10 {
        // mean deviation at the interior knots
        let mut delta = vec![0.0; r];
        for c in &cs {
            for k in 1..=r {
                delta[k - 1] += c[k] - tau[k];
            }
        }
        for d in &mut delta {
            *d /= n as f64;
        }
        let worst = delta.iter().cloned().fold(0.0_f64, |m, d| m.max(d.abs()));
        if worst <= 1e-13 * span {
            let centered = cs
                .iter()
                .map(|c| WarpParams::from_knot_values(knots.clone(), c))
                .collect::<Result<Vec<_>>>()?;
            return Ok(centered);
        }
        for (i, c) in cs.iter_mut().enumerate() {
            let min_gap = gap_floor[i];
            for k in 1..=r {
                c[k] -= delta[k - 1];
            }
            // forward/backward clip keeps strict monotonicity with a
            // minimum gap
            let mut projected = false;
            for k in 1..=r {
                if c[k] < c[k - 1] + min_gap {
                    c[k] = c[k - 1] + min_gap;
                    projected = true;
                }
            }
            for k in (1..=r).rev() {
                if c[k] > c[k + 1] - min_gap {
                    c[k] = c[k + 1] - min_gap;
                    projected = true;
                }
            }
            if projected && c[1] < c[0] + min_gap * 0.5 {
                return Err(Error::Contract(format!(
                    "centering cannot preserve monotonicity for subject {i} (round {round})"
                )));
            }
        }
    }
    Err(Error::Contract(
        "centering did not converge to the identifiability constraint".into(),
    ))
}

/// One damped Gauss-Newton warp update for a single subject against fixed
/// means, never increasing the subject objective
/// `|| (y_i o w - mu_y) - B[x_i o w - mu_x] ||^2`. Returns the updated
/// parameters, or the current ones when no decrease was found.
pub fn warp_step(
    x_i: &Curve,
    y_i: &Curve,
    b: &SlopeCoefficients,
    basis: &CausalBasis,
    mu_x: &Curve,
    mu_y: &Curve,
    current: &WarpParams,
    config: &FitConfig,
) -> Result<WarpParams> {
    let grid = x_i.grid();
    let nb = NodeBasis::new(basis, grid, config.quad_refine)?;
    let nq = nb.qg.len();
    let nodes = nb.qg.nodes().to_vec();
    let weights = nb.qg.weights().to_vec();
    let r = current.knots().interior_count();
    if r == 0 {
        return Ok(current.clone());
    }

    let mut mu_x_v = vec![0.0; nq];
    let mut mu_y_v = vec![0.0; nq];
    mu_x.eval_sorted_into(&nodes, &mut mu_x_v)?;
    mu_y.eval_sorted_into(&nodes, &mut mu_y_v)?;
    let nbc = basis.uni().count();
    let mut mucum = DMatrix::zeros(nbc, nq);
    nb.cum_psi_into(&mu_x_v, &mut mucum);
    let mut offset = vec![0.0; nq];
    nb.apply_beta_into(basis, b.coeffs(), &mucum, &mut offset);
    for v in 0..nq {
        offset[v] = mu_y_v[v] - offset[v];
    }

    let residual = |params: &WarpParams| -> Result<(Vec<f64>, f64)> {
        let w = params.expand()?;
        let mut wv = vec![0.0; nq];
        w.eval_sorted_into(&nodes, &mut wv);
        let mut xw = vec![0.0; nq];
        let mut yw = vec![0.0; nq];
        x_i.eval_sorted_into(&wv, &mut xw)?;
        y_i.eval_sorted_into(&wv, &mut yw)?;
        let mut cum = DMatrix::zeros(nbc, nq);
        nb.cum_psi_into(&xw, &mut cum);
        let mut bx = vec![0.0; nq];
        nb.apply_beta_into(basis, b.coeffs(), &cum, &mut bx);
        let mut e = vec![0.0; nq];
        let mut obj = 0.0;
        for v in 0..nq {
            // yw - mu_y - B[xw - mu_x] = yw - B[xw] - offset
            e[v] = yw[v] - bx[v] - offset[v];
            obj += weights[v] * e[v] * e[v];
        }
        Ok((e, obj))
    };

    let (e0, obj0) = residual(current)?;
    let exp = current.expand_with_gradient()?;
    let mut wv = vec![0.0; nq];
    exp.warp.eval_sorted_into(&nodes, &mut wv);
    let mut ydw = vec![0.0; nq];
    y_i.deriv_sorted_into(&wv, &mut ydw)?;
    let mut xdw = vec![0.0; nq];
    x_i.deriv_sorted_into(&wv, &mut xdw)?;
    let mut grad = DMatrix::zeros(nq, r);
    exp.gradient_sorted_into(&nodes, &mut grad)?;
    let mut jac = DMatrix::zeros(nq, r);
    let mut prod = vec![0.0; nq];
    let mut vcum = DMatrix::zeros(nbc, nq);
    let mut bterm = vec![0.0; nq];
    for c in 0..r {
        for v in 0..nq {
            prod[v] = xdw[v] * grad[(v, c)];
        }
        nb.cum_psi_into(&prod, &mut vcum);
        nb.apply_beta_into(basis, b.coeffs(), &vcum, &mut bterm);
        for v in 0..nq {
            jac[(v, c)] = ydw[v] * grad[(v, c)] - bterm[v];
        }
    }
    let mut jtj = DMatrix::zeros(r, r);
    let mut jte = DVector::zeros(r);
    for v in 0..nq {
        let w = weights[v];
        for c in 0..r {
            jte[c] += w * jac[(v, c)] * e0[v];
            for cc in c..r {
                jtj[(c, cc)] += w * jac[(v, c)] * jac[(v, cc)];
            }
        }
    }
    for c in 0..r {
        for cc in 0..c {
            jtj[(c, cc)] = jtj[(cc, c)];
        }
    }

    let mut nu = 1e-3;
    for _ in 0..config.backtrack_max {
        let mut damped = jtj.clone();
        for c in 0..r {
            damped[(c, c)] += nu;
        }
        let Some(ch) = Cholesky::new(damped) else {
            nu *= 10.0;
            continue;
        };
        let delta = ch.solve(&(-&jte));
        let theta: Vec<f64> = current
            .theta()
            .iter()
            .zip(delta.iter())
            .map(|(t, d): (&f64, &f64)| (t + d).clamp(-THETA_CLAMP, THETA_CLAMP))
            .collect();
        let cand = WarpParams::new(current.knots().clone(), theta)?;
        let (_, obj) = residual(&cand)?;
        if obj < obj0 {
            return Ok(cand);
        }
        nu *= 10.0;
    }
    Ok(current.clone())
}

/// Fits the model at a single penalty value from identity warps.
pub fn alternating_fit(
    x: &CurveSample,
    y: &CurveSample,
    config: &FitConfig,
    lambda: f64,
) -> Result<FitResult> {
    if !(lambda > 0.0) {
        return Err(Error::Contract("lambda must be positive".into()));
    }
    Engine::new(x, y, config)?.fit_at(lambda, None)
}

/// Fits every value of the penalty grid (warm-starting warps along the way)
/// and returns the per-lambda results in ascending grid order.
pub fn fit_path(x: &CurveSample, y: &CurveSample, config: &FitConfig) -> Result<Vec<FitResult>> {
    Engine::new(x, y, config)?.fit_grid()
}

/// Fits the penalty grid and returns the AICC-minimizing fit, with the full
/// diagnostic path attached and a flag when the minimum sits on the boundary
/// of the grid.
pub fn select_lambda(x: &CurveSample, y: &CurveSample, config: &FitConfig) -> Result<FitResult> {
    let fits = fit_path(x, y, config)?;
    let paths: Vec<LambdaDiagnostics> = fits
        .iter()
        .map(|f| LambdaDiagnostics {
            lambda: f.lambda_hat,
            df: f.df,
            mse: f.mse,
            aicc: f.aicc,
            gcv: f.gcv,
            converged: f.converged,
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (idx, f) in fits.iter().enumerate() {
        if let Some(a) = f.aicc {
            if best.map_or(true, |(_, cur)| a < cur) {
                best = Some((idx, a));
            }
        }
    }
    let Some((idx, _)) = best else {
        return Err(Error::Selection(
            "AICC undefined on the whole grid (df >= n - 2 everywhere); \
             extend the grid toward larger lambda"
                .into(),
        ));
    };
    let boundary = idx == 0 || idx + 1 == fits.len();
    let mut chosen = fits.into_iter().nth(idx).expect("index in range");
    chosen.paths = paths;
    chosen.aicc_boundary = boundary;
    Ok(chosen)
}
