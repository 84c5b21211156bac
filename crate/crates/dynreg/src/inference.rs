//! Variance estimation for the slope surface and landmark statistics.
//!
//! The asymptotic route profiles out the warp parameters: each subject's
//! residual gradient in the slope coefficients combines the direct term with
//! a chain-rule term through the warp optimum, obtained from the Implicit
//! Function Theorem. Sample moments of those gradients give the sandwich
//! covariance of the coefficients and a pointwise variance for the surface.
//! A pairs bootstrap (refitting at the selected penalty) is available as the
//! model-free alternative, plus the significance filter and the landmark
//! difference correlations built on the fitted warps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;

use crate::basis::CausalBasis;
use crate::curves::CurveSample;
use crate::error::{Error, Result};
use crate::fit::{alternating_fit, FitConfig, FitResult, NodeBasis};
use crate::warp::WarpParams;

/// Step for the finite-difference Hessian of the subject residual.
const HESSIAN_FD_STEP: f64 = 1e-5;
/// Relative eigenvalue cutoff for the pseudo-inverse of Gamma.
const PSEUDO_INVERSE_CUTOFF: f64 = 1e-10;
/// Relative singular-value threshold below which the per-subject IFT system
/// is flagged.
const IFT_SINGULAR_CUTOFF: f64 = 1e-12;

/// Per-subject profile quantities evaluated at the fitted parameters.
pub struct ProfileDerivatives {
    /// Quadrature nodes all curves below are sampled on.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Residual curves `f_i` (subjects x nodes).
    pub residuals: Vec<Vec<f64>>,
    /// Gradient curves `f_dot_i` (`nodes x p` per subject).
    pub gradients: Vec<DMatrix<f64>>,
    /// Residual derivative in the warp parameters (`nodes x r` per subject).
    pub d_theta_r: Vec<DMatrix<f64>>,
    /// Warp-optimum sensitivity `D_b theta_i` (`r x p` per subject).
    pub d_b_theta: Vec<DMatrix<f64>>,
    /// Subjects whose IFT system was numerically singular; they are skipped
    /// by the covariance estimators.
    pub excluded: Vec<usize>,
}

impl ProfileDerivatives {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `<f_i, D_theta r_i>`, the first-order condition of the inner warp
    /// problem; near zero at a converged fit.
    pub fn stationarity_residual(&self, i: usize) -> DVector<f64> {
        let r = self.d_theta_r[i].ncols();
        let mut out = DVector::zeros(r);
        for v in 0..self.nodes.len() {
            for c in 0..r {
                out[c] += self.weights[v] * self.residuals[i][v] * self.d_theta_r[i][(v, c)];
            }
        }
        out
    }
}

struct SubjectPieces<'a> {
    fit: &'a FitResult,
    x: &'a CurveSample,
    y: &'a CurveSample,
    nb: NodeBasis,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    nbc: usize,
    r: usize,
}

impl<'a> SubjectPieces<'a> {
    fn new(fit: &'a FitResult, x: &'a CurveSample, y: &'a CurveSample) -> Result<Self> {
        if x.len() != y.len() || x.len() != fit.warps.len() {
            return Err(Error::Contract(
                "fit, covariates, and responses must have matching subject counts".into(),
            ));
        }
        let nb = NodeBasis::new(&fit.basis, x.grid(), fit.quad_refine)?;
        let nq = nb.qg.len();
        let mut mu_x = vec![0.0; nq];
        let mut mu_y = vec![0.0; nq];
        fit.mu_x_tilde.eval_sorted_into(nb.qg.nodes(), &mut mu_x)?;
        fit.mu_y_tilde.eval_sorted_into(nb.qg.nodes(), &mut mu_y)?;
        let nbc = fit.basis.uni().count();
        let r = fit.warp_knots.interior_count();
        Ok(Self { fit, x, y, nb, mu_x, mu_y, nbc, r })
    }

    /// Residual `r_i(theta, b)` on the nodes, with the means frozen at their
    /// fitted values.
    fn residual(&self, i: usize, params: &WarpParams, b: &DVector<f64>) -> Result<Vec<f64>> {
        let nq = self.nb.qg.len();
        let w = params.expand()?;
        let mut wv = vec![0.0; nq];
        w.eval_sorted_into(self.nb.qg.nodes(), &mut wv);
        let mut xw = vec![0.0; nq];
        let mut yw = vec![0.0; nq];
        self.x.curve(i).eval_sorted_into(&wv, &mut xw)?;
        self.y.curve(i).eval_sorted_into(&wv, &mut yw)?;
        let mut centered = vec![0.0; nq];
        for v in 0..nq {
            centered[v] = xw[v] - self.mu_x[v];
        }
        let mut cum = DMatrix::zeros(self.nbc, nq);
        self.nb.cum_psi_into(&centered, &mut cum);
        let mut out = vec![0.0; nq];
        self.nb.apply_beta_into(&self.fit.basis, b, &cum, &mut out);
        for v in 0..nq {
            out[v] = yw[v] - self.mu_y[v] - out[v];
        }
        Ok(out)
    }

    /// `D_theta r_i` at the given parameters (`nodes x r`).
    fn d_theta_residual(
        &self,
        i: usize,
        params: &WarpParams,
        b: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let nq = self.nb.qg.len();
        let r = self.r;
        let exp = params.expand_with_gradient()?;
        let mut wv = vec![0.0; nq];
        exp.warp.eval_sorted_into(self.nb.qg.nodes(), &mut wv);
        let mut ydw = vec![0.0; nq];
        self.y.curve(i).deriv_sorted_into(&wv, &mut ydw)?;
        let mut xdw = vec![0.0; nq];
        self.x.curve(i).deriv_sorted_into(&wv, &mut xdw)?;
        let mut grad = DMatrix::zeros(nq, r);
        exp.gradient_sorted_into(self.nb.qg.nodes(), &mut grad)?;
        let mut jac = DMatrix::zeros(nq, r);
        let mut prod = vec![0.0; nq];
        let mut vcum = DMatrix::zeros(self.nbc, nq);
        let mut bterm = vec![0.0; nq];
        for c in 0..r {
            for v in 0..nq {
                prod[v] = xdw[v] * grad[(v, c)];
            }
            self.nb.cum_psi_into(&prod, &mut vcum);
            self.nb.apply_beta_into(&self.fit.basis, b, &vcum, &mut bterm);
            for v in 0..nq {
                jac[(v, c)] = ydw[v] * grad[(v, c)] - bterm[v];
            }
        }
        Ok(jac)
    }

    /// `D_b r_i = -z_i` (`nodes x p`), with the covariate centered at the
    /// frozen mean.
    fn d_b_residual(&self, i: usize, params: &WarpParams) -> Result<DMatrix<f64>> {
        let nq = self.nb.qg.len();
        let basis = &self.fit.basis;
        let p = basis.p();
        let w = params.expand()?;
        let mut wv = vec![0.0; nq];
        w.eval_sorted_into(self.nb.qg.nodes(), &mut wv);
        let mut xw = vec![0.0; nq];
        self.x.curve(i).eval_sorted_into(&wv, &mut xw)?;
        let mut centered = vec![0.0; nq];
        for v in 0..nq {
            centered[v] = xw[v] - self.mu_x[v];
        }
        let mut cum = DMatrix::zeros(self.nbc, nq);
        self.nb.cum_psi_into(&centered, &mut cum);
        let q = basis.uni().order();
        let by_t = basis.by_t_axis();
        let mut out = DMatrix::zeros(nq, p);
        for v in 0..nq {
            for jo in 0..q {
                let pj = self.nb.act[(v, jo)];
                if pj == 0.0 {
                    continue;
                }
                let j = self.nb.act0[v] + jo;
                for &(k, iu) in &by_t[j] {
                    out[(v, k)] = -pj * cum[(iu, v)];
                }
            }
        }
        Ok(out)
    }

    /// `D_b { D_theta r_i }`: for slope index `k` and warp index `c`,
    /// `-integral phi_k(s, t) x'(w(s)) D_theta w(s)_c ds` (`r x p` of node
    /// curves contracted against `r_i` by the caller).
    fn cross_term(
        &self,
        i: usize,
        params: &WarpParams,
        residual: &[f64],
    ) -> Result<DMatrix<f64>> {
        let nq = self.nb.qg.len();
        let basis = &self.fit.basis;
        let p = basis.p();
        let r = self.r;
        let exp = params.expand_with_gradient()?;
        let mut wv = vec![0.0; nq];
        exp.warp.eval_sorted_into(self.nb.qg.nodes(), &mut wv);
        let mut xdw = vec![0.0; nq];
        self.x.curve(i).deriv_sorted_into(&wv, &mut xdw)?;
        let mut grad = DMatrix::zeros(nq, r);
        exp.gradient_sorted_into(self.nb.qg.nodes(), &mut grad)?;
        let q = basis.uni().order();
        let by_t = basis.by_t_axis();
        let weights = self.nb.qg.weights();

        let mut out = DMatrix::zeros(r, p);
        let mut prod = vec![0.0; nq];
        let mut vcum = DMatrix::zeros(self.nbc, nq);
        for c in 0..r {
            for v in 0..nq {
                prod[v] = xdw[v] * grad[(v, c)];
            }
            self.nb.cum_psi_into(&prod, &mut vcum);
            // <r_i, -phi_k-weighted cumulative>
            for v in 0..nq {
                let rw = weights[v] * residual[v];
                if rw == 0.0 {
                    continue;
                }
                for jo in 0..q {
                    let pj = self.nb.act[(v, jo)];
                    if pj == 0.0 {
                        continue;
                    }
                    let j = self.nb.act0[v] + jo;
                    for &(k, iu) in &by_t[j] {
                        out[(c, k)] -= rw * pj * vcum[(iu, v)];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Assembles the per-subject profile derivatives at the fitted parameters:
/// the residuals `f_i`, their slope gradients
/// `f_dot_i = (D_theta r_i) (D_b theta_i) + D_b r_i`, and the IFT pieces.
pub fn profile_derivatives(
    fit: &FitResult,
    x: &CurveSample,
    y: &CurveSample,
) -> Result<ProfileDerivatives> {
    let pieces = SubjectPieces::new(fit, x, y)?;
    let n = x.len();
    let r = pieces.r;
    let p = fit.basis.p();
    let nq = pieces.nb.qg.len();
    let weights = pieces.nb.qg.weights().to_vec();
    let b_hat = fit.b_hat.coeffs();

    let mut residuals = Vec::with_capacity(n);
    let mut gradients = Vec::with_capacity(n);
    let mut d_theta_all = Vec::with_capacity(n);
    let mut d_b_theta_all = Vec::with_capacity(n);
    let mut excluded = Vec::new();

    for i in 0..n {
        let params = &fit.warps[i];
        let f_i = pieces.residual(i, params, b_hat)?;
        let d_theta = pieces.d_theta_residual(i, params, b_hat)?;
        let d_b = pieces.d_b_residual(i, params)?;

        let mut d_b_theta = DMatrix::zeros(r, p);
        if r > 0 {
            // D_theta F, the Jacobian of the stationarity function
            // F(theta, b) = <r, D_theta r>, by central finite differences of
            // F itself. Expanding it as <D_theta r', D_theta r> +
            // <r, H_theta r> would need second derivatives through the
            // Fritsch-Carlson map; the difference quotient carries them all.
            let f_of = |theta: Vec<f64>| -> Result<DVector<f64>> {
                let pp = WarpParams::new(params.knots().clone(), theta)?;
                let e = pieces.residual(i, &pp, b_hat)?;
                let jac = pieces.d_theta_residual(i, &pp, b_hat)?;
                let mut out = DVector::zeros(r);
                for v in 0..nq {
                    for c in 0..r {
                        out[c] += weights[v] * e[v] * jac[(v, c)];
                    }
                }
                Ok(out)
            };
            let mut d_theta_f = DMatrix::zeros(r, r);
            for k in 0..r {
                let mut up = params.theta().to_vec();
                let mut dn = up.clone();
                up[k] += HESSIAN_FD_STEP;
                dn[k] -= HESSIAN_FD_STEP;
                let fu = f_of(up)?;
                let fd = f_of(dn)?;
                for c in 0..r {
                    d_theta_f[(c, k)] = (fu[c] - fd[c]) / (2.0 * HESSIAN_FD_STEP);
                }
            }

            // D_b F = <D_theta r', D_b r> + <r, D_b D_theta r>
            let mut d_b_f = pieces.cross_term(i, params, &f_i)?;
            for v in 0..nq {
                let w = weights[v];
                for c in 0..r {
                    let jtc = w * d_theta[(v, c)];
                    if jtc == 0.0 {
                        continue;
                    }
                    for k in 0..p {
                        let zb = d_b[(v, k)];
                        if zb != 0.0 {
                            d_b_f[(c, k)] += jtc * zb;
                        }
                    }
                }
            }

            // solve D_theta F * D_b theta = -D_b F, flagging singular systems
            let svd = d_theta_f.clone().svd(true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
            let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(smax > 0.0) || smin < IFT_SINGULAR_CUTOFF * smax {
                excluded.push(i);
                residuals.push(f_i);
                gradients.push(d_b.clone());
                d_theta_all.push(d_theta);
                d_b_theta_all.push(d_b_theta);
                continue;
            }
            d_b_theta = svd.solve(&(-&d_b_f), 0.0).map_err(|e| Error::Contract(e.to_string()))?;
        }

        // f_dot_i = D_theta r * D_b theta + D_b r. The chain factor is the
        // residual's actual sensitivity to theta (finite differences through
        // the whole warp expansion); the eta-only analytic form defines the
        // stationarity system but underestimates the chain transport.
        let mut g = d_b.clone();
        if r > 0 {
            let mut d_theta_full = DMatrix::zeros(nq, r);
            for k in 0..r {
                let mut up = params.theta().to_vec();
                let mut dn = up.clone();
                up[k] += HESSIAN_FD_STEP;
                dn[k] -= HESSIAN_FD_STEP;
                let ru =
                    pieces.residual(i, &WarpParams::new(params.knots().clone(), up)?, b_hat)?;
                let rd =
                    pieces.residual(i, &WarpParams::new(params.knots().clone(), dn)?, b_hat)?;
                for v in 0..nq {
                    d_theta_full[(v, k)] = (ru[v] - rd[v]) / (2.0 * HESSIAN_FD_STEP);
                }
            }
            g += &d_theta_full * &d_b_theta;
        }
        residuals.push(f_i);
        gradients.push(g);
        d_theta_all.push(d_theta);
        d_b_theta_all.push(d_b_theta);
    }

    Ok(ProfileDerivatives {
        nodes: pieces.nb.qg.nodes().to_vec(),
        weights,
        residuals,
        gradients,
        d_theta_r: d_theta_all,
        d_b_theta: d_b_theta_all,
        excluded,
    })
}

/// Sandwich covariance pieces for the slope coefficients.
#[derive(Clone, Debug)]
pub struct AsymptoticCov {
    pub gamma_hat: DMatrix<f64>,
    pub lambda_hat: DMatrix<f64>,
    /// `Gamma^-1 Lambda Gamma^-1 / n`.
    pub cov_b: DMatrix<f64>,
    /// Subjects excluded by the IFT singularity flag.
    pub excluded: usize,
    /// Eigenvalues cut by the pseudo-inverse.
    pub rank_deficiency: usize,
}

/// Sample estimators `Gamma = n^-1 sum <f_dot, f_dot'>`,
/// `Lambda = n^-1 sum <f, f_dot><f, f_dot'>` and the resulting coefficient
/// covariance, using an eigenvalue pseudo-inverse for `Gamma`.
pub fn asymptotic_cov(derivs: &ProfileDerivatives, _n: usize) -> Result<AsymptoticCov> {
    let n_total = derivs.residuals.len();
    let included: Vec<usize> =
        (0..n_total).filter(|i| !derivs.excluded.contains(i)).collect();
    let n = included.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 usable subjects, have {n}"
        )));
    }
    let p = derivs.gradients[0].ncols();
    let nq = derivs.nodes.len();
    let w = &derivs.weights;

    let mut gamma = DMatrix::zeros(p, p);
    let mut lambda = DMatrix::zeros(p, p);
    let mut gamma_i = DMatrix::zeros(p, p);
    for &i in &included {
        let g = &derivs.gradients[i];
        gamma_i.fill(0.0);
        let mut gvec: DVector<f64> = DVector::zeros(p);
        for v in 0..nq {
            let wv = w[v];
            for k in 0..p {
                let gk = g[(v, k)];
                if gk == 0.0 {
                    continue;
                }
                gvec[k] += wv * derivs.residuals[i][v] * gk;
                let wgk = wv * gk;
                for l in k..p {
                    gamma_i[(k, l)] += wgk * g[(v, l)];
                }
            }
        }
        gamma += &gamma_i;
        lambda += &gvec * gvec.transpose();
    }
    let scale = 1.0 / n as f64;
    gamma *= scale;
    lambda *= scale;
    for k in 0..p {
        for l in 0..k {
            gamma[(k, l)] = gamma[(l, k)];
        }
    }
    // symmetrize lambda against accumulation noise
    for k in 0..p {
        for l in 0..k {
            let v = 0.5 * (lambda[(k, l)] + lambda[(l, k)]);
            lambda[(k, l)] = v;
            lambda[(l, k)] = v;
        }
    }

    let eig = gamma.clone().symmetric_eigen();
    let emax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = PSEUDO_INVERSE_CUTOFF * emax.max(f64::MIN_POSITIVE);
    let mut rank_deficiency = 0;
    let mut inv_vals = DVector::zeros(p);
    for k in 0..p {
        if eig.eigenvalues[k] > cutoff {
            inv_vals[k] = 1.0 / eig.eigenvalues[k];
        } else {
            rank_deficiency += 1;
        }
    }
    let gamma_inv =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let cov_b = (&gamma_inv * &lambda * &gamma_inv) * scale;
    // exact symmetry for downstream quadratic forms
    let mut cov_sym = cov_b.clone();
    for k in 0..p {
        for l in 0..k {
            let v = 0.5 * (cov_b[(k, l)] + cov_b[(l, k)]);
            cov_sym[(k, l)] = v;
            cov_sym[(l, k)] = v;
        }
    }

    Ok(AsymptoticCov {
        gamma_hat: gamma,
        lambda_hat: lambda,
        cov_b: cov_sym,
        excluded: derivs.excluded.len(),
        rank_deficiency,
    })
}

/// Pointwise slope variance `phi(s,t)' cov_b phi(s,t)`; exactly zero for
/// `s > t`.
pub fn beta_variance(cov: &AsymptoticCov, basis: &CausalBasis, s: f64, t: f64) -> Result<f64> {
    let mut sparse = Vec::new();
    basis.eval_phi_sparse(s, t, &mut sparse)?;
    if sparse.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for &(k, vk) in &sparse {
        for &(l, vl) in &sparse {
            acc += vk * cov.cov_b[(k, l)] * vl;
        }
    }
    Ok(acc.max(0.0))
}

/// A pointwise variance surface for the slope estimate.
pub enum VarianceSurface {
    Asymptotic { cov: AsymptoticCov, basis: Arc<CausalBasis> },
    Bootstrap {
        s_grid: Vec<f64>,
        t_grid: Vec<f64>,
        /// Row per `s`, column per `t`.
        var: DMatrix<f64>,
        replicates: usize,
        seed: u64,
    },
}

impl VarianceSurface {
    /// Variance at `(s, t)`; zero on `s > t`. Bootstrap surfaces interpolate
    /// bilinearly between their grid nodes.
    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Ok(0.0);
        }
        match self {
            VarianceSurface::Asymptotic { cov, basis } => beta_variance(cov, basis, s, t),
            VarianceSurface::Bootstrap { s_grid, t_grid, var, .. } => {
                let locate = |grid: &[f64], v: f64| -> (usize, f64) {
                    let j = grid.partition_point(|&g| g <= v).saturating_sub(1).min(grid.len() - 2);
                    let h = grid[j + 1] - grid[j];
                    (j, ((v - grid[j]) / h).clamp(0.0, 1.0))
                };
                let (si, sa) = locate(s_grid, s);
                let (ti, ta) = locate(t_grid, t);
                let v00 = var[(si, ti)];
                let v10 = var[(si + 1, ti)];
                let v01 = var[(si, ti + 1)];
                let v11 = var[(si + 1, ti + 1)];
                let v = (1.0 - sa) * ((1.0 - ta) * v00 + ta * v01)
                    + sa * ((1.0 - ta) * v10 + ta * v11);
                Ok(v.max(0.0))
            }
        }
    }
}

/// Pairs bootstrap of the slope surface: resample subjects with replacement,
/// refit at the fixed penalty, and return the pointwise sample variance on
/// the evaluation grid. Deterministic given the seed; replicate failures are
/// skipped up to a 20% budget.
pub fn bootstrap_variance(
    x: &CurveSample,
    y: &CurveSample,
    config: &FitConfig,
    lambda: f64,
    replicates: usize,
    seed: u64,
    s_grid: &[f64],
    t_grid: &[f64],
) -> Result<VarianceSurface> {
    if replicates < 2 {
        return Err(Error::Contract(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    let n = x.len();
    let betas: Vec<Result<DMatrix<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let xb = CurveSample::new(idx.iter().map(|&i| x.curve(i).clone()).collect())?;
            let yb = CurveSample::new(idx.iter().map(|&i| y.curve(i).clone()).collect())?;
            let fit = alternating_fit(&xb, &yb, config, lambda)?;
            let mut surf = DMatrix::zeros(s_grid.len(), t_grid.len());
            for (si, &s) in s_grid.iter().enumerate() {
                for (ti, &t) in t_grid.iter().enumerate() {
                    surf[(si, ti)] = if s > t { 0.0 } else { fit.beta_at(s, t)? };
                }
            }
            Ok(surf)
        })
        .collect();

    let mut ok = Vec::new();
    let mut failures = 0usize;
    for b in betas {
        match b {
            Ok(s) => ok.push(s),
            Err(_) => failures += 1,
        }
    }
    if failures * 5 > replicates {
        return Err(Error::Contract(format!(
            "bootstrap failed in {failures} of {replicates} replicates"
        )));
    }
    if ok.len() < 2 {
        return Err(Error::Contract("fewer than 2 successful bootstrap replicates".into()));
    }

    let m = ok.len() as f64;
    let mut mean = DMatrix::zeros(s_grid.len(), t_grid.len());
    for s in &ok {
        mean += s;
    }
    mean /= m;
    let mut var = DMatrix::zeros(s_grid.len(), t_grid.len());
    for s in &ok {
        let d = s - &mean;
        var += d.component_mul(&d);
    }
    var /= m - 1.0;

    Ok(VarianceSurface::Bootstrap {
        s_grid: s_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        var,
        replicates: ok.len(),
        seed,
    })
}

/// A surface sampled on a rectangular grid (rows = s, columns = t).
#[derive(Clone, Debug)]
pub struct SurfaceTable {
    pub s_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub values: DMatrix<f64>,
}

/// Keeps the surface where `|beta| >= 2 sqrt(v)` and zeroes it elsewhere.
pub fn significance_filter(
    beta: impl Fn(f64, f64) -> Result<f64>,
    variance: &VarianceSurface,
    s_grid: &[f64],
    t_grid: &[f64],
) -> Result<SurfaceTable> {
    let mut values = DMatrix::zeros(s_grid.len(), t_grid.len());
    for (si, &s) in s_grid.iter().enumerate() {
        for (ti, &t) in t_grid.iter().enumerate() {
            let b = beta(s, t)?;
            let v = variance.eval(s, t)?;
            values[(si, ti)] = if b.abs() >= 2.0 * v.sqrt() { b } else { 0.0 };
        }
    }
    Ok(SurfaceTable { s_grid: s_grid.to_vec(), t_grid: t_grid.to_vec(), values })
}

/// Landmark-difference correlations with bootstrap standard errors.
#[derive(Clone, Debug)]
pub struct LandmarkStats {
    /// Knot-index pairs `(k1, k2)` defining the differences `c_k2 - c_k1`.
    pub pairs: Vec<(usize, usize)>,
    /// Pearson correlations between difference columns; `None` when a
    /// difference has zero variance.
    pub correlations: Vec<Vec<Option<f64>>>,
    /// Bootstrap standard errors (resampling subjects, no refitting).
    pub std_errors: Vec<Vec<Option<f64>>>,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if saa <= 1e-24 || sbb <= 1e-24 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Computes the landmark statistics from explicit warps.
pub fn landmark_stats_from_warps(
    warps: &[WarpParams],
    pairs: &[(usize, usize)],
    bootstrap_replicates: usize,
    seed: u64,
) -> Result<LandmarkStats> {
    let n = warps.len();
    if n < 3 {
        return Err(Error::Contract("landmark statistics need at least 3 subjects".into()));
    }
    let nk = warps[0].knots().tau().len();
    for &(k1, k2) in pairs {
        if k1 >= k2 || k2 >= nk {
            return Err(Error::Contract(format!(
                "invalid knot pair ({k1}, {k2}) for {nk} knots"
            )));
        }
    }
    // difference columns: d[j][i] = c_i[k2] - c_i[k1]
    let mut diffs = vec![vec![0.0; n]; pairs.len()];
    for (i, w) in warps.iter().enumerate() {
        let c = w.expand()?.knot_values().to_vec();
        for (j, &(k1, k2)) in pairs.iter().enumerate() {
            diffs[j][i] = c[k2] - c[k1];
        }
    }

    let np = pairs.len();
    let mut correlations = vec![vec![None; np]; np];
    for a in 0..np {
        for b in 0..np {
            correlations[a][b] = if a == b {
                pearson(&diffs[a], &diffs[b]).map(|_| 1.0)
            } else {
                pearson(&diffs[a], &diffs[b])
            };
        }
    }

    let mut std_errors = vec![vec![None; np]; np];
    if bootstrap_replicates >= 2 {
        let mut samples: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); np]; np];
        for rep in 0..bootstrap_replicates {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            for a in 0..np {
                for b in (a + 1)..np {
                    let da: Vec<f64> = idx.iter().map(|&i| diffs[a][i]).collect();
                    let db: Vec<f64> = idx.iter().map(|&i| diffs[b][i]).collect();
                    if let Some(rho) = pearson(&da, &db) {
                        samples[a][b].push(rho);
                    }
                }
            }
        }
        for a in 0..np {
            for b in (a + 1)..np {
                let s = &samples[a][b];
                if s.len() >= 2 {
                    let m = s.iter().sum::<f64>() / s.len() as f64;
                    let var = s.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                        / (s.len() - 1) as f64;
                    std_errors[a][b] = Some(var.sqrt());
                    std_errors[b][a] = std_errors[a][b];
                }
            }
        }
    }

    Ok(LandmarkStats { pairs: pairs.to_vec(), correlations, std_errors })
}

/// Landmark statistics from a fit's warps.
pub fn landmark_stats(
    fit: &FitResult,
    pairs: &[(usize, usize)],
    bootstrap_replicates: usize,
    seed: u64,
) -> Result<LandmarkStats> {
    landmark_stats_from_warps(&fit.warps, pairs, bootstrap_replicates, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_causal_basis, UniSplineBasis};
    use crate::curves::{Curve, TimeGrid};
    use crate::fit::{BasisSpec, FitConfig};
    use crate::warp::KnotVector;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(m: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(0.0, 1.0, m).unwrap())
    }

    fn smooth_curve(grid: &Arc<TimeGrid>, rng: &mut ChaCha8Rng) -> Curve {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let c: f64 = rng.gen_range(1.0..3.0);
        Curve::from_fn(grid.clone(), |t| a * (c * t).sin() + b * t).unwrap()
    }

    // small dynamic fit used across the tests
    fn toy_fit(n: usize, warp_r: usize, seed: u64) -> (CurveSample, CurveSample, FitResult) {
        let grid = unit_grid(41);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Curve> = (0..n)
            .map(|_| {
                let c: f64 = rng.gen_range(0.35..0.5);
                let a: f64 = rng.gen_range(0.8..1.2);
                Curve::from_fn(grid.clone(), move |t| a * (-(t - c) * (t - c) / 0.03).exp())
                    .unwrap()
            })
            .collect();
        let ys: Vec<Curve> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                // per-subject lags symmetric around zero, so the mean warp
                // stays near the identity at the optimum
                let lag = 0.05 * (2.0 * i as f64 / (n as f64 - 1.0) - 1.0);
                let mut noise = ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 3);
                let eps: f64 = noise.gen_range(-0.01..0.01);
                let v: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&t| {
                        0.3 * x.eval((t - lag).clamp(0.0, 1.0)).unwrap() + eps * (4.0 * t).sin()
                    })
                    .collect();
                Curve::new(grid.clone(), v).unwrap()
            })
            .collect();
        let x = CurveSample::new(xs).unwrap();
        let y = CurveSample::new(ys).unwrap();
        let mut config = FitConfig::new(
            BasisSpec::cubic_equispaced(1),
            KnotVector::equispaced(0.0, 1.0, warp_r).unwrap(),
        );
        config.max_outer = 250;
        config.rel_tol = 1e-12;
        let fit = alternating_fit(&x, &y, &config, 1e-3).unwrap();
        (x, y, fit)
    }

    #[test]
    fn no_warp_gradient_is_minus_regressors() {
        let (x, y, fit) = toy_fit(5, 0, 1);
        let derivs = profile_derivatives(&fit, &x, &y).unwrap();
        // with r = 0 the chain-rule term is absent: f_dot = D_b r = -z
        for i in 0..x.len() {
            let d_b = SubjectPieces::new(&fit, &x, &y)
                .unwrap()
                .d_b_residual(i, &fit.warps[i])
                .unwrap();
            assert_eq!(derivs.gradients[i], d_b);
        }
    }

    #[test]
    fn centered_covariate_kills_d_b_residual() {
        let (x, y, fit) = toy_fit(4, 0, 2);
        // x_i identical across subjects means xw == mu_x
        let grid = x.grid().clone();
        let c = Curve::from_fn(grid, |t| (2.0 * t).cos()).unwrap();
        let x_same = CurveSample::new(vec![c.clone(), c.clone(), c.clone(), c]).unwrap();
        let mut fit_same = fit.clone();
        fit_same.mu_x_tilde = x_same.mean();
        let pieces = SubjectPieces::new(&fit_same, &x_same, &y).unwrap();
        let d_b = pieces.d_b_residual(0, &fit_same.warps[0]).unwrap();
        assert!(d_b.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_full_profile_finite_differences() {
        // the acceptance-scale oracle on a small problem: re-solve the inner
        // warp problem at b +- h e_k and differentiate the profiled residual
        let (x, y, mut fit) = toy_fit(5, 1, 3);
        let fit_base = fit.clone();
        let pieces = SubjectPieces::new(&fit_base, &x, &y).unwrap();
        let p = fit.basis.p();
        let nq = pieces.nb.qg.len();
        let h = 1e-5;

        let weights = pieces.nb.qg.weights().to_vec();
        let knots = fit.warp_knots.clone();
        // the estimator's inner optimum satisfies <r, D_theta r> = 0 with
        // the eta-only warp gradient; the profile the oracle differentiates
        // is defined by that same stationarity system
        let stationarity = |i: usize, b: &DVector<f64>, theta: f64| -> f64 {
            let params = WarpParams::new(knots.clone(), vec![theta]).unwrap();
            let e = pieces.residual(i, &params, b).unwrap();
            let jac = pieces.d_theta_residual(i, &params, b).unwrap();
            (0..nq).map(|v| weights[v] * e[v] * jac[(v, 0)]).sum()
        };
        let solve_theta = |i: usize, b: &DVector<f64>, start: &WarpParams| -> WarpParams {
            let s0 = start.theta()[0];
            let mut width = 1e-4;
            let (mut lo, mut hi) = (s0, s0);
            let mut flo = 0.0;
            for _ in 0..40 {
                lo = s0 - width;
                hi = s0 + width;
                flo = stationarity(i, b, lo);
                let fhi = stationarity(i, b, hi);
                if flo.signum() != fhi.signum() {
                    break;
                }
                width *= 2.0;
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = stationarity(i, b, mid);
                if fm == 0.0 || hi - lo < 1e-15 {
                    return WarpParams::new(knots.clone(), vec![mid]).unwrap();
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            WarpParams::new(knots.clone(), vec![0.5 * (lo + hi)]).unwrap()
        };

        // polish every warp to tight stationarity at b_hat: the implicit
        // function theorem expands around the exact inner optimum
        let b_hat = fit.b_hat.coeffs().clone();
        fit.warps = (0..x.len())
            .map(|i| solve_theta(i, &b_hat, &fit.warps[i]))
            .collect();
        let derivs = profile_derivatives(&fit, &x, &y).unwrap();
        assert!(derivs.excluded.is_empty());
        for i in 0..2 {
            // probe a handful of coefficient directions
            for k in (0..p).step_by(p / 5 + 1) {
                let mut bu = b_hat.clone();
                let mut bd = b_hat.clone();
                bu[k] += h;
                bd[k] -= h;
                let tu = solve_theta(i, &bu, &fit.warps[i]);
                let td = solve_theta(i, &bd, &fit.warps[i]);

                let fu = pieces.residual(i, &tu, &bu).unwrap();
                let fd = pieces.residual(i, &td, &bd).unwrap();
                // compare the integrated gradient column against the
                // finite-difference curve in the L2 sense
                let mut num = 0.0;
                let mut den = 0.0;
                for v in 0..nq {
                    let fdv = (fu[v] - fd[v]) / (2.0 * h);
                    let an = derivs.gradients[i][(v, k)];
                    num += derivs.weights[v] * (an - fdv) * (an - fdv);
                    den += derivs.weights[v] * fdv * fdv;
                }
                let rel = (num / den.max(1e-30)).sqrt();
                assert!(
                    rel <= 1e-3,
                    "gradient mismatch for subject {i} coefficient {k}: rel {rel}"
                );
            }
        }
    }

    #[test]
    fn first_order_condition_small_at_fit() {
        let (x, y, fit) = toy_fit(8, 1, 4);
        let derivs = profile_derivatives(&fit, &x, &y).unwrap();
        for i in 0..x.len() {
            let foc = derivs.stationarity_residual(i);
            for c in 0..foc.len() {
                assert!(
                    foc[c].abs() <= 1e-4,
                    "first-order condition {:.2e} for subject {i}",
                    foc[c]
                );
            }
        }
    }

    #[test]
    fn perfect_fit_gives_zero_lambda_and_cov() {
        let (x, y, fit) = toy_fit(5, 0, 5);
        let mut derivs = profile_derivatives(&fit, &x, &y).unwrap();
        for f in &mut derivs.residuals {
            for v in f.iter_mut() {
                *v = 0.0;
            }
        }
        let cov = asymptotic_cov(&derivs, x.len()).unwrap();
        assert!(cov.lambda_hat.iter().all(|&v| v == 0.0));
        assert!(cov.cov_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicating_subjects_halves_cov() {
        // small basis keeps Gamma comfortably full rank, so the averaging
        // identity is not confounded by the pseudo-inverse cutoff
        let grid = unit_grid(31);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 6;
        let x = CurveSample::new((0..n).map(|_| smooth_curve(&grid, &mut rng)).collect()).unwrap();
        let y = CurveSample::new((0..n).map(|_| smooth_curve(&grid, &mut rng)).collect()).unwrap();
        let config = FitConfig::new(
            BasisSpec { order: 2, knots: crate::fit::BasisKnots::EquispacedInterior(0) },
            KnotVector::new(vec![0.0, 1.0]).unwrap(),
        );
        let fit = alternating_fit(&x, &y, &config, 1e-3).unwrap();
        let derivs = profile_derivatives(&fit, &x, &y).unwrap();
        let cov1 = asymptotic_cov(&derivs, x.len()).unwrap();

        let x2 = CurveSample::new(
            x.curves().iter().chain(x.curves()).cloned().collect(),
        )
        .unwrap();
        let y2 = CurveSample::new(
            y.curves().iter().chain(y.curves()).cloned().collect(),
        )
        .unwrap();
        let mut fit2 = fit.clone();
        fit2.warps = fit.warps.iter().chain(&fit.warps).cloned().collect();
        let derivs2 = profile_derivatives(&fit2, &x2, &y2).unwrap();
        let cov2 = asymptotic_cov(&derivs2, x2.len()).unwrap();

        let norm1 = cov1.gamma_hat.norm();
        assert_abs_diff_eq!((&cov1.gamma_hat - &cov2.gamma_hat).norm() / norm1, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            (&cov1.lambda_hat - &cov2.lambda_hat).norm() / cov1.lambda_hat.norm().max(1e-30),
            0.0,
            epsilon = 1e-10
        );
        // cov halves when n doubles
        let scaled = &cov1.cov_b * 0.5;
        assert!(
            (&scaled - &cov2.cov_b).norm() <= 1e-10 * scaled.norm().max(1e-30),
            "cov did not halve"
        );
    }

    #[test]
    fn two_by_two_cov_matches_hand_arithmetic() {
        // two "subjects" with hand-made residuals and gradients on a coarse
        // quadrature: compare against direct matrix arithmetic
        let nodes: Vec<f64> = (0..5).map(|v| v as f64 / 4.0).collect();
        let qg_w = vec![0.125, 0.25, 0.25, 0.25, 0.125];
        let mut gradients = Vec::new();
        let mut residuals = Vec::new();
        for s in 0..2 {
            let mut g = DMatrix::zeros(5, 2);
            let mut f = vec![0.0; 5];
            for v in 0..5 {
                g[(v, 0)] = 1.0 + s as f64;
                g[(v, 1)] = nodes[v];
                f[v] = if s == 0 { 0.5 } else { -nodes[v] };
            }
            gradients.push(g);
            residuals.push(f);
        }
        let derivs = ProfileDerivatives {
            nodes: nodes.clone(),
            weights: qg_w.clone(),
            residuals: residuals.clone(),
            gradients: gradients.clone(),
            d_theta_r: vec![DMatrix::zeros(5, 0); 2],
            d_b_theta: vec![DMatrix::zeros(0, 2); 2],
            excluded: vec![],
        };
        let cov = asymptotic_cov(&derivs, 2).unwrap();

        let dot = |a: &dyn Fn(usize) -> f64, b: &dyn Fn(usize) -> f64| -> f64 {
            (0..5).map(|v| qg_w[v] * a(v) * b(v)).sum()
        };
        let mut gamma = DMatrix::zeros(2, 2);
        let mut lambda = DMatrix::zeros(2, 2);
        for s in 0..2 {
            let g = &gradients[s];
            let f = &residuals[s];
            let mut gv = DVector::zeros(2);
            for k in 0..2 {
                gv[k] = dot(&|v| f[v], &|v| g[(v, k)]);
                for l in 0..2 {
                    gamma[(k, l)] += dot(&|v| g[(v, k)], &|v| g[(v, l)]) / 2.0;
                }
            }
            lambda += gv.clone() * gv.transpose() / 2.0;
        }
        assert!((&cov.gamma_hat - &gamma).norm() < 1e-10);
        assert!((&cov.lambda_hat - &lambda).norm() < 1e-10);
        let gamma_inv = gamma.try_inverse().unwrap();
        let expect = &gamma_inv * &lambda * &gamma_inv / 2.0;
        assert!((&cov.cov_b - &expect).norm() < 1e-10);
    }

    #[test]
    fn beta_variance_examples() {
        let uni = UniSplineBasis::equispaced_interior(0.0, 1.0, 4, 2).unwrap();
        let basis = Arc::new(build_causal_basis(uni, 101).unwrap());
        let p = basis.p();
        let cov = AsymptoticCov {
            gamma_hat: DMatrix::identity(p, p),
            lambda_hat: DMatrix::identity(p, p),
            cov_b: DMatrix::identity(p, p) / 10.0,
            excluded: 0,
            rank_deficiency: 0,
        };
        // s > t is exactly zero
        assert_eq!(beta_variance(&cov, &basis, 0.9, 0.2).unwrap(), 0.0);
        // identity/n covariance: ||phi||^2 / 10
        let phi = basis.eval_phi(0.3, 0.7).unwrap();
        let expect: f64 = phi.iter().map(|v| v * v).sum::<f64>() / 10.0;
        assert_abs_diff_eq!(beta_variance(&cov, &basis, 0.3, 0.7).unwrap(), expect, epsilon = 1e-12);
        // adversarial non-diagonal case against the dense quadratic form
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-0.1..0.1));
        let spd = &m * m.transpose();
        let cov2 = AsymptoticCov {
            gamma_hat: DMatrix::identity(p, p),
            lambda_hat: spd.clone(),
            cov_b: spd.clone(),
            excluded: 0,
            rank_deficiency: 0,
        };
        let phi_v = DVector::from_vec(basis.eval_phi(0.25, 0.6).unwrap());
        let direct = (phi_v.transpose() * &spd * &phi_v)[(0, 0)];
        assert_abs_diff_eq!(
            beta_variance(&cov2, &basis, 0.25, 0.6).unwrap(),
            direct,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bootstrap_identical_subjects_gives_zero_variance() {
        let grid = unit_grid(31);
        let xc = Curve::from_fn(grid.clone(), |t| (-(t - 0.4) * (t - 0.4) / 0.03).exp()).unwrap();
        let yc = Curve::from_fn(grid.clone(), |t| 0.5 * (-(t - 0.55) * (t - 0.55) / 0.03).exp())
            .unwrap();
        let x = CurveSample::new(vec![xc.clone(), xc.clone(), xc.clone(), xc]).unwrap();
        let y = CurveSample::new(vec![yc.clone(), yc.clone(), yc.clone(), yc]).unwrap();
        let config = FitConfig::new(
            BasisSpec::cubic_equispaced(1),
            KnotVector::new(vec![0.0, 1.0]).unwrap(),
        );
        let sg: Vec<f64> = (0..11).map(|v| v as f64 / 10.0).collect();
        let surf = bootstrap_variance(&x, &y, &config, 1e-3, 8, 42, &sg, &sg).unwrap();
        for &s in &sg {
            for &t in &sg {
                assert!(surf.eval(s, t).unwrap().abs() < 1e-16);
            }
        }
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let (x, y, _) = toy_fit(5, 0, 8);
        let config = FitConfig::new(
            BasisSpec::cubic_equispaced(1),
            KnotVector::new(vec![0.0, 1.0]).unwrap(),
        );
        let sg: Vec<f64> = (0..6).map(|v| v as f64 / 5.0).collect();
        let run = || -> DMatrix<f64> {
            match bootstrap_variance(&x, &y, &config, 1e-3, 6, 9, &sg, &sg).unwrap() {
                VarianceSurface::Bootstrap { var, .. } => var,
                _ => unreachable!(),
            }
        };
        let v1 = run();
        let v2 = run();
        assert_eq!(v1, v2);
        assert!(bootstrap_variance(&x, &y, &config, 1e-3, 1, 9, &sg, &sg).is_err());
    }

    #[test]
    fn significance_filter_threshold_arithmetic() {
        let sg: Vec<f64> = (0..5).map(|v| v as f64 / 4.0).collect();
        // constant variance 1: keeps only |beta| >= 2
        let var = VarianceSurface::Bootstrap {
            s_grid: sg.clone(),
            t_grid: sg.clone(),
            var: DMatrix::from_element(5, 5, 1.0),
            replicates: 10,
            seed: 0,
        };
        let table = significance_filter(
            |s, t| Ok(if s <= t { 1.0 } else { 0.0 }),
            &var,
            &sg,
            &sg,
        )
        .unwrap();
        assert!(table.values.iter().all(|&v| v == 0.0)); // 1 < 2
        let table2 = significance_filter(
            |s, t| Ok(if s <= t { 3.0 } else { 0.0 }),
            &var,
            &sg,
            &sg,
        )
        .unwrap();
        for (si, &s) in sg.iter().enumerate() {
            for (ti, &t) in sg.iter().enumerate() {
                let expect = if s <= t { 3.0 } else { 0.0 };
                assert_eq!(table2.values[(si, ti)], expect);
            }
        }
        // zero variance keeps everything nonzero
        let var0 = VarianceSurface::Bootstrap {
            s_grid: sg.clone(),
            t_grid: sg.clone(),
            var: DMatrix::zeros(5, 5),
            replicates: 10,
            seed: 0,
        };
        let table3 = significance_filter(|_, _| Ok(0.25), &var0, &sg, &sg).unwrap();
        assert!(table3.values.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn landmark_correlations_identity_and_planted() {
        let knots = KnotVector::new(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        // all-identity warps: differences constant, correlation undefined
        let id = vec![WarpParams::identity(knots.clone()); 5];
        let stats =
            landmark_stats_from_warps(&id, &[(1, 2), (2, 3)], 0, 1).unwrap();
        assert!(stats.correlations[0][1].is_none());

        // planted correlation: c differences driven by a common factor
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 100;
        let mut warps = Vec::with_capacity(n);
        for _ in 0..n {
            let f: f64 = rng.gen_range(-1.0..1.0);
            let e1: f64 = rng.gen_range(-1.0..1.0);
            let e2: f64 = rng.gen_range(-1.0..1.0);
            // d1 and d2 share the factor with opposite loadings -> negative
            // correlation around -0.5
            let d1 = 0.2 + 0.03 * (f + e1);
            let d2 = 0.2 - 0.03 * (0.55 * f - 0.83 * e2);
            let c = vec![0.0, 0.2, 0.2 + d1, 0.2 + d1 + d2, 0.8, 1.0];
            warps.push(WarpParams::from_knot_values(knots.clone(), &c).unwrap());
        }
        let stats =
            landmark_stats_from_warps(&warps, &[(1, 2), (2, 3)], 200, 3).unwrap();
        let rho = stats.correlations[0][1].unwrap();
        assert!(rho < -0.25 && rho > -0.75, "planted correlation missed: {rho}");
        assert!(stats.std_errors[0][1].unwrap() > 0.0);

        // perfectly anti-correlated differences
        let mut anti = Vec::new();
        for i in 0..10 {
            let d1 = 0.15 + 0.002 * i as f64;
            let d2 = 0.25 - 0.002 * i as f64;
            let c = vec![0.0, 0.2, 0.2 + d1, 0.2 + d1 + d2, 0.8, 1.0];
            anti.push(WarpParams::from_knot_values(knots.clone(), &c).unwrap());
        }
        let stats = landmark_stats_from_warps(&anti, &[(1, 2), (2, 3)], 0, 1).unwrap();
        assert_abs_diff_eq!(stats.correlations[0][1].unwrap(), -1.0, epsilon = 1e-10);
    }
}
