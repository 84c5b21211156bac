//! Prediction for new covariate curves.
//!
//! A new curve first gets its own warp by least-squares registration onto
//! the fitted warped-covariate mean; the response prediction then evaluates
//! the dynamic predictor `alpha(u) + integral beta(s, u) x_new(w(s)) ds` at
//! `u = w^{-1}(t)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::CausalBasis;
use crate::curves::{Curve, QuadGrid};
use crate::error::{Error, Result};
use crate::fit::{FitResult, NodeBasis};
use crate::warp::{KnotVector, WarpParams, THETA_CLAMP};

/// Registration iteration cap.
const REG_MAX_ITER: usize = 50;
/// Relative objective change below which registration stops.
const REG_REL_TOL: f64 = 1e-8;
/// Damping retries per iteration.
const REG_BACKTRACK: usize = 10;

/// A predicted response with the warp used to produce it.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub y_hat: Curve,
    pub warp: WarpParams,
    /// Final registration objective `|| x_new o w - mu_x~ ||^2`.
    pub registration_objective: f64,
}

fn registration_objective(
    x_new: &Curve,
    mu: &[f64],
    qg: &QuadGrid,
    params: &WarpParams,
) -> Result<f64> {
    let w = params.expand()?;
    let mut wv = vec![0.0; qg.len()];
    w.eval_sorted_into(qg.nodes(), &mut wv);
    let mut xw = vec![0.0; qg.len()];
    x_new.eval_sorted_into(&wv, &mut xw)?;
    let mut obj = 0.0;
    for v in 0..qg.len() {
        let e = xw[v] - mu[v];
        obj += qg.weights()[v] * e * e;
    }
    Ok(obj)
}

fn register_from(
    x_new: &Curve,
    mu: &[f64],
    qg: &QuadGrid,
    start: WarpParams,
) -> Result<(WarpParams, f64)> {
    let r = start.knots().interior_count();
    let mut params = start;
    let mut obj = registration_objective(x_new, mu, qg, &params)?;
    if r == 0 {
        return Ok((params, obj));
    }
    let nq = qg.len();
    let mut nu = 1e-3;
    for _ in 0..REG_MAX_ITER {
        let exp = params.expand_with_gradient()?;
        let mut wv = vec![0.0; nq];
        exp.warp.eval_sorted_into(qg.nodes(), &mut wv);
        let mut xw = vec![0.0; nq];
        x_new.eval_sorted_into(&wv, &mut xw)?;
        let mut xdw = vec![0.0; nq];
        x_new.deriv_sorted_into(&wv, &mut xdw)?;
        let mut grad = DMatrix::zeros(nq, r);
        exp.gradient_sorted_into(qg.nodes(), &mut grad)?;

        let mut jtj = DMatrix::zeros(r, r);
        let mut jte = DVector::zeros(r);
        for v in 0..nq {
            let w = qg.weights()[v];
            let e = xw[v] - mu[v];
            for c in 0..r {
                let jc = xdw[v] * grad[(v, c)];
                jte[c] += w * jc * e;
                for cc in c..r {
                    jtj[(c, cc)] += w * jc * xdw[v] * grad[(v, cc)];
                }
            }
        }
        for c in 0..r {
            for cc in 0..c {
                jtj[(c, cc)] = jtj[(cc, c)];
            }
        }

        let mut accepted = false;
        for _ in 0..REG_BACKTRACK {
            let mut damped = jtj.clone();
            for c in 0..r {
                damped[(c, c)] += nu;
            }
            let Some(ch) = Cholesky::new(damped) else {
                nu = (nu * 10.0_f64).min(1e12);
                continue;
            };
            let delta = ch.solve(&(-&jte));
            let theta: Vec<f64> = params
                .theta()
                .iter()
                .zip(delta.iter())
                .map(|(t, d): (&f64, &f64)| (t + d).clamp(-THETA_CLAMP, THETA_CLAMP))
                .collect();
            let cand = WarpParams::new(params.knots().clone(), theta)?;
            let cand_obj = registration_objective(x_new, mu, qg, &cand)?;
            if cand_obj < obj {
                let rel = (obj - cand_obj) / obj.abs().max(1e-300);
                params = cand;
                obj = cand_obj;
                nu = (nu / 10.0).max(1e-12);
                accepted = true;
                if rel < REG_REL_TOL {
                    return Ok((params, obj));
                }
                break;
            }
            nu = (nu * 10.0).min(1e12);
        }
        if !accepted {
            break;
        }
    }
    Ok((params, obj))
}

/// Registers a new covariate onto the warped covariate mean by damped
/// Gauss-Newton from three deterministic starts (the identity warp and
/// identity +- 0.5 on every parameter); the best final objective wins and
/// ties prefer the identity start.
pub fn register_new(
    x_new: &Curve,
    mu_x_tilde: &Curve,
    warp_knots: &KnotVector,
    quad_refine: usize,
) -> Result<WarpParams> {
    let qg = QuadGrid::refine_grid(x_new.grid(), quad_refine.max(1));
    let mut mu = vec![0.0; qg.len()];
    mu_x_tilde.eval_sorted_into(qg.nodes(), &mut mu)?;
    register_multistart(x_new, &mu, &qg, warp_knots)
}

fn register_multistart(
    x_new: &Curve,
    mu: &[f64],
    qg: &QuadGrid,
    warp_knots: &KnotVector,
) -> Result<WarpParams> {
    let identity = WarpParams::identity(warp_knots.clone());
    let r = warp_knots.interior_count();
    let mut starts = vec![identity.clone()];
    if r > 0 {
        for offset in [0.5, -0.5] {
            let theta: Vec<f64> = identity.theta().iter().map(|t| t + offset).collect();
            starts.push(WarpParams::new(warp_knots.clone(), theta)?);
        }
    }

    let mut best: Option<(WarpParams, f64)> = None;
    for start in starts {
        let (params, obj) = register_from(x_new, mu, qg, start)?;
        if best.as_ref().map_or(true, |(_, cur)| obj < *cur) {
            best = Some((params, obj));
        }
    }
    Ok(best.expect("at least one start").0)
}

/// Caches the per-fit evaluation state (basis on the quadrature nodes and
/// the registration target) so many curves can be predicted cheaply.
pub struct Predictor<'f> {
    fit: &'f FitResult,
    nb: NodeBasis,
    mu_nodes: Vec<f64>,
    alpha_nodes: Vec<f64>,
}

impl<'f> Predictor<'f> {
    pub fn new(fit: &'f FitResult) -> Result<Self> {
        let grid = fit.mu_x_tilde.grid().clone();
        let nb = NodeBasis::new(&fit.basis, &grid, fit.quad_refine)?;
        let mut mu_nodes = vec![0.0; nb.qg.len()];
        fit.mu_x_tilde.eval_sorted_into(nb.qg.nodes(), &mut mu_nodes)?;
        let mut alpha_nodes = vec![0.0; nb.qg.len()];
        fit.alpha_hat.eval_sorted_into(nb.qg.nodes(), &mut alpha_nodes)?;
        Ok(Self { fit, nb, mu_nodes, alpha_nodes })
    }

    /// Registration of a new covariate onto the warped covariate mean.
    pub fn register(&self, x_new: &Curve) -> Result<WarpParams> {
        register_multistart(x_new, &self.mu_nodes, &self.nb.qg, &self.fit.warp_knots)
    }

    /// Dynamic prediction under an explicit warp.
    pub fn predict_with_warp(&self, x_new: &Curve, warp: &WarpParams) -> Result<Prediction> {
        predict_impl(self.fit, &self.nb, &self.mu_nodes, x_new, warp)
    }

    /// Registration followed by prediction.
    pub fn predict(&self, x_new: &Curve) -> Result<Prediction> {
        let warp = self.register(x_new)?;
        self.predict_with_warp(x_new, &warp)
    }
}

fn predict_impl(
    fit: &FitResult,
    nb: &NodeBasis,
    mu_nodes: &[f64],
    x_new: &Curve,
    warp: &WarpParams,
) -> Result<Prediction> {
    let grid = fit.mu_x_tilde.grid().clone();
    let span = grid.span();
    if (x_new.a() - grid.a()).abs() > 1e-9 * span || (x_new.b() - grid.b()).abs() > 1e-9 * span {
        return Err(Error::Domain("new covariate lives on a different interval".into()));
    }
    let basis: &CausalBasis = &fit.basis;
    let qg = &nb.qg;
    let nq = qg.len();
    let w = warp.expand()?;

    let mut wv = vec![0.0; nq];
    w.eval_sorted_into(qg.nodes(), &mut wv);
    let mut xw = vec![0.0; nq];
    x_new.eval_sorted_into(&wv, &mut xw)?;
    let nbc = basis.uni().count();
    let mut cum = DMatrix::zeros(nbc, nq);
    nb.cum_psi_into(&xw, &mut cum);

    let b = fit.b_hat.coeffs();
    let by_t = basis.by_t_axis();
    let q = basis.uni().order();
    let nodes = qg.nodes();

    let mut active = vec![0.0; q];
    let mut y_vals = Vec::with_capacity(grid.len());
    for &t in grid.points() {
        let u = w.inverse(t);
        // locate u's cell for the partial cumulative integral
        let vcell = nodes.partition_point(|&p| p <= u).saturating_sub(1).min(nq - 2);
        let start = basis.uni().eval_active_into(u, &mut active)?;
        let xw_u = x_new.eval(w.eval(u))?;
        let mut acc = fit.alpha_hat.eval(u)?;
        for (jo, &pj) in active.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let j = start + jo;
            for &(k, iu) in &by_t[j] {
                // cumulative integral of psi_iu * xw up to u: stored value at
                // the cell's left node plus the partial trapezoid
                let psi_iu_u = if iu >= start && iu < start + q {
                    active[iu - start]
                } else {
                    0.0
                };
                let partial = cum[(iu, vcell)]
                    + 0.5 * (u - nodes[vcell]) * (nb.ub[(vcell, iu)] * xw[vcell] + psi_iu_u * xw_u);
                acc += b[k] * pj * partial;
            }
        }
        y_vals.push(acc);
    }

    let mut registration_objective = 0.0;
    for v in 0..nq {
        let e = xw[v] - mu_nodes[v];
        registration_objective += qg.weights()[v] * e * e;
    }

    Ok(Prediction {
        y_hat: Curve::new(grid, y_vals)?,
        warp: warp.clone(),
        registration_objective,
    })
}

/// Evaluates the dynamic predictor for `x_new` under a given warp:
/// `y_hat(t) = alpha(u) + integral_a^u beta(s, u) x_new(w(s)) ds` with
/// `u = w^{-1}(t)`, sampled on the fit's working grid.
pub fn predict_with_warp(x_new: &Curve, fit: &FitResult, warp: &WarpParams) -> Result<Prediction> {
    Predictor::new(fit)?.predict_with_warp(x_new, warp)
}

/// Registers `x_new` and evaluates the dynamic predictor.
pub fn predict_response(x_new: &Curve, fit: &FitResult) -> Result<Prediction> {
    Predictor::new(fit)?.predict(x_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SlopeCoefficients;
    use crate::curves::{CurveSample, TimeGrid};
    use crate::fit::{alternating_fit, BasisSpec, FitConfig};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn unit_grid(m: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(0.0, 1.0, m).unwrap())
    }

    fn bump(grid: &Arc<TimeGrid>, center: f64, width: f64) -> Curve {
        Curve::from_fn(grid.clone(), |t| (-(t - center) * (t - center) / width).exp()).unwrap()
    }

    fn toy_fit(seed: u64, warp_r: usize) -> (CurveSample, CurveSample, FitResult) {
        let grid = unit_grid(61);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 8;
        let xs: Vec<Curve> = (0..n)
            .map(|_| {
                let c: f64 = rng.gen_range(0.3..0.5);
                let a: f64 = rng.gen_range(0.8..1.2);
                Curve::from_fn(grid.clone(), move |t| a * (-(t - c) * (t - c) / 0.02).exp()).unwrap()
            })
            .collect();
        let ys: Vec<Curve> = xs
            .iter()
            .map(|x| {
                let v: Vec<f64> = grid
                    .points()
                    .iter()
                    .map(|&t| 0.5 * x.eval((t - 0.1).max(0.0)).unwrap() + 0.1)
                    .collect();
                Curve::new(grid.clone(), v).unwrap()
            })
            .collect();
        let x = CurveSample::new(xs).unwrap();
        let y = CurveSample::new(ys).unwrap();
        let mut config = FitConfig::new(
            BasisSpec::cubic_equispaced(2),
            crate::warp::KnotVector::equispaced(0.0, 1.0, warp_r).unwrap(),
        );
        config.max_outer = 30;
        let fit = alternating_fit(&x, &y, &config, 1e-3).unwrap();
        (x, y, fit)
    }

    #[test]
    fn registering_the_mean_returns_identity_with_zero_objective() {
        let (_, _, fit) = toy_fit(1, 1);
        let warp = register_new(&fit.mu_x_tilde.clone(), &fit.mu_x_tilde, &fit.warp_knots, 3).unwrap();
        let id = WarpParams::identity(fit.warp_knots.clone());
        for (a, b) in warp.theta().iter().zip(id.theta()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let pred = predict_with_warp(&fit.mu_x_tilde.clone(), &fit, &warp).unwrap();
        assert!(pred.registration_objective <= 1e-18);
    }

    #[test]
    fn flat_objective_prefers_identity() {
        let grid = unit_grid(31);
        let constant = Curve::from_fn(grid.clone(), |_| 2.0).unwrap();
        let knots = crate::warp::KnotVector::equispaced(0.0, 1.0, 2).unwrap();
        let warp = register_new(&constant, &constant.clone(), &knots, 3).unwrap();
        let id = WarpParams::identity(knots);
        assert_eq!(warp.theta(), id.theta());
    }

    #[test]
    fn registration_recovers_warped_mean_at_objective_level() {
        let grid = unit_grid(101);
        let mu = bump(&grid, 0.45, 0.05);
        let knots = crate::warp::KnotVector::equispaced(0.0, 1.0, 2).unwrap();
        let w0 = WarpParams::new(knots.clone(), vec![0.1, -0.08])
            .unwrap()
            .expand()
            .unwrap();
        // x_new = mu o w0
        let x_new = mu.compose_fn(|t| w0.eval(t)).unwrap();
        let warp = register_new(&x_new, &mu, &knots, 5).unwrap();
        let qg = QuadGrid::refine_grid(&grid, 5);
        let mut muv = vec![0.0; qg.len()];
        mu.eval_sorted_into(qg.nodes(), &mut muv).unwrap();
        let obj = registration_objective(&x_new, &muv, &qg, &warp).unwrap();
        assert!(obj <= 1e-6, "registration objective {obj}");
        // never worse than the identity start
        let id_obj =
            registration_objective(&x_new, &muv, &qg, &WarpParams::identity(knots)).unwrap();
        assert!(obj <= id_obj);
    }

    #[test]
    fn zero_slope_prediction_is_warped_intercept() {
        let (_, _, fit) = toy_fit(2, 1);
        let mut zeroed = fit.clone();
        zeroed.b_hat = SlopeCoefficients::zeros(fit.basis.p());
        let grid = fit.mu_x_tilde.grid().clone();
        let x_new = bump(&grid, 0.4, 0.02);
        let warp = WarpParams::new(fit.warp_knots.clone(), vec![0.3]).unwrap();
        let pred = predict_with_warp(&x_new, &zeroed, &warp).unwrap();
        let w = warp.expand().unwrap();
        for &t in grid.points() {
            let u = w.inverse(t);
            let expect = zeroed.alpha_hat.eval(u).unwrap();
            assert_abs_diff_eq!(pred.y_hat.eval(t).unwrap(), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn prediction_is_linear_in_the_covariate_under_fixed_warp() {
        let (_, _, fit) = toy_fit(3, 1);
        let grid = fit.mu_x_tilde.grid().clone();
        let x0 = bump(&grid, 0.4, 0.02);
        let delta = Curve::from_fn(grid.clone(), |t| 0.01 * (3.0 * t).sin()).unwrap();
        let warp = WarpParams::identity(fit.warp_knots.clone());
        let base = predict_with_warp(&x0, &fit, &warp).unwrap();
        let x1 = Curve::new(
            grid.clone(),
            x0.values().iter().zip(delta.values()).map(|(a, d)| a + d).collect(),
        )
        .unwrap();
        let x2 = Curve::new(
            grid.clone(),
            x0.values().iter().zip(delta.values()).map(|(a, d)| a + 2.0 * d).collect(),
        )
        .unwrap();
        let p1 = predict_with_warp(&x1, &fit, &warp).unwrap();
        let p2 = predict_with_warp(&x2, &fit, &warp).unwrap();
        for g in 0..grid.len() {
            let d1 = p1.y_hat.values()[g] - base.y_hat.values()[g];
            let d2 = p2.y_hat.values()[g] - base.y_hat.values()[g];
            assert_abs_diff_eq!(d2, 2.0 * d1, epsilon = 1e-10);
        }
    }

    #[test]
    fn causality_zeroing_future_covariate_leaves_past_unchanged() {
        let (_, _, fit) = toy_fit(4, 1);
        let grid = fit.mu_x_tilde.grid().clone();
        let x_new = bump(&grid, 0.35, 0.03);
        let warp = WarpParams::new(fit.warp_knots.clone(), vec![0.2]).unwrap();
        let base = predict_with_warp(&x_new, &fit, &warp).unwrap();

        // zero the covariate values beyond t0; the cubic interpolant only
        // leaks across ~15 grid cells, so compare far enough below t0
        let t0 = 0.75;
        let m = grid.len();
        let mut vals = x_new.values().to_vec();
        for (g, v) in vals.iter_mut().enumerate() {
            if grid.points()[g] > t0 {
                *v = 0.0;
            }
        }
        let x_cut = Curve::new(grid.clone(), vals).unwrap();
        let cut = predict_with_warp(&x_cut, &fit, &warp).unwrap();
        let buffer = 25.0 / (m as f64 - 1.0);
        for (g, &t) in grid.points().iter().enumerate() {
            if t <= t0 - buffer {
                let d = (cut.y_hat.values()[g] - base.y_hat.values()[g]).abs();
                assert!(d <= 1e-10, "prediction changed by {d} at t={t}");
            }
        }
    }
}
