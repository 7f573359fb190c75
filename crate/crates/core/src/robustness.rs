//! ε-robustness of quasistatic wrench balance against box-bounded finger
//! wrench disturbances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg;
use crate::wrench::{balance_lp, Balance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientVerdict {
    pub holds: bool,
    pub rank: usize,
    pub sigma_min: f64,
    /// Smallest coefficient the test demands of every `β̄` component.
    pub required: f64,
    pub diagnostic: Option<String>,
}

/// Sufficient condition: `W` has full row rank and every component of `β̄`
/// is at least `ε·√w / σ_min(W)`.
///
/// A box disturbance of half-width `ε` has Euclidean norm up to `ε√w`, and
/// the minimum-norm correction `W†δ` is bounded by `‖δ‖/σ_min`.
pub fn robust_sufficient(w: &DMatrix<f64>, beta_bar: &[f64], epsilon: f64) -> SufficientVerdict {
    let dim = w.nrows();
    let rank = linalg::rank(w);
    let sigma_min = linalg::sigma_min(w);
    if rank < dim {
        return SufficientVerdict {
            holds: false,
            rank,
            sigma_min,
            required: f64::INFINITY,
            diagnostic: Some(format!("robustness: W has rank {rank} < wrench dimension {dim}")),
        };
    }
    let required = if epsilon == 0.0 { 0.0 } else { epsilon * (dim as f64).sqrt() / sigma_min };
    let holds = beta_bar.iter().all(|&b| b >= required);
    SufficientVerdict { holds, rank, sigma_min, required, diagnostic: None }
}

fn corners(dim: usize, epsilon: f64) -> Vec<DVector<f64>> {
    (0..1usize << dim)
        .map(|mask| DVector::from_fn(dim, |i, _| if mask >> i & 1 == 1 { epsilon } else { -epsilon }))
        .collect()
}

/// Exact test: balance holds at every corner of the disturbance box.
pub fn robust_exact(w: &DMatrix<f64>, wc_bar: &DVector<f64>, w_g: &DVector<f64>, epsilon: f64) -> Result<bool> {
    if epsilon == 0.0 {
        return Ok(balance_lp(w, wc_bar, w_g)?.is_feasible());
    }
    let results: Vec<Result<Balance>> = corners(w.nrows(), epsilon)
        .par_iter()
        .map(|d| balance_lp(w, &(wc_bar + d), w_g))
        .collect();
    for r in results {
        if !r?.is_feasible() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxEpsilon {
    /// `None` when the nominal balance is already infeasible.
    pub epsilon: Option<f64>,
    pub infeasible: bool,
}

/// Largest disturbance half-width passing the exact test, to within `tol`.
pub fn max_epsilon(w: &DMatrix<f64>, wc_bar: &DVector<f64>, w_g: &DVector<f64>, tol: f64) -> Result<MaxEpsilon> {
    if !balance_lp(w, wc_bar, w_g)?.is_feasible() {
        return Ok(MaxEpsilon { epsilon: None, infeasible: true });
    }
    let mut lo = 0.0;
    let mut hi = (wc_bar + w_g).norm() + 1.0;
    let mut doublings = 0;
    while robust_exact(w, wc_bar, w_g, hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            // the cone covers the whole wrench space
            return Ok(MaxEpsilon { epsilon: Some(f64::INFINITY), infeasible: false });
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if robust_exact(w, wc_bar, w_g, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MaxEpsilon { epsilon: Some(lo), infeasible: false })
}

/// Distance-like margin of `w̄_e = −w̄_c − w_g` inside the cone: the minimum
/// over facet normals of `n·w̄_e`. Negative outside the cone, zero for a
/// feasible wrench when the cone has no interior.
pub fn margin(w: &DMatrix<f64>, wc_bar: &DVector<f64>, w_g: &DVector<f64>) -> Result<f64> {
    let target = -(wc_bar + w_g);
    if linalg::rank(w) < w.nrows() {
        if balance_lp(w, wc_bar, w_g)?.is_feasible() {
            return Ok(0.0);
        }
        // distance to the column span, or a token negative value inside it
        let proj = w.clone().svd(true, true).solve(&target, 1e-12).map(|x| w * x).unwrap_or_else(|_| target.clone());
        return Ok(-(target - proj).norm().max(f64::MIN_POSITIVE));
    }
    Ok(margin_from_facets(&linalg::cone_facets(w), &target))
}

/// Margin for precomputed facet normals.
pub fn margin_from_facets(facets: &[DVector<f64>], w_e: &DVector<f64>) -> f64 {
    facets.iter().map(|n| n.dot(w_e)).fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub epsilon: f64,
    pub feasible: bool,
    pub sufficient: bool,
    pub exact: bool,
    pub margin: f64,
    pub max_epsilon: Option<f64>,
    pub rank: usize,
    pub sigma_min: f64,
    pub beta: Option<Vec<f64>>,
}

pub fn report(
    w: &DMatrix<f64>,
    wc_bar: &DVector<f64>,
    w_g: &DVector<f64>,
    epsilon: f64,
    with_max: Option<f64>,
) -> Result<RobustnessReport> {
    let balance = balance_lp(w, wc_bar, w_g)?;
    let beta = balance.solution().map(|s| s.beta.clone());
    let verdict = robust_sufficient(w, beta.as_deref().unwrap_or(&[]), epsilon);
    let feasible = beta.is_some();
    Ok(RobustnessReport {
        epsilon,
        feasible,
        sufficient: feasible && verdict.holds,
        exact: feasible && robust_exact(w, wc_bar, w_g, epsilon)?,
        margin: margin(w, wc_bar, w_g)?,
        max_epsilon: match with_max {
            Some(tol) => max_epsilon(w, wc_bar, w_g, tol)?.epsilon,
            None => None,
        },
        rank: verdict.rank,
        sigma_min: verdict.sigma_min,
        beta,
    })
}
