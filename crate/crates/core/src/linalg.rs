//! Small dense routines: one-sided Jacobi SVD and polyhedral cone facets.

use nalgebra::{DMatrix, DVector};

/// Singular values of `a`, largest first, by one-sided Jacobi rotations.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    // orthogonalize the columns of the taller orientation
    let mut u = if a.nrows() >= a.ncols() { a.clone() } else { a.transpose() };
    let n = u.ncols();
    let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..u.nrows() {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with the usual `max(m, n)·eps·σ_max` cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let sv = singular_values(a);
    let cutoff = sv.first().copied().unwrap_or(0.0) * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Smallest of the `min(m, n)` singular values.
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Unit vector orthogonal to the `d − 1` columns of `vs` (each of length
/// `d`), by cofactor expansion. Returns `None` if the columns are dependent.
pub fn generalized_cross(vs: &[DVector<f64>], dim: usize) -> Option<DVector<f64>> {
    debug_assert_eq!(vs.len() + 1, dim);
    let m = DMatrix::from_fn(dim - 1, dim, |i, j| vs[i][j]);
    let mut n = DVector::zeros(dim);
    for j in 0..dim {
        let minor = m.clone().remove_column(j);
        let det = if dim == 1 { 1.0 } else { minor.determinant() };
        n[j] = if j % 2 == 0 { det } else { -det };
    }
    let scale: f64 = vs.iter().map(|v| v.norm()).product();
    let norm = n.norm();
    if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return None;
    }
    Some(n / norm)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Inward unit normals of the facets of the cone spanned by the columns of
/// `w`. The cone must be full-dimensional; an empty result means the
/// columns positively span the whole space.
pub fn cone_facets(w: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let dim = w.nrows();
    let cols: Vec<DVector<f64>> = (0..w.ncols()).map(|j| w.column(j).into_owned()).collect();
    let mut facets: Vec<DVector<f64>> = Vec::new();
    if dim == 1 {
        let pos = cols.iter().any(|c| c[0] > 0.0);
        let neg = cols.iter().any(|c| c[0] < 0.0);
        match (pos, neg) {
            (true, false) => facets.push(DVector::from_element(1, 1.0)),
            (false, true) => facets.push(DVector::from_element(1, -1.0)),
            _ => {}
        }
        return facets;
    }
    for subset in combinations(cols.len(), dim - 1) {
        let vs: Vec<DVector<f64>> = subset.iter().map(|&j| cols[j].clone()).collect();
        let Some(n) = generalized_cross(&vs, dim) else { continue };
        let mut pos = false;
        let mut neg = false;
        for c in &cols {
            let d = n.dot(c);
            let tol = 1e-12 * c.norm();
            if d > tol {
                pos = true;
            } else if d < -tol {
                neg = true;
            }
        }
        let normal = match (pos, neg) {
            (true, false) => n,
            (false, true) => -n,
            // every column on the hyperplane: the cone is not full-dimensional
            (false, false) => continue,
            (true, true) => continue,
        };
        if !facets.iter().any(|f| (f - &normal).norm() < 1e-12) {
            facets.push(normal);
        }
    }
    facets
}
