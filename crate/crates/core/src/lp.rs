//! Dense two-phase simplex for small problems in standard form
//! `min cᵀx  s.t.  Ax = b, x ≥ 0`, using Bland's rule against cycling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible { residual: f64 },
    Unbounded,
}

struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.t.nrows() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let cols = self.t.ncols();
        for j in 0..cols {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..cols {
                    let v = self.t[(row, j)];
                    self.t[(i, j)] -= f * v;
                }
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the objective row (last row) over the
    /// first `allowed` columns. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> Result<bool> {
        let m = self.rows();
        let rhs = self.t.ncols() - 1;
        loop {
            if self.pivots > self.max_pivots {
                return Err(Error::LpIterationLimit { iterations: self.pivots });
            }
            let scale = (0..allowed).fold(1.0f64, |s, j| s.max(self.t[(m, j)].abs()));
            let Some(col) = (0..allowed).find(|&j| self.t[(m, j)] < -1e-11 * scale) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[(i, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(i, rhs)] / a;
                    match best {
                        None => best = Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-15 || (ratio <= br + 1e-15 && self.basis[i] < self.basis[bi]) {
                                best = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = best else { return Ok(false) };
            self.pivot(row, col);
        }
    }
}

/// Solves `min cᵀx, Ax = b, x ≥ 0`.
pub fn solve(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpOutcome> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(Error::precondition(
            "wrench",
            format!("linear program dimensions disagree: A is {m}×{n}, b has {}, c has {}", b.len(), c.len()),
        ));
    }
    let b_scale = b.amax().max(a.amax()).max(1e-300);
    // tableau columns: n structural, m artificial, rhs
    let mut t = DMatrix::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = sign * b[i];
    }
    // phase-one objective: sum of artificials, written in reduced form
    for j in 0..(n + m + 1) {
        let s: f64 = (0..m).map(|i| t[(i, j)]).sum();
        t[(m, j)] = if j >= n && j < n + m { 0.0 } else { -s };
    }
    let mut tab = Tableau { t, basis: (n..n + m).collect(), pivots: 0, max_pivots: 50 * (n + m) + 1000 };
    tab.optimize(n + m)?;
    let residual = -tab.t[(m, n + m)];
    if residual > 1e-9 * b_scale {
        return Ok(LpOutcome::Infeasible { residual });
    }
    // drive artificials out of the basis where possible
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.t[(i, j)].abs() > 1e-9) {
                tab.pivot(i, j);
            }
        }
    }
    // redundant rows keep an artificial at zero; block those columns
    let mut t2 = tab.t.clone();
    for j in 0..(n + m + 1) {
        t2[(m, j)] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let bj = tab.basis[i];
        let cb = if bj < n { c[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..(n + m + 1) {
                let v = t2[(i, j)];
                t2[(m, j)] -= cb * v;
            }
        }
    }
    tab.t = t2;
    if !tab.optimize(n)? {
        return Ok(LpOutcome::Unbounded);
    }
    let x = polish(a, b, &tab.basis, n).unwrap_or_else(|| {
        let mut x = DVector::zeros(n);
        for (i, &bj) in tab.basis.iter().enumerate() {
            if bj < n {
                x[bj] = tab.t[(i, n + m)].max(0.0);
            }
        }
        x
    });
    let objective = c.dot(&x);
    Ok(LpOutcome::Optimal { x, objective })
}

/// Recomputes the basic solution from the original data to shed the
/// round-off accumulated in the tableau.
fn polish(a: &DMatrix<f64>, b: &DVector<f64>, basis: &[usize], n: usize) -> Option<DVector<f64>> {
    let cols: Vec<usize> = basis.iter().copied().filter(|&j| j < n).collect();
    if cols.is_empty() {
        return (b.amax() == 0.0).then(|| DVector::zeros(n));
    }
    let bm = DMatrix::from_fn(a.nrows(), cols.len(), |i, k| a[(i, cols[k])]);
    let sol = bm.clone().svd(true, true).solve(b, 1e-14).ok()?;
    let mut x = DVector::zeros(n);
    for (k, &j) in cols.iter().enumerate() {
        if sol[k] < -1e-9 * b.amax().max(1e-300) {
            return None;
        }
        x[j] = sol[k].max(0.0);
    }
    let res = (a * &x - b).amax();
    let scale = b.amax().max(1e-300);
    (res <= 1e-12 * scale.max(1.0)).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum over all basic feasible solutions.
    fn vertex_enumeration(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
        let (m, n) = a.shape();
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            let bm = DMatrix::from_fn(m, m, |i, k| a[(i, idx[k])]);
            if let Some(inv) = bm.clone().try_inverse() {
                if bm.determinant().abs() > 1e-10 {
                    let xb = inv * b;
                    if xb.iter().all(|&v| v >= -1e-10) {
                        let obj: f64 = idx.iter().zip(xb.iter()).map(|(&j, &v)| c[j] * v).sum();
                        best = Some(best.map_or(obj, |o: f64| o.min(obj)));
                    }
                }
            }
            let Some(i) = (0..m).rev().find(|&i| idx[i] != i + n - m) else { return best };
            idx[i] += 1;
            for j in (i + 1)..m {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn simple_feasible() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let c = DVector::from_vec(vec![1.0, 3.0]);
        match solve(&c, &a, &b).unwrap() {
            LpOutcome::Optimal { x, objective } => {
                assert!((objective - 2.0).abs() < 1e-12);
                assert!((x[0] - 2.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn simple_infeasible() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve(&c, &a, &b).unwrap(), LpOutcome::Infeasible { .. }));
    }

    #[test]
    fn redundant_rows() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let c = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        match solve(&c, &a, &b).unwrap() {
            LpOutcome::Optimal { objective, .. } => assert!((objective - 1.0).abs() < 1e-12),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn unbounded() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0]);
        let c = DVector::from_vec(vec![0.0, -1.0]);
        assert_eq!(solve(&c, &a, &b).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // a classic cycling example under the largest-coefficient rule
        let a = DMatrix::from_row_slice(
            3,
            7,
            &[0.5, -5.5, -2.5, 9.0, 1.0, 0.0, 0.0, 0.5, -1.5, -0.5, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = DVector::from_vec(vec![-10.0, 57.0, 9.0, 24.0, 0.0, 0.0, 0.0]);
        match solve(&c, &a, &b).unwrap() {
            LpOutcome::Optimal { objective, .. } => assert!((objective + 1.0).abs() < 1e-9),
            o => panic!("{o:?}"),
        }
    }

    proptest! {
        #[test]
        fn agrees_with_vertex_enumeration(m in 1usize..4, extra in 0usize..4,
                                           data in prop::collection::vec(-3.0..3.0f64, 40),
                                           costs in prop::collection::vec(0.1..2.0f64, 8)) {
            let n = m + extra;
            let a = DMatrix::from_fn(m, n, |i, j| data[i * 8 + j]);
            let b = DVector::from_fn(m, |i, _| data[32 + i]);
            let c = DVector::from_fn(n, |j, _| costs[j]);
            let oracle = vertex_enumeration(&c, &a, &b);
            match solve(&c, &a, &b).unwrap() {
                LpOutcome::Optimal { x, objective } => {
                    let o = oracle.expect("oracle found no vertex");
                    prop_assert!((objective - o).abs() <= 1e-7 * o.abs().max(1.0), "{objective} vs {o}");
                    prop_assert!((&a * &x - &b).amax() <= 1e-9 * b.amax().max(1.0));
                    prop_assert!(x.iter().all(|&v| v >= 0.0));
                }
                LpOutcome::Infeasible { .. } => prop_assert!(oracle.is_none()),
                LpOutcome::Unbounded => prop_assert!(false, "positive costs cannot be unbounded"),
            }
        }
    }
}
