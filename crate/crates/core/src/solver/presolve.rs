use nalgebra::{DMatrix, DVector};

/// Indices of a maximal set of linearly independent rows, chosen greedily in
/// row order by Gram-Schmidt with re-orthogonalization.
pub fn independent_rows(a: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..a.nrows() {
        let row: DVector<f64> = a.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let rest = v.norm();
        if rest > rel_tol * norm {
            basis.push(v / rest);
            keep.push(i);
        }
    }
    keep
}
