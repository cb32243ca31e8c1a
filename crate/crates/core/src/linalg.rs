use nalgebra::DMatrix;

/// Singular values below this are dropped by [`pseudo_inverse`].
pub const PINV_TOL: f64 = 1e-10;

/// Moore-Penrose pseudoinverse with singular values `< tol` zeroed, so the
/// result stays finite at exact singularities.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s >= tol {
            out += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}
