//! Gram matrix spectra of the input-output mapping.
//!
//! The Gram matrix `M = φφᵀ` (over-actuated) or `M = φᵀφ` (otherwise) is
//! symmetric positive semidefinite and its eigenvalues are the squared
//! singular values of `φ`. A vanishing smallest eigenvalue marks a singular
//! configuration.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{mapping_matrix, StateVector, SystemModel};
use crate::error::{Error, Result};
use crate::grid::{GridField, GridSpec};

/// Two eigenvalues closer than this are treated as repeated.
pub const EIGENGAP_TOL: f64 = 1e-8;
/// Default central-difference step for eigenvalue gradients.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    /// `(d, m)` of the matrix this was formed from.
    pub source_shape: (usize, usize),
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal columns, column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenSpectrum {
    pub fn smallest(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Distance from eigenvalue `index` to its nearest neighbour, or
    /// infinity for a 1x1 spectrum.
    pub fn gap(&self, index: usize) -> f64 {
        let ev = &self.eigenvalues;
        let below = if index > 0 {
            ev[index] - ev[index - 1]
        } else {
            f64::INFINITY
        };
        let above = if index + 1 < ev.len() {
            ev[index + 1] - ev[index]
        } else {
            f64::INFINITY
        };
        below.min(above)
    }
}

/// `φφᵀ` when `d < m`, `φᵀφ` otherwise; always `min(d, m)` square.
pub fn gram_matrix(phi: &DMatrix<f64>) -> GramMatrix {
    let (d, m) = phi.shape();
    let values = if d < m {
        phi * phi.transpose()
    } else {
        phi.transpose() * phi
    };
    GramMatrix {
        values,
        source_shape: (d, m),
    }
}

pub fn eigen_spectrum(gram: &GramMatrix) -> Result<EigenSpectrum> {
    symmetric_eigen(&gram.values)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Eigenvalues come back ascending (ties keep their diagonal order) and each
/// eigenvector is signed so its largest-magnitude entry is positive, which
/// makes the output fully deterministic.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<EigenSpectrum> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "symmetric eigen-decomposition",
            expected: format!("{n}x{n}"),
            actual: format!("{}x{}", n, a.ncols()),
        });
    }
    let scale = a.amax().max(1.0);
    let asymmetry = (a - a.transpose()).amax();
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }

    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum();
        if off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                // negligible against both diagonal entries: annihilate
                let tiny = 1e-2 * f64::EPSILON * (m[(p, p)].abs() + m[(q, q)].abs());
                if apq.abs() <= tiny {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]).then(i.cmp(&j)));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        let lead = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (k, x)| {
                if x.abs() > best.1.abs() + 1e-12 {
                    (k, *x)
                } else {
                    best
                }
            })
            .1;
        if lead < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Smallest singular value of `φ`, from its Gram spectrum.
pub fn smallest_singular_value(phi: &DMatrix<f64>) -> f64 {
    let gram = gram_matrix(phi);
    // A Gram matrix is symmetric by construction.
    let spectrum = eigen_spectrum(&gram).expect("gram matrix is symmetric");
    spectrum.smallest().max(0.0).sqrt()
}

/// Gram eigenvalues of the mapping matrix at `x`, ascending.
pub fn mapping_spectrum(model: &dyn SystemModel, x: &StateVector) -> Result<EigenSpectrum> {
    eigen_spectrum(&gram_matrix(&mapping_matrix(model, x)?))
}

/// Closed-form gradient: `(state, eigenvalue index) -> ∇λ`.
pub type AnalyticGradient = Arc<dyn Fn(&StateVector, usize) -> DVector<f64> + Send + Sync>;

/// How eigenvalue gradients are obtained.
#[derive(Clone)]
pub enum GradientSpec {
    Analytic(AnalyticGradient),
    FiniteDifference { step: f64 },
}

impl Default for GradientSpec {
    fn default() -> Self {
        GradientSpec::FiniteDifference {
            step: DEFAULT_FD_STEP,
        }
    }
}

impl std::fmt::Debug for GradientSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradientSpec::Analytic(_) => f.write_str("Analytic(..)"),
            GradientSpec::FiniteDifference { step } => f
                .debug_struct("FiniteDifference")
                .field("step", step)
                .finish(),
        }
    }
}

/// `∇λᵢ(x)` for the `index`-th smallest Gram eigenvalue (0-based, so
/// `index = 0` is `λ₁`).
///
/// Fails with [`Error::NondifferentiablePoint`] when `λᵢ` is not simple.
pub fn eigenvalue_gradient(
    model: &dyn SystemModel,
    x: &StateVector,
    index: usize,
    spec: &GradientSpec,
) -> Result<DVector<f64>> {
    let spectrum = mapping_spectrum(model, x)?;
    let k = spectrum.eigenvalues.len();
    if index >= k {
        return Err(Error::InvalidParameter {
            name: "index",
            reason: format!("eigenvalue index {index} out of range for {k} eigenvalues"),
        });
    }
    let gap = spectrum.gap(index);
    if gap <= EIGENGAP_TOL {
        return Err(Error::NondifferentiablePoint { index, gap });
    }
    match spec {
        GradientSpec::Analytic(grad) => Ok(grad(x, index)),
        GradientSpec::FiniteDifference { step } => {
            if !(*step > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "step",
                    reason: format!("finite-difference step must be positive, got {step}"),
                });
            }
            let mut grad = DVector::zeros(x.len());
            let mut probe = x.clone();
            for j in 0..x.len() {
                probe[j] = x[j] + step;
                let plus = mapping_spectrum(model, &probe)?.eigenvalues[index];
                probe[j] = x[j] - step;
                let minus = mapping_spectrum(model, &probe)?.eigenvalues[index];
                probe[j] = x[j];
                grad[j] = (plus - minus) / (2.0 * step);
            }
            Ok(grad)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularitySample {
    pub state: StateVector,
    pub sigma_min: f64,
}

fn sigma_at(model: &dyn SystemModel, node: Vec<f64>) -> Result<(StateVector, f64)> {
    let x = StateVector::from_vec(node);
    let sigma = smallest_singular_value(&mapping_matrix(model, &x)?);
    Ok((x, sigma))
}

/// `σ_min(φ)` at every node of `grid`.
pub fn sigma_min_field(model: &dyn SystemModel, grid: &GridSpec) -> Result<GridField> {
    grid.validate()?;
    let values = (0..grid.node_count())
        .into_par_iter()
        .map(|i| sigma_at(model, grid.node(i)).map(|(_, s)| s))
        .collect::<Result<Vec<f64>>>()?;
    GridField::new(grid.clone(), values)
}

/// Grid nodes whose smallest singular value is strictly below `threshold`,
/// in traversal order.
pub fn sample_singular_set(
    model: &dyn SystemModel,
    grid: &GridSpec,
    threshold: f64,
) -> Result<Vec<SingularitySample>> {
    grid.validate()?;
    if grid.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "singular-set grid",
            expected: model.state_dim().to_string(),
            actual: grid.dim().to_string(),
        });
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold",
            reason: format!("must be non-negative, got {threshold}"),
        });
    }
    let samples = (0..grid.node_count())
        .into_par_iter()
        .map(|i| sigma_at(model, grid.node(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(samples
        .into_iter()
        .filter(|(_, s)| *s < threshold)
        .map(|(state, sigma_min)| SingularitySample { state, sigma_min })
        .collect())
}

/// Point-cloud CSV: `x1,...,xn,sigma_min`, 9 significant digits.
pub fn write_point_cloud_csv<W: Write>(samples: &[SingularitySample], mut out: W) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.state.len());
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("sigma_min".into());
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let row: Vec<String> = s
            .state
            .iter()
            .chain(std::iter::once(&s.sigma_min))
            .map(|v| format!("{v:.8e}"))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn square_gram_uses_transpose_product() {
        let g = gram_matrix(&mat(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(g.values, mat(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let s = eigen_spectrum(&g).unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn wide_gram_is_row_sized() {
        let g = gram_matrix(&DMatrix::from_element(3, 4, 1.0));
        assert_eq!(g.values.shape(), (3, 3));
        let g = gram_matrix(&mat(1, 2, &[1.0, 1.0]));
        assert_eq!(g.values, mat(1, 1, &[2.0]));
        assert_relative_eq!(
            smallest_singular_value(&mat(1, 2, &[1.0, 1.0])),
            2f64.sqrt()
        );
    }

    #[test]
    fn two_by_two_golden_ratio_spectrum() {
        let s = symmetric_eigen(&mat(2, 2, &[2.0, -1.0, -1.0, 1.0])).unwrap();
        let r5 = 5f64.sqrt();
        assert_relative_eq!(s.eigenvalues[0], (3.0 - r5) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.eigenvalues[1], (3.0 + r5) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_and_diagonal() {
        let s = symmetric_eigen(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.eigenvectors, DMatrix::identity(3, 3));
        let s = symmetric_eigen(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            5.0, 0.0, 1.0,
        ])))
        .unwrap();
        assert_eq!(s.eigenvalues.as_slice(), &[0.0, 1.0, 5.0]);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let err = symmetric_eigen(&mat(2, 2, &[1.0, 2.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { .. }));
    }

    #[test]
    fn residuals_and_orthonormality_on_dense_4x4() {
        let a = mat(
            4,
            4,
            &[
                4.0, 1.0, -2.0, 0.5, 1.0, 3.0, 0.0, 1.5, -2.0, 0.0, 5.0, -1.0, 0.5, 1.5, -1.0, 2.0,
            ],
        );
        let s = symmetric_eigen(&a).unwrap();
        for i in 0..4 {
            let v = s.eigenvectors.column(i);
            let r = &a * v - v * s.eigenvalues[i];
            assert!(r.norm() <= 1e-9 * a.norm().max(1.0));
        }
        let vtv = s.eigenvectors.transpose() * &s.eigenvectors;
        assert!((vtv - DMatrix::identity(4, 4)).amax() < 1e-12);
        assert!(s.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn diagonal_singular_values() {
        assert_relative_eq!(
            smallest_singular_value(&mat(2, 2, &[3.0, 0.0, 0.0, 4.0])),
            3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn rank_deficiency_shows_as_zero_eigenvalue() {
        // second row is twice the first
        let phi = mat(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let s = eigen_spectrum(&gram_matrix(&phi)).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-12);
        assert!(smallest_singular_value(&phi) < 1e-6);
        let full = mat(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 7.0]);
        assert!(eigen_spectrum(&gram_matrix(&full)).unwrap().eigenvalues[0] > 1e-3);
    }

    #[test]
    fn point_cloud_csv_format() {
        let samples = vec![SingularitySample {
            state: DVector::from_vec(vec![0.5, -1.25]),
            sigma_min: 1.0 / 3.0,
        }];
        let mut buf = Vec::new();
        write_point_cloud_csv(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "x1,x2,sigma_min\n5.00000000e-1,-1.25000000e0,3.33333333e-1\n"
        );
    }
}
