//! Tangent geometry of an exposed face: basis, conditioning, interior core.

use nalgebra::{DMatrix, DVector};

use crate::dict::Dictionary;

/// Tangent basis and conditioning data for a face spanned by `face_indices`.
///
/// For zero-dimensional faces (single vertex) the tangential term of the
/// stability bound vanishes; by convention `kappa = sigma_min = 1` there so
/// downstream formulas stay finite.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub face_indices: Vec<usize>,
    /// Affine dimension of the face (number of basis columns).
    pub dim_face: usize,
    /// Columns `u_{i_k} - u_{i_0}` for the greedily chosen vertex subset.
    pub basis: DMatrix<f64>,
    pub sigma_min: f64,
    /// `1 / sigma_min`.
    pub kappa: f64,
    /// Operator norm of the basis.
    pub basis_norm: f64,
    /// Coordinate-space margin of the interior core. Computed as half the
    /// minimum barycentric coordinate when weights are supplied, else from
    /// the uniform point `1/(2|I|)`.
    pub core_radius: f64,
    /// Uniform entropic-gradient bound `G_F(rho) = sqrt(|I|) (|log c| + 1)`,
    /// with `c = rho` the implied coordinate lower bound on the core.
    pub entropic_grad_bound: f64,
}

fn grad_bound(face_len: usize, core_radius: f64) -> f64 {
    let c = core_radius.max(f64::MIN_POSITIVE);
    (face_len as f64).sqrt() * (c.ln().abs() + 1.0)
}

/// Build the tangent basis for a face by greedy vertex selection.
///
/// `i_0` is the smallest face index; each subsequent column maximizes the
/// distance from the span of the columns picked so far, stopping once the
/// best residual falls below `1e-10 * ||B||`. Numerically dependent
/// vertices therefore reduce the reported face dimension instead of
/// producing a rank-deficient basis.
pub fn tangent_basis(dict: &Dictionary, face: &[usize]) -> FaceGeometry {
    assert!(!face.is_empty(), "face index list must be nonempty");
    let mut face_sorted = face.to_vec();
    face_sorted.sort_unstable();
    face_sorted.dedup();

    let d = dict.dim();
    let i0 = face_sorted[0];
    let u0 = dict.atom(i0);
    let candidates: Vec<DVector<f64>> = face_sorted[1..]
        .iter()
        .map(|&i| dict.atom(i) - &u0)
        .collect();

    let mut chosen: Vec<DVector<f64>> = Vec::new();
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    let mut used = vec![false; candidates.len()];
    let max_cand_norm = candidates.iter().map(|v| v.norm()).fold(0.0f64, f64::max);

    loop {
        if chosen.len() == d {
            break;
        }
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for (ci, cand) in candidates.iter().enumerate() {
            if used[ci] {
                continue;
            }
            let mut resid = cand.clone();
            for q in &ortho {
                let proj = q.dot(&resid);
                resid -= q * proj;
            }
            let norm = resid.norm();
            if best.as_ref().is_none_or(|(_, _, n)| norm > *n) {
                best = Some((ci, resid, norm));
            }
        }
        let Some((ci, resid, norm)) = best else { break };
        let frob: f64 = chosen.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
        let scale = frob.max(max_cand_norm).max(f64::MIN_POSITIVE);
        if norm < 1e-10 * scale {
            break;
        }
        ortho.push(&resid / norm);
        chosen.push(candidates[ci].clone());
        used[ci] = true;
    }

    let m = chosen.len();
    let k = face_sorted.len();
    let uniform_core = 0.5 / k as f64;
    if m == 0 {
        return FaceGeometry {
            face_indices: face_sorted,
            dim_face: 0,
            basis: DMatrix::zeros(d, 0),
            sigma_min: 1.0,
            kappa: 1.0,
            basis_norm: 0.0,
            core_radius: uniform_core,
            entropic_grad_bound: grad_bound(k, uniform_core),
        };
    }

    let mut basis = DMatrix::zeros(d, m);
    for (c, col) in chosen.iter().enumerate() {
        basis.set_column(c, col);
    }
    let svals = basis.clone().svd(false, false).singular_values;
    let sigma_min = svals.min();
    let basis_norm = svals.max();

    FaceGeometry {
        face_indices: face_sorted,
        dim_face: m,
        basis,
        sigma_min,
        kappa: 1.0 / sigma_min,
        basis_norm,
        core_radius: uniform_core,
        entropic_grad_bound: grad_bound(k, uniform_core),
    }
}

impl FaceGeometry {
    /// Recompute the core radius and gradient bound from the projection's
    /// barycentric coordinates on the face: `rho` is half the minimum
    /// coordinate, which is the margin the entropic iterates provably keep.
    pub fn with_core_from_weights(mut self, alpha_face: &[f64]) -> Self {
        assert_eq!(alpha_face.len(), self.face_indices.len());
        let min_w = alpha_face.iter().cloned().fold(f64::INFINITY, f64::min);
        let rho = (0.5 * min_w).max(f64::MIN_POSITIVE);
        self.core_radius = rho;
        self.entropic_grad_bound = grad_bound(self.face_indices.len(), rho);
        self
    }

    /// `C_lin = kappa * ||B||_op * G_F(rho)`.
    pub fn linear_constant(&self) -> f64 {
        self.kappa * self.basis_norm * self.entropic_grad_bound
    }
}

/// Orthonormal basis of the sum-zero subspace of `R^k` (Helmert columns).
pub fn sum_zero_basis(k: usize) -> DMatrix<f64> {
    assert!(k >= 1);
    let mut z = DMatrix::zeros(k, k.saturating_sub(1));
    for j in 1..k {
        let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            z[(i, j - 1)] = scale;
        }
        z[(j, j - 1)] = -(j as f64) * scale;
    }
    z
}

/// Smallest eigenvalue of the face-tangent restriction of `U^T U`: the
/// strong-convexity modulus used by the Frank-Wolfe distance certificate.
pub fn face_tangent_mu(dict: &Dictionary, face: &[usize]) -> f64 {
    let k = face.len();
    if k <= 1 {
        return f64::INFINITY;
    }
    let d = dict.dim();
    let mut ui = DMatrix::zeros(d, k);
    for (c, &idx) in face.iter().enumerate() {
        ui.set_column(c, &dict.atom(idx));
    }
    let h = ui.transpose() * &ui;
    let z = sum_zero_basis(k);
    let reduced = z.transpose() * h * &z;
    let sym = (&reduced + reduced.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Empirical supremum of the entropic gradient over sampled core points
/// (coordinates bounded below by `c`). Reported next to the analytic bound.
pub fn sample_core_grad_sup(
    k: usize,
    c: f64,
    samples: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> f64 {
    let mut sup = 0.0f64;
    let free = (1.0 - k as f64 * c).max(0.0);
    for _ in 0..samples {
        // Dirichlet(1) via normalized exponentials, shifted onto the core.
        let exps: Vec<f64> = (0..k)
            .map(|_| -crate::rng::uniform_open01(rng).ln())
            .collect();
        let total: f64 = exps.iter().sum();
        let norm_sq: f64 = exps
            .iter()
            .map(|e| {
                let a = c + free * e / total;
                let g = a.ln() + 1.0;
                g * g
            })
            .sum();
        sup = sup.max(norm_sq.sqrt());
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Dictionary {
        Dictionary::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn single_vertex_face_uses_conventions() {
        let d = triangle();
        let fg = tangent_basis(&d, &[1]);
        assert_eq!(fg.dim_face, 0);
        assert_eq!(fg.basis.ncols(), 0);
        assert_eq!(fg.kappa, 1.0);
        assert!((fg.kappa * fg.sigma_min - 1.0).abs() < 1e-12);
        assert_eq!(fg.basis_norm, 0.0);
    }

    #[test]
    fn triangle_edge_basis_matches_hand_svd() {
        let d = triangle();
        let fg = tangent_basis(&d, &[1, 2]);
        assert_eq!(fg.dim_face, 1);
        // B = u_3 - u_2 = (-1, 1), a single column with norm sqrt(2).
        assert!((fg.sigma_min - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((fg.kappa - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((fg.basis_norm - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((fg.kappa * fg.sigma_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_simplex_face_matches_dense_svd_oracle() {
        let d = Dictionary::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let fg = tangent_basis(&d, &[0, 1, 2]);
        assert_eq!(fg.dim_face, 2);
        // Oracle: dense SVD of the explicit difference matrix.
        let explicit = DMatrix::from_columns(&[
            d.atom(1) - d.atom(0),
            d.atom(2) - d.atom(0),
        ]);
        let svals = explicit.svd(false, false).singular_values;
        assert!((fg.sigma_min - svals.min()).abs() < 1e-10);
        assert!((fg.basis_norm - svals.max()).abs() < 1e-10);
    }

    #[test]
    fn dependent_vertices_reduce_dimension() {
        // Three collinear points: face dimension must drop to 1.
        let d = Dictionary::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let fg = tangent_basis(&d, &[0, 1, 2]);
        assert_eq!(fg.dim_face, 1);
        assert!(fg.sigma_min > 0.0);
    }

    #[test]
    fn grad_bound_dominates_projection_gradient() {
        let alpha = [0.2, 0.8];
        let fg = tangent_basis(&triangle(), &[1, 2]).with_core_from_weights(&alpha);
        let grad_norm: f64 = alpha
            .iter()
            .map(|a| {
                let g = a.ln() + 1.0;
                g * g
            })
            .sum::<f64>()
            .sqrt();
        assert!(fg.entropic_grad_bound >= grad_norm);
        assert!((fg.core_radius - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sum_zero_basis_is_orthonormal() {
        for k in 2..6 {
            let z = sum_zero_basis(k);
            let gram = z.transpose() * &z;
            for i in 0..k - 1 {
                for j in 0..k - 1 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - want).abs() < 1e-12);
                }
            }
            for j in 0..k - 1 {
                assert!(z.column(j).sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tangent_mu_on_triangle_edge() {
        let d = triangle();
        // Face {1, 2}: H = I_2, tangent direction (1,-1)/sqrt(2), mu = 1.
        let mu = face_tangent_mu(&d, &[1, 2]);
        assert!((mu - 1.0).abs() < 1e-12);
    }
}
