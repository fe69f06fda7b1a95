//! Exact Euclidean projection onto `conv(U)` in simplex coordinates.
//!
//! The solver is an active-set method on the simplex: starting from the best
//! single vertex, it alternates an equality-constrained least-squares solve
//! on the current support with primal feasibility steps (dropping coordinates
//! driven negative) and dual screening (adding the most violated KKT index).
//! It terminates with an exact face at desk scale, unlike projected gradient.
//!
//! A subset-enumeration oracle ([`brute_force_projection`]) provides the
//! ground truth for small instances.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dict::{Dictionary, SimplexWeights};

/// Relative threshold deciding which coordinates count as active:
/// `alpha_i > ACTIVE_REL_TOL * max_i alpha_i`.
pub const ACTIVE_REL_TOL: f64 = 1e-9;

/// Relative tie tolerance for argmax sets over scores.
pub const TIE_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("non-finite query entry at coordinate {0}")]
    NonFiniteQuery(usize),
    #[error("query dimension {got} does not match dictionary dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error(
        "active-set solver hit the iteration cap ({iters} iterations); best iterate has Frank-Wolfe gap {fw_gap:.3e}"
    )]
    IterationCap {
        iters: usize,
        fw_gap: f64,
        best: Box<ProjectionSolution>,
    },
    #[error("subset enumeration oracle limited to M <= {max}, got M = {got}")]
    OracleTooLarge { max: usize, got: usize },
}

/// Euclidean projection output with KKT certificates.
#[derive(Debug, Clone)]
pub struct ProjectionSolution {
    pub alpha: SimplexWeights,
    /// `y* = U alpha`
    pub readout: DVector<f64>,
    /// `r* = q - y*`
    pub residual: DVector<f64>,
    /// Sorted indices with `alpha_i` above the active threshold.
    pub active_set: Vec<usize>,
    /// Equality multiplier; equals `h_K(r*)` at the optimum.
    pub nu: f64,
    /// Inequality multipliers, clamped to be nonnegative.
    pub mu: Vec<f64>,
    /// `min_{j not in I} mu_j`, or `+inf` when every atom is active.
    pub gap: f64,
    /// `0.5 ||U alpha - q||^2`
    pub objective: f64,
}

impl ProjectionSolution {
    /// Max violation of the stationarity system `U^T(U a - q) + nu 1 - mu = 0`
    /// together with the sign constraints, in infinity norm.
    pub fn kkt_residual(&self, dict: &Dictionary, q: &DVector<f64>) -> f64 {
        let grad = dict.atoms().transpose() * (dict.readout(self.alpha.as_slice()) - q);
        let mut worst = 0.0f64;
        for j in 0..dict.m_count() {
            let station = grad[j] + self.nu - self.mu[j];
            worst = worst.max(station.abs());
            worst = worst.max((-self.mu[j]).max(0.0));
        }
        worst.max((self.alpha.sum() - 1.0).abs())
    }
}

/// Tagged face-gap value; interior queries and all-active faces have no
/// meaningful gap and must not be conflated with a true zero gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceGap {
    Gap(f64),
    /// Residual is (numerically) zero or every atom is active.
    Degenerate,
}

impl FaceGap {
    pub fn value(&self) -> Option<f64> {
        match self {
            FaceGap::Gap(g) => Some(*g),
            FaceGap::Degenerate => None,
        }
    }
}

/// Support function `h_K(r)` and the argmax set within tie tolerance.
pub fn support_function(dict: &Dictionary, r: &DVector<f64>) -> (f64, Vec<usize>) {
    let scores = dict.scores(r);
    let value = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = scores.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let tol = TIE_REL_TOL * scale;
    let argmax = (0..scores.len())
        .filter(|&i| scores[i] >= value - tol)
        .collect();
    (value, argmax)
}

/// Face gap `h_K(r*) - max_{j not in I} <r*, u_j>`.
///
/// Returns [`FaceGap::Degenerate`] when the residual is numerically zero
/// (query inside the hull) or when the active set is everything.
pub fn face_gap(dict: &Dictionary, sol: &ProjectionSolution) -> FaceGap {
    let q_norm = (&sol.readout + &sol.residual).norm();
    if sol.residual.norm() <= 1e-10 * (1.0 + q_norm) {
        return FaceGap::Degenerate;
    }
    if sol.active_set.len() == dict.m_count() {
        return FaceGap::Degenerate;
    }
    let scores = dict.scores(&sol.residual);
    let h = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best_off = f64::NEG_INFINITY;
    for j in 0..dict.m_count() {
        if !sol.active_set.contains(&j) && scores[j] > best_off {
            best_off = scores[j];
        }
    }
    FaceGap::Gap(h - best_off)
}

/// Solve `min ||U_S a - q||` s.t. `sum a = 1` over the given support by
/// eliminating the constraint through the difference basis at the first
/// index. Rank-deficient supports get the minimum-norm solution.
fn equality_ls(dict: &Dictionary, support: &[usize], q: &DVector<f64>) -> Vec<f64> {
    let k = support.len();
    let u0 = dict.atom(support[0]);
    if k == 1 {
        return vec![1.0];
    }
    let d = dict.dim();
    let mut basis = DMatrix::zeros(d, k - 1);
    for (c, &idx) in support[1..].iter().enumerate() {
        basis.set_column(c, &(dict.atom(idx) - &u0));
    }
    let rhs = q - &u0;
    let svd = basis.svd(true, true);
    let beta = svd
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(k - 1));
    let mut a = vec![0.0; k];
    a[0] = 1.0 - beta.iter().sum::<f64>();
    for (c, b) in beta.iter().enumerate() {
        a[c + 1] = *b;
    }
    a
}

fn assemble_solution(
    dict: &Dictionary,
    q: &DVector<f64>,
    alpha_full: Vec<f64>,
) -> ProjectionSolution {
    let m = dict.m_count();
    // Clip round-off negatives and renormalize exactly.
    let mut alpha = alpha_full;
    for a in alpha.iter_mut() {
        if *a < 0.0 {
            *a = 0.0;
        }
    }
    let sum: f64 = alpha.iter().sum();
    if sum > 0.0 {
        for a in alpha.iter_mut() {
            *a /= sum;
        }
    }
    let readout = dict.readout(&alpha);
    let residual = q - &readout;
    let objective = 0.5 * residual.norm_squared();

    let max_alpha = alpha.iter().cloned().fold(0.0f64, f64::max);
    let active_set: Vec<usize> = (0..m)
        .filter(|&i| alpha[i] > ACTIVE_REL_TOL * max_alpha)
        .collect();

    // Multipliers from stationarity: U^T r = nu 1 - mu, with nu averaged
    // over the active set where mu vanishes.
    let scores = dict.scores(&residual);
    let nu = active_set.iter().map(|&i| scores[i]).sum::<f64>() / active_set.len() as f64;
    let mu: Vec<f64> = scores.iter().map(|s| (nu - s).max(0.0)).collect();
    let gap = if active_set.len() == m {
        f64::INFINITY
    } else {
        (0..m)
            .filter(|j| !active_set.contains(j))
            .map(|j| mu[j])
            .fold(f64::INFINITY, f64::min)
    };

    ProjectionSolution {
        alpha: SimplexWeights::new(alpha, 1e-12).expect("solver produced invalid weights"),
        readout,
        residual,
        active_set,
        nu,
        mu,
        gap,
        objective,
    }
}

fn validate_query(dict: &Dictionary, q: &DVector<f64>) -> Result<(), ProjectionError> {
    if q.len() != dict.dim() {
        return Err(ProjectionError::DimensionMismatch {
            got: q.len(),
            want: dict.dim(),
        });
    }
    for (i, x) in q.iter().enumerate() {
        if !x.is_finite() {
            return Err(ProjectionError::NonFiniteQuery(i));
        }
    }
    Ok(())
}

/// Exact projection of `q` onto `conv(U)` by the active-set method.
///
/// The returned solution satisfies the KKT system to within `tol` in
/// infinity norm; its Frank-Wolfe gap (hence objective suboptimality)
/// is at most `tol`.
pub fn project_onto_hull(
    dict: &Dictionary,
    q: &DVector<f64>,
    tol: f64,
) -> Result<ProjectionSolution, ProjectionError> {
    if !(tol > 0.0) {
        return Err(ProjectionError::BadTolerance(tol));
    }
    validate_query(dict, q)?;
    let m = dict.m_count();

    // Seed: nearest single vertex, ties to the lower index.
    let mut seed = 0usize;
    let mut best = f64::INFINITY;
    for j in 0..m {
        let dist = (dict.atom(j) - q).norm_squared();
        if dist < best {
            best = dist;
            seed = j;
        }
    }

    let mut support = vec![seed];
    let mut alpha_s = vec![1.0f64];
    let max_iters = 60 * m + 200;

    for _ in 0..max_iters {
        // Inner loop: restore primal feasibility on the current support.
        loop {
            let trial = equality_ls(dict, &support, q);
            let min_trial = trial.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_trial >= -1e-13 {
                alpha_s = trial;
                break;
            }
            // Step from the feasible alpha_s toward trial until the first
            // coordinate hits zero, then drop it (standard NNLS step).
            let mut theta = 1.0f64;
            for (&a, &t) in alpha_s.iter().zip(trial.iter()) {
                if t < 1e-13 && a > t {
                    theta = theta.min(a / (a - t));
                }
            }
            let stepped: Vec<f64> = alpha_s
                .iter()
                .zip(trial.iter())
                .map(|(&a, &t)| a + theta * (t - a))
                .collect();
            let scale = stepped.iter().cloned().fold(0.0f64, f64::max);
            let keep: Vec<usize> = (0..support.len())
                .filter(|&i| stepped[i] > 1e-14 * scale)
                .collect();
            if keep.len() == support.len() {
                // Numerical stall: drop the most negative trial coordinate.
                let worst = (0..support.len())
                    .min_by(|&a, &b| trial[a].partial_cmp(&trial[b]).unwrap())
                    .unwrap();
                support.remove(worst);
                alpha_s.remove(worst);
            } else {
                support = keep.iter().map(|&i| support[i]).collect();
                alpha_s = keep.iter().map(|&i| stepped[i]).collect();
                let s: f64 = alpha_s.iter().sum();
                for a in alpha_s.iter_mut() {
                    *a /= s;
                }
            }
            if support.len() == 1 {
                alpha_s = vec![1.0];
                break;
            }
        }

        // Dual screening over the full dictionary.
        let mut alpha_full = vec![0.0; m];
        for (&idx, &a) in support.iter().zip(alpha_s.iter()) {
            alpha_full[idx] = a.max(0.0);
        }
        let readout = dict.readout(&alpha_full);
        let grad = dict.atoms().transpose() * (&readout - q);
        let nu = -support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
        let mut worst_j = None;
        let mut worst_mu = -tol;
        for j in 0..m {
            if support.contains(&j) {
                continue;
            }
            let mu_j = grad[j] + nu;
            if mu_j < worst_mu {
                worst_mu = mu_j;
                worst_j = Some(j);
            }
        }
        match worst_j {
            None => return Ok(assemble_solution(dict, q, alpha_full)),
            Some(j) => {
                support.push(j);
                alpha_s.push(0.0);
                let order: Vec<usize> = {
                    let mut idx: Vec<usize> = (0..support.len()).collect();
                    idx.sort_by_key(|&i| support[i]);
                    idx
                };
                support = order.iter().map(|&i| support[i]).collect();
                alpha_s = order.iter().map(|&i| alpha_s[i]).collect();
            }
        }
    }

    let mut alpha_full = vec![0.0; m];
    for (&idx, &a) in support.iter().zip(alpha_s.iter()) {
        alpha_full[idx] = a.max(0.0);
    }
    let best = assemble_solution(dict, q, alpha_full);
    let fw_gap = crate::entropic::fw_gap(dict, q, &best.alpha);
    Err(ProjectionError::IterationCap {
        iters: max_iters,
        fw_gap,
        best: Box::new(best),
    })
}

/// Exact optimum by enumerating every vertex subset and keeping the feasible
/// equality-constrained minimizer. Test oracle for the active-set solver;
/// rejected above `M = 16` since enumeration is `2^M`.
pub fn brute_force_projection(
    dict: &Dictionary,
    q: &DVector<f64>,
) -> Result<ProjectionSolution, ProjectionError> {
    const MAX_M: usize = 16;
    let m = dict.m_count();
    if m > MAX_M {
        return Err(ProjectionError::OracleTooLarge { max: MAX_M, got: m });
    }
    validate_query(dict, q)?;

    let mut best_obj = f64::INFINITY;
    let mut best_alpha: Option<Vec<f64>> = None;
    for mask in 1u32..(1u32 << m) {
        let support: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let a = equality_ls(dict, &support, q);
        if a.iter().any(|&x| x < -1e-9) {
            continue;
        }
        let mut alpha_full = vec![0.0; m];
        for (&idx, &w) in support.iter().zip(a.iter()) {
            alpha_full[idx] = w.max(0.0);
        }
        let obj = 0.5 * (dict.readout(&alpha_full) - q).norm_squared();
        if obj < best_obj - 1e-15 {
            best_obj = obj;
            best_alpha = Some(alpha_full);
        }
    }
    Ok(assemble_solution(dict, q, best_alpha.expect("nonempty subset always exists")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict1d(atoms: &[f64]) -> Dictionary {
        Dictionary::from_rows(&atoms.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    fn triangle() -> Dictionary {
        Dictionary::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn segment_exterior_projects_to_endpoint() {
        let d = dict1d(&[0.0, 1.0]);
        let q = DVector::from_vec(vec![2.0]);
        let sol = project_onto_hull(&d, &q, 1e-12).unwrap();
        assert!((sol.readout[0] - 1.0).abs() < 1e-12);
        assert!((sol.residual[0] - 1.0).abs() < 1e-12);
        assert_eq!(sol.active_set, vec![1]);
        assert!((sol.mu[0] - 1.0).abs() < 1e-10);
        assert!(sol.mu[1].abs() < 1e-10);
        match face_gap(&d, &sol) {
            FaceGap::Gap(g) => assert!((g - 1.0).abs() < 1e-10),
            FaceGap::Degenerate => panic!("gap should be defined"),
        }
    }

    #[test]
    fn segment_interior_has_zero_residual() {
        let d = dict1d(&[0.0, 1.0]);
        let q = DVector::from_vec(vec![0.5]);
        let sol = project_onto_hull(&d, &q, 1e-12).unwrap();
        assert!((sol.readout[0] - 0.5).abs() < 1e-12);
        assert!(sol.residual[0].abs() < 1e-12);
        assert!(sol.objective < 1e-14);
        assert_eq!(face_gap(&d, &sol), FaceGap::Degenerate);
    }

    #[test]
    fn triangle_edge_projection_matches_hand_geometry() {
        let d = triangle();
        let q = DVector::from_vec(vec![1.0, 1.0]);
        let sol = project_onto_hull(&d, &q, 1e-12).unwrap();
        assert!((sol.readout[0] - 0.5).abs() < 1e-10);
        assert!((sol.readout[1] - 0.5).abs() < 1e-10);
        assert_eq!(sol.active_set, vec![1, 2]);
        match face_gap(&d, &sol) {
            FaceGap::Gap(g) => assert!((g - 0.5).abs() < 1e-10),
            FaceGap::Degenerate => panic!("gap should be defined"),
        }
        // KKT identity: gap equals the smallest off-face multiplier.
        assert!((sol.gap - 0.5).abs() < 1e-10);
        assert!((sol.objective - 0.25).abs() < 1e-12);
    }

    #[test]
    fn square_top_edge_gap_is_four() {
        let d = Dictionary::from_rows(&[
            vec![-1.0, -1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let q = DVector::from_vec(vec![0.0, 3.0]);
        let sol = project_onto_hull(&d, &q, 1e-12).unwrap();
        assert_eq!(sol.active_set, vec![2, 3]);
        assert!((sol.residual[1] - 2.0).abs() < 1e-10);
        match face_gap(&d, &sol) {
            FaceGap::Gap(g) => assert!((g - 4.0).abs() < 1e-10),
            FaceGap::Degenerate => panic!("gap should be defined"),
        }
    }

    #[test]
    fn support_function_examples() {
        let d = dict1d(&[0.0, 1.0]);
        let (v, ix) = support_function(&d, &DVector::from_vec(vec![1.0]));
        assert_eq!((v, ix), (1.0, vec![1]));

        let tri = triangle();
        let (v, ix) = support_function(&tri, &DVector::from_vec(vec![0.5, 0.5]));
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(ix, vec![1, 2]);

        let (v, ix) = support_function(&tri, &DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(v, 0.0);
        assert_eq!(ix, vec![0, 1, 2]);
    }

    #[test]
    fn oracle_trivial_cases() {
        let tri = triangle();
        // Query at a vertex.
        let sol = brute_force_projection(&tri, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(sol.alpha.as_slice(), &[0.0, 0.0, 1.0]);
        // Query deep inside.
        let sol = brute_force_projection(&tri, &DVector::from_vec(vec![0.2, 0.2])).unwrap();
        assert!(sol.objective < 1e-16);
        assert!(sol.residual.norm() < 1e-8);
    }

    #[test]
    fn oracle_rejects_large_m() {
        let rows: Vec<Vec<f64>> = (0..17).map(|i| vec![i as f64]).collect();
        let d = Dictionary::from_rows(&rows).unwrap();
        let err = brute_force_projection(&d, &DVector::from_vec(vec![0.5])).unwrap_err();
        assert!(matches!(err, ProjectionError::OracleTooLarge { got: 17, .. }));
    }

    #[test]
    fn solver_matches_oracle_on_triangle() {
        let tri = triangle();
        for q in [
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![-0.5, 0.2]),
            DVector::from_vec(vec![0.3, 0.3]),
            DVector::from_vec(vec![2.0, -1.0]),
        ] {
            let a = project_onto_hull(&tri, &q, 1e-12).unwrap();
            let b = brute_force_projection(&tri, &q).unwrap();
            assert!(
                (a.readout.clone() - b.readout.clone()).norm() < 1e-8,
                "q = {q:?}"
            );
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = dict1d(&[0.0, 1.0]);
        assert!(matches!(
            project_onto_hull(&d, &DVector::from_vec(vec![f64::NAN]), 1e-9),
            Err(ProjectionError::NonFiniteQuery(0))
        ));
        assert!(matches!(
            project_onto_hull(&d, &DVector::from_vec(vec![1.0]), 0.0),
            Err(ProjectionError::BadTolerance(_))
        ));
        assert!(matches!(
            project_onto_hull(&d, &DVector::from_vec(vec![1.0, 2.0]), 1e-9),
            Err(ProjectionError::DimensionMismatch { .. })
        ));
    }
}
