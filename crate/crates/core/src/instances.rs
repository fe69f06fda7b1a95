//! Synthetic instance generation.
//!
//! The planted-face family is the workhorse of the verification suites: a
//! unit direction is sampled, `k` atoms are lifted to tie on the supporting
//! hyperplane, and every other atom is depressed below it by at least the
//! target gap. The construction certifies (by the KKT conditions) the true
//! active set, the face gap, and the projection weights, so every bound can
//! be checked against known ground truth.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dict::Dictionary;
use crate::rng::{normal_vec, standard_normal, stream_rng, uniform_open01};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    /// iid Gaussian atoms, Gaussian query scaled by `query_scale`.
    Gaussian,
    /// Planted active face with known (I, gap, alpha*).
    PlantedFace,
    /// The exact two-atom tie: atoms {0, 1} in R^1, query 0.5.
    Tie,
    /// Paged workload whose top-score tokens hide in pages with poor
    /// summaries, so small-P routing misses them. Carries values.
    AdversarialPaging,
}

#[derive(Debug, Clone)]
pub struct InstanceParams {
    pub m_count: usize,
    pub dim: usize,
    /// Planted face size (PlantedFace only).
    pub face_size: usize,
    /// Target face gap (PlantedFace only).
    pub gap_target: f64,
    /// Residual length `t` placing the query off the hull (PlantedFace only).
    pub residual_len: f64,
    /// Query scale for the Gaussian kind.
    pub query_scale: f64,
    /// Lower clamp on planted barycentric weights, as a fraction of uniform.
    pub min_weight_frac: f64,
    /// Page size for the adversarial-paging kind.
    pub block_size: usize,
    /// Value width for the adversarial-paging kind.
    pub value_dim: usize,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            m_count: 24,
            dim: 8,
            face_size: 3,
            gap_target: 0.5,
            residual_len: 1.0,
            query_scale: 2.0,
            min_weight_frac: 0.3,
            block_size: 16,
            value_dim: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid instance parameters: {0}")]
    BadParams(String),
    #[error("planted gap {gap} is infeasible for the atom norm budget {budget}")]
    InfeasiblePlant { gap: f64, budget: f64 },
}

/// A generated instance with whatever ground truth the construction certifies.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dict: Dictionary,
    pub query: DVector<f64>,
    /// Planted active set (sorted), when known by construction.
    pub planted_face: Option<Vec<usize>>,
    /// Planted face gap, when known.
    pub planted_gap: Option<f64>,
    /// Planted projection weights on the face, when known.
    pub planted_alpha_face: Option<Vec<f64>>,
    /// Value rows for paged kinds.
    pub values: Option<Vec<Vec<f64>>>,
}

pub fn generate_instance(
    kind: InstanceKind,
    params: &InstanceParams,
    seed: u64,
    stream: u64,
) -> Result<Instance, InstanceError> {
    match kind {
        InstanceKind::Tie => {
            let dict = Dictionary::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
            Ok(Instance {
                dict,
                query: DVector::from_vec(vec![0.5]),
                planted_face: Some(vec![0, 1]),
                planted_gap: Some(0.0),
                planted_alpha_face: Some(vec![0.5, 0.5]),
                values: None,
            })
        }
        InstanceKind::Gaussian => {
            if params.m_count == 0 || params.dim == 0 {
                return Err(InstanceError::BadParams("m_count and dim must be >= 1".into()));
            }
            let mut rng = stream_rng(seed, stream);
            let rows: Vec<Vec<f64>> = (0..params.m_count)
                .map(|_| normal_vec(&mut rng, params.dim))
                .collect();
            let dict = Dictionary::from_rows(&rows).unwrap();
            let q = DVector::from_vec(normal_vec(&mut rng, params.dim)) * params.query_scale;
            Ok(Instance {
                dict,
                query: q,
                planted_face: None,
                planted_gap: None,
                planted_alpha_face: None,
                values: None,
            })
        }
        InstanceKind::PlantedFace => plant_face(params, seed, stream),
        InstanceKind::AdversarialPaging => {
            let cache = plant_cache(
                &PlantedCacheParams {
                    tokens: params.m_count,
                    dim: params.dim,
                    value_dim: params.value_dim,
                    face_size: params.face_size,
                    gap_target: params.gap_target,
                    block_size: params.block_size,
                    adversarial: true,
                    ..Default::default()
                },
                seed,
                stream,
            )?;
            let dict = Dictionary::from_rows(&cache.keys).unwrap();
            Ok(Instance {
                dict,
                query: cache.query,
                planted_face: Some(cache.face_tokens),
                planted_gap: Some(cache.score_gap),
                planted_alpha_face: None,
                values: Some(cache.values),
            })
        }
    }
}

fn plant_face(params: &InstanceParams, seed: u64, stream: u64) -> Result<Instance, InstanceError> {
    let (m, d, k) = (params.m_count, params.dim, params.face_size);
    if d < 2 || k < 1 || k >= d || m <= k {
        return Err(InstanceError::BadParams(format!(
            "planted face needs 2 <= dim, 1 <= face_size < dim, m_count > face_size (got m={m}, d={d}, k={k})"
        )));
    }
    if !(params.gap_target > 0.0) || !(params.residual_len > 0.0) {
        return Err(InstanceError::BadParams(
            "gap_target and residual_len must be positive".into(),
        ));
    }
    // Depressed atoms live at height h - gap/t; keep that within a sane
    // multiple of the face height so norms stay O(1).
    let h = 1.0;
    let depress = params.gap_target / params.residual_len;
    if depress > 4.0 * h {
        return Err(InstanceError::InfeasiblePlant {
            gap: params.gap_target,
            budget: 4.0 * h * params.residual_len,
        });
    }

    let mut rng = stream_rng(seed, stream);
    let rhat = {
        let v = DVector::from_vec(normal_vec(&mut rng, d));
        let n = v.norm();
        v / n
    };
    let perp = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        let v = DVector::from_vec(normal_vec(rng, d));
        let v = &v - &rhat * rhat.dot(&v);
        let n = v.norm();
        v / n
    };

    // Face atoms: u_i = h rhat + w_i with the planted barycenter of the w_i
    // at zero, so y* = h rhat + 0 and alpha* = beta by the KKT certificate.
    let beta = {
        let floor = params.min_weight_frac / k as f64;
        let mut raw: Vec<f64> = (0..k).map(|_| -uniform_open01(&mut rng).ln()).collect();
        let s: f64 = raw.iter().sum();
        for b in raw.iter_mut() {
            *b = floor + (1.0 - k as f64 * floor) * *b / s;
        }
        raw
    };
    // Face offsets: an orthonormal family in the complement of rhat,
    // scaled to 0.8 and recentered at the planted barycenter. Orthonormal
    // offsets pin the tangent conditioning (differences of an orthonormal
    // family have sigma_min equal to the scale), so every instance in the
    // family satisfies the tangential nondegeneracy hypothesis with a
    // uniform margin.
    let mut w: Vec<DVector<f64>> = Vec::with_capacity(k);
    while w.len() < k {
        let mut v = perp(&mut rng);
        for existing in &w {
            let proj = existing.dot(&v) / existing.norm_squared();
            v -= existing * proj;
        }
        let n = v.norm();
        if n > 1e-6 {
            w.push(v / n);
        }
    }
    for wi in w.iter_mut() {
        *wi *= 0.8;
    }
    if k > 1 {
        let bary: DVector<f64> = w
            .iter()
            .zip(&beta)
            .fold(DVector::zeros(d), |acc, (wi, &b)| acc + wi * b);
        for wi in w.iter_mut() {
            *wi -= &bary;
        }
    } else {
        w[0] = DVector::zeros(d);
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for wi in &w {
        let atom = &rhat * h + wi;
        rows.push(atom.iter().copied().collect());
    }
    // Off-face atoms: heights strictly below h - depress, the first one
    // exactly at the boundary so the planted gap is exact.
    for j in 0..(m - k) {
        let extra = if j == 0 {
            0.0
        } else {
            1.5 * uniform_open01(&mut rng)
        };
        let c = h - depress - extra;
        let side = perp(&mut rng) * (0.5 + 0.5 * uniform_open01(&mut rng));
        let atom = &rhat * c + side;
        rows.push(atom.iter().copied().collect());
    }

    let dict = Dictionary::from_rows(&rows).unwrap();
    let y_star = &rhat * h;
    let query = &y_star + &rhat * params.residual_len;

    Ok(Instance {
        dict,
        query,
        planted_face: Some((0..k).collect()),
        planted_gap: Some(params.gap_target),
        planted_alpha_face: Some(beta),
        values: None,
    })
}

/// Planted paged-cache workload: `face_size` tokens tie at the top score
/// `<q, k_i> = s_max` and every other token scores at least `gap_target`
/// lower, so the score-gap diagnostic and the routed face are known by
/// construction.
#[derive(Debug, Clone)]
pub struct PlantedCache {
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub query: DVector<f64>,
    pub face_tokens: Vec<usize>,
    pub score_gap: f64,
}

#[derive(Debug, Clone)]
pub struct PlantedCacheParams {
    pub tokens: usize,
    pub dim: usize,
    pub value_dim: usize,
    pub face_size: usize,
    pub gap_target: f64,
    /// Page that receives the face tokens (token indices are contiguous
    /// inside a page), clamped to the page count.
    pub face_page: usize,
    pub block_size: usize,
    /// When set, the face tokens are scattered into pages whose summaries
    /// score poorly, so routing at small P misses them.
    pub adversarial: bool,
}

impl Default for PlantedCacheParams {
    fn default() -> Self {
        Self {
            tokens: 4096,
            dim: 64,
            value_dim: 64,
            face_size: 4,
            gap_target: 0.5,
            face_page: 0,
            block_size: 64,
            adversarial: false,
        }
    }
}

pub fn plant_cache(params: &PlantedCacheParams, seed: u64, stream: u64) -> Result<PlantedCache, InstanceError> {
    let (t, d, dv, k) = (params.tokens, params.dim, params.value_dim, params.face_size);
    if t == 0 || d < 2 || dv == 0 || k == 0 || k > params.block_size || k >= t {
        return Err(InstanceError::BadParams(format!(
            "need tokens > face_size >= 1, dim >= 2, face_size <= block_size (got T={t}, d={d}, k={k})"
        )));
    }
    let mut rng = stream_rng(seed, stream);
    let query = {
        let v = DVector::from_vec(normal_vec(&mut rng, d));
        let n = v.norm();
        v * ((d as f64).sqrt() / n)
    };
    let qnorm2 = query.norm_squared();
    let s_max = 1.0 * (d as f64).sqrt();
    let s_low_cap = s_max - params.gap_target;

    let pages = t.div_ceil(params.block_size);
    let face_page = params.face_page.min(pages - 1);
    let face_page_range = face_page * params.block_size
        ..((face_page + 1) * params.block_size).min(t);

    let mut keys: Vec<Vec<f64>> = Vec::with_capacity(t);
    for tok in 0..t {
        // Background key: Gaussian component orthogonal to q plus a height
        // chosen so the score lands strictly below the depressed cap. The
        // face page's background sits in the top band so its summary ranks
        // first deterministically (a coherent, routable page); everything
        // else spreads over a wide band.
        let raw = DVector::from_vec(normal_vec(&mut rng, d));
        let raw = &raw - &query * (query.dot(&raw) / qnorm2);
        let raw = raw * 0.5;
        let band = if !params.adversarial && face_page_range.contains(&tok) {
            0.1
        } else {
            1.5
        };
        let score = s_low_cap - band * uniform_open01(&mut rng) - 1e-9;
        let key = &raw + &query * (score / qnorm2);
        keys.push(key.iter().copied().collect());
    }
    let face_tokens: Vec<usize> = if params.adversarial {
        // Spread face tokens across distinct pages and drown each of those
        // pages in strongly negative scores so their summaries rank last.
        let mut toks = Vec::with_capacity(k);
        for i in 0..k {
            let page = (i * pages / k).min(pages - 1);
            let start = page * params.block_size;
            let end = (start + params.block_size).min(t);
            toks.push(start);
            for tok in start..end {
                let raw = DVector::from_vec(normal_vec(&mut rng, d)) * 0.25;
                let raw = &raw - &query * (query.dot(&raw) / qnorm2);
                let score = -8.0 * s_max;
                let key = &raw + &query * (score / qnorm2);
                keys[tok] = key.iter().copied().collect();
            }
        }
        toks.sort_unstable();
        toks.dedup();
        toks
    } else {
        let start = face_page * params.block_size;
        (start..start + k).collect()
    };

    for &tok in &face_tokens {
        let raw = DVector::from_vec(normal_vec(&mut rng, d)) * 0.5;
        let raw = &raw - &query * (query.dot(&raw) / qnorm2);
        let key = &raw + &query * (s_max / qnorm2);
        keys[tok] = key.iter().copied().collect();
    }

    let values: Vec<Vec<f64>> = (0..t).map(|_| normal_vec(&mut rng, dv)).collect();

    // Re-measure the realized score gap between the tied face and the rest.
    let score_of = |row: &[f64]| -> f64 {
        row.iter().zip(query.iter()).map(|(a, b)| a * b).sum()
    };
    let best_off = keys
        .iter()
        .enumerate()
        .filter(|(i, _)| !face_tokens.contains(i))
        .map(|(_, r)| score_of(r))
        .fold(f64::NEG_INFINITY, f64::max);
    let score_gap = s_max - best_off;

    Ok(PlantedCache {
        keys,
        values,
        query,
        face_tokens,
        score_gap,
    })
}

/// Tie-constructed cache: two identical maximum-score keys force the
/// score-gap diagnostic to zero.
pub fn plant_tie_cache(tokens: usize, dim: usize, block_size: usize, seed: u64) -> PlantedCache {
    let mut cache = plant_cache(
        &PlantedCacheParams {
            tokens,
            dim,
            value_dim: dim,
            face_size: 1,
            block_size,
            ..Default::default()
        },
        seed,
        0,
    )
    .expect("tie cache parameters are valid");
    let first = cache.face_tokens[0];
    let second = first + 1;
    cache.keys[second] = cache.keys[first].clone();
    cache.face_tokens = vec![first, second];
    cache.score_gap = 0.0;
    cache
}

/// Column matrix view of row-major keys, for feeding the projection oracle.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let m = rows.len();
    DMatrix::from_fn(d, m, |i, j| rows[j][i])
}

/// iid Gaussian scores used by the extreme-value checks.
pub fn gaussian_scores(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{face_gap, project_onto_hull, FaceGap};

    #[test]
    fn tie_kind_is_the_exact_two_atom_instance() {
        let inst = generate_instance(InstanceKind::Tie, &InstanceParams::default(), 0, 0).unwrap();
        assert_eq!(inst.dict.m_count(), 2);
        assert_eq!(inst.query[0], 0.5);
    }

    #[test]
    fn gaussian_kind_is_reproducible() {
        let p = InstanceParams {
            m_count: 64,
            dim: 8,
            ..Default::default()
        };
        let a = generate_instance(InstanceKind::Gaussian, &p, 9, 3).unwrap();
        let b = generate_instance(InstanceKind::Gaussian, &p, 9, 3).unwrap();
        assert_eq!(a.dict.atoms(), b.dict.atoms());
        assert_eq!(a.query, b.query);
        let c = generate_instance(InstanceKind::Gaussian, &p, 10, 3).unwrap();
        assert_ne!(a.dict.atoms(), c.dict.atoms());
    }

    #[test]
    fn planted_face_is_verified_by_the_projection() {
        for stream in 0..8 {
            let p = InstanceParams {
                gap_target: 0.5,
                face_size: 3,
                ..Default::default()
            };
            let inst = generate_instance(InstanceKind::PlantedFace, &p, 42, stream).unwrap();
            let sol = project_onto_hull(&inst.dict, &inst.query, 1e-12).unwrap();
            assert_eq!(sol.active_set, inst.planted_face.clone().unwrap(), "stream {stream}");
            match face_gap(&inst.dict, &sol) {
                FaceGap::Gap(g) => {
                    assert!((g - 0.5).abs() < 0.05, "stream {stream}: gap {g}")
                }
                FaceGap::Degenerate => panic!("planted gap must be defined"),
            }
            // Planted weights match the solver.
            let planted = inst.planted_alpha_face.unwrap();
            for (i, &b) in inst.planted_face.unwrap().iter().zip(&planted) {
                assert!((sol.alpha.as_slice()[*i] - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn infeasible_plant_is_rejected() {
        let p = InstanceParams {
            gap_target: 100.0,
            residual_len: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_instance(InstanceKind::PlantedFace, &p, 1, 0),
            Err(InstanceError::InfeasiblePlant { .. })
        ));
    }

    #[test]
    fn planted_cache_has_the_advertised_score_gap() {
        let cache = plant_cache(
            &PlantedCacheParams {
                tokens: 512,
                dim: 16,
                value_dim: 8,
                face_size: 3,
                gap_target: 0.7,
                block_size: 32,
                ..Default::default()
            },
            5,
            0,
        )
        .unwrap();
        assert!(cache.score_gap >= 0.7 - 1e-9, "gap {}", cache.score_gap);
        let q = &cache.query;
        let score = |r: &Vec<f64>| r.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
        let s0 = score(&cache.keys[cache.face_tokens[0]]);
        for &tok in &cache.face_tokens {
            assert!((score(&cache.keys[tok]) - s0).abs() < 1e-9);
        }
    }

    #[test]
    fn tie_cache_has_zero_gap() {
        let cache = plant_tie_cache(256, 16, 32, 11);
        let q = &cache.query;
        let score = |r: &Vec<f64>| r.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
        let a = score(&cache.keys[cache.face_tokens[0]]);
        let b = score(&cache.keys[cache.face_tokens[1]]);
        assert_eq!(a, b);
    }
}
