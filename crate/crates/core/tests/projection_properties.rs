//! Projection solver properties checked against the subset-enumeration
//! oracle on random Gaussian instances.

use nalgebra::DVector;
use proptest::prelude::*;

use facestab_core::dict::Dictionary;
use facestab_core::instances::{generate_instance, InstanceKind, InstanceParams};
use facestab_core::projection::{brute_force_projection, face_gap, project_onto_hull, FaceGap};
use facestab_core::rng::{normal_vec, stream_rng};

fn random_instance(seed: u64, stream: u64, scale: f64) -> (Dictionary, DVector<f64>) {
    let mut rng = stream_rng(seed, stream);
    let d = 1 + (rng_usize(&mut rng) % 6);
    let m = 1 + (rng_usize(&mut rng) % 12);
    let params = InstanceParams {
        m_count: m,
        dim: d,
        query_scale: scale,
        ..Default::default()
    };
    let inst = generate_instance(InstanceKind::Gaussian, &params, seed, stream + 1000).unwrap();
    (inst.dict, inst.query)
}

fn rng_usize(rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    use rand_chacha::rand_core::RngCore;
    rng.next_u64() as usize
}

#[test]
fn solver_matches_oracle_on_random_instances() {
    let scales = [0.5, 2.0, 5.0];
    for stream in 0..60u64 {
        let scale = scales[(stream % 3) as usize];
        let (dict, q) = random_instance(41, stream, scale);
        let solved = project_onto_hull(&dict, &q, 1e-12).unwrap();
        let oracle = brute_force_projection(&dict, &q).unwrap();
        let dev = (&solved.readout - &oracle.readout).norm();
        assert!(dev <= 1e-7, "stream {stream}: readouts differ by {dev}");

        // Gap identity: the face gap equals the smallest off-face
        // multiplier whenever the instance is non-degenerate.
        if let FaceGap::Gap(g) = face_gap(&dict, &solved) {
            let min_mu = (0..dict.m_count())
                .filter(|j| !solved.active_set.contains(j))
                .map(|j| solved.mu[j])
                .fold(f64::INFINITY, f64::min);
            assert!((g - min_mu).abs() <= 1e-8, "stream {stream}: gap {g} vs mu {min_mu}");
        }

        // Multiplier signs and complementary slackness.
        for (i, (&a, &mu)) in solved
            .alpha
            .as_slice()
            .iter()
            .zip(&solved.mu)
            .enumerate()
        {
            assert!(mu >= -1e-10, "stream {stream}: mu[{i}] = {mu}");
            assert!(a.min(mu) <= 1e-8, "stream {stream}: slackness at {i}");
        }
        for &i in &solved.active_set {
            assert!(solved.mu[i] <= 1e-8, "stream {stream}: active mu[{i}]");
        }
    }
}

#[test]
fn projection_is_idempotent() {
    for stream in 0..20u64 {
        let (dict, q) = random_instance(43, stream, 2.0);
        let first = project_onto_hull(&dict, &q, 1e-12).unwrap();
        let second = project_onto_hull(&dict, &first.readout, 1e-12).unwrap();
        assert!(
            second.objective <= 1e-14,
            "stream {stream}: reprojection objective {}",
            second.objective
        );
    }
}

#[test]
fn projection_is_nonexpansive() {
    for stream in 0..20u64 {
        let (dict, q) = random_instance(47, stream, 2.0);
        let mut rng = stream_rng(48, stream);
        let q2 = &q + DVector::from_vec(normal_vec(&mut rng, dict.dim()));
        let a = project_onto_hull(&dict, &q, 1e-12).unwrap();
        let b = project_onto_hull(&dict, &q2, 1e-12).unwrap();
        let lhs = (&a.readout - &b.readout).norm();
        let rhs = (&q - &q2).norm();
        assert!(lhs <= rhs + 1e-8, "stream {stream}: {lhs} > {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Small dense instances with coordinates exercised beyond the Gaussian
    // family: the solver must still match the oracle.
    #[test]
    fn solver_matches_oracle_proptest(
        (rows, qv) in (1usize..4, 1usize..7).prop_flat_map(|(d, m)| (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), m),
            prop::collection::vec(-3.0f64..3.0, d),
        )),
    ) {
        let dict = Dictionary::from_rows(&rows).unwrap();
        let q = DVector::from_vec(qv);
        let solved = project_onto_hull(&dict, &q, 1e-11).unwrap();
        let oracle = brute_force_projection(&dict, &q).unwrap();
        let dev = (&solved.readout - &oracle.readout).norm();
        prop_assert!(dev <= 1e-6, "readouts differ by {dev}");
        // Weight feasibility survives clipping.
        let sum: f64 = solved.alpha.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-10);
        prop_assert!(solved.alpha.as_slice().iter().all(|&a| a >= 0.0));
    }
}
