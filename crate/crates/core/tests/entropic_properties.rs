//! Entropic solver properties on planted and random instances.

use nalgebra::DVector;
use proptest::prelude::*;

use facestab_core::dict::{Dictionary, SimplexWeights};
use facestab_core::entropic::{
    fw_gap, leakage_mass, prescribe_epsilon, solve_entropic, solve_entropic_sweep,
    EntropicConfig, SolverKind,
};
use facestab_core::instances::{generate_instance, InstanceKind, InstanceParams};
use facestab_core::projection::{brute_force_projection, face_gap, project_onto_hull, FaceGap};
use facestab_core::verify::SuiteConfig;

fn planted(seed: u64, stream: u64) -> (Dictionary, DVector<f64>, Vec<usize>, f64) {
    let cfg = SuiteConfig::default();
    let inst = generate_instance(
        InstanceKind::PlantedFace,
        &cfg.jittered_params(stream as usize),
        seed,
        stream,
    )
    .unwrap();
    (
        inst.dict,
        inst.query,
        inst.planted_face.unwrap(),
        inst.planted_gap.unwrap(),
    )
}

#[test]
fn solutions_stay_interior_or_flag_saturation() {
    for stream in 0..10u64 {
        let (dict, q, _, gap) = planted(3, stream);
        for eps in [gap / 4.0, gap / 16.0] {
            let sol = solve_entropic(&dict, &q, &EntropicConfig::new(eps)).unwrap();
            assert!(sol.converged, "stream {stream} eps {eps}");
            for (i, &a) in sol.alpha.as_slice().iter().enumerate() {
                assert!(a > 0.0, "stream {stream}: alpha[{i}] = {a}");
            }
        }
    }
}

#[test]
fn per_instance_leakage_respects_exponential_bound() {
    for stream in 0..20u64 {
        let (dict, q, face, gap) = planted(5, stream);
        let off = (dict.m_count() - face.len()) as f64;
        for eps in [gap / 4.0, gap / 8.0, gap / 16.0] {
            let sol = solve_entropic(&dict, &q, &EntropicConfig::new(eps)).unwrap();
            let mass = leakage_mass(&sol, &face);
            let bound = off * (-gap / (2.0 * eps)).exp();
            assert!(
                mass <= bound,
                "stream {stream} eps {eps}: mass {mass} > bound {bound}"
            );
        }
    }
}

#[test]
fn pseudo_multiplier_deviation_ratio_stays_bounded() {
    for stream in 0..10u64 {
        let (dict, q, _, gap) = planted(9, stream);
        let exact = project_onto_hull(&dict, &q, 1e-12).unwrap();
        let grid: Vec<f64> = [8.0, 16.0, 32.0, 64.0].iter().map(|d| gap / d).collect();
        let base = EntropicConfig::new(1.0).with_gap_tol(1e-12);
        let sols = solve_entropic_sweep(&dict, &q, &base, &grid).unwrap();
        let mut ratios = Vec::new();
        for (sol, &eps) in sols.iter().zip(&grid) {
            let worst = sol
                .pseudo_mu
                .iter()
                .zip(&exact.mu)
                .enumerate()
                .filter(|(j, _)| !sol.saturated.contains(j))
                .map(|(_, (me, ms))| (me - ms).abs())
                .fold(0.0f64, f64::max);
            ratios.push(worst / eps);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            hi <= 3.0 * lo + 1.0,
            "stream {stream}: ratios not bounded: {ratios:?}"
        );
    }
}

#[test]
fn solver_paths_cross_agree() {
    for stream in 0..10u64 {
        let (dict, q, _, gap) = planted(13, stream);
        let tol = 1e-10;
        let eps = gap / 8.0;
        let eg = solve_entropic(&dict, &q, &EntropicConfig::new(eps).with_gap_tol(tol)).unwrap();
        let fw = solve_entropic(
            &dict,
            &q,
            &EntropicConfig::new(eps)
                .with_gap_tol(tol)
                .with_solver(SolverKind::FrankWolfe),
        )
        .unwrap();
        assert!(eg.converged && fw.converged, "stream {stream}");
        let dev = (&eg.readout - &fw.readout).norm();
        assert!(
            dev <= 10.0 * tol * dict.operator_norm(),
            "stream {stream}: dev {dev}"
        );
    }
}

#[test]
fn prescription_meets_target_tolerance() {
    let mut hits = 0usize;
    let total = 100usize;
    for stream in 0..total as u64 {
        let (dict, q, _, _) = planted(17, stream);
        let exact = project_onto_hull(&dict, &q, 1e-12).unwrap();
        let FaceGap::Gap(gap) = face_gap(&dict, &exact) else {
            hits += 1; // degenerate plants cannot occur by construction
            continue;
        };
        let alpha_face: Vec<f64> = exact
            .active_set
            .iter()
            .map(|&i| exact.alpha.as_slice()[i])
            .collect();
        let geom = facestab_core::tangent_basis(&dict, &exact.active_set)
            .with_core_from_weights(&alpha_face);
        let c_lin = geom.linear_constant().max(1e-6);
        let c_exp = dict.diameter() * (dict.m_count() - exact.active_set.len()) as f64;
        let eta = 0.1;
        let p = prescribe_epsilon(c_lin, c_exp, gap, eta).unwrap();
        let sol = solve_entropic(&dict, &q, &EntropicConfig::new(p.epsilon)).unwrap();
        if (&sol.readout - &exact.readout).norm() <= eta {
            hits += 1;
        }
    }
    assert!(hits >= 95, "prescription hit rate {hits}/{total}");
}

type RawInstance = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

fn instance_strategy() -> impl Strategy<Value = RawInstance> {
    (2usize..4, 2usize..6).prop_flat_map(|(d, m)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), m),
            prop::collection::vec(-3.0f64..3.0, d),
            prop::collection::vec(0.01f64..1.0, m),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Duality sandwich: the Frank-Wolfe gap dominates the suboptimality
    // measured against the enumeration oracle at any feasible point.
    #[test]
    fn fw_gap_dominates_suboptimality((rows, qv, raw) in instance_strategy()) {
        let dict = Dictionary::from_rows(&rows).unwrap();
        let q = DVector::from_vec(qv);
        let total: f64 = raw.iter().sum();
        let alpha = SimplexWeights::new(raw.iter().map(|x| x / total).collect(), 1e-9).unwrap();
        let oracle = brute_force_projection(&dict, &q).unwrap();
        let f_alpha = 0.5 * (dict.readout(alpha.as_slice()) - &q).norm_squared();
        let gap = fw_gap(&dict, &q, &alpha);
        prop_assert!(gap >= f_alpha - oracle.objective - 1e-12);
    }

    // The entropic readout interpolates: between the projection (eps -> 0)
    // and the barycenter (eps -> inf), weights stay feasible throughout.
    #[test]
    fn entropic_weights_stay_feasible(
        seed in 0u64..500,
        eps in 0.01f64..10.0,
    ) {
        let params = InstanceParams { m_count: 8, dim: 4, ..Default::default() };
        let inst = generate_instance(InstanceKind::Gaussian, &params, seed, 0).unwrap();
        let sol = solve_entropic(&inst.dict, &inst.query, &EntropicConfig::new(eps)).unwrap();
        let sum: f64 = sol.alpha.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-10);
        prop_assert!(sol.alpha.as_slice().iter().all(|&a| a > 0.0));
        // Pseudo-multiplier identity.
        for (a, mu) in sol.alpha.as_slice().iter().zip(&sol.pseudo_mu) {
            let want = -eps * a.ln();
            prop_assert!((mu - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}
