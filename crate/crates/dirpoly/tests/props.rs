//! Randomized invariants over the public surface. Each property states a
//! relation that must hold for every parameter draw, not a statistical
//! tendency.

use proptest::prelude::*;

use dirpoly::chaos_exact::{
    chaos_eval_z, i_mj, log_block_edges, second_moment_z, ChainDpConfig,
};
use dirpoly::clt_criterion::{ChaosFamily, XdomFamily};
use dirpoly::disorder::{
    make_schedule, standard_normal_cdf, standard_normal_quantile, DisorderLaw, DisorderPlane,
};
use dirpoly::grid::{policy_radius, PlaneDomain, RotGrid};
use dirpoly::polymer_sim::evolve_origin;
use dirpoly::stats::{moments_summary, SampleBatch};
use dirpoly::testfn::TestFunction;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chaos_sum_always_equals_recursion(
        n in 1u32..=4,
        beta in 0.05f64..0.95,
        seed in any::<u64>(),
        k in 0u64..1000,
    ) {
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let domain = PlaneDomain::new(n, grid).unwrap();
        let sched = make_schedule(beta, n, DisorderLaw::Gaussian).unwrap();
        let plane = DisorderPlane::new(seed, k, domain, sched).unwrap();
        let z = evolve_origin(&plane).unwrap();
        let chaos = chaos_eval_z(&plane, ChainDpConfig::enumeration()).unwrap();
        prop_assert!(rel(chaos, z) <= 1e-11, "chaos {chaos} vs recursion {z}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plane_is_deterministic_and_tilts_stay_positive(
        seed in any::<u64>(),
        k in 0u64..100,
        n in 1u32..=16,
    ) {
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let domain = PlaneDomain::new(n, grid).unwrap();
        let sched = make_schedule(0.5, n, DisorderLaw::Gaussian).unwrap();
        let a = DisorderPlane::new(seed, k, domain, sched.clone()).unwrap();
        let b = DisorderPlane::new(seed, k, domain, sched.clone()).unwrap();
        // parity of (u, v) = (x1 + x2, x1 - x2) must match the slice parity
        let z = if n % 2 == 0 { (0, 0) } else { (1, 0) };
        prop_assert_eq!(a.eta_at(n, z).unwrap().to_bits(), b.eta_at(n, z).unwrap().to_bits());
        prop_assert_eq!(a.omega_at(n, z).unwrap().to_bits(), b.omega_at(n, z).unwrap().to_bits());
        // the tilted weight 1 + beta_n eta is an exponential, hence positive
        let eta = a.eta_at(n, z).unwrap();
        prop_assert!(1.0 + sched.beta_n * eta > 0.0);
    }

    #[test]
    fn block_edges_partition_the_horizon(n in 1u32..2000, m in 1u32..24) {
        let edges = log_block_edges(n, m).unwrap();
        prop_assert_eq!(edges.len(), m as usize + 1);
        prop_assert_eq!(edges[0], 0);
        prop_assert_eq!(*edges.last().unwrap(), n);
        prop_assert!(edges.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn block_limits_are_positive_and_telescope(beta in 0.05f64..0.95, m in 1u32..24) {
        let mut sum = 0.0;
        for j in 1..=m {
            let v = i_mj(beta, m, j).unwrap();
            prop_assert!(v > 0.0);
            sum += v;
        }
        let total = -(1.0 - beta * beta).ln();
        prop_assert!(rel(sum, total) <= 1e-12, "telescoped {sum} vs {total}");
    }

    #[test]
    fn field_mass_grows_with_disorder_strength(
        n in 1u32..=64,
        s_lo in 0.01f64..0.4,
        bump in 0.01f64..0.4,
    ) {
        let lo = second_moment_z(n, s_lo).unwrap().value;
        let hi = second_moment_z(n, s_lo + bump).unwrap().value;
        prop_assert!(hi >= lo, "mass fell from {lo} to {hi} as disorder grew");
    }

    #[test]
    fn time_box_mass_is_monotone_in_the_window(
        n in 4u32..=48,
        beta in 0.1f64..0.9,
        cut in 1u32..=47,
    ) {
        let cut = cut.min(n - 1);
        let sched = make_schedule(beta, n, DisorderLaw::Gaussian).unwrap();
        let fam = XdomFamily::new(n, sched.sigma_n2, None).unwrap();
        let inner = fam.box_mass(0, cut);
        let outer = fam.box_mass(0, n);
        prop_assert!(inner >= 0.0);
        prop_assert!(outer >= inner - 1e-15, "widening the box lost mass: {inner} > {outer}");
        prop_assert!(outer <= fam.total_mass() + 1e-12);
    }

    #[test]
    fn summary_statistics_are_affine_equivariant(
        base in proptest::collection::vec(-50.0f64..50.0, 16..64),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let shifted: Vec<f64> = base.iter().map(|x| a * x + b).collect();
        let mb = SampleBatch::from_indexed_values("base", base, 8, 0.5, 0).unwrap();
        let ms = SampleBatch::from_indexed_values("affine", shifted, 8, 0.5, 0).unwrap();
        let s0 = moments_summary(&mb).unwrap();
        let s1 = moments_summary(&ms).unwrap();
        prop_assert!((s1.mean - (a * s0.mean + b)).abs() <= 1e-9 * (1.0 + s1.mean.abs()));
        prop_assert!(rel(s1.variance, a * a * s0.variance) <= 1e-9);
        prop_assert!(rel(s1.mean_se, a * s0.mean_se) <= 1e-9);
    }

    #[test]
    fn test_function_norms_are_quadratic_in_amplitude(
        amp in 0.1f64..8.0,
        scale in 0.2f64..5.0,
    ) {
        let f = TestFunction::new(0.5, 0.3, 0.8, amp).unwrap();
        let g = TestFunction::new(0.5, 0.3, 0.8, amp * scale).unwrap();
        prop_assert!(rel(g.l2_sq(), scale * scale * f.l2_sq()) <= 1e-12);
    }

    #[test]
    fn normal_quantile_inverts_the_cdf(x in -5.0f64..5.0) {
        let back = standard_normal_quantile(standard_normal_cdf(x));
        prop_assert!((back - x).abs() <= 1e-8, "round trip {x} -> {back}");
    }
}
