use contact_core::adaptive::{mark, spread};
use contact_core::mesh::refine;
use contact_core::problem::BenchmarkSpec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marking_keeps_the_largest_values(values in prop::collection::vec(0.0f64..10.0, 1..200), fraction in 0.01f64..1.0) {
        let m = mark(&values, fraction);
        prop_assert_eq!(m.len(), ((fraction * values.len() as f64).ceil() as usize).min(values.len()));
        prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
        let smallest_marked = m.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        for (i, &x) in values.iter().enumerate() {
            if !m.contains(&i) {
                prop_assert!(x <= smallest_marked);
            }
        }
    }

    #[test]
    fn spread_is_at_least_one(values in prop::collection::vec(0.001f64..10.0, 1..100)) {
        prop_assert!(spread(&values) >= 1.0);
    }

    #[test]
    fn refinement_stays_conforming(picks in prop::collection::vec(0usize..1000, 1..6), rounds in 1usize..4) {
        let mut mesh = BenchmarkSpec::default().mesh().unwrap();
        let area = mesh.total_area();
        for r in 0..rounds {
            let n = mesh.n_elements();
            let mut marked: Vec<usize> = picks.iter().map(|p| (p + 7 * r) % n).collect();
            marked.sort_unstable();
            marked.dedup();
            let next = refine(&mesh, &marked).unwrap().mesh;
            prop_assert!(next.n_elements() > n);
            prop_assert!(next.is_conforming());
            prop_assert!((next.total_area() - area).abs() < 1e-12);
            prop_assert!((0..next.n_elements()).all(|t| next.area(t) > 0.0));
            mesh = next;
        }
    }
}
