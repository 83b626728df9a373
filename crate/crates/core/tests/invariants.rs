use maglab::feshbach::{random_gapped_instance, FeshbachBase};
use maglab::models::magnetic_lattice;
use maglab::operator::{apply_gauge, assemble_lattice, EdgeField, OperatorKind};
use maglab::geometry::LatticeGeometry;
use maglab::spectral::eigenvalues_dense;
use maglab::spectral::ids::{default_grid, ids};
use maglab::wegner::wegner_mc;
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn gauge_transform_preserves_spectrum(
        phases in prop::collection::vec(-3.0f64..3.0, 2 * 36),
        chi in prop::collection::vec(-10.0f64..10.0, 36),
        laplacian in any::<bool>(),
    ) {
        let g = LatticeGeometry::cube(2, 6).unwrap();
        let edge = EdgeField::from_fn(&g, |s, a| phases[2 * s + a]);
        let kind = if laplacian { OperatorKind::EdgeLaplacian } else { OperatorKind::Hopping };
        let op = assemble_lattice(kind, &g, &edge).unwrap();
        let a = eigenvalues_dense(op.matrix()).unwrap();
        let b = eigenvalues_dense(apply_gauge(&op, &chi).unwrap().matrix()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn reduction_identities_hold(seed in 0u64..10_000, n in 6usize..16, lambda in 0.0f64..0.05) {
        let inst = random_gapped_instance(n, 2, seed).unwrap();
        let base = FeshbachBase::new(&inst.family.h0, inst.threshold(), inst.threshold()).unwrap();
        let dec = base
            .reduce(&inst.family.h1(&inst.omega).unwrap(), &inst.family.h2(&inst.omega).unwrap(), lambda)
            .unwrap();
        let r = dec.identity_report();
        prop_assert!(r.projector_defect <= 1e-12, "{r:?}");
        prop_assert!(r.gamma_hermiticity <= 1e-11, "{r:?}");
        prop_assert!(r.passes(1e-8), "{r:?}");
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn ids_is_nondecreasing(seed in 0u64..1000, lambda in 0.0f64..1.0) {
        let ml = magnetic_lattice().unwrap();
        let model = ml.model(8, lambda).unwrap();
        let op = model.operator(&model.realization(seed, 0)).unwrap();
        let curve = ids(&op, &default_grid(-4.0, 10.0, 57)).unwrap();
        prop_assert!(curve.values.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(curve.values[0] >= 0.0 && *curve.values.last().unwrap() <= 1.0);
    }

    #[test]
    fn wegner_events_are_nested(seed in 0u64..1000, scale in 1e-4f64..1e-2) {
        let ml = magnetic_lattice().unwrap();
        let model = ml.model(8, 0.1).unwrap();
        let e0 = ml.gap.upper_edge - 2.5 * scale;
        let etas = [0.25 * scale, 0.5 * scale, scale];
        let t = wegner_mc(&model, &ml.gap, e0, &etas, 2.0, &[8], 20, seed).unwrap();
        prop_assert!(t.monotone);
        prop_assert!(t.probes.windows(2).all(|w| w[1].hits >= w[0].hits));
    }
}
