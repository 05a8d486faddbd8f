use std::collections::BTreeMap;

use anyonforge::connection::{flat_connection_a_n, hom_dimension, HorizontalSpace};
use anyonforge::cyclotomic::Cyclo;
use anyonforge::exact::rref;
use anyonforge::graph::{dynkin, Series};
use anyonforge::linalg::{haar_unitary, max_abs, random_cx, CMatrix, CVector, RankPolicy};
use anyonforge::modular::{
    compose_invariants, decompose_product, double_zn, enumerate_modular_invariants,
};
use anyonforge::path_algebra::{bratteli, higher_relative_commutant_dim, path_counts};
use anyonforge::tensor_network::{dense_bruteforce, random_mpo};
use anyonforge::tube::{anyons, f_vec_zn, tube_algebra, AnyonOptions};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cyclo(level: u32, coeffs: &[i64]) -> Cyclo {
    let c = coeffs
        .iter()
        .map(|&x| BigRational::from_integer(BigInt::from(x)))
        .collect();
    Cyclo::from_poly(level, c)
}

fn small_cyclo() -> impl Strategy<Value = Cyclo> {
    (
        prop::sample::select(vec![1u32, 2, 3, 4, 5, 8, 12]),
        prop::collection::vec(-5i64..=5, 1..8),
    )
        .prop_map(|(n, c)| cyclo(n, &c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cyclotomic_ring_axioms(a in small_cyclo(), b in small_cyclo(), c in small_cyclo()) {
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(&a + &b, &b + &a);
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(a.conj().conj(), a.clone());
        prop_assert_eq!((&a * &b).conj(), &a.conj() * &b.conj());
        prop_assert!((&a - &a).is_zero());
    }

    #[test]
    fn cyclotomic_embedding_is_a_homomorphism(a in small_cyclo(), b in small_cyclo()) {
        let scale = 1.0 + a.to_complex().norm() * b.to_complex().norm();
        prop_assert!(((&a * &b).to_complex() - a.to_complex() * b.to_complex()).norm() < 1e-9 * scale);
        prop_assert!(((&a + &b).to_complex() - a.to_complex() - b.to_complex()).norm() < 1e-9 * scale);
        prop_assert!((a.conj().to_complex() - a.to_complex().conj()).norm() < 1e-9 * scale);
    }

    #[test]
    fn rref_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-3i64..=3, 4), 1..5)) {
        let mut m: Vec<Vec<BigRational>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect())
            .collect();
        let p1 = rref(&mut m, 4);
        let before = m.clone();
        let p2 = rref(&mut m, 4);
        prop_assert_eq!(p1, p2);
        prop_assert_eq!(before, m);
    }

    #[test]
    fn mpo_matches_dense_oracle(seed in any::<u64>(), k in 1usize..=3, bond in 1usize..=3, phys in 1usize..=3) {
        let p = random_mpo::<f64>(seed, k, bond, phys).unwrap();
        let d = dense_bruteforce(&p).unwrap();
        prop_assert!(max_abs(&(p.to_dense().unwrap() - &d)) < 1e-10);
        prop_assert!((p.trace().unwrap() - d.trace()).norm() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let v = CVector::<f64>::from_fn(p.dim_in(), |_, _| random_cx(&mut rng));
        let w = CVector::<f64>::from_fn(p.dim_in(), |_, _| random_cx(&mut rng));
        let c = random_cx::<f64>(&mut rng);
        let lin = p.apply(&(&v + &w * c)).unwrap() - (p.apply(&v).unwrap() + p.apply(&w).unwrap() * c);
        prop_assert!(lin.camax() < 1e-10);
        prop_assert!((p.apply(&v).unwrap() - &d * &v).camax() < 1e-10);
    }

    #[test]
    fn bratteli_recurrence_and_dimensions(n in 2usize..=9, k in 0usize..=12, d_series in any::<bool>()) {
        let g = if d_series && n >= 4 { dynkin(Series::D, n).unwrap() } else { dynkin(Series::A, n).unwrap() };
        let b = bratteli(&g, k);
        prop_assert!(b.recurrence_holds());
        prop_assert_eq!(b.algebra_dim(k), higher_relative_commutant_dim(&g, k));
        let total: BigUint = path_counts(&g, k).iter().sum();
        let row: BigUint = b.levels[k].iter().map(|(_, d)| d.clone()).sum();
        prop_assert_eq!(total, row);
    }

    #[test]
    fn gauge_preserves_biunitarity(n in 3usize..=7, seed in any::<u64>()) {
        let c = flat_connection_a_n::<f64>(n).unwrap();
        let g = dynkin(Series::A, n).unwrap();
        let h = HorizontalSpace::from_graph(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauge: BTreeMap<(usize, usize), CMatrix<f64>> =
            h.pairs().map(|(p, d)| (p, haar_unitary(&mut rng, d))).collect();
        let c2 = c.gauge(&gauge);
        prop_assert!(c2.check_biunitarity().unwrap().max < 1e-10);
        prop_assert!((c2.statistical_dimension() - c.statistical_dimension()).abs() < 1e-10);
        prop_assert_eq!(hom_dimension(&c, &c2, RankPolicy::default()).unwrap(), 1);
    }

    #[test]
    fn tube_center_is_seed_independent(n in 2usize..=4, seed in any::<u64>()) {
        let t = tube_algebra(&f_vec_zn::<f64>(n).unwrap()).unwrap();
        let s = anyons(&t, &AnyonOptions { seed, ..AnyonOptions::default() }).unwrap();
        prop_assert_eq!(s.count, n * n);
        prop_assert_eq!(s.block_dims, vec![1; n * n]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn products_of_invariants_decompose(n in 2usize..=3, i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
        let (_, md) = double_zn(n).unwrap();
        let pool = enumerate_modular_invariants(&md, Some(1)).unwrap().invariants;
        let (z1, z2) = (&pool[i.index(pool.len())], &pool[j.index(pool.len())]);
        let p = compose_invariants(z1, z2).unwrap();
        let d = decompose_product(&p, &pool);
        prop_assert!(d.decompositions.iter().all(|m| m.len() as u64 == p[0][0]));
    }
}
