use nalgebra::DMatrix;
use proptest::prelude::*;

use comet::compression::{draw_projections, CompressedFactors};
use comet::io::{read_dataset, read_fit, write_dataset_json, write_fit};
use comet::model::{ClusteredDataset, Hyperparams, Observation, Subject};
use comet::posterior::{quantile, select_ci, two_means, Chain, ChainHeader, Method, Snapshot};
use comet::rng::{derive_seed, stream, Purpose};
use comet::tensor::{fold, kronecker, CpDecomposition, DenseTensor};

fn dims(max_order: usize, max_dim: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_dim, 1..=max_order)
}

fn tensor(max_order: usize, max_dim: usize) -> impl Strategy<Value = DenseTensor> {
    dims(max_order, max_dim).prop_flat_map(|d| {
        let len: usize = d.iter().product();
        prop::collection::vec(-10.0..10.0f64, len).prop_map(move |v| DenseTensor::new(d.clone(), v).unwrap())
    })
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= tol * (1.0 + b.amax())
}

fn dataset(p: Vec<usize>, q: Vec<usize>, sizes: Vec<usize>, seed: u64) -> ClusteredDataset {
    use rand::Rng;
    let mut rng = stream(seed, Purpose::Covariates, &[]);
    let mut t = |d: &[usize]| {
        let len = d.iter().product();
        DenseTensor::new(d.to_vec(), (0..len).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
    };
    let subjects = sizes
        .iter()
        .map(|&m| Subject {
            observations: (0..m)
                .map(|j| Observation {
                    y: j as f64 * 0.1 - 1.0 / 3.0,
                    x: t(&p),
                    z: t(&q),
                })
                .collect(),
        })
        .collect();
    ClusteredDataset { p, q, subjects }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_then_fold_is_identity(t in tensor(4, 4)) {
        for d in 0..t.order() {
            let m = t.unfold(d).unwrap();
            prop_assert_eq!(m.shape(), (t.dims()[d], t.len() / t.dims()[d]));
            prop_assert_eq!(&fold(&m, d, t.dims()).unwrap(), &t);
        }
    }

    #[test]
    fn identity_mode_product_is_noop(t in tensor(4, 4)) {
        for d in 0..t.order() {
            let i = DMatrix::identity(t.dims()[d], t.dims()[d]);
            prop_assert_eq!(&t.mode_multiply(&i, d).unwrap(), &t);
        }
    }

    #[test]
    fn products_along_distinct_modes_commute(
        t in tensor(3, 3).prop_filter("order >= 2", |t| t.order() >= 2),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = stream(seed, Purpose::Demo, &[]);
        let a = DMatrix::from_fn(2, t.dims()[0], |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, t.dims()[1], |_, _| rng.random_range(-1.0..1.0));
        let ab = t.mode_multiply(&a, 0).unwrap().mode_multiply(&b, 1).unwrap();
        let ba = t.mode_multiply(&b, 1).unwrap().mode_multiply(&a, 0).unwrap();
        let diff = ab.data().iter().zip(ba.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12 * (1.0 + ab.frobenius_norm()));
    }

    #[test]
    fn kronecker_mixed_product(
        a in matrix(2, 3), b in matrix(3, 2), c in matrix(3, 2), d in matrix(2, 2),
    ) {
        let lhs = kronecker(&a, &b) * kronecker(&c, &d);
        let rhs = kronecker(&(&a * &c), &(&b * &d));
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn cp_rank_one_is_outer_product(u in prop::collection::vec(-2.0..2.0f64, 1..5), v in prop::collection::vec(-2.0..2.0f64, 1..5)) {
        let cp = CpDecomposition::new(vec![
            DMatrix::from_column_slice(u.len(), 1, &u),
            DMatrix::from_column_slice(v.len(), 1, &v),
        ]).unwrap();
        let b = cp.compose();
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                prop_assert_eq!(b.get(&[i, j]), ui * vj);
            }
        }
    }

    #[test]
    fn gamma_vec_round_trip(k in dims(3, 3), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream(seed, Purpose::Demo, &[]);
        let mut cf = CompressedFactors::zeros(&k);
        for (d, &kd) in k.iter().enumerate() {
            let v: Vec<f64> = (0..kd * kd).map(|_| rng.random_range(-1.0..1.0)).collect();
            cf.set_from_vec(d, &v).unwrap();
            prop_assert_eq!(cf.gamma_vec(d), v);
        }
        prop_assert_eq!(cf.kron().shape(), (k.iter().product(), k.iter().product()));
    }

    #[test]
    fn projections_depend_only_on_seed(q in dims(3, 5), seed in any::<u64>()) {
        let k: Vec<usize> = q.iter().map(|&qd| qd.div_ceil(2)).collect();
        let a = draw_projections(&q, &k, seed).unwrap();
        prop_assert_eq!(&a, &draw_projections(&q, &k, seed).unwrap());
        prop_assert_ne!(&a, &draw_projections(&q, &k, seed.wrapping_add(1)).unwrap());
        let v = a.core_covariance();
        prop_assert!(close(&v, &v.transpose(), 0.0));
    }

    #[test]
    fn seeds_separate_purposes(seed in any::<u64>(), i in any::<u64>()) {
        prop_assert_eq!(derive_seed(seed, Purpose::Sweep, &[i]), derive_seed(seed, Purpose::Sweep, &[i]));
        prop_assert_ne!(derive_seed(seed, Purpose::Sweep, &[i]), derive_seed(seed, Purpose::Dtilde, &[i]));
        prop_assert_ne!(derive_seed(seed, Purpose::Sweep, &[i]), derive_seed(seed, Purpose::Sweep, &[i, 0]));
    }

    #[test]
    fn quantile_is_monotone_and_bounded(mut v in prop::collection::vec(-100.0..100.0f64, 1..40), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ql, qh) = (quantile(&v, lo), quantile(&v, hi));
        prop_assert!(ql <= qh);
        prop_assert!(v[0] <= ql && qh <= v[v.len() - 1]);
        prop_assert_eq!(quantile(&v, 0.0), v[0]);
        prop_assert_eq!(quantile(&v, 1.0), v[v.len() - 1]);
    }

    #[test]
    fn two_means_is_scale_invariant_and_threshold_shaped(
        v in prop::collection::vec(0.0..50.0f64, 1..40),
        scale in prop_oneof![Just(0.5f64), Just(2.0), Just(8.0), Just(0.25)],
    ) {
        let high = two_means(&v);
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        prop_assert_eq!(&two_means(&scaled), &high);
        // Every high value exceeds every low value.
        let min_high = v.iter().zip(&high).filter(|(_, h)| **h).map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
        let max_low = v.iter().zip(&high).filter(|(_, h)| !**h).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(max_low < min_high || high.iter().all(|h| !h));
    }

    #[test]
    fn ci_selection_matches_sign_rule(iv in prop::collection::vec((-5.0..5.0f64, 0.0..5.0f64), 0..30)) {
        let intervals: Vec<(f64, f64)> = iv.iter().map(|&(lo, w)| (lo, lo + w)).collect();
        let sel = select_ci(&intervals);
        for ((lo, hi), s) in intervals.iter().zip(sel) {
            prop_assert_eq!(s, *lo > 0.0 || *hi < 0.0);
        }
    }

    #[test]
    fn dataset_json_round_trip(
        (p, q) in (1usize..=3).prop_flat_map(|d| (prop::collection::vec(1usize..=3, d), prop::collection::vec(1usize..=3, d))),
        sizes in prop::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
    ) {
        let ds = dataset(p, q, sizes, seed);
        let mut buf = Vec::new();
        write_dataset_json(&ds, true, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), None).unwrap();
        prop_assert!(back.responses);
        prop_assert_eq!(back.dataset, ds);
    }

    #[test]
    fn fit_round_trip(p in dims(2, 3), draws in 1usize..5, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream(seed, Purpose::Demo, &[]);
        let ds = dataset(p.clone(), p.clone(), vec![2, 1], seed);
        let hp = Hyperparams::defaults_for(&p, &p);
        let mut chain = Chain::new(ChainHeader::new(&ds, &hp, Some(seed), Method::Comet));
        let cells: usize = p.iter().product();
        for _ in 0..draws {
            chain.push(Snapshot {
                b: (0..cells).map(|_| rng.random_range(-1.0..1.0) / 3.0).collect(),
                factors: vec![],
                gamma: vec![],
                tau2: rng.random_range(0.1..3.0),
                lambda2: None,
                delta2: None,
                dtilde: None,
            });
        }
        let mut buf = Vec::new();
        write_fit(&chain, &mut buf).unwrap();
        let back = read_fit(buf.as_slice()).unwrap();
        prop_assert_eq!(back.header, chain.header);
        prop_assert_eq!(back.snapshots, chain.snapshots);
    }
}
