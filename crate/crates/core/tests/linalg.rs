use muagc_core::linalg::{lstsq, pinv, svd, Mat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Tall matrix with singular values clustered around one.
fn clustered(seed: u64, rows: usize, cols: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let h = Mat::from_fn(cols, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = h.qr().q();
    let s = Mat::from_diagonal(&nalgebra::DVector::from_fn(cols, |i, _| {
        1.0 + rng.random_range(-1e-5..1e-5) * (i as f64 + 1.0)
    }));
    q * s * v.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_tall_clustered_matrices(seed in any::<u64>(), rows in 5usize..16, cols in 2usize..5) {
        let a = clustered(seed, rows, cols);
        let d = svd(&a);
        let s = Mat::from_diagonal(&d.singular_values);
        let back = d.u.as_ref().unwrap() * s * d.v_t.as_ref().unwrap();
        prop_assert!((&back - &a).amax() <= 1e-12);
        prop_assert!(d.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pinv_solves_shift_equation(seed in any::<u64>()) {
        let a = clustered(seed, 10, 4);
        let x = Mat::from_fn(4, 4, |r, c| ((r * 4 + c) as f64).sin());
        let b = &a * &x;
        prop_assert!((pinv(&a, 1e-13).unwrap() * &b - &x).amax() <= 1e-10);
        prop_assert!((lstsq(&a, &b, 1e-13).unwrap() - &x).amax() <= 1e-10);
    }
}
