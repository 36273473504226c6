mod common;

use common::{dense_mvn_logpdf, oracle_kernel};
use fgpvae::gp::{
    build_local_cov, global_kernel, gp_marginal_loglik, gp_posterior, gp_predict, local_kernel, local_kernel_with_grad,
    AuxPoint, KernelParams, DEFAULT_JITTER,
};
use fgpvae::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn angles(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..std::f64::consts::TAU, 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matches_definition(w1 in -10.0..10.0f64, w2 in -10.0..10.0f64, a in 0.1..3.0f64, r in 0.1..3.0f64) {
        let p = KernelParams::new(a, r).unwrap();
        let k = local_kernel(&AuxPoint::new(4, w1), &AuxPoint::new(4, w2), &p);
        prop_assert!((k - oracle_kernel(w1, w2, a, r)).abs() <= 1e-14);
        prop_assert_eq!(local_kernel(&AuxPoint::new(4, w1), &AuxPoint::new(5, w2), &p), 0.0);
        prop_assert_eq!(global_kernel(&AuxPoint::new(4, w1), &AuxPoint::new(4, w2)), 1.0);
        prop_assert_eq!(global_kernel(&AuxPoint::new(4, w1), &AuxPoint::new(3, w2)), 0.0);
    }

    #[test]
    fn kernel_gradient_matches_finite_differences(dw in -3.0..3.0f64, a in 0.3..2.0f64, r in 0.3..2.0f64) {
        let (x, y) = (AuxPoint::new(0, 0.0), AuxPoint::new(0, dw));
        let (_, da, dr) = local_kernel_with_grad(&x, &y, &KernelParams::new(a, r).unwrap());
        let h = 1e-6;
        let k = |a: f64, r: f64| local_kernel(&x, &y, &KernelParams::new(a, r).unwrap());
        prop_assert!((da - (k(a + h, r) - k(a - h, r)) / (2.0 * h)).abs() < 1e-7);
        prop_assert!((dr - (k(a, r + h) - k(a, r - h)) / (2.0 * h)).abs() < 1e-7);
    }

    #[test]
    fn covariance_is_symmetric_psd(ws in angles(10)) {
        let pts: Vec<_> = ws.iter().map(|&w| AuxPoint::new(1, w)).collect();
        let k = build_local_cov(&pts, &KernelParams::default(), DEFAULT_JITTER).unwrap();
        prop_assert_eq!(&k.entries, &k.entries.transpose());
        prop_assert!(k.entries.clone().symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn marginal_matches_dense_oracle(ws in angles(8), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = ws.len();
        let mu: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..2.0)).collect();
        let pts: Vec<_> = ws.iter().map(|&w| AuxPoint::new(0, w)).collect();
        let k = build_local_cov(&pts, &KernelParams::default(), DEFAULT_JITTER).unwrap();
        let a = DMatrix::from_fn(n, n, |i, j| oracle_kernel(ws[i], ws[j], 1.0, 1.0) + if i == j { DEFAULT_JITTER + s[i] * s[i] } else { 0.0 });
        let oracle = dense_mvn_logpdf(&DVector::from_vec(mu.clone()), &DVector::zeros(n), &a);
        let got = gp_marginal_loglik(&k, &mu, &s).unwrap();
        prop_assert!((oracle - got).abs() <= 1e-8 * oracle.abs().max(1.0));

        // posterior moments against explicit inverses
        let post = gp_posterior(&k, &mu, &s).unwrap();
        let ainv = a.clone().try_inverse().unwrap();
        let mean = &k.entries * &ainv * DVector::from_vec(mu.clone());
        let cov = &k.entries - &k.entries * &ainv * &k.entries;
        prop_assert!((post.mean - mean).amax() <= 1e-8);
        prop_assert!((&post.cov.entries - &cov).amax() <= 1e-8);
        for i in 0..n {
            prop_assert!(post.cov.entries[(i, i)] <= k.entries[(i, i)] + 1e-12);
        }
    }
}

#[test]
fn predicting_at_an_observed_angle_with_tiny_noise_recovers_it() {
    let pts = [AuxPoint::new(0, 0.2), AuxPoint::new(0, 1.1)];
    let p = KernelParams::default();
    let k = build_local_cov(&pts, &p, DEFAULT_JITTER).unwrap();
    let (m, v) = gp_predict(&k, &pts, &[0.7, -0.4], &[1e-4, 1e-4], &[pts[0]], &p).unwrap();
    assert!((m[0] - 0.7).abs() < 1e-6 && v[0] < 1e-6);
    let (m, v) = gp_predict(&k, &pts, &[0.7, -0.4], &[1e3, 1e3], &[AuxPoint::new(0, 2.0)], &p).unwrap();
    assert!(m[0].abs() < 1e-5 && (v[0] - 1.0).abs() < 1e-5);
}

#[test]
fn mixed_digits_are_rejected() {
    let pts = [AuxPoint::new(0, 0.2), AuxPoint::new(1, 1.1)];
    assert!(matches!(build_local_cov(&pts, &KernelParams::default(), DEFAULT_JITTER), Err(Error::MixedDigit { .. })));
    assert!(KernelParams::new(0.0, 1.0).is_err());
    assert!(KernelParams::new(1.0, -1.0).is_err());
}
