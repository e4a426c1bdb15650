//! Property tests for the spec'd invariants: row-stochastic adjacency,
//! Laplacian spectrum bounds, spectral-domain Chebyshev equivalence,
//! container round-trips, and DE monotonicity.

use eegfuse::featio::{
    extract_de, generate_synthetic, load_features, save_features, DatasetManifest, SynthConfig,
};
use eegfuse::graphcore::{cheb_conv, dynamic_adjacency, scaled_laplacian};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// dense symmetric eigendecomposition oracle (test-only, independent of the
// library's internals)
// ---------------------------------------------------------------------------

fn jacobi_eig(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * a[[p, q]]).atan2(a[[q, q]] - a[[p, p]]);
                let (s, c) = theta.sin_cos();
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

fn psi_strategy(n: usize, c: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-3.0f64..3.0, n * c)
        .prop_map(move |v| Array2::from_shape_vec((n, c), v).unwrap())
}

fn w_strategy(c: usize) -> impl Strategy<Value = Array1<f64>> {
    proptest::collection::vec(-2.0f64..2.0, c).prop_map(Array1::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_rows_sum_to_one(psi in psi_strategy(6, 3), w in w_strategy(3)) {
        let a = dynamic_adjacency(&psi, &w).unwrap();
        for row in a.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        for &v in a.iter() {
            prop_assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn scaled_laplacian_spectrum_bounded(psi in psi_strategy(5, 2), w in w_strategy(2)) {
        let a = dynamic_adjacency(&psi, &w).unwrap();
        let (lt, _lambda) = scaled_laplacian(&a).unwrap();
        let (eigs, _) = jacobi_eig(&lt);
        for e in eigs {
            prop_assert!(e >= -1.0 - 1e-6 && e <= 1.0 + 1e-6, "eigenvalue {e}");
        }
    }

    #[test]
    fn chebyshev_matches_spectral_evaluation(
        psi in psi_strategy(8, 2),
        w in w_strategy(2),
        theta in proptest::collection::vec(-1.5f64..1.5, 3),
    ) {
        let theta = Array1::from_vec(theta);
        let a = dynamic_adjacency(&psi, &w).unwrap();
        let (lt, _) = scaled_laplacian(&a).unwrap();
        let got = cheb_conv(&psi, &lt, &theta).unwrap();

        // spectral route: sum_phi theta_phi U T_phi(Lambda) U^T x
        let (eigs, u) = jacobi_eig(&lt);
        let n = psi.nrows();
        let mut filt = Array2::<f64>::zeros((n, n));
        for (k, &lam) in eigs.iter().enumerate() {
            // T_0 = 1, T_1 = lam, T_k = 2 lam T_{k-1} - T_{k-2}
            let mut t0 = 1.0;
            let mut t1 = lam;
            let mut f = theta[0] * t0;
            if theta.len() > 1 {
                f += theta[1] * t1;
            }
            for phi in 2..theta.len() {
                let t2 = 2.0 * lam * t1 - t0;
                f += theta[phi] * t2;
                t0 = t1;
                t1 = t2;
            }
            filt[[k, k]] = f;
        }
        let want = u.dot(&filt).dot(&u.t()).dot(&psi);
        for (g, e) in got.iter().zip(want.iter()) {
            prop_assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
    }

    #[test]
    fn feature_container_roundtrip(
        n_subjects in 1usize..4,
        trials in 1usize..3,
        segments in 1usize..3,
        channels in 2usize..5,
        seed in 0u64..500,
    ) {
        let ds = generate_synthetic(
            &SynthConfig {
                n_subjects,
                trials_per_subject: trials,
                segments_per_trial: segments,
                n_channels: channels,
                n_bands: 2,
                n_classes: 2,
                shift_strength: 0.3,
                noise_sigma: 0.2,
            },
            seed,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        save_features(&ds, &path).unwrap();
        let back = load_features(&path).unwrap();
        prop_assert_eq!(ds, back);
    }

    #[test]
    fn de_scaling_shifts_by_ln_k(k in 1.05f64..20.0) {
        let manifest = DatasetManifest {
            n_subjects: 1,
            n_trials_per_subject: 1,
            channels: vec!["A".into()],
            bands: DatasetManifest::standard_bands(),
            fs: 200.0,
            n_classes: 2,
        };
        // multi-tone window with power in several bands
        let w = Array2::from_shape_fn((1, 200), |(_, t)| {
            let t = t as f64 / 200.0;
            (2.0 * std::f64::consts::PI * 10.0 * t).sin()
                + 0.5 * (2.0 * std::f64::consts::PI * 20.0 * t).sin()
                + 0.25 * (2.0 * std::f64::consts::PI * 40.0 * t).sin()
                + 0.7 * (2.0 * std::f64::consts::PI * 2.0 * t).sin()
                + 0.6 * (2.0 * std::f64::consts::PI * 6.0 * t).sin()
        });
        let de = extract_de(&w, &manifest).unwrap();
        let scaled = extract_de(&w.mapv(|x| k * x), &manifest).unwrap();
        for (a, b) in de.iter().zip(scaled.iter()) {
            prop_assert!((b - a - k.ln()).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_degenerate_adjacency_cases_hold_in_bulk() {
    // 1000 random degenerate inputs: identical rows or zero weight both
    // give the uniform matrix
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for trial in 0..1000 {
        let n = 2 + (trial % 7);
        let c = 1 + (trial % 3);
        let uniform = 1.0 / n as f64;
        let (psi, w) = if trial % 2 == 0 {
            let row: Vec<f64> = (0..c).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let psi = Array2::from_shape_fn((n, c), |(_, j)| row[j]);
            let w = Array1::from_shape_fn(c, |_| rng.random::<f64>() * 2.0);
            (psi, w)
        } else {
            let psi = Array2::from_shape_fn((n, c), |_| rng.random::<f64>() * 4.0 - 2.0);
            (psi, Array1::zeros(c))
        };
        let a = dynamic_adjacency(&psi, &w).unwrap();
        for &v in a.iter() {
            assert!((v - uniform).abs() < 1e-9, "trial {trial}");
        }
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}
