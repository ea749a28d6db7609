mod common;

use common::*;
use lipstream::visual::kalman::KalmanTrack;
use lipstream::visual::mel::{mel_frame_count, read_golden_file, write_golden_file, HOP, N_FFT};
use lipstream::visual::{mel_spectrogram, FaceBox};
use proptest::prelude::*;

/// Rewrites the golden file; run with `--ignored` after an intended change.
#[test]
#[ignore]
fn regenerate_mel_golden() {
    let spec = mel_spectrogram(&golden_signal()).unwrap();
    write_golden_file(std::path::Path::new(GOLDEN_PATH), &spec).unwrap();
}

#[test]
fn golden_file_matches() {
    let spec = mel_spectrogram(&golden_signal()).unwrap();
    let (rows, cols, data) = read_golden_file(std::path::Path::new(GOLDEN_PATH)).unwrap();
    assert_eq!((rows, cols), (spec.n_frames, 80));
    for (g, x) in data.iter().zip(&spec.data) {
        assert!((g - x).abs() <= 1e-4, "{g} vs {x}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_matches_buffer(n in 1024usize..40_000) {
        let spec = mel_spectrogram(&buffer(tone(n, 523.0, 4000.0))).unwrap();
        prop_assert_eq!(Some(spec.n_frames), mel_frame_count(n));
        prop_assert!((spec.n_frames - 1) * HOP + N_FFT <= n);
        prop_assert!(spec.n_frames * HOP + N_FFT > n);
    }

    #[test]
    fn kalman_covariance_stays_spd(seed in any::<u64>(), dropout in 0.0f64..0.9) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut track = KalmanTrack::new(1e-2, 25.0);
        for _ in 0..10_000 {
            let m = (!rng.random_bool(dropout)).then(|| FaceBox {
                cx: 224.0 + rng.random_range(-20.0..20.0),
                cy: 224.0 + rng.random_range(-20.0..20.0),
                w: 120.0 + rng.random_range(-5.0..5.0),
                h: 150.0 + rng.random_range(-5.0..5.0),
            });
            let est = track.step(m.as_ref(), 33).unwrap();
            prop_assert!(est.is_finite());
            prop_assert!(track.covariance_is_spd());
        }
    }
}
