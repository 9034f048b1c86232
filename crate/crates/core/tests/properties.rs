use birdmil::audio::{highpass, resample, AudioClip};
use birdmil::colorizer::{colorize, grayscale, region_color};
use birdmil::metrics::{macro_f1, macro_roc_auc, cmap, EvalBatch};
use birdmil::model::autopool::autopool;
use birdmil::spectrogram::{normalize_log_normalize, MelConfig, MelSpectrogram};
use ndarray::Array2;
use proptest::prelude::*;

fn clip(samples: Vec<f64>) -> AudioClip {
    AudioClip::new(samples, 32_000, "p").unwrap()
}

fn spec(values: Array2<f64>) -> MelSpectrogram {
    let bins = values.nrows();
    MelSpectrogram {
        values,
        config: MelConfig {
            total_bins: bins,
            ..MelConfig::default()
        },
        bin_center_freqs: vec![0.0; bins],
    }
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.4f64..0.4, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn highpass_is_linear_and_length_preserving(
        x in signal(600),
        y in signal(600),
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        cutoff in 50.0f64..5000.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let hx = highpass(&clip(x), cutoff).unwrap();
        let hy = highpass(&clip(y), cutoff).unwrap();
        let hm = highpass(&clip(mix), cutoff).unwrap();
        prop_assert_eq!(hm.len(), 600);
        for i in 0..600 {
            let lin = a * hx.samples[i] + b * hy.samples[i];
            prop_assert!((hm.samples[i] - lin).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_to_same_rate_is_bit_identical(x in signal(300)) {
        let c = clip(x);
        prop_assert_eq!(resample(&c, 32_000).unwrap(), c);
    }

    #[test]
    fn resample_preserves_duration(len in 100usize..3000, target in 8_000u32..48_000) {
        let c = clip(vec![0.1; len]);
        let r = resample(&c, target).unwrap();
        prop_assert!((r.duration_secs() - c.duration_secs()).abs() <= 1.0 / target as f64);
    }

    #[test]
    fn colorize_conserves_and_grayscale_replicates(
        thirds in 1usize..12,
        frames in 1usize..20,
        seed_vals in prop::collection::vec(0.0f64..1.0, 36 * 20),
    ) {
        let bins = 3 * thirds;
        let values = Array2::from_shape_fn((bins, frames), |(b, t)| seed_vals[(b * frames + t) % seed_vals.len()]);
        let s = spec(values.clone());
        let colored = colorize(&s).unwrap();
        let diff = (&colored.channel_sum() - &values).mapv(f64::abs);
        prop_assert!(diff.iter().all(|&d| d < 1e-12));
        let gray = grayscale(&s);
        for c in 0..3 {
            prop_assert_eq!(gray.channels.index_axis(ndarray::Axis(0), c), values.view());
        }
    }

    #[test]
    fn region_colors_are_nonnegative_unit_sum(thirds in 1usize..60) {
        let total = 3 * thirds;
        for b in 0..total {
            let c = region_color(b, total).unwrap();
            prop_assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_values_stay_in_unit_range(
        vals in prop::collection::vec(0.0f64..1e3, 12),
        beta in 1.0f64..1e5,
    ) {
        let mut s = spec(Array2::from_shape_vec((3, 4), vals).unwrap());
        s.config.log_beta = beta;
        let n = normalize_log_normalize(&s);
        prop_assert!(n.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = n.values.iter().cloned().fold(0.0, f64::max);
        let min = n.values.iter().cloned().fold(1.0, f64::min);
        prop_assert!(max == 1.0 || max == 0.0);
        prop_assert_eq!(min, 0.0);
    }

    #[test]
    fn autopool_is_bounded_and_padding_invariant(
        probs in prop::collection::vec(0.0f64..1.0, 15),
        mask in prop::collection::vec(any::<bool>(), 5),
        alpha in -20.0f64..20.0,
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let p = Array2::from_shape_vec((5, 3), probs).unwrap();
        let pooled = autopool(p.view(), &mask, alpha).unwrap();
        let mut scrambled = p.clone();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                scrambled.row_mut(i).fill(0.987);
            }
        }
        let again = autopool(scrambled.view(), &mask, alpha).unwrap();
        prop_assert_eq!(&pooled, &again);
        for c in 0..3 {
            let live: Vec<f64> = (0..5).filter(|&i| mask[i]).map(|i| p[[i, c]]).collect();
            let lo = live.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = live.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pooled[c] >= lo - 1e-12 && pooled[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn metrics_lie_in_unit_interval(
        scores in prop::collection::vec(0.0f64..1.0, 24),
        truth in prop::collection::vec(any::<bool>(), 24),
    ) {
        let s = Array2::from_shape_vec((8, 3), scores).unwrap();
        let t = Array2::from_shape_vec((8, 3), truth.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let batch = EvalBatch::new(s, t, 0.5).unwrap();
        for m in [macro_f1(&batch), macro_roc_auc(&batch), cmap(&batch)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
