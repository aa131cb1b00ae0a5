use std::path::Path;

use penh::data::{
    decode_ppm, degrade, encode_ppm, load_datasets, make_datasets, procedural_image, psnr, synth_rating, tone_operator,
    write_datasets, DegradeKind, Image, PairOperator, Split,
};
use penh::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..=1.0f64, h * w * 3).prop_map(move |d| Image::new(Tensor::new(&[h, w, 3], d).unwrap()).unwrap())
}

fn kind() -> impl Strategy<Value = DegradeKind> {
    prop::sample::select(DegradeKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn ppm_round_trip_is_within_half_a_quantum((h, w) in (1..9usize, 1..9usize), seed in any::<u64>()) {
        let img = procedural_image(h, w, &mut ChaCha8Rng::seed_from_u64(seed));
        let back = decode_ppm(&encode_ppm(&img), Path::new("mem")).unwrap();
        prop_assert_eq!(back.tensor().shape(), img.tensor().shape());
        prop_assert!(back.tensor().max_abs_diff(img.tensor()) <= 0.5 / 255.0 + 1e-12);
        prop_assert_eq!(encode_ppm(&back), encode_ppm(&img));
    }

    #[test]
    fn degradations_stay_in_range_and_are_seeded(img in image(6, 7), s in 0.0..=1.0f64, k in kind(), seed in any::<u64>()) {
        let a = degrade(&img, s, k, seed).unwrap();
        prop_assert_eq!(a.tensor().shape(), img.tensor().shape());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(&a, &degrade(&img, s, k, seed).unwrap());
        prop_assert_eq!(degrade(&img, 0.0, k, seed).unwrap(), img);
    }

    #[test]
    fn ratings_are_distributions_with_falling_means(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (synth_rating(lo).unwrap(), synth_rating(hi).unwrap());
        prop_assert!((rl.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(rl.probs().iter().all(|p| *p >= 0.0));
        prop_assert!(rl.mean_score() >= rh.mean_score() - 1e-12);
    }

    #[test]
    fn tone_operator_keeps_range_and_order(x in 0.0..=1.0f64, y in 0.0..=1.0f64, g in 0.5..1.0f64, s in 0.0..=1.0f64) {
        let px = tone_operator(&Image::filled(1, 1, x).unwrap(), g, s).unwrap().data()[0];
        let py = tone_operator(&Image::filled(1, 1, y).unwrap(), g, s).unwrap().data()[0];
        prop_assert!((0.0..=1.0).contains(&px));
        if x < y {
            prop_assert!(px <= py);
        }
    }
}

#[test]
fn invalid_arguments_are_rejected() {
    let img = Image::filled(4, 4, 0.5).unwrap();
    assert!(degrade(&img, 1.5, DegradeKind::Blur, 0).is_err());
    assert!(synth_rating(-0.1).is_err());
    assert!(Image::new(Tensor::full(&[2, 2, 3], 1.5)).is_err());
    assert!(psnr(&Tensor::zeros(&[2, 2, 3]), &Tensor::zeros(&[2, 3, 3])).is_err());
    assert!(make_datasets(1, 9, 32, 32, PairOperator::Tone).is_err());
    assert!(make_datasets(1, 10, 8, 32, PairOperator::Tone).is_err());
}

#[test]
fn datasets_survive_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_datasets(5, 10, 16, 20, PairOperator::Mixed).unwrap();
    write_datasets(dir.path(), &data).unwrap();
    let back = load_datasets(dir.path()).unwrap();
    assert_eq!(back.rated.len(), data.rated.len());
    assert_eq!(back.pairs.len(), data.pairs.len());
    for (a, b) in data.rated.iter().zip(&back.rated) {
        assert_eq!((a.kind, a.split, a.severity), (b.kind, b.split, b.severity));
        assert_eq!(a.rating, b.rating);
        assert!(a.image.tensor().max_abs_diff(b.image.tensor()) <= 0.5 / 255.0 + 1e-12);
    }
    for (a, b) in data.pairs.iter().zip(&back.pairs) {
        assert_eq!((a.id, a.split, &a.operator), (b.id, b.split, &b.operator));
        assert!(a.reference.tensor().max_abs_diff(b.reference.tensor()) <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(back.rated_split(Split::Train).len(), 8);
    assert_eq!(back.pair_split(Split::Test).len(), 5);
}

#[test]
fn harder_degradations_get_lower_target_scores() {
    let data = make_datasets(2, 60, 24, 24, PairOperator::Tone).unwrap();
    let (mut mild, mut severe) = (Vec::new(), Vec::new());
    for r in &data.rated {
        if r.severity < 0.3 {
            mild.push(r.rating.mean_score());
        } else if r.severity > 0.7 {
            severe.push(r.rating.mean_score());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!mild.is_empty() && !severe.is_empty());
    assert!(mean(&mild) > mean(&severe) + 2.0);
}
