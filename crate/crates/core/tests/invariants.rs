use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tryon::engine::{decode_frame_message, encode_frame_message};
use tryon::gsnet::{feature_matching_loss, gan_loss, GanForm};
use tryon::imaging::{composite, roi_extract, roi_inverse, Image, Interp, RoiTransform, SoftMask};
use tryon::metrics::masked_l1;
use tryon::nn::Tensor;
use tryon::trainer::TrainConfig;

fn image(seed: u64, c: usize, h: usize, w: usize) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(c, h, w, |_, _, _| r.gen())
}

fn mask(seed: u64, h: usize, w: usize) -> SoftMask {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    SoftMask::from_fn(h, w, |_, _| r.gen())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composite_stays_between_input_and_garment(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let x = image(seed, 3, h, w);
        let g = image(seed.wrapping_add(1), 3, h, w);
        let out = composite(&x, &g, &mask(seed, h, w)).unwrap();
        for ((o, a), b) in out.data().iter().zip(x.data()).zip(g.data()) {
            prop_assert!(*o >= a.min(*b) - 1e-6 && *o <= a.max(*b) + 1e-6);
        }
    }

    #[test]
    fn equal_side_crop_round_trips(seed in any::<u64>(), cx in -10.0f64..50.0, cy in -10.0f64..50.0, side in 1usize..30) {
        let img = image(seed, 3, 40, 40);
        let roi = RoiTransform::new(cx, cy, side as f64, side);
        let back = roi_inverse(&roi_extract(&img, &roi, Interp::Bilinear).unwrap(), &roi, 40, 40, Interp::Bilinear).unwrap();
        let (x0, y0, x1, y1) = roi.source_rect();
        for y in 0..40 {
            for x in 0..40 {
                let inside = x as f64 >= x0 && y as f64 >= y0 && (x + 1) as f64 <= x1 && (y + 1) as f64 <= y1;
                prop_assert_eq!(back.pixel(y, x), if inside { img.pixel(y, x) } else { vec![0.0; 3] });
            }
        }
    }

    #[test]
    fn log_gan_value_is_never_positive(real in prop::collection::vec(0.0f64..=1.0, 1..8), fake in prop::collection::vec(0.0f64..=1.0, 1..8)) {
        let l = gan_loss(&real, &fake, GanForm::Log).unwrap();
        prop_assert!(l.l_gan <= 0.0);
        prop_assert!(l.generator <= 0.0);
        prop_assert_eq!(l.discriminator, -l.l_gan);
    }

    #[test]
    fn lsgan_is_zero_only_at_the_targets(real in 0.0f64..2.0, fake in -1.0f64..1.0) {
        let l = gan_loss(&[real], &[fake], GanForm::Lsgan).unwrap();
        let want = (real - 1.0).powi(2) + fake * fake;
        prop_assert!((l.discriminator - want).abs() < 1e-12);
        prop_assert!((l.generator - (fake - 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_is_a_symmetric_distance(seed in any::<u64>(), n in 1usize..40) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut t = || Tensor::from_vec(&[1, 1, 1, n], (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let (a, b) = (vec![vec![t(), t()]], vec![vec![t(), t()]]);
        let ab = feature_matching_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - feature_matching_loss(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(feature_matching_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn masked_l1_ignores_mask_scale(seed in any::<u64>(), scale in 0.05f32..1.0) {
        let (p, t) = (image(seed, 3, 6, 7), image(seed.wrapping_add(9), 3, 6, 7));
        let m = mask(seed, 6, 7);
        let scaled = SoftMask::from_fn(6, 7, |y, x| m.get(y, x) * scale);
        let a = masked_l1(&p, &t, &m).unwrap();
        let b = masked_l1(&p, &t, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-5 * a.max(1e-3));
    }

    #[test]
    fn learning_rate_never_increases(epochs in 1u64..300, decay in 0u64..300) {
        let cfg = TrainConfig { epochs, decay_epochs: decay, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..epochs).map(|e| cfg.lr_at(e)).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lrs.iter().all(|v| *v > 0.0 && *v <= cfg.learning_rate));
    }

    #[test]
    fn frame_messages_round_trip(id in any::<u64>(), h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(3, h, w, |_, _, _| r.gen_range(0..=255u8) as f32 / 255.0);
        let f = decode_frame_message(&encode_frame_message(id, &img).unwrap()).unwrap();
        prop_assert_eq!(f.id, id);
        prop_assert_eq!(f.image, img);
    }
}
