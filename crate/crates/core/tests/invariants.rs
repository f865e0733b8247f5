use lcm::degrade::{center_mask, half_mask, lanczos_down, random_mask, Side};
use lcm::losses::{lap_l1, laplacian_pyramid, reconstruct_pyramid, PyramidSpec};
use lcm::Tensor;
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-1.0f64..1.0, c * h * w).prop_map(move |v| Tensor::from_vec(&[1, c, h, w], v).unwrap())
}

fn pair(max: usize) -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
    (1usize..=3, 2usize..=max, 2usize..=max).prop_flat_map(|(c, h, w)| (image(c, h, w), image(c, h, w)))
}

fn levels_for(x: &Tensor<f64>) -> usize {
    let d = x.dims();
    (d[2].min(d[3]) as f64).log2().floor() as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pyramid_reconstructs_its_input(x in (1usize..=3, 2usize..=16, 2usize..=16)
        .prop_flat_map(|(c, h, w)| image(c, h, w)))
    {
        for levels in 1..=levels_for(&x) {
            let pyr = laplacian_pyramid(&x, &PyramidSpec::new(levels).unwrap()).unwrap();
            let back = reconstruct_pyramid(&pyr).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn lap_l1_is_symmetric_and_shift_invariant((a, b) in pair(12), shift in -2.0f64..2.0) {
        let spec = PyramidSpec::new(levels_for(&a)).unwrap();
        let ab = lap_l1(&a, &b, &spec).unwrap();
        prop_assert!((ab - lap_l1(&b, &a, &spec).unwrap()).abs() <= 1e-12);
        let a2 = a.map(|v| v + shift);
        let b2 = b.map(|v| v + shift);
        prop_assert!((ab - lap_l1(&a2, &b2, &spec).unwrap()).abs() <= 1e-9);
        prop_assert!(lap_l1(&a, &a, &spec).unwrap() == 0.0);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn lanczos_is_linear_and_keeps_constants(
        (a, b) in (1usize..=3, 1usize..=4, 1usize..=4)
            .prop_flat_map(|(c, h, w)| (image(c, 4 * h, 4 * w), image(c, 4 * h, 4 * w))),
        k in -3.0f64..3.0,
        level in -1.0f64..1.0,
        factor in prop::sample::select(vec![1usize, 2, 4]),
    ) {
        let lhs = lanczos_down(&a.zip_map(&b, |x, y| k * x + y).unwrap(), factor).unwrap();
        let la = lanczos_down(&a, factor).unwrap();
        let lb = lanczos_down(&b, factor).unwrap();
        for ((l, x), y) in lhs.data().iter().zip(la.data()).zip(lb.data()) {
            prop_assert!((l - (k * x + y)).abs() <= 1e-9);
        }
        let flat = lanczos_down(&a.map(|_| level), factor).unwrap();
        prop_assert!(flat.data().iter().all(|v| (v - level).abs() <= 1e-6));
    }

    #[test]
    fn random_masks_are_binary_with_exact_counts(h in 1usize..40, w in 1usize..40, p in 0.0f64..=1.0, seed: u64) {
        let m = random_mask(h, w, p, seed).unwrap();
        let expected = (p * (h * w) as f64).round() as usize;
        prop_assert_eq!(m.missing_count(), expected);
        prop_assert_eq!(m.known_count() + m.missing_count(), h * w);
        let t = m.to_tensor::<f64>();
        prop_assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(t.data().iter().filter(|&&v| v == 0.0).count(), expected);
        prop_assert_eq!(random_mask(h, w, p, seed).unwrap(), m);
    }
}

#[test]
fn center_hole_of_fifty_has_exactly_2500_zeros() {
    let m = center_mask(128, 128, 50, 50).unwrap();
    let t = m.to_tensor::<f32>();
    assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(t.data().iter().filter(|&&v| v == 0.0).count(), 2500);
    assert_eq!(m.missing_count(), 2500);
    assert!(!m.is_known(64, 64) && m.is_known(38, 64) && !m.is_known(39, 39) && m.is_known(89, 89));
    for side in [Side::Left, Side::Right, Side::Top, Side::Bottom] {
        assert_eq!(half_mask(128, 128, side).missing_count(), 64 * 128);
    }
}
