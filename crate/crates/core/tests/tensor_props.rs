use mvmos_core::oracle::naive_conv2d;
use mvmos_core::tensor::{conv2d, conv2d_with, pixel_shuffle, pixel_unshuffle, ConvParams, PadMode};
use mvmos_core::{Exec, Tensor};
use proptest::prelude::*;

fn tensor(shape: [usize; 3], vals: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), vals[..shape.iter().product::<usize>()].to_vec()).unwrap()
}

fn params(cin: usize, cout: usize, k: usize, vals: &[f32], relu: bool) -> ConvParams {
    let kernel = Tensor::new(vec![cout, cin, k, k], vals[..cout * cin * k * k].to_vec()).unwrap();
    let mut p = ConvParams::with_identity_bn(kernel, relu).unwrap();
    p.bias = Tensor::new(vec![cout], vals[vals.len() - cout..].to_vec()).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn circular_conv_commutes_with_column_roll(
        cin in 1usize..4, cout in 1usize..4, h in 1usize..6, w in 2usize..12,
        k in prop::sample::select(vec![1usize, 3, 5]), shift in 0usize..12,
        vals in prop::collection::vec(-2f32..2.0, 400),
    ) {
        let shift = shift % w;
        let x = tensor([cin, h, w], &vals);
        let p = params(cin, cout, k, &vals[100..], true);
        let a = conv2d(&x.roll_columns(shift).unwrap(), &p, 1, PadMode::CircularWidth).unwrap();
        let b = conv2d(&x, &p, 1, PadMode::CircularWidth).unwrap().roll_columns(shift).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn conv_matches_direct_sum(
        cin in 1usize..4, cout in 1usize..4, h in 1usize..7, w in 1usize..9,
        stride in 1usize..3, circular in any::<bool>(),
        vals in prop::collection::vec(-2f32..2.0, 400),
    ) {
        let x = tensor([cin, h, w], &vals);
        let p = params(cin, cout, 3, &vals[150..], false);
        let pad = if circular { PadMode::CircularWidth } else { PadMode::Zero };
        let got = conv2d(&x, &p, stride, pad).unwrap();
        let want = naive_conv2d(&x, &p, stride, pad);
        for (g, r) in got.data().iter().zip(&want) {
            prop_assert!((*g as f64 - r).abs() <= 1e-4 * r.abs().max(1.0));
        }
    }

    #[test]
    fn pixel_shuffle_is_a_bijection(c in 1usize..4, h in 1usize..5, w in 1usize..5, vals in prop::collection::vec(-5f32..5.0, 400)) {
        let x = tensor([4 * c, h, w], &vals);
        let y = pixel_shuffle(&x, 2).unwrap();
        prop_assert_eq!(y.shape(), &[c, 2 * h, 2 * w]);
        let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
    }

    #[test]
    fn conv_is_deterministic_across_modes(cin in 1usize..5, cout in 1usize..6, vals in prop::collection::vec(-1f32..1.0, 600)) {
        let x = tensor([cin, 6, 10], &vals);
        let p = params(cin, cout, 3, &vals[300..], true);
        let a = conv2d_with(Exec::Sequential, &x, &p, 2, PadMode::CircularWidth).unwrap();
        let b = conv2d_with(Exec::Parallel, &x, &p, 2, PadMode::CircularWidth).unwrap();
        let c = conv2d_with(Exec::Parallel, &x, &p, 2, PadMode::CircularWidth).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&b, &c);
    }
}
