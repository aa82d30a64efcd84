use mvmos_core::io::{synth_sequence, transform_to_frame, PointCloud, SyntheticSceneSpec};
use mvmos_core::projection::{
    build_correspondence, grid_sample_r2b, project_bev, project_range, rv_pixel, stacked_bev, ProjectionConfig,
};
use mvmos_core::residual::{residual_bev, residual_rv};
use mvmos_core::Tensor;
use proptest::prelude::*;

fn frames(seed: u64, n: usize) -> Vec<PointCloud> {
    let mut spec = SyntheticSceneSpec::random(seed);
    spec.frame_count = n;
    synth_sequence(&spec).unwrap().into_iter().map(|f| f.cloud).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn range_pixels_rederive_from_their_points(seed in any::<u64>()) {
        let proj = ProjectionConfig::desk();
        let cloud = &frames(seed, 2)[0];
        let img = project_range(cloud, &proj);
        let w = img.width();
        for (i, pi) in img.point_index.iter().enumerate() {
            prop_assert_eq!(pi.is_some(), img.is_valid(i));
            if let Some(pi) = pi {
                let (u, v) = rv_pixel(&cloud.points[*pi as usize], &proj).unwrap();
                prop_assert_eq!(v * w + u, i);
            }
        }
    }

    #[test]
    fn bev_counts_cover_every_point(seed in any::<u64>()) {
        let proj = ProjectionConfig::desk();
        let cloud = &frames(seed, 2)[0];
        let img = project_bev(cloud, &proj);
        let counted: u32 = img.counts.iter().sum();
        prop_assert_eq!(counted as usize + img.discarded, cloud.len());
        for (v, c) in img.valid.iter().zip(&img.counts) {
            prop_assert_eq!(*v, *c > 0);
        }
    }

    #[test]
    fn stacked_bev_ignores_frame_order(seed in any::<u64>(), rot in 0usize..3) {
        let proj = ProjectionConfig::desk();
        let f = frames(seed, 3);
        let mut order: Vec<&PointCloud> = f.iter().collect();
        let a = stacked_bev(&order, &proj);
        order.rotate_left(rot);
        order.swap(0, 1);
        let b = stacked_bev(&order, &proj);
        prop_assert_eq!(a.values, b.values);
        prop_assert_eq!(a.valid, b.valid);
    }

    #[test]
    fn r2b_sampling_stays_within_input_range(seed in any::<u64>(), vals in prop::collection::vec(0.5f32..3.0, 2 * 8 * 128)) {
        let proj = ProjectionConfig::desk();
        let cloud = &frames(seed, 2)[0];
        let corr = build_correspondence(cloud, &project_range(cloud, &proj), &project_bev(cloud, &proj), &proj);
        let feat = Tensor::new(vec![2, 8, 128], vals).unwrap();
        let out = grid_sample_r2b(&feat, &corr, (128, 128)).unwrap();
        let plane = 128 * 128;
        for c in 0..2 {
            let ch = feat.channel(c);
            let (lo, hi) = ch.iter().fold((f32::MAX, f32::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            for i in 0..plane {
                let v = out.data()[c * plane + i];
                if corr.r2b[i].is_some() {
                    prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn residuals_are_nonnegative_and_bev_is_symmetric(seed in any::<u64>()) {
        let proj = ProjectionConfig::desk();
        let mut spec = SyntheticSceneSpec::random(seed);
        spec.frame_count = 2;
        let f = synth_sequence(&spec).unwrap();
        let past = transform_to_frame(&f[0].cloud, &f[0].pose, &f[1].pose);
        let (a, b) = (&f[1].cloud, &past);
        let rv = residual_rv(&project_range(a, &proj), &project_range(b, &proj)).unwrap();
        prop_assert!(rv.data().iter().all(|v| *v >= 0.0));
        let ab = residual_bev(&stacked_bev(&[a], &proj), &stacked_bev(&[b], &proj)).unwrap();
        let ba = residual_bev(&stacked_bev(&[b], &proj), &stacked_bev(&[a], &proj)).unwrap();
        prop_assert!(ab.data().iter().all(|v| *v >= 0.0));
        prop_assert_eq!(ab, ba);
    }
}

#[test]
fn still_scene_repeats_exactly() {
    let mut spec = SyntheticSceneSpec::street();
    spec.frame_count = 3;
    let f = synth_sequence(&spec).unwrap();
    assert_eq!(f[0].cloud, f[2].cloud);
}
