use omniview_geom::*;
use proptest::prelude::*;

fn arb_camera() -> impl Strategy<Value = Camera> {
    (prop::array::uniform4(-1.0..1.0f64), prop::array::uniform3(-4.0..4.0f64), 0.4..2.5f64, 0.4..2.5f64)
        .prop_filter_map("degenerate quaternion", |(q, t, fx, fy)| Camera::new(q, t, [fx, fy]).ok())
}

fn depth_map(h: usize, w: usize, seed: u64) -> Vec<f64> {
    (0..h * w).map(|k| 0.5 + ((k as u64 * 2654435761 + seed) % 1000) as f64 / 100.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn unprojected_points_lie_on_their_plucker_rays(cam in arb_camera(), h in 1usize..7, w in 1usize..7, seed in 0u64..1000) {
        let depth = depth_map(h, w, seed);
        let cloud = unproject(&depth, h, w, &cam).unwrap();
        let map = plucker_map(&cam, h, w).unwrap();
        for (p, &k) in cloud.points.iter().zip(&cloud.pixels) {
            let r = map.at(k / w, k % w);
            let (m, d) = ([r[0], r[1], r[2]], [r[3], r[4], r[5]]);
            let pm = vec3::cross(*p, d);
            let scale = 1.0 + vec3::norm(*p);
            for a in 0..3 {
                prop_assert!((pm[a] - m[a]).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn rasterizing_an_unprojected_view_reproduces_it(cam in arb_camera(), h in 1usize..7, w in 1usize..7, seed in 0u64..1000) {
        let depth = depth_map(h, w, seed);
        let colors: Vec<[f64; 3]> = (0..h * w).map(|k| [k as f64 / (h * w) as f64, 0.5, 1.0]).collect();
        let cloud = unproject(&depth, h, w, &cam).unwrap();
        let r = rasterize(&cloud.points, &colors, &cam, h, w);
        prop_assert!(r.mask.iter().all(|&m| m));
        for k in 0..h * w {
            prop_assert!((r.depth[k] - depth[k]).abs() <= 1e-9 * depth[k]);
            for c in 0..3 {
                prop_assert!((r.rgb[3 * k + c] - colors[k][c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pose_error_is_a_metric(a in arb_camera(), b in arb_camera(), c in arb_camera()) {
        let ab = pose_error(&a, &b);
        let ba = pose_error(&b, &a);
        prop_assert!((ab.rotation_deg - ba.rotation_deg).abs() <= 1e-6);
        prop_assert!((ab.translation - ba.translation).abs() <= 1e-12);
        prop_assert!((ab.focal - ba.focal).abs() <= 1e-12);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&ab.rotation_deg));
        let (ac, cb) = (pose_error(&a, &c), pose_error(&c, &b));
        prop_assert!(ab.rotation_deg <= ac.rotation_deg + cb.rotation_deg + 1e-6);
        prop_assert!(ab.translation <= ac.translation + cb.translation + 1e-9);
        prop_assert!(pose_error(&a, &a).rotation_deg <= 1e-5);
    }

    #[test]
    fn pose_vector_preserves_geometry(cam in arb_camera()) {
        let back = Camera::from_pose_vector(&cam.pose_vector()).unwrap();
        let (p, q) = (plucker_map(&cam, 3, 4).unwrap(), plucker_map(&back, 3, 4).unwrap());
        prop_assert_eq!(p.values, q.values);
    }

    #[test]
    fn huber_is_symmetric_convex_and_bounded(a in prop::array::uniform9(-3.0..3.0f64), b in prop::array::uniform9(-3.0..3.0f64), delta in 0.01..2.0f64) {
        let (pa, pb) = (PoseVector(a), PoseVector(b));
        let l = huber(&pa, &pb, delta);
        prop_assert!((l - huber(&pb, &pa, delta)).abs() <= 1e-12);
        let sq: f64 = (0..9).map(|k| 0.5 * (a[k] - b[k]).powi(2)).sum();
        let l1: f64 = (0..9).map(|k| delta * (a[k] - b[k]).abs()).sum();
        prop_assert!(l <= sq + 1e-12 && l <= l1 + 1e-12);
        let mid = PoseVector(std::array::from_fn(|k| 0.5 * (a[k] + b[k])));
        let zero = PoseVector([0.0; 9]);
        prop_assert!(huber(&mid, &zero, delta) <= 0.5 * (huber(&pa, &zero, delta) + huber(&pb, &zero, delta)) + 1e-12);
    }
}
