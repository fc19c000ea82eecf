mod oracle;

use std::f64::consts::PI;

use dfr_kitti::*;
use oracle::OracleSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rotated_iou_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let (a, b) = oracle::random_bev_pair(&mut rng);
        let exact = rotated_bev_iou(&a, &b);
        let mc = oracle::mc_bev_iou(&a, &b, 10_000_000, &mut rng);
        worst = worst.max((exact - mc).abs());
        assert!((exact - mc).abs() < 1e-3, "{a:?} {b:?}: {exact} vs {mc}");
    }
    eprintln!("worst |exact - mc| = {worst:e}");
}

#[test]
fn square_vs_rotated_square_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = RotatedBevBox { cx: 0.0, cz: 0.0, length: 1.0, width: 1.0, yaw: 0.0 };
    let b = RotatedBevBox { yaw: PI / 4.0, ..a };
    let mc = oracle::mc_bev_iou(&a, &b, 10_000_000, &mut rng);
    assert!((mc - 0.70711).abs() < 1e-3, "{mc}");
    assert!((rotated_bev_iou(&a, &b) - mc).abs() < 1e-3);
}

#[test]
fn iou_3d_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (a, b) = oracle::random_bev_pair(&mut rng);
        let ba = Box3D { bev: a, y_bottom: rng.gen_range(1.0..2.0), height: rng.gen_range(0.5..2.0) };
        let bb = Box3D { bev: b, y_bottom: rng.gen_range(1.0..2.0), height: rng.gen_range(0.5..2.0) };
        let exact = iou_3d(&ba, &bb);
        let mc = oracle::mc_iou_3d(&ba, &bb, 10_000_000, &mut rng);
        assert!((exact - mc).abs() < 1e-3, "{exact} vs {mc}");
    }
}

fn bev() -> impl Strategy<Value = RotatedBevBox> {
    (-3.0..3.0f64, -3.0..3.0f64, 0.3..4.0f64, 0.3..4.0f64, -PI..PI).prop_map(
        |(cx, cz, length, width, yaw)| RotatedBevBox { cx, cz, length, width, yaw },
    )
}

fn boxes2d(n: usize) -> impl Strategy<Value = (Vec<Box2d>, Vec<f64>)> {
    (
        prop::collection::vec((0.0..40.0f64, 0.0..40.0f64, 2.0..20.0f64, 2.0..20.0f64), n),
        prop::collection::vec(0.5..1.0f64, n),
    )
        .prop_map(|(b, s)| (b.into_iter().map(|(u, v, w, h)| [u, v, u + w, v + h]).collect(), s))
}

proptest! {
    #[test]
    fn bev_iou_symmetric_bounded_rigid(a in bev(), b in bev(), t in prop::array::uniform2(-10.0..10.0f64), th in -PI..PI) {
        let ab = rotated_bev_iou(&a, &b);
        prop_assert!((ab - rotated_bev_iou(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        let (s, c) = th.sin_cos();
        let mv = |x: RotatedBevBox| RotatedBevBox {
            cx: c * x.cx + s * x.cz + t[0],
            cz: -s * x.cx + c * x.cz + t[1],
            yaw: x.yaw + th,
            ..x
        };
        prop_assert!((rotated_bev_iou(&mv(a), &mv(b)) - ab).abs() < 1e-9);
    }

    #[test]
    fn zero_yaw_is_axis_aligned(a in bev(), b in bev()) {
        let (a, b) = (RotatedBevBox { yaw: 0.0, ..a }, RotatedBevBox { yaw: 0.0, ..b });
        let aa = |r: &RotatedBevBox| [r.cx - r.length / 2.0, r.cz - r.width / 2.0, r.cx + r.length / 2.0, r.cz + r.width / 2.0];
        prop_assert!((rotated_bev_iou(&a, &b) - iou_2d(&aa(&a), &aa(&b))).abs() < 1e-12);
    }

    #[test]
    fn nms_order_independent((boxes, scores) in boxes2d(8), perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
        let kept = nms_2d(&boxes, &scores, 0.4, 0.75);
        let pb: Vec<_> = perm.iter().map(|&i| boxes[i]).collect();
        let ps: Vec<_> = perm.iter().map(|&i| scores[i]).collect();
        let mut back: Vec<usize> = nms_2d(&pb, &ps, 0.4, 0.75).into_iter().map(|i| perm[i]).collect();
        let mut kept_sorted = kept.clone();
        kept_sorted.sort();
        back.sort();
        prop_assert_eq!(kept_sorted, back);
    }

    #[test]
    fn adding_true_positive_never_lowers_ap(flags in prop::collection::vec(any::<bool>(), 0..12), pos in 0usize..13, extra_gt in 0usize..4) {
        let tps = flags.iter().filter(|&&f| f).count();
        let gt = tps + 1 + extra_gt;
        let base = PrCurve::from_sweep(flags.clone(), gt);
        let mut more = flags.clone();
        more.insert(pos.min(flags.len()), true);
        let grown = PrCurve::from_sweep(more, gt);
        for mode in [ApMode::R11, ApMode::R40] {
            prop_assert!(average_precision(&grown, mode).unwrap() >= average_precision(&base, mode).unwrap() - 1e-12);
        }
    }

    #[test]
    fn trailing_false_positive_never_raises_precision(flags in prop::collection::vec(any::<bool>(), 1..12)) {
        let gt = flags.iter().filter(|&&f| f).count().max(1);
        let base = PrCurve::from_sweep(flags.clone(), gt);
        let mut more = flags.clone();
        more.push(false);
        let grown = PrCurve::from_sweep(more, gt);
        for mode in [ApMode::R11, ApMode::R40] {
            prop_assert!(average_precision(&grown, mode).unwrap() <= average_precision(&base, mode).unwrap() + 1e-12);
        }
    }

    #[test]
    fn perfect_detector_r40_is_one(n in 1usize..30) {
        let c = PrCurve::from_sweep(vec![true; n], n);
        prop_assert_eq!(average_precision(&c, ApMode::R40).unwrap(), 1.0);
    }
}

#[test]
fn nms_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=10);
        let boxes: Vec<Box2d> = (0..n)
            .map(|_| {
                let (u, v) = (rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0));
                [u, v, u + rng.gen_range(3.0..15.0), v + rng.gen_range(3.0..15.0)]
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
        assert_eq!(
            nms_2d(&boxes, &scores, DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR),
            oracle::nms_oracle(&boxes, &scores, DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR)
        );
    }
}

fn all_specs() -> Vec<(EvalSpec, OracleSpec)> {
    let mut out = Vec::new();
    for difficulty in [Some(Difficulty::Easy), Some(Difficulty::Moderate), Some(Difficulty::Hard), None] {
        for (metric, bev) in [(Metric::Bev, true), (Metric::ThreeD, false)] {
            for iou in [0.5, 0.7] {
                out.push((
                    EvalSpec { category: Category::Car, difficulty, iou_thresh: iou, metric },
                    OracleSpec { category: "Car", ignored_neighbour: Some("Van"), difficulty, iou, bev },
                ));
            }
        }
    }
    out
}

#[test]
fn fixture_matches_brute_force_matching() {
    let f = oracle::load_fixture(&oracle::fixture_dir());
    let mut distinct = std::collections::BTreeSet::new();
    for (spec, ospec) in all_specs() {
        for (mode, r40) in [(ApMode::R11, false), (ApMode::R40, true)] {
            let got = evaluate_category(&f.gt, &f.det, &spec, mode).unwrap();
            let want = oracle::brute_force_ap(&f, &ospec, r40);
            assert_eq!(got, want, "{spec:?} {mode:?}");
            distinct.insert(got.to_bits());
        }
    }
    // The fixture should discriminate between settings, not collapse to 0/1.
    assert!(distinct.len() >= 5, "{} distinct APs", distinct.len());
}

#[test]
fn fixture_perfect_and_empty() {
    let f = oracle::load_fixture(&oracle::fixture_dir());
    let perfect: Vec<Vec<_>> = f
        .gt
        .iter()
        .map(|fr| fr.iter().map(|l| KittiObjectLabel { score: Some(1.0), ..l.clone() }).collect())
        .collect();
    let empty = vec![vec![]; 3];
    for (spec, _) in all_specs() {
        for mode in [ApMode::R11, ApMode::R40] {
            assert_eq!(evaluate_category(&f.gt, &perfect, &spec, mode).unwrap(), 1.0, "{spec:?}");
            assert_eq!(evaluate_category(&f.gt, &empty, &spec, mode).unwrap(), 0.0);
        }
    }
}

#[test]
fn hand_enumerated_two_gt_fixture() {
    let c = PrCurve::from_sweep([true, false], 2);
    assert_eq!(average_precision(&c, ApMode::R11).unwrap(), 6.0 / 11.0);
    assert_eq!(average_precision(&c, ApMode::R40).unwrap(), 0.5);
}
