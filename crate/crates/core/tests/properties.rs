//! Property tests for the library's invariants.

use proptest::prelude::*;

use diffdepth::diffusion::{DiffusionSystem, Preconditioner, SmoothnessField, SolverConfig};
use diffdepth::loss::{metrics, occlusion_mask, warp, LossConfig, PhotometricLoss};
use diffdepth::optim::{run, Objective, ParamState, PipelineConfig, Schedule};
use diffdepth::scene_io::points::parse_points;
use diffdepth::scene_io::{CameraModel, MultiViewSet, ScenePoint, View};
use diffdepth::splat::{alpha, render, SplatConfig};
use diffdepth::synthetic::{generate, SceneKind, SyntheticConfig};
use diffdepth::{Grid, Image};

fn point() -> impl Strategy<Value = ScenePoint> {
    (-3.0..20.0f64, -3.0..16.0f64, 0.2..6.0f64, -1.5..1.5f64).prop_map(|(x, y, z, r)| ScenePoint {
        x,
        y,
        z,
        log_weight: r,
    })
}

/// Labels, weights (some zero, at least one positive) and Q on a w×h grid.
fn system(w: usize, h: usize) -> impl Strategy<Value = (Grid, Grid, Grid)> {
    let n = w * h;
    (
        prop::collection::vec(-3.0..3.0f64, n),
        prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.05..3.0f64], n),
        prop::collection::vec(-2.0..2.0f64, n),
        0..n,
    )
        .prop_map(move |(l, mut wt, q, anchor)| {
            wt[anchor] = 1.0;
            (
                Grid::from_vec(w, h, l).unwrap(),
                Grid::from_vec(w, h, wt).unwrap(),
                Grid::from_vec(w, h, q).unwrap(),
            )
        })
}

fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-12,
        max_iter: 20_000,
        ..SolverConfig::default()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weights_nonnegative_and_labels_vanish_without_weight(
        pts in prop::collection::vec(point(), 0..25),
        tile in prop_oneof![Just(0usize), 1..20usize],
    ) {
        let cfg = SplatConfig { tile, ..SplatConfig::default() };
        let img = render(&pts, 17, 13, &cfg).unwrap();
        for (s, l) in img.labels().as_slice().iter().zip(img.weights().as_slice()) {
            prop_assert!(*l >= 0.0);
            if *l == 0.0 {
                prop_assert_eq!(*s, 0.0);
            }
        }
        let untiled = render(&pts, 17, 13, &SplatConfig::default()).unwrap();
        prop_assert_eq!(img.labels(), untiled.labels());
        prop_assert_eq!(img.weights(), untiled.weights());
    }

    #[test]
    fn occluder_never_increases_alpha(
        p in point(),
        others in prop::collection::vec(point(), 0..6),
        gap in 0.0..3.0f64,
        dx in -1.5..1.5f64,
        dy in -1.5..1.5f64,
        px in -3i64..4,
        py in -3i64..4,
    ) {
        let cfg = SplatConfig::default();
        let (x, y) = (p.x.round() as i64 + px, p.y.round() as i64 + py);
        let before = alpha(&p, x, y, &others, &cfg);
        let occluder = ScenePoint::new(p.x + dx, p.y + dy, p.z - gap);
        let mut more = others.clone();
        more.push(occluder);
        let after = alpha(&p, x, y, &more, &cfg);
        prop_assert!(after <= before + 1e-15, "{after} > {before}");
    }

    #[test]
    fn no_point_vanishes(fx in 0.0..1.0f64, fy in 0.0..1.0f64, r in -3.0..3.0f64) {
        let p = ScenePoint { x: 5.0 + fx, y: 5.0 + fy, z: 1.0, log_weight: r };
        let img = render(&[p], 12, 12, &SplatConfig::default()).unwrap();
        let peak = img.weights().as_slice().iter().cloned().fold(0.0, f64::max);
        prop_assert!(peak >= 1e-4 * p.weight());
    }

    #[test]
    fn system_is_symmetric_and_positive_definite(
        (l, w, q) in system(7, 5),
        z in prop::collection::vec(-1.0..1.0f64, 35),
    ) {
        let sys = DiffusionSystem::new(&l, &w, &SmoothnessField::new(q)).unwrap();
        for p in 0..35 {
            for r in 0..35 {
                prop_assert_eq!(sys.entry(p, r).to_bits(), sys.entry(r, p).to_bits());
            }
        }
        let mut az = vec![0.0; 35];
        sys.apply(&z, &mut az);
        if z.iter().any(|v| *v != 0.0) {
            prop_assert!(dot(&z, &az) > 0.0);
        }
    }

    #[test]
    fn smoothness_weights_are_positive(q in prop::collection::vec(-30.0..30.0f64, 12)) {
        let f = SmoothnessField::new(Grid::from_vec(4, 3, q).unwrap());
        prop_assert!(f.theta().as_slice().iter().all(|t| *t > 0.0));
    }

    #[test]
    fn solution_respects_maximum_principle((l, w, q) in system(9, 8)) {
        let sys = DiffusionSystem::new(&l, &w, &SmoothnessField::new(q)).unwrap();
        let d = sys.solve(&tight()).unwrap();
        let (lo, hi) = l.as_slice().iter().zip(w.as_slice()).filter(|(_, w)| **w > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (v, _)| (a.min(*v), b.max(*v)));
        prop_assert!(d.as_slice().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }

    #[test]
    fn inverse_is_self_adjoint(
        (l, w, q) in system(8, 6),
        g in prop::collection::vec(-1.0..1.0f64, 48),
        h in prop::collection::vec(-1.0..1.0f64, 48),
    ) {
        let sys = DiffusionSystem::new(&l, &w, &SmoothnessField::new(q)).unwrap();
        let (ah, _) = sys.solve_rhs(&h, &tight()).unwrap();
        let (ag, _) = sys.solve_rhs(&g, &tight()).unwrap();
        let (a, b) = (dot(&g, &ah), dot(&ag, &h));
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-3), "{a} vs {b}");
    }

    #[test]
    fn scaling_labels_scales_depth(
        (l, w, q) in system(6, 6),
        k in prop_oneof![Just(0.25), Just(0.5), Just(2.0), Just(8.0)],
    ) {
        let smooth = SmoothnessField::new(q);
        let d1 = DiffusionSystem::new(&l, &w, &smooth).unwrap().solve(&tight()).unwrap();
        let d2 = DiffusionSystem::new(&l.map(|v| k * v), &w, &smooth).unwrap().solve(&tight()).unwrap();
        for (a, b) in d1.as_slice().iter().zip(d2.as_slice()) {
            prop_assert_eq!(k * a, *b);
        }
    }

    #[test]
    fn preconditioners_agree((l, w, q) in system(12, 10)) {
        let sys = DiffusionSystem::new(&l, &w, &SmoothnessField::new(q)).unwrap();
        let tol = 1e-9;
        let solve = |p| sys.solve(&SolverConfig { tol, max_iter: 20_000, preconditioner: p }).unwrap();
        let (a, b) = (solve(Preconditioner::HierarchicalBasis), solve(Preconditioner::Jacobi));
        let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 10.0 * tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn bad_pixels_fall_with_threshold_and_q25_below_median(
        err in prop::collection::vec(-2.0..2.0f64, 1..80),
    ) {
        let n = err.len();
        let gt = Grid::zeros(n, 1);
        let d = Grid::from_vec(n, 1, err.clone()).unwrap();
        let ts = [0.0, 0.01, 0.1, 0.5, 1.0, 1.9];
        let m = metrics(&d, &gt, &ts).unwrap();
        for pair in m.bad_pixels.windows(2) {
            prop_assert!(pair[1].1 <= pair[0].1);
        }
        let mut abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { abs[n / 2] } else { 0.5 * (abs[n / 2 - 1] + abs[n / 2]) };
        prop_assert!(m.q25 <= median + 1e-15);
    }

    #[test]
    fn point_records_keep_file_order(rows in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64, 0.1..9.0f64), 1..30)) {
        let mut text = String::from("screen\n");
        for (x, y, z) in &rows {
            text.push_str(&format!("{x:?},{y:?},{z:?}\n"));
        }
        let loaded = parse_points(text.as_bytes(), std::path::Path::new("p.csv"), None).unwrap();
        let got: Vec<(f64, f64, f64)> = loaded.points.iter().map(|p| (p.x, p.y, p.z)).collect();
        prop_assert_eq!(got, rows);
    }
}

fn lf_views(d: f64) -> MultiViewSet {
    let tex = |x: usize, y: usize, c: usize| 0.5 + 0.4 * ((0.9 * x as f64 + 0.5 * y as f64 + c as f64).sin());
    let mut views = Vec::new();
    for v in 0..3 {
        for u in 0..3 {
            let (du, dv) = (u as f64 - 1.0, v as f64 - 1.0);
            let image = Image::from_fn(20, 16, 3, |x, y, c| {
                // View (du, dv) sees the central pixel p at p + d·(du, dv).
                let sx = (x as f64 - d * du).round().clamp(0.0, 19.0) as usize;
                let sy = (y as f64 - d * dv).round().clamp(0.0, 15.0) as usize;
                tex(sx, sy, c)
            });
            views.push(View { name: format!("{u}{v}"), image, camera: CameraModel::light_field(du, dv, 1.0).unwrap() });
        }
    }
    MultiViewSet::new(views, 4).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn central_warp_is_identity(vals in prop::collection::vec(-50.0..50.0f64, 320)) {
        let set = lf_views(1.0);
        let d = Grid::from_vec(20, 16, vals).unwrap();
        let c = set.central();
        let r = warp(c, &d, &c.camera);
        prop_assert_eq!(&r.warped, &c.image);
    }

    #[test]
    fn integer_disparity_shifts_and_masks_out_of_bounds(d in -2i32..=2, view in 0usize..9) {
        let set = lf_views(d as f64);
        let disp = Grid::new(20, 16, d as f64);
        let v = &set.views()[view];
        let (du, dv) = ((view % 3) as i64 - 1, (view / 3) as i64 - 1);
        let r = warp(v, &disp, &set.central().camera);
        for y in 0..16i64 {
            for x in 0..20i64 {
                let (sx, sy) = (x + d as i64 * du, y + d as i64 * dv);
                let inside = (0..20).contains(&sx) && (0..16).contains(&sy);
                let m = r.mask[(x as usize, y as usize)];
                if !inside {
                    prop_assert_eq!(m, 0.0);
                } else if m == 1.0 {
                    for ch in 0..3 {
                        prop_assert_eq!(r.warped.get(x as usize, y as usize, ch), v.image.get(sx as usize, sy as usize, ch));
                    }
                }
            }
        }
    }

    #[test]
    fn mask_grows_with_tolerance(vals in prop::collection::vec(0.0..2.0f64, 320), t1 in 0.0..0.2f64, extra in 0.0..0.5f64) {
        let set = lf_views(1.0);
        let d = Grid::from_vec(20, 16, vals).unwrap();
        for v in set.others() {
            let a = occlusion_mask(v, &d, &set.central().camera, t1);
            let b = occlusion_mask(v, &d, &set.central().camera, t1 + extra);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!(!(*x == 1.0 && *y == 0.0));
            }
        }
    }

    #[test]
    fn reprojection_error_is_nonnegative_and_order_free(vals in prop::collection::vec(0.0..2.0f64, 320), rot in 1usize..8) {
        let set = lf_views(1.0);
        let d = Grid::from_vec(20, 16, vals).unwrap();
        let a = PhotometricLoss::new(&set, LossConfig::default()).unwrap().error_map(&d).unwrap();
        prop_assert!(a.as_slice().iter().all(|e| *e >= 0.0));
        let mut views = set.views().to_vec();
        views.rotate_left(rot);
        let central = (4 + 9 - rot) % 9;
        let shuffled = MultiViewSet::new(views, central).unwrap();
        let b = PhotometricLoss::new(&shuffled, LossConfig::default()).unwrap().error_map(&d).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

fn mostly_descending(trace: &[f64]) -> f64 {
    let down = trace.windows(2).filter(|p| p[1] <= p[0]).count();
    down as f64 / (trace.len() - 1) as f64
}

#[test]
fn loss_trace_mostly_descends() {
    let scene = generate(&SyntheticConfig {
        width: 48,
        height: 40,
        n_points: 200,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let state = ParamState::initial(scene.points.clone(), &scene.views.central().image);
    let cfg = PipelineConfig::default();
    let sup = run(state.clone(), &Objective::Supervised(&scene.gt), &Schedule::default(), &cfg).unwrap();
    let totals: Vec<f64> = sup.trace.iter().map(|r| r.total).collect();
    let frac = mostly_descending(&totals);
    assert!(frac >= 0.8, "supervised: {frac}");

    let loss = PhotometricLoss::new(&scene.views, LossConfig::default()).unwrap();
    let me = run(state, &Objective::Photometric(&loss), &Schedule::default(), &cfg).unwrap();
    let totals: Vec<f64> = me.trace.iter().map(|r| r.total).collect();
    let frac = mostly_descending(&totals);
    assert!(frac >= 0.8, "self-supervised: {frac}");
}

#[test]
fn exact_points_stay_near_optimum() {
    for kind in [SceneKind::TexturedPlane, SceneKind::TwoPlane] {
        let scene = generate(&SyntheticConfig {
            kind,
            width: 48,
            height: 40,
            n_points: 300,
            outliers: 0.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let state = ParamState::initial(scene.points.clone(), &scene.views.central().image);
        let cfg = PipelineConfig::default();
        let before = metrics(&diffdepth::optim::forward(&state, &cfg).unwrap(), &scene.gt, &[]).unwrap().mse;
        let out = run(state, &Objective::Supervised(&scene.gt), &Schedule::default(), &cfg).unwrap();
        let after = metrics(&out.depth, &scene.gt, &[]).unwrap().mse;
        assert!(after <= 1.01 * before, "{kind:?}: {before} -> {after}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let scene = generate(&SyntheticConfig {
        width: 40,
        height: 32,
        n_points: 120,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let state = ParamState::initial(scene.points.clone(), &scene.views.central().image);
    let loss = PhotometricLoss::new(&scene.views, LossConfig::default()).unwrap();
    let sched = Schedule {
        iters_per_group: 3,
        passes: 1,
        ..Schedule::default()
    };
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run(state.clone(), &Objective::Photometric(&loss), &sched, &PipelineConfig::default()).unwrap())
    };
    let (a, b) = (go(1), go(4));
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert!((x.total - y.total).abs() <= 1e-12 * x.total.abs());
    }
    assert_eq!(a.trace, b.trace);
}
