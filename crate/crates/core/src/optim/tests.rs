use super::*;
use crate::diffusion::SmoothnessField;
use crate::loss::{LossConfig, PhotometricLoss};
use crate::synthetic::{generate, SceneKind, SyntheticConfig};

fn small_scene() -> crate::synthetic::SyntheticScene {
    generate(&SyntheticConfig {
        kind: SceneKind::TwoPlane,
        width: 20,
        height: 16,
        n_points: 40,
        outliers: 0.1,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = vec![1.0, -2.0, 0.5];
    let mut m = Moments::zeros(3);
    adam_step(&mut p, &[3.0, -1e-3, 0.0], &mut m, 0.1, 0.9, 0.999, 1e-8);
    assert!((p[0] - 0.9).abs() < 1e-6);
    assert!((p[1] + 1.9).abs() < 1e-4);
    assert_eq!(p[2], 0.5);
    assert_eq!(m.step, 1);
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = vec![0.25; 4];
    let mut m = Moments::zeros(4);
    for _ in 0..5 {
        adam_step(&mut p, &[0.0; 4], &mut m, 1.0, 0.9, 0.999, 1e-8);
    }
    assert_eq!(p, vec![0.25; 4]);
}

#[test]
fn stepping_one_group_leaves_others_alone() {
    let s = small_scene();
    let mut st = ParamState::initial(s.points.clone(), &s.views.central().image);
    let before = st.clone();
    let sched = Schedule::default();
    let n = st.points.len();
    st.step(Group::R, &vec![1.0; n], &sched);
    for g in [Group::Z, Group::XY, Group::Q] {
        assert_eq!(st.values(g), before.values(g));
        assert_eq!(st.moments(g), before.moments(g));
    }
    assert!(st.values(Group::R).iter().all(|&r| (r + 0.01).abs() < 1e-9));
    assert_eq!(st.moments(Group::R).step, 1);
}

#[test]
fn schedule_validation() {
    assert!(Schedule::default().validate().is_ok());
    assert_eq!(Schedule::default().total_iterations(), 13 * 5 * 4);
    assert_eq!(Schedule::long_turns().iters_per_group, 25);
    let s = Schedule {
        groups: vec![Group::Z, Group::Z],
        ..Schedule::default()
    };
    assert!(s.validate().is_err());
    let s = Schedule {
        iters_per_group: 0,
        ..Schedule::default()
    };
    assert!(s.validate().is_err());
    let mut s = Schedule::default();
    s.lr.q = -1.0;
    assert!(s.validate().is_err());
}

fn fd_check(objective: &Objective<'_>, st: &ParamState, cfg: &PipelineConfig) {
    let (b0, grads, _) = forward_backward(st, objective, cfg).unwrap();
    assert!(b0.total.is_finite());
    let eval = |s: &ParamState| -> f64 {
        let (b, _, _) = forward_backward(s, objective, cfg).unwrap();
        b.total
    };
    let h = 1e-5;
    for g in Group::ALL {
        let vals = st.values(g);
        // Largest-gradient coordinates carry the most signal.
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| grads.get(g)[b].abs().total_cmp(&grads.get(g)[a].abs()));
        for &i in idx.iter().take(3) {
            let mut plus = st.clone();
            let mut minus = st.clone();
            let mut v = vals.clone();
            v[i] += h;
            plus.set_values(g, &v);
            v[i] -= 2.0 * h;
            minus.set_values(g, &v);
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = grads.get(g)[i];
            let scale = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / scale < 2e-3,
                "{g}[{i}]: analytic {an:e} vs fd {fd:e}"
            );
        }
    }
}

fn nudge_off_seams(points: &mut [ScenePoint]) {
    // Keep positions away from half-integers, where the window jumps.
    for p in points {
        for c in [&mut p.x, &mut p.y] {
            if (c.fract().abs() - 0.5).abs() < 0.05 {
                *c += 0.1;
            }
        }
    }
}

#[test]
fn supervised_gradient_matches_finite_differences() {
    let s = small_scene();
    let mut pts = s.points.clone();
    nudge_off_seams(&mut pts);
    let st = ParamState::initial(pts, &s.views.central().image);
    let cfg = PipelineConfig {
        solver: crate::diffusion::SolverConfig {
            tol: 1e-12,
            ..Default::default()
        },
        ..Default::default()
    };
    fd_check(&Objective::Supervised(&s.gt), &st, &cfg);
}

#[test]
fn photometric_gradient_matches_finite_differences() {
    let s = small_scene();
    let mut pts = s.points.clone();
    nudge_off_seams(&mut pts);
    let st = ParamState::initial(pts, &s.views.central().image);
    let cfg = PipelineConfig {
        solver: crate::diffusion::SolverConfig {
            tol: 1e-12,
            ..Default::default()
        },
        ..Default::default()
    };
    let loss = PhotometricLoss::new(&s.views, LossConfig::default()).unwrap();
    fd_check(&Objective::Photometric(&loss), &st, &cfg);
}

#[test]
fn zero_passes_is_plain_diffusion() {
    let s = small_scene();
    let st = ParamState::initial(s.points.clone(), &s.views.central().image);
    let cfg = PipelineConfig::default();
    let sched = Schedule {
        passes: 0,
        ..Schedule::default()
    };
    let out = run(st.clone(), &Objective::Supervised(&s.gt), &sched, &cfg).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.state, st);
    assert_eq!(*out.depth, *forward(&st, &cfg).unwrap());
}

#[test]
fn runs_are_deterministic_and_reduce_supervised_loss() {
    let s = small_scene();
    let st = ParamState::initial(s.points.clone(), &s.views.central().image);
    let cfg = PipelineConfig::default();
    let sched = Schedule {
        iters_per_group: 3,
        passes: 2,
        ..Schedule::default()
    };
    let obj = Objective::Supervised(&s.gt);
    let a = run(st.clone(), &obj, &sched, &cfg).unwrap();
    let b = run(st, &obj, &sched, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(*a.depth, *b.depth);
    assert_eq!(a.trace.len(), 24);
    assert_eq!(a.trace[3].group, Group::XY);
    let first = a.trace[0].total;
    let (last, _) = crate::loss::supervised_loss(&a.depth, &s.gt).unwrap();
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn trace_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let rows = [TraceRow {
        iteration: 0,
        group: Group::XY,
        e_theta: 1.5,
        e_s: 0.25,
        e_ssim: 0.0,
        reward: 2.0,
        total: 3.0,
    }];
    write_trace(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,group,e_theta,e_s,e_ssim,reward,total"));
    assert_eq!(lines.next(), Some("0,XY,1.5,0.25,0.0,2.0,3.0"));
}

#[test]
fn augmentation_adds_points_on_strong_edges() {
    let s = small_scene();
    let img = &s.views.central().image;
    let mut st = ParamState::initial(s.points.clone(), img);
    let n0 = st.points.len();
    let added = augment_points(&mut st, &s.gt, img, 0.9).unwrap();
    assert!(added > 0 && added <= (20 * 16) / 10 + 1);
    assert_eq!(st.points.len(), n0 + added);
    assert_eq!(st.moments(Group::XY).m.len(), 2 * st.points.len());
    for p in &st.points[n0..] {
        assert_eq!(p.z, s.gt[(p.x as usize, p.y as usize)]);
        assert_eq!(p.log_weight, 0.0);
    }
}

#[test]
fn sign_of_depth_gradient_pulls_towards_truth() {
    // One point below a constant target: increasing Z must lower the loss.
    let q = SmoothnessField::uniform(9, 9);
    let st = ParamState::new(vec![ScenePoint::new(4.0, 4.0, 1.0)], q);
    let gt = Grid::new(9, 9, 2.0);
    let (_, g, d) = forward_backward(&st, &Objective::Supervised(&gt), &PipelineConfig::default()).unwrap();
    assert!(d.as_slice().iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-9));
    assert!(g.z[0] < 0.0);
}
