use super::*;
use crate::autodiff::Tensor;
use crate::world::{generate_scene, generate_task, Node, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logp_row(tape: &mut Tape, probs: &[f64]) -> Var {
    tape.constant(Tensor::row(probs.iter().map(|p| p.ln()).collect()))
}

fn record(
    tape: &mut Tape,
    forcing: Forcing,
    steps: &[(&[f64], usize, usize, f64)],
) -> TrajectoryRecord {
    let uniform_target = vec![1.0 / 25.0; 25];
    TrajectoryRecord {
        task_id: 0,
        forcing,
        steps: steps
            .iter()
            .map(|&(p, chosen, teacher, reward)| StepRecord {
                action_logp: logp_row(tape, p),
                target_logp: logp_row(tape, &uniform_target),
                chosen,
                teacher,
                reward,
            })
            .collect(),
        final_state: EpisodeState::start(0),
    }
}

fn toy_task() -> (Task, Scene) {
    let nodes = vec![
        Node {
            id: 0,
            position: [0.0, 0.0],
            landmark: 0,
        },
        Node {
            id: 1,
            position: [6.0, 0.0],
            landmark: 1,
        },
    ];
    let scene = Scene::new(0, nodes, vec![(0, 1)], 1).unwrap();
    let task = generate_task(&scene, 0, 0).unwrap();
    (task, scene)
}

#[test]
fn il_cases() {
    let mut t = Tape::new();
    let r = record(&mut t, Forcing::Teacher, &[(&[1.0], 0, 0, 0.0)]);
    let l = il_loss(&mut t, &r).unwrap();
    assert_eq!(t.scalar(l), 0.0);

    let q = [0.25; 4];
    let r = record(
        &mut t,
        Forcing::Teacher,
        &[(&q, 0, 2, 0.0), (&q, 1, 3, 0.0)],
    );
    let l = il_loss(&mut t, &r).unwrap();
    assert!((t.scalar(l) - 4f64.ln()).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..8);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|x| x / z).collect()
            })
            .collect();
        let teach: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let steps: Vec<(&[f64], usize, usize, f64)> = probs
            .iter()
            .zip(&teach)
            .map(|(p, &k)| (p.as_slice(), 0, k, 0.0))
            .collect();
        let r = record(&mut t, Forcing::Teacher, &steps);
        let il = il_loss(&mut t, &r).unwrap();
        let ht = ht_loss(&mut t, &r).unwrap();
        let hand: f64 = -probs
            .iter()
            .zip(&teach)
            .map(|(p, &k)| p[k].ln())
            .sum::<f64>();
        assert!((t.scalar(ht) - hand).abs() < 1e-12);
        assert!((t.scalar(il) - hand / n as f64).abs() < 1e-12);
        assert!((t.scalar(ht) - n as f64 * t.scalar(il)).abs() < 1e-12);
    }
}

#[test]
fn empty_trajectory_errors() {
    let mut t = Tape::new();
    let r = record(&mut t, Forcing::Student, &[]);
    assert!(matches!(
        il_loss(&mut t, &r),
        Err(LossError::EmptyTrajectory)
    ));
    assert!(matches!(
        ht_loss(&mut t, &r),
        Err(LossError::EmptyTrajectory)
    ));
    assert!(matches!(
        rl_loss(&mut t, &r),
        Err(LossError::EmptyTrajectory)
    ));
}

#[test]
fn ht_uniform_two_actions_three_steps() {
    let mut t = Tape::new();
    let h = [0.5, 0.5];
    let r = record(
        &mut t,
        Forcing::Teacher,
        &[(&h, 0, 0, 0.0), (&h, 0, 1, 0.0), (&h, 0, 0, 0.0)],
    );
    let l = ht_loss(&mut t, &r).unwrap();
    assert!((t.scalar(l) - 3.0 * 2f64.ln()).abs() < 1e-15);
    let r = record(&mut t, Forcing::Teacher, &[(&[1.0], 0, 0, 0.0)]);
    let l = ht_loss(&mut t, &r).unwrap();
    assert_eq!(t.scalar(l), 0.0);
}

#[test]
fn rl_cases() {
    let mut t = Tape::new();
    let p = [0.2, 0.3, 0.5];
    // constant-return advantages vanish: rewards only at the end give G_t constant
    let r = record(
        &mut t,
        Forcing::Student,
        &[(&p, 0, 0, 0.0), (&p, 1, 0, 0.0), (&p, 2, 0, 1.0)],
    );
    let l = rl_loss(&mut t, &r).unwrap();
    assert_eq!(t.scalar(l), 0.0);

    let r = record(&mut t, Forcing::Student, &[(&p, 1, 0, 5.0)]);
    let l = rl_loss(&mut t, &r).unwrap();
    assert_eq!(t.scalar(l), 0.0);

    // rewards 1, -2, 3: G = [2, 1, 3], b = 2, advantages [0, -1, 1]
    let r = record(
        &mut t,
        Forcing::Student,
        &[(&p, 0, 0, 1.0), (&p, 1, 0, -2.0), (&p, 2, 0, 3.0)],
    );
    let l = rl_loss(&mut t, &r).unwrap();
    let hand = -(0.2f64.ln() * 0.0 + -0.3f64.ln() + 0.5f64.ln() * 1.0);
    assert!((t.scalar(l) - hand).abs() < 1e-15);

    let r = record(&mut t, Forcing::Teacher, &[(&p, 0, 0, 1.0)]);
    assert!(matches!(
        rl_loss(&mut t, &r),
        Err(LossError::TeacherForcedRl)
    ));
}

#[test]
fn target_cell_cases() {
    let cfg = PlannerConfig::default();
    let (mut task, scene) = toy_task();
    // goal 6 m east of start = center of cell (row 2, col 3)
    task.start = 0;
    task.goal = 1;
    assert_eq!(target_cell(&task, &scene, &cfg), 13);

    // equidistant between cells 12 and 13 → lower index
    let nodes = vec![
        Node {
            id: 0,
            position: [0.0, 0.0],
            landmark: 0,
        },
        Node {
            id: 1,
            position: [3.0, 0.0],
            landmark: 1,
        },
    ];
    let s2 = Scene::new(1, nodes, vec![(0, 1)], 1).unwrap();
    assert_eq!(target_cell(&task, &s2, &cfg), 12);
}

#[test]
fn target_cell_matches_brute_force_and_translation() {
    let cfg = PlannerConfig::default();
    let sc = SceneConfig::default();
    for seed in 0..100 {
        let s = generate_scene(0, seed, &sc).unwrap();
        let task = generate_task(&s, 0, seed).unwrap();
        let o = s.position(task.start);
        let g = s.position(task.goal);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..25 {
            let cx = o[0] + ((i % 5) as f64 - 2.0) * 6.0;
            let cy = o[1] + ((i / 5) as f64 - 2.0) * 6.0;
            let d = ((cx - g[0]).powi(2) + (cy - g[1]).powi(2)).sqrt();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        assert_eq!(target_cell(&task, &s, &cfg), best);

        let shifted = Scene::new(
            s.scene_id,
            s.nodes
                .iter()
                .map(|n| Node {
                    position: [n.position[0] + 8.0, n.position[1] - 4.0],
                    ..n.clone()
                })
                .collect(),
            s.edges.clone(),
            s.style_seed,
        )
        .unwrap();
        assert_eq!(target_cell(&task, &shifted, &cfg), best);
    }
}

#[test]
fn total_loss_weight_selectors() {
    let cfg = PlannerConfig::default();
    let (task, scene) = toy_task();
    let mut t = Tape::new();
    let p = [0.2, 0.8];
    let r = record(
        &mut t,
        Forcing::Teacher,
        &[(&p, 1, 1, 0.0), (&p, 0, 1, 2.0)],
    );
    let il = il_loss(&mut t, &r).unwrap();
    let ht = ht_loss(&mut t, &r).unwrap();
    let tl = target_loss(&mut t, &r, &task, &scene, &cfg).unwrap();
    let (il, ht, tl) = (t.scalar(il), t.scalar(ht), t.scalar(tl));
    assert!((tl - 2.0 * 25f64.ln()).abs() < 1e-12);

    let sel = |a, b, c, d| LossWeights {
        il: a,
        rl: b,
        ht: c,
        target: d,
    };
    let mut eval = |w: LossWeights| {
        let v = total_loss(&mut t, &r, &task, &scene, &cfg, &w).unwrap();
        t.scalar(v)
    };
    assert_eq!(eval(sel(1.0, 0.0, 0.0, 0.0)), il);
    assert_eq!(eval(sel(0.0, 0.0, 0.0, 1.0)), tl);
    assert!((eval(sel(1.0, 1.0, 1.0, 1.0)) - (il + ht + tl)).abs() < 1e-12);
    assert!(matches!(
        total_loss(&mut t, &r, &task, &scene, &cfg, &sel(0.0, 0.0, 0.0, 0.0)),
        Err(LossError::ZeroWeights)
    ));

    // student forcing swaps HT for RL
    let rs = record(
        &mut t,
        Forcing::Student,
        &[(&p, 1, 1, 1.0), (&p, 0, 1, 2.0)],
    );
    let rl = rl_loss(&mut t, &rs).unwrap();
    let rl = t.scalar(rl);
    let v = total_loss(&mut t, &rs, &task, &scene, &cfg, &sel(1.0, 1.0, 1.0, 1.0)).unwrap();
    assert!((t.scalar(v) - (il + rl + tl)).abs() < 1e-12);
}

#[test]
fn forcing_alternates_by_batch() {
    assert_eq!(Forcing::for_batch(0), Forcing::Teacher);
    assert_eq!(Forcing::for_batch(1), Forcing::Student);
    assert_eq!(Forcing::for_batch(6), Forcing::Teacher);
}

#[test]
fn advantages_are_centered_returns() {
    assert_eq!(advantages(&[1.0, -2.0, 3.0]), vec![0.0, -1.0, 1.0]);
    assert_eq!(advantages(&[4.0]), vec![0.0]);
}
