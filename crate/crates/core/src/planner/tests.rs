use super::*;
use crate::autodiff::{check_gradients, Tape};
use crate::losses::{total_loss, LossWeights};
use crate::world::{generate_scene, generate_task, Action, EpisodeState, Node, Scene, SceneConfig};

fn small_cfg() -> PlannerConfig {
    PlannerConfig {
        dim: 8,
        hidden: 8,
        max_instruction_len: 24,
        ..PlannerConfig::default()
    }
}

fn scene(seed: u64, nodes: usize) -> Scene {
    let cfg = SceneConfig {
        min_nodes: nodes,
        max_nodes: nodes,
        ..SceneConfig::default()
    };
    generate_scene(seed as u32, seed, &cfg).unwrap()
}

fn zero_param(ps: &mut ParamSet, name: &str) {
    ps.get_mut(name).unwrap().data_mut().fill(0.0);
}

#[test]
fn grid_has_d_squared_cells_spaced_evenly() {
    let cfg = PlannerConfig::default();
    let offs = grid_offsets(&cfg);
    assert_eq!(offs.len(), 25);
    assert_eq!(offs[12], [0.0, 0.0]);
    for r in 0..5 {
        for c in 0..4 {
            let (a, b) = (offs[r * 5 + c], offs[r * 5 + c + 1]);
            assert_eq!(b[0] - a[0], 6.0);
            assert_eq!(b[1], a[1]);
        }
    }
    assert_eq!(offs[5][1] - offs[0][1], 6.0);
}

#[test]
fn init_tokens_shapes_and_degenerate_positional_encoder() {
    let cfg = small_cfg();
    let s = scene(1, 8);
    let task = generate_task(&s, 0, 3).unwrap();
    let mut ps = init_params(&cfg, 1, 0.01).unwrap();
    let mut tape = Tape::new();
    let b = init_tokens(&mut tape, &task, &s, &ps, &cfg).unwrap();
    assert_eq!(tape.value(b.c).shape(), &[25, 8]);
    assert_eq!(tape.value(b.g).shape(), &[1, 8]);
    assert_eq!(tape.value(b.i).rows(), task.instruction.len());
    assert!(b.h.is_none() && b.e.is_empty());
    // g₀ is the i₀ embedding
    assert_eq!(
        tape.value(b.g).data(),
        ps.get(names::TOKEN).unwrap().row_slice(0)
    );

    zero_param(&mut ps, names::POS_W);
    let mut tape = Tape::new();
    let b = init_tokens(&mut tape, &task, &s, &ps, &cfg).unwrap();
    let c = tape.value(b.c);
    for r in 1..25 {
        assert_eq!(c.row_slice(r), c.row_slice(0));
    }
}

#[test]
fn instruction_longer_than_table_is_rejected() {
    let cfg = PlannerConfig {
        max_instruction_len: 2,
        ..small_cfg()
    };
    let s = scene(2, 8);
    let task = (0..50)
        .map(|k| generate_task(&s, k, 1).unwrap())
        .find(|t| t.instruction.len() > 2)
        .unwrap();
    let ps = init_params(&cfg, 0, 0.01).unwrap();
    let mut tape = Tape::new();
    assert!(matches!(
        init_tokens(&mut tape, &task, &s, &ps, &cfg),
        Err(PlannerError::InstructionTooLong { .. })
    ));
}

#[test]
fn encode_history_cases() {
    assert_eq!(move_encoding(0.0), [0.0, 1.0, 0.0, 1.0]);
    let h = 0.7f64;
    assert_eq!(move_encoding(h), [h.sin(), h.cos(), 0.0, 1.0]);

    let cfg = small_cfg();
    let s = scene(3, 8);
    let views = vision_features(&s, 0);

    let mut zeroed = init_params(&cfg, 2, 0.01).unwrap();
    for n in [
        names::VIS_W,
        names::VIS_B,
        names::ACT_W,
        names::TIME,
        names::POS_W,
        names::POS_B,
    ] {
        zero_param(&mut zeroed, n);
    }
    let mut tape = Tape::new();
    let v = encode_history(&mut tape, &zeroed, &views, 1.0, 3, [2.0, -1.0]).unwrap();
    assert!(tape.value(v).data().iter().all(|&x| x == 0.0));

    // Independent recomputation of each encoder term.
    let ps = init_params(&cfg, 2, 0.01).unwrap();
    let mut tape = Tape::new();
    let v = encode_history(&mut tape, &ps, &views, 1.0, 3, [2.0, -1.0]).unwrap();
    let d = cfg.dim;
    let (vw, vb) = (ps.get(names::VIS_W).unwrap(), ps.get(names::VIS_B).unwrap());
    let aw = ps.get(names::ACT_W).unwrap();
    let time = ps.get(names::TIME).unwrap();
    let (pw, pb) = (ps.get(names::POS_W).unwrap(), ps.get(names::POS_B).unwrap());
    let r = move_encoding(1.0);
    let pos = [2.0 / POSITION_SCALE, -1.0 / POSITION_SCALE];
    for j in 0..d {
        let mut fv = 0.0;
        for row in 0..views.rows() {
            let mut z = vb.get(0, j);
            for k in 0..VISION_FEATURES {
                z += views.get(row, k) * vw.get(k, j);
            }
            fv += z;
        }
        fv /= views.rows() as f64;
        let fa: f64 = (0..4).map(|k| r[k] * aw.get(k, j)).sum();
        let ft = time.get(3, j);
        let fp = (pos[0] * pw.get(0, j) + pos[1] * pw.get(1, j) + pb.get(0, j)).tanh();
        let want = fv + fa + ft + fp;
        assert!((tape.value(v).data()[j] - want).abs() < 1e-12);
    }
}

#[test]
fn action_space_orders_local_then_global_then_stop() {
    // star around node 0 plus a tail 1-5
    let nodes = [
        [0.0, 0.0],
        [5.0, 0.0],
        [0.0, 5.0],
        [-5.0, 0.0],
        [0.0, -5.0],
        [10.0, 0.0],
    ]
    .iter()
    .enumerate()
    .map(|(id, &position)| Node {
        id,
        position,
        landmark: id,
    })
    .collect();
    let s = Scene::new(0, nodes, vec![(0, 1), (0, 2), (0, 3), (0, 4), (1, 5)], 1).unwrap();
    let st = EpisodeState::start(0);
    let sp = action_space(&st, &s);
    assert_eq!(sp.len(), 5);
    assert_eq!(sp.num_local, 4);
    assert_eq!(sp.actions[4], Action::Stop);

    let mut st = EpisodeState::start(2);
    for n in [0, 1, 5] {
        st = crate::world::step(&st, Action::Move(n), &s, 20).unwrap();
    }
    let sp = action_space(&st, &s);
    // at node 5: local {1}; global adds 2 and 0 (1 is already local)
    assert_eq!(
        sp.actions,
        vec![
            Action::Move(1),
            Action::Move(2),
            Action::Move(0),
            Action::Stop
        ]
    );
    assert_eq!(sp.num_local, 1);
}

#[test]
fn stop_only_action_set_has_probability_one() {
    let cfg = small_cfg();
    let s = scene(4, 8);
    let task = generate_task(&s, 0, 1).unwrap();
    let ps = init_params(&cfg, 0, 0.01).unwrap();
    let mut tape = Tape::new();
    let mut b = init_tokens(&mut tape, &task, &s, &ps, &cfg).unwrap();
    let v = vision_tokens(&mut tape, &ps, &vision_features(&s, task.start)).unwrap();
    let space = ActionSpace {
        actions: vec![Action::Stop],
        num_local: 0,
    };
    let out = forward_step(&mut tape, &mut b, v, &space, &ps, &cfg).unwrap();
    assert_eq!(tape.value(out.action_logp).data(), &[0.0]);
}

#[test]
fn identical_candidates_get_identical_probability() {
    let cfg = small_cfg();
    let s = scene(5, 10);
    let task = generate_task(&s, 0, 2).unwrap();
    let mut ps = init_params(&cfg, 3, 0.01).unwrap();
    zero_param(&mut ps, names::POS_W);
    let r = rollout(&task, &s, &ps, &cfg, &Driver::Teacher).unwrap();
    for st in &r.record.steps {
        let p = r.tape.value(st.target_logp).data();
        assert!(p.iter().all(|&x| x == p[0]));
    }
}

#[test]
fn candidate_permutation_permutes_target_distribution() {
    let cfg = small_cfg();
    let s = scene(6, 10);
    let task = generate_task(&s, 0, 4).unwrap();
    let ps = init_params(&cfg, 4, 0.01).unwrap();
    let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();

    let run = |permute: bool| {
        let mut tape = Tape::new();
        let mut b = init_tokens(&mut tape, &task, &s, &ps, &cfg).unwrap();
        if permute {
            let rows: Vec<_> = perm
                .iter()
                .map(|&i| tape.slice_rows(b.c, i, 1).unwrap())
                .collect();
            b.c = tape.concat_rows(&rows).unwrap();
        }
        let st = EpisodeState::start(task.start);
        let space = action_space(&st, &s);
        let v = vision_tokens(&mut tape, &ps, &vision_features(&s, task.start)).unwrap();
        let out = forward_step(&mut tape, &mut b, v, &space, &ps, &cfg).unwrap();
        (
            tape.value(out.target_logp).data().to_vec(),
            tape.value(out.action_logp).data().to_vec(),
        )
    };
    let (base, act) = run(false);
    let (permuted, act2) = run(true);
    for (k, &i) in perm.iter().enumerate() {
        assert!((permuted[k] - base[i]).abs() < 1e-12);
    }
    for (a, b) in act.iter().zip(&act2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn history_attention_respects_adjacency_mask() {
    let cfg = small_cfg();
    let mut masked_seen = 0usize;
    for seed in 0..30 {
        let s = scene(seed, 12);
        let task = generate_task(&s, 0, seed).unwrap();
        let ps = init_params(&cfg, seed, 0.01).unwrap();
        let r = rollout(&task, &s, &ps, &cfg, &Driver::Sample(seed)).unwrap();
        for out in &r.trace {
            let h0 = out.history_offset;
            for &w in &out.attention {
                let w = r.tape.value(w);
                for (a, row) in out.e.iter().enumerate() {
                    assert!(row[a]);
                    for (b, &link) in row.iter().enumerate() {
                        assert_eq!(link, out.e[b][a]);
                        if !link {
                            masked_seen += 1;
                            assert_eq!(w.get(h0 + a, h0 + b), 0.0);
                        }
                    }
                }
            }
        }
    }
    assert!(masked_seen > 0, "no masked pair exercised");
}

#[test]
fn distributions_normalize_and_instruction_tokens_stay_fixed() {
    let cfg = small_cfg();
    for seed in 0..20 {
        let s = scene(seed + 40, 10);
        let task = generate_task(&s, 1, seed).unwrap();
        let ps = init_params(&cfg, seed, 0.01).unwrap();
        let mut tape = Tape::new();
        let mut b = init_tokens(&mut tape, &task, &s, &ps, &cfg).unwrap();
        let i_var = b.i;
        let i_val = tape.value(b.i).clone();
        let mut st = EpisodeState::start(task.start);
        let mut k = 0;
        while !st.done {
            let space = action_space(&st, &s);
            let raw = vision_features(&s, st.current);
            let v = vision_tokens(&mut tape, &ps, &raw).unwrap();
            let out = forward_step(&mut tape, &mut b, v, &space, &ps, &cfg).unwrap();
            for var in [out.action_logp, out.target_logp] {
                let sum: f64 = tape.value(var).data().iter().map(|x| x.exp()).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
            assert_eq!(b.i, i_var);
            assert_eq!(tape.value(b.i), &i_val);
            // walk the first local action for a few steps, then stop
            let a = if k < 4 {
                space.actions[0]
            } else {
                Action::Stop
            };
            if let Action::Move(n) = a {
                let p = s.position(st.current);
                let tok = encode_history(&mut tape, &ps, &raw, s.heading(st.current, n), st.t, p)
                    .unwrap();
                b.push_history(&mut tape, tok, st.current, &s).unwrap();
            }
            st = crate::world::step(&st, a, &s, cfg.horizon).unwrap();
            k += 1;
        }
        assert_eq!(b.e.len(), b.num_history());
    }
}

#[test]
fn teacher_rollout_follows_teacher_path_and_stops() {
    let cfg = small_cfg();
    let s = scene(7, 10);
    let task = generate_task(&s, 0, 9).unwrap();
    let ps = init_params(&cfg, 0, 0.01).unwrap();
    let r = rollout(&task, &s, &ps, &cfg, &Driver::Teacher).unwrap();
    assert_eq!(r.record.final_state.visited, task.teacher_path);
    assert_eq!(r.record.len(), task.hops() + 1);
    assert!(r.record.steps.iter().all(|st| st.chosen == st.teacher));
    let last = r.record.steps.last().unwrap();
    assert_eq!(last.reward, crate::losses::STOP_REWARD);
    let total: f64 = r.record.steps.iter().map(|s| s.reward).sum();
    let dist = s.graph_distance(task.start, task.goal).unwrap();
    assert!((total - dist - crate::losses::STOP_REWARD).abs() < 1e-9);
}

#[test]
fn greedy_and_sampled_rollouts_are_deterministic() {
    let cfg = small_cfg();
    let s = scene(8, 12);
    let task = generate_task(&s, 0, 1).unwrap();
    let ps = init_params(&cfg, 5, 0.01).unwrap();
    for d in [Driver::Greedy, Driver::Sample(3)] {
        let a = rollout(&task, &s, &ps, &cfg, &d).unwrap();
        let b = rollout(&task, &s, &ps, &cfg, &d).unwrap();
        assert_eq!(a.record.final_state, b.record.final_state);
        assert!(a.record.final_state.t <= cfg.horizon);
    }
}

#[test]
fn replay_out_of_range_is_an_error() {
    let cfg = small_cfg();
    let s = scene(9, 8);
    let task = generate_task(&s, 0, 1).unwrap();
    let ps = init_params(&cfg, 5, 0.01).unwrap();
    assert!(matches!(
        rollout(&task, &s, &ps, &cfg, &Driver::Replay(vec![99])),
        Err(PlannerError::BadReplay { step: 0, index: 99 })
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        PlannerConfig {
            heads: 3,
            ..small_cfg()
        },
        PlannerConfig {
            spacing: 0.0,
            ..small_cfg()
        },
        PlannerConfig {
            layers: 0,
            ..small_cfg()
        },
    ] {
        assert!(init_params(&cfg, 0, 0.1).is_err());
    }
}

#[test]
fn full_step_loss_passes_gradient_check() {
    let cfg = PlannerConfig {
        dim: 4,
        hidden: 4,
        max_instruction_len: 8,
        ..PlannerConfig::default()
    };
    let s = scene(10, 4);
    let task = (0..20)
        .map(|k| generate_task(&s, k, 2).unwrap())
        .find(|t| t.instruction.len() <= 8)
        .unwrap();
    let ps = init_params(&cfg, 6, 0.01).unwrap();
    let w = LossWeights::default();
    let sampled = rollout(&task, &s, &ps, &cfg, &Driver::Sample(1)).unwrap();
    let actions: Vec<usize> = sampled.record.steps.iter().map(|s| s.chosen).collect();
    let report = check_gradients(
        &ps,
        |p, seed| -> Result<(Tape, crate::autodiff::Var), Box<dyn std::error::Error>> {
            let driver = if seed == 0 {
                Driver::Teacher
            } else {
                Driver::Replay(actions.clone())
            };
            let mut r = rollout(&task, &s, p, &cfg, &driver)?;
            let l = total_loss(&mut r.tape, &r.record, &task, &s, &cfg, &w)?;
            Ok((r.tape, l))
        },
        2,
        Some(40),
    )
    .unwrap();
    assert!(report.passed(), "failures: {:?}", report.failures());
    assert!(report.params.iter().all(|c| c.checked > 0));
}
