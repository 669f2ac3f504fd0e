use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::planner::init_params;
use crate::world::{
    generate_scene, generate_task, make_world, EpisodeState, Node, SceneConfig, Split, WorldConfig,
};

fn scene_from(positions: &[[f64; 2]], edges: &[(usize, usize)]) -> Scene {
    let nodes = positions
        .iter()
        .enumerate()
        .map(|(id, p)| Node {
            id,
            position: *p,
            landmark: id,
        })
        .collect();
    Scene::new(0, nodes, edges.to_vec(), 3).unwrap()
}

fn task_on(scene: &Scene, start: usize, goal: usize) -> Task {
    Task {
        task_id: 0,
        scene_id: scene.scene_id,
        instruction: vec![1],
        start,
        goal,
        teacher_path: crate::world::shortest_path(scene, start, goal).unwrap(),
    }
}

#[test]
fn stopping_at_goal_on_teacher_path_is_optimal() {
    let s = scene_from(&[[0.0, 0.0], [4.0, 0.0], [8.0, 3.0]], &[(0, 1), (1, 2)]);
    let t = task_on(&s, 0, 2);
    let r = episode_metrics(&t.teacher_path, &t, &s).unwrap();
    assert!(r.success && r.oracle_success);
    assert_eq!(r.spl, 1.0);
    assert_eq!(r.ne, 0.0);
    assert_eq!(r.tl, 9.0);
}

#[test]
fn passing_near_goal_is_oracle_success_only() {
    // Goal at node 1; the agent passes 2 m from it and stops 10 m away.
    let s = scene_from(
        &[[0.0, 0.0], [6.0, 0.0], [6.0, 2.0], [16.0, 0.0]],
        &[(0, 2), (2, 1), (2, 3)],
    );
    let t = task_on(&s, 0, 1);
    let r = episode_metrics(&[0, 2, 3], &t, &s).unwrap();
    assert!(r.oracle_success);
    assert!(!r.success);
    assert_eq!(r.ne, 10.0);
    assert_eq!(r.spl, 0.0);
}

#[test]
fn detour_of_twice_the_shortest_length_halves_spl() {
    let s = scene_from(&[[0.0, 0.0], [10.0, 0.0], [15.0, 0.0]], &[(0, 1), (1, 2)]);
    let t = task_on(&s, 0, 1);
    let r = episode_metrics(&[0, 1, 2, 1], &t, &s).unwrap();
    assert_eq!(r.tl, 20.0);
    assert!(r.success);
    assert_eq!(r.spl, 0.5);
}

#[test]
fn jumps_are_charged_their_graph_distance() {
    let s = scene_from(&[[0.0, 0.0], [3.0, 4.0], [6.0, 0.0]], &[(0, 1), (1, 2)]);
    let t = task_on(&s, 0, 2);
    // 0→1→2 walks 10 m, then a jump back to 0 walks 10 m more.
    let r = episode_metrics(&[0, 1, 2, 0], &t, &s).unwrap();
    assert_eq!(r.tl, 20.0);
}

#[test]
fn empty_path_is_an_error() {
    let s = scene_from(&[[0.0, 0.0], [5.0, 0.0]], &[(0, 1)]);
    let t = task_on(&s, 0, 1);
    assert!(matches!(
        episode_metrics(&[], &t, &s),
        Err(MetricsError::EmptyPath)
    ));
}

#[test]
fn random_episodes_satisfy_metric_invariants() {
    let cfg = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut successes = 0;
    for k in 0..10_000u64 {
        let scene = generate_scene(0, k % 50, &cfg).unwrap();
        let task = generate_task(&scene, k, k).unwrap();
        let mut state = EpisodeState::start(task.start);
        let steps = rng.random_range(0..12);
        for _ in 0..steps {
            let mut options: Vec<usize> = scene.neighbors(state.current).to_vec();
            options.extend(state.history_nodes());
            let next = options[rng.random_range(0..options.len())];
            state.current = next;
            state.visited.push(next);
        }
        let r = episode_metrics(&state.visited, &task, &scene).unwrap();
        assert!(r.spl <= 1.0 && r.spl >= 0.0);
        if r.spl > 0.0 {
            assert!(r.success);
        }
        if r.success {
            assert!(r.oracle_success);
            assert!(r.ne <= SUCCESS_RADIUS);
            successes += 1;
        } else {
            assert_eq!(r.spl, 0.0);
        }
    }
    assert!(successes > 0);
}

fn two_node_world() -> World {
    let wc = WorldConfig {
        train_domains: 2,
        val_seen_domains: 0,
        val_unseen_domains: 2,
        tasks_per_domain: 5,
        scene: SceneConfig {
            min_nodes: 2,
            max_nodes: 2,
            ..SceneConfig::default()
        },
    };
    make_world(3, &wc).unwrap()
}

fn small_planner() -> PlannerConfig {
    PlannerConfig {
        dim: 8,
        hidden: 8,
        max_instruction_len: 16,
        ..PlannerConfig::default()
    }
}

fn scored(world: &World, domain: &Domain, driver: &Driver, pc: &PlannerConfig) -> DomainMetrics {
    let p = init_params(pc, 0, 0.01).unwrap();
    let scene = world.scene(domain.domain_id).unwrap();
    let results: Vec<_> = domain
        .tasks
        .iter()
        .map(|t| {
            let r = rollout(t, scene, &p, pc, driver).unwrap();
            episode_metrics(&r.record.final_state.visited, t, scene).unwrap()
        })
        .collect();
    DomainMetrics::aggregate(&results).unwrap()
}

#[test]
fn perfect_agent_on_two_node_scenes_scores_one() {
    let w = two_node_world();
    let pc = small_planner();
    for d in &w.stream(Split::ValUnseen).unwrap().domains {
        let m = scored(&w, d, &Driver::Teacher, &pc);
        assert_eq!(m.sr, 1.0);
        assert_eq!(m.spl, 1.0);
    }
}

#[test]
fn immediate_stop_far_from_goal_scores_zero() {
    let w = two_node_world();
    let pc = small_planner();
    for d in &w.stream(Split::ValUnseen).unwrap().domains {
        let s = w.scene(d.domain_id).unwrap();
        assert!(s.distance(0, 1) > SUCCESS_RADIUS);
        let m = scored(&w, d, &Driver::Replay(Vec::new()), &pc);
        assert_eq!(m.sr, 0.0);
        assert_eq!(m.tl, 0.0);
    }
}

#[test]
fn random_policy_success_rate_matches_hand_tally() {
    let wc = WorldConfig {
        tasks_per_domain: 50,
        scene: SceneConfig {
            min_nodes: 6,
            max_nodes: 9,
            ..SceneConfig::default()
        },
        ..WorldConfig::default()
    };
    let w = make_world(8, &wc).unwrap();
    let pc = small_planner();
    let p = init_params(&pc, 2, 0.01).unwrap();
    let d = &w.stream(Split::ValUnseen).unwrap().domains[0];
    let scene = w.scene(d.domain_id).unwrap();
    let mut tally = 0;
    let mut results = Vec::new();
    for (k, t) in d.tasks.iter().enumerate() {
        let r = rollout(t, scene, &p, &pc, &Driver::Sample(k as u64)).unwrap();
        let last = *r.record.final_state.visited.last().unwrap();
        let dx = scene.position(last)[0] - scene.position(t.goal)[0];
        let dy = scene.position(last)[1] - scene.position(t.goal)[1];
        if (dx * dx + dy * dy).sqrt() <= 3.0 {
            tally += 1;
        }
        results.push(episode_metrics(&r.record.final_state.visited, t, scene).unwrap());
    }
    let m = DomainMetrics::aggregate(&results).unwrap();
    assert_eq!(m.sr, tally as f64 / 50.0);
    assert_eq!(m.episodes, 50);
}

#[test]
fn greedy_evaluation_is_deterministic_across_modes() {
    let w = two_node_world();
    let wc = WorldConfig {
        tasks_per_domain: 12,
        ..WorldConfig::default()
    };
    let w2 = make_world(5, &wc).unwrap();
    let pc = small_planner();
    let p = init_params(&pc, 9, 0.01).unwrap();
    for world in [&w, &w2] {
        let d = &world.stream(Split::ValUnseen).unwrap().domains[0];
        let a = evaluate_domain(world, &p, &pc, d, Mode::Parallel).unwrap();
        let b = evaluate_domain(world, &p, &pc, d, Mode::Parallel).unwrap();
        let c = evaluate_domain(world, &p, &pc, d, Mode::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}

#[test]
fn empty_domain_is_an_error() {
    let w = two_node_world();
    let pc = small_planner();
    let p = init_params(&pc, 0, 0.01).unwrap();
    let d = Domain {
        domain_id: w.stream(Split::ValUnseen).unwrap().domains[0].domain_id,
        tasks: Vec::new(),
    };
    assert!(matches!(
        evaluate_domain(&w, &p, &pc, &d, Mode::Sequential),
        Err(MetricsError::EmptyDomain(_))
    ));
}

#[test]
fn pooled_metrics_weight_by_episodes() {
    let a = DomainMetrics {
        sr: 1.0,
        osr: 1.0,
        spl: 0.5,
        ne: 0.0,
        tl: 4.0,
        episodes: 1,
    };
    let b = DomainMetrics {
        sr: 0.0,
        osr: 0.5,
        spl: 0.0,
        ne: 6.0,
        tl: 8.0,
        episodes: 3,
    };
    let p = DomainMetrics::pooled(&[a, b]).unwrap();
    assert_eq!(p.sr, 0.25);
    assert_eq!(p.osr, 0.625);
    assert_eq!(p.ne, 4.5);
    assert_eq!(p.tl, 7.0);
    assert_eq!(p.episodes, 4);
    assert!(DomainMetrics::pooled(&[]).is_none());
}

/// Matrix whose row `j` is `rows[j]`, over domains 10, 11, ….
fn matrix(rows: Vec<Vec<f64>>) -> PerfMatrix {
    let n = rows[0].len();
    PerfMatrix::from_rows((10..10 + n as u32).collect(), rows).unwrap()
}

#[test]
fn worked_seen_transfer_example() {
    // T = 3: SR_3(s1)=.5, SR_1(s1)=.6, SR_3(s2)=.45, SR_2(s2)=.5.
    let m = matrix(vec![
        vec![0.3, 0.3, 0.3],
        vec![0.6, 0.2, 0.2],
        vec![0.55, 0.5, 0.25],
        vec![0.5, 0.45, 0.7],
    ]);
    let st = seen_transfer(&m).unwrap();
    assert!((st - (-0.075)).abs() < 1e-12, "{st}");
}

#[test]
fn worked_unseen_transfer_example() {
    // T = 2: SR_1(s2)=.50, SR_0(s2)=.45.
    let m = matrix(vec![vec![0.4, 0.45], vec![0.8, 0.5], vec![0.7, 0.9]]);
    let ut = unseen_transfer(&m).unwrap();
    assert!((ut - 0.05).abs() < 1e-12, "{ut}");
}

#[test]
fn constant_matrix_has_zero_transfer() {
    let m = matrix(vec![vec![0.4; 4]; 5]);
    assert_eq!(seen_transfer(&m).unwrap(), 0.0);
    assert_eq!(unseen_transfer(&m).unwrap(), 0.0);
}

#[test]
fn unchanged_unseen_domains_have_zero_unseen_transfer() {
    // SR_{i-1}(s_i) == SR_0(s_i) while everything else moves.
    let m = matrix(vec![
        vec![0.1, 0.2, 0.3],
        vec![0.9, 0.2, 0.8],
        vec![0.5, 0.6, 0.3],
        vec![0.0, 1.0, 0.4],
    ]);
    assert_eq!(unseen_transfer(&m).unwrap(), 0.0);
}

#[test]
fn transfer_needs_two_stages_and_a_base_row() {
    let one = matrix(vec![vec![0.1, 0.2], vec![0.3, 0.4]]);
    assert!(matches!(
        seen_transfer(&one),
        Err(MetricsError::TooFewStages(1))
    ));
    assert!(matches!(
        unseen_transfer(&one),
        Err(MetricsError::TooFewStages(1))
    ));
    let empty = PerfMatrix::new(vec![1, 2]);
    assert!(matches!(
        unseen_transfer(&empty),
        Err(MetricsError::MissingBaseRow)
    ));
    assert!(matches!(
        seen_transfer(&empty),
        Err(MetricsError::MissingBaseRow)
    ));
}

#[test]
fn missing_cells_are_reported() {
    let mut m = matrix(vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]);
    m.require_complete().unwrap();
    m.sr[1][1] = None;
    m.sr.pop();
    assert_eq!(m.missing_cells(), vec![(1, 11), (2, 10), (2, 11)]);
    assert!(matches!(
        m.require_complete(),
        Err(MetricsError::MissingCells(_))
    ));
    assert!(m.push_row(vec![0.1]).is_err());
}

/// Independent transfer scores: domains keyed 1-based by position, seen and
/// unseen sets built explicitly, sums accumulated per set member.
fn brute_force(m: &PerfMatrix) -> (f64, f64) {
    let t = m.sr.len() - 1;
    let mut sr: HashMap<(usize, usize), f64> = HashMap::new();
    for (j, row) in m.sr.iter().enumerate() {
        for (i, c) in row.iter().enumerate() {
            sr.insert((j, i + 1), c.unwrap());
        }
    }
    let seen: Vec<usize> = (1..t).collect();
    let st_terms: Vec<f64> = seen.iter().map(|&i| sr[&(t, i)] - sr[&(i, i)]).collect();
    let unseen: Vec<usize> = (2..=t).collect();
    let ut_terms: Vec<f64> = unseen
        .iter()
        .map(|&i| sr[&(i - 1, i)] - sr[&(0, i)])
        .collect();
    let denom = (t - 1) as f64;
    (
        st_terms.iter().sum::<f64>() / denom,
        ut_terms.iter().sum::<f64>() / denom,
    )
}

#[test]
fn transfer_matches_brute_force_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let t = rng.random_range(2..=9);
        let rows = (0..=t)
            .map(|_| (0..t).map(|_| rng.random::<f64>()).collect())
            .collect();
        let m = matrix(rows);
        let (st, ut) = brute_force(&m);
        assert!((seen_transfer(&m).unwrap() - st).abs() <= 1e-12);
        assert!((unseen_transfer(&m).unwrap() - ut).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn transfer_is_invariant_to_a_constant_shift(
        t in 2usize..7,
        seed in any::<u64>(),
        shift in -0.5f64..0.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..=t)
            .map(|_| (0..t).map(|_| rng.random::<f64>()).collect())
            .collect();
        let shifted = rows
            .iter()
            .map(|r| r.iter().map(|x| x + shift).collect())
            .collect();
        let (a, b) = (matrix(rows), matrix(shifted));
        prop_assert!((seen_transfer(&a).unwrap() - seen_transfer(&b).unwrap()).abs() < 1e-12);
        prop_assert!((unseen_transfer(&a).unwrap() - unseen_transfer(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perf_matrix_csv_round_trips_bitwise(
        t in 1usize..6,
        seed in any::<u64>(),
        hole in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..=t)
            .map(|_| (0..t).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mut m = matrix(rows);
        if hole {
            m.sr[t][0] = None;
        }
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = PerfMatrix::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn perf_matrix_rejects_unknown_version() {
    let text = "# vlncl perf-matrix v9\nstage,domain_1\n0,0.5\n";
    assert!(matches!(
        PerfMatrix::read_csv(text.as_bytes()),
        Err(MetricsError::Format(_))
    ));
}

#[test]
fn extremes_of_a_single_stage() {
    let e = track_extremes(&[0.4]).unwrap();
    assert_eq!((e.init, e.max, e.min), (0.4, 0.4, 0.4));
}

#[test]
fn extremes_of_a_monotone_history() {
    let e = track_extremes(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!(e.max, 0.4);
    assert_eq!(e.min, 0.2);
    assert_eq!(e.init, 0.1);
}

#[test]
fn extremes_of_a_five_stage_history() {
    // Hand scan of stages 1..4: max 0.7 (stage 2), min 0.35 (stage 3);
    // the higher stage-0 value is only the init.
    let e = track_extremes(&[0.9, 0.5, 0.7, 0.35, 0.6]).unwrap();
    assert_eq!(
        e,
        Extremes {
            init: 0.9,
            max: 0.7,
            min: 0.35
        }
    );
    assert!(matches!(
        track_extremes(&[]),
        Err(MetricsError::EmptyHistory)
    ));
}
