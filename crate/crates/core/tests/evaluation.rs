use memshare::envs::{read_trace_csv, write_trace_csv, EnvConfig, Task};
use memshare::evaluation::{
    episodes_csv, evaluate, grid_csv, rollout, run_experiment_grid, EvalOptions, GridAxis, MemoryMode, Stat,
};
use memshare::training::{init_learners, Algorithm, Team, TrainConfig};
use memshare::Error;

fn tiny(algorithm: Algorithm) -> TrainConfig {
    TrainConfig {
        algorithm,
        episodes: 2,
        seed: 3,
        batch_size: 16,
        update_every: 10,
        buffer_capacity: 1000,
        memory_size: 4,
        embed: 6,
        context: 3,
        enc_hidden: 8,
        act_hidden: 8,
        actor_hidden: vec![8],
        critic_hidden: vec![16],
        eval_every: 0,
        ..TrainConfig::default()
    }
}

fn env(task: Task) -> EnvConfig {
    EnvConfig {
        horizon: 20,
        ..EnvConfig::new(task)
    }
}

fn team(algorithm: Algorithm, env: &EnvConfig) -> Team {
    init_learners(&tiny(algorithm), env).unwrap().team()
}

fn opts(episodes: usize) -> EvalOptions {
    EvalOptions {
        episodes,
        seed: 17,
        ..EvalOptions::default()
    }
}

#[test]
fn single_episode_has_zero_spread() {
    let e = env(Task::Cn);
    let ev = evaluate(&team(Algorithm::MdMaddpg, &e), &e, &opts(1)).unwrap();
    assert_eq!(ev.report.episodes, 1);
    assert_eq!(ev.report.reward.std, 0.0);
    assert_eq!(episodes_csv(&ev.episodes, 2).lines().count(), 2);
}

#[test]
fn collisions_recount_from_emitted_traces() {
    let e = EnvConfig {
        n_agents: 6,
        agent_radius: 0.15,
        ..env(Task::Cn)
    };
    let t = team(Algorithm::Maddpg, &e);
    let mut seen = 0.0;
    for k in 0..5 {
        let ep = rollout(&t, &e, 4, k, MemoryMode::Clean, true).unwrap();
        let back = read_trace_csv(&write_trace_csv(&ep.steps)).unwrap();
        let mut recount = 0;
        for s in &back {
            for i in 0..s.positions.len() {
                for j in i + 1..s.positions.len() {
                    let (a, b) = (s.positions[i], s.positions[j]);
                    if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() < 2.0 * e.agent_radius {
                        recount += 1;
                    }
                }
            }
        }
        assert_eq!(ep.metrics.collisions, recount as f64);
        seen += ep.metrics.collisions;
    }
    assert!(seen > 0.0, "scenario should produce collisions");
}

#[test]
fn evaluation_is_deterministic_and_independent_of_workers() {
    let e = env(Task::SyncCn);
    let t = team(Algorithm::MdMaddpg, &e);
    let a = evaluate(&t, &e, &opts(12)).unwrap();
    let b = evaluate(&t, &e, &opts(12)).unwrap();
    let c = evaluate(&t, &e, &EvalOptions { jobs: 4, ..opts(12) }).unwrap();
    assert_eq!(a, b);
    assert_eq!(episodes_csv(&a.episodes, 2), episodes_csv(&c.episodes, 2));
    assert_eq!(a.report, c.report);
}

#[test]
fn zero_noise_corruption_is_clean_evaluation() {
    let e = env(Task::SyncCn);
    let t = team(Algorithm::MdMaddpg, &e);
    let clean = evaluate(&t, &e, &opts(8)).unwrap();
    let zero = evaluate(&t, &e, &EvalOptions { memory: MemoryMode::Corrupted { std: 0.0 }, ..opts(8) }).unwrap();
    assert_eq!(episodes_csv(&clean.episodes, 2), episodes_csv(&zero.episodes, 2));
    let noisy = evaluate(&t, &e, &EvalOptions { memory: MemoryMode::Corrupted { std: 1.0 }, ..opts(8) }).unwrap();
    assert_ne!(episodes_csv(&clean.episodes, 2), episodes_csv(&noisy.episodes, 2));
}

#[test]
fn corrupting_a_memoryless_team_is_a_config_error() {
    let e = env(Task::Cn);
    let t = team(Algorithm::Maddpg, &e);
    let err = evaluate(&t, &e, &EvalOptions { memory: MemoryMode::Corrupted { std: 1.0 }, ..opts(2) }).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn huge_corruption_resembles_random_memory() {
    let e = env(Task::Cn);
    let t = team(Algorithm::MdMaddpg, &e);
    let n = 200;
    let a = evaluate(&t, &e, &EvalOptions { memory: MemoryMode::Corrupted { std: 100.0 }, ..opts(n) }).unwrap();
    let b = evaluate(&t, &e, &EvalOptions { memory: MemoryMode::Randomized { std: 100.0 }, ..opts(n) }).unwrap();
    let half = |s: Stat| 1.96 * s.std / (n as f64).sqrt();
    let (ra, rb) = (a.report.reward, b.report.reward);
    assert!((ra.mean - rb.mean).abs() <= half(ra).max(half(rb)), "{ra:?} vs {rb:?}");
}

#[test]
fn report_recomputes_from_episode_csv() {
    let e = env(Task::Cn);
    let ev = evaluate(&team(Algorithm::MaMaddpg, &e), &e, &opts(9)).unwrap();
    let csv = episodes_csv(&ev.episodes, 2);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "reward").unwrap();
    let rewards: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    let s = Stat::of(&rewards);
    assert!((s.mean - ev.report.reward.mean).abs() < 1e-12);
    assert!((s.std - ev.report.reward.std).abs() < 1e-12);
}

#[test]
fn grid_emits_one_row_per_point_and_keeps_failures() {
    let e = env(Task::Cn);
    let axis = GridAxis::parse("memory-size=32,64,128,200,256").unwrap();
    let mut base = tiny(Algorithm::MdMaddpg);
    base.episodes = 0;
    let cells = run_experiment_grid(&axis, &base, &e, &opts(2), 2);
    assert_eq!(cells.len(), 5);
    assert_eq!(grid_csv(&cells).lines().count(), 6);

    // too many agents for the arena: the cell fails, the grid goes on
    let crowded = EnvConfig {
        agent_radius: 0.3,
        landmark_radius: 0.3,
        ..e.clone()
    };
    let cells = run_experiment_grid(&GridAxis::NAgents(vec![2, 6]), &base, &crowded, &opts(1), 1);
    assert!(cells[0].outcome.is_ok());
    assert!(cells[1].outcome.is_err());
    assert!(grid_csv(&cells).lines().nth(2).unwrap().contains(",failed,"));
}

#[test]
fn single_point_grid_equals_direct_run() {
    let e = env(Task::Cn);
    let base = tiny(Algorithm::Maddpg);
    let cells = run_experiment_grid(&GridAxis::Seed(vec![3]), &base, &e, &opts(3), 1);
    let direct = memshare::evaluation::train_and_evaluate(&base, &e, &opts(3)).unwrap();
    assert_eq!(cells[0].outcome.as_ref().unwrap(), &direct);
}
