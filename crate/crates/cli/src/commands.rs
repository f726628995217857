use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use swarm_sar::allocserver::mission::{run_client, run_mission, ClientModel, MissionConfig, MissionReport};
use swarm_sar::allocserver::net::{default_port, serve as serve_tcp, ServeOptions, TcpLink};
use swarm_sar::allocserver::{MissionMode, NodeGraph, Server, ServerConfig};
use swarm_sar::altitude::{generate_scenario, read_scenario, run_scenario, write_fused, write_scenario, AltitudeConfig, ScenarioConfig};
use swarm_sar::simenv::{run_episode, Dynamics};
use swarm_sar::taskalloc::train::{
    bench_allocation, random_graphs, reference_graph, train_allocator, write_alloc_log, write_bench, AllocTrainConfig,
    BenchRow, SavedAllocator,
};
use swarm_sar::taskalloc::{greedy_baseline, optimal_oracle, rollout, AllocOutcome, GraphFixture};
use swarm_sar::td3::train::{
    load_candidates, select_models as rank_candidates, train_guidance as run_training, write_train_log, Candidate,
    LoopCourse, SavedCheckpoint, SelectionConfig, TrainConfig, TrainLogRow,
};
use swarm_sar::simenv::Policy;

use crate::{load, manifest, Common, Task};

fn out_dir(common: &Common, command: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| Path::new("runs").join(command));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tuples<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TrainGuidanceArgs {
    /// World: `arena`, `desk` or a JSON file.
    #[arg(long, default_value = "desk")]
    world: String,
    /// Environment steps.
    #[arg(long, default_value_t = 50_000)]
    steps: u64,
    /// Replay batch size.
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 2_500)]
    checkpoint_every: u64,
    /// Goals (over the evaluation episodes) a checkpoint needs to pass.
    #[arg(long, default_value_t = 15)]
    threshold: usize,
    /// Keep training after the first passing checkpoint.
    #[arg(long)]
    keep_going: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct EvalRow {
    id: String,
    step: u64,
    goals: usize,
    mean_reward: f64,
}

pub fn train_guidance(a: TrainGuidanceArgs) -> Result<()> {
    let world = load::world(&a.world)?;
    let dir = out_dir(&a.common, "train-guidance")?;
    let mut cfg = TrainConfig::desk(a.common.seed);
    cfg.total_steps = a.steps;
    cfg.td3.batch_size = a.batch;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.goal_threshold = a.threshold;
    cfg.stop_when_passing = !a.keep_going;
    let mut progress = |c: &SavedCheckpoint, _: &TrainLogRow| {
        println!("{:>8} goals {:>3} mean reward {:>9.2}", c.step, c.evaluation.goals, c.evaluation.mean_reward);
    };
    let report = run_training(&world, &cfg, Some(&dir), Some(&mut progress))?;
    write_train_log(fs::File::create(dir.join("train_log.csv"))?, &report.log)?;
    let evals: Vec<EvalRow> = report
        .checkpoints
        .iter()
        .map(|c| EvalRow { id: c.id.clone(), step: c.step, goals: c.evaluation.goals, mean_reward: c.evaluation.mean_reward })
        .collect();
    write_csv(&dir.join("evaluations.csv"), &evals)?;
    match report.best(a.threshold) {
        Some(b) => {
            if let Some(p) = &b.path {
                fs::copy(p, dir.join("best.json"))?;
            }
            println!("best {} with {} goals after {} steps", b.id, b.evaluation.goals, report.steps)
        }
        None => println!("no checkpoint reached {} goals in {} steps", a.threshold, report.steps),
    }
    manifest::write(&dir, "train-guidance", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct SelectModelsArgs {
    /// Directory of guidance checkpoints.
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long, default_value = "desk")]
    world: String,
    #[arg(long, default_value_t = 15)]
    threshold: usize,
    #[arg(long, default_value_t = 4)]
    episodes: usize,
    #[arg(long, default_value_t = 5)]
    legs: usize,
    /// Also rank the APF controller.
    #[arg(long)]
    apf: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct SelectionRow {
    id: String,
    step: u64,
    goals: usize,
    mean_reward: f64,
    passed: bool,
    rank: Option<usize>,
}

pub fn select_models(a: SelectModelsArgs) -> Result<()> {
    let world = load::world(&a.world)?;
    if !a.checkpoints.is_dir() {
        return Err(load::Fatal::MissingCheckpoint(a.checkpoints.clone()).into());
    }
    let mut candidates: Vec<Candidate<Box<dyn Policy>>> = load_candidates(&a.checkpoints)?
        .into_iter()
        .map(|c| Candidate { id: c.id, step: c.step, policy: Box::new(c.policy) as Box<dyn Policy> })
        .collect();
    if candidates.is_empty() && !a.apf {
        return Err(load::Fatal::MissingCheckpoint(a.checkpoints.join("guidance-*.json")).into());
    }
    if a.apf {
        candidates.push(Candidate { id: "apf".into(), step: 0, policy: load::guidance("apf")? });
    }
    let dir = out_dir(&a.common, "select-models")?;
    let course = LoopCourse::from_world(&world, a.legs)?;
    let cfg = SelectionConfig {
        env: TrainConfig::desk(a.common.seed).env,
        episodes: a.episodes,
        goal_threshold: a.threshold,
        seed: a.common.seed,
    };
    let (ranked, all) = rank_candidates(candidates, &world, &course, &cfg)?;
    let rows: Vec<SelectionRow> = all
        .iter()
        .map(|e| SelectionRow {
            id: e.id.clone(),
            step: e.step,
            goals: e.goals,
            mean_reward: e.mean_reward,
            passed: e.goals >= a.threshold,
            rank: ranked.iter().position(|r| r.id == e.id).map(|r| r + 1),
        })
        .collect();
    write_csv(&dir.join("selection.csv"), &rows)?;
    println!("{} of {} candidates reached {} goals", ranked.len(), all.len(), a.threshold);
    if let Some(best) = ranked.first() {
        println!("best {} with {} goals, mean reward {:.2}", best.id, best.goals, best.mean_reward);
    }
    manifest::write(&dir, "select-models", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EvalGuidanceArgs {
    /// `apf` or a guidance checkpoint.
    #[arg(long, default_value = "apf")]
    policy: String,
    #[arg(long, default_value = "desk")]
    world: String,
    #[arg(long, default_value_t = 4)]
    episodes: usize,
    #[arg(long, default_value_t = 5)]
    legs: usize,
    /// Fly with deployment dynamics (velocity lag, ledge guard) instead of
    /// the training ones.
    #[arg(long)]
    deployed: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    goals: usize,
    outcome: &'static str,
    total_reward: f64,
    steps: usize,
}

pub fn eval_guidance(a: EvalGuidanceArgs) -> Result<()> {
    let world = load::world(&a.world)?;
    let mut policy = load::guidance(&a.policy)?;
    let dir = out_dir(&a.common, "eval-guidance")?;
    let mut env = TrainConfig::desk(a.common.seed).env;
    if a.deployed {
        env.dynamics = Dynamics::deployed();
    }
    let course = LoopCourse::from_world(&world, a.legs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let mut rows = Vec::new();
    for k in 0..a.episodes {
        let (start, goals) = course.random_episode(&mut rng);
        let log = run_episode(&mut policy, &world, start, &goals, &env)?;
        log.write_csv(fs::File::create(dir.join(format!("episode-{k}.csv")))?)?;
        rows.push(EpisodeRow {
            episode: k,
            goals: log.goals_reached,
            outcome: log.outcome.as_str(),
            total_reward: log.total_reward,
            steps: log.rows.len(),
        });
    }
    write_csv(&dir.join("summary.csv"), &rows)?;
    let goals: usize = rows.iter().map(|r| r.goals).sum();
    println!("{goals} goals over {} episodes ({} legs each)", a.episodes, a.legs);
    manifest::write(&dir, "eval-guidance", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TrainAllocArgs {
    #[arg(long, default_value_t = 20_000)]
    episodes: usize,
    #[arg(long, default_value_t = 500)]
    warmup: usize,
    #[arg(long, default_value_t = 1_000)]
    eval_every: usize,
    /// Training graph sizes.
    #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[command(flatten)]
    common: Common,
}

pub fn train_alloc(a: TrainAllocArgs) -> Result<()> {
    let dir = out_dir(&a.common, "train-alloc")?;
    let mut cfg = AllocTrainConfig::new(a.common.seed);
    cfg.episodes = a.episodes;
    cfg.warmup_episodes = a.warmup;
    cfg.eval_every = a.eval_every;
    cfg.sizes = a.sizes.clone();
    cfg.td3.batch_size = a.batch;
    let mut progress = |s: &SavedAllocator| {
        let e = &s.evaluation;
        println!(
            "{:>7} reference moves {:>2} failures {:>2} distance {:>8.2} (oracle {:.2})",
            e.episode, e.reference_moves, e.failures, e.distance, e.oracle
        );
    };
    let report = train_allocator(&cfg, Some(&dir), Some(&mut progress))?;
    write_alloc_log(&report.log, &dir.join("train_log.csv"))?;
    let evals: Vec<_> = report.checkpoints.iter().map(|c| c.evaluation.clone()).collect();
    write_csv(&dir.join("evaluations.csv"), &evals)?;
    match report.best_model() {
        Ok(b) => {
            if let Some(p) = &b.path {
                fs::copy(p, dir.join("best.json"))?;
            }
            println!("best allocator from episode {}", b.evaluation.episode)
        }
        Err(e) => println!("{e}"),
    }
    manifest::write(&dir, "train-alloc", &a)?;
    Ok(())
}

fn fixture(graph: &str, world: &str, uavs: usize) -> Result<GraphFixture> {
    Ok(match graph {
        "reference" => reference_graph(),
        "arena" => {
            let w = load::world(world)?;
            let cfg = MissionConfig::new(&w, MissionMode::Mapping, uavs)?;
            GraphFixture::from_world(&w, cfg.starts)?
        }
        path => {
            let s = fs::read_to_string(path).with_context(|| format!("reading graph {path}"))?;
            let g: GraphFixture = serde_json::from_str(&s).with_context(|| format!("parsing graph {path}"))?;
            g.validate()?;
            g
        }
    })
}

#[derive(Args, Debug, Serialize)]
pub struct EvalAllocArgs {
    /// `arena`, `reference` or a graph fixture JSON file.
    #[arg(long, default_value = "arena")]
    graph: String,
    /// World used by `--graph arena`.
    #[arg(long, default_value = "arena")]
    world: String,
    /// `greedy`, `random` or an allocator checkpoint.
    #[arg(long, default_value = "greedy")]
    policy: String,
    #[arg(long, default_value_t = 2)]
    uavs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct ChoiceRow {
    turn: usize,
    uav: usize,
    node: usize,
}

pub fn eval_alloc(a: EvalAllocArgs) -> Result<()> {
    let g = fixture(&a.graph, &a.world, a.uavs)?;
    if a.policy == "plan" {
        bail!("eval-alloc compares against the oracle directly; choose greedy, random or a checkpoint");
    }
    let mut policy = load::allocator(&a.policy, Some(&g), a.common.seed)?;
    let dir = out_dir(&a.common, "eval-alloc")?;
    let oracle = optimal_oracle(&g)?.cost;
    let greedy = greedy_baseline(&g)?;
    let r = rollout(&g, policy.as_mut())?;
    let complete = r.outcome == AllocOutcome::Complete;
    let distance = if complete { r.distance } else { f64::NAN };
    let ratio = if oracle > 0.0 { distance / oracle } else { 1.0 };
    write_csv(&dir.join("eval.csv"), &[BenchRow { graph_id: 0, oracle, greedy, policy: distance, ratio }])?;
    let choices: Vec<ChoiceRow> =
        r.choices.iter().enumerate().map(|(turn, &(uav, node))| ChoiceRow { turn, uav, node }).collect();
    write_csv(&dir.join("choices.csv"), &choices)?;
    if complete {
        println!("total distance {distance:.3} m in {} moves", r.moves);
    } else {
        println!("policy did not finish within {} moves", r.moves);
    }
    println!("oracle {oracle:.3} m, greedy {greedy:.3} m, ratio vs oracle {ratio:.3}");
    manifest::write(&dir, "eval-alloc", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct BenchAllocArgs {
    /// `greedy`, `random` or an allocator checkpoint.
    #[arg(long, default_value = "greedy")]
    policy: String,
    #[arg(long, default_value_t = 50)]
    graphs: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
    sizes: Vec<usize>,
    /// Seed of the graph set (defaults to --seed).
    #[arg(long)]
    graph_seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

pub fn bench_alloc(a: BenchAllocArgs) -> Result<()> {
    let graphs = random_graphs(a.graphs, &a.sizes, a.graph_seed.unwrap_or(a.common.seed))?;
    let mut policy = load::allocator(&a.policy, None, a.common.seed)?;
    let dir = out_dir(&a.common, "bench-alloc")?;
    let rows = bench_allocation(&graphs, policy.as_mut())?;
    write_bench(&rows, &dir.join("bench.csv"))?;
    let within = rows.iter().filter(|r| r.ratio <= 1.25).count();
    let beats = rows.iter().filter(|r| r.policy < r.greedy).count();
    let timeouts = rows.iter().filter(|r| r.policy.is_nan()).count();
    println!("within 1.25x oracle: {within}/{}", rows.len());
    println!("shorter than greedy: {beats}/{}", rows.len());
    println!("unfinished: {timeouts}/{}", rows.len());
    manifest::write(&dir, "bench-alloc", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct FuseAltitudeArgs {
    /// Recorded scenario CSV; synthetic scenarios are generated otherwise.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Number of synthetic scenarios (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 5)]
    count: u64,
    #[arg(long, default_value_t = 0.3)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct AltitudeRow {
    scenario: String,
    samples: usize,
    raw_rmse: f64,
    corrected_rmse: f64,
    level_changes: usize,
    touchdowns: usize,
    worst_touchdown_error: f64,
}

pub fn fuse_altitude(a: FuseAltitudeArgs) -> Result<()> {
    let dir = out_dir(&a.common, "fuse-altitude")?;
    let cfg = AltitudeConfig { threshold: a.threshold, window: a.window, ..AltitudeConfig::default() };
    let mut inputs = Vec::new();
    match &a.scenario {
        Some(p) => inputs.push(("recorded".to_string(), read_scenario(p)?)),
        None => {
            for k in 0..a.count {
                let seed = a.common.seed + k;
                let rows = generate_scenario(&ScenarioConfig::default(), seed)?;
                write_scenario(&rows, &dir.join(format!("scenario-{seed}.csv")))?;
                inputs.push((format!("{seed}"), rows));
            }
        }
    }
    let mut report = Vec::new();
    for (name, rows) in &inputs {
        let (r, fused) = run_scenario(rows, cfg)?;
        write_fused(&fused, &dir.join(format!("fused-{name}.csv")))?;
        println!(
            "scenario {name}: raw RMSE {:.3} m, corrected RMSE {:.3} m, {} level changes",
            r.raw_rmse, r.corrected_rmse, r.level_changes
        );
        report.push(AltitudeRow {
            scenario: name.clone(),
            samples: r.samples,
            raw_rmse: r.raw_rmse,
            corrected_rmse: r.corrected_rmse,
            level_changes: r.level_changes,
            touchdowns: r.touchdown_errors.len(),
            worst_touchdown_error: r.touchdown_errors.iter().copied().fold(0.0, f64::max),
        });
    }
    write_csv(&dir.join("report.csv"), &report)?;
    manifest::write(&dir, "fuse-altitude", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct ServeArgs {
    /// Listening port (default: $SWARM_SAR_PORT or 7700).
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "arena")]
    world: String,
    #[arg(long, value_enum, default_value_t = Task::Mapping)]
    task: Task,
    #[arg(long, default_value_t = 2)]
    uavs: usize,
    /// `greedy`, `random`, `plan` or an allocator checkpoint.
    #[arg(long, default_value = "greedy")]
    allocator: String,
    /// Seconds to wait for the second READY.
    #[arg(long, default_value_t = 60.0)]
    ready_timeout: f64,
    /// Exit once every UAV has landed or aborted.
    #[arg(long)]
    exit_when_done: bool,
    /// Give up after this many seconds.
    #[arg(long)]
    max_seconds: Option<u64>,
    #[command(flatten)]
    common: Common,
}

fn mode(t: Task) -> MissionMode {
    match t {
        Task::Mapping => MissionMode::Mapping,
        Task::Delivery => MissionMode::Delivery,
    }
}

#[derive(Serialize)]
struct AssignmentRow {
    tick: u64,
    uav: usize,
    target: usize,
    path: String,
    unvisited: bool,
}

fn assignment_rows(list: &[swarm_sar::allocserver::Assignment]) -> Vec<AssignmentRow> {
    list.iter()
        .map(|x| AssignmentRow {
            tick: x.tick,
            uav: x.uav_id,
            target: x.target,
            path: x.path.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "),
            unvisited: x.unvisited,
        })
        .collect()
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let world = load::world(&a.world)?;
    let mission = MissionConfig::new(&world, mode(a.task), a.uavs)?;
    let fixture = GraphFixture::from_world(&world, mission.starts.clone())?;
    let allocator = load::allocator(&a.allocator, Some(&fixture), a.common.seed)?;
    let cfg = ServerConfig { ready_timeout: a.ready_timeout, ..mission.server_config() };
    let server = Server::new(NodeGraph::from_world(&world)?, cfg, allocator)?;
    let port = a.port.unwrap_or_else(default_port);
    let listener = TcpListener::bind((a.host.as_str(), port)).with_context(|| format!("binding {}:{port}", a.host))?;
    println!("listening on {}", listener.local_addr()?);
    let opts = ServeOptions { exit_when_finished: a.exit_when_done, max_duration: a.max_seconds.map(Duration::from_secs) };
    let summary = serve_tcp(listener, server, opts)?;
    println!(
        "served {} ticks, {} assignments, land ticks {:?}",
        summary.ticks,
        summary.assignments.len(),
        summary.land_ticks
    );
    if let Some(out) = &a.common.out {
        fs::create_dir_all(out)?;
        // Tick numbers depend on when messages arrive in wall-clock time, so
        // they go to their own file and assignments.csv stays reproducible.
        let rows = assignment_rows(&summary.assignments);
        let order: Vec<_> = rows.iter().map(|r| (r.uav, r.target, r.path.clone(), r.unvisited)).collect();
        let ticks: Vec<_> = rows.iter().map(|r| (r.tick, r.uav, r.target)).collect();
        write_tuples(&out.join("assignments.csv"), &["uav", "target", "path", "unvisited"], &order)?;
        write_tuples(&out.join("ticks.csv"), &["tick", "uav", "target"], &ticks)?;
        manifest::write(out, "serve", &a)?;
    }
    if !summary.finished {
        bail!("mission did not finish");
    }
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct MissionArgs {
    #[arg(long, value_enum, default_value_t = Task::Mapping)]
    task: Task,
    #[arg(long, default_value_t = 2)]
    uavs: usize,
    #[arg(long, default_value = "arena")]
    world: String,
    /// `greedy`, `random`, `plan` or an allocator checkpoint.
    #[arg(long, default_value = "greedy")]
    allocator: String,
    /// `apf` or a guidance checkpoint.
    #[arg(long, default_value = "apf")]
    guidance: String,
    /// Fly straight lines at this speed instead of simulating guidance.
    #[arg(long)]
    kinematic: Option<f64>,
    /// Range-sensor noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Take-off delay of each UAV in seconds (default 0, and 10 s for the
    /// second UAV of a delivery).
    #[arg(long, value_delimiter = ',')]
    delays: Option<Vec<f64>>,
    /// Fly one UAV against a running server instead of simulating both.
    #[arg(long)]
    client: bool,
    /// UAV flown in client mode.
    #[arg(long, default_value_t = 0)]
    uav_id: usize,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Server port in client mode (default: $SWARM_SAR_PORT or 7700).
    #[arg(long)]
    port: Option<u16>,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct MissionSummary {
    uav: usize,
    flown: f64,
    landed_at: Option<f64>,
    land_tick: Option<u64>,
}

fn write_mission(dir: &Path, r: &MissionReport) -> Result<()> {
    r.write_log(fs::File::create(dir.join("mission_log.csv"))?)?;
    for u in 0..r.paths.len() {
        r.write_path(u, fs::File::create(dir.join(format!("path_uav{u}.csv")))?)?;
    }
    write_csv(&dir.join("assignments.csv"), &assignment_rows(&r.assignments))?;
    let rows: Vec<MissionSummary> = (0..r.paths.len())
        .map(|u| MissionSummary {
            uav: u,
            flown: r.flown[u],
            landed_at: r.log.iter().filter(|e| e.uav == u && e.event == "landed").map(|e| e.t).last(),
            land_tick: r.land_ticks[u],
        })
        .collect();
    write_csv(&dir.join("summary.csv"), &rows)?;
    Ok(())
}

pub fn mission(a: MissionArgs) -> Result<()> {
    let world = load::world(&a.world)?;
    let mut cfg = MissionConfig::new(&world, mode(a.task), a.uavs)?;
    cfg.env.noise_sigma = a.noise_sigma;
    cfg.env.seed = a.common.seed;
    if let Some(v) = a.kinematic {
        cfg.client = ClientModel::Kinematic { speed: v };
    }
    if let Some(d) = &a.delays {
        cfg.takeoff_delays = d.clone();
    }
    cfg.validate(&world)?;
    let dir = out_dir(&a.common, "mission")?;
    if a.client {
        let port = a.port.unwrap_or_else(default_port);
        let mut link = TcpLink::connect((a.host.as_str(), port), Duration::from_secs(10))?;
        link.set_read_timeout(Some(Duration::from_secs(180)))?;
        let policy = load::mission_guidance(&a.guidance, 1)?.pop().expect("one policy");
        let r = run_client(&world, &cfg, a.uav_id, policy, &mut link)?;
        write_csv(&dir.join(format!("log_uav{}.csv", a.uav_id)), &r.log)?;
        write_csv(&dir.join(format!("path_uav{}.csv", a.uav_id)), &r.path)?;
        println!("uav {} {} after {:.1} m", a.uav_id, if r.landed { "landed" } else { "did not land" }, r.flown);
        manifest::write(&dir, "mission", &a)?;
        if !r.landed {
            bail!("uav {} did not land", a.uav_id);
        }
        return Ok(());
    }
    let fixture = GraphFixture::from_world(&world, cfg.starts.clone())?;
    let allocator = load::allocator(&a.allocator, Some(&fixture), a.common.seed)?;
    let policies = load::mission_guidance(&a.guidance, a.uavs)?;
    let r = run_mission(&world, &cfg, allocator, policies)?;
    write_mission(&dir, &r)?;
    let visited = r.visited.iter().filter(|&&v| v).count();
    match r.completion_time {
        Some(t) => println!("mission complete in {t:.1} s, {visited}/{} nodes visited", r.visited.len()),
        None => println!("mission incomplete: failed UAVs {:?}, {visited}/{} nodes visited", r.failed, r.visited.len()),
    }
    manifest::write(&dir, "mission", &a)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    /// Trajectory or path CSV with t, x, y and z columns.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct PlotRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    speed: f64,
}

pub fn replay(a: ReplayArgs) -> Result<()> {
    let mut r = csv::Reader::from_path(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).with_context(|| format!("{} has no {name} column", a.input.display()))
    };
    let idx = [col("t")?, col("x")?, col("y")?, col("z")?];
    let mut rows: Vec<PlotRow> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = idx.iter().map(|&i| rec[i].parse::<f64>()).collect::<Result<_, _>>()?;
        let speed = match rows.last() {
            Some(p) if v[0] > p.t => {
                let d = ((v[1] - p.x).powi(2) + (v[2] - p.y).powi(2) + (v[3] - p.z).powi(2)).sqrt();
                d / (v[0] - p.t)
            }
            _ => 0.0,
        };
        rows.push(PlotRow { t: v[0], x: v[1], y: v[2], z: v[3], speed });
    }
    let dir = out_dir(&a.common, "replay")?;
    write_csv(&dir.join("plot.csv"), &rows)?;
    println!("{} samples", rows.len());
    manifest::write(&dir, "replay", &a)?;
    Ok(())
}
