//! Benchmark suites over generated scenes: spatial-goal navigation,
//! ambiguous-goal disambiguation and cross-embodiment planning.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{eval_sr_spl, recall_from_distances, EpisodeResult, RecallReport, SrSpl, RECALL_THRESHOLDS, SUCCESS_RADIUS_M};
use super::pipeline::{build_audio_database, build_feature_map, MapProducts, MAP_LAYERS, MAP_SCALE};
use super::render::{coverage_trajectory, synth_stream, Dataset, StreamParams};
use super::scene::{generate_scene, Aabb, Duplicate, SceneConfig, SceneObject, SizeProfile, SyntheticScene, CORRIDOR, OBJECT_CLASSES};
use super::SimError;
use crate::geometry::{Cell, GridSpec};
use crate::instruct::{execute_program, generate_plan, parse_program, ExecTrace, SceneWorld, World, MULTIMODAL_PROMPT, SPATIAL_PROMPT};
use crate::plan::{plan_path, resolve_primitive, ActionSpec, Agent, AgentState, ObjectLocator, PlanError, Primitive, OFFSET_METERS};
use crate::providers::{MockProvider, Provider, SOUND_CLASSES};

/// Embedding width used by the benchmark mock.
pub const BENCH_DIM: usize = 64;

/// A scene rendered, mapped and paired with its ground truth.
pub struct MappedScene {
    pub scene: SyntheticScene,
    pub dataset: Dataset,
    pub spec: GridSpec,
    pub products: MapProducts,
}

impl MappedScene {
    pub fn build(scene: SyntheticScene, provider: &dyn Provider) -> Result<Self, SimError> {
        let params = StreamParams::default();
        let dataset = synth_stream(&scene, &coverage_trajectory(&scene, &params), &params)?;
        let spec = scene.grid_spec(MAP_SCALE, MAP_LAYERS)?;
        let grid = build_feature_map(&dataset, provider, spec)?;
        let products = MapProducts::standard(&grid, provider)?;
        Ok(Self { scene, dataset, spec, products })
    }

    /// World with perfect obstacles and instances.
    pub fn ground_truth_world(&self) -> SceneWorld {
        let mut w = SceneWorld::new(self.spec, self.scene.obstacle_grid(&self.spec, |_| true));
        w.instances = self.scene.instance_index(&self.spec);
        w
    }
}

fn mock(seed: u64, sigma: f64) -> MockProvider {
    MockProvider::new(BENCH_DIM, seed).with_noise(sigma)
}

/// Converts a continuous map position to world ground coordinates.
fn to_ground(spec: &GridSpec, p: (f64, f64)) -> (f64, f64) {
    spec.cell_center(p.0, p.1)
}

fn world_to_state(spec: &GridSpec, x: f64, z: f64, heading: f64) -> AgentState {
    AgentState::new(spec.h as f64 / 2.0 + x / spec.scale, spec.w as f64 / 2.0 - z / spec.scale, heading)
}

/// One clause of a spatial-goal instruction, following the prompt patterns.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialClause {
    Side { object: String, left: bool },
    Between(String, String),
    Cardinal { object: String, direction: &'static str },
    BackAndForth { a: String, b: String, times: u32 },
}

impl SpatialClause {
    pub fn text(&self) -> String {
        match self {
            SpatialClause::Side { object, left } => format!("move to the {} side of the {object}", if *left { "left" } else { "right" }),
            SpatialClause::Between(a, b) => format!("move in between the {a} and the {b}"),
            SpatialClause::Cardinal { object, direction } => format!("move to the {direction} of the {object}"),
            SpatialClause::BackAndForth { a, b, times } => {
                let n = match times {
                    1 => "once".to_string(),
                    2 => "twice".to_string(),
                    n => format!("{n} times"),
                };
                format!("move back and forth between the {a} and the {b} {n}")
            }
        }
    }

    /// Ground-truth positions the clause visits, in order; the last one is
    /// where it must end.
    pub fn waypoints(&self, locator: &dyn ObjectLocator, state: &AgentState, spec: &GridSpec) -> Result<Vec<(f64, f64)>, PlanError> {
        let at = |p: Primitive| -> Result<(f64, f64), PlanError> {
            resolve_primitive(&p, locator, state, spec)?.position.ok_or(PlanError::EmptyPath)
        };
        Ok(match self {
            SpatialClause::Side { object, left: true } => vec![at(Primitive::MoveToLeft(object.clone()))?],
            SpatialClause::Side { object, left: false } => vec![at(Primitive::MoveToRight(object.clone()))?],
            SpatialClause::Between(a, b) => vec![at(Primitive::MoveInBetween(a.clone(), b.clone()))?],
            SpatialClause::Cardinal { object, direction } => {
                let o = object.clone();
                vec![at(match *direction {
                    "north" => Primitive::MoveNorth(o),
                    "south" => Primitive::MoveSouth(o),
                    "east" => Primitive::MoveEast(o),
                    _ => Primitive::MoveWest(o),
                })?]
            }
            SpatialClause::BackAndForth { a, b, times } => {
                let (pa, pb) = (at(Primitive::GetPos(a.clone()))?, at(Primitive::GetPos(b.clone()))?);
                (0..*times).flat_map(|_| [pa, pb]).collect()
            }
        })
    }
}

fn random_clause(rng: &mut ChaCha8Rng, classes: &[String]) -> SpatialClause {
    let pick = |rng: &mut ChaCha8Rng| classes.choose(rng).expect("scene has objects").clone();
    let pair = |rng: &mut ChaCha8Rng| {
        let two: Vec<&String> = classes.choose_multiple(rng, 2).collect();
        (two[0].clone(), two[1].clone())
    };
    match rng.random_range(0..4) {
        0 => SpatialClause::Side { object: pick(rng), left: rng.random_bool(0.5) },
        1 => {
            let (a, b) = pair(rng);
            SpatialClause::Between(a, b)
        }
        2 => SpatialClause::Cardinal { object: pick(rng), direction: ["north", "south", "east", "west"][rng.random_range(0..4)] },
        _ => {
            let (a, b) = pair(rng);
            SpatialClause::BackAndForth { a, b, times: rng.random_range(1..=2) }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEpisode {
    pub start: AgentState,
    pub clauses: Vec<SpatialClause>,
}

impl SpatialEpisode {
    pub fn instruction(&self) -> String {
        self.clauses.iter().map(SpatialClause::text).collect::<Vec<_>>().join(", then ")
    }
}

/// Shortest feasible length, meters, through `waypoints` on `world`.
fn shortest_length(world: &dyn World, start: &AgentState, waypoints: &[(f64, f64)]) -> f64 {
    let spec = world.spec();
    let grid = world.obstacles();
    let euclid = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1) * spec.scale;
    let mut total = 0.0;
    let mut from = start.position();
    for &w in waypoints {
        let (h, ww) = (grid.h(), grid.w());
        let planned = AgentState::new(from.0, from.1, 0.0)
            .cell(h, ww)
            .and_then(|a| Ok((a, AgentState::new(w.0, w.1, 0.0).cell(h, ww)?)))
            .and_then(|(a, b)| plan_path(grid, a, b, OFFSET_METERS / spec.scale))
            .ok();
        total += planned.map_or_else(|| euclid(from, w), |p| p.length_m(spec.scale));
        from = w;
    }
    total
}

/// Runs one clause through generation and the interpreter.
fn run_clause(text: &str, world: &dyn World, agent: &mut Agent, provider: &dyn Provider, context: &str) -> Option<ExecTrace> {
    let (code, _) = generate_plan(text, context, Some(provider)).ok()?;
    let program = parse_program(&code).ok()?;
    Some(execute_program(&program, world, agent))
}

/// Executes an episode clause by clause. Success means every call in the
/// clause completed and the agent ended within the success radius of the
/// ground-truth goal computed from where the clause began.
pub fn run_episode(episode: &SpatialEpisode, world: &dyn World, truth: &dyn World, provider: &dyn Provider, actions: ActionSpec) -> EpisodeResult {
    let spec = *world.spec();
    let mut agent = Agent::new(episode.start, actions, spec.scale);
    let mut result = EpisodeResult { success: Vec::new(), path_lengths: Vec::new(), shortest: Vec::new() };
    for clause in &episode.clauses {
        let start = agent.state;
        let before = agent.travelled;
        let trace = run_clause(&clause.text(), world, &mut agent, provider, SPATIAL_PROMPT);
        let waypoints = clause.waypoints(truth.locator(), &start, &spec).unwrap_or_default();
        let reached = waypoints.last().is_some_and(|g| (agent.state.x - g.0).hypot(agent.state.y - g.1) * spec.scale <= SUCCESS_RADIUS_M);
        let completed = trace.is_some_and(|t| !t.subgoals.is_empty() && t.subgoals.iter().all(|s| s.completed()) && t.errors.is_empty());
        result.success.push(reached && completed);
        result.path_lengths.push(agent.travelled - before);
        result.shortest.push(shortest_length(truth, &start, &waypoints));
    }
    result
}

const EPISODE_TRIES: usize = 200;

/// Random episodes that a perfect-map agent completes.
pub fn sample_episodes(mapped: &MappedScene, seed: u64, count: usize, clauses: usize) -> Vec<SpatialEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_E915);
    let truth = mapped.ground_truth_world();
    let oracle = MockProvider::new(BENCH_DIM, seed);
    let classes: Vec<String> = mapped.scene.vocabulary().into_iter().skip(1).collect();
    let mut out = Vec::new();
    for _ in 0..EPISODE_TRIES {
        if out.len() == count || classes.len() < 2 {
            break;
        }
        let Some((x, z)) = mapped.scene.random_free_point(&mut rng, 0.5) else { continue };
        let heading = [0.0, 90.0, 180.0, -90.0][rng.random_range(0..4)];
        let episode = SpatialEpisode {
            start: world_to_state(&mapped.spec, x, z, heading),
            clauses: (0..clauses).map(|_| random_clause(&mut rng, &classes)).collect(),
        };
        let r = run_episode(&episode, &truth, &truth, &oracle, ActionSpec::VLMAPS);
        if r.success.iter().all(|&s| s) {
            out.push(episode);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConfig {
    pub seeds: Vec<u64>,
    pub sigma: f64,
    pub episodes_per_scene: usize,
    pub clauses: usize,
    pub profile: SizeProfile,
}

impl SpatialConfig {
    pub fn new(seeds: Vec<u64>, sigma: f64) -> Self {
        Self { seeds, sigma, episodes_per_scene: 3, clauses: 4, profile: SizeProfile::Medium }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialRow {
    pub seed: u64,
    pub sigma: f64,
    pub episodes: usize,
    pub subgoals: usize,
    pub sr: f64,
    pub spl: f64,
    pub sr_1: f64,
    pub sr_2: f64,
    pub sr_3: f64,
    pub sr_4: f64,
}

impl SpatialRow {
    fn new(seed: u64, sigma: f64, episodes: usize, m: &SrSpl) -> Self {
        let k = |i: usize| m.in_a_row.get(i).copied().unwrap_or(0.0);
        Self { seed, sigma, episodes, subgoals: m.subgoals, sr: m.sr, spl: m.spl, sr_1: k(0), sr_2: k(1), sr_3: k(2), sr_4: k(3) }
    }
}

#[derive(Debug, Clone)]
pub struct SpatialReport {
    pub results: Vec<EpisodeResult>,
    pub overall: SrSpl,
    /// Per-scene rows followed by nothing; the overall row uses seed
    /// `u64::MAX`.
    pub rows: Vec<SpatialRow>,
}

/// Spatial-goal navigation suite. Episodes are drawn against a
/// noise-free map so that every noise level runs the same episodes.
pub fn run_spatial(config: &SpatialConfig) -> Result<SpatialReport, SimError> {
    let per_scene = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let scene = generate_scene(seed, &SceneConfig::new(config.profile))?;
            let clean = MappedScene::build(scene.clone(), &mock(seed, 0.0))?;
            let episodes = sample_episodes(&clean, seed, config.episodes_per_scene, config.clauses);
            let provider = mock(seed, config.sigma);
            let mapped = if config.sigma == 0.0 { clean } else { MappedScene::build(scene, &provider)? };
            let world = mapped.products.world()?;
            let truth = mapped.ground_truth_world();
            let results: Vec<EpisodeResult> =
                episodes.iter().map(|e| run_episode(e, &world, &truth, &provider, ActionSpec::VLMAPS)).collect();
            Ok((seed, results))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let mut rows: Vec<SpatialRow> =
        per_scene.iter().map(|(seed, r)| SpatialRow::new(*seed, config.sigma, r.len(), &eval_sr_spl(r))).collect();
    let results: Vec<EpisodeResult> = per_scene.into_iter().flat_map(|(_, r)| r).collect();
    let overall = eval_sr_spl(&results);
    rows.push(SpatialRow::new(u64::MAX, config.sigma, results.len(), &overall));
    Ok(SpatialReport { results, overall, rows })
}

/// Duplicate-object scene: two instances at least 2 m apart, a sound cue
/// beside the target and two distractor sounds.
pub fn ambiguous_scene(seed: u64) -> Result<SyntheticScene, SimError> {
    let cue = SOUND_CLASSES[seed as usize % SOUND_CLASSES.len()].to_string();
    let config = SceneConfig {
        profile: SizeProfile::Medium,
        duplicate: Some(Duplicate { count: 2, min_separation: 2.0, cue: Some(cue) }),
        sounds: 2,
    };
    generate_scene(seed, &config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallRow {
    pub method: String,
    pub recall_0_5: f64,
    pub recall_1_0: f64,
    pub recall_1_5: f64,
    pub recall_2_0: f64,
    pub avg_min_distance: f64,
    pub queries: usize,
}

impl RecallRow {
    fn new(method: &str, r: &RecallReport) -> Self {
        Self {
            method: method.into(),
            recall_0_5: r.recall[0],
            recall_1_0: r.recall[1],
            recall_1_5: r.recall[2],
            recall_2_0: r.recall[3],
            avg_min_distance: r.avg_min_distance,
            queries: r.queries,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisambiguationReport {
    pub primary: RecallReport,
    pub fused: RecallReport,
    pub rows: Vec<RecallRow>,
}

/// Distance from the last recorded goal to the target footprint.
fn goal_distance(trace: &ExecTrace, spec: &GridSpec, target: &Aabb) -> Option<f64> {
    let g = trace.subgoals.last()?.goal?;
    let (x, z) = to_ground(spec, g);
    Some(target.ground_distance(x, z))
}

/// Ambiguous-goal suite: the primary object heatmap alone against the
/// object map fused with an auxiliary sound map.
pub fn run_disambiguation(seeds: &[u64], sigma: f64) -> Result<DisambiguationReport, SimError> {
    let per_scene = seeds
        .par_iter()
        .map(|&seed| {
            let scene = ambiguous_scene(seed)?;
            let provider = Arc::new(mock(seed, sigma));
            let mapped = MappedScene::build(scene, provider.as_ref())?;
            let db = build_audio_database(&mapped.dataset, provider.as_ref())?.ok_or_else(|| SimError::Scene("scene has no audio".into()))?;
            let world = mapped.products.world()?.with_audio(db, provider.clone());
            let target_index = mapped.scene.target.expect("ambiguous scenes have a target");
            let target = mapped.scene.objects[target_index].clone();
            let cue = mapped.scene.sounds[0].class.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, z) = mapped.scene.random_free_point(&mut rng, 0.5).ok_or_else(|| SimError::Scene("no free start".into()))?;
            let start = world_to_state(&mapped.spec, x, z, 0.0);
            let run = |code: &str| -> Option<f64> {
                let mut agent = Agent::new(start, ActionSpec::AVLMAPS, mapped.spec.scale);
                let program = parse_program(code).ok()?;
                goal_distance(&execute_program(&program, &world, &mut agent), &mapped.spec, &target.bounds)
            };
            let primary = run(&format!("pos = robot.get_max_pos_3d(robot.get_major_map(obj='{}'))\nrobot.move_to(pos)\n", target.class));
            let instruction = format!("move to the {} near the sound of {cue}", target.class);
            let fused = generate_plan(&instruction, MULTIMODAL_PROMPT, Some(provider.as_ref())).ok().and_then(|(code, _)| run(&code));
            Ok((primary, fused))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let (p, f): (Vec<Option<f64>>, Vec<Option<f64>>) = per_scene.into_iter().unzip();
    let primary = recall_from_distances(&p, &RECALL_THRESHOLDS);
    let fused = recall_from_distances(&f, &RECALL_THRESHOLDS);
    let rows = vec![RecallRow::new("primary_only", &primary), RecallRow::new("fused", &fused)];
    Ok(DisambiguationReport { primary, fused, rows })
}

/// Room with a table across the straight line between two free points,
/// and other boxes kept clear of that line.
pub fn blocked_route_scene(seed: u64) -> Result<(SyntheticScene, (f64, f64), (f64, f64)), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = SizeProfile::Medium.extent();
    let lane = rng.random_range(-1.5..1.5);
    let table = Aabb::on_floor(rng.random_range(-0.5..0.5), lane + rng.random_range(-0.2..0.2), rng.random_range(0.3..0.6), rng.random_range(0.6..1.0), rng.random_range(0.6..0.9));
    let mut objects = vec![SceneObject { class: "table".into(), bounds: table }];
    let (start, goal) = ((-3.0, lane), (3.0, lane));
    let classes: Vec<&str> = OBJECT_CLASSES.iter().copied().filter(|c| *c != "table").collect();
    for class in classes.into_iter().take(5) {
        let found = (0..500).find_map(|_| {
            let (hx, hz) = (rng.random_range(0.25..0.5), rng.random_range(0.25..0.5));
            let lim = extent / 2.0 - 0.6;
            let b = Aabb::on_floor(rng.random_range(-lim + hx..lim - hx), rng.random_range(-lim + hz..lim - hz), hx, hz, rng.random_range(0.4..1.1));
            let clear_of_lane = b.min[2] > lane + 1.5 || b.max[2] < lane - 1.5;
            (clear_of_lane && objects.iter().all(|o| o.bounds.ground_gap(&b) >= CORRIDOR)).then_some(b)
        });
        if let Some(bounds) = found {
            objects.push(SceneObject { class: class.into(), bounds });
        }
    }
    Ok((SyntheticScene::with_objects(seed, extent, objects)?, start, goal))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbodimentRow {
    pub seed: u64,
    pub cost_with_table: f64,
    pub cost_without_table: f64,
    pub improved: bool,
}

/// Path cost with and without "table" in the obstacle map of a mapped
/// blocked-route scene. `None` costs mean no path.
pub fn run_embodiment(seeds: &[u64]) -> Result<Vec<EmbodimentRow>, SimError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let (scene, start, goal) = blocked_route_scene(seed)?;
            let provider = mock(seed, 0.0);
            let mapped = MappedScene::build(scene, &provider)?;
            let spec = mapped.spec;
            let cell = |p: (f64, f64)| -> Result<Cell, SimError> { Ok(world_to_state(&spec, p.0, p.1, 0.0).cell(spec.h, spec.w)?) };
            let (a, b) = (cell(start)?, cell(goal)?);
            let cost = |exclude: &[&str]| -> Result<f64, SimError> {
                let grid = mapped.products.obstacles(exclude)?;
                Ok(plan_path(&grid, a, b, 0.0).map_or(f64::INFINITY, |p| p.cost()))
            };
            let (with, without) = (cost(&[])?, cost(&["table"])?);
            Ok(EmbodimentRow { seed, cost_with_table: with, cost_without_table: without, improved: without < with })
        })
        .collect()
}
