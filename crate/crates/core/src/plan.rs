//! Grid path planning, discretized actions on a kinematic agent, and the
//! spatial navigation primitives.
//!
//! Positions are continuous map coordinates in cell units, so cell `(x, y)`
//! has its center at `(x, y)`. Heading 0 points north (map `-x`) and 90
//! points east (map `+y`).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{Cell, GridSpec};
use crate::query::{LabelSet, ObstacleGrid, SegmentationGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no path from {start:?} to {goal:?}")]
    NoPath { start: Cell, goal: Cell },
    #[error("start cell {0:?} is occupied")]
    StartBlocked(Cell),
    #[error("cell ({x}, {y}) is outside the map")]
    OutOfBounds { x: i64, y: i64 },
    #[error("cannot locate {0:?}")]
    NoTarget(String),
    #[error("unknown primitive {0:?}")]
    UnknownPrimitive(String),
    #[error("path is empty")]
    EmptyPath,
    #[error("action steps must be positive, got {forward} m / {turn} deg")]
    InvalidActionSpec { forward: f64, turn: f64 },
    #[error("bad action {0:?}")]
    BadAction(String),
    #[error("io: {0}")]
    Io(String),
}

/// Wraps any angle in degrees into `(-180, 180]`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    if h > 180.0 { h - 360.0 } else { h }
}

/// Unit map-space direction `(dx, dy)` of a heading.
pub fn heading_direction(deg: f64) -> (f64, f64) {
    let r = deg.to_radians();
    (-r.cos(), r.sin())
}

/// Heading that points from `from` towards `to`.
pub fn bearing(from: (f64, f64), to: (f64, f64)) -> f64 {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    normalize_heading(dy.atan2(-dx).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    heading: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_heading(heading) }
    }

    pub fn at_cell(c: Cell, heading: f64) -> Self {
        Self::new(c.x as f64, c.y as f64, heading)
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn set_heading(&mut self, deg: f64) {
        self.heading = normalize_heading(deg);
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Cell containing the agent, if inside a map of the given size.
    pub fn cell(&self, h: u32, w: u32) -> Result<Cell, PlanError> {
        point_cell((self.x, self.y), h, w)
    }
}

fn point_cell(p: (f64, f64), h: u32, w: u32) -> Result<Cell, PlanError> {
    let (x, y) = ((p.0 + 0.5).floor() as i64, (p.1 + 0.5).floor() as i64);
    if x < 0 || y < 0 || x >= h as i64 || y >= w as i64 {
        return Err(PlanError::OutOfBounds { x, y });
    }
    Ok(Cell::new(x as u32, y as u32))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSpec {
    forward_step: f64,
    turn_step: f64,
}

impl ActionSpec {
    /// Fine-grained profile: 0.05 m / 1 deg.
    pub const VLMAPS: ActionSpec = ActionSpec { forward_step: 0.05, turn_step: 1.0 };
    /// Multimodal benchmark profile: 0.1 m / 5 deg.
    pub const AVLMAPS: ActionSpec = ActionSpec { forward_step: 0.1, turn_step: 5.0 };
    /// Code-generation profile: 0.25 m / 5 deg.
    pub const CODEGEN: ActionSpec = ActionSpec { forward_step: 0.25, turn_step: 5.0 };

    pub fn new(forward_step: f64, turn_step: f64) -> Result<Self, PlanError> {
        if !(forward_step > 0.0 && turn_step > 0.0 && forward_step.is_finite() && turn_step.is_finite()) {
            return Err(PlanError::InvalidActionSpec { forward: forward_step, turn: turn_step });
        }
        Ok(Self { forward_step, turn_step })
    }

    pub fn forward_step(&self) -> f64 {
        self.forward_step
    }

    pub fn turn_step(&self) -> f64 {
        self.turn_step
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "vlmaps" => Some(Self::VLMAPS),
            "avlmaps" => Some(Self::AVLMAPS),
            "codegen" => Some(Self::CODEGEN),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Stop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
            Action::Forward => "forward",
            Action::Stop => "stop",
        })
    }
}

impl FromStr for Action {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "turn_left" => Ok(Action::TurnLeft),
            "turn_right" => Ok(Action::TurnRight),
            "forward" => Ok(Action::Forward),
            "stop" => Ok(Action::Stop),
            other => Err(PlanError::BadAction(other.to_string())),
        }
    }
}

pub fn write_actions(mut w: impl Write, actions: &[Action]) -> Result<(), PlanError> {
    for a in actions {
        writeln!(w, "{a}").map_err(|e| PlanError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_actions(r: impl BufRead) -> Result<Vec<Action>, PlanError> {
    r.lines()
        .map(|l| l.map_err(|e| PlanError::Io(e.to_string())))
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| l?.parse())
        .collect()
}

/// Applies one action to an ideal kinematic agent. `scale` is meters per cell.
pub fn step(state: &mut AgentState, action: Action, spec: &ActionSpec, scale: f64) {
    match action {
        Action::TurnLeft => state.set_heading(state.heading - spec.turn_step),
        Action::TurnRight => state.set_heading(state.heading + spec.turn_step),
        Action::Forward => {
            let (dx, dy) = heading_direction(state.heading);
            let d = spec.forward_step / scale;
            state.x += dx * d;
            state.y += dy * d;
        }
        Action::Stop => {}
    }
}

pub fn simulate(mut state: AgentState, actions: &[Action], spec: &ActionSpec, scale: f64) -> AgentState {
    for &a in actions {
        step(&mut state, a, spec, scale);
    }
    state
}

/// Collects the turns needed to bring the heading within half a turn step
/// of `target`, applying them to `state`.
pub fn turn_towards(state: &mut AgentState, target: f64, spec: &ActionSpec, out: &mut Vec<Action>) {
    let diff = normalize_heading(target - state.heading);
    let n = (diff.abs() / spec.turn_step).round() as usize;
    let a = if diff > 0.0 { Action::TurnRight } else { Action::TurnLeft };
    for _ in 0..n {
        step(state, a, spec, 1.0);
        out.push(a);
    }
}

/// Longest stretch walked before re-aiming at the waypoint.
const REAIM_METERS: f64 = 1.0;

fn walk_to(state: &mut AgentState, target: (f64, f64), spec: &ActionSpec, scale: f64, out: &mut Vec<Action>) {
    let step_cells = spec.forward_step / scale;
    for _ in 0..10_000 {
        let d = ((target.0 - state.x).powi(2) + (target.1 - state.y).powi(2)).sqrt();
        if d <= step_cells / 2.0 {
            return;
        }
        turn_towards(state, bearing(state.position(), target), spec, out);
        let n = ((d / step_cells).round() as usize).clamp(1, ((REAIM_METERS / spec.forward_step).ceil() as usize).max(1));
        for _ in 0..n {
            step(state, Action::Forward, spec, scale);
            out.push(Action::Forward);
        }
    }
}

/// Drops interior cells where the path keeps its direction.
fn corners(path: &[Cell]) -> Vec<Cell> {
    let dir = |a: Cell, b: Cell| (b.x as i64 - a.x as i64, b.y as i64 - a.y as i64);
    let mut out: Vec<Cell> = Vec::new();
    for (i, &c) in path.iter().enumerate() {
        if i == 0 || i + 1 == path.len() || dir(path[i - 1], c) != dir(c, path[i + 1]) {
            out.push(c);
        }
    }
    out
}

/// Turns a cell path into actions. Returns the actions (ending with `Stop`)
/// and the simulated final state.
pub fn path_to_actions(path: &[Cell], state: AgentState, spec: &ActionSpec, scale: f64) -> Result<(Vec<Action>, AgentState), PlanError> {
    if path.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    let mut state = state;
    let mut out = Vec::new();
    for c in corners(path).into_iter().skip(1) {
        walk_to(&mut state, (c.x as f64, c.y as f64), spec, scale, &mut out);
    }
    let last = path[path.len() - 1];
    walk_to(&mut state, (last.x as f64, last.y as f64), spec, scale, &mut out);
    out.push(Action::Stop);
    Ok((out, state))
}

/// A planned route. Its length is `orthogonal + diagonal * sqrt(2)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanPath {
    pub cells: Vec<Cell>,
    pub orthogonal: u32,
    pub diagonal: u32,
}

impl PlanPath {
    pub fn cost(&self) -> f64 {
        self.orthogonal as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    pub fn length_m(&self, scale: f64) -> f64 {
        self.cost() * scale
    }

    pub fn goal(&self) -> Cell {
        *self.cells.last().expect("paths are never empty")
    }
}

const NEIGHBOURS: [(i64, i64); 8] = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Free neighbours of `c` with their move cost. Diagonal moves need both
/// adjacent orthogonal cells free.
pub fn neighbours(grid: &ObstacleGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    let free = move |x: i64, y: i64| grid.contains(x, y) && !grid.is_occupied(Cell::new(x as u32, y as u32));
    NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
        let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
        let diagonal = dx != 0 && dy != 0;
        let ok = free(x, y) && (!diagonal || (free(c.x as i64 + dx, c.y as i64) && free(c.x as i64, c.y as i64 + dy)));
        ok.then(|| (Cell::new(x as u32, y as u32), diagonal))
    })
}

pub fn octile(a: Cell, b: Cell) -> f64 {
    let dx = (a.x as f64 - b.x as f64).abs();
    let dy = (a.y as f64 - b.y as f64).abs();
    dx.max(dy) - dx.min(dy) + std::f64::consts::SQRT_2 * dx.min(dy)
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(self.g.total_cmp(&other.g)).then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Nearest free cell to `goal` within `radius` cells (Euclidean), ties to
/// the lexicographically smallest cell.
pub fn snap_to_free(grid: &ObstacleGrid, goal: Cell, radius: f64) -> Option<Cell> {
    if !grid.is_occupied(goal) {
        return Some(goal);
    }
    let r = radius.floor() as i64;
    let mut best: Option<(i64, Cell)> = None;
    for x in goal.x as i64 - r..=goal.x as i64 + r {
        for y in goal.y as i64 - r..=goal.y as i64 + r {
            if !grid.contains(x, y) {
                continue;
            }
            let d2 = (x - goal.x as i64).pow(2) + (y - goal.y as i64).pow(2);
            let c = Cell::new(x as u32, y as u32);
            if d2 as f64 > radius * radius || grid.is_occupied(c) {
                continue;
            }
            if best.is_none_or(|(bd, bc)| (d2, c) < (bd, bc)) {
                best = Some((d2, c));
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Nearest cell to `goal` within `radius` cells that is reachable from
/// `start`, ties to the lexicographically smallest cell.
fn snap_reachable(grid: &ObstacleGrid, start: Cell, goal: Cell, radius: f64) -> Option<Cell> {
    let w = grid.w() as usize;
    let mut seen = vec![false; grid.h() as usize * w];
    let mut stack = vec![start];
    seen[start.x as usize * w + start.y as usize] = true;
    let mut best: Option<(i64, Cell)> = None;
    while let Some(c) = stack.pop() {
        let d2 = (c.x as i64 - goal.x as i64).pow(2) + (c.y as i64 - goal.y as i64).pow(2);
        if d2 as f64 <= radius * radius && best.is_none_or(|(bd, bc)| (d2, c) < (bd, bc)) {
            best = Some((d2, c));
        }
        for (nb, _) in neighbours(grid, c) {
            let j = nb.x as usize * w + nb.y as usize;
            if !seen[j] {
                seen[j] = true;
                stack.push(nb);
            }
        }
    }
    best.map(|(_, c)| c)
}

/// 8-connected A* with the octile heuristic. An occupied goal is first
/// snapped to the nearest free cell within `snap_radius` cells; when that
/// cell is cut off from `start`, the nearest reachable one is used instead.
pub fn plan_path(grid: &ObstacleGrid, start: Cell, goal: Cell, snap_radius: f64) -> Result<PlanPath, PlanError> {
    for c in [start, goal] {
        if !grid.contains(c.x as i64, c.y as i64) {
            return Err(PlanError::OutOfBounds { x: c.x as i64, y: c.y as i64 });
        }
    }
    if grid.is_occupied(start) {
        return Err(PlanError::StartBlocked(start));
    }
    let target = snap_to_free(grid, goal, snap_radius).ok_or(PlanError::NoPath { start, goal })?;
    match astar(grid, start, target) {
        Some(p) => Ok(p),
        None => snap_reachable(grid, start, goal, snap_radius)
            .and_then(|t| astar(grid, start, t))
            .ok_or(PlanError::NoPath { start, goal }),
    }
}

fn astar(grid: &ObstacleGrid, start: Cell, target: Cell) -> Option<PlanPath> {
    let w = grid.w() as usize;
    let idx = |c: Cell| c.x as usize * w + c.y as usize;
    let n = grid.h() as usize * w;
    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<(usize, bool)>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0.0;
    open.push(Open { f: octile(start, target), g: 0.0, idx: idx(start) });
    while let Some(Open { idx: i, .. }) = open.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        let c = Cell::new((i / w) as u32, (i % w) as u32);
        if c == target {
            let mut cells = vec![c];
            let (mut orthogonal, mut diagonal) = (0, 0);
            let mut cur = i;
            while let Some((p, diag)) = parent[cur] {
                if diag { diagonal += 1 } else { orthogonal += 1 }
                cells.push(Cell::new((p / w) as u32, (p % w) as u32));
                cur = p;
            }
            cells.reverse();
            return Some(PlanPath { cells, orthogonal, diagonal });
        }
        for (nb, diag) in neighbours(grid, c) {
            let j = idx(nb);
            let cost = g[i] + if diag { std::f64::consts::SQRT_2 } else { 1.0 };
            if !closed[j] && cost < g[j] {
                g[j] = cost;
                parent[j] = Some((i, diag));
                open.push(Open { f: cost + octile(nb, target), g: cost, idx: j });
            }
        }
    }
    None
}

/// One connected blob of a label on the top-down map.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub cells: Vec<Cell>,
}

impl Instance {
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        let (sx, sy) = self.cells.iter().fold((0.0, 0.0), |(a, b), c| (a + c.x as f64, b + c.y as f64));
        (sx / n, sy / n)
    }
}

/// 8-connected components of the occupied cells of a mask.
pub fn instances(mask: &ObstacleGrid) -> Vec<Instance> {
    let (h, w) = (mask.h(), mask.w());
    let mut seen = vec![false; h as usize * w as usize];
    let mut out = Vec::new();
    for x in 0..h {
        for y in 0..w {
            let c = Cell::new(x, y);
            let k = x as usize * w as usize + y as usize;
            if seen[k] || !mask.is_occupied(c) {
                continue;
            }
            seen[k] = true;
            let mut queue = VecDeque::from([c]);
            let mut cells = Vec::new();
            while let Some(c) = queue.pop_front() {
                cells.push(c);
                for (dx, dy) in NEIGHBOURS {
                    let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
                    if !mask.contains(nx, ny) {
                        continue;
                    }
                    let n = Cell::new(nx as u32, ny as u32);
                    let nk = nx as usize * w as usize + ny as usize;
                    if !seen[nk] && mask.is_occupied(n) {
                        seen[nk] = true;
                        queue.push_back(n);
                    }
                }
            }
            cells.sort();
            out.push(Instance { cells });
        }
    }
    out
}

/// Locates named objects on the map.
pub trait ObjectLocator {
    fn instances(&self, name: &str) -> Vec<Instance>;
}

/// Object instances per label, usually extracted from a segmented map.
#[derive(Debug, Clone, Default)]
pub struct InstanceIndex {
    by_label: HashMap<String, Vec<Instance>>,
}

impl InstanceIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: &str, instance: Instance) {
        self.by_label.entry(label.to_string()).or_default().push(instance);
    }

    /// Splits each label's top-down footprint into connected instances.
    /// Components smaller than `min_cells` are dropped as noise.
    pub fn from_segmentation(seg: &SegmentationGrid, labels: &LabelSet, min_cells: usize) -> Self {
        let mut index = Self::new();
        for (i, name) in labels.labels().iter().enumerate() {
            for inst in instances(&seg.top_down_mask(&[i])) {
                if inst.cells.len() >= min_cells {
                    index.insert(name, inst);
                }
            }
        }
        index
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.by_label.keys().map(String::as_str)
    }
}

impl ObjectLocator for InstanceIndex {
    fn instances(&self, name: &str) -> Vec<Instance> {
        self.by_label.get(name).cloned().unwrap_or_default()
    }
}

/// Instance with the nearest centroid among those within 90 degrees of the
/// agent's heading. Falls back to the nearest overall when none is in front.
pub fn nearest_front(instances: &[Instance], state: &AgentState) -> Option<Instance> {
    let dist = |i: &Instance| {
        let c = i.centroid();
        ((c.0 - state.x).powi(2) + (c.1 - state.y).powi(2)).sqrt()
    };
    let in_front = |i: &&Instance| {
        let c = i.centroid();
        dist(i) < 1e-9 || normalize_heading(bearing(state.position(), c) - state.heading()).abs() <= 90.0
    };
    let pick = |it: &mut dyn Iterator<Item = &Instance>| it.min_by(|a, b| dist(a).total_cmp(&dist(b))).cloned();
    pick(&mut instances.iter().filter(in_front)).or_else(|| pick(&mut instances.iter()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Left,
    Right,
    North,
    South,
    East,
    West,
}

/// Default distance of spatial goals from the object centroid.
pub const OFFSET_METERS: f64 = 1.0;

/// Goal point `offset` cells from `centroid`. Left and right are taken in the
/// frame of an agent looking at the object; cardinal relations use the map.
pub fn spatial_offset(centroid: (f64, f64), relation: Relation, state: &AgentState, offset: f64) -> (f64, f64) {
    let approach = bearing(state.position(), centroid);
    let heading = match relation {
        Relation::North => 0.0,
        Relation::East => 90.0,
        Relation::South => 180.0,
        Relation::West => -90.0,
        Relation::Left => approach - 90.0,
        Relation::Right => approach + 90.0,
    };
    let (dx, dy) = heading_direction(heading);
    (centroid.0 + dx * offset, centroid.1 + dy * offset)
}

/// A call from the navigation API with resolved arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MoveToPoint((f64, f64)),
    MoveToObject(String),
    MoveToLeft(String),
    MoveToRight(String),
    WithPosOnLeft(String),
    WithPosOnRight(String),
    MoveInBetween(String, String),
    Face(String),
    Turn(f64),
    TurnAbsolute(f64),
    MoveNorth(String),
    MoveSouth(String),
    MoveEast(String),
    MoveWest(String),
    MoveForward(f64),
    GetPos(String),
}

/// Where a primitive wants the agent: a position, a final heading, or both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub position: Option<(f64, f64)>,
    pub heading: Option<f64>,
}

fn locate(locator: &dyn ObjectLocator, name: &str, state: &AgentState) -> Result<(f64, f64), PlanError> {
    nearest_front(&locator.instances(name), state)
        .map(|i| i.centroid())
        .ok_or_else(|| PlanError::NoTarget(name.to_string()))
}

/// Resolves a primitive to a goal against the located objects.
pub fn resolve_primitive(call: &Primitive, locator: &dyn ObjectLocator, state: &AgentState, spec: &GridSpec) -> Result<Goal, PlanError> {
    let offset = OFFSET_METERS / spec.scale;
    let at = |p| Ok(Goal { position: Some(p), heading: None });
    let turn_to = |h: f64| Ok(Goal { position: None, heading: Some(normalize_heading(h)) });
    let near = |name: &str, rel| -> Result<Goal, PlanError> {
        at(spatial_offset(locate(locator, name, state)?, rel, state, offset))
    };
    match call {
        Primitive::MoveToPoint(p) => at(*p),
        Primitive::MoveToObject(n) | Primitive::GetPos(n) => at(locate(locator, n, state)?),
        Primitive::MoveToLeft(n) => near(n, Relation::Left),
        Primitive::MoveToRight(n) => near(n, Relation::Right),
        Primitive::MoveNorth(n) => near(n, Relation::North),
        Primitive::MoveSouth(n) => near(n, Relation::South),
        Primitive::MoveEast(n) => near(n, Relation::East),
        Primitive::MoveWest(n) => near(n, Relation::West),
        Primitive::MoveInBetween(a, b) => {
            let (pa, pb) = (locate(locator, a, state)?, locate(locator, b, state)?);
            at(((pa.0 + pb.0) / 2.0, (pa.1 + pb.1) / 2.0))
        }
        Primitive::Face(n) => turn_to(bearing(state.position(), locate(locator, n, state)?)),
        Primitive::WithPosOnLeft(n) => turn_to(bearing(state.position(), locate(locator, n, state)?) + 90.0),
        Primitive::WithPosOnRight(n) => turn_to(bearing(state.position(), locate(locator, n, state)?) - 90.0),
        Primitive::Turn(a) => turn_to(state.heading() + a),
        Primitive::TurnAbsolute(a) => turn_to(*a),
        Primitive::MoveForward(m) => {
            let (dx, dy) = heading_direction(state.heading());
            let d = m / spec.scale;
            at((state.x + dx * d, state.y + dy * d))
        }
    }
}

/// What happened when the agent tried to reach one goal.
#[derive(Debug, Clone, PartialEq)]
pub struct NavOutcome {
    pub goal: Option<Cell>,
    pub path: Option<PlanPath>,
    pub actions: Vec<Action>,
    pub end: AgentState,
}

/// Kinematic agent moving on an obstacle map.
#[derive(Debug, Clone)]
pub struct Agent {
    pub state: AgentState,
    pub spec: ActionSpec,
    pub scale: f64,
    pub log: Vec<Action>,
    /// Meters actually travelled.
    pub travelled: f64,
}

impl Agent {
    pub fn new(state: AgentState, spec: ActionSpec, scale: f64) -> Self {
        Self { state, spec, scale, log: Vec::new(), travelled: 0.0 }
    }

    fn record(&mut self, actions: &[Action]) {
        self.travelled += actions.iter().filter(|&&a| a == Action::Forward).count() as f64 * self.spec.forward_step;
        self.log.extend_from_slice(actions);
    }

    /// Plans to `target` and executes the resulting actions.
    pub fn go_to(&mut self, grid: &ObstacleGrid, target: (f64, f64)) -> Result<NavOutcome, PlanError> {
        let (h, w) = (grid.h(), grid.w());
        let start = self.state.cell(h, w)?;
        let goal = point_cell(target, h, w)?;
        let path = plan_path(grid, start, goal, OFFSET_METERS / self.scale)?;
        // Head for the exact point when its cell was reachable unsnapped.
        let exact = path.goal() == goal;
        let (mut actions, mut end) = path_to_actions(&path.cells, self.state, &self.spec, self.scale)?;
        if exact && path.cells.len() > 1 {
            actions.pop();
            walk_to(&mut end, target, &self.spec, self.scale, &mut actions);
            actions.push(Action::Stop);
        }
        self.state = end;
        self.record(&actions);
        Ok(NavOutcome { goal: Some(path.goal()), path: Some(path), actions, end })
    }

    pub fn turn_to(&mut self, heading: f64) -> NavOutcome {
        let mut actions = Vec::new();
        turn_towards(&mut self.state, heading, &self.spec, &mut actions);
        actions.push(Action::Stop);
        self.record(&actions);
        NavOutcome { goal: None, path: None, actions, end: self.state }
    }

    /// Resolves and executes one primitive.
    pub fn execute(&mut self, call: &Primitive, locator: &dyn ObjectLocator, grid: &ObstacleGrid, spec: &GridSpec) -> Result<NavOutcome, PlanError> {
        let goal = resolve_primitive(call, locator, &self.state, spec)?;
        let mut outcome = match goal.position {
            Some(p) => self.go_to(grid, p)?,
            None => NavOutcome { goal: None, path: None, actions: Vec::new(), end: self.state },
        };
        if let Some(h) = goal.heading {
            let t = self.turn_to(h);
            outcome.actions.extend(t.actions);
            outcome.end = t.end;
        }
        Ok(outcome)
    }
}
