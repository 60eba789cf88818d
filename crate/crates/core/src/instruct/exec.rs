//! Interpreter for plan programs against a mapped world and a kinematic
//! agent.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::ast::{BinOp, Call, Expr, Program, Stmt};
use super::parser::canonical_name;
use crate::audio::audio_query_heatmap;
use crate::geometry::{GridSpec, Voxel};
use crate::heatmap::{fuse, object_heatmap, Heatmap, AUXILIARY_DECAY, PRIMARY_DECAY};
use crate::plan::{resolve_primitive, Agent, AgentState, InstanceIndex, ObjectLocator, PlanError, Primitive};
use crate::posedb::PoseFeatureDb;
use crate::providers::Provider;
use crate::query::{LabelSet, ObstacleGrid, SegmentationGrid};
use crate::visloc::{localize_image, QueryImage, RansacParams, ReferenceFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("cannot locate {0}")]
    NoTarget(String),
    #[error("unbound name {0:?}")]
    Unbound(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("bad arguments to {0}")]
    BadArgs(String),
    #[error("{0}")]
    World(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Everything a program can query or move through.
pub trait World {
    fn spec(&self) -> &GridSpec;
    fn obstacles(&self) -> &ObstacleGrid;
    fn locator(&self) -> &dyn ObjectLocator;
    fn object_heatmap(&self, name: &str, eps: f64) -> Result<Heatmap, ExecError>;
    fn sound_heatmap(&self, name: &str, eps: f64) -> Result<Heatmap, ExecError>;
    fn image_heatmap(&self, image: &QueryImage, eps: f64) -> Result<Heatmap, ExecError>;
    fn load_image(&self, path: &str) -> Result<QueryImage, ExecError>;
}

/// A [`World`] assembled from map products: object voxels, instances, an
/// obstacle grid, and optional audio and visual databases.
pub struct SceneWorld {
    pub spec: GridSpec,
    pub obstacles: ObstacleGrid,
    pub instances: InstanceIndex,
    pub object_voxels: HashMap<String, Vec<Voxel>>,
    pub audio: Option<(PoseFeatureDb, Arc<dyn Provider>)>,
    pub references: Vec<ReferenceFrame>,
    pub ransac: RansacParams,
    pub seed: u64,
    pub image_root: PathBuf,
    pub images: HashMap<String, QueryImage>,
}

impl SceneWorld {
    pub fn new(spec: GridSpec, obstacles: ObstacleGrid) -> Self {
        Self {
            spec,
            obstacles,
            instances: InstanceIndex::new(),
            object_voxels: HashMap::new(),
            audio: None,
            references: Vec::new(),
            ransac: RansacParams::default(),
            seed: 0,
            image_root: PathBuf::from("."),
            images: HashMap::new(),
        }
    }

    /// Object voxels and instances from a segmented map.
    pub fn with_segmentation(mut self, seg: &SegmentationGrid, labels: &LabelSet, min_cells: usize) -> Self {
        for (i, name) in labels.labels().iter().enumerate() {
            let v = seg.voxels_of(i);
            if !v.is_empty() {
                self.object_voxels.insert(name.clone(), v);
            }
        }
        self.instances = InstanceIndex::from_segmentation(seg, labels, min_cells);
        self
    }

    pub fn with_audio(mut self, db: PoseFeatureDb, provider: Arc<dyn Provider>) -> Self {
        self.audio = Some((db, provider));
        self
    }

    pub fn with_references(mut self, refs: Vec<ReferenceFrame>, seed: u64) -> Self {
        self.references = refs;
        self.seed = seed;
        self
    }
}

impl World for SceneWorld {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn obstacles(&self) -> &ObstacleGrid {
        &self.obstacles
    }

    fn locator(&self) -> &dyn ObjectLocator {
        &self.instances
    }

    fn object_heatmap(&self, name: &str, eps: f64) -> Result<Heatmap, ExecError> {
        let v = self.object_voxels.get(name).filter(|v| !v.is_empty()).ok_or_else(|| ExecError::NoTarget(format!("object {name:?}")))?;
        object_heatmap(v, eps, &self.spec).map_err(|e| ExecError::World(e.to_string()))
    }

    fn sound_heatmap(&self, name: &str, eps: f64) -> Result<Heatmap, ExecError> {
        let (db, provider) = self.audio.as_ref().ok_or_else(|| ExecError::NoTarget(format!("sound {name:?} (no audio database)")))?;
        audio_query_heatmap(db, name, provider.as_ref(), eps, &self.spec).map_err(|e| ExecError::World(e.to_string()))
    }

    fn image_heatmap(&self, image: &QueryImage, eps: f64) -> Result<Heatmap, ExecError> {
        if self.references.is_empty() {
            return Err(ExecError::NoTarget("image (no reference database)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let loc = localize_image(image, &self.references, &self.ransac, &mut rng, eps, &self.spec)
            .map_err(|e| ExecError::World(e.to_string()))?;
        Ok(loc.heatmap)
    }

    fn load_image(&self, path: &str) -> Result<QueryImage, ExecError> {
        if let Some(img) = self.images.get(path) {
            return Ok(img.clone());
        }
        QueryImage::load(self.image_root.join(path)).map_err(|e| ExecError::World(format!("load_image({path:?}): {e}")))
    }
}

#[derive(Debug, Clone)]
pub enum Value {
    Num(f64),
    Str(String),
    /// Continuous map coordinates `(px, py, pz)` in cells.
    Pos([f64; 3]),
    Map(Heatmap),
    Image(QueryImage),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Str(_) => "string",
            Value::Pos(_) => "position",
            Value::Map(_) => "heatmap",
            Value::Image(_) => "image",
        }
    }
}

/// One navigation call and how it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgoalRecord {
    pub call: String,
    pub goal: Option<(f64, f64)>,
    pub heading: Option<f64>,
    pub start: AgentState,
    pub end: AgentState,
    pub actions: usize,
    pub error: Option<String>,
}

impl SubgoalRecord {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecTrace {
    pub subgoals: Vec<SubgoalRecord>,
    /// Non-navigation failures, such as a lookup that found nothing.
    pub errors: Vec<String>,
}

impl fmt::Display for ExecTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.subgoals.iter().enumerate() {
            write!(f, "subgoal {} {}", i + 1, s.call)?;
            if let Some((x, y)) = s.goal {
                write!(f, " goal={x:.2},{y:.2}")?;
            }
            if let Some(h) = s.heading {
                write!(f, " heading={h:.1}")?;
            }
            write!(f, " end={:.2},{:.2},{:.1} actions={}", s.end.x, s.end.y, s.end.heading(), s.actions)?;
            match &s.error {
                None => writeln!(f, " status=ok")?,
                Some(e) => writeln!(f, " status=failed reason={e:?}")?,
            }
        }
        for e in &self.errors {
            writeln!(f, "error {e:?}")?;
        }
        Ok(())
    }
}

const NAVIGATION: &[&str] = &[
    "move_to",
    "move_to_object",
    "move_to_left",
    "move_to_right",
    "with_pos_on_left",
    "with_pos_on_right",
    "move_in_between",
    "face",
    "turn",
    "turn_absolute",
    "move_north",
    "move_south",
    "move_east",
    "move_west",
    "move_forward",
];

struct Interp<'a> {
    world: &'a dyn World,
    agent: &'a mut Agent,
    env: HashMap<String, Result<Value, ExecError>>,
    trace: ExecTrace,
}

fn arity(call: &Call, n: usize) -> Result<(), ExecError> {
    if call.args.len() + call.kwargs.len() != n {
        return Err(ExecError::BadArgs(format!("{}: expected {n} argument(s)", call.name)));
    }
    Ok(())
}

impl Interp<'_> {
    fn eval(&mut self, e: &Expr) -> Result<Value, ExecError> {
        match e {
            Expr::Num(x) => Ok(Value::Num(*x)),
            Expr::Str(s) => Ok(Value::Str(s.clone())),
            Expr::Name(n) => self.env.get(n).cloned().unwrap_or_else(|| Err(ExecError::Unbound(n.clone()))),
            Expr::Neg(x) => match self.eval(x)? {
                Value::Num(v) => Ok(Value::Num(-v)),
                Value::Pos(p) => Ok(Value::Pos(p.map(|c| -c))),
                v => Err(ExecError::Type(format!("cannot negate a {}", v.type_name()))),
            },
            Expr::Binary { op, lhs, rhs } => {
                let (a, b) = (self.eval(lhs)?, self.eval(rhs)?);
                binary(*op, a, b)
            }
            Expr::Call(c) => self.call_value(c),
        }
    }

    fn arg(&mut self, call: &Call, i: usize) -> Result<Value, ExecError> {
        let e = call.args.get(i).ok_or_else(|| ExecError::BadArgs(call.name.clone()))?;
        self.eval(e)
    }

    fn str_arg(&mut self, call: &Call, i: usize) -> Result<String, ExecError> {
        match self.arg(call, i)? {
            Value::Str(s) => Ok(s),
            v => Err(ExecError::Type(format!("{} expects a name, got a {}", call.name, v.type_name()))),
        }
    }

    fn num_arg(&mut self, call: &Call, i: usize) -> Result<f64, ExecError> {
        match self.arg(call, i)? {
            Value::Num(x) => Ok(x),
            v => Err(ExecError::Type(format!("{} expects a number, got a {}", call.name, v.type_name()))),
        }
    }

    fn heatmap(&mut self, call: &Call, eps: f64) -> Result<Value, ExecError> {
        arity(call, 1)?;
        let (key, value) = match (call.kwargs.first(), call.args.first()) {
            (Some((k, v)), _) => (k.as_str(), self.eval(v)?),
            (None, Some(v)) => {
                let v = self.eval(v)?;
                (if matches!(v, Value::Image(_)) { "img" } else { "obj" }, v)
            }
            _ => return Err(ExecError::BadArgs(call.name.clone())),
        };
        let map = match (key, value) {
            ("obj", Value::Str(s)) => self.world.object_heatmap(&s, eps)?,
            ("sound", Value::Str(s)) => self.world.sound_heatmap(&s, eps)?,
            ("img", Value::Image(img)) => self.world.image_heatmap(&img, eps)?,
            ("img", Value::Str(path)) => {
                let img = self.world.load_image(&path)?;
                self.world.image_heatmap(&img, eps)?
            }
            (k, v) => return Err(ExecError::Type(format!("{}({k}=...) got a {}", call.name, v.type_name()))),
        };
        Ok(Value::Map(map))
    }

    fn call_value(&mut self, call: &Call) -> Result<Value, ExecError> {
        match canonical_name(&call.name) {
            "load_image" => {
                arity(call, 1)?;
                let p = self.str_arg(call, 0)?;
                Ok(Value::Image(self.world.load_image(&p)?))
            }
            "get_major_map" => self.heatmap(call, PRIMARY_DECAY),
            "get_map" => self.heatmap(call, AUXILIARY_DECAY),
            "get_max_pose_3d" => {
                arity(call, 1)?;
                match self.arg(call, 0)? {
                    Value::Map(h) => {
                        let peak = h.argmax().ok_or_else(|| ExecError::NoTarget("maximum of an all-zero heatmap".into()))?;
                        Ok(Value::Pos([peak.voxel.x as f64, peak.voxel.y as f64, peak.voxel.z as f64]))
                    }
                    v => Err(ExecError::Type(format!("get_max_pose_3d expects a heatmap, got a {}", v.type_name()))),
                }
            }
            "get_pos" => {
                arity(call, 1)?;
                let name = self.str_arg(call, 0)?;
                let goal = resolve_primitive(&Primitive::GetPos(name), self.world.locator(), &self.agent.state, self.world.spec())?;
                let (x, y) = goal.position.expect("get_pos always yields a position");
                Ok(Value::Pos([x, y, 0.0]))
            }
            other => Err(ExecError::Type(format!("{other} does not return a value"))),
        }
    }

    fn primitive(&mut self, call: &Call) -> Result<Primitive, ExecError> {
        let name = canonical_name(&call.name);
        let one = if name == "move_in_between" { 2 } else { 1 };
        arity(call, one)?;
        Ok(match name {
            "move_to" => match self.arg(call, 0)? {
                Value::Pos([x, y, _]) => Primitive::MoveToPoint((x, y)),
                Value::Str(s) => Primitive::MoveToObject(s),
                v => return Err(ExecError::Type(format!("move_to expects a position, got a {}", v.type_name()))),
            },
            "move_to_object" => Primitive::MoveToObject(self.str_arg(call, 0)?),
            "move_to_left" => Primitive::MoveToLeft(self.str_arg(call, 0)?),
            "move_to_right" => Primitive::MoveToRight(self.str_arg(call, 0)?),
            "with_pos_on_left" => Primitive::WithPosOnLeft(self.str_arg(call, 0)?),
            "with_pos_on_right" => Primitive::WithPosOnRight(self.str_arg(call, 0)?),
            "move_in_between" => Primitive::MoveInBetween(self.str_arg(call, 0)?, self.str_arg(call, 1)?),
            "face" => Primitive::Face(self.str_arg(call, 0)?),
            "turn" => Primitive::Turn(self.num_arg(call, 0)?),
            "turn_absolute" => Primitive::TurnAbsolute(self.num_arg(call, 0)?),
            "move_north" => Primitive::MoveNorth(self.str_arg(call, 0)?),
            "move_south" => Primitive::MoveSouth(self.str_arg(call, 0)?),
            "move_east" => Primitive::MoveEast(self.str_arg(call, 0)?),
            "move_west" => Primitive::MoveWest(self.str_arg(call, 0)?),
            "move_forward" => Primitive::MoveForward(self.num_arg(call, 0)?),
            other => return Err(ExecError::Type(format!("{other} is not a navigation call"))),
        })
    }

    fn navigate(&mut self, call: &Call) {
        let mut record = SubgoalRecord { call: call.to_string(), goal: None, heading: None, start: self.agent.state, end: self.agent.state, actions: 0, error: None };
        let resolved = self.primitive(call).and_then(|p| {
            let goal = resolve_primitive(&p, self.world.locator(), &self.agent.state, self.world.spec())?;
            Ok((p, goal))
        });
        match resolved {
            Ok((p, goal)) => {
                record.goal = goal.position;
                record.heading = goal.heading;
                match self.agent.execute(&p, self.world.locator(), self.world.obstacles(), self.world.spec()) {
                    Ok(out) => {
                        record.end = out.end;
                        record.actions = out.actions.len();
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        self.trace.subgoals.push(record);
    }

    fn run(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            match s {
                Stmt::Assign { target, value } => {
                    let v = self.eval(value);
                    if let Err(e) = &v {
                        self.trace.errors.push(format!("{target}: {e}"));
                    }
                    self.env.insert(target.clone(), v);
                }
                Stmt::Call(c) if NAVIGATION.contains(&canonical_name(&c.name)) => self.navigate(c),
                Stmt::Call(c) => {
                    if let Err(e) = self.call_value(c) {
                        self.trace.errors.push(format!("{c}: {e}"));
                    }
                }
                Stmt::For { var, count, body } => {
                    for i in 0..*count {
                        self.env.insert(var.clone(), Ok(Value::Num(i as f64)));
                        self.run(body);
                    }
                }
            }
        }
    }
}

fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, ExecError> {
    use Value::*;
    let num = |x: f64, y: f64| match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    };
    match (op, a, b) {
        (_, Num(x), Num(y)) => Ok(Num(num(x, y))),
        (BinOp::Add | BinOp::Sub, Pos(p), Pos(q)) => Ok(Pos([num(p[0], q[0]), num(p[1], q[1]), num(p[2], q[2])])),
        (BinOp::Mul | BinOp::Div, Pos(p), Num(k)) => Ok(Pos(p.map(|c| num(c, k)))),
        (BinOp::Mul, Num(k), Pos(p)) => Ok(Pos(p.map(|c| c * k))),
        (BinOp::Mul, Map(h), Map(g)) => fuse(&[&h, &g]).map(Map).map_err(|e| ExecError::World(e.to_string())),
        (op, a, b) => Err(ExecError::Type(format!("unsupported {op:?} between {} and {}", a.type_name(), b.type_name()))),
    }
}

/// Runs a program to completion. Failed lookups or unreachable goals are
/// recorded and execution moves on to the next statement.
pub fn execute_program(program: &Program, world: &dyn World, agent: &mut Agent) -> ExecTrace {
    let mut interp = Interp { world, agent, env: HashMap::new(), trace: ExecTrace::default() };
    interp.run(&program.statements);
    interp.trace
}
