use proptest::prelude::*;

use super::*;
use crate::geometry::{Cell, GridSpec, Voxel};
use crate::plan::{ActionSpec, Agent, AgentState, Instance};
use crate::providers::{MockProvider, Provider};
use crate::query::ObstacleGrid;

const SPATIAL_QUERY: &str = "move first to the left side of the counter, then move between the sink and the oven, then move back and forth to the sofa and the table twice";
const SPATIAL_QUERY_CODE: &str = "\
robot.move_to_left('counter')
robot.move_in_between('sink', 'oven')
pos1 = robot.get_pos('sofa')
pos2 = robot.get_pos('table')
for i in range(2):
    robot.move_to(pos1)
    robot.move_to(pos2)
";
const SPATIAL_QUERY_2: &str = "move 2 meters north of the laptop, then move 3 meters rightward";
const SPATIAL_QUERY_2_CODE: &str = "\
robot.move_north('laptop')
robot.face('laptop')
robot.turn(180)
robot.move_forward(2)
robot.turn(90)
robot.move_forward(3)
";
const MULTIMODAL_QUERY: &str = "move in between the image ./006899.png and the backpack near the sound of glass breaking";
const MULTIMODAL_QUERY_CODE: &str = r#"img = robot.load_image("./006899.png")
img_map = robot.get_major_map(img=img)
obj_map = robot.get_major_map(obj="backpack")
sound_map = robot.get_map(sound="glass breaking")
fuse_map = obj_map * sound_map
pos1 = robot.get_max_pos_3d(img_map)
pos2 = robot.get_max_pos_3d(fuse_map)
pos = (pos1 + pos2) / 2
robot.move_to(pos)
"#;

/// Alias-insensitive comparison: canonical names on both sides.
fn canonical(p: &Program) -> Program {
    fn call(c: &Call) -> Call {
        Call {
            name: canonical_name(&c.name).to_string(),
            args: c.args.iter().map(expr).collect(),
            kwargs: c.kwargs.iter().map(|(k, v)| (k.clone(), expr(v))).collect(),
        }
    }
    fn expr(e: &Expr) -> Expr {
        match e {
            Expr::Call(c) => Expr::Call(call(c)),
            Expr::Neg(x) => Expr::Neg(Box::new(expr(x))),
            Expr::Binary { op, lhs, rhs } => Expr::Binary { op: *op, lhs: Box::new(expr(lhs)), rhs: Box::new(expr(rhs)) },
            other => other.clone(),
        }
    }
    fn stmt(s: &Stmt) -> Stmt {
        match s {
            Stmt::Assign { target, value } => Stmt::Assign { target: target.clone(), value: expr(value) },
            Stmt::Call(c) => Stmt::Call(call(c)),
            Stmt::For { var, count, body } => Stmt::For { var: var.clone(), count: *count, body: body.iter().map(stmt).collect() },
        }
    }
    Program { statements: p.statements.iter().map(stmt).collect() }
}

#[test]
fn prompt_assets_parse() {
    for prompt in [SPATIAL_PROMPT, MULTIMODAL_PROMPT] {
        let examples = prompt_examples(prompt);
        assert!(examples.len() >= 5);
        for (instruction, code) in examples {
            parse_program(&code).unwrap_or_else(|e| panic!("{instruction}: {e}"));
        }
    }
}

#[test]
fn query_blocks_parse() {
    assert_eq!(parse_program(SPATIAL_QUERY_CODE).unwrap().statements.len(), 5);
    assert_eq!(parse_program(SPATIAL_QUERY_2_CODE).unwrap().statements.len(), 6);
    assert_eq!(parse_program(MULTIMODAL_QUERY_CODE).unwrap().statements.len(), 9);
}

#[test]
fn fallback_reproduces_prompt_examples() {
    for prompt in [SPATIAL_PROMPT, MULTIMODAL_PROMPT] {
        for (instruction, code) in prompt_examples(prompt) {
            let want = canonical(&parse_program(&code).unwrap());
            let got = fallback_program(&instruction).unwrap_or_else(|e| panic!("{instruction}: {e}"));
            assert_eq!(canonical(&got), want, "{instruction}");
        }
    }
}

#[test]
fn fallback_reproduces_query_figures() {
    for (instruction, code) in [
        (SPATIAL_QUERY, SPATIAL_QUERY_CODE),
        (SPATIAL_QUERY_2, SPATIAL_QUERY_2_CODE),
        (MULTIMODAL_QUERY, MULTIMODAL_QUERY_CODE),
    ] {
        let want = canonical(&parse_program(code).unwrap());
        assert_eq!(canonical(&fallback_program(instruction).unwrap()), want, "{instruction}");
    }
}

#[test]
fn fallback_rejects_unknown_and_empty() {
    assert!(matches!(fallback_program(""), Err(InstructError::Unsupported(_))));
    assert!(matches!(generate_plan("   ", SPATIAL_PROMPT, None), Err(InstructError::Unsupported(_))));
    assert!(matches!(fallback_program("sing a song about mapping"), Err(InstructError::Unsupported(_))));
}

#[test]
fn generation_is_deterministic() {
    let a = generate_plan(SPATIAL_QUERY, SPATIAL_PROMPT, None).unwrap();
    let b = generate_plan(SPATIAL_QUERY, SPATIAL_PROMPT, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1, PlanSource::Fallback);
}

#[test]
fn mock_codegen_falls_back_to_rules() {
    let mock = MockProvider::new(16, 0);
    let p: &dyn Provider = &mock;
    let (code, source) = generate_plan("face the toilet", SPATIAL_PROMPT, Some(p)).unwrap();
    assert_eq!(source, PlanSource::Fallback);
    assert_eq!(code, "robot.face('toilet')\n");
}

#[test]
fn forbidden_statements_rejected() {
    assert!(matches!(parse_program("import os\n"), Err(InstructError::Forbidden { line: 1, col: 1, .. })));
    assert!(matches!(parse_program("while x:\n    robot.turn(1)\n"), Err(InstructError::Forbidden { .. })));
    assert!(matches!(parse_program("robot.shutdown()\n"), Err(InstructError::NotWhitelisted { .. })));
    assert!(matches!(parse_program("os.system('ls')\n"), Err(InstructError::Syntax { .. })));
    assert!(matches!(parse_program("robot.turn(\n"), Err(InstructError::Syntax { .. })));
    assert!(matches!(parse_program("for i in range(n):\n    robot.turn(1)\n"), Err(InstructError::Syntax { .. })));
    match parse_program("robot.turn(90)\nrobot.fly('x')\n") {
        Err(InstructError::NotWhitelisted { name, line, .. }) => assert_eq!((name.as_str(), line), ("fly", 2)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn for_loop_body_and_aliases() {
    let p = parse_program("for i in range(3):\n    robot.move_to(pos1)\n\n    robot.move_to(pos2)\nrobot.turn(-90)\n").unwrap();
    assert_eq!(p.statements.len(), 2);
    match &p.statements[0] {
        Stmt::For { count, body, .. } => assert_eq!((*count, body.len()), (3, 2)),
        other => panic!("{other:?}"),
    }
    assert_eq!(p.calls().len(), 3);
    assert_eq!(canonical_name("with_object_on_left"), "with_pos_on_left");
    assert_eq!(canonical_name("get_max_pos_3d"), "get_max_pose_3d");
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-1000i32..1000).prop_map(|v| Expr::Num(v as f64 / 4.0)),
        "[a-z ]{0,8}".prop_map(Expr::Str),
        "pos[0-9]".prop_map(Expr::Name),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), 0..4usize).prop_map(|(a, b, k)| Expr::Binary {
                op: [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][k],
                lhs: Box::new(a),
                rhs: Box::new(b),
            }),
            inner.clone().prop_filter("negated literals fold", |e| !matches!(e, Expr::Num(_))).prop_map(|e| Expr::Neg(Box::new(e))),
            proptest::collection::vec(inner, 0..3).prop_map(|args| Expr::Call(Call { name: "get_pos".into(), args, kwargs: Vec::new() })),
        ]
    })
}

fn arb_program() -> impl Strategy<Value = Program> {
    let stmt = prop_oneof![
        ("v[a-z]{0,3}", arb_expr()).prop_map(|(target, value)| Stmt::Assign { target, value }),
        (arb_expr(), "[a-z]{1,6}").prop_map(|(e, k)| Stmt::Call(Call { name: "move_to".into(), args: vec![], kwargs: vec![(k, e)] })),
    ];
    let with_loops = stmt.clone().prop_recursive(2, 8, 4, |inner| {
        (1u32..5, proptest::collection::vec(inner, 1..4)).prop_map(|(count, body)| Stmt::For { var: "i".into(), count, body })
    });
    proptest::collection::vec(prop_oneof![stmt, with_loops], 0..6).prop_map(|statements| Program { statements })
}

proptest! {
    #[test]
    fn print_parse_round_trip(p in arb_program()) {
        let text = p.to_string();
        let back = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p);
    }
}

/// A 40 x 40 room at 0.1 m per cell: two chairs, a table beside the
/// second chair, and a wall segment.
fn room() -> SceneWorld {
    let spec = GridSpec::new(40, 40, 1, 0.1).unwrap();
    let mut grid = ObstacleGrid::empty(40, 40);
    let mut world_objects: Vec<(&str, Vec<Cell>)> = vec![
        ("chair", (8..11).flat_map(|x| (8..11).map(move |y| Cell::new(x, y))).collect()),
        ("chair", (30..33).flat_map(|x| (30..33).map(move |y| Cell::new(x, y))).collect()),
        ("table", (28..32).flat_map(|x| (20..24).map(move |y| Cell::new(x, y))).collect()),
    ];
    world_objects.push(("wall", (15..25).map(|y| Cell::new(20, y)).collect()));
    let mut w = SceneWorld::new(spec, ObstacleGrid::empty(40, 40));
    for (name, cells) in world_objects {
        for &c in &cells {
            grid.set(c, true);
        }
        w.object_voxels.entry(name.to_string()).or_default().extend(cells.iter().map(|c| Voxel { x: c.x, y: c.y, z: 0 }));
        w.instances.insert(name, Instance { cells });
    }
    w.obstacles = grid;
    w
}

fn agent_at(x: u32, y: u32) -> Agent {
    Agent::new(AgentState::at_cell(Cell::new(x, y), 0.0), ActionSpec::CODEGEN, 0.1)
}

#[test]
fn empty_program_has_empty_trace() {
    let w = room();
    let mut agent = agent_at(20, 5);
    let trace = execute_program(&Program::default(), &w, &mut agent);
    assert_eq!(trace, ExecTrace::default());
    assert_eq!(trace.to_string(), "");
    assert!(agent.log.is_empty());
}

#[test]
fn move_to_object_reaches_target() {
    let w = room();
    let mut agent = agent_at(35, 5);
    let p = parse_program("robot.move_to_object('table')\n").unwrap();
    let trace = execute_program(&p, &w, &mut agent);
    assert_eq!(trace.subgoals.len(), 1);
    assert!(trace.subgoals[0].completed(), "{trace}");
    let (cx, cy) = (29.5, 21.5);
    let d = ((agent.state.x - cx).hypot(agent.state.y - cy)) * 0.1;
    assert!(d < 1.0, "{d}");
    assert!(trace.to_string().contains("status=ok"));
}

#[test]
fn missing_target_is_recorded_and_execution_continues() {
    let w = room();
    let mut agent = agent_at(35, 5);
    let p = parse_program("robot.move_to_object('piano')\npos = robot.get_pos('piano')\nrobot.move_to(pos)\nrobot.face('table')\n").unwrap();
    let trace = execute_program(&p, &w, &mut agent);
    assert_eq!(trace.subgoals.len(), 3);
    assert!(!trace.subgoals[0].completed());
    assert!(!trace.subgoals[1].completed());
    assert!(trace.subgoals[2].completed());
    assert_eq!(trace.errors.len(), 1);
    assert!(trace.to_string().contains("status=failed"));
}

#[test]
fn loops_and_position_arithmetic() {
    let w = room();
    let mut agent = agent_at(20, 5);
    let code = "pos1 = robot.get_pos('table')\npos2 = robot.get_pos('wall')\nfor i in range(2):\n    robot.move_to((pos1 + pos2) / 2)\n    robot.turn(90)\n";
    let trace = execute_program(&parse_program(code).unwrap(), &w, &mut agent);
    assert_eq!(trace.subgoals.len(), 4);
    assert!(trace.subgoals.iter().all(SubgoalRecord::completed), "{trace}");
    let goal = trace.subgoals[0].goal.unwrap();
    assert!((goal.0 - (29.5 + 20.0) / 2.0).abs() < 1e-9 && (goal.1 - (21.5 + 19.5) / 2.0).abs() < 1e-9);
}

#[test]
fn fused_heatmap_disambiguates_instances() {
    // Two chairs; the auxiliary table map selects the one near the table.
    let w = room();
    let mut agent = agent_at(20, 5);
    let code = "obj_map = robot.get_major_map(obj='chair')\naux = robot.get_map(obj='table')\nfuse_map = obj_map * aux\npos = robot.get_max_pos_3d(fuse_map)\nrobot.move_to(pos)\n";
    let trace = execute_program(&parse_program(code).unwrap(), &w, &mut agent);
    assert!(trace.errors.is_empty(), "{trace}");
    let (gx, gy) = trace.subgoals[0].goal.unwrap();
    assert!((30.0..33.0).contains(&gx) && (30.0..33.0).contains(&gy), "{gx} {gy}");
    // The major map alone peaks on the first chair in scan order.
    let plain = "pos = robot.get_max_pos_3d(robot.get_major_map(obj='chair'))\nrobot.move_to(pos)\n";
    let trace = execute_program(&parse_program(plain).unwrap(), &w, &mut agent_at(20, 5));
    let (gx, gy) = trace.subgoals[0].goal.unwrap();
    assert!((8.0..11.0).contains(&gx) && (8.0..11.0).contains(&gy), "{gx} {gy}");
}

#[test]
fn type_errors_are_reported() {
    let w = room();
    let mut agent = agent_at(20, 5);
    let code = "m = robot.get_major_map(obj='chair')\nx = m + 1\nrobot.turn('left')\nrobot.move_to(undefined)\n";
    let trace = execute_program(&parse_program(code).unwrap(), &w, &mut agent);
    assert_eq!(trace.errors.len(), 1);
    assert_eq!(trace.subgoals.len(), 2);
    assert!(trace.subgoals.iter().all(|s| !s.completed()));
}
