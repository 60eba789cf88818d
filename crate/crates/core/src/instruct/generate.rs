//! Instruction to plan-program generation: an LLM behind the provider
//! interface, or a deterministic template generator.

use std::sync::LazyLock;

use regex::Regex;

use super::ast::{BinOp, Call, Expr, Program, Stmt};
use super::InstructError;
use crate::providers::{Provider, ProviderError};

/// Few-shot context for spatial goals.
pub const SPATIAL_PROMPT: &str = include_str!("../../assets/spatial_prompt.txt");
/// Few-shot context for multimodal goals.
pub const MULTIMODAL_PROMPT: &str = include_str!("../../assets/multimodal_prompt.txt");

/// Splits a prompt asset into `(instruction, code)` examples. Consecutive
/// comment lines form one instruction.
pub fn prompt_examples(prompt: &str) -> Vec<(String, String)> {
    prompt
        .split("\n\n")
        .filter_map(|block| {
            let (comments, code): (Vec<&str>, Vec<&str>) = block.lines().partition(|l| l.trim_start().starts_with('#'));
            let instruction = comments.iter().map(|l| l.trim_start().trim_start_matches('#').trim()).collect::<Vec<_>>().join(" ");
            (!instruction.is_empty()).then(|| (instruction, code.join("\n") + "\n"))
        })
        .collect()
}

/// Where generated code came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanSource {
    Provider,
    Fallback,
}

/// Asks the provider for code, falling back to the template generator when
/// the provider has no code model or none is given.
pub fn generate_plan(instruction: &str, context: &str, provider: Option<&dyn Provider>) -> Result<(String, PlanSource), InstructError> {
    if instruction.trim().is_empty() {
        return Err(InstructError::Unsupported(instruction.to_string()));
    }
    if let Some(p) = provider {
        let prompt = format!("{}\n\n# {}\n", context.trim_end(), instruction.trim());
        match p.codegen(&prompt) {
            Ok(code) => return Ok((code, PlanSource::Provider)),
            Err(ProviderError::Unsupported(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok((fallback_program(instruction)?.to_string(), PlanSource::Fallback))
}

macro_rules! re {
    ($name:ident, $pat:expr) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new(concat!("(?i)", $pat)).expect("valid pattern"));
    };
}

const NUM: &str = r"(\d+(?:\.\d+)?|one|two|three|four|five|six|seven|eight|nine|ten)";

re!(CLAUSE_SPLIT, r"\s*,\s*(?:and\s+)?then\s+|\s+and\s+then\s+|\s+then\s+|\s*;\s*|\.\s+");
re!(FIRST, r"\bfirst\s+");
re!(GO, r"^(?:move|go|walk|navigate)\s+");
re!(BACK_FORTH, r"^back\s+and\s+forth\s+(?:to|between)\s+(.+?)\s+and\s+(.+?)\s+(twice|thrice|once|(\S+)\s+times?)$");
re!(MIDDLE, r"^(?:to\s+)?(?:the\s+middle\s+of|in\s+between|between)\s+(.+)$");
re!(SIDE, r"^(?:a\s+bit\s+)?(?:to\s+)?(?:the\s+)?(left|right)\s+(?:side\s+)?of\s+(.+)$");
re!(CARDINAL, r"^(?:to\s+)?(?:the\s+)?(north|south|east|west)\s+(?:side\s+)?of\s+(.+)$");
re!(FORWARD, r"^forward\s+(?:for\s+)?(\S+)\s+meters?$");
re!(SIDESTEP, r"^(left|right)(?:ward)?\s+(\S+)\s+meters?$|^(\S+)\s+meters?\s+(left|right)(?:ward)?$");
re!(FACE, r"^face\s+(.+)$");
re!(TURN_ABS, r"^turn\s+(?:to\s+(?:the\s+)?)?(north|south|east|west)$");
re!(TURN_REL, r"^turn\s+(left|right)\s+(\S+)\s+degrees?$|^turn\s+(\S+)\s+degrees?\s+(?:to\s+the\s+)?(left|right)$");
re!(TURN_AROUND, r"^turn\s+around$");
re!(WITH_ON, r"^with\s+(.+?)\s+on\s+your\s+(left|right)(?:\s+side)?$");
re!(FIND, r"^find\s+(?:any|all|the|a|an)?\s*(.+?)\s+in\s+the\s+(?:environment|room|scene)$");
re!(MOVE_TO, r"^to\s+(.+)$");
re!(CONSTRAINT, r"\s+(?:near|next\s+to|close\s+to)\s+(?:the\s+)?");
re!(AND, r"\s+and\s+");
static NUM_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!("(?i)^{NUM}$")).expect("valid pattern"));
static METERS_OF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)^(?:to\s+)?{NUM}\s+meters?\s+(?:to\s+the\s+)?(north|south|east|west|left|right)\s+of\s+(.+)$"))
        .expect("valid pattern")
});

fn number(s: &str) -> Option<f64> {
    if !NUM_RE.is_match(s) {
        return None;
    }
    let words = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];
    s.parse()
        .ok()
        .or_else(|| words.iter().position(|w| w.eq_ignore_ascii_case(s)).map(|i| (i + 1) as f64))
}

fn repeat_count(caps: &regex::Captures<'_>) -> Option<u32> {
    match caps.get(3)?.as_str().to_ascii_lowercase().as_str() {
        "once" => Some(1),
        "twice" => Some(2),
        "thrice" => Some(3),
        _ => number(caps.get(4)?.as_str()).filter(|n| n.fract() == 0.0 && *n >= 1.0).map(|n| n as u32),
    }
}

/// Map label for an object phrase: articles dropped, a few synonyms folded.
fn object_name(phrase: &str) -> String {
    let mut s = phrase.trim().trim_end_matches('.').trim();
    for article in ["the ", "a ", "an ", "any "] {
        if s.len() > article.len() && s[..article.len()].eq_ignore_ascii_case(article) {
            s = s[article.len()..].trim_start();
        }
    }
    let s = s.to_lowercase();
    match s.as_str() {
        "fridge" => "refrigerator".into(),
        "tv" => "television".into(),
        "sofa bed" => "sofa".into(),
        _ => s,
    }
}

fn singular(name: String) -> String {
    match name.strip_suffix('s') {
        Some(stem) if !stem.ends_with('s') && stem.len() > 2 => stem.to_string(),
        _ => name,
    }
}

fn call(name: &str, args: Vec<Expr>) -> Call {
    Call { name: name.into(), args, kwargs: Vec::new() }
}

fn call_stmt(name: &str, args: Vec<Expr>) -> Stmt {
    Stmt::Call(call(name, args))
}

fn s(v: &str) -> Expr {
    Expr::Str(v.into())
}

fn n(v: f64) -> Expr {
    Expr::Num(v)
}

fn assign(target: &str, value: Expr) -> Stmt {
    Stmt::Assign { target: target.into(), value }
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Binary { op: BinOp::Mul, lhs: Box::new(a), rhs: Box::new(b) }
}

#[derive(Debug, Clone, PartialEq)]
enum Modality {
    Image(String),
    Object(String),
    Sound(String),
}

impl Modality {
    fn parse(phrase: &str) -> Self {
        let p = phrase.trim();
        let lower = p.to_lowercase();
        let body = lower.strip_prefix("the ").map_or(p, |_| &p[4..]);
        let lb = body.to_lowercase();
        if let Some(rest) = lb.strip_prefix("sound of ") {
            return Modality::Sound(rest.trim().to_string());
        }
        if lb.starts_with("image") {
            let path = body[5..].trim_start_matches(':').trim();
            return Modality::Image(path.to_string());
        }
        Modality::Object(object_name(body))
    }

    fn rank(&self) -> u8 {
        match self {
            Modality::Image(_) => 0,
            Modality::Object(_) => 1,
            Modality::Sound(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        ["img", "obj", "sound"][self.rank() as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Target {
    primary: Modality,
    constraints: Vec<Modality>,
}

impl Target {
    fn parse(phrase: &str) -> Self {
        let mut parts = CONSTRAINT.splitn(phrase.trim(), 2);
        let primary = Modality::parse(parts.next().unwrap_or_default());
        let constraints = parts
            .next()
            .map(|rest| AND.split(rest).map(Modality::parse).collect())
            .unwrap_or_default();
        Self { primary, constraints }
    }

    fn is_multimodal(&self) -> bool {
        !self.constraints.is_empty() || !matches!(self.primary, Modality::Object(_))
    }
}

/// Collects map variables and emits the statements building them.
struct MapBuilder {
    images: Vec<String>,
    vars: Vec<(String, Expr)>,
}

fn map_call(major: bool, m: &Modality, image_var: Option<&str>) -> Expr {
    let value = match m {
        Modality::Image(_) => Expr::Name(image_var.unwrap_or("img").into()),
        Modality::Object(o) => s(o),
        Modality::Sound(x) => s(x),
    };
    Expr::Call(Call {
        name: if major { "get_major_map" } else { "get_map" }.into(),
        args: Vec::new(),
        kwargs: vec![(m.kind().into(), value)],
    })
}

impl MapBuilder {
    /// `entries` are (kind, expression) in emission order; returns names.
    fn new(targets: &[&Modality], entries: Vec<(&'static str, Expr)>) -> Self {
        let images = images_of(targets);
        let mut seen = std::collections::HashMap::<&str, usize>::new();
        let totals = entries.iter().fold(std::collections::HashMap::<&str, usize>::new(), |mut acc, (k, _)| {
            *acc.entry(k).or_default() += 1;
            acc
        });
        let vars = entries
            .into_iter()
            .map(|(k, e)| {
                let i = seen.entry(k).or_default();
                *i += 1;
                let name = if totals[k] > 1 { format!("{k}_map_{i}") } else { format!("{k}_map") };
                (name, e)
            })
            .collect();
        Self { images, vars }
    }

    fn image_var(&self, path: &str) -> String {
        image_var_for(&self.images, &Modality::Image(path.into())).unwrap_or_else(|| "img".into())
    }

    fn statements(&self) -> Vec<Stmt> {
        let mut out: Vec<Stmt> = self
            .images
            .iter()
            .map(|p| assign(&self.image_var(p), Expr::Call(call("load_image", vec![s(p)]))))
            .collect();
        out.extend(self.vars.iter().map(|(n, e)| assign(n, e.clone())));
        out
    }
}

fn aux_groups(constraints: &[Modality], images: &[String]) -> Vec<(&'static str, Expr)> {
    let mut sorted: Vec<&Modality> = constraints.iter().collect();
    sorted.sort_by_key(|m| m.rank());
    let mut groups: Vec<(&'static str, Expr)> = Vec::new();
    for m in sorted {
        let e = map_call(false, m, image_var_for(images, m).as_deref());
        match groups.last_mut() {
            Some((k, acc)) if *k == m.kind() => *acc = mul(acc.clone(), e),
            _ => groups.push((m.kind(), e)),
        }
    }
    groups
}

fn images_of(mods: &[&Modality]) -> Vec<String> {
    let mut v = Vec::new();
    for m in mods {
        if let Modality::Image(p) = m {
            if !v.contains(p) {
                v.push(p.clone());
            }
        }
    }
    v
}

fn image_var_for(images: &[String], m: &Modality) -> Option<String> {
    match m {
        Modality::Image(p) if images.len() > 1 => Some(format!("img_{}", images.iter().position(|q| q == p).unwrap_or(0) + 1)),
        _ => None,
    }
}

fn pos_of(var: &str) -> Expr {
    Expr::Call(call("get_max_pos_3d", vec![Expr::Name(var.into())]))
}

fn product(names: &[String]) -> Expr {
    let mut it = names.iter().map(|n| Expr::Name(n.clone()));
    let first = it.next().expect("at least one map");
    it.fold(first, mul)
}

fn single_target(t: &Target) -> Vec<Stmt> {
    let all: Vec<&Modality> = std::iter::once(&t.primary).chain(&t.constraints).collect();
    let images = images_of(&all);
    let mut entries = vec![(t.primary.rank(), t.primary.kind(), map_call(true, &t.primary, image_var_for(&images, &t.primary).as_deref()))];
    for (k, e) in aux_groups(&t.constraints, &images) {
        let rank = ["img", "obj", "sound"].iter().position(|x| *x == k).unwrap_or(0) as u8;
        entries.push((rank, k, e));
    }
    entries.sort_by_key(|(r, _, _)| *r);
    let b = MapBuilder::new(&all, entries.into_iter().map(|(_, k, e)| (k, e)).collect());
    let mut out = b.statements();
    let names: Vec<String> = b.vars.iter().map(|(n, _)| n.clone()).collect();
    let pos_src = if names.len() > 1 {
        out.push(assign("fuse_map", product(&names)));
        "fuse_map".to_string()
    } else {
        names[0].clone()
    };
    out.push(assign("pos", pos_of(&pos_src)));
    out.push(call_stmt("move_to", vec![Expr::Name("pos".into())]));
    out
}

fn middle_of(a: &Target, b: &Target) -> Vec<Stmt> {
    let all: Vec<&Modality> = [a, b].iter().flat_map(|t| std::iter::once(&t.primary).chain(&t.constraints)).collect();
    let images = images_of(&all);
    let mut entries: Vec<(&'static str, Expr)> =
        [a, b].iter().map(|t| (t.primary.kind(), map_call(true, &t.primary, image_var_for(&images, &t.primary).as_deref()))).collect();
    let aux: Vec<Vec<(&'static str, Expr)>> = [a, b].iter().map(|t| aux_groups(&t.constraints, &images)).collect();
    entries.extend(aux.iter().flatten().cloned());
    let builder = MapBuilder::new(&all, entries);
    let mut out = builder.statements();
    let names: Vec<String> = builder.vars.iter().map(|(n, _)| n.clone()).collect();
    let with_aux = aux.iter().filter(|g| !g.is_empty()).count();
    let mut next_aux = 2;
    let mut fuse_i = 0;
    let mut sources = Vec::new();
    for (i, g) in aux.iter().enumerate() {
        if g.is_empty() {
            sources.push(names[i].clone());
            continue;
        }
        fuse_i += 1;
        let fname = if with_aux > 1 { format!("fuse_map_{fuse_i}") } else { "fuse_map".into() };
        let mut parts = vec![names[i].clone()];
        parts.extend(names[next_aux..next_aux + g.len()].iter().cloned());
        next_aux += g.len();
        out.push(assign(&fname, product(&parts)));
        sources.push(fname);
    }
    out.push(assign("pos1", pos_of(&sources[0])));
    out.push(assign("pos2", pos_of(&sources[1])));
    let sum = Expr::Binary { op: BinOp::Add, lhs: Box::new(Expr::Name("pos1".into())), rhs: Box::new(Expr::Name("pos2".into())) };
    out.push(assign("pos", Expr::Binary { op: BinOp::Div, lhs: Box::new(sum), rhs: Box::new(n(2.0)) }));
    out.push(call_stmt("move_to", vec![Expr::Name("pos".into())]));
    out
}

/// Splits "A and B" at the first " and " that leaves two nonempty sides.
fn split_pair(rest: &str) -> Option<(String, String)> {
    let m = AND.find(rest)?;
    let (a, b) = (rest[..m.start()].trim(), rest[m.end()..].trim());
    (!a.is_empty() && !b.is_empty()).then(|| (a.to_string(), b.to_string()))
}

fn clause(text: &str) -> Option<Vec<Stmt>> {
    let text = FIRST.replace_all(text.trim().trim_end_matches('.'), "");
    let text = text.trim();
    if let Some(c) = FACE.captures(text) {
        return Some(vec![call_stmt("face", vec![s(&object_name(&c[1]))])]);
    }
    if let Some(c) = TURN_ABS.captures(text) {
        let deg = match c[1].to_ascii_lowercase().as_str() {
            "north" => 0.0,
            "east" => 90.0,
            "south" => 180.0,
            _ => -90.0,
        };
        return Some(vec![call_stmt("turn_absolute", vec![n(deg)])]);
    }
    if let Some(c) = TURN_REL.captures(text) {
        let (dir, amount) = match (c.get(1), c.get(2)) {
            (Some(d), Some(a)) => (d.as_str(), a.as_str()),
            _ => (c.get(4)?.as_str(), c.get(3)?.as_str()),
        };
        let deg = number(amount)?;
        let deg = if dir.eq_ignore_ascii_case("left") { -deg } else { deg };
        return Some(vec![call_stmt("turn", vec![n(deg)])]);
    }
    if TURN_AROUND.is_match(text) {
        return Some(vec![call_stmt("turn", vec![n(180.0)])]);
    }
    if let Some(c) = WITH_ON.captures(text) {
        let name = if c[2].eq_ignore_ascii_case("left") { "with_object_on_left" } else { "with_object_on_right" };
        return Some(vec![call_stmt(name, vec![s(&object_name(&c[1]))])]);
    }
    if let Some(c) = FIND.captures(text) {
        return Some(vec![call_stmt("move_to_object", vec![s(&singular(object_name(&c[1])))])]);
    }
    let rest = GO.find(text).map(|m| &text[m.end()..])?;
    if let Some(c) = BACK_FORTH.captures(rest) {
        let count = repeat_count(&c)?;
        return Some(vec![
            assign("pos1", Expr::Call(call("get_pos", vec![s(&object_name(&c[1]))]))),
            assign("pos2", Expr::Call(call("get_pos", vec![s(&object_name(&c[2]))]))),
            Stmt::For {
                var: "i".into(),
                count,
                body: vec![call_stmt("move_to", vec![Expr::Name("pos1".into())]), call_stmt("move_to", vec![Expr::Name("pos2".into())])],
            },
        ]);
    }
    if let Some(c) = METERS_OF.captures(rest) {
        let dist = number(&c[1])?;
        let obj = object_name(&c[3]);
        let first = match c[2].to_ascii_lowercase().as_str() {
            "left" => "move_to_left".to_string(),
            "right" => "move_to_right".to_string(),
            d => format!("move_{d}"),
        };
        return Some(vec![
            call_stmt(&first, vec![s(&obj)]),
            call_stmt("face", vec![s(&obj)]),
            call_stmt("turn", vec![n(180.0)]),
            call_stmt("move_forward", vec![n(dist)]),
        ]);
    }
    if let Some(c) = MIDDLE.captures(rest) {
        let (a, b) = split_pair(&c[1])?;
        let (ta, tb) = (Target::parse(&a), Target::parse(&b));
        if ta.is_multimodal() || tb.is_multimodal() {
            return Some(middle_of(&ta, &tb));
        }
        return Some(vec![call_stmt("move_in_between", vec![s(&object_name(&a)), s(&object_name(&b))])]);
    }
    if let Some(c) = SIDE.captures(rest) {
        let name = if c[1].eq_ignore_ascii_case("left") { "move_to_left" } else { "move_to_right" };
        return Some(vec![call_stmt(name, vec![s(&object_name(&c[2]))])]);
    }
    if let Some(c) = CARDINAL.captures(rest) {
        return Some(vec![call_stmt(&format!("move_{}", c[1].to_ascii_lowercase()), vec![s(&object_name(&c[2]))])]);
    }
    if let Some(c) = FORWARD.captures(rest) {
        return Some(vec![call_stmt("move_forward", vec![n(number(&c[1])?)])]);
    }
    if let Some(c) = SIDESTEP.captures(rest) {
        let (dir, amount) = match (c.get(1), c.get(2)) {
            (Some(d), Some(a)) => (d.as_str(), a.as_str()),
            _ => (c.get(4)?.as_str(), c.get(3)?.as_str()),
        };
        let turn = if dir.eq_ignore_ascii_case("left") { -90.0 } else { 90.0 };
        return Some(vec![call_stmt("turn", vec![n(turn)]), call_stmt("move_forward", vec![n(number(amount)?)])]);
    }
    if let Some(c) = MOVE_TO.captures(rest) {
        let t = Target::parse(&c[1]);
        if t.is_multimodal() {
            return Some(single_target(&t));
        }
        return Some(vec![call_stmt("move_to_object", vec![s(&object_name(&c[1]))])]);
    }
    None
}

/// Normalized clauses of an instruction, split on "then", ";" and sentence
/// breaks.
pub fn split_clauses(instruction: &str) -> Vec<String> {
    let text = instruction.split_whitespace().collect::<Vec<_>>().join(" ");
    let text = text.trim_start_matches('#').trim();
    CLAUSE_SPLIT
        .split(text)
        .map(|p| p.trim().trim_start_matches("and ").trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// Deterministic template generator covering the prompt example patterns.
pub fn fallback_program(instruction: &str) -> Result<Program, InstructError> {
    let clauses = split_clauses(instruction);
    if clauses.is_empty() {
        return Err(InstructError::Unsupported(instruction.to_string()));
    }
    let mut statements = Vec::new();
    for part in &clauses {
        statements.extend(clause(part).ok_or_else(|| InstructError::Unsupported(part.clone()))?);
    }
    Ok(Program { statements })
}
