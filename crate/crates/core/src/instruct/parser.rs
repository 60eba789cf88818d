//! Recursive-descent parser for plan programs.

use super::ast::{BinOp, Call, Expr, Program, Stmt};
use super::lexer::{tokenize, Tok, Token};
use super::InstructError;

/// Callable API names, both navigation tables plus the aliases that appear
/// in the prompt examples.
pub const WHITELIST: &[&str] = &[
    "move_to",
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
    "get_pos",
    "move_to_object",
    "with_object_on_left",
    "with_object_on_right",
    "load_image",
    "get_major_map",
    "get_map",
    "get_max_pose_3d",
    "get_max_pos_3d",
];

/// Maps an alias to the name the interpreter dispatches on.
pub fn canonical_name(name: &str) -> &str {
    match name {
        "with_object_on_left" => "with_pos_on_left",
        "with_object_on_right" => "with_pos_on_right",
        "get_max_pos_3d" => "get_max_pose_3d",
        other => other,
    }
}

const FORBIDDEN: &[&str] = &[
    "import", "from", "def", "class", "while", "if", "elif", "else", "try", "except", "with", "lambda", "return", "yield",
    "global", "nonlocal", "del", "exec", "eval", "open", "assert", "raise", "async", "await", "print",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Token {
        let t = self.peek().clone();
        self.pos += 1;
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, InstructError> {
        let t = self.peek();
        Err(InstructError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn expect_op(&mut self, op: char) -> Result<(), InstructError> {
        if self.peek().tok == Tok::Op(op) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{op}', found {}", describe(&self.peek().tok)))
        }
    }

    fn expect_name(&mut self) -> Result<String, InstructError> {
        match self.next().tok {
            Tok::Name(n) => Ok(n),
            other => {
                self.pos -= 1;
                self.err(format!("expected a name, found {}", describe(&other)))
            }
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), InstructError> {
        match &self.peek().tok {
            Tok::Name(n) if n == kw => {
                self.pos += 1;
                Ok(())
            }
            other => self.err(format!("expected '{kw}', found {}", describe(other))),
        }
    }

    fn expect_newline(&mut self) -> Result<(), InstructError> {
        match self.peek().tok {
            Tok::Newline => {
                self.pos += 1;
                Ok(())
            }
            Tok::Eof | Tok::Dedent => Ok(()),
            ref other => self.err(format!("expected end of line, found {}", describe(other))),
        }
    }

    fn block(&mut self, top: bool) -> Result<Vec<Stmt>, InstructError> {
        let mut out = Vec::new();
        loop {
            match self.peek().tok {
                Tok::Eof if top => return Ok(out),
                Tok::Dedent if !top => {
                    self.pos += 1;
                    return Ok(out);
                }
                Tok::Indent => return self.err("unexpected indent"),
                Tok::Newline => {
                    self.pos += 1;
                }
                _ => out.push(self.statement()?),
            }
        }
    }

    fn statement(&mut self) -> Result<Stmt, InstructError> {
        let t = self.peek().clone();
        let Tok::Name(name) = &t.tok else {
            return self.err(format!("expected a statement, found {}", describe(&t.tok)));
        };
        if name == "for" {
            return self.for_loop();
        }
        if FORBIDDEN.contains(&name.as_str()) {
            return Err(InstructError::Forbidden { what: name.clone(), line: t.line, col: t.col });
        }
        if self.peek_at(1) == &Tok::Op('=') {
            self.pos += 2;
            let value = self.expr()?;
            self.expect_newline()?;
            return Ok(Stmt::Assign { target: name.clone(), value });
        }
        match self.expr()? {
            Expr::Call(c) => {
                self.expect_newline()?;
                Ok(Stmt::Call(c))
            }
            _ => Err(InstructError::Syntax { line: t.line, col: t.col, msg: "expression statements must be calls".into() }),
        }
    }

    fn for_loop(&mut self) -> Result<Stmt, InstructError> {
        self.pos += 1;
        let var = self.expect_name()?;
        self.expect_keyword("in")?;
        self.expect_keyword("range")?;
        self.expect_op('(')?;
        let count = match self.peek().tok {
            Tok::Num(n) if n.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&n) => n as u32,
            ref other => return self.err(format!("loop bound must be a literal integer, found {}", describe(other))),
        };
        self.pos += 1;
        self.expect_op(')')?;
        self.expect_op(':')?;
        if self.peek().tok != Tok::Newline {
            return self.err("expected a new line after ':'");
        }
        self.pos += 1;
        if self.peek().tok != Tok::Indent {
            return self.err("expected an indented loop body");
        }
        self.pos += 1;
        let body = self.block(false)?;
        if body.is_empty() {
            return self.err("empty loop body");
        }
        Ok(Stmt::For { var, count, body })
    }

    fn expr(&mut self) -> Result<Expr, InstructError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = self.peek().tok {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, InstructError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = self.peek().tok {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, InstructError> {
        if self.peek().tok == Tok::Op('-') {
            self.pos += 1;
            if let Tok::Num(n) = self.peek().tok {
                self.pos += 1;
                return Ok(Expr::Num(-n));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, InstructError> {
        let t = self.next();
        match t.tok {
            Tok::Num(n) => Ok(Expr::Num(n)),
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Tok::Name(first) => {
                let (name, line, col) = if self.peek().tok == Tok::Op('.') {
                    if first != "robot" {
                        return Err(InstructError::Syntax { line: t.line, col: t.col, msg: format!("attribute access on {first:?}") });
                    }
                    self.pos += 1;
                    let at = self.peek().clone();
                    (self.expect_name()?, at.line, at.col)
                } else {
                    (first, t.line, t.col)
                };
                if self.peek().tok != Tok::Op('(') {
                    if name == "robot" || FORBIDDEN.contains(&name.as_str()) {
                        return Err(InstructError::Syntax { line, col, msg: format!("{name:?} is not a value") });
                    }
                    return Ok(Expr::Name(name));
                }
                if !WHITELIST.contains(&name.as_str()) {
                    return Err(InstructError::NotWhitelisted { name, line, col });
                }
                self.pos += 1;
                self.call_args(name).map(Expr::Call)
            }
            other => {
                self.pos -= 1;
                self.err(format!("expected an expression, found {}", describe(&other)))
            }
        }
    }

    fn call_args(&mut self, name: String) -> Result<Call, InstructError> {
        let mut call = Call { name, args: Vec::new(), kwargs: Vec::new() };
        loop {
            if self.peek().tok == Tok::Op(')') {
                self.pos += 1;
                return Ok(call);
            }
            if let (Tok::Name(k), Tok::Op('=')) = (&self.peek().tok, self.peek_at(1)) {
                let k = k.clone();
                if call.kwargs.iter().any(|(e, _)| *e == k) {
                    return self.err(format!("repeated keyword argument {k:?}"));
                }
                self.pos += 2;
                let v = self.expr()?;
                call.kwargs.push((k, v));
            } else {
                if !call.kwargs.is_empty() {
                    return self.err("positional argument after keyword argument");
                }
                call.args.push(self.expr()?);
            }
            match self.peek().tok {
                Tok::Op(',') => self.pos += 1,
                Tok::Op(')') => {}
                ref other => return self.err(format!("expected ',' or ')', found {}", describe(other))),
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Name(n) => format!("{n:?}"),
        Tok::Str(_) => "a string".into(),
        Tok::Num(n) => format!("number {n}"),
        Tok::Op(c) => format!("'{c}'"),
        Tok::Newline => "end of line".into(),
        Tok::Indent => "indent".into(),
        Tok::Dedent => "dedent".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a plan program, returning the first error with its position.
pub fn parse_program(code: &str) -> Result<Program, InstructError> {
    let mut p = Parser { toks: tokenize(code)?, pos: 0 };
    Ok(Program { statements: p.block(true)? })
}
