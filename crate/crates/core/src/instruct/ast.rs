//! Plan-program syntax tree and its canonical printer.

use std::fmt::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Str(String),
    Name(String),
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call(Call),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    /// Function name without the `robot.` receiver.
    pub name: String,
    pub args: Vec<Expr>,
    pub kwargs: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign { target: String, value: Expr },
    Call(Call),
    For { var: String, count: u32, body: Vec<Stmt> },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub statements: Vec<Stmt>,
}

impl Program {
    /// Every call in the program, loops included, in source order.
    pub fn calls(&self) -> Vec<&Call> {
        fn expr<'a>(e: &'a Expr, out: &mut Vec<&'a Call>) {
            match e {
                Expr::Call(c) => {
                    out.push(c);
                    c.args.iter().chain(c.kwargs.iter().map(|(_, v)| v)).for_each(|a| expr(a, out));
                }
                Expr::Neg(x) => expr(x, out),
                Expr::Binary { lhs, rhs, .. } => {
                    expr(lhs, out);
                    expr(rhs, out);
                }
                _ => {}
            }
        }
        fn stmts<'a>(s: &'a [Stmt], out: &mut Vec<&'a Call>) {
            for st in s {
                match st {
                    Stmt::Assign { value, .. } => expr(value, out),
                    Stmt::Call(c) => {
                        out.push(c);
                        c.args.iter().chain(c.kwargs.iter().map(|(_, v)| v)).for_each(|a| expr(a, out));
                    }
                    Stmt::For { body, .. } => stmts(body, out),
                }
            }
        }
        let mut out = Vec::new();
        stmts(&self.statements, &mut out);
        out
    }
}

/// Formats a number so that the lexer reads back the same `f64`.
pub fn format_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:?}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn atom(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                Expr::Binary { .. } => write!(f, "({e})"),
                Expr::Num(_) => write!(f, "({e})"),
                _ => write!(f, "{e}"),
            }
        }
        match self {
            Expr::Num(x) => f.write_str(&format_num(*x)),
            Expr::Str(s) => f.write_str(&quote(s)),
            Expr::Name(n) => f.write_str(n),
            Expr::Neg(x) => {
                f.write_char('-')?;
                atom(x, f)
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                match lhs.as_ref() {
                    Expr::Binary { op: l, .. } if l.precedence() < p => write!(f, "({lhs})")?,
                    _ => write!(f, "{lhs}")?,
                }
                write!(f, " {} ", op.symbol())?;
                match rhs.as_ref() {
                    Expr::Binary { op: r, .. } if r.precedence() <= p => write!(f, "({rhs})"),
                    _ => write!(f, "{rhs}"),
                }
            }
            Expr::Call(c) => write!(f, "{c}"),
        }
    }
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "robot.{}(", self.name)?;
        let mut first = true;
        for a in &self.args {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{a}")?;
        }
        for (k, v) in &self.kwargs {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{k}={v}")?;
        }
        f.write_char(')')
    }
}

fn write_block(out: &mut String, stmts: &[Stmt], indent: usize) {
    for s in stmts {
        out.push_str(&" ".repeat(indent));
        match s {
            Stmt::Assign { target, value } => writeln!(out, "{target} = {value}"),
            Stmt::Call(c) => writeln!(out, "{c}"),
            Stmt::For { var, count, body } => {
                writeln!(out, "for {var} in range({count}):").expect("writing to a String");
                write_block(out, body, indent + 4);
                Ok(())
            }
        }
        .expect("writing to a String");
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_block(&mut s, &self.statements, 0);
        f.write_str(&s)
    }
}
