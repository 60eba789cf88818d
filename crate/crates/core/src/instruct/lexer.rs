//! Tokenizer for plan programs: a small, indentation-sensitive subset of
//! Python.

use super::InstructError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Str(String),
    Num(f64),
    /// One of `( ) , = + - * / : .`
    Op(char),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
}

impl Cursor {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<char> {
        self.chars.get(self.pos + k).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> InstructError {
    InstructError::Syntax { line, col, msg: msg.into() }
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, InstructError> {
    let mut c = Cursor { chars: src.chars().collect(), pos: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize;
    let mut at_line_start = true;

    loop {
        if at_line_start && depth == 0 {
            // Measure indentation; skip blank and comment-only lines.
            let mut width = 0;
            while let Some(ch) = c.peek() {
                match ch {
                    ' ' => width += 1,
                    '\t' => width = (width / 4 + 1) * 4,
                    _ => break,
                }
                c.bump();
            }
            match c.peek() {
                None => break,
                Some('\n') | Some('\r') => {
                    c.bump();
                    continue;
                }
                Some('#') => {
                    while c.peek().is_some_and(|ch| ch != '\n') {
                        c.bump();
                    }
                    continue;
                }
                _ => {}
            }
            let (line, col) = (c.line, c.col);
            let top = *indents.last().expect("indent stack is never empty");
            if width > top {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, line, col });
            } else {
                while width < *indents.last().expect("indent stack is never empty") {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, line, col });
                }
                if width != *indents.last().expect("indent stack is never empty") {
                    return Err(syntax(line, col, "inconsistent dedent"));
                }
            }
            at_line_start = false;
        }

        let Some(ch) = c.peek() else { break };
        let (line, col) = (c.line, c.col);
        match ch {
            ' ' | '\t' | '\r' => {
                c.bump();
            }
            '\n' => {
                c.bump();
                if depth == 0 {
                    if out.last().is_some_and(|t: &Token| !matches!(t.tok, Tok::Newline | Tok::Indent | Tok::Dedent)) {
                        out.push(Token { tok: Tok::Newline, line, col });
                    }
                    at_line_start = true;
                }
            }
            '#' => {
                while c.peek().is_some_and(|ch| ch != '\n') {
                    c.bump();
                }
            }
            '\\' => {
                c.bump();
                while c.peek().is_some_and(|ch| ch == ' ' || ch == '\t' || ch == '\r') {
                    c.bump();
                }
                if c.peek() != Some('\n') {
                    return Err(syntax(line, col, "unexpected character after line continuation"));
                }
                c.bump();
            }
            '\'' | '"' => out.push(Token { tok: Tok::Str(lex_string(&mut c, ch)?), line, col }),
            '0'..='9' => out.push(Token { tok: Tok::Num(lex_number(&mut c)?), line, col }),
            '.' if c.peek_at(1).is_some_and(|d| d.is_ascii_digit()) => {
                out.push(Token { tok: Tok::Num(lex_number(&mut c)?), line, col })
            }
            ch if ch.is_alphabetic() || ch == '_' => {
                let mut s = String::new();
                while let Some(ch) = c.peek().filter(|ch| ch.is_alphanumeric() || *ch == '_') {
                    s.push(ch);
                    c.bump();
                }
                out.push(Token { tok: Tok::Name(s), line, col });
            }
            '(' | ')' | ',' | '=' | '+' | '-' | '*' | '/' | ':' | '.' => {
                c.bump();
                match ch {
                    '(' => depth += 1,
                    ')' => depth = depth.checked_sub(1).ok_or_else(|| syntax(line, col, "unbalanced ')'"))?,
                    _ => {}
                }
                out.push(Token { tok: Tok::Op(ch), line, col });
            }
            other => return Err(syntax(line, col, format!("unexpected character {other:?}"))),
        }
    }
    if depth > 0 {
        return Err(syntax(c.line, c.col, "unclosed '('"));
    }
    let (line, col) = (c.line, c.col);
    if out.last().is_some_and(|t| !matches!(t.tok, Tok::Newline | Tok::Dedent)) {
        out.push(Token { tok: Tok::Newline, line, col });
    }
    for _ in 1..indents.len() {
        out.push(Token { tok: Tok::Dedent, line, col });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

fn lex_string(c: &mut Cursor, quote: char) -> Result<String, InstructError> {
    let (line, col) = (c.line, c.col);
    c.bump();
    let mut s = String::new();
    loop {
        match c.bump() {
            None | Some('\n') => return Err(syntax(line, col, "unterminated string")),
            Some(ch) if ch == quote => return Ok(s),
            Some('\\') => match c.bump() {
                Some('n') => s.push('\n'),
                Some('t') => s.push('\t'),
                Some(e @ ('\\' | '\'' | '"')) => s.push(e),
                Some(other) => {
                    s.push('\\');
                    s.push(other);
                }
                None => return Err(syntax(line, col, "unterminated string")),
            },
            Some(ch) => s.push(ch),
        }
    }
}

fn lex_number(c: &mut Cursor) -> Result<f64, InstructError> {
    let (line, col) = (c.line, c.col);
    let mut s = String::new();
    let digits = |c: &mut Cursor, s: &mut String| {
        while let Some(d) = c.peek().filter(char::is_ascii_digit) {
            s.push(d);
            c.bump();
        }
    };
    digits(c, &mut s);
    if c.peek() == Some('.') {
        s.push('.');
        c.bump();
        digits(c, &mut s);
    }
    if matches!(c.peek(), Some('e' | 'E')) {
        let sign = c.peek_at(1).filter(|ch| *ch == '+' || *ch == '-');
        let next = c.peek_at(if sign.is_some() { 2 } else { 1 });
        if next.is_some_and(|d| d.is_ascii_digit()) {
            s.push('e');
            c.bump();
            if let Some(sg) = sign {
                s.push(sg);
                c.bump();
            }
            digits(c, &mut s);
        }
    }
    if c.peek().is_some_and(|ch| ch.is_alphabetic() || ch == '_') {
        return Err(syntax(line, col, format!("malformed number {s:?}")));
    }
    s.parse().map_err(|_| syntax(line, col, format!("malformed number {s:?}")))
}
