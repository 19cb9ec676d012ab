//! S-expression trees as emitted by the extraction side.
//!
//! The grammar is deliberately small: bare atoms, double-quoted atoms with
//! the escapes `\"`, `\\` and `\n`, and nested lists. Parsing and printing
//! are iterative so arbitrarily deep trees never touch the call stack.

use std::fmt;

use thiserror::Error;

/// A node in an S-expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SExp {
    Atom(String),
    List(Vec<SExp>),
}

/// 1-based line/column of a character in the parser input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unbalanced parenthesis at {0}")]
    UnbalancedParen(Position),
    #[error("unterminated string starting at {0}")]
    UnterminatedString(Position),
    #[error("invalid escape sequence at {0}")]
    InvalidEscape(Position),
    #[error("empty quoted atom at {0}")]
    EmptyAtom(Position),
    #[error("expected at least one expression, found none")]
    EmptyInput,
}

impl SExp {
    pub fn atom(text: impl Into<String>) -> Self {
        SExp::Atom(text.into())
    }

    pub fn list(children: impl IntoIterator<Item = SExp>) -> Self {
        SExp::List(children.into_iter().collect())
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            SExp::Atom(a) => Some(a),
            SExp::List(_) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExp]> {
        match self {
            SExp::Atom(_) => None,
            SExp::List(items) => Some(items),
        }
    }

    /// The leading atom of a list node, e.g. `Prod` for `(Prod x y)`.
    pub fn head(&self) -> Option<&str> {
        self.as_list()
            .and_then(|items| items.first())
            .and_then(SExp::as_atom)
    }

    /// Number of tokens `linearize` would produce, computed without allocating them.
    pub fn token_count(&self) -> usize {
        let mut count = 0;
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                SExp::Atom(_) => count += 1,
                SExp::List(items) => {
                    count += 2;
                    stack.extend(items.iter());
                }
            }
        }
        count
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(self, 1usize)];
        while let Some((node, d)) = stack.pop() {
            max = max.max(d);
            if let SExp::List(items) = node {
                stack.extend(items.iter().map(|c| (c, d + 1)));
            }
        }
        max
    }
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || c == '(' || c == ')' || c == '"'
}

fn needs_quoting(text: &str) -> bool {
    text.is_empty() || text.chars().any(is_delimiter)
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn new(input: &'a str) -> Self {
        Cursor {
            chars: input.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn position(&self) -> Position {
        Position {
            line: self.line,
            column: self.column,
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }
}

/// Parses every top-level expression in `input`, in order.
pub fn parse(input: &str) -> Result<Vec<SExp>, ParseError> {
    Ok(parse_spanned(input)?.into_iter().map(|(_, t)| t).collect())
}

/// Like [`parse`], also returning where each top-level expression starts.
pub fn parse_spanned(input: &str) -> Result<Vec<(Position, SExp)>, ParseError> {
    let mut cur = Cursor::new(input);
    let mut done = Vec::new();
    // Open lists awaiting their closing paren, with the position of the `(`.
    let mut stack: Vec<(Position, Vec<SExp>)> = Vec::new();

    loop {
        let Some(c) = cur.peek() else { break };
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        let pos = cur.position();
        let finished = match c {
            '(' => {
                cur.bump();
                stack.push((pos, Vec::new()));
                None
            }
            ')' => {
                cur.bump();
                let (open, items) = stack.pop().ok_or(ParseError::UnbalancedParen(pos))?;
                Some((open, SExp::List(items)))
            }
            '"' => {
                cur.bump();
                let mut text = String::new();
                loop {
                    let esc_pos = cur.position();
                    match cur.bump() {
                        None => return Err(ParseError::UnterminatedString(pos)),
                        Some('"') => break,
                        Some('\\') => match cur.bump() {
                            Some('"') => text.push('"'),
                            Some('\\') => text.push('\\'),
                            Some('n') => text.push('\n'),
                            Some(_) => return Err(ParseError::InvalidEscape(esc_pos)),
                            None => return Err(ParseError::UnterminatedString(pos)),
                        },
                        Some(ch) => text.push(ch),
                    }
                }
                if text.is_empty() {
                    return Err(ParseError::EmptyAtom(pos));
                }
                Some((pos, SExp::Atom(text)))
            }
            _ => {
                let mut text = String::new();
                while let Some(ch) = cur.peek() {
                    if is_delimiter(ch) {
                        break;
                    }
                    text.push(ch);
                    cur.bump();
                }
                Some((pos, SExp::Atom(text)))
            }
        };
        if let Some((start, node)) = finished {
            match stack.last_mut() {
                Some((_, items)) => items.push(node),
                None => done.push((start, node)),
            }
        }
    }

    if let Some((pos, _)) = stack.pop() {
        // Report the outermost unclosed paren.
        let outer = stack.first().map(|(p, _)| *p).unwrap_or(pos);
        return Err(ParseError::UnbalancedParen(outer));
    }
    Ok(done)
}

/// Parses exactly one expression, rejecting input that holds none.
pub fn parse_one(input: &str) -> Result<SExp, ParseError> {
    parse(input)?.into_iter().next().ok_or(ParseError::EmptyInput)
}

fn push_atom(out: &mut String, text: &str) {
    if !needs_quoting(text) {
        out.push_str(text);
        return;
    }
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Canonical single-space rendering.
pub fn print(t: &SExp) -> String {
    let mut out = String::new();
    for tok in Tokens::new(t) {
        match tok {
            Token::Open => {
                if !out.is_empty() && !out.ends_with('(') {
                    out.push(' ');
                }
                out.push('(');
            }
            Token::Close => out.push(')'),
            Token::Atom(a) => {
                if !out.is_empty() && !out.ends_with('(') {
                    out.push(' ');
                }
                push_atom(&mut out, a);
            }
        }
    }
    out
}

impl fmt::Display for SExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

/// Depth-first token stream over a tree, driven by an explicit stack.
struct Tokens<'a> {
    stack: Vec<Frame<'a>>,
}

enum Frame<'a> {
    Node(&'a SExp),
    Children(std::slice::Iter<'a, SExp>),
}

impl<'a> Tokens<'a> {
    fn new(root: &'a SExp) -> Self {
        Tokens {
            stack: vec![Frame::Node(root)],
        }
    }
}

impl<'a> Iterator for Tokens<'a> {
    type Item = Token<'a>;

    fn next(&mut self) -> Option<Token<'a>> {
        loop {
            match self.stack.pop()? {
                Frame::Node(SExp::Atom(a)) => return Some(Token::Atom(a)),
                Frame::Node(SExp::List(items)) => {
                    self.stack.push(Frame::Children(items.iter()));
                    return Some(Token::Open);
                }
                Frame::Children(mut it) => match it.next() {
                    Some(child) => {
                        self.stack.push(Frame::Children(it));
                        self.stack.push(Frame::Node(child));
                    }
                    None => return Some(Token::Close),
                },
            }
        }
    }
}

/// Flattens a tree into the parenthesized token sequence fed to encoders.
pub fn linearize(t: &SExp) -> Vec<String> {
    Tokens::new(t)
        .map(|tok| match tok {
            Token::Open => "(".to_string(),
            Token::Close => ")".to_string(),
            Token::Atom(a) => a.to_string(),
        })
        .collect()
}
