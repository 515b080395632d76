//! The composition language.
//!
//! ```text
//! program := stmt*
//! stmt    := "let" ident "=" expr ";;"
//! expr    := "$" strlit | expr "#" strlit
//!          | "[" expr (";" expr)* "]" "$>" expr | expr "$>" expr
//!          | expr "$@" backend | ident
//! backend := ("CONTAINER" | "SCRIPT" | "UNIKERNEL") strlit
//! ```
//!
//! `#` binds tighter than `$>`, which binds tighter than `$@`. Both infix
//! operators associate to the left and `a $> b` means `[a] $> b`.
//! Comments are `(* ... *)` and may nest.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::publish::{BackendKind, BackendSpec, PublishError, Publisher};
use crate::service::Service;
use crate::store::{PackageRepo, VersionRef};
use crate::typecheck::{compose, create_service, ServiceDict, TypecheckError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Expression with its source position. Equality ignores the position.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Self {
            kind,
            span: Span::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Acquire(String),
    GetItem(Box<Expr>, String),
    ComposeList(Vec<Expr>, Box<Expr>),
    Deploy(Box<Expr>, BackendSpec),
    Var(String),
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub name: String,
    pub expr: Expr,
    pub span: Span,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.expr == other.expr
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    SyntaxError { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unterminated string literal")]
    UnterminatedString { line: usize, col: usize },
    #[error("{line}:{col}: unknown backend `{keyword}` (expected CONTAINER, SCRIPT or UNIKERNEL)")]
    UnknownBackendKeyword { line: usize, col: usize, keyword: String },
}

fn syntax(at: Span, message: impl Into<String>) -> ParseError {
    ParseError::SyntaxError {
        line: at.line,
        col: at.col,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Let,
    Ident(String),
    Str(String),
    Eq,
    Semi,
    SemiSemi,
    Dollar,
    Hash,
    Compose,
    Deploy,
    LBracket,
    RBracket,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Let => f.write_str("`let`"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::SemiSemi => f.write_str("`;;`"),
            Tok::Dollar => f.write_str("`$`"),
            Tok::Hash => f.write_str("`#`"),
            Tok::Compose => f.write_str("`$>`"),
            Tok::Deploy => f.write_str("`$@`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Lexer<'s> {
    chars: std::iter::Peekable<std::str::Chars<'s>>,
    pos: Span,
}

impl<'s> Lexer<'s> {
    fn new(src: &'s str) -> Self {
        Self {
            chars: src.chars().peekable(),
            pos: Span { line: 1, col: 1 },
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) -> Result<(), ParseError> {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('(') => {
                    let start = self.pos;
                    let mut ahead = self.chars.clone();
                    ahead.next();
                    if ahead.next() != Some('*') {
                        return Err(syntax(start, "unexpected `(`"));
                    }
                    self.bump();
                    self.bump();
                    let mut depth = 1;
                    while depth > 0 {
                        match self.bump() {
                            None => return Err(syntax(start, "unterminated comment")),
                            Some('(') if self.chars.peek() == Some(&'*') => {
                                self.bump();
                                depth += 1;
                            }
                            Some('*') if self.chars.peek() == Some(&')') => {
                                self.bump();
                                depth -= 1;
                            }
                            Some(_) => {}
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn string(&mut self, start: Span) -> Result<String, ParseError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => {
                    return Err(ParseError::UnterminatedString {
                        line: start.line,
                        col: start.col,
                    })
                }
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some(c @ ('"' | '\\')) => out.push(c),
                    None => {
                        return Err(ParseError::UnterminatedString {
                            line: start.line,
                            col: start.col,
                        })
                    }
                    Some(c) => return Err(syntax(self.pos, format!("unsupported escape `\\{c}`"))),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn next_token(&mut self) -> Result<(Tok, Span), ParseError> {
        self.skip_trivia()?;
        let start = self.pos;
        let Some(c) = self.bump() else {
            return Ok((Tok::Eof, start));
        };
        let tok = match c {
            '=' => Tok::Eq,
            '#' => Tok::Hash,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ';' if self.chars.peek() == Some(&';') => {
                self.bump();
                Tok::SemiSemi
            }
            ';' => Tok::Semi,
            '$' => match self.chars.peek() {
                Some('>') => {
                    self.bump();
                    Tok::Compose
                }
                Some('@') => {
                    self.bump();
                    Tok::Deploy
                }
                _ => Tok::Dollar,
            },
            '"' => Tok::Str(self.string(start)?),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut id = String::from(c);
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' || c == '\'' {
                        id.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                if id == "let" {
                    Tok::Let
                } else {
                    Tok::Ident(id)
                }
            }
            c => return Err(syntax(start, format!("unexpected character `{c}`"))),
        };
        Ok((tok, start))
    }
}

struct Parser<'s> {
    lexer: Lexer<'s>,
    tok: Tok,
    at: Span,
}

impl<'s> Parser<'s> {
    fn new(src: &'s str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let (tok, at) = lexer.next_token()?;
        Ok(Self { lexer, tok, at })
    }

    fn advance(&mut self) -> Result<(Tok, Span), ParseError> {
        let (tok, at) = self.lexer.next_token()?;
        Ok((
            std::mem::replace(&mut self.tok, tok),
            std::mem::replace(&mut self.at, at),
        ))
    }

    fn expect(&mut self, want: Tok) -> Result<Span, ParseError> {
        if self.tok == want {
            Ok(self.advance()?.1)
        } else {
            Err(syntax(self.at, format!("expected {want}, found {}", self.tok)))
        }
    }

    fn string(&mut self, what: &str) -> Result<String, ParseError> {
        match self.advance()? {
            (Tok::Str(s), _) => Ok(s),
            (t, at) => Err(syntax(at, format!("expected {what} string, found {t}"))),
        }
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.expect(Tok::Let)?;
        let name = match self.advance()? {
            (Tok::Ident(n), _) => n,
            (t, at) => return Err(syntax(at, format!("expected identifier, found {t}"))),
        };
        self.expect(Tok::Eq)?;
        let expr = self.expr()?;
        self.expect(Tok::SemiSemi)?;
        Ok(Stmt { name, expr, span })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.compose()?;
        while self.tok == Tok::Deploy {
            let (_, span) = self.advance()?;
            let (kw, kw_at) = self.advance()?;
            let kind = match kw {
                Tok::Ident(k) => BackendKind::from_keyword(&k).ok_or(ParseError::UnknownBackendKeyword {
                    line: kw_at.line,
                    col: kw_at.col,
                    keyword: k,
                })?,
                t => return Err(syntax(kw_at, format!("expected backend keyword, found {t}"))),
            };
            let target_at = self.at;
            let target = self.string("backend target")?;
            let spec = BackendSpec::new(kind, target).map_err(|e| syntax(target_at, e.to_string()))?;
            lhs = Expr {
                kind: ExprKind::Deploy(Box::new(lhs), spec),
                span,
            };
        }
        Ok(lhs)
    }

    fn compose(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = if self.tok == Tok::LBracket {
            self.advance()?;
            let mut items = vec![self.expr()?];
            while self.tok == Tok::Semi {
                self.advance()?;
                items.push(self.expr()?);
            }
            self.expect(Tok::RBracket)?;
            if self.tok != Tok::Compose {
                return Err(syntax(
                    self.at,
                    format!("a service list must be followed by `$>`, found {}", self.tok),
                ));
            }
            let (_, span) = self.advance()?;
            let rhs = self.item()?;
            Expr {
                kind: ExprKind::ComposeList(items, Box::new(rhs)),
                span,
            }
        } else {
            self.item()?
        };
        while self.tok == Tok::Compose {
            let (_, span) = self.advance()?;
            let rhs = self.item()?;
            lhs = Expr {
                kind: ExprKind::ComposeList(vec![lhs], Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn item(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.tok == Tok::Hash {
            let (_, span) = self.advance()?;
            let name = self.string("service name")?;
            base = Expr {
                kind: ExprKind::GetItem(Box::new(base), name),
                span,
            };
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.advance()? {
            (Tok::Dollar, span) => {
                let r = self.string("package reference")?;
                Ok(Expr {
                    kind: ExprKind::Acquire(r),
                    span,
                })
            }
            (Tok::Ident(v), span) => Ok(Expr {
                kind: ExprKind::Var(v),
                span,
            }),
            (t, at) => Err(syntax(at, format!("expected `$`, `[` or an identifier, found {t}"))),
        }
    }
}

pub fn parse(src: &str) -> Result<Vec<Stmt>, ParseError> {
    let mut p = Parser::new(src)?;
    let mut out = Vec::new();
    while p.tok != Tok::Eof {
        out.push(p.stmt()?);
    }
    Ok(out)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if matches!(c, '"' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Acquire(r) => write!(f, "$ {}", quote(r)),
            ExprKind::Var(v) => f.write_str(v),
            ExprKind::GetItem(base, name) => write!(f, "{base} # {}", quote(name)),
            ExprKind::ComposeList(items, rhs) => {
                match items.as_slice() {
                    // a singleton needs no brackets unless it is a deployment
                    [one] if !matches!(one.kind, ExprKind::Deploy(..)) => write!(f, "{one}")?,
                    _ => {
                        f.write_str("[")?;
                        for (i, e) in items.iter().enumerate() {
                            if i > 0 {
                                f.write_str("; ")?;
                            }
                            write!(f, "{e}")?;
                        }
                        f.write_str("]")?;
                    }
                }
                write!(f, " $> {rhs}")
            }
            ExprKind::Deploy(e, spec) => write!(f, "{e} $@ {} {}", spec.kind.keyword(), quote(&spec.target)),
        }
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "let {} = {};;", self.name, self.expr)
    }
}

pub fn print(program: &[Stmt]) -> String {
    program.iter().map(|s| format!("{s}\n")).collect()
}

/// A value bound by a statement.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Dict(ServiceDict),
    Service(Service),
    Uri(String),
    /// A deployment validated in check mode but not carried out.
    Planned {
        service: Service,
        backend: BackendSpec,
    },
}

impl Value {
    pub fn describe(&self) -> &'static str {
        match self {
            Value::Dict(_) => "service dictionary",
            Value::Service(_) => "service",
            Value::Uri(_) => "URI",
            Value::Planned { .. } => "planned deployment",
        }
    }

    pub fn as_service(&self) -> Option<&Service> {
        match self {
            Value::Service(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_uri(&self) -> Option<&str> {
        match self {
            Value::Uri(u) => Some(u),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Dict(d) => {
                let names: Vec<&str> = d.names().collect();
                match d.source() {
                    Some(src) => write!(f, "{src} {{{}}}", names.join(", ")),
                    None => write!(f, "{{{}}}", names.join(", ")),
                }
            }
            Value::Service(s) => write!(f, "{} : {}", s.name(), s.type_string()),
            Value::Uri(u) => f.write_str(u),
            Value::Planned { service, backend } => write!(
                f,
                "{} : {} (would deploy to {} {})",
                service.name(),
                service.type_string(),
                backend.kind,
                quote(&backend.target)
            ),
        }
    }
}

pub type Env = BTreeMap<String, Value>;

#[derive(Debug, Error)]
pub enum EvalErrorKind {
    #[error("unbound identifier `{0}`")]
    UnboundIdentifier(String),
    #[error("no service named `{0}`")]
    KeyNotFound(String),
    #[error("expected a {expected}, found a {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid package reference `{0}`")]
    BadReference(String),
    #[error(transparent)]
    Typecheck(#[from] TypecheckError),
    #[error(transparent)]
    Publish(#[from] PublishError),
}

#[derive(Debug, Error)]
#[error("{span}: {kind}")]
pub struct EvalError {
    pub span: Span,
    pub kind: EvalErrorKind,
}

fn at(span: Span) -> impl Fn(EvalErrorKind) -> EvalError {
    move |kind| EvalError { span, kind }
}

struct Evaluator<'a> {
    env: Env,
    repo: &'a dyn PackageRepo,
    publisher: Option<&'a Publisher<'a>>,
}

impl Evaluator<'_> {
    fn service(&self, e: &Expr) -> Result<Service, EvalError> {
        match self.eval(e)? {
            Value::Service(s) => Ok(s),
            other => Err(at(e.span)(EvalErrorKind::WrongKind {
                expected: "service",
                found: other.describe(),
            })),
        }
    }

    fn eval(&self, e: &Expr) -> Result<Value, EvalError> {
        let err = at(e.span);
        match &e.kind {
            ExprKind::Var(v) => self
                .env
                .get(v)
                .cloned()
                .ok_or_else(|| err(EvalErrorKind::UnboundIdentifier(v.clone()))),
            ExprKind::Acquire(r) => {
                let r: VersionRef = r.parse().map_err(|_| err(EvalErrorKind::BadReference(r.clone())))?;
                Ok(Value::Dict(create_service(&r, self.repo).map_err(|e| err(e.into()))?))
            }
            ExprKind::GetItem(base, name) => match self.eval(base)? {
                Value::Dict(d) => d
                    .get(name)
                    .cloned()
                    .map(Value::Service)
                    .ok_or_else(|| err(EvalErrorKind::KeyNotFound(name.clone()))),
                other => Err(at(base.span)(EvalErrorKind::WrongKind {
                    expected: "service dictionary",
                    found: other.describe(),
                })),
            },
            ExprKind::ComposeList(items, rhs) => {
                let fs = items.iter().map(|i| self.service(i)).collect::<Result<Vec<_>, _>>()?;
                let g = self.service(rhs)?;
                compose(&fs, &g).map(Value::Service).map_err(|te| {
                    // point type errors at the offending list element
                    let span = match &te {
                        TypecheckError::TypeMismatch(t) => items.get(t.position).map_or(e.span, |i| i.span),
                        _ => e.span,
                    };
                    at(span)(te.into())
                })
            }
            ExprKind::Deploy(inner, backend) => {
                let service = self.service(inner)?;
                match self.publisher {
                    Some(p) => Ok(Value::Uri(
                        p.publish(&service, backend).map_err(|pe| err(pe.into()))?.uri,
                    )),
                    None => {
                        if let Some(r) = service.packages().iter().find(|r| r.is_latest()) {
                            return Err(err(PublishError::UnpinnedDependency(r.to_string()).into()));
                        }
                        Ok(Value::Planned {
                            service,
                            backend: backend.clone(),
                        })
                    }
                }
            }
        }
    }
}

/// Runs statements in order. Without a publisher, deployments are checked
/// but not performed and bind [`Value::Planned`].
pub fn eval(
    program: &[Stmt],
    env: Env,
    repo: &dyn PackageRepo,
    publisher: Option<&Publisher<'_>>,
) -> Result<Env, EvalError> {
    let mut ev = Evaluator { env, repo, publisher };
    for stmt in program {
        let v = ev.eval(&stmt.expr)?;
        ev.env.insert(stmt.name.clone(), v);
    }
    Ok(ev.env)
}

/// Parses and evaluates in check mode.
pub fn check(src: &str, repo: &dyn PackageRepo) -> Result<Env, DslError> {
    let program = parse(src)?;
    Ok(eval(&program, Env::new(), repo, None)?)
}

#[derive(Debug, Error)]
pub enum DslError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
