//! Recursive-descent parser. The token stream is cut at every `fn`
//! keyword and each segment is parsed on its own, so one malformed
//! function never takes its siblings down with it.

use std::collections::HashSet;

use super::ast::{BinOp, Expr, FeatureProgram, FunctionDef, Kind};
use super::lexer::{tokenize, Tok, Token};

const MAX_NESTING: usize = 200;
/// Bounds the size of any accepted function so every later recursive pass
/// over the tree stays shallow.
pub const MAX_ATOMS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// Name of the function the problem belongs to, when it got that far.
    pub function: Option<String>,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub program: FeatureProgram,
    pub diagnostics: Vec<ParseDiagnostic>,
}

pub fn parse_program(text: &str) -> ParseOutcome {
    let tokens = tokenize(text);
    let mut diagnostics = Vec::new();
    let mut functions: Vec<FunctionDef> = Vec::new();
    let mut names = HashSet::new();

    let starts: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.tok == Tok::Fn)
        .map(|(i, _)| i)
        .collect();
    let first = starts.first().copied().unwrap_or(tokens.len());
    if first > 0 {
        diagnostics.push(ParseDiagnostic {
            function: None,
            line: tokens[0].line,
            message: format!("unexpected {} before the first function", tokens[0].tok.describe()),
        });
    }
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(tokens.len());
        let mut p = Parser::new(&tokens[start..end]);
        match p.fndef() {
            Ok(def) => {
                if names.insert(def.name.clone()) {
                    functions.push(def);
                } else {
                    diagnostics.push(ParseDiagnostic {
                        function: Some(def.name.clone()),
                        line: tokens[start].line,
                        message: format!("duplicate function name `{}`", def.name),
                    });
                }
            }
            Err(e) => diagnostics.push(ParseDiagnostic {
                function: p.name.clone(),
                line: e.line,
                message: e.message,
            }),
        }
    }
    if functions.is_empty() {
        diagnostics.push(ParseDiagnostic {
            function: None,
            line: tokens.last().map_or(1, |t| t.line),
            message: "no function found".into(),
        });
    }
    ParseOutcome {
        program: FeatureProgram {
            functions,
            source_text: text.to_string(),
        },
        diagnostics,
    }
}

/// Parses text that must hold exactly one well-formed function.
pub fn parse_function(text: &str) -> Result<FunctionDef, ParseDiagnostic> {
    let mut outcome = parse_program(text);
    if outcome.program.functions.len() == 1 && outcome.diagnostics.is_empty() {
        Ok(outcome.program.functions.remove(0))
    } else {
        Err(outcome.diagnostics.into_iter().next().unwrap_or(ParseDiagnostic {
            function: None,
            line: 1,
            message: "expected exactly one function".into(),
        }))
    }
}

struct SyntaxError {
    line: usize,
    message: String,
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    depth: usize,
    atoms: usize,
    name: Option<String>,
}

type PResult<T> = Result<T, SyntaxError>;

impl<'t> Parser<'t> {
    fn new(tokens: &'t [Token]) -> Self {
        Self {
            tokens,
            pos: 0,
            depth: 0,
            atoms: 0,
            name: None,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map_or(1, |t| t.line)
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        let found = self.peek().map_or_else(|| "end of function".to_string(), Tok::describe);
        Err(SyntaxError {
            line: self.line(),
            message: format!("expected {expected}, found {found}"),
        })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.error(what)
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error(what),
        }
    }

    fn fndef(&mut self) -> PResult<FunctionDef> {
        self.expect(Tok::Fn, "`fn`")?;
        let name = self.ident("function name")?;
        self.name = Some(name.clone());
        self.expect(Tok::LParen, "`(`")?;
        let mut params = vec![self.ident("parameter name")?];
        while self.eat(&Tok::Comma) {
            params.push(self.ident("parameter name")?);
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        self.expect(Tok::Arrow, "`->`")?;
        let return_kind = match self.peek() {
            Some(Tok::Ident(k)) if k == "scalar" => Kind::Scalar,
            Some(Tok::Ident(k)) if k == "vector" => Kind::Vector,
            _ => return self.error("`scalar` or `vector`"),
        };
        self.pos += 1;
        self.expect(Tok::LBrace, "`{`")?;
        let body = self.expr()?;
        self.expect(Tok::RBrace, "`}`")?;
        if self.pos < self.tokens.len() {
            return self.error("end of function");
        }
        Ok(FunctionDef {
            name,
            params,
            return_kind,
            body,
        })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(SyntaxError {
                line: self.line(),
                message: "expression nested too deeply".into(),
            });
        }
        let out = if self.eat(&Tok::Let) {
            let name = self.ident("binding name")?;
            self.expect(Tok::Eq, "`=`")?;
            let value = self.expr()?;
            self.expect(Tok::Semi, "`;`")?;
            let body = self.expr()?;
            Ok(Expr::Let {
                name,
                value: Box::new(value),
                body: Box::new(body),
            })
        } else {
            self.arith()
        };
        self.depth -= 1;
        out
    }

    fn arith(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.factor()?);
        }
    }

    fn factor(&mut self) -> PResult<Expr> {
        let base = self.base()?;
        if self.eat(&Tok::Caret) {
            let exp = self.base()?;
            Ok(Expr::binary(BinOp::Pow, base, exp))
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> PResult<Expr> {
        self.atoms += 1;
        if self.atoms > MAX_ATOMS {
            return Err(SyntaxError {
                line: self.line(),
                message: format!("function body exceeds {MAX_ATOMS} operands"),
            });
        }
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(Expr::Number(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat(&Tok::LParen) {
                    let mut args = Vec::new();
                    if !self.eat(&Tok::RParen) {
                        args.push(self.expr()?);
                        while self.eat(&Tok::Comma) {
                            args.push(self.expr()?);
                        }
                        self.expect(Tok::RParen, "`,` or `)`")?;
                    }
                    Ok(Expr::Call { name, args })
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => self.error("a number, identifier, call or `(`"),
        }
    }
}
