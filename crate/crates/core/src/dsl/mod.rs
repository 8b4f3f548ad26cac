//! FeatureScript: the small, total expression language feature extractors
//! are written in.
//!
//! ```text
//! program := fndef+
//! fndef   := "fn" IDENT "(" IDENT ("," IDENT)* ")" "->" ("scalar"|"vector") "{" expr "}"
//! expr    := "let" IDENT "=" expr ";" expr | arith
//! arith   := term (("+"|"-") term)*
//! term    := factor (("*"|"/") factor)*
//! factor  := base ("^" base)?
//! base    := NUMBER | IDENT | IDENT "(" args? ")" | "(" expr ")"
//! args    := expr ("," expr)*
//! ```
//!
//! Comments run from `#` to end of line. Parameters are channel series
//! (vectors); calls may only target builtins, so there is no recursion and
//! no loop, and every evaluation visits each node once.

pub mod ast;
pub mod builtins;
pub mod check;
pub mod eval;
pub mod lexer;
pub mod parser;

pub use ast::{BinOp, Expr, FeatureProgram, FunctionDef, Kind};
pub use builtins::{Builtin, Value, CATALOG};
pub use check::{check_function, CheckError, CheckedFunction, Folded};
pub use eval::{evaluate_function, evaluate_series, EvalStats, Output};
pub use parser::{parse_function, parse_program, ParseDiagnostic, ParseOutcome};

/// The grammar as shown to code-generating models.
pub const GRAMMAR: &str = r#"program := fndef+
fndef   := "fn" IDENT "(" IDENT ("," IDENT)* ")" "->" ("scalar"|"vector") "{" expr "}"
expr    := "let" IDENT "=" expr ";" expr | arith
arith   := term (("+"|"-") term)*
term    := factor (("*"|"/") factor)*
factor  := base ("^" base)?
base    := NUMBER | IDENT | IDENT "(" args? ")" | "(" expr ")"
args    := expr ("," expr)*
IDENT   := [a-z_][a-z0-9_]*      NUMBER := [0-9]+(.[0-9]+)?([eE][+-]?[0-9]+)?
comments: '#' to end of line"#;

/// One line per builtin signature, for prompts and docs.
pub fn catalog_listing() -> String {
    CATALOG
        .iter()
        .map(|b| format!("{}  # {}", b.signature(), b.summary))
        .collect::<Vec<_>>()
        .join("\n")
}
