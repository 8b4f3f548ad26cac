//! Name resolution and kind checking. A function that checks is compiled
//! into a slot-resolved tree that the evaluator walks directly.

use std::fmt;

use super::ast::{BinOp, Expr, FunctionDef, Kind};
use super::builtins::{resolve, Builtin, ResolveError, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum CheckError {
    UnknownBuiltin { name: String },
    Arity { name: String, expected: Vec<usize>, found: usize },
    KindMismatch { detail: String },
    UnboundIdentifier { name: String },
    ReturnKind { declared: Kind, inferred: Kind },
    ArgumentRange { name: String, detail: String },
    DuplicateParameter { name: String },
}

impl CheckError {
    /// Short stable tag used in reports.
    pub fn class(&self) -> &'static str {
        match self {
            CheckError::UnknownBuiltin { .. } => "unknown-builtin",
            CheckError::Arity { .. } => "arity",
            CheckError::KindMismatch { .. } => "kind-mismatch",
            CheckError::UnboundIdentifier { .. } => "unbound-identifier",
            CheckError::ReturnKind { .. } => "return-kind-mismatch",
            CheckError::ArgumentRange { .. } => "argument-range",
            CheckError::DuplicateParameter { .. } => "duplicate-parameter",
        }
    }
}

impl fmt::Display for CheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckError::UnknownBuiltin { name } => write!(f, "unknown builtin `{name}`"),
            CheckError::Arity { name, expected, found } => {
                let exp: Vec<String> = expected.iter().map(ToString::to_string).collect();
                write!(f, "`{name}` takes {} argument(s), got {found}", exp.join(" or "))
            }
            CheckError::KindMismatch { detail } => write!(f, "kind mismatch: {detail}"),
            CheckError::UnboundIdentifier { name } => write!(f, "unbound identifier `{name}`"),
            CheckError::ReturnKind { declared, inferred } => {
                write!(f, "declared return kind {declared} but body is {inferred}")
            }
            CheckError::ArgumentRange { name, detail } => write!(f, "`{name}`: {detail}"),
            CheckError::DuplicateParameter { name } => write!(f, "duplicate parameter `{name}`"),
        }
    }
}

impl std::error::Error for CheckError {}

#[derive(Debug, Clone)]
pub(crate) enum Node {
    Const(f64),
    Slot(usize),
    Let {
        slot: usize,
        value: Box<Node>,
        body: Box<Node>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Node>,
        rhs: Box<Node>,
    },
    Call {
        builtin: &'static Builtin,
        args: Vec<Node>,
    },
}

impl Node {
    fn same(&self, other: &Node) -> bool {
        match (self, other) {
            (Node::Const(a), Node::Const(b)) => a.to_bits() == b.to_bits(),
            (Node::Slot(a), Node::Slot(b)) => a == b,
            (
                Node::Let { slot, value, body },
                Node::Let {
                    slot: s2,
                    value: v2,
                    body: b2,
                },
            ) => slot == s2 && value.same(v2) && body.same(b2),
            (Node::Binary { op, lhs, rhs }, Node::Binary { op: o2, lhs: l2, rhs: r2 }) => {
                op == o2 && lhs.same(l2) && rhs.same(r2)
            }
            (Node::Call { builtin, args }, Node::Call { builtin: b2, args: a2 }) => {
                std::ptr::eq(*builtin, *b2) && args.len() == a2.len() && args.iter().zip(a2).all(|(a, b)| a.same(b))
            }
            _ => false,
        }
    }
}

/// Result of constant folding a subtree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Folded {
    /// Parameter-independent scalar.
    Const(f64),
    /// Vector whose every element is this parameter-independent value.
    Fill(f64),
    Dynamic,
}

impl Folded {
    pub fn is_constant(self) -> bool {
        !matches!(self, Folded::Dynamic)
    }

    fn of_kind(kind: Kind, v: f64) -> Folded {
        match kind {
            Kind::Scalar => Folded::Const(v),
            Kind::Vector => Folded::Fill(v),
        }
    }

    fn value(self) -> Option<f64> {
        match self {
            Folded::Const(v) | Folded::Fill(v) => Some(v),
            Folded::Dynamic => None,
        }
    }
}

/// Total arithmetic: division by zero and any NaN operand give NaN;
/// `0 ^ 0` is 1.
pub fn apply_binop(op: BinOp, a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return f64::NAN;
    }
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                f64::NAN
            } else {
                a / b
            }
        }
        BinOp::Pow => a.powf(b),
    }
}

#[derive(Debug, Clone)]
pub struct CheckedFunction {
    def: FunctionDef,
    pub(crate) root: Node,
    pub(crate) slot_kinds: Vec<Kind>,
    node_count: usize,
}

impl CheckedFunction {
    pub fn def(&self) -> &FunctionDef {
        &self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn params(&self) -> &[String] {
        &self.def.params
    }

    pub fn return_kind(&self) -> Kind {
        self.def.return_kind
    }

    /// Upper bound on evaluator steps for one call.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// True when the body reads at least one parameter.
    pub fn references_parameter(&self) -> bool {
        fn walk(n: &Node, n_params: usize) -> bool {
            match n {
                Node::Const(_) => false,
                Node::Slot(s) => *s < n_params,
                Node::Let { value, body, .. } => walk(value, n_params) || walk(body, n_params),
                Node::Binary { lhs, rhs, .. } => walk(lhs, n_params) || walk(rhs, n_params),
                Node::Call { args, .. } => args.iter().any(|a| walk(a, n_params)),
            }
        }
        walk(&self.root, self.def.params.len())
    }

    /// Constant-folds the body. Folding is sound (a `Dynamic` result may
    /// still be constant, a constant result never depends on parameters)
    /// and absorbs `e * 0`, `0 / e`, `e ^ 0` and `e - e`.
    pub fn fold(&self) -> Folded {
        let mut env = vec![Folded::Dynamic; self.slot_kinds.len()];
        fold_node(&self.root, &mut env, &self.slot_kinds)
    }
}

fn node_kind(n: &Node, kinds: &[Kind]) -> Kind {
    match n {
        Node::Const(_) => Kind::Scalar,
        Node::Slot(s) => kinds[*s],
        Node::Let { body, .. } => node_kind(body, kinds),
        Node::Binary { lhs, .. } => node_kind(lhs, kinds),
        Node::Call { builtin, .. } => builtin.ret,
    }
}

fn fold_node(n: &Node, env: &mut Vec<Folded>, kinds: &[Kind]) -> Folded {
    match n {
        Node::Const(v) => Folded::Const(*v),
        Node::Slot(s) => env[*s],
        Node::Let { slot, value, body } => {
            let v = fold_node(value, env, kinds);
            env[*slot] = v;
            fold_node(body, env, kinds)
        }
        Node::Binary { op, lhs, rhs } => {
            let l = fold_node(lhs, env, kinds);
            let r = fold_node(rhs, env, kinds);
            let kind = node_kind(lhs, kinds);
            let is_zero = |f: Folded| f.value() == Some(0.0);
            match (l.value(), r.value()) {
                (Some(a), Some(b)) => Folded::of_kind(kind, apply_binop(*op, a, b)),
                _ => match op {
                    BinOp::Mul if is_zero(l) || is_zero(r) => Folded::of_kind(kind, 0.0),
                    BinOp::Div if is_zero(l) => Folded::of_kind(kind, 0.0),
                    BinOp::Pow if is_zero(r) => Folded::of_kind(kind, 1.0),
                    BinOp::Sub if lhs.same(rhs) => Folded::of_kind(kind, 0.0),
                    _ => Folded::Dynamic,
                },
            }
        }
        Node::Call { builtin, args } => {
            let folded: Vec<Folded> = args.iter().map(|a| fold_node(a, env, kinds)).collect();
            if folded.iter().all(|f| matches!(f, Folded::Const(_))) {
                let vals: Vec<Value<'_>> = folded.iter().map(|f| Value::Scalar(f.value().unwrap())).collect();
                Folded::Const(builtin.call(&vals).scalar())
            } else {
                Folded::Dynamic
            }
        }
    }
}

struct Checker {
    scopes: Vec<(String, usize)>,
    kinds: Vec<Kind>,
    /// Folded value of every slot, for static argument checks.
    folded: Vec<Folded>,
}

impl Checker {
    fn lookup(&self, name: &str) -> Option<usize> {
        self.scopes.iter().rev().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    fn check(&mut self, e: &Expr) -> Result<(Node, Kind), CheckError> {
        match e {
            Expr::Number(v) => Ok((Node::Const(*v), Kind::Scalar)),
            Expr::Ident(name) => {
                let slot = self
                    .lookup(name)
                    .ok_or_else(|| CheckError::UnboundIdentifier { name: name.clone() })?;
                Ok((Node::Slot(slot), self.kinds[slot]))
            }
            Expr::Let { name, value, body } => {
                let (value, vk) = self.check(value)?;
                let slot = self.kinds.len();
                self.kinds.push(vk);
                let mut env = self.folded.clone();
                let f = fold_node(&value, &mut env, &self.kinds);
                self.folded.push(f);
                self.scopes.push((name.clone(), slot));
                let (body, bk) = self.check(body)?;
                self.scopes.pop();
                Ok((
                    Node::Let {
                        slot,
                        value: Box::new(value),
                        body: Box::new(body),
                    },
                    bk,
                ))
            }
            Expr::Binary { op, lhs, rhs } => {
                let (l, lk) = self.check(lhs)?;
                let (r, rk) = self.check(rhs)?;
                if lk != rk {
                    return Err(CheckError::KindMismatch {
                        detail: format!("`{}` between {lk} and {rk}", op.symbol()),
                    });
                }
                Ok((
                    Node::Binary {
                        op: *op,
                        lhs: Box::new(l),
                        rhs: Box::new(r),
                    },
                    lk,
                ))
            }
            Expr::Call { name, args } => {
                let mut nodes = Vec::with_capacity(args.len());
                let mut kinds = Vec::with_capacity(args.len());
                for a in args {
                    let (n, k) = self.check(a)?;
                    nodes.push(n);
                    kinds.push(k);
                }
                let builtin = resolve(name, &kinds).map_err(|e| match e {
                    ResolveError::Unknown => CheckError::UnknownBuiltin { name: name.clone() },
                    ResolveError::Arity { expected } => CheckError::Arity {
                        name: name.clone(),
                        expected,
                        found: args.len(),
                    },
                    ResolveError::Kinds { expected } => CheckError::KindMismatch {
                        detail: format!(
                            "`{name}` called with ({}), expected {}",
                            kinds.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
                            expected.join(" or ")
                        ),
                    },
                })?;
                if let Some(arg_check) = builtin.arg_check {
                    let mut env = self.folded.clone();
                    let consts: Vec<Option<f64>> = nodes
                        .iter()
                        .zip(builtin.params)
                        .map(|(n, k)| match (k, fold_node(n, &mut env, &self.kinds)) {
                            (Kind::Scalar, Folded::Const(v)) => Some(v),
                            _ => None,
                        })
                        .collect();
                    arg_check(&consts).map_err(|detail| CheckError::ArgumentRange {
                        name: name.clone(),
                        detail,
                    })?;
                }
                Ok((Node::Call { builtin, args: nodes }, builtin.ret))
            }
        }
    }
}

/// Verifies builtin names, arities and kinds, identifier binding, and
/// the declared return kind. Parameters are always vectors.
pub fn check_function(def: &FunctionDef) -> Result<CheckedFunction, CheckError> {
    let mut checker = Checker {
        scopes: Vec::new(),
        kinds: Vec::new(),
        folded: Vec::new(),
    };
    for (i, p) in def.params.iter().enumerate() {
        if def.params[..i].contains(p) {
            return Err(CheckError::DuplicateParameter { name: p.clone() });
        }
        checker.scopes.push((p.clone(), i));
        checker.kinds.push(Kind::Vector);
        checker.folded.push(Folded::Dynamic);
    }
    let (root, kind) = checker.check(&def.body)?;
    if kind != def.return_kind {
        return Err(CheckError::ReturnKind {
            declared: def.return_kind,
            inferred: kind,
        });
    }
    debug_assert_eq!(node_kind(&root, &checker.kinds), kind);
    Ok(CheckedFunction {
        def: def.clone(),
        root,
        slot_kinds: checker.kinds,
        node_count: def.body.node_count(),
    })
}
