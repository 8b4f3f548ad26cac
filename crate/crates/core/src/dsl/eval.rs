use std::borrow::Cow;

use super::ast::BinOp;
use super::builtins::Value;
use super::check::{apply_binop, CheckedFunction, Node};
use crate::model::{ChannelSeries, SignalWindow};

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Output {
    pub fn len(&self) -> usize {
        match self {
            Output::Scalar(_) => 1,
            Output::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Output::Scalar(v) => v.is_finite(),
            Output::Vector(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// Tree nodes visited; never exceeds the function's node count.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingError {
    pub param: String,
    pub channel: String,
}

impl std::fmt::Display for BindingError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "parameter `{}` bound to missing channel `{}`", self.param, self.channel)
    }
}

impl std::error::Error for BindingError {}

/// Evaluates `f` on `window`, binding parameter i to channel
/// `binding[i]`.
pub fn evaluate_function(f: &CheckedFunction, window: &SignalWindow, binding: &[String]) -> Result<Output, BindingError> {
    assert_eq!(binding.len(), f.params().len(), "one channel per parameter");
    let mut series = Vec::with_capacity(binding.len());
    for (param, channel) in f.params().iter().zip(binding) {
        let s = window.channels.get(channel).ok_or_else(|| BindingError {
            param: param.clone(),
            channel: channel.clone(),
        })?;
        series.push(s);
    }
    Ok(evaluate_series(f, &series).0)
}

/// Evaluates with parameters bound positionally to `series`. Pure and
/// terminating: every node is visited at most once.
pub fn evaluate_series(f: &CheckedFunction, series: &[&ChannelSeries]) -> (Output, EvalStats) {
    let mut env: Vec<Option<Value<'_>>> = vec![None; f.slot_kinds.len()];
    for (slot, s) in series.iter().enumerate() {
        env[slot] = Some(Value::Vector {
            values: Cow::Borrowed(&s.values),
            fs: s.sample_rate,
        });
    }
    let mut stats = EvalStats::default();
    let out = match eval(&f.root, &mut env, &mut stats) {
        Value::Scalar(v) => Output::Scalar(v),
        Value::Vector { values, .. } => Output::Vector(values.into_owned()),
    };
    (out, stats)
}

fn eval<'a>(n: &Node, env: &mut Vec<Option<Value<'a>>>, stats: &mut EvalStats) -> Value<'a> {
    stats.steps += 1;
    match n {
        Node::Const(v) => Value::Scalar(*v),
        Node::Slot(s) => env[*s].clone().expect("slot bound before use"),
        Node::Let { slot, value, body } => {
            let v = eval(value, env, stats);
            env[*slot] = Some(v);
            eval(body, env, stats)
        }
        Node::Binary { op, lhs, rhs } => {
            let l = eval(lhs, env, stats);
            let r = eval(rhs, env, stats);
            binary(*op, l, r)
        }
        Node::Call { builtin, args } => {
            let vals: Vec<Value<'a>> = args.iter().map(|a| eval(a, env, stats)).collect();
            builtin.call(&vals)
        }
    }
}

fn binary<'a>(op: BinOp, l: Value<'a>, r: Value<'a>) -> Value<'a> {
    match (l, r) {
        (Value::Scalar(a), Value::Scalar(b)) => Value::Scalar(apply_binop(op, a, b)),
        (Value::Vector { values: a, fs }, Value::Vector { values: b, .. }) => {
            // Mismatched lengths cannot be aligned; NaN lets output
            // verification discard the function.
            let values = if a.len() == b.len() {
                a.iter().zip(b.iter()).map(|(x, y)| apply_binop(op, *x, *y)).collect()
            } else {
                vec![f64::NAN; a.len()]
            };
            Value::Vector {
                values: Cow::Owned(values),
                fs,
            }
        }
        _ => unreachable!("kinds checked"),
    }
}
