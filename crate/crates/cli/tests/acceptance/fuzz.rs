//! Random well-kinded (and occasionally ill-kinded) FeatureScript ASTs.

use featloom::dsl::{BinOp, Expr, FunctionDef, Kind, CATALOG};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Gen {
    pub rng: ChaCha8Rng,
    lets: usize,
}

impl Gen {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, lets: 0 }
    }

    fn number(&mut self) -> f64 {
        match self.rng.random_range(0..5) {
            0 => self.rng.random_range(0..10) as f64,
            1 => self.rng.random::<f64>(),
            2 => (self.rng.random::<f64>() * 1000.0).round() / 100.0,
            3 => self.rng.random_range(1..6) as f64 * 0.25,
            _ => 10f64.powi(self.rng.random_range(-6..7)),
        }
    }

    fn expr(&mut self, kind: Kind, depth: usize, scope: &mut Vec<(String, Kind)>) -> Expr {
        let vars: Vec<String> = scope.iter().filter(|(_, k)| *k == kind).map(|(n, _)| n.clone()).collect();
        if depth == 0 {
            return match (kind, vars.choose(&mut self.rng)) {
                (Kind::Vector, Some(v)) => Expr::Ident(v.clone()),
                (Kind::Scalar, Some(v)) if self.rng.random_bool(0.4) => Expr::Ident(v.clone()),
                _ => Expr::Number(self.number()),
            };
        }
        match self.rng.random_range(0..10) {
            0 | 1 => {
                let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow].choose(&mut self.rng).unwrap();
                Expr::binary(op, self.expr(kind, depth - 1, scope), self.expr(kind, depth - 1, scope))
            }
            2 => {
                let name = format!("t{}", self.lets);
                self.lets += 1;
                let vk = if self.rng.random_bool(0.5) { Kind::Scalar } else { Kind::Vector };
                let value = self.expr(vk, depth - 1, scope);
                scope.push((name.clone(), vk));
                let body = self.expr(kind, depth - 1, scope);
                scope.pop();
                Expr::Let {
                    name,
                    value: Box::new(value),
                    body: Box::new(body),
                }
            }
            3 if !vars.is_empty() => Expr::Ident(vars.choose(&mut self.rng).unwrap().clone()),
            _ => {
                let options: Vec<_> = CATALOG.iter().filter(|b| b.ret == kind).collect();
                let b = options.choose(&mut self.rng).unwrap();
                let args = b.params.iter().map(|&k| self.expr(k, depth - 1, scope)).collect();
                Expr::call(b.name, args)
            }
        }
    }

    pub fn function(&mut self, index: usize) -> FunctionDef {
        self.lets = 0;
        let params: Vec<String> = if self.rng.random_bool(0.5) { vec!["ch1".into()] } else { vec!["ch1".into(), "ch2".into()] };
        let mut scope: Vec<(String, Kind)> = params.iter().map(|p| (p.clone(), Kind::Vector)).collect();
        let return_kind = if self.rng.random_bool(0.7) { Kind::Scalar } else { Kind::Vector };
        let depth = self.rng.random_range(1..7);
        let mut body = self.expr(return_kind, depth, &mut scope);
        if self.rng.random_bool(0.05) {
            // deliberately ill-kinded
            body = Expr::binary(BinOp::Add, body, Expr::Ident("ch1".into()));
        }
        FunctionDef {
            name: format!("ch1_f{index}"),
            params,
            return_kind,
            body,
        }
    }
}
