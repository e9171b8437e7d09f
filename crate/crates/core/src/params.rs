//! Named parameter trees.
//!
//! Every parameter struct exposes its tensors under dotted names through
//! [`ParamTree`]; [`Bind`] records the same tensors on a tape under the same
//! names so gradients can be routed back by name.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub trait ParamTree<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Adds gradients keyed by full parameter name into each tensor's grad buffer.
    fn accumulate_grads(&mut self, prefix: &str, grads: &HashMap<String, Vec<T>>) -> Result<()> {
        let mut res = Ok(());
        self.visit_mut(prefix, &mut |name, t| {
            if let Some(g) = grads.get(&name) {
                if let Err(e) = t.accumulate_grad(g) {
                    res = Err(e);
                }
            }
        });
        res
    }

    fn zero_grads(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }

    /// Overwrites every tensor from `src`, requiring identical shapes. Names
    /// missing from `src` are an error.
    fn load_named(&mut self, prefix: &str, src: &HashMap<String, Tensor<T>>) -> Result<()> {
        let mut res = Ok(());
        self.visit_mut(prefix, &mut |name, t| {
            if res.is_err() {
                return;
            }
            match src.get(&name) {
                Some(s) if s.shape() == t.shape() => t.data_mut().copy_from_slice(s.data()),
                Some(s) => {
                    res = Err(Error::Shape {
                        op: "load_named",
                        lhs: t.shape().to_vec(),
                        rhs: s.shape().to_vec(),
                    })
                }
                None => res = Err(Error::Checkpoint(format!("missing tensor `{name}`"))),
            }
        });
        res
    }
}

/// Records a parameter tree on a tape.
pub trait Bind<T: Real> {
    type Vars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> Self::Vars;
}

impl<T: Real> ParamTree<T> for Tensor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(prefix.to_string(), self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(prefix.to_string(), self)
    }
}

impl<T: Real> Bind<T> for Tensor<T> {
    type Vars = Var;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> Var {
        tape.param(prefix, self)
    }
}

impl<T: Real, P: ParamTree<T>> ParamTree<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Real, P: Bind<T>> Bind<T> for Vec<P> {
    type Vars = Vec<P::Vars>;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> Self::Vars {
        self.iter()
            .enumerate()
            .map(|(i, p)| p.bind(tape, &join(prefix, &i.to_string())))
            .collect()
    }
}

/// Glorot-uniform matrix.
pub fn xavier<T: Real>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(&[fan_in, fan_out], -a, a, rng)
}

/// Affine map x·W + b over rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real = f64> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl<T: Real> Linear<T> {
    pub fn new(fan_in: usize, fan_out: usize, bias: bool, rng: &mut Rng) -> Self {
        Linear {
            weight: xavier(fan_in, fan_out, rng),
            bias: bias.then(|| Tensor::zeros(&[fan_out])),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: bias.then(|| Tensor::zeros(&[fan_out])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl LinearVars {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        match self.bias {
            Some(b) => tape.add_row_bias(y, b),
            None => Ok(y),
        }
    }
}

impl<T: Real> ParamTree<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

impl<T: Real> Bind<T> for Linear<T> {
    type Vars = LinearVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> LinearVars {
        LinearVars {
            weight: tape.param(join(prefix, "weight"), &self.weight),
            bias: self.bias.as_ref().map(|b| tape.param(join(prefix, "bias"), b)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T: Real = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl<T: Real> LayerNormParams<T> {
    pub fn new(d: usize) -> Self {
        LayerNormParams {
            gamma: Tensor::ones(&[d]),
            beta: Tensor::zeros(&[d]),
        }
    }
}

impl LayerNormVars {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma, self.beta, T::from_f64(LN_EPS))
    }
}

impl<T: Real> ParamTree<T> for LayerNormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

impl<T: Real> Bind<T> for LayerNormParams<T> {
    type Vars = LayerNormVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> LayerNormVars {
        LayerNormVars {
            gamma: tape.param(join(prefix, "gamma"), &self.gamma),
            beta: tape.param(join(prefix, "beta"), &self.beta),
        }
    }
}

/// Checks that binding records exactly the names the tree visits, in order.
#[cfg(test)]
pub(crate) fn assert_bind_matches_visit<T: Real, P: ParamTree<T> + Bind<T>>(p: &P, prefix: &str) {
    let mut tape = Tape::<T>::new();
    p.bind(&mut tape, prefix);
    let bound: Vec<String> = tape.param_names().map(str::to_string).collect();
    let visited: Vec<String> = p.named_tensors(prefix).into_iter().map(|(n, _)| n).collect();
    assert_eq!(bound, visited);
}
