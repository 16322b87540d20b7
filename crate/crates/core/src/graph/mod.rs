//! Reverse-mode differentiation over an append-only expression tape.
//!
//! The backward sweep builds its vector-Jacobian products out of the same
//! primitive operations that built the forward pass, so gradients are
//! themselves graph expressions and can be differentiated again. A graph
//! created with [`Graph::first_order`] permits exactly one `grad` call;
//! [`Graph::higher_order`] permits arbitrarily nested ones.

pub mod ops;
pub mod plan;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use plan::LinearPlan;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Relu(usize),
    Matmul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Reshape(usize),
    Linear(usize, Rc<LinearPlan>),
}

#[derive(Debug)]
struct NodeRec {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
struct GraphInner {
    nodes: Vec<NodeRec>,
    higher_order: bool,
    grad_taken: bool,
}

/// Shared handle to one expression tape.
#[derive(Debug, Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// A value on some graph's tape.
#[derive(Debug, Clone)]
pub struct Var {
    graph: Graph,
    id: usize,
}

impl Graph {
    /// A tape that allows a single `grad` call (cheapest, catches misuse).
    pub fn first_order() -> Self {
        Self::build(false)
    }

    /// A tape whose gradients are further differentiable.
    pub fn higher_order() -> Self {
        Self::build(true)
    }

    fn build(higher_order: bool) -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                higher_order,
                grad_taken: false,
            })),
        }
    }

    fn same_tape(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{} produced a non-finite value", op_name(&op))));
        }
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(NodeRec { value, op });
        Ok(Var { graph: self.clone(), id: inner.nodes.len() - 1 })
    }

    /// Introduces a tensor onto the tape.
    pub fn var(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Introduces a scalar onto the tape.
    pub fn scalar(&self, value: f64) -> Result<Var> {
        self.var(Tensor::scalar(value))
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].value.shape().to_vec()
    }

    fn var_ref(&self, id: usize) -> Var {
        Var { graph: self.clone(), id }
    }

    /// ∂loss/∂wrt for each requested variable. The results live on the same
    /// tape; on a higher-order graph they may be differentiated again.
    pub fn grad(&self, loss: &Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if !self.same_tape(&loss.graph) {
            return Err(Error::GraphMismatch("loss belongs to a different graph"));
        }
        for v in wrt {
            if !self.same_tape(&v.graph) {
                return Err(Error::GraphMismatch("wrt variable belongs to a different graph"));
            }
        }
        {
            let mut inner = self.inner.borrow_mut();
            let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
            if !loss_shape.is_empty() {
                return Err(Error::NonScalarLoss(loss_shape));
            }
            if inner.grad_taken && !inner.higher_order {
                return Err(Error::GraphConsumed);
            }
            inner.grad_taken = true;
        }

        let mut adjoints: Vec<Option<Var>> = vec![None; loss.id + 1];
        adjoints[loss.id] = Some(self.var(Tensor::scalar(1.0))?);

        for id in (0..=loss.id).rev() {
            let Some(u) = adjoints[id].clone() else { continue };
            let op = self.inner.borrow().nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, a, u.clone())?;
                    accumulate(&mut adjoints, b, u)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, a, u.clone())?;
                    accumulate(&mut adjoints, b, u.neg()?)?;
                }
                Op::Mul(a, b) => {
                    accumulate(&mut adjoints, a, u.mul(&self.var_ref(b))?)?;
                    accumulate(&mut adjoints, b, u.mul(&self.var_ref(a))?)?;
                }
                Op::Div(a, b) => {
                    let bv = self.var_ref(b);
                    accumulate(&mut adjoints, a, u.div(&bv)?)?;
                    let db = u.mul(&self.var_ref(id))?.div(&bv)?.neg()?;
                    accumulate(&mut adjoints, b, db)?;
                }
                Op::Neg(a) => accumulate(&mut adjoints, a, u.neg()?)?,
                Op::AddScalar(a) => accumulate(&mut adjoints, a, u)?,
                Op::MulScalar(a, c) => accumulate(&mut adjoints, a, u.mul_scalar(c)?)?,
                Op::Exp(a) => accumulate(&mut adjoints, a, u.mul(&self.var_ref(id))?)?,
                Op::Log(a) => accumulate(&mut adjoints, a, u.div(&self.var_ref(a))?)?,
                Op::Sqrt(a) => {
                    let da = u.div(&self.var_ref(id))?.mul_scalar(0.5)?;
                    accumulate(&mut adjoints, a, da)?;
                }
                Op::Relu(a) => {
                    let mask = self.value_of(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut adjoints, a, u.mul(&self.var(mask)?)?)?;
                }
                Op::Matmul(a, b) => {
                    accumulate(&mut adjoints, a, u.matmul(&self.var_ref(b).t()?)?)?;
                    accumulate(&mut adjoints, b, self.var_ref(a).t()?.matmul(&u)?)?;
                }
                Op::Transpose(a) => accumulate(&mut adjoints, a, u.t()?)?,
                Op::Sum(a) => {
                    let shape = self.shape_of(a);
                    accumulate(&mut adjoints, a, u.apply_plan(plan::fill_from_scalar(&shape))?)?;
                }
                Op::Reshape(a) => {
                    let shape = self.shape_of(a);
                    accumulate(&mut adjoints, a, u.reshape(&shape)?)?;
                }
                Op::Linear(a, p) => {
                    accumulate(&mut adjoints, a, u.apply_plan(p.transposed())?)?;
                }
            }
        }

        wrt.iter()
            .map(|v| match adjoints.get(v.id).and_then(|a| a.clone()) {
                Some(g) => Ok(g),
                None => self.var(Tensor::zeros(&self.shape_of(v.id))),
            })
            .collect()
    }
}

fn accumulate(adjoints: &mut [Option<Var>], target: usize, delta: Var) -> Result<()> {
    adjoints[target] = Some(match adjoints[target].take() {
        Some(existing) => existing.add(&delta)?,
        None => delta,
    });
    Ok(())
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::AddScalar(..) => "add_scalar",
        Op::MulScalar(..) => "mul_scalar",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Sqrt(..) => "sqrt",
        Op::Relu(..) => "relu",
        Op::Matmul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Sum(..) => "sum",
        Op::Reshape(..) => "reshape",
        Op::Linear(..) => "linear_plan",
    }
}

impl Var {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// A copy of this node's value.
    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    pub fn scalar_value(&self) -> Result<f64> {
        self.value().scalar_value()
    }

    fn binary(
        &self,
        other: &Var,
        name: &'static str,
        op: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if !self.graph.same_tape(&other.graph) {
            return Err(Error::GraphMismatch("operands belong to different graphs"));
        }
        let inner = self.graph.inner.borrow();
        let (a, b) = (&inner.nodes[self.id].value, &inner.nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let value = a.zip(b, f)?;
        drop(inner);
        self.graph.push(value, op(self.id, other.id))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.graph.inner.borrow().nodes[self.id].value.map(f);
        self.graph.push(value, op)
    }

    pub fn neg(&self) -> Result<Var> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Var> {
        self.unary(Op::MulScalar(self.id, c), |x| x * c)
    }

    pub fn exp(&self) -> Result<Var> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(&self) -> Result<Var> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sqrt(&self) -> Result<Var> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn relu(&self) -> Result<Var> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        if !self.graph.same_tape(&other.graph) {
            return Err(Error::GraphMismatch("operands belong to different graphs"));
        }
        let value = {
            let inner = self.graph.inner.borrow();
            tensor::matmul(&inner.nodes[self.id].value, &inner.nodes[other.id].value)?
        };
        self.graph.push(value, Op::Matmul(self.id, other.id))
    }

    /// 2-D transpose.
    pub fn t(&self) -> Result<Var> {
        let value = {
            let inner = self.graph.inner.borrow();
            tensor::transpose2(&inner.nodes[self.id].value)?
        };
        self.graph.push(value, Op::Transpose(self.id))
    }

    /// Sum of all elements, as a scalar variable.
    pub fn sum(&self) -> Result<Var> {
        let value = Tensor::scalar(self.graph.inner.borrow().nodes[self.id].value.sum());
        self.graph.push(value, Op::Sum(self.id))
    }

    /// Mean of all elements.
    pub fn mean(&self) -> Result<Var> {
        let n = self.graph.inner.borrow().nodes[self.id].value.numel();
        self.sum()?.mul_scalar(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.graph.inner.borrow().nodes[self.id].value.reshape(shape)?;
        self.graph.push(value, Op::Reshape(self.id))
    }

    /// Applies a sparse linear map (see [`plan`]).
    pub fn apply_plan(&self, plan: Rc<LinearPlan>) -> Result<Var> {
        let value = plan.apply(&self.graph.inner.borrow().nodes[self.id].value)?;
        self.graph.push(value, Op::Linear(self.id, plan))
    }

    /// Σ xᵢ², as a scalar variable.
    pub fn sq_norm(&self) -> Result<Var> {
        self.mul(self)?.sum()
    }
}

/// Central-difference gradient of a scalar-valued function, the independent
/// oracle every analytic gradient in this crate is tested against.
pub fn finite_diff(
    f: impl Fn(&Tensor) -> Result<f64>,
    at: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(at.shape());
    let mut probe = at.clone();
    for i in 0..at.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    Ok(grad)
}

/// Largest elementwise mismatch between `got` and `want`, relative to the
/// largest magnitude in `want` (with an absolute floor so zero gradients
/// compare cleanly).
pub fn max_rel_error(got: &Tensor, want: &Tensor) -> f64 {
    let scale = want.data().iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-10);
    got.data()
        .iter()
        .zip(want.data())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}
