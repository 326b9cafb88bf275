//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! A [`Tensor`] is an immutable value plus the recipe that produced it. Ops
//! build a DAG as they run; [`Tensor::backward`] walks it in reverse
//! topological order and accumulates gradients into every reachable tensor
//! that requires them. Gradient buffers are the only mutable state, so the
//! graph can be differentiated repeatedly (each call adds to the stored
//! gradients).
//!
//! Layout is row-major; 4-D data is `batch × channels × height × width`.

mod conv;
mod gradcheck;
mod norm;
mod ops;
mod param;
mod pool;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use conv::{conv2d, transposed_conv2d};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_MAX_COORDS, GRAD_CHECK_STEP};
pub use norm::{batch_norm2d, BatchStats, RunningStats, BN_EPS, BN_MOMENTUM};
pub use ops::{activation, add, concat_channels, mean, mul, scale, sum, Activation};
pub use param::{Init, ParamSpec};
pub use pool::{bilinear_upsample, max_pool2d, resample_axis, AxisSample};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Everything a backward closure may look at.
pub(crate) struct BackwardCtx<'a> {
    pub inputs: &'a [Tensor],
    pub output: &'a [f32],
    pub grad: &'a [f32],
}

/// Maps the output gradient to one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f32>>>>;

struct Node {
    id: u64,
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    inputs: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Handle to a node of the autodiff graph. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("op", &self.0.op)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} holds {n} values, got {len}"),
        ));
    }
    Ok(())
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op: "leaf",
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            inputs: Vec::new(),
            backward: None,
        }))
    }

    /// A constant (no gradient) tensor.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        check_len(&shape, data.len())?;
        Ok(Self::leaf(shape, data, false))
    }

    /// A leaf that collects gradients.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        check_len(&shape, data.len())?;
        Ok(Self::leaf(shape, data, true))
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn scalar(value: f32) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Result of an op. The graph edge is only kept when some input needs a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let (inputs, backward) = if requires_grad {
            (inputs, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op,
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            inputs,
            backward,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op(&self) -> &'static str {
        self.0.op
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        match self.0.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape("item", format!("{:?} is not a scalar", self.shape()))),
        }
    }

    /// Extents of a rank-4 tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape() {
            [b, c, h, w] => Ok([b, c, h, w]),
            ref s => Err(Error::shape("dims4", format!("expected rank 4, got {s:?}"))),
        }
    }

    /// Copy of the accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    /// Back-propagate from a single-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got {:?}", self.shape()),
            ));
        }
        self.backward_with(&[1.0])
    }

    /// Back-propagate an explicit output gradient (vector-Jacobian product).
    pub fn backward_with(&self, seed: &[f32]) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(Error::shape(
                "backward",
                format!("seed has {} values for {:?}", seed.len(), self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), seed.to_vec());

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(backward) = &t.0.backward {
                let ctx = BackwardCtx {
                    inputs: &t.0.inputs,
                    output: &t.0.data,
                    grad: &g,
                };
                let input_grads = backward(&ctx);
                debug_assert_eq!(input_grads.len(), t.0.inputs.len(), "op {}", t.op());
                for (input, ig) in t.0.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), input.numel(), "op {}", t.op());
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), ig);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Post-order over the gradient-carrying subgraph (inputs before consumers).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in &t.0.inputs {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn constants_do_not_record_graph() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = add(&a, &a).unwrap();
        assert!(!b.requires_grad());
        b.backward_with(&[1.0, 1.0]).unwrap();
        assert!(a.grad().is_none());
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let x = Tensor::param(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let w = Tensor::param(vec![3], vec![1.5, 0.25, -0.7]).unwrap();
        let y = mul(&x, &w).unwrap();
        let z = activation(&y, Activation::Sigmoid).unwrap();
        let loss = sum(&z);
        loss.backward().unwrap();
        let once_x = x.grad().unwrap();
        let once_y = y.grad().unwrap();
        loss.backward().unwrap();
        let twice_x = x.grad().unwrap();
        let twice_y = y.grad().unwrap();
        for (a, b) in once_x.iter().zip(&twice_x) {
            assert_eq!(2.0 * a, *b);
        }
        for (a, b) in once_y.iter().zip(&twice_y) {
            assert_eq!(2.0 * a, *b);
        }
        assert_eq!(loss.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(x * x) reaches x twice through the same node.
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let f = sum(&mul(&x, &x).unwrap());
        f.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn every_reachable_node_gets_a_grad() {
        let x = Tensor::param(vec![1, 1, 2, 2], vec![0.5, -0.5, 1.0, 2.0]).unwrap();
        let a = activation(&x, Activation::LeakyRelu(0.1)).unwrap();
        let b = scale(&a, 3.0);
        let c = mean(&b);
        c.backward().unwrap();
        for t in [&x, &a, &b, &c] {
            let g = t.grad().expect("populated");
            assert_eq!(g.len(), t.numel());
        }
    }

    #[test]
    fn backward_requires_scalar_root() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(scale(&x, 2.0).backward().is_err());
    }
}
