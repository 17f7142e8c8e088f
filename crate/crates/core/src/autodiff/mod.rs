//! Reverse-mode differentiation over NHWC tensors.
//!
//! A [`Var`] is a node in a dynamically built graph. Nodes whose parents
//! carry no gradient are created as constants, so inference never retains
//! intermediate activations.

mod conv;
pub mod gradcheck;
mod norm;
mod ops;
mod real;
mod sample;
mod ssim;
mod tensor;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use conv::{conv2d, conv2d_transpose, ConvGeometry, Padding};
pub use norm::{batch_norm, instance_norm, BatchStats, NORM_EPS};
pub use ops::*;
pub use real::Real;
pub use sample::{bilinear_at, disparity_coords, grid_sample_bilinear};
pub use ssim::{gaussian_window, ssim, SsimWindow};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{op}: {detail}")]
pub struct ShapeError {
    pub op: &'static str,
    pub detail: String,
}

impl ShapeError {
    pub fn new(op: &'static str, detail: impl Into<String>) -> Self {
        ShapeError {
            op,
            detail: detail.into(),
        }
    }
}

pub type OpResult<T> = Result<Var<T>, ShapeError>;

/// Maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Var<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Tensor<T>>>,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    fn make(
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<Var<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    /// A trainable leaf.
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    /// A leaf that never receives gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    pub(crate) fn from_op(value: Tensor<T>, parents: Vec<Var<T>>, backward: BackwardFn<T>) -> Self {
        if parents.iter().any(Var::requires_grad) {
            Self::make(value, true, parents, Some(backward))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        self.0.value.data()[0]
    }

    /// Same value, detached from the graph, as a leaf with the given flag.
    pub fn detached(&self, requires_grad: bool) -> Self {
        let t = self.0.value.clone();
        if requires_grad {
            Self::leaf(t)
        } else {
            Self::constant(t)
        }
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<(), ShapeError> {
        if self.0.value.len() != 1 {
            return Err(ShapeError::new(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        // gather the sub-graph that carries gradient
        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.0.id) {
                continue;
            }
            stack.extend(v.0.parents.iter().cloned());
            nodes.push(v);
        }
        // ids grow with creation, so descending id is a reverse topological order
        nodes.sort_unstable_by_key(|v| std::cmp::Reverse(v.0.id));

        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.0.id, Tensor::full(self.shape(), T::one()));
        for node in nodes {
            let Some(g) = pending.remove(&node.0.id) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let grads = f(&g, &node.0.parents, &node.0.value);
                    debug_assert_eq!(grads.len(), node.0.parents.len());
                    for (p, pg) in node.0.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), p.shape());
                        match pending.get_mut(&p.0.id) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                pending.insert(p.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
