use std::cell::RefCell;
use std::fmt;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Backward rule of one recorded primitive: maps the gradient of the node's
/// output to gradients of its parents (in parent order). `None` means "no
/// contribution".
pub type GradFn<F> = Box<dyn FnOnce(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F> {
    value: Tensor<F>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn<F>>,
    tracked: bool,
}

/// Per-step record of primitive applications, in insertion (= topological)
/// order.
pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Real> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Vec::new(), None, true)
    }

    /// Registers a value that never receives gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Vec::new(), None, false)
    }

    fn push(&self, value: Tensor<F>, parents: Vec<usize>, grad_fn: Option<GradFn<F>>, tracked: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            grad_fn,
            tracked,
        });
        Var { tape: self, id }
    }

    /// Records a primitive. `make_grad` is only invoked when at least one
    /// parent is tracked, so untracked subgraphs keep no saved state.
    pub fn custom<'t>(
        &'t self,
        parents: &[Var<'t, F>],
        value: Tensor<F>,
        make_grad: impl FnOnce() -> GradFn<F>,
    ) -> Var<'t, F> {
        let tracked = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| {
                debug_assert!(std::ptr::eq(p.tape, self), "var from another tape");
                nodes[p.id].tracked
            })
        };
        if tracked {
            let ids = parents.iter().map(|p| p.id).collect();
            self.push(value, ids, Some(make_grad()), true)
        } else {
            self.push(value, Vec::new(), None, false)
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor<F> {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let value = self.value_of(loss.id);
        if value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", value.shape()),
            ));
        }
        self.backward_seeded(&[(loss, Tensor::full(value.shape(), F::one()))])
    }

    /// Reverse pass seeded with explicit output gradients (vector-Jacobian
    /// products). Each seed must match its var's shape. Consumes the saved
    /// state of every visited node.
    pub fn backward_seeded(&self, seeds: &[(Var<'_, F>, Tensor<F>)]) -> Result<Gradients<F>> {
        let n = self.len();
        let mut grads: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        let mut top = 0;
        for (var, seed) in seeds {
            let shape = self.shape_of(var.id);
            if seed.shape() != shape.as_slice() {
                return Err(Error::shape("backward_seeded", &shape, seed.shape()));
            }
            if !self.tracked(var.id) {
                continue;
            }
            accumulate(&mut grads[var.id], seed.clone());
            top = top.max(var.id + 1);
        }

        let mut out: Vec<Option<Tensor<F>>> = (0..n).map(|_| None).collect();
        for id in (0..top).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (grad_fn, parents, shape) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                (
                    node.grad_fn.take(),
                    std::mem::take(&mut node.parents),
                    node.value.shape().to_vec(),
                )
            };
            let g = Tensor::from_parts(shape, g);
            match grad_fn {
                Some(f) => {
                    let parent_grads = f(&g);
                    debug_assert_eq!(parent_grads.len(), parents.len());
                    for (pid, pg) in parents.into_iter().zip(parent_grads) {
                        if let Some(pg) = pg {
                            if self.tracked(pid) {
                                debug_assert_eq!(pg.shape(), self.shape_of(pid).as_slice());
                                accumulate(&mut grads[pid], pg);
                            }
                        }
                    }
                }
                None => out[id] = Some(g),
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, g: Tensor<F>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g.into_vec()),
    }
}

/// Gradients of the leaves reached by a reverse pass.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zeros when it was not reached.
    pub fn wrt(&self, var: Var<'_, F>) -> Tensor<F> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<F> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> F {
        self.value().item()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, F> {
        self.tape.constant(self.value())
    }
}
