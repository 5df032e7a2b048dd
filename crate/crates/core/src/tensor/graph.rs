use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the forward inputs, the forward output and the gradient
/// of the loss with respect to that output. It returns one optional gradient per
/// input; entries whose `needs` flag is false may be `None`.
pub trait Function<T: Real>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<Var>,
    func: Option<Box<dyn Function<T>>>,
}

/// A single-use reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and `backward` is a reverse sweep.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            parents: Vec::new(),
            func: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A tracked leaf whose gradient will be populated by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records `output = f(inputs)`. The output must be finite.
    pub fn apply<F: Function<T> + 'static>(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        func: F,
    ) -> Result<Var> {
        output.ensure_finite(func.name())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: output,
            grad: None,
            requires_grad,
            parents: if requires_grad {
                inputs.to_vec()
            } else {
                Vec::new()
            },
            func: if requires_grad {
                Some(Box::new(func))
            } else {
                None
            },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Populates gradients of every tracked node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Graph(
                "loss does not depend on any tracked tensor".into(),
            ));
        }
        let shape = node.value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::ones(&shape));

        for i in (0..=loss.0).rev() {
            if self.nodes[i].func.is_none() {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let parents = self.nodes[i].parents.clone();
            let needs: Vec<bool> = parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let inputs: Vec<&Tensor<T>> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let func = self.nodes[i].func.as_ref().expect("checked above");
            let grads = func.backward(&inputs, &self.nodes[i].value, &grad, &needs)?;
            let name = func.name();
            drop(inputs);

            for ((p, g), need) in parents.iter().zip(grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                g.ensure_finite(name)?;
                let slot = &mut self.nodes[p.0];
                if g.shape() != slot.value.shape() {
                    return Err(Error::Graph(format!(
                        "{name}: gradient shape {:?} does not match input {:?}",
                        g.shape(),
                        slot.value.shape()
                    )));
                }
                match &mut slot.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    None => slot.grad = Some(g),
                }
            }
            // Intermediate gradients are released; leaves keep theirs.
        }
        Ok(())
    }
}
