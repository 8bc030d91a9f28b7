//! Ordered traversal of trainable tensors.
//!
//! Every parameter struct lists its tensors through [`ParamTree::visit`] and
//! claims tape leaves in the same order through its `bind` method, so a
//! flat gradient list lines up with [`ParamTree::visit_mut`].

use crate::numerics::{Tape, Tensor, Var};

pub trait ParamTree {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>);

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }

    fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Places every tensor of `tree` on the tape and returns the leaves in visit order.
pub fn bind_leaves<T: ParamTree + ?Sized>(tree: &T, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
    tree.named_tensors()
        .into_iter()
        .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
        .collect()
}

/// Source of leaves for `bind` methods.
pub type Leaves<'a> = std::iter::Copied<std::slice::Iter<'a, Var>>;

pub(crate) fn take(leaves: &mut Leaves<'_>) -> Var {
    leaves.next().expect("bind order matches visit order")
}
