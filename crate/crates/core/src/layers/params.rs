//! Named parameter storage and binding onto a tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, Tape, Tensor, Var};

use super::LayerError;

/// Component a parameter belongs to, for counting and reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Embedding,
    Input,
    Attention,
    AttentionDiagonal,
    Alibi,
    Mlp,
    Norm,
    Preconditioner,
    StepSize,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    /// Whether weight decay applies.
    pub decay: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup, decay: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry {
            name,
            value,
            group,
            decay,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Normal init for a projection, decayed.
    pub fn add_randn<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        group: ParamGroup,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, Tensor::randn(shape, std, rng), group, true)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), LayerError> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(LayerError::Contract(format!(
                "{}: shape {:?} cannot be replaced by {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    /// Records every parameter as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.entries.iter().map(|e| tape.leaf(e.value.clone())).collect(),
        }
    }

    /// Records every parameter as a constant; no gradients flow to it.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.entries.iter().map(|e| tape.constant(e.value.clone())).collect(),
        }
    }
}

/// A store's parameters as tape variables.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn tape(&self) -> &'t Tape {
        self.vars[0].tape()
    }

    /// Gradients aligned with the store's entry order.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// `init_std` if given, else `1/sqrt(fan_in)`.
pub(crate) fn projection_std(init_std: Option<f64>, fan_in: usize) -> f64 {
    init_std.unwrap_or(1.0 / (fan_in as f64).sqrt())
}
