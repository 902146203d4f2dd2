use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Gradients, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{named_rng, trunc_normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Technical,
    Aesthetic,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Technical, Branch::Aesthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Technical => "technical",
            Branch::Aesthetic => "aesthetic",
        }
    }

    pub fn other(self) -> Branch {
        match self {
            Branch::Technical => Branch::Aesthetic,
            Branch::Aesthetic => Branch::Technical,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Backbone weights shared between branches in Siamese mode.
    Backbone,
    /// Per-branch position-bias tables; never shared.
    PositionBias,
    /// Branch-specific fusion projections.
    Fusion,
    /// Regression head, shared by every quality map.
    Head,
    /// Auxiliary heads (pretraining classifier); not part of the VQA model.
    Aux,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the store's parameter list.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor<T>,
}

/// Named tensor registry with a per-branch binding table.
///
/// A logical name such as `stage0.block0.qkv.weight` resolves, per branch,
/// to a stored tensor. In shared mode both branches resolve to the same
/// entry; in unshared mode each has its own copy.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
    bindings: BTreeMap<(Branch, String), ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
            bindings: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            group,
            tensor: tensor.with_grad(),
        });
        Ok(id)
    }

    /// Inserts a freshly initialized tensor. The values depend only on
    /// `(seed, init_label)`, so copies initialized under the same label are
    /// equal.
    pub fn insert_init(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        init: Init,
        seed: u64,
        init_label: &str,
    ) -> Result<ParamId> {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::TruncNormal(std) => {
                let mut rng = named_rng(seed, init_label);
                let n = shape.iter().product::<usize>();
                let data = (0..n).map(|_| T::from_f64_lossy(trunc_normal(&mut rng, std))).collect();
                Tensor::new(shape.to_vec(), data)?
            }
        };
        self.insert(name, group, t)
    }

    pub fn bind(&mut self, branch: Branch, logical: impl Into<String>, id: ParamId) {
        self.bindings.insert((branch, logical.into()), id);
    }

    pub fn resolve(&self, branch: Branch, logical: &str) -> Result<ParamId> {
        self.bindings
            .get(&(branch, logical.to_string()))
            .copied()
            .ok_or_else(|| Error::Contract(format!("no {branch} binding for {logical}")))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Binding table entries `(branch, logical name, stored id)`.
    pub fn bindings(&self) -> impl Iterator<Item = (Branch, &str, ParamId)> {
        self.bindings.iter().map(|((b, n), &id)| (*b, n.as_str(), id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn count_group(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            bindings: self.bindings.clone(),
        }
    }
}

/// Per-graph mapping from stored parameters to graph leaves. Each stored
/// tensor gets exactly one leaf, so a tensor bound by both branches
/// collects gradient from both.
#[derive(Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<ParamId, Var>,
    frozen: bool,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    /// Leaves are created as constants; nothing will receive gradient.
    pub fn frozen() -> Self {
        Bindings {
            vars: BTreeMap::new(),
            frozen: true,
        }
    }

    pub fn var<T: Real>(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.vars.get(&id) {
            return v;
        }
        let t = store.get(id).tensor.clone();
        let v = if self.frozen { g.constant(t) } else { g.param(t) };
        self.vars.insert(id, v);
        v
    }

    pub fn branch<T: Real>(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, branch: Branch, logical: &str) -> Result<Var> {
        let id = store.resolve(branch, logical)?;
        Ok(self.var(g, store, id))
    }

    pub fn named<T: Real>(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.var(g, store, id))
    }

    pub fn var_of(&self, id: ParamId) -> Option<Var> {
        self.vars.get(&id).copied()
    }

    /// Adds the gradient of every bound parameter into its accumulator.
    pub fn accumulate<T: Real>(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (&id, &v) in &self.vars {
            if let Some(gr) = grads.get_ref(v) {
                store.get_mut(id).tensor.accumulate_grad(gr);
            }
        }
    }
}
