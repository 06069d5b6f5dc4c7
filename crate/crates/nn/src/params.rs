use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Mat,
    pub frozen: bool,
}

/// Named parameter table. Insertion order is the canonical order used by
/// checkpoints and the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, frozen: false });
        id
    }

    pub fn add_init(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init, rng: &mut impl Rng) -> ParamId {
        let value = match init {
            Init::Zeros => Mat::zeros(rows, cols),
            Init::Ones => Mat::filled(rows, cols, 1.0),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                Mat::from_fn(rows, cols, |_, _| dist.sample(rng))
            }
        };
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter().filter(move |(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id)
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients keyed by parameter. Parameters that did not take part in the
/// loss (or are frozen) have no entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(n_params: usize) -> Self {
        Grads { grads: vec![None; n_params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn accumulate_owned(&mut self, id: ParamId, g: Mat) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Largest absolute gradient entry over parameters whose name starts with `prefix`.
    pub fn max_abs_with_prefix(&self, store: &ParamStore, prefix: &str) -> f64 {
        self.iter()
            .filter(|(id, _)| store.get(*id).name.starts_with(prefix))
            .flat_map(|(_, g)| g.data().iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_and_prefixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let a = s.add_init("und.w", 2, 3, Init::Normal(0.02), &mut rng);
        let b = s.add_init("tex.w", 2, 2, Init::Ones, &mut rng);
        assert_eq!(s.id("und.w"), Some(a));
        assert_eq!(s.ids_with_prefix("tex.").collect::<Vec<_>>(), vec![b]);
        s.set_frozen("und.", true);
        assert!(s.is_frozen(a) && !s.is_frozen(b));
        assert_eq!(s.numel(), 10);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut s = ParamStore::new();
        s.add("x", Mat::zeros(1, 1));
        s.add("x", Mat::zeros(1, 1));
    }

    #[test]
    fn grads_accumulate_and_norm() {
        let mut g = Grads::new(2);
        g.accumulate(ParamId(1), &Mat::filled(1, 2, 1.0));
        g.accumulate(ParamId(1), &Mat::filled(1, 2, 1.0));
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[2.0, 2.0]);
        assert!(g.get(ParamId(0)).is_none());
        assert!((g.global_norm() - 8f64.sqrt()).abs() < 1e-15);
    }
}
