use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng as _;

use crate::rng::Rng;

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on duplicate names (a programming error).
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Glorot-uniform initialised `rows × cols` matrix.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Mat::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.add(name, value)
    }

    pub fn add_normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut Rng,
    ) -> ParamId {
        let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
        let value = Mat::from_shape_fn((rows, cols), |_| rng.sample(normal));
        self.add(name, value)
    }

    pub fn add_constant(&mut self, name: &str, rows: usize, cols: usize, c: f64) -> ParamId {
        self.add(name, Mat::from_elem((rows, cols), c))
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads {
    pub(crate) grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.mapv_inplace(|x| x * s);
            }
        }
        norm
    }

    /// Accumulates `other` into `self`.
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => *a += b,
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }
}

/// Adam optimiser over a subset (or all) of a store's parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    params: Option<Vec<ParamId>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            params: None,
        }
    }

    /// Restricts updates to `params`.
    pub fn restricted_to(mut self, params: Vec<ParamId>) -> Self {
        self.params = Some(params);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<ParamId> = match &self.params {
            Some(p) => p.clone(),
            None => store.ids().collect(),
        };
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(store.get_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
