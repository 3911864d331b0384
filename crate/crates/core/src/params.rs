//! Named parameter storage and seeded initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{numel, Real, Tensor};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Flat, ordered list of named parameter tensors. Order is construction order,
/// which makes checkpoints and optimizer state deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn push(&mut self, name: String, value: Tensor<T>) -> ParamId {
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_under(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast() })
                .collect(),
        }
    }
}

/// Registers parameters under a dotted name prefix, drawing initial values
/// from one seeded generator.
pub struct ParamBuilder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, prefix: String::new() }
    }

    /// A builder whose names are nested under `name`.
    pub fn sub(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_, T> {
        let prefix = self.full_name(name.as_ref());
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Weight drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..numel(shape))
            .map(|_| T::of(self.rng.random_range(-bound..bound)))
            .collect();
        self.store.push(self.full_name(name), Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let data = (0..numel(shape)).map(|_| T::of(std * standard_normal(self.rng))).collect();
        self.store.push(self.full_name(name), Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.push(self.full_name(name), Tensor::full(shape, T::of(value)))
    }
}

/// Box-Muller draw from N(0, 1).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_in_bounds_and_names() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(1);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let mut enc = b.sub("enc");
        let mut layer = enc.sub("conv");
        let w = layer.fan_in_uniform("weight", &[8, 16], 16);
        let bias = layer.constant("bias", &[8], 0.0);
        assert_eq!(store.name(w), "enc.conv.weight");
        assert_eq!(store.name(bias), "enc.conv.bias");
        assert!(store.get(w).data().iter().all(|v| v.abs() < 0.25));
        assert_eq!(store.num_scalars(), 8 * 16 + 8);
        assert_eq!(store.find("enc.conv.bias"), Some(bias));
    }

    #[test]
    fn identical_seeds_identical_values_across_precision() {
        let build = |seed| {
            let mut s32 = ParamStore::<f32>::new();
            let mut s64 = ParamStore::<f64>::new();
            ParamBuilder::new(&mut s32, &mut seeded_rng(seed)).fan_in_uniform("w", &[4], 3);
            ParamBuilder::new(&mut s64, &mut seeded_rng(seed)).fan_in_uniform("w", &[4], 3);
            (s32, s64)
        };
        let (a32, a64) = build(9);
        let (b32, _) = build(9);
        assert_eq!(a32.get(ParamId(0)), b32.get(ParamId(0)));
        assert_eq!(&a64.get(ParamId(0)).cast::<f32>(), a32.get(ParamId(0)));
    }
}
