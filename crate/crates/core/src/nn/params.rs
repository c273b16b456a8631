use ndarray::{Array2, Zip};
use rand::Rng;

use super::Real;

/// Named parameter matrices. Gradients use a store of identical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Array2<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Uniform initialisation in `[-scale, scale]`.
    pub fn uniform<R: Rng>(shapes: &[(&str, (usize, usize))], scale: f64, rng: &mut R) -> Self {
        let mut store = Self::new();
        for &(name, (rows, cols)) in shapes {
            let t = Array2::from_shape_simple_fn((rows, cols), || {
                F::of(rng.random_range(-scale..=scale))
            });
            store.push(name, t);
        }
        store
    }

    pub fn push(&mut self, name: &str, tensor: Array2<F>) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, index: usize) -> &Array2<F> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Array2<F> {
        &mut self.tensors[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.dim() == b.dim())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| t.iter()).all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: F) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Rescales to `max_norm` when the global norm exceeds it. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(F::of(max_norm / norm));
        }
        norm
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Self, alpha: F) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            Zip::from(a).and(b).for_each(|a, &b| *a = *a + alpha * b);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(F::zero());
        }
    }

    /// Row-major concatenation of every tensor.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.iter().map(|v| v.as_f64()))
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let mut it = values.iter();
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = F::of(*it.next().expect("length checked"));
            }
        }
    }
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_seeded_and_bounded() {
        let shapes = [("a", (3, 4)), ("b", (1, 4))];
        let a = ParamStore::<f64>::uniform(&shapes, 0.08, &mut ChaCha8Rng::seed_from_u64(1));
        let b = ParamStore::<f64>::uniform(&shapes, 0.08, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.to_flat().iter().all(|v| v.abs() <= 0.08));
        assert_eq!(a.num_params(), 16);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = ParamStore::<f64>::new();
        g.push("w", Array2::from_elem((2, 2), 5.0));
        let before = g.clip_global_norm(5.0);
        assert!((before - 10.0).abs() < 1e-12);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
        let mut small = g.clone();
        small.scale(0.1);
        let flat = small.to_flat();
        small.clip_global_norm(5.0);
        assert_eq!(small.to_flat(), flat);
    }

    #[test]
    fn flat_round_trip() {
        let shapes = [("a", (2, 3))];
        let mut p = ParamStore::<f32>::uniform(&shapes, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let flat = p.to_flat();
        p.fill_zero();
        p.set_flat(&flat);
        assert_eq!(p.to_flat(), flat);
    }
}
