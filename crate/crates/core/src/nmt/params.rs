//! Named parameter collections, matching gradient buffers, and Adam.

use std::collections::HashMap;

use ndarray::Array2;

use crate::autodiff::{Gradients, NodeId};

/// Named matrices in a fixed insertion order. The order is the canonical
/// parameter layout: checkpoints, gradient buffers, and flat indexing all
/// follow it.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name:?}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let i = self.index[name];
        &self.entries[i].1
    }

    /// Position of a parameter in the canonical layout.
    pub fn index_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self.index[name];
        &mut self.entries[i].1
    }

    pub fn entries(&self) -> &[(String, Array2<f64>)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count across all matrices.
    pub fn flat_len(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }

    fn locate(&self, flat: usize) -> (usize, usize, usize) {
        let mut offset = flat;
        for (i, (_, a)) in self.entries.iter().enumerate() {
            if offset < a.len() {
                let cols = a.ncols();
                return (i, offset / cols, offset % cols);
            }
            offset -= a.len();
        }
        panic!("flat index {flat} out of range");
    }

    /// Reads one scalar by flat index over the canonical layout.
    pub fn get_flat(&self, flat: usize) -> f64 {
        let (i, r, c) = self.locate(flat);
        self.entries[i].1[(r, c)]
    }

    /// Writes one scalar by flat index.
    pub fn set_flat(&mut self, flat: usize, value: f64) {
        let (i, r, c) = self.locate(flat);
        self.entries[i].1[(r, c)] = value;
    }
}

/// Gradient accumulator with the same layout as a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradSet {
    grads: Vec<Array2<f64>>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradSet {
            grads: params
                .entries()
                .iter()
                .map(|(_, a)| Array2::zeros((a.nrows(), a.ncols())))
                .collect(),
        }
    }

    /// Adds tape gradients for whichever parameters appeared on the tape.
    /// `leaf_ids` maps parameter index to that parameter's tape leaf.
    pub fn accumulate(&mut self, leaf_ids: &[(usize, NodeId)], grads: &Gradients) {
        for &(param_idx, node) in leaf_ids {
            if let Some(g) = grads.get(node) {
                self.grads[param_idx] += g;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * c);
        }
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.grads[i]
    }

    pub fn is_all_zero(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|&x| x == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Gradient of one scalar by flat index, for finite-difference checks.
    pub fn get_flat(&self, flat: usize) -> f64 {
        let mut offset = flat;
        for g in &self.grads {
            if offset < g.len() {
                let cols = g.ncols();
                return g[(offset / cols, offset % cols)];
            }
            offset -= g.len();
        }
        panic!("flat index {flat} out of range");
    }
}

/// Adam with the usual bias correction. The state arrays mirror the
/// parameter layout they were created for.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .entries()
            .iter()
            .map(|(_, a)| Array2::zeros((a.nrows(), a.ncols())))
            .collect();
        Adam { beta1: 0.9, beta2: 0.98, eps: 1e-9, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advances the step counter without touching parameters or moments.
    /// Used when a whole step's gradient is exactly zero.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in params.entries.iter_mut().enumerate() {
            let g = grads.get(i);
            self.m[i].zip_mut_with(g, |m, &gi| *m = self.beta1 * *m + (1.0 - self.beta1) * gi);
            self.v[i]
                .zip_mut_with(g, |v, &gi| *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi);
            let m = &self.m[i];
            let v = &self.v[i];
            for ((pij, mij), vij) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mij / bc1;
                let vhat = vij / bc2;
                *pij -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn flat_indexing_walks_the_layout() {
        let mut p = ParamSet::new();
        p.insert("a", array![[1.0, 2.0], [3.0, 4.0]]);
        p.insert("b", array![[5.0]]);
        assert_eq!(p.flat_len(), 5);
        assert_eq!(p.get_flat(0), 1.0);
        assert_eq!(p.get_flat(3), 4.0);
        assert_eq!(p.get_flat(4), 5.0);
        let mut q = p.clone();
        q.set_flat(3, -1.0);
        assert_eq!(q.get("a")[(1, 1)], -1.0);
        assert_eq!(p.get("a")[(1, 1)], 4.0);
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut p = ParamSet::new();
        p.insert("w", array![[1.0, -1.0]]);
        let mut g = GradSet::zeros_like(&p);
        g.grads[0] = array![[0.5, -0.5]];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, 0.1);
        assert!(p.get("w")[(0, 0)] < 1.0);
        assert!(p.get("w")[(0, 1)] > -1.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_tick_leaves_parameters_alone() {
        let mut p = ParamSet::new();
        p.insert("w", array![[1.0, 2.0]]);
        let before = p.get("w").clone();
        let mut opt = Adam::new(&p);
        opt.tick();
        assert_eq!(p.get("w"), &before);
        assert_eq!(opt.steps(), 1);
    }
}
