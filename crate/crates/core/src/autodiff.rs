//! Tape-based reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes, each
//! holding its value and, per parent, a closure mapping the node's output
//! gradient to that parent's gradient contribution. Node ids grow in
//! creation order, so the reverse sweep is a plain reverse iteration: no
//! explicit topological sort is needed.
//!
//! Everything is `f64`. Randomness (dropout masks) is generated by the
//! caller and passed in as data, keeping the tape deterministic.

use ndarray::{Array2, Axis};

pub type NodeId = usize;

type Vjp = Box<dyn Fn(&Array2<f64>) -> Array2<f64>>;

struct Node {
    value: Array2<f64>,
    parents: Vec<(NodeId, Vjp)>,
}

/// Gradients of one scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for a node; `None` when the root does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads[id].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<f64>, parents: Vec<(NodeId, Vjp)>) -> NodeId {
        self.nodes.push(Node { value, parents });
        self.nodes.len() - 1
    }

    /// An input node: parameters and constants enter the tape here.
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Vec::new())
    }

    /// `a · b`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a].value.clone();
        let bv = self.nodes[b].value.clone();
        let value = av.dot(&bv);
        let bt = bv.clone();
        let at = av.clone();
        self.push(
            value,
            vec![
                (a, Box::new(move |g: &Array2<f64>| g.dot(&bt.t()))),
                (b, Box::new(move |g: &Array2<f64>| at.t().dot(g))),
            ],
        )
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.nodes[a].value.clone();
        let bv = self.nodes[b].value.clone();
        let value = av.dot(&bv.t());
        let b2 = bv.clone();
        let a2 = av.clone();
        self.push(
            value,
            vec![
                (a, Box::new(move |g: &Array2<f64>| g.dot(&b2))),
                (b, Box::new(move |g: &Array2<f64>| g.t().dot(&a2))),
            ],
        )
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(
            value,
            vec![
                (a, Box::new(|g: &Array2<f64>| g.clone())),
                (b, Box::new(|g: &Array2<f64>| g.clone())),
            ],
        )
    }

    /// Adds a `1×d` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[row].value;
        self.push(
            value,
            vec![
                (a, Box::new(|g: &Array2<f64>| g.clone())),
                (row, Box::new(|g: &Array2<f64>| {
                    g.sum_axis(Axis(0)).insert_axis(Axis(0))
                })),
            ],
        )
    }

    /// Multiplies every row of `a` elementwise by a `1×d` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let av = self.nodes[a].value.clone();
        let rv = self.nodes[row].value.clone();
        let value = &av * &rv;
        let r2 = rv.clone();
        self.push(
            value,
            vec![
                (a, Box::new(move |g: &Array2<f64>| g * &r2)),
                (row, Box::new(move |g: &Array2<f64>| {
                    (g * &av).sum_axis(Axis(0)).insert_axis(Axis(0))
                })),
            ],
        )
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a].value * c;
        self.push(value, vec![(a, Box::new(move |g: &Array2<f64>| g * c))])
    }

    /// Adds a constant array (positional encodings and the like).
    pub fn add_const(&mut self, a: NodeId, c: &Array2<f64>) -> NodeId {
        let value = &self.nodes[a].value + c;
        self.push(value, vec![(a, Box::new(|g: &Array2<f64>| g.clone()))])
    }

    /// Elementwise product with a caller-supplied constant mask, already
    /// scaled for inverted dropout.
    pub fn dropout(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        let value = &self.nodes[a].value * &mask;
        self.push(value, vec![(a, Box::new(move |g: &Array2<f64>| g * &mask))])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let av = self.nodes[a].value.clone();
        let value = av.mapv(|x| x.max(0.0));
        self.push(
            value,
            vec![(a, Box::new(move |g: &Array2<f64>| {
                let mut out = g.clone();
                out.zip_mut_with(&av, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
                out
            }))],
        )
    }

    /// Row-wise softmax. `mask` (same shape, 1 keep / 0 drop) zeroes the
    /// probability of dropped positions; every row must keep something.
    pub fn row_softmax(&mut self, a: NodeId, mask: Option<&Array2<f64>>) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        for mut row in value.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
        }
        if let Some(m) = mask {
            value = &value * m;
        }
        for mut row in value.rows_mut() {
            let s: f64 = row.sum();
            debug_assert!(s > 0.0, "softmax row fully masked");
            row.mapv_inplace(|x| x / s);
        }
        let p = value.clone();
        self.push(
            value,
            vec![(a, Box::new(move |g: &Array2<f64>| {
                let mut out = g * &p;
                let dot = out.sum_axis(Axis(1)).insert_axis(Axis(1));
                out = (g - &dot) * &p;
                out
            }))],
        )
    }

    /// Row-wise layer normalization without the affine part; compose with
    /// [`Tape::mul_row`] and [`Tape::add_row`] for gain and bias.
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let av = &self.nodes[a].value;
        let d = av.ncols() as f64;
        let mean = av.mean_axis(Axis(1)).expect("rows are non-empty").insert_axis(Axis(1));
        let centered = av - &mean;
        let var = centered.mapv(|x| x * x).mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let value = &centered * &inv_std;
        let y = value.clone();
        self.push(
            value,
            vec![(a, Box::new(move |g: &Array2<f64>| {
                let g_mean = g.mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
                let gy_mean =
                    (g * &y).mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
                let _ = d;
                (&(g - &g_mean) - &(&y * &gy_mean)) * &inv_std
            }))],
        )
    }

    /// Picks rows of a table by index; the embedding lookup.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let tv = &self.nodes[table].value;
        let shape = (tv.nrows(), tv.ncols());
        let mut value = Array2::zeros((indices.len(), tv.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).assign(&tv.row(i));
        }
        let idx: Vec<usize> = indices.to_vec();
        self.push(
            value,
            vec![(table, Box::new(move |g: &Array2<f64>| {
                let mut out = Array2::zeros(shape);
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = out.row_mut(i);
                    row += &g.row(r);
                }
                out
            }))],
        )
    }

    /// Concatenates nodes with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.nodes[p].value.ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut col = 0usize;
        for (&p, &w) in parts.iter().zip(&widths) {
            value
                .slice_mut(ndarray::s![.., col..col + w])
                .assign(&self.nodes[p].value);
            col += w;
        }
        let mut parents: Vec<(NodeId, Vjp)> = Vec::with_capacity(parts.len());
        let mut col = 0usize;
        for (&p, &w) in parts.iter().zip(&widths) {
            let lo = col;
            parents.push((p, Box::new(move |g: &Array2<f64>| {
                g.slice(ndarray::s![.., lo..lo + w]).to_owned()
            })));
            col += w;
        }
        self.push(value, parents)
    }

    /// Sum of per-row cross-entropy against label-smoothed targets,
    /// returned as a `1×1` node.
    ///
    /// With smoothing `eps`, the target distribution per row is
    /// `(1 - eps)` on the gold class plus `eps / V` spread uniformly.
    /// `eps = 0` gives the exact negative log-likelihood.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], eps: f64) -> NodeId {
        let lv = self.nodes[logits].value.clone();
        assert_eq!(lv.nrows(), targets.len());
        let v = lv.ncols() as f64;
        let mut log_probs = lv.clone();
        for mut row in log_probs.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = log_probs.row(r);
            loss -= (1.0 - eps) * row[t];
            if eps > 0.0 {
                loss -= eps / v * row.sum();
            }
        }
        let probs = log_probs.mapv(f64::exp);
        let tgt: Vec<usize> = targets.to_vec();
        self.push(
            Array2::from_elem((1, 1), loss),
            vec![(logits, Box::new(move |g: &Array2<f64>| {
                let s = g[(0, 0)];
                let mut out = probs.clone();
                for (r, &t) in tgt.iter().enumerate() {
                    let mut row = out.row_mut(r);
                    row.mapv_inplace(|p| p - eps / v);
                    row[t] -= 1.0 - eps;
                }
                out * s
            }))],
        )
    }

    /// Sum of several `1×1` nodes.
    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut total = 0.0;
        for &p in parts {
            debug_assert_eq!(self.nodes[p].value.dim(), (1, 1));
            total += self.nodes[p].value[(0, 0)];
        }
        let parents: Vec<(NodeId, Vjp)> = parts
            .iter()
            .map(|&p| (p, Box::new(|g: &Array2<f64>| g.clone()) as Vjp))
            .collect();
        self.push(Array2::from_elem((1, 1), total), parents)
    }

    /// Reverse sweep from a `1×1` root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.nodes[root].value.dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array2::from_elem((1, 1), 1.0));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            for (parent, vjp) in &self.nodes[id].parents {
                let contribution = vjp(&g);
                match &mut grads[*parent] {
                    Some(acc) => *acc += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use crate::seed::stage_rng;

    /// Central finite differences of a scalar-valued rebuild function with
    /// respect to one leaf, compared against the tape gradient.
    fn check_grad<F>(build: F, leaf_shapes: &[(usize, usize)], seed: u64, tol: f64)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let mut rng = stage_rng(seed, "autodiff-test");
        let inputs: Vec<Array2<f64>> = leaf_shapes
            .iter()
            .map(|&(r, c)| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0)))
            .collect();

        let eval = |inputs: &[Array2<f64>]| -> f64 {
            let mut tape = Tape::new();
            let leaves: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
            let root = build(&mut tape, &leaves);
            tape.value(root)[(0, 0)]
        };

        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let root = build(&mut tape, &leaves);
        let grads = tape.backward(root);

        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads.get(*leaf).expect("leaf feeds the root");
            for r in 0..inputs[li].nrows() {
                for c in 0..inputs[li].ncols() {
                    let mut plus = inputs.clone();
                    plus[li][(r, c)] += h;
                    let mut minus = inputs.clone();
                    minus[li][(r, c)] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let an = g[(r, c)];
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        (fd - an).abs() / denom < tol,
                        "leaf {li} ({r},{c}): fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn matmul_grad() {
        check_grad(
            |t, l| {
                let m = t.matmul(l[0], l[1]);
                t.cross_entropy(m, &[1, 0, 2], 0.0)
            },
            &[(3, 4), (4, 3)],
            1,
            1e-6,
        );
    }

    #[test]
    fn matmul_nt_grad() {
        check_grad(
            |t, l| {
                let m = t.matmul_nt(l[0], l[1]);
                t.cross_entropy(m, &[1, 0], 0.0)
            },
            &[(2, 4), (3, 4)],
            2,
            1e-6,
        );
    }

    #[test]
    fn softmax_and_masked_softmax_grad() {
        check_grad(
            |t, l| {
                let s = t.row_softmax(l[0], None);
                let m = t.matmul(s, l[1]);
                t.cross_entropy(m, &[0, 1, 1], 0.0)
            },
            &[(3, 3), (3, 2)],
            3,
            1e-5,
        );
        let mask = array![[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        check_grad(
            move |t, l| {
                let s = t.row_softmax(l[0], Some(&mask));
                let m = t.matmul(s, l[1]);
                t.cross_entropy(m, &[0, 1, 1], 0.0)
            },
            &[(3, 3), (3, 2)],
            4,
            1e-5,
        );
    }

    #[test]
    fn masked_softmax_zeroes_dropped_columns() {
        let mut t = Tape::new();
        let x = t.leaf(array![[5.0, 1.0, 3.0], [0.0, 2.0, 4.0]]);
        let mask = array![[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
        let s = t.row_softmax(x, Some(&mask));
        let v = t.value(s);
        assert_eq!(v[(0, 2)], 0.0);
        assert_eq!(v[(1, 0)], 0.0);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_grad() {
        check_grad(
            |t, l| {
                let n = t.layer_norm(l[0], 1e-6);
                let g = t.mul_row(n, l[1]);
                let b = t.add_row(g, l[2]);
                t.cross_entropy(b, &[2, 0], 0.0)
            },
            &[(2, 5), (1, 5), (1, 5)],
            5,
            1e-5,
        );
    }

    #[test]
    fn relu_add_scale_grad() {
        check_grad(
            |t, l| {
                let a = t.add(l[0], l[1]);
                let r = t.relu(a);
                let s = t.scale(r, 1.7);
                let m = t.matmul(s, l[2]);
                t.cross_entropy(m, &[0, 1], 0.0)
            },
            &[(2, 3), (2, 3), (3, 4)],
            6,
            1e-5,
        );
    }

    #[test]
    fn gather_concat_grad() {
        check_grad(
            |t, l| {
                let e = t.gather_rows(l[0], &[2, 0, 2]);
                let c = t.concat_cols(&[e, e]);
                let m = t.matmul(c, l[1]);
                t.cross_entropy(m, &[1, 0, 1], 0.0)
            },
            &[(4, 3), (6, 2)],
            7,
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_with_smoothing_grad() {
        check_grad(
            |t, l| t.cross_entropy(l[0], &[1, 3, 0], 0.1),
            &[(3, 4)],
            8,
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_matches_manual_nll() {
        let mut t = Tape::new();
        let logits = t.leaf(array![[0.0, f64::ln(3.0)]]);
        // softmax = [1/4, 3/4]; NLL of class 1 = -ln(3/4)
        let ce = t.cross_entropy(logits, &[1], 0.0);
        assert!((t.value(ce)[(0, 0)] - (-(0.75f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn diamond_reuse_accumulates() {
        // f(x) = sum over CE of (x + x); gradient must count x twice.
        check_grad(
            |t, l| {
                let d = t.add(l[0], l[0]);
                t.cross_entropy(d, &[0, 1], 0.0)
            },
            &[(2, 3)],
            9,
            1e-6,
        );
    }

    #[test]
    fn sum_scalars_and_dropout_grad() {
        let keep = array![[1.25, 0.0, 1.25], [1.25, 1.25, 0.0]];
        check_grad(
            move |t, l| {
                let d = t.dropout(l[0], keep.clone());
                let a = t.cross_entropy(d, &[0, 2], 0.0);
                let b = t.cross_entropy(l[0], &[1, 1], 0.0);
                t.sum_scalars(&[a, b])
            },
            &[(2, 3)],
            10,
            1e-5,
        );
    }
}
