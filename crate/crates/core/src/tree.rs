//! Finite branching probability model with exact conditional expectations.
//!
//! Nodes are stored level by level; node `idx` of level `k` has global index
//! `level_start(k) + idx` and children `idx·b + i` on level `k + 1`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    depth: usize,
    branching: usize,
    /// Transition probabilities of each internal node, by global index.
    probs: Vec<Vec<f64>>,
    /// Per-node values of registered processes, by global index.
    processes: BTreeMap<String, Vec<f64>>,
}

impl ScenarioTree {
    /// Tree whose internal nodes all share the transition law `probs`.
    pub fn uniform(depth: usize, probs: &[f64]) -> Result<Self> {
        let b = probs.len();
        if b < 2 {
            return Err(Error::config("tree.branching", "need at least two branches"));
        }
        let internal = (0..depth).map(|k| b.pow(k as u32)).sum();
        Self::new(depth, b, vec![probs.to_vec(); internal])
    }

    pub fn new(depth: usize, branching: usize, probs: Vec<Vec<f64>>) -> Result<Self> {
        let tree = ScenarioTree {
            depth,
            branching,
            probs,
            processes: BTreeMap::new(),
        };
        if tree.probs.len() != tree.level_start(depth) {
            return Err(Error::GridMismatch {
                expected: tree.level_start(depth),
                got: tree.probs.len(),
            });
        }
        for p in &tree.probs {
            let total: f64 = p.iter().sum();
            if p.len() != branching || p.iter().any(|v| !(*v > 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::config(
                    "tree",
                    "transition probabilities must be positive and sum to one",
                ));
            }
        }
        Ok(tree)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn level_len(&self, k: usize) -> usize {
        self.branching.pow(k as u32)
    }

    pub fn level_start(&self, k: usize) -> usize {
        (0..k).map(|j| self.level_len(j)).sum()
    }

    pub fn level(&self, k: usize) -> Range<usize> {
        let s = self.level_start(k);
        s..s + self.level_len(k)
    }

    pub fn node_count(&self) -> usize {
        self.level_start(self.depth + 1)
    }

    pub fn level_of(&self, node: usize) -> usize {
        (0..=self.depth)
            .find(|&k| self.level(k).contains(&node))
            .expect("node index out of range")
    }

    pub fn child(&self, node: usize, i: usize) -> usize {
        let k = self.level_of(node);
        let idx = node - self.level_start(k);
        self.level_start(k + 1) + idx * self.branching + i
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        let k = self.level_of(node);
        if k == 0 {
            return None;
        }
        let idx = node - self.level_start(k);
        Some(self.level_start(k - 1) + idx / self.branching)
    }

    /// Branch taken to reach `node` from its parent.
    pub fn branch_of(&self, node: usize) -> usize {
        let k = self.level_of(node);
        (node - self.level_start(k)) % self.branching
    }

    pub fn transition(&self, node: usize) -> &[f64] {
        &self.probs[node]
    }

    /// Probability of reaching each node from the root.
    pub fn node_probs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        out[0] = 1.0;
        for node in 0..self.level_start(self.depth) {
            for i in 0..self.branching {
                out[self.child(node, i)] = out[node] * self.probs[node][i];
            }
        }
        out
    }

    /// Leaves below `node`, as a range of global indices.
    pub fn leaves_below(&self, node: usize) -> Range<usize> {
        let k = self.level_of(node);
        let idx = node - self.level_start(k);
        let span = self.level_len(self.depth - k);
        let s = self.level_start(self.depth) + idx * span;
        s..s + span
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.node_count() {
            return Err(Error::GridMismatch {
                expected: self.node_count(),
                got: values.len(),
            });
        }
        self.processes.insert(name.into(), values);
        Ok(())
    }

    pub fn process(&self, name: &str) -> Option<&[f64]> {
        self.processes.get(name).map(Vec::as_slice)
    }

    /// Siblings share the value: the process is predictable.
    pub fn is_predictable(&self, values: &[f64]) -> bool {
        (1..=self.depth).all(|k| {
            self.level(k)
                .collect::<Vec<_>>()
                .chunks(self.branching)
                .all(|c| c.iter().all(|&n| values[n] == values[c[0]]))
        })
    }

    /// `E[X | F_k]` for a leaf-valued `X` (indexed by leaf position), one value per level-`k` node.
    pub fn conditional_expectation(&self, leaf_values: &[f64], k: usize) -> Result<Vec<f64>> {
        if leaf_values.len() != self.level_len(self.depth) {
            return Err(Error::GridMismatch {
                expected: self.level_len(self.depth),
                got: leaf_values.len(),
            });
        }
        if k > self.depth {
            return Err(Error::config("tree", "conditioning level beyond depth"));
        }
        let mut current = leaf_values.to_vec();
        for level in (k..self.depth).rev() {
            let start = self.level_start(level);
            current = (0..self.level_len(level))
                .map(|idx| {
                    let p = &self.probs[start + idx];
                    (0..self.branching)
                        .map(|i| p[i] * current[idx * self.branching + i])
                        .sum()
                })
                .collect();
        }
        Ok(current)
    }

    /// `E[X_{child} | node]` for a node-valued process.
    pub fn one_step_mean(&self, values: &[f64], node: usize) -> f64 {
        let p = &self.probs[node];
        (0..self.branching)
            .map(|i| p[i] * values[self.child(node, i)])
            .sum()
    }

    /// Exact Doob decomposition `Z = M − A`. Negative drift beyond `tol` is an error;
    /// smaller negative values (rounding of a martingale) are kept as computed.
    pub fn doob_decompose_exact(&self, z: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.node_count() {
            return Err(Error::GridMismatch {
                expected: self.node_count(),
                got: z.len(),
            });
        }
        let mut a = vec![0.0; z.len()];
        for node in 0..self.level_start(self.depth) {
            let da = z[node] - self.one_step_mean(z, node);
            if da < -tol {
                return Err(Error::NotSupermartingale { node, delta_a: da });
            }
            for i in 0..self.branching {
                let c = self.child(node, i);
                a[c] = a[node] + da;
            }
        }
        let m = z.iter().zip(&a).map(|(z, a)| z + a).collect();
        Ok((m, a))
    }
}
