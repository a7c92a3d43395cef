use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
        n_samples: usize,
    },
}

/// CART regression tree. Splits maximize the reduction of the squared error
/// summed over all target dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Vec<f64>],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let dim = self.y[0].len();
        let mut value = vec![0.0; dim];
        for &i in idx {
            for (v, t) in value.iter_mut().zip(&self.y[i]) {
                *v += t;
            }
        }
        value.iter_mut().for_each(|v| *v /= idx.len() as f64);
        self.nodes.push(Node::Leaf {
            value,
            n_samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let dim = self.y[0].len();
        let n_features = self.x[0].len();
        let sse = |sum: &[f64], sq: &[f64], count: f64| -> f64 {
            sum.iter().zip(sq).map(|(s, q)| q - s * s / count).sum()
        };

        let mut total = vec![0.0; dim];
        let mut total_sq = vec![0.0; dim];
        for &i in idx {
            for d in 0..dim {
                total[d] += self.y[i][d];
                total_sq[d] += self.y[i][d] * self.y[i][d];
            }
        }
        let parent = sse(&total, &total_sq, n as f64);

        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0.0; dim];
            let mut left_sq = vec![0.0; dim];
            for p in 1..n {
                let i = order[p - 1];
                for d in 0..dim {
                    left[d] += self.y[i][d];
                    left_sq[d] += self.y[i][d] * self.y[i][d];
                }
                if p < self.min_leaf || n - p < self.min_leaf {
                    continue;
                }
                let (a, b) = (self.x[order[p - 1]][f], self.x[order[p]][f]);
                if a >= b {
                    continue;
                }
                let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let right_sq: Vec<f64> =
                    total_sq.iter().zip(&left_sq).map(|(t, l)| t - l).collect();
                let gain = parent
                    - sse(&left, &left_sq, p as f64)
                    - sse(&right, &right_sq, (n - p) as f64);
                if best.is_none_or(|(_, _, g)| gain > g) {
                    let mut thr = a + 0.5 * (b - a);
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((f, thr, gain));
                }
            }
        }
        best.filter(|&(_, _, g)| g > 1e-12 * parent.max(1e-300))
    }

    fn build(&mut self, idx: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return self.leaf(idx);
        }
        let Some((feature, threshold, _)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: Vec::new(),
            n_samples: 0,
        });
        let left = self.build(&l, depth + 1);
        let right = self.build(&r, depth + 1);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

impl TreeModel {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        max_depth: usize,
        min_samples_leaf: usize,
    ) -> Result<Self> {
        if min_samples_leaf == 0 {
            return Err(Error::Config("dtree: min_samples_leaf must be >= 1".into()));
        }
        if x.len() < min_samples_leaf {
            return Err(Error::Training(format!(
                "dtree: need at least {min_samples_leaf} rows, got {}",
                x.len()
            )));
        }
        let mut b = Builder {
            x,
            y,
            max_depth,
            min_leaf: min_samples_leaf,
            nodes: Vec::new(),
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        b.build(&idx, 0);
        Ok(Self {
            max_depth,
            min_samples_leaf,
            nodes: b.nodes,
        })
    }

    fn leaf_of(&self, x: &[f64]) -> &Node {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        match self.leaf_of(x) {
            Node::Leaf { value, .. } => value.clone(),
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { n_samples, .. } => Some(*n_samples),
                _ => None,
            })
            .collect()
    }
}
