use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Added to hessian sums in split gains and leaf values.
pub const HESSIAN_EPSILON: f64 = 1e-10;
/// Leaf outputs are clipped to `[-LEAF_CLIP, LEAF_CLIP]`.
pub const LEAF_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree stored as a node array; node 0 is the root.
/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Checks that the nodes form a tree rooted at 0 with every node
    /// reachable exactly once and every feature index below `width`.
    pub fn from_nodes(nodes: Vec<Node>, width: usize) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut visited = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut visited[i], true) {
                return Err(format!("node {i} is reachable twice"));
            }
            match nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    gain,
                } => {
                    if feature >= width {
                        return Err(format!(
                            "node {i} splits on feature {feature}, width is {width}"
                        ));
                    }
                    if !threshold.is_finite() || !gain.is_finite() {
                        return Err(format!("node {i} has a non-finite threshold or gain"));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() {
                            return Err(format!("node {i} points to missing node {child}"));
                        }
                        stack.push(child);
                    }
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(format!("leaf {i} is not finite"));
                    }
                }
            }
        }
        if let Some(orphan) = visited.iter().position(|v| !v) {
            return Err(format!("node {orphan} is unreachable"));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// `(feature, gain)` of every split, in node order.
    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Split { feature, gain, .. } => Some((feature, gain)),
            Node::Leaf { .. } => None,
        })
    }
}

/// Dense column-major feature matrix with each column's row order sorted
/// by value (ties by row index).
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
}

impl FeatureMatrix {
    /// Panics if rows differ in width.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), width, "ragged feature matrix");
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        let n = rows.len();
        let sorted = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        FeatureMatrix {
            n_rows: rows.len(),
            columns,
            sorted,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_leaves: usize,
    pub min_samples_per_leaf: usize,
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct OpenLeaf {
    node: usize,
    /// Member rows of this leaf in each feature's sorted order.
    sorted: Vec<Vec<u32>>,
    grad_sum: f64,
    hess_sum: f64,
    best: Option<SplitChoice>,
}

fn leaf_value(grad_sum: f64, hess_sum: f64) -> f64 {
    (-grad_sum / (hess_sum + HESSIAN_EPSILON)).clamp(-LEAF_CLIP, LEAF_CLIP)
}

fn score(g: f64, h: f64) -> f64 {
    g * g / (h + HESSIAN_EPSILON)
}

/// Fits one tree to per-row cost gradients and hessians (Newton leaves).
///
/// Leaves grow best-first until `max_leaves` or until no split has positive
/// gain with both children holding at least `min_samples_per_leaf` rows.
/// Candidate thresholds are midpoints between consecutive distinct values.
pub fn fit_tree(
    matrix: &FeatureMatrix,
    gradients: &[f64],
    hessians: &[f64],
    params: TreeParams,
) -> RegressionTree {
    let all_rows = vec![true; matrix.n_rows()];
    let features: Vec<usize> = (0..matrix.n_features()).collect();
    fit_tree_on(matrix, &all_rows, &features, gradients, hessians, params)
}

/// [`fit_tree`] restricted to rows with `include[row]` and to `features`.
pub(crate) fn fit_tree_on(
    matrix: &FeatureMatrix,
    include: &[bool],
    features: &[usize],
    gradients: &[f64],
    hessians: &[f64],
    params: TreeParams,
) -> RegressionTree {
    assert_eq!(gradients.len(), matrix.n_rows());
    assert_eq!(hessians.len(), matrix.n_rows());

    let root_sorted: Vec<Vec<u32>> = matrix
        .sorted
        .iter()
        .map(|idx| {
            idx.iter()
                .copied()
                .filter(|&r| include[r as usize])
                .collect()
        })
        .collect();
    let members = root_sorted.first().map(Vec::as_slice).unwrap_or(&[]);
    let mut grad_sum = 0.0;
    let mut hess_sum = 0.0;
    // Sum in row order so the totals do not depend on feature 0's values.
    for (row, inc) in include.iter().enumerate() {
        if *inc {
            grad_sum += gradients[row];
            hess_sum += hessians[row];
        }
    }
    if hess_sum == 0.0 || members.is_empty() {
        return RegressionTree::leaf(0.0);
    }

    let mut nodes = vec![Node::Leaf {
        value: leaf_value(grad_sum, hess_sum),
    }];
    let mut root = OpenLeaf {
        node: 0,
        sorted: root_sorted,
        grad_sum,
        hess_sum,
        best: None,
    };
    root.best = best_split(matrix, &root, features, gradients, hessians, params);
    let mut open = vec![root];
    let mut leaves = 1;

    while leaves < params.max_leaves {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, l.node, b.gain)))
            .max_by(|a, b| a.2.total_cmp(&b.2).then(b.1.cmp(&a.1)));
        let Some((slot, _, _)) = pick else { break };
        let leaf = open.swap_remove(slot);
        let split = leaf.best.expect("picked leaf has a split");

        let column = &matrix.columns[split.feature];
        let goes_left = |r: u32| column[r as usize] <= split.threshold;
        let mut left_sorted = Vec::with_capacity(leaf.sorted.len());
        let mut right_sorted = Vec::with_capacity(leaf.sorted.len());
        for idx in &leaf.sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&r| goes_left(r));
            left_sorted.push(l);
            right_sorted.push(r);
        }
        let sums = |rows: &[u32]| {
            let mut sorted_rows = rows.to_vec();
            sorted_rows.sort_unstable();
            sorted_rows.iter().fold((0.0, 0.0), |(g, h), &r| {
                (g + gradients[r as usize], h + hessians[r as usize])
            })
        };
        let (lg, lh) = sums(&left_sorted[0]);
        let (rg, rh) = sums(&right_sorted[0]);

        let left_node = nodes.len();
        let right_node = left_node + 1;
        nodes.push(Node::Leaf {
            value: leaf_value(lg, lh),
        });
        nodes.push(Node::Leaf {
            value: leaf_value(rg, rh),
        });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_node,
            right: right_node,
            gain: split.gain,
        };
        leaves += 1;

        for (node, sorted, g, h) in [
            (left_node, left_sorted, lg, lh),
            (right_node, right_sorted, rg, rh),
        ] {
            let mut child = OpenLeaf {
                node,
                sorted,
                grad_sum: g,
                hess_sum: h,
                best: None,
            };
            child.best = best_split(matrix, &child, features, gradients, hessians, params);
            open.push(child);
        }
    }
    RegressionTree { nodes }
}

fn best_split(
    matrix: &FeatureMatrix,
    leaf: &OpenLeaf,
    features: &[usize],
    gradients: &[f64],
    hessians: &[f64],
    params: TreeParams,
) -> Option<SplitChoice> {
    let n = leaf.sorted.first().map_or(0, Vec::len);
    let min_leaf = params.min_samples_per_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let parent = score(leaf.grad_sum, leaf.hess_sum);
    let per_feature: Vec<Option<SplitChoice>> = features
        .par_iter()
        .map(|&f| {
            let column = &matrix.columns[f];
            let rows = &leaf.sorted[f];
            let mut best: Option<SplitChoice> = None;
            let mut gl = 0.0;
            let mut hl = 0.0;
            for i in 0..n - 1 {
                let r = rows[i] as usize;
                gl += gradients[r];
                hl += hessians[r];
                let left_count = i + 1;
                if left_count < min_leaf {
                    continue;
                }
                if n - left_count < min_leaf {
                    break;
                }
                let here = column[r];
                let next = column[rows[i + 1] as usize];
                if here == next {
                    continue;
                }
                let gain = score(gl, hl) + score(leaf.grad_sum - gl, leaf.hess_sum - hl) - parent;
                if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                    let mid = here + (next - here) / 2.0;
                    let threshold = if mid < next { mid } else { here };
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
            best
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitChoice>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
}
