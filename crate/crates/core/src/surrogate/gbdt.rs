//! Least-squares gradient boosting over depth-limited regression trees.
//!
//! Features are quantized into at most [`MAX_BINS`] bins per column; splits
//! are searched on per-node gradient histograms. Leaf values are Newton
//! steps `sum(residual) / (count + l2)` scaled by the learning rate, so a
//! fitted model predicts `base + sum(tree(x))`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SurrogateError;

pub const MAX_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub depth: usize,
    pub l2_leaf_reg: f64,
    pub subsample: f64,
    pub iterations: usize,
    pub early_stop_patience: usize,
    pub min_samples_leaf: usize,
}

/// Per-feature split thresholds: bin `i` holds values `<= thresholds[i]`,
/// the last bin everything above.
#[derive(Debug, Clone)]
pub(crate) struct Binner {
    thresholds: Vec<Vec<f64>>,
}

impl Binner {
    pub(crate) fn fit(rows: &[Vec<f64>], n_features: usize) -> Self {
        let thresholds = (0..n_features)
            .map(|f| {
                let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                if values.len() <= 1 {
                    return Vec::new();
                }
                let cuts: Vec<usize> = if values.len() <= MAX_BINS {
                    (0..values.len() - 1).collect()
                } else {
                    (1..MAX_BINS)
                        .map(|q| q * (values.len() - 1) / MAX_BINS)
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect()
                };
                cuts.into_iter()
                    .map(|i| values[i] + (values[i + 1] - values[i]) / 2.0)
                    .collect()
            })
            .collect();
        Self { thresholds }
    }

    fn bin(&self, feature: usize, x: f64) -> u8 {
        self.thresholds[feature].partition_point(|&t| t < x) as u8
    }

    /// Column-major bin indices.
    fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<u8>> {
        (0..self.thresholds.len())
            .map(|f| rows.iter().map(|r| self.bin(f, r[f])).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

struct Grower<'a> {
    bins: &'a [Vec<u8>],
    binner: &'a Binner,
    residual: &'a [f64],
    params: &'a BoostParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    bin: usize,
}

impl Grower<'_> {
    fn leaf(&self, rows: &[usize]) -> Node {
        let sum: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        Node::Leaf {
            value: self.params.learning_rate * sum / (rows.len() as f64 + self.params.l2_leaf_reg),
        }
    }

    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let lambda = self.params.l2_leaf_reg;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let total: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let n = rows.len() as f64;
        let parent = total * total / (n + lambda);
        let mut best: Option<BestSplit> = None;
        let mut sums = [0.0f64; MAX_BINS];
        let mut counts = [0usize; MAX_BINS];
        for (feature, column) in self.bins.iter().enumerate() {
            let n_bins = self.binner.thresholds[feature].len() + 1;
            if n_bins < 2 {
                continue;
            }
            sums[..n_bins].fill(0.0);
            counts[..n_bins].fill(0);
            for &r in rows {
                let b = column[r] as usize;
                sums[b] += self.residual[r];
                counts[b] += 1;
            }
            let (mut left_sum, mut left_n) = (0.0, 0usize);
            for b in 0..n_bins - 1 {
                left_sum += sums[b];
                left_n += counts[b];
                if counts[b] == 0 && b > 0 {
                    continue;
                }
                let right_n = rows.len() - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / (left_n as f64 + lambda)
                    + right_sum * right_sum / (right_n as f64 + lambda)
                    - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(BestSplit { gain, feature, bin: b });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.params.depth && rows.len() >= 2 {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => self.nodes[id] = self.leaf(&rows),
            Some(s) => {
                let column = &self.bins[s.feature];
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| column[i] as usize <= s.bin);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: self.binner.thresholds[s.feature][s.bin],
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// A fitted boosted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Booster {
    pub base: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let se: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    (se / pred.len().max(1) as f64).sqrt()
}

fn constant_or_mean(targets: &[f64]) -> f64 {
    let first = targets[0];
    if targets.iter().all(|&t| t == first) {
        first
    } else {
        targets.iter().sum::<f64>() / targets.len() as f64
    }
}

impl Booster {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(self.base, |acc, t| acc + t.predict(x))
    }

    /// Fits on `train`, early-stopping on `valid` when it is non-empty.
    /// Returns the model truncated at the best validation iteration and
    /// the validation RMSE reached there.
    pub fn fit(
        train_x: &[Vec<f64>],
        train_y: &[f64],
        valid_x: &[Vec<f64>],
        valid_y: &[f64],
        params: &BoostParams,
        seed: u64,
    ) -> Result<(Booster, f64), SurrogateError> {
        if train_x.is_empty() || train_x.len() != train_y.len() {
            return Err(SurrogateError::InsufficientData {
                rows: train_x.len(),
                needed: 1,
            });
        }
        if train_y.iter().chain(valid_y).any(|y| !y.is_finite()) {
            return Err(SurrogateError::NonFiniteTarget);
        }
        let n_features = train_x[0].len();
        let binner = Binner::fit(train_x, n_features);
        let bins = binner.transform(train_x);
        let base = constant_or_mean(train_y);
        let mut booster = Booster {
            base,
            trees: Vec::new(),
            n_features,
        };
        let mut train_pred = vec![base; train_x.len()];
        let mut valid_pred = vec![base; valid_x.len()];
        let has_valid = !valid_x.is_empty();
        let mut best_score = if has_valid { rmse(&valid_pred, valid_y) } else { f64::INFINITY };
        let mut best_len = 0;
        let n = train_x.len();
        let sample_size = ((params.subsample * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut residual = vec![0.0; n];

        for iteration in 0..params.iterations {
            for i in 0..n {
                residual[i] = train_y[i] - train_pred[i];
            }
            if residual.iter().all(|r| *r == 0.0) {
                break;
            }
            let mut rows: Vec<usize> = if sample_size < n {
                sample(&mut rng, n, sample_size).into_vec()
            } else {
                (0..n).collect()
            };
            rows.sort_unstable();
            let mut grower = Grower {
                bins: &bins,
                binner: &binner,
                residual: &residual,
                params,
                nodes: Vec::new(),
            };
            grower.grow(rows, 0);
            let tree = Tree { nodes: grower.nodes };
            for (p, x) in train_pred.iter_mut().zip(train_x) {
                *p += tree.predict(x);
            }
            booster.trees.push(tree);
            if has_valid {
                for (p, x) in valid_pred.iter_mut().zip(valid_x) {
                    *p += booster.trees.last().unwrap().predict(x);
                }
                let score = rmse(&valid_pred, valid_y);
                if score < best_score {
                    best_score = score;
                    best_len = iteration + 1;
                } else if iteration + 1 - best_len >= params.early_stop_patience {
                    break;
                }
            } else {
                best_len = iteration + 1;
            }
        }
        booster.trees.truncate(best_len);
        if !has_valid {
            best_score = rmse(
                &train_x.iter().map(|x| booster.predict(x)).collect::<Vec<_>>(),
                train_y,
            );
        }
        Ok((booster, best_score))
    }

    pub(crate) fn write_dump(&self, out: &mut String) {
        use std::fmt::Write;
        let _ = writeln!(out, "model base={} trees={}", self.base, self.trees.len());
        for tree in &self.trees {
            let _ = writeln!(out, "tree nodes={}", tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(out, "split {feature} {threshold} {left} {right}");
                    }
                    Node::Leaf { value } => {
                        let _ = writeln!(out, "leaf {value}");
                    }
                }
            }
        }
    }

    pub(crate) fn read_dump<'a, I>(lines: &mut I, n_features: usize) -> Result<Booster, SurrogateError>
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        let (no, header) = lines.next().ok_or_else(|| bad_dump(0, "missing model header"))?;
        let fields = key_values(header, "model").ok_or_else(|| bad_dump(no, "expected `model`"))?;
        let base = parse_field::<f64>(&fields, "base", no)?;
        let count = parse_field::<usize>(&fields, "trees", no)?;
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, header) = lines.next().ok_or_else(|| bad_dump(0, "missing tree header"))?;
            let fields = key_values(header, "tree").ok_or_else(|| bad_dump(no, "expected `tree`"))?;
            let n_nodes = parse_field::<usize>(&fields, "nodes", no)?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (no, line) = lines.next().ok_or_else(|| bad_dump(0, "truncated tree"))?;
                let parts: Vec<&str> = line.split_whitespace().collect();
                let num = |i: usize| parts.get(i).copied().ok_or_else(|| bad_dump(no, "short node line"));
                let node = match parts.first().copied() {
                    Some("split") => Node::Split {
                        feature: num(1)?.parse().map_err(|_| bad_dump(no, "feature"))?,
                        threshold: num(2)?.parse().map_err(|_| bad_dump(no, "threshold"))?,
                        left: num(3)?.parse().map_err(|_| bad_dump(no, "left"))?,
                        right: num(4)?.parse().map_err(|_| bad_dump(no, "right"))?,
                    },
                    Some("leaf") => Node::Leaf {
                        value: num(1)?.parse().map_err(|_| bad_dump(no, "leaf value"))?,
                    },
                    _ => return Err(bad_dump(no, "expected `split` or `leaf`")),
                };
                if let Node::Split { feature, left, right, .. } = node {
                    if feature >= n_features || left >= n_nodes || right >= n_nodes {
                        return Err(bad_dump(no, "node index out of range"));
                    }
                }
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        Ok(Booster {
            base,
            trees,
            n_features,
        })
    }
}

pub(crate) fn bad_dump(line: usize, reason: &str) -> SurrogateError {
    SurrogateError::BadDump {
        line,
        reason: reason.to_string(),
    }
}

pub(crate) fn key_values<'a>(line: &'a str, tag: &str) -> Option<Vec<(&'a str, &'a str)>> {
    let mut parts = line.split_whitespace();
    if parts.next()? != tag {
        return None;
    }
    parts.map(|p| p.split_once('=')).collect()
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    fields: &[(&str, &str)],
    key: &str,
    line: usize,
) -> Result<T, SurrogateError> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| bad_dump(line, &format!("missing or malformed `{key}`")))
}
