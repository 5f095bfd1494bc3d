//! Gradient-boosted regression trees with per-observation weights.
//!
//! Squared-error boosting over depth-limited trees with exact greedy split
//! search. Weight-zero rows are structurally inert: they contribute nothing
//! to split candidates, gains, or leaf values, so appending them leaves a
//! fitted model bit-identical. All reductions run in a canonical order
//! (feature value, then target, then weight), which makes fits invariant to
//! row permutation as well.
//!
//! Categorical features are integer codes; candidate splits on them are
//! equality tests against each code, the one-hot view of the column.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("feature frame is malformed: {0}")]
    InvalidFrame(String),
    #[error("dataset rows are misaligned: {0}")]
    LengthMismatch(String),
    #[error("target at row {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("weight at row {row} is {weight}, outside [0, 1]")]
    WeightOutOfRange { row: usize, weight: f64 },
    #[error("no row has a positive weight")]
    AllWeightsZero,
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("frame schema does not match the fitted model: {0}")]
    SchemaMismatch(String),
    #[error("column '{column}' has categorical code {code} unseen at fit time")]
    UnknownCategory { column: String, code: u32 },
    #[error("model deserialization failed: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Row-major feature matrix with a fixed column schema.
///
/// Categorical columns hold non-negative integer codes stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    values: Vec<f64>,
    n_rows: usize,
}

impl FeatureFrame {
    pub fn new(
        names: Vec<String>,
        kinds: Vec<FeatureKind>,
        values: Vec<f64>,
    ) -> Result<Self, RegressorError> {
        if names.len() != kinds.len() {
            return Err(RegressorError::InvalidFrame(format!(
                "{} names but {} kinds",
                names.len(),
                kinds.len()
            )));
        }
        let n_cols = names.len();
        if n_cols == 0 {
            return Err(RegressorError::InvalidFrame("no columns".to_owned()));
        }
        if !values.len().is_multiple_of(n_cols) {
            return Err(RegressorError::InvalidFrame(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                n_cols
            )));
        }
        let n_rows = values.len() / n_cols;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(RegressorError::InvalidFrame(format!(
                    "non-finite value at row {}, column {}",
                    i / n_cols,
                    i % n_cols
                )));
            }
            if kinds[i % n_cols] == FeatureKind::Categorical
                && (v.fract() != 0.0 || *v < 0.0 || *v > u32::MAX as f64)
            {
                return Err(RegressorError::InvalidFrame(format!(
                    "categorical column {} holds non-code value {} at row {}",
                    i % n_cols,
                    v,
                    i / n_cols
                )));
            }
        }
        Ok(FeatureFrame { names, kinds, values, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.names.len() + col]
    }
}

/// Learner hyperparameters. `subsample` and `colsample` default to 1.0,
/// which keeps fitting fully deterministic regardless of seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub nrounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            nrounds: 200,
            max_depth: 14,
            eta: 0.6,
            min_samples_leaf: 1,
            subsample: 1.0,
            colsample: 1.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn new(nrounds: usize, max_depth: usize, eta: f64) -> Self {
        Hyperparams { nrounds, max_depth, eta, ..Default::default() }
    }

    fn validate(&self) -> Result<(), RegressorError> {
        if self.nrounds < 1 {
            return Err(RegressorError::InvalidParams("nrounds must be >= 1".to_owned()));
        }
        if self.max_depth < 1 {
            return Err(RegressorError::InvalidParams("max_depth must be >= 1".to_owned()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(RegressorError::InvalidParams("eta must be in (0, 1]".to_owned()));
        }
        if self.min_samples_leaf < 1 {
            return Err(RegressorError::InvalidParams("min_samples_leaf must be >= 1".to_owned()));
        }
        for (name, v) in [("subsample", self.subsample), ("colsample", self.colsample)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(RegressorError::InvalidParams(format!("{name} must be in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Aligned rows of features, targets, fit weights, and prediction bounds.
///
/// Bounds ride along for the engine's post-prediction clamp; the learner
/// itself fits unconstrained.
#[derive(Debug, Clone, Copy)]
pub struct WeightedDataset<'a> {
    pub frame: &'a FeatureFrame,
    pub targets: &'a [f64],
    pub weights: &'a [f64],
    pub bounds: &'a [(f64, f64)],
}

impl<'a> WeightedDataset<'a> {
    pub fn validate(&self) -> Result<(), RegressorError> {
        let n = self.frame.n_rows();
        if self.targets.len() != n || self.weights.len() != n || self.bounds.len() != n {
            return Err(RegressorError::LengthMismatch(format!(
                "frame has {n} rows; targets {}, weights {}, bounds {}",
                self.targets.len(),
                self.weights.len(),
                self.bounds.len()
            )));
        }
        for (row, t) in self.targets.iter().enumerate() {
            if !t.is_finite() {
                return Err(RegressorError::NonFiniteTarget(row));
            }
        }
        for (row, &w) in self.weights.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(RegressorError::WeightOutOfRange { row, weight: w });
            }
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(RegressorError::AllWeightsZero);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum SplitTest {
    /// Numeric: goes left when `x <= threshold`.
    LessEq(f64),
    /// Categorical: goes left when `x == code`.
    Equal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, test: SplitTest, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, frame: &FeatureFrame, row: usize) -> f64 {
        let mut node = 0usize;
        loop {
            match self.nodes[node] {
                Node::Leaf { value } => return value,
                Node::Split { feature, test, left, right } => {
                    let x = frame.value(row, feature);
                    let go_left = match test {
                        SplitTest::LessEq(t) => x <= t,
                        SplitTest::Equal(c) => x == c,
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }
}

/// A fitted boosted ensemble. Immutable and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    version: u32,
    bias: f64,
    eta: f64,
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
    /// Per categorical column, the sorted codes present in the fit frame.
    /// Prediction rejects codes outside these closed dictionaries.
    allowed_codes: Vec<Option<Vec<u32>>>,
    trees: Vec<Tree>,
}

impl Model {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_frame(&self, frame: &FeatureFrame) -> Result<(), RegressorError> {
        if frame.kinds() != self.kinds.as_slice() || frame.names() != self.names.as_slice() {
            return Err(RegressorError::SchemaMismatch(format!(
                "expected columns {:?}",
                self.names
            )));
        }
        for (col, allowed) in self.allowed_codes.iter().enumerate() {
            let Some(allowed) = allowed else { continue };
            for row in 0..frame.n_rows() {
                let code = frame.value(row, col) as u32;
                if allowed.binary_search(&code).is_err() {
                    return Err(RegressorError::UnknownCategory {
                        column: self.names[col].clone(),
                        code,
                    });
                }
            }
        }
        Ok(())
    }

    /// Raw ensemble outputs; any clamping or projection is the caller's job.
    pub fn predict(&self, frame: &FeatureFrame) -> Result<Vec<f64>, RegressorError> {
        self.predict_staged(frame, self.trees.len())
    }

    /// Predictions using only the first `rounds` trees.
    pub fn predict_staged(
        &self,
        frame: &FeatureFrame,
        rounds: usize,
    ) -> Result<Vec<f64>, RegressorError> {
        self.check_frame(frame)?;
        let rounds = rounds.min(self.trees.len());
        let mut out = vec![self.bias; frame.n_rows()];
        for tree in &self.trees[..rounds] {
            for (row, o) in out.iter_mut().enumerate() {
                *o += self.eta * tree.predict_row(frame, row);
            }
        }
        Ok(out)
    }

    /// Versioned structured-text dump of the ensemble for audit and reuse.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RegressorError> {
        let model: Model = serde_json::from_str(s).map_err(|e| RegressorError::Decode(e.to_string()))?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(RegressorError::Decode(format!(
                "unsupported model format version {}",
                model.version
            )));
        }
        Ok(model)
    }
}

struct SplitChoice {
    feature: usize,
    test: SplitTest,
    gain: f64,
}

struct TreeBuilder<'a> {
    frame: &'a FeatureFrame,
    residuals: &'a [f64],
    weights: &'a [f64],
    min_samples_leaf: usize,
    max_depth: usize,
    columns: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    /// Node totals accumulated in the canonical order of the first column
    /// list, so they do not depend on input row order.
    fn node_totals(&self, rows: &[u32]) -> (f64, f64) {
        let mut w_sum = 0.0;
        let mut wy_sum = 0.0;
        for &r in rows {
            let w = self.weights[r as usize];
            w_sum += w;
            wy_sum += w * self.residuals[r as usize];
        }
        (w_sum, wy_sum)
    }

    fn best_split(&self, col_lists: &[Vec<u32>], w_total: f64, s_total: f64) -> Option<SplitChoice> {
        let n_total = col_lists[0].len();
        let parent_score = s_total * s_total / w_total;
        let mut best: Option<SplitChoice> = None;

        for (ci, &col) in self.columns.iter().enumerate() {
            let list = &col_lists[ci];
            // Aggregate contiguous runs of equal feature value.
            let mut groups: Vec<(f64, f64, f64, usize)> = Vec::new();
            let mut i = 0;
            while i < list.len() {
                let v = self.frame.value(list[i] as usize, col);
                let mut w_sum = 0.0;
                let mut wy_sum = 0.0;
                let mut count = 0usize;
                while i < list.len() && self.frame.value(list[i] as usize, col) == v {
                    let r = list[i] as usize;
                    w_sum += self.weights[r];
                    wy_sum += self.weights[r] * self.residuals[r];
                    count += 1;
                    i += 1;
                }
                groups.push((v, w_sum, wy_sum, count));
            }
            if groups.len() < 2 {
                continue;
            }

            let evaluate = |test: SplitTest, w_l: f64, s_l: f64, n_l: usize, best: &mut Option<SplitChoice>| {
                let n_r = n_total - n_l;
                if n_l < self.min_samples_leaf || n_r < self.min_samples_leaf {
                    return;
                }
                let w_r = w_total - w_l;
                if !(w_l > 0.0 && w_r > 0.0) {
                    return;
                }
                let s_r = s_total - s_l;
                let gain = s_l * s_l / w_l + s_r * s_r / w_r - parent_score;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    *best = Some(SplitChoice { feature: col, test, gain });
                }
            };

            match self.frame.kinds()[col] {
                FeatureKind::Numeric => {
                    let mut w_l = 0.0;
                    let mut s_l = 0.0;
                    let mut n_l = 0usize;
                    for g in &groups[..groups.len() - 1] {
                        w_l += g.1;
                        s_l += g.2;
                        n_l += g.3;
                        evaluate(SplitTest::LessEq(g.0), w_l, s_l, n_l, &mut best);
                    }
                }
                FeatureKind::Categorical => {
                    for g in &groups {
                        evaluate(SplitTest::Equal(g.0), g.1, g.2, g.3, &mut best);
                    }
                }
            }
        }
        best
    }

    fn build(&mut self, col_lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let (w_total, s_total) = self.node_totals(&col_lists[0]);
        let leaf_value = s_total / w_total;

        let choice = if depth < self.max_depth && col_lists[0].len() >= 2 * self.min_samples_leaf
        {
            self.best_split(&col_lists, w_total, s_total)
        } else {
            None
        };
        let Some(choice) = choice else {
            self.nodes.push(Node::Leaf { value: leaf_value });
            return self.nodes.len() - 1;
        };

        let goes_left = |row: u32| {
            let x = self.frame.value(row as usize, choice.feature);
            match choice.test {
                SplitTest::LessEq(t) => x <= t,
                SplitTest::Equal(c) => x == c,
            }
        };
        // Stable partition keeps each child's lists in canonical order.
        let mut left_lists = Vec::with_capacity(col_lists.len());
        let mut right_lists = Vec::with_capacity(col_lists.len());
        for list in &col_lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&row| goes_left(row));
            left_lists.push(l);
            right_lists.push(r);
        }
        drop(col_lists);

        let index = self.nodes.len();
        self.nodes.push(Node::Leaf { value: leaf_value }); // placeholder
        let left = self.build(left_lists, depth + 1);
        let right = self.build(right_lists, depth + 1);
        self.nodes[index] = Node::Split { feature: choice.feature, test: choice.test, left, right };
        index
    }
}

/// Fit a boosted ensemble minimizing weighted squared error.
pub fn fit(data: &WeightedDataset<'_>, params: &Hyperparams) -> Result<Model, RegressorError> {
    params.validate()?;
    data.validate()?;
    let frame = data.frame;
    let n_cols = frame.n_cols();

    let active: Vec<u32> = (0..frame.n_rows() as u32)
        .filter(|&r| data.weights[r as usize] > 0.0)
        .collect();

    let allowed_codes: Vec<Option<Vec<u32>>> = (0..n_cols)
        .map(|col| match frame.kinds()[col] {
            FeatureKind::Numeric => None,
            FeatureKind::Categorical => {
                let mut codes: Vec<u32> =
                    (0..frame.n_rows()).map(|row| frame.value(row, col) as u32).collect();
                codes.sort_unstable();
                codes.dedup();
                Some(codes)
            }
        })
        .collect();

    // Canonical order for the bias reduction: by (target, weight).
    let mut bias_order = active.clone();
    bias_order.sort_by(|&a, &b| {
        let (a, b) = (a as usize, b as usize);
        data.targets[a]
            .total_cmp(&data.targets[b])
            .then(data.weights[a].total_cmp(&data.weights[b]))
    });
    let mut w_sum = 0.0;
    let mut wy_sum = 0.0;
    for &r in &bias_order {
        w_sum += data.weights[r as usize];
        wy_sum += data.weights[r as usize] * data.targets[r as usize];
    }
    let bias = wy_sum / w_sum;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut scores = vec![bias; frame.n_rows()];
    let mut residuals = vec![0.0; frame.n_rows()];
    let mut trees = Vec::with_capacity(params.nrounds);

    for _round in 0..params.nrounds {
        for &r in &active {
            let r = r as usize;
            residuals[r] = data.targets[r] - scores[r];
        }

        let build_rows: Vec<u32> = if params.subsample < 1.0 {
            let mut pool = active.clone();
            pool.shuffle(&mut rng);
            let keep = ((pool.len() as f64 * params.subsample).round() as usize).max(1);
            let mut chosen = pool[..keep].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            active.clone()
        };
        let columns: Vec<usize> = if params.colsample < 1.0 {
            let mut pool: Vec<usize> = (0..n_cols).collect();
            pool.shuffle(&mut rng);
            let keep = ((n_cols as f64 * params.colsample).round() as usize).max(1);
            let mut chosen = pool[..keep].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            (0..n_cols).collect()
        };

        // Per-column canonical orders: (value, residual, weight). Rows that
        // tie on all three contribute identical summands, so any order among
        // them yields the same reductions.
        let col_lists: Vec<Vec<u32>> = columns
            .iter()
            .map(|&col| {
                let mut list = build_rows.clone();
                list.sort_by(|&a, &b| {
                    let (a, b) = (a as usize, b as usize);
                    frame
                        .value(a, col)
                        .total_cmp(&frame.value(b, col))
                        .then(residuals[a].total_cmp(&residuals[b]))
                        .then(data.weights[a].total_cmp(&data.weights[b]))
                });
                list
            })
            .collect();

        let mut builder = TreeBuilder {
            frame,
            residuals: &residuals,
            weights: data.weights,
            min_samples_leaf: params.min_samples_leaf,
            max_depth: params.max_depth,
            columns,
            nodes: Vec::new(),
        };
        builder.build(col_lists, 0);
        let tree = Tree { nodes: builder.nodes };

        for &r in &active {
            let r = r as usize;
            scores[r] += params.eta * tree.predict_row(frame, r);
        }
        trees.push(tree);
    }

    Ok(Model {
        version: MODEL_FORMAT_VERSION,
        bias,
        eta: params.eta,
        names: frame.names().to_vec(),
        kinds: frame.kinds().to_vec(),
        allowed_codes,
        trees,
    })
}
