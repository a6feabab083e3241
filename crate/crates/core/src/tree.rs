//! Median-split partition tree with a leaf RFM per leaf.
//!
//! Each internal node fits a single kernel ridge solve on a subsample of its
//! rows, takes the top eigenvector of that model's AGOP and sends rows whose
//! projection is at most the median projection to the left child.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Preprocessor, Table, TargetEncoder};
use crate::error::{Result, XrfmError};
use crate::kernels::{adapt_bandwidth, gram_with_ridge, median, KernelSpec};
use crate::leaf_rfm::{
    agop_on_training, argmax_rows, fit_leaf_rfm_with, predict_leaf, LeafFitOptions, LeafHyperparams, LeafModel,
    Task, Transform,
};
use crate::linalg::{cholesky_solve_owned, sym_eigh, top_eigenvector, Matrix};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Rows sampled for each split model (capped at the node size).
    pub split_samples: usize,
    /// Nodes with at most this many rows become leaves.
    pub max_leaf_size: usize,
    pub split_ridge: f64,
    pub seed: u64,
    /// Leaf validation sets smaller than this are topped up from training rows.
    pub refill_size: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            split_samples: 5000,
            max_leaf_size: 2000,
            split_ridge: 1e-3,
            seed: 0,
            refill_size: 1500,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(XrfmError::InvalidParam {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.split_samples < 2 {
            return bad("split_samples", "must be at least 2");
        }
        if self.max_leaf_size < 2 {
            return bad("max_leaf_size", "must be at least 2");
        }
        if self.refill_size < 1 {
            return bad("refill_size", "must be at least 1");
        }
        if !(self.split_ridge >= 0.0 && self.split_ridge.is_finite()) {
            return bad("split_ridge", "must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split<L> {
    /// Unit split direction.
    pub direction: Vec<f64>,
    pub threshold: f64,
    pub left: TreeNode<L>,
    pub right: TreeNode<L>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode<L> {
    Internal(Box<Split<L>>),
    Leaf(L),
}

impl<L> TreeNode<L> {
    /// The leaf whose region contains `x`; ties go left.
    pub fn route(&self, x: &[f64]) -> &L {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(l) => return l,
                TreeNode::Internal(s) => {
                    node = if dot(&s.direction, x) <= s.threshold {
                        &s.left
                    } else {
                        &s.right
                    };
                }
            }
        }
    }

    /// Leaves from left to right.
    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a L>) {
        match self {
            TreeNode::Leaf(l) => out.push(l),
            TreeNode::Internal(s) => {
                s.left.collect_leaves(out);
                s.right.collect_leaves(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Internal(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }

    /// Rebuilds the tree with leaves replaced in left-to-right order.
    pub fn map_leaves<M>(self, f: &mut impl FnMut(L) -> M) -> TreeNode<M> {
        match self {
            TreeNode::Leaf(l) => TreeNode::Leaf(f(l)),
            TreeNode::Internal(s) => {
                let s = *s;
                let left = s.left.map_leaves(f);
                let right = s.right.map_leaves(f);
                TreeNode::Internal(Box::new(Split {
                    direction: s.direction,
                    threshold: s.threshold,
                    left,
                    right,
                }))
            }
        }
    }
}

/// Training rows of a leaf in an unfitted tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRows {
    /// Heap position: root 1, children `2p` and `2p + 1`.
    pub path: u64,
    pub rows: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the tree node at heap position `path`.
pub fn node_seed(seed: u64, path: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ path)
}

/// One kernel ridge solve on `x` followed by the top eigenvector of the
/// model's AGOP at its training rows.
pub fn split_direction(x: &Matrix, y: &Matrix, kernel: &KernelSpec, ridge: f64, seed: u64) -> Result<Vec<f64>> {
    let d = x.cols();
    let mut k = *kernel;
    k.bandwidth = adapt_bandwidth(kernel, x, seed);
    let gram = gram_with_ridge(&k, x, ridge);
    let alpha = cholesky_solve_owned(gram, y).map_err(|e| XrfmError::SolveFailed(Box::new(e)))?;
    let model = LeafModel::new(x.clone(), alpha, Transform::identity(d, true), k)?;
    top_eigenvector(&agop_on_training(&model))
}

/// Builds the unfitted tree over the rows of `x`.
pub fn tree_partition(x: &Matrix, y: &Matrix, params: &TreeParams, kernel: &KernelSpec) -> Result<TreeNode<LeafRows>> {
    params.validate()?;
    kernel.validate()?;
    if x.rows() == 0 {
        return Err(XrfmError::InvalidParam {
            field: "train rows".into(),
            reason: "cannot partition an empty dataset".into(),
        });
    }
    if y.rows() != x.rows() {
        return Err(XrfmError::DimensionMismatch(format!(
            "{} rows of features, {} rows of targets",
            x.rows(),
            y.rows()
        )));
    }
    build_node(x, y, params, kernel, (0..x.rows()).collect(), 1)
}

fn build_node(
    x: &Matrix,
    y: &Matrix,
    params: &TreeParams,
    kernel: &KernelSpec,
    rows: Vec<usize>,
    path: u64,
) -> Result<TreeNode<LeafRows>> {
    if rows.len() <= params.max_leaf_size {
        return Ok(TreeNode::Leaf(LeafRows { path, rows }));
    }
    let seed = node_seed(params.seed, path);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.split_samples.min(rows.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), n)
        .into_iter()
        .map(|k| rows[k])
        .collect();
    picked.sort_unstable();
    let direction = split_direction(
        &x.select_rows(&picked),
        &y.select_rows(&picked),
        kernel,
        params.split_ridge,
        seed,
    )?;

    let proj: Vec<f64> = rows.iter().map(|&i| dot(&direction, x.row(i))).collect();
    let threshold = median(&mut proj.clone());
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for (&i, &p) in rows.iter().zip(&proj) {
        if p <= threshold {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        // every row projects onto the threshold side; fall back to halves
        warn!(
            "degenerate split at node {path} ({} rows); splitting by row order",
            rows.len()
        );
        let half = rows.len().div_ceil(2);
        left = rows[..half].to_vec();
        right = rows[half..].to_vec();
    }
    debug!("node {path}: {} rows -> {} / {}", rows.len(), left.len(), right.len());
    drop(rows);

    let (l, r) = rayon::join(
        || build_node(x, y, params, kernel, left, 2 * path),
        || build_node(x, y, params, kernel, right, 2 * path + 1),
    );
    Ok(TreeNode::Internal(Box::new(Split {
        direction,
        threshold,
        left: l?,
        right: r?,
    })))
}

/// A leaf's training and validation data after routing and refill.
#[derive(Debug, Clone)]
pub struct PreparedLeaf {
    pub index: usize,
    pub path: u64,
    /// Rows of the training set the leaf model is fitted on.
    pub train_rows: Vec<usize>,
    /// Training-set rows moved into this leaf's validation set.
    pub refilled_rows: Vec<usize>,
    /// Validation-set rows routed to this leaf.
    pub routed_val_rows: Vec<usize>,
    pub x: Matrix,
    pub y: Matrix,
    pub x_val: Matrix,
    pub y_val: Matrix,
    pub seed: u64,
}

/// Number of training rows to move so a leaf's validation set reaches
/// `min(refill_size, ⌊train/5⌋)`, and at least one row when nothing was routed.
pub fn refill_count(train: usize, routed: usize, refill_size: usize) -> usize {
    let target = refill_size.min(train / 5);
    if routed == 0 && target == 0 {
        return usize::from(train > 2);
    }
    target.saturating_sub(routed)
}

/// Routes validation rows and refills each leaf's validation set.
pub fn prepare_leaves(
    skeleton: &TreeNode<LeafRows>,
    train: &Dataset,
    val: &Dataset,
    params: &TreeParams,
) -> Result<Vec<PreparedLeaf>> {
    let leaves = skeleton.leaves();
    let index_of: std::collections::HashMap<u64, usize> =
        leaves.iter().enumerate().map(|(k, l)| (l.path, k)).collect();
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); leaves.len()];
    for i in 0..val.n_rows() {
        let leaf = skeleton.route(val.x.row(i));
        routed[index_of[&leaf.path]].push(i);
    }

    leaves
        .iter()
        .zip(routed)
        .enumerate()
        .map(|(index, (leaf, routed_val_rows))| {
            let seed = node_seed(params.seed, leaf.path);
            let k = refill_count(leaf.rows.len(), routed_val_rows.len(), params.refill_size);
            let mut rows = leaf.rows.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1);
            rows.shuffle(&mut rng);
            let mut refilled_rows = rows.split_off(rows.len() - k);
            rows.sort_unstable();
            refilled_rows.sort_unstable();
            if rows.len() < 2 {
                return Err(XrfmError::LeafTooSmall { leaf: index, rows: rows.len() });
            }
            let x_val = val
                .x
                .select_rows(&routed_val_rows)
                .vstack(&train.x.select_rows(&refilled_rows))?;
            let y_val = val
                .y
                .select_rows(&routed_val_rows)
                .vstack(&train.y.select_rows(&refilled_rows))?;
            Ok(PreparedLeaf {
                index,
                path: leaf.path,
                x: train.x.select_rows(&rows),
                y: train.y.select_rows(&rows),
                train_rows: rows,
                refilled_rows,
                routed_val_rows,
                x_val,
                y_val,
                seed,
            })
        })
        .collect()
}

/// A fitted leaf.
#[derive(Debug, Clone)]
pub struct FittedLeaf {
    pub index: usize,
    pub path: u64,
    pub train_rows: Vec<usize>,
    pub refilled_rows: Vec<usize>,
    pub hyper: LeafHyperparams,
    /// Validation score of the leaf model (nRMSE or classification error).
    pub val_score: f64,
    pub model: LeafModel,
}

/// nRMSE over all outputs for regression (plain RMSE when the targets are
/// constant), argmax classification error for classification.
pub fn score(task: Task, y_true: &Matrix, y_pred: &Matrix) -> Result<f64> {
    match task {
        Task::Regression => match metrics::nrmse(y_true.data(), y_pred.data()) {
            Err(XrfmError::ZeroVariance) => metrics::rmse(y_true.data(), y_pred.data()),
            r => r,
        },
        Task::Classification => metrics::classification_error(&argmax_rows(y_true), &argmax_rows(y_pred)),
    }
}

/// Fits one prepared leaf.
pub fn fit_prepared(leaf: &PreparedLeaf, hyper: &LeafHyperparams, task: Task, spans: &[std::ops::Range<usize>]) -> Result<FittedLeaf> {
    let opts = LeafFitOptions {
        categorical_groups: spans.to_vec(),
        seed: leaf.seed,
    };
    let model = fit_leaf_rfm_with(&leaf.x, &leaf.y, &leaf.x_val, &leaf.y_val, hyper, task, &opts)?;
    let val_score = score(task, &leaf.y_val, &predict_leaf(&model, &leaf.x_val)?)?;
    Ok(FittedLeaf {
        index: leaf.index,
        path: leaf.path,
        train_rows: leaf.train_rows.clone(),
        refilled_rows: leaf.refilled_rows.clone(),
        hyper: *hyper,
        val_score,
        model,
    })
}

/// Encoders needed to predict from raw tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub features: Preprocessor,
    pub target: TargetEncoder,
    pub target_name: Option<String>,
}

#[derive(Debug, Clone)]
pub struct XrfmModel {
    pub root: TreeNode<FittedLeaf>,
    pub task: Task,
    pub n_features: usize,
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub tree_params: TreeParams,
    pub preprocessing: Option<Preprocessing>,
}

impl XrfmModel {
    pub fn leaves(&self) -> Vec<&FittedLeaf> {
        self.root.leaves()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn route(&self, x: &[f64]) -> &FittedLeaf {
        self.root.route(x)
    }

    pub fn predict(&self, xq: &Matrix) -> Result<Matrix> {
        xrfm_predict(self, xq)
    }

    /// Predicted class names (classification only).
    pub fn predict_labels(&self, xq: &Matrix) -> Result<Vec<String>> {
        let scores = self.predict(xq)?;
        Ok(argmax_rows(&scores)
            .into_iter()
            .map(|k| self.classes.get(k).cloned().unwrap_or_default())
            .collect())
    }

    /// Encodes a raw table with the stored preprocessing and predicts.
    pub fn predict_table(&self, table: &Table) -> Result<Matrix> {
        let pre = self.preprocessing.as_ref().ok_or_else(|| {
            XrfmError::SchemaMismatch("model carries no preprocessing metadata".into())
        })?;
        self.predict(&pre.features.transform(table)?)
    }
}

fn check_pair(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.n_rows() == 0 {
        return Err(XrfmError::InvalidParam {
            field: "train rows".into(),
            reason: "training set is empty".into(),
        });
    }
    if val.x.cols() != train.x.cols() || val.y.cols() != train.y.cols() {
        return Err(XrfmError::DimensionMismatch(
            "validation columns differ from training columns".into(),
        ));
    }
    Ok(())
}

pub(crate) fn assemble(
    skeleton: TreeNode<LeafRows>,
    fitted: Vec<FittedLeaf>,
    train: &Dataset,
    params: &TreeParams,
) -> XrfmModel {
    let mut it = fitted.into_iter();
    let root = skeleton.map_leaves(&mut |_| it.next().expect("one fit per leaf"));
    XrfmModel {
        root,
        task: train.task,
        n_features: train.x.cols(),
        classes: train.classes.clone(),
        feature_names: train.feature_names.clone(),
        tree_params: *params,
        preprocessing: None,
    }
}

/// Partitions `train`, routes and refills validation rows, then fits a leaf
/// RFM per leaf.
pub fn xrfm_fit(train: &Dataset, val: &Dataset, params: &TreeParams, hyper: &LeafHyperparams) -> Result<XrfmModel> {
    check_pair(train, val)?;
    hyper.validate()?;
    let skeleton = tree_partition(&train.x, &train.y, params, &hyper.kernel)?;
    let prepared = prepare_leaves(&skeleton, train, val, params)?;
    let fitted = prepared
        .par_iter()
        .map(|leaf| fit_prepared(leaf, hyper, train.task, &train.spans))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(skeleton, fitted, train, params))
}

/// Routes every row of `xq` and predicts with its leaf. Classification
/// returns per-class scores; see [`XrfmModel::predict_labels`].
pub fn xrfm_predict(model: &XrfmModel, xq: &Matrix) -> Result<Matrix> {
    if xq.cols() != model.n_features {
        return Err(XrfmError::SchemaMismatch(format!(
            "model expects {} features, query has {}",
            model.n_features,
            xq.cols()
        )));
    }
    let leaves = model.leaves();
    let c = leaves.first().map_or(0, |l| l.model.n_outputs());
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); leaves.len()];
    for i in 0..xq.rows() {
        groups[model.route(xq.row(i)).index].push(i);
    }
    let mut out = Matrix::zeros(xq.rows(), c);
    for (leaf, rows) in leaves.iter().zip(&groups) {
        if rows.is_empty() {
            continue;
        }
        let pred = predict_leaf(&leaf.model, &xq.select_rows(rows))?;
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(pred.row(k));
        }
    }
    Ok(out)
}

/// Feature relevance summary of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafExplanation {
    pub leaf: usize,
    pub diagonal: Vec<f64>,
    /// Feature indices by decreasing diagonal entry (ties by index).
    pub ranking: Vec<usize>,
    /// Descending eigenvalues.
    pub eigenvalues: Vec<f64>,
    pub top_eigenvector: Vec<f64>,
}

impl LeafExplanation {
    pub fn from_matrix(leaf: usize, m: &Matrix) -> Result<Self> {
        let diagonal = m.diag();
        let mut ranking: Vec<usize> = (0..diagonal.len()).collect();
        ranking.sort_by(|&a, &b| diagonal[b].total_cmp(&diagonal[a]).then(a.cmp(&b)));
        let eig = sym_eigh(m)?;
        let top_eigenvector = if m.rows() > 0 { eig.eigenvector(0) } else { Vec::new() };
        Ok(Self {
            leaf,
            diagonal,
            ranking,
            eigenvalues: eig.eigenvalues,
            top_eigenvector,
        })
    }
}

/// AGOP summaries of every leaf's selected predictor.
pub fn export_leaf_agops(model: &XrfmModel) -> Result<Vec<LeafExplanation>> {
    model
        .leaves()
        .iter()
        .map(|l| LeafExplanation::from_matrix(l.index, &l.model.agop))
        .collect()
}
