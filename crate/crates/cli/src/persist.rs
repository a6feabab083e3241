//! Model files: one JSON document with every float array stored as base64
//! of little-endian IEEE-754 doubles, row-major.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use xrfm::data::{CategoricalTransform, ColumnSchema, Normalization, Preprocessor, Standardizer, TargetEncoder};
use xrfm::kernels::KernelSpec;
use xrfm::leaf_rfm::{FeatureMatrix, LeafHyperparams, LeafModel, Task, Transform};
use xrfm::tree::{FittedLeaf, Preprocessing, Split, TreeNode, TreeParams, XrfmModel};
use xrfm::{Matrix, Result, XrfmError};

pub const FORMAT_VERSION: &str = "xrfm/1";

fn corrupt(what: impl Into<String>) -> XrfmError {
    XrfmError::SchemaMismatch(format!("model file: {}", what.into()))
}

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| corrupt(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(corrupt("float array length is not a multiple of 8 bytes"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl MatrixFile {
    fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: encode_f64s(m.data()),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, decode_f64s(&self.data)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrayFile {
    Dense(MatrixFile),
    Diagonal { data: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessingFile {
    pub columns: Vec<ColumnSchema>,
    pub categorical_transform: CategoricalTransform,
    pub normalization: Normalization,
    pub mean: String,
    pub std: String,
    pub target: TargetEncoder,
    pub target_name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafFile {
    pub index: usize,
    pub path: u64,
    pub train_rows: Vec<usize>,
    pub refilled_rows: Vec<usize>,
    pub hyper: LeafHyperparams,
    /// Kernel with the bandwidth actually used by the leaf.
    pub kernel: KernelSpec,
    pub best_iteration: usize,
    /// `[val_score, best_val_error]`.
    pub scores: String,
    pub val_errors: String,
    pub alpha: MatrixFile,
    pub x_train: MatrixFile,
    pub transform: ArrayFile,
    pub feature_matrix: ArrayFile,
    pub agop: MatrixFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeFile {
    Internal {
        direction: String,
        threshold: String,
        left: usize,
        right: usize,
    },
    Leaf(Box<LeafFile>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub task: Task,
    pub n_features: usize,
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub tree_params: TreeParams,
    pub preprocessing: Option<PreprocessingFile>,
    pub root: usize,
    pub nodes: Vec<NodeFile>,
}

fn leaf_file(l: &FittedLeaf) -> LeafFile {
    let m = &l.model;
    LeafFile {
        index: l.index,
        path: l.path,
        train_rows: l.train_rows.clone(),
        refilled_rows: l.refilled_rows.clone(),
        hyper: l.hyper,
        kernel: m.kernel,
        best_iteration: m.best_iteration,
        scores: encode_f64s(&[l.val_score, m.best_val_error]),
        val_errors: encode_f64s(&m.val_errors),
        alpha: MatrixFile::from_matrix(&m.alpha),
        x_train: MatrixFile::from_matrix(&m.x_train),
        transform: match &m.transform {
            Transform::Dense(t) => ArrayFile::Dense(MatrixFile::from_matrix(t)),
            Transform::Diagonal(w) => ArrayFile::Diagonal { data: encode_f64s(w) },
        },
        feature_matrix: match &m.feature_matrix {
            FeatureMatrix::Dense(t) => ArrayFile::Dense(MatrixFile::from_matrix(t)),
            FeatureMatrix::Diagonal(w) => ArrayFile::Diagonal { data: encode_f64s(w) },
        },
        agop: MatrixFile::from_matrix(&m.agop),
    }
}

fn leaf_from_file(f: &LeafFile) -> Result<FittedLeaf> {
    let transform = match &f.transform {
        ArrayFile::Dense(m) => Transform::Dense(m.to_matrix()?),
        ArrayFile::Diagonal { data } => Transform::Diagonal(decode_f64s(data)?),
    };
    let mut model = LeafModel::new(f.x_train.to_matrix()?, f.alpha.to_matrix()?, transform, f.kernel)?;
    model.feature_matrix = match &f.feature_matrix {
        ArrayFile::Dense(m) => FeatureMatrix::Dense(m.to_matrix()?),
        ArrayFile::Diagonal { data } => FeatureMatrix::Diagonal(decode_f64s(data)?),
    };
    model.agop = f.agop.to_matrix()?;
    model.best_iteration = f.best_iteration;
    model.val_errors = decode_f64s(&f.val_errors)?;
    let scores = decode_f64s(&f.scores)?;
    if scores.len() != 2 {
        return Err(corrupt("leaf scores must hold two values"));
    }
    model.best_val_error = scores[1];
    Ok(FittedLeaf {
        index: f.index,
        path: f.path,
        train_rows: f.train_rows.clone(),
        refilled_rows: f.refilled_rows.clone(),
        hyper: f.hyper,
        val_score: scores[0],
        model,
    })
}

fn push_node(node: &TreeNode<FittedLeaf>, nodes: &mut Vec<NodeFile>) -> usize {
    let id = nodes.len();
    match node {
        TreeNode::Leaf(l) => nodes.push(NodeFile::Leaf(Box::new(leaf_file(l)))),
        TreeNode::Internal(s) => {
            nodes.push(NodeFile::Internal {
                direction: encode_f64s(&s.direction),
                threshold: encode_f64s(&[s.threshold]),
                left: 0,
                right: 0,
            });
            let l = push_node(&s.left, nodes);
            let r = push_node(&s.right, nodes);
            if let NodeFile::Internal { left, right, .. } = &mut nodes[id] {
                *left = l;
                *right = r;
            }
        }
    }
    id
}

fn build_node(nodes: &[NodeFile], id: usize, depth: usize) -> Result<TreeNode<FittedLeaf>> {
    if depth > nodes.len() {
        return Err(corrupt("node graph has a cycle"));
    }
    match nodes.get(id).ok_or_else(|| corrupt(format!("missing node {id}")))? {
        NodeFile::Leaf(l) => Ok(TreeNode::Leaf(leaf_from_file(l)?)),
        NodeFile::Internal {
            direction,
            threshold,
            left,
            right,
        } => {
            let t = decode_f64s(threshold)?;
            if t.len() != 1 {
                return Err(corrupt("threshold must hold one value"));
            }
            Ok(TreeNode::Internal(Box::new(Split {
                direction: decode_f64s(direction)?,
                threshold: t[0],
                left: build_node(nodes, *left, depth + 1)?,
                right: build_node(nodes, *right, depth + 1)?,
            })))
        }
    }
}

impl ModelFile {
    pub fn from_model(model: &XrfmModel) -> Self {
        let mut nodes = Vec::new();
        let root = push_node(&model.root, &mut nodes);
        Self {
            format: FORMAT_VERSION.to_string(),
            task: model.task,
            n_features: model.n_features,
            classes: model.classes.clone(),
            feature_names: model.feature_names.clone(),
            tree_params: model.tree_params,
            preprocessing: model.preprocessing.as_ref().map(|p| PreprocessingFile {
                columns: p.features.columns.clone(),
                categorical_transform: p.features.transform,
                normalization: p.features.normalization,
                mean: encode_f64s(&p.features.stats.mean),
                std: encode_f64s(&p.features.stats.std),
                target: p.target.clone(),
                target_name: p.target_name.clone(),
            }),
            root,
            nodes,
        }
    }

    pub fn into_model(self) -> Result<XrfmModel> {
        if self.format != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format `{}` (expected `{FORMAT_VERSION}`)",
                self.format
            )));
        }
        let root = build_node(&self.nodes, self.root, 0)?;
        let preprocessing = match self.preprocessing {
            Some(p) => Some(Preprocessing {
                features: Preprocessor {
                    columns: p.columns,
                    transform: p.categorical_transform,
                    normalization: p.normalization,
                    stats: Standardizer {
                        mean: decode_f64s(&p.mean)?,
                        std: decode_f64s(&p.std)?,
                    },
                },
                target: p.target,
                target_name: p.target_name,
            }),
            None => None,
        };
        Ok(XrfmModel {
            root,
            task: self.task,
            n_features: self.n_features,
            classes: self.classes,
            feature_names: self.feature_names,
            tree_params: self.tree_params,
            preprocessing,
        })
    }
}

pub fn to_json(model: &XrfmModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serialization")
}

pub fn from_json(text: &str) -> Result<XrfmModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    file.into_model()
}

pub fn save_model(model: &XrfmModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), to_json(model))
        .map_err(|e| XrfmError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<XrfmModel> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| XrfmError::Io(format!("{}: {e}", path.as_ref().display())))?;
    from_json(&text)
}
