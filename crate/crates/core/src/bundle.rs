//! Instance bundles on disk: `graph.txt`, `model.json`, optional `sigma.covq`,
//! and `precision.txt`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{ModelInstance, ModelKind, ModelParams, TreeDecomposition, MATERIALIZATION_CAP};
use crate::oracle::{read_covq, write_covq, DenseOracle, TreeModel};
use crate::sparse::{dense_inverse, SparseSymmetric};

pub const GRAPH_FILE: &str = "graph.txt";
pub const MODEL_FILE: &str = "model.json";
pub const SIGMA_FILE: &str = "sigma.covq";
pub const PRECISION_FILE: &str = "precision.txt";
pub const MODEL_SCHEMA: &str = "covquery-model/1";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    kind: ModelKind,
    seed: u64,
    n: usize,
    params: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<(usize, usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    certificate: Option<TreeDecomposition>,
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_text(path: PathBuf) -> Result<String> {
    fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
}

/// Writes all bundle files into `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, inst: &ModelInstance) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(dir.join(GRAPH_FILE), &inst.graph.to_text())?;
    write_text(dir.join(PRECISION_FILE), &inst.precision.to_text())?;
    let model = ModelFile {
        schema: MODEL_SCHEMA.into(),
        kind: inst.kind,
        seed: inst.seed,
        n: inst.n(),
        params: inst.params.clone(),
        edges: inst.tree.as_ref().map(|t| t.edges.clone()),
        certificate: inst.certificate.clone(),
    };
    write_text(dir.join(MODEL_FILE), &serde_json::to_string_pretty(&model)?)?;
    let sigma_path = dir.join(SIGMA_FILE);
    match &inst.sigma {
        Some(s) => write_covq(&sigma_path, s.matrix())?,
        None if sigma_path.exists() => fs::remove_file(&sigma_path).map_err(|e| Error::io(&sigma_path, e))?,
        None => {}
    }
    Ok(())
}

/// Whether `dir` holds the ground-truth files needed for verification.
pub fn has_ground_truth(dir: &Path) -> bool {
    dir.join(PRECISION_FILE).is_file() && dir.join(GRAPH_FILE).is_file()
}

/// Loads a bundle. Dense kinds without `sigma.covq` are re-materialized from
/// the precision file when small enough.
pub fn read_bundle(dir: &Path) -> Result<ModelInstance> {
    let model: ModelFile = serde_json::from_str(&read_text(dir.join(MODEL_FILE))?)?;
    if model.schema != MODEL_SCHEMA {
        return Err(Error::parse(MODEL_FILE, 0, format!("unsupported schema {:?}", model.schema)));
    }
    let graph = Graph::parse_text(&read_text(dir.join(GRAPH_FILE))?)?;
    if graph.n() != model.n {
        return Err(Error::parse(GRAPH_FILE, 1, format!("n={} but model says {}", graph.n(), model.n)));
    }
    let precision = SparseSymmetric::parse_text(&read_text(dir.join(PRECISION_FILE))?)?;
    let tree = match (model.kind.is_tree(), model.edges) {
        (true, Some(edges)) => Some(TreeModel::new(model.n, edges)?),
        (true, None) => return Err(Error::parse(MODEL_FILE, 0, "tree kind without edge data")),
        (false, _) => None,
    };
    let sigma_path = dir.join(SIGMA_FILE);
    let sigma = if sigma_path.is_file() {
        Some(Arc::new(DenseOracle::new(read_covq(&sigma_path)?)?))
    } else if tree.is_some() {
        None
    } else if model.n <= MATERIALIZATION_CAP {
        Some(Arc::new(DenseOracle::new(dense_inverse(&precision)?)?))
    } else {
        None
    };
    Ok(ModelInstance {
        kind: model.kind,
        graph,
        seed: model.seed,
        params: model.params,
        tree,
        precision,
        sigma,
        certificate: model.certificate,
    })
}
