pub mod block;
pub mod bundle;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod seed;
pub mod sparse;
pub mod tree;
pub mod treewidth;

pub use error::{Error, Result};
pub use block::{reconstruct_sb, BlockRecovery, BlockRecoveryConfig};
pub use graph::{CentralityValue, ComponentSplit, Graph};
pub use harness::{Algorithm, OracleBackend, RecoveryReport, RunSpec};
pub use linalg::{DenseMatrix, RankConfig, RankMethod};
pub use models::{ModelInstance, ModelKind};
pub use oracle::{CovarianceOracle, DenseOracle, QueryCounter, QueryStats, TreeOracle};
pub use sparse::{PrecisionEstimate, SparseSymmetric};
pub use tree::{reconstruct_tree, CentralityConfig, SeparationPredicate, TreeRecovery};
pub use treewidth::{main_reconstruct, SeparatorConfig, TreewidthRecovery};
