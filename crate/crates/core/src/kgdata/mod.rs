//! Knowledge-graph data model, OpenEA ingestion and export, graph matrix
//! construction, and the synthetic hierarchical pair generator.

mod graph;
mod kg;
mod openea;
mod synthetic;

pub use graph::{build_graph_tensors, GraphTensors};
pub use kg::{Kg, KgPair, Link, LinkSplit, Triple};
pub use openea::{fold_dir, load_openea, write_openea, FOLD_ROOT};
pub use synthetic::{generate_synthetic_pair, split_links, SyntheticConfig};
