//! Community detection in networks with node metadata, using a
//! degree-corrected stochastic block model whose community prior depends on
//! each node's metadata value.

pub mod affinity;
pub mod bp;
pub mod em;
pub mod graph;
pub mod metadata;
pub mod metrics;
pub mod prior;
pub mod report;
pub mod synth;

pub use affinity::{BlockAffinity, THETA_FLOOR};
pub use bp::{run_bp, BeliefPropagation, BpError, BpOptions, Marginals};
pub use em::{derive_seed, fit, predict_from_metadata, FitConfig, FitError, FitResult, Prediction, RestartRecord};
pub use graph::{load_edge_list, Graph, GraphError};
pub use metadata::{
    load_metadata, DiscreteMetadata, MetadataColumn, MetadataEncoding, MetadataError, MetadataKind, OrderedMetadata,
    Rescale,
};
pub use metrics::{conditional_entropy_model, fraction_correct, nmi, MetricsError};
pub use prior::{BernsteinPrior, DiscretePrior, MetaValue, Prior, PriorError};
pub use report::{
    read_labels_csv, write_labels_csv, write_marginals_csv, FitReport, PriorReport, ReportError, RestartSummary, RunManifest,
};
pub use synth::{detectability_threshold, generate_metadata, generate_sbm, PlantedInstance, PlantedParams, SynthError};
