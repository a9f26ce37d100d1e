//! Speculative sampling with a dynamic draft tree whose depth is chosen by a
//! learned stopping policy, over exact toy language models.

pub mod accept_dist;
pub mod dataset;
pub mod drafting;
pub mod engine;
pub mod error;
pub mod lm;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod synth;
pub mod verify;

pub use accept_dist::{distributions_per_call, length_distribution, node_probs, AcceptanceDistribution, NodeProb};
pub use dataset::{Corpus, DataPoint, PointMeta, PrefixRule};
pub use drafting::{DraftConfig, DraftMode, DraftNode, DraftTree};
pub use error::{Error, Result};
pub use lm::{AnyModel, LookupModel, NGramModel, TokenDistribution, TokenId, TokenModel, UniformModel, Vocabulary};
pub use mdp::{Action, CostModel, MdpConfig};
pub use policy::{PolicyParams, TrainConfig};
pub use verify::{verify_chain, verify_tree, VerifyResult};
pub use engine::{bench, generate, BenchConfig, BenchRow, Controller, GenLimits, RunMetrics};
