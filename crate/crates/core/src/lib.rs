//! Temporal action localization with graph convolutions over action proposals.
//!
//! The pipeline: build a relation graph over each video's proposals
//! ([`graph`]), run two graph-convolution stacks over original and extended
//! proposal features ([`gcn`], [`network`]), predict action class, completeness,
//! and boundary offsets ([`heads`]), train with a multi-task loss ([`loss`],
//! [`trainer`]), and evaluate detections with NMS and mAP ([`eval`]).

pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod heads;
pub mod interval;
pub mod io;
pub mod labels;
pub mod loss;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod proposal;
pub mod timing;
pub mod trainer;

pub use error::{Error, Result};
pub use interval::{GroundTruthInstance, Interval, Offset};
pub use proposal::{Proposal, ProposalSet};
