//! Synthetic grounded-scene corpus: scene layout, backbone features,
//! mask proposals, conversation templating, balancing, and JSONL I/O.

pub mod backbone;
pub mod conversation;
pub mod corpus;
pub mod proposals;
pub mod sampler;
pub mod scene;
