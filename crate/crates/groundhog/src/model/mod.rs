//! The grounded language model: vocabulary, parameter layout, exact
//! forward/backward passes, training, and grounded decoding.

pub mod backward;
pub mod config;
pub mod decode;
pub mod forward;
pub mod layout;
pub mod params;
pub mod train;
pub mod vocab;
