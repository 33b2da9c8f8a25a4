pub mod cpg;
pub mod detector;
pub mod frontend;
pub mod harness;
mod http;
pub mod metrics;
pub mod query;
pub mod slicer;
pub mod transforms;
