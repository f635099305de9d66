pub mod density;
pub mod ingestion;
pub mod lrd;
pub mod pnm;
pub mod quality;
pub mod stats;
pub mod synth;
