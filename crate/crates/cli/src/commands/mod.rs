pub mod evaluate;
pub mod ingest;
pub mod run_all;
pub mod select;
pub mod synth;
pub mod train;
