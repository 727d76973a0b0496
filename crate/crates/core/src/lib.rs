pub mod archetype;
pub mod assertgen;
pub mod checker;
pub mod composer;
pub mod config;
pub mod ingest;
pub mod ir;
pub mod ops;
pub mod pipeline;
pub mod reducer;
pub mod simulator;
pub mod smv;
