pub mod dataset;
pub mod flm;
pub mod gan;
pub mod imaging;
pub mod mailbox;
pub mod merger;
pub mod metrics;
pub mod nn;
pub mod recon;
pub mod service;
pub mod synth;
pub mod tracking;
pub mod wire;
