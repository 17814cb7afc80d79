pub mod edit;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod grpo;
pub mod image;
pub mod policy;
pub mod rig;
pub mod scene;
pub mod verifiers;
