pub mod assembly;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod mesh;
pub mod operators;
pub mod problem;
pub mod scheduler;
pub mod solver;
pub mod stream;
pub mod transfer;
