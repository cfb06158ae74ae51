pub mod domain;
pub mod plugins;
pub mod queue;
pub mod store;
