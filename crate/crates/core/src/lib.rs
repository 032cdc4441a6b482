pub mod allocator;
pub mod chinchilla;
pub mod data;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod numerics;
pub mod seeding;
pub mod simulator;

pub use error::{Error, Result};
