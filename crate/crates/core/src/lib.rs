pub mod channels;
pub mod environment;
pub mod ergodics;
pub mod error;
pub mod matrix;
pub mod measures;
pub mod rng;
pub mod trajectory;
