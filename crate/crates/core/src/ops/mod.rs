pub mod conv;
pub mod deform;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pointwise;
pub mod pool;
