pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod resize;
