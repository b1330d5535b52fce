pub mod expr;
pub mod numerics;
