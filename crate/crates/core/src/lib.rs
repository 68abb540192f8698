//! Intrinsic dimension and neural state variables from rendered video.

pub mod analysis;
pub mod datasets;
pub mod evaluate;
pub mod intdim;
pub mod rollout;
pub mod stage1;
pub mod statevars;
pub mod systems;
pub mod table;
