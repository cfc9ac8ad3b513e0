pub mod autodiff;
pub mod corruption;
pub mod datagen;
pub mod harness;
pub mod metrics;
pub mod networks;
pub mod seed;
pub mod trainer;
