pub mod autodiff;
pub mod dsggen;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod heads;
pub mod model;
pub mod proposals;
pub mod raster;
pub mod scenegen;
pub mod training;
