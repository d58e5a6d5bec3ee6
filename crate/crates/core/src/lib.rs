pub mod autodiff;
pub mod cli;
pub mod composite;
pub mod denoiser;
pub mod forge;
pub mod geom;
pub mod image;
pub mod light;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod render;
