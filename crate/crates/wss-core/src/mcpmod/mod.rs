//! MCP-Mod dose-finding pipeline.
pub mod contrast;
pub mod gls;
pub mod model;

pub use contrast::{
    mcp_step, optimal_contrasts, MaxZSampler, McpResult, OptimalContrasts, DEFAULT_CRITICAL_DRAWS,
};
pub use gls::{gls_fit, select_model, ModFit};
pub use model::{
    estimate_med, params_from_guesses, standardized_response, DoseDesign, DoseResponseModel,
    GuessConstraint, MedEstimate, Shape, ShapeFamily,
};
