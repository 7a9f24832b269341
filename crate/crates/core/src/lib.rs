//! Maximum likelihood and composite marginal likelihood estimation for
//! linear latent variable models with continuous, binary (probit) and
//! left/right censored (tobit) outcomes.

pub mod check;
pub mod complik;
pub mod data;
pub mod error;
pub mod estimate;
pub mod likelihood;
pub mod model;
pub mod mvn;
pub mod simulate;

pub use data::{Dataset, Status};
pub use error::{Error, Result};
pub use complik::{build_blocks, cl_loglik, cl_score, fit_cl, BlockPlan, BlockStrategy};
pub use estimate::{
    conditional_probability, fit_mle, information, lr_test, wald_test, FitOptions, FitResult, Method, TestResult,
};
pub use likelihood::{loglik, loglik_obs, score, score_obs, Prepared};
pub use model::{compile, implied_moments, parse_model, starting_values, Kind, ModelSpec, ParameterMap, Side};
pub use simulate::{censor, dichotomize, simulate, simulate_with, CovariateLaw};
