//! Equilibrium computation for a usage-priced access network where content
//! providers may subsidize their users' traffic charges.
//!
//! * [`model`]: demand/throughput curves, providers, the utilization map.
//! * [`utilization`]: the utilization fixed point and its comparative statics.
//! * [`game`]: utilities, best responses and Nash equilibria in subsidies.
//! * [`sensitivity`]: equilibrium dynamics, marginal revenue, policy and welfare effects.
//! * [`harness`]: scenarios, sweeps, verification suites and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod game;
pub mod harness;
pub mod interp;
pub mod model;
pub mod oracle;
pub mod sensitivity;
pub mod utilization;

pub use error::{Error, Result};
pub use model::{
    aggregate_cps, elasticity, elasticity_with, eval_demand, eval_theta_supply, eval_throughput,
    ContentProvider, ElasticityBundle, FunctionFamily, Market, UtilizationFamily,
};
pub use utilization::{
    d_phi_d_m, d_phi_d_mu, d_theta_d, gap, price_effect, solve_utilization, MarketState,
    PriceEffect, ThetaSensitivity,
};
pub use game::{
    best_response, check_uniqueness, marginal_jacobian, marginal_utility, profitability_monotonicity,
    solve_nash, tau, utility, EquilibriumCertificate, NashOptions, StrategyProfile, UniquenessEvidence,
};
pub use sensitivity::{
    check_deregulation_monotonicity, classify, equilibrium_dynamics, marginal_revenue, policy_effect,
    sensitivity_report, welfare_condition, CpPartition, FixedPrice, PolicyEffect, PriceSchedule,
    RevenueOptimalPrice, SensitivityReport,
};
