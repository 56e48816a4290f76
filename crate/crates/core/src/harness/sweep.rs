use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{check_box, solve_nash, NashOptions};
use crate::model::Market;
use crate::utilization::solve_utilization;

use super::scenario::{Mode, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    Ok,
    /// The best iterate is recorded but failed its certificate.
    NotConverged,
    Failed,
}

impl PointStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::NotConverged => "not-converged",
            PointStatus::Failed => "failed",
        }
    }
}

/// Outcome at one `(p, q)` grid point. Per-provider vectors follow the
/// scenario's roster order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub p: f64,
    pub q: f64,
    pub status: PointStatus,
    pub phi: f64,
    pub theta: f64,
    pub revenue: f64,
    pub welfare: f64,
    pub subsidies: Vec<f64>,
    pub populations: Vec<f64>,
    pub throughputs: Vec<f64>,
    pub utilities: Vec<f64>,
    pub iterations: usize,
    pub max_kkt: f64,
    pub message: Option<String>,
}

impl SweepRecord {
    fn failed(p: f64, q: f64, err: Error) -> Self {
        Self {
            p,
            q,
            status: PointStatus::Failed,
            phi: f64::NAN,
            theta: f64::NAN,
            revenue: f64::NAN,
            welfare: f64::NAN,
            subsidies: Vec::new(),
            populations: Vec::new(),
            throughputs: Vec::new(),
            utilities: Vec::new(),
            iterations: 0,
            max_kkt: f64::NAN,
            message: Some(err.to_string()),
        }
    }
}

fn sweep_options() -> NashOptions {
    NashOptions {
        concavity_check: false,
        ..Default::default()
    }
}

/// Solves one grid point. `q = 0` and one-sided mode use the one-sided state
/// directly.
pub fn solve_point(market: &Market, mode: Mode, p: f64, q: f64) -> SweepRecord {
    let attempt = || -> Result<SweepRecord> {
        check_box(p, q)?;
        if mode == Mode::OneSided || q == 0.0 {
            let m = market.populations_at_price(p);
            let st = solve_utilization(market, &m)?;
            let utilities = st
                .theta_i
                .iter()
                .zip(&market.cps)
                .map(|(th, cp)| cp.unit_profit * th)
                .collect();
            return Ok(SweepRecord {
                p,
                q,
                status: PointStatus::Ok,
                phi: st.phi,
                theta: st.theta,
                revenue: st.revenue(p),
                welfare: st.welfare(market),
                subsidies: vec![0.0; market.len()],
                populations: st.populations.clone(),
                throughputs: st.theta_i.clone(),
                utilities,
                iterations: 0,
                max_kkt: 0.0,
                message: None,
            });
        }
        let (pr, cert) = solve_nash(market, p, q, &sweep_options())?;
        let status = if cert.converged {
            PointStatus::Ok
        } else {
            PointStatus::NotConverged
        };
        Ok(SweepRecord {
            p,
            q,
            status,
            phi: pr.state.phi,
            theta: pr.state.theta,
            revenue: pr.revenue(),
            welfare: pr.welfare(market),
            max_kkt: cert.max_kkt_residual(),
            iterations: cert.iterations,
            message: None,
            subsidies: pr.subsidies,
            populations: pr.state.populations,
            throughputs: pr.state.theta_i,
            utilities: pr.utilities,
        })
    };
    attempt().unwrap_or_else(|e| SweepRecord::failed(p, q, e))
}

/// Solves every `(q, p)` point of the scenario, ordered by `q` then `p`.
///
/// `jobs` bounds the worker pool; `None` uses one worker per core.
pub fn sweep(scenario: &Scenario, jobs: Option<usize>) -> Result<Vec<SweepRecord>> {
    let points: Vec<(f64, f64)> = scenario
        .q_levels
        .iter()
        .flat_map(|&q| scenario.p_grid.iter().map(move |&p| (q, p)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    let market = &scenario.market;
    let mode = scenario.mode;
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|&(q, p)| solve_point(market, mode, p, q))
            .collect()
    }))
}
