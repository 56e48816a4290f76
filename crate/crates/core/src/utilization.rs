//! Utilization fixed point and its comparative statics.
//!
//! The system utilization solves `g(φ) = Θ(φ, μ) − Σ m_k λ_k(φ) = 0`. The gap
//! is strictly increasing, so the root is bracketed by doubling and refined by
//! safeguarded Newton steps.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Market;

/// Solved operating point of a market for fixed populations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketState {
    pub phi: f64,
    pub populations: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `dλ_i/dφ` at the solution.
    pub lambda_slope: Vec<f64>,
    pub theta_i: Vec<f64>,
    pub theta: f64,
    pub dg_dphi: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl MarketState {
    /// ISP revenue `p·θ`.
    pub fn revenue(&self, p: f64) -> f64 {
        p * self.theta
    }

    /// Gross profit of all providers, `Σ θ_i v_i`.
    pub fn welfare(&self, market: &Market) -> f64 {
        self.theta_i
            .iter()
            .zip(&market.cps)
            .map(|(th, cp)| th * cp.unit_profit)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.populations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.populations.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_doublings: usize,
    /// Starting point for the Newton iteration, clamped into the bracket.
    pub initial_guess: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            max_doublings: 200,
            initial_guess: None,
        }
    }
}

/// Throughput gap `g(φ)` and its slope `dg/dφ`.
pub fn gap(market: &Market, populations: &[f64], phi: f64) -> (f64, f64) {
    let mu = market.capacity;
    let mut demand = 0.0;
    let mut demand_slope = 0.0;
    for (cp, &m) in market.cps.iter().zip(populations) {
        if m == 0.0 {
            continue;
        }
        let (l, dl) = cp.throughput.value_and_derivative(phi);
        demand += m * l;
        demand_slope += m * dl;
    }
    (
        market.utilization.theta(phi, mu) - demand,
        market.utilization.theta_dphi(phi, mu) - demand_slope,
    )
}

pub fn solve_utilization(market: &Market, populations: &[f64]) -> Result<MarketState> {
    solve_utilization_with(market, populations, &SolverOptions::default())
}

pub fn solve_utilization_with(
    market: &Market,
    populations: &[f64],
    opts: &SolverOptions,
) -> Result<MarketState> {
    if populations.len() != market.len() {
        return Err(Error::domain(format!(
            "{} populations for {} content providers",
            populations.len(),
            market.len()
        )));
    }
    if populations.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::domain("populations must be finite and non-negative"));
    }
    if populations.iter().all(|&m| m == 0.0) {
        return Ok(build_state(market, populations, 0.0, 0));
    }

    let g = |x: f64| gap(market, populations, x);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while g(hi).0 <= 0.0 {
        if doublings == opts.max_doublings {
            return Err(Error::NoRoot { doublings });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }

    let mut x = opts
        .initial_guess
        .filter(|x0| x0.is_finite() && *x0 > lo && *x0 < hi)
        .unwrap_or(0.5 * (lo + hi));
    let mut iterations = 0;
    let mut best = (x, f64::INFINITY);
    let mut polish = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (gx, dg) = g(x);
        if gx.abs() < best.1 {
            best = (x, gx.abs());
        } else if best.1 < opts.tolerance {
            break;
        }
        if gx == 0.0 {
            break;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if gx.abs() < opts.tolerance {
            // a few Newton polish steps drive the residual to round-off
            polish += 1;
            if polish > 3 {
                break;
            }
        }
        let newton = x - gx / dg;
        let next = if dg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x {
            break;
        }
        x = next;
    }
    if best.1 >= opts.tolerance {
        return Err(Error::NonConvergence {
            iterations,
            last_step: best.1,
        });
    }
    Ok(build_state(market, populations, best.0, iterations))
}

fn build_state(market: &Market, populations: &[f64], phi: f64, iterations: usize) -> MarketState {
    let lambda: Vec<f64> = market.cps.iter().map(|cp| cp.throughput.value(phi)).collect();
    let lambda_slope: Vec<f64> = market.cps.iter().map(|cp| cp.throughput.derivative(phi)).collect();
    let theta_i: Vec<f64> = populations.iter().zip(&lambda).map(|(m, l)| m * l).collect();
    let theta = theta_i.iter().sum();
    let (g, dg_dphi) = gap(market, populations, phi);
    MarketState {
        phi,
        populations: populations.to_vec(),
        lambda,
        lambda_slope,
        theta_i,
        theta,
        dg_dphi,
        residual: g,
        iterations,
    }
}

fn check_solved(state: &MarketState, market: &Market) -> Result<()> {
    if state.len() != market.len() {
        return Err(Error::Precondition("state does not belong to this market".into()));
    }
    let (g, _) = gap(market, &state.populations, state.phi);
    let scale = market.utilization.theta(state.phi, market.capacity).max(1.0);
    if !(g.abs() <= 1e-8 * scale) || !(state.dg_dphi > 0.0) {
        return Err(Error::Precondition(format!(
            "state is not a solved utilization (gap residual {g:.3e})"
        )));
    }
    Ok(())
}

/// `∂φ/∂μ = −(dg/dφ)⁻¹ ∂Θ/∂μ`.
pub fn d_phi_d_mu(state: &MarketState, market: &Market) -> Result<f64> {
    check_solved(state, market)?;
    Ok(-market.utilization.theta_dmu(state.phi, market.capacity) / state.dg_dphi)
}

/// `∂φ/∂m_i = (dg/dφ)⁻¹ λ_i`.
pub fn d_phi_d_m(state: &MarketState, market: &Market, i: usize) -> Result<f64> {
    check_solved(state, market)?;
    let lambda = state
        .lambda
        .get(i)
        .ok_or(Error::IndexOutOfRange { index: i, len: state.len() })?;
    Ok(lambda / state.dg_dphi)
}

/// Which throughput derivative to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaSensitivity {
    /// `∂θ_cp/∂μ`.
    Capacity { cp: usize },
    /// `∂θ_cp/∂m_of`; own effect when `cp == of`, cross effect otherwise.
    Population { cp: usize, of: usize },
}

pub fn d_theta_d(state: &MarketState, market: &Market, which: ThetaSensitivity) -> Result<f64> {
    check_solved(state, market)?;
    let n = state.len();
    let idx = |i: usize| {
        if i < n {
            Ok(i)
        } else {
            Err(Error::IndexOutOfRange { index: i, len: n })
        }
    };
    match which {
        ThetaSensitivity::Capacity { cp } => {
            let j = idx(cp)?;
            Ok(state.populations[j] * state.lambda_slope[j] * d_phi_d_mu(state, market)?)
        }
        ThetaSensitivity::Population { cp, of } => {
            let (j, i) = (idx(cp)?, idx(of)?);
            let own = if i == j { state.lambda[i] } else { 0.0 };
            Ok(own + state.populations[j] * state.lambda_slope[j] * state.lambda[i] / state.dg_dphi)
        }
    }
}

/// Response of the one-sided market (`t_i = p`) to the ISP price.
#[derive(Debug, Clone, Serialize)]
pub struct PriceEffect {
    pub price: f64,
    pub state: MarketState,
    /// `dm_i/dp`.
    pub dm_dp: Vec<f64>,
    pub d_phi_dp: f64,
    /// Aggregate throughput slope from the closed form in `∂Θ/∂φ` and `dg/dφ`.
    pub d_theta_dp: f64,
    pub d_theta_i_dp: Vec<f64>,
    /// `ε_p^{m_i} / ε_φ^{λ_i} < −ε_p^φ`: provider throughput rises with price.
    pub rises: Vec<bool>,
}

pub fn price_effect(market: &Market, p: f64) -> Result<PriceEffect> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::domain(format!("price must be finite and >= 0, got {p}")));
    }
    let m = market.populations_at_price(p);
    let state = solve_utilization(market, &m)?;
    let dm_dp: Vec<f64> = market.cps.iter().map(|cp| cp.demand.derivative(p)).collect();
    let push: f64 = dm_dp.iter().zip(&state.lambda).map(|(d, l)| d * l).sum();
    let d_phi_dp = push / state.dg_dphi;
    let theta_dphi = market.utilization.theta_dphi(state.phi, market.capacity);
    let d_theta_dp = theta_dphi / state.dg_dphi * push;
    let d_theta_i_dp = (0..market.len())
        .map(|i| dm_dp[i] * state.lambda[i] + m[i] * state.lambda_slope[i] * d_phi_dp)
        .collect();
    let eps_p_phi = if state.phi > 0.0 { d_phi_dp * p / state.phi } else { 0.0 };
    let rises = market
        .cps
        .iter()
        .map(|cp| {
            let eps_p_m = cp.demand.elasticity(p);
            let eps_phi_l = cp.throughput.elasticity(state.phi);
            eps_phi_l != 0.0 && eps_p_m / eps_phi_l < -eps_p_phi
        })
        .collect();
    Ok(PriceEffect {
        price: p,
        state,
        dm_dp,
        d_phi_dp,
        d_theta_dp,
        d_theta_i_dp,
        rises,
    })
}

/// For exponential providers on the linear utilization map, the closed-form
/// test `α_i/β_i < Σ α_j θ_j/(μ + Σ β_k θ_k)`. `None` for other families.
pub fn exponential_rise_condition(market: &Market, effect: &PriceEffect) -> Option<Vec<bool>> {
    if market.utilization != crate::model::UtilizationFamily::Linear {
        return None;
    }
    let ab: Option<Vec<(f64, f64)>> = market
        .cps
        .iter()
        .map(|cp| Some((cp.alpha()?, cp.beta()?)))
        .collect();
    let ab = ab?;
    let st = &effect.state;
    let num: f64 = ab.iter().zip(&st.theta_i).map(|((a, _), th)| a * th).sum();
    let den: f64 = market.capacity + ab.iter().zip(&st.theta_i).map(|((_, b), th)| b * th).sum::<f64>();
    Some(
        ab.iter()
            .map(|(a, b)| a / b < num / den)
            .collect(),
    )
}

/// Re-solve based central differences, used to cross-check the closed forms.
pub mod fd {
    use super::*;

    pub fn phi_wrt_capacity(market: &Market, populations: &[f64], h: f64) -> Result<f64> {
        let up = solve_utilization(&market.with_capacity(market.capacity + h)?, populations)?;
        let dn = solve_utilization(&market.with_capacity(market.capacity - h)?, populations)?;
        Ok((up.phi - dn.phi) / (2.0 * h))
    }

    /// Central differences of `(φ, θ_0..θ_n)` with respect to `m_i`.
    pub fn wrt_population(market: &Market, populations: &[f64], i: usize, h: f64) -> Result<(f64, Vec<f64>)> {
        let mut up = populations.to_vec();
        let mut dn = populations.to_vec();
        up[i] += h;
        dn[i] -= h;
        let (su, sd) = (solve_utilization(market, &up)?, solve_utilization(market, &dn)?);
        Ok(diff(&su, &sd, h))
    }

    pub fn theta_wrt_capacity(market: &Market, populations: &[f64], h: f64) -> Result<Vec<f64>> {
        let su = solve_utilization(&market.with_capacity(market.capacity + h)?, populations)?;
        let sd = solve_utilization(&market.with_capacity(market.capacity - h)?, populations)?;
        Ok(diff(&su, &sd, h).1)
    }

    /// Central differences of `(φ, θ_i, θ)` in the one-sided price.
    pub fn wrt_price(market: &Market, p: f64, h: f64) -> Result<(f64, Vec<f64>, f64)> {
        let su = solve_utilization(market, &market.populations_at_price(p + h))?;
        let sd = solve_utilization(market, &market.populations_at_price(p - h))?;
        let (dphi, dth) = diff(&su, &sd, h);
        Ok((dphi, dth, (su.theta - sd.theta) / (2.0 * h)))
    }

    fn diff(up: &MarketState, dn: &MarketState, h: f64) -> (f64, Vec<f64>) {
        (
            (up.phi - dn.phi) / (2.0 * h),
            up.theta_i
                .iter()
                .zip(&dn.theta_i)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContentProvider, FunctionFamily};
    use approx::assert_relative_eq;

    fn single() -> Market {
        Market::linear(1.0, vec![ContentProvider::exponential("a", 1.0, 1.0, 1.0).unwrap()]).unwrap()
    }

    /// Plain bisection on `φ − e^{−(1+φ)}`.
    fn bisection_oracle() -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - (-(1.0 + mid)).exp() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn empty_market_gap_and_root() {
        let market = Market::linear(1.0, vec![]).unwrap();
        assert_eq!(gap(&market, &[], 0.3), (0.3, 1.0));
        let st = solve_utilization(&market, &[]).unwrap();
        assert_eq!((st.phi, st.theta), (0.0, 0.0));
    }

    #[test]
    fn zero_populations_give_zero_utilization() {
        let market = single();
        let st = solve_utilization(&market, &[0.0]).unwrap();
        assert_eq!(st.phi, 0.0);
    }

    #[test]
    fn single_cp_root_matches_bisection() {
        let oracle = bisection_oracle();
        assert_relative_eq!(oracle, 0.278464542761074, epsilon = 1e-12);
        let market = single();
        let st = solve_utilization(&market, &market.populations_at_price(1.0)).unwrap();
        assert!((st.phi - oracle).abs() < 1e-8);
        assert!(st.residual.abs() < 1e-10);
        let (g, _) = gap(&market, &st.populations, 0.27846);
        assert!(g.abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_populations() {
        let market = single();
        assert!(solve_utilization(&market, &[-1.0]).is_err());
        assert!(solve_utilization(&market, &[f64::NAN]).is_err());
        assert!(solve_utilization(&market, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn improper_supply_reports_no_root() {
        let market = single();
        let opts = SolverOptions {
            max_doublings: 0,
            ..Default::default()
        };
        // a huge population keeps g(1) negative and no doubling is allowed
        assert!(matches!(
            solve_utilization_with(&market, &[1e6], &opts),
            Err(Error::NoRoot { .. })
        ));
    }

    #[test]
    fn capacity_derivative_for_linear_supply() {
        let market = single();
        let st = solve_utilization(&market, &market.populations_at_price(1.0)).unwrap();
        let d = d_phi_d_mu(&st, &market).unwrap();
        assert_relative_eq!(d, -st.phi / st.dg_dphi, max_relative = 1e-15);
        let fd = fd::phi_wrt_capacity(&market, &st.populations, 1e-5).unwrap();
        assert_relative_eq!(d, fd, max_relative = 1e-5);
    }

    #[test]
    fn unsolved_state_is_rejected() {
        let market = single();
        let mut st = solve_utilization(&market, &[1.0]).unwrap();
        st.phi += 0.1;
        assert!(matches!(d_phi_d_mu(&st, &market), Err(Error::Precondition(_))));
        assert!(matches!(d_phi_d_m(&st, &market, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn index_out_of_range() {
        let market = single();
        let st = solve_utilization(&market, &[1.0]).unwrap();
        assert!(matches!(
            d_theta_d(&st, &market, ThetaSensitivity::Population { cp: 0, of: 3 }),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn symmetric_cross_effects() {
        let cps = vec![
            ContentProvider::exponential("a", 2.0, 3.0, 1.0).unwrap(),
            ContentProvider::exponential("b", 2.0, 3.0, 1.0).unwrap(),
        ];
        let market = Market::linear(1.0, cps).unwrap();
        let st = solve_utilization(&market, &market.populations_at_price(0.5)).unwrap();
        let a = d_theta_d(&st, &market, ThetaSensitivity::Population { cp: 0, of: 1 }).unwrap();
        let b = d_theta_d(&st, &market, ThetaSensitivity::Population { cp: 1, of: 0 }).unwrap();
        assert!(a < 0.0);
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn flat_demand_has_no_price_effect() {
        let flat = FunctionFamily::tabulated(vec![0.0, 1.0, 2.0], vec![0.8, 0.8, 0.8]).unwrap();
        let cp = ContentProvider::new("flat", 1.0, flat, FunctionFamily::exponential(2.0)).unwrap();
        let market = Market::linear(1.0, vec![cp]).unwrap();
        let eff = price_effect(&market, 0.7).unwrap();
        assert_eq!(eff.d_phi_dp, 0.0);
        assert_eq!(eff.d_theta_dp, 0.0);
    }

    #[test]
    fn power_utilization_derivatives_match_fd() {
        let cps = vec![
            ContentProvider::exponential("a", 1.0, 2.0, 1.0).unwrap(),
            ContentProvider::exponential("b", 3.0, 1.0, 1.0).unwrap(),
        ];
        let market = Market::new(2.0, crate::model::UtilizationFamily::Power { exponent: 2.0 }, cps).unwrap();
        let m = market.populations_at_price(0.4);
        let st = solve_utilization(&market, &m).unwrap();
        let fd = fd::phi_wrt_capacity(&market, &m, 1e-5).unwrap();
        assert_relative_eq!(d_phi_d_mu(&st, &market).unwrap(), fd, max_relative = 1e-6);
        let eff = price_effect(&market, 0.4).unwrap();
        let (dphi, _, dtheta) = fd::wrt_price(&market, 0.4, 1e-5).unwrap();
        assert_relative_eq!(eff.d_phi_dp, dphi, max_relative = 1e-6);
        assert_relative_eq!(eff.d_theta_dp, dtheta, max_relative = 1e-6);
    }

    #[test]
    fn closed_form_rise_test_agrees_with_elasticities() {
        let cps = vec![
            ContentProvider::exponential("a", 1.0, 1.0, 5.0).unwrap(),
            ContentProvider::exponential("b", 1.0, 5.0, 1.0).unwrap(),
            ContentProvider::exponential("c", 1.0, 3.0, 3.0).unwrap(),
        ];
        let market = Market::linear(1.0, cps).unwrap();
        for p in [0.05, 0.3, 0.8, 1.5] {
            let eff = price_effect(&market, p).unwrap();
            assert_eq!(exponential_rise_condition(&market, &eff).unwrap(), eff.rises);
            for (r, d) in eff.rises.iter().zip(&eff.d_theta_i_dp) {
                assert_eq!(*r, *d > 0.0);
            }
        }
    }
}
