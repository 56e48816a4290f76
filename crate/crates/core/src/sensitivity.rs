//! How the subsidy equilibrium moves with the ISP price `p` and the policy
//! cap `q`, and what that does to revenue, throughput and welfare.
//!
//! Every derivative here is taken at a regular equilibrium: providers are
//! split into those at zero subsidy, those at the cap and the interior ones,
//! and the split must not change in a neighbourhood of the point.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{marginal_jacobian, marginal_price_gradient, solve_nash, NashOptions, StrategyProfile};
use crate::model::Market;
use crate::utilization::MarketState;

pub const DEFAULT_BINDING_TOL: f64 = 1e-7;
/// Marginal utilities below this at a bound coordinate break regularity.
pub const REGULARITY_TOL: f64 = 1e-9;
/// Condition number above which the interior Jacobian counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Split of the providers by where their subsidy sits in `[0, q]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpPartition {
    pub n_minus: Vec<usize>,
    pub n_plus: Vec<usize>,
    pub n_tilde: Vec<usize>,
    pub binding_tol: f64,
    pub warnings: Vec<String>,
}

impl CpPartition {
    pub fn same_sets(&self, other: &CpPartition) -> bool {
        self.n_minus == other.n_minus && self.n_plus == other.n_plus && self.n_tilde == other.n_tilde
    }

    pub fn is_regular(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Classifies each provider with tolerance `binding_tol`. With `q = 0` every
/// provider lands in `n_minus`.
pub fn classify(profile: &StrategyProfile, binding_tol: f64) -> CpPartition {
    let q = profile.cap;
    let mut part = CpPartition {
        n_minus: Vec::new(),
        n_plus: Vec::new(),
        n_tilde: Vec::new(),
        binding_tol,
        warnings: Vec::new(),
    };
    for (i, (&s, &u)) in profile.subsidies.iter().zip(&profile.marginal_utilities).enumerate() {
        let bound = if s <= binding_tol {
            part.n_minus.push(i);
            true
        } else if s >= q - binding_tol {
            part.n_plus.push(i);
            true
        } else {
            part.n_tilde.push(i);
            false
        };
        if bound && q > 0.0 && u.abs() < REGULARITY_TOL {
            part.warnings.push(format!(
                "provider {i} is bound at s = {s} with marginal utility {u:.3e}; derivatives are one-sided"
            ));
        }
    }
    part
}

#[derive(Debug, Clone)]
pub struct Dynamics {
    pub jac_u: DMatrix<f64>,
    /// Inverse of `∇_s u` restricted to the interior providers.
    pub psi: DMatrix<f64>,
    pub du_dp: Vec<f64>,
    pub ds_dq: Vec<f64>,
    pub ds_dp: Vec<f64>,
    /// `‖Ψ·∇_s̃ũ − I‖_∞`.
    pub psi_residual: f64,
}

/// `∂s/∂q` and `∂s/∂p` at a regular equilibrium.
pub fn equilibrium_dynamics(market: &Market, profile: &StrategyProfile, partition: &CpPartition) -> Result<Dynamics> {
    let n = profile.len();
    let jac = marginal_jacobian(market, profile)?;
    let du_dp = marginal_price_gradient(profile, &jac);
    let mut ds_dq = vec![0.0; n];
    let mut ds_dp = vec![0.0; n];
    for &i in &partition.n_plus {
        ds_dq[i] = 1.0;
    }
    let tilde = &partition.n_tilde;
    let k = tilde.len();
    let sub = DMatrix::from_fn(k, k, |a, b| jac[(tilde[a], tilde[b])]);
    let mut psi = DMatrix::zeros(k, k);
    let mut psi_residual = 0.0;
    if k > 0 {
        let sv = sub.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(Error::Singular { condition });
        }
        psi = sub.clone().try_inverse().ok_or(Error::Singular { condition })?;
        psi_residual = (&psi * &sub - DMatrix::identity(k, k)).amax();
        for (a, &i) in tilde.iter().enumerate() {
            let mut dq = 0.0;
            let mut dp = 0.0;
            for (b, &kk) in tilde.iter().enumerate() {
                let push: f64 = partition.n_plus.iter().map(|&j| jac[(kk, j)]).sum();
                dq -= psi[(a, b)] * push;
                dp -= psi[(a, b)] * du_dp[kk];
            }
            ds_dq[i] = dq;
            ds_dp[i] = dp;
        }
    }
    Ok(Dynamics {
        jac_u: jac,
        psi,
        du_dp,
        ds_dq,
        ds_dp,
        psi_residual,
    })
}

fn equilibrium_options() -> NashOptions {
    NashOptions {
        concavity_check: false,
        ..Default::default()
    }
}

fn solve_converged(market: &Market, p: f64, q: f64, opts: &NashOptions) -> Result<StrategyProfile> {
    let (profile, cert) = solve_nash(market, p, q, opts)?;
    if !cert.converged {
        return Err(Error::NonConvergence {
            iterations: cert.iterations,
            last_step: cert.last_step,
        });
    }
    Ok(profile)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeregulationReport {
    pub price: f64,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub revenue: Vec<f64>,
    pub welfare: Vec<f64>,
    pub subsidies: Vec<Vec<f64>>,
    /// `(q, i, j, ∂u_i/∂s_j)` for every negative off-diagonal entry.
    pub off_diagonal_violations: Vec<(f64, usize, usize, f64)>,
    pub hypothesis_holds: bool,
    pub phi_non_decreasing: bool,
    pub revenue_non_decreasing: bool,
    pub welfare_non_decreasing: bool,
    pub subsidies_non_decreasing: bool,
}

const MONOTONE_TOL: f64 = 1e-8;

fn non_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
}

/// Solves the equilibrium along `q_grid` at fixed `p`, tests whether `u` is
/// off-diagonally monotone there and records whether `φ`, `R`, `W` and every
/// `s_i` are non-decreasing in `q`.
pub fn check_deregulation_monotonicity(market: &Market, p: f64, q_grid: &[f64]) -> Result<DeregulationReport> {
    if q_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("q grid must be strictly increasing"));
    }
    let opts = equilibrium_options();
    let mut report = DeregulationReport {
        price: p,
        q: q_grid.to_vec(),
        phi: Vec::new(),
        revenue: Vec::new(),
        welfare: Vec::new(),
        subsidies: Vec::new(),
        off_diagonal_violations: Vec::new(),
        hypothesis_holds: true,
        phi_non_decreasing: true,
        revenue_non_decreasing: true,
        welfare_non_decreasing: true,
        subsidies_non_decreasing: true,
    };
    for &q in q_grid {
        let pr = solve_converged(market, p, q, &opts)?;
        let jac = marginal_jacobian(market, &pr)?;
        for i in 0..pr.len() {
            for j in 0..pr.len() {
                if i != j && jac[(i, j)] < 0.0 {
                    report.off_diagonal_violations.push((q, i, j, jac[(i, j)]));
                }
            }
        }
        report.phi.push(pr.state.phi);
        report.revenue.push(pr.revenue());
        report.welfare.push(pr.welfare(market));
        report.subsidies.push(pr.subsidies);
    }
    report.hypothesis_holds = report.off_diagonal_violations.is_empty();
    report.phi_non_decreasing = non_decreasing(&report.phi);
    report.revenue_non_decreasing = non_decreasing(&report.revenue);
    report.welfare_non_decreasing = non_decreasing(&report.welfare);
    report.subsidies_non_decreasing = (0..market.len()).all(|i| {
        let s: Vec<f64> = report.subsidies.iter().map(|row| row[i]).collect();
        non_decreasing(&s)
    });
    Ok(report)
}

/// Step used to probe the partition and for finite-difference oracles.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct MarginalRevenue {
    pub price: f64,
    pub cap: f64,
    pub revenue: f64,
    pub dr_dp: f64,
    /// `Υ = 1 + Σ_j ε_{m_j}^φ·ε_φ^{λ_j}`.
    pub upsilon: f64,
    /// Demand elasticities with respect to `p` through the equilibrium.
    pub eps_p_m: Vec<f64>,
    pub ds_dp: Vec<f64>,
}

/// `Υ` built from the per-provider elasticity decomposition.
pub fn upsilon(market: &Market, state: &MarketState) -> f64 {
    let mut sum = 0.0;
    for (i, cp) in market.cps.iter().enumerate() {
        let m = state.populations[i];
        if m == 0.0 {
            continue;
        }
        if state.phi > 0.0 {
            let eps_m_phi = state.lambda[i] / state.dg_dphi * m / state.phi;
            sum += eps_m_phi * cp.throughput.elasticity(state.phi);
        } else {
            sum += m * state.lambda_slope[i] / state.dg_dphi;
        }
    }
    1.0 + sum
}

/// `dR/dp` at an already solved equilibrium.
pub fn marginal_revenue_at(
    market: &Market,
    profile: &StrategyProfile,
    partition: &CpPartition,
) -> Result<MarginalRevenue> {
    let dynamics = equilibrium_dynamics(market, profile, partition)?;
    let st = &profile.state;
    let p = profile.price;
    let ups = upsilon(market, st);
    let mut eps = Vec::with_capacity(profile.len());
    let mut weighted = 0.0;
    for i in 0..profile.len() {
        let dm_dt = -profile.demand_slope[i];
        let factor = 1.0 - dynamics.ds_dp[i];
        let m = st.populations[i];
        eps.push(if m > 0.0 { p / m * dm_dt * factor } else { 0.0 });
        weighted += p * dm_dt * factor * st.lambda[i];
    }
    Ok(MarginalRevenue {
        price: p,
        cap: profile.cap,
        revenue: profile.revenue(),
        dr_dp: st.theta + ups * weighted,
        upsilon: ups,
        eps_p_m: eps,
        ds_dp: dynamics.ds_dp,
    })
}

/// `dR/dp` at `(p, q)`. Fails with [`Error::NonDifferentiable`] when the
/// partition at `p ± h` differs from the one at `p`.
pub fn marginal_revenue(market: &Market, p: f64, q: f64) -> Result<MarginalRevenue> {
    let opts = equilibrium_options();
    let profile = solve_converged(market, p, q, &opts)?;
    let partition = classify(&profile, DEFAULT_BINDING_TOL);
    for shifted in [p - FD_STEP, p + FD_STEP] {
        if shifted < 0.0 {
            continue;
        }
        let other = classify(&solve_converged(market, shifted, q, &opts)?, DEFAULT_BINDING_TOL);
        if !other.same_sets(&partition) {
            return Err(Error::NonDifferentiable { p, h: FD_STEP });
        }
    }
    marginal_revenue_at(market, &profile, &partition)
}

/// ISP price as a function of the policy cap.
pub trait PriceSchedule {
    fn price(&self, market: &Market, q: f64) -> Result<f64>;
    fn slope(&self, market: &Market, q: f64) -> Result<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPrice(pub f64);

impl PriceSchedule for FixedPrice {
    fn price(&self, _: &Market, _: f64) -> Result<f64> {
        Ok(self.0)
    }

    fn slope(&self, _: &Market, _: f64) -> Result<f64> {
        Ok(0.0)
    }
}

/// A price curve `p(q)` supplied with its derivative.
pub struct PriceCurve<P, D> {
    pub price: P,
    pub slope: D,
}

impl<P: Fn(f64) -> f64, D: Fn(f64) -> f64> PriceSchedule for PriceCurve<P, D> {
    fn price(&self, _: &Market, q: f64) -> Result<f64> {
        Ok((self.price)(q))
    }

    fn slope(&self, _: &Market, q: f64) -> Result<f64> {
        Ok((self.slope)(q))
    }
}

/// The revenue-maximizing price, re-optimized at every `q`. The slope is a
/// central difference of re-optimized prices at `q ± h`.
#[derive(Debug, Clone, Copy)]
pub struct RevenueOptimalPrice {
    pub lo: f64,
    pub hi: f64,
    pub scan_points: usize,
    pub h: f64,
}

impl Default for RevenueOptimalPrice {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 2.0,
            scan_points: 41,
            h: 1e-3,
        }
    }
}

impl RevenueOptimalPrice {
    fn revenue(market: &Market, p: f64, q: f64) -> Result<StrategyProfile> {
        solve_converged(market, p, q, &equilibrium_options())
    }

    fn slope_at(market: &Market, p: f64, q: f64) -> Result<f64> {
        let pr = Self::revenue(market, p, q)?;
        let part = classify(&pr, DEFAULT_BINDING_TOL);
        Ok(marginal_revenue_at(market, &pr, &part)?.dr_dp)
    }
}

impl PriceSchedule for RevenueOptimalPrice {
    fn price(&self, market: &Market, q: f64) -> Result<f64> {
        let n = self.scan_points.max(3);
        let grid: Vec<f64> = (0..n)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (n - 1) as f64)
            .collect();
        let mut best = 0;
        let mut values = Vec::with_capacity(n);
        for (k, &p) in grid.iter().enumerate() {
            values.push(Self::revenue(market, p, q)?.revenue());
            if values[k] > values[best] {
                best = k;
            }
        }
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(n - 1)];
        let (mut fa, mut fb) = (Self::slope_at(market, a, q)?, Self::slope_at(market, b, q)?);
        if !(fa > 0.0 && fb < 0.0) {
            return Ok(grid[best]);
        }
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = Self::slope_at(market, mid, q)?;
            if fm > 0.0 {
                a = mid;
                fa = fm;
            } else {
                b = mid;
                fb = fm;
            }
        }
        // final secant step inside the bracket
        let x = a - fa * (b - a) / (fb - fa);
        Ok(if x > a && x < b { x } else { 0.5 * (a + b) })
    }

    fn slope(&self, market: &Market, q: f64) -> Result<f64> {
        let lo = (q - self.h).max(0.0);
        let hi = q + self.h;
        Ok((self.price(market, hi)? - self.price(market, lo)?) / (hi - lo))
    }
}

/// Sign test for the marginal welfare `dW/dq` with `W = Σ θ_i v_i`.
#[derive(Debug, Clone, Serialize)]
pub struct WelfareCondition {
    /// `Σ (w_i/Σw)·v_i`.
    pub lhs: f64,
    /// `Σ (−ε_{m_i}^{λ_i})·v_i`.
    pub rhs: f64,
    pub weights: Vec<f64>,
    /// The test needs `dφ/dq > 0`.
    pub applicable: bool,
    /// `dW/dq` from the chain rule.
    pub dw_dq: f64,
    /// `+1`, `−1` or `0`. From the inequality when applicable, otherwise from `dw_dq`.
    pub sign: i8,
}

pub fn welfare_condition(market: &Market, state: &MarketState, dm_dq: &[f64]) -> WelfareCondition {
    let n = market.len();
    let d = state.dg_dphi;
    let weights: Vec<f64> = (0..n).map(|i| state.lambda[i] * dm_dq[i]).collect();
    let total: f64 = weights.iter().sum();
    let v: Vec<f64> = market.cps.iter().map(|cp| cp.unit_profit).collect();
    let lhs = if total != 0.0 {
        (0..n).map(|i| weights[i] / total * v[i]).sum()
    } else {
        0.0
    };
    let rhs: f64 = (0..n)
        .map(|i| -state.populations[i] * state.lambda_slope[i] / d * v[i])
        .sum();
    let dphi_dq = total / d;
    let dw_dq: f64 = (0..n)
        .map(|i| v[i] * (weights[i] + state.populations[i] * state.lambda_slope[i] * dphi_dq))
        .sum();
    let applicable = dphi_dq > 0.0;
    let sign = if applicable {
        sign_of(lhs - rhs)
    } else {
        sign_of(dw_dq)
    };
    WelfareCondition {
        lhs,
        rhs,
        weights,
        applicable,
        dw_dq,
        sign,
    }
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyEffect {
    pub cap: f64,
    pub price: f64,
    pub dp_dq: f64,
    pub profile: StrategyProfile,
    pub partition: CpPartition,
    pub ds_dq: Vec<f64>,
    pub ds_dp: Vec<f64>,
    pub dm_dq: Vec<f64>,
    pub dphi_dq: f64,
    pub dlambda_dq: Vec<f64>,
    pub dtheta_i_dq: Vec<f64>,
    /// Provider throughput rises with `q`, from the elasticity condition.
    pub rises: Vec<bool>,
    pub welfare: WelfareCondition,
}

/// Total effect of the cap on populations, utilization and throughput when
/// the ISP follows `schedule`.
pub fn policy_effect(market: &Market, schedule: &dyn PriceSchedule, q: f64) -> Result<PolicyEffect> {
    let p = schedule.price(market, q)?;
    let dp_dq = schedule.slope(market, q)?;
    let profile = solve_converged(market, p, q, &equilibrium_options())?;
    let partition = classify(&profile, DEFAULT_BINDING_TOL);
    let dyn_ = equilibrium_dynamics(market, &profile, &partition)?;
    let st = &profile.state;
    let n = profile.len();
    let dm_dq: Vec<f64> = (0..n)
        .map(|i| -profile.demand_slope[i] * ((1.0 - dyn_.ds_dp[i]) * dp_dq - dyn_.ds_dq[i]))
        .collect();
    let dphi_dq: f64 = (0..n).map(|i| dm_dq[i] * st.lambda[i]).sum::<f64>() / st.dg_dphi;
    let dlambda_dq: Vec<f64> = st.lambda_slope.iter().map(|l| l * dphi_dq).collect();
    let dtheta_i_dq: Vec<f64> = (0..n)
        .map(|i| dm_dq[i] * st.lambda[i] + st.populations[i] * dlambda_dq[i])
        .collect();
    let rises = (0..n)
        .map(|i| {
            let m = st.populations[i];
            let eps_phi_lambda = market.cps[i].throughput.elasticity(st.phi);
            if q > 0.0 && st.phi > 0.0 && m > 0.0 && eps_phi_lambda < 0.0 {
                let eps_q_m = q / m * dm_dq[i];
                let eps_q_phi = q / st.phi * dphi_dq;
                eps_q_m / eps_phi_lambda < -eps_q_phi
            } else {
                dtheta_i_dq[i] > 0.0
            }
        })
        .collect();
    let welfare = welfare_condition(market, st, &dm_dq);
    Ok(PolicyEffect {
        cap: q,
        price: p,
        dp_dq,
        ds_dq: dyn_.ds_dq,
        ds_dp: dyn_.ds_dp,
        dm_dq,
        dphi_dq,
        dlambda_dq,
        dtheta_i_dq,
        rises,
        welfare,
        profile,
        partition,
    })
}

/// Everything this module computes at one `(p, q)` point with `p` held fixed.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub price: f64,
    pub cap: f64,
    pub partition: CpPartition,
    pub jac_u: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub psi_residual: f64,
    pub ds_dq: Vec<f64>,
    pub ds_dp: Vec<f64>,
    pub upsilon: f64,
    pub dm_dq: Vec<f64>,
    pub dphi_dq: f64,
    pub dlambda_dq: Vec<f64>,
    pub w: Vec<f64>,
    /// `None` at a point where the partition changes within the probe step.
    pub dr_dp: Option<f64>,
    pub welfare: WelfareCondition,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn sensitivity_report(market: &Market, p: f64, q: f64) -> Result<SensitivityReport> {
    let effect = policy_effect(market, &FixedPrice(p), q)?;
    let dyn_ = equilibrium_dynamics(market, &effect.profile, &effect.partition)?;
    let dr_dp = match marginal_revenue(market, p, q) {
        Ok(mr) => Some(mr.dr_dp),
        Err(Error::NonDifferentiable { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(SensitivityReport {
        price: p,
        cap: q,
        jac_u: rows(&dyn_.jac_u),
        psi: rows(&dyn_.psi),
        psi_residual: dyn_.psi_residual,
        ds_dq: dyn_.ds_dq,
        ds_dp: dyn_.ds_dp,
        upsilon: upsilon(market, &effect.profile.state),
        dm_dq: effect.dm_dq,
        dphi_dq: effect.dphi_dq,
        dlambda_dq: effect.dlambda_dq,
        w: effect.welfare.weights.clone(),
        dr_dp,
        welfare: effect.welfare,
        partition: effect.partition,
    })
}

/// Central-difference oracles that re-solve the equilibrium at shifted inputs.
pub mod fd {
    use super::*;

    fn solve(market: &Market, p: f64, q: f64) -> Result<StrategyProfile> {
        solve_converged(market, p, q, &equilibrium_options())
    }

    pub fn subsidies_wrt_cap(market: &Market, p: f64, q: f64, h: f64) -> Result<Vec<f64>> {
        let up = solve(market, p, q + h)?;
        let dn = solve(market, p, q - h)?;
        Ok(diff(&up.subsidies, &dn.subsidies, h))
    }

    pub fn subsidies_wrt_price(market: &Market, p: f64, q: f64, h: f64) -> Result<Vec<f64>> {
        let up = solve(market, p + h, q)?;
        let dn = solve(market, p - h, q)?;
        Ok(diff(&up.subsidies, &dn.subsidies, h))
    }

    pub fn revenue_wrt_price(market: &Market, p: f64, q: f64, h: f64) -> Result<f64> {
        Ok((solve(market, p + h, q)?.revenue() - solve(market, p - h, q)?.revenue()) / (2.0 * h))
    }

    /// `(dφ/dq, dθ_i/dq, dW/dq)` along `schedule`.
    pub fn policy(market: &Market, schedule: &dyn PriceSchedule, q: f64, h: f64) -> Result<(f64, Vec<f64>, f64)> {
        let up = solve(market, schedule.price(market, q + h)?, q + h)?;
        let dn = solve(market, schedule.price(market, q - h)?, q - h)?;
        Ok((
            (up.state.phi - dn.state.phi) / (2.0 * h),
            diff(&up.state.theta_i, &dn.state.theta_i, h),
            (up.welfare(market) - dn.welfare(market)) / (2.0 * h),
        ))
    }

    fn diff(a: &[f64], b: &[f64], h: f64) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContentProvider;
    use approx::assert_relative_eq;

    fn market(params: &[(f64, f64, f64)]) -> Market {
        let cps = params
            .iter()
            .enumerate()
            .map(|(k, &(a, b, v))| ContentProvider::exponential(format!("cp{k}"), a, b, v).unwrap())
            .collect();
        Market::linear(1.0, cps).unwrap()
    }

    fn profile_with(market: &Market, q: f64, s: &[f64]) -> StrategyProfile {
        StrategyProfile::evaluate(market, 1.0, q, s).unwrap()
    }

    #[test]
    fn collapsed_box_is_all_minus() {
        let m = market(&[(2.0, 2.0, 1.0), (5.0, 2.0, 1.0)]);
        let pr = profile_with(&m, 0.0, &[0.0, 0.0]);
        let part = classify(&pr, DEFAULT_BINDING_TOL);
        assert_eq!(part.n_minus, vec![0, 1]);
        assert!(part.n_plus.is_empty() && part.n_tilde.is_empty());
        let d = equilibrium_dynamics(&m, &pr, &part).unwrap();
        assert_eq!(d.ds_dq, vec![0.0, 0.0]);
        assert_eq!(d.ds_dp, vec![0.0, 0.0]);
    }

    #[test]
    fn near_cap_is_binding() {
        let m = market(&[(2.0, 2.0, 1.0), (5.0, 2.0, 1.0)]);
        let pr = profile_with(&m, 0.5, &[0.5 - 1e-9, 0.2]);
        let part = classify(&pr, DEFAULT_BINDING_TOL);
        assert_eq!(part.n_plus, vec![0]);
        assert_eq!(part.n_tilde, vec![1]);
    }

    #[test]
    fn all_binding_moves_with_cap() {
        let m = market(&[(5.0, 2.0, 1.0), (5.0, 5.0, 1.0)]);
        let (pr, _) = solve_nash(&m, 0.2, 0.1, &NashOptions::default()).unwrap();
        let part = classify(&pr, DEFAULT_BINDING_TOL);
        assert_eq!(part.n_plus, vec![0, 1]);
        let d = equilibrium_dynamics(&m, &pr, &part).unwrap();
        assert_eq!(d.ds_dq, vec![1.0, 1.0]);
        let eff = policy_effect(&m, &FixedPrice(0.2), 0.1).unwrap();
        for i in 0..2 {
            assert_eq!(eff.dm_dq[i], pr.demand_slope[i]);
            assert!(eff.dm_dq[i] > 0.0);
        }
    }

    #[test]
    fn interior_dynamics_match_resolves() {
        let m = market(&[(2.0, 2.0, 0.5), (5.0, 2.0, 1.0), (5.0, 5.0, 1.0)]);
        let (p, q) = (1.0, 1.0);
        let (pr, _) = solve_nash(&m, p, q, &NashOptions::default()).unwrap();
        let part = classify(&pr, DEFAULT_BINDING_TOL);
        assert!(!part.n_tilde.is_empty());
        let d = equilibrium_dynamics(&m, &pr, &part).unwrap();
        assert!(d.psi_residual < 1e-8);
        let fq = fd::subsidies_wrt_cap(&m, p, q, FD_STEP).unwrap();
        let fp = fd::subsidies_wrt_price(&m, p, q, FD_STEP).unwrap();
        for i in 0..3 {
            assert_relative_eq!(d.ds_dq[i], fq[i], max_relative = 1e-3, epsilon = 1e-7);
            assert_relative_eq!(d.ds_dp[i], fp[i], max_relative = 1e-3, epsilon = 1e-7);
        }
    }

    #[test]
    fn upsilon_matches_feedback_ratio() {
        let m = market(&[(1.0, 3.0, 1.0), (2.0, 1.0, 1.0)]);
        let pr = profile_with(&m, 1.0, &[0.3, 0.6]);
        let st = &pr.state;
        assert_relative_eq!(upsilon(&m, st), m.capacity / st.dg_dphi, max_relative = 1e-12);
    }

    #[test]
    fn marginal_revenue_one_sided_and_fd() {
        let m = market(&[(1.0, 3.0, 1.0), (3.0, 1.0, 0.5)]);
        let mr = marginal_revenue(&m, 0.8, 0.0).unwrap();
        let pe = crate::utilization::price_effect(&m, 0.8).unwrap();
        assert!((mr.dr_dp - (pe.state.theta + 0.8 * pe.d_theta_dp)).abs() < 1e-8);
        let mr = marginal_revenue(&m, 0.8, 2.0).unwrap();
        let f = fd::revenue_wrt_price(&m, 0.8, 2.0, FD_STEP).unwrap();
        assert_relative_eq!(mr.dr_dp, f, max_relative = 1e-3);
    }

    #[test]
    fn welfare_common_value_factorizes() {
        let m = market(&[(1.0, 3.0, 0.7), (2.0, 1.0, 0.7)]);
        let pr = profile_with(&m, 1.0, &[0.3, 0.6]);
        let wc = welfare_condition(&m, &pr.state, &[0.2, 0.1]);
        assert!(wc.applicable);
        assert_relative_eq!(wc.lhs, 0.7, max_relative = 1e-14);
        let feedback: f64 = (0..2)
            .map(|i| -pr.state.populations[i] * pr.state.lambda_slope[i] / pr.state.dg_dphi)
            .sum();
        assert_relative_eq!(wc.rhs, 0.7 * feedback, max_relative = 1e-14);
        assert_eq!(wc.sign, if 1.0 > feedback { 1 } else { -1 });
        assert_eq!(wc.sign, sign_of(wc.dw_dq));
    }

    #[test]
    fn policy_effect_matches_resolves() {
        let m = market(&[(2.0, 2.0, 0.5), (5.0, 2.0, 1.0), (5.0, 5.0, 1.0)]);
        let eff = policy_effect(&m, &FixedPrice(1.0), 0.5).unwrap();
        let (dphi, dtheta, dw) = fd::policy(&m, &FixedPrice(1.0), 0.5, FD_STEP).unwrap();
        assert_relative_eq!(eff.dphi_dq, dphi, max_relative = 1e-3);
        assert_relative_eq!(eff.welfare.dw_dq, dw, max_relative = 1e-3);
        for ((&a, &fd), &rises) in eff.dtheta_i_dq.iter().zip(&dtheta).zip(&eff.rises) {
            assert_relative_eq!(a, fd, max_relative = 1e-3, epsilon = 1e-8);
            assert_eq!(rises, fd > 0.0);
        }
    }

    #[test]
    fn closure_schedule_feeds_the_chain_rule() {
        let m = market(&[(2.0, 2.0, 0.5), (5.0, 2.0, 1.0)]);
        let sched = PriceCurve {
            price: |q: f64| 0.8 + 0.1 * q,
            slope: |_: f64| 0.1,
        };
        let eff = policy_effect(&m, &sched, 0.5).unwrap();
        let (dphi, _, _) = fd::policy(&m, &sched, 0.5, FD_STEP).unwrap();
        assert_relative_eq!(eff.dphi_dq, dphi, max_relative = 1e-3);
    }

    #[test]
    fn single_provider_deregulation() {
        let m = market(&[(3.0, 2.0, 1.0)]);
        let r = check_deregulation_monotonicity(&m, 1.0, &[0.0, 0.25, 0.5, 1.0]).unwrap();
        assert!(r.hypothesis_holds);
        assert!(r.phi_non_decreasing);
        assert!(check_deregulation_monotonicity(&m, 1.0, &[0.5, 0.25]).is_err());
    }
}
