//! The providers' subsidy game at a fixed ISP price `p` and policy cap `q`.
//!
//! Provider `i` picks `s_i ∈ [0, q]`, its users pay `t_i = p − s_i`, and it
//! earns `U_i = (v_i − s_i)·θ_i(s)`. Equilibria are found by damped iterated
//! best response followed by a Newton polish on the interior coordinates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ElasticityBundle, Market};
use crate::utilization::{solve_utilization_with, MarketState, SolverOptions};

/// Largest roster for which every principal minor is enumerated.
pub const MAX_MINOR_TEST_SIZE: usize = 12;
/// Best-response steps below this that stop shrinking for
/// [`STALL_PATIENCE`] iterations end the iteration as settled.
pub const STALL_LEVEL: f64 = 1e-6;
pub const STALL_PATIENCE: usize = 50;

/// Market response to a subsidy vector, with the first-order quantities the
/// game needs. Subsidies are not required to be feasible here.
#[derive(Debug, Clone)]
pub(crate) struct Response {
    pub state: MarketState,
    pub effective_prices: Vec<f64>,
    /// `∂m_i/∂s_i = −m_i'(t_i)`.
    pub demand_slope: Vec<f64>,
    /// `∂θ_i/∂s_i`.
    pub theta_slope: Vec<f64>,
    pub utilities: Vec<f64>,
    pub marginal: Vec<f64>,
}

pub(crate) fn respond(market: &Market, p: f64, s: &[f64], warm: Option<f64>) -> Result<Response> {
    let t: Vec<f64> = s.iter().map(|si| p - si).collect();
    let m = market.populations(&t);
    let opts = SolverOptions {
        initial_guess: warm,
        ..Default::default()
    };
    let state = solve_utilization_with(market, &m, &opts)?;
    let n = market.len();
    let mut demand_slope = Vec::with_capacity(n);
    let mut theta_slope = Vec::with_capacity(n);
    let mut utilities = Vec::with_capacity(n);
    let mut marginal = Vec::with_capacity(n);
    for (i, cp) in market.cps.iter().enumerate() {
        let a = -cp.demand.derivative(t[i]);
        let lam = state.lambda[i];
        let dphi = lam * a / state.dg_dphi;
        let ts = a * lam + m[i] * state.lambda_slope[i] * dphi;
        let margin = cp.unit_profit - s[i];
        demand_slope.push(a);
        theta_slope.push(ts);
        utilities.push(margin * state.theta_i[i]);
        marginal.push(margin * ts - state.theta_i[i]);
    }
    Ok(Response {
        state,
        effective_prices: t,
        demand_slope,
        theta_slope,
        utilities,
        marginal,
    })
}

pub(crate) fn check_box(p: f64, q: f64) -> Result<()> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::domain(format!("price must be finite and >= 0, got {p}")));
    }
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::domain(format!("policy cap must be finite and >= 0, got {q}")));
    }
    Ok(())
}

fn check_feasible(market: &Market, p: f64, q: f64, s: &[f64]) -> Result<()> {
    check_box(p, q)?;
    if s.len() != market.len() {
        return Err(Error::domain(format!(
            "{} subsidies for {} content providers",
            s.len(),
            market.len()
        )));
    }
    if let Some((i, si)) = s.iter().enumerate().find(|(_, si)| !(**si >= 0.0 && **si <= q)) {
        return Err(Error::domain(format!("subsidy s[{i}] = {si} outside [0, {q}]")));
    }
    Ok(())
}

fn check_index(market: &Market, i: usize) -> Result<()> {
    if i >= market.len() {
        return Err(Error::IndexOutOfRange { index: i, len: market.len() });
    }
    Ok(())
}

/// `τ_i = (v_i − s_i)·ε_{s_i}^{m_i}·(1 + ε_φ^{λ_i}·ε_{m_i}^φ)`.
fn threshold(market: &Market, r: &Response, s: &[f64], i: usize) -> f64 {
    let st = &r.state;
    let margin = market.cps[i].unit_profit - s[i];
    let m = st.populations[i];
    let eps_s_m = if s[i] == 0.0 { 0.0 } else { r.demand_slope[i] * s[i] / m };
    let coupling = if st.phi > 0.0 {
        let eps_phi_lambda = market.cps[i].throughput.elasticity(st.phi);
        let eps_m_phi = st.lambda[i] / st.dg_dphi * m / st.phi;
        eps_phi_lambda * eps_m_phi
    } else {
        m * st.lambda_slope[i] / st.dg_dphi
    };
    margin * eps_s_m * (1.0 + coupling)
}

/// A subsidy profile together with everything the game derives from it.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyProfile {
    pub price: f64,
    pub cap: f64,
    pub subsidies: Vec<f64>,
    pub effective_prices: Vec<f64>,
    pub utilities: Vec<f64>,
    pub marginal_utilities: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub state: MarketState,
    #[serde(skip)]
    pub(crate) demand_slope: Vec<f64>,
    #[serde(skip)]
    pub(crate) theta_slope: Vec<f64>,
}

impl StrategyProfile {
    pub fn evaluate(market: &Market, p: f64, q: f64, s: &[f64]) -> Result<Self> {
        check_feasible(market, p, q, s)?;
        let r = respond(market, p, s, None)?;
        Ok(Self::from_response(market, p, q, s, r))
    }

    fn from_response(market: &Market, p: f64, q: f64, s: &[f64], r: Response) -> Self {
        let thresholds = (0..market.len()).map(|i| threshold(market, &r, s, i)).collect();
        Self {
            price: p,
            cap: q,
            subsidies: s.to_vec(),
            effective_prices: r.effective_prices,
            utilities: r.utilities,
            marginal_utilities: r.marginal,
            thresholds,
            state: r.state,
            demand_slope: r.demand_slope,
            theta_slope: r.theta_slope,
        }
    }

    pub fn len(&self) -> usize {
        self.subsidies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsidies.is_empty()
    }

    pub fn revenue(&self) -> f64 {
        self.state.revenue(self.price)
    }

    pub fn welfare(&self, market: &Market) -> f64 {
        self.state.welfare(market)
    }

    /// Elasticities of provider `i` at this profile; policy entries are zero.
    pub fn elasticities(&self, market: &Market, i: usize) -> ElasticityBundle {
        let st = &self.state;
        let cp = &market.cps[i];
        let m = st.populations[i];
        let dm_dt = -self.demand_slope[i];
        let push: f64 = (0..self.len())
            .map(|k| -self.demand_slope[k] * st.lambda[k])
            .sum();
        let d_phi_dp = push / st.dg_dphi;
        let (eps_m_phi, eps_p_phi) = if st.phi > 0.0 {
            (st.lambda[i] / st.dg_dphi * m / st.phi, d_phi_dp * self.price / st.phi)
        } else {
            (0.0, 0.0)
        };
        ElasticityBundle {
            eps_phi_lambda: cp.throughput.elasticity(st.phi),
            eps_p_m: dm_dt * self.price / m,
            eps_s_m: self.demand_slope[i] * self.subsidies[i] / m,
            eps_m_phi,
            eps_p_phi,
            eps_q_phi: 0.0,
            eps_q_t: 0.0,
        }
    }
}

/// `U_i = (v_i − s_i)·m_i(p − s_i)·λ_i(φ(s))`.
pub fn utility(market: &Market, p: f64, q: f64, s: &[f64], i: usize) -> Result<f64> {
    check_feasible(market, p, q, s)?;
    check_index(market, i)?;
    Ok(respond(market, p, s, None)?.utilities[i])
}

/// `u_i = ∂U_i/∂s_i = (v_i − s_i)·∂θ_i/∂s_i − θ_i`.
pub fn marginal_utility(market: &Market, p: f64, q: f64, s: &[f64], i: usize) -> Result<f64> {
    check_feasible(market, p, q, s)?;
    check_index(market, i)?;
    Ok(respond(market, p, s, None)?.marginal[i])
}

/// Threshold `τ_i(s)` from the elasticity decomposition.
pub fn tau(market: &Market, p: f64, q: f64, s: &[f64], i: usize) -> Result<f64> {
    check_feasible(market, p, q, s)?;
    check_index(market, i)?;
    let r = respond(market, p, s, None)?;
    Ok(threshold(market, &r, s, i))
}

/// Threshold in the form `(v_i − s_i)·ε_{s_i}^{θ_i}`.
pub fn tau_throughput_form(market: &Market, p: f64, q: f64, s: &[f64], i: usize) -> Result<f64> {
    check_feasible(market, p, q, s)?;
    check_index(market, i)?;
    let r = respond(market, p, s, None)?;
    let th = r.state.theta_i[i];
    if th == 0.0 || s[i] == 0.0 {
        return Ok(0.0);
    }
    Ok((market.cps[i].unit_profit - s[i]) * r.theta_slope[i] * s[i] / th)
}

const SCAN_POINTS: usize = 32;
const GOLDEN_ITERATIONS: usize = 40;
const ROOT_ITERATIONS: usize = 100;

/// Global maximizer of `U_i(·; s_{−i})` over `[0, q]`.
///
/// A uniform scan of `[0, min(q, v_i)]` locates the best cell. A sign change
/// of `u_i` next to it brackets the stationary point, which is then pinned by
/// regula falsi; without a bracket a golden-section search refines the cell.
/// Points above `v_i` are scanned too; they earn a negative margin and cannot
/// beat `s_i = 0`. Ties go to the smaller subsidy.
pub fn best_response(market: &Market, p: f64, q: f64, s: &[f64], i: usize) -> Result<f64> {
    check_feasible(market, p, q, s)?;
    check_index(market, i)?;
    best_response_unchecked(market, p, q, s, i, None)
}

fn best_response_unchecked(
    market: &Market,
    p: f64,
    q: f64,
    s: &[f64],
    i: usize,
    warm: Option<f64>,
) -> Result<f64> {
    let v = market.cps[i].unit_profit;
    let upper = q.min(v);
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let mut trial = s.to_vec();
    let mut eval = |x: f64| -> Result<(f64, f64)> {
        trial[i] = x;
        let r = respond(market, p, &trial, warm)?;
        Ok((r.utilities[i], r.marginal[i]))
    };

    let grid: Vec<f64> = (0..=SCAN_POINTS)
        .map(|k| upper * k as f64 / SCAN_POINTS as f64)
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut slopes = Vec::with_capacity(grid.len());
    for &x in &grid {
        let (u, du) = eval(x)?;
        values.push(u);
        slopes.push(du);
    }
    let mut candidates: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
    let best_k = argmax_first(&values);

    let cells = [(best_k.wrapping_sub(1), best_k), (best_k, best_k + 1)];
    let mut bracketed = false;
    for (a, b) in cells {
        if b > SCAN_POINTS || a > SCAN_POINTS {
            continue;
        }
        if slopes[a] > 0.0 && slopes[b] < 0.0 {
            bracketed = true;
            let root = regula_falsi(|x| Ok(eval(x)?.1), grid[a], slopes[a], grid[b], slopes[b])?;
            candidates.push((root, eval(root)?.0));
        }
    }
    if !bracketed && best_k > 0 && best_k < SCAN_POINTS {
        let x = golden_max(|x| Ok(eval(x)?.0), grid[best_k - 1], grid[best_k + 1])?;
        candidates.push((x, eval(x)?.0));
    }

    if v < q {
        for k in 1..=4 {
            let x = v + (q - v) * k as f64 / 4.0;
            candidates.push((x, eval(x)?.0));
        }
    }

    let mut best = candidates[0];
    for &(x, u) in &candidates[1..] {
        if u > best.1 || (u == best.1 && x < best.0) {
            best = (x, u);
        }
    }
    Ok(best.0)
}

/// Root of `f` on `[a, b]` with `f(a) > 0 > f(b)`, by the Illinois variant of
/// regula falsi.
fn regula_falsi<F>(mut f: F, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut side = 0i8;
    for _ in 0..ROOT_ITERATIONS {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
            if !(c > a && c < b) {
                break;
            }
        }
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fc > 0.0 {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
        if b - a <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Maximizer of a unimodal `f` on `[lo, hi]` by golden-section search.
fn golden_max<F>(mut f: F, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { x1 } else { x2 })
}

fn argmax_first(values: &[f64]) -> usize {
    let mut k = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[k] {
            k = j;
        }
    }
    k
}

#[derive(Debug, Clone)]
pub struct NashOptions {
    /// Weight on the best response in `s ← (1−ω)s + ω·BR(s)`.
    pub damping: f64,
    /// Sup-norm step below which the iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Newton refinement of the interior coordinates after convergence.
    pub polish: bool,
    pub initial: Option<Vec<f64>>,
    /// Random profile pairs drawn for the monotonicity test; zero skips it.
    pub uniqueness_samples: usize,
    pub seed: u64,
    /// Evaluate discrete concavity of each `U_i` along its own coordinate.
    pub concavity_check: bool,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 10_000,
            polish: true,
            initial: None,
            uniqueness_samples: 0,
            seed: 0,
            concavity_check: true,
        }
    }
}

/// Evidence that the equilibrium found is unique.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessEvidence {
    pub pairs_tested: usize,
    /// A pair `(s, s')` for which no coordinate satisfies
    /// `(s'_i − s_i)(u_i(s') − u_i(s)) < 0`.
    pub violating_pair: Option<(Vec<f64>, Vec<f64>)>,
    /// Smallest principal minor of `−∇_s u` at the equilibrium.
    pub min_principal_minor: Option<f64>,
    pub min_minor_subset: Option<Vec<usize>>,
    pub p_matrix: Option<bool>,
    pub diagnostic: Option<String>,
}

impl UniquenessEvidence {
    pub fn sampling_passed(&self) -> bool {
        self.violating_pair.is_none()
    }

    /// `−∇_s u` is a P-matrix at the equilibrium (local uniqueness).
    pub fn locally_unique(&self) -> bool {
        self.p_matrix == Some(true)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumCertificate {
    pub kkt_residuals: Vec<f64>,
    pub tau_residuals: Vec<f64>,
    pub iterations: usize,
    pub last_step: f64,
    pub converged: bool,
    /// Every `U_i` passed the discrete concavity check along `s_i`; when it
    /// fails the first-order conditions are only necessary.
    pub concave: Option<bool>,
    pub uniqueness: UniquenessEvidence,
}

impl EquilibriumCertificate {
    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_residuals.iter().fold(0.0, |a, b| a.max(*b))
    }

    pub fn max_tau_residual(&self) -> f64 {
        self.tau_residuals.iter().fold(0.0, |a, b| a.max(*b))
    }
}

/// KKT violation of each coordinate: `u_i ≤ 0` at `s_i = 0`, `u_i ≥ 0` at
/// `s_i = q`, `u_i = 0` inside.
pub fn kkt_residuals(profile: &StrategyProfile) -> Vec<f64> {
    let q = profile.cap;
    profile
        .subsidies
        .iter()
        .zip(&profile.marginal_utilities)
        .map(|(&s, &u)| {
            let at_zero = s == 0.0;
            let at_cap = s == q;
            match (at_zero, at_cap) {
                (true, true) => 0.0,
                (true, false) => u.max(0.0),
                (false, true) => (-u).max(0.0),
                (false, false) => u.abs(),
            }
        })
        .collect()
}

/// `|s_i − min(τ_i, q)|` per provider.
pub fn tau_residuals(profile: &StrategyProfile) -> Vec<f64> {
    profile
        .subsidies
        .iter()
        .zip(&profile.thresholds)
        .map(|(s, tau)| (s - tau.min(profile.cap)).abs())
        .collect()
}

/// Nash equilibrium reached from `s = 0` (or `options.initial`).
///
/// Non-convergence is not an error: the best iterate comes back with
/// `converged = false` in the certificate.
pub fn solve_nash(
    market: &Market,
    p: f64,
    q: f64,
    options: &NashOptions,
) -> Result<(StrategyProfile, EquilibriumCertificate)> {
    check_box(p, q)?;
    let n = market.len();
    let mut s = match &options.initial {
        Some(s0) => {
            check_feasible(market, p, q, s0)?;
            s0.clone()
        }
        None => vec![0.0; n],
    };
    let omega = options.damping;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let mut best_step = f64::INFINITY;
    let mut since_best = 0;
    let mut warm = None;
    let mut settled = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let br = best_responses(market, p, q, &s, warm)?;
        let mut step: f64 = 0.0;
        for (si, bi) in s.iter_mut().zip(&br) {
            let next = ((1.0 - omega) * *si + omega * bi).clamp(0.0, q);
            step = step.max((next - *si).abs());
            *si = next;
        }
        last_step = step;
        if step < best_step {
            best_step = step;
            since_best = 0;
        } else {
            since_best += 1;
        }
        // the step can plateau at the rounding noise of the best responses
        let plateau = best_step < STALL_LEVEL && since_best >= STALL_PATIENCE;
        if step < options.tolerance || plateau {
            // snap to the undamped response so bound coordinates are exact
            s = br;
            settled = true;
            break;
        }
        warm = Some(respond(market, p, &s, warm)?.state.phi);
    }

    if settled && options.polish {
        polish_interior(market, p, q, &mut s)?;
    }

    let r = respond(market, p, &s, None)?;
    let profile = StrategyProfile::from_response(market, p, q, &s, r);
    let kkt = kkt_residuals(&profile);
    let max_kkt = kkt.iter().fold(0.0f64, |a, b| a.max(*b));
    let concave = if options.concavity_check {
        Some(concavity_along_coordinates(market, p, q, &s)?)
    } else {
        None
    };
    let uniqueness = uniqueness_evidence(market, &profile, options.uniqueness_samples, options.seed)?;
    let certificate = EquilibriumCertificate {
        tau_residuals: tau_residuals(&profile),
        kkt_residuals: kkt,
        iterations,
        last_step,
        converged: settled && max_kkt < 1e-8,
        concave,
        uniqueness,
    };
    Ok((profile, certificate))
}

fn best_responses(market: &Market, p: f64, q: f64, s: &[f64], warm: Option<f64>) -> Result<Vec<f64>> {
    (0..market.len())
        .map(|i| best_response_unchecked(market, p, q, s, i, warm))
        .collect()
}

/// Newton iterations on `ũ(s̃) = 0` over the interior coordinates. Leaves `s`
/// untouched if an iterate would leave the box or the residual stops falling.
fn polish_interior(market: &Market, p: f64, q: f64, s: &mut [f64]) -> Result<()> {
    let interior: Vec<usize> = (0..s.len()).filter(|&i| s[i] > 0.0 && s[i] < q).collect();
    if interior.is_empty() {
        return Ok(());
    }
    let residual = |r: &Response| interior.iter().fold(0.0f64, |a, &i| a.max(r.marginal[i].abs()));
    let mut current = s.to_vec();
    let mut r = respond(market, p, &current, None)?;
    let mut res = residual(&r);
    for _ in 0..20 {
        if res < 1e-14 {
            break;
        }
        let profile = StrategyProfile::from_response(market, p, q, &current, r.clone());
        let jac = marginal_jacobian(market, &profile)?;
        let k = interior.len();
        let sub = DMatrix::from_fn(k, k, |a, b| jac[(interior[a], interior[b])]);
        let rhs = DVector::from_iterator(k, interior.iter().map(|&i| -r.marginal[i]));
        let Some(delta) = sub.lu().solve(&rhs) else {
            break;
        };
        let mut next = current.clone();
        for (a, &i) in interior.iter().enumerate() {
            next[i] += delta[a];
        }
        if interior.iter().any(|&i| !(next[i] > 0.0 && next[i] < q)) {
            break;
        }
        let rn = respond(market, p, &next, None)?;
        let resn = residual(&rn);
        if !(resn < res) {
            break;
        }
        current = next;
        r = rn;
        res = resn;
    }
    s.copy_from_slice(&current);
    Ok(())
}

/// Discrete concavity of `U_i(·; s_{−i})` on 20 evenly spaced points of `[0, q]`.
fn concavity_along_coordinates(market: &Market, p: f64, q: f64, s: &[f64]) -> Result<bool> {
    if q == 0.0 {
        return Ok(true);
    }
    const POINTS: usize = 20;
    let mut trial = s.to_vec();
    for i in 0..market.len() {
        let mut u = Vec::with_capacity(POINTS);
        for k in 0..POINTS {
            trial[i] = q * k as f64 / (POINTS - 1) as f64;
            u.push(respond(market, p, &trial, None)?.utilities[i]);
        }
        trial[i] = s[i];
        let scale = u.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
        if u.windows(3).any(|w| w[0] - 2.0 * w[1] + w[2] > 1e-12 * scale) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `∇_s u` in closed form, differentiating through the utilization fixed
/// point. Falls back to central differences when a curve has no analytic
/// second derivative.
pub fn marginal_jacobian(market: &Market, profile: &StrategyProfile) -> Result<DMatrix<f64>> {
    match analytic_jacobian(market, profile) {
        Some(j) => Ok(j),
        None => marginal_jacobian_fd(market, profile.price, &profile.subsidies, 1e-5),
    }
}

fn analytic_jacobian(market: &Market, pr: &StrategyProfile) -> Option<DMatrix<f64>> {
    let n = pr.len();
    let st = &pr.state;
    let d = st.dg_dphi;
    let mut b = Vec::with_capacity(n);
    let mut l2 = Vec::with_capacity(n);
    for (i, cp) in market.cps.iter().enumerate() {
        b.push(cp.demand.second_derivative(pr.effective_prices[i])?);
        l2.push(cp.throughput.second_derivative(st.phi)?);
    }
    let (m, a, lam, l1) = (&st.populations, &pr.demand_slope, &st.lambda, &st.lambda_slope);
    let phi_s: Vec<f64> = (0..n).map(|j| lam[j] * a[j] / d).collect();
    let curvature: f64 = (0..n).map(|k| m[k] * l2[k]).sum();
    let theta_phiphi = market.utilization.theta_dphi2(st.phi, market.capacity);
    let d_s: Vec<f64> = (0..n)
        .map(|j| theta_phiphi * phi_s[j] - a[j] * l1[j] - curvature * phi_s[j])
        .collect();
    Some(DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        let dphi_i = ((l1[i] * phi_s[j] * a[i] + delta * lam[i] * b[i]) * d - lam[i] * a[i] * d_s[j]) / (d * d);
        let dts = delta * b[i] * lam[i]
            + a[i] * l1[i] * phi_s[j]
            + delta * a[i] * l1[i] * phi_s[i]
            + m[i] * l2[i] * phi_s[j] * phi_s[i]
            + m[i] * l1[i] * dphi_i;
        let dth = delta * a[i] * lam[i] + m[i] * l1[i] * phi_s[j];
        let margin = market.cps[i].unit_profit - pr.subsidies[i];
        -delta * pr.theta_slope[i] + margin * dts - dth
    }))
}

/// Central-difference `∇_s u`, re-solving the utilization at every shift.
pub fn marginal_jacobian_fd(market: &Market, p: f64, s: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = s.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut up = s.to_vec();
    let mut dn = s.to_vec();
    for j in 0..n {
        up[j] = s[j] + h;
        dn[j] = s[j] - h;
        let ru = respond(market, p, &up, None)?;
        let rd = respond(market, p, &dn, None)?;
        for i in 0..n {
            jac[(i, j)] = (ru.marginal[i] - rd.marginal[i]) / (2.0 * h);
        }
        up[j] = s[j];
        dn[j] = s[j];
    }
    Ok(jac)
}

/// `∂u/∂p`. Prices enter only through `t = p·1 − s`, so
/// `∂u_i/∂p = −Σ_k ∂u_i/∂s_k − ∂θ_i/∂s_i`.
pub fn marginal_price_gradient(profile: &StrategyProfile, jac: &DMatrix<f64>) -> Vec<f64> {
    (0..profile.len())
        .map(|i| -jac.row(i).sum() - profile.theta_slope[i])
        .collect()
}

pub fn marginal_price_gradient_fd(market: &Market, p: f64, s: &[f64], h: f64) -> Result<Vec<f64>> {
    let ru = respond(market, p + h, s, None)?;
    let rd = respond(market, p - h, s, None)?;
    Ok(ru
        .marginal
        .iter()
        .zip(&rd.marginal)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

/// Smallest principal minor of `a` over all non-empty index subsets.
pub fn min_principal_minor(a: &DMatrix<f64>) -> Option<(f64, Vec<usize>)> {
    let n = a.nrows();
    if n == 0 || n > MAX_MINOR_TEST_SIZE {
        return None;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 1u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])]);
        let det = sub.determinant();
        if best.as_ref().is_none_or(|(d, _)| det < *d) {
            best = Some((det, idx));
        }
    }
    best
}

fn uniqueness_evidence(
    market: &Market,
    profile: &StrategyProfile,
    samples: usize,
    seed: u64,
) -> Result<UniquenessEvidence> {
    let n = market.len();
    let q = profile.cap;
    let p = profile.price;
    let mut evidence = UniquenessEvidence {
        pairs_tested: 0,
        violating_pair: None,
        min_principal_minor: None,
        min_minor_subset: None,
        p_matrix: None,
        diagnostic: None,
    };
    if n > MAX_MINOR_TEST_SIZE {
        evidence.diagnostic = Some(format!(
            "principal-minor test skipped for {n} providers (limit {MAX_MINOR_TEST_SIZE})"
        ));
    } else if n > 0 {
        let neg = -marginal_jacobian(market, profile)?;
        if let Some((minor, subset)) = min_principal_minor(&neg) {
            evidence.p_matrix = Some(minor > 0.0);
            evidence.min_principal_minor = Some(minor);
            evidence.min_minor_subset = Some(subset);
        }
    }
    if q > 0.0 && n > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=q)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=q)).collect();
            if a == b {
                continue;
            }
            evidence.pairs_tested += 1;
            let (ua, ub) = (respond(market, p, &a, None)?, respond(market, p, &b, None)?);
            let ok = (0..n).any(|i| (b[i] - a[i]) * (ub.marginal[i] - ua.marginal[i]) < 0.0);
            if !ok {
                evidence.violating_pair = Some((a, b));
                break;
            }
        }
    }
    Ok(evidence)
}

/// Runs the equilibrium and then both uniqueness tests with `samples` pairs.
pub fn check_uniqueness(market: &Market, p: f64, q: f64, samples: usize, seed: u64) -> Result<UniquenessEvidence> {
    if samples == 0 {
        return Err(Error::domain("at least one sample pair is required"));
    }
    let opts = NashOptions {
        concavity_check: false,
        ..Default::default()
    };
    let (profile, _) = solve_nash(market, p, q, &opts)?;
    uniqueness_evidence(market, &profile, samples, seed)
}

/// Equilibrium subsidy of provider `i` as its unit profit moves along `v_grid`.
#[derive(Debug, Clone, Serialize)]
pub struct ProfitabilityCurve {
    pub provider: usize,
    pub unit_profit: Vec<f64>,
    pub subsidy: Vec<f64>,
    pub locally_unique: Vec<bool>,
    /// `s_i(v)` never drops by more than `1e-8` between grid points.
    pub non_decreasing: bool,
}

pub fn profitability_monotonicity(
    market: &Market,
    p: f64,
    q: f64,
    i: usize,
    v_grid: &[f64],
) -> Result<ProfitabilityCurve> {
    check_index(market, i)?;
    if v_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("unit-profit grid must be strictly increasing"));
    }
    let opts = NashOptions {
        concavity_check: false,
        ..Default::default()
    };
    let mut subsidy = Vec::with_capacity(v_grid.len());
    let mut locally_unique = Vec::with_capacity(v_grid.len());
    for &v in v_grid {
        let m = market.with_unit_profit(i, v)?;
        let (profile, cert) = solve_nash(&m, p, q, &opts)?;
        if !cert.converged {
            return Err(Error::NonConvergence {
                iterations: cert.iterations,
                last_step: cert.last_step,
            });
        }
        subsidy.push(profile.subsidies[i]);
        locally_unique.push(cert.uniqueness.locally_unique());
    }
    let non_decreasing = subsidy.windows(2).all(|w| w[1] >= w[0] - 1e-8);
    Ok(ProfitabilityCurve {
        provider: i,
        unit_profit: v_grid.to_vec(),
        subsidy,
        locally_unique,
        non_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContentProvider, FunctionFamily};
    use approx::assert_relative_eq;

    fn two_cp() -> Market {
        Market::linear(
            1.0,
            vec![
                ContentProvider::exponential("a", 2.0, 2.0, 0.5).unwrap(),
                ContentProvider::exponential("b", 5.0, 2.0, 1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_margin_gives_zero_utility_and_threshold() {
        let market = two_cp();
        let s = [0.5, 0.3];
        assert_eq!(utility(&market, 1.0, 1.0, &s, 0).unwrap(), 0.0);
        assert_eq!(tau(&market, 1.0, 1.0, &s, 0).unwrap(), 0.0);
    }

    #[test]
    fn zero_profit_marginal_utility_is_minus_throughput() {
        let market = Market::linear(1.0, vec![ContentProvider::exponential("z", 1.0, 1.0, 0.0).unwrap()]).unwrap();
        let u = marginal_utility(&market, 1.0, 1.0, &[0.0], 0).unwrap();
        let pr = StrategyProfile::evaluate(&market, 1.0, 1.0, &[0.0]).unwrap();
        assert_eq!(u, -pr.state.theta_i[0]);
        assert!(u < 0.0);
        assert_eq!(best_response(&market, 1.0, 1.0, &[0.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn infeasible_profiles_are_rejected() {
        let market = two_cp();
        assert!(utility(&market, 1.0, 0.5, &[0.6, 0.0], 0).is_err());
        assert!(utility(&market, 1.0, 0.5, &[-0.1, 0.0], 0).is_err());
        assert!(utility(&market, 1.0, 0.5, &[0.1], 0).is_err());
        assert!(utility(&market, 1.0, 0.5, &[0.1, 0.1], 5).is_err());
        assert!(solve_nash(&market, -1.0, 0.5, &NashOptions::default()).is_err());
    }

    #[test]
    fn collapsed_box() {
        let market = two_cp();
        assert_eq!(best_response(&market, 1.0, 0.0, &[0.0, 0.0], 1).unwrap(), 0.0);
        let (pr, cert) = solve_nash(&market, 1.0, 0.0, &NashOptions::default()).unwrap();
        assert_eq!(pr.subsidies, vec![0.0, 0.0]);
        assert!(cert.converged);
        let one_sided = crate::utilization::solve_utilization(&market, &market.populations_at_price(1.0)).unwrap();
        assert_eq!(pr.state.phi, one_sided.phi);
        assert_eq!(pr.utilities[1], 1.0 * one_sided.theta_i[1]);
    }

    #[test]
    fn marginal_utility_matches_central_difference() {
        let market = two_cp();
        for s in [[0.1, 0.2], [0.3, 0.7], [0.0, 0.45]] {
            for i in 0..2 {
                let u = marginal_utility(&market, 0.8, 1.0, &s, i).unwrap();
                let h = 1e-6;
                let mut up = s;
                let mut dn = s;
                up[i] += h;
                dn[i] -= h;
                let fd = (respond(&market, 0.8, &up, None).unwrap().utilities[i]
                    - respond(&market, 0.8, &dn, None).unwrap().utilities[i])
                    / (2.0 * h);
                assert_relative_eq!(u, fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn threshold_forms_agree() {
        let market = two_cp();
        let s = [0.2, 0.6];
        for i in 0..2 {
            let a = tau(&market, 1.0, 1.0, &s, i).unwrap();
            let b = tau_throughput_form(&market, 1.0, 1.0, &s, i).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_jacobian_matches_fd() {
        let market = two_cp();
        let pr = StrategyProfile::evaluate(&market, 0.7, 1.0, &[0.25, 0.6]).unwrap();
        let ja = marginal_jacobian(&market, &pr).unwrap();
        let jf = marginal_jacobian_fd(&market, 0.7, &pr.subsidies, 1e-5).unwrap();
        for (a, b) in ja.iter().zip(jf.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-6, epsilon = 1e-8);
        }
        let gp = marginal_price_gradient(&pr, &ja);
        let gf = marginal_price_gradient_fd(&market, 0.7, &pr.subsidies, 1e-5).unwrap();
        for (a, b) in gp.iter().zip(&gf) {
            assert_relative_eq!(*a, *b, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn two_cp_equilibrium_certificate() {
        let market = two_cp();
        let (pr, cert) = solve_nash(&market, 0.5, 2.0, &NashOptions::default()).unwrap();
        assert!(cert.converged, "{cert:?}");
        assert!(cert.max_kkt_residual() < 1e-8);
        assert!(cert.max_tau_residual() < 1e-6);
        assert!(pr.utilities.iter().all(|u| *u >= -1e-12));
        assert!(pr.subsidies.iter().all(|s| (0.0..=2.0).contains(s)));
    }

    #[test]
    fn scalar_equilibrium_is_locally_strictly_monotone() {
        let market = Market::linear(1.0, vec![ContentProvider::exponential("a", 3.0, 2.0, 1.0).unwrap()]).unwrap();
        let (pr, cert) = solve_nash(&market, 1.0, 1.0, &NashOptions::default()).unwrap();
        let h = 1e-5;
        let s = pr.subsidies[0];
        let fd = -(marginal_utility(&market, 1.0, 1.0, &[s + h], 0).unwrap()
            - marginal_utility(&market, 1.0, 1.0, &[s - h], 0).unwrap())
            / (2.0 * h);
        assert!(fd > 0.0);
        assert!(cert.uniqueness.locally_unique());
        assert_relative_eq!(cert.uniqueness.min_principal_minor.unwrap(), fd, max_relative = 1e-5);
    }

    #[test]
    fn minor_enumeration() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let (min, subset) = min_principal_minor(&a).unwrap();
        assert_relative_eq!(min, 1.0, epsilon = 1e-14);
        assert!(subset == vec![1] || subset == vec![0, 1]);
        let not_p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(min_principal_minor(&not_p).unwrap().0 < 0.0);
        assert!(min_principal_minor(&DMatrix::<f64>::zeros(13, 13)).is_none());
    }

    #[test]
    fn s_shaped_demand_violates_the_monotonicity_condition() {
        // demand that is nearly flat below t = 0.6 and collapses above it
        let demand = FunctionFamily::tabulated(
            vec![0.0, 0.5, 0.6, 0.7, 1.0],
            vec![1.0, 0.98, 0.5, 0.02, 0.01],
        )
        .unwrap();
        let cp = ContentProvider::new("s", 1.0, demand, FunctionFamily::exponential(1.0)).unwrap();
        let market = Market::linear(1.0, vec![cp]).unwrap();
        let ev = check_uniqueness(&market, 1.0, 1.0, 200, 3).unwrap();
        assert!(ev.pairs_tested > 0);
        assert!(!ev.sampling_passed());
    }

    #[test]
    fn zero_profit_everywhere_means_no_subsidy() {
        let market = two_cp();
        let m = market.with_unit_profit(0, 0.0).unwrap().with_unit_profit(1, 0.0).unwrap();
        let (pr, _) = solve_nash(&m, 1.0, 1.0, &NashOptions::default()).unwrap();
        assert_eq!(pr.subsidies, vec![0.0, 0.0]);
        let curve = profitability_monotonicity(&m, 1.0, 1.0, 0, &[0.0]).unwrap();
        assert_eq!(curve.subsidy, vec![0.0]);
    }
}
