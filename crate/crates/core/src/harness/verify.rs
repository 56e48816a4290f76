use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{
    marginal_jacobian, marginal_jacobian_fd, profitability_monotonicity, solve_nash, NashOptions, StrategyProfile,
};
use crate::model::{ContentProvider, Market};
use crate::oracle;
use crate::sensitivity::{
    self, check_deregulation_monotonicity, classify, equilibrium_dynamics, marginal_revenue_at, policy_effect,
    FixedPrice, DEFAULT_BINDING_TOL, FD_STEP,
};
use crate::utilization::{self, d_phi_d_m, d_phi_d_mu, d_theta_d, gap, price_effect, solve_utilization, ThetaSensitivity};

use super::scenario::{Scenario, DEFAULT_Q_LEVELS};

/// Finite-difference noise floor for re-solve oracles with `h = 1e-4`.
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Fixedpoint,
    Derivatives,
    NashOracle,
    Sensitivity,
    Monotonicity,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Fixedpoint,
        Suite::Derivatives,
        Suite::NashOracle,
        Suite::Sensitivity,
        Suite::Monotonicity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Fixedpoint => "fixedpoint",
            Suite::Derivatives => "derivatives",
            Suite::NashOracle => "nash-oracle",
            Suite::Sensitivity => "sensitivity",
            Suite::Monotonicity => "monotonicity",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::UnknownSuite(s.to_string()))
    }
}

/// Worst case of one family of comparisons.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Residual of the worst case.
    pub residual: f64,
    /// Tolerance that applied to the worst case.
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub suite: Suite,
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// `|a − b| ≤ rel·|b| + abs`.
pub fn within(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * b.abs() + abs
}

struct Tally {
    check: Check,
    worst: f64,
}

impl Tally {
    fn new(name: impl Into<String>) -> Self {
        Self {
            check: Check {
                name: name.into(),
                passed: true,
                cases: 0,
                residual: 0.0,
                tolerance: 0.0,
            },
            worst: -1.0,
        }
    }

    fn residual(&mut self, residual: f64, tolerance: f64) {
        self.check.cases += 1;
        let ratio = if residual.is_nan() { f64::INFINITY } else { residual / tolerance };
        if ratio > self.worst {
            self.worst = ratio;
            self.check.residual = residual;
            self.check.tolerance = tolerance;
        }
    }

    fn compare(&mut self, a: f64, b: f64, rel: f64, abs: f64) {
        self.residual((a - b).abs(), rel * b.abs() + abs);
    }

    fn flag(&mut self, ok: bool) {
        self.residual(if ok { 0.0 } else { 1.0 }, 0.5);
    }

    fn finish(mut self) -> Check {
        self.check.passed = self.worst <= 1.0;
        self.check
    }
}

/// Exponential market with `n` providers and parameters drawn from `rng`.
pub fn random_market<R: Rng>(rng: &mut R, n: usize) -> Market {
    let cps = (0..n)
        .map(|k| {
            ContentProvider::exponential(
                format!("cp{k}"),
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.2..1.5),
            )
            .expect("positive rates")
        })
        .collect();
    Market::linear(rng.gen_range(0.5..2.0), cps).expect("positive capacity")
}

pub fn verify(scenario: &Scenario, suite: Suite) -> Result<VerificationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let checks = match suite {
        Suite::Fixedpoint => fixedpoint(scenario, &mut rng)?,
        Suite::Derivatives => derivatives(&mut rng)?,
        Suite::NashOracle => nash_oracle(&mut rng)?,
        Suite::Sensitivity => sensitivity_suite(scenario)?,
        Suite::Monotonicity => monotonicity(scenario)?,
    };
    Ok(VerificationReport {
        suite,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn fixedpoint(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut residual = Tally::new("random markets: |g(phi)| at the root");
    let mut agree = Tally::new("random markets: phi against bisection");
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let market = random_market(rng, n);
        let m = market.populations_at_price(rng.gen_range(0.0..2.0));
        let st = solve_utilization(&market, &m)?;
        residual.residual(gap(&market, &m, st.phi).0.abs(), 1e-10);
        agree.compare(st.phi, oracle::bisect_utilization(&market, &m), 0.0, 1e-8);
    }
    let mut own = Tally::new("scenario p grid: |g(phi)| at the root");
    let mut own_agree = Tally::new("scenario p grid: phi against bisection");
    let market = &scenario.market;
    for &p in &scenario.p_grid {
        let m = market.populations_at_price(p);
        let st = solve_utilization(market, &m)?;
        own.residual(gap(market, &m, st.phi).0.abs(), 1e-10);
        own_agree.compare(st.phi, oracle::bisect_utilization(market, &m), 0.0, 1e-8);
    }
    Ok(vec![residual.finish(), agree.finish(), own.finish(), own_agree.finish()])
}

fn derivatives(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    const REL: f64 = 1e-5;
    const H: f64 = 1e-5;
    let mut mu = Tally::new("dphi/dmu");
    let mut dm = Tally::new("dphi/dm_i");
    let mut th_mu = Tally::new("dtheta_j/dmu");
    let mut th_m = Tally::new("dtheta_j/dm_i");
    let mut dp = Tally::new("dphi/dp, dtheta_i/dp, dtheta/dp");
    let mut signs = Tally::new("signs: dphi/dmu < 0, dphi/dm_i > 0, dphi/dp <= 0, dtheta/dp <= 0");
    let mut flags = Tally::new("throughput-rise flags against FD slopes");
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let market = random_market(rng, n);
        let p = rng.gen_range(0.05..2.0);
        let m = market.populations_at_price(p);
        let st = solve_utilization(&market, &m)?;
        let a = d_phi_d_mu(&st, &market)?;
        mu.compare(a, utilization::fd::phi_wrt_capacity(&market, &m, H)?, REL, FD_ABS_FLOOR);
        signs.flag(a < 0.0);
        let fd_th_mu = utilization::fd::theta_wrt_capacity(&market, &m, H)?;
        for (j, &fd) in fd_th_mu.iter().enumerate() {
            th_mu.compare(d_theta_d(&st, &market, ThetaSensitivity::Capacity { cp: j })?, fd, REL, FD_ABS_FLOOR);
        }
        for i in 0..n {
            let (fphi, fth) = utilization::fd::wrt_population(&market, &m, i, H * m[i])?;
            let a = d_phi_d_m(&st, &market, i)?;
            dm.compare(a, fphi, REL, FD_ABS_FLOOR);
            signs.flag(a > 0.0);
            for (j, &fd) in fth.iter().enumerate() {
                th_m.compare(d_theta_d(&st, &market, ThetaSensitivity::Population { cp: j, of: i })?, fd, REL, FD_ABS_FLOOR);
            }
        }
        let pe = price_effect(&market, p)?;
        let (fphi, fth_i, fth) = utilization::fd::wrt_price(&market, p, H)?;
        dp.compare(pe.d_phi_dp, fphi, REL, FD_ABS_FLOOR);
        dp.compare(pe.d_theta_dp, fth, REL, FD_ABS_FLOOR);
        for ((&a, &fd), &rises) in pe.d_theta_i_dp.iter().zip(&fth_i).zip(&pe.rises) {
            dp.compare(a, fd, REL, FD_ABS_FLOOR);
            if fd.abs() > FD_ABS_FLOOR {
                flags.flag(rises == (fd > 0.0));
            }
        }
        signs.flag(pe.d_phi_dp <= 0.0 && pe.d_theta_dp <= 0.0);
    }

    let mut mu_game = Tally::new("marginal utility against FD of U_i (h = 1e-6)");
    let mut jac = Tally::new("marginal-utility Jacobian against FD");
    for _ in 0..40 {
        let n = rng.gen_range(1..=4);
        let market = random_market(rng, n);
        let p = rng.gen_range(0.2..1.5);
        let q = rng.gen_range(0.2..1.5);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..q)).collect();
        let pr = StrategyProfile::evaluate(&market, p, q, &s)?;
        let h = 1e-6;
        for i in 0..n {
            let mut up = s.clone();
            let mut dn = s.clone();
            up[i] += h;
            dn[i] -= h;
            let (uu, ud) = (utility_unchecked(&market, p, &up, i)?, utility_unchecked(&market, p, &dn, i)?);
            mu_game.compare(pr.marginal_utilities[i], (uu - ud) / (2.0 * h), 1e-6, 1e-9);
        }
        let ja = marginal_jacobian(&market, &pr)?;
        let jf = marginal_jacobian_fd(&market, p, &s, 1e-5)?;
        for (a, b) in ja.iter().zip(jf.iter()) {
            jac.compare(*a, *b, 1e-5, 1e-7);
        }
    }
    Ok(vec![
        mu.finish(),
        dm.finish(),
        th_mu.finish(),
        th_m.finish(),
        dp.finish(),
        signs.finish(),
        flags.finish(),
        mu_game.finish(),
        jac.finish(),
    ])
}

fn utility_unchecked(market: &Market, p: f64, s: &[f64], i: usize) -> Result<f64> {
    Ok(crate::game::respond(market, p, s, None)?.utilities[i])
}

/// `(market, p, q)` fixtures with two and three providers for the grid oracle.
pub fn oracle_fixtures<R: Rng>(rng: &mut R) -> Vec<(Market, f64, f64)> {
    let fixed = Market::linear(
        1.0,
        vec![
            ContentProvider::exponential("a", 2.0, 2.0, 0.5).expect("valid"),
            ContentProvider::exponential("b", 5.0, 2.0, 1.0).expect("valid"),
        ],
    )
    .expect("valid");
    let mut out = vec![(fixed, 0.5, 2.0)];
    for n in [2, 2, 2, 2, 3, 3] {
        let cps = (0..n)
            .map(|k| {
                ContentProvider::exponential(
                    format!("cp{k}"),
                    rng.gen_range(1.0..5.0),
                    rng.gen_range(1.0..5.0),
                    rng.gen_range(0.3..1.2),
                )
                .expect("valid")
            })
            .collect();
        let market = Market::linear(1.0, cps).expect("valid");
        out.push((market, rng.gen_range(0.3..1.5), rng.gen_range(0.5..2.0)));
    }
    out
}

fn nash_oracle(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut gap_t = Tally::new("max coordinate gap to the grid oracle");
    let mut kkt = Tally::new("KKT residual at converged equilibria");
    let mut tau = Tally::new("|s_i - min(tau_i, q)|");
    let mut conv = Tally::new("equilibrium converged and oracle settled");
    for (market, p, q) in oracle_fixtures(rng) {
        let (pr, cert) = solve_nash(&market, p, q, &NashOptions::default())?;
        let reference = oracle::grid_nash(&market, p, q, 1e-3);
        conv.flag(cert.converged && reference.is_some());
        if let Some(reference) = reference {
            for (a, b) in pr.subsidies.iter().zip(&reference) {
                gap_t.residual((a - b).abs(), 2e-3);
            }
        }
        if cert.converged {
            kkt.residual(cert.max_kkt_residual(), 1e-8);
            tau.residual(cert.max_tau_residual(), 1e-6);
        }
    }
    Ok(vec![gap_t.finish(), kkt.finish(), tau.finish(), conv.finish()])
}

/// Probe points for the sensitivity suite.
pub const SENSITIVITY_PRICES: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];
pub const SENSITIVITY_CAPS: [f64; 2] = [0.5, 1.0];

fn sensitivity_suite(scenario: &Scenario) -> Result<Vec<Check>> {
    let market = &scenario.market;
    let opts = NashOptions {
        concavity_check: false,
        ..Default::default()
    };
    let mut regular = Tally::new("regular probe points (partition stable within h)");
    let mut psi = Tally::new("|Psi * J - I|");
    let mut ds = Tally::new("ds/dq and ds/dp against equilibrium re-solves");
    let mut cases = Tally::new("ds/dq is exactly 0 on n_minus and 1 on n_plus");
    let mut mr = Tally::new("dR/dp against FD of R");
    let mut pol = Tally::new("dphi/dq, dtheta_i/dq, dW/dq against re-solves");
    let mut welfare = Tally::new("welfare-condition sign against FD sign of dW/dq");
    let mut n_regular = 0;
    for &q in &SENSITIVITY_CAPS {
        for &p in &SENSITIVITY_PRICES {
            let (pr, _) = solve_nash(market, p, q, &opts)?;
            let part = classify(&pr, DEFAULT_BINDING_TOL);
            let mut stable = part.is_regular();
            for (pp, qq) in [(p - FD_STEP, q), (p + FD_STEP, q), (p, q - FD_STEP), (p, q + FD_STEP)] {
                let (other, _) = solve_nash(market, pp, qq, &opts)?;
                stable &= classify(&other, DEFAULT_BINDING_TOL).same_sets(&part);
            }
            if !stable {
                continue;
            }
            n_regular += 1;
            let dy = equilibrium_dynamics(market, &pr, &part)?;
            psi.residual(dy.psi_residual, 1e-8);
            for &i in &part.n_minus {
                cases.flag(dy.ds_dq[i] == 0.0 && dy.ds_dp[i] == 0.0);
            }
            for &i in &part.n_plus {
                cases.flag(dy.ds_dq[i] == 1.0 && dy.ds_dp[i] == 0.0);
            }
            let fq = sensitivity::fd::subsidies_wrt_cap(market, p, q, FD_STEP)?;
            let fp = sensitivity::fd::subsidies_wrt_price(market, p, q, FD_STEP)?;
            for i in 0..pr.len() {
                ds.compare(dy.ds_dq[i], fq[i], 1e-3, FD_ABS_FLOOR);
                ds.compare(dy.ds_dp[i], fp[i], 1e-3, FD_ABS_FLOOR);
            }
            let m = marginal_revenue_at(market, &pr, &part)?;
            mr.compare(m.dr_dp, sensitivity::fd::revenue_wrt_price(market, p, q, FD_STEP)?, 1e-3, FD_ABS_FLOOR);
            let eff = policy_effect(market, &FixedPrice(p), q)?;
            let (fphi, fth, fw) = sensitivity::fd::policy(market, &FixedPrice(p), q, FD_STEP)?;
            pol.compare(eff.dphi_dq, fphi, 1e-3, FD_ABS_FLOOR);
            pol.compare(eff.welfare.dw_dq, fw, 1e-3, FD_ABS_FLOOR);
            for (&a, &fd) in eff.dtheta_i_dq.iter().zip(&fth) {
                pol.compare(a, fd, 1e-3, FD_ABS_FLOOR);
            }
            if fw.abs() > FD_ABS_FLOOR {
                welfare.flag(eff.welfare.sign == if fw > 0.0 { 1 } else { -1 });
            }
        }
    }
    regular.flag(n_regular > 0);
    Ok(vec![
        regular.finish(),
        psi.finish(),
        cases.finish(),
        ds.finish(),
        mr.finish(),
        pol.finish(),
        welfare.finish(),
    ])
}

pub const PROFIT_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEREGULATION_PRICES: [f64; 3] = [0.5, 1.0, 1.5];

fn monotonicity(scenario: &Scenario) -> Result<Vec<Check>> {
    let market = &scenario.market;
    let q_levels: Vec<f64> = if scenario.q_levels.len() > 1 {
        scenario.q_levels.clone()
    } else {
        DEFAULT_Q_LEVELS.to_vec()
    };
    let q_max = *q_levels.last().expect("non-empty");
    let mut profit = Tally::new(format!("s_i non-decreasing in v_i at p = 1, q = {q_max}"));
    for i in 0..market.len() {
        let curve = profitability_monotonicity(market, 1.0, q_max, i, &PROFIT_GRID)?;
        let drop = curve
            .subsidy
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0f64, f64::max);
        profit.residual(drop, 1e-8);
    }
    let mut checks = vec![profit.finish()];
    for p in DEREGULATION_PRICES {
        let r = check_deregulation_monotonicity(market, p, &q_levels)?;
        let mut t = Tally::new(format!("phi, R and W non-decreasing in q at p = {p}"));
        for series in [&r.phi, &r.revenue, &r.welfare] {
            let drop = series.windows(2).map(|w| w[0] - w[1]).fold(0.0f64, f64::max);
            t.residual(drop, 1e-8);
        }
        checks.push(t.finish());
    }
    Ok(checks)
}
