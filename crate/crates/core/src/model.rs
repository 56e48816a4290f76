//! Market primitives: demand and throughput curves, content providers, the
//! utilization family and elasticities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;

/// Relative step of the central differences used for tabulated curves.
pub const FD_REL_STEP: f64 = 1e-6;

fn fd_step(x: f64) -> f64 {
    FD_REL_STEP * x.abs().max(1.0)
}

/// Positive curve given by samples, interpolated monotonically in log space.
///
/// Working on `ln y` keeps every interpolated and extrapolated value strictly
/// positive; past the sample range the curve decays (or grows) exponentially
/// with the end slope of `ln y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabulatedSamples", into = "TabulatedSamples")]
pub struct TabulatedCurve {
    ys: Vec<f64>,
    log_curve: MonotoneCubic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TabulatedSamples {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TryFrom<TabulatedSamples> for TabulatedCurve {
    type Error = Error;

    fn try_from(s: TabulatedSamples) -> Result<Self> {
        TabulatedCurve::new(s.x, s.y)
    }
}

impl From<TabulatedCurve> for TabulatedSamples {
    fn from(c: TabulatedCurve) -> Self {
        TabulatedSamples {
            x: c.log_curve.xs().to_vec(),
            y: c.ys,
        }
    }
}

impl TabulatedCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if ys.iter().any(|&y| !(y > 0.0) || !y.is_finite()) {
            return Err(Error::InvalidModel(
                "tabulated samples must be finite and strictly positive".into(),
            ));
        }
        let logs = ys.iter().map(|y| y.ln()).collect();
        let log_curve = MonotoneCubic::new(xs, logs).ok_or_else(|| {
            Error::InvalidModel(
                "tabulated curve needs at least two samples on a strictly increasing grid".into(),
            )
        })?;
        Ok(Self { ys, log_curve })
    }

    pub fn xs(&self) -> &[f64] {
        self.log_curve.xs()
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.log_curve.eval(x).exp()
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            ys: self.ys.iter().map(|y| y * factor).collect(),
            log_curve: self.log_curve.shifted(factor.ln()),
        }
    }
}

/// A strictly positive, monotone scalar curve used for demand `m(t)` and
/// per-user throughput `λ(φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionFamily {
    /// `scale · exp(-rate · x)`.
    Exponential {
        rate: f64,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    Tabulated(TabulatedCurve),
}

fn unit_scale() -> f64 {
    1.0
}

impl FunctionFamily {
    pub fn exponential(rate: f64) -> Self {
        FunctionFamily::Exponential { rate, scale: 1.0 }
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Ok(FunctionFamily::Tabulated(TabulatedCurve::new(xs, ys)?))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            FunctionFamily::Exponential { rate, scale } => scale * (-rate * x).exp(),
            FunctionFamily::Tabulated(c) => c.eval(x),
        }
    }

    /// First derivative: analytic for exponentials, central difference with
    /// step `1e-6 · max(1, |x|)` for tabulated curves.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            FunctionFamily::Exponential { rate, .. } => -rate * self.value(x),
            FunctionFamily::Tabulated(c) => {
                let h = fd_step(x);
                (c.eval(x + h) - c.eval(x - h)) / (2.0 * h)
            }
        }
    }

    /// `(f(x), f'(x))` with a single evaluation of the exponential.
    pub fn value_and_derivative(&self, x: f64) -> (f64, f64) {
        match self {
            FunctionFamily::Exponential { rate, scale } => {
                let v = scale * (-rate * x).exp();
                (v, -rate * v)
            }
            FunctionFamily::Tabulated(_) => (self.value(x), self.derivative(x)),
        }
    }

    /// Second derivative where it is known in closed form.
    pub fn second_derivative(&self, x: f64) -> Option<f64> {
        match self {
            FunctionFamily::Exponential { rate, .. } => Some(rate * rate * self.value(x)),
            FunctionFamily::Tabulated(_) => None,
        }
    }

    /// `f'(x)·x/f(x)`, zero at `x = 0`.
    pub fn elasticity(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        self.derivative(x) * x / self.value(x)
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            FunctionFamily::Exponential { rate, .. } => Some(*rate),
            FunctionFamily::Tabulated(_) => None,
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, FunctionFamily::Exponential { .. })
    }

    /// The same curve multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            FunctionFamily::Exponential { rate, scale } => FunctionFamily::Exponential {
                rate: *rate,
                scale: scale * factor,
            },
            FunctionFamily::Tabulated(c) => FunctionFamily::Tabulated(c.scaled(factor)),
        }
    }

    fn validate(&self, what: &str, strictly_decreasing: bool) -> Result<()> {
        match self {
            FunctionFamily::Exponential { rate, scale } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidModel(format!("{what}: rate must be > 0, got {rate}")));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidModel(format!("{what}: scale must be > 0, got {scale}")));
                }
            }
            FunctionFamily::Tabulated(c) => {
                let ys = c.ys();
                let bad = if strictly_decreasing {
                    ys.windows(2).any(|w| w[1] >= w[0])
                } else {
                    ys.windows(2).any(|w| w[1] > w[0])
                };
                if bad {
                    return Err(Error::InvalidModel(format!(
                        "{what}: tabulated samples must be {}",
                        if strictly_decreasing { "strictly decreasing" } else { "non-increasing" }
                    )));
                }
                if strictly_decreasing && !(c.log_curve.right_slope() < 0.0) {
                    return Err(Error::InvalidModel(format!("{what}: tail must decay to zero")));
                }
            }
        }
        Ok(())
    }
}

/// A content provider: user demand `m(t)`, per-user throughput `λ(φ)` and
/// profit per unit of traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentProvider {
    pub id: String,
    pub unit_profit: f64,
    pub demand: FunctionFamily,
    pub throughput: FunctionFamily,
}

impl ContentProvider {
    pub fn new(
        id: impl Into<String>,
        unit_profit: f64,
        demand: FunctionFamily,
        throughput: FunctionFamily,
    ) -> Result<Self> {
        let cp = Self {
            id: id.into(),
            unit_profit,
            demand,
            throughput,
        };
        cp.validate()?;
        Ok(cp)
    }

    /// `m(t) = exp(-alpha·t)`, `λ(φ) = exp(-beta·φ)`.
    pub fn exponential(id: impl Into<String>, alpha: f64, beta: f64, unit_profit: f64) -> Result<Self> {
        Self::new(
            id,
            unit_profit,
            FunctionFamily::exponential(alpha),
            FunctionFamily::exponential(beta),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.unit_profit.is_finite() && self.unit_profit >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "{}: unit profit must be finite and >= 0",
                self.id
            )));
        }
        self.demand.validate(&format!("{} demand", self.id), false)?;
        self.throughput.validate(&format!("{} throughput", self.id), true)
    }

    /// Price sensitivity of an exponential demand curve.
    pub fn alpha(&self) -> Option<f64> {
        self.demand.rate()
    }

    /// Congestion sensitivity of an exponential throughput curve.
    pub fn beta(&self) -> Option<f64> {
        self.throughput.rate()
    }
}

/// The map `φ = Φ(θ, μ)` from aggregate throughput to utilization, with its
/// inverse `Θ(φ, μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilizationFamily {
    /// `Φ = θ/μ`.
    #[default]
    Linear,
    /// `Φ = (θ/μ)^exponent`.
    Power { exponent: f64 },
}

impl UtilizationFamily {
    pub fn phi(&self, theta: f64, mu: f64) -> f64 {
        match self {
            UtilizationFamily::Linear => theta / mu,
            UtilizationFamily::Power { exponent } => (theta / mu).powf(*exponent),
        }
    }

    /// `Θ(φ, μ)`.
    pub fn theta(&self, phi: f64, mu: f64) -> f64 {
        match self {
            UtilizationFamily::Linear => phi * mu,
            UtilizationFamily::Power { exponent } => mu * phi.powf(exponent.recip()),
        }
    }

    pub fn theta_dphi(&self, phi: f64, mu: f64) -> f64 {
        match self {
            UtilizationFamily::Linear => mu,
            UtilizationFamily::Power { exponent } => {
                let r = exponent.recip();
                mu * r * phi.powf(r - 1.0)
            }
        }
    }

    pub fn theta_dphi2(&self, phi: f64, mu: f64) -> f64 {
        match self {
            UtilizationFamily::Linear => 0.0,
            UtilizationFamily::Power { exponent } => {
                let r = exponent.recip();
                mu * r * (r - 1.0) * phi.powf(r - 2.0)
            }
        }
    }

    pub fn theta_dmu(&self, phi: f64, _mu: f64) -> f64 {
        match self {
            UtilizationFamily::Linear => phi,
            UtilizationFamily::Power { exponent } => phi.powf(exponent.recip()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            UtilizationFamily::Linear => Ok(()),
            UtilizationFamily::Power { exponent } if exponent.is_finite() && *exponent > 0.0 => Ok(()),
            UtilizationFamily::Power { exponent } => Err(Error::InvalidModel(format!(
                "power utilization exponent must be > 0, got {exponent}"
            ))),
        }
    }
}

/// Access network of capacity `mu` shared by a roster of content providers.
///
/// The roster may be empty at this level (the degenerate zero-load market);
/// scenario validation rejects empty rosters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub capacity: f64,
    #[serde(default)]
    pub utilization: UtilizationFamily,
    pub cps: Vec<ContentProvider>,
}

impl Market {
    pub fn new(capacity: f64, utilization: UtilizationFamily, cps: Vec<ContentProvider>) -> Result<Self> {
        let market = Self {
            capacity,
            utilization,
            cps,
        };
        market.validate()?;
        Ok(market)
    }

    /// Linear utilization `Φ = θ/μ`.
    pub fn linear(capacity: f64, cps: Vec<ContentProvider>) -> Result<Self> {
        Self::new(capacity, UtilizationFamily::Linear, cps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::InvalidModel(format!(
                "capacity must be > 0, got {}",
                self.capacity
            )));
        }
        self.utilization.validate()?;
        self.cps.iter().try_for_each(ContentProvider::validate)
    }

    pub fn len(&self) -> usize {
        self.cps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cps.is_empty()
    }

    /// Populations `m_i(t_i)` at the given effective prices.
    pub fn populations(&self, prices: &[f64]) -> Vec<f64> {
        self.cps
            .iter()
            .zip(prices)
            .map(|(cp, &t)| cp.demand.value(t))
            .collect()
    }

    /// Populations under one-sided pricing, `t_i = p` for every provider.
    pub fn populations_at_price(&self, p: f64) -> Vec<f64> {
        self.cps.iter().map(|cp| cp.demand.value(p)).collect()
    }

    pub fn with_unit_profit(&self, index: usize, unit_profit: f64) -> Result<Self> {
        let mut out = self.clone();
        let len = out.cps.len();
        let cp = out
            .cps
            .get_mut(index)
            .ok_or(Error::IndexOutOfRange { index, len })?;
        cp.unit_profit = unit_profit;
        cp.validate()?;
        Ok(out)
    }

    pub fn with_capacity(&self, capacity: f64) -> Result<Self> {
        let mut out = self.clone();
        out.capacity = capacity;
        out.validate()?;
        Ok(out)
    }
}

/// Dimensionless elasticities of one content provider at a market state.
///
/// The policy entries are zero unless the bundle was computed with a policy
/// derivative in hand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ElasticityBundle {
    pub eps_phi_lambda: f64,
    pub eps_p_m: f64,
    pub eps_s_m: f64,
    pub eps_m_phi: f64,
    pub eps_p_phi: f64,
    pub eps_q_phi: f64,
    pub eps_q_t: f64,
}

/// Population at effective price `t`.
pub fn eval_demand(cp: &ContentProvider, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("effective price must be finite, got {t}")));
    }
    Ok(cp.demand.value(t))
}

/// Per-user throughput at utilization `phi`.
pub fn eval_throughput(cp: &ContentProvider, phi: f64) -> Result<f64> {
    if !(phi >= 0.0) {
        return Err(Error::domain(format!("utilization must be >= 0, got {phi}")));
    }
    Ok(cp.throughput.value(phi))
}

/// Throughput supply `Θ(φ, μ)`.
pub fn eval_theta_supply(market: &Market, phi: f64) -> Result<f64> {
    if !(phi >= 0.0) {
        return Err(Error::domain(format!("utilization must be >= 0, got {phi}")));
    }
    Ok(market.utilization.theta(phi, market.capacity))
}

/// Elasticity `f'(x)·x/f(x)` with the derivative taken by central difference.
pub fn elasticity<F: Fn(f64) -> f64>(f: F, x: f64) -> Result<f64> {
    let h = fd_step(x);
    elasticity_with(&f, |x| (f(x + h) - f(x - h)) / (2.0 * h), x)
}

/// Elasticity with a caller-supplied derivative.
pub fn elasticity_with<F, D>(f: F, df: D, x: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let fx = f(x);
    if fx == 0.0 {
        return Err(Error::UndefinedElasticity { x });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(df(x) * x / fx)
}

/// Merges providers that share the same throughput elasticity into one
/// provider carrying their combined traffic at the evaluation price.
///
/// The merged provider keeps the first provider's curve shapes. Its population
/// at `price` is `m_1(price)/kappa` and its throughput scale is chosen so that
/// `m·λ(0)` equals the group total; the unit profit is the traffic-weighted
/// mean, so welfare is preserved as well.
pub fn aggregate_cps(cps: &[ContentProvider], kappa: f64, price: f64) -> Result<ContentProvider> {
    let first = cps
        .first()
        .ok_or_else(|| Error::AggregationIncompatible("empty group".into()))?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::AggregationIncompatible(format!("kappa must be > 0, got {kappa}")));
    }
    for cp in &cps[1..] {
        if !same_throughput_elasticity(&first.throughput, &cp.throughput) {
            return Err(Error::AggregationIncompatible(format!(
                "{} and {} differ in utilization elasticity of throughput",
                first.id, cp.id
            )));
        }
    }
    let mass: Vec<f64> = cps
        .iter()
        .map(|cp| cp.demand.value(price) * cp.throughput.value(0.0))
        .collect();
    let total: f64 = mass.iter().sum();
    let m_first = first.demand.value(price);
    let lambda_first = first.throughput.value(0.0);
    let unit_profit = if total > 0.0 {
        cps.iter().zip(&mass).map(|(cp, w)| cp.unit_profit * w).sum::<f64>() / total
    } else {
        first.unit_profit
    };
    let ids: Vec<&str> = cps.iter().map(|cp| cp.id.as_str()).collect();
    ContentProvider::new(
        ids.join("+"),
        unit_profit,
        first.demand.scaled(kappa.recip()),
        first.throughput.scaled(kappa * total / (m_first * lambda_first)),
    )
}

fn same_throughput_elasticity(a: &FunctionFamily, b: &FunctionFamily) -> bool {
    if let (Some(ra), Some(rb)) = (a.rate(), b.rate()) {
        return (ra - rb).abs() <= 1e-12 * ra.abs().max(rb.abs());
    }
    (1..=50).all(|k| {
        let phi = 0.1 * k as f64;
        let (ea, eb) = (a.elasticity(phi), b.elasticity(phi));
        (ea - eb).abs() <= 1e-8 * ea.abs().max(1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cp(alpha: f64, beta: f64) -> ContentProvider {
        ContentProvider::exponential("cp", alpha, beta, 1.0).unwrap()
    }

    #[test]
    fn demand_examples() {
        assert_eq!(eval_demand(&cp(1.0, 1.0), 0.0).unwrap(), 1.0);
        assert_relative_eq!(eval_demand(&cp(2.0, 1.0), 1.0).unwrap(), 0.135335283236613, max_relative = 1e-12);
        assert_relative_eq!(eval_demand(&cp(5.0, 1.0), -0.2).unwrap(), std::f64::consts::E, max_relative = 1e-12);
        assert!(matches!(eval_demand(&cp(1.0, 1.0), f64::NAN), Err(Error::Domain(_))));
        assert!(eval_demand(&cp(1.0, 1.0), f64::INFINITY).is_err());
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(eval_throughput(&cp(1.0, 3.0), 0.0).unwrap(), 1.0);
        assert_relative_eq!(eval_throughput(&cp(1.0, 5.0), 0.5).unwrap(), 0.0820849986238988, max_relative = 1e-12);
        assert_relative_eq!(eval_throughput(&cp(1.0, 2.0), 10.0).unwrap(), (-20.0f64).exp(), max_relative = 1e-12);
        assert!(eval_throughput(&cp(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn theta_supply_examples() {
        let m1 = Market::linear(1.0, vec![]).unwrap();
        let m3 = Market::linear(3.0, vec![]).unwrap();
        assert_eq!(eval_theta_supply(&m1, 0.0).unwrap(), 0.0);
        assert_eq!(eval_theta_supply(&m1, 0.4).unwrap(), 0.4);
        assert_eq!(eval_theta_supply(&m3, 0.5).unwrap(), 1.5);
        assert!(eval_theta_supply(&m1, -1.0).is_err());
    }

    #[test]
    fn elasticity_examples() {
        let m = FunctionFamily::exponential(2.0);
        assert_relative_eq!(m.elasticity(1.0), -2.0, max_relative = 1e-12);
        let via_handle = elasticity_with(|t| m.value(t), |t| m.derivative(t), 1.0).unwrap();
        assert_relative_eq!(via_handle, -2.0, max_relative = 1e-12);
        let l = FunctionFamily::exponential(3.0);
        assert_eq!(l.elasticity(0.0), 0.0);
        assert_eq!(elasticity(|x| l.value(x), 0.0).unwrap(), 0.0);
        assert!(matches!(elasticity(|_| 0.0, 1.0), Err(Error::UndefinedElasticity { .. })));
    }

    #[test]
    fn tabulated_elasticity_matches_central_difference() {
        let fam = FunctionFamily::tabulated(
            vec![0.0, 0.5, 1.0, 2.0, 4.0],
            vec![1.0, 0.7, 0.45, 0.2, 0.03],
        )
        .unwrap();
        for x in [0.1, 0.7, 1.3, 2.5, 3.9] {
            let h = 1e-6 * f64::max(1.0, x);
            let oracle = (fam.value(x + h) - fam.value(x - h)) / (2.0 * h) * x / fam.value(x);
            let got = elasticity(|y| fam.value(y), x).unwrap();
            assert_relative_eq!(got, oracle, max_relative = 1e-6);
            assert_relative_eq!(fam.elasticity(x), oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn tabulated_validation() {
        let rising = FunctionFamily::tabulated(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(ContentProvider::new("x", 1.0, rising.clone(), FunctionFamily::exponential(1.0)).is_err());
        assert!(ContentProvider::new("x", 1.0, FunctionFamily::exponential(1.0), rising).is_err());
        let flat = FunctionFamily::tabulated(vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(ContentProvider::new("x", 1.0, flat.clone(), FunctionFamily::exponential(1.0)).is_ok());
        assert!(ContentProvider::new("x", 1.0, FunctionFamily::exponential(1.0), flat).is_err());
        assert!(FunctionFamily::tabulated(vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(ContentProvider::exponential("x", 0.0, 1.0, 1.0).is_err());
        assert!(ContentProvider::exponential("x", 1.0, -1.0, 1.0).is_err());
        assert!(ContentProvider::exponential("x", 1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn tabulated_serde_round_trip() {
        let fam = FunctionFamily::tabulated(vec![0.0, 1.0, 3.0], vec![2.0, 1.0, 0.25]).unwrap();
        let json = serde_json::to_string(&fam).unwrap();
        assert!(json.contains("\"kind\":\"tabulated\""));
        let back: FunctionFamily = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fam);
        let bad = r#"{"kind":"tabulated","x":[0,0],"y":[1,1]}"#;
        assert!(serde_json::from_str::<FunctionFamily>(bad).is_err());
    }

    #[test]
    fn theta_inverts_phi() {
        for fam in [UtilizationFamily::Linear, UtilizationFamily::Power { exponent: 2.0 }, UtilizationFamily::Power { exponent: 0.5 }] {
            for mu in [0.5, 1.0, 3.0] {
                for k in 0..=100 {
                    let theta = 10.0 * mu * k as f64 / 100.0;
                    let back = fam.theta(fam.phi(theta, mu), mu);
                    assert!((back - theta).abs() < 1e-12 * theta.max(1.0), "{fam:?} {mu} {theta}");
                }
            }
        }
        assert!(UtilizationFamily::Power { exponent: 0.0 }.validate().is_err());
        assert!(Market::linear(0.0, vec![]).is_err());
    }

    #[test]
    fn aggregation_rejects_mismatched_beta() {
        let err = aggregate_cps(&[cp(1.0, 1.0), cp(1.0, 2.0)], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::AggregationIncompatible(_)));
        assert!(aggregate_cps(&[], 1.0, 1.0).is_err());
        assert!(aggregate_cps(&[cp(1.0, 1.0)], 0.0, 1.0).is_err());
    }

    #[test]
    fn aggregation_of_two_identical_doubles_peak_throughput() {
        let agg = aggregate_cps(&[cp(1.0, 1.0), cp(1.0, 1.0)], 1.0, 1.0).unwrap();
        assert_relative_eq!(agg.throughput.value(0.0), 2.0, max_relative = 1e-15);
        assert_relative_eq!(agg.demand.value(1.0), (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn kappa_scaling_trades_population_for_peak_throughput() {
        let agg = aggregate_cps(&[cp(1.0, 1.0)], 2.0, 1.0).unwrap();
        assert_relative_eq!(agg.demand.value(1.0), 0.5 * (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(agg.throughput.value(0.0), 2.0, max_relative = 1e-15);
    }
}
