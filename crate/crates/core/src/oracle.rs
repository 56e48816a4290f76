//! Slow reference computations that share no code with the solvers: plain
//! bisection for the utilization and exhaustive grid search for best
//! responses. Used by the verification suites and the tests.

use crate::model::Market;

/// Utilization by bisection on the throughput gap.
pub fn bisect_utilization(market: &Market, populations: &[f64]) -> f64 {
    let gap = |phi: f64| {
        let demand: f64 = market
            .cps
            .iter()
            .zip(populations)
            .map(|(cp, m)| m * cp.throughput.value(phi))
            .sum();
        market.utilization.theta(phi, market.capacity) - demand
    };
    if populations.iter().all(|&m| m == 0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while gap(hi) <= 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::NAN;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `U_i` evaluated through [`bisect_utilization`].
pub fn utility(market: &Market, p: f64, s: &[f64], i: usize) -> f64 {
    let m: Vec<f64> = market
        .cps
        .iter()
        .zip(s)
        .map(|(cp, si)| cp.demand.value(p - si))
        .collect();
    let phi = bisect_utilization(market, &m);
    let cp = &market.cps[i];
    (cp.unit_profit - s[i]) * m[i] * cp.throughput.value(phi)
}

/// Best response by scanning `[0, q]` with spacing `step`, then a golden
/// section inside the winning cell.
pub fn grid_best_response(market: &Market, p: f64, q: f64, s: &[f64], i: usize, step: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let mut trial = s.to_vec();
    let mut u = |x: f64| {
        trial[i] = x;
        utility(market, p, &trial, i)
    };
    let cells = (q / step).ceil() as usize;
    let mut best = (0.0, u(0.0));
    for k in 1..=cells {
        let x = (k as f64 * step).min(q);
        let val = u(x);
        if val > best.1 {
            best = (x, val);
        }
    }
    let mut lo = (best.0 - step).max(0.0);
    let mut hi = (best.0 + step).min(q);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if u(x1) >= u(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let x = 0.5 * (lo + hi);
    let val = u(x);
    if val > best.1 {
        x
    } else {
        best.0
    }
}

/// Nash equilibrium by sequential grid best responses from `s = 0`. Returns
/// `None` if the iteration does not settle.
pub fn grid_nash(market: &Market, p: f64, q: f64, step: f64) -> Option<Vec<f64>> {
    let n = market.len();
    let mut s = vec![0.0; n];
    for sweep in 0..1000 {
        let weight = if sweep < 100 { 1.0 } else { 0.5 };
        let mut change: f64 = 0.0;
        for i in 0..n {
            let br = grid_best_response(market, p, q, &s, i, step);
            let next = (1.0 - weight) * s[i] + weight * br;
            change = change.max((next - s[i]).abs());
            s[i] = next;
        }
        if change < 1e-9 {
            return Some(s);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContentProvider;

    #[test]
    fn single_provider_root() {
        let market = Market::linear(1.0, vec![ContentProvider::exponential("a", 1.0, 1.0, 0.0).unwrap()]).unwrap();
        let m = market.populations_at_price(1.0);
        let phi = bisect_utilization(&market, &m);
        assert!((phi - (-(1.0 + phi)).exp()).abs() < 1e-14);
    }

    #[test]
    fn grid_response_is_interior_for_profitable_provider() {
        let market = Market::linear(1.0, vec![ContentProvider::exponential("a", 5.0, 2.0, 1.0).unwrap()]).unwrap();
        let s = grid_best_response(&market, 1.0, 1.0, &[0.0], 0, 1e-3);
        assert!(s > 0.0 && s < 1.0);
    }
}
