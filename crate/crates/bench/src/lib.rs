//! Fixtures shared by the benchmarks.

use subsidy_core::harness::{builtin, Scenario};
use subsidy_core::{ContentProvider, Market};

/// Exponential providers on a deterministic `α, β ∈ {1, …, 5}` lattice.
pub fn lattice_market(n: usize) -> Market {
    let cps = (0..n)
        .map(|k| {
            let alpha = 1.0 + (k % 5) as f64;
            let beta = 1.0 + ((k / 5) % 5) as f64;
            let v = if k % 2 == 0 { 0.5 } else { 1.0 };
            ContentProvider::exponential(format!("cp{k}"), alpha, beta, v).expect("positive rates")
        })
        .collect();
    Market::linear(1.0, cps).expect("positive capacity")
}

/// The eight-provider game scenario on a coarse grid.
pub fn coarse_game_scenario(points: usize) -> Scenario {
    let mut s = builtin("fig5-8cp").expect("built-in scenario");
    s.p_grid = subsidy_core::harness::linspace(0.0, 2.0, points);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        assert_eq!(lattice_market(12).len(), 12);
        let s = coarse_game_scenario(5);
        assert_eq!(s.p_grid.len(), 5);
        assert_eq!(s.market.len(), 8);
    }
}
