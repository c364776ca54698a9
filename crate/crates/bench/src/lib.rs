//! Benchmark fixtures shared by the criterion targets in `benches/`.

use actugen::claims_sim::{builtin_scenario, simulate_dataset};
use actugen::portfolio::surrogate_portfolio;
use actugen::{Dataset, ScenarioKind};

/// A surrogate portfolio of `n` rows with linear-scenario claim counts.
pub fn simulated_portfolio(n: usize, seed: u64) -> Dataset {
    let base = surrogate_portfolio(n, seed);
    simulate_dataset(&base, &builtin_scenario(ScenarioKind::Linear), seed)
        .expect("built-in scenario matches the portfolio schema")
        .0
}
