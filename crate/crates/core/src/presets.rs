//! Ready-made market scenarios used by the CLI's `reproduce` command and the
//! test suites. Capacities are placeholders; solvers and sweeps override them.

use crate::model::{
    CustomerClass, DemandSpec, LatencySpec, MarketConfig, ServiceProvider, UnlicensedBand,
};

/// Names accepted by `reproduce`.
pub const PRESET_NAMES: [&str; 4] = ["b1-w1", "b1-w2", "b2-symmetric", "b3-heterogeneous"];

/// Single incumbent with `l(x) = x`, one entrant, homogeneous box demand of
/// unit mass and valuation `w`, shared band `g(x) = x / C`.
pub fn b1_market(w: f64) -> MarketConfig {
    MarketConfig {
        providers: vec![
            ServiceProvider::incumbent("sp1", LatencySpec::linear(0.0, 1.0)),
            ServiceProvider::entrant("e1"),
        ],
        unlicensed: UnlicensedBand::new(1.0, LatencySpec::linear(0.0, 1.0)),
        classes: vec![CustomerClass {
            weight: 1.0,
            demand: DemandSpec::Box {
                valuation: w,
                mass: 1.0,
            },
        }],
    }
}

/// `n` identical incumbents with `l(x) = x`, one entrant, linear inverse
/// demand `P(q) = 1 - beta * q`, shared band `g(x) = x / C`.
pub fn b2_symmetric_market(n: usize, beta: f64) -> MarketConfig {
    let mut providers: Vec<ServiceProvider> = (0..n)
        .map(|i| ServiceProvider::incumbent(&format!("sp{}", i + 1), LatencySpec::linear(0.0, 1.0)))
        .collect();
    providers.push(ServiceProvider::entrant("e1"));
    MarketConfig {
        providers,
        unlicensed: UnlicensedBand::new(1.0, LatencySpec::linear(0.0, 1.0)),
        classes: vec![CustomerClass {
            weight: 1.0,
            demand: DemandSpec::Linear {
                intercept: 1.0,
                elasticity: beta,
            },
        }],
    }
}

/// Heterogeneous scenario: high class (weight 0.4, valuation 1.6, mass 1),
/// low class (weight 0.1, valuation 0.85, mass 1.3), `l(x) = x`,
/// `g(x) = x / C`.
pub fn b3_market() -> MarketConfig {
    MarketConfig {
        providers: vec![
            ServiceProvider::incumbent("sp1", LatencySpec::linear(0.0, 1.0)),
            ServiceProvider::entrant("e1"),
        ],
        unlicensed: UnlicensedBand::new(1.0, LatencySpec::linear(0.0, 1.0)),
        classes: vec![
            CustomerClass {
                weight: 0.4,
                demand: DemandSpec::Box {
                    valuation: 1.6,
                    mass: 1.0,
                },
            },
            CustomerClass {
                weight: 0.1,
                demand: DemandSpec::Box {
                    valuation: 0.85,
                    mass: 1.3,
                },
            },
        ],
    }
}

/// Market for a preset name, using the scenario's canonical parameters.
pub fn by_name(name: &str) -> Option<MarketConfig> {
    match name {
        "b1-w1" => Some(b1_market(1.0)),
        "b1-w2" => Some(b1_market(2.0)),
        "b2-symmetric" => Some(b2_symmetric_market(2, 4.0)),
        "b3-heterogeneous" => Some(b3_market()),
        _ => None,
    }
}
