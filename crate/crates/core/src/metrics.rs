//! Welfare, surplus, and revenue functionals over allocations.
//!
//! Social welfare is gross consumption value minus total weighted congestion
//! cost; consumer surplus integrates inverse demand above the delivered
//! price. All integrals are evaluated in closed form per demand kind.

use serde::{Deserialize, Serialize};

use crate::model::MarketConfig;
use crate::wardrop::{Allocation, DeliveredPrices, PriceProfile};

/// Welfare decomposition of one market outcome. `social_welfare` equals
/// `consumer_surplus + sum(revenues)` whenever served customers pay the
/// announced prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub social_welfare: f64,
    pub consumer_surplus: f64,
    /// Revenue per provider, in market order.
    pub revenues: Vec<f64>,
    pub total_congestion_cost: f64,
}

impl WelfareReport {
    pub fn total_revenue(&self) -> f64 {
        self.revenues.iter().sum()
    }

    pub fn compute(
        market: &MarketConfig,
        prices: &PriceProfile,
        allocation: &Allocation,
        delivered: &DeliveredPrices,
    ) -> Self {
        WelfareReport {
            social_welfare: social_welfare(market, allocation),
            consumer_surplus: consumer_surplus(market, allocation, delivered),
            revenues: revenues(market, prices, allocation),
            total_congestion_cost: total_congestion_cost(market, allocation),
        }
    }
}

/// Weighted congestion cost summed over every served customer.
pub fn total_congestion_cost(market: &MarketConfig, allocation: &Allocation) -> f64 {
    let mut cost = 0.0;
    for (i, sp) in market.providers.iter().enumerate() {
        if let Some(lat) = sp.licensed_latency_spec() {
            let load = allocation.licensed_load(i);
            if load > 0.0 {
                let per_customer = lat.eval(load);
                for (t, class) in market.classes.iter().enumerate() {
                    cost += class.weight * allocation.licensed[i][t] * per_customer;
                }
            }
        }
    }
    let x_w = allocation.unlicensed_total();
    if x_w > 0.0 {
        let g = market
            .unlicensed
            .effective_latency()
            .map(|l| l.eval(x_w))
            .unwrap_or(f64::INFINITY);
        for (t, class) in market.classes.iter().enumerate() {
            cost += class.weight * allocation.unlicensed_class_total(t) * g;
        }
    }
    cost
}

/// Gross consumption value of the served mass minus total congestion cost.
pub fn social_welfare(market: &MarketConfig, allocation: &Allocation) -> f64 {
    let gross: f64 = market
        .classes
        .iter()
        .enumerate()
        .map(|(t, class)| class.demand.gross_value(allocation.served(t)))
        .sum();
    gross - total_congestion_cost(market, allocation)
}

/// Integral of inverse demand above the delivered price over the served mass.
pub fn consumer_surplus(
    market: &MarketConfig,
    allocation: &Allocation,
    delivered: &DeliveredPrices,
) -> f64 {
    let mut cs = 0.0;
    for (t, class) in market.classes.iter().enumerate() {
        let q = allocation.served(t);
        if q <= 0.0 {
            continue;
        }
        cs += class.demand.gross_value(q) - delivered.per_class[t] * q;
    }
    cs
}

/// Per-provider revenue `p_i * x_i + p_i^w * x_i^w`, in market order.
pub fn revenues(market: &MarketConfig, prices: &PriceProfile, allocation: &Allocation) -> Vec<f64> {
    market
        .providers
        .iter()
        .enumerate()
        .map(|(i, sp)| {
            let mut rev = 0.0;
            if sp.is_incumbent() {
                if let Some(p) = prices.licensed_price(&sp.id) {
                    rev += p * allocation.provider_licensed(i);
                }
            }
            if let Some(&pw) = prices.unlicensed.get(&sp.id) {
                rev += pw * allocation.provider_unlicensed(i);
            }
            rev
        })
        .collect()
}
