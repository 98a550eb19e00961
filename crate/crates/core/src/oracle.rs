//! Brute-force reference implementations used to validate the analytic
//! solvers and to certify equilibria.
//!
//! The discretized allocator never touches the pattern solver: it moves mass
//! quanta toward cheaper options until no improving move exists, each move
//! strictly decreasing a convex potential, so it terminates at a quantized
//! equal-delivered-price point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::EquilibriumResult;
use crate::metrics::revenues;
use crate::model::{DemandSpec, LatencySpec, MarketConfig};
use crate::wardrop::{allocate, build_options, distribute, Allocation, PriceProfile, WardropError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub refinement_passes: usize,
}

impl GridSpec {
    pub fn new(
        lo: f64,
        hi: f64,
        points: usize,
        refinement_passes: usize,
    ) -> Result<Self, OracleError> {
        if lo >= hi {
            return Err(OracleError::BadGrid(format!(
                "lo {lo} must be below hi {hi}"
            )));
        }
        if points < 2 {
            return Err(OracleError::BadGrid(format!(
                "need at least 2 points, got {points}"
            )));
        }
        Ok(Self {
            lo,
            hi,
            points,
            refinement_passes,
        })
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Wardrop(#[from] WardropError),
}

/// Exhaustive scan of a one-dimensional objective over a grid, refined around
/// the argmax; ties break toward the lowest argument.
fn scan(objective: &dyn Fn(f64) -> f64, grid: &GridSpec) -> (f64, f64) {
    let mut lo = grid.lo;
    let mut hi = grid.hi;
    let mut best = (grid.lo, f64::NEG_INFINITY);
    for _ in 0..=grid.refinement_passes {
        let step = (hi - lo) / (grid.points - 1) as f64;
        let mut best_i = 0;
        for i in 0..grid.points {
            let p = lo + step * i as f64;
            let v = objective(p);
            if v > best.1 + 1e-15 {
                best = (p, v);
                best_i = i;
            }
        }
        let new_lo = lo + step * best_i.saturating_sub(1) as f64;
        hi = (lo + step * (best_i + 1) as f64).min(hi);
        lo = new_lo;
    }
    best
}

/// Brute-force best response: evaluate the optimizing incumbent's revenue at
/// every grid price and refine around the argmax. The optimizer is the first
/// incumbent without a licensed price in `rival_prices`.
pub fn grid_best_response(
    market: &MarketConfig,
    capacity: f64,
    rival_prices: &PriceProfile,
    grid: &GridSpec,
) -> Result<(f64, f64), OracleError> {
    let market = market.with_capacity(capacity);
    let inc = market
        .providers
        .iter()
        .enumerate()
        .find(|(_, p)| p.is_incumbent() && !rival_prices.licensed.contains_key(&p.id))
        .map(|(i, _)| i)
        .ok_or_else(|| OracleError::BadGrid("no free incumbent to optimize".into()))?;
    let own_id = market.providers[inc].id.clone();
    let mut base = rival_prices.clone();
    for p in &market.providers {
        base.unlicensed.entry(p.id.clone()).or_insert(0.0);
    }
    let objective = |p: f64| -> f64 {
        let mut prices = base.clone();
        prices.licensed.insert(own_id.clone(), p);
        match allocate(&market, &prices) {
            Ok(alloc) => revenues(&market, &prices, &alloc)[inc],
            Err(_) => f64::NEG_INFINITY,
        }
    };
    Ok(scan(&objective, grid))
}

// ---------------------------------------------------------------------------
// Discretized allocation by greedy potential descent.
// ---------------------------------------------------------------------------

/// Quantized demand allocation: each class's mass is cut into `mesh` quanta
/// which greedily move to strictly cheaper options until no single move
/// improves. Independent of the analytic allocation path.
pub fn discretized_wardrop(
    market: &MarketConfig,
    prices: &PriceProfile,
    mesh: usize,
) -> Result<Allocation, WardropError> {
    let options = build_options(market, prices)?;
    let n_opts = options.len();
    let n_classes = market.class_count();
    let quanta: Vec<f64> = market
        .classes
        .iter()
        .map(|c| c.demand.mass_bound() / mesh as f64)
        .collect();

    // counts[class][option]; the remainder of each class is unserved.
    let mut counts = vec![vec![0usize; n_opts]; n_classes];
    let mut unserved = vec![mesh; n_classes];

    let latency_integral = |lat: &LatencySpec, x: f64| -> f64 {
        lat.offset * x + lat.slope * x.powf(lat.exponent + 1.0) / (lat.exponent + 1.0)
    };
    let demand_integral = |demand: &DemandSpec, q: f64| -> f64 { demand.gross_value(q) };

    let option_load = |counts: &[Vec<usize>], o: usize| -> f64 {
        (0..n_classes)
            .map(|t| counts[t][o] as f64 * quanta[t])
            .sum()
    };

    // Potential change of moving k quanta of class t from `src` to `dst`
    // (None = the unserved pool).
    let delta_phi = |counts: &[Vec<usize>],
                     unserved: &[usize],
                     t: usize,
                     src: Option<usize>,
                     dst: Option<usize>,
                     k: usize|
     -> f64 {
        let q = quanta[t];
        let moved = k as f64 * q;
        let lam = market.classes[t].weight;
        let served_t = (mesh - unserved[t]) as f64 * q;
        let mut delta = 0.0;
        if let Some(a) = src {
            let x = option_load(counts, a);
            delta -= latency_integral(&options[a].latency, x)
                - latency_integral(&options[a].latency, x - moved);
            delta -= options[a].price * moved / lam;
        } else {
            // Joining the market: the demand integral grows by the value of
            // the newly served quanta.
            delta -= (demand_integral(&market.classes[t].demand, served_t + moved)
                - demand_integral(&market.classes[t].demand, served_t))
                / lam;
        }
        if let Some(b) = dst {
            let x = option_load(counts, b);
            delta += latency_integral(&options[b].latency, x + moved)
                - latency_integral(&options[b].latency, x);
            delta += options[b].price * moved / lam;
        } else {
            delta += (demand_integral(&market.classes[t].demand, served_t)
                - demand_integral(&market.classes[t].demand, served_t - moved))
                / lam;
        }
        delta
    };

    let mut passes = 0usize;
    loop {
        passes += 1;
        let mut moved_any = false;
        for t in 0..n_classes {
            // Source/destination slots: each option plus the unserved pool.
            for src_slot in 0..=n_opts {
                let src = if src_slot < n_opts {
                    Some(src_slot)
                } else {
                    None
                };
                for dst_slot in 0..=n_opts {
                    if dst_slot == src_slot {
                        continue;
                    }
                    let available = match src {
                        Some(o) => counts[t][o],
                        None => unserved[t],
                    };
                    if available == 0 {
                        continue;
                    }
                    let dst = if dst_slot < n_opts {
                        Some(dst_slot)
                    } else {
                        None
                    };
                    // Doubling search for the bulk size with the biggest drop.
                    let mut best_k = 0usize;
                    let mut best_delta = -1e-15;
                    let mut k = 1usize;
                    while k <= available {
                        let d = delta_phi(&counts, &unserved, t, src, dst, k);
                        if d < best_delta {
                            best_delta = d;
                            best_k = k;
                        }
                        if k == available {
                            break;
                        }
                        k = (k * 2).min(available);
                    }
                    if best_k > 0 {
                        match src {
                            Some(o) => counts[t][o] -= best_k,
                            None => unserved[t] -= best_k,
                        }
                        match dst {
                            Some(o) => counts[t][o] += best_k,
                            None => unserved[t] += best_k,
                        }
                        moved_any = true;
                    }
                }
            }
        }
        if !moved_any || passes > 100 * mesh {
            break;
        }
    }

    // Option loads per class -> allocation (equal split in the shared band).
    let loads: Vec<Vec<f64>> = (0..n_opts)
        .map(|o| {
            (0..n_classes)
                .map(|t| counts[t][o] as f64 * quanta[t])
                .collect()
        })
        .collect();
    Ok(distribute(market, &options, &loads))
}

/// Largest load quantum of a mesh on this market.
pub fn mass_quantum(market: &MarketConfig, mesh: usize) -> f64 {
    market
        .classes
        .iter()
        .map(|c| c.demand.mass_bound() / mesh as f64)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Equilibrium certification.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSearch {
    pub id: String,
    /// Best licensed deviation (price, revenue gain), incumbents only.
    pub licensed: Option<(f64, f64)>,
    /// Best unlicensed deviation (price, revenue gain).
    pub unlicensed: (f64, f64),
}

/// Deviation certificate: the largest unilateral revenue gain any SP can
/// find on the search grids. Nonpositive (within tolerance) at equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub max_gain: f64,
    pub worst_deviator: Option<String>,
    pub searches: Vec<DeviationSearch>,
}

/// Grid-search every provider's unilateral deviations, over both licensed
/// and unlicensed prices (the latter exercising the zero-price reasoning for
/// the shared band).
pub fn certify_equilibrium(
    market: &MarketConfig,
    result: &EquilibriumResult,
    grid: &GridSpec,
) -> Result<Certificate, OracleError> {
    let market = market.with_capacity(result.capacity);
    let mut searches = Vec::new();
    let mut max_gain = f64::NEG_INFINITY;
    let mut worst = None;

    for (i, sp) in market.providers.iter().enumerate() {
        let eq_rev = result.report.revenues[i];
        let licensed = if sp.is_incumbent() {
            let objective = |p: f64| -> f64 {
                let mut prices = result.prices.clone();
                prices.licensed.insert(sp.id.clone(), p);
                match allocate(&market, &prices) {
                    Ok(alloc) => revenues(&market, &prices, &alloc)[i],
                    Err(_) => f64::NEG_INFINITY,
                }
            };
            let (p, rev) = scan(&objective, grid);
            Some((p, rev - eq_rev))
        } else {
            None
        };
        let unlicensed = {
            let objective = |pw: f64| -> f64 {
                let mut prices = result.prices.clone();
                prices.unlicensed.insert(sp.id.clone(), pw);
                match allocate(&market, &prices) {
                    Ok(alloc) => revenues(&market, &prices, &alloc)[i],
                    Err(_) => f64::NEG_INFINITY,
                }
            };
            let (p, rev) = scan(&objective, grid);
            (p, rev - eq_rev)
        };
        let gain = licensed
            .map(|(_, g)| g)
            .unwrap_or(f64::NEG_INFINITY)
            .max(unlicensed.1);
        if gain > max_gain {
            max_gain = gain;
            worst = Some(sp.id.clone());
        }
        searches.push(DeviationSearch {
            id: sp.id.clone(),
            licensed,
            unlicensed,
        });
    }

    Ok(Certificate {
        max_gain,
        worst_deviator: worst,
        searches,
    })
}
