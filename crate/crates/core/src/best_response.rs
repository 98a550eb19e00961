//! Incumbent revenue maximization against a fixed competitive environment,
//! with the unlicensed price pinned at zero (competition drives it there
//! whenever at least two SPs share the band).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::revenues;
use crate::model::{DemandSpec, MarketConfig};
use crate::sweep::thresholds_general;
use crate::wardrop::{affine_price_regimes, allocate, PriceProfile, WardropError};
use crate::{FALLBACK_GRID_PASSES, FALLBACK_GRID_POINTS, GOLDEN_TOL, MASS_TOL};

/// Qualitative description of a best-response solution: which classes the
/// incumbent serves (heterogeneous markets), or whether the delivered price
/// sits at the valuation boundary (homogeneous markets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ServeBothTypes,
    ServeHighOnly,
    ServeLowOnly,
    BoundaryDeliveredW,
    Interior,
    /// The incumbent cannot earn positive revenue at any price.
    Unserved,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::ServeBothTypes => "serve_both_types",
            Regime::ServeHighOnly => "serve_high_only",
            Regime::ServeLowOnly => "serve_low_only",
            Regime::BoundaryDeliveredW => "boundary_delivered_w",
            Regime::Interior => "interior",
            Regime::Unserved => "unserved",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub price: f64,
    pub revenue: f64,
    pub regime: Regime,
    /// Populated when a different regime achieves revenue within 1e-9 of the
    /// winner (the reported price is the lower one).
    pub tied_regime: Option<Regime>,
}

#[derive(Debug, Error)]
pub enum BestResponseError {
    #[error("market outside this path's assumptions ({0}); use the generic path")]
    UseGenericPath(String),
    #[error(transparent)]
    Wardrop(#[from] WardropError),
}

/// The single incumbent of a market, or an error naming the reason there
/// is not exactly one.
fn single_incumbent(market: &MarketConfig) -> Result<usize, BestResponseError> {
    let incumbents = market.incumbent_indices();
    if incumbents.len() != 1 {
        return Err(BestResponseError::UseGenericPath(format!(
            "{} incumbents",
            incumbents.len()
        )));
    }
    Ok(incumbents[0])
}

/// Incumbent revenue at a full price profile (first incumbent of the market).
pub fn revenue_at_price(
    market: &MarketConfig,
    capacity: f64,
    prices: &PriceProfile,
) -> Result<f64, WardropError> {
    let market = market.with_capacity(capacity);
    let idx = market
        .incumbent_indices()
        .first()
        .copied()
        .ok_or_else(|| WardropError::Unsupported("market has no incumbent".into()))?;
    let alloc = allocate(&market, prices)?;
    Ok(revenues(&market, prices, &alloc)[idx])
}

pub(crate) fn revenue_of(
    market: &MarketConfig,
    prices: &PriceProfile,
    sp_idx: usize,
) -> Result<f64, WardropError> {
    let alloc = allocate(market, prices)?;
    Ok(revenues(market, prices, &alloc)[sp_idx])
}

// ---------------------------------------------------------------------------
// Homogeneous closed form.
// ---------------------------------------------------------------------------

/// Closed-form best response of a single incumbent with one box-demand class
/// and linear latencies, against an unlicensed band priced at zero.
///
/// Below the capacity at which the band binds, the monopoly price stands.
/// Beyond it the feasible maximizer is either the boundary price (delivered
/// price exactly at the valuation, whole market served) or the interior
/// stationary price of the constrained revenue quadratic.
pub fn best_response_homogeneous(
    market: &MarketConfig,
    capacity: f64,
) -> Result<BestResponse, BestResponseError> {
    let inc = single_incumbent(market)?;
    if market.class_count() != 1 {
        return Err(BestResponseError::UseGenericPath(
            "two customer classes".into(),
        ));
    }
    let class = &market.classes[0];
    let DemandSpec::Box { valuation: w, mass } = class.demand else {
        return Err(BestResponseError::UseGenericPath("non-box demand".into()));
    };
    let lat = market.providers[inc]
        .licensed_latency_spec()
        .expect("incumbent");
    if !lat.is_linear() || !market.unlicensed.latency.is_linear() {
        return Err(BestResponseError::UseGenericPath(
            "nonlinear latency".into(),
        ));
    }
    let lam = class.weight;
    // Weight-scaled coefficients: delivered = p + (t1e + b_e * x).
    let t1e = lam * lat.offset;
    let be = lam * lat.slope;
    let t2e = lam * market.unlicensed.latency.offset;
    let ke = lam * market.unlicensed.latency.slope;

    if w <= t1e {
        return Ok(BestResponse {
            price: f64::INFINITY,
            revenue: 0.0,
            regime: Regime::Unserved,
            tied_regime: None,
        });
    }

    // Monopoly solution, capped at full coverage.
    let x_mono = ((w - t1e) / (2.0 * be)).min(mass);
    let p_mono = w - t1e - be * x_mono;
    let monopoly = BestResponse {
        price: p_mono,
        revenue: p_mono * x_mono,
        regime: Regime::BoundaryDeliveredW,
        tied_regime: None,
    };

    if capacity <= 0.0 || w <= t2e {
        // Absent band, or a band nobody would use at the valuation.
        return Ok(monopoly);
    }
    let thresholds = thresholds_general(w, t1e, t2e, be, ke, mass);
    if capacity <= thresholds.c1 {
        return Ok(monopoly);
    }

    let alpha = ke / capacity;
    // Boundary candidate: whole market served at delivered price w.
    let x_w = capacity * (w - t2e) / ke;
    let x_boundary = (mass - x_w).max(0.0);
    let p_boundary = (w - t1e - be * x_boundary).max(0.0);

    // Interior stationary point of p * x1(p) with x1 + Xw = mass.
    let p_interior = ((t2e - t1e + alpha * mass) / 2.0).max(0.0);
    let x_interior = (t2e - t1e + alpha * mass - p_interior) / (be + alpha);
    let interior_delivered = p_interior + t1e + be * x_interior;

    if interior_delivered <= w {
        Ok(BestResponse {
            price: p_interior,
            revenue: p_interior * x_interior,
            regime: Regime::Interior,
            tied_regime: None,
        })
    } else {
        Ok(BestResponse {
            price: p_boundary,
            revenue: p_boundary * x_boundary,
            regime: Regime::BoundaryDeliveredW,
            tied_regime: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Heterogeneous closed form: per-regime concave quadratics.
// ---------------------------------------------------------------------------

/// Best response of a single incumbent facing two box-demand classes and a
/// zero-priced unlicensed band.
///
/// Every assignment pattern makes the incumbent's load affine in its price,
/// so revenue is a concave quadratic per pattern; the candidates (stationary
/// points clipped to each pattern's validity interval) are re-verified
/// through the Wardrop solver and the global maximizer returned, ties broken
/// toward the lower price.
pub fn best_response_heterogeneous(
    market: &MarketConfig,
    capacity: f64,
) -> Result<BestResponse, BestResponseError> {
    let inc = single_incumbent(market)?;
    if market.class_count() != 2 {
        return Err(BestResponseError::UseGenericPath(
            "expected two customer classes".into(),
        ));
    }
    if !market
        .classes
        .iter()
        .all(|c| matches!(c.demand, DemandSpec::Box { .. }))
    {
        return Err(BestResponseError::UseGenericPath("non-box demand".into()));
    }
    if !market.all_latencies_linear() {
        return Err(BestResponseError::UseGenericPath(
            "nonlinear latency".into(),
        ));
    }
    let market = market.with_capacity(capacity);
    let placeholder = PriceProfile::with_zero_unlicensed(&market, &[0.0]);
    let regimes = affine_price_regimes(&market, &placeholder, inc)?;

    let mut candidates: Vec<f64> = Vec::new();
    for regime in &regimes {
        let (base, slope) = regime.own_load;
        if slope < -1e-13 {
            candidates.push((-base / (2.0 * slope)).clamp(regime.lo, regime.hi));
        }
        candidates.push(regime.lo);
        candidates.push(regime.hi);
    }
    candidates.retain(|p| p.is_finite() && *p >= 0.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    evaluate_candidates(&market, inc, &candidates)
}

/// Evaluate candidate prices through the Wardrop solver; return the best,
/// processing in ascending price order so ties resolve to the lower price.
fn evaluate_candidates(
    market: &MarketConfig,
    inc: usize,
    candidates: &[f64],
) -> Result<BestResponse, BestResponseError> {
    let mut best: Option<(f64, f64, Regime)> = None;
    let mut tied_regime = None;
    for &p in candidates {
        let prices = profile_with_own_price(market, inc, p);
        let Ok(alloc) = allocate(market, &prices) else {
            continue;
        };
        let rev = revenues(market, &prices, &alloc)[inc];
        let regime = coverage_regime(market, inc, &alloc);
        match &best {
            Some((_, best_rev, best_regime)) => {
                if rev > best_rev + 1e-12 {
                    tied_regime = None;
                    best = Some((p, rev, regime));
                } else if (rev - best_rev).abs() <= 1e-9 && regime != *best_regime {
                    tied_regime = Some(regime);
                }
            }
            None => best = Some((p, rev, regime)),
        }
    }
    match best {
        Some((price, revenue, regime)) if revenue > 0.0 => Ok(BestResponse {
            price,
            revenue,
            regime,
            tied_regime,
        }),
        _ => Ok(BestResponse {
            price: f64::INFINITY,
            revenue: 0.0,
            regime: Regime::Unserved,
            tied_regime: None,
        }),
    }
}

/// Zero-unlicensed profile with incumbent `inc` at price `p` (other
/// incumbents, if any, keep price zero).
fn profile_with_own_price(market: &MarketConfig, inc: usize, p: f64) -> PriceProfile {
    let mut profile = PriceProfile::default();
    for provider in &market.providers {
        profile.unlicensed.insert(provider.id.clone(), 0.0);
        if provider.is_incumbent() {
            profile.licensed.insert(provider.id.clone(), 0.0);
        }
    }
    profile.licensed.insert(market.providers[inc].id.clone(), p);
    profile
}

fn coverage_regime(
    market: &MarketConfig,
    inc: usize,
    alloc: &crate::wardrop::Allocation,
) -> Regime {
    match market.class_count() {
        2 => {
            let high = alloc.licensed[inc][0] > MASS_TOL;
            let low = alloc.licensed[inc][1] > MASS_TOL;
            match (high, low) {
                (true, true) => Regime::ServeBothTypes,
                (true, false) => Regime::ServeHighOnly,
                (false, true) => Regime::ServeLowOnly,
                (false, false) => Regime::Unserved,
            }
        }
        _ => Regime::Interior,
    }
}

// ---------------------------------------------------------------------------
// Generic path: concavity precondition, golden section, grid fallback.
// ---------------------------------------------------------------------------

/// Best response of one incumbent against fixed rival prices, for any latency
/// exponents.
///
/// `rival_prices` fixes the licensed prices of every *other* incumbent (the
/// provider being optimized is the one without an entry) and any unlicensed
/// prices; missing unlicensed entries default to zero. When the full-coverage
/// revenue proxy `x * (g(Q - x) - l(x))` passes a numerical concavity check,
/// revenue is maximized by golden-section search, otherwise by a dense grid
/// with refinement.
pub fn best_response_generic(
    market: &MarketConfig,
    capacity: f64,
    rival_prices: &PriceProfile,
) -> Result<BestResponse, BestResponseError> {
    let market = market.with_capacity(capacity);
    let inc = market
        .providers
        .iter()
        .enumerate()
        .find(|(_, p)| p.is_incumbent() && !rival_prices.licensed.contains_key(&p.id))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            BestResponseError::UseGenericPath(
                "no incumbent without a fixed rival price to optimize".into(),
            )
        })?;

    // Full profile: rivals as given, everyone else unlicensed at zero.
    let mut base_profile = rival_prices.clone();
    for p in &market.providers {
        base_profile.unlicensed.entry(p.id.clone()).or_insert(0.0);
    }

    let price_cap = market
        .classes
        .iter()
        .map(|c| c.demand.choke_price())
        .fold(0.0, f64::max);
    let own_id = market.providers[inc].id.clone();
    let objective = |p: f64| -> f64 {
        let mut prices = base_profile.clone();
        prices.licensed.insert(own_id.clone(), p);
        revenue_of(&market, &prices, inc).unwrap_or(f64::NEG_INFINITY)
    };

    let (price, revenue) = if revenue_proxy_is_concave(&market, inc) {
        golden_max(&objective, 0.0, price_cap)
    } else {
        grid_max(
            &objective,
            0.0,
            price_cap,
            FALLBACK_GRID_POINTS,
            FALLBACK_GRID_PASSES,
        )
    };

    if revenue <= 0.0 {
        return Ok(BestResponse {
            price: f64::INFINITY,
            revenue: 0.0,
            regime: Regime::Unserved,
            tied_regime: None,
        });
    }

    let mut prices = base_profile.clone();
    prices.licensed.insert(own_id, price);
    let alloc = allocate(&market, &prices)?;
    let regime = match market.class_count() {
        2 => coverage_regime(&market, inc, &alloc),
        _ => {
            let delivered = crate::wardrop::delivered_prices(&market, &prices, &alloc)?;
            let served = alloc.served(0);
            let class = &market.classes[0];
            if served >= class.demand.mass_bound() - 1e-7
                && delivered.per_class[0] < class.demand.price_at(0.0) - 1e-7
            {
                Regime::Interior
            } else {
                Regime::BoundaryDeliveredW
            }
        }
    };
    Ok(BestResponse {
        price,
        revenue,
        regime,
        tied_regime: None,
    })
}

/// Numerical concavity check of `x * (g(Q - x) - l(x))` on a mesh, the
/// precondition under which the full-coverage revenue is single-peaked.
fn revenue_proxy_is_concave(market: &MarketConfig, inc: usize) -> bool {
    let Some(g) = market.unlicensed.effective_latency() else {
        // No shared band: box-demand monopoly revenue is concave whenever the
        // licensed latency is convex, which the model guarantees.
        return market.class_count() == 1;
    };
    if market.class_count() != 1 {
        return false;
    }
    let lam = market.classes[0].weight;
    let total = market.classes[0].demand.mass_bound();
    let l = market.providers[inc]
        .licensed_latency_spec()
        .expect("incumbent");
    let n = 201;
    let f = |x: f64| x * lam * (g.eval((total - x).max(0.0)) - l.eval(x));
    let h = total / (n - 1) as f64;
    let mut prev2 = f(0.0);
    let mut prev1 = f(h);
    for i in 2..n {
        let cur = f(i as f64 * h);
        // Second difference must stay nonpositive for concavity.
        if cur - 2.0 * prev1 + prev2 > 1e-9 * (1.0 + cur.abs()) {
            return false;
        }
        prev2 = prev1;
        prev1 = cur;
    }
    true
}

/// Golden-section maximization with a coarse presample to bracket the peak.
fn golden_max(objective: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const PRESAMPLE: usize = 64;
    let step = (hi - lo) / PRESAMPLE as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=PRESAMPLE {
        let v = objective(lo + step * i as f64);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);

    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > GOLDEN_TOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, objective(mid))
}

/// Dense grid maximization with windowed refinement; ties go to the lowest
/// price so the result is independent of evaluation order.
fn grid_max(
    objective: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
    passes: usize,
) -> (f64, f64) {
    let mut a = lo;
    let mut b = hi;
    let mut best = (lo, f64::NEG_INFINITY);
    for _ in 0..=passes {
        let step = (b - a) / (points - 1) as f64;
        let mut best_i = 0;
        for i in 0..points {
            let p = a + step * i as f64;
            let v = objective(p);
            if v > best.1 + 1e-15 {
                best = (p, v);
                best_i = i;
            }
        }
        let new_a = a + step * best_i.saturating_sub(1) as f64;
        let new_b = (a + step * (best_i + 1) as f64).min(b);
        a = new_a;
        b = new_b;
    }
    best
}
