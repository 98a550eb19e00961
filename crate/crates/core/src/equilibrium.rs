//! Pricing-game equilibria for the supported market families, plus
//! brute-force equilibrium verification.
//!
//! All equilibria set unlicensed prices to zero: with at least two SPs in the
//! shared band, undercutting drives them there, and a dedicated deviation
//! check confirms no SP gains by posting a positive unlicensed price.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::best_response::{
    best_response_generic, best_response_heterogeneous, best_response_homogeneous, revenue_of,
    BestResponseError, Regime,
};
use crate::metrics::WelfareReport;
use crate::model::{DemandSpec, MarketConfig};
use crate::wardrop::{
    allocate, delivered_prices, wardrop_residual, Allocation, DeliveredPrices, PriceProfile,
    WardropError,
};
use crate::{BR_CONVERGENCE_TOL, BR_DAMPING, BR_MAX_ITERATIONS, MASS_TOL};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub wardrop_residual: f64,
    /// `-max_gain` of the last verification grid run against this result;
    /// values above -1e-6 certify the equilibrium.
    pub deviation_margin: Option<f64>,
    /// Full deviation-search certificate, when one was attached.
    pub certificate: Option<crate::oracle::Certificate>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub capacity: f64,
    pub prices: PriceProfile,
    pub allocation: Allocation,
    pub delivered: DeliveredPrices,
    pub report: WelfareReport,
    pub regime: Regime,
    pub diagnostics: Diagnostics,
}

impl EquilibriumResult {
    /// Record a deviation certificate in the diagnostics block.
    pub fn attach_certificate(&mut self, certificate: crate::oracle::Certificate) {
        self.diagnostics.deviation_margin = Some(-certificate.max_gain);
        self.diagnostics.certificate = Some(certificate);
    }

    /// Licensed price of the first incumbent, the representative price in
    /// sweeps and plots.
    pub fn lead_price(&self, market: &MarketConfig) -> f64 {
        market
            .providers
            .iter()
            .find(|p| p.is_incumbent())
            .and_then(|p| self.prices.licensed_price(&p.id))
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver precondition violated: {0}")]
    Precondition(String),
    #[error("best-response iteration did not converge after {iterations} steps (last price {last_price})")]
    NoConvergence { iterations: usize, last_price: f64 },
    #[error("threshold formulas do not apply: {0}")]
    RegimeViolation(String),
    #[error(transparent)]
    Wardrop(#[from] WardropError),
}

impl From<BestResponseError> for SolveError {
    fn from(e: BestResponseError) -> Self {
        match e {
            BestResponseError::UseGenericPath(msg) => SolveError::Precondition(msg),
            BestResponseError::Wardrop(w) => SolveError::Wardrop(w),
        }
    }
}

fn finish(
    market: &MarketConfig,
    prices: PriceProfile,
    regime: Regime,
    iterations: usize,
    warnings: Vec<String>,
) -> Result<EquilibriumResult, SolveError> {
    let allocation = allocate(market, &prices)?;
    let delivered = delivered_prices(market, &prices, &allocation)?;
    let report = WelfareReport::compute(market, &prices, &allocation, &delivered);
    let residual = wardrop_residual(market, &prices, &allocation)?;
    Ok(EquilibriumResult {
        capacity: market.unlicensed.capacity,
        prices,
        allocation,
        delivered,
        report,
        regime,
        diagnostics: Diagnostics {
            iterations,
            wardrop_residual: residual,
            deviation_margin: None,
            certificate: None,
            warnings,
        },
    })
}

/// Price that keeps the incumbent out of the market entirely.
fn priced_out(market: &MarketConfig) -> f64 {
    market
        .classes
        .iter()
        .map(|c| c.demand.choke_price())
        .fold(0.0, f64::max)
        + 1.0
}

// ---------------------------------------------------------------------------
// Family solvers.
// ---------------------------------------------------------------------------

/// Unique equilibrium of the single-incumbent homogeneous box family with
/// linear latencies, in closed form. Falls back to the generic solver, with a
/// warning, when the market is outside those assumptions.
pub fn solve_homogeneous_single(market: &MarketConfig) -> Result<EquilibriumResult, SolveError> {
    match best_response_homogeneous(market, market.unlicensed.capacity) {
        Ok(br) => {
            let price = if br.price.is_finite() {
                br.price
            } else {
                priced_out(market)
            };
            let warnings = if br.regime == Regime::Unserved {
                vec!["incumbent cannot serve any customer at a positive price".into()]
            } else {
                Vec::new()
            };
            let prices = PriceProfile::with_zero_unlicensed(market, &[price]);
            finish(market, prices, br.regime, 0, warnings)
        }
        Err(BestResponseError::UseGenericPath(reason)) => {
            let mut result = solve_generic_single(market)?;
            result.diagnostics.warnings.push(format!(
                "outside the closed-form family ({reason}); used generic solver"
            ));
            Ok(result)
        }
        Err(BestResponseError::Wardrop(w)) => Err(w.into()),
    }
}

/// Equilibrium of the single-incumbent two-class box family: the incumbent's
/// best response against the zero-priced band, with the regime recorded.
pub fn solve_heterogeneous_single(market: &MarketConfig) -> Result<EquilibriumResult, SolveError> {
    let br = best_response_heterogeneous(market, market.unlicensed.capacity)?;
    let mut warnings = Vec::new();
    let price = if br.price.is_finite() {
        br.price
    } else {
        warnings
            .push("incumbent earns nothing at any price; reporting a priced-out profile".into());
        priced_out(market)
    };
    if br.regime == Regime::ServeLowOnly {
        warnings.push("best response serves only the low class".into());
    }
    if let Some(other) = br.tied_regime {
        warnings.push(format!(
            "revenue tie with regime {other}; reported the lower price"
        ));
    }
    let prices = PriceProfile::with_zero_unlicensed(market, &[price]);
    finish(market, prices, br.regime, 0, warnings)
}

/// Single incumbent against the zero-priced band for any latency family,
/// via the generic best response.
pub fn solve_generic_single(market: &MarketConfig) -> Result<EquilibriumResult, SolveError> {
    let incumbents = market.incumbent_indices();
    if incumbents.len() != 1 {
        return Err(SolveError::Precondition(format!(
            "generic single-incumbent solver given {} incumbents",
            incumbents.len()
        )));
    }
    let br = best_response_generic(market, market.unlicensed.capacity, &PriceProfile::default())?;
    let price = if br.price.is_finite() {
        br.price
    } else {
        priced_out(market)
    };
    let prices = PriceProfile::with_zero_unlicensed(market, &[price]);
    finish(market, prices, br.regime, 0, Vec::new())
}

/// Symmetric equilibrium of `n >= 2` identical incumbents by damped
/// simultaneous best-response iteration on the common licensed price.
pub fn solve_symmetric_n(market: &MarketConfig) -> Result<EquilibriumResult, SolveError> {
    let incumbents = market.incumbent_indices();
    let n = incumbents.len();
    if n < 2 {
        return Err(SolveError::Precondition(
            "symmetric solver needs >= 2 incumbents".into(),
        ));
    }
    let first = market.providers[incumbents[0]]
        .licensed_latency_spec()
        .unwrap();
    for &i in &incumbents[1..] {
        if market.providers[i].licensed_latency_spec() != Some(first) {
            return Err(SolveError::Precondition(
                "incumbent latencies are not identical".into(),
            ));
        }
    }
    if market.class_count() != 1 {
        return Err(SolveError::Precondition(
            "symmetric solver handles one class".into(),
        ));
    }

    let mut price = market.classes[0].demand.choke_price() / 2.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < BR_MAX_ITERATIONS {
        iterations += 1;
        // Rivals (all incumbents but the first) frozen at the current price.
        let mut rivals = PriceProfile::default();
        for &i in &incumbents[1..] {
            rivals
                .licensed
                .insert(market.providers[i].id.clone(), price);
        }
        let br = best_response_generic(market, market.unlicensed.capacity, &rivals)?;
        let response = if br.price.is_finite() {
            br.price
        } else {
            priced_out(market)
        };
        let next = (1.0 - BR_DAMPING) * price + BR_DAMPING * response;
        let delta = (next - price).abs();
        price = next;
        if delta < BR_CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolveError::NoConvergence {
            iterations,
            last_price: price,
        });
    }

    let licensed = vec![price; n];
    let prices = PriceProfile::with_zero_unlicensed(market, &licensed);
    let mut result = finish(market, prices, Regime::Interior, iterations, Vec::new())?;
    result.diagnostics.iterations = iterations;
    Ok(result)
}

/// Dispatch on market family.
pub fn solve(market: &MarketConfig) -> Result<EquilibriumResult, SolveError> {
    let incumbents = market.incumbent_count();
    if incumbents == 0 {
        return Err(SolveError::Precondition("no incumbent".into()));
    }
    match (incumbents, market.class_count()) {
        (1, 1) => {
            let box_demand = matches!(market.classes[0].demand, DemandSpec::Box { .. });
            if box_demand && market.all_latencies_linear() {
                solve_homogeneous_single(market)
            } else {
                solve_generic_single(market)
            }
        }
        (1, 2) => solve_heterogeneous_single(market),
        (_, 1) => solve_symmetric_n(market),
        (n, c) => Err(SolveError::Precondition(format!(
            "unsupported family: {n} incumbents with {c} classes"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Verification.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderGain {
    pub id: String,
    /// Best gain over licensed-price deviations (incumbents only).
    pub licensed_gain: Option<f64>,
    /// Best gain over unlicensed-price deviations.
    pub unlicensed_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub max_gain: f64,
    pub worst_deviator: Option<String>,
    pub per_provider: Vec<ProviderGain>,
    /// When nobody uses a present band: whether `weight * g(0) >= P_t(Q_t)`
    /// holds for every class, the condition under which an empty band is
    /// consistent with equilibrium.
    pub no_service_condition: Option<bool>,
}

/// Brute-force unilateral price deviations on a uniform grid of the given
/// resolution, for every provider, over both licensed and unlicensed prices.
pub fn verify_equilibrium(
    market: &MarketConfig,
    result: &EquilibriumResult,
    grid_resolution: f64,
) -> Result<DeviationReport, SolveError> {
    let cap = priced_out(market);
    let steps = (cap / grid_resolution).ceil() as usize;
    let mut per_provider = Vec::new();
    let mut max_gain = f64::NEG_INFINITY;
    let mut worst = None;

    for (i, sp) in market.providers.iter().enumerate() {
        let eq_rev = result.report.revenues[i];
        let licensed_gain = if sp.is_incumbent() {
            let mut best = f64::NEG_INFINITY;
            for k in 0..=steps {
                let p = grid_resolution * k as f64;
                let mut prices = result.prices.clone();
                prices.licensed.insert(sp.id.clone(), p);
                best = best.max(revenue_of(market, &prices, i)?);
            }
            Some(best - eq_rev)
        } else {
            None
        };
        let unlicensed_gain = {
            let mut best = f64::NEG_INFINITY;
            for k in 0..=steps {
                let pw = grid_resolution * k as f64;
                let mut prices = result.prices.clone();
                prices.unlicensed.insert(sp.id.clone(), pw);
                best = best.max(revenue_of(market, &prices, i)?);
            }
            best - eq_rev
        };
        let gain = licensed_gain
            .unwrap_or(f64::NEG_INFINITY)
            .max(unlicensed_gain);
        if gain > max_gain {
            max_gain = gain;
            worst = Some(sp.id.clone());
        }
        per_provider.push(ProviderGain {
            id: sp.id.clone(),
            licensed_gain,
            unlicensed_gain,
        });
    }

    let no_service_condition =
        if !market.unlicensed.is_absent() && result.allocation.unlicensed_total() <= MASS_TOL {
            let g0 = market.unlicensed.latency.offset;
            let ok = market.classes.iter().enumerate().all(|(t, class)| {
                let served = result.allocation.served(t);
                let level = class.demand.price_at(served.min(class.demand.mass_bound()));
                class.weight * g0 >= level - 1e-9
            });
            Some(ok)
        } else {
            None
        };

    Ok(DeviationReport {
        max_gain,
        worst_deviator: worst,
        per_provider,
        no_service_condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatencySpec;
    use crate::presets;
    use approx::assert_relative_eq;

    #[test]
    fn homogeneous_below_c1_keeps_monopoly_outcome() {
        // C = 0.25 < C1 = 0.5: monopoly unchanged, band fills to g^{-1}(W).
        let market = presets::b1_market(1.0).with_capacity(0.25);
        let eq = solve_homogeneous_single(&market).unwrap();
        assert_relative_eq!(eq.lead_price(&market), 0.5, epsilon = 1e-12);
        assert_relative_eq!(eq.allocation.licensed_load(0), 0.5, epsilon = 1e-10);
        assert_relative_eq!(eq.allocation.unlicensed_total(), 0.25, epsilon = 1e-10);
        assert_relative_eq!(eq.report.social_welfare, 0.25, epsilon = 1e-10);
        assert!(eq.diagnostics.wardrop_residual <= 1e-9);
    }

    #[test]
    fn homogeneous_welfare_at_c2() {
        // S(C2) = W^2 / (2 (sqrt(W^2+1) + 1)) for W = 1.
        let c2 = 2f64.sqrt() / 2.0;
        let market = presets::b1_market(1.0).with_capacity(c2);
        let eq = solve_homogeneous_single(&market).unwrap();
        let expected = 1.0 / (2.0 * (2f64.sqrt() + 1.0));
        assert_relative_eq!(eq.report.social_welfare, expected, epsilon = 1e-9);
    }

    #[test]
    fn homogeneous_outcome_continuous_at_regime_thresholds() {
        // Price and welfare agree from both sides of C1 and C2.
        let market = presets::b1_market(1.0);
        let t = crate::sweep::closed_form_thresholds(1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        for threshold in [t.c1, t.c2] {
            let below = solve_homogeneous_single(&market.with_capacity(threshold - 1e-9)).unwrap();
            let above = solve_homogeneous_single(&market.with_capacity(threshold + 1e-9)).unwrap();
            assert!(
                (below.lead_price(&market) - above.lead_price(&market)).abs() <= 1e-6,
                "price discontinuous at {threshold}"
            );
            assert!(
                (below.report.social_welfare - above.report.social_welfare).abs() <= 1e-6,
                "welfare discontinuous at {threshold}"
            );
        }
    }

    #[test]
    fn monopoly_revenue_objective_value() {
        let market = presets::b1_market(1.0);
        let prices = crate::wardrop::PriceProfile::with_zero_unlicensed(&market, &[0.5]);
        let rev = crate::best_response::revenue_at_price(&market, 0.0, &prices).unwrap();
        assert_relative_eq!(rev, 0.25, epsilon = 1e-12);
        // Above the valuation nobody buys.
        let prices = crate::wardrop::PriceProfile::with_zero_unlicensed(&market, &[1.0]);
        assert_eq!(crate::best_response::revenue_at_price(&market, 0.0, &prices).unwrap(), 0.0);
    }

    #[test]
    fn homogeneous_large_capacity_delivers_t2() {
        // As C grows the delivered price falls toward T2 = 0 and CS -> W.
        let market = presets::b1_market(1.0).with_capacity(1e6);
        let eq = solve_homogeneous_single(&market).unwrap();
        assert!(eq.delivered.per_class[0] < 1e-3);
        assert_relative_eq!(eq.report.consumer_surplus, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn heterogeneous_b3_equilibrium_at_zero_capacity() {
        let market = presets::b3_market().with_capacity(0.0);
        let eq = solve_heterogeneous_single(&market).unwrap();
        assert_relative_eq!(eq.lead_price(&market), 0.62, epsilon = 1e-9);
        assert_relative_eq!(eq.report.revenues[0], 1.426, epsilon = 1e-9);
        assert_eq!(eq.regime, Regime::ServeBothTypes);
    }

    #[test]
    fn heterogeneous_sorted_region_separates_classes() {
        // C = 0.2: high class in the licensed band, low class in the band.
        let market = presets::b3_market().with_capacity(0.2);
        let eq = solve_heterogeneous_single(&market).unwrap();
        assert_eq!(eq.regime, Regime::ServeHighOnly);
        assert_relative_eq!(eq.allocation.licensed[0][0], 1.0, epsilon = 1e-9);
        assert!(eq.allocation.licensed[0][1] <= MASS_TOL);
        assert_relative_eq!(eq.allocation.unlicensed_class_total(1), 1.3, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_duopoly_matches_hand_derived_fixed_point() {
        // With l(x) = x, P(q) = 1 - 4q and band g(x) = x/C at price zero, the
        // symmetric fixed point is p = 1 / (6 + 8C).
        for c in [0.0, 0.5, 2.0] {
            let market = presets::b2_symmetric_market(2, 4.0).with_capacity(c);
            let eq = solve_symmetric_n(&market).unwrap();
            let expected = 1.0 / (6.0 + 8.0 * c);
            assert_relative_eq!(eq.lead_price(&market), expected, epsilon = 1e-6);
            let p2 = eq.prices.licensed_price("sp2").unwrap();
            assert_relative_eq!(eq.lead_price(&market), p2);
        }
    }

    #[test]
    fn accounting_identity_on_solved_equilibria() {
        let cases: Vec<EquilibriumResult> = vec![
            solve(&presets::b1_market(1.0).with_capacity(0.6)).unwrap(),
            solve(&presets::b1_market(1.0).with_capacity(2.0)).unwrap(),
            solve(&presets::b3_market().with_capacity(0.3)).unwrap(),
            solve(&presets::b2_symmetric_market(2, 4.0).with_capacity(1.0)).unwrap(),
        ];
        for eq in cases {
            let total: f64 = eq.report.total_revenue();
            assert_relative_eq!(
                eq.report.social_welfare,
                eq.report.consumer_surplus + total,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn verify_reports_no_gain_at_equilibrium() {
        let market = presets::b1_market(1.0).with_capacity(0.6);
        let eq = solve_homogeneous_single(&market).unwrap();
        let report = verify_equilibrium(&market, &eq, 1e-3).unwrap();
        assert!(report.max_gain <= 1e-6, "gain {}", report.max_gain);
    }

    #[test]
    fn verify_flags_perturbed_price() {
        let market = presets::b1_market(1.0).with_capacity(0.6);
        let mut eq = solve_homogeneous_single(&market).unwrap();
        eq.prices.licensed.insert("sp1".into(), 0.9);
        let alloc = allocate(&market, &eq.prices).unwrap();
        eq.report.revenues = crate::metrics::revenues(&market, &eq.prices, &alloc);
        eq.allocation = alloc;
        let report = verify_equilibrium(&market, &eq, 1e-3).unwrap();
        assert!(
            report.max_gain > 1e-3,
            "expected positive gain from reverting"
        );
        assert_eq!(report.worst_deviator.as_deref(), Some("sp1"));
    }

    #[test]
    fn homogeneous_solver_falls_back_outside_linear_family() {
        let mut market = presets::b1_market(1.0).with_capacity(1.0);
        market.providers[0] = crate::model::ServiceProvider::incumbent(
            "sp1",
            LatencySpec {
                offset: 0.0,
                slope: 1.0,
                exponent: 2.0,
            },
        );
        let eq = solve_homogeneous_single(&market).unwrap();
        assert!(eq
            .diagnostics
            .warnings
            .iter()
            .any(|w| w.contains("generic solver")));
        assert!(eq.report.revenues[0] > 0.0);
        assert!(eq.diagnostics.wardrop_residual <= 1e-7);
    }

    #[test]
    fn empty_band_satisfies_no_service_condition() {
        // g(0) = T2 = 2 > W = 1: nobody uses the band at any capacity.
        let mut market = presets::b1_market(1.0).with_capacity(5.0);
        market.unlicensed.latency = LatencySpec {
            offset: 2.0,
            slope: 1.0,
            exponent: 1.0,
        };
        let eq = solve(&market).unwrap();
        assert!(eq.allocation.unlicensed_total() <= MASS_TOL);
        let report = verify_equilibrium(&market, &eq, 1e-2).unwrap();
        assert_eq!(report.no_service_condition, Some(true));
        assert!(report.max_gain <= 1e-6);
    }
}
