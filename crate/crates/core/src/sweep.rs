//! Capacity sweeps, closed-form thresholds, and breakpoint detection: the
//! machinery behind the welfare-versus-capacity curves.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve, EquilibriumResult, SolveError};
use crate::model::{DemandSpec, MarketConfig};
use crate::{JUMP_TOL, SLOPE_TOL};

/// Closed-form capacity thresholds of the homogeneous box family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Capacity at which the band absorbs everyone the monopoly leaves out.
    pub c1: f64,
    /// Capacity beyond which the interior price binds (infinite when the
    /// boundary regime never ends).
    pub c2: f64,
    /// Welfare with no unlicensed band (equals the welfare on [0, c1]).
    pub s0: f64,
    /// Welfare at c2, the bottom of the dip.
    pub s_c2: f64,
}

impl Thresholds {
    /// Welfare at the dip relative to the no-band welfare.
    pub fn efficiency(&self) -> f64 {
        self.s_c2 / self.s0
    }
}

/// Thresholds with weight-scaled coefficients (`t1e = weight * T1` etc.) and
/// an arbitrary box mass. See `closed_form_thresholds` for the unit-mass API.
pub(crate) fn thresholds_general(
    w: f64,
    t1e: f64,
    t2e: f64,
    be: f64,
    ke: f64,
    mass: f64,
) -> Thresholds {
    let x_star = ((w - t1e) / (2.0 * be)).min(mass);
    let p_star = w - t1e - be * x_star;
    let s0 = p_star * x_star;
    let c1 = ke * (mass - x_star) / (w - t2e);

    // Interior delivered price equals w at the positive root of
    // mass*a^2 + (t2e - t1e + 2*be*mass + 2*t1e - 2*w)*a + 2*be*(t2e - w) = 0
    // in the effective band slope a = ke / C.
    let b_coef = t2e + t1e + 2.0 * be * mass - 2.0 * w;
    let disc = b_coef * b_coef - 8.0 * mass * be * (t2e - w);
    let alpha_star = (-b_coef + disc.sqrt()) / (2.0 * mass);
    let c_star = ke / alpha_star;

    let (c2, s_c2) = if c_star > c1 {
        let x_w = c_star * (w - t2e) / ke;
        let x1 = (mass - x_w).max(0.0);
        let p1 = w - t1e - be * x1;
        (c_star, p1 * x1)
    } else {
        (f64::INFINITY, s0)
    };
    Thresholds { c1, c2, s0, s_c2 }
}

/// Closed-form thresholds for the unit-mass homogeneous box family with
/// licensed latency `T1 + b*x` and unlicensed latency `T2 + (kappa/C)*x`.
///
/// Errors when the monopoly would serve all (or none) of the demand at C=0,
/// or when the band can never offer service below the valuation.
pub fn closed_form_thresholds(
    w: f64,
    t1: f64,
    t2: f64,
    b: f64,
    kappa: f64,
) -> Result<Thresholds, SolveError> {
    if w <= t1 {
        return Err(SolveError::RegimeViolation(format!(
            "valuation {w} below the licensed connection cost {t1}"
        )));
    }
    if w <= t2 {
        return Err(SolveError::RegimeViolation(format!(
            "valuation {w} below the unlicensed connection cost {t2}; the band never serves"
        )));
    }
    let x_star = (w - t1) / (2.0 * b);
    if x_star > 1.0 {
        return Err(SolveError::RegimeViolation(format!(
            "monopoly serves all demand at C=0 (unconstrained mass {x_star:.4} > 1)"
        )));
    }
    Ok(thresholds_general(w, t1, t2, b, kappa, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakpointKind {
    FlatToDecreasing,
    DecreasingToIncreasing,
    PriceJump,
    RegimeSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub capacity: f64,
    pub kind: BreakpointKind,
}

/// One sweep sample; solver failures are recorded in place and the sweep
/// continues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSample {
    pub capacity: f64,
    pub result: Option<EquilibriumResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub samples: Vec<SweepSample>,
    pub breakpoints: Vec<Breakpoint>,
    /// Present for the homogeneous box family.
    pub thresholds: Option<Thresholds>,
}

impl SweepResult {
    /// (capacity, welfare) pairs of the successful samples.
    pub fn welfare_curve(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .filter_map(|s| {
                s.result
                    .as_ref()
                    .map(|r| (s.capacity, r.report.social_welfare))
            })
            .collect()
    }
}

/// Default sweep grid: C = 0 plus `points` log-spaced capacities on
/// [lo, hi].
pub fn default_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let mut grid = Vec::with_capacity(points + 1);
    grid.push(0.0);
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        grid.push((log_lo + t * (log_hi - log_lo)).exp());
    }
    grid
}

/// Solve the equilibrium at every capacity of a strictly increasing grid,
/// attach closed-form thresholds when the family has them, and detect
/// breakpoints.
pub fn sweep_capacity(market: &MarketConfig, c_grid: &[f64]) -> Result<SweepResult, SolveError> {
    for w in c_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(SolveError::Precondition(format!(
                "capacity grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    let samples: Vec<SweepSample> = c_grid
        .iter()
        .map(|&c| match solve(&market.with_capacity(c)) {
            Ok(result) => SweepSample {
                capacity: c,
                result: Some(result),
                error: None,
            },
            Err(e) => SweepSample {
                capacity: c,
                result: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let thresholds = market_thresholds(market);
    let breakpoints = detect_breakpoints(market, &samples, JUMP_TOL, SLOPE_TOL);
    Ok(SweepResult {
        samples,
        breakpoints,
        thresholds,
    })
}

/// Closed-form thresholds of the market when it is in the homogeneous
/// unit-weight box family with linear latencies.
fn market_thresholds(market: &MarketConfig) -> Option<Thresholds> {
    if market.class_count() != 1 || market.incumbent_count() != 1 {
        return None;
    }
    if !market.all_latencies_linear() {
        return None;
    }
    let class = &market.classes[0];
    let DemandSpec::Box { valuation, mass } = class.demand else {
        return None;
    };
    let inc = market.incumbent_indices()[0];
    let l = market.providers[inc].licensed_latency_spec()?;
    let lam = class.weight;
    let t1e = lam * l.offset;
    let t2e = lam * market.unlicensed.latency.offset;
    if valuation <= t1e || valuation <= t2e {
        return None;
    }
    let x_star = (valuation - t1e) / (2.0 * lam * l.slope);
    if x_star > mass {
        return None;
    }
    Some(thresholds_general(
        valuation,
        t1e,
        t2e,
        lam * l.slope,
        lam * market.unlicensed.latency.slope,
        mass,
    ))
}

/// Classify welfare-slope transitions, price jumps, and regime switches on a
/// sweep. A price step counts as a jump only when it clears both the absolute
/// floor `jump_tol` and ten times the neighboring steps (so steep-but-smooth
/// segments on coarse grids are not flagged).
pub fn detect_breakpoints(
    market: &MarketConfig,
    samples: &[SweepSample],
    jump_tol: f64,
    slope_tol: f64,
) -> Vec<Breakpoint> {
    let series: Vec<(f64, &EquilibriumResult)> = samples
        .iter()
        .filter_map(|s| s.result.as_ref().map(|r| (s.capacity, r)))
        .collect();
    let mut breakpoints = Vec::new();
    if series.len() < 3 {
        return breakpoints;
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Slope {
        Flat,
        Down,
        Up,
    }
    let slope_class: Vec<Slope> = series
        .windows(2)
        .map(|w| {
            let dc = w[1].0 - w[0].0;
            let ds = w[1].1.report.social_welfare - w[0].1.report.social_welfare;
            let slope = ds / dc;
            if slope.abs() < slope_tol {
                Slope::Flat
            } else if slope < 0.0 {
                Slope::Down
            } else {
                Slope::Up
            }
        })
        .collect();
    for i in 1..slope_class.len() {
        match (slope_class[i - 1], slope_class[i]) {
            (Slope::Flat, Slope::Down) => {
                breakpoints.push(Breakpoint {
                    capacity: series[i].0,
                    kind: BreakpointKind::FlatToDecreasing,
                });
            }
            (Slope::Down, Slope::Up) => {
                breakpoints.push(Breakpoint {
                    capacity: series[i].0,
                    kind: BreakpointKind::DecreasingToIncreasing,
                });
            }
            _ => {}
        }
    }

    let price_steps: Vec<f64> = series
        .windows(2)
        .map(|w| w[1].1.lead_price(market) - w[0].1.lead_price(market))
        .collect();
    for i in 0..price_steps.len() {
        let step = price_steps[i].abs();
        if step <= jump_tol {
            continue;
        }
        // Median neighboring step magnitude in a window around i.
        let lo = i.saturating_sub(3);
        let hi = (i + 4).min(price_steps.len());
        let mut neighbors: Vec<f64> = (lo..hi)
            .filter(|&j| j != i)
            .map(|j| price_steps[j].abs())
            .collect();
        neighbors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let local = if neighbors.is_empty() {
            0.0
        } else {
            neighbors[neighbors.len() / 2]
        };
        if step > 10.0 * local {
            breakpoints.push(Breakpoint {
                capacity: series[i + 1].0,
                kind: BreakpointKind::PriceJump,
            });
        }
    }

    for w in series.windows(2) {
        if w[0].1.regime != w[1].1.regime {
            breakpoints.push(Breakpoint {
                capacity: w[1].0,
                kind: BreakpointKind::RegimeSwitch,
            });
        }
    }

    breakpoints.sort_by(|a, b| a.capacity.partial_cmp(&b.capacity).unwrap());
    breakpoints
}

/// Counterfactual sweep where the extra capacity is split among the `n`
/// incumbents as licensed spectrum (each slope shrinks to `slope/(1 + C/n)`)
/// and no unlicensed band exists.
pub fn divided_capacity_sweep(
    market: &MarketConfig,
    c_grid: &[f64],
    n: usize,
) -> Result<SweepResult, SolveError> {
    if n == 0 {
        return Err(SolveError::Precondition(
            "capacity must be divided among n >= 1 SPs".into(),
        ));
    }
    let samples: Vec<SweepSample> = c_grid
        .iter()
        .map(|&c| {
            let mut divided = market.clone();
            divided.unlicensed.capacity = 0.0;
            for p in &mut divided.providers {
                if let crate::model::ProviderKind::Incumbent { licensed } = &mut p.kind {
                    licensed.slope /= 1.0 + c / n as f64;
                }
            }
            match solve(&divided) {
                Ok(mut result) => {
                    // Record the counterfactual capacity, not the band's.
                    result.capacity = c;
                    SweepSample {
                        capacity: c,
                        result: Some(result),
                        error: None,
                    }
                }
                Err(e) => SweepSample {
                    capacity: c,
                    result: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let breakpoints = detect_breakpoints(market, &samples, JUMP_TOL, SLOPE_TOL);
    Ok(SweepResult {
        samples,
        breakpoints,
        thresholds: None,
    })
}

// ---------------------------------------------------------------------------
// Tabular export.
// ---------------------------------------------------------------------------

/// Fixed CSV column order for sweep exports.
pub fn csv_header(market: &MarketConfig) -> Vec<String> {
    let mut cols = vec!["C".to_string()];
    for p in &market.providers {
        if p.is_incumbent() {
            cols.push(format!("price_{}", p.id));
        }
    }
    cols.push("p_w".into());
    cols.extend(
        [
            "x_licensed_h",
            "x_licensed_l",
            "X_w_h",
            "X_w_l",
            "delivered_h",
            "delivered_l",
            "SW",
            "CS",
        ]
        .map(String::from),
    );
    for p in &market.providers {
        cols.push(format!("revenue_{}", p.id));
    }
    cols.push("regime".into());
    cols
}

/// One CSV row per grid point; the second-class columns stay empty for
/// homogeneous markets.
pub fn csv_row(market: &MarketConfig, capacity: f64, result: &EquilibriumResult) -> Vec<String> {
    let fmt = |v: f64| format!("{v:.12}");
    let mut row = vec![fmt(capacity)];
    for p in &market.providers {
        if p.is_incumbent() {
            row.push(fmt(result.prices.licensed_price(&p.id).unwrap_or(f64::NAN)));
        }
    }
    let p_w = result
        .prices
        .unlicensed
        .values()
        .copied()
        .fold(f64::INFINITY, f64::min);
    row.push(fmt(if p_w.is_finite() { p_w } else { 0.0 }));

    let licensed_class = |t: usize| -> f64 {
        (0..market.providers.len())
            .map(|i| result.allocation.licensed[i][t])
            .sum()
    };
    let two = market.class_count() == 2;
    row.push(fmt(licensed_class(0)));
    row.push(if two {
        fmt(licensed_class(1))
    } else {
        String::new()
    });
    row.push(fmt(result.allocation.unlicensed_class_total(0)));
    row.push(if two {
        fmt(result.allocation.unlicensed_class_total(1))
    } else {
        String::new()
    });
    row.push(fmt(result.delivered.per_class[0]));
    row.push(if two {
        fmt(result.delivered.per_class[1])
    } else {
        String::new()
    });
    row.push(fmt(result.report.social_welfare));
    row.push(fmt(result.report.consumer_surplus));
    for (i, _) in market.providers.iter().enumerate() {
        row.push(fmt(result.report.revenues[i]));
    }
    row.push(result.regime.to_string());
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    #[test]
    fn b1_thresholds_match_closed_forms() {
        let t = closed_form_thresholds(1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(t.c1, 0.5, epsilon = 1e-12);
        assert_relative_eq!(t.c2, 2f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_relative_eq!(t.s0, 0.25, epsilon = 1e-12);
        assert_relative_eq!(t.s_c2, 1.0 / (2.0 * (2f64.sqrt() + 1.0)), epsilon = 1e-12);
        assert_relative_eq!(t.efficiency(), 2.0 * (2f64.sqrt() - 1.0), epsilon = 1e-12);
    }

    #[test]
    fn w2_thresholds_match_closed_forms() {
        let t = closed_form_thresholds(2.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(t.c2, (5f64.sqrt() - 1.0) / 4.0, epsilon = 1e-12);
        assert_relative_eq!(t.efficiency(), (5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(t.c1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn thresholds_reject_full_coverage_monopoly() {
        assert!(closed_form_thresholds(2.5, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn tiny_valuation_pushes_c1_out() {
        let t = closed_form_thresholds(0.05, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(t.c1 > 19.0, "C1 = {}", t.c1);
    }

    #[test]
    fn b1_sweep_matches_threshold_structure() {
        let market = presets::b1_market(1.0);
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let sweep = sweep_capacity(&market, &grid).unwrap();
        let t = sweep.thresholds.unwrap();

        let flat_to_dec: Vec<f64> = sweep
            .breakpoints
            .iter()
            .filter(|b| b.kind == BreakpointKind::FlatToDecreasing)
            .map(|b| b.capacity)
            .collect();
        let dec_to_inc: Vec<f64> = sweep
            .breakpoints
            .iter()
            .filter(|b| b.kind == BreakpointKind::DecreasingToIncreasing)
            .map(|b| b.capacity)
            .collect();
        assert_eq!(flat_to_dec.len(), 1);
        assert_eq!(dec_to_inc.len(), 1);
        assert!(
            (flat_to_dec[0] - t.c1).abs() <= 0.0100001,
            "{} vs {}",
            flat_to_dec[0],
            t.c1
        );
        assert!(
            (dec_to_inc[0] - t.c2).abs() <= 0.0100001,
            "{} vs {}",
            dec_to_inc[0],
            t.c2
        );
        assert!(!sweep
            .breakpoints
            .iter()
            .any(|b| b.kind == BreakpointKind::PriceJump));
    }

    #[test]
    fn single_point_grid_has_no_breakpoints() {
        let market = presets::b1_market(1.0);
        let sweep = sweep_capacity(&market, &[0.5]).unwrap();
        assert_eq!(sweep.samples.len(), 1);
        assert!(sweep.breakpoints.is_empty());
    }

    #[test]
    fn non_increasing_grid_is_rejected() {
        let market = presets::b1_market(1.0);
        assert!(sweep_capacity(&market, &[0.1, 0.1]).is_err());
    }

    #[test]
    fn divided_capacity_at_zero_matches_baseline() {
        let market = presets::b2_symmetric_market(2, 4.0);
        let divided = divided_capacity_sweep(&market, &[0.0], 2).unwrap();
        let mut baseline = market.clone();
        baseline.unlicensed.capacity = 0.0;
        let eq = solve(&baseline).unwrap();
        let sample = divided.samples[0].result.as_ref().unwrap();
        assert_relative_eq!(
            sample.report.social_welfare,
            eq.report.social_welfare,
            epsilon = 1e-9
        );
    }

    #[test]
    fn per_sample_errors_are_recorded_in_place() {
        // Two incumbents with different latencies fall outside every solver
        // family; the sweep keeps going and records the failure per sample.
        let mut market = presets::b2_symmetric_market(2, 4.0);
        if let crate::model::ProviderKind::Incumbent { licensed } = &mut market.providers[1].kind {
            licensed.slope = 2.0;
        }
        let sweep = sweep_capacity(&market, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(sweep.samples.len(), 3);
        assert!(sweep
            .samples
            .iter()
            .all(|s| s.result.is_none() && s.error.is_some()));
        assert!(sweep.breakpoints.is_empty());
    }

    #[test]
    fn monotone_welfare_has_no_slope_breakpoints() {
        let market = presets::b1_market(1.0);
        // Sample only the increasing branch beyond C2.
        let grid: Vec<f64> = (0..40).map(|i| 0.75 + i as f64 * 0.05).collect();
        let sweep = sweep_capacity(&market, &grid).unwrap();
        assert!(sweep
            .breakpoints
            .iter()
            .all(|b| matches!(b.kind, BreakpointKind::RegimeSwitch)));
    }
}
