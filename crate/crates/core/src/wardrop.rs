//! Demand allocation at announced prices.
//!
//! Customers of each class pick the option (a licensed band or the shared
//! unlicensed band) with the lowest delivered price `price + weight * latency`.
//! The allocation equalizes delivered prices across used options and leaves
//! every unused option at least as expensive, with the served mass pinned by
//! the inverse demand curve.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DemandSpec, LatencySpec, MarketConfig};
use crate::{FEASIBILITY_TOL, MASS_TOL, PATTERN_FALLBACK_TOL};

/// Announced prices: licensed per incumbent, unlicensed per offering SP.
/// An SP absent from `unlicensed` does not offer unlicensed service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceProfile {
    pub licensed: BTreeMap<String, f64>,
    pub unlicensed: BTreeMap<String, f64>,
}

impl PriceProfile {
    /// Profile with the given licensed prices (in incumbent order) and every
    /// SP offering unlicensed service at price zero.
    pub fn with_zero_unlicensed(market: &MarketConfig, licensed: &[f64]) -> Self {
        let mut profile = PriceProfile::default();
        let mut it = licensed.iter();
        for p in &market.providers {
            if p.is_incumbent() {
                let price = *it.next().expect("one licensed price per incumbent");
                profile.licensed.insert(p.id.clone(), price);
            }
            profile.unlicensed.insert(p.id.clone(), 0.0);
        }
        profile
    }

    pub fn licensed_price(&self, id: &str) -> Option<f64> {
        self.licensed.get(id).copied()
    }
}

/// Per-provider, per-class customer masses in each band.
///
/// Indexed `[provider][class]` in market order; aggregates derived on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub licensed: Vec<Vec<f64>>,
    pub unlicensed: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn empty(market: &MarketConfig) -> Self {
        let zeros = vec![vec![0.0; market.class_count()]; market.providers.len()];
        Self {
            licensed: zeros.clone(),
            unlicensed: zeros,
        }
    }

    /// Total load in provider `i`'s licensed band.
    pub fn licensed_load(&self, i: usize) -> f64 {
        self.licensed[i].iter().sum()
    }

    /// Total load in the unlicensed band across all SPs and classes.
    pub fn unlicensed_total(&self) -> f64 {
        self.unlicensed
            .iter()
            .map(|per| per.iter().sum::<f64>())
            .sum()
    }

    /// Mass of class `t` in the unlicensed band across all SPs.
    pub fn unlicensed_class_total(&self, t: usize) -> f64 {
        self.unlicensed.iter().map(|per| per[t]).sum()
    }

    /// Total served mass of class `t` across all bands.
    pub fn served(&self, t: usize) -> f64 {
        self.licensed.iter().map(|per| per[t]).sum::<f64>() + self.unlicensed_class_total(t)
    }

    /// Mass served by provider `i` in its licensed band.
    pub fn provider_licensed(&self, i: usize) -> f64 {
        self.licensed_load(i)
    }

    /// Mass served by provider `i` in the unlicensed band.
    pub fn provider_unlicensed(&self, i: usize) -> f64 {
        self.unlicensed[i].iter().sum()
    }
}

/// Per-class delivered price faced by customers at an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveredPrices {
    pub per_class: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum WardropError {
    #[error("missing licensed price for incumbent '{0}'")]
    MissingLicensedPrice(String),
    #[error("non-finite price for provider '{0}'")]
    NonFinitePrice(String),
    #[error("no consistent assignment pattern (best violation {max_violation:.3e}); this is a solver bug")]
    NoConsistentPattern { max_violation: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

/// One service option a customer can buy: a licensed band or the (merged)
/// unlicensed band at its lowest offered price.
#[derive(Debug, Clone)]
pub(crate) struct BandOption {
    pub price: f64,
    pub latency: LatencySpec,
    /// Licensed: the owning provider. Unlicensed: every SP tied at the
    /// minimum price (mass is split equally among them).
    pub kind: OptionKind,
}

#[derive(Debug, Clone)]
pub(crate) enum OptionKind {
    Licensed(usize),
    Unlicensed { tied: Vec<usize> },
}

impl BandOption {
    pub fn delivered(&self, weight: f64, load: f64) -> f64 {
        self.price + weight * self.latency.eval(load)
    }

    fn entry_cost(&self, weight: f64) -> f64 {
        self.price + weight * self.latency.offset
    }
}

/// Build the option list for a market and price profile. Only the SPs tied
/// at the minimum unlicensed price can attract unlicensed customers.
pub(crate) fn build_options(
    market: &MarketConfig,
    prices: &PriceProfile,
) -> Result<Vec<BandOption>, WardropError> {
    let mut options = Vec::new();
    for (i, sp) in market.providers.iter().enumerate() {
        if let Some(lat) = sp.licensed_latency_spec() {
            let price = prices
                .licensed
                .get(&sp.id)
                .copied()
                .ok_or_else(|| WardropError::MissingLicensedPrice(sp.id.clone()))?;
            if !price.is_finite() || price < 0.0 {
                return Err(WardropError::NonFinitePrice(sp.id.clone()));
            }
            options.push(BandOption {
                price,
                latency: *lat,
                kind: OptionKind::Licensed(i),
            });
        }
    }
    if let Some(latency) = market.unlicensed.effective_latency() {
        let mut offers: Vec<(usize, f64)> = Vec::new();
        for (i, sp) in market.providers.iter().enumerate() {
            if let Some(&p) = prices.unlicensed.get(&sp.id) {
                if !p.is_finite() || p < 0.0 {
                    return Err(WardropError::NonFinitePrice(sp.id.clone()));
                }
                offers.push((i, p));
            }
        }
        if !offers.is_empty() {
            let min_price = offers.iter().map(|&(_, p)| p).fold(f64::INFINITY, f64::min);
            let tied: Vec<usize> = offers
                .iter()
                .filter(|&&(_, p)| p <= min_price + 1e-12)
                .map(|&(i, _)| i)
                .collect();
            options.push(BandOption {
                price: min_price,
                latency,
                kind: OptionKind::Unlicensed { tied },
            });
        }
    }
    Ok(options)
}

/// Compute the demand allocation induced by `prices`.
///
/// Single-class markets use an exact level solve on the common delivered
/// price (piecewise-linear when all latencies are linear, bisection
/// otherwise). Two-class markets enumerate assignment patterns and solve the
/// induced linear system, which requires linear latencies.
pub fn allocate(market: &MarketConfig, prices: &PriceProfile) -> Result<Allocation, WardropError> {
    let options = build_options(market, prices)?;
    match market.class_count() {
        1 => allocate_single_class(market, &options),
        2 => {
            if market.all_latencies_linear() {
                allocate_two_class_linear(market, &options)
            } else {
                Err(WardropError::Unsupported(
                    "two customer classes with nonlinear latencies".into(),
                ))
            }
        }
        n => Err(WardropError::Unsupported(format!("{n} customer classes"))),
    }
}

/// Distribute option loads into an Allocation, splitting unlicensed mass
/// equally among the tied SPs.
pub(crate) fn distribute(
    market: &MarketConfig,
    options: &[BandOption],
    loads: &[Vec<f64>], // [option][class]
) -> Allocation {
    let mut alloc = Allocation::empty(market);
    for (o, opt) in options.iter().enumerate() {
        match &opt.kind {
            OptionKind::Licensed(i) => {
                for (t, &m) in loads[o].iter().enumerate() {
                    alloc.licensed[*i][t] = m.max(0.0);
                }
            }
            OptionKind::Unlicensed { tied } => {
                let share = 1.0 / tied.len() as f64;
                for &i in tied {
                    for (t, &m) in loads[o].iter().enumerate() {
                        alloc.unlicensed[i][t] = m.max(0.0) * share;
                    }
                }
            }
        }
    }
    alloc
}

// ---------------------------------------------------------------------------
// Single class: level solve on the common delivered price.
// ---------------------------------------------------------------------------

fn allocate_single_class(
    market: &MarketConfig,
    options: &[BandOption],
) -> Result<Allocation, WardropError> {
    let class = &market.classes[0];
    let weight = class.weight;
    let min_entry = options
        .iter()
        .map(|o| o.entry_cost(weight))
        .fold(f64::INFINITY, f64::min);

    // Load absorbed by each option when the market-delivered price is `level`.
    let loads_at = |level: f64| -> Vec<f64> {
        options
            .iter()
            .map(|o| o.latency.invert((level - o.price) / weight))
            .collect()
    };
    let total_at = |level: f64| -> f64 { loads_at(level).iter().sum() };

    let all_linear = options.iter().all(|o| o.latency.is_linear());

    let level = match class.demand {
        DemandSpec::Box { valuation, mass } => {
            if valuation <= min_entry {
                return Ok(Allocation::empty(market));
            }
            if total_at(valuation) <= mass {
                // Partial (or exact) coverage: marginal customer pins the
                // delivered price at the valuation.
                valuation
            } else {
                // Full coverage: delivered price falls below the valuation.
                let target = |level: f64| total_at(level) - mass;
                solve_level(
                    options,
                    weight,
                    min_entry,
                    valuation,
                    all_linear,
                    target,
                    |seg| {
                        // On a linear segment total = slope*level - intercept.
                        (mass + seg.intercept) / seg.slope
                    },
                )
            }
        }
        DemandSpec::Linear {
            intercept,
            elasticity,
        } => {
            if intercept <= min_entry {
                return Ok(Allocation::empty(market));
            }
            let target = |level: f64| total_at(level) - (intercept - level) / elasticity;
            solve_level(
                options,
                weight,
                min_entry,
                intercept,
                all_linear,
                target,
                |seg| (intercept / elasticity + seg.intercept) / (seg.slope + 1.0 / elasticity),
            )
        }
    };

    let loads: Vec<Vec<f64>> = loads_at(level).into_iter().map(|m| vec![m]).collect();
    Ok(distribute(market, options, &loads))
}

struct LinearSegment {
    /// d(total load)/d(level) over the segment.
    slope: f64,
    /// total(level) = slope * level - intercept on the segment.
    intercept: f64,
}

/// Find the delivered-price level in `(lo, hi)` at which `excess` crosses
/// zero. `excess` is strictly increasing. Exact segment walk for linear
/// latencies, bisection otherwise.
fn solve_level(
    options: &[BandOption],
    weight: f64,
    lo: f64,
    hi: f64,
    all_linear: bool,
    excess: impl Fn(f64) -> f64,
    segment_solution: impl Fn(&LinearSegment) -> f64,
) -> f64 {
    if all_linear {
        // Breakpoints where options enter, in ascending order.
        let mut entries: Vec<f64> = options
            .iter()
            .map(|o| o.entry_cost(weight))
            .filter(|e| *e < hi)
            .collect();
        entries.sort_by(|a, b| a.partial_cmp(b).unwrap());
        entries.push(hi);
        let mut slope = 0.0;
        let mut intercept = 0.0;
        for w in entries.windows(2) {
            let (start, end) = (w[0], w[1]);
            slope = 0.0;
            intercept = 0.0;
            for o in options {
                let e = o.entry_cost(weight);
                if e <= start + 1e-15 {
                    let s = 1.0 / (weight * o.latency.slope);
                    slope += s;
                    intercept += e * s;
                }
            }
            let candidate = segment_solution(&LinearSegment { slope, intercept });
            if candidate >= start - 1e-12 && candidate <= end + 1e-12 {
                return candidate.min(hi).max(lo);
            }
        }
        // Crossing past the last breakpoint (possible for linear demand).
        segment_solution(&LinearSegment { slope, intercept })
            .min(hi)
            .max(lo)
    } else {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

// ---------------------------------------------------------------------------
// Two classes, linear latencies: pattern enumeration.
// ---------------------------------------------------------------------------

/// Demand-side state of one class inside a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClassState {
    /// No customer of the class is served.
    Unserved,
    /// Marginal customers stay out: delivered price equals the choke price.
    Interior,
    /// Every customer is served (box: mass boundary).
    Boundary,
}

#[derive(Debug, Clone, Copy)]
struct ClassPattern {
    /// Bitmask over options used by the class (0 when unserved).
    mask: u32,
    state: ClassState,
}

pub(crate) struct PatternSystem {
    matrix: DMatrix<f64>,
    /// rhs = base + price_coeff * p for the scanned incumbent price.
    rhs_base: DVector<f64>,
    rhs_price: DVector<f64>,
    /// Variable layout: per class, the used option indices; then one
    /// delivered-price variable per served class.
    class_vars: Vec<Vec<usize>>, // [class] -> option indices
    level_var: Vec<Option<usize>>,
    n_vars: usize,
}

fn states_for(demand: &DemandSpec) -> &'static [ClassState] {
    match demand {
        // Boundary first: full-service patterns dominate the solved regions.
        DemandSpec::Box { .. } => &[ClassState::Boundary, ClassState::Interior],
        DemandSpec::Linear { .. } => &[ClassState::Interior],
    }
}

fn build_pattern_system(
    market: &MarketConfig,
    options: &[BandOption],
    pattern: &[ClassPattern],
    scanned_option: Option<usize>,
) -> PatternSystem {
    let n_classes = market.class_count();
    let mut class_vars: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    let mut n_vars = 0;
    for (t, cp) in pattern.iter().enumerate() {
        for o in 0..options.len() {
            if cp.mask & (1 << o) != 0 {
                class_vars[t].push(o);
                n_vars += 1;
            }
        }
    }
    let mut level_var = vec![None; n_classes];
    for (t, cp) in pattern.iter().enumerate() {
        if cp.state != ClassState::Unserved {
            level_var[t] = Some(n_vars);
            n_vars += 1;
        }
    }

    let mut matrix = DMatrix::zeros(n_vars, n_vars);
    let mut rhs_base = DVector::zeros(n_vars);
    let mut rhs_price = DVector::zeros(n_vars);
    let mut row = 0;

    // Mass variable index for (class, option) pairs.
    let var_of = |t: usize, o: usize, class_vars: &[Vec<usize>]| -> usize {
        let mut idx = 0;
        for (tt, vars) in class_vars.iter().enumerate() {
            for &oo in vars {
                if tt == t && oo == o {
                    return idx;
                }
                idx += 1;
            }
        }
        unreachable!("variable lookup for unused (class, option) pair")
    };

    // Delivered-price rows: price_o + w_t*(offset_o + slope_o * X_o) = level_t.
    for (t, cp) in pattern.iter().enumerate() {
        let w = market.classes[t].weight;
        for &o in &class_vars[t] {
            let opt = &options[o];
            for (tt, cp2) in pattern.iter().enumerate() {
                if cp2.mask & (1 << o) != 0 {
                    matrix[(row, var_of(tt, o, &class_vars))] = w * opt.latency.slope;
                }
            }
            matrix[(row, level_var[t].expect("served class has a level"))] = -1.0;
            rhs_base[row] = -opt.price - w * opt.latency.offset;
            if scanned_option == Some(o) {
                // Scanned price replaces the constant: rhs = -(p) - w*offset.
                rhs_base[row] = -w * opt.latency.offset;
                rhs_price[row] = -1.0;
            }
            row += 1;
        }
        // Demand-side row.
        match cp.state {
            ClassState::Unserved => {}
            ClassState::Interior => match market.classes[t].demand {
                DemandSpec::Box { valuation, .. } => {
                    matrix[(row, level_var[t].unwrap())] = 1.0;
                    rhs_base[row] = valuation;
                    row += 1;
                }
                DemandSpec::Linear {
                    intercept,
                    elasticity,
                } => {
                    matrix[(row, level_var[t].unwrap())] = 1.0;
                    for &o in &class_vars[t] {
                        matrix[(row, var_of(t, o, &class_vars))] = elasticity;
                    }
                    rhs_base[row] = intercept;
                    row += 1;
                }
            },
            ClassState::Boundary => {
                let mass = match market.classes[t].demand {
                    DemandSpec::Box { mass, .. } => mass,
                    DemandSpec::Linear { .. } => unreachable!("linear demand has no boundary"),
                };
                for &o in &class_vars[t] {
                    matrix[(row, var_of(t, o, &class_vars))] = 1.0;
                }
                rhs_base[row] = mass;
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, n_vars);

    PatternSystem {
        matrix,
        rhs_base,
        rhs_price,
        class_vars,
        level_var,
        n_vars,
    }
}

pub(crate) struct PatternSolution {
    /// loads[option][class]
    pub loads: Vec<Vec<f64>>,
    /// Delivered-price level per class (choke price when unserved).
    pub levels: Vec<f64>,
    /// Worst constraint violation of the solution.
    pub violation: f64,
}

impl PatternSystem {
    fn solve(&self, price: f64) -> Option<DVector<f64>> {
        if self.n_vars == 0 {
            return Some(DVector::zeros(0));
        }
        let rhs = &self.rhs_base + &self.rhs_price * price;
        if let Some(sol) = self.matrix.clone().lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol);
            }
        }
        // Degenerate pattern: take the minimum-norm least-squares solution
        // and let the residual check reject it if it is not a true solution.
        let svd = self.matrix.clone().svd(true, true);
        let sol = svd.solve(&rhs, 1e-12).ok()?;
        let residual = (&self.matrix * &sol - &rhs).amax();
        if residual > 1e-9 || sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(sol)
    }
}

fn evaluate_pattern(
    market: &MarketConfig,
    options: &[BandOption],
    pattern: &[ClassPattern],
    system: &PatternSystem,
    solution: &DVector<f64>,
) -> PatternSolution {
    let n_classes = market.class_count();
    let mut loads = vec![vec![0.0; n_classes]; options.len()];
    let mut idx = 0;
    let mut violation: f64 = 0.0;
    for (t, vars) in system.class_vars.iter().enumerate() {
        for &o in vars {
            let m = solution[idx];
            idx += 1;
            violation = violation.max(-m);
            loads[o][t] = m;
        }
    }
    let levels: Vec<f64> = (0..n_classes)
        .map(|t| match system.level_var[t] {
            Some(v) => solution[v],
            None => market.classes[t].demand.choke_price(),
        })
        .collect();

    // Trial solutions may carry slightly negative masses (the violation is
    // recorded); clamp before evaluating latencies.
    let option_load = |o: usize| -> f64 { loads[o].iter().sum::<f64>().max(0.0) };

    for (t, cp) in pattern.iter().enumerate() {
        let class = &market.classes[t];
        let served: f64 = (0..options.len()).map(|o| loads[o][t]).sum();
        match cp.state {
            ClassState::Unserved => {
                // Every option must be at least as expensive as the choke price.
                for (o, opt) in options.iter().enumerate() {
                    let d = opt.delivered(class.weight, option_load(o));
                    violation = violation.max(class.demand.choke_price() - d);
                }
            }
            ClassState::Interior => {
                violation = violation.max(served - class.demand.mass_bound());
                // With linear demand the level itself encodes feasibility.
                if let DemandSpec::Linear { intercept, .. } = class.demand {
                    violation = violation.max(levels[t] - intercept);
                    violation = violation.max(-served);
                }
            }
            ClassState::Boundary => {
                violation = violation.max(levels[t] - class.demand.choke_price());
            }
        }
        if cp.state != ClassState::Unserved {
            // Unused options may not undercut the class level.
            for (o, opt) in options.iter().enumerate() {
                if cp.mask & (1 << o) == 0 {
                    let d = opt.delivered(class.weight, option_load(o));
                    violation = violation.max(levels[t] - d);
                }
            }
        }
    }

    PatternSolution {
        loads,
        levels,
        violation,
    }
}

/// All class patterns in deterministic order: fuller option subsets first,
/// boundary before interior, unserved last.
fn enumerate_class_patterns(demand: &DemandSpec, n_options: usize) -> Vec<ClassPattern> {
    let mut masks: Vec<u32> = (1..(1u32 << n_options)).collect();
    masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
    let mut out = Vec::new();
    for state in states_for(demand) {
        for &mask in &masks {
            out.push(ClassPattern {
                mask,
                state: *state,
            });
        }
    }
    out.push(ClassPattern {
        mask: 0,
        state: ClassState::Unserved,
    });
    out
}

fn allocate_two_class_linear(
    market: &MarketConfig,
    options: &[BandOption],
) -> Result<Allocation, WardropError> {
    let pats0 = enumerate_class_patterns(&market.classes[0].demand, options.len());
    let pats1 = enumerate_class_patterns(&market.classes[1].demand, options.len());

    let mut best: Option<(f64, PatternSolution)> = None;
    for p0 in &pats0 {
        for p1 in &pats1 {
            let pattern = [*p0, *p1];
            let system = build_pattern_system(market, options, &pattern, None);
            let Some(sol) = system.solve(0.0) else {
                continue;
            };
            let eval = evaluate_pattern(market, options, &pattern, &system, &sol);
            if eval.violation <= FEASIBILITY_TOL {
                return Ok(distribute(market, options, &eval.loads));
            }
            if best.as_ref().is_none_or(|(v, _)| eval.violation < *v) {
                best = Some((eval.violation, eval));
            }
        }
    }
    match best {
        Some((violation, eval)) if violation <= PATTERN_FALLBACK_TOL => {
            Ok(distribute(market, options, &eval.loads))
        }
        Some((violation, _)) => Err(WardropError::NoConsistentPattern {
            max_violation: violation,
        }),
        None => Err(WardropError::NoConsistentPattern {
            max_violation: f64::INFINITY,
        }),
    }
}

// ---------------------------------------------------------------------------
// Affine pattern scan: masses and levels as affine functions of one
// incumbent's licensed price, used by the closed-form best responses.
// ---------------------------------------------------------------------------

/// One assignment pattern whose solution is affine in the scanned price `p`:
/// value(p) = base + slope * p, valid for p in [lo, hi].
#[derive(Debug, Clone)]
pub(crate) struct AffineRegime {
    /// Licensed load of the scanned incumbent: (base, slope).
    pub own_load: (f64, f64),
    pub lo: f64,
    pub hi: f64,
}

/// Scan all assignment patterns treating incumbent `inc_idx`'s licensed price
/// as a free variable (all other prices fixed by `prices`). Returns the
/// affine regimes in which the incumbent serves a positive mass.
pub(crate) fn affine_price_regimes(
    market: &MarketConfig,
    prices: &PriceProfile,
    inc_idx: usize,
) -> Result<Vec<AffineRegime>, WardropError> {
    let options = build_options(market, prices)?;
    let scanned = options
        .iter()
        .position(|o| matches!(o.kind, OptionKind::Licensed(i) if i == inc_idx))
        .ok_or_else(|| WardropError::Unsupported("scanned provider is not an incumbent".into()))?;
    if !market.all_latencies_linear() {
        return Err(WardropError::Unsupported(
            "affine scan requires linear latencies".into(),
        ));
    }

    let per_class: Vec<Vec<ClassPattern>> = market
        .classes
        .iter()
        .map(|c| enumerate_class_patterns(&c.demand, options.len()))
        .collect();
    let mut combos: Vec<Vec<ClassPattern>> = vec![Vec::new()];
    for pats in &per_class {
        let mut next = Vec::with_capacity(combos.len() * pats.len());
        for combo in &combos {
            for p in pats {
                let mut c = combo.clone();
                c.push(*p);
                next.push(c);
            }
        }
        combos = next;
    }

    let price_cap = market
        .classes
        .iter()
        .map(|c| c.demand.choke_price())
        .fold(0.0, f64::max);

    let mut regimes = Vec::new();
    for pattern in &combos {
        // Only patterns where the scanned option carries some class.
        if pattern.iter().all(|cp| cp.mask & (1 << scanned) == 0) {
            continue;
        }
        let system = build_pattern_system(market, &options, pattern, Some(scanned));
        let (Some(at0), Some(at1)) = (system.solve(0.0), system.solve(1.0)) else {
            continue;
        };

        let eval0 = evaluate_pattern(market, &options, pattern, &system, &at0);
        let eval1 = evaluate_pattern(market, &options, pattern, &system, &at1);

        // Affine interpolation of loads and levels.
        let n_classes = market.class_count();
        let mut lo: f64 = 0.0;
        let mut hi: f64 = price_cap;
        let mut add_constraint = |base: f64, slope: f64| {
            // base + slope * p >= 0
            if slope.abs() < 1e-13 {
                if base < -1e-10 {
                    lo = 1.0;
                    hi = 0.0;
                }
            } else if slope > 0.0 {
                lo = lo.max(-base / slope);
            } else {
                hi = hi.min(-base / slope);
            }
        };

        let option_load = |eval: &PatternSolution, o: usize| -> f64 {
            eval.loads[o].iter().sum::<f64>().max(0.0)
        };

        // Masses stay nonnegative.
        for o in 0..options.len() {
            for (t, cp) in pattern.iter().enumerate() {
                if cp.mask & (1 << o) != 0 {
                    let base = eval0.loads[o][t];
                    let slope = eval1.loads[o][t] - base;
                    add_constraint(base, slope);
                }
            }
        }
        for (t, cp) in pattern.iter().enumerate() {
            let class = &market.classes[t];
            let w = class.weight;
            match cp.state {
                ClassState::Interior => {
                    // Served mass within bound.
                    let s0: f64 = (0..options.len()).map(|o| eval0.loads[o][t]).sum();
                    let s1: f64 = (0..options.len()).map(|o| eval1.loads[o][t]).sum();
                    add_constraint(class.demand.mass_bound() - s0, -(s1 - s0));
                    if matches!(class.demand, DemandSpec::Linear { .. }) {
                        add_constraint(s0, s1 - s0);
                    }
                }
                ClassState::Boundary => {
                    add_constraint(
                        class.demand.choke_price() - eval0.levels[t],
                        -(eval1.levels[t] - eval0.levels[t]),
                    );
                }
                ClassState::Unserved => {
                    for (o, opt) in options.iter().enumerate() {
                        let mut d0 = opt.delivered(w, option_load(&eval0, o));
                        let mut d1 = opt.delivered(w, option_load(&eval1, o));
                        if o == scanned {
                            // The scanned option's price is p, not opt.price.
                            d0 -= opt.price;
                            d1 = d1 - opt.price + 1.0;
                        }
                        add_constraint(d0 - class.demand.choke_price(), d1 - d0);
                    }
                }
            }
            if cp.state != ClassState::Unserved {
                for (o, opt) in options.iter().enumerate() {
                    if cp.mask & (1 << o) == 0 {
                        let mut d0 = opt.delivered(w, option_load(&eval0, o));
                        let mut d1 = opt.delivered(w, option_load(&eval1, o));
                        if o == scanned {
                            // The scanned option's price is p, not opt.price.
                            d0 -= opt.price;
                            d1 = d1 - opt.price + 1.0;
                        }
                        add_constraint(
                            d0 - eval0.levels[t],
                            (d1 - d0) - (eval1.levels[t] - eval0.levels[t]),
                        );
                    }
                }
            }
        }

        if hi < lo - 1e-12 {
            continue;
        }
        // Hairline intervals collapse to a point.
        let hi = hi.max(lo);
        let own0: f64 = (0..n_classes).map(|t| eval0.loads[scanned][t]).sum();
        let own1: f64 = (0..n_classes).map(|t| eval1.loads[scanned][t]).sum();
        regimes.push(AffineRegime {
            own_load: (own0, own1 - own0),
            lo,
            hi,
        });
    }
    Ok(regimes)
}

// ---------------------------------------------------------------------------
// Delivered prices and residual.
// ---------------------------------------------------------------------------

/// Delivered price per class: minimum over used options, or minimum over all
/// available options when the class is unserved.
pub fn delivered_prices(
    market: &MarketConfig,
    prices: &PriceProfile,
    allocation: &Allocation,
) -> Result<DeliveredPrices, WardropError> {
    let options = build_options(market, prices)?;
    let loads = option_loads(&options, allocation);
    let mut per_class = Vec::with_capacity(market.class_count());
    for (t, class) in market.classes.iter().enumerate() {
        let mut used_min = f64::INFINITY;
        let mut all_min = f64::INFINITY;
        for (o, opt) in options.iter().enumerate() {
            let d = opt.delivered(class.weight, loads[o]);
            all_min = all_min.min(d);
            if option_class_mass(opt, allocation, t) > MASS_TOL {
                used_min = used_min.min(d);
            }
        }
        per_class.push(if used_min.is_finite() {
            used_min
        } else {
            all_min
        });
    }
    Ok(DeliveredPrices { per_class })
}

fn option_loads(options: &[BandOption], allocation: &Allocation) -> Vec<f64> {
    options
        .iter()
        .map(|opt| match &opt.kind {
            OptionKind::Licensed(i) => allocation.licensed_load(*i),
            OptionKind::Unlicensed { .. } => allocation.unlicensed_total(),
        })
        .collect()
}

fn option_class_mass(opt: &BandOption, allocation: &Allocation, t: usize) -> f64 {
    match &opt.kind {
        OptionKind::Licensed(i) => allocation.licensed[*i][t],
        OptionKind::Unlicensed { .. } => allocation.unlicensed_class_total(t),
    }
}

/// Maximum violation of the equal-delivered-price conditions: used options
/// must sit exactly at the class level, unused options at or above it, and
/// the served mass must respect the demand curve. Zero (within tolerance)
/// for any `allocate` output.
pub fn wardrop_residual(
    market: &MarketConfig,
    prices: &PriceProfile,
    allocation: &Allocation,
) -> Result<f64, WardropError> {
    let options = build_options(market, prices)?;
    let loads = option_loads(&options, allocation);
    let mut residual: f64 = 0.0;

    for row in allocation
        .licensed
        .iter()
        .chain(allocation.unlicensed.iter())
    {
        for &m in row {
            residual = residual.max(-m);
        }
    }

    for (t, class) in market.classes.iter().enumerate() {
        let served = allocation.served(t);
        let delivered: Vec<f64> = options
            .iter()
            .enumerate()
            .map(|(o, opt)| opt.delivered(class.weight, loads[o]))
            .collect();
        let used: Vec<bool> = options
            .iter()
            .map(|opt| option_class_mass(opt, allocation, t) > MASS_TOL)
            .collect();

        let bound = class.demand.mass_bound();
        residual = residual.max(served - bound);

        let level = if served <= MASS_TOL {
            // Unserved: every option must cost at least the choke price.
            for &d in &delivered {
                residual = residual.max(class.demand.price_at(0.0) - d);
            }
            continue;
        } else if served < bound - MASS_TOL {
            class.demand.price_at(served)
        } else {
            // Full coverage: the level is whatever the used options attain,
            // capped by the inverse demand at the boundary.
            let min_used = delivered
                .iter()
                .zip(&used)
                .filter(|(_, &u)| u)
                .map(|(&d, _)| d)
                .fold(f64::INFINITY, f64::min);
            residual = residual.max(min_used - class.demand.price_at(served.min(bound)));
            min_used
        };

        for (o, &d) in delivered.iter().enumerate() {
            if used[o] {
                residual = residual.max((d - level).abs());
            } else {
                residual = residual.max(level - d);
            }
        }
    }
    Ok(residual)
}
