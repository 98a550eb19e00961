//! Domain types for the market model: latency functions, demand curves,
//! service providers, and configuration validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Congestion-cost function `offset + slope * load^exponent`.
///
/// `exponent = 1` is the linear case used by all worked scenarios; larger
/// exponents give the general increasing convex family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySpec {
    /// Fixed connection cost incurred at any positive load.
    pub offset: f64,
    /// Marginal congestion coefficient, must be positive.
    pub slope: f64,
    /// Convexity exponent, must be >= 1.
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_exponent() -> f64 {
    1.0
}

impl LatencySpec {
    pub fn linear(offset: f64, slope: f64) -> Self {
        Self {
            offset,
            slope,
            exponent: 1.0,
        }
    }

    /// Congestion cost at the given load.
    pub fn eval(&self, load: f64) -> f64 {
        debug_assert!(load >= 0.0);
        if self.exponent == 1.0 {
            self.offset + self.slope * load
        } else {
            self.offset + self.slope * load.powf(self.exponent)
        }
    }

    /// Load at which the congestion cost reaches `cost`, or 0 if `cost`
    /// is below the offset.
    pub fn invert(&self, cost: f64) -> f64 {
        let excess = cost - self.offset;
        if excess <= 0.0 {
            return 0.0;
        }
        let base = excess / self.slope;
        if self.exponent == 1.0 {
            base
        } else {
            base.powf(1.0 / self.exponent)
        }
    }

    pub fn is_linear(&self) -> bool {
        self.exponent == 1.0
    }
}

/// The shared band: capacity `C` plus a latency whose effective slope is
/// `slope / C`. Capacity 0 means the band is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlicensedBand {
    pub capacity: f64,
    pub latency: LatencySpec,
}

impl UnlicensedBand {
    pub fn new(capacity: f64, latency: LatencySpec) -> Self {
        Self { capacity, latency }
    }

    /// The absent band (capacity 0).
    pub fn absent() -> Self {
        Self {
            capacity: 0.0,
            latency: LatencySpec::linear(0.0, 1.0),
        }
    }

    pub fn is_absent(&self) -> bool {
        self.capacity <= 0.0
    }

    /// Capacity-scaled latency with effective slope `slope / capacity`.
    /// Absent bands evaluate to +inf at any load.
    pub fn effective_latency(&self) -> Option<LatencySpec> {
        if self.is_absent() {
            return None;
        }
        Some(LatencySpec {
            offset: self.latency.offset,
            slope: self.latency.slope / self.capacity,
            exponent: self.latency.exponent,
        })
    }
}

/// Inverse demand curve for one customer class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandSpec {
    /// Constant valuation `W` up to total mass `Q`, zero beyond.
    Box { valuation: f64, mass: f64 },
    /// `P(q) = max(intercept - elasticity * q, 0)`.
    Linear { intercept: f64, elasticity: f64 },
}

impl DemandSpec {
    /// Inverse demand P(q).
    pub fn price_at(&self, q: f64) -> f64 {
        debug_assert!(q >= 0.0);
        match *self {
            DemandSpec::Box { valuation, mass } => {
                if q <= mass {
                    valuation
                } else {
                    0.0
                }
            }
            DemandSpec::Linear {
                intercept,
                elasticity,
            } => (intercept - elasticity * q).max(0.0),
        }
    }

    /// Highest delivered price at which any customer buys, `P(0)`.
    pub fn choke_price(&self) -> f64 {
        match *self {
            DemandSpec::Box { valuation, .. } => valuation,
            DemandSpec::Linear { intercept, .. } => intercept,
        }
    }

    /// Upper bound on the served mass: `Q` for box demand, the zero-price
    /// quantity for linear demand.
    pub fn mass_bound(&self) -> f64 {
        match *self {
            DemandSpec::Box { mass, .. } => mass,
            DemandSpec::Linear {
                intercept,
                elasticity,
            } => intercept / elasticity,
        }
    }

    /// Gross consumption value of the first `q` customers.
    pub fn gross_value(&self, q: f64) -> f64 {
        match *self {
            DemandSpec::Box { valuation, mass } => valuation * q.min(mass),
            DemandSpec::Linear {
                intercept,
                elasticity,
            } => {
                let q = q.min(intercept / elasticity);
                intercept * q - 0.5 * elasticity * q * q
            }
        }
    }
}

/// One customer class with its congestion weight and demand curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CustomerClass {
    pub weight: f64,
    pub demand: DemandSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProviderKind {
    /// Holds an exclusive band with the given latency.
    Incumbent { licensed: LatencySpec },
    /// Serves only through the unlicensed band.
    Entrant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProvider {
    pub id: String,
    #[serde(flatten)]
    pub kind: ProviderKind,
}

impl ServiceProvider {
    pub fn incumbent(id: &str, licensed: LatencySpec) -> Self {
        Self {
            id: id.to_string(),
            kind: ProviderKind::Incumbent { licensed },
        }
    }

    pub fn entrant(id: &str) -> Self {
        Self {
            id: id.to_string(),
            kind: ProviderKind::Entrant,
        }
    }

    pub fn is_incumbent(&self) -> bool {
        matches!(self.kind, ProviderKind::Incumbent { .. })
    }

    pub fn licensed_latency_spec(&self) -> Option<&LatencySpec> {
        match &self.kind {
            ProviderKind::Incumbent { licensed } => Some(licensed),
            ProviderKind::Entrant => None,
        }
    }
}

/// Full market description: providers, the unlicensed band, and one or two
/// customer classes (ordered high-weight first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub providers: Vec<ServiceProvider>,
    pub unlicensed: UnlicensedBand,
    pub classes: Vec<CustomerClass>,
}

impl MarketConfig {
    /// Copy of this market with the unlicensed capacity replaced by `c`.
    pub fn with_capacity(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.unlicensed.capacity = c;
        m
    }

    pub fn incumbent_indices(&self) -> Vec<usize> {
        self.providers
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_incumbent())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn incumbent_count(&self) -> usize {
        self.providers.iter().filter(|p| p.is_incumbent()).count()
    }

    pub fn provider_index(&self, id: &str) -> Option<usize> {
        self.providers.iter().position(|p| p.id == id)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// True when every latency in the market (licensed and unlicensed) is linear.
    pub fn all_latencies_linear(&self) -> bool {
        let licensed_linear = self
            .providers
            .iter()
            .filter_map(|p| p.licensed_latency_spec())
            .all(|l| l.is_linear());
        licensed_linear && self.unlicensed.latency.is_linear()
    }

    pub fn parse_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("provider '{0}' has no licensed band")]
    NoLicensedBand(String),
}

/// Congestion cost in `sp`'s licensed band at the given load.
pub fn licensed_latency(sp: &ServiceProvider, load: f64) -> Result<f64, ModelError> {
    match sp.licensed_latency_spec() {
        Some(spec) => Ok(spec.eval(load)),
        None => Err(ModelError::NoLicensedBand(sp.id.clone())),
    }
}

/// Congestion cost in the unlicensed band at the given load; +inf when the
/// band is absent.
pub fn unlicensed_latency(band: &UnlicensedBand, load: f64) -> f64 {
    match band.effective_latency() {
        Some(spec) => spec.eval(load),
        None => f64::INFINITY,
    }
}

/// Inverse demand of a class at quantity `q`.
pub fn inverse_demand(class: &CustomerClass, q: f64) -> f64 {
    class.demand.price_at(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Configuration cannot be solved.
    Error,
    /// Outside the assumptions of the closed-form regime results.
    Warning,
    /// Informational observation about the regime.
    Note,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, field: &str, message: String) {
        self.violations.push(Violation {
            severity,
            field: field.to_string(),
            message,
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Warning)
    }

    pub fn is_structurally_valid(&self) -> bool {
        self.errors().count() == 0
    }
}

#[derive(Debug, Error)]
#[error("invalid market configuration: {0}")]
pub struct ValidationError(pub String);

/// Check structural invariants and regime assumptions.
///
/// Structural problems (no incumbent, non-positive slopes, bad class order)
/// are errors; regime assumptions from the welfare analysis only produce
/// warnings so configurations outside them stay explorable.
pub fn validate_market(config: &MarketConfig) -> ValidationReport {
    let mut report = ValidationReport::default();

    if config.incumbent_count() == 0 {
        report.push(
            Severity::Error,
            "providers",
            "market needs at least one incumbent".into(),
        );
    }
    if config.providers.is_empty() {
        report.push(
            Severity::Error,
            "providers",
            "provider list is empty".into(),
        );
    }
    for (i, p) in config.providers.iter().enumerate() {
        for (j, q) in config.providers.iter().enumerate().skip(i + 1) {
            if p.id == q.id {
                report.push(
                    Severity::Error,
                    "providers",
                    format!(
                        "duplicate provider id '{}' at positions {} and {}",
                        p.id, i, j
                    ),
                );
            }
        }
        if let Some(lat) = p.licensed_latency_spec() {
            check_latency(&mut report, &format!("providers[{i}].licensed"), lat);
        }
    }

    if config.unlicensed.capacity < 0.0 {
        report.push(
            Severity::Error,
            "unlicensed.capacity",
            format!(
                "capacity must be nonnegative, got {}",
                config.unlicensed.capacity
            ),
        );
    }
    check_latency(
        &mut report,
        "unlicensed.latency",
        &config.unlicensed.latency,
    );

    match config.classes.len() {
        1 | 2 => {}
        n => {
            report.push(
                Severity::Error,
                "classes",
                format!("expected 1 or 2 classes, got {n}"),
            );
        }
    }
    for (t, class) in config.classes.iter().enumerate() {
        let field = format!("classes[{t}]");
        if class.weight <= 0.0 {
            report.push(
                Severity::Error,
                &format!("{field}.weight"),
                format!("weight must be positive, got {}", class.weight),
            );
        }
        match class.demand {
            DemandSpec::Box { valuation, mass } => {
                if valuation <= 0.0 {
                    report.push(
                        Severity::Error,
                        &format!("{field}.demand.valuation"),
                        format!("valuation must be positive, got {valuation}"),
                    );
                }
                if mass <= 0.0 {
                    report.push(
                        Severity::Error,
                        &format!("{field}.demand.mass"),
                        format!("mass must be positive, got {mass}"),
                    );
                }
            }
            DemandSpec::Linear {
                intercept,
                elasticity,
            } => {
                if intercept <= 0.0 {
                    report.push(
                        Severity::Error,
                        &format!("{field}.demand.intercept"),
                        format!("intercept must be positive, got {intercept}"),
                    );
                }
                if elasticity <= 0.0 {
                    report.push(
                        Severity::Error,
                        &format!("{field}.demand.elasticity"),
                        format!("elasticity must be positive, got {elasticity}"),
                    );
                }
            }
        }
    }
    if config.classes.len() == 2 && config.classes[0].weight <= config.classes[1].weight {
        report.push(
            Severity::Error,
            "classes",
            format!(
                "classes must be ordered high-weight first: {} <= {}",
                config.classes[0].weight, config.classes[1].weight
            ),
        );
    }

    if !config.unlicensed.is_absent() && config.providers.len() < 2 {
        report.push(
            Severity::Warning,
            "providers",
            "unlicensed band with fewer than two providers: zero-price competition \
             reasoning needs at least two"
                .into(),
        );
    }

    // Regime checks for the single-incumbent homogeneous box family.
    if config.class_count() == 1 && config.incumbent_count() == 1 {
        if let DemandSpec::Box { valuation, mass } = config.classes[0].demand {
            let weight = config.classes[0].weight;
            let idx = config.incumbent_indices()[0];
            if let Some(lat) = config.providers[idx].licensed_latency_spec() {
                if lat.is_linear() && weight > 0.0 && lat.slope > 0.0 {
                    // Monopoly coverage at C = 0: x* = (W - lambda*T1) / (2*lambda*b).
                    let x_star = (valuation - weight * lat.offset) / (2.0 * weight * lat.slope);
                    if x_star >= mass {
                        report.push(
                            Severity::Warning,
                            "classes[0].demand",
                            format!(
                                "monopoly serves all demand at C=0 (unconstrained optimum \
                                 {x_star:.6} >= mass {mass}); the flat/decreasing/increasing \
                                 welfare shape does not apply"
                            ),
                        );
                    } else if x_star <= 0.0 {
                        report.push(
                            Severity::Warning,
                            "classes[0].demand",
                            "monopoly serves no demand at C=0 (valuation below connection cost)"
                                .into(),
                        );
                    } else {
                        report.push(
                            Severity::Note,
                            "classes[0].demand",
                            format!("partial coverage at C=0 (monopoly mass {x_star:.6})"),
                        );
                    }
                }
            }
            // Standing assumptions g(total) > l(0) and l(total) > g(0).
            if let Some(g) = config.unlicensed.effective_latency() {
                let idx = config.incumbent_indices()[0];
                if let Some(l) = config.providers[idx].licensed_latency_spec() {
                    if g.eval(mass) <= l.offset {
                        report.push(
                            Severity::Warning,
                            "unlicensed",
                            "g(Q) <= l(0): unlicensed band can absorb the whole market below \
                             the licensed connection cost"
                                .into(),
                        );
                    }
                    if l.eval(mass) <= g.offset {
                        report.push(
                            Severity::Warning,
                            "unlicensed.latency.offset",
                            "l(Q) <= g(0): licensed band can absorb the whole market below \
                             the unlicensed connection cost"
                                .into(),
                        );
                    }
                }
            }
        }
    }

    report
}

fn check_latency(report: &mut ValidationReport, field: &str, lat: &LatencySpec) {
    if lat.offset < 0.0 {
        report.push(
            Severity::Error,
            &format!("{field}.offset"),
            format!("offset must be nonnegative, got {}", lat.offset),
        );
    }
    if lat.slope <= 0.0 {
        report.push(
            Severity::Error,
            &format!("{field}.slope"),
            format!("slope must be positive, got {}", lat.slope),
        );
    }
    if lat.exponent < 1.0 {
        report.push(
            Severity::Error,
            &format!("{field}.exponent"),
            format!("exponent must be >= 1 for convexity, got {}", lat.exponent),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn b1_market(w: f64) -> MarketConfig {
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

    #[test]
    fn licensed_latency_linear_cases() {
        let sp = ServiceProvider::incumbent("sp1", LatencySpec::linear(0.0, 1.0));
        assert_relative_eq!(licensed_latency(&sp, 0.5).unwrap(), 0.5);
        assert_relative_eq!(licensed_latency(&sp, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn licensed_latency_convex_case() {
        // offset 0.1, slope 2, exponent 2 at load 0.5: 0.1 + 2 * 0.25 = 0.6
        let sp = ServiceProvider::incumbent(
            "sp1",
            LatencySpec {
                offset: 0.1,
                slope: 2.0,
                exponent: 2.0,
            },
        );
        let expected = 0.1 + 2.0 * 0.5f64.powi(2);
        assert_relative_eq!(licensed_latency(&sp, 0.5).unwrap(), expected);
        assert_relative_eq!(expected, 0.6);
    }

    #[test]
    fn entrant_has_no_licensed_band() {
        let sp = ServiceProvider::entrant("e1");
        assert!(licensed_latency(&sp, 0.1).is_err());
    }

    #[test]
    fn unlicensed_latency_scales_with_capacity() {
        let band = UnlicensedBand::new(2.0, LatencySpec::linear(0.0, 1.0));
        assert_relative_eq!(unlicensed_latency(&band, 5.0 / 6.0), 5.0 / 12.0);
    }

    #[test]
    fn absent_band_is_infinite() {
        let band = UnlicensedBand::absent();
        assert!(unlicensed_latency(&band, 0.3).is_infinite());
        assert!(band.is_absent());
    }

    #[test]
    fn huge_capacity_approaches_offset() {
        let band = UnlicensedBand::new(
            1e12,
            LatencySpec {
                offset: 0.2,
                slope: 1.0,
                exponent: 1.0,
            },
        );
        assert_relative_eq!(unlicensed_latency(&band, 1.0), 0.2, epsilon = 1e-10);
    }

    #[test]
    fn box_inverse_demand() {
        let class = CustomerClass {
            weight: 1.0,
            demand: DemandSpec::Box {
                valuation: 1.0,
                mass: 1.0,
            },
        };
        assert_relative_eq!(inverse_demand(&class, 0.5), 1.0);
        assert_relative_eq!(inverse_demand(&class, 1.2), 0.0);
    }

    #[test]
    fn linear_inverse_demand() {
        let class = CustomerClass {
            weight: 1.0,
            demand: DemandSpec::Linear {
                intercept: 1.0,
                elasticity: 4.0,
            },
        };
        assert_relative_eq!(inverse_demand(&class, 0.2), 0.2);
        assert_relative_eq!(inverse_demand(&class, 0.5), 0.0);
    }

    #[test]
    fn latency_invert_round_trips() {
        let lat = LatencySpec {
            offset: 0.3,
            slope: 2.5,
            exponent: 2.0,
        };
        let load = 0.7;
        assert_relative_eq!(lat.invert(lat.eval(load)), load, epsilon = 1e-12);
        assert_relative_eq!(lat.invert(0.1), 0.0); // below offset
    }

    #[test]
    fn validate_b1_is_clean() {
        let report = validate_market(&b1_market(1.0));
        assert!(
            report.is_structurally_valid(),
            "violations: {:?}",
            report.violations
        );
        assert_eq!(report.warnings().count(), 0);
        assert!(report
            .violations
            .iter()
            .any(|v| v.severity == Severity::Note && v.message.contains("partial coverage")));
    }

    #[test]
    fn validate_rejects_no_incumbent() {
        let mut m = b1_market(1.0);
        m.providers = vec![ServiceProvider::entrant("e1")];
        let report = validate_market(&m);
        assert!(!report.is_structurally_valid());
    }

    #[test]
    fn validate_warns_on_full_coverage_monopoly() {
        let report = validate_market(&b1_market(2.5));
        assert!(report.is_structurally_valid());
        assert!(report
            .warnings()
            .any(|v| v.message.contains("serves all demand")));
    }

    #[test]
    fn validate_rejects_bad_class_order() {
        let mut m = b1_market(1.0);
        m.classes = vec![
            CustomerClass {
                weight: 0.1,
                demand: DemandSpec::Box {
                    valuation: 0.85,
                    mass: 1.3,
                },
            },
            CustomerClass {
                weight: 0.4,
                demand: DemandSpec::Box {
                    valuation: 1.6,
                    mass: 1.0,
                },
            },
        ];
        let report = validate_market(&m);
        assert!(!report.is_structurally_valid());
    }

    #[test]
    fn market_json_round_trip() {
        let m = b1_market(1.0);
        let text = serde_json::to_string(&m).unwrap();
        let back = MarketConfig::parse_json(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn market_json_schema_shape() {
        let text = r#"{
            "providers": [
                {"id": "sp1", "type": "incumbent", "licensed": {"offset": 0.0, "slope": 1.0}},
                {"id": "e1", "type": "entrant"}
            ],
            "unlicensed": {"capacity": 1.0, "latency": {"offset": 0.0, "slope": 1.0}},
            "classes": [
                {"weight": 1.0, "demand": {"kind": "box", "valuation": 1.0, "mass": 1.0}}
            ]
        }"#;
        let m = MarketConfig::parse_json(text).unwrap();
        assert_eq!(m.providers.len(), 2);
        assert!(m.providers[0].is_incumbent());
        assert_eq!(m.classes[0].demand.choke_price(), 1.0);
        assert_eq!(
            m.providers[0].licensed_latency_spec().unwrap().exponent,
            1.0
        );
    }
}
