//! Property tests for the model and solver invariants.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectrum_market::model::{
    inverse_demand, unlicensed_latency, CustomerClass, DemandSpec, LatencySpec, MarketConfig,
    ServiceProvider, UnlicensedBand,
};
use spectrum_market::wardrop::{allocate, wardrop_residual, PriceProfile};
use spectrum_market::{presets, social_welfare, solve_homogeneous_single};

fn latency_strategy() -> impl Strategy<Value = LatencySpec> {
    (
        0.0..0.5f64,
        0.1..3.0f64,
        prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(3.0)],
    )
        .prop_map(|(offset, slope, exponent)| LatencySpec {
            offset,
            slope,
            exponent,
        })
}

fn single_class_market_strategy() -> impl Strategy<Value = (MarketConfig, f64)> {
    (
        latency_strategy(),
        0.0..0.3f64,
        0.1..3.0f64,
        0.0..3.0f64,
        0.4..2.0f64,
        0.3..1.5f64,
        0.0..2.5f64,
    )
        .prop_map(|(lat, t2, kappa, capacity, w, mass, price)| {
            let lat = LatencySpec {
                exponent: 1.0,
                ..lat
            };
            let market = MarketConfig {
                providers: vec![
                    ServiceProvider::incumbent("sp1", lat),
                    ServiceProvider::entrant("e1"),
                ],
                unlicensed: UnlicensedBand::new(
                    capacity,
                    LatencySpec {
                        offset: t2,
                        slope: kappa,
                        exponent: 1.0,
                    },
                ),
                classes: vec![CustomerClass {
                    weight: 1.0,
                    demand: DemandSpec::Box { valuation: w, mass },
                }],
            };
            (market, price)
        })
}

fn two_class_market_strategy() -> impl Strategy<Value = (MarketConfig, f64)> {
    (
        0.0..0.2f64,
        0.2..2.0f64,
        0.0..2.0f64,
        0.3..1.0f64,
        0.05..0.95f64,
        0.5..2.0f64,
        0.2..0.95f64,
        0.4..1.8f64,
        0.0..2.0f64,
    )
        .prop_map(
            |(t2, kappa, capacity, w_h_weight, low_ratio, w_h, w_l_ratio, masses, price)| {
                let market = MarketConfig {
                    providers: vec![
                        ServiceProvider::incumbent("sp1", LatencySpec::linear(0.0, 1.0)),
                        ServiceProvider::entrant("e1"),
                    ],
                    unlicensed: UnlicensedBand::new(
                        capacity,
                        LatencySpec {
                            offset: t2,
                            slope: kappa,
                            exponent: 1.0,
                        },
                    ),
                    classes: vec![
                        CustomerClass {
                            weight: w_h_weight,
                            demand: DemandSpec::Box {
                                valuation: w_h,
                                mass: masses,
                            },
                        },
                        CustomerClass {
                            weight: w_h_weight * low_ratio,
                            demand: DemandSpec::Box {
                                valuation: w_h * w_l_ratio,
                                mass: masses,
                            },
                        },
                    ],
                };
                (market, price)
            },
        )
}

proptest! {
    #[test]
    fn latency_strictly_increasing_and_convex(
        lat in latency_strategy(),
        load in 0.01..3.0f64,
        h in 0.01..0.5f64,
    ) {
        let (f0, f1, f2) = (lat.eval(load), lat.eval(load + h), lat.eval(load + 2.0 * h));
        prop_assert!(f1 > f0, "not increasing: {f0} {f1}");
        // Convexity: the chord never dips below the middle evaluation.
        prop_assert!(f2 - 2.0 * f1 + f0 >= -1e-12, "not convex: {f0} {f1} {f2}");
    }

    #[test]
    fn inverse_demand_non_increasing(
        w in 0.1..3.0f64,
        mass in 0.1..3.0f64,
        linear in proptest::bool::ANY,
        q1 in 0.0..4.0f64,
        q2 in 0.0..4.0f64,
    ) {
        let demand = if linear {
            DemandSpec::Linear { intercept: w, elasticity: mass }
        } else {
            DemandSpec::Box { valuation: w, mass }
        };
        let class = CustomerClass { weight: 1.0, demand };
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(inverse_demand(&class, lo) >= inverse_demand(&class, hi));
    }

    #[test]
    fn band_latency_decreasing_in_capacity(
        kappa in 0.1..3.0f64,
        t2 in 0.0..0.5f64,
        c1 in 0.05..5.0f64,
        growth in 0.01..5.0f64,
        load in 0.01..2.0f64,
    ) {
        let band_small = UnlicensedBand::new(c1, LatencySpec { offset: t2, slope: kappa, exponent: 1.0 });
        let band_large = UnlicensedBand::new(c1 + growth, LatencySpec { offset: t2, slope: kappa, exponent: 1.0 });
        prop_assert!(unlicensed_latency(&band_small, load) > unlicensed_latency(&band_large, load));
    }

    #[test]
    fn allocation_satisfies_complementarity((market, price) in single_class_market_strategy()) {
        let prices = PriceProfile::with_zero_unlicensed(&market, &[price]);
        let alloc = allocate(&market, &prices).unwrap();
        prop_assert!(wardrop_residual(&market, &prices, &alloc).unwrap() <= 1e-9);
    }

    #[test]
    fn two_class_allocation_satisfies_complementarity((market, price) in two_class_market_strategy()) {
        let prices = PriceProfile::with_zero_unlicensed(&market, &[price]);
        let alloc = allocate(&market, &prices).unwrap();
        prop_assert!(wardrop_residual(&market, &prices, &alloc).unwrap() <= 1e-9);
    }

    #[test]
    fn conservation_and_nonnegativity((market, price) in two_class_market_strategy()) {
        let prices = PriceProfile::with_zero_unlicensed(&market, &[price]);
        let alloc = allocate(&market, &prices).unwrap();
        for t in 0..market.class_count() {
            let served = alloc.served(t);
            prop_assert!(served <= market.classes[t].demand.mass_bound() + 1e-9);
        }
        for row in alloc.licensed.iter().chain(alloc.unlicensed.iter()) {
            for &m in row {
                prop_assert!(m >= 0.0);
            }
        }
    }

    #[test]
    fn raising_own_price_never_gains_mass(
        (market, price) in single_class_market_strategy(),
        bump in 0.01..1.0f64,
    ) {
        let low = PriceProfile::with_zero_unlicensed(&market, &[price]);
        let high = PriceProfile::with_zero_unlicensed(&market, &[price + bump]);
        let a_low = allocate(&market, &low).unwrap();
        let a_high = allocate(&market, &high).unwrap();
        prop_assert!(
            a_high.provider_licensed(0) <= a_low.provider_licensed(0) + 1e-9,
            "mass rose from {} to {} when price rose",
            a_low.provider_licensed(0),
            a_high.provider_licensed(0)
        );
    }

    #[test]
    fn welfare_invariant_under_entrant_relabeling((market, price) in single_class_market_strategy()) {
        let mut twin = market.clone();
        twin.providers.push(ServiceProvider::entrant("e2"));
        let prices = PriceProfile::with_zero_unlicensed(&twin, &[price]);
        let alloc = allocate(&twin, &prices).unwrap();
        let sw = social_welfare(&twin, &alloc);

        let mut relabeled = twin.clone();
        relabeled.providers.swap(1, 2);
        let prices2 = PriceProfile::with_zero_unlicensed(&relabeled, &[price]);
        let alloc2 = allocate(&relabeled, &prices2).unwrap();
        prop_assert!((social_welfare(&relabeled, &alloc2) - sw).abs() <= 1e-12);
    }
}

#[test]
fn equal_split_is_exact() {
    let mut market = presets::b1_market(1.0).with_capacity(2.0);
    market.providers.push(ServiceProvider::entrant("e2"));
    // Drop the incumbent from the band so exactly two identical entrants share it.
    let mut prices = PriceProfile::with_zero_unlicensed(&market, &[0.25]);
    prices.unlicensed.remove("sp1");
    let alloc = allocate(&market, &prices).unwrap();
    assert_eq!(alloc.provider_unlicensed(1), alloc.provider_unlicensed(2));
    assert_eq!(alloc.provider_unlicensed(0), 0.0);
    assert_eq!(alloc.provider_unlicensed(1) * 2.0, alloc.unlicensed_total());
}

/// Swept welfare values agree with the regime formulas: on the boundary
/// stretch the whole market is served at a delivered price equal to the
/// valuation, beyond it the interior price formula applies.
#[test]
fn sweep_welfare_matches_regime_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let w: f64 = rng.gen_range(0.4..1.6);
        let market = presets::b1_market(w);
        let t = spectrum_market::closed_form_thresholds(w, 0.0, 0.0, 1.0, 1.0).unwrap();
        // Boundary regime: S = W - x1^2 - Xw*W with Xw = C*W, x1 = 1 - Xw.
        for i in 1..10 {
            let c = t.c1 + (t.c2 - t.c1) * i as f64 / 10.0;
            let eq = solve_homogeneous_single(&market.with_capacity(c)).unwrap();
            let x_w = c * w;
            let expected = w - (1.0 - x_w).powi(2) - x_w * w;
            assert!(
                (eq.report.social_welfare - expected).abs() <= 1e-6,
                "boundary W={w} C={c}: {} vs {}",
                eq.report.social_welfare,
                expected
            );
        }
        // Interior regime: p = alpha/2, x1 = alpha/(2(1+alpha)), everyone
        // served at delivered price p + x1.
        for i in 1..10 {
            let c = t.c2 * (1.0 + i as f64 / 5.0);
            let eq = solve_homogeneous_single(&market.with_capacity(c)).unwrap();
            let alpha = 1.0 / c;
            let p = alpha / 2.0;
            let x1 = alpha / (2.0 * (1.0 + alpha));
            let expected = p * x1 + (w - p - x1);
            assert!(
                (eq.report.social_welfare - expected).abs() <= 1e-6,
                "interior W={w} C={c}: {} vs {}",
                eq.report.social_welfare,
                expected
            );
        }
    }
}

/// Damped best-response iteration from random starting prices lands on the
/// closed-form equilibrium: the fixed point is unique.
#[test]
fn homogeneous_fixed_point_unique_from_random_starts() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &c in &[0.3, 0.6, 1.0] {
        let market = presets::b1_market(1.0).with_capacity(c);
        let reference = solve_homogeneous_single(&market).unwrap();
        let p_star = reference.lead_price(&market);
        for _ in 0..20 {
            let mut p: f64 = rng.gen_range(0.0..1.0);
            for _ in 0..10_000 {
                let br = spectrum_market::best_response_homogeneous(&market, c).unwrap();
                // A single incumbent's best response ignores its own previous
                // price, so damped iteration contracts in one step direction.
                let next = 0.5 * p + 0.5 * br.price;
                if (next - p).abs() < 1e-10 {
                    p = next;
                    break;
                }
                p = next;
            }
            assert!(
                (p - p_star).abs() <= 1e-6,
                "C={c}: iteration settled at {p}, closed form {p_star}"
            );
        }
    }
}
