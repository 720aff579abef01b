use jdp_core::simgen::{
    closed_form_cumulative_hazard, closed_form_event_time, generate_scenario, invert_numeric_hazard,
    numeric_cumulative_hazard, EventParams, GeneratorMode, LongitudinalParams, ScenarioConfig, SubjectDraw,
};
use proptest::prelude::*;

fn draw() -> impl Strategy<Value = SubjectDraw> {
    (-1.73f64..1.73, -2.1f64..2.1, -0.8f64..0.8, -0.2f64..0.2).prop_map(|(w1, w2, b0, b1)| SubjectDraw { w1, w2, b0, b1 })
}

fn scenario() -> impl Strategy<Value = EventParams> {
    prop_oneof![Just(EventParams::scenario1()), Just(EventParams::scenario2())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn closed_form_inversion(d in draw(), ev in scenario(), u in 1e-9f64..0.999_999) {
        let long = LongitudinalParams::reference();
        if let Ok(t) = closed_form_event_time(u, &d, &ev, &long) {
            let h = closed_form_cumulative_hazard(t, &d, &ev, &long);
            let target = -u.ln();
            prop_assert!(((h - target) / target).abs() <= 1e-8, "h = {h}, target = {target}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn numeric_round_trip(d in draw(), ev in scenario(), t in 0.05f64..8.0) {
        let long = LongitudinalParams::reference();
        let h = numeric_cumulative_hazard(t, &d, &ev, &long).unwrap();
        prop_assume!(h.is_finite() && h > 1e-300);
        let back = invert_numeric_hazard(h, &d, &ev, &long).unwrap();
        prop_assert!((back - t).abs() <= 1e-6, "t = {t}, back = {back}");
    }

    #[test]
    fn weibull_limit_matches_analytic(d in draw(), ev in scenario(), t in 0.01f64..10.0) {
        let long = LongitudinalParams::reference();
        let ev = EventParams { alpha: 0.0, ..ev };
        let analytic = ev.lambda * (ev.gamma1 * d.w1 + ev.gamma2 * d.w2).exp() * t.powf(ev.v);
        let h = numeric_cumulative_hazard(t, &d, &ev, &long).unwrap();
        prop_assert!((h - analytic).abs() <= 1e-9 * analytic.max(1.0));
    }
}

fn prevalence(cfg: &ScenarioConfig, mode: GeneratorMode) -> f64 {
    let g = generate_scenario(cfg, 1, mode).unwrap();
    g.cohort.n_events() as f64 / g.cohort.len() as f64
}

#[test]
fn scenario1_prevalence_near_reported_48_percent() {
    let p = prevalence(&ScenarioConfig::scenario1(), GeneratorMode::ClosedForm);
    assert!((p - 0.48).abs() <= 0.05, "prevalence {p}");
}

#[test]
fn scenario2_prevalence_matches_independent_simulation() {
    // Monte Carlo of the same design with 2e5 subjects: 0.2467.
    let p = prevalence(&ScenarioConfig::scenario2(), GeneratorMode::ClosedForm);
    assert!((p - 0.2467).abs() <= 0.03, "prevalence {p}");
}
