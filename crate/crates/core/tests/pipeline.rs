use qol_impact::domain::Whitelist;
use qol_impact::evaluate::{cross_validate, Algorithm, ModelSpec};
use qol_impact::features::{build_dataset, TargetKind};
use qol_impact::ingest::{parse_projects, parse_requests, retain_in_scope, ParseMode};
use qol_impact::report::{change_report_from_predictions, default_windows, ChangeFlag};
use qol_impact::selection::{screen_requests, ScreeningParams};
use qol_impact::synth::{generate, oracle_r_squared, PlantedEffect, SynthConfig, TypeRate};

fn planted(seed: u64, lift: f64) -> SynthConfig {
    SynthConfig {
        seed,
        n_projects: 10,
        types: vec![
            TypeRate {
                complaint_type: "Noise".into(),
                lambda: 10.0,
            },
            TypeRate {
                complaint_type: "Safety".into(),
                lambda: 10.0,
            },
            TypeRate {
                complaint_type: "Graffiti".into(),
                lambda: 10.0,
            },
        ],
        effects: vec![
            PlantedEffect {
                complaint_type: "Noise".into(),
                lift,
                window_start: 1,
                window_end: 12,
            },
            PlantedEffect {
                complaint_type: "Graffiti".into(),
                lift,
                window_start: 1,
                window_end: 12,
            },
        ],
        ..SynthConfig::default()
    }
}

#[test]
fn synthetic_round_trip_through_every_stage() {
    let out = generate(&SynthConfig {
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    let projects = parse_projects(&out.projects_csv().unwrap()[..]).unwrap();
    let (requests, mut report) = parse_requests(&out.requests_csv().unwrap()[..], ParseMode::Strict).unwrap();
    let requests = retain_in_scope(requests, &projects, &mut report);
    assert_eq!(report.rows_out_of_scope, 0);
    assert!(report.is_balanced());

    let screened = screen_requests(&requests, &projects, &Whitelist::default(), ScreeningParams::default());
    assert_eq!(screened.catalog.len(), 20);
    let whitelist = Whitelist::default();
    for o in screened.outcomes.iter().filter(|o| o.selected) {
        assert!(whitelist.lookup(&o.complaint_type).is_some());
    }
    let selected = screened.selected();
    assert!(!selected.is_empty());

    let ds = build_dataset(&screened.series, &selected, TargetKind::Count, 0.0).unwrap();
    assert_eq!(ds.len(), 27 * selected.len() * 12);
    let oracle = oracle_r_squared(&ds, &screened.catalog, &out.manifest).unwrap();
    assert!(oracle > 0.0 && oracle < 1.0);

    let cv = cross_validate(&ModelSpec::new(Algorithm::RfAdaboost, Some(6), 10), &ds, 10, 21).unwrap();
    assert!(
        cv.mean.r_squared <= oracle + 0.05,
        "cv {} oracle {oracle}",
        cv.mean.r_squared
    );

    let entries = change_report_from_predictions(
        &ds,
        &cv.predictions,
        &screened.series,
        &screened.catalog,
        &default_windows(),
    )
    .unwrap();
    assert_eq!(entries.len(), 5);
    for e in &entries {
        assert!(e.actual_change_pct.is_some());
        if e.flag == ChangeFlag::Ok {
            assert!(e.predicted_change_pct.is_some());
        }
    }
}

#[test]
fn planted_lift_passes_all_three_gates() {
    let mut selected_runs = 0;
    for seed in 0..10 {
        let out = generate(&planted(seed, 3.0)).unwrap();
        let screened = screen_requests(
            &out.requests,
            &out.projects,
            &Whitelist::default(),
            ScreeningParams::default(),
        );
        let by_name = |n: &str| {
            screened
                .outcomes
                .iter()
                .find(|o| o.complaint_type == n)
                .unwrap()
                .clone()
        };
        let noise = by_name("Noise");
        assert!(noise.test.unwrap().p_value < 0.05);
        selected_runs += usize::from(noise.selected);
        // significant but not whitelisted
        let graffiti = by_name("Graffiti");
        assert!(graffiti.test.unwrap().significant);
        assert!(!graffiti.selected);
    }
    assert_eq!(selected_runs, 10);
}

/// Exact two-sided binomial acceptance region at the given level.
fn binomial_interval(n: u64, p: f64, level: f64) -> (u64, u64) {
    let pmf: Vec<f64> = (0..=n)
        .map(|k| {
            let ln = libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
                + k as f64 * p.ln()
                + (n - k) as f64 * (1.0 - p).ln();
            ln.exp()
        })
        .collect();
    let tail = (1.0 - level) / 2.0;
    let mut lo = 0;
    let mut acc = 0.0;
    while acc + pmf[lo as usize] <= tail {
        acc += pmf[lo as usize];
        lo += 1;
    }
    let mut hi = n;
    let mut acc = 0.0;
    while acc + pmf[hi as usize] <= tail {
        acc += pmf[hi as usize];
        hi -= 1;
    }
    (lo, hi)
}

#[test]
fn null_effect_is_significant_at_nominal_rate() {
    let trials = 200;
    let mut significant = 0;
    for seed in 0..trials {
        let config = SynthConfig {
            seed: 1000 + seed,
            n_projects: 10,
            types: vec![TypeRate {
                complaint_type: "Noise".into(),
                lambda: 10.0,
            }],
            effects: Vec::new(),
            ..SynthConfig::default()
        };
        let out = generate(&config).unwrap();
        let screened = screen_requests(
            &out.requests,
            &out.projects,
            &Whitelist::default(),
            ScreeningParams::default(),
        );
        significant += u64::from(screened.outcomes[0].test.unwrap().significant);
    }
    let (lo, hi) = binomial_interval(trials, 0.05, 0.99);
    assert!((lo..=hi).contains(&significant), "{significant} outside [{lo}, {hi}]");
}

#[test]
fn stronger_lift_keeps_selection() {
    let mut kept = 0;
    let mut weak_selected = 0;
    for seed in 0..20 {
        let select = |lift| {
            let out = generate(&planted(500 + seed, lift)).unwrap();
            let s = screen_requests(
                &out.requests,
                &out.projects,
                &Whitelist::default(),
                ScreeningParams::default(),
            );
            s.outcomes
                .iter()
                .find(|o| o.complaint_type == "Noise")
                .unwrap()
                .selected
        };
        if select(1.1) {
            weak_selected += 1;
            kept += usize::from(select(1.6));
        }
    }
    assert!(weak_selected > 0);
    assert!(kept as f64 >= 0.95 * weak_selected as f64, "{kept} of {weak_selected}");
}
