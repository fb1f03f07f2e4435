use std::collections::BTreeMap;

use proptest::prelude::*;
use tfrcast::phase2::double_logistic;
use tfrcast::projection::{predict_from_samples, trajectory_table, CountrySamples, ProjectionInput};
use tfrcast::types::{
    CountryId, DecrementBounds, ModeFlags, Phase2CountryParams, Phase2Hyper, Phase3CountryParams, Phase3Hyper,
    PhaseMarkers, TimeGrid, TrajectorySet,
};

fn quiet_hyper2(phi: Option<f64>) -> Phase2Hyper {
    Phase2Hyper {
        chi: -1.0,
        psi: 0.5,
        delta4_mean: 0.3,
        delta4_sd: 0.3,
        alpha: [-1.0, 0.5, 1.5],
        delta: [0.3; 3],
        sigma0: 0.0,
        a: 0.0,
        b: 0.0,
        s: 5.0,
        const_c: 1.0,
        m_tau: 0.0,
        s_tau: 0.1,
        phi,
    }
}

fn hyper3(sigma_eps: f64) -> Phase3Hyper {
    Phase3Hyper {
        mu_bar: 2.0,
        sigma_mu: 0.2,
        rho_bar: 0.8,
        sigma_rho: 0.1,
        sigma_eps,
    }
}

fn params(uc: f64) -> Phase2CountryParams {
    let mut p = Phase2CountryParams::from_transformed([-1.0, 0.5, 1.5], 0.3, -1.0, uc, DecrementBounds::ANNUAL);
    p = p.refreshed(DecrementBounds::ANNUAL);
    p
}

fn input(h2: Phase2Hyper, h3: Phase3Hyper, ar: bool, country: CountrySamples, n: usize) -> ProjectionInput {
    ProjectionInput {
        grid: TimeGrid::new(1990, 1, country.reference.len()).unwrap(),
        flags: ModeFlags::new(true, ar, country.tfr.is_some()),
        hyper2: vec![h2; n],
        hyper3: vec![h3; n],
        countries: BTreeMap::from([(CountryId(4), country)]),
        seed: 9,
    }
}

fn transition_country(reference: Vec<f64>, n: usize) -> CountrySamples {
    CountrySamples {
        markers: PhaseMarkers { tau: None, lambda: None },
        reference,
        p2: vec![params(7.0); n],
        p3: None,
        tfr: None,
    }
}

#[test]
fn noiseless_projection_follows_the_decline_curve() {
    let reference = vec![6.0, 5.9, 5.8, 5.7, 5.6];
    let c = transition_country(reference.clone(), 3);
    let p = c.p2[0].clone();
    let set = predict_from_samples(&input(quiet_hyper2(None), hyper3(0.05), false, c, 3), 2030, false).unwrap();
    let mut f = *reference.last().unwrap();
    let traj = &set.countries[&CountryId(4)];
    for (t, year) in set.grid.years().enumerate().skip(5) {
        f -= double_logistic(f, &p);
        for tr in traj {
            assert!((tr[t] - f).abs() < 1e-6, "{year}: {} vs {f}", tr[t]);
        }
    }
}

#[test]
fn post_transition_with_zero_persistence_centres_on_the_mean() {
    let n = 4000;
    let c = CountrySamples {
        markers: PhaseMarkers { tau: None, lambda: Some(1) },
        reference: vec![2.5, 2.0, 1.6, 1.7, 1.8],
        p2: vec![params(6.0); n],
        p3: Some(vec![Phase3CountryParams { mu: 2.05, rho: 0.0 }; n]),
        tfr: None,
    };
    let set = predict_from_samples(&input(quiet_hyper2(None), hyper3(1e-9), false, c, n), 2000, false).unwrap();
    for tr in &set.countries[&CountryId(4)] {
        for v in &tr[5..] {
            assert!((v - 2.05).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_persistence_matches_the_plain_model_bitwise() {
    let n = 200;
    let mut h = quiet_hyper2(Some(0.0));
    h.sigma0 = 0.1;
    h.a = 0.02;
    h.b = 0.03;
    let reference = vec![6.5, 6.3, 6.0, 5.6, 5.1];
    let ar = predict_from_samples(&input(h.clone(), hyper3(0.1), true, transition_country(reference.clone(), n), n), 2060, false).unwrap();
    h.phi = None;
    let plain = predict_from_samples(&input(h, hyper3(0.1), false, transition_country(reference, n), n), 2060, false).unwrap();
    let a = &ar.countries[&CountryId(4)];
    let b = &plain.countries[&CountryId(4)];
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn full_persistence_carries_the_last_distortion() {
    let n = 20;
    let mut h = quiet_hyper2(Some(1.0));
    h.sigma0 = 1e-12;
    let p = params(7.0);
    // last estimation transition has distortion 0.03 on top of the curve
    let mut reference = vec![6.4, 6.3];
    let prev = reference[1];
    reference.push(prev - double_logistic(prev, &p) - 0.03);
    let c = transition_country(reference, n);
    let set = predict_from_samples(&input(h, hyper3(0.1), true, c, n), 2010, false).unwrap();
    for tr in &set.countries[&CountryId(4)] {
        for s in 2..tr.len() - 1 {
            let e = tr[s] - tr[s + 1] - double_logistic(tr[s], &p);
            assert!((e - 0.03).abs() < 1e-6, "period {s}: {e}");
        }
    }
}

#[test]
fn projections_never_fall_below_the_floor() {
    let n = 500;
    let mut h = quiet_hyper2(None);
    h.sigma0 = 0.6;
    let set = predict_from_samples(&input(h, hyper3(0.5), false, transition_country(vec![1.2, 1.0, 0.9], n), n), 2100, false).unwrap();
    assert!(set.countries[&CountryId(4)].iter().flatten().all(|v| *v >= 0.5));
}

#[test]
fn constant_trajectories_give_constant_table() {
    let grid = TimeGrid::new(2000, 5, 6).unwrap();
    let set = TrajectorySet {
        grid,
        present_index: 2,
        uncertainty: true,
        countries: BTreeMap::from([(CountryId(1), vec![vec![2.0; 6]; 7])]),
    };
    let table = trajectory_table(&set, CountryId(1), &[0.5, 0.025, 0.1, 0.9, 0.975]).unwrap();
    assert_eq!(table.columns, ["median", "0.025", "0.1", "0.9", "0.975", "-0.5child", "+0.5child"]);
    assert_eq!(table.years, [2000, 2005, 2010, 2015, 2020, 2025]);
    for (t, row) in table.rows.iter().enumerate() {
        assert!(row[..5].iter().all(|v| *v == Some(2.0)));
        if t < 2 {
            assert_eq!(row[5..], [None, None]);
        } else {
            assert_eq!(row[5..], [Some(1.5), Some(2.5)]);
        }
    }
    assert!(trajectory_table(&set, CountryId(2), &[0.5]).is_err());

    let certain = TrajectorySet { uncertainty: false, ..set };
    let table = trajectory_table(&certain, CountryId(1), &[0.5]).unwrap();
    assert_eq!(table.years, [2010, 2015, 2020, 2025]);
}

proptest! {
    #[test]
    fn table_quantiles_are_monotone(
        raw in proptest::collection::vec(proptest::collection::vec(0.5f64..8.0, 4), 1..40)
    ) {
        let set = TrajectorySet {
            grid: TimeGrid::new(2020, 5, 4).unwrap(),
            present_index: 1,
            uncertainty: true,
            countries: BTreeMap::from([(CountryId(1), raw)]),
        };
        let levels = [0.025, 0.1, 0.5, 0.9, 0.975];
        let table = trajectory_table(&set, CountryId(1), &levels).unwrap();
        for row in &table.rows {
            for w in row[..5].windows(2) {
                prop_assert!(w[0].unwrap() <= w[1].unwrap());
            }
            if let (Some(lo), Some(hi)) = (row[5], row[6]) {
                prop_assert!((hi - lo - 1.0).abs() < 1e-12);
                prop_assert!((row[2].unwrap() - (lo + 0.5)).abs() < 1e-12);
            }
        }
    }
}
