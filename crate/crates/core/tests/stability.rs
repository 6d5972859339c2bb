use proptest::prelude::*;
use stable_core::md::{Replica, ReplicaSet};
use stable_core::observables::{rdf, ObservableKind, ObservableSpec};
use stable_core::stability::{
    check_bond_deviation, check_min_nonbonded, check_rdf_mae, max_bond_deviation, unstable_fraction, RdfReference,
    StabilityCriterion,
};
use stable_core::systems::{dimer, water_box, DimerParams, WaterParams};
use stable_core::SimState;

fn stretched_dimer(d: f64) -> SimState {
    SimState::at_rest(vec![[0.0; 3], [d, 0.0, 0.0]])
}

#[test]
fn dimer_bond_thresholds() {
    let spec = dimer(&DimerParams::default()).unwrap().spec;
    assert!(check_bond_deviation(&stretched_dimer(1.6), &spec, 0.5).unwrap());
    assert!(check_bond_deviation(&stretched_dimer(1.3), &spec, 0.25).unwrap());
    assert!(!check_bond_deviation(&stretched_dimer(1.3), &spec, 0.5).unwrap());
    assert!(!check_bond_deviation(&stretched_dimer(1.0), &spec, 0.01).unwrap());
    // compression counts the same as stretching
    assert!(check_bond_deviation(&stretched_dimer(0.6), &spec, 0.25).unwrap());
}

#[test]
fn hydrogen_close_to_a_foreign_oxygen_is_unstable() {
    let sys = water_box(&WaterParams {
        n_molecules: 2,
        density: 0.2,
    })
    .unwrap();
    let mut pos = sys.initial_positions.clone();
    assert!(!check_min_nonbonded(&SimState::at_rest(pos.clone()), &sys.spec, 1.2).unwrap());
    // Put H of molecule 1 one Å below the oxygen of molecule 0.
    let o = pos[0];
    pos[4] = [o[0], o[1], o[2] - 1.0];
    let s = SimState::at_rest(pos);
    assert!(check_min_nonbonded(&s, &sys.spec, 1.2).unwrap());
    assert!(!check_min_nonbonded(&s, &sys.spec, 0.9).unwrap());
}

#[test]
fn own_bonds_do_not_count_as_close_contacts() {
    let sys = water_box(&WaterParams {
        n_molecules: 1,
        density: 0.05,
    })
    .unwrap();
    let s = SimState::at_rest(sys.initial_positions.clone());
    assert!(!check_min_nonbonded(&s, &sys.spec, 1.2).unwrap());
}

#[test]
fn collapsed_water_fails_the_rdf_criterion() {
    let sys = water_box(&WaterParams::default()).unwrap();
    let obs = ObservableSpec::new(ObservableKind::Rdf {
        pair: Some(("O".into(), "O".into())),
    })
    .with_range(100, 3.0);
    let healthy = vec![SimState::at_rest(sys.initial_positions.clone())];
    let reference = RdfReference {
        values: rdf(&healthy, &sys.spec, &obs).unwrap(),
        observable: obs,
    };
    assert!(!check_rdf_mae(&healthy, &sys.spec, std::slice::from_ref(&reference), 0.1).unwrap());

    // Every oxygen squeezed into a 1 Å ball around the box center.
    let center = sys.spec.cell().unwrap().lengths.map(|l| 0.5 * l);
    let mut pos = sys.initial_positions.clone();
    let mut k: f64 = 0.0;
    for (i, p) in pos.iter_mut().enumerate() {
        if sys.spec.symbol_of(i) == "O" {
            k += 1.0;
            let a = k * 0.7;
            *p = [
                center[0] + 0.5 * a.cos(),
                center[1] + 0.5 * a.sin(),
                center[2] + 0.1 * k - 0.4,
            ];
        }
    }
    let collapsed = vec![SimState::at_rest(pos)];
    assert!(check_rdf_mae(&collapsed, &sys.spec, &[reference], 3.0).unwrap());
}

#[test]
fn rdf_monitor_only_trips_once_the_window_is_full() {
    let sys = water_box(&WaterParams::default()).unwrap();
    let obs = ObservableSpec::new(ObservableKind::Rdf { pair: None }).with_range(50, 3.0);
    let criterion = StabilityCriterion::RdfMae {
        threshold: 1e-9,
        window: 0.003,
        references: vec![RdfReference {
            values: vec![0.0; 50],
            observable: obs,
        }],
    };
    let mut m = criterion.monitor(1.0);
    let s = SimState::at_rest(sys.initial_positions.clone());
    assert!(!m.observe(&criterion, &s, &sys.spec).unwrap());
    assert!(!m.observe(&criterion, &s, &sys.spec).unwrap());
    assert!(m.observe(&criterion, &s, &sys.spec).unwrap());
    m.reset();
    assert!(!m.observe(&criterion, &s, &sys.spec).unwrap());
}

#[test]
fn unstable_fraction_counts_inactive_replicas() {
    let rep = Replica::new(stretched_dimer(1.0));
    let mut set = ReplicaSet::new(vec![rep; 4]).unwrap();
    set.active = vec![false, true, false, false];
    assert_eq!(unstable_fraction(&set), 0.75);
}

#[test]
fn invalid_criteria_are_rejected() {
    assert!(StabilityCriterion::BondDeviation { threshold: 0.0 }.validate().is_err());
    assert!(StabilityCriterion::MinNonbonded { threshold: -1.0 }.validate().is_err());
    let no_refs = StabilityCriterion::RdfMae {
        threshold: 1.0,
        window: 1.0,
        references: vec![],
    };
    assert!(no_refs.validate().is_err());
}

proptest! {
    #[test]
    fn bond_deviation_check_is_monotone(d in 0.2f64..3.0, t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
        let spec = dimer(&DimerParams::default()).unwrap().spec;
        let s = stretched_dimer(d);
        prop_assert!((max_bond_deviation(&s, &spec) - (d - 1.0).abs()).abs() < 1e-12);
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        // unstable at the looser threshold implies unstable at the tighter one
        if check_bond_deviation(&s, &spec, hi).unwrap() {
            prop_assert!(check_bond_deviation(&s, &spec, lo).unwrap());
        }
    }

    #[test]
    fn larger_stretch_is_never_more_stable(d1 in 0.0f64..2.0, d2 in 0.0f64..2.0, t in 0.05f64..1.0) {
        let spec = dimer(&DimerParams::default()).unwrap().spec;
        let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        if check_bond_deviation(&stretched_dimer(1.0 + small), &spec, t).unwrap() {
            prop_assert!(check_bond_deviation(&stretched_dimer(1.0 + large), &spec, t).unwrap());
        }
    }
}
