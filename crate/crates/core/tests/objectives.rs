mod common;

use std::collections::HashMap;

use common::*;
use proptest::prelude::*;
use pwe_core::geometry::{Sphere, Trajectory, Vec3};
use pwe_core::objectives::*;
use pwe_core::pwe_graph::*;

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

#[test]
fn objective_combinations() {
    assert!(ObjectiveSet::max_power().validate().is_ok());
    let both = ObjectiveSet { max_power: true, max_sir: true, ..Default::default() };
    assert_eq!(both.validate(), Err(ObjectiveError::PowerAndSir));
    let blk = ObjectiveSet { block: true, eaves: Some(EavesTarget::All), ..Default::default() };
    assert_eq!(blk.validate(), Err(ObjectiveError::BlockExclusive));
    let dop = ObjectiveSet { doppler: Some(120.0), ..ObjectiveSet::max_power() };
    assert!(dop.validate().is_err());
    assert!(ObjectiveSet::max_sir(-1.0).validate().is_err());
    let s = ObjectiveSet { eaves: Some(EavesTarget::Users(vec![2, 5])), doppler: Some(10.0), ..ObjectiveSet::max_power() };
    assert_eq!(s.to_string(), "MaxPower+EavesMit(2,5)+DopplerMit(10)");
}

#[test]
fn useful_power_example() {
    let e = [(10e-9, 1.0), (11e-9, 2.0), (30e-9, 4.0)];
    let (p, sel) = useful_power(&e, 5e-9);
    assert_eq!(sel, vec![0, 1]);
    assert_eq!(p, 3.0);
    assert_eq!(interference_power(&[1.0, 2.0, 4.0], &sel), 4.0);
    assert_eq!(useful_power(&[], 1.0), (0.0, vec![]));
}

#[test]
fn sir_cases() {
    assert_eq!(sir(2.0, 0.0), Sir::InterferenceFree);
    assert_eq!(sir(0.0, 0.0), Sir::Ratio(0.0));
    assert_eq!(sir(2.0, 4.0), Sir::Ratio(0.5));
}

#[test]
fn power_score_uses_first_link_input() {
    let g = room_graph((4.0, 4.0, 3.0), vec![user(0, v(1.0, 1.0, 1.0), 360.0, 0.0, 0.0), user(1, v(3.0, 3.0, 1.0), 360.0, 0.0, 0.0)], 0.9);
    let ps = g.k_shortest_paths(3, g.user_node(0), g.user_node(1));
    let inputs: HashMap<LinkId, f64> = ps.iter().enumerate().map(|(i, p)| (p.first_link(), i as f64 + 1.0)).collect();
    let want: f64 = ps.iter().enumerate().map(|(i, p)| (i as f64 + 1.0) * p.gain_product).sum();
    assert!((power_score(&ps, &inputs) - want).abs() < 1e-12);
}

#[test]
fn eavesdropper_near_link_is_flagged() {
    let users = vec![
        user(0, v(1.0, 2.0, 1.0), 360.0, 0.0, 0.0),
        user(1, v(3.0, 2.0, 1.0), 360.0, 0.0, 0.0),
        user(2, v(2.0, 2.0, 2.0), 360.0, 0.0, 0.0),
    ];
    let g = room_graph((4.0, 4.0, 3.0), users, 0.9);
    for p in g.k_shortest_paths(8, g.user_node(0), g.user_node(1)) {
        let segs: Vec<(Vec3, Vec3)> = p.links.iter().map(|&l| g.link_segment(l)).collect();
        let protected = [(2usize, g.sphere(2))];
        assert_eq!(eavesdrop_violations(&g, &p, &protected, 1), segments_violate(&segs, &protected, 1));
        // The receiver's own sphere never counts.
        assert!(!segments_violate(&segs, &[(1usize, g.sphere(1))], 1));
    }
    let s = Sphere::new(v(0.0, 0.0, 0.0), 0.5).unwrap();
    assert!(segments_violate(&[(v(-1.0, 0.2, 0.0), v(1.0, 0.2, 0.0))], &[(7, s.clone())], 1));
    assert!(!segments_violate(&[(v(-1.0, 0.6, 0.0), v(1.0, 0.6, 0.0))], &[(7, s)], 1));
}

#[test]
fn doppler_needs_a_trajectory() {
    let mut g = room_graph((4.0, 4.0, 3.0), vec![user(0, v(1.0, 2.0, 1.0), 360.0, 0.0, 0.0), user(1, v(3.0, 2.0, 1.0), 360.0, 0.0, 0.0)], 0.9);
    let p = g.shortest_path(g.user_node(0), g.user_node(1), &Default::default(), &Default::default()).unwrap();
    assert!(matches!(doppler_ok(&g, &p, None, 10.0), Err(ObjectiveError::Inapplicable(_))));
    g.users[1].trajectory = Some(Trajectory::new(vec![v(3.0, 1.0, 1.0), v(3.0, 3.0, 1.0)]).unwrap());
    let t = g.users[1].trajectory.clone();
    let (ok, dev) = doppler_ok(&g, &p, t.as_ref(), 10.0).unwrap();
    assert_eq!(ok, dev <= 10.0);
    assert!((0.0..=90.0).contains(&dev));
}

proptest! {
    /// Window membership against a direct definition.
    #[test]
    fn useful_power_matches_definition(
        e in proptest::collection::vec((0.0..100e-9f64, 0.0..1.0f64), 1..20),
        d_th in 0.0..50e-9f64,
    ) {
        let (p, sel) = useful_power(&e, d_th);
        let min = e.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        let mut want = Vec::new();
        let mut wp = 0.0;
        for (i, x) in e.iter().enumerate() {
            if x.0 - min <= d_th {
                want.push(i);
                wp += x.1;
            }
        }
        prop_assert_eq!(&sel, &want);
        prop_assert!((p - wp).abs() < 1e-12);
        let all: Vec<f64> = e.iter().map(|x| x.1).collect();
        let total: f64 = all.iter().sum();
        prop_assert!((p + interference_power(&all, &sel) - total).abs() < 1e-12);
    }
}
