mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use pwe_core::em_model::{BaseFunction, Modifiers, TileFunction, WaveSpec};
use pwe_core::geometry::Vec3;
use pwe_core::propagation::*;
use pwe_core::pwe_graph::*;

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn two_users() -> Vec<UserNode> {
    vec![user(0, v(1.5, 1.5, 1.0), 360.0, 0.0, 0.0), user(1, v(4.5, 4.5, 1.0), 360.0, 0.0, 0.0)]
}

fn inputs_of(g: &PweGraph, u: usize) -> Vec<(usize, Vec<(LinkId, WaveSpec)>)> {
    vec![(u, g.user_link_inputs(u, CARRIER))]
}

#[test]
fn unconfigured_tiles_absorb_normal_incidence_only() {
    let g = room_graph((6.0, 6.0, 3.0), two_users(), 0.99);
    let rx: BTreeSet<usize> = [1].into();
    let r = nlos_prop(&g, &rx, &inputs_of(&g, 0), &PropConfig::default()).unwrap();
    assert!(r.stats.balanced(), "{:?}", r.stats);
    assert_eq!(r.stats.escaped, 0);
    // Off-normal rays reflect specularly, so some reach the receiver.
    assert_eq!(r.stats.reached as usize, r.arrivals_at(1).len());
    assert!(r.stats.reached > 0);
    for a in r.arrivals_at(1) {
        assert!(a.path.nodes[1..a.path.nodes.len() - 1].iter().all(|&n| !g.is_user(n)));
    }
    // A single ray fired straight at the floor is absorbed on the spot.
    let mut g = room_graph((6.0, 6.0, 3.0), vec![user(0, v(0.5, 0.5, 1.0), 10.0, -90.0, 0.0)], 0.99);
    g.deployed.iter_mut().for_each(|d| *d = None);
    let r = nlos_prop(&g, &BTreeSet::new(), &inputs_of(&g, 0), &PropConfig::default()).unwrap();
    assert_eq!((r.stats.spawned, r.stats.absorbed), (1, 1));
}

#[test]
fn strict_mode_refuses_unconfigured_tiles() {
    let g = room_graph((6.0, 6.0, 3.0), two_users(), 0.99);
    let cfg = PropConfig { strict: true, ..Default::default() };
    assert!(matches!(nlos_prop(&g, &BTreeSet::new(), &inputs_of(&g, 0), &cfg), Err(PropError::Unconfigured(_))));
}

#[test]
fn mirror_room_hits_bounce_limit() {
    let mut g = room_graph((6.0, 6.0, 3.0), vec![user(0, v(1.5, 1.5, 1.0), 60.0, 90.0, 0.0)], 1.0);
    for t in 0..g.tiles.len() {
        g.deployed[t] = Some(virtual_function(g.tiles[t].normal));
    }
    let cfg = PropConfig { max_bounces: 7, ..Default::default() };
    let r = nlos_prop(&g, &BTreeSet::new(), &inputs_of(&g, 0), &cfg).unwrap();
    assert!(r.stats.balanced());
    assert_eq!(r.stats.escaped, 0);
    assert!(r.stats.over_bounce + r.stats.absorbed == r.stats.spawned);
}

#[test]
fn configured_chain_delivers_gain_product() {
    let mut g = room_graph((6.0, 6.0, 3.0), two_users(), 0.99);
    let nodes = find_chain(&g, 0, 1, 3).unwrap();
    let p = deploy_chain(&mut g, &nodes, 0, 1);
    let first = p.first_link();
    let input: Vec<(LinkId, WaveSpec)> =
        g.user_link_inputs(0, CARRIER).into_iter().filter(|(l, _)| *l == first).collect();
    let injected = input[0].1.power;
    let rx: BTreeSet<usize> = [1].into();
    let r = nlos_prop(&g, &rx, &[(0, input.clone())], &PropConfig::default()).unwrap();
    assert!(r.stats.balanced());
    let arr = r.arrivals_at(1);
    assert_eq!(arr.len(), 1);
    assert_eq!(arr[0].path.nodes, nodes);
    assert!((arr[0].incident_power - injected * 0.99f64.powi(3)).abs() < 1e-12 * injected);
    assert!((arr[0].delay() - p.total_delay).abs() < 1e-18);
    // The composed function along the path agrees with the traced ray.
    let (w, d) = path_output(&input[0].1, &p, &g).unwrap();
    assert!((w.power - arr[0].incident_power).abs() < 1e-12 * injected);
    assert_eq!(d, p.total_delay);
}

#[test]
fn pdp_sorted_and_partitioned() {
    let mut g = room_graph((6.0, 6.0, 3.0), two_users(), 0.99);
    let nodes = find_chain(&g, 0, 1, 2).unwrap();
    deploy_chain(&mut g, &nodes, 0, 1);
    let rx: BTreeSet<usize> = [1].into();
    let r = nlos_prop(&g, &rx, &inputs_of(&g, 0), &PropConfig::default()).unwrap();
    let pdp = PowerDelayProfile::from_entries(classify_useful(&g, r.arrivals_at(1), 1));
    assert!(pdp.entries.windows(2).all(|w| w[0].delay <= w[1].delay));
    assert!((pdp.useful_power() + pdp.interference_power() - total_received(&pdp)).abs() <= 1e-12 * total_received(&pdp));
    assert!(pdp.entries.iter().any(|e| e.useful));
}

fn function_strategy() -> impl Strategy<Value = u8> {
    0u8..4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every spawned ray terminates exactly once, whatever the deployment.
    #[test]
    fn ray_accounting_is_exact(
        kinds in proptest::collection::vec(function_strategy(), 90),
        normals in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 90),
        bounces in 1usize..30,
        gain in 0.3..1.0f64,
        threshold in -120.0..-40.0f64,
    ) {
        let mut g = room_graph((6.0, 6.0, 3.0), two_users(), gain);
        for t in 0..g.tiles.len() {
            let n = g.tiles[t].normal;
            let (x, y, z) = normals[t % normals.len()];
            let tilt = (n * 2.0 + v(x, y, z)).normalized().unwrap_or(n);
            g.deployed[t] = match kinds[t % kinds.len()] {
                0 => None,
                1 => Some(TileFunction::full_absorb()),
                2 => Some(virtual_function(tilt)),
                _ => Some(TileFunction {
                    base: BaseFunction::Split { normals: vec![n, tilt] },
                    modifiers: Modifiers::default(),
                    expected_input: None,
                }),
            };
        }
        let rx: BTreeSet<usize> = [1].into();
        let cfg = PropConfig { max_bounces: bounces, min_power_dbm: threshold, strict: false };
        let inputs = vec![(0, g.user_link_inputs(0, CARRIER)), (1, g.user_link_inputs(1, CARRIER))];
        let r = nlos_prop(&g, &rx, &inputs, &cfg).unwrap();
        prop_assert!(r.stats.balanced(), "{:?}", r.stats);
        prop_assert!(r.stats.blocked <= r.stats.absorbed);
        prop_assert_eq!(r.stats.reached as usize, r.arrivals_at(1).len());
        for a in r.arrivals_at(1) {
            prop_assert_eq!(a.source, 0);
            prop_assert!(a.incident_power <= a.injected_power * (1.0 + 1e-12));
            prop_assert!(a.path.bounces() <= bounces);
            let len: f64 = a.path.lengths.iter().sum();
            prop_assert!((a.delay() - len / SPEED_OF_LIGHT).abs() < 1e-15);
        }
    }
}
