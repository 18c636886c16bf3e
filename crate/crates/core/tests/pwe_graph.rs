use std::collections::HashSet;
use std::f64::consts::PI;

use proptest::prelude::*;
use pwe_core::em_model::EMProfile;
use pwe_core::geometry::{Floorplan, Vec3};
use pwe_core::pwe_graph::*;

fn user(id: usize, pos: Vec3, alpha: f64, phi: f64, theta: f64) -> UserNode {
    UserNode {
        id,
        position: pos,
        antenna: AntennaPattern::new(alpha, phi, theta, -30.0),
        trajectory: None,
        authorized: true,
    }
}

fn graph(room: (f64, f64, f64), coated: [bool; 6], users: Vec<UserNode>, tile: f64) -> PweGraph {
    let fp = Floorplan::box_room(room.0, room.1, room.2, coated).unwrap();
    build_graph(fp, users, EMProfile::default(), BuildOptions { tile_size: tile, ..Default::default() }).unwrap()
}

/// 2x1x1 room: 10 tiles and two omnidirectional users, 12 nodes.
fn small_graph() -> PweGraph {
    graph(
        (2.0, 1.0, 1.0),
        [true; 6],
        vec![
            user(0, Vec3::new(0.4, 0.5, 0.5), 360.0, 0.0, 0.0),
            user(1, Vec3::new(1.6, 0.5, 0.5), 360.0, 0.0, 0.0),
        ],
        1.0,
    )
}

/// Minimum delay over every simple path, with users only at the ends.
fn brute_force(g: &PweGraph, a: NodeId, b: NodeId, ex_links: &HashSet<LinkId>, ex_nodes: &HashSet<NodeId>) -> Option<f64> {
    fn go(
        g: &PweGraph,
        cur: NodeId,
        b: NodeId,
        seen: &mut Vec<bool>,
        d: f64,
        best: &mut Option<f64>,
        ex_l: &HashSet<LinkId>,
        ex_n: &HashSet<NodeId>,
    ) {
        if cur == b {
            if best.map_or(true, |x| d < x) {
                *best = Some(d);
            }
            return;
        }
        for &(n, l) in g.neighbors(cur) {
            if seen[n] || ex_l.contains(&l) || ex_n.contains(&n) || (g.is_user(n) && n != b) {
                continue;
            }
            seen[n] = true;
            go(g, n, b, seen, d + g.links[l].delay, best, ex_l, ex_n);
            seen[n] = false;
        }
    }
    if ex_nodes.contains(&a) || ex_nodes.contains(&b) {
        return None;
    }
    let mut seen = vec![false; g.node_count()];
    seen[a] = true;
    let mut best = None;
    go(g, a, b, &mut seen, 0.0, &mut best, ex_links, ex_nodes);
    best
}

#[test]
fn dbm_round_trip() {
    assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
    assert!((dbm_to_watts(-30.0) - 1e-6).abs() < 1e-21);
    for x in [-250.0, -87.3, 0.0, 12.5] {
        assert!((watts_to_dbm(dbm_to_watts(x)) - x).abs() < 1e-9);
    }
}

#[test]
fn tile_counts_of_stress_rooms() {
    let all = graph((13.0, 13.0, 3.0), [true; 6], vec![], 1.0);
    assert_eq!(all.tiles.len(), 494);
    assert!(all.tiles.iter().all(|t| !t.is_virtual));
    let ceiling = graph((13.0, 13.0, 3.0), [false, true, false, false, false, false], vec![], 1.0);
    assert_eq!(ceiling.tiles.iter().filter(|t| !t.is_virtual).count(), 169);
    assert!((ceiling.tiles.iter().map(|t| t.area).sum::<f64>() - 2.0 * (169.0 + 78.0)).abs() < 1e-9);
}

#[test]
fn untileable_coated_surface_rejected() {
    let fp = Floorplan::box_room(2.5, 2.0, 2.0, [true; 6]).unwrap();
    let r = build_graph(fp, vec![], EMProfile::default(), BuildOptions::default());
    assert!(matches!(r, Err(GraphError::NotTileable { .. })));
    let fp = Floorplan::box_room(2.5, 2.0, 2.0, [false; 6]).unwrap();
    assert!(build_graph(fp, vec![], EMProfile::default(), BuildOptions::default()).is_ok());
}

#[test]
fn user_outside_room_rejected() {
    let fp = Floorplan::box_room(2.0, 2.0, 2.0, [true; 6]).unwrap();
    let u = vec![user(0, Vec3::new(3.0, 1.0, 1.0), 60.0, 0.0, 0.0)];
    let r = build_graph(fp, u, EMProfile::default(), BuildOptions::default());
    assert_eq!(r.unwrap_err(), GraphError::UserOutOfBounds(0));
}

#[test]
fn peak_directivity_matches_closed_form() {
    for alpha in [10.0, 30.0, 50.0, 80.0, 120.0, 200.0, 300.0, 360.0] {
        let k: f64 = 180.0 / alpha;
        let b: f64 = (alpha / 2.0f64).to_radians();
        let integral = 2.0 * PI * 0.5 * ((1.0 + b.sin()) / (1.0 + k) + (1.0 - b.sin()) / (1.0 - k));
        let expected = 4.0 * PI / integral;
        let got = AntennaPattern::new(alpha, 0.0, 0.0, 0.0).peak_directivity();
        assert!((got - expected).abs() < 1e-8 * expected, "alpha {alpha}: {got} vs {expected}");
    }
}

#[test]
fn boresight_convention() {
    let a = AntennaPattern::new(60.0, 90.0, 0.0, 0.0);
    assert!((a.boresight() - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    let a = AntennaPattern::new(60.0, 0.0, 90.0, 0.0);
    assert!((a.boresight() - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    assert_eq!(a.normalized_gain(0.0), 1.0);
    assert_eq!(a.normalized_gain(30.0), 0.0);
    assert!((a.normalized_gain(20.0) - (PI / 3.0).cos()).abs() < 1e-12);
}

#[test]
fn links_connect_facing_tiles_only() {
    let g = small_graph();
    for l in &g.links {
        let (a, b) = g.link_segment(l.id);
        assert!((l.length - a.distance(b)).abs() < 1e-12);
        assert!((l.delay - l.length / SPEED_OF_LIGHT).abs() < 1e-24);
        assert!(l.a < l.b);
        if l.kind == LinkKind::InterTile {
            assert_ne!(g.tiles[l.a].surface, g.tiles[l.b].surface);
        }
    }
    // Tiles on the same wall never see each other.
    let floor: Vec<_> = g.tiles.iter().filter(|t| t.surface == 0).map(|t| t.id).collect();
    assert!(g.link_between(floor[0], floor[1]).is_none());
}

#[test]
fn first_impact_power_formula() {
    let p = first_impact_power(1e-6, 2.0, 0.25, 3.0);
    assert!((p - 1e-6 * 2.0 * 0.25 / (4.0 * PI * 9.0)).abs() < 1e-22);
}

#[test]
fn shortest_path_matches_brute_force_unmasked() {
    let g = small_graph();
    assert_eq!(g.node_count(), 12);
    let none = HashSet::new();
    for a in 0..g.node_count() {
        for b in 0..g.node_count() {
            if a == b {
                continue;
            }
            let p = g.shortest_path(a, b, &none, &none);
            let bf = brute_force(&g, a, b, &none, &none);
            match (p, bf) {
                (Some(p), Some(d)) => {
                    g.validate_path(&p).unwrap();
                    assert!((p.total_delay - d).abs() <= 1e-18, "{a}->{b}");
                }
                (None, None) => {}
                (p, bf) => panic!("{a}->{b}: {:?} vs {:?}", p.map(|p| p.nodes), bf),
            }
        }
    }
}

#[test]
fn k_shortest_paths_are_node_disjoint_and_ordered() {
    let g = graph(
        (3.0, 3.0, 2.0),
        [true; 6],
        vec![
            user(0, Vec3::new(0.5, 1.5, 1.0), 360.0, 0.0, 0.0),
            user(1, Vec3::new(2.5, 1.5, 1.0), 360.0, 0.0, 0.0),
        ],
        1.0,
    );
    let (a, b) = (g.user_node(0), g.user_node(1));
    let ps = g.k_shortest_paths(6, a, b);
    assert!(!ps.is_empty());
    let mut seen = HashSet::new();
    for w in ps.windows(2) {
        assert!(w[0].total_delay <= w[1].total_delay);
    }
    for p in &ps {
        g.validate_path(p).unwrap();
        assert_eq!((p.source(), p.target()), (a, b));
        for &n in &p.nodes[1..p.nodes.len() - 1] {
            assert!(seen.insert(n), "node {n} shared");
        }
    }
    // Cached tile-to-tile queries agree with fresh ones, in both directions.
    let (s, t) = (0, g.tiles.len() - 1);
    let fresh = g.k_shortest_paths_fresh(4, s, t);
    assert_eq!(g.k_shortest_paths(4, s, t), fresh);
    let rev: Vec<Vec<NodeId>> = g.k_shortest_paths(4, t, s).iter().map(|p| p.nodes.clone()).collect();
    let expect: Vec<Vec<NodeId>> = fresh.iter().map(|p| p.reversed(&g).nodes).collect();
    assert_eq!(rev, expect);
}

#[test]
fn user_link_inputs_follow_free_space_loss() {
    let g = graph((2.0, 2.0, 2.0), [true; 6], vec![user(0, Vec3::new(1.0, 1.0, 1.0), 100.0, 90.0, 0.0)], 1.0);
    let inputs = g.user_link_inputs(0, 2.4e9);
    assert!(!inputs.is_empty());
    let ant = &g.users[0].antenna;
    for (l, w) in inputs {
        let t = &g.tiles[g.links[l].a];
        assert_eq!(t.surface, 1, "only ceiling tiles are in a 100 degree upward lobe");
        let d = t.center.distance(g.users[0].position);
        let gain = ant.peak_directivity() * ant.normalized_gain(ant.off_axis(t.center - g.users[0].position));
        let expect = dbm_to_watts(-30.0) * gain * t.area / (4.0 * PI * d * d);
        assert!((w.power - expect).abs() < 1e-15 * expect.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_shortest_path_matches_brute_force(
        a in 0usize..12, b in 0usize..12,
        links in proptest::collection::hash_set(0usize..80, 0..25),
        nodes in proptest::collection::hash_set(0usize..12, 0..3),
    ) {
        prop_assume!(a != b);
        let g = small_graph();
        let links: HashSet<LinkId> = links.into_iter().filter(|&l| l < g.links.len()).collect();
        let p = g.shortest_path(a, b, &links, &nodes);
        let bf = brute_force(&g, a, b, &links, &nodes);
        match (p, bf) {
            (Some(p), Some(d)) => {
                prop_assert!(g.validate_path(&p).is_ok());
                prop_assert!(p.links.iter().all(|l| !links.contains(l)));
                prop_assert!(p.nodes.iter().all(|n| !nodes.contains(n)));
                prop_assert!((p.total_delay - d).abs() <= 1e-18);
            }
            (None, None) => {}
            (p, bf) => prop_assert!(false, "{:?} vs {:?}", p.map(|p| p.nodes), bf),
        }
    }
}
