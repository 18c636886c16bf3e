#![allow(dead_code)]

use pwe_core::configurator::{deploy, Deployment, PairRequest};
use pwe_core::em_model::EMProfile;
use pwe_core::geometry::{Floorplan, Vec3};
use pwe_core::objectives::ObjectiveSet;
use pwe_core::pwe_graph::*;

pub const CARRIER: f64 = 2.4e9;

pub fn user(id: usize, pos: Vec3, alpha: f64, phi: f64, theta: f64) -> UserNode {
    UserNode {
        id,
        position: pos,
        antenna: AntennaPattern::new(alpha, phi, theta, -30.0),
        trajectory: None,
        authorized: true,
    }
}

pub fn room_graph(room: (f64, f64, f64), users: Vec<UserNode>, gain: f64) -> PweGraph {
    let fp = Floorplan::box_room(room.0, room.1, room.2, [true; 6]).unwrap();
    build_graph(fp, users, EMProfile::with_gain(gain), BuildOptions::default()).unwrap()
}

/// First (in DFS order) simple path user `tx` -> `hops` tiles -> user `rx`
/// where consecutive tiles sit on different surfaces.
pub fn find_chain(g: &PweGraph, tx: usize, rx: usize, hops: usize) -> Option<Vec<NodeId>> {
    fn go(g: &PweGraph, nodes: &mut Vec<NodeId>, rx: NodeId, hops: usize) -> bool {
        let cur = *nodes.last().unwrap();
        if nodes.len() == hops + 1 {
            return g.link_between(cur, rx).is_some();
        }
        for &(n, _) in g.neighbors(cur) {
            if g.is_user(n) || nodes.contains(&n) {
                continue;
            }
            nodes.push(n);
            if go(g, nodes, rx, hops) {
                return true;
            }
            nodes.pop();
        }
        false
    }
    let (a, b) = (g.user_node(tx), g.user_node(rx));
    let mut nodes = vec![a];
    if go(g, &mut nodes, b, hops) {
        nodes.push(b);
        Some(nodes)
    } else {
        None
    }
}

/// Deploy path functions along `nodes` for a MaxPower pair.
pub fn deploy_chain(g: &mut PweGraph, nodes: &[NodeId], tx: usize, rx: usize) -> Path {
    let p = g.path_from_nodes(nodes).unwrap();
    let pair = PairRequest::new(tx, rx, ObjectiveSet::max_power());
    let mut dep = Deployment::default();
    deploy(g, &mut dep, 0, &pair, std::slice::from_ref(&p), None, CARRIER);
    p
}
