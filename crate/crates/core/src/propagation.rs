//! Stack-based ray propagation through deployed tile functions.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::em_model::{apply_function, BaseFunction, EMProfile, EmError, TileFunction, WaveSpec};
use crate::geometry::{ray_sphere_entry, surface_hit, Vec3};
use crate::pwe_graph::{dbm_to_watts, LinkId, NodeId, Path, PweGraph, SPEED_OF_LIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropError {
    #[error("tile {0} has no deployed function (strict mode)")]
    Unconfigured(NodeId),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error("path broken at node {0}: no output continues along the next link")]
    BrokenPath(NodeId),
    #[error("path is too short")]
    ShortPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropConfig {
    pub min_power_dbm: f64,
    pub max_bounces: usize,
    /// Refuse to run when a coated tile has no deployed function.
    pub strict: bool,
}

impl Default for PropConfig {
    fn default() -> Self {
        PropConfig { min_power_dbm: -250.0, max_bounces: 50, strict: false }
    }
}

/// Node sequence a ray actually followed. Links are graph links when the
/// graph has one between consecutive nodes, `None` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    pub nodes: Vec<NodeId>,
    pub links: Vec<Option<LinkId>>,
    pub lengths: Vec<f64>,
    pub delay: f64,
}

impl RayPath {
    pub fn bounces(&self) -> usize {
        self.nodes.len().saturating_sub(2)
    }

    pub fn first_link(&self) -> Option<LinkId> {
        self.links.first().copied().flatten()
    }

    pub fn last_link(&self) -> Option<LinkId> {
        self.links.last().copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub source: usize,
    pub path: RayPath,
    /// Wave after the receive antenna gain.
    pub wave: WaveSpec,
    /// Power of the seed at its first tile.
    pub injected_power: f64,
    /// Power reaching the receiver before the receive gain.
    pub incident_power: f64,
    pub rx_gain: f64,
}

impl Arrival {
    pub fn power(&self) -> f64 {
        self.wave.power
    }

    pub fn delay(&self) -> f64 {
        self.path.delay
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RayStats {
    pub spawned: u64,
    pub reached: u64,
    /// Includes rays stopped by a non-receiving user.
    pub absorbed: u64,
    pub blocked: u64,
    pub sub_threshold: u64,
    pub over_bounce: u64,
    pub escaped: u64,
}

impl RayStats {
    pub fn terminated(&self) -> u64 {
        self.reached + self.absorbed + self.sub_threshold + self.over_bounce + self.escaped
    }

    pub fn balanced(&self) -> bool {
        self.spawned == self.terminated()
    }

    pub fn add(&mut self, o: &RayStats) {
        self.spawned += o.spawned;
        self.reached += o.reached;
        self.absorbed += o.absorbed;
        self.blocked += o.blocked;
        self.sub_threshold += o.sub_threshold;
        self.over_bounce += o.over_bounce;
        self.escaped += o.escaped;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub arrivals: BTreeMap<usize, Vec<Arrival>>,
    pub stats: RayStats,
    /// Function applications per tile.
    pub tile_usage: Vec<u64>,
}

impl PropagationResult {
    pub fn arrivals_at(&self, rx: usize) -> &[Arrival] {
        self.arrivals.get(&rx).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

#[derive(Clone)]
struct Ray {
    path: RayPath,
    current: WaveSpec,
    pos: Vec3,
    injected: f64,
    /// Tile the ray is about to reach, with the arriving link and length.
    pending: Option<(NodeId, Option<LinkId>, f64)>,
}

enum Event {
    Tile(NodeId, f64, Vec3),
    User(usize, f64),
    BackFace,
    Escape,
}

fn absorb_from_normal(normal: Vec3, omega: f64) -> TileFunction {
    TileFunction {
        base: BaseFunction::Absorb { residual: 0.0 },
        modifiers: Default::default(),
        expected_input: Some(WaveSpec::planar(omega, -normal, 1.0)),
    }
}

fn next_event(g: &PweGraph, pos: Vec3, dir: Vec3, from: Option<NodeId>) -> Event {
    let from_normal = from.filter(|&n| !g.is_user(n)).map(|n| g.tiles[n].normal);
    let hit = surface_hit(pos, dir, &g.floorplan, from_normal);
    let limit = hit.map_or(f64::INFINITY, |h| h.distance);
    let mut user: Option<(usize, f64)> = None;
    for u in 0..g.users.len() {
        if let Some(k) = ray_sphere_entry(pos, dir, &g.sphere(u), limit) {
            if user.map_or(true, |(_, b)| k < b) {
                user = Some((u, k));
            }
        }
    }
    match (user, hit) {
        (Some((u, _)), _) => Event::User(u, g.users[u].position.distance(pos)),
        (None, Some(h)) => {
            if dir.dot(g.floorplan.surfaces[h.surface].normal) >= 0.0 {
                return Event::BackFace;
            }
            Event::Tile(g.tile_at(h.surface, h.s, h.t), h.distance, h.point)
        }
        (None, None) => Event::Escape,
    }
}

/// Link and delay for a hop of traveled length `len` between `a` and `b`.
/// Lengths within 1e-9 m of the graph link snap to it.
fn hop(g: &PweGraph, a: NodeId, b: NodeId, len: f64) -> (Option<LinkId>, f64, f64) {
    match g.link_between(a, b) {
        Some(l) if (g.links[l].length - len).abs() <= 1e-9 => (Some(l), g.links[l].length, g.links[l].delay),
        Some(l) => (Some(l), len, len / SPEED_OF_LIGHT + g.options.rx_delay),
        None => (None, len, len / SPEED_OF_LIGHT + g.options.rx_delay),
    }
}

/// Trace every transmitter input through the configured graph. Rays are
/// processed last-in first-out; each terminates exactly once.
pub fn nlos_prop(
    g: &PweGraph,
    receivers: &BTreeSet<usize>,
    tx_inputs: &[(usize, Vec<(LinkId, WaveSpec)>)],
    cfg: &PropConfig,
) -> Result<PropagationResult, PropError> {
    if cfg.strict {
        if let Some(t) = g.tiles.iter().position(|t| !t.is_virtual && g.deployed[t.id].is_none()) {
            return Err(PropError::Unconfigured(t));
        }
    }
    let threshold = dbm_to_watts(cfg.min_power_dbm);
    let virtual_profile = EMProfile::with_gain(g.options.virtual_gain);
    let mut stats = RayStats::default();
    let mut usage = vec![0u64; g.tiles.len()];
    let mut arrivals: BTreeMap<usize, Vec<Arrival>> = receivers.iter().map(|&r| (r, Vec::new())).collect();

    for (src, inputs) in tx_inputs {
        let src_node = g.user_node(*src);
        let mut stack: Vec<Ray> = Vec::with_capacity(inputs.len());
        for (l, w) in inputs {
            stats.spawned += 1;
            if !(w.power >= threshold) || w.power == 0.0 {
                stats.sub_threshold += 1;
                continue;
            }
            let link = &g.links[*l];
            let tile = link.other(src_node);
            stack.push(Ray {
                path: RayPath { nodes: vec![src_node], links: vec![], lengths: vec![], delay: 0.0 },
                current: w.clone(),
                pos: g.position(src_node),
                injected: w.power,
                pending: Some((tile, Some(*l), link.length)),
            });
        }

        while let Some(mut ray) = stack.pop() {
            let prev = *ray.path.nodes.last().unwrap();
            let (tile, point, link, len, delay) = match ray.pending.take() {
                Some((t, l, len)) => {
                    let delay = l.map_or(len / SPEED_OF_LIGHT, |l| g.links[l].delay);
                    (t, g.tiles[t].center, l, len, delay)
                }
                None => match next_event(g, ray.pos, ray.current.direction, Some(prev)) {
                    Event::Escape | Event::BackFace => {
                        stats.escaped += 1;
                        continue;
                    }
                    Event::User(u, dist) => {
                        let un = g.user_node(u);
                        if u == *src || !receivers.contains(&u) {
                            stats.absorbed += 1;
                            stats.blocked += 1;
                            continue;
                        }
                        let ant = &g.users[u].antenna;
                        let rx_gain = ant.normalized_gain(ant.off_axis(-ray.current.direction));
                        let p = ray.current.power * rx_gain;
                        if !(p >= threshold) || p == 0.0 {
                            stats.sub_threshold += 1;
                            continue;
                        }
                        let (l, len, delay) = hop(g, prev, un, dist);
                        let mut path = ray.path;
                        path.nodes.push(un);
                        path.links.push(l);
                        path.lengths.push(len);
                        path.delay += delay;
                        let incident = ray.current.power;
                        let mut wave = ray.current;
                        wave.power = p;
                        stats.reached += 1;
                        arrivals.get_mut(&u).unwrap().push(Arrival {
                            source: *src,
                            path,
                            wave,
                            injected_power: ray.injected,
                            incident_power: incident,
                            rx_gain,
                        });
                        continue;
                    }
                    Event::Tile(t, dist, point) => {
                        let (l, len, delay) = hop(g, prev, t, dist);
                        (t, point, l, len, delay)
                    }
                },
            };

            if ray.path.nodes.len() - 1 >= cfg.max_bounces {
                stats.over_bounce += 1;
                continue;
            }
            ray.path.nodes.push(tile);
            ray.path.links.push(link);
            ray.path.lengths.push(len);
            ray.path.delay += delay;
            usage[tile] += 1;

            let node = &g.tiles[tile];
            let profile = if node.is_virtual { &virtual_profile } else { &g.profile };
            let default_fn;
            let f = match &g.deployed[tile] {
                Some(f) => f,
                None => {
                    default_fn = absorb_from_normal(node.normal, ray.current.omega);
                    &default_fn
                }
            };
            let outs = apply_function(f, &ray.current, profile, node.normal)?;
            if outs.is_empty() {
                stats.absorbed += 1;
                continue;
            }
            stats.spawned += outs.len() as u64 - 1;
            for o in outs.into_iter().rev() {
                if !(o.power >= threshold) || o.power == 0.0 {
                    stats.sub_threshold += 1;
                    continue;
                }
                stack.push(Ray {
                    path: ray.path.clone(),
                    current: o,
                    pos: point,
                    injected: ray.injected,
                    pending: None,
                });
            }
        }
    }
    Ok(PropagationResult { arrivals, stats, tile_usage: usage })
}

/// Compose the deployed functions along `p` for `input`, which enters the
/// first tile. Returns the output wave and the path delay.
pub fn path_output(input: &WaveSpec, p: &Path, g: &PweGraph) -> Result<(WaveSpec, f64), PropError> {
    if p.nodes.len() < 2 {
        return Err(PropError::ShortPath);
    }
    let virtual_profile = EMProfile::with_gain(g.options.virtual_gain);
    let mut cur = input.clone();
    let n = p.nodes.len();
    for i in 0..n {
        let node = p.nodes[i];
        if g.is_user(node) {
            continue;
        }
        let tile = &g.tiles[node];
        let profile = if tile.is_virtual { &virtual_profile } else { &g.profile };
        let f = g.deployed[node].as_ref().ok_or(PropError::BrokenPath(node))?;
        let outs = apply_function(f, &cur, profile, tile.normal)?;
        if i + 1 == n {
            cur = outs.into_iter().next().ok_or(PropError::BrokenPath(node))?;
            break;
        }
        let next = (g.position(p.nodes[i + 1]) - tile.center).normalized().ok_or(PropError::BrokenPath(node))?;
        cur = outs
            .into_iter()
            .find(|o| o.power > 0.0 && (o.direction - next).norm() <= crate::em_model::MATCH_TOLERANCE)
            .ok_or(PropError::BrokenPath(node))?;
    }
    Ok((cur, p.total_delay))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdpEntry {
    pub source: usize,
    pub path: RayPath,
    pub wave: WaveSpec,
    pub delay: f64,
    pub useful: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerDelayProfile {
    pub entries: Vec<PdpEntry>,
}

impl PowerDelayProfile {
    /// Entries sorted by delay; equal delays keep arrival order.
    pub fn from_entries(mut entries: Vec<PdpEntry>) -> Self {
        entries.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        PowerDelayProfile { entries }
    }

    pub fn useful_power(&self) -> f64 {
        self.entries.iter().filter(|e| e.useful).map(|e| e.wave.power).sum()
    }

    pub fn interference_power(&self) -> f64 {
        self.entries.iter().filter(|e| !e.useful).map(|e| e.wave.power).sum()
    }
}

pub fn total_received(pdp: &PowerDelayProfile) -> f64 {
    pdp.entries.iter().map(|e| e.wave.power).sum()
}

/// Useful iff the path left its source on a link labeled for that
/// transmitter and entered `rx` on a link labeled for `rx`.
pub fn is_useful(g: &PweGraph, path: &RayPath, source: usize, rx: usize) -> bool {
    let first = path.first_link().and_then(|l| g.links[l].tx_label);
    let last = path.last_link().and_then(|l| g.links[l].rx_label);
    first == Some(source) && last == Some(rx)
}

pub fn classify_useful(g: &PweGraph, arrivals: &[Arrival], rx: usize) -> Vec<PdpEntry> {
    arrivals
        .iter()
        .map(|a| PdpEntry {
            source: a.source,
            path: a.path.clone(),
            wave: a.wave.clone(),
            delay: a.path.delay,
            useful: is_useful(g, &a.path, a.source, rx),
        })
        .collect()
}
