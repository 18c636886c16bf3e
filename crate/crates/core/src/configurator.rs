//! KpConfig: pair ordering and quotas, per-pair path exploration,
//! objective-driven selection, deployment, blocking and cleanup.

use std::collections::{BTreeMap, HashMap};

use crate::em_model::{apply_function, BaseFunction, EMProfile, FunctionKind, Modifiers, TileFunction, WaveSpec};
use crate::geometry::{deviation_from_perpendicular, segment_intersects_sphere, surface_hit, Sphere, Vec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::objectives::{eavesdrop_violations, useful_power, EavesTarget, ObjectiveSet};
use crate::pwe_graph::{LinkId, LinkKind, Mask, NodeId, Path, PweGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PairRequest {
    pub tx: usize,
    pub rx: usize,
    pub objective: ObjectiveSet,
}

impl PairRequest {
    pub fn new(tx: usize, rx: usize, objective: ObjectiveSet) -> Self {
        PairRequest { tx, rx, objective }
    }

    pub fn is_symmetric_to(&self, o: &PairRequest) -> bool {
        self.tx == o.rx && self.rx == o.tx && self.objective == o.objective
    }
}

/// Why a tile carries its function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Path,
    Block,
    /// Cleanup absorber on a tile lit by an active transmitter.
    Emission,
    /// Cleanup absorber on a tile no transmitter reaches.
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub function: TileFunction,
    pub role: Role,
    /// Pair index for path tiles.
    pub pair: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MdfResult {
    pub blocked: Vec<usize>,
    pub sorted: Vec<usize>,
    pub n_e: BTreeMap<usize, usize>,
    pub k_e: BTreeMap<usize, usize>,
    pub v_e: BTreeMap<usize, f64>,
    pub n_u: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Deployment {
    pub assignments: BTreeMap<NodeId, Assignment>,
    /// Selected paths per pair index, in deployment order.
    pub pair_paths: BTreeMap<usize, Vec<Path>>,
    pub mdf: MdfResult,
    pub paths_rem: usize,
    /// Pairs dropped as symmetric duplicates or disconnected.
    pub skipped: Vec<usize>,
    /// User links of blocked users where no absorber could be placed.
    pub partial_blocks: Vec<(usize, LinkId)>,
}

impl Deployment {
    pub fn count_role(&self, role: Role) -> usize {
        self.assignments.values().filter(|a| a.role == role).count()
    }

    /// Tiles carrying a path or block function, or absorbing emissions of
    /// an active transmitter.
    pub fn configured_tiles(&self) -> usize {
        self.assignments.values().filter(|a| a.role != Role::Idle).count()
    }

    pub fn total_paths(&self) -> usize {
        self.pair_paths.values().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct KpOptions {
    pub carrier: f64,
    pub absorb_cleanup: bool,
    /// Maximum configured-tile hops followed by `find_complex_path`.
    pub max_follow: usize,
    /// Optional modifiers per pair index.
    pub modifiers: HashMap<usize, Modifiers>,
    /// Apply eavesdropping filtering before path search (true) or to the
    /// selected paths afterwards (false).
    pub security_priority: bool,
    /// Pick the block target user at random from this seed instead of the
    /// nearest one.
    pub block_seed: Option<u64>,
}

impl Default for KpOptions {
    fn default() -> Self {
        KpOptions {
            carrier: 2.4e9,
            absorb_cleanup: true,
            max_follow: 50,
            modifiers: HashMap::new(),
            security_priority: true,
            block_seed: None,
        }
    }
}

/// Transmitter inputs per user: `(user link, wave on it)`.
pub type TxInputs = BTreeMap<usize, Vec<(LinkId, WaveSpec)>>;

fn link_count(g: &PweGraph, u: usize) -> usize {
    g.neighbors(g.user_node(u)).len()
}

/// Most-distant-pair-first ordering and path quotas.
pub fn mdf_policy(g: &PweGraph, pairs: &[PairRequest], active: &[usize]) -> MdfResult {
    let mut r = MdfResult::default();
    for &e in active {
        let p = &pairs[e];
        if p.objective.block {
            r.blocked.push(e);
            continue;
        }
        r.sorted.push(e);
        let k = link_count(g, p.tx).min(link_count(g, p.rx));
        let ksp = g.k_shortest_paths(k, g.user_node(p.tx), g.user_node(p.rx));
        let v = if ksp.is_empty() {
            0.0
        } else {
            ksp.iter().map(|q| q.total_delay).sum::<f64>() / ksp.len() as f64
        };
        r.k_e.insert(e, k);
        r.v_e.insert(e, v);
        *r.n_u.entry(p.tx).or_insert(0) += ksp.len();
        *r.n_u.entry(p.rx).or_insert(0) += ksp.len();
    }
    let v_e = r.v_e.clone();
    r.sorted.sort_by(|a, b| v_e[b].total_cmp(&v_e[a]).then(a.cmp(b)));
    for &e in &r.sorted {
        let p = &pairs[e];
        let share = |u: usize| {
            let n = r.n_u.get(&u).copied().unwrap_or(0);
            if n == 0 {
                usize::MAX
            } else {
                link_count(g, u) / n
            }
        };
        let n_e = share(p.tx).min(share(p.rx)).max(1);
        r.n_e.insert(e, n_e);
    }
    r
}

/// Users whose spheres a pair's paths must avoid.
pub fn protected_spheres(g: &PweGraph, pair: &PairRequest) -> Vec<(usize, Sphere)> {
    let users: Vec<usize> = match &pair.objective.eaves {
        None => return Vec::new(),
        Some(EavesTarget::All) => (0..g.users.len()).collect(),
        Some(EavesTarget::Users(v)) => v.clone(),
    };
    users
        .into_iter()
        .filter(|&u| u != pair.tx && u != pair.rx && u < g.users.len())
        .map(|u| (u, g.sphere(u)))
        .collect()
}

/// Links in conflict with the pair's eavesdropping and Doppler objectives.
pub fn filter_links_by_obj(g: &PweGraph, pair: &PairRequest) -> Vec<bool> {
    filter_links(g, pair, true)
}

fn filter_links(g: &PweGraph, pair: &PairRequest, eaves: bool) -> Vec<bool> {
    let mut out = vec![false; g.links.len()];
    let protected = if eaves { protected_spheres(g, pair) } else { Vec::new() };
    if !protected.is_empty() {
        for l in &g.links {
            let (a, b) = g.link_segment(l.id);
            if protected.iter().any(|(_, s)| segment_intersects_sphere(a, b, s)) {
                out[l.id] = true;
            }
        }
    }
    if let Some(tol) = pair.objective.doppler {
        if let Some(traj) = g.users[pair.rx].trajectory.as_ref() {
            let at = g.users[pair.rx].position;
            let mut best: Option<(f64, LinkId)> = None;
            let mut any_ok = false;
            for l in g.user_links(pair.rx) {
                if out[l] {
                    continue;
                }
                let (a, b) = g.link_segment(l);
                let dev = match deviation_from_perpendicular(a, b, traj, at) {
                    Ok(d) => d,
                    Err(_) => continue,
                };
                if best.map_or(true, |(d, _)| dev < d) {
                    best = Some((dev, l));
                }
                if dev <= tol {
                    any_ok = true;
                } else {
                    out[l] = true;
                }
            }
            if !any_ok {
                if let Some((_, l)) = best {
                    out[l] = false;
                }
            }
        }
    }
    out
}

fn profile_for<'a>(g: &'a PweGraph, t: NodeId, virtual_profile: &'a EMProfile) -> &'a EMProfile {
    if g.tiles[t].is_virtual {
        virtual_profile
    } else {
        &g.profile
    }
}

/// Wave arriving at `to` from node `from` along their connecting segment.
pub fn arriving_wave(g: &PweGraph, from: NodeId, to: NodeId, carrier: f64) -> WaveSpec {
    let d = g.position(to) - g.position(from);
    let len = d.norm();
    let dir = d * (1.0 / len);
    if g.is_user(from) {
        WaveSpec::focal(carrier, dir, len, 1.0, 0.0)
    } else {
        WaveSpec::planar(carrier, dir, 1.0)
    }
}

/// Where the deployed function of tile `h` sends a wave arriving from
/// `prev`: the link whose far end lies exactly along an output direction.
pub fn follow_output(g: &PweGraph, prev: NodeId, h: NodeId, carrier: f64) -> Option<(LinkId, NodeId)> {
    let f = g.deployed[h].as_ref()?;
    let vp = EMProfile::with_gain(g.options.virtual_gain);
    let wave = arriving_wave(g, prev, h, carrier);
    let outs = apply_function(f, &wave, profile_for(g, h, &vp), g.tiles[h].normal).ok()?;
    let here = g.tiles[h].center;
    for o in outs.iter().filter(|o| o.power > 0.0) {
        for &(n, l) in g.neighbors(h) {
            let dir = match (g.position(n) - here).normalized() {
                Some(d) => d,
                None => continue,
            };
            if (dir - o.direction).norm() <= crate::em_model::MATCH_TOLERANCE {
                return Some((l, n));
            }
        }
    }
    None
}

/// A path from `src` to `rx` avoiding `excluded` links. Unconfigured tiles
/// are preferred; otherwise the search walks up to the first configured
/// tile, follows its deployed output and continues from where it lands.
/// `first_link` forces the first hop out of `src`.
pub fn find_complex_path(
    g: &PweGraph,
    src: NodeId,
    first_link: Option<LinkId>,
    rx: NodeId,
    excluded: &Mask,
    opts: &KpOptions,
) -> Option<Path> {
    let mut mask = excluded.clone();
    let mut nodes = vec![src];
    let mut links: Vec<LinkId> = Vec::new();
    if let Some(l) = first_link {
        if mask.links[l] || !g.links[l].touches(src) {
            return None;
        }
        let n = g.links[l].other(src);
        mask.links[l] = true;
        nodes.push(n);
        links.push(l);
        if n == rx {
            return g.path_from_nodes(&nodes);
        }
    }
    let mut follows = 0;
    loop {
        let cur = *nodes.last().unwrap();
        if nodes.len() >= 2 && !g.is_user(cur) && g.is_configured(cur) {
            follows += 1;
            if follows > opts.max_follow {
                return None;
            }
            let prev = nodes[nodes.len() - 2];
            let (l, n) = follow_output(g, prev, cur, opts.carrier)?;
            if mask.links[l] || (n != rx && (g.is_user(n) || nodes.contains(&n))) {
                return None;
            }
            mask.links[l] = true;
            nodes.push(n);
            links.push(l);
            if n == rx {
                return g.path_from_nodes(&nodes);
            }
            continue;
        }
        for &n in &nodes[..nodes.len() - 1] {
            mask.nodes[n] = true;
        }
        let mut star = mask.clone();
        for t in &g.tiles {
            if g.is_configured(t.id) && t.id != cur {
                star.nodes[t.id] = true;
            }
        }
        if let Some(p) = g.shortest_path_masked(cur, rx, &star) {
            nodes.extend_from_slice(&p.nodes[1..]);
            links.extend_from_slice(&p.links);
            return g.path_from_nodes(&nodes);
        }
        let p = g.shortest_path_masked(cur, rx, &mask)?;
        for (i, &l) in p.links.iter().enumerate() {
            let h = p.nodes[i + 1];
            mask.links[l] = true;
            nodes.push(h);
            links.push(l);
            if h == rx {
                return g.path_from_nodes(&nodes);
            }
            if g.is_configured(h) {
                break;
            }
        }
    }
}

/// Select at most `max_paths` of `paths`. `power(p)` is the power injected
/// on the path's first link.
pub fn filter_paths_by_obj(
    paths: &[Path],
    max_paths: usize,
    obj: &ObjectiveSet,
    power: &dyn Fn(&Path) -> f64,
) -> Vec<usize> {
    let n = paths.len();
    let k = max_paths.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    if obj.max_power {
        let score: Vec<f64> = paths.iter().map(|p| power(p) * p.gain_product).collect();
        idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    } else if obj.max_sir {
        idx.sort_by(|&a, &b| paths[a].total_delay.total_cmp(&paths[b].total_delay).then(a.cmp(&b)));
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            let end = (i + k).min(n);
            let entries: Vec<(f64, f64)> = idx[i..end]
                .iter()
                .map(|&j| (paths[j].total_delay, power(&paths[j]) * paths[j].gain_product))
                .collect();
            let (p_tot, _) = useful_power(&entries, obj.d_th);
            if best.map_or(true, |(b, _)| p_tot > b) {
                best = Some((p_tot, i));
            }
        }
        match best {
            Some((_, i)) => idx[i..(i + k).min(n)].to_vec(),
            None => Vec::new(),
        }
    } else {
        idx.truncate(k);
        idx
    }
}

fn steer_normal(d_in: Vec3, d_out: Vec3) -> Vec3 {
    (d_in - d_out).normalized().expect("incoming and outgoing directions differ")
}

/// Function for tile `nodes[i]` of a path: collimation at the first and
/// last tile, steering in between.
pub fn path_function(g: &PweGraph, nodes: &[NodeId], i: usize, carrier: f64) -> TileFunction {
    let (prev, h, next) = (nodes[i - 1], nodes[i], nodes[i + 1]);
    let expected = arriving_wave(g, prev, h, carrier);
    let out = (g.position(next) - g.position(h)).normalized().expect("distinct nodes");
    let endpoint = i == 1 || i + 2 == nodes.len();
    if endpoint && g.profile.supports(FunctionKind::Col) {
        TileFunction::collimate(out, expected)
    } else {
        TileFunction::steer(steer_normal(expected.direction, out), expected)
    }
}

/// Deploy functions on the unconfigured tiles of `paths` and label their
/// user links. Returns the newly configured tiles.
pub fn deploy(
    g: &mut PweGraph,
    dep: &mut Deployment,
    pair_idx: usize,
    pair: &PairRequest,
    paths: &[Path],
    modifiers: Option<&Modifiers>,
    carrier: f64,
) -> Vec<NodeId> {
    let mut all_new = Vec::new();
    for p in paths {
        let mut new = Vec::new();
        for i in 1..p.nodes.len() - 1 {
            let h = p.nodes[i];
            if g.is_configured(h) {
                continue;
            }
            let f = path_function(g, &p.nodes, i, carrier);
            g.deployed[h] = Some(f.clone());
            dep.assignments.insert(h, Assignment { function: f, role: Role::Path, pair: Some(pair_idx) });
            new.push(h);
        }
        if let Some(m) = modifiers.filter(|m| !m.is_empty()) {
            // Uniform-gain profiles make every tile equivalent; lowest id wins.
            if let Some(&h) = new.iter().min() {
                let mut f = g.deployed[h].clone().unwrap();
                f.modifiers = m.clone();
                g.deployed[h] = Some(f.clone());
                dep.assignments.get_mut(&h).unwrap().function = f;
            }
        }
        let first = p.first_link();
        let last = p.last_link();
        if g.links[first].kind == LinkKind::UserTile && g.is_user(p.source()) {
            g.links[first].tx_label = Some(pair.tx);
        }
        if g.links[last].kind == LinkKind::UserTile && g.is_user(p.target()) {
            g.links[last].rx_label = Some(pair.rx);
        }
        all_new.extend(new);
    }
    all_new
}

fn block_target(g: &PweGraph, u: usize, seed: Option<u64>) -> Option<usize> {
    let Some(seed) = seed else { return nearest_other_user(g, u) };
    let others: Vec<usize> = (0..g.users.len()).filter(|&v| v != u).collect();
    if others.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    Some(others[rng.gen_range(0..others.len())])
}

fn nearest_other_user(g: &PweGraph, u: usize) -> Option<usize> {
    let p = g.users[u].position;
    (0..g.users.len())
        .filter(|&v| v != u)
        .min_by(|&a, &b| g.users[a].position.distance(p).total_cmp(&g.users[b].position.distance(p)).then(a.cmp(&b)))
}

enum TraceEnd {
    Free(NodeId),
    Absorbed,
    Failed,
}

/// Follow the emission entering tile `h` from `prev` through deployed
/// functions until it reaches an unconfigured coated tile or is absorbed.
fn trace_to_free_tile(g: &PweGraph, prev: NodeId, h: NodeId, carrier: f64, max_steps: usize) -> TraceEnd {
    let vp = EMProfile::with_gain(g.options.virtual_gain);
    let mut wave = arriving_wave(g, prev, h, carrier);
    let mut tile = h;
    let mut pos = g.tiles[h].center;
    for _ in 0..max_steps {
        if !g.is_configured(tile) {
            return if g.tiles[tile].is_virtual { TraceEnd::Failed } else { TraceEnd::Free(tile) };
        }
        let f = g.deployed[tile].as_ref().expect("configured tile");
        let outs = match apply_function(f, &wave, profile_for(g, tile, &vp), g.tiles[tile].normal) {
            Ok(o) => o,
            Err(_) => return TraceEnd::Failed,
        };
        let Some(o) = outs.into_iter().find(|o| o.power > 0.0) else {
            return TraceEnd::Absorbed;
        };
        let Some(hit) = surface_hit(pos, o.direction, &g.floorplan, Some(g.tiles[tile].normal)) else {
            return TraceEnd::Failed;
        };
        if (0..g.users.len()).any(|u| {
            crate::geometry::ray_sphere_entry(pos, o.direction, &g.sphere(u), hit.distance).is_some()
        }) {
            return TraceEnd::Failed;
        }
        tile = g.tile_at(hit.surface, hit.s, hit.t);
        pos = hit.point;
        wave = o;
    }
    TraceEnd::Failed
}

/// Absorb the emissions of each blocked transmitter at the first
/// unconfigured tile reached through each of its user links.
pub fn deploy_blocks(g: &mut PweGraph, dep: &mut Deployment, pairs: &[PairRequest], blocked: &[usize], opts: &KpOptions) {
    for &e in blocked {
        let u = pairs[e].tx;
        let un = g.user_node(u);
        let target = block_target(g, u, opts.block_seed).map(|v| g.user_node(v));
        for l in g.user_links(u) {
            let h = g.links[l].other(un);
            let mut spot = None;
            if !g.is_configured(h) {
                spot = Some(h);
            } else if let Some(t) = target {
                let mask = Mask::new(g);
                if let Some(p) = find_complex_path(g, un, Some(l), t, &mask, opts) {
                    spot = p.nodes[1..].iter().copied().find(|&n| !g.is_user(n) && !g.is_configured(n));
                }
            }
            if spot.is_none() {
                match trace_to_free_tile(g, un, h, opts.carrier, opts.max_follow) {
                    TraceEnd::Free(t) => spot = Some(t),
                    TraceEnd::Absorbed => continue,
                    TraceEnd::Failed => {}
                }
            }
            match spot {
                Some(t) => {
                    let f = TileFunction::full_absorb();
                    g.deployed[t] = Some(f.clone());
                    dep.assignments.insert(t, Assignment { function: f, role: Role::Block, pair: Some(e) });
                }
                None => dep.partial_blocks.push((u, l)),
            }
        }
    }
}

/// Pair indices kept after dropping symmetric duplicates and, for
/// non-block pairs, pairs without any path in the graph.
pub fn prefilter_pairs(g: &PweGraph, pairs: &[PairRequest]) -> (Vec<usize>, Vec<usize>) {
    let mut keep = Vec::new();
    let mut skip = Vec::new();
    let mask = Mask::new(g);
    for (i, p) in pairs.iter().enumerate() {
        let dup = keep.iter().any(|&j: &usize| pairs[j].is_symmetric_to(p) || pairs[j] == *p);
        let invalid = p.tx >= g.users.len() || (!p.objective.block && (p.rx >= g.users.len() || p.tx == p.rx));
        if dup || invalid {
            skip.push(i);
            continue;
        }
        if !p.objective.block && g.shortest_path_masked(g.user_node(p.tx), g.user_node(p.rx), &mask).is_none() {
            skip.push(i);
            continue;
        }
        keep.push(i);
    }
    (keep, skip)
}

/// Configure the graph for `pairs`. Deployed functions are written to
/// `g.deployed` and user-link labels to `g.links`.
pub fn kp_config(g: &mut PweGraph, pairs: &[PairRequest], tx_inputs: &TxInputs, opts: &KpOptions) -> Deployment {
    let mut dep = Deployment::default();
    let (active, skipped) = prefilter_pairs(g, pairs);
    dep.skipped = skipped;
    dep.mdf = mdf_policy(g, pairs, &active);
    let input_power: HashMap<LinkId, f64> =
        tx_inputs.values().flat_map(|v| v.iter().map(|(l, w)| (*l, w.power))).collect();
    let power = |p: &Path| input_power.get(&p.first_link()).copied().unwrap_or(0.0);

    let mut used = vec![false; g.links.len()];
    let mut paths_rem = 0usize;
    for &e in &dep.mdf.sorted.clone() {
        let pair = &pairs[e];
        let k_e = dep.mdf.k_e[&e];
        let n_e = dep.mdf.n_e[&e];
        let la = filter_links(g, pair, opts.security_priority);
        let (tx, rx) = (g.user_node(pair.tx), g.user_node(pair.rx));
        let mut scratch = g.clone();
        let mut scratch_dep = Deployment::default();
        let mut found: Vec<Path> = Vec::new();
        let mut mask = Mask::new(g);
        for i in 0..g.links.len() {
            mask.links[i] = la[i] || used[i];
        }
        for _ in 0..k_e {
            let p = match find_complex_path(&scratch, tx, None, rx, &mask, opts) {
                Some(p) => p,
                None => break,
            };
            for &l in &p.links {
                mask.links[l] = true;
            }
            deploy(&mut scratch, &mut scratch_dep, e, pair, std::slice::from_ref(&p), None, opts.carrier);
            found.push(p);
        }
        if found.is_empty() {
            continue;
        }
        let max_paths = (n_e.saturating_add(paths_rem)).min(found.len());
        let mut sel = filter_paths_by_obj(&found, max_paths, &pair.objective, &power);
        if !opts.security_priority {
            let protected = protected_spheres(g, pair);
            sel.retain(|&i| !eavesdrop_violations(g, &found[i], &protected, pair.rx));
        }
        paths_rem += max_paths.saturating_sub(sel.len());
        sel.sort_unstable();
        let chosen: Vec<Path> = sel.iter().map(|&i| found[i].clone()).collect();
        for p in &chosen {
            for &l in &p.links {
                used[l] = true;
            }
        }
        deploy(g, &mut dep, e, pair, &chosen, opts.modifiers.get(&e), opts.carrier);
        dep.pair_paths.insert(e, chosen);
    }
    dep.paths_rem = paths_rem;

    let blocked = dep.mdf.blocked.clone();
    deploy_blocks(g, &mut dep, pairs, &blocked, opts);

    if opts.absorb_cleanup {
        let mut lit = vec![false; g.tiles.len()];
        let mut active_tx: Vec<usize> = dep.mdf.sorted.iter().chain(dep.mdf.blocked.iter()).map(|&e| pairs[e].tx).collect();
        active_tx.sort_unstable();
        active_tx.dedup();
        for u in active_tx {
            for l in g.user_links(u) {
                lit[g.links[l].a] = true;
            }
        }
        for t in 0..g.tiles.len() {
            if g.deployed[t].is_none() {
                let f = TileFunction::full_absorb();
                g.deployed[t] = Some(f.clone());
                let role = if lit[t] { Role::Emission } else { Role::Idle };
                dep.assignments.insert(t, Assignment { function: f, role, pair: None });
            }
        }
    }
    dep
}

/// Is `f` a path-carrying function (not an absorber)?
pub fn is_path_function(f: &TileFunction) -> bool {
    !matches!(f.base, BaseFunction::Absorb { .. })
}
