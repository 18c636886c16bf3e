//! The PWE graph: tiles and users as nodes, inter-tile and user-tile links,
//! shortest-path queries and the node-disjoint path cache.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::f64::consts::PI;
use std::sync::Mutex;

use thiserror::Error;

use crate::em_model::{wrap_phase, EMProfile, TileFunction, WaveSpec};
use crate::geometry::{segment_intersects_sphere, Floorplan, Sphere, Surface, Trajectory, Vec3};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type NodeId = usize;
pub type LinkId = usize;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("user {0} lies outside the floorplan bounds")]
    UserOutOfBounds(usize),
    #[error("surface {surface} is not tileable by {tile_size} m (remainder {remainder} m)")]
    NotTileable { surface: usize, tile_size: f64, remainder: f64 },
    #[error("invalid tile size {0}")]
    InvalidTileSize(f64),
    #[error("invalid antenna for user {0}: {1}")]
    InvalidAntenna(usize, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileNode {
    pub id: NodeId,
    pub surface: usize,
    pub center: Vec3,
    pub normal: Vec3,
    pub area: f64,
    /// Grid coordinates along the surface edges.
    pub grid: (usize, usize),
    /// Uncoated surface patch that always reflects specularly.
    pub is_virtual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPattern {
    /// Full lobe width in degrees; the gain reaches zero at `alpha/2`.
    pub alpha: f64,
    /// Elevation of the boresight above the horizontal plane, degrees.
    pub phi: f64,
    /// Azimuth of the boresight from +x towards +y, degrees.
    pub theta: f64,
    pub tx_power_dbm: f64,
}

impl AntennaPattern {
    pub fn new(alpha: f64, phi: f64, theta: f64, tx_power_dbm: f64) -> Self {
        AntennaPattern { alpha, phi, theta, tx_power_dbm }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 360.0) {
            return Err(format!("lobe width {} outside (0, 360]", self.alpha));
        }
        if !self.phi.is_finite() || !self.theta.is_finite() || !self.tx_power_dbm.is_finite() {
            return Err("non-finite antenna parameter".into());
        }
        Ok(())
    }

    pub fn boresight(&self) -> Vec3 {
        let (p, t) = (self.phi.to_radians(), self.theta.to_radians());
        Vec3::new(p.cos() * t.cos(), p.cos() * t.sin(), p.sin())
    }

    /// Off-axis angle of `dir` in degrees.
    pub fn off_axis(&self, dir: Vec3) -> f64 {
        self.boresight().angle_to(dir).to_degrees()
    }

    /// Peak-normalized lobe, `cos(pi*psi/alpha)` inside the lobe, 0 outside.
    pub fn normalized_gain(&self, psi_deg: f64) -> f64 {
        let psi = psi_deg.abs();
        if psi >= self.alpha / 2.0 {
            0.0
        } else {
            (PI * psi / self.alpha).cos().max(0.0)
        }
    }

    /// Peak directivity: `4*pi` over the solid-angle integral of the lobe.
    pub fn peak_directivity(&self) -> f64 {
        let b = (self.alpha / 2.0).min(180.0).to_radians();
        let k = 180.0 / self.alpha;
        let n = 4096;
        let h = b / n as f64;
        let f = |x: f64| (k * x).cos() * x.sin();
        let mut s = f(0.0) + f(b);
        for i in 1..n {
            let x = i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        let integral = 2.0 * PI * s * h / 3.0;
        4.0 * PI / integral
    }

    pub fn in_lobe(&self, dir: Vec3) -> bool {
        self.off_axis(dir) < self.alpha / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserNode {
    pub id: usize,
    pub position: Vec3,
    pub antenna: AntennaPattern,
    pub trajectory: Option<Trajectory>,
    pub authorized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    InterTile,
    UserTile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    /// Endpoints with `a < b`; user nodes always have the larger id.
    pub a: NodeId,
    pub b: NodeId,
    pub length: f64,
    pub delay: f64,
    pub kind: LinkKind,
    pub tx_label: Option<usize>,
    pub rx_label: Option<usize>,
}

impl Link {
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.a == n || self.b == n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub total_delay: f64,
    pub gain_product: f64,
}

impl Path {
    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn hops(&self) -> usize {
        self.links.len()
    }

    pub fn first_link(&self) -> LinkId {
        self.links[0]
    }

    pub fn last_link(&self) -> LinkId {
        *self.links.last().unwrap()
    }

    pub fn reversed(&self, g: &PweGraph) -> Path {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        g.path_from_nodes(&nodes).expect("reverse of a valid path is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub tile_size: f64,
    pub power_threshold_dbm: f64,
    pub sphere_radius: f64,
    /// Gain of uncoated (virtual) tiles.
    pub virtual_gain: f64,
    /// Minimum gain product for paths served by `k_shortest_paths`.
    pub gain_threshold: f64,
    /// Extra delay added at the receiving end of every link, seconds.
    pub rx_delay: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            tile_size: 1.0,
            power_threshold_dbm: -250.0,
            sphere_radius: 0.5,
            virtual_gain: 1.0,
            gain_threshold: 0.0,
            rx_delay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SurfaceTiling {
    first: NodeId,
    nu: usize,
    nv: usize,
}

#[derive(Debug, Clone, Default)]
struct CacheEntry {
    paths: Vec<Path>,
    exhausted: bool,
}

/// Node and link exclusions for a path query.
#[derive(Debug, Clone)]
pub struct Mask {
    pub links: Vec<bool>,
    pub nodes: Vec<bool>,
}

impl Mask {
    pub fn new(g: &PweGraph) -> Self {
        Mask { links: vec![false; g.links.len()], nodes: vec![false; g.node_count()] }
    }

    pub fn from_sets(g: &PweGraph, links: &HashSet<LinkId>, nodes: &HashSet<NodeId>) -> Self {
        let mut m = Mask::new(g);
        for &l in links {
            m.links[l] = true;
        }
        for &n in nodes {
            m.nodes[n] = true;
        }
        m
    }
}

#[derive(Debug)]
pub struct PweGraph {
    pub floorplan: Floorplan,
    pub options: BuildOptions,
    pub tiles: Vec<TileNode>,
    pub users: Vec<UserNode>,
    pub links: Vec<Link>,
    pub profile: EMProfile,
    /// Deployed function per tile, `None` when unconfigured.
    pub deployed: Vec<Option<TileFunction>>,
    adj: Vec<Vec<(NodeId, LinkId)>>,
    link_index: HashMap<(NodeId, NodeId), LinkId>,
    tilings: Vec<SurfaceTiling>,
    cache: Mutex<HashMap<(NodeId, NodeId), CacheEntry>>,
}

impl Clone for PweGraph {
    fn clone(&self) -> Self {
        PweGraph {
            floorplan: self.floorplan.clone(),
            options: self.options.clone(),
            tiles: self.tiles.clone(),
            users: self.users.clone(),
            links: self.links.clone(),
            profile: self.profile.clone(),
            deployed: self.deployed.clone(),
            adj: self.adj.clone(),
            link_index: self.link_index.clone(),
            tilings: self.tilings.clone(),
            cache: Mutex::new(self.cache.lock().unwrap().clone()),
        }
    }
}

/// Function of an uncoated patch: mirror about its own normal for every input.
pub fn virtual_function(normal: Vec3) -> TileFunction {
    TileFunction {
        base: crate::em_model::BaseFunction::Steer { normal },
        modifiers: Default::default(),
        expected_input: None,
    }
}

fn tile_count(len: f64, size: f64, coated: bool, surface: usize) -> Result<usize, GraphError> {
    let q = len / size;
    let n = q.round();
    let remainder = (q - n).abs() * size;
    if n >= 1.0 && remainder <= 1e-6 {
        return Ok(n as usize);
    }
    if coated {
        return Err(GraphError::NotTileable { surface, tile_size: size, remainder });
    }
    Ok(q.ceil().max(1.0) as usize)
}

fn faces(from: Vec3, normal: Vec3, to: Vec3) -> bool {
    let d = to - from;
    d.dot(normal) > 1e-9 * d.norm().max(1.0)
}

pub fn build_graph(
    floorplan: Floorplan,
    users: Vec<UserNode>,
    profile: EMProfile,
    options: BuildOptions,
) -> Result<PweGraph, GraphError> {
    if !(options.tile_size > 0.0) {
        return Err(GraphError::InvalidTileSize(options.tile_size));
    }
    for (i, u) in users.iter().enumerate() {
        if !floorplan.bounds.contains(u.position, 1e-9) {
            return Err(GraphError::UserOutOfBounds(i));
        }
        u.antenna.validate().map_err(|e| GraphError::InvalidAntenna(i, e))?;
    }

    let mut tiles = Vec::new();
    let mut tilings = Vec::new();
    for (si, s) in floorplan.surfaces.iter().enumerate() {
        let nu = tile_count(s.width(), options.tile_size, s.coated, si)?;
        let nv = tile_count(s.height(), options.tile_size, s.coated, si)?;
        tilings.push(SurfaceTiling { first: tiles.len(), nu, nv });
        let area = s.area() / (nu * nv) as f64;
        for j in 0..nv {
            for i in 0..nu {
                let center = s.point_at((i as f64 + 0.5) / nu as f64, (j as f64 + 0.5) / nv as f64);
                tiles.push(TileNode {
                    id: tiles.len(),
                    surface: si,
                    center,
                    normal: s.normal,
                    area,
                    grid: (i, j),
                    is_virtual: !s.coated,
                });
            }
        }
    }

    let spheres: Vec<Sphere> = users
        .iter()
        .map(|u| Sphere { center: u.position, radius: options.sphere_radius })
        .collect();
    let n_tiles = tiles.len();
    let mut links: Vec<Link> = Vec::new();
    let threshold_w = dbm_to_watts(options.power_threshold_dbm);
    let survives = profile.intended_gain * 1.0 > threshold_w;

    let link_delay = |len: f64| len / SPEED_OF_LIGHT + options.rx_delay;
    if survives {
        for a in 0..n_tiles {
            for b in (a + 1)..n_tiles {
                let (ta, tb) = (&tiles[a], &tiles[b]);
                if !faces(ta.center, ta.normal, tb.center) || !faces(tb.center, tb.normal, ta.center) {
                    continue;
                }
                if spheres.iter().any(|s| segment_intersects_sphere(ta.center, tb.center, s)) {
                    continue;
                }
                if floorplan.segment_occluded(ta.center, tb.center) {
                    continue;
                }
                let length = ta.center.distance(tb.center);
                links.push(Link {
                    id: links.len(),
                    a,
                    b,
                    length,
                    delay: link_delay(length),
                    kind: LinkKind::InterTile,
                    tx_label: None,
                    rx_label: None,
                });
            }
        }
    }

    for (ui, u) in users.iter().enumerate() {
        let un = n_tiles + ui;
        for t in &tiles {
            let d = t.center - u.position;
            if !u.antenna.in_lobe(d) || !faces(t.center, t.normal, u.position) {
                continue;
            }
            let blocked_by_user = spheres
                .iter()
                .enumerate()
                .any(|(k, s)| k != ui && segment_intersects_sphere(u.position, t.center, s));
            if blocked_by_user || floorplan.segment_occluded(u.position, t.center) {
                continue;
            }
            let length = d.norm();
            links.push(Link {
                id: links.len(),
                a: t.id,
                b: un,
                length,
                delay: link_delay(length),
                kind: LinkKind::UserTile,
                tx_label: None,
                rx_label: None,
            });
        }
    }

    let n_nodes = n_tiles + users.len();
    let mut adj: Vec<Vec<(NodeId, LinkId)>> = vec![Vec::new(); n_nodes];
    let mut link_index = HashMap::with_capacity(links.len());
    for l in &links {
        adj[l.a].push((l.b, l.id));
        adj[l.b].push((l.a, l.id));
        link_index.insert((l.a, l.b), l.id);
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }
    let deployed = tiles
        .iter()
        .map(|t| if t.is_virtual { Some(virtual_function(t.normal)) } else { None })
        .collect();

    Ok(PweGraph {
        floorplan,
        options,
        tiles,
        users,
        links,
        profile,
        deployed,
        adj,
        link_index,
        tilings,
        cache: Mutex::new(HashMap::new()),
    })
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    delay: f64,
    hops: u32,
    node: NodeId,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.delay
            .total_cmp(&self.delay)
            .then_with(|| o.hops.cmp(&self.hops))
            .then_with(|| o.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl PweGraph {
    pub fn node_count(&self) -> usize {
        self.tiles.len() + self.users.len()
    }

    pub fn user_node(&self, u: usize) -> NodeId {
        self.tiles.len() + u
    }

    pub fn is_user(&self, n: NodeId) -> bool {
        n >= self.tiles.len()
    }

    pub fn user_of(&self, n: NodeId) -> Option<usize> {
        if self.is_user(n) {
            Some(n - self.tiles.len())
        } else {
            None
        }
    }

    pub fn position(&self, n: NodeId) -> Vec3 {
        match self.user_of(n) {
            Some(u) => self.users[u].position,
            None => self.tiles[n].center,
        }
    }

    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, LinkId)] {
        &self.adj[n]
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.link_index.get(&key).copied()
    }

    /// User-tile links of user `u`, in link-id order.
    pub fn user_links(&self, u: usize) -> Vec<LinkId> {
        let n = self.user_node(u);
        let mut v: Vec<LinkId> = self.adj[n].iter().map(|&(_, l)| l).collect();
        v.sort_unstable();
        v
    }

    pub fn sphere(&self, u: usize) -> Sphere {
        Sphere { center: self.users[u].position, radius: self.options.sphere_radius }
    }

    pub fn tile_gain(&self, t: NodeId) -> f64 {
        if self.tiles[t].is_virtual {
            self.options.virtual_gain
        } else {
            self.profile.intended_gain
        }
    }

    pub fn is_configured(&self, t: NodeId) -> bool {
        self.deployed[t].is_some()
    }

    /// Tile covering point `(s, t)` of surface `surface`.
    pub fn tile_at(&self, surface: usize, s: f64, t: f64) -> NodeId {
        let st = &self.tilings[surface];
        let i = ((s * st.nu as f64).floor() as usize).min(st.nu - 1);
        let j = ((t * st.nv as f64).floor() as usize).min(st.nv - 1);
        st.first + j * st.nu + i
    }

    pub fn surface(&self, t: NodeId) -> &Surface {
        &self.floorplan.surfaces[self.tiles[t].surface]
    }

    pub fn link_segment(&self, l: LinkId) -> (Vec3, Vec3) {
        let link = &self.links[l];
        (self.position(link.a), self.position(link.b))
    }

    pub fn clear_labels(&mut self) {
        for l in self.links.iter_mut() {
            l.tx_label = None;
            l.rx_label = None;
        }
    }

    pub fn path_from_nodes(&self, nodes: &[NodeId]) -> Option<Path> {
        if nodes.len() < 2 {
            return None;
        }
        let mut links = Vec::with_capacity(nodes.len() - 1);
        let mut delay = 0.0;
        for w in nodes.windows(2) {
            let l = self.link_between(w[0], w[1])?;
            delay += self.links[l].delay;
            links.push(l);
        }
        let gain_product = nodes.iter().filter(|&&n| !self.is_user(n)).map(|&n| self.tile_gain(n)).product();
        Some(Path { nodes: nodes.to_vec(), links, total_delay: delay, gain_product })
    }

    /// Check the path invariants: known links, adjacency, no repeated link,
    /// delay equal to the sum of link delays.
    pub fn validate_path(&self, p: &Path) -> Result<(), String> {
        if p.nodes.len() != p.links.len() + 1 || p.links.is_empty() {
            return Err("node/link count mismatch".into());
        }
        let mut seen = HashSet::new();
        let mut sum = 0.0;
        for (i, &l) in p.links.iter().enumerate() {
            let link = self.links.get(l).ok_or("unknown link")?;
            if !seen.insert(l) {
                return Err(format!("link {} repeated", l));
            }
            let (x, y) = (p.nodes[i], p.nodes[i + 1]);
            if !(link.touches(x) && link.other(x) == y) {
                return Err(format!("link {} does not join {} and {}", l, x, y));
            }
            sum += link.delay;
        }
        if (sum - p.total_delay).abs() > 1e-18 + 1e-12 * sum {
            return Err("total delay differs from link sum".into());
        }
        Ok(())
    }

    /// Minimum-delay path from `a` to `b`. Ties resolve on hop count, then
    /// on the lexicographically smallest node sequence. Users other than
    /// the endpoints are never traversed.
    pub fn shortest_path_masked(&self, a: NodeId, b: NodeId, mask: &Mask) -> Option<Path> {
        if a == b || mask.nodes[a] || mask.nodes[b] {
            return None;
        }
        let n = self.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut hops = vec![u32::MAX; n];
        let mut pred: Vec<Option<(NodeId, LinkId)>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[a] = 0.0;
        hops[a] = 0;
        heap.push(HeapItem { delay: 0.0, hops: 0, node: a });
        while let Some(HeapItem { delay, hops: h, node: u }) = heap.pop() {
            if done[u] || delay != dist[u] || h != hops[u] {
                continue;
            }
            done[u] = true;
            if u == b {
                break;
            }
            if u != a && self.is_user(u) {
                continue;
            }
            for &(v, l) in &self.adj[u] {
                if mask.links[l] || mask.nodes[v] || done[v] {
                    continue;
                }
                let nd = delay + self.links[l].delay;
                let nh = h + 1;
                let better = match nd.total_cmp(&dist[v]).then(nh.cmp(&hops[v])) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => {
                        let cur = pred[v].map(|(p, _)| p).unwrap();
                        self.seq_cmp(&pred, u, cur) == Ordering::Less
                    }
                };
                if better {
                    let improved = nd != dist[v] || nh != hops[v];
                    dist[v] = nd;
                    hops[v] = nh;
                    pred[v] = Some((u, l));
                    if improved {
                        heap.push(HeapItem { delay: nd, hops: nh, node: v });
                    }
                }
            }
        }
        if !done[b] {
            return None;
        }
        let mut nodes = vec![b];
        let mut links = Vec::new();
        let mut cur = b;
        while let Some((p, l)) = pred[cur] {
            nodes.push(p);
            links.push(l);
            cur = p;
        }
        nodes.reverse();
        links.reverse();
        let total_delay = links.iter().map(|&l| self.links[l].delay).sum();
        let gain_product = nodes.iter().filter(|&&n| !self.is_user(n)).map(|&n| self.tile_gain(n)).product();
        Some(Path { nodes, links, total_delay, gain_product })
    }

    fn seq_cmp(&self, pred: &[Option<(NodeId, LinkId)>], x: NodeId, y: NodeId) -> Ordering {
        let chain = |mut c: NodeId| {
            let mut v = vec![c];
            while let Some((p, _)) = pred[c] {
                v.push(p);
                c = p;
            }
            v.reverse();
            v
        };
        chain(x).cmp(&chain(y))
    }

    pub fn shortest_path(
        &self,
        a: NodeId,
        b: NodeId,
        excluded_links: &HashSet<LinkId>,
        excluded_nodes: &HashSet<NodeId>,
    ) -> Option<Path> {
        self.shortest_path_masked(a, b, &Mask::from_sets(self, excluded_links, excluded_nodes))
    }

    fn extract_disjoint(&self, a: NodeId, b: NodeId, k: usize, base: &Mask) -> (Vec<Path>, bool) {
        let mut mask = base.clone();
        let mut out = Vec::new();
        while out.len() < k {
            match self.shortest_path_masked(a, b, &mask) {
                None => return (out, true),
                Some(p) => {
                    if p.nodes.len() == 2 {
                        mask.links[p.links[0]] = true;
                    }
                    for &n in &p.nodes[1..p.nodes.len() - 1] {
                        mask.nodes[n] = true;
                    }
                    out.push(p);
                }
            }
        }
        (out, false)
    }

    /// Up to `k` paths that share no intermediate node, in nondecreasing
    /// delay order, extracted greedily. Tile-to-tile results are cached.
    pub fn k_shortest_paths(&self, k: usize, a: NodeId, b: NodeId) -> Vec<Path> {
        let threshold = self.options.gain_threshold;
        let keep = |v: Vec<Path>| v.into_iter().filter(|p| p.gain_product >= threshold).collect::<Vec<_>>();
        if k == 0 {
            return Vec::new();
        }
        let cacheable = !self.is_user(a) && !self.is_user(b);
        if cacheable {
            let key = if a < b { (a, b) } else { (b, a) };
            if let Some(e) = self.cache.lock().unwrap().get(&key) {
                if e.paths.len() >= k || e.exhausted {
                    let v: Vec<Path> = e
                        .paths
                        .iter()
                        .take(k)
                        .map(|p| if p.source() == a { p.clone() } else { p.reversed(self) })
                        .collect();
                    return keep(v);
                }
            }
            let (paths, exhausted) = self.extract_disjoint(key.0, key.1, k, &Mask::new(self));
            let v: Vec<Path> =
                paths.iter().map(|p| if p.source() == a { p.clone() } else { p.reversed(self) }).collect();
            self.cache.lock().unwrap().insert(key, CacheEntry { paths, exhausted });
            return keep(v);
        }
        keep(self.extract_disjoint(a, b, k, &Mask::new(self)).0)
    }

    /// Uncached variant of [`k_shortest_paths`], used to check the cache.
    pub fn k_shortest_paths_fresh(&self, k: usize, a: NodeId, b: NodeId) -> Vec<Path> {
        let threshold = self.options.gain_threshold;
        self.extract_disjoint(a, b, k, &Mask::new(self))
            .0
            .into_iter()
            .filter(|p| p.gain_product >= threshold)
            .collect()
    }

    /// First-impact waves of user `u` on each of its tile links.
    pub fn user_link_inputs(&self, u: usize, carrier: f64) -> Vec<(LinkId, WaveSpec)> {
        let user = &self.users[u];
        let p_tx = dbm_to_watts(user.antenna.tx_power_dbm);
        let d0 = user.antenna.peak_directivity();
        let lambda = SPEED_OF_LIGHT / carrier;
        let mut out = Vec::new();
        for l in self.user_links(u) {
            let link = &self.links[l];
            let tile = &self.tiles[link.a];
            let d = tile.center - user.position;
            let len = d.norm();
            let dir = d * (1.0 / len);
            let g = user.antenna.normalized_gain(user.antenna.off_axis(dir));
            if g <= 0.0 {
                continue;
            }
            let power = first_impact_power(p_tx, d0 * g, tile.area, len);
            let phase = wrap_phase(2.0 * PI * len / lambda);
            out.push((l, WaveSpec::focal(carrier, dir, len, power, phase)));
        }
        out
    }
}

/// Free-space power intercepted by an aperture `area` at distance `d`
/// for a transmitter of power `p_tx` and directivity `gain`.
pub fn first_impact_power(p_tx: f64, gain: f64, area: f64, d: f64) -> f64 {
    p_tx * gain * area / (4.0 * PI * d * d)
}
