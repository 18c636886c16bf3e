//! Scenario files, the run pipeline and report files.
//!
//! A scenario is a line-oriented text file with `[floorplan]`, `[users]`,
//! `[pairs]`, `[params]` and optional `[profile]` sections. `#` starts a
//! comment. See the README for the full grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::configurator::{kp_config, Deployment, KpOptions, PairRequest, Role, TxInputs};
use crate::em_model::{
    EMProfile, FunctionKind, ParasiticDirection, ParasiticRule, ParasiticTrigger, SimilarityModel,
};
use crate::geometry::{Aabb, Floorplan, Surface, Trajectory, Vec3};
use crate::objectives::{doppler_ok, sir, useful_power, EavesTarget, ObjectiveSet, Sir, DEFAULT_DOPPLER_TOLERANCE};
use crate::propagation::{classify_useful, nlos_prop, PdpEntry, PowerDelayProfile, PropConfig, RayStats};
use crate::pwe_graph::{build_graph, virtual_function, watts_to_dbm, AntennaPattern, BuildOptions, PweGraph, UserNode};

/// Environment variable holding the worker count for parallel steps.
pub const WORKERS_ENV: &str = "PWE_WORKERS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{}", match .line { Some(l) => format!("line {}: {}", l, .msg), None => .msg.clone() })]
    Validation { line: Option<usize>, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl ScenarioError {
    /// Parse and validation problems are user errors; the rest are runtime.
    pub fn is_validation(&self) -> bool {
        matches!(self, ScenarioError::Parse { .. } | ScenarioError::Validation { .. })
    }
}

fn perr(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

fn verr(line: Option<usize>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LobeAngle {
    /// `alpha` is the full lobe width.
    Full,
    /// `alpha` is measured from boresight to the first null.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTarget {
    Nearest,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub frequency: f64,
    pub tx_power_dbm: f64,
    pub max_bounces: usize,
    pub min_power_dbm: f64,
    pub d_th: f64,
    pub sphere_radius: f64,
    pub security_priority: bool,
    pub absorb_cleanup: bool,
    pub seed: u64,
    pub lobe_angle: LobeAngle,
    pub step: f64,
    pub virtual_gain: f64,
    pub strict: bool,
    pub serial: bool,
    pub block_target: BlockTarget,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            frequency: 2.4e9,
            tx_power_dbm: -30.0,
            max_bounces: 50,
            min_power_dbm: -250.0,
            d_th: crate::objectives::DEFAULT_D_TH,
            sphere_radius: 0.5,
            security_priority: true,
            absorb_cleanup: true,
            seed: 0,
            lobe_angle: LobeAngle::Full,
            step: 0.125,
            virtual_gain: 1.0,
            strict: false,
            serial: false,
            block_target: BlockTarget::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallSpec {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub z: (f64, f64),
    pub coated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub position: Vec3,
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
    pub tx_power_dbm: Option<f64>,
    pub trajectory: Option<Trajectory>,
    pub authorized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub room: Vec3,
    /// floor, ceiling, wall y=0, wall y=max, wall x=0, wall x=max
    pub coated: [bool; 6],
    pub walls: Vec<WallSpec>,
    pub tile_size: f64,
    pub profile: EMProfile,
    pub users: Vec<UserSpec>,
    pub pairs: Vec<PairRequest>,
    pub params: SimParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            room: Vec3::new(10.0, 10.0, 3.0),
            coated: [true; 6],
            walls: Vec::new(),
            tile_size: 1.0,
            profile: EMProfile::default(),
            users: Vec::new(),
            pairs: Vec::new(),
            params: SimParams::default(),
        }
    }
}

fn parse_f64(line: usize, s: &str) -> Result<f64, ScenarioError> {
    let v: f64 = s.trim().parse().map_err(|_| perr(line, format!("expected a number, got '{}'", s.trim())))?;
    if !v.is_finite() {
        return Err(perr(line, format!("non-finite number '{}'", s.trim())));
    }
    Ok(v)
}

fn parse_bool(line: usize, s: &str) -> Result<bool, ScenarioError> {
    match s.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        o => Err(perr(line, format!("expected a boolean, got '{}'", o))),
    }
}

fn parse_vec3(line: usize, s: &str) -> Result<Vec3, ScenarioError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(perr(line, format!("expected x,y,z, got '{}'", s)));
    }
    Ok(Vec3::new(parse_f64(line, parts[0])?, parse_f64(line, parts[1])?, parse_f64(line, parts[2])?))
}

fn parse_kv(line: usize, tok: &str) -> Result<(String, String), ScenarioError> {
    let (k, v) = tok.split_once('=').ok_or_else(|| perr(line, format!("expected key=value, got '{}'", tok)))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn coat_index(name: &str) -> Option<Vec<usize>> {
    Some(match name {
        "all" => vec![0, 1, 2, 3, 4, 5],
        "none" => vec![],
        "floor" => vec![0],
        "ceiling" => vec![1],
        "walls" => vec![2, 3, 4, 5],
        "wall_y0" => vec![2],
        "wall_y1" => vec![3],
        "wall_x0" => vec![4],
        "wall_x1" => vec![5],
        _ => return None,
    })
}

const COAT_NAMES: [&str; 6] = ["floor", "ceiling", "wall_y0", "wall_y1", "wall_x0", "wall_x1"];

fn parse_similarity(line: usize, v: &str) -> Result<SimilarityModel, ScenarioError> {
    let v = v.trim();
    if v == "constant" {
        return Ok(SimilarityModel::Constant);
    }
    if let Some(inner) = v.strip_prefix("cosine(").and_then(|r| r.strip_suffix(')')) {
        return Ok(SimilarityModel::Cosine { exponent: parse_f64(line, inner)? });
    }
    if v == "cosine" {
        return Ok(SimilarityModel::Cosine { exponent: 1.0 });
    }
    Err(perr(line, format!("unknown similarity model '{}'", v)))
}

/// Apply one `key = value` line of an EM profile declaration.
fn apply_profile_line(p: &mut EMProfile, line: usize, key: &str, value: &str) -> Result<(), ScenarioError> {
    match key {
        "supported" => {
            let mut v = Vec::new();
            for s in value.split(',') {
                let k = FunctionKind::parse(s.trim()).ok_or_else(|| perr(line, format!("unknown function '{}'", s)))?;
                v.push(k);
            }
            p.supported = v;
        }
        "gain" => p.intended_gain = parse_f64(line, value)?,
        "similarity" => p.similarity = parse_similarity(line, value)?,
        "parasitic" => {
            let toks: Vec<&str> = value.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(perr(line, "parasitic expects: <any|unintended> <specular|x,y,z> <fraction>"));
            }
            let trigger = match toks[0] {
                "any" => ParasiticTrigger::Any,
                "unintended" => ParasiticTrigger::UnintendedOnly,
                o => return Err(perr(line, format!("unknown parasitic trigger '{}'", o))),
            };
            let direction = if toks[1] == "specular" {
                ParasiticDirection::Specular
            } else {
                let d = parse_vec3(line, toks[1])?;
                ParasiticDirection::Fixed(d.normalized().ok_or_else(|| perr(line, "zero parasitic direction"))?)
            };
            p.parasitic.push(ParasiticRule { trigger, direction, power_fraction: parse_f64(line, toks[2])? });
        }
        o => return Err(perr(line, format!("unknown profile key '{}'", o))),
    }
    Ok(())
}

/// Parse a standalone EM profile file (`key = value` lines).
pub fn parse_profile(text: &str) -> Result<EMProfile, ScenarioError> {
    let mut p = EMProfile::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap().trim();
        if s.is_empty() {
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| perr(line, "expected key = value"))?;
        apply_profile_line(&mut p, line, k.trim(), v.trim())?;
    }
    p.validate().map_err(|e| verr(None, e.to_string()))?;
    Ok(p)
}

fn parse_objective(line: usize, text: &str, d_th: f64) -> Result<ObjectiveSet, ScenarioError> {
    let mut o = ObjectiveSet { d_th, ..Default::default() };
    let mut depth = 0;
    let mut items = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' | '[' => {
                depth += 1;
                cur.push(c)
            }
            ')' | ']' => {
                depth -= 1;
                cur.push(c)
            }
            ',' if depth == 0 => items.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    items.push(cur);
    for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let (name, arg) = match item.find(['(', '[']) {
            Some(i) => {
                let inner = item[i + 1..].trim_end_matches([')', ']']).trim();
                (&item[..i], Some(inner))
            }
            None => (item, None),
        };
        match name.trim() {
            "MaxPower" => o.max_power = true,
            "MaxSIR" => {
                o.max_sir = true;
                if let Some(a) = arg.filter(|a| !a.is_empty()) {
                    o.d_th = parse_f64(line, a)?;
                }
            }
            "EavesMit" | "EavMit" => {
                o.eaves = Some(match arg.map(|a| a.trim_matches(['[', ']']).trim()) {
                    None | Some("") | Some("All") | Some("all") => EavesTarget::All,
                    Some(list) => {
                        let mut v = Vec::new();
                        for s in list.split(|c| c == ',' || c == ' ').filter(|s| !s.is_empty()) {
                            v.push(s.trim().parse().map_err(|_| perr(line, format!("bad user id '{}'", s)))?);
                        }
                        EavesTarget::Users(v)
                    }
                });
            }
            "DopplerMit" => {
                let tol = match arg {
                    Some(a) if !a.is_empty() && a != "trajectory" => parse_f64(line, a)?,
                    _ => DEFAULT_DOPPLER_TOLERANCE,
                };
                o.doppler = Some(tol);
            }
            "Block" => o.block = true,
            other => return Err(perr(line, format!("unknown objective '{}'", other))),
        }
    }
    o.validate().map_err(|e| verr(Some(line), e.to_string()))?;
    Ok(o)
}

/// Parse scenario text. `base` resolves relative profile paths.
pub fn parse_scenario(text: &str, base: Option<&FsPath>) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::default();
    let mut section = String::new();
    let mut room_seen = false;
    let mut user_lines = Vec::new();
    let mut pair_lines: Vec<(usize, String)> = Vec::new();
    let mut coat_set: Option<[bool; 6]> = None;
    let mut profile_lines: Vec<(usize, String, String)> = Vec::new();
    let mut profile_file: Option<(usize, String)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap().trim();
        if s.is_empty() {
            continue;
        }
        if s.starts_with('[') && s.ends_with(']') {
            section = s[1..s.len() - 1].trim().to_string();
            if !["floorplan", "users", "pairs", "params", "profile"].contains(&section.as_str()) {
                return Err(perr(line, format!("unknown section [{}]", section)));
            }
            continue;
        }
        match section.as_str() {
            "floorplan" => {
                let toks: Vec<&str> = s.split_whitespace().collect();
                match toks[0] {
                    "room" => {
                        if toks.len() != 4 {
                            return Err(perr(line, "room expects: room <lx> <ly> <lz>"));
                        }
                        sc.room = Vec3::new(parse_f64(line, toks[1])?, parse_f64(line, toks[2])?, parse_f64(line, toks[3])?);
                        if !(sc.room.x > 0.0 && sc.room.y > 0.0 && sc.room.z > 0.0) {
                            return Err(verr(Some(line), "room dimensions must be positive"));
                        }
                        room_seen = true;
                    }
                    "coat" => {
                        let mut c = [false; 6];
                        for name in toks[1..].iter().flat_map(|t| t.split(',')).filter(|t| !t.is_empty()) {
                            for k in coat_index(name).ok_or_else(|| perr(line, format!("unknown surface '{}'", name)))? {
                                c[k] = true;
                            }
                        }
                        coat_set = Some(c);
                    }
                    "tile_size" => {
                        if toks.len() != 2 {
                            return Err(perr(line, "tile_size expects one value"));
                        }
                        sc.tile_size = parse_f64(line, toks[1])?;
                    }
                    "wall" => {
                        if toks.len() < 5 {
                            return Err(perr(line, "wall expects: wall <x0> <y0> <x1> <y1> [z0 z1] [coated|uncoated]"));
                        }
                        let mut nums = Vec::new();
                        let mut coated = true;
                        for t in &toks[1..] {
                            match *t {
                                "coated" => coated = true,
                                "uncoated" => coated = false,
                                _ => nums.push(parse_f64(line, t)?),
                            }
                        }
                        let z = match nums.len() {
                            4 => (0.0, f64::NAN),
                            6 => (nums[4], nums[5]),
                            _ => return Err(perr(line, "wall expects 4 or 6 coordinates")),
                        };
                        let w = WallSpec { from: (nums[0], nums[1]), to: (nums[2], nums[3]), z, coated };
                        if w.from.0 != w.to.0 && w.from.1 != w.to.1 {
                            return Err(verr(Some(line), "internal walls must be axis-aligned"));
                        }
                        if w.from == w.to {
                            return Err(verr(Some(line), "wall has zero length"));
                        }
                        sc.walls.push(w);
                    }
                    o => return Err(perr(line, format!("unknown floorplan directive '{}'", o))),
                }
            }
            "users" => user_lines.push((line, s.to_string())),
            "pairs" => pair_lines.push((line, s.to_string())),
            "params" | "profile" => {
                let (k, v) = s.split_once('=').ok_or_else(|| perr(line, "expected key = value"))?;
                let (k, v) = (k.trim(), v.trim());
                if section == "profile" {
                    profile_lines.push((line, k.to_string(), v.to_string()));
                    continue;
                }
                let p = &mut sc.params;
                match k {
                    "frequency" => p.frequency = parse_f64(line, v)?,
                    "tx_power" => p.tx_power_dbm = parse_f64(line, v)?,
                    "max_bounces" => p.max_bounces = parse_f64(line, v)? as usize,
                    "min_power_dbm" => p.min_power_dbm = parse_f64(line, v)?,
                    "d_th" => p.d_th = parse_f64(line, v)?,
                    "sphere_radius" => p.sphere_radius = parse_f64(line, v)?,
                    "security_priority" => p.security_priority = parse_bool(line, v)?,
                    "absorb_cleanup" => p.absorb_cleanup = parse_bool(line, v)?,
                    "seed" => p.seed = v.parse().map_err(|_| perr(line, "seed must be a non-negative integer"))?,
                    "lobe_angle" => {
                        p.lobe_angle = match v {
                            "full" => LobeAngle::Full,
                            "half" => LobeAngle::Half,
                            o => return Err(perr(line, format!("lobe_angle must be full or half, got '{}'", o))),
                        }
                    }
                    "step" => p.step = parse_f64(line, v)?,
                    "virtual_gain" => p.virtual_gain = parse_f64(line, v)?,
                    "strict" => p.strict = parse_bool(line, v)?,
                    "serial" => p.serial = parse_bool(line, v)?,
                    "block_target" => {
                        p.block_target = match v {
                            "nearest" => BlockTarget::Nearest,
                            "random" => BlockTarget::Random,
                            o => return Err(perr(line, format!("block_target must be nearest or random, got '{}'", o))),
                        }
                    }
                    "profile" => profile_file = Some((line, v.to_string())),
                    "gain" => sc.profile.intended_gain = parse_f64(line, v)?,
                    "similarity" => sc.profile.similarity = parse_similarity(line, v)?,
                    o => return Err(perr(line, format!("unknown parameter '{}'", o))),
                }
            }
            _ => return Err(perr(line, "content outside of a section")),
        }
    }
    if !room_seen {
        return Err(verr(None, "missing 'room' in [floorplan]"));
    }
    if let Some(c) = coat_set {
        sc.coated = c;
    }
    for w in sc.walls.iter_mut() {
        if w.z.1.is_nan() {
            w.z = (0.0, sc.room.z);
        }
    }

    if let Some((line, file)) = profile_file {
        let path = match base {
            Some(b) => b.join(&file),
            None => PathBuf::from(&file),
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| verr(Some(line), format!("cannot read profile '{}': {}", path.display(), e)))?;
        let gain = sc.profile.intended_gain;
        sc.profile = parse_profile(&text)?;
        if gain != EMProfile::default().intended_gain {
            sc.profile.intended_gain = gain;
        }
    }
    for (line, k, v) in &profile_lines {
        apply_profile_line(&mut sc.profile, *line, k, v)?;
    }
    sc.profile.validate().map_err(|e| verr(None, e.to_string()))?;

    for (line, s) in &user_lines {
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks[0] != "user" || toks.len() < 2 {
            return Err(perr(*line, "expected: user <id> pos=x,y,z alpha=.. [phi=..] [theta=..] ..."));
        }
        let id: usize = toks[1].parse().map_err(|_| perr(*line, format!("bad user id '{}'", toks[1])))?;
        if id != sc.users.len() {
            return Err(verr(Some(*line), format!("user ids must be consecutive from 0; expected {}", sc.users.len())));
        }
        let mut u = UserSpec {
            position: Vec3::ZERO,
            alpha: f64::NAN,
            phi: 0.0,
            theta: 0.0,
            tx_power_dbm: None,
            trajectory: None,
            authorized: true,
        };
        let mut has_pos = false;
        for t in &toks[2..] {
            let (k, v) = parse_kv(*line, t)?;
            match k.as_str() {
                "pos" => {
                    u.position = parse_vec3(*line, &v)?;
                    has_pos = true;
                }
                "alpha" => u.alpha = parse_f64(*line, &v)?,
                "phi" => u.phi = parse_f64(*line, &v)?,
                "theta" => u.theta = parse_f64(*line, &v)?,
                "tx_power" => u.tx_power_dbm = Some(parse_f64(*line, &v)?),
                "authorized" => u.authorized = parse_bool(*line, &v)?,
                "traj" => {
                    let mut pts = Vec::new();
                    for p in v.split(';').filter(|p| !p.is_empty()) {
                        pts.push(parse_vec3(*line, p)?);
                    }
                    u.trajectory = Some(Trajectory::new(pts).map_err(|e| verr(Some(*line), e.to_string()))?);
                }
                o => return Err(perr(*line, format!("unknown user field '{}'", o))),
            }
        }
        if !has_pos || u.alpha.is_nan() {
            return Err(verr(Some(*line), "user needs pos and alpha"));
        }
        let a = match sc.params.lobe_angle {
            LobeAngle::Full => u.alpha,
            LobeAngle::Half => 2.0 * u.alpha,
        };
        if !(a > 0.0 && a <= 360.0) {
            return Err(verr(Some(*line), format!("lobe width {} outside (0, 360]", a)));
        }
        let bounds = Aabb::new(Vec3::ZERO, sc.room);
        if !bounds.contains(u.position, 1e-9) {
            return Err(verr(Some(*line), "user lies outside the room"));
        }
        if let Some(t) = &u.trajectory {
            if t.waypoints.iter().any(|w| !bounds.contains(*w, 1e-9)) {
                return Err(verr(Some(*line), "trajectory leaves the room"));
            }
        }
        sc.users.push(u);
    }

    for (line, s) in &pair_lines {
        let (lhs, obj) = s.split_once(':').ok_or_else(|| perr(*line, "expected: <tx> -> <rx> : <objectives>"))?;
        let (tx, rx) = lhs.split_once("->").ok_or_else(|| perr(*line, "expected '->' between users"))?;
        let tx: usize = tx.trim().parse().map_err(|_| perr(*line, format!("bad transmitter '{}'", tx.trim())))?;
        let objective = parse_objective(*line, obj, sc.params.d_th)?;
        let rx = match rx.trim() {
            "x" | "X" | "*" if objective.block => tx,
            r => r.parse().map_err(|_| perr(*line, format!("bad receiver '{}'", r)))?,
        };
        if tx >= sc.users.len() || rx >= sc.users.len() {
            return Err(verr(Some(*line), "pair refers to an unknown user"));
        }
        if !objective.block && tx == rx {
            return Err(verr(Some(*line), "pair connects a user to itself"));
        }
        if objective.doppler.is_some() && sc.users[rx].trajectory.is_none() {
            return Err(verr(Some(*line), "DopplerMit needs a receiver trajectory"));
        }
        sc.pairs.push(PairRequest::new(tx, rx, objective));
    }
    validate_tiling(&sc)?;
    if !(sc.params.step > 0.0) {
        return Err(verr(None, "step must be positive"));
    }
    Ok(sc)
}

fn validate_tiling(sc: &Scenario) -> Result<(), ScenarioError> {
    let fp = sc.floorplan().map_err(|e| verr(None, e))?;
    for (i, s) in fp.surfaces.iter().enumerate() {
        if !s.coated {
            continue;
        }
        for len in [s.width(), s.height()] {
            let q = len / sc.tile_size;
            if (q - q.round()).abs() * sc.tile_size > 1e-6 || q.round() < 1.0 {
                return Err(verr(None, format!("coated surface {} ({} m) is not a multiple of the tile size", i, len)));
            }
        }
    }
    Ok(())
}

pub fn load_scenario(path: &FsPath) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {}", path.display(), e)))?;
    parse_scenario(&text, path.parent())
}

fn fmt_num(v: f64) -> String {
    format!("{}", v)
}

impl Scenario {
    pub fn floorplan(&self) -> Result<Floorplan, String> {
        let r = self.room;
        let mut fp = Floorplan::box_room(r.x, r.y, r.z, self.coated).map_err(|e| e.to_string())?;
        for w in &self.walls {
            let (x0, x1) = (w.from.0.min(w.to.0), w.from.0.max(w.to.0));
            let (y0, y1) = (w.from.1.min(w.to.1), w.from.1.max(w.to.1));
            let min = Vec3::new(x0, y0, w.z.0);
            let max = Vec3::new(x1, y1, w.z.1);
            for facing in [true, false] {
                let s = Surface::axis_aligned(min, max, facing, w.coated).map_err(|e| e.to_string())?;
                fp.surfaces.push(s);
            }
        }
        Floorplan::new(fp.surfaces, fp.bounds).map_err(|e| e.to_string())
    }

    pub fn effective_alpha(&self, u: &UserSpec) -> f64 {
        match self.params.lobe_angle {
            LobeAngle::Full => u.alpha,
            LobeAngle::Half => 2.0 * u.alpha,
        }
    }

    pub fn user_nodes(&self) -> Vec<UserNode> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| UserNode {
                id: i,
                position: u.position,
                antenna: AntennaPattern::new(
                    self.effective_alpha(u),
                    u.phi,
                    u.theta,
                    u.tx_power_dbm.unwrap_or(self.params.tx_power_dbm),
                ),
                trajectory: u.trajectory.clone(),
                authorized: u.authorized,
            })
            .collect()
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            tile_size: self.tile_size,
            power_threshold_dbm: self.params.min_power_dbm,
            sphere_radius: self.params.sphere_radius,
            virtual_gain: self.params.virtual_gain,
            gain_threshold: 0.0,
            rx_delay: 0.0,
        }
    }

    pub fn graph(&self) -> Result<PweGraph, ScenarioError> {
        self.graph_with_users(self.user_nodes())
    }

    pub fn graph_with_users(&self, users: Vec<UserNode>) -> Result<PweGraph, ScenarioError> {
        let fp = self.floorplan().map_err(|e| verr(None, e))?;
        build_graph(fp, users, self.profile.clone(), self.build_options()).map_err(|e| verr(None, e.to_string()))
    }

    /// Canonical scenario text; parsing it yields an equal scenario
    /// (profile parasitic rules and file references are inlined).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        s.push_str("[floorplan]\n");
        let _ = writeln!(s, "room {} {} {}", fmt_num(self.room.x), fmt_num(self.room.y), fmt_num(self.room.z));
        let coat: Vec<&str> = (0..6).filter(|&i| self.coated[i]).map(|i| COAT_NAMES[i]).collect();
        let _ = writeln!(s, "coat {}", if coat.is_empty() { "none".to_string() } else { coat.join(",") });
        let _ = writeln!(s, "tile_size {}", fmt_num(self.tile_size));
        for w in &self.walls {
            let _ = writeln!(
                s,
                "wall {} {} {} {} {} {} {}",
                fmt_num(w.from.0),
                fmt_num(w.from.1),
                fmt_num(w.to.0),
                fmt_num(w.to.1),
                fmt_num(w.z.0),
                fmt_num(w.z.1),
                if w.coated { "coated" } else { "uncoated" }
            );
        }
        s.push_str("\n[params]\n");
        let _ = writeln!(s, "frequency = {}", fmt_num(p.frequency));
        let _ = writeln!(s, "tx_power = {}", fmt_num(p.tx_power_dbm));
        let _ = writeln!(s, "max_bounces = {}", p.max_bounces);
        let _ = writeln!(s, "min_power_dbm = {}", fmt_num(p.min_power_dbm));
        let _ = writeln!(s, "d_th = {:e}", p.d_th);
        let _ = writeln!(s, "sphere_radius = {}", fmt_num(p.sphere_radius));
        let _ = writeln!(s, "security_priority = {}", p.security_priority);
        let _ = writeln!(s, "absorb_cleanup = {}", p.absorb_cleanup);
        let _ = writeln!(s, "seed = {}", p.seed);
        let _ = writeln!(s, "lobe_angle = {}", if p.lobe_angle == LobeAngle::Full { "full" } else { "half" });
        let _ = writeln!(s, "step = {}", fmt_num(p.step));
        let _ = writeln!(s, "virtual_gain = {}", fmt_num(p.virtual_gain));
        let _ = writeln!(s, "strict = {}", p.strict);
        let _ = writeln!(s, "serial = {}", p.serial);
        let _ = writeln!(s, "block_target = {}", if p.block_target == BlockTarget::Nearest { "nearest" } else { "random" });
        s.push_str("\n[profile]\n");
        let sup: Vec<String> = self.profile.supported.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "supported = {}", sup.join(","));
        let _ = writeln!(s, "gain = {}", fmt_num(self.profile.intended_gain));
        let sim = match self.profile.similarity {
            SimilarityModel::Constant => "constant".to_string(),
            SimilarityModel::Cosine { exponent } => format!("cosine({})", fmt_num(exponent)),
        };
        let _ = writeln!(s, "similarity = {}", sim);
        for r in &self.profile.parasitic {
            let trig = if r.trigger == ParasiticTrigger::Any { "any" } else { "unintended" };
            let dir = match r.direction {
                ParasiticDirection::Specular => "specular".to_string(),
                ParasiticDirection::Fixed(d) => format!("{},{},{}", fmt_num(d.x), fmt_num(d.y), fmt_num(d.z)),
            };
            let _ = writeln!(s, "parasitic = {} {} {}", trig, dir, fmt_num(r.power_fraction));
        }
        s.push_str("\n[users]\n");
        for (i, u) in self.users.iter().enumerate() {
            let _ = write!(
                s,
                "user {} pos={},{},{} alpha={} phi={} theta={}",
                i,
                fmt_num(u.position.x),
                fmt_num(u.position.y),
                fmt_num(u.position.z),
                fmt_num(u.alpha),
                fmt_num(u.phi),
                fmt_num(u.theta)
            );
            if let Some(t) = u.tx_power_dbm {
                let _ = write!(s, " tx_power={}", fmt_num(t));
            }
            if !u.authorized {
                s.push_str(" authorized=false");
            }
            if let Some(t) = &u.trajectory {
                let pts: Vec<String> =
                    t.waypoints.iter().map(|w| format!("{},{},{}", fmt_num(w.x), fmt_num(w.y), fmt_num(w.z))).collect();
                let _ = write!(s, " traj={}", pts.join(";"));
            }
            s.push('\n');
        }
        s.push_str("\n[pairs]\n");
        for pr in &self.pairs {
            let mut o = pr.objective.clone();
            let mut text = o.to_string();
            if o.max_sir {
                o.max_sir = false;
                let rest = o.to_string();
                text = if rest.is_empty() {
                    format!("MaxSIR({:e})", pr.objective.d_th)
                } else {
                    format!("MaxSIR({:e})+{}", pr.objective.d_th, rest)
                };
            }
            let rx = if pr.objective.block { "x".to_string() } else { pr.rx.to_string() };
            let _ = writeln!(s, "{} -> {} : {}", pr.tx, rx, text.replace('+', ", "));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pwe,
    Natural,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Pwe => "pwe",
            Mode::Natural => "natural",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Cap on trajectory steps.
    pub steps: Option<usize>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    pub index: usize,
    pub tx: usize,
    pub rx: usize,
    pub objective: String,
    /// Useful power in pwe mode, total power from `tx` in natural mode.
    pub received_w: f64,
    pub useful_w: f64,
    pub total_w: f64,
    /// Non-useful power arriving at `rx` from any transmitter.
    pub interference_w: f64,
    pub sir: Sir,
    pub paths: usize,
}

impl PairReport {
    pub fn connected(&self) -> bool {
        self.received_w > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileUsage {
    pub tile: usize,
    pub surface: usize,
    pub center: Vec3,
    pub is_virtual: bool,
    pub function: String,
    pub rays: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub position: Vec3,
    pub pair: usize,
    /// Largest deviation among the selected last links.
    pub deviation_max: f64,
    pub deviation_min: f64,
    /// Smallest deviation any receiver link offers at this step.
    pub best_available: f64,
    pub received_w: f64,
    pub paths: usize,
    pub last_tiles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub n_users: usize,
    pub n_tiles: usize,
    pub n_coated: usize,
    pub configured_tiles: usize,
    pub role_counts: BTreeMap<String, usize>,
    pub paths_rem: usize,
    pub partial_blocks: usize,
    pub blocked_users: Vec<usize>,
    /// User-link count per user.
    pub user_links: Vec<usize>,
    pub pairs: Vec<PairReport>,
    /// `[tx][rx]` useful power, watts.
    pub useful: Vec<Vec<f64>>,
    /// `[tx][rx]` total power, watts.
    pub total: Vec<Vec<f64>>,
    pub pdp: BTreeMap<usize, PowerDelayProfile>,
    pub tile_usage: Vec<TileUsage>,
    pub stats: RayStats,
    pub trajectory: Vec<StepRecord>,
    /// Configured tiles after serving the first k pairs, k = 1..n.
    pub serial: Vec<(usize, usize)>,
}

impl RunReport {
    pub fn configured_fraction(&self) -> f64 {
        if self.n_coated == 0 {
            0.0
        } else {
            self.configured_tiles as f64 / self.n_coated as f64
        }
    }

    pub fn pair(&self, tx: usize, rx: usize) -> Option<&PairReport> {
        self.pairs.iter().find(|p| p.tx == tx && p.rx == rx)
    }
}

/// Replace every tile function with specular reflection and drop labels.
pub fn naturalize(g: &mut PweGraph) {
    for t in g.tiles.iter_mut() {
        t.is_virtual = true;
    }
    for i in 0..g.tiles.len() {
        g.deployed[i] = Some(virtual_function(g.tiles[i].normal));
    }
    g.clear_labels();
}

/// Users that emit in this scenario: pair transmitters and blocked users.
pub fn transmitters(sc: &Scenario) -> Vec<usize> {
    let mut v: Vec<usize> = sc.pairs.iter().map(|p| p.tx).collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn tx_inputs(g: &PweGraph, txs: &[usize], carrier: f64) -> TxInputs {
    txs.iter().map(|&u| (u, g.user_link_inputs(u, carrier))).collect()
}

fn kp_options(sc: &Scenario, seed: u64) -> KpOptions {
    let mut o = KpOptions {
        carrier: sc.params.frequency,
        absorb_cleanup: sc.params.absorb_cleanup,
        max_follow: sc.params.max_bounces,
        security_priority: sc.params.security_priority,
        ..Default::default()
    };
    if sc.params.block_target == BlockTarget::Random {
        o.block_seed = Some(seed);
    }
    o
}

struct Outcome {
    graph: PweGraph,
    deployment: Option<Deployment>,
    prop: crate::propagation::PropagationResult,
}

fn execute(sc: &Scenario, users: Vec<UserNode>, mode: Mode, seed: u64) -> Result<Outcome, ScenarioError> {
    let mut g = sc.graph_with_users(users)?;
    let txs = transmitters(sc);
    let inputs = tx_inputs(&g, &txs, sc.params.frequency);
    let deployment = match mode {
        Mode::Pwe => Some(kp_config(&mut g, &sc.pairs, &inputs, &kp_options(sc, seed))),
        Mode::Natural => {
            naturalize(&mut g);
            None
        }
    };
    let receivers: BTreeSet<usize> = (0..g.users.len()).collect();
    let seeds: Vec<(usize, Vec<_>)> = inputs.into_iter().collect();
    let cfg = PropConfig {
        min_power_dbm: sc.params.min_power_dbm,
        max_bounces: sc.params.max_bounces,
        strict: sc.params.strict && mode == Mode::Pwe,
    };
    let prop = nlos_prop(&g, &receivers, &seeds, &cfg).map_err(|e| ScenarioError::Runtime(e.to_string()))?;
    Ok(Outcome { graph: g, deployment, prop })
}

/// Classified power-delay profiles. Useful arrivals of a MaxSIR pair that
/// fall outside its delay window count as interference.
fn classify(sc: &Scenario, o: &Outcome, mode: Mode) -> BTreeMap<usize, PowerDelayProfile> {
    let mut out = BTreeMap::new();
    for (&rx, arrivals) in &o.prop.arrivals {
        let mut entries: Vec<PdpEntry> = classify_useful(&o.graph, arrivals, rx);
        if mode == Mode::Natural {
            for e in entries.iter_mut() {
                e.useful = false;
            }
        }
        for pr in sc.pairs.iter().filter(|p| p.rx == rx && p.objective.max_sir) {
            let idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].useful && entries[i].source == pr.tx).collect();
            let delays: Vec<(f64, f64)> = idx.iter().map(|&i| (entries[i].delay, entries[i].wave.power)).collect();
            let (_, keep) = useful_power(&delays, pr.objective.d_th);
            for (k, &i) in idx.iter().enumerate() {
                if !keep.contains(&k) {
                    entries[i].useful = false;
                }
            }
        }
        out.insert(rx, PowerDelayProfile::from_entries(entries));
    }
    out
}

fn function_name(g: &PweGraph, dep: Option<&Deployment>, t: usize) -> String {
    if let Some(a) = dep.and_then(|d| d.assignments.get(&t)) {
        let base = a.function.base.kind().to_string();
        return match a.role {
            Role::Path => base,
            Role::Block => "Abs(block)".into(),
            Role::Emission => "Abs(emission)".into(),
            Role::Idle => "Abs(idle)".into(),
        };
    }
    if g.tiles[t].is_virtual {
        "virtual".into()
    } else if g.deployed[t].is_some() {
        g.deployed[t].as_ref().unwrap().base.kind().to_string()
    } else {
        "none".into()
    }
}

fn pool(workers: Option<usize>) -> rayon::ThreadPool {
    let n = workers
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
}

fn trajectory_steps(
    sc: &Scenario,
    mode: Mode,
    seed: u64,
    opts: &RunOptions,
) -> Result<Vec<StepRecord>, ScenarioError> {
    let mut jobs = Vec::new();
    for (u, spec) in sc.users.iter().enumerate() {
        let traj = match &spec.trajectory {
            Some(t) => t,
            None => continue,
        };
        let mut pts = traj.sample(sc.params.step);
        if let Some(n) = opts.steps {
            pts.truncate(n);
        }
        for (k, p) in pts.into_iter().enumerate() {
            jobs.push((u, k, p));
        }
    }
    let run_one = |&(u, k, p): &(usize, usize, Vec3)| -> Result<Vec<StepRecord>, ScenarioError> {
        let mut users = sc.user_nodes();
        users[u].position = p;
        let o = execute(sc, users, mode, seed)?;
        let pdp = classify(sc, &o, mode);
        let mut recs = Vec::new();
        for (pi, pr) in sc.pairs.iter().enumerate().filter(|(_, p)| p.rx == u && !p.objective.block) {
            let traj = sc.users[u].trajectory.as_ref();
            let tol = pr.objective.doppler.unwrap_or(DEFAULT_DOPPLER_TOLERANCE);
            let paths = o.deployment.as_ref().and_then(|d| d.pair_paths.get(&pi)).cloned().unwrap_or_default();
            let mut devs = Vec::new();
            let mut last_tiles = Vec::new();
            for p in &paths {
                if let Ok((_, d)) = doppler_ok(&o.graph, p, traj, tol) {
                    devs.push(d);
                }
                last_tiles.push(p.nodes[p.nodes.len() - 2]);
            }
            let la = crate::configurator::protected_spheres(&o.graph, pr);
            let mut best = f64::INFINITY;
            for l in o.graph.user_links(u) {
                let (a, b) = o.graph.link_segment(l);
                if la.iter().any(|(_, s)| crate::geometry::segment_intersects_sphere(a, b, s)) {
                    continue;
                }
                if let Some(t) = traj {
                    if let Ok(d) = crate::geometry::deviation_from_perpendicular(a, b, t, p) {
                        best = best.min(d);
                    }
                }
            }
            let received = pdp
                .get(&u)
                .map(|d| {
                    d.entries
                        .iter()
                        .filter(|e| e.source == pr.tx && (mode == Mode::Natural || e.useful))
                        .map(|e| e.wave.power)
                        .sum()
                })
                .unwrap_or(0.0);
            recs.push(StepRecord {
                step: k,
                position: p,
                pair: pi,
                deviation_max: devs.iter().cloned().fold(f64::NAN, f64::max),
                deviation_min: devs.iter().cloned().fold(f64::NAN, f64::min),
                best_available: best,
                received_w: received,
                paths: paths.len(),
                last_tiles,
            });
        }
        Ok(recs)
    };
    let results: Vec<Result<Vec<StepRecord>, ScenarioError>> = pool(opts.workers).install(|| jobs.par_iter().map(run_one).collect());
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn serial_counts(sc: &Scenario, seed: u64, opts: &RunOptions) -> Result<Vec<(usize, usize)>, ScenarioError> {
    let ks: Vec<usize> = (1..=sc.pairs.len()).collect();
    let results: Vec<Result<(usize, usize), ScenarioError>> = pool(opts.workers).install(|| {
        ks.par_iter()
            .map(|&k| {
                let mut sub = sc.clone();
                sub.pairs.truncate(k);
                let mut g = sub.graph()?;
                let inputs = tx_inputs(&g, &transmitters(&sub), sub.params.frequency);
                let dep = kp_config(&mut g, &sub.pairs, &inputs, &kp_options(&sub, seed));
                Ok((k, dep.configured_tiles()))
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Run a scenario: build the graph, configure it (pwe mode) or make every
/// tile a specular reflector (natural mode), propagate, and summarize.
pub fn run(sc: &Scenario, mode: Mode, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    let seed = opts.seed.unwrap_or(sc.params.seed);
    let o = execute(sc, sc.user_nodes(), mode, seed)?;
    let pdp = classify(sc, &o, mode);
    let n = sc.users.len();
    let mut useful = vec![vec![0.0; n]; n];
    let mut total = vec![vec![0.0; n]; n];
    for (&rx, prof) in &pdp {
        for e in &prof.entries {
            total[e.source][rx] += e.wave.power;
            if e.useful {
                useful[e.source][rx] += e.wave.power;
            }
        }
    }
    let dep = o.deployment.as_ref();
    let mut pairs = Vec::new();
    for (i, pr) in sc.pairs.iter().enumerate() {
        if pr.objective.block {
            continue;
        }
        let prof = &pdp[&pr.rx];
        let interference: f64 = prof.entries.iter().filter(|e| !e.useful).map(|e| e.wave.power).sum();
        let u = useful[pr.tx][pr.rx];
        let t = total[pr.tx][pr.rx];
        let received = if mode == Mode::Pwe { u } else { t };
        pairs.push(PairReport {
            index: i,
            tx: pr.tx,
            rx: pr.rx,
            objective: pr.objective.to_string(),
            received_w: received,
            useful_w: u,
            total_w: t,
            interference_w: interference,
            sir: sir(u, interference),
            paths: dep.and_then(|d| d.pair_paths.get(&i)).map_or(0, |v| v.len()),
        });
    }
    let mut role_counts = BTreeMap::new();
    if let Some(d) = dep {
        for (name, role) in [("path", Role::Path), ("block", Role::Block), ("emission", Role::Emission), ("idle", Role::Idle)] {
            role_counts.insert(name.to_string(), d.count_role(role));
        }
    }
    let tile_usage = o
        .graph
        .tiles
        .iter()
        .map(|t| TileUsage {
            tile: t.id,
            surface: t.surface,
            center: t.center,
            is_virtual: !o.graph.floorplan.surfaces[t.surface].coated,
            function: function_name(&o.graph, dep, t.id),
            rays: o.prop.tile_usage[t.id],
        })
        .collect();
    let n_coated = o.graph.floorplan.surfaces.iter().enumerate().filter(|(_, s)| s.coated).map(|(i, _)| {
        o.graph.tiles.iter().filter(|t| t.surface == i).count()
    }).sum();
    let trajectory = if sc.users.iter().any(|u| u.trajectory.is_some()) {
        trajectory_steps(sc, mode, seed, opts)?
    } else {
        Vec::new()
    };
    let serial = if sc.params.serial && mode == Mode::Pwe { serial_counts(sc, seed, opts)? } else { Vec::new() };
    let mut blocked_users: Vec<usize> = sc.pairs.iter().filter(|p| p.objective.block).map(|p| p.tx).collect();
    blocked_users.dedup();
    Ok(RunReport {
        mode,
        seed,
        n_users: n,
        n_tiles: o.graph.tiles.len(),
        n_coated,
        configured_tiles: dep.map_or(0, |d| d.configured_tiles()),
        role_counts,
        paths_rem: dep.map_or(0, |d| d.paths_rem),
        partial_blocks: dep.map_or(0, |d| d.partial_blocks.len()),
        blocked_users,
        user_links: (0..n).map(|u| o.graph.user_links(u).len()).collect(),
        pairs,
        useful,
        total,
        pdp,
        tile_usage,
        stats: o.prop.stats,
        trajectory,
        serial,
    })
}

pub fn fmt_dbm(w: f64) -> String {
    if w > 0.0 {
        format!("{:.2}", watts_to_dbm(w))
    } else {
        "disconnected".to_string()
    }
}

fn fmt_deg(d: f64) -> String {
    if d.is_finite() {
        format!("{:.4}", d)
    } else {
        "none".to_string()
    }
}

pub fn metrics_text(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", r.mode.name());
    let _ = writeln!(s, "seed = {}", r.seed);
    let _ = writeln!(s, "users = {}", r.n_users);
    let _ = writeln!(s, "tiles = {}", r.n_tiles);
    let _ = writeln!(s, "coated_tiles = {}", r.n_coated);
    let _ = writeln!(s, "configured_tiles = {}", r.configured_tiles);
    let _ = writeln!(s, "configured_fraction = {:.4}", r.configured_fraction());
    for (k, v) in &r.role_counts {
        let _ = writeln!(s, "tiles_{} = {}", k, v);
    }
    let _ = writeln!(s, "paths_rem = {}", r.paths_rem);
    let _ = writeln!(s, "partial_blocks = {}", r.partial_blocks);
    let b: Vec<String> = r.blocked_users.iter().map(|u| u.to_string()).collect();
    let _ = writeln!(s, "blocked_users = {}", b.join(","));
    let ul: Vec<String> = r.user_links.iter().map(|u| u.to_string()).collect();
    let _ = writeln!(s, "user_links = {}", ul.join(","));
    let st = &r.stats;
    let _ = writeln!(
        s,
        "rays = spawned {} reached {} absorbed {} blocked {} sub_threshold {} over_bounce {} escaped {}",
        st.spawned, st.reached, st.absorbed, st.blocked, st.sub_threshold, st.over_bounce, st.escaped
    );
    for (k, c) in &r.serial {
        let _ = writeln!(s, "serial {} = {}", k, c);
    }
    s.push_str("# pair tx rx received_dbm useful_dbm total_dbm interference_dbm sir paths objective\n");
    for p in &r.pairs {
        let _ = writeln!(
            s,
            "pair {} {} {} {} {} {} {} {} {} {}",
            p.index,
            p.tx,
            p.rx,
            fmt_dbm(p.received_w),
            fmt_dbm(p.useful_w),
            fmt_dbm(p.total_w),
            fmt_dbm(p.interference_w),
            match p.sir {
                Sir::InterferenceFree => "interference-free".to_string(),
                Sir::Ratio(x) => format!("{:.6e}", x),
            },
            p.paths,
            p.objective
        );
    }
    s
}

fn matrix_text(m: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let n = m.len();
    let hdr: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let _ = writeln!(s, "tx\\rx {}", hdr.join(" "));
    for (i, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|&w| fmt_dbm(w)).collect();
        let _ = writeln!(s, "{} {}", i, cells.join(" "));
    }
    s
}

pub fn connectivity_text(r: &RunReport) -> String {
    let mut s = String::new();
    let main = if r.mode == Mode::Pwe { &r.useful } else { &r.total };
    let _ = writeln!(s, "# received dBm ({})", if r.mode == Mode::Pwe { "useful" } else { "total" });
    s.push_str(&matrix_text(main));
    let _ = writeln!(s, "# total dBm");
    s.push_str(&matrix_text(&r.total));
    s
}

pub fn tile_usage_text(r: &RunReport) -> String {
    let mut s = String::from("# tile surface x y z virtual function rays\n");
    for t in &r.tile_usage {
        let _ = writeln!(
            s,
            "{} {} {:.3} {:.3} {:.3} {} {} {}",
            t.tile, t.surface, t.center.x, t.center.y, t.center.z, t.is_virtual, t.function, t.rays
        );
    }
    s
}

pub fn pdp_text(r: &RunReport) -> String {
    let mut s = String::from("# rx source delay_ns power_dbm useful hops\n");
    for (rx, p) in &r.pdp {
        for e in &p.entries {
            let _ = writeln!(
                s,
                "{} {} {:.6} {} {} {}",
                rx,
                e.source,
                e.delay * 1e9,
                fmt_dbm(e.wave.power),
                e.useful,
                e.path.nodes.len() - 1
            );
        }
    }
    s
}

pub fn trajectory_text(r: &RunReport) -> String {
    let mut s = String::from("# step pair x y z deviation_max deviation_min best_available received_dbm paths last_tiles\n");
    for t in &r.trajectory {
        let tiles: Vec<String> = t.last_tiles.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(
            s,
            "{} {} {:.4} {:.4} {:.4} {} {} {} {} {} {}",
            t.step,
            t.pair,
            t.position.x,
            t.position.y,
            t.position.z,
            fmt_deg(t.deviation_max),
            fmt_deg(t.deviation_min),
            fmt_deg(t.best_available),
            fmt_dbm(t.received_w),
            t.paths,
            if tiles.is_empty() { "-".to_string() } else { tiles.join(",") }
        );
    }
    s
}

/// Write the report files into `dir`; returns the written paths.
pub fn emit_report(r: &RunReport, dir: &FsPath) -> Result<Vec<PathBuf>, ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(e.to_string()))?;
    let mut files = vec![
        ("metrics.txt", metrics_text(r)),
        ("connectivity.txt", connectivity_text(r)),
        ("tile_usage.txt", tile_usage_text(r)),
        ("pdp.txt", pdp_text(r)),
    ];
    if !r.trajectory.is_empty() {
        files.push(("trajectory.txt", trajectory_text(r)));
    }
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| ScenarioError::Io(format!("{}: {}", p.display(), e)))?;
        out.push(p);
    }
    Ok(out)
}

/// Pair lines of a metrics file: `(tx, rx) -> received dBm` (None when
/// disconnected).
pub fn parse_metrics_pairs(text: &str) -> BTreeMap<(usize, usize), Option<f64>> {
    let mut m = BTreeMap::new();
    for line in text.lines() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() >= 5 && t[0] == "pair" {
            if let (Ok(tx), Ok(rx)) = (t[2].parse(), t[3].parse()) {
                m.insert((tx, rx), t[4].parse().ok());
            }
        }
    }
    m
}

fn read_metrics(p: &FsPath) -> Result<String, ScenarioError> {
    let path = if p.is_dir() { p.join("metrics.txt") } else { p.to_path_buf() };
    fs::read_to_string(&path).map_err(|e| ScenarioError::Io(format!("{}: {}", path.display(), e)))
}

/// Per-pair received-power difference B minus A, in dB.
pub fn compare_reports(a: &FsPath, b: &FsPath) -> Result<String, ScenarioError> {
    let ma = parse_metrics_pairs(&read_metrics(a)?);
    let mb = parse_metrics_pairs(&read_metrics(b)?);
    let keys: BTreeSet<(usize, usize)> = ma.keys().chain(mb.keys()).copied().collect();
    let mut s = String::from("# tx rx a_dbm b_dbm delta_db\n");
    let show = |v: Option<&Option<f64>>| match v {
        Some(Some(x)) => format!("{:.2}", x),
        Some(None) => "disconnected".to_string(),
        None => "absent".to_string(),
    };
    for k in keys {
        let (va, vb) = (ma.get(&k), mb.get(&k));
        let delta = match (va, vb) {
            (Some(Some(x)), Some(Some(y))) => format!("{:.2}", y - x),
            _ => "n/a".to_string(),
        };
        let _ = writeln!(s, "{} {} {} {} {}", k.0, k.1, show(va), show(vb), delta);
    }
    Ok(s)
}
