//! Objective flags and the scores/predicates used for path selection.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::geometry::{deviation_from_perpendicular, segment_intersects_sphere, GeometryError, Sphere, Trajectory, Vec3};
use crate::pwe_graph::{LinkId, Path, PweGraph};

/// Default QoS delay window, seconds.
pub const DEFAULT_D_TH: f64 = 10e-9;
/// Default Doppler tolerance around perpendicular, degrees.
pub const DEFAULT_DOPPLER_TOLERANCE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("MaxPower and MaxSIR cannot be combined")]
    PowerAndSir,
    #[error("Block cannot be combined with other objectives")]
    BlockExclusive,
    #[error("objective not applicable: {0}")]
    Inapplicable(String),
    #[error("invalid objective parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EavesTarget {
    All,
    Users(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSet {
    pub max_power: bool,
    pub max_sir: bool,
    pub eaves: Option<EavesTarget>,
    /// Doppler tolerance in degrees; the trajectory is the receiver's.
    pub doppler: Option<f64>,
    pub block: bool,
    pub d_th: f64,
}

impl Default for ObjectiveSet {
    fn default() -> Self {
        ObjectiveSet { max_power: false, max_sir: false, eaves: None, doppler: None, block: false, d_th: DEFAULT_D_TH }
    }
}

impl ObjectiveSet {
    pub fn max_power() -> Self {
        ObjectiveSet { max_power: true, ..Default::default() }
    }

    pub fn max_sir(d_th: f64) -> Self {
        ObjectiveSet { max_sir: true, d_th, ..Default::default() }
    }

    pub fn block() -> Self {
        ObjectiveSet { block: true, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.max_power && self.max_sir {
            return Err(ObjectiveError::PowerAndSir);
        }
        if self.block && (self.max_power || self.max_sir || self.eaves.is_some() || self.doppler.is_some()) {
            return Err(ObjectiveError::BlockExclusive);
        }
        if !(self.d_th >= 0.0) {
            return Err(ObjectiveError::InvalidParameter(format!("d_th {}", self.d_th)));
        }
        if let Some(t) = self.doppler {
            if !(0.0..=90.0).contains(&t) {
                return Err(ObjectiveError::InvalidParameter(format!("doppler tolerance {}", t)));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ObjectiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        if self.max_power {
            parts.push("MaxPower".into());
        }
        if self.max_sir {
            parts.push("MaxSIR".into());
        }
        match &self.eaves {
            Some(EavesTarget::All) => parts.push("EavesMit".into()),
            Some(EavesTarget::Users(u)) => {
                let ids: Vec<String> = u.iter().map(|x| x.to_string()).collect();
                parts.push(format!("EavesMit({})", ids.join(",")));
            }
            None => {}
        }
        if let Some(t) = self.doppler {
            parts.push(format!("DopplerMit({})", t));
        }
        if self.block {
            parts.push("Block".into());
        }
        write!(f, "{}", parts.join("+"))
    }
}

/// Sum of input power times gain product. `inputs` maps the first
/// (transmitter-side) link of each path to the power injected on it.
pub fn power_score(paths: &[Path], inputs: &HashMap<LinkId, f64>) -> f64 {
    paths
        .iter()
        .map(|p| inputs.get(&p.first_link()).copied().unwrap_or(0.0) * p.gain_product)
        .sum()
}

/// Members of the delay window `[min, min + d_th]` and their total power.
/// Each entry is `(delay, power)`.
pub fn useful_power(entries: &[(f64, f64)], d_th: f64) -> (f64, Vec<usize>) {
    let min = entries.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return (0.0, Vec::new());
    }
    let sel: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].0 - min <= d_th).collect();
    let p = sel.iter().map(|&i| entries[i].1).sum();
    (p, sel)
}

/// Power of every entry not in `useful`.
pub fn interference_power(powers: &[f64], useful: &[usize]) -> f64 {
    powers.iter().enumerate().filter(|(i, _)| !useful.contains(i)).map(|(_, p)| p).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sir {
    Ratio(f64),
    InterferenceFree,
}

impl fmt::Display for Sir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sir::Ratio(r) => write!(f, "{}", r),
            Sir::InterferenceFree => write!(f, "interference-free"),
        }
    }
}

pub fn sir(p_tot: f64, interference: f64) -> Sir {
    if interference == 0.0 {
        if p_tot > 0.0 {
            Sir::InterferenceFree
        } else {
            Sir::Ratio(0.0)
        }
    } else {
        Sir::Ratio(p_tot / interference)
    }
}

/// Does any segment come within a protected sphere other than the receiver's?
pub fn segments_violate(segments: &[(Vec3, Vec3)], protected: &[(usize, Sphere)], rx: usize) -> bool {
    segments
        .iter()
        .any(|&(a, b)| protected.iter().any(|(u, s)| *u != rx && segment_intersects_sphere(a, b, s)))
}

pub fn eavesdrop_violations(g: &PweGraph, path: &Path, protected: &[(usize, Sphere)], rx: usize) -> bool {
    let segs: Vec<(Vec3, Vec3)> = path.links.iter().map(|&l| g.link_segment(l)).collect();
    segments_violate(&segs, protected, rx)
}

/// Deviation of the last link from perpendicular to the receiver's motion
/// at the receiver's current position.
pub fn doppler_ok(
    g: &PweGraph,
    path: &Path,
    traj: Option<&Trajectory>,
    tolerance: f64,
) -> Result<(bool, f64), ObjectiveError> {
    let traj = traj.ok_or_else(|| ObjectiveError::Inapplicable("receiver has no trajectory".into()))?;
    let (a, b) = g.link_segment(path.last_link());
    let at = g.position(path.target());
    let dev = deviation_from_perpendicular(a, b, traj, at)?;
    Ok((dev <= tolerance, dev))
}
