//! Wave tuples, tile functions with their modifiers, the combination table
//! and EM profiles.

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{specular_reflect, Vec3};

/// Direction tolerance when deciding whether an input is the nominal one.
pub const MATCH_TOLERANCE: f64 = 1e-6;

pub type Jones = [Complex64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmError {
    #[error("function {0} is not supported by the profile")]
    Unsupported(FunctionKind),
    #[error("combination {0}+{1} via {2:?} is not supported by the profile")]
    UnsupportedCombination(FunctionKind, FunctionKind, CombineMethod),
    #[error("invalid tile function: {0}")]
    InvalidFunction(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaveKind {
    Planar,
    /// Spherically spreading wave; `r` is the distance to its source point.
    Focal { r: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveSpec {
    pub kind: WaveKind,
    /// Carrier frequency in Hz.
    pub omega: f64,
    /// Unit propagation direction.
    pub direction: Vec3,
    /// Watts.
    pub power: f64,
    pub jones: Jones,
    /// Radians in `[0, 2pi)`.
    pub phase: f64,
}

/// Horizontal linear polarization, used for every transmitted wave.
pub fn linear_polarization() -> Jones {
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
}

pub fn jones_norm(j: &Jones) -> f64 {
    (j[0].norm_sqr() + j[1].norm_sqr()).sqrt()
}

pub fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl WaveSpec {
    pub fn planar(omega: f64, direction: Vec3, power: f64) -> Self {
        WaveSpec {
            kind: WaveKind::Planar,
            omega,
            direction,
            power,
            jones: linear_polarization(),
            phase: 0.0,
        }
    }

    pub fn focal(omega: f64, direction: Vec3, r: f64, power: f64, phase: f64) -> Self {
        WaveSpec {
            kind: WaveKind::Focal { r },
            omega,
            direction,
            power,
            jones: linear_polarization(),
            phase: wrap_phase(phase),
        }
    }

    pub fn validate(&self) -> Result<(), EmError> {
        if !(self.power >= 0.0) || !(self.omega > 0.0) {
            return Err(EmError::InvalidFunction("wave power must be >= 0 and omega > 0".into()));
        }
        if (jones_norm(&self.jones) - 1.0).abs() > 1e-9 {
            return Err(EmError::InvalidFunction("jones vector is not unit norm".into()));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(EmError::InvalidFunction("direction is not unit norm".into()));
        }
        Ok(())
    }

    fn with_direction(&self, direction: Vec3, power: f64) -> WaveSpec {
        WaveSpec { direction, power, ..self.clone() }
    }

    /// Same carrier and direction within `MATCH_TOLERANCE`.
    pub fn matches_direction(&self, direction: Vec3, omega: f64) -> bool {
        (self.omega - omega).abs() <= 1e-9 * omega.abs().max(1.0)
            && (self.direction - direction).norm() <= MATCH_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionKind {
    Abs,
    Str,
    Col,
    Pol,
    Pha,
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FunctionKind::Abs => "Abs",
            FunctionKind::Str => "Str",
            FunctionKind::Col => "Col",
            FunctionKind::Pol => "Pol",
            FunctionKind::Pha => "Pha",
        };
        f.write_str(s)
    }
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 5] = [
        FunctionKind::Abs,
        FunctionKind::Str,
        FunctionKind::Col,
        FunctionKind::Pol,
        FunctionKind::Pha,
    ];

    pub fn parse(s: &str) -> Option<FunctionKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abs" | "absorb" => Some(FunctionKind::Abs),
            "str" | "steer" => Some(FunctionKind::Str),
            "col" | "collimate" => Some(FunctionKind::Col),
            "pol" | "polarize" => Some(FunctionKind::Pol),
            "pha" | "phase" => Some(FunctionKind::Pha),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CombineMethod {
    SurfaceDivision,
    MetaAtomMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Sd,
    SdUnintended,
    Mm,
    MmPartial,
    None,
}

fn table_cell(a: FunctionKind, b: FunctionKind) -> Cell {
    use Cell::*;
    const T: [[Cell; 5]; 5] = [
        [Sd, Sd, SdUnintended, MmPartial, MmPartial],
        [Sd, Sd, SdUnintended, Mm, Mm],
        [SdUnintended, SdUnintended, SdUnintended, Mm, Mm],
        [MmPartial, Mm, Mm, None, Mm],
        [MmPartial, Mm, Mm, Mm, None],
    ];
    T[a as usize][b as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combinability {
    pub allowed: bool,
    /// Possible, but may produce unintended outputs.
    pub unintended: bool,
    /// Only meaningful when the absorber is partial.
    pub requires_partial_absorb: bool,
}

/// Lookup in the combination table. Cells that need a partial absorber
/// are reported as allowed with `requires_partial_absorb` set.
pub fn validate_combination(a: FunctionKind, b: FunctionKind, method: CombineMethod) -> Combinability {
    let cell = table_cell(a, b);
    let (allowed, unintended, partial) = match (cell, method) {
        (Cell::Sd, CombineMethod::SurfaceDivision) => (true, false, false),
        (Cell::SdUnintended, CombineMethod::SurfaceDivision) => (true, true, false),
        (Cell::Mm, CombineMethod::MetaAtomMerge) => (true, false, false),
        (Cell::MmPartial, CombineMethod::MetaAtomMerge) => (true, false, true),
        _ => (false, false, false),
    };
    Combinability { allowed, unintended, requires_partial_absorb: partial }
}

/// Same as [`validate_combination`] but resolves the partial-absorb footnote.
pub fn combination_allowed(a: FunctionKind, b: FunctionKind, method: CombineMethod, partial_absorb: bool) -> bool {
    let c = validate_combination(a, b, method);
    c.allowed && (!c.requires_partial_absorb || partial_absorb)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseFunction {
    /// `residual` is the fraction of an intended input that is still
    /// reflected (0 for full absorption).
    Absorb { residual: f64 },
    Steer { normal: Vec3 },
    Collimate { out_direction: Vec3 },
    Split { normals: Vec<Vec3> },
}

impl BaseFunction {
    pub fn kind(&self) -> FunctionKind {
        match self {
            BaseFunction::Absorb { .. } => FunctionKind::Abs,
            BaseFunction::Steer { .. } | BaseFunction::Split { .. } => FunctionKind::Str,
            BaseFunction::Collimate { .. } => FunctionKind::Col,
        }
    }

    pub fn is_absorb(&self) -> bool {
        matches!(self, BaseFunction::Absorb { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Modifiers {
    pub delta_jones: Option<Jones>,
    pub delta_phase: Option<f64>,
}

impl Modifiers {
    pub fn is_empty(&self) -> bool {
        self.delta_jones.is_none() && self.delta_phase.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileFunction {
    pub base: BaseFunction,
    pub modifiers: Modifiers,
    /// The nominal input. `None` accepts every input as intended, which is
    /// how full absorbers are expressed.
    pub expected_input: Option<WaveSpec>,
}

impl TileFunction {
    pub fn full_absorb() -> Self {
        TileFunction {
            base: BaseFunction::Absorb { residual: 0.0 },
            modifiers: Modifiers::default(),
            expected_input: None,
        }
    }

    pub fn steer(normal: Vec3, expected_input: WaveSpec) -> Self {
        TileFunction {
            base: BaseFunction::Steer { normal },
            modifiers: Modifiers::default(),
            expected_input: Some(expected_input),
        }
    }

    pub fn collimate(out_direction: Vec3, expected_input: WaveSpec) -> Self {
        TileFunction {
            base: BaseFunction::Collimate { out_direction },
            modifiers: Modifiers::default(),
            expected_input: Some(expected_input),
        }
    }

    pub fn validate(&self) -> Result<(), EmError> {
        match &self.base {
            BaseFunction::Absorb { residual } => {
                if !(0.0..1.0).contains(residual) {
                    return Err(EmError::InvalidFunction("absorb residual must be in [0,1)".into()));
                }
                if !self.modifiers.is_empty() && *residual == 0.0 {
                    return Err(EmError::InvalidFunction(
                        "modifiers on an absorber need partial absorption".into(),
                    ));
                }
            }
            BaseFunction::Steer { normal } => check_unit(*normal, "steer normal")?,
            BaseFunction::Collimate { out_direction } => {
                check_unit(*out_direction, "collimation direction")?;
                if self.expected_input.is_none() {
                    return Err(EmError::InvalidFunction("collimation needs an expected input".into()));
                }
            }
            BaseFunction::Split { normals } => {
                if normals.len() < 2 {
                    return Err(EmError::InvalidFunction("split needs at least 2 normals".into()));
                }
                for n in normals {
                    check_unit(*n, "split normal")?;
                }
            }
        }
        if let Some(j) = &self.modifiers.delta_jones {
            if !(j[0].norm().is_finite() && j[1].norm().is_finite()) {
                return Err(EmError::InvalidFunction("non-finite jones shift".into()));
            }
        }
        Ok(())
    }

    /// Output direction for the nominal input, when one is defined.
    pub fn nominal_output_direction(&self, tile_normal: Vec3) -> Option<Vec3> {
        let e = self.expected_input.as_ref()?;
        match &self.base {
            BaseFunction::Absorb { .. } => None,
            BaseFunction::Steer { normal } => Some(specular_reflect(e.direction, *normal)),
            BaseFunction::Collimate { out_direction } => Some(*out_direction),
            BaseFunction::Split { .. } => Some(specular_reflect(e.direction, tile_normal)),
        }
    }

    /// Is `input` nominal for this function? Because functions are
    /// reciprocal, the reverse of the nominal output counts as nominal too.
    pub fn is_intended(&self, input: &WaveSpec, tile_normal: Vec3) -> bool {
        let e = match &self.expected_input {
            None => return true,
            Some(e) => e,
        };
        if input.matches_direction(e.direction, e.omega) {
            return true;
        }
        match &self.base {
            BaseFunction::Steer { .. } | BaseFunction::Collimate { .. } => self
                .nominal_output_direction(tile_normal)
                .map_or(false, |out| input.matches_direction(-out, e.omega)),
            _ => false,
        }
    }
}

fn check_unit(v: Vec3, what: &str) -> Result<(), EmError> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        Err(EmError::InvalidFunction(format!("{} is not unit norm", what)))
    } else {
        Ok(())
    }
}

/// How the gain for non-nominal inputs is derived.
#[derive(Debug, Clone, PartialEq)]
pub enum SimilarityModel {
    /// Every input gets the intended gain.
    Constant,
    /// `g * max(0, cos(angle between nominal and actual direction))^exponent`.
    Cosine { exponent: f64 },
}

impl SimilarityModel {
    pub fn name(&self) -> &'static str {
        match self {
            SimilarityModel::Constant => "constant",
            SimilarityModel::Cosine { .. } => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParasiticTrigger {
    Any,
    UnintendedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParasiticDirection {
    /// Mirror of the input about the physical tile normal.
    Specular,
    Fixed(Vec3),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParasiticRule {
    pub trigger: ParasiticTrigger,
    pub direction: ParasiticDirection,
    /// Fraction of the input power carried by the parasitic output.
    pub power_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EMProfile {
    pub supported: Vec<FunctionKind>,
    /// Allowed combinations; `None` allows everything in the table.
    pub combinations: Option<Vec<(FunctionKind, FunctionKind, CombineMethod)>>,
    pub intended_gain: f64,
    pub similarity: SimilarityModel,
    pub parasitic: Vec<ParasiticRule>,
    /// Jones shift seen by non-nominal inputs of a polarizing tile.
    pub unintended_jones_shift: Jones,
}

impl Default for EMProfile {
    fn default() -> Self {
        EMProfile::with_gain(0.99)
    }
}

impl EMProfile {
    pub fn with_gain(g: f64) -> Self {
        EMProfile {
            supported: FunctionKind::ALL.to_vec(),
            combinations: None,
            intended_gain: g,
            similarity: SimilarityModel::Constant,
            parasitic: Vec::new(),
            unintended_jones_shift: [Complex64::new(0.0, 0.0); 2],
        }
    }

    pub fn ideal() -> Self {
        EMProfile::with_gain(1.0)
    }

    pub fn validate(&self) -> Result<(), EmError> {
        if !(self.intended_gain > 0.0 && self.intended_gain <= 1.0) {
            return Err(EmError::InvalidProfile("intended_gain must be in (0,1]".into()));
        }
        if let SimilarityModel::Cosine { exponent } = self.similarity {
            if !(exponent >= 0.0) {
                return Err(EmError::InvalidProfile("cosine exponent must be >= 0".into()));
            }
        }
        let parasitic: f64 = self.parasitic.iter().map(|p| p.power_fraction).sum();
        if self.parasitic.iter().any(|p| !(p.power_fraction >= 0.0)) {
            return Err(EmError::InvalidProfile("parasitic fractions must be >= 0".into()));
        }
        if self.intended_gain + parasitic > 1.0 + 1e-12 {
            return Err(EmError::InvalidProfile("gain plus parasitic fractions exceed 1".into()));
        }
        Ok(())
    }

    /// Gain for a non-nominal input.
    pub fn similarity_gain(&self, nominal: &WaveSpec, actual: &WaveSpec) -> f64 {
        match self.similarity {
            SimilarityModel::Constant => self.intended_gain,
            SimilarityModel::Cosine { exponent } => {
                let c = nominal.direction.dot(actual.direction).clamp(0.0, 1.0);
                self.intended_gain * c.powf(exponent)
            }
        }
    }

    pub fn supports(&self, k: FunctionKind) -> bool {
        self.supported.contains(&k)
    }

    pub fn supports_combination(&self, a: FunctionKind, b: FunctionKind, m: CombineMethod, partial: bool) -> bool {
        if !combination_allowed(a, b, m, partial) {
            return false;
        }
        match &self.combinations {
            None => true,
            Some(list) => list.iter().any(|&(x, y, mm)| mm == m && ((x == a && y == b) || (x == b && y == a))),
        }
    }

    fn check_supported(&self, f: &TileFunction) -> Result<(), EmError> {
        let base = f.base.kind();
        if !self.supports(base) {
            return Err(EmError::Unsupported(base));
        }
        let partial = matches!(f.base, BaseFunction::Absorb { residual } if residual > 0.0);
        if let BaseFunction::Split { .. } = f.base {
            let m = CombineMethod::SurfaceDivision;
            if !self.supports_combination(FunctionKind::Str, FunctionKind::Str, m, partial) {
                return Err(EmError::UnsupportedCombination(FunctionKind::Str, FunctionKind::Str, m));
            }
        }
        let mut mods = Vec::new();
        if f.modifiers.delta_jones.is_some() {
            mods.push(FunctionKind::Pol);
        }
        if f.modifiers.delta_phase.is_some() {
            mods.push(FunctionKind::Pha);
        }
        for m in mods {
            if !self.supports(m) {
                return Err(EmError::Unsupported(m));
            }
            let method = CombineMethod::MetaAtomMerge;
            if !self.supports_combination(base, m, method, partial) {
                return Err(EmError::UnsupportedCombination(base, m, method));
            }
        }
        Ok(())
    }
}

fn shift_jones(j: &Jones, delta: &Jones) -> Jones {
    let s = [j[0] + delta[0], j[1] + delta[1]];
    let n = jones_norm(&s);
    if n < 1e-15 {
        *j
    } else {
        [s[0] / n, s[1] / n]
    }
}

fn toggle_kind(input: &WaveSpec, nominal: Option<&WaveSpec>) -> WaveKind {
    match input.kind {
        WaveKind::Focal { .. } => WaveKind::Planar,
        WaveKind::Planar => match nominal.map(|n| n.kind) {
            Some(WaveKind::Focal { r }) => WaveKind::Focal { r },
            _ => WaveKind::Focal { r: 0.0 },
        },
    }
}

/// Apply a deployed function to one input wave.
pub fn apply_function(
    f: &TileFunction,
    input: &WaveSpec,
    profile: &EMProfile,
    tile_normal: Vec3,
) -> Result<Vec<WaveSpec>, EmError> {
    profile.check_supported(f)?;
    let intended = f.is_intended(input, tile_normal);
    let gain = match (&f.expected_input, intended) {
        (_, true) | (None, _) => profile.intended_gain,
        (Some(e), false) => profile.similarity_gain(e, input),
    };
    let p = input.power;
    let spec_dir = specular_reflect(input.direction, tile_normal);
    let mut out = match &f.base {
        BaseFunction::Absorb { residual } => {
            if intended {
                if *residual > 0.0 {
                    vec![input.with_direction(spec_dir, residual * p)]
                } else {
                    Vec::new()
                }
            } else {
                vec![input.with_direction(spec_dir, gain * p)]
            }
        }
        BaseFunction::Steer { normal } => {
            vec![input.with_direction(specular_reflect(input.direction, *normal), gain * p)]
        }
        BaseFunction::Collimate { out_direction } => {
            let nominal = f.expected_input.as_ref();
            match nominal {
                Some(e) if intended => {
                    let forward = input.matches_direction(e.direction, e.omega);
                    let dir = if forward { *out_direction } else { -e.direction };
                    let mut w = input.with_direction(dir, gain * p);
                    w.kind = toggle_kind(input, if forward { None } else { Some(e) });
                    vec![w]
                }
                _ => {
                    let mut w = input.with_direction(spec_dir, gain * p);
                    w.kind = WaveKind::Planar;
                    vec![w]
                }
            }
        }
        BaseFunction::Split { normals } => {
            let share = gain * p / normals.len() as f64;
            normals
                .iter()
                .map(|n| input.with_direction(specular_reflect(input.direction, *n), share))
                .collect()
        }
    };
    for w in out.iter_mut() {
        if let Some(dj) = &f.modifiers.delta_jones {
            let delta = if intended { *dj } else { profile.unintended_jones_shift };
            w.jones = shift_jones(&w.jones, &delta);
        }
        if let Some(dp) = f.modifiers.delta_phase {
            w.phase = wrap_phase(w.phase + dp);
        }
    }
    for rule in &profile.parasitic {
        if rule.trigger == ParasiticTrigger::UnintendedOnly && intended {
            continue;
        }
        let dir = match rule.direction {
            ParasiticDirection::Specular => spec_dir,
            ParasiticDirection::Fixed(d) => d,
        };
        let mut w = input.with_direction(dir, rule.power_fraction * p);
        w.kind = WaveKind::Planar;
        out.push(w);
    }
    Ok(out)
}

/// Apply a function to a list of inputs, one at a time, preserving order.
pub fn apply_function_multi(
    f: &TileFunction,
    inputs: &[WaveSpec],
    profile: &EMProfile,
    tile_normal: Vec3,
) -> Result<Vec<WaveSpec>, EmError> {
    let mut out = Vec::new();
    for w in inputs {
        out.extend(apply_function(f, w, profile, tile_normal)?);
    }
    Ok(out)
}
