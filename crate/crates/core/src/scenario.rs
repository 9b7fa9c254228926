//! Test cases: initial data, external field and Knudsen-number profiles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coupling::{IndicatorInputs, PrimalField};
use crate::diagnostics::{total_mass, EquilibriumReference};
use crate::error::{config_err, Error, Result};
use crate::kinetic::{Discretization, FieldConfig, KineticState};
use crate::mesh::{gaussian, PhaseMesh};

/// Cases 1 and 2 start at local equilibrium, 3 and 4 far from it; 2 and 4
/// carry the external field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Case {
    One,
    Two,
    Three,
    Four,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::One, Case::Two, Case::Three, Case::Four];

    pub fn index(self) -> u8 {
        match self {
            Case::One => 1,
            Case::Two => 2,
            Case::Three => 3,
            Case::Four => 4,
        }
    }

    pub fn has_field(self) -> bool {
        matches!(self, Case::Two | Case::Four)
    }

    pub fn near_equilibrium(self) -> bool {
        matches!(self, Case::One | Case::Two)
    }

    /// Initial distribution `f0(x, v)`.
    pub fn f0(self, x: f64, v: f64) -> f64 {
        let space = 1.0 + (2.0 * x).cos();
        if self.near_equilibrium() {
            gaussian(v) * space
        } else {
            4.0 * v.powi(4) * gaussian(v) * space
        }
    }

    /// External field and its first three derivatives at `x`.
    pub fn field(self, x: f64) -> [f64; 4] {
        if self.has_field() {
            external_field(x)
        } else {
            [0.0; 4]
        }
    }

    /// Potential `V` with `E = -V'`.
    pub fn potential(self, x: f64) -> f64 {
        if self.has_field() {
            -(2.0 * x).sin() / 4.0
        } else {
            0.0
        }
    }
}

/// `E = cos(2x) / 2` and its derivatives.
pub fn external_field(x: f64) -> [f64; 4] {
    let (s, c) = (2.0 * x).sin_cos();
    [0.5 * c, -s, -2.0 * c, 4.0 * s]
}

impl TryFrom<u8> for Case {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Case::One),
            2 => Ok(Case::Two),
            3 => Ok(Case::Three),
            4 => Ok(Case::Four),
            _ => Err(config_err(format!("unknown case {v}, expected 1 to 4"))),
        }
    }
}

impl From<Case> for u8 {
    fn from(c: Case) -> u8 {
        c.index()
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| config_err(format!("unknown case {s:?}, expected 1 to 4")))?;
        Case::try_from(v)
    }
}

/// Spatial profile of the Knudsen number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsProfile {
    Constant {
        value: f64,
    },
    /// Smooth bump peaking at `pi/2`, scaled so its largest dual sample is 1.
    ArctanBump,
}

impl EpsProfile {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(config_err(format!("epsilon = {value} must be positive")));
        }
        Ok(EpsProfile::Constant { value })
    }

    /// Values on dual centers.
    pub fn dual_values(&self, mesh: &PhaseMesh) -> Vec<f64> {
        self.sample(mesh, &mesh.x_duals)
    }

    /// Values on primal centers, with the same normalization as the duals.
    pub fn primal_values(&self, mesh: &PhaseMesh) -> Vec<f64> {
        self.sample(mesh, &mesh.x_centers)
    }

    /// A representative value, used for labels and decay windows.
    pub fn nominal(&self) -> f64 {
        match *self {
            EpsProfile::Constant { value } => value,
            EpsProfile::ArctanBump => 1.0,
        }
    }

    fn sample(&self, mesh: &PhaseMesh, at: &[f64]) -> Vec<f64> {
        match *self {
            EpsProfile::Constant { value } => vec![value; at.len()],
            EpsProfile::ArctanBump => {
                let peak = mesh
                    .x_duals
                    .iter()
                    .map(|&x| arctan_bump(x))
                    .fold(f64::MIN, f64::max);
                at.iter().map(|&x| arctan_bump(x) / peak).collect()
            }
        }
    }
}

/// `(atan(5 + 10(x - pi/2)) + atan(5 - 10(x - pi/2))) / 2`.
pub fn arctan_bump(x: f64) -> f64 {
    let y = 10.0 * (x - std::f64::consts::FRAC_PI_2);
    0.5 * ((5.0 + y).atan() + (5.0 - y).atan())
}

impl fmt::Display for EpsProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsProfile::Constant { value } => write!(f, "{value:e}"),
            EpsProfile::ArctanBump => write!(f, "arctan_bump"),
        }
    }
}

impl FromStr for EpsProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "arctan_bump" || s == "arctan" {
            return Ok(EpsProfile::ArctanBump);
        }
        let v: f64 = s.parse().map_err(|_| {
            config_err(format!("epsilon {s:?} is neither a number nor arctan_bump"))
        })?;
        EpsProfile::constant(v)
    }
}

/// Initial data sampler and field for one case.
#[derive(Debug, Clone, Copy)]
pub struct InitialData {
    pub case: Case,
}

impl InitialData {
    pub fn f0(&self, x: f64, v: f64) -> f64 {
        self.case.f0(x, v)
    }

    pub fn field(&self, x: f64) -> f64 {
        self.case.field(x)[0]
    }
}

pub fn make_initial_data(case: Case) -> InitialData {
    InitialData { case }
}

pub fn make_eps_profile(profile: EpsProfile, mesh: &PhaseMesh) -> Vec<f64> {
    profile.dual_values(mesh)
}

/// Everything a solver needs for one case on one mesh.
#[derive(Debug, Clone)]
pub struct Problem {
    pub case: Case,
    pub eps: EpsProfile,
    pub disc: Discretization,
    pub indicators: IndicatorInputs,
    pub initial: KineticState,
    pub equilibrium: EquilibriumReference,
}

impl Problem {
    pub fn new(case: Case, eps: EpsProfile, mesh: PhaseMesh, dt: f64) -> Result<Self> {
        let e_dual = mesh.x_duals.iter().map(|&x| case.field(x)[0]).collect();
        let fields = FieldConfig::new(e_dual, eps.dual_values(&mesh), dt, &mesh)?;
        let disc = Discretization::new(mesh, fields);
        let mesh = &disc.mesh;

        let mut field = PrimalField::zero(mesh.nx);
        for (i, &x) in mesh.x_centers.iter().enumerate() {
            let [e, de, d2e, d3e] = case.field(x);
            field.e[i] = e;
            field.de[i] = de;
            field.d2e[i] = d2e;
            field.d3e[i] = d3e;
        }
        let indicators = IndicatorInputs {
            field,
            eps: eps.primal_values(mesh),
        };

        let initial = KineticState::from_distribution(|x, v| case.f0(x, v), mesh, &disc.maxw);
        let m0 = total_mass(&initial.rho, mesh);
        let equilibrium = EquilibriumReference::new(mesh, &disc.maxw, |x| case.potential(x), m0);
        Ok(Self {
            case,
            eps,
            disc,
            indicators,
            initial,
            equilibrium,
        })
    }
}
