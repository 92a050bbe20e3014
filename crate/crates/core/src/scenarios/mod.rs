//! Ready-to-run presets: alignment of a small flock and a vessel in a stream.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::constraint::ConstraintSet;
use crate::mechanics::MechanicalSystem;
use crate::state::State;

pub mod flocking;
pub mod usv;

pub use flocking::{build_flocking, Alignment, Flock, FlockingParams};
pub use usv::{
    build_usv, kinematic_check, kinematic_velocity, usv_constraint, CurrentField, LinearCurrent,
    UniformCurrent, Usv, UsvConstraint, UsvParams,
};

/// A system, its constraint, an initial state and the default run length.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub system: Arc<dyn MechanicalSystem>,
    pub constraint: Arc<dyn ConstraintSet>,
    pub initial: State,
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Flocking,
    UsvNortheast,
    UsvAnticyclone,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Flocking, Preset::UsvNortheast, Preset::UsvAnticyclone];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Flocking => "flocking",
            Preset::UsvNortheast => "usv-northeast",
            Preset::UsvAnticyclone => "usv-anticyclone",
        }
    }

    pub fn is_usv(self) -> bool {
        !matches!(self, Preset::Flocking)
    }

    pub fn usv_params(self) -> Option<UsvParams> {
        match self {
            Preset::Flocking => None,
            Preset::UsvNortheast => Some(UsvParams::northeast()),
            Preset::UsvAnticyclone => Some(UsvParams::anticyclone()),
        }
    }

    pub fn build(self) -> crate::error::Result<Scenario> {
        let mut sc = match self {
            Preset::Flocking => build_flocking(&FlockingParams::default())?,
            _ => build_usv(&self.usv_params().expect("usv preset"))?,
        };
        sc.name = self.name().into();
        Ok(sc)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                format!("unknown scenario '{s}' (expected one of {})", names.join(", "))
            })
    }
}
