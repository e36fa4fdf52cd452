//! Parametric urban wind fields and contaminant transport with reduced-order models.
//!
//! The crate is organised along the offline/online split of a reduced-order
//! modelling workflow:
//!
//! * [`mesh`] builds or loads triangulated urban domains and their Taylor–Hood spaces;
//! * [`fom_ins`] and [`fom_ad`] are the full-order wind (steady Navier–Stokes) and
//!   transport (SUPG advection–diffusion) solvers;
//! * [`pod`], [`rom_podg`] and [`rom_podi`] build the intrusive and non-intrusive
//!   reduced models;
//! * [`bench`] and [`uq`] drive comparison studies and Monte Carlo propagation.

pub mod bench;
pub mod container;
pub mod error;
pub mod fem;
pub mod fom_ad;
pub mod fom_ins;
pub mod linalg;
pub mod mesh;
pub mod pod;
pub mod rom_podg;
pub mod rom_podi;
pub mod uq;

pub use error::{Error, Result};
pub use fom_ins::{FlowSolution, InsProblem, NewtonOptions, ParameterBounds, ParameterPoint};
pub use mesh::{BoundaryTag, Mesh, TaylorHoodSpace};
