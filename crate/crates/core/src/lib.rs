//! Isospectral deformations of metrics on balls and spheres built from
//! linear maps j: R^k -> so(m).
//!
//! The crate constructs continuous families of isospectral, inequivalent
//! j-maps, materializes the associated metrics g_j on R^(m+2k) (and on the
//! unit ball and sphere), and checks numerically the structural identities
//! that make those metrics isospectral: torus invariance, the bundle and
//! leaf isometries, totally geodesic fibers, the quotient identities behind
//! the intertwining maps, and the constancy of volume and total scalar
//! curvature.

pub mod ambient;
pub mod canonical;
pub mod curvature;
pub mod deform;
pub mod equivalence;
pub mod error;
pub mod form;
pub mod invariants;
pub mod jet;
pub mod jmap;
pub mod linalg;
pub mod pipeline;
pub mod sampling;
pub mod verify;

pub use error::{IsoError, Result};
pub use form::HomogeneousForm;
pub use jmap::JMap;
