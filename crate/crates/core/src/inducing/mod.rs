//! Inducing scheme over the tangency region: the rectangle `R`, the curve
//! families `alpha`, the tower `Theta_k`, slow-recurrence sets and the
//! first-return branches on the tangency leaf.

pub mod alpha;
pub mod branches;
pub mod geometry;
pub mod leaf;
pub mod region;

pub use alpha::{build_alpha, build_theta, partition_curve, AlphaFamily, Partition, Piece, ThetaLevel, ThetaTower};
pub use branches::{
    branch_census, first_return_branches, hyperbolicity_audit, omega_sets, Census, HyperbolicityAudit, ImageTag, InducedSystem, OmegaSets,
    ReturnBranch,
};
pub use geometry::{Cylinder, Depth, Horizontal, Param, Polyline, Side, Subdivision, Symbol, TangencyGeometry, DEPTH_CAP};
pub use leaf::Leaf;
pub use region::{build_region, RegionR};
