//! Step 1: split the domain into `K` contiguous subregions whose GLM
//! residual surfaces are internally homogeneous.
//!
//! Residuals are averaged onto a lattice, lattice points are linked through
//! their Voronoi neighbourhoods, and adjacent clusters are merged greedily by
//! a distance-scaled Ward criterion until `K` remain.

mod agglomerate;
mod delaunay;
mod lattice;

pub use agglomerate::{
    agglomerate, agglomerate_points, cluster_dissimilarity, mean_cross_distance, ClusterSummary, Partitioning,
};
pub use delaunay::{delaunay_triangles, voronoi_neighbors, Adjacency};
pub use lattice::{build_lattice, build_lattice_from, Lattice};

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Location;
use crate::{Error, Result};

/// Default lattice size.
pub const DEFAULT_LATTICE: usize = 900;

/// Everything Step 1 produces.
#[derive(Debug, Clone)]
pub struct DomainPartition {
    pub lattice: Lattice,
    pub adjacency: Adjacency,
    pub partitioning: Partitioning,
}

/// Lattice, adjacency and agglomeration in one call.
pub fn partition_domain(
    locations: &[Location],
    residuals: &[f64],
    l_target: usize,
    k: usize,
) -> Result<DomainPartition> {
    if k == 0 {
        return Err(Error::Argument("K must be at least 1".into()));
    }
    let lattice = build_lattice_from(locations, residuals, l_target)?;
    if k > lattice.len() {
        return Err(Error::Argument(alloc::format!(
            "K = {k} exceeds the {} occupied lattice cells",
            lattice.len()
        )));
    }
    let adjacency = if lattice.len() >= 3 {
        voronoi_neighbors(&lattice.points)?
    } else {
        Adjacency::chain(lattice.len())
    };
    let partitioning = if k == 1 {
        Partitioning {
            k: 1,
            labels: vec![0; locations.len()],
            lattice_labels: vec![0; lattice.len()],
            merges: Vec::new(),
        }
    } else {
        agglomerate(&lattice, &adjacency, k)?
    };
    Ok(DomainPartition { lattice, adjacency, partitioning })
}
