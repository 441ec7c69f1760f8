//! Thin plate spline bases over a partition and lasso selection of knots.

mod lasso;
mod tps;

pub use lasso::{
    cross_validate, fold_assignment, kkt_violation, lambda_grid, lambda_max, lasso_path, lasso_path_fit,
    predict_eta, select_lambda, soft_threshold, weighted_lasso_cd, CvCurve, LassoFit, LassoOptions, LassoPath,
    LassoProblem, LassoSelection,
};
pub use tps::{candidate_knots, tps_design, tps_eval, tps_from_dist2};

use alloc::vec::Vec;

use crate::data::{Family, Location};
use crate::linalg::Matrix;
use crate::Result;

/// Candidate knots of a partition, their design over the partition's
/// observations and the subset the lasso kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub candidate_knots: Vec<Location>,
    /// Indices into `candidate_knots`, ascending.
    pub selected: Vec<usize>,
    /// `N_k x m` design over all candidates.
    pub design: Matrix,
}

impl BasisSet {
    pub fn selected_knots(&self) -> Vec<Location> {
        self.selected.iter().map(|&j| self.candidate_knots[j]).collect()
    }

    /// Raw design columns of the selected knots.
    pub fn selected_design(&self) -> Matrix {
        self.design.select_cols(&self.selected)
    }
}

/// Lay down candidate knots over `locations` and select among them with a
/// cross-validated lasso fit of `z` on `[x, Phi]`.
pub fn select_basis(
    locations: &[Location],
    x: &Matrix,
    z: &[f64],
    family: Family,
    m_target: usize,
    opts: &LassoOptions,
) -> Result<(BasisSet, LassoSelection)> {
    let knots = candidate_knots(locations, m_target);
    let design = tps_design(locations, &knots);
    let problem = LassoProblem { x, phi: &design, z, family };
    let selection = lasso_path_fit(&problem, opts)?;
    let selected = selection.fit.active_set.clone();
    Ok((BasisSet { candidate_knots: knots, selected, design }, selection))
}
