//! Certified bounds on an L2-regularized linear classifier after a small set
//! of training instances is added or removed, without retraining it.
//!
//! The pipeline is: train a model ([`solver::train`]), describe the change
//! ([`data::UpdatePlan`]), summarize the modified instances
//! ([`bounds::compute_delta_s`]), build a [`bounds::SolutionBall`], and query
//! any linear score from it. [`loocv`] applies the same machinery to
//! leave-one-out cross-validation.

pub mod bounds;
pub mod data;
pub mod error;
pub mod loocv;
pub mod loss;
pub mod solver;
pub mod sparse;

pub use bounds::{
    compute_delta_s, gradient_ball, loocv_fold_bounds, naive_score_bounds, norm_change_bound,
    old_optimum_ball, BallKind, BoundMethod, Interval, Label, LabelDecision, ScoreBounds,
    SolutionBall, UpdateStats,
};
pub use data::{
    make_synthetic, parse_libsvm, split_for_update, write_libsvm, Instances, LeaveOneOut, RbfFeatureMap,
    SparseDataset, UpdatePlan,
};
pub use error::{Error, Result};
pub use loocv::{
    model_select, power_of_two_grid, run_loocv, run_loocv_with_model, CellResult, FoldDecision,
    FoldOutcome, GridCell, LoocvMode, LoocvOptions, LoocvResult, ModelSelection,
};
pub use loss::LossKind;
pub use solver::{incremental_train, train, SolveReport, SolverOptions, TrainedModel};
pub use sparse::SparseVector;
