//! Supervised matrix factorization.
//!
//! A factorization `X ≈ WH` is fitted jointly with a multinomial classifier,
//! either on the codes `H` (feature-based, SMF-H) or on the filtered signals
//! `WᵀX` (filter-based, SMF-W). Training lifts the factors into one low-rank
//! matrix `θ` plus auxiliary coefficients `γ` and runs projected gradient
//! descent with a truncated-SVD rank projection ([`lpgd_train`]). A block
//! coordinate descent baseline ([`bcd_train`]), synthetic data generators,
//! conditioning diagnostics and evaluation tools are included.
//!
//! Everything is generic over the scalar type through [`Scalar`]; the
//! `*64`/`*32` aliases fix it to `f64`/`f32`.

pub mod bcd;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod lpgd;
pub mod model;
pub mod objective;
pub mod predict;
pub mod scalar;

pub use bcd::{bcd_train, bcd_train_with, BcdOptions};
pub use datagen::{condition_diagnostics, generate, semi_synthetic_mnist_like, ConditionReport, GenerativeSpec, GroundTruth};
pub use error::{Result, SmfError};
pub use linalg::Matrix;
pub use lpgd::{fit_contraction_rate, gradient_mapping, lpgd_train, train, IterTrace, LpgdResult, Optimizer};
pub use model::{lift, unlift, ConstraintSet, Dataset, FactoredModel, LiftedState, ScoreFunction, SmfVariant, SolverConfig};
pub use objective::{gradient, mnl_constants, objective_value, predictive_probs, MnlConstants};
pub use predict::{cross_validate, mf_lr_baseline, predict_feature_full, predict_feature_heuristic, predict_filter};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type FactoredModel64 = FactoredModel<f64>;
pub type FactoredModel32 = FactoredModel<f32>;
pub type LiftedState64 = LiftedState<f64>;
pub type LiftedState32 = LiftedState<f32>;
