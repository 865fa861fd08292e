//! Simultaneous confidence bands for band-limited regression functions
//! under symmetric or exchangeable noise, with no further distributional
//! assumptions.
//!
//! The pipeline has three stages. A perturbation rank test yields an
//! ellipsoid of ideal kernel coefficients ([`ellipsoid`]). That ellipsoid
//! bounds the squared norm of the truth ([`normbound`]). Norm bound and
//! ellipsoid then give pointwise intervals on a grid ([`band`]).

// negated float comparisons are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod cli;
pub mod config;
pub mod ellipsoid;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod lmi;
pub mod normbound;
pub mod perturbation;
pub mod quadratic;
pub mod svg;

pub use band::{build_band, Band, Constraint, Interval, PointStatus};
pub use ellipsoid::{outer_ellipsoid, Ellipsoid, SdpCertificate};
pub use error::{Error, Result};
pub use harness::{
    analyze, run_pipeline, run_reliability_campaign, Dataset, ExperimentConfig, NoiseModel, PerturbScope, TrueFunction,
};
pub use kernel::KernelParams;
pub use normbound::{Method, NormBound, RiskBudget};
pub use perturbation::GroupKind;
