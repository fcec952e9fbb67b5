//! Exact discrete laboratory for causally invariant domain shifts with
//! spurious associations.
//!
//! The crate covers the six-role causal graphs and their classification,
//! exact environment tables for the two-bit problems, tabular predictors,
//! invariant training objectives, and post-hoc audits.

pub mod audit;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod joint;
pub mod predictor;
pub mod theorems;
pub mod train;

pub use audit::{
    audit_predictor, cf_invariant, ci_signature, follows_invariant_rule, g_of_gamma, girm_membership, irm_membership,
    reweighted_joint, AuditConfig, AuditReport, CiDecision, CiSignature,
};
pub use envs::{
    check_purely_spurious, rad, two_bit_anticausal, two_bit_anticausal_pure, two_bit_confdesc, two_bit_confoutcome,
    DgpKind, EnvConfig, EnvParams, EnvironmentSet,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, Artifacts, ExperimentSpec, Method};
pub use graph::{
    classify_cisa, d_separated, enumerate_cisa_dags, verify_cisa_constraints, CausalDag, CisaSubtype, Role, RoleSet,
};
pub use joint::{Dataset, DiscreteJoint};
pub use predictor::{compose, LossKind, Representation, TabularPredictor};
pub use theorems::{audit_theorems, AuditCheck, TheoremAuditSpec};
pub use train::{
    di_penalty, irmv1_penalty, train_augmented_erm, train_consistency, train_erm, train_girmv1, train_irmv1, DiKind,
    Fit, Objective, Optimizer, TrainConfig, Transform, TransformSet,
};
