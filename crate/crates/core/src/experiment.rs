//! Config-driven experiment runs with reproducible artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{audit_predictor, AuditConfig, AuditReport, CF_TOL};
use crate::envs::{EnvConfig, X1, X2, Y};
use crate::error::{Error, Result};
use crate::train::{
    train_augmented_erm, train_consistency, train_erm, train_girmv1, train_irmv1, Fit, TrainConfig, TransformSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Erm,
    Irmv1,
    Girmv1,
    Consistency,
    Augmented,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Erm,
        Method::Irmv1,
        Method::Girmv1,
        Method::Consistency,
        Method::Augmented,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Irmv1 => "irmv1",
            Method::Girmv1 => "girmv1",
            Method::Consistency => "consistency",
            Method::Augmented => "augmented",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Transform group for the consistency and augmentation methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub transforms: Vec<String>,
    /// Augmentation weights; uniform when empty.
    pub transform_dist: Vec<f64>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            transforms: vec!["identity".into(), "flip_x2".into()],
            transform_dist: Vec::new(),
        }
    }
}

impl TransformConfig {
    pub fn set(&self) -> Result<TransformSet> {
        TransformSet::from_names(&self.transforms)
    }

    pub fn dist(&self) -> Vec<f64> {
        if self.transform_dist.is_empty() {
            vec![1.0 / self.transforms.len() as f64; self.transforms.len()]
        } else {
            self.transform_dist.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub cf_tolerance: f64,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection { cf_tolerance: CF_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub name: String,
    pub method: Method,
    /// Seed for the sampled sanity check.
    pub seed: u64,
    /// Size of a seeded sample from the test environment whose empirical
    /// accuracy is reported next to the exact one; 0 disables it.
    pub sample_size: usize,
    /// Where artifacts are written. Not part of the manifest, so a run can
    /// be reproduced into any directory.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub transforms: TransformConfig,
    pub audit: AuditSection,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            method: Method::Erm,
            seed: 0,
            sample_size: 0,
            output_dir: None,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            transforms: TransformConfig::default(),
            audit: AuditSection::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<ExperimentSpec> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fully resolved spec as TOML.
    pub fn to_manifest(&self) -> String {
        toml::to_string(self).expect("experiment spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub dgp: String,
    pub method: String,
    pub fit: FitSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_test_accuracy: Option<f64>,
    pub audit: AuditReport,
}

/// Rendered artifacts of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub predictor_csv: String,
    pub report_toml: String,
    pub summary_csv: String,
    pub manifest_toml: String,
}

impl Artifacts {
    pub const PREDICTOR: &'static str = "predictor.csv";
    pub const REPORT: &'static str = "report.toml";
    pub const SUMMARY: &'static str = "summary.csv";
    pub const MANIFEST: &'static str = "manifest.toml";

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in [
            (Self::PREDICTOR, &self.predictor_csv),
            (Self::REPORT, &self.report_toml),
            (Self::SUMMARY, &self.summary_csv),
            (Self::MANIFEST, &self.manifest_toml),
        ] {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub fit: Fit,
    pub report: ExperimentReport,
    pub artifacts: Artifacts,
}

pub const SUMMARY_PREFIX: &str = "name,dgp,method,loss";

pub fn summary_header() -> String {
    format!("{SUMMARY_PREFIX},{}", AuditReport::CSV_HEADER)
}

impl ExperimentReport {
    pub fn summary_row(&self, loss: &str) -> String {
        format!(
            "{},{},{},{loss},{}",
            self.name,
            self.dgp,
            self.method,
            self.audit.csv_row()
        )
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let set = spec.env.build()?;
    let cfg = &spec.train;
    let fit = match spec.method {
        Method::Erm => train_erm(&set.train, cfg)?,
        Method::Irmv1 => train_irmv1(&set.train, cfg)?,
        Method::Girmv1 => train_girmv1(&set.train, cfg)?,
        Method::Consistency => train_consistency(&set.train, &spec.transforms.set()?, cfg)?,
        Method::Augmented => train_augmented_erm(&set.train, &spec.transforms.set()?, &spec.transforms.dist(), cfg)?,
    };
    let audit_cfg = AuditConfig {
        loss: cfg.loss,
        reference_label_dist: cfg.reference_label_dist,
        cf_tolerance: spec.audit.cf_tolerance,
    };
    let audit = audit_predictor(&fit.predictor, &set, &audit_cfg)?;

    let sampled_test_accuracy = if spec.sample_size > 0 {
        let data = set.test.sample(spec.sample_size, spec.seed)?;
        let pos: Vec<usize> = [X1, X2, Y]
            .iter()
            .map(|v| set.test.position(v))
            .collect::<Result<_>>()?;
        let hits = data
            .rows
            .iter()
            .filter(|r| fit.predictor.predict(r[pos[0]], r[pos[1]]) == r[pos[2]])
            .count();
        Some(hits as f64 / data.len() as f64)
    } else {
        None
    };

    let report = ExperimentReport {
        name: spec.name.clone(),
        dgp: spec.env.dgp.name().into(),
        method: spec.method.name().into(),
        fit: FitSummary {
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
            objective: fit.objective,
        },
        sampled_test_accuracy,
        audit,
    };
    let mut summary_csv = summary_header();
    writeln!(summary_csv).unwrap();
    writeln!(summary_csv, "{}", report.summary_row(cfg.loss.name())).unwrap();
    let artifacts = Artifacts {
        predictor_csv: fit.predictor.to_csv(),
        report_toml: toml::to_string(&report).expect("report serializes"),
        summary_csv,
        manifest_toml: spec.to_manifest(),
    };
    Ok(ExperimentOutcome { fit, report, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::DgpKind;

    #[test]
    fn manifest_round_trips() {
        let spec = ExperimentSpec {
            method: Method::Girmv1,
            sample_size: 100,
            output_dir: Some("somewhere".into()),
            ..ExperimentSpec::default()
        };
        let back = ExperimentSpec::from_toml(&spec.to_manifest()).unwrap();
        assert_eq!(
            back,
            ExperimentSpec {
                output_dir: None,
                ..spec
            }
        );
    }

    #[test]
    fn partial_config_uses_defaults() {
        let spec =
            ExperimentSpec::from_toml("method = \"irmv1\"\n[env]\ndgp = \"confdesc\"\n[train]\nloss = \"squared\"\n")
                .unwrap();
        assert_eq!(spec.env.dgp, DgpKind::Confdesc);
        assert_eq!(spec.env.alpha, 0.25);
        assert_eq!(spec.train.penalty_weight, 1e4);
        assert!(ExperimentSpec::from_toml("method = \"dro\"\n").is_err());
        assert!(ExperimentSpec::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = ExperimentSpec {
            method: Method::Girmv1,
            sample_size: 500,
            ..ExperimentSpec::default()
        };
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.artifacts, b.artifacts);
        assert!(a.report.audit.cf_invariant);
        let rerun = run_experiment(&ExperimentSpec::from_toml(&a.artifacts.manifest_toml).unwrap()).unwrap();
        assert_eq!(rerun.artifacts, a.artifacts);
    }
}
