//! Post-hoc audits on exact environment tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvironmentSet, X1, X2, Y};
use crate::error::{Error, Result};
use crate::joint::DiscreteJoint;
use crate::predictor::{cell_table, LossKind, Representation, TabularPredictor};
use crate::train::{di_penalty, DiKind};

/// Deviations below this count as an exact independence.
pub const CI_HOLDS_TOL: f64 = 1e-9;
/// Deviations above this count as a clear failure.
pub const CI_FAILS_TOL: f64 = 1e-2;
/// Per-cell agreement tolerance for optimal heads.
pub const HEAD_TOL: f64 = 1e-6;
/// Default tolerance for counterfactual invariance of score tables.
pub const CF_TOL: f64 = 0.1;

/// `Q(x, y) = P(x, y) · P0(y) / P(y)`, with `p0 = (P0(+1), P0(−1))`.
pub fn reweighted_joint(env: &DiscreteJoint, p0: [f64; 2]) -> Result<DiscreteJoint> {
    if p0.iter().any(|p| p.is_nan() || *p < 0.0) || (p0[0] + p0[1] - 1.0).abs() > 1e-12 {
        return Err(Error::Reweighting(format!(
            "reference law {p0:?} is not a distribution"
        )));
    }
    let py = [env.prob(&[(Y, 1)])?, env.prob(&[(Y, -1)])?];
    for i in 0..2 {
        if p0[i] > 0.0 && py[i] <= 0.0 {
            let y = if i == 0 { "+1" } else { "-1" };
            return Err(Error::Reweighting(format!(
                "label {y} has zero mass in the environment"
            )));
        }
    }
    let pos = env.position(Y)?;
    env.reweighted(|v| {
        let i = usize::from(v[pos] == -1);
        if p0[i] == 0.0 {
            0.0
        } else {
            p0[i] / py[i]
        }
    })
}

/// Whether `f` ignores the spurious feature: `|f(x, +1) − f(x, −1)| < tol`
/// with the invariant coordinate held fixed.
pub fn cf_invariant(f: &TabularPredictor, set: &EnvironmentSet, tol: f64) -> Result<bool> {
    let attr = set.attribution()?;
    let flips_x2 = match (attr.invariant_feature.as_str(), attr.spurious_feature.as_str()) {
        (X1, X2) => true,
        (X2, X1) => false,
        (a, b) => {
            return Err(Error::Config(format!(
                "unsupported attribution: invariant `{a}`, spurious `{b}`"
            )))
        }
    };
    Ok([1i8, -1].iter().all(|&a| {
        let (p, q) = if flips_x2 {
            (f.score(a, 1), f.score(a, -1))
        } else {
            (f.score(1, a), f.score(-1, a))
        };
        (p - q).abs() < tol
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiDecision {
    Holds,
    Fails,
    /// Between the two tolerances.
    Indeterminate,
}

impl CiDecision {
    pub fn from_deviation(dev: f64) -> CiDecision {
        if dev < CI_HOLDS_TOL {
            CiDecision::Holds
        } else if dev > CI_FAILS_TOL {
            CiDecision::Fails
        } else {
            CiDecision::Indeterminate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiEntry {
    pub deviation: f64,
    pub decision: CiDecision,
    pub partial_support: bool,
}

/// The three invariance tests for `φ = X_z^⊥`, over every environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSignature {
    pub entries: BTreeMap<DiKind, CiEntry>,
}

impl CiSignature {
    pub fn holds(&self, kind: DiKind) -> bool {
        self.entries[&kind].decision == CiDecision::Holds
    }

    pub fn fails(&self, kind: DiKind) -> bool {
        self.entries[&kind].decision == CiDecision::Fails
    }

    pub fn deviation(&self, kind: DiKind) -> f64 {
        self.entries[&kind].deviation
    }
}

fn invariant_representation(set: &EnvironmentSet) -> Result<Representation> {
    match set.attribution()?.invariant_feature.as_str() {
        X1 => Ok(Representation::x1()),
        X2 => Ok(Representation::x2()),
        other => Err(Error::Config(format!("unknown invariant feature `{other}`"))),
    }
}

pub fn ci_signature(set: &EnvironmentSet) -> Result<CiSignature> {
    let phi = invariant_representation(set)?;
    let envs: Vec<DiscreteJoint> = set.observed_joints().into_iter().cloned().collect();
    let mut entries = BTreeMap::new();
    for kind in DiKind::ALL {
        let d = di_penalty(&phi, &envs, kind)?;
        entries.insert(
            kind,
            CiEntry {
                deviation: d.value,
                decision: CiDecision::from_deviation(d.value),
                partial_support: d.partial_support,
            },
        );
    }
    Ok(CiSignature { entries })
}

/// Optimal per-cell heads for each environment and their agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// `heads[e][code]`; cells with zero mass are absent.
    pub heads: Vec<BTreeMap<i32, f64>>,
    /// Codes with zero mass in some environment, excluded from comparison.
    pub empty_cells: Vec<i32>,
}

fn optimal_head(p_pos: f64, p_neg: f64, loss: LossKind) -> f64 {
    match loss {
        LossKind::Squared => (p_pos - p_neg) / (p_pos + p_neg),
        LossKind::Logistic => {
            if p_neg == 0.0 {
                f64::INFINITY
            } else if p_pos == 0.0 {
                f64::NEG_INFINITY
            } else {
                (p_pos / p_neg).ln()
            }
        }
    }
}

fn heads_agree(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        a == b
    } else {
        (a - b).abs() <= HEAD_TOL
    }
}

pub fn irm_membership(phi: &Representation, envs: &[DiscreteJoint], loss: LossKind) -> Result<Membership> {
    if envs.len() < 2 {
        return Err(Error::Config("membership needs at least two environments".into()));
    }
    let codes = phi.image();
    let mut heads = Vec::with_capacity(envs.len());
    for env in envs {
        let t = cell_table(env)?;
        let mut h = BTreeMap::new();
        for &code in &codes {
            let (p, n) = phi
                .preimage(code)
                .fold((0.0, 0.0), |(p, n), c| (p + t[c][0], n + t[c][1]));
            if p + n > 0.0 {
                h.insert(code, optimal_head(p, n, loss));
            }
        }
        heads.push(h);
    }
    let mut member = true;
    let mut empty_cells = Vec::new();
    for &code in &codes {
        let vals: Vec<f64> = heads.iter().filter_map(|h| h.get(&code).copied()).collect();
        if vals.len() < heads.len() {
            empty_cells.push(code);
            continue;
        }
        if !vals.iter().all(|v| heads_agree(*v, vals[0])) {
            member = false;
        }
    }
    Ok(Membership {
        member,
        heads,
        empty_cells,
    })
}

pub fn girm_membership(
    phi: &Representation,
    envs: &[DiscreteJoint],
    loss: LossKind,
    p0: [f64; 2],
) -> Result<Membership> {
    let q = envs
        .iter()
        .map(|e| reweighted_joint(e, p0))
        .collect::<Result<Vec<_>>>()?;
    irm_membership(phi, &q, loss)
}

/// Closed-form `Q(X1 = Y)` for the confounded-descendant generator after
/// reweighting to a uniform label law.
pub fn g_of_gamma(gamma: f64, alpha: f64) -> Result<f64> {
    for (n, v) in [("gamma", gamma), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{n} = {v} is not a probability")));
        }
    }
    let m = gamma * (1.0 - alpha) + (1.0 - gamma) * alpha;
    if m <= 0.0 || m >= 1.0 {
        return Err(Error::Degenerate(format!(
            "P(Y = -1) = {m} at gamma = {gamma}, alpha = {alpha}"
        )));
    }
    Ok(0.5 * (1.0 - alpha) * (gamma / m + (1.0 - gamma) / (1.0 - m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub accuracy: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub loss: LossKind,
    pub reference_label_dist: [f64; 2],
    pub cf_tolerance: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            loss: LossKind::Logistic,
            reference_label_dist: [0.5, 0.5],
            cf_tolerance: CF_TOL,
        }
    }
}

/// Audit of a trained predictor. Distributional and membership checks are
/// for the induced representation `sign ∘ f` on the training environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub scores: [f64; 4],
    pub cf_invariant: bool,
    pub trivial: bool,
    pub invariant_rule: bool,
    pub di_deviations: BTreeMap<String, f64>,
    pub di_partial_support: bool,
    pub irm_member: bool,
    pub girm_member: bool,
    pub train: Vec<EnvMetrics>,
    pub test: EnvMetrics,
}

impl AuditReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("audit report serializes")
    }

    pub const CSV_HEADER: &'static str =
        "cf_invariant,trivial,invariant_rule,di_marginal,di_conditional,di_sufficiency,irm_member,girm_member,test_accuracy,test_risk";

    /// One summary row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{}", self.cf_invariant, self.trivial, self.invariant_rule);
        for k in DiKind::ALL {
            write!(row, ",{}", self.di_deviations[k.name()]).unwrap();
        }
        write!(
            row,
            ",{},{},{},{}",
            self.irm_member, self.girm_member, self.test.accuracy, self.test.risk
        )
        .unwrap();
        row
    }
}

/// Whether `f` implements the rule `sign(x1)`: positive scores when
/// `x1 = +1` and negative when `x1 = −1`. Both inequalities are strict, so a
/// zero score never counts as optimal even though it predicts +1.
pub fn follows_invariant_rule(f: &TabularPredictor) -> bool {
    let s = f.scores();
    s[0] > 0.0 && s[1] > 0.0 && s[2] < 0.0 && s[3] < 0.0
}

pub fn audit_predictor(f: &TabularPredictor, set: &EnvironmentSet, cfg: &AuditConfig) -> Result<AuditReport> {
    let phi = Representation::sign_of(f);
    let mut di_deviations = BTreeMap::new();
    let mut di_partial_support = false;
    for kind in DiKind::ALL {
        let d = di_penalty(&phi, &set.train, kind)?;
        di_partial_support |= d.partial_support;
        di_deviations.insert(kind.name().to_string(), d.value);
    }
    let metrics = |env: &DiscreteJoint| -> Result<EnvMetrics> {
        Ok(EnvMetrics {
            accuracy: f.accuracy(env)?,
            risk: f.risk(env, cfg.loss, None)?,
        })
    };
    Ok(AuditReport {
        scores: f.scores(),
        cf_invariant: cf_invariant(f, set, cfg.cf_tolerance)?,
        trivial: f.is_trivial(),
        invariant_rule: follows_invariant_rule(f),
        di_deviations,
        di_partial_support,
        irm_member: irm_membership(&phi, &set.train, cfg.loss)?.member,
        girm_member: girm_membership(&phi, &set.train, cfg.loss, cfg.reference_label_dist)?.member,
        train: set.train.iter().map(metrics).collect::<Result<_>>()?,
        test: metrics(&set.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{two_bit_anticausal, two_bit_confdesc, two_bit_confoutcome, EnvConfig, EnvParams};

    fn defaults(f: fn(&[EnvParams], &EnvParams) -> Result<EnvironmentSet>) -> EnvironmentSet {
        let c = EnvConfig::default();
        f(&c.train_params().unwrap(), &c.test_params().unwrap()).unwrap()
    }

    #[test]
    fn invariant_rule_is_strict_on_both_sides() {
        let rule = |s| follows_invariant_rule(&TabularPredictor::new(s).unwrap());
        assert!(rule([1.0, 0.5, -0.5, -1.0]));
        // A zero score predicts +1 but sits on the boundary.
        assert!(!rule([1.0, 0.0, -0.5, -1.0]));
        assert!(!rule([1.0, 0.5, 0.0, -1.0]));
        assert!(!rule([1.0, 0.5, -0.5, 0.2]));
    }

    #[test]
    fn reweighting_examples() {
        let desc = defaults(two_bit_confdesc);
        let q = reweighted_joint(&desc.train[0], [0.5, 0.5]).unwrap();
        assert!((q.prob(&[(Y, -1)]).unwrap() - 0.5).abs() < 1e-15);

        let anti = defaults(two_bit_anticausal);
        for env in &anti.train {
            let q = reweighted_joint(env, [0.5, 0.5]).unwrap();
            assert!((q.prob_where(|v| v[0] == v[2]) - 0.75).abs() < 1e-12);
        }
        let balanced = &anti.test;
        let q = reweighted_joint(balanced, [0.5, 0.5]).unwrap();
        assert!(q.max_abs_diff(balanced).unwrap() < 1e-15);

        let p = EnvParams::new(0.25, 0.1, 0.0).unwrap();
        let degenerate = two_bit_anticausal(&[p], &p).unwrap();
        assert!(matches!(
            reweighted_joint(&degenerate.train[0], [0.5, 0.5]),
            Err(Error::Reweighting(_))
        ));
    }

    #[test]
    fn cf_invariance_examples() {
        let set = defaults(two_bit_anticausal);
        let girm = TabularPredictor::new([1.16, 1.08, -1.11, -1.03]).unwrap();
        let irm = TabularPredictor::new([2.53, -0.93, -0.08, -3.19]).unwrap();
        assert!(cf_invariant(&girm, &set, 0.1).unwrap());
        assert!(!cf_invariant(&irm, &set, 0.1).unwrap());
        assert!(cf_invariant(&TabularPredictor::constant(0.4).unwrap(), &set, 0.1).unwrap());
        let bare = EnvironmentSet::observed_only(set.subtype, set.train.clone(), set.test.clone());
        assert!(matches!(cf_invariant(&girm, &bare, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn signatures_at_default_parameters() {
        let cases = [
            (defaults(two_bit_anticausal), DiKind::Conditional),
            (defaults(two_bit_confoutcome), DiKind::Marginal),
            (defaults(two_bit_confdesc), DiKind::Sufficiency),
        ];
        for (set, expected) in cases {
            let sig = ci_signature(&set).unwrap();
            for kind in DiKind::ALL {
                if kind == expected {
                    assert!(sig.holds(kind), "{:?} {kind:?}", set.subtype);
                } else {
                    assert!(sig.fails(kind), "{:?} {kind:?}", set.subtype);
                }
            }
        }
    }

    #[test]
    fn membership_examples() {
        let anti = defaults(two_bit_anticausal);
        let desc = defaults(two_bit_confdesc);
        let x1 = Representation::x1();
        for loss in [LossKind::Logistic, LossKind::Squared] {
            assert!(!irm_membership(&x1, &anti.train, loss).unwrap().member);
            assert!(girm_membership(&x1, &anti.train, loss, [0.5, 0.5]).unwrap().member);
            assert!(irm_membership(&x1, &desc.train, loss).unwrap().member);
            for set in [&anti, &desc] {
                let k = Representation::constant();
                assert!(girm_membership(&k, &set.train, loss, [0.5, 0.5]).unwrap().member);
            }
        }
    }

    #[test]
    fn logistic_heads_handle_pure_cells() {
        let p = EnvParams::new(0.0, 0.1, 0.3).unwrap();
        let set = two_bit_anticausal(&[p, p], &p).unwrap();
        let m = irm_membership(&Representation::x1(), &set.train, LossKind::Logistic).unwrap();
        assert!(m.member);
        assert_eq!(m.heads[0][&1], f64::INFINITY);
        assert_eq!(m.heads[0][&-1], f64::NEG_INFINITY);
    }

    #[test]
    fn g_reference_values() {
        assert!((g_of_gamma(0.5, 0.25).unwrap() - 0.75).abs() < 1e-15);
        assert!((g_of_gamma(0.0, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((g_of_gamma(1.0, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((g_of_gamma(0.9, 0.25).unwrap() - 0.607_142_857_142_857).abs() < 1e-12);
        assert!((g_of_gamma(0.7, 0.25).unwrap() - 0.71875).abs() < 1e-12);
        assert!(matches!(g_of_gamma(0.0, 0.0), Err(Error::Degenerate(_))));
        assert!(matches!(g_of_gamma(1.2, 0.25), Err(Error::Domain(_))));
    }

    #[test]
    fn report_round_trips_through_toml() {
        let set = defaults(two_bit_anticausal);
        let f = TabularPredictor::new([1.1, 1.05, -1.05, -1.1]).unwrap();
        let r = audit_predictor(&f, &set, &AuditConfig::default()).unwrap();
        assert!(r.cf_invariant && r.girm_member && !r.irm_member);
        assert!((r.test.accuracy - 0.75).abs() < 1e-12);
        let back: AuditReport = toml::from_str(&r.to_toml()).unwrap();
        assert_eq!(back, r);
        assert_eq!(
            r.csv_row().split(',').count(),
            AuditReport::CSV_HEADER.split(',').count()
        );
    }
}
