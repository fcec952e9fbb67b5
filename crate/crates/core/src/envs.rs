//! Exact environment sets for the two-bit domain shift problems.
//!
//! Each environment is produced by enumerating a small structural model whose
//! exogenous inputs are independent random signs. The latent-augmented joint
//! (confounder bits, spurious factor `Z`, features, label) is kept next to the
//! observed `(X1, X2, Y)` joint.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CisaSubtype;
use crate::joint::DiscreteJoint;

pub const X1: &str = "X1";
pub const X2: &str = "X2";
pub const Y: &str = "Y";
pub const Z: &str = "Z";

/// Tolerance for the exact purely-spurious check.
pub const PURELY_SPURIOUS_TOL: f64 = 1e-12;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} is not a probability")))
    }
}

/// Random sign: `-1` with probability `p_minus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rad {
    p_minus: f64,
}

impl Rad {
    pub fn prob(&self, v: i8) -> f64 {
        if v == -1 {
            self.p_minus
        } else {
            1.0 - self.p_minus
        }
    }
}

pub fn rad(pi: f64) -> Result<Rad> {
    check_prob("pi", pi)?;
    Ok(Rad { p_minus: pi })
}

/// Per-environment parameters: `alpha` for the invariant mechanism, `beta`
/// for the spurious flip, `gamma` for the skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EnvParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<EnvParams> {
        let p = EnvParams { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("alpha", self.alpha)?;
        check_prob("beta", self.beta)?;
        check_prob("gamma", self.gamma)
    }
}

type Equation = Box<dyn Fn(&dyn Fn(&str) -> i8) -> i8 + Send + Sync>;

/// A structural model over ±1 variables, enumerated exactly.
///
/// Exogenous sources are independent `Rad(p)` draws; endogenous variables are
/// deterministic functions of earlier variables.
#[derive(Default)]
pub struct StructuralModel {
    sources: Vec<(String, f64)>,
    equations: Vec<(String, Equation)>,
}

impl StructuralModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn source(mut self, name: &str, p_minus: f64) -> Result<Self> {
        check_prob(name, p_minus)?;
        self.sources.push((name.to_string(), p_minus));
        Ok(self)
    }

    pub fn assign<F>(mut self, name: &str, f: F) -> Self
    where
        F: Fn(&dyn Fn(&str) -> i8) -> i8 + Send + Sync + 'static,
    {
        self.equations.push((name.to_string(), Box::new(f)));
        self
    }

    /// Joint over `vars`, which may name sources or endogenous variables.
    pub fn joint(&self, vars: &[&str]) -> Result<DiscreteJoint> {
        let k = self.sources.len();
        let n = vars.len();
        let mut probs = vec![0.0; 1 << n];
        for draw in 0..1usize << k {
            let mut values: HashMap<&str, i8> = HashMap::new();
            let mut weight = 1.0;
            for (i, (name, p)) in self.sources.iter().enumerate() {
                let v = if (draw >> i) & 1 == 1 { -1 } else { 1 };
                weight *= if v == -1 { *p } else { 1.0 - *p };
                values.insert(name.as_str(), v);
            }
            if weight == 0.0 {
                continue;
            }
            for (name, eq) in &self.equations {
                let lookup = |v: &str| -> i8 {
                    *values
                        .get(v)
                        .unwrap_or_else(|| panic!("equation for `{name}` reads undefined `{v}`"))
                };
                let value = eq(&lookup);
                values.insert(name.as_str(), value);
            }
            let mut idx = 0usize;
            for v in vars {
                let value = *values
                    .get(v)
                    .ok_or_else(|| Error::Config(format!("model has no variable `{v}`")))?;
                idx = (idx << 1) | usize::from(value == -1);
            }
            probs[idx] += weight;
        }
        DiscreteJoint::new(vars.iter().map(|s| s.to_string()).collect(), probs)
    }
}

/// Which variables play which latent role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    /// Observed coordinate measurable w.r.t. `X_z^⊥`.
    pub invariant_feature: String,
    /// Observed coordinate affected by `Z`.
    pub spurious_feature: String,
    pub spurious_factor: String,
    pub confounders: Vec<String>,
}

impl Attribution {
    fn two_bit(confounders: &[&str]) -> Attribution {
        Attribution {
            invariant_feature: X1.into(),
            spurious_feature: X2.into(),
            spurious_factor: Z.into(),
            confounders: confounders.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Training environments, a test environment, and their latent joints.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSet {
    pub subtype: CisaSubtype,
    pub train: Vec<DiscreteJoint>,
    pub test: DiscreteJoint,
    pub latent_train: Vec<DiscreteJoint>,
    pub latent_test: Option<DiscreteJoint>,
    pub attribution: Option<Attribution>,
}

impl EnvironmentSet {
    /// Builds a set from one structural model per environment.
    pub fn from_models(
        subtype: CisaSubtype,
        attribution: Attribution,
        train: &[StructuralModel],
        test: &StructuralModel,
    ) -> Result<EnvironmentSet> {
        if train.is_empty() {
            return Err(Error::Config("at least one training environment required".into()));
        }
        let mut latent_vars: Vec<&str> = attribution.confounders.iter().map(String::as_str).collect();
        latent_vars.extend([attribution.spurious_factor.as_str(), X1, X2, Y]);
        let observed = |m: &StructuralModel| m.joint(&[X1, X2, Y]);
        let latent = |m: &StructuralModel| m.joint(&latent_vars);
        Ok(EnvironmentSet {
            subtype,
            train: train.iter().map(observed).collect::<Result<_>>()?,
            test: observed(test)?,
            latent_train: train.iter().map(latent).collect::<Result<_>>()?,
            latent_test: Some(latent(test)?),
            attribution: Some(attribution),
        })
    }

    /// Observed-only set with no latent information.
    pub fn observed_only(subtype: CisaSubtype, train: Vec<DiscreteJoint>, test: DiscreteJoint) -> Self {
        EnvironmentSet {
            subtype,
            train,
            test,
            latent_train: Vec::new(),
            latent_test: None,
            attribution: None,
        }
    }

    pub fn attribution(&self) -> Result<&Attribution> {
        self.attribution
            .as_ref()
            .ok_or_else(|| Error::Config("environment set carries no latent attribution".into()))
    }

    /// Latent joints of all environments, training first.
    pub fn latent_joints(&self) -> Result<Vec<&DiscreteJoint>> {
        let test = self
            .latent_test
            .as_ref()
            .ok_or_else(|| Error::Config("environment set carries no latent joints".into()))?;
        Ok(self.latent_train.iter().chain(std::iter::once(test)).collect())
    }

    /// Observed joints of all environments, training first.
    pub fn observed_joints(&self) -> Vec<&DiscreteJoint> {
        self.train.iter().chain(std::iter::once(&self.test)).collect()
    }
}

fn shared_alpha(train: &[EnvParams], test: &EnvParams) -> Result<f64> {
    for p in train.iter().chain(std::iter::once(test)) {
        p.validate()?;
    }
    let alpha = test.alpha;
    if train.iter().any(|p| p.alpha != alpha) {
        return Err(Error::Config(
            "alpha parameterizes the shared invariant mechanism and must match across environments".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::Config("at least one training environment required".into()));
    }
    Ok(alpha)
}

fn anticausal_model(p: &EnvParams) -> Result<StructuralModel> {
    Ok(StructuralModel::new()
        .source("U1", p.gamma)?
        .source("U2", p.beta)?
        .source("N", p.alpha)?
        .assign(Y, |v| v("U1"))
        .assign(Z, |v| v("U2"))
        .assign(X1, |v| v(Y) * v("N"))
        .assign(X2, |v| v(Y) * v(Z)))
}

fn anticausal_pure_model(p: &EnvParams) -> Result<StructuralModel> {
    Ok(StructuralModel::new()
        .source("U1", p.gamma)?
        .source("U2", p.beta)?
        .source("N", p.alpha)?
        .assign(Y, |v| v("U1"))
        .assign(Z, |v| v(Y) * v("U2"))
        .assign(X1, |v| v(Y) * v("N"))
        .assign(X2, |v| v(Z)))
}

fn confdesc_model(p: &EnvParams) -> Result<StructuralModel> {
    Ok(StructuralModel::new()
        .source("U1", p.gamma)?
        .source("U2", p.beta)?
        .source("N", p.alpha)?
        .assign(X1, |v| v("U1"))
        .assign(Y, |v| v(X1) * v("N"))
        .assign(Z, |v| v("U2"))
        .assign(X2, |v| v(Y) * v(Z)))
}

fn confoutcome_model(p: &EnvParams) -> Result<StructuralModel> {
    Ok(StructuralModel::new()
        .source("U", p.gamma)?
        .source("N0", 0.5)?
        .source("N", p.alpha)?
        .assign(X1, |v| v("N0"))
        .assign(Y, |v| v(X1) * v("U") * v("N"))
        .assign(Z, |v| v("U"))
        .assign(X2, |v| v(Z)))
}

fn build(
    subtype: CisaSubtype,
    confounders: &[&str],
    model: fn(&EnvParams) -> Result<StructuralModel>,
    train: &[EnvParams],
    test: &EnvParams,
) -> Result<EnvironmentSet> {
    shared_alpha(train, test)?;
    let train_models = train.iter().map(model).collect::<Result<Vec<_>>>()?;
    EnvironmentSet::from_models(subtype, Attribution::two_bit(confounders), &train_models, &model(test)?)
}

/// `Y ← Rad(γ)`, `X1 ← Y·Rad(α)`, `X2 ← Y·Z` with `Z ← Rad(β)` the
/// multiplicative flip. Confounder bits `U1 → Y`, `U2 → Z`.
pub fn two_bit_anticausal(train: &[EnvParams], test: &EnvParams) -> Result<EnvironmentSet> {
    build(CisaSubtype::AntiCausal, &["U1", "U2"], anticausal_model, train, test)
}

/// Observationally identical to [`two_bit_anticausal`] but with
/// `Z ← Y·Rad(β)` and `X2 ← Z`, which makes `Z` purely spurious.
pub fn two_bit_anticausal_pure(train: &[EnvParams], test: &EnvParams) -> Result<EnvironmentSet> {
    build(
        CisaSubtype::AntiCausal,
        &["U1", "U2"],
        anticausal_pure_model,
        train,
        test,
    )
}

/// `X1 ← Rad(γ)`, `Y ← X1·Rad(α)`, `X2 ← Y·Z` with `Z ← Rad(β)`.
pub fn two_bit_confdesc(train: &[EnvParams], test: &EnvParams) -> Result<EnvironmentSet> {
    build(CisaSubtype::ConfDescendant, &["U1", "U2"], confdesc_model, train, test)
}

/// `X1 ← Rad(0.5)`, `U ← Rad(γ)`, `Y ← X1·U·Rad(α)`, `Z ← U`, `X2 ← Z`.
/// `beta` is unused.
pub fn two_bit_confoutcome(train: &[EnvParams], test: &EnvParams) -> Result<EnvironmentSet> {
    build(CisaSubtype::ConfOutcome, &["U"], confoutcome_model, train, test)
}

/// Whether `Y ⟂ X | X_z^⊥, Z` holds in every environment, exactly.
pub fn check_purely_spurious(set: &EnvironmentSet) -> Result<bool> {
    let attr = set.attribution()?;
    let inv = attr.invariant_feature.as_str();
    let spur = attr.spurious_feature.as_str();
    let z = attr.spurious_factor.as_str();
    for joint in set.latent_joints()? {
        let table = joint.marginal(&[inv, z, spur, Y])?;
        for a in [1i8, -1] {
            for zv in [1i8, -1] {
                let base_mass = table.prob(&[(inv, a), (z, zv)])?;
                if base_mass <= 0.0 {
                    continue;
                }
                let base = table.prob(&[(inv, a), (z, zv), (Y, 1)])? / base_mass;
                for b in [1i8, -1] {
                    let mass = table.prob(&[(inv, a), (z, zv), (spur, b)])?;
                    if mass <= 0.0 {
                        continue;
                    }
                    let p = table.prob(&[(inv, a), (z, zv), (spur, b), (Y, 1)])? / mass;
                    if (p - base).abs() > PURELY_SPURIOUS_TOL {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Anticausal,
    /// Purely spurious variant of the anti-causal generator.
    AnticausalPure,
    Confdesc,
    Confoutcome,
}

impl DgpKind {
    pub fn name(self) -> &'static str {
        match self {
            DgpKind::Anticausal => "anticausal",
            DgpKind::AnticausalPure => "anticausal_pure",
            DgpKind::Confdesc => "confdesc",
            DgpKind::Confoutcome => "confoutcome",
        }
    }
}

impl std::str::FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<DgpKind> {
        match s {
            "anticausal" => Ok(DgpKind::Anticausal),
            "anticausal_pure" => Ok(DgpKind::AnticausalPure),
            "confdesc" => Ok(DgpKind::Confdesc),
            "confoutcome" => Ok(DgpKind::Confoutcome),
            other => Err(Error::Config(format!("unknown dgp `{other}`"))),
        }
    }
}

/// Environment-set configuration. Defaults are the two-bit experiment
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dgp: DgpKind,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta_test: f64,
    pub gamma_test: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dgp: DgpKind::Anticausal,
            alpha: 0.25,
            beta: vec![0.1, 0.2, 0.15, 0.05],
            gamma: vec![0.9, 0.1, 0.7, 0.3],
            beta_test: 0.9,
            gamma_test: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn with_dgp(dgp: DgpKind) -> Self {
        EnvConfig {
            dgp,
            ..EnvConfig::default()
        }
    }

    pub fn train_params(&self) -> Result<Vec<EnvParams>> {
        if self.beta.len() != self.gamma.len() {
            return Err(Error::Config(format!(
                "beta has {} entries but gamma has {}",
                self.beta.len(),
                self.gamma.len()
            )));
        }
        self.beta
            .iter()
            .zip(&self.gamma)
            .map(|(&b, &g)| EnvParams::new(self.alpha, b, g))
            .collect()
    }

    pub fn test_params(&self) -> Result<EnvParams> {
        EnvParams::new(self.alpha, self.beta_test, self.gamma_test)
    }

    pub fn build(&self) -> Result<EnvironmentSet> {
        let train = self.train_params()?;
        let test = self.test_params()?;
        match self.dgp {
            DgpKind::Anticausal => two_bit_anticausal(&train, &test),
            DgpKind::AnticausalPure => two_bit_anticausal_pure(&train, &test),
            DgpKind::Confdesc => two_bit_confdesc(&train, &test),
            DgpKind::Confoutcome => two_bit_confoutcome(&train, &test),
        }
    }
}
