//! Exact-expectation training of tabular predictors.
//!
//! Every objective is a smooth function of the four scores, so both the
//! gradient and the Hessian are available in closed form. The penalized
//! objective is divided by `max(1, λ)` so that step sizes stay meaningful
//! when the penalty weight is large.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audit::reweighted_joint;
use crate::error::{Error, Result};
use crate::joint::DiscreteJoint;
use crate::predictor::{cell_table, CellTable, LossKind, Representation, TabularPredictor, CELLS, LABELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Damped Newton with Armijo backtracking.
    #[default]
    Newton,
    /// Fixed-step full-batch gradient descent.
    GradientDescent,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Optimizer> {
        match s {
            "newton" => Ok(Optimizer::Newton),
            "gradient_descent" | "gd" => Ok(Optimizer::GradientDescent),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: Optimizer,
    /// Step size for gradient descent.
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub penalty_weight: f64,
    /// Length of the `λ = 1` warm-up phase. The phase ends early once its
    /// objective has converged.
    pub penalty_anneal_iters: usize,
    pub init: [f64; 4],
    /// Reference label law `(P0(+1), P0(−1))`.
    pub reference_label_dist: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Logistic,
            optimizer: Optimizer::Newton,
            learning_rate: 0.1,
            max_iters: 50_000,
            grad_tolerance: 1e-8,
            penalty_weight: 1e4,
            penalty_anneal_iters: 100,
            init: [0.0; 4],
            reference_label_dist: [0.5, 0.5],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance <= 0.0 {
            return bad("grad_tolerance must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be finite and non-negative");
        }
        if self.init.iter().any(|v| !v.is_finite()) {
            return bad("init scores must be finite");
        }
        let p0 = self.reference_label_dist;
        if p0.iter().any(|p| p.is_nan() || *p <= 0.0) || (p0[0] + p0[1] - 1.0).abs() > 1e-12 {
            return bad("reference_label_dist must be strictly positive and sum to 1");
        }
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub predictor: TabularPredictor,
    pub iterations: usize,
    /// Gradient norm of the final (scaled) objective.
    pub grad_norm: f64,
    /// Final objective value, unscaled.
    pub objective: f64,
}

/// A map of the domain onto itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transform {
    name: &'static str,
    image: [usize; 4],
}

impl Transform {
    /// Builds a transform from a function on `{−1,+1}²`.
    pub fn from_fn<F: Fn(i8, i8) -> (i8, i8)>(name: &'static str, f: F) -> Result<Transform> {
        let mut image = [0; 4];
        for (c, &(a, b)) in CELLS.iter().enumerate() {
            let (u, v) = f(a, b);
            if ![u, v].iter().all(|s| *s == 1 || *s == -1) {
                return Err(Error::Config(format!(
                    "transform `{name}` maps ({a},{b}) outside the domain"
                )));
            }
            image[c] = crate::predictor::cell_index(u, v);
        }
        Ok(Transform { name, image })
    }

    pub fn identity() -> Transform {
        Transform {
            name: "identity",
            image: [0, 1, 2, 3],
        }
    }

    pub fn flip_x1() -> Transform {
        Transform {
            name: "flip_x1",
            image: [2, 3, 0, 1],
        }
    }

    pub fn flip_x2() -> Transform {
        Transform {
            name: "flip_x2",
            image: [1, 0, 3, 2],
        }
    }

    pub fn flip_both() -> Transform {
        Transform {
            name: "flip_both",
            image: [3, 2, 1, 0],
        }
    }

    pub fn by_name(name: &str) -> Result<Transform> {
        match name {
            "identity" => Ok(Transform::identity()),
            "flip_x1" => Ok(Transform::flip_x1()),
            "flip_x2" => Ok(Transform::flip_x2()),
            "flip_both" => Ok(Transform::flip_both()),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Cell index of `t(x)` for the cell index of `x`.
    pub fn apply(&self, cell: usize) -> usize {
        self.image[cell]
    }

    pub fn is_identity(&self) -> bool {
        self.image == [0, 1, 2, 3]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSet {
    transforms: Vec<Transform>,
}

impl TransformSet {
    pub fn new(transforms: Vec<Transform>) -> Result<TransformSet> {
        if !transforms.iter().any(Transform::is_identity) {
            return Err(Error::Config("transform set must contain the identity".into()));
        }
        Ok(TransformSet { transforms })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<TransformSet> {
        Self::new(
            names
                .iter()
                .map(|n| Transform::by_name(n.as_ref()))
                .collect::<Result<_>>()?,
        )
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Orbit label of each cell under the generated equivalence, numbered
    /// in order of first appearance.
    pub fn orbits(&self) -> [usize; 4] {
        let mut parent = [0, 1, 2, 3];
        fn find(p: &mut [usize; 4], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for t in &self.transforms {
            for c in 0..4 {
                let (a, b) = (find(&mut parent, c), find(&mut parent, t.apply(c)));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut labels = [usize::MAX; 4];
        let mut roots: Vec<usize> = Vec::new();
        for (c, label) in labels.iter_mut().enumerate() {
            let r = find(&mut parent, c);
            *label = roots.iter().position(|&x| x == r).unwrap_or_else(|| {
                roots.push(r);
                roots.len() - 1
            });
        }
        labels
    }
}

/// Linear parameterization `f_c = θ[map[c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Tying {
    map: [usize; 4],
    dim: usize,
}

impl Tying {
    fn free() -> Tying {
        Tying {
            map: [0, 1, 2, 3],
            dim: 4,
        }
    }

    fn from_orbits(map: [usize; 4]) -> Tying {
        Tying {
            map,
            dim: map.iter().max().unwrap() + 1,
        }
    }

    fn scores(&self, theta: &DVector<f64>) -> [f64; 4] {
        self.map.map(|j| theta[j])
    }

    /// Orbit averages of `f`.
    fn project(&self, f: &[f64; 4]) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim);
        let mut count = DVector::zeros(self.dim);
        for c in 0..4 {
            sum[self.map[c]] += f[c];
            count[self.map[c]] += 1.0;
        }
        sum.component_div(&count)
    }
}

struct Eval {
    value: f64,
    grad: [f64; 4],
    hess: [[f64; 4]; 4],
}

/// Pooled risk plus `λ · Σ_e d_e²`, where `d_e` is the derivative of the
/// environment risk along a scalar head at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    loss: LossKind,
    pooled: CellTable,
    penalized: Vec<CellTable>,
}

fn mean_table(tables: &[CellTable]) -> CellTable {
    let n = tables.len() as f64;
    let mut out = [[0.0; 2]; 4];
    for t in tables {
        for c in 0..4 {
            for y in 0..2 {
                out[c][y] += t[c][y] / n;
            }
        }
    }
    out
}

fn tables(envs: &[DiscreteJoint]) -> Result<Vec<CellTable>> {
    if envs.is_empty() {
        return Err(Error::Config("at least one training environment required".into()));
    }
    envs.iter().map(cell_table).collect()
}

impl Objective {
    /// Uniform-mixture risk with no penalty terms.
    pub fn erm(envs: &[DiscreteJoint], loss: LossKind) -> Result<Objective> {
        let t = tables(envs)?;
        Ok(Objective {
            loss,
            pooled: mean_table(&t),
            penalized: Vec::new(),
        })
    }

    pub fn irmv1(envs: &[DiscreteJoint], loss: LossKind) -> Result<Objective> {
        let t = tables(envs)?;
        Ok(Objective {
            loss,
            pooled: mean_table(&t),
            penalized: t,
        })
    }

    /// IRMv1 on the label-reweighted environments, in both terms.
    pub fn girmv1(envs: &[DiscreteJoint], loss: LossKind, p0: [f64; 2]) -> Result<Objective> {
        Self::irmv1(&reweight_all(envs, p0)?, loss)
    }

    /// ERM on the augmented joint `Σ_t P(t(X), Y)·dist(t)`.
    pub fn augmented(
        envs: &[DiscreteJoint],
        transforms: &TransformSet,
        dist: &[f64],
        loss: LossKind,
    ) -> Result<Objective> {
        let ts = transforms.transforms();
        if dist.len() != ts.len() {
            return Err(Error::Config(format!(
                "transform distribution has {} weights for {} transforms",
                dist.len(),
                ts.len()
            )));
        }
        if dist.iter().any(|w| w.is_nan() || *w < 0.0) || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(
                "transform distribution must be a probability vector".into(),
            ));
        }
        let pooled = mean_table(&tables(envs)?);
        let mut aug = [[0.0; 2]; 4];
        for (t, w) in ts.iter().zip(dist) {
            for c in 0..4 {
                for y in 0..2 {
                    aug[c][y] += w * pooled[t.apply(c)][y];
                }
            }
        }
        Ok(Objective {
            loss,
            pooled: aug,
            penalized: Vec::new(),
        })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// Cell table of the risk term.
    pub fn pooled_table(&self) -> &CellTable {
        &self.pooled
    }

    pub fn has_penalty(&self) -> bool {
        !self.penalized.is_empty()
    }

    pub fn risk(&self, f: &[f64; 4]) -> f64 {
        table_risk(&self.pooled, f, self.loss)
    }

    pub fn penalty(&self, f: &[f64; 4]) -> f64 {
        self.penalized
            .iter()
            .map(|t| head_derivative(t, f, self.loss).powi(2))
            .sum()
    }

    /// Unscaled objective value.
    pub fn value(&self, f: &[f64; 4], lambda: f64) -> f64 {
        self.risk(f) + if lambda > 0.0 { lambda * self.penalty(f) } else { 0.0 }
    }

    /// Gradient of the unscaled objective with respect to the scores.
    pub fn gradient(&self, f: &[f64; 4], lambda: f64) -> [f64; 4] {
        let s = lambda.max(1.0);
        self.eval(f, lambda).grad.map(|g| g * s)
    }

    fn eval(&self, f: &[f64; 4], lambda: f64) -> Eval {
        let mut value = 0.0;
        let mut grad = [0.0; 4];
        let mut hess = [[0.0; 4]; 4];
        let mut ld = [[[0.0; 4]; 2]; 4];
        for c in 0..4 {
            for (yi, &y) in LABELS.iter().enumerate() {
                let m = f64::from(y) * f[c];
                let [d1, d2, d3] = self.loss.derivatives(m);
                ld[c][yi] = [self.loss.value(m), d1, d2, d3];
            }
        }
        for c in 0..4 {
            for (yi, &y) in LABELS.iter().enumerate() {
                let p = self.pooled[c][yi];
                let [l, d1, d2, _] = ld[c][yi];
                value += p * l;
                grad[c] += p * f64::from(y) * d1;
                hess[c][c] += p * d2;
            }
        }
        if lambda > 0.0 {
            for t in &self.penalized {
                let mut d = 0.0;
                let mut dd = [0.0; 4];
                let mut d2 = [0.0; 4];
                for c in 0..4 {
                    for (yi, &y) in LABELS.iter().enumerate() {
                        let p = t[c][yi];
                        let m = f64::from(y) * f[c];
                        let [_, l1, l2, l3] = ld[c][yi];
                        d += p * l1 * m;
                        dd[c] += p * f64::from(y) * (l2 * m + l1);
                        d2[c] += p * (l3 * m + 2.0 * l2);
                    }
                }
                value += lambda * d * d;
                for i in 0..4 {
                    grad[i] += lambda * 2.0 * d * dd[i];
                    for j in 0..4 {
                        hess[i][j] += lambda * 2.0 * dd[i] * dd[j];
                    }
                    hess[i][i] += lambda * 2.0 * d * d2[i];
                }
            }
        }
        let s = lambda.max(1.0);
        Eval {
            value: value / s,
            grad: grad.map(|g| g / s),
            hess: hess.map(|row| row.map(|h| h / s)),
        }
    }
}

fn table_risk(t: &CellTable, f: &[f64; 4], loss: LossKind) -> f64 {
    let mut r = 0.0;
    for c in 0..4 {
        for (yi, &y) in LABELS.iter().enumerate() {
            r += t[c][yi] * loss.value(f64::from(y) * f[c]);
        }
    }
    r
}

fn head_derivative(t: &CellTable, f: &[f64; 4], loss: LossKind) -> f64 {
    let mut d = 0.0;
    for c in 0..4 {
        for (yi, &y) in LABELS.iter().enumerate() {
            let m = f64::from(y) * f[c];
            d += t[c][yi] * loss.derivatives(m)[0] * m;
        }
    }
    d
}

fn reweight_all(envs: &[DiscreteJoint], p0: [f64; 2]) -> Result<Vec<DiscreteJoint>> {
    envs.iter().map(|e| reweighted_joint(e, p0)).collect()
}

/// `d/dw E_env[L(Y, w·f(X))]` at `w = 1`.
pub fn irmv1_head_derivative(f: &TabularPredictor, env: &DiscreteJoint, loss: LossKind) -> Result<f64> {
    Ok(head_derivative(&cell_table(env)?, &f.scores(), loss))
}

/// Squared head derivative of the environment risk.
pub fn irmv1_penalty(f: &TabularPredictor, env: &DiscreteJoint, loss: LossKind) -> Result<f64> {
    Ok(irmv1_head_derivative(f, env, loss)?.powi(2))
}

/// Minimizes `obj` at fixed `lambda` from `theta`. Returns the iterate, the
/// number of iterations used, and whether the gradient tolerance was met.
fn descend(
    obj: &Objective,
    tying: &Tying,
    cfg: &TrainConfig,
    lambda: f64,
    theta: &mut DVector<f64>,
    budget: usize,
    start_iter: usize,
) -> Result<(usize, f64, bool)> {
    let k = tying.dim;
    let reduce = |e: &Eval| -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(k);
        let mut h = DMatrix::zeros(k, k);
        for i in 0..4 {
            g[tying.map[i]] += e.grad[i];
            for j in 0..4 {
                h[(tying.map[i], tying.map[j])] += e.hess[i][j];
            }
        }
        (e.value, g, h)
    };
    let value_at = |th: &DVector<f64>| obj.eval(&tying.scores(th), lambda).value;

    let mut grad_norm = f64::INFINITY;
    for it in 0..budget {
        let (value, g, h) = reduce(&obj.eval(&tying.scores(theta), lambda));
        grad_norm = g.norm();
        if !value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                iteration: start_iter + it,
                scores: tying.scores(theta).to_vec(),
            });
        }
        if grad_norm < cfg.grad_tolerance {
            return Ok((it, grad_norm, true));
        }
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                *theta -= cfg.learning_rate * &g;
            }
            Optimizer::Newton => {
                let step = newton_step(&g, &h, value, &value_at, theta);
                *theta += step;
            }
        }
    }
    let (_, g, _) = reduce(&obj.eval(&tying.scores(theta), lambda));
    let final_norm = g.norm();
    if final_norm.is_finite() {
        grad_norm = final_norm;
    }
    Ok((budget, grad_norm, grad_norm < cfg.grad_tolerance))
}

fn newton_step<F: Fn(&DVector<f64>) -> f64>(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    value: f64,
    value_at: &F,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let k = g.len();
    let scale = h.amax().max(1.0);
    let mut mu = 0.0;
    loop {
        let shifted = h + DMatrix::identity(k, k) * mu;
        if let Some(chol) = shifted.cholesky() {
            let p = -chol.solve(g);
            let slope = g.dot(&p);
            let mut t = 1.0;
            while t > 1e-12 {
                let cand = theta + &p * t;
                let v = value_at(&cand);
                if v.is_finite() && v <= value + 1e-4 * t * slope {
                    return p * t;
                }
                t *= 0.5;
            }
            if mu > 1e12 * scale {
                return DVector::zeros(k);
            }
        }
        mu = (2.0 * mu).max(1e-8 * scale);
    }
}

fn minimize(obj: &Objective, tying: Tying, cfg: &TrainConfig) -> Result<Fit> {
    cfg.validate()?;
    let mut theta = tying.project(&cfg.init);
    let mut used = 0;
    let final_lambda = if obj.has_penalty() { cfg.penalty_weight } else { 0.0 };
    if obj.has_penalty() && cfg.penalty_anneal_iters > 0 && final_lambda != 1.0 {
        let budget = cfg.penalty_anneal_iters.min(cfg.max_iters);
        used += descend(obj, &tying, cfg, 1.0, &mut theta, budget, 0)?.0;
    }
    let budget = cfg.max_iters.saturating_sub(used).max(1);
    let (it, grad_norm, converged) = descend(obj, &tying, cfg, final_lambda, &mut theta, budget, used)?;
    used += it;
    let scores = tying.scores(&theta);
    if !converged {
        return Err(Error::NotConverged {
            iterations: used,
            grad_norm,
            scores: scores.to_vec(),
        });
    }
    Ok(Fit {
        predictor: TabularPredictor::new(scores)?,
        iterations: used,
        grad_norm,
        objective: obj.value(&scores, final_lambda),
    })
}

/// Minimizes an arbitrary objective over free scores.
pub fn train_objective(obj: &Objective, cfg: &TrainConfig) -> Result<Fit> {
    minimize(obj, Tying::free(), cfg)
}

pub fn train_erm(envs: &[DiscreteJoint], cfg: &TrainConfig) -> Result<Fit> {
    minimize(&Objective::erm(envs, cfg.loss)?, Tying::free(), cfg)
}

pub fn train_augmented_erm(
    envs: &[DiscreteJoint],
    transforms: &TransformSet,
    transform_dist: &[f64],
    cfg: &TrainConfig,
) -> Result<Fit> {
    let obj = Objective::augmented(envs, transforms, transform_dist, cfg.loss)?;
    minimize(&obj, Tying::free(), cfg)
}

/// ERM with scores tied across each orbit of the transform group.
pub fn train_consistency(envs: &[DiscreteJoint], transforms: &TransformSet, cfg: &TrainConfig) -> Result<Fit> {
    let obj = Objective::erm(envs, cfg.loss)?;
    minimize(&obj, Tying::from_orbits(transforms.orbits()), cfg)
}

pub fn train_irmv1(envs: &[DiscreteJoint], cfg: &TrainConfig) -> Result<Fit> {
    if envs.len() < 2 {
        return Err(Error::Config("IRMv1 needs at least two environments".into()));
    }
    minimize(&Objective::irmv1(envs, cfg.loss)?, Tying::free(), cfg)
}

/// IRMv1 applied to the label-reweighted environments.
pub fn train_girmv1(envs: &[DiscreteJoint], cfg: &TrainConfig) -> Result<Fit> {
    cfg.validate()?;
    train_irmv1(&reweight_all(envs, cfg.reference_label_dist)?, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiKind {
    /// `P_e(φ(X))`.
    Marginal,
    /// `P_e(φ(X) | Y)`.
    Conditional,
    /// `P_e(Y | φ(X))`.
    Sufficiency,
}

impl DiKind {
    pub const ALL: [DiKind; 3] = [DiKind::Marginal, DiKind::Conditional, DiKind::Sufficiency];

    pub fn name(self) -> &'static str {
        match self {
            DiKind::Marginal => "marginal",
            DiKind::Conditional => "conditional",
            DiKind::Sufficiency => "sufficiency",
        }
    }
}

/// Maximum total-variation distance across environment pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub value: f64,
    /// Some conditioning cell had zero mass in some but not all environments.
    pub partial_support: bool,
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Distributional-invariance deviation of `φ(X)` across `envs`.
pub fn di_penalty(phi: &Representation, envs: &[DiscreteJoint], kind: DiKind) -> Result<Deviation> {
    if envs.len() < 2 {
        return Err(Error::Config(
            "distributional invariance needs at least two environments".into(),
        ));
    }
    let codes = phi.image();
    // joint[e][h][y] = P_e(φ = h, Y = y)
    let joint: Vec<Vec<[f64; 2]>> = tables(envs)?
        .iter()
        .map(|t| {
            codes
                .iter()
                .map(|&h| {
                    phi.preimage(h)
                        .fold([0.0; 2], |acc, c| [acc[0] + t[c][0], acc[1] + t[c][1]])
                })
                .collect()
        })
        .collect();

    // One conditional law per environment and conditioning event; `None`
    // when the event has zero mass.
    let laws: Vec<Vec<Option<Vec<f64>>>> = joint
        .iter()
        .map(|j| match kind {
            DiKind::Marginal => vec![Some(j.iter().map(|r| r[0] + r[1]).collect())],
            DiKind::Conditional => (0..2)
                .map(|y| {
                    let mass: f64 = j.iter().map(|r| r[y]).sum();
                    (mass > 0.0).then(|| j.iter().map(|r| r[y] / mass).collect())
                })
                .collect(),
            DiKind::Sufficiency => j
                .iter()
                .map(|r| {
                    let mass = r[0] + r[1];
                    (mass > 0.0).then(|| vec![r[0] / mass, r[1] / mass])
                })
                .collect(),
        })
        .collect();

    let mut value: f64 = 0.0;
    let mut partial_support = false;
    for event in 0..laws[0].len() {
        let defined = laws.iter().filter(|l| l[event].is_some()).count();
        if defined == 0 {
            continue;
        }
        if defined < laws.len() {
            partial_support = true;
            value = 1.0;
            continue;
        }
        for a in 0..laws.len() {
            for b in a + 1..laws.len() {
                let (p, q) = (laws[a][event].as_ref().unwrap(), laws[b][event].as_ref().unwrap());
                value = value.max(tv(p, q));
            }
        }
    }
    Ok(Deviation { value, partial_support })
}
