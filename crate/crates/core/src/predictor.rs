//! Tabular predictors and representations on the four-point domain `{−1,+1}²`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::envs::{X1, X2, Y};
use crate::error::{Error, Result};
use crate::joint::DiscreteJoint;

/// Domain points in table order.
pub const CELLS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Label values in table order.
pub const LABELS: [i8; 2] = [1, -1];

/// Scores whose magnitude stays below this are considered trivial.
pub const TRIVIAL_THRESHOLD: f64 = 0.05;

/// Per-(x, y) table: `table[cell][label]` with cells and labels in
/// [`CELLS`] / [`LABELS`] order.
pub type CellTable = [[f64; 2]; 4];

pub fn cell_index(x1: i8, x2: i8) -> usize {
    (usize::from(x1 == -1) << 1) | usize::from(x2 == -1)
}

/// Reads the `(X1, X2, Y)` law of `joint` as a cell table.
pub fn cell_table(joint: &DiscreteJoint) -> Result<CellTable> {
    let m = joint.marginal(&[X1, X2, Y])?;
    let p = m.probs();
    let mut t = [[0.0; 2]; 4];
    for (c, row) in t.iter_mut().enumerate() {
        row[0] = p[2 * c];
        row[1] = p[2 * c + 1];
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Logistic,
    Squared,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Squared => "squared",
        }
    }

    /// Loss as a function of the margin `m = y·s`. For ±1 labels the squared
    /// loss `(s − y)²` equals `(m − 1)²`.
    pub fn value(self, m: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
            LossKind::Squared => (m - 1.0) * (m - 1.0),
        }
    }

    /// First three derivatives with respect to the margin.
    pub fn derivatives(self, m: f64) -> [f64; 3] {
        match self {
            LossKind::Logistic => {
                let s = sigmoid(-m);
                let v = s * (1.0 - s);
                [-s, v, -v * (1.0 - 2.0 * s)]
            }
            LossKind::Squared => [2.0 * (m - 1.0), 2.0, 0.0],
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<LossKind> {
        match s {
            "logistic" => Ok(LossKind::Logistic),
            "squared" => Ok(LossKind::Squared),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Real-valued score table `f(x1, x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularPredictor {
    scores: [f64; 4],
}

impl TabularPredictor {
    pub fn new(scores: [f64; 4]) -> Result<TabularPredictor> {
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("predictor score {s} is not finite")));
        }
        Ok(TabularPredictor { scores })
    }

    pub fn constant(c: f64) -> Result<TabularPredictor> {
        Self::new([c; 4])
    }

    pub fn from_fn<F: Fn(i8, i8) -> f64>(f: F) -> Result<TabularPredictor> {
        Self::new(CELLS.map(|(a, b)| f(a, b)))
    }

    pub fn scores(&self) -> [f64; 4] {
        self.scores
    }

    pub fn score(&self, x1: i8, x2: i8) -> f64 {
        self.scores[cell_index(x1, x2)]
    }

    /// `sign(f(x))` with `sign(0) = +1`.
    pub fn predict(&self, x1: i8, x2: i8) -> i8 {
        if self.score(x1, x2) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn max_abs_score(&self) -> f64 {
        self.scores.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn is_trivial(&self) -> bool {
        self.max_abs_score() < TRIVIAL_THRESHOLD
    }

    /// Exact expected loss, optionally importance-weighted per `(x, y)`.
    pub fn risk(&self, joint: &DiscreteJoint, loss: LossKind, weights: Option<&CellTable>) -> Result<f64> {
        if let Some(w) = weights {
            if w.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Domain("risk weights must be finite and non-negative".into()));
            }
        }
        let t = cell_table(joint)?;
        Ok(self.risk_on_table(&t, loss, weights))
    }

    pub(crate) fn risk_on_table(&self, t: &CellTable, loss: LossKind, weights: Option<&CellTable>) -> f64 {
        let mut r = 0.0;
        for c in 0..4 {
            for (yi, &y) in LABELS.iter().enumerate() {
                let w = weights.map_or(1.0, |w| w[c][yi]);
                r += t[c][yi] * w * loss.value(f64::from(y) * self.scores[c]);
            }
        }
        r
    }

    /// `P(sign(f(X)) = Y)`, exact.
    pub fn accuracy(&self, joint: &DiscreteJoint) -> Result<f64> {
        let t = cell_table(joint)?;
        Ok(CELLS
            .iter()
            .enumerate()
            .map(|(c, &(a, b))| if self.predict(a, b) == 1 { t[c][0] } else { t[c][1] })
            .sum())
    }

    /// `x1,x2,score` rows in table order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,score\n");
        for (c, (a, b)) in CELLS.iter().enumerate() {
            writeln!(out, "{a},{b},{}", self.scores[c]).unwrap();
        }
        out
    }
}

impl std::fmt::Display for TabularPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.scores;
        write!(f, "({:.6}, {:.6}; {:.6}, {:.6})", s[0], s[1], s[2], s[3])
    }
}

/// Finite-codomain function table `φ: {−1,+1}² → H` with integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Representation {
    codes: [i32; 4],
}

impl Representation {
    pub fn new(codes: [i32; 4]) -> Representation {
        Representation { codes }
    }

    pub fn identity() -> Representation {
        Representation::new([0, 1, 2, 3])
    }

    /// `φ(x) = x1`.
    pub fn x1() -> Representation {
        Representation::from_fn(|a, _| i32::from(a))
    }

    /// `φ(x) = x2`.
    pub fn x2() -> Representation {
        Representation::from_fn(|_, b| i32::from(b))
    }

    pub fn constant() -> Representation {
        Representation::new([0; 4])
    }

    pub fn from_fn<F: Fn(i8, i8) -> i32>(f: F) -> Representation {
        Representation::new(CELLS.map(|(a, b)| f(a, b)))
    }

    /// `sign ∘ f` with codes ±1.
    pub fn sign_of(f: &TabularPredictor) -> Representation {
        Representation::from_fn(|a, b| i32::from(f.predict(a, b)))
    }

    /// All 16 maps into `{0, 1}`, in binary order of the code table.
    pub fn all_boolean() -> Vec<Representation> {
        (0..16u8)
            .map(|bits| Representation::new([0, 1, 2, 3].map(|c| i32::from((bits >> (3 - c)) & 1))))
            .collect()
    }

    pub fn codes(&self) -> [i32; 4] {
        self.codes
    }

    pub fn apply(&self, x1: i8, x2: i8) -> i32 {
        self.codes[cell_index(x1, x2)]
    }

    /// Image of `φ`, sorted.
    pub fn image(&self) -> Vec<i32> {
        let mut v = self.codes.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Cells mapped to `code`.
    pub fn preimage(&self, code: i32) -> impl Iterator<Item = usize> + '_ {
        (0..4).filter(move |&c| self.codes[c] == code)
    }
}

/// `w ∘ φ`.
pub fn compose(head: &BTreeMap<i32, f64>, phi: &Representation) -> Result<TabularPredictor> {
    let mut scores = [0.0; 4];
    for (c, code) in phi.codes().iter().enumerate() {
        scores[c] = *head
            .get(code)
            .ok_or_else(|| Error::Config(format!("head has no value for code {code}")))?;
    }
    TabularPredictor::new(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{two_bit_anticausal, EnvConfig};

    fn anticausal_test_env() -> DiscreteJoint {
        let cfg = EnvConfig::default();
        two_bit_anticausal(&cfg.train_params().unwrap(), &cfg.test_params().unwrap())
            .unwrap()
            .test
    }

    #[test]
    fn predict_and_tie_rule() {
        let one = TabularPredictor::constant(1.0).unwrap();
        let zero = TabularPredictor::constant(0.0).unwrap();
        for (a, b) in CELLS {
            assert_eq!(one.predict(a, b), 1);
            assert_eq!(zero.predict(a, b), 1);
        }
        let g = TabularPredictor::new([1.16, 1.08, -1.11, -1.03]).unwrap();
        for (a, b) in CELLS {
            assert_eq!(g.predict(a, b), a);
        }
        assert!(TabularPredictor::new([f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_predictor_risks() {
        let env = anticausal_test_env();
        let zero = TabularPredictor::constant(0.0).unwrap();
        assert!((zero.risk(&env, LossKind::Squared, None).unwrap() - 1.0).abs() < 1e-15);
        assert!((zero.risk(&env, LossKind::Logistic, None).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn squared_risk_by_hand() {
        // Test env: γ = 0.5, β = 0.9, α = 0.25. f = 2·x1 loses 1 when x1 = y
        // and 9 otherwise, so the risk is 0.75·1 + 0.25·9.
        let env = anticausal_test_env();
        let f = TabularPredictor::from_fn(|a, _| 2.0 * f64::from(a)).unwrap();
        let r = f.risk(&env, LossKind::Squared, None).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let env = anticausal_test_env();
        let s1 = TabularPredictor::from_fn(|a, _| f64::from(a)).unwrap();
        let s2 = TabularPredictor::from_fn(|_, b| f64::from(b)).unwrap();
        let c = TabularPredictor::constant(1.0).unwrap();
        assert!((s1.accuracy(&env).unwrap() - 0.75).abs() < 1e-12);
        assert!((s2.accuracy(&env).unwrap() - 0.1).abs() < 1e-12);
        assert!((c.accuracy(&env).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        let env = anticausal_test_env();
        let mut w = [[1.0; 2]; 4];
        w[2][1] = -0.5;
        let f = TabularPredictor::constant(0.3).unwrap();
        assert!(matches!(
            f.risk(&env, LossKind::Logistic, Some(&w)),
            Err(Error::Domain(_))
        ));
        let ones = [[1.0; 2]; 4];
        assert_eq!(
            f.risk(&env, LossKind::Logistic, Some(&ones)).unwrap(),
            f.risk(&env, LossKind::Logistic, None).unwrap()
        );
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let l = LossKind::Logistic;
        assert!((l.value(800.0)).abs() < 1e-300);
        assert!((l.value(-800.0) - 800.0).abs() < 1e-9);
        assert!(l.derivatives(-800.0).iter().all(|d| d.is_finite()));
    }

    #[test]
    fn loss_derivatives_match_differences() {
        for loss in [LossKind::Logistic, LossKind::Squared] {
            for &m in &[-2.3, -0.4, 0.0, 0.7, 3.1] {
                let h = 1e-5;
                let d = loss.derivatives(m);
                let fd1 = (loss.value(m + h) - loss.value(m - h)) / (2.0 * h);
                let fd2 = (loss.derivatives(m + h)[0] - loss.derivatives(m - h)[0]) / (2.0 * h);
                let fd3 = (loss.derivatives(m + h)[1] - loss.derivatives(m - h)[1]) / (2.0 * h);
                assert!((d[0] - fd1).abs() < 1e-8);
                assert!((d[1] - fd2).abs() < 1e-8);
                assert!((d[2] - fd3).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn compose_examples() {
        let f = TabularPredictor::new([0.5, -1.0, 2.0, 0.25]).unwrap();
        let head: BTreeMap<i32, f64> = (0..4).map(|c| (c, f.scores()[c as usize])).collect();
        assert_eq!(compose(&head, &Representation::identity()).unwrap(), f);

        let head: BTreeMap<i32, f64> = [(1, 2.0), (-1, -2.0)].into_iter().collect();
        let g = compose(&head, &Representation::x1()).unwrap();
        assert_eq!(g, TabularPredictor::from_fn(|a, _| 2.0 * f64::from(a)).unwrap());

        let head: BTreeMap<i32, f64> = [(0, 0.7)].into_iter().collect();
        assert_eq!(compose(&head, &Representation::constant()).unwrap().scores(), [0.7; 4]);
        assert!(matches!(compose(&head, &Representation::x1()), Err(Error::Config(_))));
    }

    #[test]
    fn boolean_representations() {
        let all = Representation::all_boolean();
        assert_eq!(all.len(), 16);
        let distinct: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(distinct.len(), 16);
        assert!(all.iter().all(|r| r.codes().iter().all(|c| *c == 0 || *c == 1)));
    }

    #[test]
    fn csv_layout() {
        let f = TabularPredictor::new([1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.to_csv(), "x1,x2,score\n1,1,1\n1,-1,2\n-1,1,3\n-1,-1,4\n");
    }
}
