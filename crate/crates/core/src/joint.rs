//! Exact probability tables over named ±1-valued variables.
//!
//! Assignments are indexed with the first variable as the most significant
//! bit, `+1` before `-1`, so a table over `(X1, X2, Y)` lists
//! `(+,+,+), (+,+,-), (+,-,+), ...`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Normalization tolerance for probability tables.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// The two spin values in table order.
pub const SPINS: [i8; 2] = [1, -1];

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    vars: Vec<String>,
    probs: Vec<f64>,
}

fn spin_of(index: usize, pos: usize, n: usize) -> i8 {
    if (index >> (n - 1 - pos)) & 1 == 0 {
        1
    } else {
        -1
    }
}

fn check_spin(v: i8) -> Result<()> {
    if v == 1 || v == -1 {
        Ok(())
    } else {
        Err(Error::Domain(format!("variable values must be ±1, got {v}")))
    }
}

impl DiscreteJoint {
    pub fn new(vars: Vec<String>, probs: Vec<f64>) -> Result<DiscreteJoint> {
        if probs.len() != 1usize << vars.len() {
            return Err(Error::Domain(format!(
                "table over {} variables needs {} entries, got {}",
                vars.len(),
                1usize << vars.len(),
                probs.len()
            )));
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(Error::Domain(format!("duplicate variable `{v}`")));
            }
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Domain(format!("invalid probability entry {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Domain(format!("table sums to {total}, not 1")));
        }
        Ok(DiscreteJoint { vars, probs })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn position(&self, var: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| Error::Config(format!("variable `{var}` not in joint {:?}", self.vars)))
    }

    /// Iterates `(assignment, probability)` in table order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i8>, f64)> + '_ {
        let n = self.vars.len();
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| ((0..n).map(|pos| spin_of(i, pos, n)).collect(), p))
    }

    fn index_of(&self, values: &[i8]) -> usize {
        values.iter().fold(0usize, |acc, &v| (acc << 1) | usize::from(v == -1))
    }

    /// Probability of a full assignment, with values in variable order.
    pub fn prob_of(&self, values: &[i8]) -> Result<f64> {
        if values.len() != self.vars.len() {
            return Err(Error::Domain("assignment length mismatch".into()));
        }
        for &v in values {
            check_spin(v)?;
        }
        Ok(self.probs[self.index_of(values)])
    }

    /// Probability of a partial assignment.
    pub fn prob(&self, event: &[(&str, i8)]) -> Result<f64> {
        let mut fixed = Vec::with_capacity(event.len());
        for &(name, v) in event {
            check_spin(v)?;
            fixed.push((self.position(name)?, v));
        }
        Ok(self
            .iter()
            .filter(|(a, _)| fixed.iter().all(|&(pos, v)| a[pos] == v))
            .map(|(_, p)| p)
            .sum())
    }

    /// Probability that `pred` holds.
    pub fn prob_where<F: Fn(&[i8]) -> bool>(&self, pred: F) -> f64 {
        self.iter().filter(|(a, _)| pred(a)).map(|(_, p)| p).sum()
    }

    /// Marginal over `vars`, in the given order.
    pub fn marginal(&self, vars: &[&str]) -> Result<DiscreteJoint> {
        let positions = vars.iter().map(|v| self.position(v)).collect::<Result<Vec<_>>>()?;
        let names: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let k = names.len();
        let mut probs = vec![0.0; 1 << k];
        for (a, p) in self.iter() {
            let idx = positions
                .iter()
                .fold(0usize, |acc, &pos| (acc << 1) | usize::from(a[pos] == -1));
            probs[idx] += p;
        }
        DiscreteJoint::new(names, probs)
    }

    /// Conditional law of `vars` given the assignment `given`.
    pub fn conditional(&self, vars: &[&str], given: &[(&str, i8)]) -> Result<DiscreteJoint> {
        let mass = self.prob(given)?;
        if mass <= 0.0 {
            return Err(Error::UndefinedConditional(format!("P({given:?}) = 0")));
        }
        let positions = vars.iter().map(|v| self.position(v)).collect::<Result<Vec<_>>>()?;
        let fixed = given
            .iter()
            .map(|&(name, v)| Ok((self.position(name)?, v)))
            .collect::<Result<Vec<_>>>()?;
        let mut probs = vec![0.0; 1 << positions.len()];
        for (a, p) in self.iter() {
            if fixed.iter().all(|&(pos, v)| a[pos] == v) {
                let idx = positions
                    .iter()
                    .fold(0usize, |acc, &pos| (acc << 1) | usize::from(a[pos] == -1));
                probs[idx] += p / mass;
            }
        }
        DiscreteJoint::new(vars.iter().map(|s| s.to_string()).collect(), probs)
    }

    /// Convex combination of joints over the same variables.
    pub fn mixture(joints: &[DiscreteJoint], weights: &[f64]) -> Result<DiscreteJoint> {
        let first = joints
            .first()
            .ok_or_else(|| Error::Domain("mixture of zero joints".into()))?;
        if joints.len() != weights.len() {
            return Err(Error::Domain("one weight per joint required".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Domain(format!("mixture weights sum to {total}")));
        }
        let mut probs = vec![0.0; first.probs.len()];
        for (j, &w) in joints.iter().zip(weights) {
            if j.vars != first.vars {
                return Err(Error::Domain("mixture components differ in variables".into()));
            }
            for (acc, p) in probs.iter_mut().zip(&j.probs) {
                *acc += w * p;
            }
        }
        DiscreteJoint::new(first.vars.clone(), probs)
    }

    /// Same table with weights applied entrywise and renormalized.
    pub(crate) fn reweighted<F: Fn(&[i8]) -> f64>(&self, weight: F) -> Result<DiscreteJoint> {
        let raw: Vec<f64> = self.iter().map(|(a, p)| p * weight(&a)).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Reweighting("reweighted table has no mass".into()));
        }
        DiscreteJoint::new(self.vars.clone(), raw.into_iter().map(|p| p / total).collect())
    }

    /// Largest entrywise absolute difference; variables must match.
    pub fn max_abs_diff(&self, other: &DiscreteJoint) -> Result<f64> {
        if self.vars != other.vars {
            return Err(Error::Domain("joints differ in variables".into()));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// CSV export: header `vars..., prob`, one row per assignment.
    pub fn to_csv(&self) -> String {
        let mut out = self.vars.join(",");
        out.push_str(",prob\n");
        for (a, p) in self.iter() {
            for v in a {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{p}\n"));
        }
        out
    }

    /// Draws `n` i.i.d. assignments.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Uniform::new(0.0, acc).map_err(|e| Error::Domain(e.to_string()))?;
        let width = self.vars.len();
        let rows = (0..n)
            .map(|_| {
                let u: f64 = unit.sample(&mut rng);
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                (0..width).map(|pos| spin_of(idx, pos, width)).collect()
            })
            .collect();
        Ok(Dataset {
            vars: self.vars.clone(),
            rows,
        })
    }
}

/// Samples drawn from a joint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub vars: Vec<String>,
    pub rows: Vec<Vec<i8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fraction of rows where `var` equals `value`.
    pub fn frequency(&self, var: &str, value: i8) -> Result<f64> {
        let pos = self
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| Error::Config(format!("variable `{var}` not in dataset")))?;
        let hits = self.rows.iter().filter(|r| r[pos] == value).count();
        Ok(hits as f64 / self.rows.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn example() -> DiscreteJoint {
        DiscreteJoint::new(
            names(&["A", "B"]),
            vec![0.1, 0.2, 0.3, 0.4], // (+,+), (+,-), (-,+), (-,-)
        )
        .unwrap()
    }

    #[test]
    fn table_order() {
        let j = example();
        assert_eq!(j.prob_of(&[1, -1]).unwrap(), 0.2);
        assert_eq!(j.prob_of(&[-1, 1]).unwrap(), 0.3);
        assert!((j.prob(&[("A", -1)]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(DiscreteJoint::new(names(&["A"]), vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(names(&["A"]), vec![1.2, -0.2]).is_err());
        assert!(DiscreteJoint::new(names(&["A"]), vec![1.0]).is_err());
        assert!(DiscreteJoint::new(names(&["A", "A"]), vec![0.25; 4]).is_err());
    }

    #[test]
    fn marginal_of_all_vars_is_identity() {
        let j = example();
        assert_eq!(j.marginal(&["A", "B"]).unwrap(), j);
        let swapped = j.marginal(&["B", "A"]).unwrap();
        assert_eq!(swapped.prob_of(&[1, -1]).unwrap(), 0.3);
    }

    #[test]
    fn conditional_normalizes_and_rejects_null_events() {
        let j = example();
        let c = j.conditional(&["B"], &[("A", 1)]).unwrap();
        assert!((c.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((c.prob_of(&[1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let null = DiscreteJoint::new(names(&["A", "B"]), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            null.conditional(&["B"], &[("A", -1)]),
            Err(Error::UndefinedConditional(_))
        ));
    }

    #[test]
    fn mixture_checks_weights() {
        let j = example();
        let m = DiscreteJoint::mixture(&[j.clone(), j.clone()], &[0.5, 0.5]).unwrap();
        assert!(m.max_abs_diff(&j).unwrap() < 1e-15);
        assert!(DiscreteJoint::mixture(std::slice::from_ref(&j), &[0.9]).is_err());
        assert!(DiscreteJoint::mixture(&[j.clone(), j], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = example().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "A,B,prob");
        assert_eq!(lines[2], "1,-1,0.2");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn sampling_is_seeded() {
        let j = example();
        assert_eq!(j.sample(100, 7).unwrap(), j.sample(100, 7).unwrap());
        assert_ne!(j.sample(100, 7).unwrap(), j.sample(100, 8).unwrap());
        assert!(j.sample(0, 7).is_err());
    }
}
