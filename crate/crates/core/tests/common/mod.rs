//! Brute-force oracles shared by the integration tests. They work from cell
//! tables and loss values only, independent of the trainer internals.

#![allow(dead_code)]

use cisa_core::predictor::{cell_table, CellTable, LABELS};
use cisa_core::{reweighted_joint, DiscreteJoint, EnvConfig, EnvironmentSet, LossKind};

pub const GRID_STEP: f64 = 0.05;
pub const GRID_POINTS: usize = 121;

pub fn grid_value(i: usize) -> f64 {
    -3.0 + GRID_STEP * i as f64
}

pub fn default_set(dgp: cisa_core::DgpKind) -> EnvironmentSet {
    EnvConfig::with_dgp(dgp).build().unwrap()
}

pub fn tables(envs: &[DiscreteJoint]) -> Vec<CellTable> {
    envs.iter().map(|e| cell_table(e).unwrap()).collect()
}

pub fn reweighted_tables(envs: &[DiscreteJoint]) -> Vec<CellTable> {
    let q: Vec<DiscreteJoint> = envs.iter().map(|e| reweighted_joint(e, [0.5, 0.5]).unwrap()).collect();
    tables(&q)
}

/// Pooled risk contribution of cell `c` at score `s`.
fn cell_risk(tables: &[CellTable], c: usize, s: f64, loss: LossKind) -> f64 {
    let n = tables.len() as f64;
    tables
        .iter()
        .map(|t| {
            LABELS
                .iter()
                .enumerate()
                .map(|(yi, &y)| t[c][yi] * loss.value(f64::from(y) * s))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Contribution of cell `c` to the scalar-head derivative of one environment,
/// by central differences in the head.
fn cell_head_derivative(t: &CellTable, c: usize, s: f64, loss: LossKind) -> f64 {
    let h = 1e-6;
    let r = |w: f64| -> f64 {
        LABELS
            .iter()
            .enumerate()
            .map(|(yi, &y)| t[c][yi] * loss.value(f64::from(y) * w * s))
            .sum()
    };
    (r(1.0 + h) - r(1.0 - h)) / (2.0 * h)
}

/// Objective `pooled risk + λ Σ_e d_e²` evaluated directly.
pub fn objective(tables: &[CellTable], f: &[f64; 4], lambda: f64, loss: LossKind) -> f64 {
    let risk: f64 = (0..4).map(|c| cell_risk(tables, c, f[c], loss)).sum();
    let pen: f64 = tables
        .iter()
        .map(|t| {
            (0..4)
                .map(|c| cell_head_derivative(t, c, f[c], loss))
                .sum::<f64>()
                .powi(2)
        })
        .sum();
    risk + lambda * pen
}

#[derive(Debug, Clone, Copy)]
pub struct GridMin {
    pub scores: [f64; 4],
    pub value: f64,
}

/// Exhaustive minimization over the 121⁴ score grid.
pub fn grid_minimize(tables: &[CellTable], lambda: f64, loss: LossKind) -> GridMin {
    let n = tables.len();
    let risk: Vec<[f64; GRID_POINTS]> = (0..4)
        .map(|c| std::array::from_fn(|i| cell_risk(tables, c, grid_value(i), loss)))
        .collect();
    // deriv[c][i][e]
    let deriv: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|c| {
            (0..GRID_POINTS)
                .map(|i| {
                    tables
                        .iter()
                        .map(|t| cell_head_derivative(t, c, grid_value(i), loss))
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut best = (f64::INFINITY, [0usize; 4]);
    let mut d01 = vec![0.0; n];
    let mut d012 = vec![0.0; n];
    for i0 in 0..GRID_POINTS {
        for i1 in 0..GRID_POINTS {
            let r01 = risk[0][i0] + risk[1][i1];
            for e in 0..n {
                d01[e] = deriv[0][i0][e] + deriv[1][i1][e];
            }
            for i2 in 0..GRID_POINTS {
                let r012 = r01 + risk[2][i2];
                for e in 0..n {
                    d012[e] = d01[e] + deriv[2][i2][e];
                }
                for i3 in 0..GRID_POINTS {
                    let mut v = r012 + risk[3][i3];
                    if lambda > 0.0 {
                        let mut pen = 0.0;
                        for e in 0..n {
                            let d = d012[e] + deriv[3][i3][e];
                            pen += d * d;
                        }
                        v += lambda * pen;
                    }
                    if v < best.0 {
                        best = (v, [i0, i1, i2, i3]);
                    }
                }
            }
        }
    }
    GridMin {
        scores: best.1.map(grid_value),
        value: best.0,
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-12 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Best predictor that ignores `x2` under the pooled risk of `tables`: grid
/// search over the two free scores, then golden-section refinement in the
/// bracketing grid cell. Returns the scores and their pooled risk.
pub fn best_x1_only(tables: &[CellTable], loss: LossKind) -> ([f64; 4], f64) {
    let risk_of = |a: f64, b: f64| -> f64 {
        let f = [a, a, b, b];
        (0..4).map(|c| cell_risk(tables, c, f[c], loss)).sum()
    };
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            let v = risk_of(grid_value(i), grid_value(j));
            if v < best.0 {
                best = (v, i, j);
            }
        }
    }
    let (ga, gb) = (grid_value(best.1), grid_value(best.2));
    // The risk separates in the two scores, so each is refined on its own.
    let a = golden_section(|a| risk_of(a, gb), ga - GRID_STEP, ga + GRID_STEP);
    let b = golden_section(|b| risk_of(a, b), gb - GRID_STEP, gb + GRID_STEP);
    ([a, a, b, b], risk_of(a, b))
}

pub fn pooled_risk(tables: &[CellTable], f: &[f64; 4], loss: LossKind) -> f64 {
    (0..4).map(|c| cell_risk(tables, c, f[c], loss)).sum()
}

pub fn signs(f: &[f64; 4]) -> [i8; 4] {
    f.map(|s| if s >= 0.0 { 1 } else { -1 })
}
