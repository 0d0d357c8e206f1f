//! Nelder-Mead simplex minimization.
//!
//! The objective must be deterministic. Initial-simplex and shrink
//! evaluations are independent and can run in parallel; every other step is
//! sequential, so the iterate sequence does not depend on the schedule.

use serde::{Deserialize, Serialize};

use crate::exec::{map_indexed, Execution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when `f_worst - f_best <= rel_tol * |f_best|` (plus a tiny
    /// absolute floor) ...
    pub rel_tol: f64,
    /// ... and the simplex spans at most `x_tol * (1 + max |x_best|)`.
    pub x_tol: f64,
    /// Initial simplex step per coordinate, relative to `|x0_i|`.
    pub rel_step: f64,
    /// Step used for coordinates that start at zero.
    pub abs_step: f64,
    pub exec: Execution,
}

impl NelderMeadOptions {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            max_evals: 200 * dim.max(1),
            rel_tol: 1e-6,
            x_tol: 1e-6,
            rel_step: 0.1,
            abs_step: 0.05,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    /// Best value after each iteration, starting with the initial simplex.
    pub trace: Vec<f64>,
    pub converged: bool,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn order(simplex: &mut [(Vec<f64>, f64)]) {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn span(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(p, _)| p.iter().zip(best).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        .fold(0.0, f64::max)
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let dim = x0.len();
    if dim == 0 {
        let value = sanitize(f(x0));
        return NelderMeadResult {
            x: Vec::new(),
            value,
            evals: 1,
            trace: vec![value],
            converged: true,
        };
    }
    let points: Vec<Vec<f64>> = (0..=dim)
        .map(|k| {
            let mut p = x0.to_vec();
            if k > 0 {
                let i = k - 1;
                p[i] += if p[i] != 0.0 { opts.rel_step * p[i] } else { opts.abs_step };
            }
            p
        })
        .collect();
    let values = map_indexed(points.len(), opts.exec, |k| sanitize(f(&points[k])));
    let mut evals = points.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = points.into_iter().zip(values).collect();
    order(&mut simplex);
    let mut trace = vec![simplex[0].1];
    let mut converged = false;

    while evals < opts.max_evals {
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let flat = worst.is_finite() && worst - best <= opts.rel_tol * best.abs() + 1e-300;
        if flat && span(&simplex) <= opts.x_tol * (1.0 + max_abs(&simplex[0].0)) {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let worst_pt = simplex[dim].0.clone();
        let reflected = affine(&centroid, &worst_pt, -ALPHA);
        let fr = sanitize(f(&reflected));
        evals += 1;
        if fr < best {
            let expanded = affine(&centroid, &worst_pt, -GAMMA);
            let fe = sanitize(f(&expanded));
            evals += 1;
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst {
                let p = affine(&centroid, &reflected, RHO);
                let v = sanitize(f(&p));
                (p, v)
            } else {
                let p = affine(&centroid, &worst_pt, RHO);
                let v = sanitize(f(&p));
                (p, v)
            };
            evals += 1;
            if fc < worst.min(fr) {
                simplex[dim] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                let shrunk: Vec<Vec<f64>> = simplex[1..]
                    .iter()
                    .map(|(p, _)| affine(&anchor, p, SIGMA))
                    .collect();
                let vals = map_indexed(shrunk.len(), opts.exec, |k| sanitize(f(&shrunk[k])));
                evals += shrunk.len();
                for (slot, (p, v)) in simplex[1..].iter_mut().zip(shrunk.into_iter().zip(vals)) {
                    *slot = (p, v);
                }
            }
        }
        order(&mut simplex);
        trace.push(simplex[0].1);
    }

    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evals,
        trace,
        converged,
    }
}
