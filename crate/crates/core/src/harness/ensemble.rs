//! Deterministic parallel ensembles and weak-error estimation.
//!
//! Paths are grouped into fixed blocks of [`BLOCK`] indices. Each block is
//! reduced sequentially into count/mean/M2 accumulators and blocks are
//! merged in index order, so the result never depends on the worker count.

use rayon::prelude::*;
use serde::Serialize;

use super::spec::{Experiment, ExperimentSpec, Observable};
use crate::error::{config_err, Result};
use crate::optimizers::{run_validated, Trajectory};
use crate::rng::RngStream;
use crate::sde::euler_maruyama_with;

/// Paths per work item.
pub const BLOCK: usize = 64;
/// Blocks reduced per parallel round; bounds peak memory.
const ROUND: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Column {
    Loss,
    L1,
    L2,
    Coord(usize),
    Constant,
}

fn columns(obs: &[Observable], d: usize) -> Vec<Column> {
    let mut out = Vec::new();
    let mut push = |c: Column| {
        if !out.contains(&c) {
            out.push(c);
        }
    };
    for o in obs {
        match o {
            Observable::LossGap => push(Column::Loss),
            Observable::GradL1 => push(Column::L1),
            Observable::GradL2sq => push(Column::L2),
            Observable::CoordMean | Observable::CoordVar => (0..d).for_each(|j| push(Column::Coord(j))),
            Observable::Constant => push(Column::Constant),
        }
    }
    out
}

fn column_name(c: Column) -> String {
    match c {
        Column::Loss => "loss_gap".into(),
        Column::L1 => "grad_l1".into(),
        Column::L2 => "grad_l2sq".into(),
        Column::Coord(j) => format!("x{j}"),
        Column::Constant => "constant".into(),
    }
}

#[derive(Clone, Debug)]
struct Acc {
    n: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    diverged: usize,
    max_inc: f64,
}

impl Acc {
    fn new(cells: usize) -> Acc {
        Acc { n: vec![0; cells], mean: vec![0.0; cells], m2: vec![0.0; cells], diverged: 0, max_inc: 0.0 }
    }

    fn push(&mut self, i: usize, x: f64) {
        self.n[i] += 1;
        let delta = x - self.mean[i];
        self.mean[i] += delta / self.n[i] as f64;
        self.m2[i] += delta * (x - self.mean[i]);
    }

    fn merge(&mut self, o: &Acc) {
        for i in 0..self.n.len() {
            let (na, nb) = (self.n[i], o.n[i]);
            if nb == 0 {
                continue;
            }
            if na == 0 {
                self.n[i] = nb;
                self.mean[i] = o.mean[i];
                self.m2[i] = o.m2[i];
                continue;
            }
            let n = na + nb;
            let delta = o.mean[i] - self.mean[i];
            self.mean[i] += delta * nb as f64 / n as f64;
            self.m2[i] += o.m2[i] + delta * delta * (na as f64 * nb as f64 / n as f64);
            self.n[i] = n;
        }
        self.diverged += o.diverged;
        if o.max_inc > self.max_inc || o.max_inc.is_nan() {
            self.max_inc = o.max_inc;
        }
    }
}

/// Across-path statistics per recorded step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub name: String,
    pub seed: u64,
    /// Time per optimizer step.
    pub eta: f64,
    pub steps: Vec<usize>,
    pub columns: Vec<String>,
    /// `mean[c][r]` for column `c`, recorded row `r`.
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// Paths contributing to each row.
    pub count: Vec<u64>,
    pub paths: usize,
    pub diverged: usize,
    /// Largest `‖x_{k+1} − x_k‖_∞` over every path, diverged or not.
    pub max_increment_inf: f64,
}

impl EnsembleStats {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| config_err("observables", format!("column `{name}` was not recorded")))
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| s as f64 * self.eta).collect()
    }

    /// Row range of the last `window` fraction of recorded steps.
    pub fn tail_rows(&self, window: f64) -> std::ops::Range<usize> {
        let rows = self.steps.len();
        let w = ((window * rows as f64).round() as usize).clamp(1, rows.max(1));
        rows - w..rows
    }

    /// Tail-window average of the across-path mean of column `c`.
    pub fn tail_mean(&self, c: usize, window: f64) -> f64 {
        let r = self.tail_rows(window);
        let n = r.len() as f64;
        self.mean[c][r].iter().sum::<f64>() / n
    }

    /// Tail-window average of the across-path variance of column `c`.
    pub fn tail_var(&self, c: usize, window: f64) -> f64 {
        let r = self.tail_rows(window);
        let n = r.len() as f64;
        self.var[c][r].iter().sum::<f64>() / n
    }
}

/// One path of `exp`, discrete or SDE; steps are optimizer steps.
pub fn run_path(exp: &Experiment, path: u64) -> Trajectory {
    let seed = exp.spec.seed;
    match &exp.sde {
        None => run_validated(exp.kind, &exp.landscape, &exp.cluster, seed, path),
        Some(model) => {
            let m = exp.substeps;
            let c = &exp.cluster;
            let mut t = euler_maruyama_with(
                model,
                &c.x0,
                c.eta / m as f64,
                c.steps * m,
                &RngStream::new(seed, path, 0),
                c.stride * m,
                c.divergence,
            )
            .expect("validated experiment");
            t.steps.iter_mut().for_each(|s| *s /= m);
            t.diverged_at = t.diverged_at.map(|s| s / m);
            t
        }
    }
}

fn value(c: Column, t: &Trajectory, r: usize) -> f64 {
    match c {
        Column::Loss => t.loss_gap[r],
        Column::L1 => t.grad_l1[r],
        Column::L2 => t.grad_l2sq[r],
        Column::Coord(j) => t.points[r][j],
        Column::Constant => 0.0,
    }
}

/// Run every path of `exp` and reduce to per-step statistics.
pub fn run_ensemble(exp: &Experiment) -> Result<EnsembleStats> {
    let cols = columns(&exp.spec.observables, exp.landscape.dim);
    let c = &exp.cluster;
    let rows = c.steps / c.stride + 1;
    let cells = cols.len() * rows;
    let paths = exp.spec.paths;
    let exclude = exp.exclude_diverged();
    let blocks = paths.div_ceil(BLOCK);
    let block = |b: usize| {
        let mut acc = Acc::new(cells);
        for p in b * BLOCK..((b + 1) * BLOCK).min(paths) {
            let t = run_path(exp, p as u64);
            if t.max_increment_inf > acc.max_inc || t.max_increment_inf.is_nan() {
                acc.max_inc = t.max_increment_inf;
            }
            if t.diverged_at.is_some() {
                acc.diverged += 1;
                if exclude {
                    continue;
                }
            }
            for r in 0..t.len() {
                let row = t.steps[r] / c.stride;
                for (ci, &col) in cols.iter().enumerate() {
                    acc.push(ci * rows + row, value(col, &t, r));
                }
            }
        }
        acc
    };
    let mut total = Acc::new(cells);
    let mut start = 0;
    while start < blocks {
        let end = (start + ROUND).min(blocks);
        let parts: Vec<Acc> = (start..end).into_par_iter().map(block).collect();
        for p in &parts {
            total.merge(p);
        }
        start = end;
    }
    let mut mean = Vec::with_capacity(cols.len());
    let mut var = Vec::with_capacity(cols.len());
    let mut stderr = Vec::with_capacity(cols.len());
    for ci in 0..cols.len() {
        let range = ci * rows..(ci + 1) * rows;
        let mut m = Vec::with_capacity(rows);
        let mut v = Vec::with_capacity(rows);
        let mut s = Vec::with_capacity(rows);
        for i in range {
            let n = total.n[i];
            let vi = match n {
                0 => f64::NAN,
                1 => 0.0,
                _ => total.m2[i] / (n - 1) as f64,
            };
            m.push(if n > 0 { total.mean[i] } else { f64::NAN });
            v.push(vi);
            s.push(if n > 0 { (vi / n as f64).sqrt() } else { f64::NAN });
        }
        mean.push(m);
        var.push(v);
        stderr.push(s);
    }
    let count = if cols.is_empty() { vec![0; rows] } else { total.n[..rows].to_vec() };
    Ok(EnsembleStats {
        name: exp.spec.name.clone(),
        seed: exp.spec.seed,
        eta: c.eta,
        steps: (0..rows).map(|r| r * c.stride).collect(),
        columns: cols.into_iter().map(column_name).collect(),
        mean,
        var,
        stderr,
        count,
        paths,
        diverged: total.diverged,
        max_increment_inf: total.max_inc,
    })
}

/// Weak error of an SDE against its optimizer across step sizes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakErrorReport {
    pub observable: String,
    pub etas: Vec<f64>,
    /// `max_k |mean g(x_k) − mean g(X_{kη})|` per step size.
    pub errors: Vec<f64>,
    /// Combined Monte-Carlo standard error at the maximizing step.
    pub noise_floor: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln η`.
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Least-squares slope of `y` on `x` and its standard error.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if x.len() <= 2 {
        return (slope, 0.0);
    }
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

/// Compare the optimizer in `spec` with its SDE at each `η`, holding the
/// time horizon `steps·η` fixed. The SDE uses `spec.sde.substeps`.
pub fn weak_error(spec: &ExperimentSpec, g: Observable, etas: &[f64]) -> Result<WeakErrorReport> {
    if etas.len() < 2 {
        return Err(config_err("etas", "need at least two step sizes"));
    }
    let horizon = spec.cluster.steps as f64 * spec.cluster.eta;
    let mut errors = Vec::new();
    let mut floor = Vec::new();
    let mut name = String::new();
    for &eta in etas {
        if !(eta > 0.0) {
            return Err(config_err("etas", "step sizes must be positive"));
        }
        let mut s = spec.clone();
        s.sweep = None;
        s.cluster.eta = eta;
        s.cluster.steps = (horizon / eta).round() as usize;
        s.stride = 1;
        s.observables = vec![g];
        s.sde.dt = None;
        s.sde.enabled = false;
        let disc = run_ensemble(&s.resolve()?)?;
        s.sde.enabled = true;
        let cont = run_ensemble(&s.resolve()?)?;
        name = disc.columns.first().cloned().unwrap_or_default();
        let (mut worst, mut at) = (0.0f64, 0);
        if !disc.columns.is_empty() {
            for r in 0..disc.steps.len() {
                let e = (disc.mean[0][r] - cont.mean[0][r]).abs();
                if e > worst {
                    worst = e;
                    at = r;
                }
            }
            floor.push(disc.stderr[0][at].hypot(cont.stderr[0][at]));
        } else {
            floor.push(0.0);
        }
        errors.push(worst);
    }
    let (slope, slope_stderr) = if errors.iter().all(|e| *e > 0.0) {
        let lx: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        fit_slope(&lx, &ly)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(WeakErrorReport { observable: name, etas: etas.to_vec(), errors, noise_floor: floor, slope, slope_stderr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: &str, paths: usize) -> ExperimentSpec {
        let text = format!(
            r#"{{"schema": 1, "name": "t",
            "landscape": {{"kind": "quadratic", "hessian": {{"diag": [1.0, 2.0]}}}},
            "optimizer": "dsgd",
            "cluster": {{"agents": 2, "eta": 0.1, "steps": 6, "x0": 1.0}},
            "noise": {noise}, "paths": {paths}, "stride": 2,
            "observables": ["loss_gap", "coord_mean"]}}"#
        );
        ExperimentSpec::from_json(&text, "t").unwrap()
    }

    #[test]
    fn single_path_matches_trajectory() {
        let s = spec(r#"{"kind": "gaussian", "sigma": 0.3}"#, 1);
        let e = s.resolve().unwrap();
        let st = run_ensemble(&e).unwrap();
        let t = run_path(&e, 0);
        assert_eq!(st.steps, vec![0, 2, 4, 6]);
        assert_eq!(st.mean[0], t.loss_gap);
        assert!(st.var.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(st.columns, vec!["loss_gap", "x0", "x1"]);
    }

    #[test]
    fn noiseless_has_zero_variance() {
        let st = run_ensemble(&spec(r#"{"kind": "none"}"#, 130).resolve().unwrap()).unwrap();
        assert!(st.var.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(st.count, vec![130; 4]);
    }

    #[test]
    fn worker_count_invariant() {
        let e = spec(r#"{"kind": "gaussian", "sigma": 0.3}"#, 300).resolve().unwrap();
        let run = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| run_ensemble(&e).unwrap());
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn merged_moments_match_direct() {
        let e = spec(r#"{"kind": "gaussian", "sigma": 0.3}"#, 200).resolve().unwrap();
        let st = run_ensemble(&e).unwrap();
        let xs: Vec<f64> = (0..200).map(|p| run_path(&e, p).loss_gap[3]).collect();
        let m = xs.iter().sum::<f64>() / 200.0;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 199.0;
        assert!((st.mean[0][3] - m).abs() < 1e-12 && (st.var[0][3] - v).abs() < 1e-12);
    }

    #[test]
    fn weak_error_edge_cases() {
        let s = spec(r#"{"kind": "gaussian", "sigma": 0.3}"#, 20);
        assert!(weak_error(&s, Observable::LossGap, &[0.1]).is_err());
        let r = weak_error(&s, Observable::Constant, &[0.1, 0.05]).unwrap();
        assert_eq!(r.errors, vec![0.0, 0.0]);
    }

    #[test]
    fn slope_fit() {
        let x = [0.0, 1.0, 2.0];
        let (s, se) = fit_slope(&x, &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-12 && se < 1e-12);
    }
}
