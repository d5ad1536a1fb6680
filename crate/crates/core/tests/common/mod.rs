#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regulate::dataset::{saturate, CovariateKind, Dataset};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Saturated cell design. Cell `c` has `sizes[c]` units of which the first
/// `treated[c]` are treated; the outcome has cell-specific effects.
pub fn cell_dataset(rng: &mut ChaCha8Rng, sizes: &[usize], treated: &[usize]) -> Dataset {
    let m = sizes.len();
    let base: Vec<f64> = (0..m).map(|_| normal(rng)).collect();
    let tau: Vec<f64> = (0..m).map(|_| 1.0 + 0.5 * normal(rng)).collect();
    let (mut y, mut d, mut cell) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..m {
        for i in 0..sizes[c] {
            let di = if i < treated[c] { 1.0 } else { 0.0 };
            d.push(di);
            cell.push(c as f64);
            y.push(base[c] + di * tau[c] + normal(rng));
        }
    }
    let n = d.len();
    let ds = Dataset::new(y, d, DMatrix::from_column_slice(n, 1, &cell), vec!["cell".into()])
        .unwrap()
        .with_kinds(vec![CovariateKind::Discrete])
        .unwrap();
    saturate(&ds, &["cell"]).unwrap()
}

/// Random cell sizes and treated counts with both groups in every cell.
pub fn overlap_cells(rng: &mut ChaCha8Rng, max_cells: usize, max_n: usize) -> (Vec<usize>, Vec<usize>) {
    let m = rng.gen_range(2..=max_cells);
    let cap = (max_n / m).max(4);
    let sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(4..=cap)).collect();
    let treated = sizes.iter().map(|&s| rng.gen_range(1..s)).collect();
    (sizes, treated)
}

/// Random saturated design with every cell containing both groups.
pub fn overlap_design(rng: &mut ChaCha8Rng, max_cells: usize, max_n: usize) -> Dataset {
    let (sizes, treated) = overlap_cells(rng, max_cells, max_n);
    cell_dataset(rng, &sizes, &treated)
}

/// Like [`overlap_design`] but one random cell is all treated or all
/// untreated. Returns the dataset and the rows outside that cell.
pub fn no_overlap_design(rng: &mut ChaCha8Rng, max_cells: usize, max_n: usize) -> (Dataset, Vec<usize>) {
    let (sizes, mut treated) = overlap_cells(rng, max_cells.max(3), max_n);
    let bad = rng.gen_range(0..sizes.len());
    treated[bad] = if rng.gen_bool(0.5) { sizes[bad] } else { 0 };
    let start: usize = sizes[..bad].iter().sum();
    let n: usize = sizes.iter().sum();
    let keep = (0..n).filter(|&i| i < start || i >= start + sizes[bad]).collect();
    (cell_dataset(rng, &sizes, &treated), keep)
}

/// Continuous covariates with a logistic treatment assignment.
pub fn continuous_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
    loop {
        let x = DMatrix::from_fn(n, p, |_, _| normal(rng));
        let b: Vec<f64> = (0..p).map(|_| 0.8 * normal(rng)).collect();
        let g: Vec<f64> = (0..p).map(|_| normal(rng)).collect();
        let dl: Vec<f64> = (0..p).map(|_| 0.3 * normal(rng)).collect();
        let mut d = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let idx: f64 = (0..p).map(|j| x[(i, j)] * b[j]).sum();
            let di = if rng.gen_bool(1.0 / (1.0 + (-idx).exp())) { 1.0 } else { 0.0 };
            let tau = 1.0 + (0..p).map(|j| x[(i, j)] * dl[j]).sum::<f64>();
            y.push((0..p).map(|j| x[(i, j)] * g[j]).sum::<f64>() + di * tau + normal(rng));
            d.push(di);
        }
        let treated = d.iter().filter(|&&v| v == 1.0).count();
        if treated < p + 2 || n - treated < p + 2 {
            continue;
        }
        let names = (0..p).map(|j| format!("x{j}")).collect();
        return Dataset::new(y, d, x, names).unwrap();
    }
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp()
}

/// Ordinary least squares through an SVD; returns the coefficients.
pub fn ols(w: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    w.clone().svd(true, true).solve(y, 1e-12).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
