//! Empirical measures and exact optimal-transport distances.
//!
//! Clouds of `n` points in `R^d` stand in for probability measures throughout.
//! Distances come in three flavors:
//!
//! - [`w1_exact_1d`] — the 1D Wasserstein-1 distance via sorted pairing
//!   (exact for equal-size clouds; the monotone coupling is optimal for the
//!   convex cost `|x-y|`).
//! - [`ot_assignment`] — exact minimal average pair cost for an arbitrary
//!   nondecreasing cost of the pair distance, via an O(n³) shortest
//!   augmenting-path assignment solver. This is the only correct route for
//!   *concave* costs or for dimension ≥ 2, where sorted pairing is invalid.
//! - [`sliced_w1`] — a fast projection-averaged lower-bound diagnostic; never
//!   used where exactness matters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::noise::RngStream;

/// Largest cloud size the exact assignment solver accepts by default.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 2048;

/// A uniform empirical measure: `n` points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    data: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Build from row-major coordinates (`data.len()` must be a positive
    /// multiple of `dim`, all entries finite).
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::Dimension("dim must be >= 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(CoreError::Shape(format!(
                "data length {} is not a positive multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(CoreError::Degenerate(format!("non-finite coordinate {bad}")));
        }
        Ok(EmpiricalMeasure { dim, data })
    }

    /// Build from a list of points of equal dimension.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(CoreError::Shape("points have unequal dimensions".into()));
        }
        EmpiricalMeasure::new(dim, points.concat())
    }

    /// Point mass at a single location.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        EmpiricalMeasure::new(point.len(), point.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false // constructors reject empty clouds
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Raw row-major coordinates.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Coordinate-wise mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for p in self.iter_points() {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += pi;
            }
        }
        for mi in &mut m {
            *mi /= n;
        }
        m
    }

    /// Mean Euclidean norm (first absolute moment).
    pub fn mean_norm(&self) -> f64 {
        let n = self.len() as f64;
        self.iter_points().map(|p| norm(p)).sum::<f64>() / n
    }

    /// Mean squared Euclidean norm.
    pub fn second_moment(&self) -> f64 {
        let n = self.len() as f64;
        self.iter_points().map(|p| p.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n
    }

    /// Pool several clouds of equal dimension into one.
    pub fn pool(parts: &[&EmpiricalMeasure]) -> Result<Self> {
        let dim = parts
            .first()
            .map(|m| m.dim)
            .ok_or_else(|| CoreError::Shape("cannot pool zero clouds".into()))?;
        if parts.iter().any(|m| m.dim != dim) {
            return Err(CoreError::Dimension("pooled clouds have unequal dims".into()));
        }
        let data: Vec<f64> = parts.iter().flat_map(|m| m.data.iter().copied()).collect();
        EmpiricalMeasure::new(dim, data)
    }

    /// Deterministic stride subsample down to at most `max` points
    /// (index `floor(k * n / max)` for `k < max`); identity when `n <= max`.
    pub fn subsample_stride(&self, max: usize) -> Result<Self> {
        let n = self.len();
        if max == 0 {
            return Err(CoreError::Parameter("subsample cap must be >= 1".into()));
        }
        if n <= max {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(max * self.dim);
        for k in 0..max {
            let i = k * n / max;
            data.extend_from_slice(self.point(i));
        }
        EmpiricalMeasure::new(self.dim, data)
    }

    /// CSV with header `x0,...,x{d-1}`, one point per row.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for p in self.iter_points() {
            let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parse the CSV format produced by [`EmpiricalMeasure::to_csv_string`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Shape("empty cloud CSV".into()))?;
        let dim = header.split(',').count();
        for (j, name) in header.split(',').enumerate() {
            if name.trim() != format!("x{j}") {
                return Err(CoreError::Shape(format!(
                    "unexpected cloud CSV header column {:?}",
                    name
                )));
            }
        }
        let mut data = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim {
                return Err(CoreError::Shape(format!(
                    "row has {} fields, header has {dim}",
                    fields.len()
                )));
            }
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|_| {
                    CoreError::Shape(format!("unparsable coordinate {:?}", f))
                })?;
                data.push(v);
            }
        }
        EmpiricalMeasure::new(dim, data)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_comparable(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(CoreError::Dimension(format!(
            "clouds have dims {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.len() != nu.len() {
        return Err(CoreError::Shape(format!(
            "clouds have sizes {} and {} (equal sizes required)",
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// Exact Wasserstein-1 distance between equal-size 1D clouds (sorted pairing).
pub fn w1_exact_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_comparable(mu, nu)?;
    if mu.dim() != 1 {
        return Err(CoreError::Dimension(format!(
            "w1_exact_1d requires dim 1, got {}",
            mu.dim()
        )));
    }
    let mut a = mu.data().to_vec();
    let mut b = nu.data().to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = a.len() as f64;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Exact minimal average pair cost over all bijective pairings, for a
/// nondecreasing `cost` of the Euclidean pair distance with `cost(0) = 0`.
///
/// Solves the assignment problem by shortest augmenting paths with dual
/// potentials (O(n³)); exact for real-valued costs. Cloud sizes above `cap`
/// are refused (the solver is cubic).
pub fn ot_assignment_with_cap(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cost: impl Fn(f64) -> f64,
    cap: usize,
) -> Result<f64> {
    check_comparable(mu, nu)?;
    let n = mu.len();
    if n > cap {
        return Err(CoreError::Capacity(format!(
            "assignment solver capped at {cap} points, got {n}"
        )));
    }
    let c0 = cost(0.0);
    if c0.abs() > 1e-12 {
        return Err(CoreError::Parameter(format!("cost(0) must be 0, got {c0}")));
    }
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let p = mu.point(i);
        for j in 0..n {
            let v = cost(dist(p, nu.point(j)));
            if !v.is_finite() || v < -1e-12 {
                return Err(CoreError::Parameter(format!(
                    "cost must be finite and nonnegative, got {v}"
                )));
            }
            c[i * n + j] = v;
        }
    }
    let (_, total) = solve_assignment(&c, n);
    Ok(total / n as f64)
}

/// [`ot_assignment_with_cap`] with the default cap.
pub fn ot_assignment(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cost: impl Fn(f64) -> f64,
) -> Result<f64> {
    ot_assignment_with_cap(mu, nu, cost, DEFAULT_ASSIGNMENT_CAP)
}

/// Exact W1 in any dimension: sorted pairing when `dim == 1`, assignment
/// solver with cost `r ↦ r` otherwise.
pub fn w1_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() == 1 && nu.dim() == 1 {
        w1_exact_1d(mu, nu)
    } else {
        ot_assignment(mu, nu, |r| r)
    }
}

/// Minimal average transport cost *and* the optimal pairing
/// (`pairing[i] = j` matches `mu` point `i` to `nu` point `j`).
pub fn ot_assignment_plan(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cost: impl Fn(f64) -> f64,
    cap: usize,
) -> Result<(Vec<usize>, f64)> {
    check_comparable(mu, nu)?;
    let n = mu.len();
    if n > cap {
        return Err(CoreError::Capacity(format!(
            "assignment solver capped at {cap} points, got {n}"
        )));
    }
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let p = mu.point(i);
        for j in 0..n {
            c[i * n + j] = cost(dist(p, nu.point(j)));
        }
    }
    let (plan, total) = solve_assignment(&c, n);
    Ok((plan, total / n as f64))
}

/// Shortest-augmenting-path assignment solver with dual potentials.
/// `cost` is row-major n×n. Returns (column of each row, total cost).
fn solve_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    const INF: f64 = f64::INFINITY;
    // 1-indexed working arrays; column 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j (0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
        total += cost[(p[j] - 1) * n + (j - 1)];
    }
    (col_of_row, total)
}

/// Fixed seed for the sliced-W1 projection directions, so the diagnostic is
/// reproducible across runs and machines.
const SLICED_DIRECTION_SEED: u64 = 0x51_1CE       ^ 0xD1A6;

/// Projection-averaged W1 over `n_dirs` fixed random directions.
///
/// A fast diagnostic (each projection is an exact 1D W1); a lower bound on W1
/// in expectation over directions, but *not* exact for `dim >= 2` — never use
/// it where an acceptance-grade distance is required.
pub fn sliced_w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, n_dirs: usize) -> Result<f64> {
    check_comparable(mu, nu)?;
    if n_dirs == 0 {
        return Err(CoreError::Parameter("n_dirs must be >= 1".into()));
    }
    let d = mu.dim();
    let mut total = 0.0;
    for k in 0..n_dirs {
        let mut stream = RngStream::new(SLICED_DIRECTION_SEED, k as u64);
        let mut dir = vec![0.0; d];
        loop {
            stream.fill_standard_normal(&mut dir);
            let nrm = norm(&dir);
            if nrm > 1e-12 {
                for x in &mut dir {
                    *x /= nrm;
                }
                break;
            }
        }
        let proj = |m: &EmpiricalMeasure| -> Vec<f64> {
            m.iter_points()
                .map(|p| p.iter().zip(&dir).map(|(a, b)| a * b).sum())
                .collect()
        };
        let pa = EmpiricalMeasure::new(1, proj(mu))?;
        let pb = EmpiricalMeasure::new(1, proj(nu))?;
        total += w1_exact_1d(&pa, &pb)?;
    }
    Ok(total / n_dirs as f64)
}

/// W1 with automatic algorithm choice: exact sorted pairing in dimension
/// one, exact assignment for small multi-dimensional clouds, and the sliced
/// surrogate (32 fixed directions) beyond the cubic-solver comfort zone.
pub fn w1_auto(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_comparable(mu, nu)?;
    if mu.dim() == 1 {
        w1_exact_1d(mu, nu)
    } else if mu.len() <= 256 {
        ot_assignment_with_cap(mu, nu, |r| r, 256)
    } else {
        sliced_w1(mu, nu, 32)
    }
}
