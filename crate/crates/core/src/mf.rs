//! Embedding pretraining by matrix factorization.
//!
//! Explicit feedback goes through non-negative factorization with
//! multiplicative updates over the observed entries; implicit feedback goes
//! through weighted alternating least squares with confidences
//! `c = 1 + alpha * count`. Either way the result is an [`EmbeddingTable`]
//! whose rows feed the bottom layer of the tower scorer.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::binio;
use crate::data::{Dataset, FeedbackKind, Split};
use crate::error::{Error, Result};
use crate::rng;

/// User latent matrix `U` (n x d) and item latent matrix `V` (m x d).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub d: usize,
    /// False when factorization stopped at the iteration cap instead of the
    /// objective tolerance. The table still holds the best (last) iterate.
    pub converged: bool,
}

impl EmbeddingTable {
    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.v.nrows()
    }

    pub fn user_vec(&self, u: u32) -> ndarray::ArrayView1<'_, f64> {
        self.u.row(u as usize)
    }

    pub fn item_vec(&self, i: u32) -> ndarray::ArrayView1<'_, f64> {
        self.v.row(i as usize)
    }

    /// Rescale factor columns so U and V carry equal per-column norms.
    /// `U V^T` is invariant under this diagonal rescaling; it removes the
    /// arbitrary scale split multiplicative NNMF updates can land on, which
    /// otherwise leaves downstream consumers with badly conditioned inputs.
    pub fn balance_factor_scales(&mut self) {
        for c in 0..self.d {
            let nu = self.u.column(c).mapv(|x| x * x).sum().sqrt();
            let nv = self.v.column(c).mapv(|x| x * x).sum().sqrt();
            if nu > 0.0 && nv > 0.0 {
                let s = (nu / nv).sqrt();
                self.u.column_mut(c).mapv_inplace(|x| x / s);
                self.v.column_mut(c).mapv_inplace(|x| x * s);
            }
        }
    }

    /// Replace rows of items that never occur in training with the mean
    /// embedding of the items that do, so unseen items score near the
    /// catalog average instead of collapsing to zero.
    pub fn impute_missing_items(&mut self, item_train_counts: &[usize]) {
        let seen: Vec<usize> = (0..self.n_items())
            .filter(|&i| item_train_counts[i] > 0)
            .collect();
        if seen.is_empty() || seen.len() == self.n_items() {
            return;
        }
        let mut mean = Array1::<f64>::zeros(self.d);
        for &i in &seen {
            mean += &self.v.row(i);
        }
        mean /= seen.len() as f64;
        for i in 0..self.n_items() {
            if item_train_counts[i] == 0 {
                self.v.row_mut(i).assign(&mean);
            }
        }
    }

    const MAGIC: &'static [u8; 8] = b"SOCREMB1";

    /// Binary cache: header (n, m, d, mode, seed) then row-major matrices,
    /// bit-exact on round trip.
    pub fn save(&self, path: &Path, mode: FeedbackKind, seed: u64) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        binio::write_magic(&mut w, Self::MAGIC).map_err(io)?;
        binio::write_u64(&mut w, self.n_users() as u64).map_err(io)?;
        binio::write_u64(&mut w, self.n_items() as u64).map_err(io)?;
        binio::write_u64(&mut w, self.d as u64).map_err(io)?;
        binio::write_u64(&mut w, matches!(mode, FeedbackKind::Implicit) as u64).map_err(io)?;
        binio::write_u64(&mut w, seed).map_err(io)?;
        binio::write_u64(&mut w, self.converged as u64).map_err(io)?;
        binio::write_matrix(&mut w, &self.u).map_err(io)?;
        binio::write_matrix(&mut w, &self.v).map_err(io)?;
        use std::io::Write as _;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<(EmbeddingTable, FeedbackKind, u64)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        binio::expect_magic(&mut r, Self::MAGIC, "embedding cache")?;
        let bad = |e| Error::Incompatible(format!("embedding cache: {e}"));
        let n = binio::read_u64(&mut r).map_err(bad)? as usize;
        let m = binio::read_u64(&mut r).map_err(bad)? as usize;
        let d = binio::read_u64(&mut r).map_err(bad)? as usize;
        let mode = if binio::read_u64(&mut r).map_err(bad)? == 1 {
            FeedbackKind::Implicit
        } else {
            FeedbackKind::Explicit
        };
        let seed = binio::read_u64(&mut r).map_err(bad)?;
        let converged = binio::read_u64(&mut r).map_err(bad)? == 1;
        let u = binio::read_matrix(&mut r)?;
        let v = binio::read_matrix(&mut r)?;
        if u.dim() != (n, d) || v.dim() != (m, d) {
            return Err(Error::Incompatible("embedding cache: shape mismatch".into()));
        }
        Ok((EmbeddingTable { u, v, d, converged }, mode, seed))
    }
}

/// Factorization settings.
#[derive(Debug, Clone)]
pub struct MFConfig {
    pub d: usize,
    pub max_iters: usize,
    /// Stop when the objective decrease falls below this (relative to the
    /// previous objective).
    pub tolerance: f64,
    /// Confidence weight on implicit counts, `c = 1 + alpha * count`.
    pub alpha: f64,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for MFConfig {
    fn default() -> Self {
        MFConfig {
            d: 16,
            max_iters: 200,
            tolerance: 1e-6,
            alpha: 40.0,
            regularization: 0.01,
            seed: 0,
        }
    }
}

impl MFConfig {
    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Validation("embedding width d must be >= 1".into()));
        }
        if self.regularization < 0.0 || self.alpha < 0.0 {
            return Err(Error::Validation(
                "regularization and alpha must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Objective trace of a factorization run, one value per iteration.
#[derive(Debug, Clone)]
pub struct MFTrace {
    pub objective: Vec<f64>,
    pub converged: bool,
}

struct SparseByRow {
    // per-row (item, value) pairs for users, and per-row (user, value) for items
    user_rows: Vec<Vec<(u32, f64)>>,
    item_rows: Vec<Vec<(u32, f64)>>,
}

fn index_rows(ds: &Dataset) -> SparseByRow {
    let mut user_rows = vec![Vec::new(); ds.n_users()];
    let mut item_rows = vec![Vec::new(); ds.n_items()];
    for r in ds.interactions() {
        user_rows[r.user as usize].push((r.item, r.value));
        item_rows[r.item as usize].push((r.user, r.value));
    }
    SparseByRow {
        user_rows,
        item_rows,
    }
}

/// Non-negative factorization of explicit ratings over observed entries,
/// multiplicative updates with L2 regularization. The objective
/// `sum_obs (x - U V^T)^2 + reg (|U|^2 + |V|^2)` is non-increasing.
pub fn factorize_explicit(ds: &Dataset, cfg: &MFConfig) -> Result<(EmbeddingTable, MFTrace)> {
    cfg.validate()?;
    if ds.kind() != FeedbackKind::Explicit {
        return Err(Error::Contract(
            "factorize_explicit requires explicit feedback".into(),
        ));
    }
    let rows = index_rows(ds);
    let (n, m, d) = (ds.n_users(), ds.n_items(), cfg.d);
    let mut rng = rng::stream_rng(cfg.seed, "mf", 0);
    let mut u = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 0.1);
    let mut v = Array2::from_shape_fn((m, d), |_| rng.random::<f64>() * 0.1);

    const EPS: f64 = 1e-12;
    let mut objective = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        multiplicative_half_sweep(&mut u, &v, &rows.user_rows, cfg.regularization, EPS);
        multiplicative_half_sweep(&mut v, &u, &rows.item_rows, cfg.regularization, EPS);
        let obj = explicit_objective(ds, &u, &v, cfg.regularization);
        objective.push(obj);
        if prev.is_finite() && prev - obj <= cfg.tolerance * prev.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = obj;
    }
    Ok((
        EmbeddingTable { u, v, d, converged },
        MFTrace {
            objective,
            converged,
        },
    ))
}

/// One multiplicative update of `target` rows against fixed `other`:
/// row_k *= (sum_obs x * other_row) / (sum_obs pred * other_row + reg*row + eps).
fn multiplicative_half_sweep(
    target: &mut Array2<f64>,
    other: &Array2<f64>,
    obs: &[Vec<(u32, f64)>],
    reg: f64,
    eps: f64,
) {
    let d = target.ncols();
    let updated: Vec<Array1<f64>> = (0..target.nrows())
        .into_par_iter()
        .map(|k| {
            let row = target.row(k);
            let mut numer = Array1::<f64>::zeros(d);
            let mut denom = Array1::<f64>::zeros(d);
            for &(j, x) in &obs[k] {
                let other_row = other.row(j as usize);
                let pred = row.dot(&other_row);
                numer.scaled_add(x, &other_row);
                denom.scaled_add(pred, &other_row);
            }
            let mut new_row = row.to_owned();
            for c in 0..d {
                new_row[c] *= numer[c] / (denom[c] + reg * row[c] + eps);
                if !new_row[c].is_finite() {
                    new_row[c] = 0.0;
                }
            }
            new_row
        })
        .collect();
    for (k, new_row) in updated.into_iter().enumerate() {
        target.row_mut(k).assign(&new_row);
    }
}

fn explicit_objective(ds: &Dataset, u: &Array2<f64>, v: &Array2<f64>, reg: f64) -> f64 {
    let fit: f64 = ds
        .interactions()
        .iter()
        .map(|r| {
            let e = r.value - u.row(r.user as usize).dot(&v.row(r.item as usize));
            e * e
        })
        .sum();
    fit + reg * (u.mapv(|x| x * x).sum() + v.mapv(|x| x * x).sum())
}

/// Weighted ALS on implicit counts: preference `p = 1` on observed pairs,
/// confidence `c = 1 + alpha * count`, unobserved pairs weighted 1 toward 0.
pub fn factorize_implicit(ds: &Dataset, cfg: &MFConfig) -> Result<(EmbeddingTable, MFTrace)> {
    cfg.validate()?;
    if ds.kind() != FeedbackKind::Implicit {
        return Err(Error::Contract(
            "factorize_implicit requires implicit feedback".into(),
        ));
    }
    let rows = index_rows(ds);
    let (n, m, d) = (ds.n_users(), ds.n_items(), cfg.d);
    let mut rng = rng::stream_rng(cfg.seed, "mf", 0);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let mut u = Array2::from_shape_fn((n, d), |_| normal.sample(&mut rng));
    let mut v = Array2::from_shape_fn((m, d), |_| normal.sample(&mut rng));

    let mut objective = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut prev = f64::INFINITY;
    let mut jitter_logged = false;
    for _ in 0..cfg.max_iters {
        let jit_a = als_half_sweep(&mut u, &v, &rows.user_rows, cfg);
        let jit_b = als_half_sweep(&mut v, &u, &rows.item_rows, cfg);
        if (jit_a || jit_b) && !jitter_logged {
            eprintln!("als: singular normal equations, continuing with ridge jitter");
            jitter_logged = true;
        }
        let obj = implicit_objective(&rows.user_rows, &u, &v, cfg);
        objective.push(obj);
        if prev.is_finite() && prev - obj <= cfg.tolerance * prev.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = obj;
    }
    Ok((
        EmbeddingTable { u, v, d, converged },
        MFTrace {
            objective,
            converged,
        },
    ))
}

/// Solve all rows of `target` holding `other` fixed. Returns true when any
/// solve needed ridge jitter.
fn als_half_sweep(
    target: &mut Array2<f64>,
    other: &Array2<f64>,
    obs: &[Vec<(u32, f64)>],
    cfg: &MFConfig,
) -> bool {
    let d = cfg.d;
    let gram = other.t().dot(other); // d x d
    let results: Vec<(Array1<f64>, bool)> = (0..target.nrows())
        .into_par_iter()
        .map(|k| {
            // A = gram + sum_obs (c-1) w w^T + reg I ; rhs = sum_obs c * w
            let mut a = gram.clone();
            for i in 0..d {
                a[[i, i]] += cfg.regularization;
            }
            let mut rhs = Array1::<f64>::zeros(d);
            for &(j, count) in &obs[k] {
                let w = other.row(j as usize);
                let c = 1.0 + cfg.alpha * count;
                for r in 0..d {
                    let wr = w[r];
                    rhs[r] += c * wr;
                    let scaled = (c - 1.0) * wr;
                    for s in 0..d {
                        a[[r, s]] += scaled * w[s];
                    }
                }
            }
            solve_spd(a, rhs)
        })
        .collect();
    let mut any_jitter = false;
    for (k, (row, jittered)) in results.into_iter().enumerate() {
        target.row_mut(k).assign(&row);
        any_jitter |= jittered;
    }
    any_jitter
}

/// Cholesky solve of a small SPD system; retries with growing ridge jitter
/// when the factorization breaks down. Returns (solution, jitter_used).
fn solve_spd(mut a: Array2<f64>, b: Array1<f64>) -> (Array1<f64>, bool) {
    let d = b.len();
    let mut jitter_used = false;
    let mut jitter = 0.0f64;
    loop {
        if jitter > 0.0 {
            for i in 0..d {
                a[[i, i]] += jitter;
            }
            jitter_used = true;
        }
        if let Some(l) = cholesky(&a) {
            // forward then back substitution
            let mut y = b.clone();
            for i in 0..d {
                for j in 0..i {
                    let v = y[j];
                    y[i] -= l[[i, j]] * v;
                }
                y[i] /= l[[i, i]];
            }
            for i in (0..d).rev() {
                for j in (i + 1)..d {
                    let v = y[j];
                    y[i] -= l[[j, i]] * v;
                }
                y[i] /= l[[i, i]];
            }
            return (y, jitter_used);
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 100.0 };
        assert!(jitter < 1.0, "spd solve failed even with large jitter");
    }
}

fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Full weighted objective: every (u, i) pair contributes
/// `c_ui (p_ui - U_u . V_i)^2`, c = 1 off the observed set. The dense term
/// reduces to `tr((U^T U)(V^T V))`.
fn implicit_objective(user_rows: &[Vec<(u32, f64)>], u: &Array2<f64>, v: &Array2<f64>, cfg: &MFConfig) -> f64 {
    let gu = u.t().dot(u);
    let gv = v.t().dot(v);
    let mut obj = (&gu * &gv).sum(); // sum over all pairs of pred^2
    for (k, row) in user_rows.iter().enumerate() {
        let uu = u.row(k);
        for &(j, count) in row {
            let pred = uu.dot(&v.row(j as usize));
            let c = 1.0 + cfg.alpha * count;
            let resid = 1.0 - pred;
            obj += c * resid * resid - pred * pred;
        }
    }
    obj + cfg.regularization * (u.mapv(|x| x * x).sum() + v.mapv(|x| x * x).sum())
}

/// Max-normalized train interaction frequencies, used to initialize the
/// scalar popularity biases.
#[derive(Debug, Clone)]
pub struct InteractionFrequencies {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

pub fn interaction_frequency(ds: &Dataset, split: &Split) -> InteractionFrequencies {
    let mut user_counts = vec![0usize; ds.n_users()];
    let mut item_counts = vec![0usize; ds.n_items()];
    for &(u, i) in split.train() {
        user_counts[u as usize] += 1;
        item_counts[i as usize] += 1;
    }
    let norm = |counts: Vec<usize>| -> Vec<f64> {
        let max = counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return vec![0.0; counts.len()];
        }
        counts.into_iter().map(|c| c as f64 / max as f64).collect()
    };
    InteractionFrequencies {
        user: norm(user_counts),
        item: norm(item_counts),
    }
}
