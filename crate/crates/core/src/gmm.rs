//! Gaussian mixture over the network input space: full-covariance EM with
//! k-means++ seeding, stable log-likelihood evaluation, seeded sampling
//! for pseudo-rehearsal input generation, and stepwise incremental EM
//! updates on averaged sufficient statistics.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

const BASE_JITTER: f64 = 1e-6;
const ESCALATED_JITTER: f64 = 1e-4;
const DEGENERATE_WEIGHT: f64 = 1e-8;

/// Step-size schedule for the stepwise EM updates: (t0 + t)^(-kappa).
pub const STEP_KAPPA: f64 = 0.7;
pub const STEP_T0: f64 = 10.0;

pub fn incremental_step_size(t: u64) -> f64 {
    (STEP_T0 + t as f64).powf(-STEP_KAPPA)
}

/// Per-component averaged sufficient statistics: responsibility mass,
/// first and second moment, all divided by the number of samples they
/// were accumulated over.
#[derive(Clone, Debug, PartialEq)]
struct SuffStats {
    s0: Vec<f64>,
    s1: Vec<DVector<f64>>,
    s2: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    stats: SuffStats,
    /// Number of incremental batches applied so far.
    t: u64,
    /// Total samples seen (fit + incremental).
    sample_count: u64,
    dim: usize,
}

#[derive(Clone, Debug, Default)]
pub struct EmReport {
    pub log_likelihoods: Vec<f64>,
    pub warnings: Vec<String>,
}

struct PreparedComponent {
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64, // -d/2 ln(2 pi) - 1/2 ln det
    log_weight: f64,
}

fn prepare(weights: &[f64], means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Vec<PreparedComponent> {
    let d = means[0].len() as f64;
    weights
        .iter()
        .zip(covs)
        .map(|(w, cov)| {
            let chol = cov
                .clone()
                .cholesky()
                .expect("covariances are kept SPD by construction");
            let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            PreparedComponent {
                chol,
                log_norm: -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
                log_weight: w.ln(),
            }
        })
        .collect()
}

fn component_log_pdf(comp: &PreparedComponent, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let diff = x - mean;
    let solved = comp.chol.l().solve_lower_triangular(&diff).unwrap();
    comp.log_norm - 0.5 * solved.norm_squared()
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn to_vectors(data: &[Vec<f64>]) -> Vec<DVector<f64>> {
    data.iter().map(|r| DVector::from_row_slice(r)).collect()
}

/// Add `eps` to the diagonal until Cholesky succeeds, escalating once.
fn ensure_spd(cov: &mut DMatrix<f64>, base: f64) -> Result<()> {
    for eps in [base, ESCALATED_JITTER] {
        let mut c = cov.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += eps;
        }
        if c.clone().cholesky().is_some() {
            *cov = c;
            return Ok(());
        }
    }
    Err(Error::Numerical(
        "covariance not positive definite after jitter escalation".into(),
    ))
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> Vec<f64> {
        self.means[k].iter().copied().collect()
    }

    pub fn covariance(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.covs[k][(i, j)]).collect())
            .collect()
    }

    pub fn batches_applied(&self) -> u64 {
        self.t
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    /// Weights sum to one and every covariance passes Cholesky.
    pub fn check_invariants(&self) -> Result<()> {
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!(
                "mixture weights sum to {wsum}, expected 1"
            )));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Numerical("negative mixture weight".into()));
        }
        for (k, cov) in self.covs.iter().enumerate() {
            if cov.clone().cholesky().is_none() {
                return Err(Error::Numerical(format!(
                    "covariance of component {k} is not SPD"
                )));
            }
        }
        Ok(())
    }
}

/// k-means++ seeding: first center uniform, the rest sampled with
/// probability proportional to squared distance to the nearest chosen
/// center.
fn kmeanspp_centers(
    data: &[DVector<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let n = data.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(data[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = data
        .iter()
        .map(|x| (x - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            data[rng.random_range(0..n)].clone()
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            data[idx].clone()
        };
        for (i, x) in data.iter().enumerate() {
            let dist = (x - &next).norm_squared();
            if dist < d2[i] {
                d2[i] = dist;
            }
        }
        centers.push(next);
    }
    centers
}

/// Responsibility-weighted statistics of one E-step, averaged per sample.
fn e_step_stats(
    weights: &[f64],
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
    data: &[DVector<f64>],
) -> (SuffStats, f64) {
    let k = weights.len();
    let d = means[0].len();
    let n = data.len();
    let prepared = prepare(weights, means, covs);
    let mut s0 = vec![0.0; k];
    let mut s1 = vec![DVector::zeros(d); k];
    let mut s2 = vec![DMatrix::zeros(d, d); k];
    let mut ll = 0.0;
    let mut logp = vec![0.0; k];
    for x in data {
        for (j, comp) in prepared.iter().enumerate() {
            logp[j] = comp.log_weight + component_log_pdf(comp, &means[j], x);
        }
        let norm = log_sum_exp(&logp);
        ll += norm;
        for j in 0..k {
            let r = (logp[j] - norm).exp();
            s0[j] += r;
            s1[j].axpy(r, x, 1.0);
            s2[j].syger(r, x, x, 1.0);
        }
    }
    let inv_n = 1.0 / n as f64;
    for j in 0..k {
        s0[j] *= inv_n;
        s1[j] *= inv_n;
        s2[j] *= inv_n;
        s2[j].fill_upper_triangle_with_lower_triangle();
    }
    (SuffStats { s0, s1, s2 }, ll)
}

/// M-step from averaged sufficient statistics. Returns an error only if a
/// covariance cannot be repaired.
fn m_step(
    stats: &SuffStats,
    jitter: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let k = stats.s0.len();
    let total: f64 = stats.s0.iter().sum();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let w = stats.s0[j] / total;
        let mean = &stats.s1[j] / stats.s0[j];
        let mut cov = &stats.s2[j] / stats.s0[j] - &mean * mean.transpose();
        ensure_spd(&mut cov, jitter)?;
        weights.push(w);
        means.push(mean);
        covs.push(cov);
    }
    Ok((weights, means, covs))
}

/// Fit a K-component full-covariance mixture with EM, seeded by
/// k-means++. Stops after `max_iters` iterations or when the
/// log-likelihood improvement drops below `tol`.
pub fn fit_em(
    data: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(GmmModel, EmReport)> {
    if data.len() < k {
        return Err(Error::InvalidInput(format!(
            "need at least {k} samples to fit {k} components, got {}",
            data.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let vecs = to_vectors(data);
    let d = vecs[0].len();
    let n = vecs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EmReport::default();

    // Global covariance as the initial spread of every component.
    let global_mean = vecs.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
    let mut global_cov = DMatrix::zeros(d, d);
    for x in &vecs {
        let diff = x - &global_mean;
        global_cov.syger(1.0 / n as f64, &diff, &diff, 1.0);
    }
    global_cov.fill_upper_triangle_with_lower_triangle();
    ensure_spd(&mut global_cov, BASE_JITTER)?;

    let mut weights = vec![1.0 / k as f64; k];
    let mut means = kmeanspp_centers(&vecs, k, &mut rng);
    let mut covs = vec![global_cov.clone(); k];

    let mut prev_ll = f64::NEG_INFINITY;
    let mut stats = None;
    for _ in 0..max_iters {
        let (st, ll) = e_step_stats(&weights, &means, &covs, &vecs);
        report.log_likelihoods.push(ll);

        // Reseed components that lost all responsibility mass.
        let mut st = st;
        let mut reseeded = false;
        for j in 0..k {
            if st.s0[j] < DEGENERATE_WEIGHT {
                let idx = rng.random_range(0..n);
                report
                    .warnings
                    .push(format!("component {j} degenerate, reseeded from sample {idx}"));
                means[j] = vecs[idx].clone();
                covs[j] = global_cov.clone();
                weights[j] = 1.0 / n as f64;
                let wsum: f64 = weights.iter().sum();
                for w in &mut weights {
                    *w /= wsum;
                }
                reseeded = true;
            }
            st.s0[j] = st.s0[j].max(DEGENERATE_WEIGHT);
        }
        if reseeded {
            prev_ll = f64::NEG_INFINITY;
            continue;
        }

        let (w, m, c) = m_step(&st, BASE_JITTER)?;
        weights = w;
        means = m;
        covs = c;
        stats = Some(st);
        if (ll - prev_ll).abs() < tol {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }
    let _ = prev_ll;

    // Final E-step so the stored accumulators match the published
    // parameters.
    let (final_stats, _) = e_step_stats(&weights, &means, &covs, &vecs);
    let model = GmmModel {
        weights,
        means,
        covs,
        stats: if stats.is_some() { final_stats } else { final_stats.clone() },
        t: 0,
        sample_count: n as u64,
        dim: d,
    };
    model.check_invariants()?;
    Ok((model, report))
}

/// Sum of log mixture densities over the rows of `data`, log-sum-exp
/// stable. Empty data gives zero.
pub fn log_likelihood(model: &GmmModel, data: &[Vec<f64>]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let prepared = prepare(&model.weights, &model.means, &model.covs);
    let mut logp = vec![0.0; model.k()];
    data.iter()
        .map(|row| {
            let x = DVector::from_row_slice(row);
            for (j, comp) in prepared.iter().enumerate() {
                logp[j] = comp.log_weight + component_log_pdf(comp, &model.means[j], &x);
            }
            log_sum_exp(&logp)
        })
        .sum()
}

/// Draw n samples: component chosen by weight, then a Cholesky transform
/// of a standard normal draw. Deterministic per seed.
pub fn sample(model: &GmmModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chols: Vec<_> = model
        .covs
        .iter()
        .map(|c| c.clone().cholesky().expect("model covariances are SPD").l())
        .collect();
    let d = model.dim;
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.random_range(0.0..1.0);
            let mut comp = model.k() - 1;
            for (j, w) in model.weights.iter().enumerate() {
                if u < *w {
                    comp = j;
                    break;
                }
                u -= w;
            }
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &model.means[comp] + &chols[comp] * z;
            x.iter().copied().collect()
        })
        .collect()
}

/// One stepwise-EM update: an E-step over the new batch, then a blended
/// M-step with step size (t0 + t)^(-kappa). Returns a new snapshot; the
/// input model is untouched.
pub fn incremental_update(model: &GmmModel, new_data: &[Vec<f64>]) -> Result<GmmModel> {
    if new_data.is_empty() {
        return Err(Error::InvalidInput("incremental update needs data".into()));
    }
    let vecs = to_vectors(new_data);
    if vecs[0].len() != model.dim {
        return Err(Error::InvalidInput(format!(
            "expected {}-dimensional data, got {}",
            model.dim,
            vecs[0].len()
        )));
    }
    let eta = incremental_step_size(model.t);
    let (batch, _) = e_step_stats(&model.weights, &model.means, &model.covs, &vecs);

    let k = model.k();
    let mut stats = model.stats.clone();
    for j in 0..k {
        stats.s0[j] = (1.0 - eta) * stats.s0[j] + eta * batch.s0[j];
        stats.s1[j] = &stats.s1[j] * (1.0 - eta) + &batch.s1[j] * eta;
        stats.s2[j] = &stats.s2[j] * (1.0 - eta) + &batch.s2[j] * eta;
        stats.s0[j] = stats.s0[j].max(DEGENERATE_WEIGHT);
    }
    let (weights, means, covs) = m_step(&stats, BASE_JITTER)?;
    let out = GmmModel {
        weights,
        means,
        covs,
        stats,
        t: model.t + 1,
        sample_count: model.sample_count + new_data.len() as u64,
        dim: model.dim,
    };
    out.check_invariants()?;
    Ok(out)
}

/// JSON form: weights, means, covariance matrices row-major, accumulator
/// state and the batch counter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmFile {
    pub format_version: u32,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub acc_s0: Vec<f64>,
    pub acc_s1: Vec<Vec<f64>>,
    pub acc_s2: Vec<Vec<f64>>,
    pub t: u64,
    pub sample_count: u64,
}

pub const GMM_FORMAT_VERSION: u32 = 1;

impl GmmModel {
    pub fn to_file(&self) -> GmmFile {
        let flat = |m: &DMatrix<f64>| -> Vec<f64> {
            let mut out = Vec::with_capacity(self.dim * self.dim);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out.push(m[(i, j)]);
                }
            }
            out
        };
        GmmFile {
            format_version: GMM_FORMAT_VERSION,
            dim: self.dim,
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self.covs.iter().map(flat).collect(),
            acc_s0: self.stats.s0.clone(),
            acc_s1: self.stats.s1.iter().map(|m| m.iter().copied().collect()).collect(),
            acc_s2: self.stats.s2.iter().map(flat).collect(),
            t: self.t,
            sample_count: self.sample_count,
        }
    }

    pub fn from_file(f: &GmmFile) -> Result<Self> {
        if f.format_version != GMM_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported gmm format version {}",
                f.format_version
            )));
        }
        let d = f.dim;
        let unflat = |v: &Vec<f64>| -> Result<DMatrix<f64>> {
            if v.len() != d * d {
                return Err(Error::Parse("covariance size mismatch".into()));
            }
            Ok(DMatrix::from_row_slice(d, d, v))
        };
        let model = GmmModel {
            weights: f.weights.clone(),
            means: f.means.iter().map(|m| DVector::from_row_slice(m)).collect(),
            covs: f.covariances.iter().map(&unflat).collect::<Result<_>>()?,
            stats: SuffStats {
                s0: f.acc_s0.clone(),
                s1: f.acc_s1.iter().map(|m| DVector::from_row_slice(m)).collect(),
                s2: f.acc_s2.iter().map(&unflat).collect::<Result<_>>()?,
            },
            t: f.t,
            sample_count: f.sample_count,
            dim: d,
        };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let f: GmmFile = serde_json::from_str(&text)?;
        Self::from_file(&f)
    }
}
