//! Posterior summaries and evaluation metrics.
//!
//! Convergence is monitored with the Geweke two-window test (spectral
//! variance estimates, 95% level), sampling noise with batch-means Monte
//! Carlo standard errors, model choice with DIC, and latent recovery with
//! marginal MAP decoding plus a label-permutation-aware misclassification
//! rate. MAE over replicated fits is the headline comparison between the
//! two engines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emission::{log_likelihood, Dataset, EmissionParams};
use crate::latent::{LatentField, LatentParams};
use crate::samplers::ChainOutput;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("chain of length {len} is too short (need at least {min})")]
    ChainTooShort { len: usize, min: usize },
    #[error("no stored latent-field draws; rerun with field storage enabled")]
    NoFieldDraws,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label-permutation search supports at most 6 states, got {0}")]
    TooManyStates(usize),
    #[error("column `{0}` missing from the chain output")]
    MissingColumn(String),
}

/// Geweke two-window convergence test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GewekeResult {
    pub z: f64,
    pub pass: bool,
}

/// Spectral density at frequency zero via Bartlett-windowed autocovariances
/// with lag window ⌊n^(1/3)⌋.
fn spectrum_at_zero(chain: &[f64]) -> f64 {
    let n = chain.len();
    let mean = chain.iter().sum::<f64>() / n as f64;
    let lag_max = (n as f64).powf(1.0 / 3.0).floor() as usize;
    let autocov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += (chain[i] - mean) * (chain[i + lag] - mean);
        }
        acc / n as f64
    };
    let mut s = autocov(0);
    for lag in 1..=lag_max.min(n - 1) {
        let w = 1.0 - lag as f64 / (lag_max + 1) as f64;
        s += 2.0 * w * autocov(lag);
    }
    s.max(0.0)
}

/// Compares the means of the first `frac_a` and last `frac_b` of the chain,
/// standardized by spectral-density-at-zero variance estimates. Passes at
/// the 95% level when |z| < 1.96.
pub fn geweke(chain: &[f64], frac_a: f64, frac_b: f64) -> Result<GewekeResult, DiagnosticsError> {
    if chain.len() < 100 {
        return Err(DiagnosticsError::ChainTooShort {
            len: chain.len(),
            min: 100,
        });
    }
    assert!(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0);
    let n = chain.len();
    let n_a = ((n as f64) * frac_a).floor() as usize;
    let n_b = ((n as f64) * frac_b).floor() as usize;
    let head = &chain[..n_a];
    let tail = &chain[n - n_b..];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let diff = mean(head) - mean(tail);
    let var = spectrum_at_zero(head) / n_a as f64 + spectrum_at_zero(tail) / n_b as f64;
    let z = if diff == 0.0 {
        0.0
    } else {
        diff / var.sqrt()
    };
    Ok(GewekeResult {
        z,
        pass: z.abs() < 1.96,
    })
}

/// Monte Carlo standard error of the chain mean from nonoverlapping batch
/// means with batch size ⌊√n⌋.
pub fn mcse_batch_means(chain: &[f64]) -> Result<f64, DiagnosticsError> {
    let n = chain.len();
    if n < 100 {
        return Err(DiagnosticsError::ChainTooShort { len: n, min: 100 });
    }
    let batch = (n as f64).sqrt().floor() as usize;
    let n_batches = n / batch;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| chain[b * batch..(b + 1) * batch].iter().sum::<f64>() / batch as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok((var / n_batches as f64).sqrt())
}

/// Rebuilds the emission parameters encoded in one draw row.
pub(crate) fn emission_params_from_row(output: &ChainOutput, row: &[f64]) -> EmissionParams {
    let (k, d) = (output.k, output.d);
    let mut offset = output.n_theta;
    let mut means = Vec::with_capacity(k);
    for _ in 0..k {
        means.push(DVector::from_fn(d, |c, _| row[offset + c]));
        offset += d;
    }
    let mut covs = Vec::with_capacity(k);
    for _ in 0..k {
        let mut cov = DMatrix::zeros(d, d);
        for h in 0..d {
            for l in h..d {
                cov[(h, l)] = row[offset];
                cov[(l, h)] = row[offset];
                offset += 1;
            }
        }
        covs.push(cov);
    }
    EmissionParams::new(means, covs).expect("recorded draws encode valid parameters")
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DicResult {
    /// Observed-data DIC: the headline criterion used for state selection.
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub plug_in_deviance: f64,
    /// Complete-data DIC, reported alongside for comparison.
    pub complete_dic: f64,
    pub complete_p_d: f64,
    pub complete_mean_deviance: f64,
    pub complete_plug_in_deviance: f64,
}

/// Observed-data deviance: −2 Σ_{i,t} log Σ_u w_u N(y_{i,t}; μ_u, Σ_u),
/// with occupancy weights w.
fn mixture_deviance(dataset: &Dataset, params: &EmissionParams, weights: &[f64]) -> f64 {
    let k = params.k();
    let table = crate::emission::log_likelihood_table(dataset, params);
    let log_w: Vec<f64> = weights
        .iter()
        .map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut dev = 0.0;
    let mut terms = vec![0.0; k];
    for coord in 0..dataset.n_sites() * dataset.t_len() {
        for u in 0..k {
            terms[u] = log_w[u] + table[coord * k + u];
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        dev += -2.0 * lse;
    }
    dev
}

fn occupancy(field: &LatentField, k: usize) -> Vec<f64> {
    let total = field.values().len() as f64;
    let mut w = vec![0.0; k];
    for &v in field.values() {
        w[v as usize] += 1.0 / total;
    }
    w
}

/// Deviance information criteria from the stored draws, in two variants.
///
/// The observed-data variant scores each coordinate against the state
/// mixture implied by the draw (emission densities weighted by the field
/// draw's state occupancies), with the plug-in at posterior-mean emissions
/// and mean occupancies. The complete-data variant scores against the
/// conditional likelihood p(y | u, μ, Σ), with the plug-in at
/// posterior-mean emissions and the marginal MAP field. Both use
/// DIC = D̄ + p_D with p_D = D̄ − D(plug-in).
///
/// Splitting a well-fitted state always improves the complete-data
/// deviance, so that variant tends to overshoot the state count; selection
/// goes by the observed-data variant.
pub fn dic(output: &ChainOutput, dataset: &Dataset) -> Result<DicResult, DiagnosticsError> {
    if output.field_draws.is_empty() {
        return Err(DiagnosticsError::NoFieldDraws);
    }
    let k = output.k;
    let draws_n = output.field_draws.len() as f64;
    let mut complete_mean = 0.0;
    let mut mixture_mean = 0.0;
    let mut weight_sum = vec![0.0; k];
    for (draw_idx, field) in &output.field_draws {
        let params = emission_params_from_row(output, &output.draws[*draw_idx]);
        complete_mean += -2.0 * log_likelihood(dataset, field, &params);
        let w = occupancy(field, k);
        mixture_mean += mixture_deviance(dataset, &params, &w);
        for (acc, v) in weight_sum.iter_mut().zip(&w) {
            *acc += v;
        }
    }
    complete_mean /= draws_n;
    mixture_mean /= draws_n;
    let mean_weights: Vec<f64> = weight_sum.iter().map(|w| w / draws_n).collect();
    let n_cols = output.param_names.len();
    let mut mean_row = vec![0.0; n_cols];
    for row in &output.draws {
        for (acc, v) in mean_row.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut mean_row {
        *v /= output.draws.len() as f64;
    }
    let mean_params = emission_params_from_row(output, &mean_row);
    let map_field = map_decode(output)?;
    let complete_plug_in = -2.0 * log_likelihood(dataset, &map_field, &mean_params);
    let complete_p_d = complete_mean - complete_plug_in;
    let mixture_plug_in = mixture_deviance(dataset, &mean_params, &mean_weights);
    let mixture_p_d = mixture_mean - mixture_plug_in;
    Ok(DicResult {
        dic: mixture_mean + mixture_p_d,
        p_d: mixture_p_d,
        mean_deviance: mixture_mean,
        plug_in_deviance: mixture_plug_in,
        complete_dic: complete_mean + complete_p_d,
        complete_p_d,
        complete_mean_deviance: complete_mean,
        complete_plug_in_deviance: complete_plug_in,
    })
}

/// Marginal MAP decoding: the per-coordinate modal state over the stored
/// field draws (ties resolved toward the smaller label).
pub fn map_decode(output: &ChainOutput) -> Result<LatentField, DiagnosticsError> {
    let Some((_, first)) = output.field_draws.first() else {
        return Err(DiagnosticsError::NoFieldDraws);
    };
    let (n, t_len, k) = (first.n_sites(), first.t_len(), first.k());
    let mut field = LatentField::zeros(n, t_len, k);
    let mut counts = vec![0usize; k];
    for i in 0..n {
        for t in 0..t_len {
            counts.iter_mut().for_each(|c| *c = 0);
            for (_, draw) in &output.field_draws {
                counts[draw.get(i, t)] += 1;
            }
            let best = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(s, _)| s)
                .unwrap();
            field.set(i, t, best);
        }
    }
    Ok(field)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for p in &out {
            for s in 0..k {
                if !p.contains(&s) {
                    let mut q = p.clone();
                    q.push(s);
                    next.push(q);
                }
            }
        }
        out = next;
    }
    out
}

/// Fraction of coordinates that differ after the best global label
/// permutation (exhaustive over K! permutations, K ≤ 6).
pub fn misclassification(
    estimated: &LatentField,
    truth: &LatentField,
) -> Result<f64, DiagnosticsError> {
    if estimated.n_sites() != truth.n_sites() || estimated.t_len() != truth.t_len() {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            estimated.n_sites(),
            estimated.t_len(),
            truth.n_sites(),
            truth.t_len()
        )));
    }
    let k = estimated.k().max(truth.k());
    if k > 6 {
        return Err(DiagnosticsError::TooManyStates(k));
    }
    let total = estimated.values().len();
    let mut best = total;
    for perm in permutations(k) {
        let mismatches = estimated
            .values()
            .iter()
            .zip(truth.values())
            .filter(|&(&e, &t)| perm[e as usize] != t as usize)
            .count();
        best = best.min(mismatches);
    }
    Ok(best as f64 / total as f64)
}

/// Per-parameter mean absolute error of replicate estimates against the
/// generating values: MAE_p = (1/D) Σ_d |θ̂_{p,d} − θ_p|.
pub fn mae(estimates: &[Vec<f64>], truths: &[f64]) -> Vec<f64> {
    assert!(!estimates.is_empty(), "need at least one replicate");
    let mut out = vec![0.0; truths.len()];
    for rep in estimates {
        assert_eq!(rep.len(), truths.len());
        for (acc, (est, truth)) in out.iter_mut().zip(rep.iter().zip(truths)) {
            *acc += (est - truth).abs();
        }
    }
    for v in &mut out {
        *v /= estimates.len() as f64;
    }
    out
}

/// Applies the state permutation `perm` (new label u takes old label
/// perm[u]) to a θ vector, re-zeroing the pinned entries.
fn permute_theta(theta: &LatentParams, perm: &[usize]) -> LatentParams {
    let k = theta.k();
    let pick = |vals: &dyn Fn(usize) -> f64, u: usize| vals(perm[u]);
    let beta_raw: Vec<f64> = (0..k).map(|u| pick(&|x| theta.beta(x), u)).collect();
    let beta_star_raw: Vec<f64> = (0..k).map(|u| pick(&|x| theta.beta_star(x), u)).collect();
    // Shifting a prevalence vector by a constant leaves the distribution
    // unchanged, so re-zero the last entry.
    let beta: Vec<f64> = beta_raw.iter().map(|b| b - beta_raw[k - 1]).collect();
    let beta_star: Vec<f64> = beta_star_raw
        .iter()
        .map(|b| b - beta_star_raw[k - 1])
        .collect();
    let mat = |get: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..k)
            .map(|u| (0..k).map(|v| get(perm[u], perm[v])).collect())
            .collect()
    };
    LatentParams::new(
        k,
        beta,
        beta_star,
        mat(&|u, v| theta.gamma(u, v)),
        mat(&|u, v| theta.gamma_star(u, v)),
        mat(&|u, v| theta.delta(u, v)),
        theta.flags(),
    )
    .expect("permuted parameters stay valid")
}

/// Post-hoc relabeling: within every stored draw, reorders the states so the
/// first coordinates of the μ_u are increasing, and applies the same
/// permutation to θ, the emission parameters and any stored field. Opt-in;
/// chains are not relabeled online.
pub fn relabel_by_mean_order(output: &ChainOutput) -> ChainOutput {
    let k = output.k;
    if k < 2 {
        return output.clone();
    }
    let template = {
        // Reconstruct the parsimony-free template implied by the names; the
        // recorded free parameters fix the layout.
        LatentParams::zeros(k)
    };
    let free = template.free_params();
    let mut relabeled = output.clone();
    for (row_idx, row) in relabeled.draws.iter_mut().enumerate() {
        let params = emission_params_from_row(output, &output.draws[row_idx]);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            params.mean(a)[0]
                .partial_cmp(&params.mean(b)[0])
                .expect("finite means")
        });
        if order.iter().enumerate().all(|(i, &p)| i == p) {
            continue;
        }
        // θ part.
        if output.n_theta == free.len() {
            let mut theta = template.clone();
            for (p, v) in free.iter().zip(row.iter()) {
                theta.set(*p, *v).unwrap();
            }
            let permuted = permute_theta(&theta, &order);
            for (p, v) in free.iter().zip(row.iter_mut()) {
                *v = permuted.get(*p);
            }
        }
        // Emission part.
        let mut offset = output.n_theta;
        for &old in &order {
            for c in 0..output.d {
                row[offset] = params.mean(old)[c];
                offset += 1;
            }
        }
        for &old in &order {
            for h in 0..output.d {
                for l in h..output.d {
                    row[offset] = params.cov(old)[(h, l)];
                    offset += 1;
                }
            }
        }
        // Field part: old label ℓ becomes the new label holding position ℓ.
        let mut inverse = vec![0usize; k];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        for (draw_idx, field) in relabeled.field_draws.iter_mut() {
            if *draw_idx == row_idx {
                let mut remapped = field.clone();
                for i in 0..field.n_sites() {
                    for t in 0..field.t_len() {
                        remapped.set(i, t, inverse[field.get(i, t)]);
                    }
                }
                *field = remapped;
            }
        }
    }
    relabeled
}

/// Per-parameter diagnostics row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub posterior_mean: f64,
    pub mcse: f64,
    pub geweke_z: f64,
    pub geweke_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
}

/// Full report for one fitted chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub parameters: Vec<ParamDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_deviance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complete_dic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complete_p_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<f64>,
    /// Marginal MAP field as 1-based labels, indexed `[site][time]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_field: Option<Vec<Vec<usize>>>,
    /// Mean absolute error over the θ parameters with known truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_mean_abs_error: Option<f64>,
}

/// Builds the standard report: per-parameter summaries, and, when the
/// dataset carries its generating truth and fields were stored, the DIC,
/// MAP field, misclassification rate and per-parameter errors.
pub fn report(output: &ChainOutput, dataset: &Dataset) -> Result<DiagnosticsReport, DiagnosticsError> {
    let truth_by_name = dataset.truth.as_ref().map(truth_values);
    let mut parameters = Vec::with_capacity(output.param_names.len());
    let mut theta_errs = Vec::new();
    for (idx, name) in output.param_names.iter().enumerate() {
        let chain = output.column(idx);
        let posterior_mean = chain.iter().sum::<f64>() / chain.len() as f64;
        let mcse = mcse_batch_means(&chain)?;
        let gw = geweke(&chain, 0.1, 0.5)?;
        let truth = truth_by_name
            .as_ref()
            .and_then(|tv| tv.iter().find(|(n, _)| n == name).map(|(_, v)| *v));
        let abs_error = truth.map(|t| (posterior_mean - t).abs());
        if let Some(err) = abs_error {
            if idx < output.n_theta {
                theta_errs.push(err);
            }
        }
        parameters.push(ParamDiagnostics {
            name: name.clone(),
            posterior_mean,
            mcse,
            geweke_z: gw.z,
            geweke_pass: gw.pass,
            truth,
            abs_error,
        });
    }
    let dic_result = if output.field_draws.is_empty() {
        None
    } else {
        Some(dic(output, dataset)?)
    };
    let map_field = if output.field_draws.is_empty() {
        None
    } else {
        Some(map_decode(output)?)
    };
    let misclass = match (&map_field, &dataset.truth) {
        (Some(field), Some(truth)) => Some(misclassification(field, &truth.field)?),
        _ => None,
    };
    Ok(DiagnosticsReport {
        parameters,
        dic: dic_result.map(|d| d.dic),
        p_d: dic_result.map(|d| d.p_d),
        mean_deviance: dic_result.map(|d| d.mean_deviance),
        complete_dic: dic_result.map(|d| d.complete_dic),
        complete_p_d: dic_result.map(|d| d.complete_p_d),
        misclassification: misclass,
        map_field: map_field.map(|f| {
            (0..f.n_sites())
                .map(|i| (0..f.t_len()).map(|t| f.get(i, t) + 1).collect())
                .collect()
        }),
        theta_mean_abs_error: if theta_errs.is_empty() {
            None
        } else {
            Some(theta_errs.iter().sum::<f64>() / theta_errs.len() as f64)
        },
    })
}

/// Scalar truth values named like the chain columns.
pub fn truth_values(truth: &crate::emission::GroundTruth) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for p in truth.theta.free_params() {
        out.push((p.name(), truth.theta.get(p)));
    }
    let (k, d) = (truth.emission.k(), truth.emission.d());
    for u in 0..k {
        for c in 0..d {
            out.push((format!("mu_{}_{}", u + 1, c + 1), truth.emission.mean(u)[c]));
        }
    }
    for u in 0..k {
        for h in 0..d {
            for l in h..d {
                out.push((
                    format!("sigma_{}_{}_{}", u + 1, h + 1, l + 1),
                    truth.emission.cov(u)[(h, l)],
                ));
            }
        }
    }
    out
}
