//! Exhaustive enumeration oracles for tiny instances.
//!
//! Exact quantities here cost K^(N·T) potential evaluations, so a hard cap
//! guards every entry point. These are the reference implementations the
//! conditional and exchange machinery is validated against.

use rand::Rng;

use crate::graph::NeighborhoodSystem;

use super::params::LatentParams;
use super::potential::log_potential;
use super::{LatentError, LatentField};

/// Default cap on the number of enumerated configurations (2^20).
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 20;

fn config_count(k: usize, coords: usize, cap: u128) -> Result<u128, LatentError> {
    let mut total: u128 = 1;
    for _ in 0..coords {
        total = total
            .checked_mul(k as u128)
            .filter(|&c| c <= cap)
            .ok_or(LatentError::EnumerationTooLarge {
                configs: u128::MAX,
                cap,
            })?;
    }
    Ok(total)
}

/// Calls `visit` with every K^(N·T) field configuration in lexicographic
/// order (last coordinate fastest) along with its log potential.
fn for_each_config<F>(
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
    t_len: usize,
    cap: u128,
    mut visit: F,
) -> Result<(), LatentError>
where
    F: FnMut(&LatentField, f64),
{
    let n = graph.n_sites();
    let coords = n * t_len;
    let k = theta.k();
    config_count(k, coords, cap)?;
    let mut field = LatentField::zeros(n, t_len, k);
    loop {
        let lp = log_potential(&field, theta, graph)?;
        visit(&field, lp);
        // Odometer increment.
        let values = field.values_mut();
        let mut pos = coords;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            if (values[pos] as usize) + 1 < k {
                values[pos] += 1;
                break;
            }
            values[pos] = 0;
        }
    }
}

/// log Z_θ by exhaustive enumeration with a streaming log-sum-exp.
pub fn log_partition_exact(
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
    t_len: usize,
    cap: u128,
) -> Result<f64, LatentError> {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for_each_config(theta, graph, t_len, cap, |_, lp| {
        if lp > max {
            sum = sum * (max - lp).exp() + 1.0;
            max = lp;
        } else {
            sum += (lp - max).exp();
        }
    })?;
    Ok(max + sum.ln())
}

/// The full field distribution as (configuration, probability) pairs in
/// enumeration order. Probabilities are exp(log q − log Z) and sum to one.
pub fn exact_field_distribution(
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
    t_len: usize,
    cap: u128,
) -> Result<Vec<(LatentField, f64)>, LatentError> {
    let mut entries = Vec::new();
    for_each_config(theta, graph, t_len, cap, |field, lp| {
        entries.push((field.clone(), lp));
    })?;
    let log_z = {
        let lps: Vec<f64> = entries.iter().map(|(_, lp)| *lp).collect();
        super::potential::log_sum_exp(&lps)
    };
    Ok(entries
        .into_iter()
        .map(|(f, lp)| (f, (lp - log_z).exp()))
        .collect())
}

/// Inverse-CDF draw from an enumerated field distribution. Used as the
/// perfect sampler on tiny instances.
pub fn sample_exact_field<R: Rng + ?Sized>(
    distribution: &[(LatentField, f64)],
    rng: &mut R,
) -> LatentField {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (field, p) in distribution {
        acc += p;
        if u < acc {
            return field.clone();
        }
    }
    distribution.last().expect("empty distribution").0.clone()
}
