//! Per-parameter Metropolis moves for θ and the adaptive proposal scaling.
//!
//! Both engines propose a Gaussian random-walk move on one scalar parameter
//! at a time. They differ in how they beat the intractable normalizing
//! constant of the latent distribution:
//!
//! * the pseudo move scores the field with the product of its full
//!   conditionals, so the constant never appears;
//! * the exchange move augments with an auxiliary field ω drawn under the
//!   proposed parameter by a short Gibbs run and accepts with
//!   1 ∧ [p(θ̃) q_θ̃(u) q_θ(ω)] / [p(θ) q_θ(u) q_θ̃(ω)], in which the two
//!   constants cancel;
//! * the noisy variant averages J importance ratios q_θ(ω_j)/q_θ̃(ω_j) as an
//!   unbiased estimate of Z_θ/Z_θ̃ and plugs it into the plain
//!   Metropolis-Hastings ratio. J = 1 recovers the exchange move.
//!
//! The auxiliary Gibbs run is warm-started at the current latent field by
//! default; a fresh uniform start is kept behind a flag for ablation.

use rand::Rng;

use crate::graph::NeighborhoodSystem;
use crate::latent::{
    gibbs_sweep, log_potential, state_energies, LatentError, LatentField, LatentParams, ParamId,
};

use super::log_sum_exp;

/// What a single θ move did: the proposed scalar, the acceptance probability
/// min(1, ratio) actually evaluated, and whether the swap happened.
#[derive(Debug, Clone, Copy)]
pub struct ThetaStepOutcome {
    pub proposed_value: f64,
    pub alpha: f64,
    pub accepted: bool,
}

/// Log pseudo-likelihood of the field: the sum over every coordinate of the
/// log full conditional of its current label given all the others.
pub fn log_pseudo_likelihood(
    field: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
) -> Result<f64, LatentError> {
    let k = theta.k();
    let mut energies = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..field.n_sites() {
        for t in 0..field.t_len() {
            state_energies(&mut energies, i, t, field, theta, graph);
            total += energies[field.get(i, t)] - log_sum_exp(&energies);
        }
    }
    Ok(total)
}

fn propose<R: Rng + ?Sized>(
    theta: &LatentParams,
    param: ParamId,
    scale: f64,
    rng: &mut R,
) -> (LatentParams, f64) {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let value = theta.get(param) + scale * z;
    let mut proposal = theta.clone();
    proposal
        .set(param, value)
        .expect("free parameters stay settable");
    (proposal, value)
}

/// Gaussian log prior kernel; the normalizing constant cancels in every
/// ratio because the proposal never changes the prior standard deviation.
#[inline]
fn log_prior_kernel(value: f64, std: f64) -> f64 {
    -0.5 * (value / std).powi(2)
}

fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> (f64, bool) {
    let alpha = log_alpha.exp().min(1.0);
    let u: f64 = rng.random();
    (alpha, u < alpha)
}

/// One pseudo-posterior random-walk move on a single θ parameter.
pub fn pseudo_theta_step<R: Rng + ?Sized>(
    theta: &mut LatentParams,
    param: ParamId,
    field: &LatentField,
    graph: &NeighborhoodSystem,
    prior_std: f64,
    scale: f64,
    rng: &mut R,
) -> Result<ThetaStepOutcome, LatentError> {
    let (proposal, value) = propose(theta, param, scale, rng);
    let current = theta.get(param);
    let log_alpha = log_prior_kernel(value, prior_std) - log_prior_kernel(current, prior_std)
        + log_pseudo_likelihood(field, &proposal, graph)?
        - log_pseudo_likelihood(field, theta, graph)?;
    let (alpha, accepted) = accept(log_alpha, rng);
    if accepted {
        *theta = proposal;
    }
    Ok(ThetaStepOutcome {
        proposed_value: value,
        alpha,
        accepted,
    })
}

/// Draws the auxiliary field under `theta`: the current latent field (warm
/// start) or a fresh uniform field, advanced by `sweeps` Gibbs scans.
pub fn draw_auxiliary<R: Rng + ?Sized>(
    current: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
    sweeps: usize,
    warm_start: bool,
    rng: &mut R,
) -> Result<LatentField, LatentError> {
    let mut omega = if warm_start {
        current.clone()
    } else {
        LatentField::uniform_random(current.n_sites(), current.t_len(), current.k(), rng)
    };
    for _ in 0..sweeps {
        gibbs_sweep(&mut omega, theta, graph, rng)?;
    }
    Ok(omega)
}

/// Log of the noisy-exchange estimate of Z_θ / Z_θ̃:
/// log[(1/J) Σ_j q_θ(ω_j) / q_θ̃(ω_j)], accumulated with log-sum-exp.
pub fn noisy_z_ratio_log(
    theta: &LatentParams,
    theta_tilde: &LatentParams,
    omegas: &[LatentField],
    graph: &NeighborhoodSystem,
) -> Result<f64, LatentError> {
    assert!(!omegas.is_empty(), "need at least one auxiliary field");
    let mut diffs = Vec::with_capacity(omegas.len());
    for omega in omegas {
        diffs.push(log_potential(omega, theta, graph)? - log_potential(omega, theta_tilde, graph)?);
    }
    Ok(log_sum_exp(&diffs) - (omegas.len() as f64).ln())
}

/// One approximate-exchange move: the J = 1 case of the noisy move.
#[allow(clippy::too_many_arguments)]
pub fn exchange_theta_step<R: Rng + ?Sized>(
    theta: &mut LatentParams,
    param: ParamId,
    field: &LatentField,
    graph: &NeighborhoodSystem,
    prior_std: f64,
    scale: f64,
    aux_sweeps: usize,
    warm_start: bool,
    rng: &mut R,
) -> Result<ThetaStepOutcome, LatentError> {
    noisy_exchange_theta_step(
        theta, param, field, graph, prior_std, scale, aux_sweeps, warm_start, 1, rng,
    )
}

/// One noisy-exchange move with J auxiliary fields, each obtained from its
/// own warm-started Gibbs run under the proposed parameter.
#[allow(clippy::too_many_arguments)]
pub fn noisy_exchange_theta_step<R: Rng + ?Sized>(
    theta: &mut LatentParams,
    param: ParamId,
    field: &LatentField,
    graph: &NeighborhoodSystem,
    prior_std: f64,
    scale: f64,
    aux_sweeps: usize,
    warm_start: bool,
    j: usize,
    rng: &mut R,
) -> Result<ThetaStepOutcome, LatentError> {
    assert!(j >= 1, "need at least one auxiliary replicate");
    let (proposal, value) = propose(theta, param, scale, rng);
    let current = theta.get(param);
    let omegas: Vec<LatentField> = (0..j)
        .map(|_| draw_auxiliary(field, &proposal, graph, aux_sweeps, warm_start, rng))
        .collect::<Result<_, _>>()?;
    let log_alpha = log_prior_kernel(value, prior_std) - log_prior_kernel(current, prior_std)
        + log_potential(field, &proposal, graph)?
        - log_potential(field, theta, graph)?
        + noisy_z_ratio_log(theta, &proposal, &omegas, graph)?;
    let (alpha, accepted) = accept(log_alpha, rng);
    if accepted {
        *theta = proposal;
    }
    Ok(ThetaStepOutcome {
        proposed_value: value,
        alpha,
        accepted,
    })
}

/// Robbins-Monro update of a proposal scale: while the iteration lies inside
/// the adaptation horizon, log φ moves by (C/r)(α_observed − α*); afterwards
/// the stepsize is zero and the scale stays frozen.
pub fn adapt_scale(
    scale: f64,
    iteration: usize,
    total_iterations: usize,
    observed_alpha: f64,
    target_alpha: f64,
    stepsize_constant: f64,
    horizon_fraction: f64,
) -> f64 {
    debug_assert!(iteration >= 1);
    if (iteration as f64) > horizon_fraction * total_iterations as f64 {
        return scale;
    }
    let step = stepsize_constant / iteration as f64;
    let log_scale = scale.ln() + step * (observed_alpha - target_alpha);
    log_scale.clamp(-20.0, 20.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::full_conditional;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_theta(k: usize, rng: &mut ChaCha8Rng) -> LatentParams {
        let mut theta = LatentParams::zeros(k);
        for id in theta.free_params() {
            theta.set(id, rng.random_range(-1.5..1.5)).unwrap();
        }
        theta
    }

    #[test]
    fn pseudo_likelihood_matches_conditional_resum() {
        let g = NeighborhoodSystem::grid(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_theta(3, &mut rng);
        let field = LatentField::uniform_random(9, 2, 3, &mut rng);
        let fast = log_pseudo_likelihood(&field, &theta, &g).unwrap();
        let mut naive = 0.0;
        for i in 0..9 {
            for t in 0..2 {
                let fc = full_conditional(i, t, &field, &theta, &g).unwrap();
                naive += fc[field.get(i, t)].ln();
            }
        }
        assert!((fast - naive).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_proposal_always_accepts() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut theta = random_theta(2, &mut rng);
        let field = LatentField::uniform_random(4, 2, 2, &mut rng);
        for param in theta.free_params() {
            let out =
                pseudo_theta_step(&mut theta, param, &field, &g, 1.0, 0.0, &mut rng).unwrap();
            assert_eq!(out.alpha, 1.0);
            assert!(out.accepted);
            let out = exchange_theta_step(
                &mut theta, param, &field, &g, 1.0, 0.0, 3, true, &mut rng,
            )
            .unwrap();
            assert_eq!(out.alpha, 1.0, "exchange ratios must cancel exactly");
            assert!(out.accepted);
        }
    }

    #[test]
    fn pseudo_reduces_to_prior_ratio_without_relevant_terms() {
        // No edges and a single occasion: a spatial parameter contributes
        // nothing to the pseudo-likelihood, so α is the bare prior ratio.
        let g = NeighborhoodSystem::from_edges(5, vec![]).unwrap();
        let field = LatentField::zeros(5, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prior_std = 0.7;
        for _ in 0..50 {
            let mut theta = LatentParams::zeros(2);
            theta.set(ParamId::Gamma(0, 1), 0.4).unwrap();
            let before = theta.get(ParamId::Gamma(0, 1));
            let out = pseudo_theta_step(
                &mut theta,
                ParamId::Gamma(0, 1),
                &field,
                &g,
                prior_std,
                0.8,
                &mut rng,
            )
            .unwrap();
            let expected = ((-0.5 * (out.proposed_value / prior_std).powi(2))
                - (-0.5 * (before / prior_std).powi(2)))
            .exp()
            .min(1.0);
            assert!((out.alpha - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_ratio_is_one_for_equal_parameters() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = random_theta(2, &mut rng);
        let omegas: Vec<LatentField> = (0..4)
            .map(|_| LatentField::uniform_random(4, 2, 2, &mut rng))
            .collect();
        let log_ratio = noisy_z_ratio_log(&theta, &theta, &omegas, &g).unwrap();
        assert_eq!(log_ratio, 0.0);
    }

    #[test]
    fn noisy_single_replicate_equals_exchange_ratio() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = random_theta(2, &mut rng);
        let mut tilde = theta.clone();
        tilde.set(ParamId::Beta(0), theta.get(ParamId::Beta(0)) + 0.9).unwrap();
        let omega = LatentField::uniform_random(4, 2, 2, &mut rng);
        let noisy = noisy_z_ratio_log(&theta, &tilde, std::slice::from_ref(&omega), &g).unwrap();
        let plain = log_potential(&omega, &theta, &g).unwrap()
            - log_potential(&omega, &tilde, &g).unwrap();
        assert!((noisy - plain).abs() < 1e-15);
    }

    #[test]
    fn warm_start_initializes_from_current_field() {
        let g = NeighborhoodSystem::grid(3).unwrap();
        let theta = LatentParams::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let current = LatentField::uniform_random(9, 3, 2, &mut rng);
        // Zero sweeps expose the initialization directly.
        let warm = draw_auxiliary(&current, &theta, &g, 0, true, &mut rng).unwrap();
        assert_eq!(warm, current);
        let cold = draw_auxiliary(&current, &theta, &g, 0, false, &mut rng).unwrap();
        assert_ne!(cold, current);
    }

    #[test]
    fn adapt_scale_fixed_points() {
        let s = adapt_scale(0.5, 10, 100, 0.44, 0.44, 1.0, 0.5);
        assert_eq!(s, 0.5);
        let s = adapt_scale(0.5, 51, 100, 0.9, 0.44, 1.0, 0.5);
        assert_eq!(s, 0.5, "past the horizon the scale is frozen");
        let s = adapt_scale(0.5, 10, 100, 0.9, 0.44, 1.0, 0.5);
        assert!(s > 0.5, "high acceptance inflates the scale");
        let s = adapt_scale(0.5, 10, 100, 0.0, 0.44, 1.0, 0.5);
        assert!(s < 0.5, "low acceptance shrinks the scale");
    }

    #[test]
    fn adaptation_calibrates_on_normal_target() {
        // Scalar random-walk MH on N(0, 1) with the same adaptation rule the
        // chains use; the running acceptance must settle near the target.
        let target = 0.44;
        let total = 5000;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut x = 0.0f64;
        let mut scale = 8.0; // deliberately far off
        let mut accepted_late = 0usize;
        let mut late = 0usize;
        for r in 1..=total {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let prop = x + scale * z;
            let log_alpha = 0.5 * (x * x - prop * prop);
            let alpha = log_alpha.exp().min(1.0);
            let u: f64 = rng.random();
            if u < alpha {
                x = prop;
            }
            scale = adapt_scale(scale, r, total, alpha, target, 1.0, 0.5);
            if r > total / 2 {
                late += 1;
                if u < alpha {
                    accepted_late += 1;
                }
            }
        }
        let rate = accepted_late as f64 / late as f64;
        assert!((rate - target).abs() < 0.1, "late acceptance {rate}");
    }
}
