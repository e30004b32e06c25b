//! Potentials, full conditionals, log-odds and Gibbs sweeps for the latent
//! field.
//!
//! Everything is computed in log space. The spatial block of the potential
//! runs over ordered edge pairs (i, j) with i < j, so the conditional of one
//! coordinate has to pick up both orientations: edges where the site is the
//! smaller endpoint contribute row terms of the interaction matrix, edges
//! where it is the larger endpoint contribute column terms.

use rand::Rng;

use crate::graph::NeighborhoodSystem;

use super::params::{LatentParams, ParamId};
use super::{LatentError, LatentField};

fn check_dims(
    field: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
) -> Result<(), LatentError> {
    if field.n_sites() != graph.n_sites() {
        return Err(LatentError::DimensionMismatch(format!(
            "field has {} sites but graph has {}",
            field.n_sites(),
            graph.n_sites()
        )));
    }
    if field.k() != theta.k() {
        return Err(LatentError::DimensionMismatch(format!(
            "field has {} states but parameters have {}",
            field.k(),
            theta.k()
        )));
    }
    Ok(())
}

/// Log of the unnormalized density log q_θ(u).
///
/// Sums the initial-time prevalence and spatial blocks, and for every later
/// occasion the prevalence, spatial and temporal-transition blocks. The zero
/// constraints on θ make plain indexing equivalent to the indicator sums.
pub fn log_potential(
    field: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
) -> Result<f64, LatentError> {
    check_dims(field, theta, graph)?;
    let n = field.n_sites();
    let t_len = field.t_len();
    let mut total = 0.0;
    for i in 0..n {
        total += theta.beta(field.get(i, 0));
    }
    for (i, j) in graph.ordered_pairs() {
        total += theta.gamma(field.get(i, 0), field.get(j, 0));
    }
    for t in 1..t_len {
        for i in 0..n {
            let s = field.get(i, t);
            total += theta.beta_star(s);
            total += theta.delta(field.get(i, t - 1), s);
        }
        for (i, j) in graph.ordered_pairs() {
            total += theta.gamma_star(field.get(i, t), field.get(j, t));
        }
    }
    Ok(total)
}

/// Unnormalized log conditional energies of coordinate (i, t): for each
/// candidate state, the sum of every potential term that involves the
/// coordinate. `out` must have length K.
///
/// Energies depend only on the spatial neighbours at time t and on the same
/// site at t−1 and t+1, and nothing else.
pub fn state_energies(
    out: &mut [f64],
    site: usize,
    time: usize,
    field: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
) {
    let k = theta.k();
    debug_assert_eq!(out.len(), k);
    let t_len = field.t_len();
    let initial = time == 0;
    for (s, slot) in out.iter_mut().enumerate() {
        let mut e = if initial {
            theta.beta(s)
        } else {
            theta.beta_star(s)
        };
        for &j in graph.neighbors(site) {
            let uj = field.get(j, time);
            e += match (initial, j > site) {
                (true, true) => theta.gamma(s, uj),
                (true, false) => theta.gamma(uj, s),
                (false, true) => theta.gamma_star(s, uj),
                (false, false) => theta.gamma_star(uj, s),
            };
        }
        if time > 0 {
            e += theta.delta(field.get(site, time - 1), s);
        }
        if time + 1 < t_len {
            e += theta.delta(s, field.get(site, time + 1));
        }
        *slot = e;
    }
}

#[inline]
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Full conditional p(U_{i,t} = · | everything else), a length-K probability
/// vector normalized to sum 1.
pub fn full_conditional(
    site: usize,
    time: usize,
    field: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
) -> Result<Vec<f64>, LatentError> {
    check_dims(field, theta, graph)?;
    field.check_coord(site, time)?;
    let mut energies = vec![0.0; theta.k()];
    state_energies(&mut energies, site, time, field, theta, graph);
    let lse = log_sum_exp(&energies);
    for e in &mut energies {
        *e = (*e - lse).exp();
    }
    Ok(energies)
}

/// Log odds of state `w` against baseline `k` for coordinate (i, t): the
/// difference of the two conditional energies, which equals the difference
/// of the full log potentials with the coordinate set to `w` versus `k`.
pub fn log_odds(
    site: usize,
    time: usize,
    w: usize,
    baseline: usize,
    field: &LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
) -> Result<f64, LatentError> {
    check_dims(field, theta, graph)?;
    field.check_coord(site, time)?;
    let k = theta.k();
    for &s in &[w, baseline] {
        if s >= k {
            return Err(LatentError::StateOutOfRange { label: s, k });
        }
    }
    if w == baseline {
        return Err(LatentError::InvalidArgument(
            "log-odds states must differ".to_string(),
        ));
    }
    let mut energies = vec![0.0; k];
    state_energies(&mut energies, site, time, field, theta, graph);
    Ok(energies[w] - energies[baseline])
}

/// One systematic Gibbs scan over all coordinates in site-major order (all
/// occasions of site 0, then site 1, ...), resampling each coordinate from
/// its full conditional. Deterministic given the RNG state.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    field: &mut LatentField,
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
    rng: &mut R,
) -> Result<(), LatentError> {
    check_dims(field, theta, graph)?;
    let k = theta.k();
    if k == 1 {
        return Ok(());
    }
    let mut energies = vec![0.0; k];
    for i in 0..field.n_sites() {
        for t in 0..field.t_len() {
            state_energies(&mut energies, i, t, field, theta, graph);
            let s = sample_from_energies(&energies, rng);
            field.set(i, t, s);
        }
    }
    Ok(())
}

/// Inverse-CDF draw from softmax(energies). Consumes one uniform.
pub(crate) fn sample_from_energies<R: Rng + ?Sized>(energies: &[f64], rng: &mut R) -> usize {
    let lse = log_sum_exp(energies);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, &e) in energies.iter().enumerate() {
        acc += (e - lse).exp();
        if u < acc {
            return s;
        }
    }
    energies.len() - 1
}

/// The sufficient statistic of one atomic θ coordinate: the number of
/// occurrences of its indicator pattern in the field, so that
/// log q_θ(u) = Σ_p θ_p · sufficient_stat(u, p).
pub fn sufficient_stat(
    field: &LatentField,
    graph: &NeighborhoodSystem,
    coord: ParamId,
) -> f64 {
    let n = field.n_sites();
    let t_len = field.t_len();
    let mut count = 0usize;
    match coord {
        ParamId::Beta(u) => {
            count = (0..n).filter(|&i| field.get(i, 0) == u).count();
        }
        ParamId::BetaStar(u) => {
            for t in 1..t_len {
                count += (0..n).filter(|&i| field.get(i, t) == u).count();
            }
        }
        ParamId::Gamma(u, v) => {
            count = graph
                .ordered_pairs()
                .filter(|&(i, j)| field.get(i, 0) == u && field.get(j, 0) == v)
                .count();
        }
        ParamId::GammaStar(u, v) => {
            for t in 1..t_len {
                count += graph
                    .ordered_pairs()
                    .filter(|&(i, j)| field.get(i, t) == u && field.get(j, t) == v)
                    .count();
            }
        }
        ParamId::Delta(u, v) => {
            for t in 1..t_len {
                count += (0..n)
                    .filter(|&i| field.get(i, t - 1) == u && field.get(i, t) == v)
                    .count();
            }
        }
    }
    count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::ParsimonyFlags;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Term-by-term re-summation written directly from the three-block
    /// indicator form of the potential; deliberately loops over every
    /// (state, state) combination instead of indexing.
    fn brute_force_log_potential(
        field: &LatentField,
        theta: &LatentParams,
        graph: &NeighborhoodSystem,
    ) -> f64 {
        let k = theta.k();
        let n = field.n_sites();
        let mut total = 0.0;
        for i in 0..n {
            for u in 0..k.saturating_sub(1) {
                if field.get(i, 0) == u {
                    total += theta.beta(u);
                }
            }
        }
        for (i, j) in graph.ordered_pairs() {
            for u in 0..k {
                for v in 0..k {
                    if v != u && field.get(i, 0) == u && field.get(j, 0) == v {
                        total += theta.gamma(u, v);
                    }
                }
            }
        }
        for t in 1..field.t_len() {
            for i in 0..n {
                for u in 0..k.saturating_sub(1) {
                    if field.get(i, t) == u {
                        total += theta.beta_star(u);
                    }
                }
            }
            for (i, j) in graph.ordered_pairs() {
                for u in 0..k {
                    for v in 0..k {
                        if v != u && field.get(i, t) == u && field.get(j, t) == v {
                            total += theta.gamma_star(u, v);
                        }
                    }
                }
            }
            for i in 0..n {
                for u in 0..k {
                    for v in 0..k {
                        if v != u && field.get(i, t - 1) == u && field.get(i, t) == v {
                            total += theta.delta(u, v);
                        }
                    }
                }
            }
        }
        total
    }

    fn random_theta(k: usize, rng: &mut ChaCha8Rng) -> LatentParams {
        let mut theta = LatentParams::zeros(k);
        for id in theta.free_params() {
            let v: f64 = rng.random_range(-2.0..2.0);
            theta.set(id, v).unwrap();
        }
        theta
    }

    #[test]
    fn zero_theta_has_zero_potential() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let theta = LatentParams::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let field = LatentField::uniform_random(4, 3, 3, &mut rng);
        assert_eq!(log_potential(&field, &theta, &g).unwrap(), 0.0);
    }

    #[test]
    fn example_two_edge_graph_value() {
        // Four sites, edges 1-2 and 3-4, one occasion, states (1,2,1,2).
        let g = NeighborhoodSystem::from_edges(4, vec![(0, 1), (2, 3)]).unwrap();
        let field = LatentField::from_values(4, 1, 2, vec![0, 1, 0, 1]).unwrap();
        let mut theta = LatentParams::zeros(2);
        theta.set(ParamId::Beta(0), 0.8).unwrap();
        theta.set(ParamId::Gamma(0, 1), -0.4).unwrap();
        theta.set(ParamId::Gamma(1, 0), 5.0).unwrap();
        let lp = log_potential(&field, &theta, &g).unwrap();
        // 2·β₁ + 2·β₂(=0) + 2·γ₁₂; γ₂₁ never appears for this orientation.
        assert!((lp - (2.0 * 0.8 + 2.0 * -0.4)).abs() < 1e-15);
        for v in [-3.0, 0.0, 7.5] {
            theta.set(ParamId::Gamma(1, 0), v).unwrap();
            assert_eq!(log_potential(&field, &theta, &g).unwrap(), lp);
        }
        // ... but flipping the field orientation swaps which entry matters.
        let flipped = LatentField::from_values(4, 1, 2, vec![1, 0, 1, 0]).unwrap();
        theta.set(ParamId::Gamma(1, 0), 5.0).unwrap();
        let lp_flip = log_potential(&flipped, &theta, &g).unwrap();
        assert!((lp_flip - (2.0 * 0.8 + 2.0 * 5.0)).abs() < 1e-15);
    }

    #[test]
    fn conditional_is_uniform_for_zero_theta() {
        let g = NeighborhoodSystem::grid(3).unwrap();
        let theta = LatentParams::zeros(4);
        let field = LatentField::zeros(9, 2, 4);
        let p = full_conditional(4, 1, &field, &theta, &g).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_rejects_bad_coordinates() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let theta = LatentParams::zeros(2);
        let field = LatentField::zeros(4, 2, 2);
        assert!(matches!(
            full_conditional(4, 0, &field, &theta, &g),
            Err(LatentError::CoordOutOfRange { .. })
        ));
        assert!(matches!(
            full_conditional(0, 2, &field, &theta, &g),
            Err(LatentError::CoordOutOfRange { .. })
        ));
    }

    #[test]
    fn log_odds_zero_theta_and_argument_checks() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let theta = LatentParams::zeros(3);
        let field = LatentField::zeros(4, 1, 3);
        assert_eq!(log_odds(0, 0, 1, 2, &field, &theta, &g).unwrap(), 0.0);
        assert!(matches!(
            log_odds(0, 0, 1, 1, &field, &theta, &g),
            Err(LatentError::InvalidArgument(_))
        ));
    }

    #[test]
    fn log_odds_matches_initial_time_display() {
        // t = 1 with a later occasion present: β_w − β_k, the incident γ
        // differences and the forward δ difference.
        let g = NeighborhoodSystem::grid(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta = random_theta(3, &mut rng);
        let field = LatentField::uniform_random(4, 2, 3, &mut rng);
        let (w, k) = (0usize, 2usize);
        let i = 1; // neighbours: 0 (smaller) and 3 (larger)
        let by_display = theta.beta(w) - theta.beta(k)
            + theta.gamma(field.get(0, 0), w)
            - theta.gamma(field.get(0, 0), k)
            + theta.gamma(w, field.get(3, 0))
            - theta.gamma(k, field.get(3, 0))
            + theta.delta(w, field.get(i, 1))
            - theta.delta(k, field.get(i, 1));
        let lo = log_odds(i, 0, w, k, &field, &theta, &g).unwrap();
        assert!((lo - by_display).abs() < 1e-12);
    }

    #[test]
    fn log_odds_equals_potential_difference() {
        let g = NeighborhoodSystem::grid(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let theta = random_theta(3, &mut rng);
            let mut field = LatentField::uniform_random(9, 3, 3, &mut rng);
            let i = rng.random_range(0..9);
            let t = rng.random_range(0..3);
            let w = rng.random_range(0..3);
            let k = (w + 1 + rng.random_range(0..2)) % 3;
            field.set(i, t, w);
            let lp_w = log_potential(&field, &theta, &g).unwrap();
            field.set(i, t, k);
            let lp_k = log_potential(&field, &theta, &g).unwrap();
            let lo = log_odds(i, t, w, k, &field, &theta, &g).unwrap();
            assert!((lo - (lp_w - lp_k)).abs() < 1e-12);
            let lo_rev = log_odds(i, t, k, w, &field, &theta, &g).unwrap();
            assert!((lo + lo_rev).abs() < 1e-12);
            let cond = full_conditional(i, t, &field, &theta, &g).unwrap();
            assert!((lo - (cond[w].ln() - cond[k].ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn sufficient_stats_decompose_potential() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for flags in [
            ParsimonyFlags::default(),
            ParsimonyFlags {
                symmetric_interactions: true,
                shared_time: true,
            },
        ] {
            let mut theta = LatentParams::zeros_with_flags(3, flags);
            for id in theta.free_params() {
                theta.set(id, rng.random_range(-2.0..2.0)).unwrap();
            }
            let field = LatentField::uniform_random(4, 3, 3, &mut rng);
            let lp = log_potential(&field, &theta, &g).unwrap();
            let mut via_stats = 0.0;
            for id in theta.free_params() {
                let stat: f64 = theta
                    .tied_coords(id)
                    .into_iter()
                    .map(|c| sufficient_stat(&field, &g, c))
                    .sum();
                via_stats += theta.get(id) * stat;
            }
            assert!((lp - via_stats).abs() < 1e-12, "flags {flags:?}");
        }
    }

    #[test]
    fn gibbs_sweep_uniform_under_zero_theta() {
        let g = NeighborhoodSystem::grid(3).unwrap();
        let theta = LatentParams::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut field = LatentField::zeros(9, 4, 2);
        let mut ones = 0usize;
        let sweeps = 2000;
        for _ in 0..sweeps {
            gibbs_sweep(&mut field, &theta, &g, &mut rng).unwrap();
            ones += field.values().iter().filter(|&&v| v == 1).count();
        }
        let total = (sweeps * 36) as f64;
        let frac = ones as f64 / total;
        // 4σ binomial band around 1/2.
        assert!((frac - 0.5).abs() < 4.0 * 0.5 / total.sqrt(), "frac {frac}");
    }

    #[test]
    fn gibbs_sweep_single_state_noop() {
        let g = NeighborhoodSystem::grid(2).unwrap();
        let theta = LatentParams::zeros(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut field = LatentField::zeros(4, 2, 1);
        let before = field.clone();
        gibbs_sweep(&mut field, &theta, &g, &mut rng).unwrap();
        assert_eq!(field, before);
    }

    #[test]
    fn gibbs_sweep_deterministic_given_seed() {
        let g = NeighborhoodSystem::grid(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let theta = random_theta(2, &mut rng);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut field = LatentField::uniform_random(9, 3, 2, &mut rng);
            for _ in 0..5 {
                gibbs_sweep(&mut field, &theta, &g, &mut rng).unwrap();
            }
            field
        };
        assert_eq!(run(7), run(7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn potential_matches_brute_force(seed in 0u64..5000, k in 2usize..4, t_len in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = NeighborhoodSystem::erdos_renyi(4, 3, seed).unwrap();
            let theta = random_theta(k, &mut rng);
            let field = LatentField::uniform_random(4, t_len, k, &mut rng);
            let fast = log_potential(&field, &theta, &g).unwrap();
            let brute = brute_force_log_potential(&field, &theta, &g);
            prop_assert!((fast - brute).abs() < 1e-12);
        }
    }
}
