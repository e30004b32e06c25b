//! Latent-process parameters and their identifiability constraints.

use serde::{Deserialize, Serialize};

use super::LatentError;

/// Optional parsimonious parameterizations.
///
/// `symmetric_interactions` ties each interaction matrix to its transpose
/// (same dependence from state u to v as from v to u); `shared_time` reuses
/// the initial-time prevalence and spatial parameters at every occasion
/// (β = β*, γ = γ*). Both are hard equality constraints on the stored
/// parameters, maintained by every update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsimonyFlags {
    pub symmetric_interactions: bool,
    pub shared_time: bool,
}

/// One scalar coordinate of θ. State indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Beta(usize),
    BetaStar(usize),
    Gamma(usize, usize),
    GammaStar(usize, usize),
    Delta(usize, usize),
}

/// Parameter families, used to pick prior standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFamily {
    Beta,
    BetaStar,
    Gamma,
    GammaStar,
    Delta,
}

impl ParamId {
    /// Column name with 1-based indices, e.g. `beta_1`, `gamma_star_1_2`.
    pub fn name(&self) -> String {
        match *self {
            ParamId::Beta(u) => format!("beta_{}", u + 1),
            ParamId::BetaStar(u) => format!("beta_star_{}", u + 1),
            ParamId::Gamma(u, v) => format!("gamma_{}_{}", u + 1, v + 1),
            ParamId::GammaStar(u, v) => format!("gamma_star_{}_{}", u + 1, v + 1),
            ParamId::Delta(u, v) => format!("delta_{}_{}", u + 1, v + 1),
        }
    }

    pub fn family(&self) -> ParamFamily {
        match self {
            ParamId::Beta(_) => ParamFamily::Beta,
            ParamId::BetaStar(_) => ParamFamily::BetaStar,
            ParamId::Gamma(_, _) => ParamFamily::Gamma,
            ParamId::GammaStar(_, _) => ParamFamily::GammaStar,
            ParamId::Delta(_, _) => ParamFamily::Delta,
        }
    }
}

/// The full parameter set θ = {β, β*, γ, γ*, δ} of the latent process.
///
/// Invariants held at all times: the last entry of β and β* is zero, the
/// diagonals of γ, γ* and δ are zero, and any active parsimony constraint is
/// satisfied exactly. Interaction matrices are stored dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    k: usize,
    beta: Vec<f64>,
    beta_star: Vec<f64>,
    gamma: Vec<f64>,
    gamma_star: Vec<f64>,
    delta: Vec<f64>,
    flags: ParsimonyFlags,
}

impl LatentParams {
    /// All-zero parameters (the uniform field distribution).
    pub fn zeros(k: usize) -> Self {
        Self::zeros_with_flags(k, ParsimonyFlags::default())
    }

    pub fn zeros_with_flags(k: usize, flags: ParsimonyFlags) -> Self {
        assert!(k >= 1, "need at least one state");
        Self {
            k,
            beta: vec![0.0; k],
            beta_star: vec![0.0; k],
            gamma: vec![0.0; k * k],
            gamma_star: vec![0.0; k * k],
            delta: vec![0.0; k * k],
            flags,
        }
    }

    /// Builds θ from dense components, rejecting any violated constraint.
    ///
    /// `beta`/`beta_star` must have length K with last entry 0; the matrices
    /// are K×K row-major with zero diagonals. Active parsimony flags must
    /// already hold in the supplied values.
    pub fn new(
        k: usize,
        beta: Vec<f64>,
        beta_star: Vec<f64>,
        gamma: Vec<Vec<f64>>,
        gamma_star: Vec<Vec<f64>>,
        delta: Vec<Vec<f64>>,
        flags: ParsimonyFlags,
    ) -> Result<Self, LatentError> {
        let fail = |msg: String| Err(LatentError::ConstraintViolation(msg));
        if beta.len() != k || beta_star.len() != k {
            return fail(format!("prevalence vectors must have length {k}"));
        }
        if beta[k - 1] != 0.0 || beta_star[k - 1] != 0.0 {
            return fail("last prevalence entry must be exactly zero".to_string());
        }
        let flatten = |name: &str, m: &[Vec<f64>]| -> Result<Vec<f64>, LatentError> {
            if m.len() != k || m.iter().any(|row| row.len() != k) {
                return Err(LatentError::ConstraintViolation(format!(
                    "{name} must be a {k}x{k} matrix"
                )));
            }
            let mut flat = Vec::with_capacity(k * k);
            for (u, row) in m.iter().enumerate() {
                if row[u] != 0.0 {
                    return Err(LatentError::ConstraintViolation(format!(
                        "{name} diagonal entry ({},{}) must be exactly zero",
                        u + 1,
                        u + 1
                    )));
                }
                flat.extend_from_slice(row);
            }
            Ok(flat)
        };
        let gamma = flatten("gamma", &gamma)?;
        let gamma_star = flatten("gamma_star", &gamma_star)?;
        let delta = flatten("delta", &delta)?;
        if flags.symmetric_interactions {
            for (name, m) in [("gamma", &gamma), ("gamma_star", &gamma_star), ("delta", &delta)] {
                for u in 0..k {
                    for v in (u + 1)..k {
                        if m[u * k + v] != m[v * k + u] {
                            return fail(format!("{name} must be symmetric under parsimony flags"));
                        }
                    }
                }
            }
        }
        if flags.shared_time && (beta != beta_star || gamma != gamma_star) {
            return fail("shared_time requires beta = beta_star and gamma = gamma_star".to_string());
        }
        Ok(Self {
            k,
            beta,
            beta_star,
            gamma,
            gamma_star,
            delta,
            flags,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn flags(&self) -> ParsimonyFlags {
        self.flags
    }

    #[inline]
    pub fn beta(&self, u: usize) -> f64 {
        self.beta[u]
    }

    #[inline]
    pub fn beta_star(&self, u: usize) -> f64 {
        self.beta_star[u]
    }

    #[inline]
    pub fn gamma(&self, u: usize, v: usize) -> f64 {
        self.gamma[u * self.k + v]
    }

    #[inline]
    pub fn gamma_star(&self, u: usize, v: usize) -> f64 {
        self.gamma_star[u * self.k + v]
    }

    #[inline]
    pub fn delta(&self, u: usize, v: usize) -> f64 {
        self.delta[u * self.k + v]
    }

    pub fn beta_vec(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_star_vec(&self) -> &[f64] {
        &self.beta_star
    }

    pub fn gamma_matrix(&self) -> Vec<Vec<f64>> {
        self.rows(&self.gamma)
    }

    pub fn gamma_star_matrix(&self) -> Vec<Vec<f64>> {
        self.rows(&self.gamma_star)
    }

    pub fn delta_matrix(&self) -> Vec<Vec<f64>> {
        self.rows(&self.delta)
    }

    fn rows(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        flat.chunks(self.k).map(|r| r.to_vec()).collect()
    }

    /// The free scalar parameters under the active constraints, in the fixed
    /// update order β, β*, γ, γ*, δ (row-major within matrices).
    pub fn free_params(&self) -> Vec<ParamId> {
        let k = self.k;
        let mut out = Vec::new();
        for u in 0..k.saturating_sub(1) {
            out.push(ParamId::Beta(u));
        }
        if !self.flags.shared_time {
            for u in 0..k.saturating_sub(1) {
                out.push(ParamId::BetaStar(u));
            }
        }
        let offdiag = |out: &mut Vec<ParamId>, make: fn(usize, usize) -> ParamId| {
            for u in 0..k {
                for v in 0..k {
                    if u != v && (!self.flags.symmetric_interactions || u < v) {
                        out.push(make(u, v));
                    }
                }
            }
        };
        offdiag(&mut out, ParamId::Gamma);
        if !self.flags.shared_time {
            offdiag(&mut out, ParamId::GammaStar);
        }
        offdiag(&mut out, ParamId::Delta);
        out
    }

    /// The atomic θ coordinates tied to a free parameter: the parameter
    /// itself plus every mirror the parsimony flags impose. The sufficient
    /// statistic of a free parameter is the sum over its tied coordinates.
    pub fn tied_coords(&self, id: ParamId) -> Vec<ParamId> {
        let mut out = vec![id];
        match id {
            ParamId::Beta(u) => {
                if self.flags.shared_time {
                    out.push(ParamId::BetaStar(u));
                }
            }
            ParamId::Gamma(u, v) => {
                if self.flags.symmetric_interactions {
                    out.push(ParamId::Gamma(v, u));
                }
                if self.flags.shared_time {
                    out.push(ParamId::GammaStar(u, v));
                    if self.flags.symmetric_interactions {
                        out.push(ParamId::GammaStar(v, u));
                    }
                }
            }
            ParamId::BetaStar(u) => {
                if self.flags.shared_time {
                    out.push(ParamId::Beta(u));
                }
            }
            ParamId::GammaStar(u, v) => {
                if self.flags.symmetric_interactions {
                    out.push(ParamId::GammaStar(v, u));
                }
                if self.flags.shared_time {
                    out.push(ParamId::Gamma(u, v));
                    if self.flags.symmetric_interactions {
                        out.push(ParamId::Gamma(v, u));
                    }
                }
            }
            ParamId::Delta(u, v) => {
                if self.flags.symmetric_interactions {
                    out.push(ParamId::Delta(v, u));
                }
            }
        }
        out.dedup();
        out
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::Beta(u) => self.beta[u],
            ParamId::BetaStar(u) => self.beta_star[u],
            ParamId::Gamma(u, v) => self.gamma(u, v),
            ParamId::GammaStar(u, v) => self.gamma_star(u, v),
            ParamId::Delta(u, v) => self.delta(u, v),
        }
    }

    /// Sets a free parameter, writing through to all tied coordinates so that
    /// the parsimony constraints keep holding. Rejects constrained entries
    /// (the last prevalence slot and matrix diagonals).
    pub fn set(&mut self, id: ParamId, value: f64) -> Result<(), LatentError> {
        let k = self.k;
        let check_state = |u: usize| -> Result<(), LatentError> {
            if u >= k {
                return Err(LatentError::StateOutOfRange { label: u, k });
            }
            Ok(())
        };
        match id {
            ParamId::Beta(u) | ParamId::BetaStar(u) => {
                check_state(u)?;
                if u == k - 1 {
                    return Err(LatentError::ConstraintViolation(
                        "last prevalence entry is pinned to zero".to_string(),
                    ));
                }
            }
            ParamId::Gamma(u, v) | ParamId::GammaStar(u, v) | ParamId::Delta(u, v) => {
                check_state(u)?;
                check_state(v)?;
                if u == v {
                    return Err(LatentError::ConstraintViolation(
                        "interaction diagonals are pinned to zero".to_string(),
                    ));
                }
            }
        }
        for coord in self.tied_coords(id) {
            match coord {
                ParamId::Beta(u) => self.beta[u] = value,
                ParamId::BetaStar(u) => self.beta_star[u] = value,
                ParamId::Gamma(u, v) => self.gamma[u * k + v] = value,
                ParamId::GammaStar(u, v) => self.gamma_star[u * k + v] = value,
                ParamId::Delta(u, v) => self.delta[u * k + v] = value,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(k: usize, off: f64) -> Vec<Vec<f64>> {
        (0..k)
            .map(|u| (0..k).map(|v| if u == v { 0.0 } else { off }).collect())
            .collect()
    }

    #[test]
    fn constructor_rejects_nonzero_constraints() {
        let z = square(2, 0.0);
        assert!(LatentParams::new(
            2,
            vec![1.0, 0.5],
            vec![0.0, 0.0],
            z.clone(),
            z.clone(),
            z.clone(),
            ParsimonyFlags::default(),
        )
        .is_err());
        let mut bad = square(2, 0.0);
        bad[1][1] = 0.3;
        assert!(LatentParams::new(
            2,
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            bad,
            z.clone(),
            z,
            ParsimonyFlags::default(),
        )
        .is_err());
    }

    #[test]
    fn parsimony_checked_on_construction() {
        let mut asym = square(2, 0.0);
        asym[0][1] = 1.0;
        asym[1][0] = -1.0;
        let sym = square(2, 0.5);
        let flags = ParsimonyFlags {
            symmetric_interactions: true,
            shared_time: false,
        };
        assert!(LatentParams::new(
            2,
            vec![0.0; 2],
            vec![0.0; 2],
            asym,
            sym.clone(),
            sym.clone(),
            flags,
        )
        .is_err());
        assert!(LatentParams::new(
            2,
            vec![0.0; 2],
            vec![0.0; 2],
            sym.clone(),
            sym.clone(),
            sym,
            flags,
        )
        .is_ok());
    }

    #[test]
    fn free_param_counts() {
        let k = 2;
        let none = LatentParams::zeros(k);
        assert_eq!(none.free_params().len(), 2 * (k - 1) + 3 * k * (k - 1));
        let sym = LatentParams::zeros_with_flags(
            k,
            ParsimonyFlags {
                symmetric_interactions: true,
                shared_time: false,
            },
        );
        assert_eq!(sym.free_params().len(), 2 * (k - 1) + 3 * k * (k - 1) / 2);
        let shared = LatentParams::zeros_with_flags(
            k,
            ParsimonyFlags {
                symmetric_interactions: false,
                shared_time: true,
            },
        );
        assert_eq!(shared.free_params().len(), (k - 1) + 2 * k * (k - 1));
        let both = LatentParams::zeros_with_flags(
            k,
            ParsimonyFlags {
                symmetric_interactions: true,
                shared_time: true,
            },
        );
        assert_eq!(both.free_params().len(), (k - 1) + k * (k - 1));
    }

    #[test]
    fn set_maintains_mirrors() {
        let mut p = LatentParams::zeros_with_flags(
            3,
            ParsimonyFlags {
                symmetric_interactions: true,
                shared_time: true,
            },
        );
        p.set(ParamId::Gamma(0, 2), -1.5).unwrap();
        assert_eq!(p.gamma(0, 2), -1.5);
        assert_eq!(p.gamma(2, 0), -1.5);
        assert_eq!(p.gamma_star(0, 2), -1.5);
        assert_eq!(p.gamma_star(2, 0), -1.5);
        p.set(ParamId::Beta(1), 0.7).unwrap();
        assert_eq!(p.beta_star(1), 0.7);
    }

    #[test]
    fn set_rejects_pinned_entries() {
        let mut p = LatentParams::zeros(2);
        assert!(p.set(ParamId::Beta(1), 1.0).is_err());
        assert!(p.set(ParamId::Delta(1, 1), 1.0).is_err());
        assert!(p.set(ParamId::Gamma(0, 5), 1.0).is_err());
    }

    #[test]
    fn update_order_is_family_then_row_major() {
        let p = LatentParams::zeros(2);
        let names: Vec<_> = p.free_params().iter().map(|id| id.name()).collect();
        assert_eq!(
            names,
            vec![
                "beta_1",
                "beta_star_1",
                "gamma_1_2",
                "gamma_2_1",
                "gamma_star_1_2",
                "gamma_star_2_1",
                "delta_1_2",
                "delta_2_1",
            ]
        );
    }
}
