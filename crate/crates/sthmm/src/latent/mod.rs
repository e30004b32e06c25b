//! The K-state autologistic spatio-temporal field.
//!
//! The unnormalized log density of a field `u` splits into three blocks:
//! state-prevalence terms (β at the initial time, β* afterwards), spatial
//! interaction terms over the ordered edge pairs of the neighbourhood graph
//! (γ at the initial time, γ* afterwards), and temporal transition terms δ
//! between consecutive occasions at the same site. The last prevalence entry
//! and all interaction diagonals are pinned to zero for identifiability.
//!
//! The normalizing constant is a sum over K^(N·T) configurations, so it is
//! only ever computed here by the enumeration oracle for tiny instances;
//! everything else works with potentials, conditionals and log-odds, which
//! need no constant.

mod enumeration;
mod params;
mod potential;

pub use enumeration::{
    exact_field_distribution, log_partition_exact, sample_exact_field, DEFAULT_ENUMERATION_CAP,
};
pub use params::{LatentParams, ParamFamily, ParamId, ParsimonyFlags};
pub use potential::{
    full_conditional, gibbs_sweep, log_odds, log_potential, state_energies, sufficient_stat,
};
pub(crate) use potential::{log_sum_exp, sample_from_energies};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("state label {label} out of range for {k} states")]
    StateOutOfRange { label: usize, k: usize },
    #[error("coordinate (site {site}, time {time}) out of range for {n_sites}x{t_len} field")]
    CoordOutOfRange {
        site: usize,
        time: usize,
        n_sites: usize,
        t_len: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("enumeration over {configs} configurations exceeds cap {cap}")]
    EnumerationTooLarge { configs: u128, cap: u128 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// An N×T array of state labels, used both as the latent variable and as the
/// auxiliary variable of the exchange moves.
///
/// Labels are 0-based in the API (0..K) and 1-based in serialized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatentField {
    values: Vec<u8>,
    n_sites: usize,
    t_len: usize,
    k: usize,
}

impl LatentField {
    /// A constant field filled with state 0.
    pub fn zeros(n_sites: usize, t_len: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= u8::MAX as usize + 1, "unsupported state count {k}");
        Self {
            values: vec![0; n_sites * t_len],
            n_sites,
            t_len,
            k,
        }
    }

    /// Builds a field from site-major values (all times of site 0 first).
    pub fn from_values(
        n_sites: usize,
        t_len: usize,
        k: usize,
        values: Vec<u8>,
    ) -> Result<Self, LatentError> {
        if values.len() != n_sites * t_len {
            return Err(LatentError::DimensionMismatch(format!(
                "expected {} values for a {}x{} field, got {}",
                n_sites * t_len,
                n_sites,
                t_len,
                values.len()
            )));
        }
        for &v in &values {
            if v as usize >= k {
                return Err(LatentError::StateOutOfRange {
                    label: v as usize,
                    k,
                });
            }
        }
        Ok(Self {
            values,
            n_sites,
            t_len,
            k,
        })
    }

    /// Each coordinate drawn independently and uniformly from the K states.
    pub fn uniform_random<R: Rng + ?Sized>(
        n_sites: usize,
        t_len: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut field = Self::zeros(n_sites, t_len, k);
        for v in &mut field.values {
            *v = rng.random_range(0..k) as u8;
        }
        field
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, site: usize, time: usize) -> usize {
        self.values[site * self.t_len + time] as usize
    }

    #[inline]
    pub fn set(&mut self, site: usize, time: usize, state: usize) {
        debug_assert!(state < self.k);
        self.values[site * self.t_len + time] = state as u8;
    }

    /// Site-major raw labels.
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    pub fn check_coord(&self, site: usize, time: usize) -> Result<(), LatentError> {
        if site >= self.n_sites || time >= self.t_len {
            return Err(LatentError::CoordOutOfRange {
                site,
                time,
                n_sites: self.n_sites,
                t_len: self.t_len,
            });
        }
        Ok(())
    }
}
