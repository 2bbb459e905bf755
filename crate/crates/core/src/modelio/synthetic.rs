//! Seeded synthetic models for the benchmark harness.
//!
//! A base model maps a prompt to a token by drawing from a Zipf-distributed
//! token-popularity profile shared by its domain group, keyed by a stable
//! hash of (seed, prompt). Groups occupy disjoint token-id ranges, so
//! unrelated models agree at the group's collision mass within a group and
//! never across groups. A derived model copies its parent's token except on
//! a seeded fraction `rho` of prompts, where it redraws from the same group
//! profile with its own seed.

use serde::{Deserialize, Serialize};

use crate::seed::{stable_hash64, unit_from_bits};
use crate::{Error, Result};

/// Parameters of one synthetic model.
///
/// `parent_seed` is present iff the model is derived; `perturbation_rate`
/// is ignored for base models. The perturbation decision and the redraw use
/// two independent keyed-hash streams, so the set of perturbed prompts is
/// monotone in `rho` for fixed seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub seed: u64,
    pub vocab_size: u32,
    pub zipf_exponent: f64,
    pub domain_group: u32,
    #[serde(default)]
    pub parent_seed: Option<u64>,
    #[serde(default)]
    pub perturbation_rate: f64,
}

impl SyntheticModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::invalid("synthetic model requires vocab_size >= 1"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::invalid(format!(
                "zipf_exponent = {} must be finite and >= 0",
                self.zipf_exponent
            )));
        }
        if !(0.0..=1.0).contains(&self.perturbation_rate) {
            return Err(Error::invalid(format!(
                "perturbation_rate = {} outside [0, 1]",
                self.perturbation_rate
            )));
        }
        Ok(())
    }
}

/// Token-popularity profile of a domain group: `p_rank ∝ rank^(-s)`.
#[derive(Debug, Clone)]
pub struct ZipfProfile {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl ZipfProfile {
    pub fn new(vocab_size: u32, exponent: f64) -> Self {
        let mut probs: Vec<f64> =
            (1..=vocab_size as u64).map(|rank| (rank as f64).powf(-exponent)).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        // Guard the top of the table against accumulated rounding.
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        ZipfProfile { probs, cdf }
    }

    /// Maps a uniform draw in [0, 1) to a rank index in [0, vocab).
    pub fn sample(&self, u: f64) -> u32 {
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.probs.len() - 1) as u32
    }

    /// Probability that two independent draws coincide: `Σ p²`.
    pub fn collision_mass(&self) -> f64 {
        self.probs.iter().map(|p| p * p).sum()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

fn base_draw(seed: u64, spec: &SyntheticModelSpec, profile: &ZipfProfile, prompt: &str) -> u32 {
    let bits = stable_hash64(&[b"synth-token", &seed.to_be_bytes(), prompt.as_bytes()]);
    let rank = profile.sample(unit_from_bits(bits));
    spec.domain_group * spec.vocab_size + rank
}

pub(crate) fn synth_token_with(
    spec: &SyntheticModelSpec,
    profile: &ZipfProfile,
    prompt: &str,
) -> String {
    let token_id = match spec.parent_seed {
        Some(parent_seed) => {
            let perturb_bits = stable_hash64(&[
                b"synth-perturb",
                &parent_seed.to_be_bytes(),
                &spec.seed.to_be_bytes(),
                prompt.as_bytes(),
            ]);
            if unit_from_bits(perturb_bits) < spec.perturbation_rate {
                base_draw(spec.seed, spec, profile, prompt)
            } else {
                base_draw(parent_seed, spec, profile, prompt)
            }
        }
        None => base_draw(spec.seed, spec, profile, prompt),
    };
    token_id.to_string()
}

/// First output token of a synthetic model on a prompt.
///
/// Pure function of (spec, prompt). Builds the group profile on every call;
/// the query engine caches profiles for bulk use.
pub fn synth_token(spec: &SyntheticModelSpec, prompt: &str) -> Result<String> {
    spec.validate()?;
    let profile = ZipfProfile::new(spec.vocab_size, spec.zipf_exponent);
    Ok(synth_token_with(spec, &profile, prompt))
}
