//! Demo scenarios: small synthetic worlds sized for interactive use.

use serde::Serialize;

use provtest::bench::{generate_zoo, BenchmarkSpec, ChildSpec};
use provtest::modelio::{ModelHandle, QueryEngine, SyntheticModelSpec, ZipfProfile};
use provtest::prompts::{rejection_sample, sample_uniform, AgreementMatrix, PromptCorpus, RejectionConfig};
use provtest::seed::substream;
use provtest::stats::bai_confidence_radius;
use provtest::tester::{identify_parent, CorpusSampler, PromptSource};
use provtest::{Error, Result};

const VOCAB: u32 = 500;
const ZIPF: f64 = 1.1;

#[derive(Serialize)]
pub struct IdentifyView {
    pub positive: bool,
    pub parent_id: Option<String>,
    pub truth_parent: String,
    pub rho: f64,
    pub alpha: f64,
    pub prompt_count: usize,
    pub collision_mass: f64,
    pub stats: Vec<StatView>,
    pub pvalues: Vec<PValueView>,
}

#[derive(Serialize)]
pub struct StatView {
    pub model_id: String,
    pub mu: f64,
    pub is_truth_parent: bool,
}

#[derive(Serialize)]
pub struct PValueView {
    pub model_id: String,
    pub p: f64,
    pub threshold: f64,
    pub rejected: bool,
}

/// Candidate-set test on an 8-base zoo with one child of `base-00`.
pub fn identify(seed: u64, rho: f64, prompt_count: usize, alpha: f64) -> Result<IdentifyView> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho = {rho} outside [0, 1]")));
    }
    let spec = BenchmarkSpec {
        n_base: 8,
        n_groups: 2,
        vocab_size: VOCAB,
        zipf_exponent: ZIPF,
        children: vec![ChildSpec { parent: 0, rho }],
        n_independent: 0,
        master_seed: seed,
    };
    let zoo = generate_zoo(&spec)?;
    let corpus = PromptCorpus::synthetic(4000, seed);
    let engine = QueryEngine::new();
    let prompts = sample_uniform(&corpus, prompt_count, &mut substream(seed, "prompt-sampling"))?;
    let verdict = identify_parent(&engine, &zoo.children[0], &zoo.bases, &zoo.bases, &prompts, alpha)?;

    let truth_parent = zoo.bases[0].id.clone();
    Ok(IdentifyView {
        positive: verdict.positive,
        parent_id: verdict.parent_id,
        truth_parent: truth_parent.clone(),
        rho,
        alpha,
        prompt_count,
        collision_mass: ZipfProfile::new(VOCAB, ZIPF).collision_mass(),
        stats: verdict
            .stats
            .iter()
            .map(|s| StatView {
                model_id: s.model_id.clone(),
                mu: s.mu,
                is_truth_parent: s.model_id == truth_parent,
            })
            .collect(),
        pvalues: verdict
            .pvalues
            .iter()
            .map(|r| PValueView {
                model_id: r.model_id.clone(),
                p: r.p,
                threshold: r.threshold,
                rejected: r.p <= r.threshold,
            })
            .collect(),
    })
}

#[derive(Serialize)]
pub struct BaiView {
    pub alpha: f64,
    pub budget: u64,
    pub arm_ids: Vec<String>,
    pub true_mus: Vec<f64>,
    pub rounds: Vec<BaiRound>,
    pub winner: Option<String>,
    pub positive: bool,
}

#[derive(Serialize)]
pub struct BaiRound {
    pub radius: f64,
    pub mus: Vec<f64>,
    pub active: Vec<bool>,
    pub total_queries: u64,
}

/// Successive elimination over arms with the given true agreement levels,
/// recording one snapshot per round for animation.
pub fn bai_trace(seed: u64, arm_mus: &[f64], alpha: f64, budget_n: u64) -> Result<BaiView> {
    if arm_mus.len() < 2 || arm_mus.len() > 8 {
        return Err(Error::InvalidArgument("between 2 and 8 arms".into()));
    }
    if budget_n == 0 || budget_n > 5000 {
        return Err(Error::InvalidArgument("budget must lie in 1..=5000".into()));
    }
    let collision = ZipfProfile::new(VOCAB, ZIPF).collision_mass();
    let g_spec = SyntheticModelSpec {
        seed: provtest::seed::derive_seed(seed, "demo-bai-g", 0),
        vocab_size: VOCAB,
        zipf_exponent: ZIPF,
        domain_group: 0,
        parent_seed: None,
        perturbation_rate: 0.0,
    };
    let g = ModelHandle::synthetic("g", g_spec);

    // A child of g at perturbation rate rho agrees with it at
    // (1 - rho) + rho * collision; invert to hit the requested level.
    let arms: Vec<ModelHandle> = arm_mus
        .iter()
        .enumerate()
        .map(|(i, &mu)| {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::InvalidArgument(format!("arm agreement {mu} outside [0, 1]")));
            }
            let rho = ((1.0 - mu) / (1.0 - collision)).clamp(0.0, 1.0);
            Ok(ModelHandle::synthetic(
                format!("arm-{i}"),
                SyntheticModelSpec {
                    seed: provtest::seed::derive_seed(seed, "demo-bai-arm", i as u64),
                    parent_seed: Some(g_spec.seed),
                    perturbation_rate: rho,
                    ..g_spec
                },
            ))
        })
        .collect::<Result<_>>()?;

    let corpus = PromptCorpus::synthetic(4000, seed);
    let engine = QueryEngine::new();
    let mut source = CorpusSampler::new(&corpus, substream(seed, "bai-rounds"));

    let n = arms.len();
    let mut hits = vec![0u64; n];
    let mut tots = vec![0u64; n];
    let mut active = vec![true; n];
    let mut rounds = Vec::new();
    let mut t = 0u64;
    let mut total = 0u64;
    let budget = budget_n * n as u64;

    loop {
        let prompt = source.next_prompt()?;
        let g_token = engine.query_first_token(&g, &prompt)?.token;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if engine.query_first_token(&arms[i], &prompt)?.token == g_token {
                hits[i] += 1;
            }
            tots[i] += 1;
            total += 1;
        }
        t += 1;
        let radius = bai_confidence_radius(t, alpha)?;
        let mus: Vec<f64> = (0..n).map(|i| hits[i] as f64 / tots[i] as f64).collect();
        let best = (0..n)
            .filter(|&i| active[i])
            .map(|i| mus[i])
            .fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            if active[i] && best - radius > mus[i] + radius {
                active[i] = false;
            }
        }
        rounds.push(BaiRound { radius, mus: mus.clone(), active: active.clone(), total_queries: total });
        if active.iter().filter(|&&a| a).count() == 1 || total > budget {
            break;
        }
    }

    let survivors: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    let positive = survivors.len() == 1;
    Ok(BaiView {
        alpha,
        budget: budget_n,
        arm_ids: arms.iter().map(|a| a.id.clone()).collect(),
        true_mus: arm_mus.to_vec(),
        winner: positive.then(|| arms[survivors[0]].id.clone()),
        positive,
        rounds,
    })
}

#[derive(Serialize)]
pub struct RejectionView {
    pub k: u32,
    pub tau: f64,
    pub collision_mass: f64,
    /// Running mean pairwise agreement after each selected prompt.
    pub running_mean: Vec<f64>,
    pub final_mean: f64,
}

/// Rejection-sampling trend over six same-group reference models.
pub fn rejection_trend(seed: u64, k: u32, slots: usize, tau: f64) -> Result<RejectionView> {
    if k == 0 || k > 128 {
        return Err(Error::InvalidArgument("k must lie in 1..=128".into()));
    }
    if slots == 0 || slots > 1000 {
        return Err(Error::InvalidArgument("slots must lie in 1..=1000".into()));
    }
    let models: Vec<ModelHandle> = (0..6)
        .map(|i| {
            ModelHandle::synthetic(
                format!("ref-{i}"),
                SyntheticModelSpec {
                    seed: provtest::seed::derive_seed(seed, "demo-rejection", i),
                    vocab_size: VOCAB,
                    zipf_exponent: ZIPF,
                    domain_group: 0,
                    parent_seed: None,
                    perturbation_rate: 0.0,
                },
            )
        })
        .collect();
    let corpus = PromptCorpus::synthetic(4000, seed);
    let engine = QueryEngine::new();
    let selected = rejection_sample(
        &engine,
        &corpus,
        slots,
        RejectionConfig { k, tau },
        &models,
        &mut substream(seed, "prompt-sampling"),
    )?;

    let mut matrix = AgreementMatrix::new(models.len());
    let mut running = Vec::with_capacity(selected.len());
    for prompt in &selected {
        let tokens: Vec<String> = models
            .iter()
            .map(|m| engine.query_first_token(m, prompt).map(|o| o.token))
            .collect::<Result<_>>()?;
        matrix.record(&tokens);
        running.push(matrix.mean_pairwise_agreement());
    }
    Ok(RejectionView {
        k,
        tau,
        collision_mass: ZipfProfile::new(VOCAB, ZIPF).collision_mass(),
        final_mean: *running.last().unwrap(),
        running_mean: running,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identify_flags_a_close_child() {
        let view = identify(3, 0.1, 800, 0.05).unwrap();
        assert!(view.positive);
        assert_eq!(view.parent_id.as_deref(), Some("base-00"));
        let parent = view.stats.iter().find(|s| s.is_truth_parent).unwrap();
        assert!(parent.mu > 0.8);
        assert!(view.pvalues.iter().all(|p| p.rejected));
    }

    #[test]
    fn identify_rejects_a_heavily_perturbed_child_gracefully() {
        let view = identify(3, 1.0, 400, 0.05).unwrap();
        // A full redraw is indistinguishable from an unrelated same-group
        // model, so the ratios tie and the verdict is negative.
        assert!(!view.positive);
    }

    #[test]
    fn bai_trace_eliminates_down_to_the_best_arm() {
        let view = bai_trace(5, &[0.9, 0.55, 0.2], 0.05, 2000).unwrap();
        assert!(view.positive);
        assert_eq!(view.winner.as_deref(), Some("arm-0"));
        let last = view.rounds.last().unwrap();
        assert_eq!(last.active.iter().filter(|&&a| a).count(), 1);
        // Radius shrinks monotonically across rounds.
        for w in view.rounds.windows(2) {
            assert!(w[1].radius < w[0].radius);
        }
    }

    #[test]
    fn rejection_trend_drops_below_uniform_baseline() {
        let uniform = rejection_trend(8, 1, 250, 10.0).unwrap();
        let rejected = rejection_trend(8, 16, 250, 10.0).unwrap();
        assert!(rejected.final_mean < uniform.final_mean);
    }

    #[test]
    fn scenarios_validate_inputs() {
        assert!(identify(1, 1.5, 100, 0.05).is_err());
        assert!(bai_trace(1, &[0.9], 0.05, 100).is_err());
        assert!(bai_trace(1, &[0.9, 0.5], 0.05, 0).is_err());
        assert!(rejection_trend(1, 0, 100, 10.0).is_err());
    }
}
