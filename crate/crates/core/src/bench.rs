//! Synthetic benchmark harness: deterministic model zoos with known
//! provenance, plus the precision/recall evaluation protocol and the
//! control-set ablation.
//!
//! A zoo consists of base models spread over domain groups (at least two
//! bases per group keeps a valid in-group baseline for every test), derived
//! children at chosen perturbation rates, and independent children with no
//! parent. Everything is a pure function of the master seed.

use serde::{Deserialize, Serialize};

use crate::modelio::{ModelHandle, QueryEngine, SyntheticModelSpec};
use crate::prompts::{rejection_sample, sample_uniform, PromptCorpus, RejectionConfig};
use crate::seed::{derive_seed, substream, substream_indexed};
use crate::tester::{
    identify_parent, identify_parent_bai, CorpusSampler, SamplingMode, Verdict,
};
use crate::{Error, Result};

/// One derived child: parent base index and perturbation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChildSpec {
    pub parent: usize,
    pub rho: f64,
}

/// Parameters of a synthetic zoo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n_base: u32,
    pub n_groups: u32,
    pub vocab_size: u32,
    pub zipf_exponent: f64,
    pub children: Vec<ChildSpec>,
    pub n_independent: u32,
    pub master_seed: u64,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_base == 0 {
            return Err(Error::invalid("zoo requires at least one base model"));
        }
        if self.n_groups == 0 || self.n_groups > self.n_base {
            return Err(Error::invalid(format!(
                "n_groups = {} must lie in 1..={}",
                self.n_groups, self.n_base
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::invalid("zoo requires vocab_size >= 1"));
        }
        for (idx, child) in self.children.iter().enumerate() {
            if child.parent >= self.n_base as usize {
                return Err(Error::invalid(format!(
                    "child {idx} references parent {} out of {} bases",
                    child.parent, self.n_base
                )));
            }
            if !(0.0..=1.0).contains(&child.rho) {
                return Err(Error::invalid(format!(
                    "child {idx} has perturbation rate {} outside [0, 1]",
                    child.rho
                )));
            }
        }
        Ok(())
    }

    /// The repository's default benchmark: 20 bases in 2 domain groups,
    /// vocabulary 1000 at Zipf exponent 1.1, 100 derived children with
    /// perturbation rates stratified over ten levels in [0.05, 0.6], and 30
    /// independent children.
    pub fn shipped(master_seed: u64) -> Self {
        let mut children = Vec::with_capacity(100);
        for level in 0..10u32 {
            let rho = 0.05 + 0.55 * level as f64 / 9.0;
            for slot in 0..10u32 {
                let idx = (level * 10 + slot) as usize;
                children.push(ChildSpec { parent: idx % 20, rho });
            }
        }
        BenchmarkSpec {
            n_base: 20,
            n_groups: 2,
            vocab_size: 1000,
            zipf_exponent: 1.1,
            children,
            n_independent: 30,
            master_seed,
        }
    }

    /// A zoo with only independent children, for false-positive-rate runs.
    pub fn all_independent(
        n_base: u32,
        n_groups: u32,
        n_independent: u32,
        master_seed: u64,
    ) -> Self {
        BenchmarkSpec {
            n_base,
            n_groups,
            vocab_size: 1000,
            zipf_exponent: 1.1,
            children: Vec::new(),
            n_independent,
            master_seed,
        }
    }
}

/// Ground-truth provenance of one child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub child_id: String,
    /// Present iff the child was derived.
    pub parent_id: Option<String>,
    pub rho: Option<f64>,
}

/// A generated zoo with its ground-truth table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Zoo {
    pub spec: BenchmarkSpec,
    pub bases: Vec<ModelHandle>,
    pub children: Vec<ModelHandle>,
    pub truth: Vec<GroundTruthEntry>,
}

impl Zoo {
    /// The corpus paired with this zoo: deterministic from the master seed.
    pub fn default_corpus(&self, count: usize) -> PromptCorpus {
        PromptCorpus::synthetic(count, self.spec.master_seed)
    }

    pub fn model_by_id(&self, id: &str) -> Option<&ModelHandle> {
        self.bases.iter().chain(self.children.iter()).find(|m| m.id == id)
    }
}

/// Builds the zoo deterministically from its spec.
pub fn generate_zoo(spec: &BenchmarkSpec) -> Result<Zoo> {
    spec.validate()?;
    let master = spec.master_seed;

    let bases: Vec<ModelHandle> = (0..spec.n_base)
        .map(|i| {
            let model_spec = SyntheticModelSpec {
                seed: derive_seed(master, "base-seed", i as u64),
                vocab_size: spec.vocab_size,
                zipf_exponent: spec.zipf_exponent,
                domain_group: i % spec.n_groups,
                parent_seed: None,
                perturbation_rate: 0.0,
            };
            ModelHandle::synthetic(format!("base-{i:02}"), model_spec)
        })
        .collect();

    let mut children = Vec::with_capacity(spec.children.len() + spec.n_independent as usize);
    let mut truth = Vec::with_capacity(children.capacity());

    for (j, child) in spec.children.iter().enumerate() {
        let parent = &bases[child.parent];
        let parent_spec = match &parent.backend {
            crate::modelio::Backend::Synthetic(s) => s,
            _ => unreachable!("zoo bases are synthetic"),
        };
        let model_spec = SyntheticModelSpec {
            seed: derive_seed(master, "child-seed", j as u64),
            vocab_size: spec.vocab_size,
            zipf_exponent: spec.zipf_exponent,
            domain_group: parent_spec.domain_group,
            parent_seed: Some(parent_spec.seed),
            perturbation_rate: child.rho,
        };
        let id = format!("child-{j:03}");
        children.push(ModelHandle::synthetic(id.clone(), model_spec));
        truth.push(GroundTruthEntry {
            child_id: id,
            parent_id: Some(parent.id.clone()),
            rho: Some(child.rho),
        });
    }

    let first_independent = spec.children.len();
    for i in 0..spec.n_independent as usize {
        let j = first_independent + i;
        let model_spec = SyntheticModelSpec {
            seed: derive_seed(master, "child-seed", j as u64),
            vocab_size: spec.vocab_size,
            zipf_exponent: spec.zipf_exponent,
            domain_group: (i as u32) % spec.n_groups,
            parent_seed: None,
            perturbation_rate: 0.0,
        };
        let id = format!("child-{j:03}");
        children.push(ModelHandle::synthetic(id.clone(), model_spec));
        truth.push(GroundTruthEntry { child_id: id, parent_id: None, rho: None });
    }

    Ok(Zoo { spec: spec.clone(), bases, children, truth })
}

/// Tester parameters for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TesterConfig {
    /// Prompts per test (T, or T' under rejection sampling).
    pub prompt_count: usize,
    pub alpha: f64,
    /// Rejection sampling; `None` means uniform i.i.d. prompts.
    pub rejection: Option<RejectionConfig>,
    /// Switches to the successive-elimination tester with this per-model
    /// budget N.
    pub bai_budget: Option<u64>,
    /// Tester-side master seed (prompt sampling, elimination rounds).
    pub seed: u64,
}

impl TesterConfig {
    pub fn new(prompt_count: usize) -> Self {
        TesterConfig { prompt_count, alpha: 0.05, rejection: None, bai_budget: None, seed: 0 }
    }
}

/// Per-child evaluation outcome; tester errors are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChildOutcome {
    pub child_id: String,
    pub truth_parent_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Effective configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub prompt_count: usize,
    pub alpha: f64,
    pub sampling: SamplingMode,
    pub bai_budget: Option<u64>,
    pub seed: u64,
    /// Size of the model universe used as candidates and controls.
    pub universe_size: usize,
}

/// Aggregated evaluation results.
///
/// `precision` is correct positives over all positives and `recall` is
/// correct positives over derived children; a positive with the wrong
/// parent counts against both. Either is `None` when its denominator is
/// zero. `parent_top1_rate` is the fraction of derived children whose true
/// parent attained the strictly highest agreement ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub n_children: usize,
    pub derived: usize,
    pub independent: usize,
    pub positives: usize,
    pub correct_positives: usize,
    pub incorrect_positives: usize,
    pub errors: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub parent_top1_rate: Option<f64>,
    pub mean_online_queries: f64,
    pub mean_offline_queries: f64,
    pub outcomes: Vec<ChildOutcome>,
}

/// Runs the tester over every child with the complete base set as both
/// candidates and controls.
pub fn evaluate(
    engine: &QueryEngine,
    zoo: &Zoo,
    corpus: &PromptCorpus,
    config: &TesterConfig,
) -> Result<EvalReport> {
    let universe: Vec<usize> = (0..zoo.bases.len()).collect();
    evaluate_with_universe(engine, zoo, corpus, config, &universe)
}

/// As [`evaluate`], with the model universe restricted to the given base
/// indices (used by the control-set ablation).
pub fn evaluate_with_universe(
    engine: &QueryEngine,
    zoo: &Zoo,
    corpus: &PromptCorpus,
    config: &TesterConfig,
    universe: &[usize],
) -> Result<EvalReport> {
    if universe.is_empty() {
        return Err(Error::invalid("evaluation requires a non-empty model universe"));
    }
    let mut seen = std::collections::HashSet::new();
    for &idx in universe {
        if idx >= zoo.bases.len() {
            return Err(Error::invalid(format!("universe index {idx} out of range")));
        }
        if !seen.insert(idx) {
            return Err(Error::invalid(format!("universe index {idx} repeated")));
        }
    }

    let models: Vec<ModelHandle> = universe.iter().map(|&i| zoo.bases[i].clone()).collect();
    let sampling_mode = match config.rejection {
        Some(r) if r.k > 1 => SamplingMode::Rejection { k: r.k, tau: r.tau },
        _ => SamplingMode::Uniform,
    };

    // The prompt set is shared by every child test: offline queries against
    // the base models are reused across children.
    let prompts = if config.bai_budget.is_some() {
        None
    } else {
        let mut rng = substream(config.seed, "prompt-sampling");
        let sample = match config.rejection {
            Some(r) => rejection_sample(engine, corpus, config.prompt_count, r, &models, &mut rng)?,
            None => sample_uniform(corpus, config.prompt_count, &mut rng)?,
        };
        Some(sample)
    };

    let run_child = |(idx, child): (usize, &ModelHandle)| -> ChildOutcome {
        let truth = &zoo.truth[idx];
        let result = match config.bai_budget {
            Some(budget) => {
                let rng = substream_indexed(config.seed, "bai-rounds", idx as u64);
                let mut source = CorpusSampler::new(corpus, rng);
                identify_parent_bai(engine, child, &models, &models, &mut source, config.alpha, budget)
            }
            None => identify_parent(
                engine,
                child,
                &models,
                &models,
                prompts.as_deref().expect("prompts sampled for non-BAI runs"),
                config.alpha,
            )
            .map(|mut verdict| {
                verdict.sampling_mode = sampling_mode;
                verdict
            }),
        };
        match result {
            Ok(verdict) => ChildOutcome {
                child_id: child.id.clone(),
                truth_parent_id: truth.parent_id.clone(),
                verdict: Some(verdict),
                error: None,
            },
            Err(err) => ChildOutcome {
                child_id: child.id.clone(),
                truth_parent_id: truth.parent_id.clone(),
                verdict: None,
                error: Some(err.to_string()),
            },
        }
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<ChildOutcome> = {
        use rayon::prelude::*;
        zoo.children.par_iter().enumerate().map(run_child).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<ChildOutcome> = zoo.children.iter().enumerate().map(run_child).collect();

    Ok(summarize(config, sampling_mode, universe.len(), outcomes))
}

fn summarize(
    config: &TesterConfig,
    sampling: SamplingMode,
    universe_size: usize,
    outcomes: Vec<ChildOutcome>,
) -> EvalReport {
    let mut derived = 0usize;
    let mut positives = 0usize;
    let mut correct = 0usize;
    let mut errors = 0usize;
    let mut top1_hits = 0usize;
    let mut top1_den = 0usize;
    let mut online_sum = 0u64;
    let mut offline_sum = 0u64;
    let mut evaluated = 0usize;

    for outcome in &outcomes {
        let is_derived = outcome.truth_parent_id.is_some();
        if is_derived {
            derived += 1;
        }
        let verdict = match &outcome.verdict {
            Some(v) => v,
            None => {
                errors += 1;
                continue;
            }
        };
        evaluated += 1;
        online_sum += verdict.queries.online;
        offline_sum += verdict.queries.offline_total();

        if verdict.positive {
            positives += 1;
            if verdict.parent_id == outcome.truth_parent_id {
                correct += 1;
            }
        }
        if let Some(truth_parent) = &outcome.truth_parent_id {
            top1_den += 1;
            let parent_mu = verdict
                .stats
                .iter()
                .find(|s| &s.model_id == truth_parent)
                .map(|s| s.mu);
            if let Some(parent_mu) = parent_mu {
                let strictly_highest = verdict
                    .stats
                    .iter()
                    .all(|s| &s.model_id == truth_parent || s.mu < parent_mu);
                if strictly_highest {
                    top1_hits += 1;
                }
            }
        }
    }

    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    EvalReport {
        config: ConfigEcho {
            prompt_count: config.prompt_count,
            alpha: config.alpha,
            sampling,
            bai_budget: config.bai_budget,
            seed: config.seed,
            universe_size,
        },
        n_children: outcomes.len(),
        derived,
        independent: outcomes.len() - derived,
        positives,
        correct_positives: correct,
        incorrect_positives: positives - correct,
        errors,
        precision: ratio(correct, positives),
        recall: ratio(correct, derived),
        parent_top1_rate: ratio(top1_hits, top1_den),
        mean_online_queries: if evaluated > 0 { online_sum as f64 / evaluated as f64 } else { 0.0 },
        mean_offline_queries: if evaluated > 0 { offline_sum as f64 / evaluated as f64 } else { 0.0 },
        outcomes,
    }
}

/// One row of the control-set ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset_size: usize,
    pub trials: u32,
    /// Mean over trials where precision was defined (some positive fired).
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub error_children: usize,
}

/// Reruns the evaluation on random base subsets of each requested size,
/// with the subset serving as both candidate and control set, and averages
/// precision and recall over the trials.
pub fn ablate_controls(
    engine: &QueryEngine,
    zoo: &Zoo,
    corpus: &PromptCorpus,
    subset_sizes: &[usize],
    trials: u32,
    config: &TesterConfig,
) -> Result<Vec<AblationRow>> {
    if trials == 0 {
        return Err(Error::invalid("ablation requires at least one trial"));
    }
    let n_base = zoo.bases.len();
    for &size in subset_sizes {
        if size == 0 || size > n_base {
            return Err(Error::invalid(format!(
                "subset size {size} must lie in 1..={n_base}"
            )));
        }
    }

    let mut rows = Vec::with_capacity(subset_sizes.len());
    for &size in subset_sizes {
        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        let mut error_children = 0usize;
        for trial in 0..trials {
            let mut rng =
                substream_indexed(config.seed, "ablate-subsets", ((size as u64) << 32) | trial as u64);
            let mut subset = rand::seq::index::sample(&mut rng, n_base, size).into_vec();
            subset.sort_unstable();
            let report = evaluate_with_universe(engine, zoo, corpus, config, &subset)?;
            if let Some(p) = report.precision {
                precisions.push(p);
            }
            if let Some(r) = report.recall {
                recalls.push(r);
            }
            error_children += report.errors;
        }
        let mean = |values: &[f64]| {
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        rows.push(AblationRow {
            subset_size: size,
            trials,
            mean_precision: mean(&precisions),
            mean_recall: mean(&recalls),
            error_children,
        });
    }
    Ok(rows)
}
