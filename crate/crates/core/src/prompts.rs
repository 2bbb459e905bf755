//! Prompt-space management: corpus loading, uniform i.i.d. sampling, and the
//! agreement-driven rejection sampler.
//!
//! The rejection sampler draws `k` candidate prompts per slot and keeps the
//! one whose outcomes most reduce the running pairwise agreement ratios of
//! the reference models, concentrating statistical power per selected
//! prompt. With `k = 1` it degenerates to uniform sampling. Selected
//! prompts are no longer i.i.d., so testers must flag the sampling mode in
//! their reports.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::modelio::{ModelHandle, QueryEngine};
use crate::{Error, Result};

/// The sampling space: an ordered, non-empty list of prompt texts.
///
/// The recommended corpus style is an incomplete sentence of five to twenty
/// words per line.
#[derive(Debug, Clone)]
pub struct PromptCorpus {
    prompts: Vec<String>,
    source_path: Option<PathBuf>,
}

impl PromptCorpus {
    /// Builds a corpus from prompt lines; blank lines are ignored.
    pub fn from_lines<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let prompts: Vec<String> = lines
            .into_iter()
            .map(Into::into)
            .filter(|line| !line.trim().is_empty())
            .collect();
        if prompts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(PromptCorpus { prompts, source_path: None })
    }

    /// Loads a newline-delimited UTF-8 corpus file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut prompts = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                prompts.push(line);
            }
        }
        if prompts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(PromptCorpus { prompts, source_path: Some(path.to_path_buf()) })
    }

    /// Deterministically generates `count` synthetic prompts: incomplete
    /// sentences of five to twenty words drawn from a fixed word list.
    pub fn synthetic(count: usize, seed: u64) -> Self {
        let mut rng = crate::seed::substream(seed, "corpus-generation");
        let prompts = (0..count).map(|_| synthetic_prompt(&mut rng)).collect();
        PromptCorpus { prompts, source_path: None }
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty corpora
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }

    /// Writes the corpus as a newline-delimited UTF-8 file.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::with_capacity(self.prompts.len() * 48);
        for p in &self.prompts {
            out.push_str(p);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Samples `count` prompts i.i.d. uniformly with replacement.
pub fn sample_uniform(
    corpus: &PromptCorpus,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    Ok((0..count).map(|_| draw(corpus, rng)).collect())
}

fn draw(corpus: &PromptCorpus, rng: &mut impl Rng) -> String {
    corpus.prompts[rng.gen_range(0..corpus.len())].clone()
}

/// Running pairwise agreement counts over a fixed model list.
///
/// `same[l1][l2]` counts the prompts selected so far on which models `l1`
/// and `l2` emitted the same token; the matrix stays symmetric with
/// `same[l][l]` equal to the number of selected prompts.
#[derive(Debug, Clone)]
pub struct AgreementMatrix {
    n_models: usize,
    same: Vec<u64>,
    selected: u64,
}

impl AgreementMatrix {
    pub fn new(n_models: usize) -> Self {
        AgreementMatrix { n_models, same: vec![0; n_models * n_models], selected: 0 }
    }

    pub fn selected(&self) -> u64 {
        self.selected
    }

    pub fn same(&self, l1: usize, l2: usize) -> u64 {
        self.same[l1 * self.n_models + l2]
    }

    /// Records the outcomes of one selected prompt.
    pub fn record(&mut self, tokens: &[String]) {
        assert_eq!(tokens.len(), self.n_models);
        for l1 in 0..self.n_models {
            for l2 in 0..self.n_models {
                if tokens[l1] == tokens[l2] {
                    self.same[l1 * self.n_models + l2] += 1;
                }
            }
        }
        self.selected += 1;
    }

    /// Mean agreement ratio over unordered distinct model pairs.
    pub fn mean_pairwise_agreement(&self) -> f64 {
        if self.selected == 0 || self.n_models < 2 {
            return 0.0;
        }
        let mut total = 0u64;
        let mut pairs = 0u64;
        for l1 in 0..self.n_models {
            for l2 in (l1 + 1)..self.n_models {
                total += self.same(l1, l2);
                pairs += 1;
            }
        }
        total as f64 / (pairs * self.selected) as f64
    }

    #[cfg(test)]
    fn check_invariants(&self) {
        for l in 0..self.n_models {
            assert_eq!(self.same(l, l), self.selected);
        }
        for l1 in 0..self.n_models {
            for l2 in 0..self.n_models {
                assert_eq!(self.same(l1, l2), self.same(l2, l1));
                assert!(self.same(l1, l2) <= self.selected);
            }
        }
    }
}

/// Rejection sampler parameters: candidates per slot and score temperature.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RejectionConfig {
    pub k: u32,
    pub tau: f64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig { k: 1, tau: 10.0 }
    }
}

/// Selects `count` prompts by agreement-drop rejection sampling.
///
/// For each slot `i`, `k` candidates are drawn and each is scored as
///
/// ```text
/// Score = Σ over ordered model pairs (l1, l2) of
///         1(old > new) * exp(tau * (old - new))
/// old = same[l1][l2] / (i - 1)        (0 on the first slot)
/// new = (same[l1][l2] + agree) / i
/// ```
///
/// The highest-scoring candidate is kept (ties break to the first drawn)
/// and the agreement matrix is updated with its outcomes. Exactly
/// `k * count` candidate draws and `k * count * models.len()` model queries
/// are issued, all cache-eligible.
pub fn rejection_sample(
    engine: &QueryEngine,
    corpus: &PromptCorpus,
    count: usize,
    config: RejectionConfig,
    models: &[ModelHandle],
    rng: &mut impl Rng,
) -> Result<Vec<String>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    if config.k == 0 {
        return Err(Error::invalid("rejection sampling requires k >= 1"));
    }
    if models.is_empty() {
        return Err(Error::invalid("rejection sampling requires at least one model"));
    }

    let k = config.k as usize;
    let n_models = models.len();
    let mut matrix = AgreementMatrix::new(n_models);
    let mut selected = Vec::with_capacity(count);

    for slot in 1..=count as u64 {
        let candidates: Vec<String> = (0..k).map(|_| draw(corpus, rng)).collect();
        let mut outcomes: Vec<Vec<String>> = Vec::with_capacity(k);
        for candidate in &candidates {
            let tokens = models
                .iter()
                .map(|m| engine.query_first_token(m, candidate).map(|obs| obs.token))
                .collect::<Result<Vec<String>>>()?;
            outcomes.push(tokens);
        }

        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (j, tokens) in outcomes.iter().enumerate() {
            let score = slot_score(&matrix, tokens, slot, config.tau);
            if score > best_score {
                best_score = score;
                best = j;
            }
        }

        matrix.record(&outcomes[best]);
        selected.push(candidates[best].clone());
    }
    Ok(selected)
}

fn slot_score(matrix: &AgreementMatrix, tokens: &[String], slot: u64, tau: f64) -> f64 {
    let n = tokens.len();
    let mut score = 0.0;
    for l1 in 0..n {
        for l2 in (l1 + 1)..n {
            let same = matrix.same(l1, l2) as f64;
            let old = if slot == 1 { 0.0 } else { same / (slot - 1) as f64 };
            let agree = if tokens[l1] == tokens[l2] { 1.0 } else { 0.0 };
            let new = (same + agree) / slot as f64;
            if old > new {
                score += (tau * (old - new)).exp();
            }
        }
    }
    // Unordered pairs doubled: the score sums over ordered pairs.
    2.0 * score
}

const WORDS_OPENER: &[&str] = &[
    "The", "A", "After", "Before", "Despite", "During", "In", "Under", "Beyond", "Across",
    "Throughout", "Following", "Amid", "Near", "Without",
];

const WORDS_FILL: &[&str] = &[
    "ancient", "bright", "careful", "distant", "eager", "fragile", "gentle", "hidden", "iron",
    "quiet", "rapid", "solemn", "weathered", "young", "curious", "narrow", "vivid", "sturdy",
    "archivist", "astronomer", "bridge", "captain", "committee", "courtyard", "engineer",
    "festival", "glacier", "harbour", "lantern", "manuscript", "merchant", "orchard",
    "physician", "reactor", "satellite", "scholar", "sculptor", "signal", "tide", "tribunal",
    "village", "violin", "workshop", "archive", "compass", "ledger", "meadow", "quarry",
    "announced", "carried", "described", "examined", "gathered", "lowered", "measured",
    "noticed", "prepared", "questioned", "recorded", "repaired", "sketched", "studied",
    "traced", "unveiled", "weighed", "whispered", "assembled", "charted",
    "about", "above", "against", "along", "among", "because", "behind", "beneath", "beside",
    "between", "toward", "within", "while", "where", "whose", "and", "its", "their", "onto",
];

fn synthetic_prompt(rng: &mut impl Rng) -> String {
    let words = rng.gen_range(5..=20usize);
    let mut out = String::new();
    out.push_str(WORDS_OPENER[rng.gen_range(0..WORDS_OPENER.len())]);
    for _ in 1..words {
        out.push(' ');
        out.push_str(WORDS_FILL[rng.gen_range(0..WORDS_FILL.len())]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::SyntheticModelSpec;
    use crate::seed::substream;

    fn spec(seed: u64, group: u32) -> SyntheticModelSpec {
        SyntheticModelSpec {
            seed,
            vocab_size: 1000,
            zipf_exponent: 1.1,
            domain_group: group,
            parent_seed: None,
            perturbation_rate: 0.0,
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(PromptCorpus::from_lines(Vec::<String>::new()), Err(Error::EmptyCorpus)));
        assert!(matches!(PromptCorpus::from_lines(vec!["", "  "]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn single_prompt_corpus_repeats() {
        let corpus = PromptCorpus::from_lines(vec!["only prompt in the corpus"]).unwrap();
        let mut rng = substream(1, "prompt-sampling");
        let sample = sample_uniform(&corpus, 5, &mut rng).unwrap();
        assert_eq!(sample.len(), 5);
        assert!(sample.iter().all(|p| p == "only prompt in the corpus"));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let corpus = PromptCorpus::synthetic(100, 3);
        let a = sample_uniform(&corpus, 50, &mut substream(9, "prompt-sampling")).unwrap();
        let b = sample_uniform(&corpus, 50, &mut substream(9, "prompt-sampling")).unwrap();
        let c = sample_uniform(&corpus, 50, &mut substream(10, "prompt-sampling")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_frequencies_within_multinomial_bounds() {
        // Exact multinomial: each count is Binomial(10000, 1/100), so
        // mean 100 and sigma = sqrt(10000 * 0.01 * 0.99) ~= 9.95.
        let corpus = PromptCorpus::synthetic(100, 17);
        let mut rng = substream(4, "prompt-sampling");
        let sample = sample_uniform(&corpus, 10_000, &mut rng).unwrap();
        let mut freq = std::collections::HashMap::new();
        for p in &sample {
            *freq.entry(p.as_str()).or_insert(0u32) += 1;
        }
        let sigma = (10_000.0_f64 * 0.01 * 0.99).sqrt();
        for prompt in corpus.prompts() {
            let count = *freq.get(prompt.as_str()).unwrap_or(&0) as f64;
            assert!(
                (count - 100.0).abs() <= 4.0 * sigma,
                "frequency {count} outside 4 sigma for `{prompt}`"
            );
        }
    }

    #[test]
    fn synthetic_corpus_matches_style() {
        let corpus = PromptCorpus::synthetic(500, 5);
        assert_eq!(corpus.len(), 500);
        for p in corpus.prompts() {
            let words = p.split_whitespace().count();
            assert!((5..=20).contains(&words), "{words} words in `{p}`");
        }
        // Deterministic regeneration.
        assert_eq!(corpus.prompts(), PromptCorpus::synthetic(500, 5).prompts());
    }

    #[test]
    fn k1_rejection_equals_uniform_sampling() {
        let engine = QueryEngine::new();
        let corpus = PromptCorpus::synthetic(200, 11);
        let models = vec![
            ModelHandle::synthetic("a", spec(1, 0)),
            ModelHandle::synthetic("b", spec(2, 0)),
        ];
        let cfg = RejectionConfig { k: 1, tau: 10.0 };
        let selected = rejection_sample(
            &engine,
            &corpus,
            64,
            cfg,
            &models,
            &mut substream(21, "prompt-sampling"),
        )
        .unwrap();
        let uniform = sample_uniform(&corpus, 64, &mut substream(21, "prompt-sampling")).unwrap();
        assert_eq!(selected, uniform);
    }

    #[test]
    fn splitting_candidate_wins() {
        // Two always-agreeing models and one always-disagreeing model. Seed
        // history with agreeing prompts, then offer one candidate that keeps
        // the agreeing pair together (score 0) and one that splits it
        // (strictly positive score): the splitter must be selected.
        let mut matrix = AgreementMatrix::new(3);
        let agree = vec!["x".to_string(), "x".to_string(), "z1".to_string()];
        matrix.record(&agree);
        matrix.record(&agree);
        matrix.check_invariants();

        let keep = vec!["x".to_string(), "x".to_string(), "z2".to_string()];
        let split = vec!["x".to_string(), "y".to_string(), "z2".to_string()];
        let slot = 3;
        let keep_score = slot_score(&matrix, &keep, slot, 10.0);
        let split_score = slot_score(&matrix, &split, slot, 10.0);
        assert_eq!(keep_score, 0.0, "no ratio drops when the pair stays together");
        assert!(split_score > 0.0);
        // Hand enumeration: only the (0,1) pair drops, old = 1, new = 2/3.
        let expected = 2.0 * (10.0_f64 * (1.0 - 2.0 / 3.0)).exp();
        assert!((split_score - expected).abs() < 1e-12);
    }

    #[test]
    fn rejection_issues_exactly_k_times_t_queries() {
        let engine = QueryEngine::new();
        let corpus = PromptCorpus::synthetic(50, 13);
        let models = vec![
            ModelHandle::synthetic("a", spec(1, 0)),
            ModelHandle::synthetic("b", spec(2, 0)),
            ModelHandle::synthetic("c", spec(3, 1)),
        ];
        let cfg = RejectionConfig { k: 4, tau: 10.0 };
        let selected = rejection_sample(
            &engine,
            &corpus,
            25,
            cfg,
            &models,
            &mut substream(2, "prompt-sampling"),
        )
        .unwrap();
        assert_eq!(selected.len(), 25);
        for m in ["a", "b", "c"] {
            assert_eq!(engine.query_count(m), 4 * 25);
        }
    }

    #[test]
    fn rejection_is_deterministic() {
        let corpus = PromptCorpus::synthetic(100, 29);
        let models = vec![
            ModelHandle::synthetic("a", spec(1, 0)),
            ModelHandle::synthetic("b", spec(2, 0)),
        ];
        let cfg = RejectionConfig { k: 8, tau: 10.0 };
        let run = |seed: u64| {
            let engine = QueryEngine::new();
            rejection_sample(
                &engine,
                &corpus,
                30,
                cfg,
                &models,
                &mut substream(seed, "prompt-sampling"),
            )
            .unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn rejection_lowers_pairwise_agreement() {
        // Same-group models agree at the collision mass under uniform
        // sampling; the sampler should push observed agreement below that.
        let corpus = PromptCorpus::synthetic(4000, 37);
        let models: Vec<ModelHandle> = (0..6)
            .map(|i| ModelHandle::synthetic(format!("m{i}"), spec(100 + i, 0)))
            .collect();
        let run = |k: u32| {
            let engine = QueryEngine::new();
            let selected = rejection_sample(
                &engine,
                &corpus,
                300,
                RejectionConfig { k, tau: 10.0 },
                &models,
                &mut substream(8, "prompt-sampling"),
            )
            .unwrap();
            let mut matrix = AgreementMatrix::new(models.len());
            for p in &selected {
                let tokens: Vec<String> = models
                    .iter()
                    .map(|m| engine.query_first_token(m, p).unwrap().token)
                    .collect();
                matrix.record(&tokens);
            }
            matrix.check_invariants();
            matrix.mean_pairwise_agreement()
        };
        let uniform = run(1);
        let rejected = run(16);
        assert!(
            rejected < uniform,
            "rejection sampling did not lower agreement: {rejected} vs {uniform}"
        );
    }
}
