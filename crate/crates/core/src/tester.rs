//! The provenance deciders.
//!
//! * [`test_pair`] — is `g` derived from a designated parent `f`? Compares
//!   the (f, g) agreement ratio against every control's ratio and rejects
//!   all nulls under Holm-Bonferroni.
//! * [`identify_parent`] — which of a candidate set, if any, is the parent?
//!   Finds the most similar model among candidates and controls; if it is a
//!   candidate, runs one Holm-corrected family of z-tests against every
//!   other ratio.
//! * [`identify_parent_bai`] — the same decision made by successive
//!   elimination, spending fewer offline queries on clearly dissimilar
//!   models.
//!
//! A positive verdict bounds the family-wise false-positive rate by the
//! caller's significance level; a negative verdict means the evidence was
//! insufficient at that level, not that independence was proven.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::modelio::{ModelHandle, QueryEngine};
use crate::prompts::PromptCorpus;
use crate::stats::{holm_bonferroni, z_test_one_sided, PValueRecord, ProportionPair};
use crate::{Error, Result};

/// Below this many prompts the normal approximation behind the z-test is
/// not trusted; testers refuse to run.
pub const MIN_PROMPTS: usize = 30;

/// Agreement of one comparison model with the tested model `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStat {
    pub model_id: String,
    pub hits: u64,
    pub total: u64,
    pub mu: f64,
}

impl SimilarityStat {
    fn new(model_id: &str, hits: u64, total: u64) -> Self {
        SimilarityStat {
            model_id: model_id.to_string(),
            hits,
            total,
            mu: hits as f64 / total as f64,
        }
    }
}

/// Which decision procedure produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TesterKind {
    Pair,
    Identify,
    Bai,
}

/// How the prompts fed to the tester were produced. Rejection-selected
/// prompts are not i.i.d., so the formal error guarantee does not carry
/// over; the flag keeps that caveat attached to every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    Rejection { k: u32, tau: f64 },
}

/// Queries spent by one test: online ones against `g`, offline ones against
/// candidate and control models (the reusable kind).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryUsage {
    pub online: u64,
    pub offline: BTreeMap<String, u64>,
}

impl QueryUsage {
    pub fn offline_total(&self) -> u64 {
        self.offline.values().sum()
    }
}

/// Extra bookkeeping from the successive-elimination tester.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaiTrace {
    /// Completed rounds.
    pub rounds: u64,
    /// Rounds where the best ratio over all arms disagreed with the best
    /// over active arms only (the elimination rule uses the active set).
    pub active_vs_all_mismatch: u64,
}

/// Tester outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub positive: bool,
    /// Identified parent; present iff positive.
    pub parent_id: Option<String>,
    pub family_alpha: f64,
    pub pvalues: Vec<PValueRecord>,
    pub stats: Vec<SimilarityStat>,
    pub queries: QueryUsage,
    pub sampling_mode: SamplingMode,
    pub tester_kind: TesterKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bai: Option<BaiTrace>,
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn ensure_distinct_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("duplicate model id `{id}`")));
        }
    }
    Ok(())
}

fn gather_tokens(
    engine: &QueryEngine,
    model: &ModelHandle,
    prompts: &[String],
) -> Result<Vec<String>> {
    prompts
        .iter()
        .map(|p| engine.query_first_token(model, p).map(|obs| obs.token))
        .collect()
}

fn count_hits(a: &[String], b: &[String]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as u64
}

/// Tests the designated pair (f, g) against a control baseline.
///
/// One p-value per control from the one-sided z-test of `mu` against
/// `mu_i`; positive iff Holm-Bonferroni rejects the whole family at
/// `alpha`. When every null is true the positive rate is at most `alpha`.
pub fn test_pair(
    engine: &QueryEngine,
    f: &ModelHandle,
    g: &ModelHandle,
    controls: &[ModelHandle],
    prompts: &[String],
    alpha: f64,
) -> Result<Verdict> {
    validate_alpha(alpha)?;
    if controls.is_empty() {
        return Err(Error::invalid("test_pair requires at least one control model"));
    }
    if prompts.len() < MIN_PROMPTS {
        return Err(Error::invalid(format!(
            "{} prompts is below the z-test floor of {MIN_PROMPTS}",
            prompts.len()
        )));
    }
    ensure_distinct_ids(
        std::iter::once(f.id.as_str())
            .chain(std::iter::once(g.id.as_str()))
            .chain(controls.iter().map(|c| c.id.as_str())),
    )?;

    let total = prompts.len() as u64;
    let g_tokens = gather_tokens(engine, g, prompts)?;
    let f_tokens = gather_tokens(engine, f, prompts)?;
    let f_hits = count_hits(&f_tokens, &g_tokens);

    let mut stats = vec![SimilarityStat::new(&f.id, f_hits, total)];
    let mut records = Vec::with_capacity(controls.len());
    let mut queries = QueryUsage { online: total, offline: BTreeMap::new() };
    queries.offline.insert(f.id.clone(), total);

    for control in controls {
        let tokens = gather_tokens(engine, control, prompts)?;
        let hits = count_hits(&tokens, &g_tokens);
        stats.push(SimilarityStat::new(&control.id, hits, total));
        let p = z_test_one_sided(&ProportionPair::from_counts(f_hits, hits, total)?)?;
        records.push(PValueRecord::new(control.id.clone(), p));
        queries.offline.insert(control.id.clone(), total);
    }

    let outcome = holm_bonferroni(records, alpha)?;
    Ok(Verdict {
        positive: outcome.all_rejected,
        parent_id: outcome.all_rejected.then(|| f.id.clone()),
        family_alpha: alpha,
        pvalues: outcome.records,
        stats,
        queries,
        sampling_mode: SamplingMode::Uniform,
        tester_kind: TesterKind::Pair,
        bai: None,
    })
}

/// Candidate or control role after deduplication.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Candidate,
    Control,
}

/// Merges candidates and controls into one comparison family. Ids occurring
/// in both sets take the candidate role.
fn merge_family<'a>(
    g: &ModelHandle,
    candidates: &'a [ModelHandle],
    controls: &'a [ModelHandle],
) -> Result<Vec<(&'a ModelHandle, Role)>> {
    if candidates.is_empty() {
        return Err(Error::invalid("identify requires a non-empty candidate set"));
    }
    ensure_distinct_ids(candidates.iter().map(|m| m.id.as_str()))?;
    ensure_distinct_ids(controls.iter().map(|m| m.id.as_str()))?;

    let mut family: Vec<(&ModelHandle, Role)> =
        candidates.iter().map(|m| (m, Role::Candidate)).collect();
    for control in controls {
        if !candidates.iter().any(|c| c.id == control.id) {
            family.push((control, Role::Control));
        }
    }
    if family.iter().any(|(m, _)| m.id == g.id) {
        return Err(Error::invalid(format!(
            "tested model `{}` cannot appear among candidates or controls",
            g.id
        )));
    }
    if family.len() < 2 {
        return Err(Error::invalid(
            "identify requires at least two comparison models: a single candidate with no \
             controls leaves no baseline",
        ));
    }
    Ok(family)
}

/// Decides whether `g` descends from one of the candidates.
///
/// Computes all agreement ratios on the shared prompts and finds the
/// maximum. A maximizer that is a control (ties resolve toward the control)
/// is an immediate negative. Otherwise the maximizer's ratio is z-tested
/// against every other ratio and the family is Holm-corrected at `alpha`;
/// positive iff all nulls are rejected, with the maximizing candidate
/// returned as parent.
pub fn identify_parent(
    engine: &QueryEngine,
    g: &ModelHandle,
    candidates: &[ModelHandle],
    controls: &[ModelHandle],
    prompts: &[String],
    alpha: f64,
) -> Result<Verdict> {
    validate_alpha(alpha)?;
    if prompts.len() < MIN_PROMPTS {
        return Err(Error::invalid(format!(
            "{} prompts is below the z-test floor of {MIN_PROMPTS}",
            prompts.len()
        )));
    }
    let family = merge_family(g, candidates, controls)?;

    let total = prompts.len() as u64;
    let g_tokens = gather_tokens(engine, g, prompts)?;
    let mut queries = QueryUsage { online: total, offline: BTreeMap::new() };

    let mut hits = Vec::with_capacity(family.len());
    let mut stats = Vec::with_capacity(family.len());
    for (model, _) in &family {
        let tokens = gather_tokens(engine, model, prompts)?;
        let h = count_hits(&tokens, &g_tokens);
        hits.push(h);
        stats.push(SimilarityStat::new(&model.id, h, total));
        queries.offline.insert(model.id.clone(), total);
    }

    let max_hits = *hits.iter().max().expect("family is non-empty");
    // Conservative tie rule: a control sharing the maximum claims it.
    let control_claims_max = family
        .iter()
        .zip(&hits)
        .any(|((_, role), &h)| *role == Role::Control && h == max_hits);

    let negative = |stats: Vec<SimilarityStat>, queries: QueryUsage| Verdict {
        positive: false,
        parent_id: None,
        family_alpha: alpha,
        pvalues: Vec::new(),
        stats,
        queries,
        sampling_mode: SamplingMode::Uniform,
        tester_kind: TesterKind::Identify,
        bai: None,
    };

    if control_claims_max {
        return Ok(negative(stats, queries));
    }
    let best = family
        .iter()
        .zip(&hits)
        .position(|((_, role), &h)| *role == Role::Candidate && h == max_hits)
        .expect("some candidate attains the maximum");

    let mut records = Vec::with_capacity(family.len() - 1);
    for (idx, ((model, _), &h)) in family.iter().zip(&hits).enumerate() {
        if idx == best {
            continue;
        }
        let p = z_test_one_sided(&ProportionPair::from_counts(max_hits, h, total)?)?;
        records.push(PValueRecord::new(model.id.clone(), p));
    }
    let outcome = holm_bonferroni(records, alpha)?;

    Ok(Verdict {
        positive: outcome.all_rejected,
        parent_id: outcome.all_rejected.then(|| family[best].0.id.clone()),
        family_alpha: alpha,
        pvalues: outcome.records,
        stats,
        queries,
        sampling_mode: SamplingMode::Uniform,
        tester_kind: TesterKind::Identify,
        bai: None,
    })
}

/// Supplies fresh prompts to the elimination tester.
pub trait PromptSource {
    fn next_prompt(&mut self) -> Result<String>;
}

/// Samples uniformly with replacement from a corpus; never exhausts.
pub struct CorpusSampler<'a, R: Rng> {
    corpus: &'a PromptCorpus,
    rng: R,
}

impl<'a, R: Rng> CorpusSampler<'a, R> {
    pub fn new(corpus: &'a PromptCorpus, rng: R) -> Self {
        CorpusSampler { corpus, rng }
    }
}

impl<R: Rng> PromptSource for CorpusSampler<'_, R> {
    fn next_prompt(&mut self) -> Result<String> {
        let idx = self.rng.gen_range(0..self.corpus.len());
        Ok(self.corpus.prompts()[idx].clone())
    }
}

/// A finite prompt list; exhausts with an error.
pub struct FixedPrompts {
    prompts: std::vec::IntoIter<String>,
}

impl FixedPrompts {
    pub fn new(prompts: Vec<String>) -> Self {
        FixedPrompts { prompts: prompts.into_iter() }
    }
}

impl PromptSource for FixedPrompts {
    fn next_prompt(&mut self) -> Result<String> {
        self.prompts.next().ok_or(Error::PromptSourceExhausted)
    }
}

struct Arm<'a> {
    model: &'a ModelHandle,
    role: Role,
    hits: u64,
    tots: u64,
    active: bool,
}

impl Arm<'_> {
    fn mu(&self) -> f64 {
        self.hits as f64 / self.tots as f64
    }
}

/// Successive-elimination variant of [`identify_parent`].
///
/// Each round draws one fresh prompt, queries `g` and every active arm, and
/// eliminates any arm whose upper confidence bound falls below the best
/// active arm's lower bound, with radius `U(t, alpha)`. The loop stops when
/// one arm remains or the total arm queries exceed `budget_n * |arms|`.
/// Positive iff exactly one arm remains, it is a candidate, and it holds
/// the strictly highest agreement ratio.
pub fn identify_parent_bai(
    engine: &QueryEngine,
    g: &ModelHandle,
    candidates: &[ModelHandle],
    controls: &[ModelHandle],
    source: &mut dyn PromptSource,
    alpha: f64,
    budget_n: u64,
) -> Result<Verdict> {
    validate_alpha(alpha)?;
    if budget_n == 0 {
        return Err(Error::invalid("BAI budget must be >= 1"));
    }
    let family = merge_family(g, candidates, controls)?;

    let mut arms: Vec<Arm> = family
        .iter()
        .map(|(model, role)| Arm { model, role: *role, hits: 0, tots: 0, active: true })
        .collect();
    let n_arms = arms.len() as u64;
    let budget = budget_n * n_arms;

    let mut rounds = 0u64;
    let mut online = 0u64;
    let mut total_offline = 0u64;
    let mut mismatch = 0u64;

    loop {
        let prompt = source.next_prompt()?;
        let g_token = engine.query_first_token(g, &prompt)?.token;
        online += 1;

        for arm in arms.iter_mut().filter(|a| a.active) {
            let token = engine.query_first_token(arm.model, &prompt)?.token;
            if token == g_token {
                arm.hits += 1;
            }
            arm.tots += 1;
            total_offline += 1;
        }
        rounds += 1;

        // The elimination rule maximizes over active arms; a frozen arm's
        // stale estimate must not set the bar. Track how often the two
        // choices of maximum would differ.
        let mu_best_active = arms
            .iter()
            .filter(|a| a.active)
            .map(Arm::mu)
            .fold(f64::NEG_INFINITY, f64::max);
        let mu_best_all = arms.iter().map(Arm::mu).fold(f64::NEG_INFINITY, f64::max);
        if mu_best_all > mu_best_active {
            mismatch += 1;
        }

        let radius = crate::stats::bai_confidence_radius(rounds, alpha)?;
        for arm in arms.iter_mut().filter(|a| a.active) {
            if mu_best_active - radius > arm.mu() + radius {
                arm.active = false;
            }
        }

        let active_count = arms.iter().filter(|a| a.active).count();
        if active_count == 1 || total_offline > budget {
            break;
        }
    }

    let survivors: Vec<&Arm> = arms.iter().filter(|a| a.active).collect();
    let positive = survivors.len() == 1 && survivors[0].role == Role::Candidate && {
        // The survivor must also hold the strictly highest final ratio.
        let best = survivors[0].mu();
        arms.iter().all(|a| a.active || a.mu() < best)
    };
    let parent_id = positive.then(|| survivors[0].model.id.clone());

    let mut queries = QueryUsage { online, offline: BTreeMap::new() };
    let mut stats = Vec::with_capacity(arms.len());
    for arm in &arms {
        stats.push(SimilarityStat::new(&arm.model.id, arm.hits, arm.tots));
        queries.offline.insert(arm.model.id.clone(), arm.tots);
    }

    Ok(Verdict {
        positive,
        parent_id,
        family_alpha: alpha,
        pvalues: Vec::new(),
        stats,
        queries,
        sampling_mode: SamplingMode::Uniform,
        tester_kind: TesterKind::Bai,
        bai: Some(BaiTrace { rounds, active_vs_all_mismatch: mismatch }),
    })
}
