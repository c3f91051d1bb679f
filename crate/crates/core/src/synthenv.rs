//! Synthetic problem universe with an exact verifier.
//!
//! A problem has a taxonomy of `C` strategies plus one reserved `INVALID`
//! symbol (which stands for malformed or answer-leaking methods). Each
//! strategy owns a possibly empty set of correct answers over an alphabet of
//! size `A`; strategies with a non-empty set are *viable*. The verifier is a
//! lookup into that table, and the rule-based judge checks the tuple contract
//! that the learned validity gate later has to reproduce.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stage};

/// Version written into every suite JSONL line.
pub const SUITE_FORMAT_VERSION: u32 = 1;

/// First problem id of the evaluation split. Train ids live below it.
pub const EVAL_ID_BASE: u64 = 1_000_000;

/// Dimension of the strategy embeddings.
pub const EMBED_DIM: usize = 16;

const EMBED_TAG: u64 = 0x0045_4D42_4544;

const TAXONOMY: [&str; 10] = [
    "dp",
    "greedy",
    "graph",
    "search",
    "math",
    "simulation",
    "data-structure",
    "divide-and-conquer",
    "brute-force",
    "other",
];

const VERBS: [&str; 8] = [
    "build", "sweep", "enumerate", "reduce", "memoize", "partition", "simulate", "bound",
];
const NOUNS: [&str; 8] = [
    "states", "intervals", "edges", "prefixes", "residues", "segments", "queries", "candidates",
];

const STATEMENT_WORDS: [&str; 48] = [
    "given", "array", "integers", "find", "minimum", "maximum", "number", "ways", "graph",
    "vertices", "edges", "string", "length", "query", "each", "output", "modulo", "prime",
    "sum", "subarray", "tree", "path", "distance", "cost", "grid", "cells", "moves",
    "sequence", "pairs", "distinct", "sorted", "interval", "operation", "replace", "count",
    "characters", "weights", "capacity", "balanced", "brackets", "matrix", "rows", "columns",
    "divisors", "segments", "points", "circle", "permutation",
];

/// A strategy symbol. Values `0..C` are taxonomy entries; `C` is `INVALID`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strategy(pub u16);

/// An answer symbol in `0..A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Answer(pub u16);

/// Which side of the train/eval split a suite belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Eval,
}

impl Split {
    fn id_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Eval => EVAL_ID_BASE,
        }
    }
}

/// Suite generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub problem_count: usize,
    pub taxonomy_size: usize,
    pub answer_alphabet: usize,
    /// Per-strategy viability probability, used only when `multimodality` is 0.
    pub viability_rate: f64,
    /// Exact number of viable strategies per problem (0 = draw by `viability_rate`).
    pub multimodality: usize,
    pub answers_per_viable: usize,
    /// All viable strategies share one correct answer, which becomes the
    /// problem's canonical label (the maj@K subset).
    pub single_canonical: bool,
    pub split: Split,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            problem_count: 200,
            taxonomy_size: 8,
            answer_alphabet: 6,
            viability_rate: 0.3,
            multimodality: 3,
            answers_per_viable: 1,
            single_canonical: false,
            split: Split::Train,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taxonomy_size < 2 {
            return Err(Error::Config("taxonomy_size must be at least 2".into()));
        }
        if self.taxonomy_size > 30 {
            return Err(Error::Config("taxonomy_size above 30 is not supported".into()));
        }
        if self.answer_alphabet < 2 || self.answer_alphabet > u16::MAX as usize {
            return Err(Error::Config("answer_alphabet must be in 2..=65535".into()));
        }
        if self.multimodality > self.taxonomy_size {
            return Err(Error::Config(format!(
                "multimodality {} exceeds taxonomy size {}",
                self.multimodality, self.taxonomy_size
            )));
        }
        if !(0.0..=1.0).contains(&self.viability_rate) {
            return Err(Error::Config("viability_rate must be a probability".into()));
        }
        if self.answers_per_viable == 0 || self.answers_per_viable > self.answer_alphabet {
            return Err(Error::Config(
                "answers_per_viable must be in 1..=answer_alphabet".into(),
            ));
        }
        if self.single_canonical && self.answers_per_viable != 1 {
            return Err(Error::Config(
                "single_canonical suites need answers_per_viable = 1".into(),
            ));
        }
        let span = EVAL_ID_BASE as usize;
        if self.problem_count > span {
            return Err(Error::Config(format!("problem_count above {span}")));
        }
        Ok(())
    }
}

/// One synthetic task together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: u64,
    pub statement: String,
    pub taxonomy_size: usize,
    pub answer_alphabet: usize,
    /// Indexed by strategy `0..C`; sorted and deduplicated.
    pub correct_answers: Vec<Vec<Answer>>,
    /// Planner tokens per strategy symbol, `C + 1` entries (last is `INVALID`).
    pub planner_cost: Vec<u32>,
    /// Solver tokens per `(strategy, answer)`, shape `(C + 1) x A`.
    pub solver_cost: Vec<Vec<u32>>,
    #[serde(default)]
    pub canonical_answer: Option<Answer>,
}

impl ProblemSpec {
    /// Number of planner symbols including `INVALID`.
    pub fn symbol_count(&self) -> usize {
        self.taxonomy_size + 1
    }

    pub fn invalid(&self) -> Strategy {
        Strategy(self.taxonomy_size as u16)
    }

    pub fn is_invalid(&self, s: Strategy) -> bool {
        s.0 as usize == self.taxonomy_size
    }

    pub fn viable_strategies(&self) -> BTreeSet<Strategy> {
        self.correct_answers
            .iter()
            .enumerate()
            .filter(|(_, set)| !set.is_empty())
            .map(|(s, _)| Strategy(s as u16))
            .collect()
    }

    pub fn is_viable(&self, s: Strategy) -> bool {
        self.correct_answers
            .get(s.0 as usize)
            .is_some_and(|set| !set.is_empty())
    }

    pub fn check_strategy(&self, s: Strategy) -> Result<()> {
        if (s.0 as usize) > self.taxonomy_size {
            return Err(Error::Input(format!(
                "strategy {} outside 0..={} for problem {}",
                s.0, self.taxonomy_size, self.id
            )));
        }
        Ok(())
    }

    pub fn check_answer(&self, y: Answer) -> Result<()> {
        if (y.0 as usize) >= self.answer_alphabet {
            return Err(Error::Input(format!(
                "answer {} outside 0..{} for problem {}",
                y.0, self.answer_alphabet, self.id
            )));
        }
        Ok(())
    }

    /// Planner plus solver tokens decoded for one branch.
    pub fn branch_cost(&self, s: Strategy, y: Answer) -> u32 {
        self.solver_cost[s.0 as usize][y.0 as usize]
    }

    /// Algorithmic category of a strategy; `INVALID` gets its own category `C`.
    pub fn category(&self, s: Strategy) -> usize {
        s.0 as usize
    }

    pub fn strategy_name(&self, s: Strategy) -> String {
        if self.is_invalid(s) {
            "final-answer-leak".to_string()
        } else if (s.0 as usize) < TAXONOMY.len() {
            TAXONOMY[s.0 as usize].to_string()
        } else {
            format!("strategy-{}", s.0)
        }
    }

    /// Surface text of a strategy as a token sequence.
    pub fn strategy_text(&self, s: Strategy) -> Vec<String> {
        let salt = STATEMENT_WORDS[(rng::derive_seed(&[self.id]) % STATEMENT_WORDS.len() as u64) as usize];
        let k = s.0 as usize;
        vec![
            self.strategy_name(s),
            "approach".into(),
            "on".into(),
            "problem".into(),
            salt.into(),
            VERBS[k % VERBS.len()].into(),
            NOUNS[(k / VERBS.len() + k) % NOUNS.len()].into(),
        ]
    }

    /// Checks structural invariants of a loaded or generated problem.
    pub fn validate(&self) -> Result<()> {
        let c = self.taxonomy_size;
        let a = self.answer_alphabet;
        if c < 2 || a < 2 {
            return Err(Error::Data(format!("problem {}: C and A must be >= 2", self.id)));
        }
        if self.correct_answers.len() != c {
            return Err(Error::Data(format!(
                "problem {}: correct_answers has {} rows, expected {c}",
                self.id,
                self.correct_answers.len()
            )));
        }
        if self
            .correct_answers
            .iter()
            .flatten()
            .any(|y| y.0 as usize >= a)
        {
            return Err(Error::Data(format!("problem {}: answer out of range", self.id)));
        }
        if self.planner_cost.len() != c + 1
            || self.solver_cost.len() != c + 1
            || self.solver_cost.iter().any(|row| row.len() != a)
        {
            return Err(Error::Data(format!("problem {}: cost table shape", self.id)));
        }
        if self.planner_cost.iter().chain(self.solver_cost.iter().flatten()).any(|&t| t == 0) {
            return Err(Error::Data(format!("problem {}: zero token cost", self.id)));
        }
        Ok(())
    }
}

/// Exact verifier: 1 iff `answer` is a correct answer of `strategy`.
pub fn verify(problem: &ProblemSpec, strategy: Strategy, answer: Answer) -> Result<bool> {
    problem.check_strategy(strategy)?;
    problem.check_answer(answer)?;
    if problem.is_invalid(strategy) {
        return Ok(false);
    }
    Ok(problem.correct_answers[strategy.0 as usize]
        .binary_search(&answer)
        .is_ok())
}

/// Rule-based validity judge over a strategy tuple of expected length `k`.
///
/// Accepts iff the tuple has exactly `k` entries, none is `INVALID` (or out
/// of range), and no two entries are equal.
pub fn judge_tuple(problem: &ProblemSpec, tuple: &[Strategy], k: usize) -> bool {
    if tuple.len() != k {
        return false;
    }
    let mut seen = 0u64;
    for &s in tuple {
        if s.0 as usize >= problem.taxonomy_size {
            return false;
        }
        let bit = 1u64 << s.0;
        if seen & bit != 0 {
            return false;
        }
        seen |= bit;
    }
    true
}

/// Method-level judge used by the SFT funnel: a candidate survives if it is a
/// taxonomy strategy not already kept.
pub fn judge_method(problem: &ProblemSpec, kept: &[Strategy], candidate: Strategy) -> bool {
    (candidate.0 as usize) < problem.taxonomy_size && !kept.contains(&candidate)
}

/// Deterministic unit-norm embedding of a strategy for one problem.
pub fn embed(problem: &ProblemSpec, strategy: Strategy) -> Result<Vec<f64>> {
    problem.check_strategy(strategy)?;
    let mut rng = rng::stream(&[EMBED_TAG, problem.id, strategy.0 as u64]);
    let mut v: Vec<f64> = (0..EMBED_DIM)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Generates a reproducible suite from `cfg`.
pub fn generate_suite(cfg: &EnvConfig) -> Result<Vec<ProblemSpec>> {
    cfg.validate()?;
    let base = cfg.split.id_base();
    Ok((0..cfg.problem_count as u64)
        .map(|j| generate_problem(cfg, base + j))
        .collect())
}

fn generate_problem(cfg: &EnvConfig, id: u64) -> ProblemSpec {
    let c = cfg.taxonomy_size;
    let a = cfg.answer_alphabet;
    let mut rng = rng::stream(&[cfg.seed, stage::SUITE, id]);

    let viable: Vec<usize> = if cfg.multimodality > 0 {
        let mut v = sample_indices(&mut rng, c, cfg.multimodality).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..c).filter(|_| rng.random_bool(cfg.viability_rate)).collect()
    };

    let canonical = cfg
        .single_canonical
        .then(|| Answer(rng.random_range(0..a) as u16));
    let mut correct_answers = vec![Vec::new(); c];
    for &s in &viable {
        let mut set: Vec<Answer> = match canonical {
            Some(y) => vec![y],
            None => sample_indices(&mut rng, a, cfg.answers_per_viable)
                .into_iter()
                .map(|y| Answer(y as u16))
                .collect(),
        };
        set.sort_unstable();
        correct_answers[s] = set;
    }
    let canonical_answer = canonical.filter(|_| !viable.is_empty());

    let planner_cost = (0..=c)
        .map(|s| if s == c { rng.random_range(4..12) } else { rng.random_range(12..40) })
        .collect();
    let solver_cost = (0..=c)
        .map(|_| (0..a).map(|_| rng.random_range(60..400)).collect())
        .collect();

    let words = rng.random_range(18..30);
    let mut statement = format!("problem-{id}");
    for _ in 0..words {
        statement.push(' ');
        statement.push_str(STATEMENT_WORDS[rng.random_range(0..STATEMENT_WORDS.len())]);
    }

    ProblemSpec {
        id,
        statement,
        taxonomy_size: c,
        answer_alphabet: a,
        correct_answers,
        planner_cost,
        solver_cost,
        canonical_answer,
    }
}

#[derive(Serialize, Deserialize)]
struct SuiteLine {
    format_version: u32,
    #[serde(flatten)]
    problem: ProblemSpec,
}

/// Writes a suite as JSONL, one problem per line.
pub fn write_suite<W: Write>(mut out: W, suite: &[ProblemSpec]) -> Result<()> {
    for problem in suite {
        let line = SuiteLine {
            format_version: SUITE_FORMAT_VERSION,
            problem: problem.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a suite written by [`write_suite`].
pub fn read_suite<R: BufRead>(input: R) -> Result<Vec<ProblemSpec>> {
    let mut suite = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SuiteLine = serde_json::from_str(&line)?;
        if parsed.format_version != SUITE_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "suite format version {} (expected {SUITE_FORMAT_VERSION})",
                parsed.format_version
            )));
        }
        parsed.problem.validate()?;
        suite.push(parsed.problem);
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::strategy::Strategy as _;
    use proptest::prelude::*;

    fn small(seed: u64) -> EnvConfig {
        EnvConfig {
            problem_count: 20,
            taxonomy_size: 4,
            answer_alphabet: 3,
            multimodality: 2,
            seed,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_suites() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_suite(&mut a, &generate_suite(&small(7)).unwrap()).unwrap();
        write_suite(&mut b, &generate_suite(&small(7)).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_suite(&mut c, &generate_suite(&small(8)).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multimodality_one_forces_single_viable() {
        let cfg = EnvConfig { multimodality: 1, taxonomy_size: 4, ..small(3) };
        for p in generate_suite(&cfg).unwrap() {
            assert_eq!(p.viable_strategies().len(), 1);
        }
    }

    #[test]
    fn mean_viable_count_is_exact() {
        let cfg = EnvConfig {
            multimodality: 3,
            taxonomy_size: 8,
            problem_count: 100,
            ..EnvConfig::default()
        };
        let suite = generate_suite(&cfg).unwrap();
        let total: usize = suite.iter().map(|p| p.viable_strategies().len()).sum();
        assert_eq!(total as f64 / suite.len() as f64, 3.0);
    }

    #[test]
    fn multimodality_above_taxonomy_is_rejected() {
        let cfg = EnvConfig { multimodality: 5, taxonomy_size: 4, ..small(0) };
        assert!(matches!(generate_suite(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn train_and_eval_ids_are_disjoint() {
        let train = generate_suite(&small(1)).unwrap();
        let eval = generate_suite(&EnvConfig { split: Split::Eval, ..small(1) }).unwrap();
        let max_train = train.iter().map(|p| p.id).max().unwrap();
        let min_eval = eval.iter().map(|p| p.id).min().unwrap();
        assert!(max_train < min_eval);
    }

    #[test]
    fn verifier_cases() {
        let suite = generate_suite(&small(11)).unwrap();
        let p = &suite[0];
        let viable = *p.viable_strategies().iter().next().unwrap();
        let y = p.correct_answers[viable.0 as usize][0];
        assert!(verify(p, viable, y).unwrap());
        for a in 0..p.answer_alphabet as u16 {
            assert!(!verify(p, p.invalid(), Answer(a)).unwrap());
        }
        let dead = (0..p.taxonomy_size as u16)
            .map(Strategy)
            .find(|s| !p.is_viable(*s))
            .unwrap();
        for a in 0..p.answer_alphabet as u16 {
            assert!(!verify(p, dead, Answer(a)).unwrap());
        }
        assert!(matches!(verify(p, Strategy(99), Answer(0)), Err(Error::Input(_))));
        assert!(matches!(verify(p, viable, Answer(99)), Err(Error::Input(_))));
    }

    #[test]
    fn invalid_is_never_viable() {
        for p in generate_suite(&small(5)).unwrap() {
            assert!(!p.viable_strategies().contains(&p.invalid()));
            p.validate().unwrap();
        }
    }

    #[test]
    fn judge_rules() {
        let p = &generate_suite(&small(2)).unwrap()[0];
        let s = |v: &[u16]| v.iter().map(|&x| Strategy(x)).collect::<Vec<_>>();
        assert!(judge_tuple(p, &s(&[0, 1, 2, 3]), 4));
        assert!(!judge_tuple(p, &s(&[0, 0, 2, 3]), 4));
        assert!(!judge_tuple(p, &s(&[0, 1, 4, 3]), 4)); // 4 == INVALID for C=4
        assert!(!judge_tuple(p, &s(&[0, 1, 2]), 4));
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let p = &generate_suite(&small(2)).unwrap()[0];
        let e1 = embed(p, Strategy(1)).unwrap();
        let e2 = embed(p, Strategy(1)).unwrap();
        assert_eq!(e1, e2);
        let norm: f64 = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let cos: f64 = e1.iter().zip(&e2).map(|(a, b)| a * b).sum();
        assert!((1.0 - cos).abs() < 1e-12);
    }

    #[test]
    fn suite_jsonl_round_trip() {
        let suite = generate_suite(&EnvConfig { single_canonical: true, ..small(4) }).unwrap();
        let mut buf = Vec::new();
        write_suite(&mut buf, &suite).unwrap();
        let back = read_suite(buf.as_slice()).unwrap();
        assert_eq!(back, suite);
        assert!(back.iter().all(|p| p.canonical_answer.is_some()));
    }

    proptest! {
        #[test]
        fn verify_is_pure(seed in 0u64..50, s in 0u16..5, y in 0u16..3) {
            let p = &generate_suite(&small(seed)).unwrap()[0];
            let first = verify(p, Strategy(s), Answer(y)).unwrap();
            for _ in 0..20 {
                prop_assert_eq!(verify(p, Strategy(s), Answer(y)).unwrap(), first);
            }
        }

        #[test]
        fn judge_is_permutation_invariant(perm in Just(vec![0u16, 1, 2, 3]).prop_shuffle(), dup in any::<bool>()) {
            let p = &generate_suite(&small(1)).unwrap()[0];
            let mut t: Vec<Strategy> = perm.into_iter().map(Strategy).collect();
            if dup { t[3] = t[0]; }
            let mut sorted = t.clone();
            sorted.sort();
            prop_assert_eq!(judge_tuple(p, &t, 4), judge_tuple(p, &sorted, 4));
            prop_assert_eq!(judge_tuple(p, &t, 4), !dup);
        }
    }
}
