//! Tabular planner and solver sharing one parameter vector.
//!
//! The planner `q(S | x)` emits a strategy tuple one symbol at a time; each
//! step reads the logit row for `(problem, position, history set)`, where the
//! history set is a bitmask over the `C + 1` planner symbols already emitted.
//! The solver `p(y | x, s)` reads one logit row per `(problem, strategy)`.
//!
//! Parameters are split into a plan region and a solve region. Every scalar
//! belongs to exactly one region, and the optimizer can restrict updates to
//! either side.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, stage};
use crate::synthenv::{self, Answer, ProblemSpec, Strategy};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Planner symbols above this count make the dense history table too large.
pub const MAX_PLAN_SYMBOLS: usize = 20;

/// How a tuple is sampled from the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// Each position conditions on the set of earlier symbols.
    #[default]
    Joint,
    /// Every position reads the empty-history row of position 0.
    Iid,
}

impl std::fmt::Display for PlanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanMode::Joint => f.write_str("joint"),
            PlanMode::Iid => f.write_str("iid"),
        }
    }
}

/// Which half of the parameter vector a scalar belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Plan,
    Solve,
}

/// Selects the regions an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionMask {
    pub plan: bool,
    pub solve: bool,
}

impl RegionMask {
    pub const ALL: Self = Self { plan: true, solve: true };
    pub const PLAN: Self = Self { plan: true, solve: false };
    pub const SOLVE: Self = Self { plan: false, solve: true };

    pub fn allows(self, region: Region) -> bool {
        match region {
            Region::Plan => self.plan,
            Region::Solve => self.solve,
        }
    }
}

/// Shape of one planner table: the reachable `(position, history)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLayout {
    k: usize,
    symbols: usize,
    row_of: Vec<u32>,
    keys: Vec<(usize, u32)>,
}

impl PlanLayout {
    pub fn new(k: usize, symbols: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("tuple size K must be positive".into()));
        }
        if !(2..=MAX_PLAN_SYMBOLS).contains(&symbols) {
            return Err(Error::Config(format!(
                "planner symbol count {symbols} outside 2..={MAX_PLAN_SYMBOLS}"
            )));
        }
        let width = 1usize << symbols;
        let mut row_of = vec![u32::MAX; k * width];
        let mut keys = Vec::new();
        for pos in 0..k {
            for mask in 0..width as u32 {
                if (mask.count_ones() as usize) <= pos {
                    row_of[pos * width + mask as usize] = keys.len() as u32;
                    keys.push((pos, mask));
                }
            }
        }
        Ok(Self { k, symbols, row_of, keys })
    }

    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Row index for a `(position, history mask)` pair, if reachable.
    pub fn row(&self, pos: usize, mask: u32) -> Option<usize> {
        if pos >= self.k || mask as usize >= (1usize << self.symbols) {
            return None;
        }
        let r = self.row_of[(pos << self.symbols) + mask as usize];
        (r != u32::MAX).then_some(r as usize)
    }

    pub fn key(&self, row: usize) -> (usize, u32) {
        self.keys[row]
    }
}

/// One logit row read along a sampled path, with the symbol taken there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowStep {
    pub offset: usize,
    pub symbol: usize,
}

/// Tabular logits for all problems of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    taxonomy_size: usize,
    answer_alphabet: usize,
    layout: Arc<PlanLayout>,
    problem_ids: Vec<u64>,
    index: HashMap<u64, usize>,
    pub(crate) plan: Vec<f64>,
    pub(crate) solve: Vec<f64>,
}

impl PolicyParams {
    /// Allocates zero logits for every problem of `suite`.
    pub fn zeros(suite: &[ProblemSpec], k: usize) -> Result<Self> {
        let first = suite
            .first()
            .ok_or_else(|| Error::Config("cannot build a policy for an empty suite".into()))?;
        let c = first.taxonomy_size;
        let a = first.answer_alphabet;
        if suite.iter().any(|p| p.taxonomy_size != c || p.answer_alphabet != a) {
            return Err(Error::Shape("suite mixes taxonomy or alphabet sizes".into()));
        }
        let layout = Arc::new(PlanLayout::new(k, c + 1)?);
        let problem_ids: Vec<u64> = suite.iter().map(|p| p.id).collect();
        let index: HashMap<u64, usize> =
            problem_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if index.len() != problem_ids.len() {
            return Err(Error::Data("duplicate problem ids in suite".into()));
        }
        let n = problem_ids.len();
        let plan = vec![0.0; n * layout.rows() * (c + 1)];
        let solve = vec![0.0; n * (c + 1) * a];
        Ok(Self { taxonomy_size: c, answer_alphabet: a, layout, problem_ids, index, plan, solve })
    }

    /// Logits drawn from `Normal(0, std)`, one independent stream per problem.
    pub fn init(suite: &[ProblemSpec], k: usize, seed: u64, std: f64) -> Result<Self> {
        let mut params = Self::zeros(suite, k)?;
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::Config(format!("init std: {e}")))?;
        let plan_per = params.plan_block();
        let solve_per = params.solve_block();
        for (pi, &id) in params.problem_ids.iter().enumerate() {
            let mut rng = rng::stream(&[seed, stage::INIT, id]);
            for x in &mut params.plan[pi * plan_per..(pi + 1) * plan_per] {
                *x = normal.sample(&mut rng);
            }
            for x in &mut params.solve[pi * solve_per..(pi + 1) * solve_per] {
                *x = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.layout.k()
    }

    pub fn taxonomy_size(&self) -> usize {
        self.taxonomy_size
    }

    pub fn symbols(&self) -> usize {
        self.taxonomy_size + 1
    }

    pub fn answer_alphabet(&self) -> usize {
        self.answer_alphabet
    }

    pub fn layout(&self) -> &PlanLayout {
        &self.layout
    }

    pub fn problem_ids(&self) -> &[u64] {
        &self.problem_ids
    }

    fn plan_block(&self) -> usize {
        self.layout.rows() * self.symbols()
    }

    fn solve_block(&self) -> usize {
        self.symbols() * self.answer_alphabet
    }

    pub fn problem_index(&self, problem_id: u64) -> Result<usize> {
        self.index
            .get(&problem_id)
            .copied()
            .ok_or_else(|| Error::Coverage(format!("no logits for problem {problem_id}")))
    }

    /// Checks that `problem` matches the table shape.
    pub fn covers(&self, problem: &ProblemSpec) -> Result<usize> {
        let pi = self.problem_index(problem.id)?;
        if problem.taxonomy_size != self.taxonomy_size || problem.answer_alphabet != self.answer_alphabet {
            return Err(Error::Shape(format!("problem {} does not match policy shape", problem.id)));
        }
        Ok(pi)
    }

    /// Offset of the planner row for `(position, mask)` in the plan region.
    pub fn plan_offset(&self, pi: usize, pos: usize, mask: u32) -> Result<usize> {
        let row = self.layout.row(pos, mask).ok_or_else(|| {
            Error::Coverage(format!("no planner row for position {pos}, history {mask:#b}"))
        })?;
        Ok(pi * self.plan_block() + row * self.symbols())
    }

    /// Offset of the solver row for strategy `s` in the solve region.
    pub fn solve_offset(&self, pi: usize, s: Strategy) -> Result<usize> {
        if s.0 as usize >= self.symbols() {
            return Err(Error::Input(format!("strategy {} out of range", s.0)));
        }
        Ok(pi * self.solve_block() + s.0 as usize * self.answer_alphabet)
    }

    pub fn plan_row(&self, offset: usize) -> &[f64] {
        &self.plan[offset..offset + self.symbols()]
    }

    pub fn solve_row(&self, offset: usize) -> &[f64] {
        &self.solve[offset..offset + self.answer_alphabet]
    }

    /// Planner rows read while emitting `tuple` in `mode`.
    pub fn tuple_path(&self, pi: usize, tuple: &[Strategy], mode: PlanMode) -> Result<Vec<RowStep>> {
        let mut mask = 0u32;
        let mut path = Vec::with_capacity(tuple.len());
        for (pos, &s) in tuple.iter().enumerate() {
            if s.0 as usize >= self.symbols() {
                return Err(Error::Input(format!("strategy {} out of range", s.0)));
            }
            let offset = match mode {
                PlanMode::Joint => self.plan_offset(pi, pos, mask)?,
                PlanMode::Iid => self.plan_offset(pi, 0, 0)?,
            };
            path.push(RowStep { offset, symbol: s.0 as usize });
            mask |= 1 << s.0;
        }
        Ok(path)
    }

    pub fn param_count(&self) -> usize {
        self.plan.len() + self.solve.len()
    }

    pub fn plan_len(&self) -> usize {
        self.plan.len()
    }

    pub fn solve_len(&self) -> usize {
        self.solve.len()
    }

    /// Region of flat parameter `i` (plan scalars first, then solve scalars).
    pub fn region(&self, i: usize) -> Region {
        if i < self.plan.len() {
            Region::Plan
        } else {
            Region::Solve
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < self.plan.len() {
            self.plan[i]
        } else {
            self.solve[i - self.plan.len()]
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        if i < self.plan.len() {
            self.plan[i] = value;
        } else {
            let j = i - self.plan.len();
            self.solve[j] = value;
        }
    }

    pub fn plan_values(&self) -> &[f64] {
        &self.plan
    }

    pub fn solve_values(&self) -> &[f64] {
        &self.solve
    }

    pub fn plan_values_mut(&mut self) -> &mut [f64] {
        &mut self.plan
    }

    pub fn solve_values_mut(&mut self) -> &mut [f64] {
        &mut self.solve
    }

    pub fn is_finite(&self) -> bool {
        self.plan.iter().chain(&self.solve).all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.taxonomy_size == other.taxonomy_size
            && self.answer_alphabet == other.answer_alphabet
            && self.layout.k() == other.layout.k()
            && self.problem_ids == other.problem_ids
    }

    fn hash_region(hasher: &mut Sha256, values: &[f64]) {
        for v in values {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }

    /// SHA-256 over the exact bits of the plan region.
    pub fn plan_digest(&self) -> String {
        let mut h = Sha256::new();
        Self::hash_region(&mut h, &self.plan);
        hex::encode(h.finalize())
    }

    /// SHA-256 over the exact bits of the solve region.
    pub fn solve_digest(&self) -> String {
        let mut h = Sha256::new();
        Self::hash_region(&mut h, &self.solve);
        hex::encode(h.finalize())
    }

    /// SHA-256 over shape, ids and every logit.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in [self.taxonomy_size, self.answer_alphabet, self.k()] {
            h.update((x as u64).to_le_bytes());
        }
        for id in &self.problem_ids {
            h.update(id.to_le_bytes());
        }
        Self::hash_region(&mut h, &self.plan);
        Self::hash_region(&mut h, &self.solve);
        hex::encode(h.finalize())
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Draws an index from the categorical distribution `softmax(logits)`.
pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples a tuple where each position conditions on the earlier set.
pub fn sample_tuple_joint<R: Rng + ?Sized>(
    params: &PolicyParams,
    problem: &ProblemSpec,
    rng: &mut R,
) -> Result<Vec<Strategy>> {
    sample_tuple(params, problem, PlanMode::Joint, rng)
}

/// Samples `K` independent draws from the empty-history planner row.
pub fn sample_tuple_iid<R: Rng + ?Sized>(
    params: &PolicyParams,
    problem: &ProblemSpec,
    rng: &mut R,
) -> Result<Vec<Strategy>> {
    sample_tuple(params, problem, PlanMode::Iid, rng)
}

pub fn sample_tuple<R: Rng + ?Sized>(
    params: &PolicyParams,
    problem: &ProblemSpec,
    mode: PlanMode,
    rng: &mut R,
) -> Result<Vec<Strategy>> {
    let pi = params.covers(problem)?;
    let mut mask = 0u32;
    let mut tuple = Vec::with_capacity(params.k());
    for pos in 0..params.k() {
        let offset = match mode {
            PlanMode::Joint => params.plan_offset(pi, pos, mask)?,
            PlanMode::Iid => params.plan_offset(pi, 0, 0)?,
        };
        let s = sample_categorical(params.plan_row(offset), rng);
        mask |= 1 << s;
        tuple.push(Strategy(s as u16));
    }
    Ok(tuple)
}

pub fn sample_answer<R: Rng + ?Sized>(
    params: &PolicyParams,
    problem: &ProblemSpec,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Answer> {
    let pi = params.covers(problem)?;
    let offset = params.solve_offset(pi, strategy)?;
    Ok(Answer(sample_categorical(params.solve_row(offset), rng) as u16))
}

/// `log q(S | x)` under the given sampling mode.
pub fn tuple_logprob(params: &PolicyParams, problem_id: u64, tuple: &[Strategy], mode: PlanMode) -> Result<f64> {
    let pi = params.problem_index(problem_id)?;
    let path = params.tuple_path(pi, tuple, mode)?;
    Ok(path
        .iter()
        .map(|step| log_softmax(params.plan_row(step.offset))[step.symbol])
        .sum())
}

/// `log p(y | x, s)`.
pub fn answer_logprob(params: &PolicyParams, problem_id: u64, s: Strategy, y: Answer) -> Result<f64> {
    let pi = params.problem_index(problem_id)?;
    let offset = params.solve_offset(pi, s)?;
    let row = params.solve_row(offset);
    let y = y.0 as usize;
    if y >= row.len() {
        return Err(Error::Input(format!("answer {y} out of range")));
    }
    Ok(log_softmax(row)[y])
}

/// `log pi(tau | x) = log q(S | x) + sum_i log p(y_i | x, s_i)`.
pub fn trajectory_logprob(params: &PolicyParams, traj: &Trajectory) -> Result<f64> {
    let mut lp = tuple_logprob(params, traj.problem_id, &traj.tuple, traj.mode)?;
    for (&s, &y) in traj.tuple.iter().zip(&traj.answers) {
        lp += answer_logprob(params, traj.problem_id, s, y)?;
    }
    Ok(lp)
}

/// One rollout: a strategy tuple, one answer per branch, and verifier bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: u64,
    pub mode: PlanMode,
    pub tuple: Vec<Strategy>,
    pub answers: Vec<Answer>,
    pub outcomes: Vec<bool>,
    pub planner_tokens: u32,
    pub solver_tokens: Vec<u32>,
}

impl Trajectory {
    pub fn decoded_tokens(&self) -> u64 {
        self.planner_tokens as u64 + self.solver_tokens.iter().map(|&t| t as u64).sum::<u64>()
    }

    pub fn any_pass(&self) -> bool {
        self.outcomes.iter().any(|&r| r)
    }
}

/// Samples a tuple, solves every branch, and verifies each answer.
pub fn rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    problem: &ProblemSpec,
    mode: PlanMode,
    rng: &mut R,
) -> Result<Trajectory> {
    let tuple = sample_tuple(params, problem, mode, rng)?;
    let mut answers = Vec::with_capacity(tuple.len());
    let mut outcomes = Vec::with_capacity(tuple.len());
    let mut solver_tokens = Vec::with_capacity(tuple.len());
    for &s in &tuple {
        let y = sample_answer(params, problem, s, rng)?;
        outcomes.push(synthenv::verify(problem, s, y)?);
        solver_tokens.push(problem.branch_cost(s, y));
        answers.push(y);
    }
    let planner_tokens = tuple.iter().map(|s| problem.planner_cost[s.0 as usize]).sum();
    Ok(Trajectory {
        problem_id: problem.id,
        mode,
        tuple,
        answers,
        outcomes,
        planner_tokens,
        solver_tokens,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    key: String,
    region: Region,
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    k: usize,
    taxonomy_size: usize,
    answer_alphabet: usize,
    problems: Vec<u64>,
    entries: Vec<CheckpointEntry>,
}

impl PolicyParams {
    /// Writes a JSON checkpoint of `key -> logit row` entries with region tags.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let mut entries = Vec::with_capacity(self.problem_ids.len() * (self.layout.rows() + self.symbols()));
        for (pi, &id) in self.problem_ids.iter().enumerate() {
            for row in 0..self.layout.rows() {
                let (pos, mask) = self.layout.key(row);
                let off = pi * self.plan_block() + row * self.symbols();
                entries.push(CheckpointEntry {
                    key: format!("plan/{id}/{pos}/{mask}"),
                    region: Region::Plan,
                    logits: self.plan[off..off + self.symbols()].to_vec(),
                });
            }
            for s in 0..self.symbols() {
                let off = pi * self.solve_block() + s * self.answer_alphabet;
                entries.push(CheckpointEntry {
                    key: format!("solve/{id}/{s}"),
                    region: Region::Solve,
                    logits: self.solve[off..off + self.answer_alphabet].to_vec(),
                });
            }
        }
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            k: self.k(),
            taxonomy_size: self.taxonomy_size,
            answer_alphabet: self.answer_alphabet,
            problems: self.problem_ids.clone(),
            entries,
        };
        serde_json::to_writer(out, &ckpt)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(input)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        let layout = Arc::new(PlanLayout::new(ckpt.k, ckpt.taxonomy_size + 1)?);
        let index: HashMap<u64, usize> =
            ckpt.problems.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let symbols = ckpt.taxonomy_size + 1;
        let n = ckpt.problems.len();
        let mut params = Self {
            taxonomy_size: ckpt.taxonomy_size,
            answer_alphabet: ckpt.answer_alphabet,
            layout,
            problem_ids: ckpt.problems,
            index,
            plan: Vec::new(),
            solve: Vec::new(),
        };
        params.plan = vec![f64::NAN; n * params.plan_block()];
        params.solve = vec![f64::NAN; n * params.solve_block()];
        for entry in ckpt.entries {
            let parts: Vec<&str> = entry.key.split('/').collect();
            let bad = || Error::Data(format!("bad checkpoint key {}", entry.key));
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
            match (entry.region, parts.as_slice()) {
                (Region::Plan, ["plan", id, pos, mask]) => {
                    let pi = params.problem_index(num(id)?)?;
                    let off = params.plan_offset(pi, num(pos)? as usize, num(mask)? as u32)?;
                    if entry.logits.len() != symbols {
                        return Err(bad());
                    }
                    params.plan[off..off + symbols].copy_from_slice(&entry.logits);
                }
                (Region::Solve, ["solve", id, s]) => {
                    let pi = params.problem_index(num(id)?)?;
                    let off = params.solve_offset(pi, Strategy(num(s)? as u16))?;
                    if entry.logits.len() != params.answer_alphabet {
                        return Err(bad());
                    }
                    params.solve[off..off + params.answer_alphabet].copy_from_slice(&entry.logits);
                }
                _ => return Err(bad()),
            }
        }
        if !params.is_finite() {
            return Err(Error::Data("checkpoint is missing rows or has non-finite logits".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_suite, EnvConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn suite(c: usize, a: usize) -> Vec<ProblemSpec> {
        generate_suite(&EnvConfig {
            problem_count: 3,
            taxonomy_size: c,
            answer_alphabet: a,
            multimodality: 1,
            seed: 9,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    fn enumerate_tuples(symbols: usize, k: usize) -> Vec<Vec<Strategy>> {
        let mut out = vec![vec![]];
        for _ in 0..k {
            out = out
                .into_iter()
                .flat_map(|t| {
                    (0..symbols).map(move |s| {
                        let mut t = t.clone();
                        t.push(Strategy(s as u16));
                        t
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn layout_counts_reachable_rows() {
        // K=4 over 9 symbols: histories of size <= position.
        let l = PlanLayout::new(4, 9).unwrap();
        assert_eq!(l.rows(), 1 + (1 + 9) + (1 + 9 + 36) + (1 + 9 + 36 + 84));
        assert!(l.row(1, 0b11).is_none());
        assert!(l.row(2, 0b11).is_some());
    }

    #[test]
    fn uniform_tuple_logprob() {
        let s = suite(4, 3);
        let params = PolicyParams::zeros(&s, 4).unwrap();
        let t = vec![Strategy(0), Strategy(1), Strategy(1), Strategy(4)];
        let lp = tuple_logprob(&params, s[0].id, &t, PlanMode::Joint).unwrap();
        assert!((lp - 4.0 * (1.0f64 / 5.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn tuple_probabilities_sum_to_one() {
        let s = suite(2, 2);
        let params = PolicyParams::init(&s, 2, 3, 1.0).unwrap();
        for mode in [PlanMode::Joint, PlanMode::Iid] {
            let total: f64 = enumerate_tuples(3, 2)
                .iter()
                .map(|t| tuple_logprob(&params, s[0].id, t, mode).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "{mode}: {total}");
        }
    }

    #[test]
    fn trajectory_logprob_decomposes() {
        let s = suite(3, 3);
        let params = PolicyParams::init(&s, 2, 5, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let traj = rollout(&params, &s[1], PlanMode::Joint, &mut rng).unwrap();
            let mut expected = tuple_logprob(&params, traj.problem_id, &traj.tuple, PlanMode::Joint).unwrap();
            for (&st, &y) in traj.tuple.iter().zip(&traj.answers) {
                expected += answer_logprob(&params, traj.problem_id, st, y).unwrap();
            }
            let got = trajectory_logprob(&params, &traj).unwrap();
            assert!((got - expected).abs() < 1e-12);
            assert!(got.is_finite());
        }
    }

    #[test]
    fn saturated_logits_give_argmax_tuple() {
        let s = suite(4, 3);
        let mut params = PolicyParams::zeros(&s, 4).unwrap();
        let pi = 0;
        let target = [2usize, 0, 3, 1];
        let mut mask = 0u32;
        for (pos, &t) in target.iter().enumerate() {
            let off = params.plan_offset(pi, pos, mask).unwrap();
            params.plan[off + t] = 40.0;
            mask |= 1 << t;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let t = sample_tuple_joint(&params, &s[0], &mut rng).unwrap();
            let t: Vec<usize> = t.iter().map(|x| x.0 as usize).collect();
            assert_eq!(t, target);
        }
        let lp = tuple_logprob(&params, s[0].id, &target.map(|x| Strategy(x as u16)), PlanMode::Joint).unwrap();
        assert!(lp.exp() >= 1.0 - 1e-6);
    }

    #[test]
    fn iid_collapse_with_deterministic_first_row() {
        let s = suite(4, 3);
        let mut params = PolicyParams::zeros(&s, 4).unwrap();
        let off = params.plan_offset(0, 0, 0).unwrap();
        params.plan[off + 2] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = sample_tuple_iid(&params, &s[0], &mut rng).unwrap();
        assert!(t.iter().all(|&x| x == Strategy(2)));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = suite(4, 3);
        let params = PolicyParams::init(&s, 4, 1, 1.0).unwrap();
        for mode in [PlanMode::Joint, PlanMode::Iid] {
            let a = sample_tuple(&params, &s[0], mode, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let b = sample_tuple(&params, &s[0], mode, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(a, b);
        }
        let y1 = sample_answer(&params, &s[0], Strategy(1), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y2 = sample_answer(&params, &s[0], Strategy(1), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn saturated_solver_answers() {
        let s = suite(4, 3);
        let mut params = PolicyParams::zeros(&s, 4).unwrap();
        let off = params.solve_offset(0, Strategy(1)).unwrap();
        params.solve[off + 2] = 45.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            assert_eq!(sample_answer(&params, &s[0], Strategy(1), &mut rng).unwrap(), Answer(2));
        }
    }

    #[test]
    fn missing_problem_is_a_coverage_error() {
        let s = suite(4, 3);
        let params = PolicyParams::zeros(&s[..1], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(sample_tuple_joint(&params, &s[2], &mut rng), Err(Error::Coverage(_))));
    }

    #[test]
    fn rollout_outcomes_and_tokens() {
        let s = suite(4, 3);
        let p = &s[0];
        let mut params = PolicyParams::zeros(&s, 4).unwrap();
        let viable = *p.viable_strategies().iter().next().unwrap();
        let y = p.correct_answers[viable.0 as usize][0];
        // Planner always emits the viable strategy; solver always answers correctly.
        for row in 0..params.layout().rows() {
            let off = row * params.symbols();
            params.plan[off + viable.0 as usize] = 60.0;
        }
        let off = params.solve_offset(0, viable).unwrap();
        params.solve[off + y.0 as usize] = 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = rollout(&params, p, PlanMode::Joint, &mut rng).unwrap();
        assert!(t.outcomes.iter().all(|&r| r));
        let expected: u64 = t.tuple.iter().map(|s| p.planner_cost[s.0 as usize] as u64).sum::<u64>()
            + t.tuple.iter().zip(&t.answers).map(|(&s, &y)| p.branch_cost(s, y) as u64).sum::<u64>();
        assert_eq!(t.decoded_tokens(), expected);

        // Only non-viable strategies and INVALID: everything fails.
        let mut params = PolicyParams::zeros(&s, 4).unwrap();
        let dead = (0..p.taxonomy_size as u16).map(Strategy).find(|x| !p.is_viable(*x)).unwrap();
        let symbols = params.symbols();
        for row in 0..params.layout().rows() {
            params.plan[row * symbols + dead.0 as usize] = 60.0;
        }
        let t = rollout(&params, p, PlanMode::Iid, &mut rng).unwrap();
        assert!(t.outcomes.iter().all(|&r| !r));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let s = suite(3, 3);
        let params = PolicyParams::init(&s, 3, 12, 0.3).unwrap();
        let mut buf = Vec::new();
        params.write_checkpoint(&mut buf).unwrap();
        let back = PolicyParams::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.digest(), params.digest());
        assert_eq!(back, params);
    }

    #[test]
    fn regions_partition_parameters() {
        let s = suite(3, 3);
        let params = PolicyParams::zeros(&s, 2).unwrap();
        let plan = (0..params.param_count()).filter(|&i| params.region(i) == Region::Plan).count();
        assert_eq!(plan, params.plan_len());
        assert_eq!(params.param_count() - plan, params.solve_len());
    }
}
