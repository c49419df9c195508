//! Aging evolution with proxy-guided admission, plus the two baselines it is compared against.
//!
//! All three search methods implement [`SearchMethod`] and are looked up by name
//! through a [`MethodRegistry`].
//!
//! Every random decision draws from a stream derived from the search seed and the
//! decision's position (see [`derive_rng`]), so child scoring can run in parallel
//! without changing the outcome.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{mutate, random_arch, ArchEncoding};
use crate::proxy::{Proxy, ProxyScore};

/// Outcome of fully evaluating (training) an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitnessError {
    #[error("no record for {arch} on {dataset}")]
    NotFound { arch: String, dataset: String },
}

/// Deterministic per `(arch, dataset)`.
pub trait FitnessSource: Send + Sync {
    fn evaluate(&self, arch: &ArchEncoding, dataset: &str) -> Result<FitnessRecord, FitnessError>;
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid evolution config: {0}")]
    InvalidConfig(String),
    #[error("method `{0}` needs a proxy")]
    MissingProxy(String),
    #[error("unknown search method `{0}` (known: {1})")]
    UnknownMethod(String, String),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

/// What the budget `C` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// `C` trained models in total, i.e. `C − P` evolution cycles.
    #[default]
    TrainedModels,
    /// `C` evolution cycles after initialization, i.e. `P + C` trained models.
    Cycles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// `C`.
    pub history_budget: usize,
    /// `P`: population size and children per cycle.
    pub population_size: usize,
    /// `S`: tournament sample size.
    pub sample_size: usize,
    pub seed: u64,
    pub dataset: String,
    #[serde(default)]
    pub budget_mode: BudgetMode,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            history_budget: 150,
            population_size: 5,
            sample_size: 2,
            seed: 0,
            dataset: "cifar10".into(),
            budget_mode: BudgetMode::TrainedModels,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.population_size == 0 {
            return Err(SearchError::InvalidConfig("P must be at least 1".into()));
        }
        if self.population_size > self.history_budget {
            return Err(SearchError::InvalidConfig(format!(
                "P={} exceeds C={}",
                self.population_size, self.history_budget
            )));
        }
        if self.sample_size == 0 {
            return Err(SearchError::InvalidConfig("S must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of models the finished search will have trained.
    pub fn total_trained(&self) -> usize {
        match self.budget_mode {
            BudgetMode::TrainedModels => self.history_budget,
            BudgetMode::Cycles => self.population_size + self.history_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedModel {
    pub arch: ArchEncoding,
    pub proxy: Option<ProxyScore>,
    /// Validation accuracy; the only value selection logic looks at.
    pub fitness: f64,
    /// Reported only.
    pub test_acc: f64,
    /// Position in the history.
    pub birth: usize,
    pub train_seconds: f64,
}

/// Larger fitness wins; equal fitness goes to the earlier birth.
fn fitter(a: &EvaluatedModel, b: &EvaluatedModel) -> Ordering {
    a.fitness.total_cmp(&b.fitness).then(b.birth.cmp(&a.birth))
}

/// FIFO queue: new models enter on the right, the oldest leaves on the left.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Population {
    members: VecDeque<EvaluatedModel>,
}

impl Population {
    pub fn push(&mut self, model: EvaluatedModel) {
        self.members.push_back(model);
    }

    pub fn pop_oldest(&mut self) -> Option<EvaluatedModel> {
        self.members.pop_front()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EvaluatedModel> {
        self.members.iter()
    }

    pub fn get(&self, i: usize) -> Option<&EvaluatedModel> {
        self.members.get(i)
    }
}

/// Draw `sample_size` members uniformly with replacement and return the fittest draw.
pub fn tournament_select<'a, R: Rng + ?Sized>(
    population: &'a Population,
    sample_size: usize,
    rng: &mut R,
) -> &'a EvaluatedModel {
    assert!(!population.is_empty(), "tournament on an empty population");
    let mut best: Option<&EvaluatedModel> = None;
    for _ in 0..sample_size {
        let candidate = &population.members[rng.random_range(0..population.len())];
        if best.is_none_or(|b| fitter(candidate, b) == Ordering::Greater) {
            best = Some(candidate);
        }
    }
    best.expect("sample_size >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Selection = 1,
    InitialSample = 2,
    InitialProxy = 3,
    Child = 4,
}

/// Independent ChaCha stream keyed by `(seed, kind, a, b)`.
pub fn derive_rng(seed: u64, kind: StreamKind, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, kind as u64, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildLog {
    pub arch: ArchEncoding,
    pub score: ProxyScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub cycle: usize,
    pub parent_birth: usize,
    pub parent: ArchEncoding,
    /// Empty for methods without a proxy.
    pub children: Vec<ChildLog>,
    pub admitted_child: usize,
    pub admitted_birth: usize,
    pub removed_birth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    /// Sum of the fitness source's training cost over the history.
    pub train_seconds: f64,
    /// Measured wall-clock time spent in proxy scoring.
    pub proxy_wall_seconds: f64,
    pub simulated_search_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub method: String,
    pub config: EvolutionConfig,
    pub best: EvaluatedModel,
    pub history: Vec<EvaluatedModel>,
    pub cycles: Vec<CycleLog>,
    pub fitness_evaluations: usize,
    pub proxy_evaluations: usize,
    pub timing: Timing,
}

/// Ongoing search: population, history and bookkeeping.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub population: Population,
    pub history: Vec<EvaluatedModel>,
    pub cycles: Vec<CycleLog>,
    pub proxy_evaluations: usize,
    proxy_wall_seconds: f64,
    selection_rng: ChaCha8Rng,
}

impl SearchState {
    fn new(seed: u64) -> Self {
        Self {
            population: Population::default(),
            history: Vec::new(),
            cycles: Vec::new(),
            proxy_evaluations: 0,
            proxy_wall_seconds: 0.0,
            selection_rng: derive_rng(seed, StreamKind::Selection, 0, 0),
        }
    }

    fn train(
        &mut self,
        arch: ArchEncoding,
        proxy: Option<ProxyScore>,
        config: &EvolutionConfig,
        fitness: &dyn FitnessSource,
    ) -> Result<EvaluatedModel, SearchError> {
        let record = fitness.evaluate(&arch, &config.dataset)?;
        let model = EvaluatedModel {
            arch,
            proxy,
            fitness: record.val_acc,
            test_acc: record.test_acc,
            birth: self.history.len(),
            train_seconds: record.train_seconds,
        };
        self.history.push(model.clone());
        Ok(model)
    }

    /// Score `archs` in parallel; stream `i` comes from `rng_for(i)`.
    fn score_all<F>(&mut self, proxy: &dyn Proxy, archs: &[ArchEncoding], rng_for: F) -> Vec<ProxyScore>
    where
        F: Fn(usize) -> ChaCha8Rng + Sync,
    {
        let start = Instant::now();
        let scores = archs
            .par_iter()
            .enumerate()
            .map(|(i, arch)| proxy.score(arch, &mut rng_for(i)))
            .collect();
        self.proxy_wall_seconds += start.elapsed().as_secs_f64();
        self.proxy_evaluations += archs.len();
        scores
    }

    fn finish(self, method: &str, config: &EvolutionConfig) -> SearchResult {
        let best = self
            .history
            .iter()
            .max_by(|a, b| fitter(a, b))
            .cloned()
            .expect("non-empty history");
        let train_seconds = self.history.iter().map(|m| m.train_seconds).sum();
        SearchResult {
            method: method.to_string(),
            config: config.clone(),
            best,
            fitness_evaluations: self.history.len(),
            proxy_evaluations: self.proxy_evaluations,
            timing: Timing {
                train_seconds,
                proxy_wall_seconds: self.proxy_wall_seconds,
                simulated_search_seconds: train_seconds + self.proxy_wall_seconds,
            },
            history: self.history,
            cycles: self.cycles,
        }
    }
}

/// Index of the best score; ties go to the lower index.
fn best_index(scores: &[ProxyScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.rank_cmp(&scores[best]) == Ordering::Greater {
            best = i;
        }
    }
    best
}

/// Sample `C` random cells, score them all, and train the `P` best-scoring ones.
///
/// Survivors enter the population in generation order. Invalid scores rank last;
/// ties go to the earlier sample.
pub fn init_population(
    config: &EvolutionConfig,
    proxy: &dyn Proxy,
    fitness: &dyn FitnessSource,
) -> Result<SearchState, SearchError> {
    config.validate()?;
    let seed = config.seed;
    let mut state = SearchState::new(seed);
    let mut sample_rng = derive_rng(seed, StreamKind::InitialSample, 0, 0);
    let archs: Vec<ArchEncoding> = (0..config.history_budget).map(|_| random_arch(&mut sample_rng)).collect();
    let scores = state.score_all(proxy, &archs, |i| derive_rng(seed, StreamKind::InitialProxy, i as u64, 0));

    let mut order: Vec<usize> = (0..archs.len()).collect();
    order.sort_by(|&a, &b| scores[b].rank_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep = order[..config.population_size].to_vec();
    keep.sort_unstable();

    for i in keep {
        let model = state.train(archs[i], Some(scores[i].clone()), config, fitness)?;
        state.population.push(model);
    }
    Ok(state)
}

/// One guided cycle: select a parent, mutate it into `P` children, score them,
/// train the top child, and retire the oldest member.
pub fn evolve_cycle(
    state: &mut SearchState,
    config: &EvolutionConfig,
    proxy: &dyn Proxy,
    fitness: &dyn FitnessSource,
) -> Result<(), SearchError> {
    let cycle = state.cycles.len();
    let seed = config.seed;
    let parent = tournament_select(&state.population, config.sample_size, &mut state.selection_rng).clone();

    let children: Vec<(ArchEncoding, ChaCha8Rng)> = (0..config.population_size)
        .map(|c| {
            let mut rng = derive_rng(seed, StreamKind::Child, cycle as u64, c as u64);
            (mutate(&parent.arch, &mut rng), rng)
        })
        .collect();
    let archs: Vec<ArchEncoding> = children.iter().map(|(a, _)| *a).collect();
    let scores = state.score_all(proxy, &archs, |i| children[i].1.clone());

    let top = best_index(&scores);
    let admitted = state.train(archs[top], Some(scores[top].clone()), config, fitness)?;
    let admitted_birth = admitted.birth;
    state.population.push(admitted);
    let removed = state.population.pop_oldest().expect("population is non-empty");

    state.cycles.push(CycleLog {
        cycle,
        parent_birth: parent.birth,
        parent: parent.arch,
        children: archs
            .into_iter()
            .zip(scores)
            .map(|(arch, score)| ChildLog { arch, score })
            .collect(),
        admitted_child: top,
        admitted_birth,
        removed_birth: removed.birth,
    });
    Ok(())
}

/// Guided evolution until the budget is spent; returns the best model by validation fitness.
pub fn run_search(
    config: &EvolutionConfig,
    proxy: &dyn Proxy,
    fitness: &dyn FitnessSource,
) -> Result<SearchResult, SearchError> {
    let mut state = init_population(config, proxy, fitness)?;
    while state.history.len() < config.total_trained() {
        evolve_cycle(&mut state, config, proxy, fitness)?;
    }
    Ok(state.finish(GuidedEvolution.name(), config))
}

/// Regularized evolution: no proxy, `P` random initial models, one trained child per cycle.
pub fn run_rea_baseline(config: &EvolutionConfig, fitness: &dyn FitnessSource) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let seed = config.seed;
    let mut state = SearchState::new(seed);
    let mut sample_rng = derive_rng(seed, StreamKind::InitialSample, 0, 0);
    for _ in 0..config.population_size {
        let model = state.train(random_arch(&mut sample_rng), None, config, fitness)?;
        state.population.push(model);
    }
    while state.history.len() < config.total_trained() {
        let cycle = state.cycles.len();
        let parent = tournament_select(&state.population, config.sample_size, &mut state.selection_rng).clone();
        let mut rng = derive_rng(seed, StreamKind::Child, cycle as u64, 0);
        let child = state.train(mutate(&parent.arch, &mut rng), None, config, fitness)?;
        let admitted_birth = child.birth;
        state.population.push(child);
        let removed = state.population.pop_oldest().expect("population is non-empty");
        state.cycles.push(CycleLog {
            cycle,
            parent_birth: parent.birth,
            parent: parent.arch,
            children: Vec::new(),
            admitted_child: 0,
            admitted_birth,
            removed_birth: removed.birth,
        });
    }
    Ok(state.finish(RegularizedEvolution.name(), config))
}

/// `C` independent uniform samples, all trained.
pub fn run_random_baseline(config: &EvolutionConfig, fitness: &dyn FitnessSource) -> Result<SearchResult, SearchError> {
    if config.history_budget == 0 {
        return Err(SearchError::InvalidConfig("C must be at least 1".into()));
    }
    let mut state = SearchState::new(config.seed);
    let mut sample_rng = derive_rng(config.seed, StreamKind::InitialSample, 0, 0);
    for _ in 0..config.history_budget {
        state.train(random_arch(&mut sample_rng), None, config, fitness)?;
    }
    Ok(state.finish(RandomSearch.name(), config))
}

/// A search strategy selectable by name.
pub trait SearchMethod: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether [`SearchMethod::run`] requires a proxy.
    fn uses_proxy(&self) -> bool;

    fn run(
        &self,
        config: &EvolutionConfig,
        proxy: Option<&dyn Proxy>,
        fitness: &dyn FitnessSource,
    ) -> Result<SearchResult, SearchError>;
}

pub struct GuidedEvolution;
pub struct RegularizedEvolution;
pub struct RandomSearch;

impl SearchMethod for GuidedEvolution {
    fn name(&self) -> &'static str {
        "gea"
    }

    fn uses_proxy(&self) -> bool {
        true
    }

    fn run(
        &self,
        config: &EvolutionConfig,
        proxy: Option<&dyn Proxy>,
        fitness: &dyn FitnessSource,
    ) -> Result<SearchResult, SearchError> {
        let proxy = proxy.ok_or_else(|| SearchError::MissingProxy(self.name().into()))?;
        run_search(config, proxy, fitness)
    }
}

impl SearchMethod for RegularizedEvolution {
    fn name(&self) -> &'static str {
        "rea"
    }

    fn uses_proxy(&self) -> bool {
        false
    }

    fn run(
        &self,
        config: &EvolutionConfig,
        _proxy: Option<&dyn Proxy>,
        fitness: &dyn FitnessSource,
    ) -> Result<SearchResult, SearchError> {
        run_rea_baseline(config, fitness)
    }
}

impl SearchMethod for RandomSearch {
    fn name(&self) -> &'static str {
        "rs"
    }

    fn uses_proxy(&self) -> bool {
        false
    }

    fn run(
        &self,
        config: &EvolutionConfig,
        _proxy: Option<&dyn Proxy>,
        fitness: &dyn FitnessSource,
    ) -> Result<SearchResult, SearchError> {
        run_random_baseline(config, fitness)
    }
}

/// Search methods keyed by name.
pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Box<dyn SearchMethod>>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        registry.register(Box::new(GuidedEvolution));
        registry.register(Box::new(RegularizedEvolution));
        registry.register(Box::new(RandomSearch));
        registry
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self {
            methods: BTreeMap::new(),
        }
    }

    /// Replaces any method already registered under the same name.
    pub fn register(&mut self, method: Box<dyn SearchMethod>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn SearchMethod, SearchError> {
        self.methods
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| SearchError::UnknownMethod(name.to_string(), self.names().join(", ")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{OracleProxy, SyntheticLandscape};
    use rand::RngCore;
    use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
    use std::sync::Arc;

    /// Proxy score = cell index.
    struct IndexProxy;

    impl Proxy for IndexProxy {
        fn name(&self) -> &str {
            "index"
        }
        fn score(&self, arch: &ArchEncoding, _rng: &mut dyn RngCore) -> ProxyScore {
            ProxyScore::valid(arch.index() as f64)
        }
    }

    struct Counting<P> {
        inner: P,
        calls: AtomicUsize,
    }

    impl<P: Proxy> Proxy for Counting<P> {
        fn name(&self) -> &str {
            self.inner.name()
        }
        fn score(&self, arch: &ArchEncoding, rng: &mut dyn RngCore) -> ProxyScore {
            self.calls.fetch_add(1, AtomicOrdering::Relaxed);
            self.inner.score(arch, rng)
        }
    }

    fn model(fitness: f64, birth: usize) -> EvaluatedModel {
        EvaluatedModel {
            arch: ArchEncoding::from_index(birth).unwrap(),
            proxy: None,
            fitness,
            test_acc: fitness,
            birth,
            train_seconds: 1.0,
        }
    }

    fn config(c: usize, p: usize, s: usize, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            history_budget: c,
            population_size: p,
            sample_size: s,
            seed,
            ..EvolutionConfig::default()
        }
    }

    #[test]
    fn init_keeps_top_scoring_in_generation_order() {
        let land = SyntheticLandscape::new(0);
        let cfg = config(10, 3, 2, 4);
        let proxy = Counting {
            inner: IndexProxy,
            calls: AtomicUsize::new(0),
        };
        let state = init_population(&cfg, &proxy, &land).unwrap();
        assert_eq!(proxy.calls.load(AtomicOrdering::Relaxed), 10);
        assert_eq!(state.proxy_evaluations, 10);
        assert_eq!(state.population.len(), 3);
        assert_eq!(state.history.len(), 3);

        let mut sample_rng = derive_rng(4, StreamKind::InitialSample, 0, 0);
        let sampled: Vec<usize> = (0..10).map(|_| random_arch(&mut sample_rng).index()).collect();
        let mut top = sampled.clone();
        top.sort_unstable_by(|a, b| b.cmp(a));
        let kept: Vec<usize> = state.population.iter().map(|m| m.arch.index()).collect();
        let mut expect: Vec<usize> = sampled.iter().copied().filter(|i| top[..3].contains(i)).collect();
        expect.truncate(3);
        assert_eq!(kept, expect);
    }

    #[test]
    fn init_falls_back_to_invalid_in_generation_order() {
        struct AllInvalid;
        impl Proxy for AllInvalid {
            fn name(&self) -> &str {
                "invalid"
            }
            fn score(&self, _: &ArchEncoding, _: &mut dyn RngCore) -> ProxyScore {
                ProxyScore::invalid()
            }
        }
        let land = SyntheticLandscape::new(0);
        let cfg = config(8, 3, 2, 1);
        let state = init_population(&cfg, &AllInvalid, &land).unwrap();
        let mut sample_rng = derive_rng(1, StreamKind::InitialSample, 0, 0);
        let first: Vec<ArchEncoding> = (0..3).map(|_| random_arch(&mut sample_rng)).collect();
        let kept: Vec<ArchEncoding> = state.population.iter().map(|m| m.arch).collect();
        assert_eq!(kept, first);
    }

    #[test]
    fn tournament_probabilities() {
        let mut pop = Population::default();
        for (i, f) in [10.0, 50.0, 20.0, 30.0, 40.0].into_iter().enumerate() {
            pop.push(model(f, i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trials = 100_000;
        let wins = (0..trials)
            .filter(|_| tournament_select(&pop, 2, &mut rng).birth == 1)
            .count();
        let p = wins as f64 / trials as f64;
        assert!((p - 9.0 / 25.0).abs() <= 0.005, "{p}");

        let wins = (0..trials)
            .filter(|_| tournament_select(&pop, 5, &mut rng).birth == 1)
            .count();
        let expect = 1.0 - (4.0f64 / 5.0).powi(5);
        assert!((wins as f64 / trials as f64 - expect).abs() <= 0.005);

        let mut counts = [0usize; 5];
        for _ in 0..50_000 {
            counts[tournament_select(&pop, 1, &mut rng).birth] += 1;
        }
        assert!(crate::stats::chi_square_uniform_p(&counts) > 0.01);
    }

    #[test]
    fn tournament_ties_prefer_earlier_birth() {
        let mut pop = Population::default();
        pop.push(model(5.0, 3));
        pop.push(model(5.0, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let winner = tournament_select(&pop, 64, &mut rng);
            assert_eq!(winner.birth, 3);
        }
    }

    #[test]
    fn cycles_keep_population_fifo() {
        let land = Arc::new(SyntheticLandscape::new(1));
        let cfg = config(40, 5, 2, 7);
        let proxy = OracleProxy::new(land.clone(), "x");
        let mut state = init_population(&cfg, &proxy, land.as_ref()).unwrap();
        while state.history.len() < 40 {
            let oldest = state.population.iter().map(|m| m.birth).min().unwrap();
            evolve_cycle(&mut state, &cfg, &proxy, land.as_ref()).unwrap();
            let log = state.cycles.last().unwrap();
            assert_eq!(log.removed_birth, oldest);
            assert_eq!(state.population.len(), 5);
            // proxy ≡ fitness: the admitted child is the fittest of the children
            let best = log
                .children
                .iter()
                .map(|c| land.fitness(&c.arch))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(land.fitness(&log.children[log.admitted_child].arch), best);
            for child in &log.children {
                assert_eq!(child.arch.hamming(&log.parent), 1);
            }
        }
        assert_eq!(state.cycles.len(), 35);
    }

    #[test]
    fn budget_arithmetic() {
        let land = SyntheticLandscape::new(2);
        let r = run_search(&config(150, 5, 2, 0), &IndexProxy, &land).unwrap();
        assert_eq!(r.cycles.len(), 145);
        assert_eq!(r.history.len(), 150);
        assert_eq!(r.fitness_evaluations, 150);
        assert_eq!(r.proxy_evaluations, 875);

        let r = run_search(&config(5, 5, 2, 0), &IndexProxy, &land).unwrap();
        assert!(r.cycles.is_empty());
        let best = r.history.iter().map(|m| m.fitness).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best.fitness, best);

        let cycles = EvolutionConfig {
            budget_mode: BudgetMode::Cycles,
            ..config(20, 5, 2, 0)
        };
        let r = run_search(&cycles, &IndexProxy, &land).unwrap();
        assert_eq!(r.cycles.len(), 20);
        assert_eq!(r.history.len(), 25);
    }

    #[test]
    fn rea_and_random_budgets() {
        let land = SyntheticLandscape::new(3);
        let cfg = config(60, 5, 2, 9);
        let rea = run_rea_baseline(&cfg, &land).unwrap();
        assert_eq!(rea.fitness_evaluations, 60);
        assert_eq!(rea.proxy_evaluations, 0);
        assert_eq!(rea.cycles.len(), 55);
        let rs = run_random_baseline(&cfg, &land).unwrap();
        assert_eq!(rs.fitness_evaluations, 60);
        assert!(rs.cycles.is_empty());
        let one = run_random_baseline(&config(1, 1, 1, 9), &land).unwrap();
        assert_eq!(one.history.len(), 1);
        assert_eq!(one.best, one.history[0]);
    }

    #[test]
    fn rea_best_so_far_is_monotone() {
        // Aging can retire the population max, so only the history max is monotone.
        let land = SyntheticLandscape::new(4);
        let cfg = config(80, 5, 5, 3);
        let r = run_rea_baseline(&cfg, &land).unwrap();
        let init_max = r.history[..5].iter().map(|m| m.fitness).fold(f64::NEG_INFINITY, f64::max);
        let mut running = f64::NEG_INFINITY;
        for m in &r.history {
            assert!(m.fitness.max(running) >= running);
            running = running.max(m.fitness);
        }
        assert_eq!(running, r.best.fitness);
        assert!(r.best.fitness >= init_max);
        for log in &r.cycles {
            let window = &r.history[log.admitted_birth - 5..log.admitted_birth];
            assert!(window.iter().any(|m| m.birth == log.parent_birth));
        }
    }

    #[test]
    fn search_is_deterministic() {
        let land = Arc::new(SyntheticLandscape::new(5));
        let proxy = OracleProxy::new(land.clone(), "x");
        let cfg = config(50, 5, 2, 11);
        let mut a = run_search(&cfg, &proxy, land.as_ref()).unwrap();
        let mut b = run_search(&cfg, &proxy, land.as_ref()).unwrap();
        a.timing = Timing::default();
        b.timing = Timing::default();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_ignores_test_accuracy() {
        struct NoTest(SyntheticLandscape);
        impl FitnessSource for NoTest {
            fn evaluate(&self, arch: &ArchEncoding, dataset: &str) -> Result<FitnessRecord, FitnessError> {
                let mut r = self.0.evaluate(arch, dataset)?;
                r.test_acc = 0.0;
                Ok(r)
            }
        }
        let land = SyntheticLandscape::new(6);
        let stripped = NoTest(land.clone());
        let cfg = config(40, 5, 2, 2);
        let a = run_search(&cfg, &IndexProxy, &land).unwrap();
        let b = run_search(&cfg, &IndexProxy, &stripped).unwrap();
        let archs = |r: &SearchResult| r.history.iter().map(|m| m.arch).collect::<Vec<_>>();
        assert_eq!(archs(&a), archs(&b));
        assert_eq!(a.cycles, b.cycles);
        let a = run_rea_baseline(&cfg, &land).unwrap();
        let b = run_rea_baseline(&cfg, &stripped).unwrap();
        assert_eq!(archs(&a), archs(&b));
    }

    #[test]
    fn config_validation() {
        let land = SyntheticLandscape::new(0);
        assert!(run_search(&config(3, 5, 2, 0), &IndexProxy, &land).is_err());
        assert!(run_search(&config(10, 0, 2, 0), &IndexProxy, &land).is_err());
        assert!(run_rea_baseline(&config(10, 5, 0, 0), &land).is_err());
    }

    #[test]
    fn registry_lookup() {
        let reg = MethodRegistry::default();
        assert_eq!(reg.names(), ["gea", "rea", "rs"]);
        let land = SyntheticLandscape::new(0);
        let cfg = config(20, 5, 2, 0);
        assert!(matches!(
            reg.get("gea").unwrap().run(&cfg, None, &land),
            Err(SearchError::MissingProxy(_))
        ));
        assert!(reg.get("gea").unwrap().run(&cfg, Some(&IndexProxy), &land).is_ok());
        assert_eq!(reg.get("rea").unwrap().run(&cfg, None, &land).unwrap().method, "rea");
        assert!(matches!(reg.get("bohb"), Err(SearchError::UnknownMethod(..))));
    }

    #[test]
    fn missing_fitness_record_is_an_error() {
        let store = crate::bench::TabularStore::new();
        assert!(matches!(
            run_rea_baseline(&config(10, 5, 2, 0), &store),
            Err(SearchError::Fitness(FitnessError::NotFound { .. }))
        ));
    }
}
