//! Artificial bee colony over a [`SearchSpace`].
//!
//! A run initialises `n` food sources, then repeats `T` cycles of
//!
//! * employed phase: every source proposes a neighbour against a random
//!   partner and keeps it only if strictly fitter;
//! * onlooker phase: source `j` proposes again with probability
//!   `0.9 · fit_j / max fit + 0.1`, using the live fitness set;
//! * scout phase: sources whose trial counter exceeds `M` are resampled.
//!
//! The answer is the best structure ever evaluated, not the best one left in
//! the colony.
//!
//! Employed candidates are generated from the colony as it stands when the
//! phase starts, which makes them independent of each other and lets
//! [`run_search_in`] evaluate them on several threads without changing the
//! outcome. Every evaluation seed is derived from `(run seed, phase, cycle,
//! source)`.

pub mod history;
pub mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchitectureSpec;
use crate::fitness::{EvalError, EvaluationRequest, EvaluationResult, Evaluator};
use crate::seed::{self, labels};
use crate::space::{Alpha, PrunedStructure, SearchSpace, SpaceError};
pub use history::{Event, EventKind, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub cycles: usize,
    pub population: usize,
    pub max_trials: u32,
    pub alpha: f64,
    pub seed: u64,
    pub fitness_epochs: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            cycles: 2,
            population: 3,
            max_trials: 2,
            alpha: 1.0,
            seed: 0,
            fitness_epochs: 2,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.population < 2 {
            return Err(SearchError::InvalidConfig(
                "population must be at least 2 (neighbours need a distinct partner)".into(),
            ));
        }
        if self.cycles == 0 {
            return Err(SearchError::InvalidConfig("cycles must be positive".into()));
        }
        if self.fitness_epochs == 0 {
            return Err(SearchError::InvalidConfig("fitness_epochs must be positive".into()));
        }
        Alpha::try_from(self.alpha)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("evaluation failed during initialisation: {0}")]
    Evaluator(#[from] EvalError),
}

/// A search error together with the history written up to that point.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct SearchFailure {
    #[source]
    pub error: SearchError,
    pub history: Vec<Event>,
}

impl From<SearchError> for SearchFailure {
    fn from(error: SearchError) -> Self {
        SearchFailure {
            error,
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodSource {
    pub structure: PrunedStructure,
    pub fitness: f64,
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub sources: Vec<FoodSource>,
    pub cycle: usize,
    pub best_structure: PrunedStructure,
    pub best_fitness: f64,
    pub evaluations: u64,
    pub history: Vec<Event>,
}

impl SearchState {
    fn log(&mut self, event: Event) {
        self.history.push(event);
    }

    fn observe(&mut self, phase: Phase, source: usize, structure: &PrunedStructure, fitness: f64) {
        if fitness > self.best_fitness {
            self.best_fitness = fitness;
            self.best_structure = structure.clone();
            let mut ev = Event::new(EventKind::BestUpdate, self.cycle);
            ev.phase = Some(phase);
            ev.source = Some(source);
            ev.structure = Some(structure.clone());
            ev.fitness = Some(fitness);
            self.log(ev);
        }
    }

    fn max_fitness(&self) -> f64 {
        self.sources.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_structure: PrunedStructure,
    pub best_fitness: f64,
    pub evaluations: u64,
    pub state: SearchState,
}

impl SearchOutcome {
    pub fn history(&self) -> &[Event] {
        &self.state.history
    }
}

/// `0.9 · fit / max_fit + 0.1`, or 1.0 for every source when all fitness is
/// zero. The result is exactly 1.0 only when `fit == max_fit`.
pub fn select_probability(fit: f64, max_fit: f64) -> f64 {
    if max_fit <= 0.0 || fit >= max_fit {
        return 1.0;
    }
    let p = 0.9 * (fit.max(0.0) / max_fit) + 0.1;
    p.clamp(0.1, 1.0 - f64::EPSILON / 2.0)
}

fn evaluation_seed(config: &SearchConfig, phase: Phase, cycle: usize, source: usize) -> u64 {
    seed::derive_seed(config.seed, labels::EVALUATION, &[phase.code(), cycle as u64, source as u64])
}

fn checked(result: Result<EvaluationResult, EvalError>) -> Result<f64, EvalError> {
    let fitness = result?.fitness;
    if (0.0..=1.0).contains(&fitness) {
        Ok(fitness)
    } else {
        Err(EvalError::OutOfRange(fitness))
    }
}

/// Evaluates independent requests, on up to `workers` threads. Results come
/// back in request order.
fn evaluate_batch<E: Evaluator + ?Sized>(
    evaluator: &E,
    requests: &[EvaluationRequest],
    workers: usize,
) -> Vec<Result<f64, EvalError>> {
    if workers <= 1 || requests.len() <= 1 {
        return requests.iter().map(|r| checked(evaluator.evaluate(r))).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<f64, EvalError>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(requests.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let result = checked(evaluator.evaluate(&requests[i]));
                *slots[i].lock().expect("slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot").expect("evaluated"))
        .collect()
}

fn pick_partner<R: Rng + ?Sized>(n: usize, j: usize, rng: &mut R) -> usize {
    let g = rng.gen_range(0..n - 1);
    if g >= j {
        g + 1
    } else {
        g
    }
}

pub fn init_population<E: Evaluator + ?Sized>(
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
) -> Result<SearchState, SearchFailure> {
    init_population_with(space, config, evaluator, 1)
}

fn init_population_with<E: Evaluator + ?Sized>(
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    workers: usize,
) -> Result<SearchState, SearchFailure> {
    config.validate()?;
    let mut start = Event::new(EventKind::Start, 0);
    start.config = Some(config.clone());
    start.candidates = Some(space.all_candidates().to_vec());

    let mut rng = seed::stream(config.seed, labels::INIT, &[]);
    let requests: Vec<EvaluationRequest> = (0..config.population)
        .map(|j| EvaluationRequest {
            structure: space.sample_uniform(&mut rng),
            seed: evaluation_seed(config, Phase::Init, 0, j),
            epochs: config.fitness_epochs,
        })
        .collect();
    let results = evaluate_batch(evaluator, &requests, workers);

    let mut state = SearchState {
        sources: Vec::with_capacity(config.population),
        cycle: 0,
        best_structure: requests[0].structure.clone(),
        best_fitness: f64::NEG_INFINITY,
        evaluations: 0,
        history: vec![start],
    };
    for (j, (request, result)) in requests.into_iter().zip(results).enumerate() {
        state.evaluations += 1;
        let fitness = match result {
            Ok(f) => f,
            Err(error) => {
                let mut ev = Event::new(EventKind::Init, 0);
                ev.phase = Some(Phase::Init);
                ev.source = Some(j);
                ev.structure = Some(request.structure);
                ev.seed = Some(request.seed);
                ev.error = Some(error.to_string());
                state.log(ev);
                return Err(SearchFailure {
                    error: SearchError::Evaluator(error),
                    history: state.history,
                });
            }
        };
        let mut ev = Event::new(EventKind::Init, 0);
        ev.phase = Some(Phase::Init);
        ev.source = Some(j);
        ev.structure = Some(request.structure.clone());
        ev.fitness = Some(fitness);
        ev.trials = Some(0);
        ev.seed = Some(request.seed);
        state.log(ev);
        state.observe(Phase::Init, j, &request.structure, fitness);
        state.sources.push(FoodSource {
            structure: request.structure,
            fitness,
            trials: 0,
        });
    }
    Ok(state)
}

/// Logs the candidate and applies the greedy rule: replace on strictly
/// higher fitness, otherwise count a trial.
#[allow(clippy::too_many_arguments)]
fn settle(
    state: &mut SearchState,
    phase: Phase,
    j: usize,
    partner: usize,
    request: EvaluationRequest,
    result: Result<f64, EvalError>,
    gate: Option<(f64, f64)>,
) {
    state.evaluations += 1;
    let mut ev = Event::new(EventKind::Candidate, state.cycle);
    ev.phase = Some(phase);
    ev.source = Some(j);
    ev.partner = Some(partner);
    ev.structure = Some(request.structure.clone());
    ev.seed = Some(request.seed);
    if let Some((p, draw)) = gate {
        ev.probability = Some(p);
        ev.draw = Some(draw);
    }
    match &result {
        Ok(f) => ev.fitness = Some(*f),
        Err(e) => {
            log::warn!("candidate {} for source {j} failed: {e}", request.structure);
            ev.error = Some(e.to_string());
        }
    }
    state.log(ev);

    let improved = match result {
        Ok(fitness) => {
            state.observe(phase, j, &request.structure, fitness);
            if fitness > state.sources[j].fitness {
                state.sources[j] = FoodSource {
                    structure: request.structure,
                    fitness,
                    trials: 0,
                };
                true
            } else {
                false
            }
        }
        Err(_) => false,
    };
    let source = &mut state.sources[j];
    let mut ev = if improved {
        let mut ev = Event::new(EventKind::Replace, state.cycle);
        ev.structure = Some(source.structure.clone());
        ev.fitness = Some(source.fitness);
        ev
    } else {
        source.trials += 1;
        Event::new(EventKind::Reject, state.cycle)
    };
    ev.phase = Some(phase);
    ev.source = Some(j);
    ev.trials = Some(state.sources[j].trials);
    state.log(ev);
}

pub fn employed_phase<E: Evaluator + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    rng: &mut R,
) {
    employed_phase_with(state, space, config, evaluator, rng, 1)
}

fn employed_phase_with<E: Evaluator + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    rng: &mut R,
    workers: usize,
) {
    let n = state.sources.len();
    let mut partners = Vec::with_capacity(n);
    let requests: Vec<EvaluationRequest> = (0..n)
        .map(|j| {
            let g = pick_partner(n, j, rng);
            partners.push(g);
            EvaluationRequest {
                structure: space.neighbor(&state.sources[j].structure, &state.sources[g].structure, rng),
                seed: evaluation_seed(config, Phase::Employed, state.cycle, j),
                epochs: config.fitness_epochs,
            }
        })
        .collect();
    let results = evaluate_batch(evaluator, &requests, workers);
    for (j, (request, result)) in requests.into_iter().zip(results).enumerate() {
        settle(state, Phase::Employed, j, partners[j], request, result, None);
    }
}

pub fn onlooker_phase<E: Evaluator + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    rng: &mut R,
) {
    let n = state.sources.len();
    for j in 0..n {
        let p = select_probability(state.sources[j].fitness, state.max_fitness());
        let draw: f64 = rng.gen();
        if draw > p {
            continue;
        }
        let g = pick_partner(n, j, rng);
        let request = EvaluationRequest {
            structure: space.neighbor(&state.sources[j].structure, &state.sources[g].structure, rng),
            seed: evaluation_seed(config, Phase::Onlooker, state.cycle, j),
            epochs: config.fitness_epochs,
        };
        let result = checked(evaluator.evaluate(&request));
        settle(state, Phase::Onlooker, j, g, request, result, Some((p, draw)));
    }
}

/// Resamples every source with more than `max_trials` failed attempts. A
/// failed evaluation leaves the old source and its counter in place.
pub fn scout_phase<E: Evaluator + ?Sized, R: Rng + ?Sized>(
    state: &mut SearchState,
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    rng: &mut R,
) {
    for j in 0..state.sources.len() {
        if state.sources[j].trials <= config.max_trials {
            continue;
        }
        let request = EvaluationRequest {
            structure: space.sample_uniform(rng),
            seed: evaluation_seed(config, Phase::Scout, state.cycle, j),
            epochs: config.fitness_epochs,
        };
        state.evaluations += 1;
        let mut ev = Event::new(EventKind::Scout, state.cycle);
        ev.phase = Some(Phase::Scout);
        ev.source = Some(j);
        ev.structure = Some(request.structure.clone());
        ev.seed = Some(request.seed);
        match checked(evaluator.evaluate(&request)) {
            Ok(fitness) => {
                ev.fitness = Some(fitness);
                ev.trials = Some(0);
                state.log(ev);
                state.observe(Phase::Scout, j, &request.structure, fitness);
                state.sources[j] = FoodSource {
                    structure: request.structure,
                    fitness,
                    trials: 0,
                };
            }
            Err(e) => {
                log::warn!("scout for source {j} failed: {e}");
                ev.error = Some(e.to_string());
                ev.trials = Some(state.sources[j].trials);
                state.log(ev);
            }
        }
    }
}

/// Builds the space for `spec` at `config.alpha` and runs the colony.
pub fn run_search<E: Evaluator + ?Sized>(
    spec: &ArchitectureSpec,
    config: &SearchConfig,
    evaluator: &E,
) -> Result<SearchOutcome, SearchFailure> {
    config.validate()?;
    let space = SearchSpace::build(spec, config.alpha).map_err(SearchError::from)?;
    run_search_in(&space, config, evaluator, 1)
}

/// Runs the colony on an explicit space. `workers > 1` evaluates the
/// initial population and employed candidates concurrently; the history is
/// identical either way.
pub fn run_search_in<E: Evaluator + ?Sized>(
    space: &SearchSpace,
    config: &SearchConfig,
    evaluator: &E,
    workers: usize,
) -> Result<SearchOutcome, SearchFailure> {
    let mut state = init_population_with(space, config, evaluator, workers)?;
    for cycle in 1..=config.cycles {
        state.cycle = cycle;
        let c = cycle as u64;
        let mut rng = seed::stream(config.seed, labels::EMPLOYED, &[c]);
        employed_phase_with(&mut state, space, config, evaluator, &mut rng, workers);
        let mut rng = seed::stream(config.seed, labels::ONLOOKER, &[c]);
        onlooker_phase(&mut state, space, config, evaluator, &mut rng);
        let mut rng = seed::stream(config.seed, labels::SCOUT, &[c]);
        scout_phase(&mut state, space, config, evaluator, &mut rng);
    }
    Ok(SearchOutcome {
        best_structure: state.best_structure.clone(),
        best_fitness: state.best_fitness,
        evaluations: state.evaluations,
        state,
    })
}
