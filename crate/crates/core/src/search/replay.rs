//! Offline consistency check of a search log.
//!
//! The checker rebuilds the colony from the events alone and rejects any
//! transition the search could not have produced: wrong phase order, a
//! candidate outside the neighbourhood of its source and partner, a
//! replacement without strict improvement, a scout before the trial limit,
//! a missed best-so-far update, or an evaluation seed that does not match
//! its position.

use std::fmt;

use super::history::{Event, EventKind, Phase};
use super::{select_probability, FoodSource, SearchConfig};
use crate::seed::{derive_seed, labels};
use crate::space::{PrunedStructure, SearchSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based line in the log.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for Violation {}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub config: SearchConfig,
    pub cycles: usize,
    pub evaluations: u64,
    pub best_structure: Option<PrunedStructure>,
    pub best_fitness: f64,
    /// False when the log stops at a fatal initialisation failure.
    pub complete: bool,
    pub sources: Vec<FoodSource>,
}

struct Settle {
    source: usize,
    phase: Phase,
    structure: PrunedStructure,
    fitness: Option<f64>,
}

struct Checker {
    config: SearchConfig,
    space: SearchSpace,
    sources: Vec<FoodSource>,
    snapshot: Vec<FoodSource>,
    cycle: usize,
    rank: u64,
    best_fitness: f64,
    best_structure: Option<PrunedStructure>,
    evaluations: u64,
    awaiting_best: Option<(f64, PrunedStructure)>,
    awaiting_settle: Option<Settle>,
    employed_seen: usize,
    last_onlooker: Option<usize>,
    last_scout: Option<usize>,
    scouted: Vec<bool>,
    failed_init: bool,
}

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn require<T: Copy>(value: Option<T>, field: &str) -> Result<T, String> {
    value.ok_or_else(|| format!("missing field `{field}`"))
}

impl Checker {
    fn start(event: &Event) -> Result<Self, String> {
        ensure(event.event == EventKind::Start, || "log must begin with a start event".into())?;
        let config = event.config.clone().ok_or("start event has no config")?;
        config.validate().map_err(|e| e.to_string())?;
        let candidates = event.candidates.clone().ok_or("start event has no candidates")?;
        let space = SearchSpace::from_candidates(candidates).map_err(|e| e.to_string())?;
        Ok(Checker {
            scouted: vec![false; config.population],
            config,
            space,
            sources: Vec::new(),
            snapshot: Vec::new(),
            cycle: 0,
            rank: 0,
            best_fitness: f64::NEG_INFINITY,
            best_structure: None,
            evaluations: 0,
            awaiting_best: None,
            awaiting_settle: None,
            employed_seen: 0,
            last_onlooker: None,
            last_scout: None,
            failed_init: false,
        })
    }

    fn structure(&self, event: &Event) -> Result<PrunedStructure, String> {
        let s = event.structure.clone().ok_or("missing field `structure`")?;
        self.space.check(&s).map_err(|e| e.to_string())?;
        Ok(s)
    }

    fn check_seed(&self, event: &Event, phase: Phase, source: usize) -> Check {
        let expected = derive_seed(
            self.config.seed,
            labels::EVALUATION,
            &[phase.code(), event.cycle as u64, source as u64],
        );
        ensure(event.seed == Some(expected), || {
            format!("evaluation seed {:?} does not match expected {expected}", event.seed)
        })
    }

    fn check_fitness(value: f64) -> Check {
        ensure((0.0..=1.0).contains(&value), || format!("fitness {value} outside [0, 1]"))
    }

    fn source_index(&self, event: &Event) -> Result<usize, String> {
        let j = require(event.source, "source")?;
        ensure(j < self.config.population, || format!("source {j} out of range"))?;
        Ok(j)
    }

    fn note_evaluation(&mut self, structure: &PrunedStructure, fitness: Option<f64>) {
        self.evaluations += 1;
        if let Some(f) = fitness {
            if f > self.best_fitness {
                self.awaiting_best = Some((f, structure.clone()));
            }
        }
    }

    fn end_cycle(&self) -> Check {
        if self.cycle == 0 {
            return ensure(self.sources.len() == self.config.population, || {
                format!("expected {} initial sources, saw {}", self.config.population, self.sources.len())
            });
        }
        ensure(self.employed_seen == self.config.population, || {
            format!("cycle {} has {} employed candidates", self.cycle, self.employed_seen)
        })?;
        for (j, s) in self.sources.iter().enumerate() {
            ensure(s.trials <= self.config.max_trials || self.scouted[j], || {
                format!("source {j} ended cycle {} with {} trials and no scout", self.cycle, s.trials)
            })?;
        }
        Ok(())
    }

    fn advance(&mut self, event: &Event, phase: Phase) -> Check {
        ensure(event.phase == Some(phase), || format!("expected phase {phase:?}, got {:?}", event.phase))?;
        let rank = phase.code();
        if event.cycle == self.cycle {
            ensure(rank >= self.rank, || {
                format!("phase {phase:?} after a later phase in cycle {}", self.cycle)
            })?;
            if self.rank == Phase::Employed.code() && rank > self.rank {
                ensure(self.employed_seen == self.config.population, || {
                    format!("employed phase of cycle {} ended early", self.cycle)
                })?;
            }
            self.rank = rank;
            return Ok(());
        }
        ensure(event.cycle == self.cycle + 1, || {
            format!("cycle jumps from {} to {}", self.cycle, event.cycle)
        })?;
        ensure(event.cycle <= self.config.cycles, || {
            format!("cycle {} exceeds the configured {}", event.cycle, self.config.cycles)
        })?;
        ensure(phase == Phase::Employed, || format!("cycle {} must begin with the employed phase", event.cycle))?;
        self.end_cycle()?;
        self.cycle = event.cycle;
        self.rank = rank;
        self.employed_seen = 0;
        self.snapshot = self.sources.clone();
        self.last_onlooker = None;
        self.last_scout = None;
        self.scouted.iter_mut().for_each(|s| *s = false);
        Ok(())
    }

    fn reachable(&self, base: &[FoodSource], j: usize, g: usize, candidate: &PrunedStructure) -> Check {
        let source = base[j].structure.channels();
        let partner = base[g].structure.channels();
        for (d, &v) in candidate.channels().iter().enumerate() {
            let c = source[d] as f64;
            let spread = (c - partner[d] as f64).abs();
            let lo = self.space.snap(c - spread, d);
            let hi = self.space.snap(c + spread, d);
            ensure(lo <= v && v <= hi, || {
                format!("dimension {d}: {v} is outside the neighbourhood [{lo}, {hi}]")
            })?;
        }
        Ok(())
    }

    fn step(&mut self, event: &Event) -> Check {
        ensure(!self.failed_init, || "events after a fatal initialisation failure".into())?;
        if let Some((f, s)) = self.awaiting_best.take() {
            ensure(event.event == EventKind::BestUpdate, || {
                format!("fitness {f} beats the best so far but no best-update follows")
            })?;
            ensure(event.fitness == Some(f) && event.structure.as_ref() == Some(&s), || {
                "best-update does not match the evaluation before it".into()
            })?;
            ensure(event.cycle == self.cycle, || "best-update cycle mismatch".into())?;
            self.best_fitness = f;
            self.best_structure = Some(s);
            return Ok(());
        }
        if let Some(settle) = self.awaiting_settle.take() {
            return self.settle(event, settle);
        }
        match event.event {
            EventKind::Start => Err("duplicate start event".into()),
            EventKind::Init => self.init(event),
            EventKind::Candidate => self.candidate(event),
            EventKind::Scout => self.scout(event),
            EventKind::BestUpdate => Err("best-update without a new best fitness".into()),
            EventKind::Replace | EventKind::Reject => Err(format!("{:?} without a candidate", event.event)),
        }
    }

    fn init(&mut self, event: &Event) -> Check {
        ensure(event.cycle == 0 && event.phase == Some(Phase::Init), || {
            "init events belong to cycle 0".into()
        })?;
        let j = self.source_index(event)?;
        ensure(j == self.sources.len(), || format!("init for source {j} out of order"))?;
        let structure = self.structure(event)?;
        self.check_seed(event, Phase::Init, j)?;
        if event.error.is_some() {
            self.evaluations += 1;
            self.failed_init = true;
            return Ok(());
        }
        let fitness = require(event.fitness, "fitness")?;
        Self::check_fitness(fitness)?;
        ensure(event.trials == Some(0), || "initial trial counter must be 0".into())?;
        self.note_evaluation(&structure, Some(fitness));
        self.sources.push(FoodSource {
            structure,
            fitness,
            trials: 0,
        });
        Ok(())
    }

    fn candidate(&mut self, event: &Event) -> Check {
        let phase = require(event.phase, "phase")?;
        ensure(matches!(phase, Phase::Employed | Phase::Onlooker), || {
            format!("candidate in phase {phase:?}")
        })?;
        self.advance(event, phase)?;
        let j = self.source_index(event)?;
        let g = require(event.partner, "partner")?;
        ensure(g < self.config.population && g != j, || format!("invalid partner {g} for source {j}"))?;
        let structure = self.structure(event)?;
        self.check_seed(event, phase, j)?;
        if phase == Phase::Employed {
            ensure(j == self.employed_seen, || format!("employed candidate for source {j} out of order"))?;
            self.employed_seen += 1;
            self.reachable(&self.snapshot, j, g, &structure)?;
        } else {
            ensure(self.last_onlooker.is_none_or(|last| j > last), || {
                format!("onlooker visits source {j} out of order")
            })?;
            self.last_onlooker = Some(j);
            let max = self.sources.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max);
            let expected = select_probability(self.sources[j].fitness, max);
            let p = require(event.probability, "probability")?;
            let draw = require(event.draw, "draw")?;
            ensure((p - expected).abs() <= 1e-12, || {
                format!("selection probability {p} differs from {expected}")
            })?;
            ensure((0.0..1.0).contains(&draw) && draw <= p, || {
                format!("draw {draw} does not pass the gate {p}")
            })?;
            self.reachable(&self.sources, j, g, &structure)?;
        }
        let fitness = match (event.fitness, &event.error) {
            (Some(f), None) => {
                Self::check_fitness(f)?;
                Some(f)
            }
            (None, Some(_)) => None,
            _ => return Err("candidate needs exactly one of `fitness` and `error`".into()),
        };
        self.note_evaluation(&structure, fitness);
        self.awaiting_settle = Some(Settle {
            source: j,
            phase,
            structure,
            fitness,
        });
        Ok(())
    }

    fn settle(&mut self, event: &Event, settle: Settle) -> Check {
        ensure(event.source == Some(settle.source) && event.phase == Some(settle.phase), || {
            "settlement does not refer to the preceding candidate".into()
        })?;
        ensure(event.cycle == self.cycle, || "settlement cycle mismatch".into())?;
        let current = &mut self.sources[settle.source];
        let improved = settle.fitness.is_some_and(|f| f > current.fitness);
        match event.event {
            EventKind::Replace => {
                ensure(improved, || "replacement without strictly higher fitness".into())?;
                ensure(event.trials == Some(0), || "replacement must reset the trial counter".into())?;
                ensure(
                    event.structure.as_ref().is_none_or(|s| *s == settle.structure)
                        && event.fitness.is_none_or(|f| Some(f) == settle.fitness),
                    || "replacement does not match the candidate".into(),
                )?;
                *current = FoodSource {
                    structure: settle.structure,
                    fitness: settle.fitness.expect("improved"),
                    trials: 0,
                };
            }
            EventKind::Reject => {
                ensure(!improved, || "strictly better candidate was rejected".into())?;
                let expected = current.trials + 1;
                ensure(event.trials == Some(expected), || {
                    format!("rejection should leave {expected} trials, log says {:?}", event.trials)
                })?;
                current.trials = expected;
            }
            other => return Err(format!("expected replace or reject after a candidate, got {other:?}")),
        }
        Ok(())
    }

    fn scout(&mut self, event: &Event) -> Check {
        self.advance(event, Phase::Scout)?;
        let j = self.source_index(event)?;
        ensure(self.last_scout.is_none_or(|last| j > last), || format!("scout for source {j} out of order"))?;
        self.last_scout = Some(j);
        let old = self.sources[j].trials;
        ensure(old > self.config.max_trials, || {
            format!("source {j} scouted with only {old} trials")
        })?;
        let structure = self.structure(event)?;
        self.check_seed(event, Phase::Scout, j)?;
        self.scouted[j] = true;
        match (event.fitness, &event.error) {
            (Some(f), None) => {
                Self::check_fitness(f)?;
                ensure(event.trials == Some(0), || "scouted source must restart at 0 trials".into())?;
                self.note_evaluation(&structure, Some(f));
                self.sources[j] = FoodSource {
                    structure,
                    fitness: f,
                    trials: 0,
                };
            }
            (None, Some(_)) => {
                ensure(event.trials == Some(old), || "failed scout must keep the trial counter".into())?;
                self.note_evaluation(&structure, None);
            }
            _ => return Err("scout needs exactly one of `fitness` and `error`".into()),
        }
        Ok(())
    }

    fn finish(self, last_line: usize) -> Result<ReplaySummary, Violation> {
        let fail = |message: String| Violation {
            line: last_line,
            message,
        };
        if self.awaiting_best.is_some() || self.awaiting_settle.is_some() {
            return Err(fail("log ends in the middle of an evaluation".into()));
        }
        if !self.failed_init {
            self.end_cycle().map_err(fail)?;
            if self.cycle != self.config.cycles {
                return Err(fail(format!("log ends at cycle {} of {}", self.cycle, self.config.cycles)));
            }
        }
        Ok(ReplaySummary {
            config: self.config,
            cycles: self.cycle,
            evaluations: self.evaluations,
            best_structure: self.best_structure,
            best_fitness: self.best_fitness,
            complete: !self.failed_init,
            sources: self.sources,
        })
    }
}

/// Checks that `events`, as read from a log, form a consistent search run.
pub fn validate_history(events: &[Event]) -> Result<ReplaySummary, Violation> {
    let first = events.first().ok_or(Violation {
        line: 1,
        message: "empty log".into(),
    })?;
    let mut checker = Checker::start(first).map_err(|message| Violation { line: 1, message })?;
    for (i, event) in events.iter().enumerate().skip(1) {
        checker.step(event).map_err(|message| Violation { line: i + 1, message })?;
    }
    checker.finish(events.len())
}
