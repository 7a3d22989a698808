//! Annotation and rule-writing sessions as an event-sourced state machine.
//!
//! Every change to a [`SessionState`] comes from a [`Command`]; a session
//! is its command log, and replaying the log rebuilds the state. Nothing
//! here reads a clock or a file: callers pass timestamps in and persist
//! the log themselves.
//!
//! An annotation session moves through `feedback`, where the annotator
//! sees the gold chunks after each sentence, then `active`, where batches
//! picked by the committee are annotated, then `final-eval` on held-out
//! test sentences, then `done`. A rule-writing session starts in `active`
//! and submits rule lists scored against the gold sentences.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::al::{committee_select, AlConfig, AlError, Measure, SplitMethod, Trainer};
use crate::corpus::{ChunkSpan, LabeledSentence, Labeling, Sentence, SentenceId};
use crate::cost::{EventKind, SessionEvent};
use crate::dsl::{evaluate_program, parse_rule_file_lenient, Diagnostic, MacroTable, RuleDelta};
use crate::metrics::{evaluate_corpus, Beta, EvalReport, PrCounts};
use crate::tbl::TblConfig;

/// Stream of the session generator used for the final-evaluation draw;
/// selection iterations use streams 0, 1, 2, ...
pub const FINAL_DRAW_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("session is in phase {actual}, this needs {expected}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("this needs a {0} session")]
    WrongMode(Mode),
    #[error("batch {0} is still waiting for annotations")]
    BatchPending(u64),
    #[error("no batch is waiting for annotations")]
    NoPendingBatch,
    #[error("annotations are for batch {got}, pending batch is {expected}")]
    BatchIdMismatch { expected: u64, got: u64 },
    #[error("expected {expected} labelings, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("labeling {index} has {got} tags for a {expected}-token sentence")]
    LengthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sentence {0} is not in the unannotated pool")]
    NotInPool(SentenceId),
    #[error("batch of {got} sentences exceeds the batch size {max}")]
    BatchTooLarge { max: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("session already created")]
    AlreadyCreated,
    #[error("the first command must create the session")]
    NotCreated,
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("log entry {seq}: {msg}")]
    Replay { seq: u64, msg: String },
    #[error(transparent)]
    Al(#[from] AlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Annotation,
    RuleWriting,
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Mode::Annotation => "annotation",
            Mode::RuleWriting => "rule-writing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Feedback,
    Active,
    FinalEval,
    Done,
}

impl core::fmt::Display for Phase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Phase::Feedback => "feedback",
            Phase::Active => "active",
            Phase::FinalEval => "final-eval",
            Phase::Done => "done",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Name of a corpus loaded by the host.
    pub corpus: String,
    /// Fingerprint of the corpus contents, checked when set on both sides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_digest: Option<String>,
    /// Leading training sentences with gold chunks: the initial annotated
    /// set, the feedback sentences and the rule-writing reference.
    pub gold_size: usize,
    pub feedback_limit: usize,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub final_size: usize,
    pub committee: usize,
    pub split: SplitMethod,
    pub measure: Measure,
    pub seed: u64,
    pub tbl: TblConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            corpus: "default".to_string(),
            corpus_digest: None,
            gold_size: 100,
            feedback_limit: 50,
            max_iterations: 10,
            batch_size: 50,
            final_size: 100,
            committee: 3,
            split: SplitMethod::Bagging,
            measure: Measure::FComplement,
            seed: 0,
            tbl: TblConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn al_config(&self) -> AlConfig {
        AlConfig {
            init_size: self.gold_size,
            batch_size: self.batch_size,
            committee: self.committee,
            split: self.split,
            measure: self.measure,
            iterations: Some(self.max_iterations),
            seed: self.seed,
            tbl: self.tbl.clone(),
        }
    }

    fn validate(&self) -> Result<(), SessionError> {
        if self.gold_size == 0 {
            return Err(SessionError::Config("gold size must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(SessionError::Config("batch size must be at least 1"));
        }
        if self.final_size == 0 {
            return Err(SessionError::Config("final size must be at least 1"));
        }
        if self.committee < 2 {
            return Err(SessionError::Config("committee needs at least 2 members"));
        }
        Ok(())
    }
}

/// Gold training sentences followed by the pool, and a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionCorpus {
    pub name: String,
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    /// Fingerprint of the contents, if the host computed one.
    pub digest: Option<String>,
    index: BTreeMap<SentenceId, usize>,
}

impl SessionCorpus {
    pub fn new(
        name: impl Into<String>,
        train: Vec<LabeledSentence>,
        test: Vec<LabeledSentence>,
    ) -> Result<Self, SessionError> {
        let mut index = BTreeMap::new();
        for (i, (s, l)) in train.iter().enumerate() {
            if s.len() != l.len() {
                return Err(SessionError::Corpus(alloc::format!(
                    "training sentence {} has mismatched tags",
                    s.id
                )));
            }
            if index.insert(s.id, i).is_some() {
                return Err(SessionError::Corpus(alloc::format!(
                    "duplicate training sentence id {}",
                    s.id
                )));
            }
        }
        if test.is_empty() {
            return Err(SessionError::Corpus("test set is empty".to_string()));
        }
        Ok(SessionCorpus {
            name: name.into(),
            train,
            test,
            digest: None,
            index,
        })
    }

    pub fn with_digest(mut self, digest: impl Into<String>) -> Self {
        self.digest = Some(digest.into());
        self
    }

    fn train_sentence(&self, id: SentenceId) -> Option<&LabeledSentence> {
        self.index.get(&id).map(|&i| &self.train[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Command {
    Create {
        id: String,
        mode: Mode,
        config: SessionConfig,
    },
    Feedback {
        labeling: Labeling,
    },
    StopFeedback,
    BatchServed {
        batch_id: u64,
        ids: Vec<SentenceId>,
    },
    Annotations {
        batch_id: u64,
        labelings: Vec<Labeling>,
    },
    Rules {
        text: String,
    },
    /// Ends a rule-writing session.
    Finish,
    Final {
        labelings: Vec<Labeling>,
    },
}

impl Command {
    /// Cost-model view of this command, if it is a human-time event.
    pub fn event_kind(&self) -> Option<EventKind> {
        match self {
            Command::BatchServed { .. } => Some(EventKind::BatchServed),
            Command::Annotations { .. } => Some(EventKind::AnnotationSubmitted),
            Command::Rules { .. } => Some(EventKind::RuleListSubmitted),
            Command::Feedback { .. } => Some(EventKind::FeedbackViewed),
            Command::Final { .. } => Some(EventKind::EvalRequested),
            Command::Create { .. } | Command::StopFeedback | Command::Finish => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts_ms: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingBatch {
    pub batch_id: u64,
    pub ids: Vec<SentenceId>,
    pub served_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub mode: Mode,
    pub config: SessionConfig,
    pub phase: Phase,
    /// Completed active-learning iterations.
    pub iteration: usize,
    /// Feedback sentences answered so far.
    pub feedback_done: usize,
    pub pending: Option<PendingBatch>,
    /// Human labelings from the active phase, in submission order.
    pub annotated: Vec<(SentenceId, Labeling)>,
    pub words: usize,
    pub rules_text: Option<String>,
    pub rule_submissions: usize,
    /// Test-set indices of the final-evaluation sentences.
    pub final_range: (usize, usize),
    pub final_report: Option<EvalReport>,
    pub next_batch_id: u64,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub events: u64,
}

/// A batch as sent to the annotator: words and tags, never gold chunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchMessage {
    pub batch_id: u64,
    pub sentences: Vec<Sentence>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    pub gold: Labeling,
    /// Gold chunks the annotator missed.
    pub missing: Vec<ChunkSpan>,
    /// Annotator chunks not in the gold.
    pub extra: Vec<ChunkSpan>,
    pub next: Option<Sentence>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub iteration: usize,
    pub sentences: usize,
    pub words: usize,
    pub duration_ms: u64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesResult {
    pub diagnostics: Vec<Diagnostic>,
    pub rules: usize,
    pub report: EvalReport,
    pub initial_f: f64,
    pub deltas: Vec<RuleDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Outcome {
    Created { id: String, phase: Phase },
    Feedback(FeedbackResult),
    PhaseChanged { phase: Phase },
    Batch(BatchMessage),
    Ack(SubmitAck),
    Rules(RulesResult),
    Final { report: EvalReport, phase: Phase },
}

fn check_lengths(sentences: &[&Sentence], labelings: &[Labeling]) -> Result<(), SessionError> {
    if sentences.len() != labelings.len() {
        return Err(SessionError::CountMismatch {
            expected: sentences.len(),
            got: labelings.len(),
        });
    }
    for (index, (s, l)) in sentences.iter().zip(labelings).enumerate() {
        if s.len() != l.len() {
            return Err(SessionError::LengthMismatch {
                index,
                expected: s.len(),
                got: l.len(),
            });
        }
    }
    Ok(())
}

/// Submitted tags with a B that opens no chunk rewritten to I.
fn normalize(labelings: &[Labeling]) -> Vec<Labeling> {
    labelings
        .iter()
        .map(|l| Labeling::normalized(l.tags().to_vec()))
        .collect()
}

/// Scores labelings against gold, treating an all-empty comparison as
/// perfect agreement.
fn score(gold: &[Labeling], proposed: &[Labeling]) -> EvalReport {
    evaluate_corpus(gold, proposed, Beta::ONE)
        .unwrap_or_else(|_| EvalReport::from_counts(PrCounts::default(), Beta::ONE))
}

impl SessionState {
    fn require_phase(&self, expected: Phase) -> Result<(), SessionError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(SessionError::WrongPhase {
                expected,
                actual: self.phase,
            })
        }
    }

    fn require_mode(&self, mode: Mode) -> Result<(), SessionError> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(SessionError::WrongMode(mode))
        }
    }

    fn gold<'c>(&self, corpus: &'c SessionCorpus) -> &'c [LabeledSentence] {
        &corpus.train[..self.config.gold_size.min(corpus.train.len())]
    }

    fn feedback_available(&self, corpus: &SessionCorpus) -> usize {
        self.config.feedback_limit.min(self.gold(corpus).len())
    }

    /// The sentence the annotator should bracket next in the feedback phase.
    pub fn feedback_sentence<'c>(&self, corpus: &'c SessionCorpus) -> Option<&'c Sentence> {
        if self.phase != Phase::Feedback {
            return None;
        }
        self.gold(corpus).get(self.feedback_done).map(|(s, _)| s)
    }

    fn is_annotated(&self, id: SentenceId) -> bool {
        self.annotated.iter().any(|(a, _)| *a == id)
    }

    /// Unannotated training sentences, in corpus order.
    pub fn pool<'c>(&self, corpus: &'c SessionCorpus) -> Vec<&'c Sentence> {
        let gold = self.gold(corpus).len();
        let pending: &[SentenceId] = self.pending.as_ref().map_or(&[], |p| &p.ids);
        let done: alloc::collections::BTreeSet<SentenceId> =
            self.annotated.iter().map(|(id, _)| *id).collect();
        corpus.train[gold..]
            .iter()
            .map(|(s, _)| s)
            .filter(|s| !done.contains(&s.id) && !pending.contains(&s.id))
            .collect()
    }

    /// Gold sentences plus everything annotated so far.
    pub fn training_set<'c>(
        &'c self,
        corpus: &'c SessionCorpus,
    ) -> Vec<(&'c Sentence, &'c Labeling)> {
        let mut set: Vec<(&Sentence, &Labeling)> =
            self.gold(corpus).iter().map(|(s, l)| (s, l)).collect();
        for (id, l) in &self.annotated {
            if let Some((s, _)) = corpus.train_sentence(*id) {
                set.push((s, l));
            }
        }
        set
    }

    pub fn final_sentences<'c>(&self, corpus: &'c SessionCorpus) -> &'c [LabeledSentence] {
        let (a, b) = self.final_range;
        &corpus.test[a.min(corpus.test.len())..b.min(corpus.test.len())]
    }

    /// Picks the next batch. Depends only on the state, so it may run
    /// ahead of the request for it.
    pub fn select_next<T: Trainer + ?Sized>(
        &self,
        corpus: &SessionCorpus,
        trainer: &T,
    ) -> Result<Vec<SentenceId>, SessionError> {
        self.require_mode(Mode::Annotation)?;
        self.require_phase(Phase::Active)?;
        if let Some(p) = &self.pending {
            return Err(SessionError::BatchPending(p.batch_id));
        }
        let pool = self.pool(corpus);
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        let training = self.training_set(corpus);
        Ok(committee_select(
            &training,
            &pool,
            &self.config.al_config(),
            self.iteration,
            trainer,
        )?)
    }

    /// Phase to enter once the current phase has run its course.
    fn after_active(&self, corpus: &SessionCorpus) -> Phase {
        if self.iteration >= self.config.max_iterations || self.pool(corpus).is_empty() {
            Phase::FinalEval
        } else {
            Phase::Active
        }
    }

    fn create(
        id: &str,
        mode: Mode,
        config: &SessionConfig,
        corpus: &SessionCorpus,
        ts_ms: u64,
    ) -> Result<SessionState, SessionError> {
        config.validate()?;
        if config.corpus != corpus.name {
            return Err(SessionError::Corpus(alloc::format!(
                "session wants corpus `{}`, got `{}`",
                config.corpus,
                corpus.name
            )));
        }
        if let (Some(want), Some(have)) = (&config.corpus_digest, &corpus.digest) {
            if want != have {
                return Err(SessionError::Corpus(alloc::format!(
                    "corpus `{}` has changed since the session was created",
                    corpus.name
                )));
            }
        }
        if corpus.train.len() < config.gold_size {
            return Err(SessionError::Corpus(alloc::format!(
                "need {} gold sentences, corpus has {}",
                config.gold_size,
                corpus.train.len()
            )));
        }
        let n = config.final_size.min(corpus.test.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(FINAL_DRAW_STREAM);
        let start = rng.random_range(0..=corpus.test.len() - n);
        let mut state = SessionState {
            id: id.to_string(),
            mode,
            config: config.clone(),
            phase: match mode {
                Mode::Annotation => Phase::Feedback,
                Mode::RuleWriting => Phase::Active,
            },
            iteration: 0,
            feedback_done: 0,
            pending: None,
            annotated: Vec::new(),
            words: 0,
            rules_text: None,
            rule_submissions: 0,
            final_range: (start, start + n),
            final_report: None,
            next_batch_id: 1,
            created_ms: ts_ms,
            updated_ms: ts_ms,
            events: 1,
        };
        if mode == Mode::Annotation && state.feedback_available(corpus) == 0 {
            state.phase = state.after_active(corpus);
        }
        Ok(state)
    }

    /// Applies one command. On error the state is unchanged.
    pub fn apply(
        &mut self,
        corpus: &SessionCorpus,
        command: &Command,
        ts_ms: u64,
    ) -> Result<Outcome, SessionError> {
        let outcome = match command {
            Command::Create { .. } => return Err(SessionError::AlreadyCreated),
            Command::Feedback { labeling } => {
                self.require_phase(Phase::Feedback)?;
                let Some((sentence, gold)) = self.gold(corpus).get(self.feedback_done) else {
                    return Err(SessionError::WrongPhase {
                        expected: Phase::Feedback,
                        actual: Phase::Active,
                    });
                };
                check_lengths(&[sentence], core::slice::from_ref(labeling))?;
                let submitted = Labeling::normalized(labeling.tags().to_vec()).spans();
                let gold_spans = gold.spans();
                let missing = gold_spans
                    .iter()
                    .filter(|s| !submitted.contains(s))
                    .copied()
                    .collect();
                let extra = submitted
                    .iter()
                    .filter(|s| !gold_spans.contains(s))
                    .copied()
                    .collect();
                self.feedback_done += 1;
                if self.feedback_done >= self.feedback_available(corpus) {
                    self.phase = self.after_active(corpus);
                }
                Outcome::Feedback(FeedbackResult {
                    gold: gold.clone(),
                    missing,
                    extra,
                    next: self.feedback_sentence(corpus).cloned(),
                    phase: self.phase,
                })
            }
            Command::StopFeedback => {
                self.require_phase(Phase::Feedback)?;
                self.phase = self.after_active(corpus);
                Outcome::PhaseChanged { phase: self.phase }
            }
            Command::BatchServed { batch_id, ids } => {
                self.require_mode(Mode::Annotation)?;
                self.require_phase(Phase::Active)?;
                if let Some(p) = &self.pending {
                    return Err(SessionError::BatchPending(p.batch_id));
                }
                if *batch_id != self.next_batch_id {
                    return Err(SessionError::BatchIdMismatch {
                        expected: self.next_batch_id,
                        got: *batch_id,
                    });
                }
                if ids.is_empty() {
                    return Err(SessionError::EmptyBatch);
                }
                if ids.len() > self.config.batch_size {
                    return Err(SessionError::BatchTooLarge {
                        max: self.config.batch_size,
                        got: ids.len(),
                    });
                }
                let pool: alloc::collections::BTreeSet<SentenceId> =
                    self.pool(corpus).iter().map(|s| s.id).collect();
                let mut seen = alloc::collections::BTreeSet::new();
                for id in ids {
                    if !pool.contains(id) || !seen.insert(*id) || self.is_annotated(*id) {
                        return Err(SessionError::NotInPool(*id));
                    }
                }
                self.pending = Some(PendingBatch {
                    batch_id: *batch_id,
                    ids: ids.clone(),
                    served_ms: ts_ms,
                });
                self.next_batch_id += 1;
                Outcome::Batch(BatchMessage {
                    batch_id: *batch_id,
                    sentences: ids
                        .iter()
                        .map(|id| {
                            corpus
                                .train_sentence(*id)
                                .expect("id checked against pool")
                                .0
                                .clone()
                        })
                        .collect(),
                    size: ids.len(),
                })
            }
            Command::Annotations {
                batch_id,
                labelings,
            } => {
                self.require_phase(Phase::Active)?;
                let pending = self.pending.as_ref().ok_or(SessionError::NoPendingBatch)?;
                if pending.batch_id != *batch_id {
                    return Err(SessionError::BatchIdMismatch {
                        expected: pending.batch_id,
                        got: *batch_id,
                    });
                }
                let sentences: Vec<&Sentence> = pending
                    .ids
                    .iter()
                    .map(|id| {
                        &corpus
                            .train_sentence(*id)
                            .expect("pending ids come from the corpus")
                            .0
                    })
                    .collect();
                check_lengths(&sentences, labelings)?;
                let duration_ms = ts_ms.saturating_sub(pending.served_ms);
                let words: usize = sentences.iter().map(|s| s.len()).sum();
                let pending = self.pending.take().expect("checked above");
                self.annotated
                    .extend(pending.ids.into_iter().zip(normalize(labelings)));
                self.words += words;
                self.iteration += 1;
                self.phase = self.after_active(corpus);
                Outcome::Ack(SubmitAck {
                    iteration: self.iteration,
                    sentences: self.annotated.len(),
                    words: self.words,
                    duration_ms,
                    phase: self.phase,
                })
            }
            Command::Rules { text } => {
                self.require_mode(Mode::RuleWriting)?;
                self.require_phase(Phase::Active)?;
                let result = evaluate_rules(text, self.gold(corpus));
                self.rules_text = Some(text.clone());
                self.rule_submissions += 1;
                Outcome::Rules(result)
            }
            Command::Finish => {
                self.require_mode(Mode::RuleWriting)?;
                self.require_phase(Phase::Active)?;
                self.phase = Phase::Done;
                Outcome::PhaseChanged { phase: self.phase }
            }
            Command::Final { labelings } => {
                self.require_mode(Mode::Annotation)?;
                self.require_phase(Phase::FinalEval)?;
                let test = self.final_sentences(corpus);
                let sentences: Vec<&Sentence> = test.iter().map(|(s, _)| s).collect();
                check_lengths(&sentences, labelings)?;
                let gold: Vec<Labeling> = test.iter().map(|(_, l)| l.clone()).collect();
                let report = score(&gold, &normalize(labelings));
                self.final_report = Some(report);
                self.phase = Phase::Done;
                Outcome::Final {
                    report,
                    phase: self.phase,
                }
            }
        };
        self.updated_ms = ts_ms;
        self.events += 1;
        Ok(outcome)
    }
}

/// Parses and scores a rule list against gold sentences. Rules that fail
/// to parse are reported and left out.
pub fn evaluate_rules(text: &str, gold: &[LabeledSentence]) -> RulesResult {
    let (program, diagnostics) = parse_rule_file_lenient(text, &MacroTable::default());
    let report = evaluate_program(&program, gold);
    RulesResult {
        diagnostics,
        rules: program.rules.len(),
        report: report.report,
        initial_f: report.initial_f,
        deltas: report.deltas,
    }
}

/// A session and the log it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    state: SessionState,
    log: Vec<LogEntry>,
}

impl Session {
    pub fn create(
        id: &str,
        mode: Mode,
        config: SessionConfig,
        corpus: &SessionCorpus,
        ts_ms: u64,
    ) -> Result<(Session, Outcome), SessionError> {
        let state = SessionState::create(id, mode, &config, corpus, ts_ms)?;
        let outcome = Outcome::Created {
            id: id.to_string(),
            phase: state.phase,
        };
        let log = alloc::vec![LogEntry {
            seq: 0,
            ts_ms,
            command: Command::Create {
                id: id.to_string(),
                mode,
                config,
            },
        }];
        Ok((Session { state, log }, outcome))
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Applies `command` and, if it succeeds, appends it to the log.
    pub fn execute(
        &mut self,
        corpus: &SessionCorpus,
        command: Command,
        ts_ms: u64,
    ) -> Result<(Outcome, &LogEntry), SessionError> {
        let ts_ms = ts_ms.max(self.state.updated_ms);
        let outcome = self.state.apply(corpus, &command, ts_ms)?;
        self.log.push(LogEntry {
            seq: self.log.len() as u64,
            ts_ms,
            command,
        });
        Ok((outcome, self.log.last().expect("just pushed")))
    }

    /// Selects and serves the next batch. Moves to final evaluation
    /// instead if the pool has run dry.
    pub fn next_batch<T: Trainer + ?Sized>(
        &mut self,
        corpus: &SessionCorpus,
        trainer: &T,
        ts_ms: u64,
    ) -> Result<Outcome, SessionError> {
        let ids = self.state.select_next(corpus, trainer)?;
        self.serve(corpus, ids, ts_ms)
    }

    /// Serves a batch chosen earlier by [`SessionState::select_next`].
    pub fn serve(
        &mut self,
        corpus: &SessionCorpus,
        ids: Vec<SentenceId>,
        ts_ms: u64,
    ) -> Result<Outcome, SessionError> {
        let batch_id = self.state.next_batch_id;
        Ok(self
            .execute(corpus, Command::BatchServed { batch_id, ids }, ts_ms)?
            .0)
    }

    /// Rebuilds a session from its log. With a trainer, every served
    /// batch is re-selected and must match the logged ids.
    pub fn replay<T: Trainer + ?Sized>(
        entries: &[LogEntry],
        corpus: &SessionCorpus,
        verify_with: Option<&T>,
    ) -> Result<Session, SessionError> {
        let replay_err = |seq: u64, msg: String| SessionError::Replay { seq, msg };
        let (first, rest) = entries.split_first().ok_or(SessionError::NotCreated)?;
        let Command::Create { id, mode, config } = &first.command else {
            return Err(SessionError::NotCreated);
        };
        let (mut session, _) = Session::create(id, *mode, config.clone(), corpus, first.ts_ms)
            .map_err(|e| replay_err(first.seq, e.to_string()))?;
        for entry in rest {
            if entry.seq != session.log.len() as u64 {
                return Err(replay_err(entry.seq, "out of sequence".to_string()));
            }
            if let (Some(trainer), Command::BatchServed { ids, .. }) = (verify_with, &entry.command)
            {
                let again = session
                    .state
                    .select_next(corpus, trainer)
                    .map_err(|e| replay_err(entry.seq, e.to_string()))?;
                if &again != ids {
                    return Err(replay_err(
                        entry.seq,
                        "re-selected batch differs from the logged one".to_string(),
                    ));
                }
            }
            session
                .execute(corpus, entry.command.clone(), entry.ts_ms)
                .map_err(|e| replay_err(entry.seq, e.to_string()))?;
        }
        Ok(session)
    }

    /// Human-time events for the cost model, in seconds since creation.
    pub fn cost_events(&self) -> Vec<SessionEvent> {
        events_from_log(&self.log)
    }
}

pub fn events_from_log(log: &[LogEntry]) -> Vec<SessionEvent> {
    let Some(start) = log.first().map(|e| e.ts_ms) else {
        return Vec::new();
    };
    log.iter()
        .filter_map(|e| {
            let kind = e.command.event_kind()?;
            let payload = match &e.command {
                Command::BatchServed { batch_id, .. } | Command::Annotations { batch_id, .. } => {
                    Some(*batch_id)
                }
                _ => None,
            };
            Some(SessionEvent {
                seconds: e.ts_ms.saturating_sub(start) as f64 / 1000.0,
                kind,
                payload,
            })
        })
        .collect()
}

/// Rule lists submitted in a log, with seconds since creation.
pub fn rule_submissions(log: &[LogEntry]) -> Vec<(f64, &str)> {
    let start = log.first().map_or(0, |e| e.ts_ms);
    log.iter()
        .filter_map(|e| match &e.command {
            Command::Rules { text } => {
                Some((e.ts_ms.saturating_sub(start) as f64 / 1000.0, text.as_str()))
            }
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::al::SequentialTrainer;
    use crate::corpus::parse_conll;
    use alloc::format;

    fn sentence_text(i: usize) -> String {
        match i % 4 {
            0 => "the DT I\ndog NN I\nbarks VBZ O\n\n".to_string(),
            1 => "a DT I\nbig JJ I\ncat NN I\nsat VBD O\n\n".to_string(),
            2 => "he PRP I\nsaw VBD O\nthe DT I\nman NN I\n\n".to_string(),
            _ => format!("it PRP I\nis VBZ O\nred{i} JJ O\n\n"),
        }
    }

    fn corpus(train: usize, test: usize) -> SessionCorpus {
        let text: String = (0..train + test).map(sentence_text).collect();
        let all = parse_conll(&text).unwrap();
        let (a, b) = all.split_at(train);
        SessionCorpus::new("toy", a.to_vec(), b.to_vec()).unwrap()
    }

    fn config() -> SessionConfig {
        SessionConfig {
            corpus: "toy".to_string(),
            gold_size: 8,
            feedback_limit: 3,
            max_iterations: 2,
            batch_size: 4,
            final_size: 5,
            ..SessionConfig::default()
        }
    }

    fn gold_for(c: &SessionCorpus, ids: &[SentenceId]) -> Vec<Labeling> {
        ids.iter()
            .map(|id| c.train_sentence(*id).unwrap().1.clone())
            .collect()
    }

    #[test]
    fn feedback_then_active() {
        let c = corpus(30, 12);
        let (mut s, out) = Session::create("a", Mode::Annotation, config(), &c, 1000).unwrap();
        assert_eq!(
            out,
            Outcome::Created {
                id: "a".into(),
                phase: Phase::Feedback
            }
        );
        assert_eq!(s.state().iteration, 0);

        let gold = c.train[0].1.clone();
        let (out, _) = s
            .execute(
                &c,
                Command::Feedback {
                    labeling: gold.clone(),
                },
                2000,
            )
            .unwrap();
        let Outcome::Feedback(fb) = out else { panic!() };
        assert!(fb.missing.is_empty() && fb.extra.is_empty());
        assert_eq!(fb.next.as_ref().unwrap().id, c.train[1].0.id);

        let wrong = Labeling::all_outside(c.train[1].0.len());
        let (out, _) = s
            .execute(&c, Command::Feedback { labeling: wrong }, 3000)
            .unwrap();
        let Outcome::Feedback(fb) = out else { panic!() };
        assert_eq!(fb.missing, c.train[1].1.spans());

        // the limit forces the phase change
        let third = c.train[2].1.clone();
        let (out, _) = s
            .execute(&c, Command::Feedback { labeling: third }, 4000)
            .unwrap();
        let Outcome::Feedback(fb) = out else { panic!() };
        assert_eq!(fb.phase, Phase::Active);
        assert!(fb.next.is_none());
        assert!(matches!(
            s.execute(&c, Command::StopFeedback, 5000),
            Err(SessionError::WrongPhase { .. })
        ));
    }

    #[test]
    fn stop_early() {
        let c = corpus(30, 12);
        let (mut s, _) = Session::create("a", Mode::Annotation, config(), &c, 0).unwrap();
        s.execute(&c, Command::StopFeedback, 1).unwrap();
        assert_eq!(s.state().phase, Phase::Active);
    }

    #[test]
    fn batches_and_final_eval() {
        let c = corpus(30, 12);
        let (mut s, _) = Session::create("a", Mode::Annotation, config(), &c, 0).unwrap();
        assert!(matches!(
            s.next_batch(&c, &SequentialTrainer, 1),
            Err(SessionError::WrongPhase { .. })
        ));
        s.execute(&c, Command::StopFeedback, 1).unwrap();

        let Outcome::Batch(batch) = s.next_batch(&c, &SequentialTrainer, 10_000).unwrap() else {
            panic!()
        };
        assert_eq!(batch.size, 4);
        assert!(matches!(
            s.next_batch(&c, &SequentialTrainer, 10_001),
            Err(SessionError::BatchPending(1))
        ));
        let ids: Vec<SentenceId> = batch.sentences.iter().map(|x| x.id).collect();
        assert!(ids.iter().all(|id| *id >= 8));

        let mut short = gold_for(&c, &ids);
        short.pop();
        let err = s
            .execute(
                &c,
                Command::Annotations {
                    batch_id: 1,
                    labelings: short,
                },
                20_000,
            )
            .unwrap_err();
        assert_eq!(
            err,
            SessionError::CountMismatch {
                expected: 4,
                got: 3
            }
        );
        assert!(s.state().pending.is_some());

        let (out, _) = s
            .execute(
                &c,
                Command::Annotations {
                    batch_id: 1,
                    labelings: gold_for(&c, &ids),
                },
                70_000,
            )
            .unwrap();
        let Outcome::Ack(ack) = out else { panic!() };
        assert_eq!(ack.iteration, 1);
        assert_eq!(ack.duration_ms, 60_000);

        let Outcome::Batch(b2) = s.next_batch(&c, &SequentialTrainer, 80_000).unwrap() else {
            panic!()
        };
        let ids2: Vec<SentenceId> = b2.sentences.iter().map(|x| x.id).collect();
        assert!(ids2.iter().all(|id| !ids.contains(id)));
        s.execute(
            &c,
            Command::Annotations {
                batch_id: 2,
                labelings: gold_for(&c, &ids2),
            },
            90_000,
        )
        .unwrap();
        assert_eq!(s.state().phase, Phase::FinalEval);

        let final_gold: Vec<Labeling> = s
            .state()
            .final_sentences(&c)
            .iter()
            .map(|(_, l)| l.clone())
            .collect();
        assert_eq!(final_gold.len(), 5);
        let (out, _) = s
            .execute(
                &c,
                Command::Final {
                    labelings: final_gold,
                },
                100_000,
            )
            .unwrap();
        let Outcome::Final { report, phase } = out else {
            panic!()
        };
        assert_eq!(report.fmeasure, 1.0);
        assert_eq!(phase, Phase::Done);
        assert_eq!(s.log().len(), 7);
    }

    #[test]
    fn replay_rebuilds_state() {
        let c = corpus(30, 12);
        let (mut s, _) = Session::create("r", Mode::Annotation, config(), &c, 5).unwrap();
        s.execute(&c, Command::StopFeedback, 6).unwrap();
        for t in 0..2u64 {
            let Outcome::Batch(b) = s.next_batch(&c, &SequentialTrainer, 100 + t * 10).unwrap()
            else {
                panic!()
            };
            let ids: Vec<SentenceId> = b.sentences.iter().map(|x| x.id).collect();
            s.execute(
                &c,
                Command::Annotations {
                    batch_id: b.batch_id,
                    labelings: gold_for(&c, &ids),
                },
                105 + t * 10,
            )
            .unwrap();
        }
        let again = Session::replay(s.log(), &c, Some(&SequentialTrainer)).unwrap();
        assert_eq!(again, s);

        let mut tampered = s.log().to_vec();
        let first: Vec<SentenceId> = match &tampered[2].command {
            Command::BatchServed { ids, .. } => ids.clone(),
            _ => panic!(),
        };
        if let Command::BatchServed { ids, .. } = &mut tampered[4].command {
            let other = (8..30)
                .find(|id| !ids.contains(id) && !first.contains(id))
                .unwrap();
            ids[0] = other;
            ids.sort_unstable();
        }
        // a valid but different batch replays without checking, not with it
        assert!(Session::replay::<SequentialTrainer>(&tampered, &c, None).is_ok());
        let err = Session::replay(&tampered, &c, Some(&SequentialTrainer)).unwrap_err();
        assert!(matches!(err, SessionError::Replay { seq: 4, .. }), "{err}");
    }

    #[test]
    fn rule_writing() {
        let c = corpus(30, 12);
        let (mut s, out) = Session::create("w", Mode::RuleWriting, config(), &c, 0).unwrap();
        assert_eq!(
            out,
            Outcome::Created {
                id: "w".into(),
                phase: Phase::Active
            }
        );
        let (out, _) = s
            .execute(
                &c,
                Command::Rules {
                    text: String::new(),
                },
                1000,
            )
            .unwrap();
        let Outcome::Rules(r) = out else { panic!() };
        assert_eq!(r.report.fmeasure, 0.0);

        let text = "{ _DT ADJ* NOUN+ }\n{ _PRP }\n{ BAD }\n";
        let (a, _) = s
            .execute(&c, Command::Rules { text: text.into() }, 2000)
            .unwrap();
        let (b, _) = s
            .execute(&c, Command::Rules { text: text.into() }, 3000)
            .unwrap();
        assert_eq!(a, b);
        let Outcome::Rules(r) = a else { panic!() };
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.diagnostics[0].line, 3);
        assert_eq!(r.report.fmeasure, 1.0);
        assert!(s.execute(&c, Command::StopFeedback, 4000).is_err());
        s.execute(&c, Command::Finish, 5000).unwrap();
        assert_eq!(s.state().phase, Phase::Done);

        let subs = rule_submissions(s.log());
        assert_eq!(subs.len(), 3);
        assert_eq!(subs[2].0, 3.0);
    }

    #[test]
    fn sessions_are_isolated() {
        let c = corpus(30, 12);
        let (mut a, _) = Session::create("a", Mode::Annotation, config(), &c, 0).unwrap();
        let (b, _) = Session::create("b", Mode::Annotation, config(), &c, 0).unwrap();
        a.execute(&c, Command::StopFeedback, 1).unwrap();
        assert_eq!(b.state().phase, Phase::Feedback);
        assert_ne!(a.state().id, b.state().id);
    }

    #[test]
    fn final_draw_is_seeded_and_contiguous() {
        let c = corpus(30, 40);
        let draw = |seed| {
            let cfg = SessionConfig { seed, ..config() };
            Session::create("f", Mode::Annotation, cfg, &c, 0)
                .unwrap()
                .0
                .state()
                .final_range
        };
        assert_eq!(draw(3), draw(3));
        let (a, b) = draw(3);
        assert_eq!(b - a, 5);
        assert!(b <= 40);
        assert!((0..20).map(draw).any(|r| r != draw(3)));
    }

    #[test]
    fn cost_events_follow_log() {
        let c = corpus(30, 12);
        let (mut s, _) = Session::create("a", Mode::Annotation, config(), &c, 10_000).unwrap();
        s.execute(&c, Command::StopFeedback, 11_000).unwrap();
        let Outcome::Batch(b) = s.next_batch(&c, &SequentialTrainer, 12_000).unwrap() else {
            panic!()
        };
        let ids: Vec<SentenceId> = b.sentences.iter().map(|x| x.id).collect();
        s.execute(
            &c,
            Command::Annotations {
                batch_id: 1,
                labelings: gold_for(&c, &ids),
            },
            1_032_000,
        )
        .unwrap();
        let events = s.cost_events();
        assert_eq!(events.len(), 2);
        let minutes = crate::cost::labor_time(&events) * 60.0;
        assert!((minutes - 17.0).abs() < 1e-9);
    }
}
