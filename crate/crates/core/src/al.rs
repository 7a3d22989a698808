//! Query-by-committee active learning over the transformation-based
//! chunker.
//!
//! Each iteration splits the annotated set into `m` overlapping training
//! subsets, trains one chunker per subset, scores every unannotated
//! sentence by how much the committee disagrees on it, and sends the `x`
//! most contentious sentences to an [`Annotator`]. After the batch comes
//! back, one chunker trained on the whole annotated set is scored on the
//! test set to produce the learning curve.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledSentence, Labeling, Sentence, SentenceId};
use crate::metrics::{evaluate_corpus, f1, Beta, EvalReport};
use crate::tbl::{learn_rules, Chunker, TblConfig, TblError};

/// Name of the generator behind every random draw, recorded in outputs.
pub const RNG_NAME: &str = "ChaCha8Rng/rand_chacha-0.9";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("need at least {needed} sentences, have {have}")]
    TooFewSentences { needed: usize, have: usize },
    #[error("could not draw {0} distinct committee subsets")]
    DegenerateSplit(usize),
    #[error("duplicate sentence id {0}")]
    DuplicateId(SentenceId),
    #[error("committee labelings have different lengths")]
    LengthMismatch,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("annotator failed: {0}")]
    Annotator(String),
    #[error("annotator returned {got} labelings for {asked} sentences")]
    AnnotationCount { asked: usize, got: usize },
    #[error("labeling for sentence {0} does not match its length")]
    AnnotationLength(SentenceId),
    #[error(transparent)]
    Tbl(#[from] TblError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMethod {
    Bagging,
    Nfold,
}

impl SplitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMethod::Bagging => "bagging",
            SplitMethod::Nfold => "nfold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bagging" => Some(SplitMethod::Bagging),
            "nfold" | "n-fold" => Some(SplitMethod::Nfold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    VoteEntropy,
    FComplement,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::VoteEntropy => "vote-entropy",
            Measure::FComplement => "f-complement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vote-entropy" | "ve" => Some(Measure::VoteEntropy),
            "f-complement" | "fc" => Some(Measure::FComplement),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlConfig {
    /// Seed sentences annotated before the first selection.
    pub init_size: usize,
    pub batch_size: usize,
    pub committee: usize,
    pub split: SplitMethod,
    pub measure: Measure,
    /// `None` runs until the pool is exhausted.
    pub iterations: Option<usize>,
    pub seed: u64,
    pub tbl: TblConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            init_size: 100,
            batch_size: 50,
            committee: 3,
            split: SplitMethod::Bagging,
            measure: Measure::FComplement,
            iterations: None,
            seed: 0,
            tbl: TblConfig::default(),
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<(), AlError> {
        if self.init_size == 0 {
            return Err(AlError::Config("init size must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(AlError::Config("batch size must be at least 1"));
        }
        if self.committee < 2 {
            return Err(AlError::Config("committee needs at least 2 members"));
        }
        Ok(())
    }

    /// Generator for one iteration: the run seed selects the key, the
    /// iteration number the stream.
    pub fn rng_for(&self, iteration: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration as u64);
        rng
    }

    pub fn describe(&self) -> Vec<(String, String)> {
        let mut kv = alloc::vec![
            ("init_size".to_string(), self.init_size.to_string()),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("committee".to_string(), self.committee.to_string()),
            ("split".to_string(), self.split.as_str().to_string()),
            ("measure".to_string(), self.measure.as_str().to_string()),
            (
                "iterations".to_string(),
                self.iterations
                    .map_or("unbounded".to_string(), |n| n.to_string()),
            ),
            ("seed".to_string(), self.seed.to_string()),
            ("rng".to_string(), RNG_NAME.to_string()),
            (
                "score_threshold".to_string(),
                format!("{}", self.tbl.score_threshold)
            ),
            ("max_rules".to_string(), self.tbl.max_rules.to_string()),
        ];
        kv.push((
            "templates".to_string(),
            self.tbl.templates.len().to_string(),
        ));
        kv
    }
}

/// Training-set ids for each committee member. Bagged subsets may repeat
/// an id; repeats are kept and weight that sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeSplit {
    pub subsets: Vec<Vec<SentenceId>>,
}

fn sorted(v: &[SentenceId]) -> Vec<SentenceId> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// `m` subsets of ⌈2|T|/3⌉ draws with replacement, pairwise distinct as
/// multisets.
pub fn bagging_split<R: RngCore + ?Sized>(
    ids: &[SentenceId],
    m: usize,
    rng: &mut R,
) -> Result<CommitteeSplit, AlError> {
    if ids.len() < 2 {
        return Err(AlError::TooFewSentences {
            needed: 2,
            have: ids.len(),
        });
    }
    if m < 2 {
        return Err(AlError::Config("committee needs at least 2 members"));
    }
    let draws = (2 * ids.len()).div_ceil(3);
    let mut subsets: Vec<Vec<SentenceId>> = Vec::with_capacity(m);
    let mut keys: Vec<Vec<SentenceId>> = Vec::with_capacity(m);
    const MAX_ATTEMPTS: usize = 64;
    for _ in 0..m {
        let mut attempt = 0;
        loop {
            let subset: Vec<SentenceId> = (0..draws)
                .map(|_| ids[rng.random_range(0..ids.len())])
                .collect();
            let key = sorted(&subset);
            if !keys.contains(&key) {
                keys.push(key);
                subsets.push(subset);
                break;
            }
            attempt += 1;
            if attempt == MAX_ATTEMPTS {
                return Err(AlError::DegenerateSplit(m));
            }
        }
    }
    Ok(CommitteeSplit { subsets })
}

/// Deals ids (ascending) round-robin into `m` folds; member `i` trains on
/// every fold but fold `i`.
pub fn nfold_split(ids: &[SentenceId], m: usize) -> Result<CommitteeSplit, AlError> {
    if m < 2 {
        return Err(AlError::Config("committee needs at least 2 members"));
    }
    if ids.len() < m {
        return Err(AlError::TooFewSentences {
            needed: m,
            have: ids.len(),
        });
    }
    let ordered = sorted(ids);
    let subsets = (0..m)
        .map(|fold| {
            ordered
                .iter()
                .enumerate()
                .filter(|(k, _)| k % m != fold)
                .map(|(_, &id)| id)
                .collect()
        })
        .collect();
    Ok(CommitteeSplit { subsets })
}

/// Mean per-token vote entropy, normalized by the log of committee size.
pub fn vote_entropy_sentence(labelings: &[&Labeling]) -> Result<f64, AlError> {
    vote_entropy_sentence_base(labelings, core::f64::consts::E)
}

/// [`vote_entropy_sentence`] computed with logarithms in `base`.
pub fn vote_entropy_sentence_base(labelings: &[&Labeling], base: f64) -> Result<f64, AlError> {
    let k = labelings.len();
    if k < 2 {
        return Err(AlError::Config("committee needs at least 2 members"));
    }
    let n = labelings[0].len();
    if labelings.iter().any(|l| l.len() != n) {
        return Err(AlError::LengthMismatch);
    }
    if n == 0 {
        return Ok(0.0);
    }
    let log = |x: f64| libm::log(x) / libm::log(base);
    let norm = log(k as f64);
    let mut total = 0.0;
    for i in 0..n {
        let mut votes = [0usize; 3];
        for l in labelings {
            votes[l.tags()[i] as usize] += 1;
        }
        let h: f64 = votes
            .iter()
            .filter(|&&v| v > 0)
            .map(|&v| {
                let p = v as f64 / k as f64;
                p * log(p)
            })
            .sum();
        total += -h / norm;
    }
    Ok(total / n as f64)
}

/// Half the sum over ordered member pairs of `1 - F₁`, i.e. the sum over
/// unordered pairs. Not normalized by committee size.
pub fn f_complement_sentence(labelings: &[&Labeling]) -> f64 {
    let spans: Vec<_> = labelings.iter().map(|l| l.spans()).collect();
    let mut total = 0.0;
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            total += 1.0 - f1(&spans[j], &spans[i]);
        }
    }
    total
}

pub fn disagreement(measure: Measure, labelings: &[&Labeling]) -> Result<f64, AlError> {
    match measure {
        Measure::VoteEntropy => vote_entropy_sentence(labelings),
        Measure::FComplement => {
            if labelings.len() < 2 {
                return Err(AlError::Config("committee needs at least 2 members"));
            }
            Ok(f_complement_sentence(labelings))
        }
    }
}

/// Disagreement of the committee on each pool sentence, in pool order.
pub fn score_pool(
    committee: &[Chunker],
    pool: &[&Sentence],
    measure: Measure,
) -> Result<Vec<(SentenceId, f64)>, AlError> {
    pool.iter()
        .map(|s| {
            let labelings: Vec<Labeling> = committee.iter().map(|c| c.apply(s)).collect();
            let refs: Vec<&Labeling> = labelings.iter().collect();
            Ok((s.id, disagreement(measure, &refs)?))
        })
        .collect()
}

/// Top `x` by score, ties to the smaller id; returned in ascending id order.
pub fn select_batch(scores: &[(SentenceId, f64)], x: usize) -> Vec<SentenceId> {
    if x > scores.len() {
        log::warn!(
            "batch size {x} exceeds pool of {}; taking the whole pool",
            scores.len()
        );
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<SentenceId> = ranked.into_iter().take(x).map(|(id, _)| id).collect();
    chosen.sort_unstable();
    chosen
}

/// Splits `annotated` into committee training sets, trains them and picks
/// the `batch_size` pool sentences the committee disagrees on most.
/// Ids must be unique within `annotated`.
pub fn committee_select<T: Trainer + ?Sized>(
    annotated: &[(&Sentence, &Labeling)],
    pool: &[&Sentence],
    config: &AlConfig,
    iteration: usize,
    trainer: &T,
) -> Result<Vec<SentenceId>, AlError> {
    let ids: Vec<SentenceId> = annotated.iter().map(|(s, _)| s.id).collect();
    let split = match config.split {
        SplitMethod::Bagging => {
            bagging_split(&ids, config.committee, &mut config.rng_for(iteration))?
        }
        SplitMethod::Nfold => nfold_split(&ids, config.committee)?,
    };
    let by_id: BTreeMap<SentenceId, (&Sentence, &Labeling)> =
        annotated.iter().map(|&(s, l)| (s.id, (s, l))).collect();
    if by_id.len() != annotated.len() {
        let mut seen = alloc::collections::BTreeSet::new();
        let dup = ids
            .iter()
            .find(|id| !seen.insert(**id))
            .copied()
            .unwrap_or_default();
        return Err(AlError::DuplicateId(dup));
    }
    let sets: Vec<Vec<(&Sentence, &Labeling)>> = split
        .subsets
        .iter()
        .map(|sub| sub.iter().map(|id| by_id[id]).collect())
        .collect();
    let committee = trainer.train_all(&sets, &config.tbl)?;
    let scores = score_pool(&committee, pool, config.measure)?;
    Ok(select_batch(&scores, config.batch_size))
}

/// Labels returned by an [`Annotator`], plus the time it took.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedBatch {
    pub labelings: Vec<Labeling>,
    pub seconds: f64,
}

/// Source of labels: an oracle replaying gold data, or a person.
pub trait Annotator {
    fn annotate(&mut self, sentences: &[&Sentence]) -> Result<AnnotatedBatch, AlError>;
}

/// Answers from a gold corpus, instantly.
#[derive(Debug, Clone, Default)]
pub struct OracleAnnotator {
    gold: BTreeMap<SentenceId, Labeling>,
}

impl OracleAnnotator {
    pub fn new<'a, I: IntoIterator<Item = &'a LabeledSentence>>(gold: I) -> Self {
        OracleAnnotator {
            gold: gold.into_iter().map(|(s, l)| (s.id, l.clone())).collect(),
        }
    }
}

impl Annotator for OracleAnnotator {
    fn annotate(&mut self, sentences: &[&Sentence]) -> Result<AnnotatedBatch, AlError> {
        let labelings = sentences
            .iter()
            .map(|s| {
                self.gold.get(&s.id).cloned().ok_or_else(|| {
                    AlError::Annotator(format!("no gold labeling for sentence {}", s.id))
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(AnnotatedBatch {
            labelings,
            seconds: 0.0,
        })
    }
}

/// Trains several chunkers; implementations may run them concurrently but
/// must return them in input order.
pub trait Trainer {
    fn train_all(
        &self,
        sets: &[Vec<(&Sentence, &Labeling)>],
        config: &TblConfig,
    ) -> Result<Vec<Chunker>, TblError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialTrainer;

impl Trainer for SequentialTrainer {
    fn train_all(
        &self,
        sets: &[Vec<(&Sentence, &Labeling)>],
        config: &TblConfig,
    ) -> Result<Vec<Chunker>, TblError> {
        sets.iter()
            .map(|set| learn_rules(set.iter().copied(), config))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlRow {
    pub iteration: usize,
    pub selected: Vec<SentenceId>,
    /// Annotated sentences so far.
    pub sentences: usize,
    /// Annotated words so far.
    pub words: usize,
    pub test: EvalReport,
    /// Cumulative annotation time reported by the annotator.
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlHistory {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<AlRow>,
}

impl AlHistory {
    pub const CSV_HEADER: &'static str =
        "iteration,sentences,words,test_precision,test_recall,test_f,elapsed_seconds";

    /// Metadata as `# key: value` lines, then the header and one row per
    /// iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.3}",
                r.iteration,
                r.sentences,
                r.words,
                r.test.precision,
                r.test.recall,
                r.test.fmeasure,
                r.elapsed_seconds
            );
        }
        out
    }

    /// Fewest annotated words at which test F reached `target`.
    pub fn words_to_reach(&self, target: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.test.fmeasure >= target)
            .map(|r| r.words)
    }

    pub fn final_f(&self) -> Option<f64> {
        self.rows.last().map(|r| r.test.fmeasure)
    }
}

/// How each iteration picks its batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Committee,
    Sequential,
}

/// Loop state for one run: annotated set, pool and history. Every field
/// is changed only between phases of [`ActiveLearner::step`], so a failed
/// annotation leaves the learner ready to retry the same batch.
pub struct ActiveLearner<'a, T: Trainer = SequentialTrainer> {
    corpus: &'a [Sentence],
    test: &'a [LabeledSentence],
    config: AlConfig,
    strategy: Strategy,
    trainer: T,
    annotated: Vec<(usize, Labeling)>,
    /// Corpus indices still unannotated, in corpus order.
    pool: Vec<usize>,
    pending: Option<Vec<usize>>,
    words: usize,
    elapsed: f64,
    history: AlHistory,
}

impl<'a> ActiveLearner<'a, SequentialTrainer> {
    pub fn new(
        corpus: &'a [Sentence],
        test: &'a [LabeledSentence],
        config: AlConfig,
        strategy: Strategy,
    ) -> Result<Self, AlError> {
        Self::with_trainer(corpus, test, config, strategy, SequentialTrainer)
    }
}

impl<'a, T: Trainer> ActiveLearner<'a, T> {
    pub fn with_trainer(
        corpus: &'a [Sentence],
        test: &'a [LabeledSentence],
        config: AlConfig,
        strategy: Strategy,
        trainer: T,
    ) -> Result<Self, AlError> {
        config.validate()?;
        if corpus.len() <= config.init_size {
            return Err(AlError::TooFewSentences {
                needed: config.init_size + 1,
                have: corpus.len(),
            });
        }
        if test.is_empty() {
            return Err(AlError::EmptyTestSet);
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for s in corpus {
            if !seen.insert(s.id) {
                return Err(AlError::DuplicateId(s.id));
            }
        }
        let mut metadata = alloc::vec![(
            "strategy".to_string(),
            match strategy {
                Strategy::Committee => "committee".to_string(),
                Strategy::Sequential => "sequential".to_string(),
            },
        )];
        metadata.extend(config.describe());
        metadata.push((
            "test_model".to_string(),
            "one chunker trained on the full annotated set".to_string(),
        ));
        Ok(ActiveLearner {
            corpus,
            test,
            strategy,
            trainer,
            annotated: Vec::new(),
            pool: (0..corpus.len()).collect(),
            pending: Some((0..config.init_size).collect()),
            config,
            words: 0,
            elapsed: 0.0,
            history: AlHistory {
                metadata,
                rows: Vec::new(),
            },
        })
    }

    pub fn history(&self) -> &AlHistory {
        &self.history
    }

    pub fn into_history(self) -> AlHistory {
        self.history
    }

    pub fn annotated_ids(&self) -> impl Iterator<Item = SentenceId> + '_ {
        self.annotated.iter().map(|(i, _)| self.corpus[*i].id)
    }

    pub fn pool_ids(&self) -> impl Iterator<Item = SentenceId> + '_ {
        self.pool.iter().map(|&i| self.corpus[i].id)
    }

    /// True once the iteration budget is spent or the pool is empty.
    pub fn is_done(&self) -> bool {
        if self.pending.is_some() {
            return false;
        }
        let iterations = self.history.rows.len().saturating_sub(1);
        self.pool.is_empty() || self.config.iterations.is_some_and(|n| iterations >= n)
    }

    fn training_set(&self) -> Vec<(&'a Sentence, &Labeling)> {
        self.annotated
            .iter()
            .map(|(i, l)| (&self.corpus[*i], l))
            .collect()
    }

    /// Trains the committee on the annotated set and ranks the pool.
    fn choose_batch(&self, iteration: usize) -> Result<Vec<usize>, AlError> {
        let x = self.config.batch_size;
        match self.strategy {
            Strategy::Sequential => Ok(self.pool.iter().copied().take(x).collect()),
            Strategy::Committee => {
                let pool: Vec<&Sentence> = self.pool.iter().map(|&i| &self.corpus[i]).collect();
                let chosen = committee_select(
                    &self.training_set(),
                    &pool,
                    &self.config,
                    iteration,
                    &self.trainer,
                )?;
                let index_of: BTreeMap<SentenceId, usize> =
                    self.pool.iter().map(|&i| (self.corpus[i].id, i)).collect();
                Ok(chosen.iter().map(|id| index_of[id]).collect())
            }
        }
    }

    /// Runs one iteration (the first call annotates the seed set).
    /// Returns `Ok(false)` when there is nothing left to do.
    pub fn step<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> Result<bool, AlError> {
        if self.is_done() {
            return Ok(false);
        }
        let iteration = self.history.rows.len();
        let batch = match self.pending.take() {
            Some(b) => b,
            None => self.choose_batch(iteration)?,
        };
        self.pending = Some(batch.clone());

        let sentences: Vec<&Sentence> = batch.iter().map(|&i| &self.corpus[i]).collect();
        let answer = annotator.annotate(&sentences)?;
        if answer.labelings.len() != batch.len() {
            return Err(AlError::AnnotationCount {
                asked: batch.len(),
                got: answer.labelings.len(),
            });
        }
        for (s, l) in sentences.iter().zip(&answer.labelings) {
            if s.len() != l.len() {
                return Err(AlError::AnnotationLength(s.id));
            }
        }

        let chunker = {
            let mut set = self.training_set();
            set.extend(sentences.iter().copied().zip(&answer.labelings));
            let mut trained = self.trainer.train_all(&[set], &self.config.tbl)?;
            trained.remove(0)
        };
        let test = evaluate_on(&chunker, self.test)?;

        self.pending = None;
        self.pool.retain(|i| !batch.contains(i));
        self.words += sentences.iter().map(|s| s.len()).sum::<usize>();
        self.elapsed += answer.seconds;
        self.annotated
            .extend(batch.iter().copied().zip(answer.labelings));
        self.history.rows.push(AlRow {
            iteration,
            selected: batch.iter().map(|&i| self.corpus[i].id).collect(),
            sentences: self.annotated.len(),
            words: self.words,
            test,
            elapsed_seconds: self.elapsed,
        });
        Ok(true)
    }

    pub fn run<A: Annotator + ?Sized>(&mut self, annotator: &mut A) -> Result<(), AlError> {
        while self.step(annotator)? {}
        Ok(())
    }
}

pub fn evaluate_on(chunker: &Chunker, test: &[LabeledSentence]) -> Result<EvalReport, AlError> {
    let gold: Vec<Labeling> = test.iter().map(|(_, l)| l.clone()).collect();
    let proposed: Vec<Labeling> = test.iter().map(|(s, _)| chunker.apply(s)).collect();
    evaluate_corpus(&gold, &proposed, Beta::ONE).map_err(|_| AlError::EmptyTestSet)
}

/// Committee-selected annotation from seed to exhaustion of the budget.
pub fn run_active_learning<A: Annotator + ?Sized>(
    corpus: &[Sentence],
    config: &AlConfig,
    annotator: &mut A,
    test: &[LabeledSentence],
) -> Result<AlHistory, AlError> {
    let mut learner = ActiveLearner::new(corpus, test, config.clone(), Strategy::Committee)?;
    learner.run(annotator)?;
    Ok(learner.into_history())
}

/// Same loop with batches taken in corpus order.
pub fn run_sequential<A: Annotator + ?Sized>(
    corpus: &[Sentence],
    config: &AlConfig,
    annotator: &mut A,
    test: &[LabeledSentence],
) -> Result<AlHistory, AlError> {
    let mut learner = ActiveLearner::new(corpus, test, config.clone(), Strategy::Sequential)?;
    learner.run(annotator)?;
    Ok(learner.into_history())
}
