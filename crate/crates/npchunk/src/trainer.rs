use npchunk_core::al::Trainer;
use npchunk_core::corpus::{Labeling, Sentence};
use npchunk_core::tbl::{learn_rules, Chunker, TblConfig, TblError};

/// Trains committee members on separate threads, at most `threads` at a
/// time. Members are independent, so the result equals sequential
/// training.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedTrainer {
    pub threads: usize,
}

impl Default for ThreadedTrainer {
    fn default() -> Self {
        ThreadedTrainer {
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl Trainer for ThreadedTrainer {
    fn train_all(
        &self,
        sets: &[Vec<(&Sentence, &Labeling)>],
        config: &TblConfig,
    ) -> Result<Vec<Chunker>, TblError> {
        let mut out = Vec::with_capacity(sets.len());
        for group in sets.chunks(self.threads.max(1)) {
            let trained: Vec<Result<Chunker, TblError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|set| scope.spawn(move || learn_rules(set.iter().copied(), config)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training thread panicked"))
                    .collect()
            });
            for c in trained {
                out.push(c?);
            }
        }
        Ok(out)
    }
}
