use super::SessionCorpus;

/// One session-parallel training step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiniBatch {
    /// Slot (hidden-state row) of each example, ascending.
    pub slots: Vec<usize>,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// `true` where the slot starts a new session this step.
    pub reset: Vec<bool>,
    /// Extra shared negatives; filled by the trainer, empty from the iterator.
    pub extra_negatives: Vec<u32>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Targets of all examples followed by the shared extra negatives. For
    /// example `k` the positive is column `k`; targets are not deduplicated.
    pub fn candidates(&self) -> Vec<u32> {
        let mut c = Vec::with_capacity(self.targets.len() + self.extra_negatives.len());
        c.extend_from_slice(&self.targets);
        c.extend_from_slice(&self.extra_negatives);
        c
    }
}

#[derive(Debug, Clone, Copy)]
struct Cursor {
    session: usize,
    pos: usize,
    fresh: bool,
}

/// Advances `batch_size` sessions in lockstep. A finished slot is refilled
/// with the next session in `order`; once the order is exhausted finished
/// slots retire and the batch shrinks until every session is consumed.
pub struct SessionParallelIter<'c> {
    corpus: &'c SessionCorpus,
    order: Vec<usize>,
    next: usize,
    slots: Vec<Option<Cursor>>,
}

impl<'c> SessionParallelIter<'c> {
    pub(super) fn new(corpus: &'c SessionCorpus, batch_size: usize, order: Vec<usize>) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        let mut it = SessionParallelIter {
            corpus,
            order,
            next: 0,
            slots: vec![None; batch_size],
        };
        for slot in 0..batch_size {
            it.slots[slot] = it.take_session();
        }
        it
    }

    fn take_session(&mut self) -> Option<Cursor> {
        let session = *self.order.get(self.next)?;
        self.next += 1;
        Some(Cursor {
            session,
            pos: 0,
            fresh: true,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.slots.len()
    }
}

impl Iterator for SessionParallelIter<'_> {
    type Item = MiniBatch;

    fn next(&mut self) -> Option<MiniBatch> {
        let mut batch = MiniBatch::default();
        for (slot, cursor) in self.slots.iter_mut().enumerate() {
            if let Some(c) = cursor {
                let s = self.corpus.session(c.session);
                batch.slots.push(slot);
                batch.inputs.push(s[c.pos]);
                batch.targets.push(s[c.pos + 1]);
                batch.reset.push(c.fresh);
                c.fresh = false;
                c.pos += 1;
            }
        }
        if batch.is_empty() {
            return None;
        }
        for slot in 0..self.slots.len() {
            if let Some(c) = self.slots[slot] {
                if c.pos + 1 >= self.corpus.session(c.session).len() {
                    self.slots[slot] = self.take_session();
                }
            }
        }
        Some(batch)
    }
}
