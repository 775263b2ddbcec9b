//! Pending references: `fork` activates an action and hands back a handle,
//! `read` waits on it.

use crate::trace::Ns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PendingRef(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    /// Value was available; `since_resolve` is how long it sat unread.
    Ready { value: i64, since_resolve: Ns },
    /// Reader was parked until resolution.
    Parked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wakeup {
    pub reader: u64,
    pub value: i64,
    /// How long the reader waited.
    pub waited: Ns,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PendingError {
    #[error("reference {0} is unknown")]
    UnknownRef(usize),
    #[error("reference {0} resolved twice")]
    AlreadyResolved(usize),
    #[error("reference {ref_id} still has {readers} parked reader(s) at shutdown")]
    ReadUnresolvedAtShutdown { ref_id: usize, readers: usize },
}

#[derive(Debug, Clone)]
struct Slot {
    op: i64,
    forked_at: Ns,
    resolved: Option<(i64, Ns)>,
    waiters: Vec<(u64, Ns)>,
}

#[derive(Debug, Clone, Default)]
pub struct PendingStore {
    slots: Vec<Slot>,
}

impl PendingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Activates `op` at `ts` and returns its reference.
    pub fn fork(&mut self, op: i64, ts: Ns) -> PendingRef {
        self.slots.push(Slot { op, forked_at: ts, resolved: None, waiters: Vec::new() });
        PendingRef(self.slots.len() - 1)
    }

    pub fn op(&self, r: PendingRef) -> Option<i64> {
        self.slots.get(r.0).map(|s| s.op)
    }

    pub fn forked_at(&self, r: PendingRef) -> Option<Ns> {
        self.slots.get(r.0).map(|s| s.forked_at)
    }

    /// Binds the value and releases parked readers.
    pub fn resolve(&mut self, r: PendingRef, value: i64, ts: Ns) -> Result<Vec<Wakeup>, PendingError> {
        let slot = self.slots.get_mut(r.0).ok_or(PendingError::UnknownRef(r.0))?;
        if slot.resolved.is_some() {
            return Err(PendingError::AlreadyResolved(r.0));
        }
        slot.resolved = Some((value, ts));
        Ok(slot
            .waiters
            .drain(..)
            .map(|(reader, since)| Wakeup { reader, value, waited: ts - since })
            .collect())
    }

    pub fn read(&mut self, r: PendingRef, reader: u64, ts: Ns) -> Result<ReadOutcome, PendingError> {
        let slot = self.slots.get_mut(r.0).ok_or(PendingError::UnknownRef(r.0))?;
        match slot.resolved {
            Some((value, at)) => Ok(ReadOutcome::Ready { value, since_resolve: ts.saturating_sub(at) }),
            None => {
                slot.waiters.push((reader, ts));
                Ok(ReadOutcome::Parked)
            }
        }
    }

    /// Fails if any reader is still parked.
    pub fn shutdown(&self) -> Result<(), PendingError> {
        match self.slots.iter().enumerate().find(|(_, s)| !s.waiters.is_empty()) {
            Some((i, s)) => Err(PendingError::ReadUnresolvedAtShutdown { ref_id: i, readers: s.waiters.len() }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_after_resolve_is_immediate() {
        let mut s = PendingStore::new();
        let r = s.fork(1, 10);
        assert!(s.resolve(r, 21, 50).unwrap().is_empty());
        assert_eq!(s.read(r, 0, 50), Ok(ReadOutcome::Ready { value: 21, since_resolve: 0 }));
        assert_eq!(s.read(r, 0, 70), Ok(ReadOutcome::Ready { value: 21, since_resolve: 20 }));
        assert_eq!(s.resolve(r, 1, 80), Err(PendingError::AlreadyResolved(0)));
    }

    #[test]
    fn early_read_waits_for_resolution() {
        let mut s = PendingStore::new();
        let r = s.fork(7, 0);
        assert_eq!(s.read(r, 3, 40), Ok(ReadOutcome::Parked));
        assert!(matches!(s.shutdown(), Err(PendingError::ReadUnresolvedAtShutdown { ref_id: 0, readers: 1 })));
        let woken = s.resolve(r, 9, 55).unwrap();
        assert_eq!(woken, vec![Wakeup { reader: 3, value: 9, waited: 15 }]);
        assert_eq!(s.shutdown(), Ok(()));
        assert_eq!(s.op(r), Some(7));
    }
}
