//! Shared variables and the owner-tracking locks backends build on.

use std::fmt;

use parking_lot::{Condvar, Mutex};

use crate::program::ThreadId;

/// All shared state is integer valued.
pub type Value = i64;

/// Identifier of a shared variable. Ids are dense in creation order, and the
/// global lock order is ascending id.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    value: Value,
    version: u64,
}

/// The cells backing one run. Value and version are read and written
/// together so a reader never sees a torn pair.
pub struct SharedStore {
    cells: Vec<Mutex<Cell>>,
}

impl SharedStore {
    pub fn new(initial: &[Value]) -> Self {
        SharedStore {
            cells: initial
                .iter()
                .map(|&value| Mutex::new(Cell { value, version: 0 }))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, var: VarId) -> bool {
        var.index() < self.cells.len()
    }

    /// Current `(value, version)` of `var`.
    pub fn load(&self, var: VarId) -> (Value, u64) {
        let cell = self.cells[var.index()].lock();
        (cell.value, cell.version)
    }

    pub fn value(&self, var: VarId) -> Value {
        self.load(var).0
    }

    pub fn version(&self, var: VarId) -> u64 {
        self.load(var).1
    }

    /// In-place write used by the lock-based backends; the version is bumped
    /// separately once the write is committed.
    pub fn store(&self, var: VarId, value: Value) {
        self.cells[var.index()].lock().value = value;
    }

    pub fn bump_version(&self, var: VarId) {
        self.cells[var.index()].lock().version += 1;
    }

    /// Write-back used at transactional commit: value and version move together.
    pub fn publish(&self, var: VarId, value: Value) {
        let mut cell = self.cells[var.index()].lock();
        cell.value = value;
        cell.version += 1;
    }

    pub fn snapshot(&self) -> Vec<Value> {
        self.cells.iter().map(|c| c.lock().value).collect()
    }
}

/// A blocking lock that remembers its owner, so it can be held across calls
/// and released by whoever owns it.
#[derive(Default)]
pub struct OwnerLock {
    owner: Mutex<Option<ThreadId>>,
    freed: Condvar,
}

impl OwnerLock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&self, tid: ThreadId) {
        let mut owner = self.owner.lock();
        while owner.is_some() {
            self.freed.wait(&mut owner);
        }
        *owner = Some(tid);
    }

    pub fn release(&self, tid: ThreadId) {
        let mut owner = self.owner.lock();
        debug_assert_eq!(*owner, Some(tid), "lock released by non-owner");
        *owner = None;
        drop(owner);
        self.freed.notify_one();
    }

    pub fn held_by_other(&self, tid: ThreadId) -> bool {
        matches!(*self.owner.lock(), Some(owner) if owner != tid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn publish_moves_value_and_version_together() {
        let store = SharedStore::new(&[7, 8]);
        assert_eq!(store.load(VarId(1)), (8, 0));
        store.publish(VarId(1), 9);
        assert_eq!(store.load(VarId(1)), (9, 1));
        store.store(VarId(0), 1);
        assert_eq!(store.load(VarId(0)), (1, 0));
        store.bump_version(VarId(0));
        assert_eq!(store.version(VarId(0)), 1);
        assert_eq!(store.snapshot(), vec![1, 9]);
    }

    #[test]
    fn owner_lock_excludes_second_owner() {
        let lock = Arc::new(OwnerLock::new());
        lock.acquire(ThreadId(0));
        assert!(lock.held_by_other(ThreadId(1)));
        assert!(!lock.held_by_other(ThreadId(0)));
        let l2 = Arc::clone(&lock);
        let waiter = std::thread::spawn(move || {
            l2.acquire(ThreadId(1));
            l2.release(ThreadId(1));
        });
        std::thread::sleep(std::time::Duration::from_millis(10));
        assert!(!waiter.is_finished());
        lock.release(ThreadId(0));
        waiter.join().unwrap();
        assert!(!lock.held_by_other(ThreadId(5)));
    }
}
