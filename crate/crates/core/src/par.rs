//! Execution strategy for embarrassingly parallel batch work.
//!
//! Core routines never spawn threads; they hand independent jobs to a
//! [`BatchMap`]. Results come back in input order and every job owns its own
//! random substream, so output is identical for any implementation.

use alloc::vec::Vec;

pub trait BatchMap: Sync {
    fn map<I, O, F>(&self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl BatchMap for Sequential {
    fn map<I, O, F>(&self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}
