//! Bug-injection switches for negative-control tests.
//!
//! Each [`Fault`] re-introduces one known reimplementation bug. Switches are
//! thread-local and only exist with the `fault-injection` feature; without it
//! [`active`] is a constant `false` and the branches compile away.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fault {
    /// Hidden rows of newly started sessions are not zeroed.
    SkipHiddenReset,
    /// Every catalog item is scored before the candidates are picked.
    SampleAfterScoring,
    /// The dropout rate is treated as a keep probability.
    DropoutAsKeepProbability,
    /// Softmax is applied to the scores before the cross-entropy softmax.
    DoubleSoftmax,
    /// BPR-max averages the pairwise terms uniformly instead of by softmax weight.
    WrongBprMax,
    /// Adagrad accumulators start at 0.1 instead of zero.
    LargeInitialAccumulator,
    /// The config parser ignores `batch_size` and `dropout_p_hidden`.
    HardCodedHyperparameters,
    /// Gradients of the recurrent weights come out with a flipped sign.
    FlipBackwardSign,
}

#[cfg(feature = "fault-injection")]
mod imp {
    use super::Fault;
    use std::cell::RefCell;

    thread_local! {
        static ACTIVE: RefCell<Vec<Fault>> = const { RefCell::new(Vec::new()) };
    }

    pub fn active(fault: Fault) -> bool {
        ACTIVE.with(|a| a.borrow().contains(&fault))
    }

    pub fn with_fault<T>(fault: Fault, f: impl FnOnce() -> T) -> T {
        struct Guard(Fault);
        impl Drop for Guard {
            fn drop(&mut self) {
                ACTIVE.with(|a| {
                    let mut a = a.borrow_mut();
                    if let Some(pos) = a.iter().position(|x| *x == self.0) {
                        a.remove(pos);
                    }
                });
            }
        }
        ACTIVE.with(|a| a.borrow_mut().push(fault));
        let _guard = Guard(fault);
        f()
    }
}

#[cfg(feature = "fault-injection")]
pub use imp::{active, with_fault};

#[cfg(not(feature = "fault-injection"))]
#[inline(always)]
pub fn active(_fault: Fault) -> bool {
    false
}
