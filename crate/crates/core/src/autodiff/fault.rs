//! Deliberate corruption of backward rules, used as a negative control for
//! gradient checking. Scoped to the calling thread.

use std::cell::RefCell;

thread_local! {
    static CORRUPTED: RefCell<Option<String>> = const { RefCell::new(None) };
}

/// Runs `f` with the backward rule of `op` (e.g. `"silu"`) scaled by 1.1.
pub fn with_corrupted_backward<R>(op: &str, f: impl FnOnce() -> R) -> R {
    let prev = CORRUPTED.with(|c| c.replace(Some(op.to_string())));
    let out = f();
    CORRUPTED.with(|c| *c.borrow_mut() = prev);
    out
}

pub(crate) fn is_corrupted(op: &str) -> bool {
    CORRUPTED.with(|c| c.borrow().as_deref() == Some(op))
}
