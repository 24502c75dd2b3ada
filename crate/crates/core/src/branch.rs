//! Recording and replay of piecewise branch decisions.
//!
//! Several ops are only piecewise smooth: `abs`, `leaky_relu`, max pooling
//! and the principal-value phase of a complex number. A central difference
//! that straddles a kink (or the phase branch cut) measures a blend of two
//! pieces instead of the derivative autodiff reports. Running a forward pass
//! under [`record`] captures which piece each element took; running a
//! perturbed pass under [`replay`] forces the same pieces, so the finite
//! difference stays on the smooth piece containing the base point.
//!
//! Outside of `record`/`replay` every op takes its natural branch.

use std::cell::RefCell;

/// Branch decisions captured during one forward pass.
#[derive(Clone, Debug, Default)]
pub struct BranchLog {
    flags: Vec<i8>,
    indices: Vec<usize>,
    phases: Vec<f64>,
}

impl BranchLog {
    pub fn len(&self) -> usize {
        self.flags.len() + self.indices.len() + self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

enum Mode {
    Record(BranchLog),
    Replay {
        log: BranchLog,
        flag_at: usize,
        index_at: usize,
        phase_at: usize,
    },
}

thread_local! {
    static TAPE: RefCell<Option<Mode>> = const { RefCell::new(None) };
}

/// Runs `f`, capturing every branch decision it takes.
pub fn record<T>(f: impl FnOnce() -> T) -> (T, BranchLog) {
    let previous = TAPE.with(|t| t.replace(Some(Mode::Record(BranchLog::default()))));
    let out = f();
    let mode = TAPE.with(|t| t.replace(previous));
    match mode {
        Some(Mode::Record(log)) => (out, log),
        _ => unreachable!("branch tape mode changed during record"),
    }
}

/// Runs `f`, forcing the branch decisions stored in `log`. Decisions beyond
/// the end of the log fall back to the natural branch.
pub fn replay<T>(log: &BranchLog, f: impl FnOnce() -> T) -> T {
    let previous = TAPE.with(|t| {
        t.replace(Some(Mode::Replay {
            log: log.clone(),
            flag_at: 0,
            index_at: 0,
            phase_at: 0,
        }))
    });
    let out = f();
    TAPE.with(|t| t.replace(previous));
    out
}

/// Applies the tape to a batch of sign-like flags computed naturally.
pub(crate) fn flags(natural: &mut [i8]) {
    TAPE.with(|t| match t.borrow_mut().as_mut() {
        None => {}
        Some(Mode::Record(log)) => log.flags.extend_from_slice(natural),
        Some(Mode::Replay { log, flag_at, .. }) => {
            let end = (*flag_at + natural.len()).min(log.flags.len());
            let take = end.saturating_sub(*flag_at);
            natural[..take].copy_from_slice(&log.flags[*flag_at..end]);
            *flag_at += natural.len();
        }
    })
}

/// Applies the tape to a batch of selected indices (arg-max positions).
pub(crate) fn indices(natural: &mut [usize]) {
    TAPE.with(|t| match t.borrow_mut().as_mut() {
        None => {}
        Some(Mode::Record(log)) => log.indices.extend_from_slice(natural),
        Some(Mode::Replay { log, index_at, .. }) => {
            let end = (*index_at + natural.len()).min(log.indices.len());
            let take = end.saturating_sub(*index_at);
            natural[..take].copy_from_slice(&log.indices[*index_at..end]);
            *index_at += natural.len();
        }
    })
}

/// Applies the tape to principal-value phases: on replay each phase is
/// shifted by a multiple of 2π to lie within π of the recorded one.
pub(crate) fn phases(natural: &mut [f64]) {
    use std::f64::consts::{PI, TAU};
    TAPE.with(|t| match t.borrow_mut().as_mut() {
        None => {}
        Some(Mode::Record(log)) => log.phases.extend_from_slice(natural),
        Some(Mode::Replay { log, phase_at, .. }) => {
            let end = (*phase_at + natural.len()).min(log.phases.len());
            for (p, &base) in natural.iter_mut().zip(&log.phases[(*phase_at).min(end)..end]) {
                if *p - base > PI {
                    *p -= TAU;
                } else if base - *p > PI {
                    *p += TAU;
                }
            }
            *phase_at += natural.len();
        }
    })
}
