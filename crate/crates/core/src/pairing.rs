use std::collections::HashSet;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::signal::AlignedWindow;
use eeg2fmri_tensor::nd::NdArray;

/// Two fMRI start times closer than this count as the same alignment.
const ALIGN_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PairingError {
    #[error("no negative pairs possible from {individuals} individual(s)")]
    NoNegativesPossible { individuals: usize },

    #[error("cannot split {total} individual(s) into {n_val} validation + {n_test} test plus a non-empty train set")]
    NotEnoughIndividuals {
        total: usize,
        n_val: usize,
        n_test: usize,
    },
}

pub type Result<T> = std::result::Result<T, PairingError>;

/// All aligned windows cut from one individual's simultaneous recording.
#[derive(Debug, Clone)]
pub struct RecordingSession {
    pub individual_id: String,
    pub windows: Vec<AlignedWindow>,
}

/// One EEG window paired with one fMRI window; positive iff the fMRI window
/// is the haemodynamically shifted counterpart from the same session.
#[derive(Debug, Clone)]
pub struct PairedInstance {
    /// [channels, freq_bins, window_steps]
    pub eeg: Rc<NdArray>,
    /// [window_steps, x, y, z]
    pub fmri: Rc<NdArray>,
    pub positive: bool,
}

impl PairedInstance {
    /// Contrastive label: 1 for matched pairs, 0 for mismatched.
    pub fn y(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }
}

/// Which mismatched combinations count as negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativePolicy {
    /// EEG and fMRI must come from different individuals (and differ in time).
    CrossIndividualOnly,
    /// Any combination that is not the positive alignment.
    AnyMisaligned,
}

/// Every aligned window becomes one positive instance, in session order.
pub fn make_positive_pairs(sessions: &[RecordingSession]) -> Vec<PairedInstance> {
    let mut out = Vec::new();
    for session in sessions {
        for w in &session.windows {
            out.push(PairedInstance {
                eeg: Rc::clone(&w.eeg),
                fmri: Rc::clone(&w.fmri),
                positive: true,
            });
        }
    }
    out
}

/// Cross-combines EEG windows with fMRI windows they were not recorded
/// against. With a limit, a seeded shuffle subsamples without replacement;
/// otherwise pairs come back in deterministic enumeration order.
pub fn make_negative_pairs(
    sessions: &[RecordingSession],
    policy: NegativePolicy,
    limit: Option<usize>,
    seed: u64,
) -> Result<Vec<PairedInstance>> {
    let individuals: HashSet<&str> = sessions
        .iter()
        .map(|s| s.individual_id.as_str())
        .collect();
    if policy == NegativePolicy::CrossIndividualOnly && individuals.len() < 2 {
        return Err(PairingError::NoNegativesPossible {
            individuals: individuals.len(),
        });
    }

    let mut out = Vec::new();
    for (si, sa) in sessions.iter().enumerate() {
        for wa in &sa.windows {
            for (sj, sb) in sessions.iter().enumerate() {
                for wb in &sb.windows {
                    // A window pair is the positive alignment iff it comes
                    // from the same session at the same shifted start time.
                    let aligned = si == sj && (wb.t_fmri_s - wa.t_fmri_s).abs() <= ALIGN_EPS;
                    let keep = match policy {
                        NegativePolicy::CrossIndividualOnly => {
                            sa.individual_id != sb.individual_id
                                && (wb.t_fmri_s - wa.t_fmri_s).abs() > ALIGN_EPS
                        }
                        NegativePolicy::AnyMisaligned => !aligned,
                    };
                    if keep {
                        out.push(PairedInstance {
                            eeg: Rc::clone(&wa.eeg),
                            fmri: Rc::clone(&wb.fmri),
                            positive: false,
                        });
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(PairingError::NoNegativesPossible {
            individuals: individuals.len(),
        });
    }
    if let Some(k) = limit {
        if k < out.len() {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            out.shuffle(&mut rng);
            out.truncate(k);
        }
    }
    Ok(out)
}

/// Individual-disjoint partition of sessions.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<RecordingSession>,
    pub val: Vec<RecordingSession>,
    pub test: Vec<RecordingSession>,
}

/// Assigns whole individuals to train/val/test by a seeded shuffle, so no
/// individual's windows leak across partitions.
pub fn split_by_individual(
    sessions: Vec<RecordingSession>,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Split> {
    let mut ids: Vec<String> = Vec::new();
    for s in &sessions {
        if !ids.contains(&s.individual_id) {
            ids.push(s.individual_id.clone());
        }
    }
    if n_val + n_test >= ids.len() {
        return Err(PairingError::NotEnoughIndividuals {
            total: ids.len(),
            n_val,
            n_test,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test_ids: HashSet<&String> = ids[..n_test].iter().collect();
    let val_ids: HashSet<&String> = ids[n_test..n_test + n_val].iter().collect();

    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for s in sessions {
        if test_ids.contains(&s.individual_id) {
            split.test.push(s);
        } else if val_ids.contains(&s.individual_id) {
            split.val.push(s);
        } else {
            split.train.push(s);
        }
    }
    Ok(split)
}
