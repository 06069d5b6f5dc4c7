//! Reference-frame schedules for texture training.

use std::fmt;
use std::str::FromStr;

/// Dense-to-sparse staircase: `F - 1` equal phases stepping the reference
/// count down from `F - 1` to 1.
pub fn d2s_refs(iter: u64, total: u64, frames: usize) -> usize {
    assert!(frames >= 2 && total > 0, "d2s_refs needs frames >= 2 and total > 0");
    let top = (frames - 1) as u64;
    let drop = (top as u128 * iter as u128 / total as u128) as u64;
    top.saturating_sub(drop).clamp(1, top) as usize
}

/// How many leading frames serve as clean references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefSchedule {
    /// Staircase from all-but-one frames down to the first frame only.
    DenseToSparse,
    /// Always all frames but the last.
    Dense,
    /// Always the first frame only.
    Sparse,
}

impl RefSchedule {
    pub fn refs(self, iter: u64, total: u64, frames: usize) -> usize {
        match self {
            RefSchedule::DenseToSparse => d2s_refs(iter, total, frames),
            RefSchedule::Dense => frames - 1,
            RefSchedule::Sparse => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RefSchedule::DenseToSparse => "on",
            RefSchedule::Dense => "dense",
            RefSchedule::Sparse => "sparse",
        }
    }
}

impl fmt::Display for RefSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RefSchedule {
    type Err = String;

    /// `on` selects the staircase; `off` is an alias of `dense`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "on" | "d2s" => Ok(RefSchedule::DenseToSparse),
            "off" | "dense" => Ok(RefSchedule::Dense),
            "sparse" => Ok(RefSchedule::Sparse),
            other => Err(format!("unknown reference schedule {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumState {
    pub iteration: u64,
    pub total_iterations: u64,
    pub n_ref: usize,
}

impl CurriculumState {
    pub fn at(schedule: RefSchedule, iteration: u64, total_iterations: u64, frames: usize) -> Self {
        CurriculumState { iteration, total_iterations, n_ref: schedule.refs(iteration, total_iterations, frames) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        assert_eq!(d2s_refs(0, 1000, 8), 7);
        assert_eq!(d2s_refs(999, 1000, 8), 1);
        assert_eq!(d2s_refs(5, 10, 2), 1);
    }

    #[test]
    fn seven_equal_phases_over_700() {
        // Enumerate and group contiguous runs.
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for it in 0..700 {
            let n = d2s_refs(it, 700, 8);
            match runs.last_mut() {
                Some((v, len)) if *v == n => *len += 1,
                _ => runs.push((n, 1)),
            }
        }
        assert_eq!(runs, (1..=7).rev().map(|v| (v, 100)).collect::<Vec<_>>());
    }

    #[test]
    fn fixed_schedules() {
        assert_eq!(RefSchedule::Dense.refs(3, 10, 8), 7);
        assert_eq!(RefSchedule::Sparse.refs(0, 10, 8), 1);
        assert_eq!("off".parse::<RefSchedule>().unwrap(), RefSchedule::Dense);
        assert!("maybe".parse::<RefSchedule>().is_err());
    }

    proptest! {
        #[test]
        fn staircase_is_monotone_and_bounded(total in 1u64..5000, frames in 2usize..12, mut iters in prop::collection::vec(0u64..5000, 1..40)) {
            iters.iter_mut().for_each(|i| *i %= total);
            iters.sort_unstable();
            prop_assert_eq!(d2s_refs(0, total, frames), frames - 1);
            let mut prev = frames - 1;
            for &it in &iters {
                let n = d2s_refs(it, total, frames);
                prop_assert!((1..frames).contains(&n));
                prop_assert!(n <= prev);
                prev = n;
            }
            if total >= (frames - 1) as u64 {
                prop_assert_eq!(d2s_refs(total - 1, total, frames), 1);
            }
        }
    }
}
