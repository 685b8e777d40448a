//! Execution-slot arithmetic, processor calendars and report windows.
//!
//! All intervals are half-open `[start, end)` in milliseconds, so a slot
//! that begins exactly when a busy interval ends does not conflict with it.

use crate::domain::{DeploymentId, Duration, Schedule, Timestamp};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("start delay {delay} outside [0, {max}]")]
    DelayOutOfRange { delay: Duration, max: Duration },
    #[error("slot [{start}, {end}) of deployment {deployment} overlaps the calendar")]
    Conflict {
        deployment: DeploymentId,
        start: Timestamp,
        end: Timestamp,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionSlot {
    pub deployment: DeploymentId,
    /// 1-based.
    pub index: u32,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Lists every execution of `schedule` under the given start delay.
///
/// An execution is only included when it finishes by `schedule.end`.
pub fn enumerate_executions(
    deployment: DeploymentId,
    schedule: &Schedule,
    start_delay: Duration,
) -> Result<Vec<ExecutionSlot>, SchedulerError> {
    if start_delay > schedule.max_start_delay {
        return Err(SchedulerError::DelayOutOfRange {
            delay: start_delay,
            max: schedule.max_start_delay,
        });
    }
    let count = execution_count(schedule, start_delay);
    let first = schedule.start + start_delay;
    Ok((0..count)
        .map(|i| {
            let start = first + u64::from(i) * schedule.interval;
            ExecutionSlot {
                deployment,
                index: i + 1,
                start,
                end: start + schedule.duration,
            }
        })
        .collect())
}

/// Number of executions that fit when the first one starts `start_delay`
/// after `schedule.start`.
pub fn execution_count(schedule: &Schedule, start_delay: Duration) -> u32 {
    let first_end = schedule.start + start_delay + schedule.duration;
    if first_end > schedule.end || schedule.interval == 0 {
        return 0;
    }
    let extra = (schedule.end - first_end) / schedule.interval;
    u32::try_from(extra + 1).unwrap_or(u32::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusyInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub deployment: DeploymentId,
}

/// Sorted, pairwise-disjoint busy intervals of one processor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BusyInterval>", into = "Vec<BusyInterval>")]
pub struct ProcessorCalendar {
    busy: Vec<BusyInterval>,
}

impl ProcessorCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[BusyInterval] {
        &self.busy
    }

    pub fn len(&self) -> usize {
        self.busy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.busy.is_empty()
    }

    /// True iff `[start, end)` intersects no busy interval.
    pub fn is_free(&self, start: Timestamp, end: Timestamp) -> bool {
        if start >= end {
            return true;
        }
        // first interval still running at `start`
        let i = self.busy.partition_point(|b| b.end <= start);
        self.busy.get(i).is_none_or(|b| b.start >= end)
    }

    pub fn insert(&mut self, interval: BusyInterval) -> Result<(), SchedulerError> {
        if !self.is_free(interval.start, interval.end) || interval.start >= interval.end {
            return Err(SchedulerError::Conflict {
                deployment: interval.deployment,
                start: interval.start,
                end: interval.end,
            });
        }
        let i = self.busy.partition_point(|b| b.start < interval.start);
        self.busy.insert(i, interval);
        Ok(())
    }

    /// Books all slots or none of them.
    pub fn insert_slots(&mut self, slots: &[ExecutionSlot]) -> Result<(), SchedulerError> {
        if let Some(slot) = slots.iter().find(|s| !self.is_free(s.start, s.end)) {
            return Err(SchedulerError::Conflict {
                deployment: slot.deployment,
                start: slot.start,
                end: slot.end,
            });
        }
        for slot in slots {
            self.insert(BusyInterval {
                start: slot.start,
                end: slot.end,
                deployment: slot.deployment,
            })?;
        }
        Ok(())
    }

    /// Drops intervals that ended at or before `t`. Nothing can be booked in
    /// the past, so they no longer constrain matching.
    pub fn prune_before(&mut self, t: Timestamp) {
        let keep_from = self.busy.partition_point(|b| b.end <= t);
        self.busy.drain(..keep_from);
    }
}

impl TryFrom<Vec<BusyInterval>> for ProcessorCalendar {
    type Error = SchedulerError;

    fn try_from(intervals: Vec<BusyInterval>) -> Result<Self, Self::Error> {
        let mut calendar = Self::new();
        for interval in intervals {
            calendar.insert(interval)?;
        }
        Ok(calendar)
    }
}

impl From<ProcessorCalendar> for Vec<BusyInterval> {
    fn from(calendar: ProcessorCalendar) -> Self {
        calendar.busy
    }
}

/// True iff no slot intersects a busy interval of the calendar.
pub fn fits(calendar: &ProcessorCalendar, slots: &[ExecutionSlot]) -> bool {
    slots.iter().all(|s| calendar.is_free(s.start, s.end))
}

fn fits_at(schedule: &Schedule, calendar: &ProcessorCalendar, delay: Duration) -> bool {
    let count = execution_count(schedule, delay);
    if count == 0 {
        return false;
    }
    let first = schedule.start + delay;
    (0..u64::from(count)).all(|i| {
        let start = first + i * schedule.interval;
        calendar.is_free(start, start + schedule.duration)
    })
}

/// Smallest start delay in `[0, max_start_delay]` for which every execution
/// fits the calendar and at least one execution exists.
///
/// Feasibility only changes at a finite set of delays: where a slot start
/// meets the end of a busy interval, and where the last slot stops fitting
/// before `schedule.end`. Those candidates (plus 0) are checked in order.
pub fn find_start_delay(schedule: &Schedule, calendar: &ProcessorCalendar) -> Option<Duration> {
    let max_delay = schedule.max_start_delay;
    let max_count = execution_count(schedule, 0);
    if max_count == 0 {
        return None;
    }
    let horizon_end = schedule.end;
    let mut candidates: Vec<Duration> = vec![0];

    // Slot k is present for delays up to end - duration - base_k.
    for k in 0..u64::from(max_count) {
        let base = schedule.start + k * schedule.interval;
        let last_delay_with_slot = horizon_end - schedule.duration - base;
        if last_delay_with_slot < max_delay {
            candidates.push(last_delay_with_slot + 1);
        }
    }

    let relevant = calendar
        .intervals()
        .iter()
        .filter(|b| b.end > schedule.start && b.start < horizon_end);
    for b in relevant {
        // slots whose base lies in (b.end - max_delay, b.end]
        let lowest_base = b.end.saturating_sub(max_delay).max(schedule.start);
        let k_min = (lowest_base - schedule.start).div_ceil(schedule.interval);
        let mut k = k_min;
        while k < u64::from(max_count) {
            let base = schedule.start + k * schedule.interval;
            if base > b.end {
                break;
            }
            candidates.push(b.end - base);
            k += 1;
        }
    }

    candidates.sort_unstable();
    candidates.dedup();
    candidates
        .into_iter()
        .take_while(|d| *d <= max_delay)
        .find(|d| fits_at(schedule, calendar, *d))
}

/// Window `[slot.start, slot.end + grace)` in which a report is accepted.
pub fn acceptance_window(slot: &ExecutionSlot, report_grace: Duration) -> Range<Timestamp> {
    slot.start..slot.end + report_grace
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportTiming {
    InWindow,
    OutOfWindow,
}

pub fn classify_report(
    slot: &ExecutionSlot,
    reported_at: Timestamp,
    report_grace: Duration,
) -> ReportTiming {
    if acceptance_window(slot, report_grace).contains(&reported_at) {
        ReportTiming::InWindow
    } else {
        ReportTiming::OutOfWindow
    }
}

/// Default grace: 10% of the execution duration.
pub fn default_report_grace(duration: Duration) -> Duration {
    duration / 10
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const D: DeploymentId = DeploymentId(7);

    fn sched(start: u64, end: u64, interval: u64, duration: u64, max: u64) -> Schedule {
        Schedule {
            start,
            end,
            interval,
            duration,
            max_start_delay: max,
        }
    }

    fn busy(ranges: &[(u64, u64)]) -> ProcessorCalendar {
        let mut c = ProcessorCalendar::new();
        for (i, (s, e)) in ranges.iter().enumerate() {
            c.insert(BusyInterval {
                start: *s,
                end: *e,
                deployment: DeploymentId(100 + i as u64),
            })
            .unwrap();
        }
        c
    }

    fn slot(start: u64, end: u64) -> ExecutionSlot {
        ExecutionSlot {
            deployment: D,
            index: 1,
            start,
            end,
        }
    }

    fn brute_force_slots(s: &Schedule, delay: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let start = s.start + delay + k * s.interval;
            if start + s.duration > s.end {
                break;
            }
            out.push((start, start + s.duration));
            k += 1;
        }
        out
    }

    fn overlaps(a: (u64, u64), b: (u64, u64)) -> bool {
        a.0 < b.1 && b.0 < a.1
    }

    #[test]
    fn ten_slots_in_a_hundred_ms() {
        let s = sched(0, 100, 10, 3, 0);
        let slots = enumerate_executions(D, &s, 0).unwrap();
        let got: Vec<_> = slots.iter().map(|x| (x.start, x.end)).collect();
        assert_eq!(got, brute_force_slots(&s, 0));
        assert_eq!(got.len(), 10);
        assert_eq!(got[9], (90, 93));
        assert_eq!(
            slots.iter().map(|x| x.index).collect::<Vec<_>>(),
            (1..=10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn single_slot_when_end_is_near() {
        let slots = enumerate_executions(D, &sched(0, 5, 10, 3, 0), 0).unwrap();
        assert_eq!(
            slots,
            vec![ExecutionSlot {
                deployment: D,
                index: 1,
                start: 0,
                end: 3
            }]
        );
    }

    #[test]
    fn delay_past_maximum_is_rejected() {
        let s = sched(0, 100, 10, 3, 4);
        assert_eq!(
            enumerate_executions(D, &s, 5),
            Err(SchedulerError::DelayOutOfRange { delay: 5, max: 4 })
        );
    }

    #[test]
    fn delay_can_push_the_only_slot_out() {
        let s = sched(0, 5, 10, 3, 3);
        assert!(enumerate_executions(D, &s, 3).unwrap().is_empty());
    }

    #[test]
    fn fits_against_busy_interval() {
        assert!(fits(&ProcessorCalendar::new(), &[slot(0, 3), slot(10, 13)]));
        let c = busy(&[(5, 8)]);
        assert!(fits(&c, &[slot(0, 3)]));
        assert!(!fits(&c, &[slot(7, 10)]));
        // pairwise oracle on a handful of slots
        for s in 0..12 {
            let expected = !overlaps((s, s + 3), (5, 8));
            assert_eq!(fits(&c, &[slot(s, s + 3)]), expected, "slot start {s}");
        }
    }

    #[test]
    fn abutting_intervals_do_not_conflict() {
        assert!(fits(&busy(&[(0, 5)]), &[slot(5, 8)]));
        assert!(fits(&busy(&[(5, 8)]), &[slot(2, 5)]));
    }

    #[test]
    fn start_delay_examples() {
        let s = sched(0, 20, 10, 3, 5);
        assert_eq!(find_start_delay(&s, &ProcessorCalendar::new()), Some(0));
        assert_eq!(find_start_delay(&s, &busy(&[(0, 2)])), Some(2));
        assert_eq!(find_start_delay(&s, &busy(&[(0, 25)])), None);
    }

    #[test]
    fn dropping_the_last_slot_can_make_a_delay_feasible() {
        // Up to delay 7 there are two slots and the second one collides with
        // [12,20). From delay 8 on only one slot remains, and it fits.
        let s = sched(0, 20, 10, 3, 9);
        let c = busy(&[(1, 2), (12, 20)]);
        assert_eq!(find_start_delay(&s, &c), Some(8));
    }

    #[test]
    fn acceptance_window_extends_past_slot_end() {
        // slot [2,5) in seconds with a grace of 0.3 x duration, scaled to ms
        let sl = slot(2_000, 5_000);
        assert_eq!(acceptance_window(&sl, 900), 2_000..5_900);
        assert_eq!(acceptance_window(&sl, 0), 2_000..5_000);
        assert_eq!(classify_report(&sl, 5_900, 900), ReportTiming::OutOfWindow);
        assert_eq!(classify_report(&sl, 5_899, 900), ReportTiming::InWindow);
        assert_eq!(classify_report(&sl, 2_000, 900), ReportTiming::InWindow);
        assert_eq!(classify_report(&sl, 1_999, 900), ReportTiming::OutOfWindow);
    }

    #[test]
    fn prune_drops_only_finished_intervals() {
        let mut c = busy(&[(0, 5), (5, 9), (12, 20)]);
        c.prune_before(9);
        assert_eq!(c.intervals().len(), 1);
        assert_eq!(c.intervals()[0].start, 12);
    }

    #[test]
    fn calendar_rejects_overlap_and_keeps_order() {
        let mut c = busy(&[(10, 20)]);
        assert!(c
            .insert(BusyInterval {
                start: 15,
                end: 25,
                deployment: D
            })
            .is_err());
        c.insert(BusyInterval {
            start: 0,
            end: 10,
            deployment: D,
        })
        .unwrap();
        c.insert(BusyInterval {
            start: 20,
            end: 21,
            deployment: D,
        })
        .unwrap();
        let starts: Vec<_> = c.intervals().iter().map(|b| b.start).collect();
        assert_eq!(starts, vec![0, 10, 20]);
        let bad: Result<ProcessorCalendar, _> = vec![
            BusyInterval {
                start: 0,
                end: 5,
                deployment: D,
            },
            BusyInterval {
                start: 4,
                end: 6,
                deployment: D,
            },
        ]
        .try_into();
        assert!(bad.is_err());
    }

    #[test]
    fn insert_slots_is_all_or_nothing() {
        let mut c = busy(&[(12, 13)]);
        let before = c.clone();
        assert!(c.insert_slots(&[slot(0, 3), slot(10, 13)]).is_err());
        assert_eq!(c, before);
    }

    fn arb_instance() -> impl Strategy<Value = (Schedule, Vec<(u64, u64)>)> {
        (0u64..50, 1u64..40, 1u64..15, 0u64..30, 1u64..150).prop_flat_map(
            |(start, interval, duration, max_delay, span)| {
                let duration = duration.min(interval);
                let s = sched(
                    start,
                    start + span.max(duration),
                    interval,
                    duration,
                    max_delay,
                );
                let busy = prop::collection::vec((0u64..250, 1u64..20), 0..6);
                (Just(s), busy)
            },
        )
    }

    fn build_calendar(raw: &[(u64, u64)]) -> ProcessorCalendar {
        let mut c = ProcessorCalendar::new();
        for (i, (s, len)) in raw.iter().enumerate() {
            let _ = c.insert(BusyInterval {
                start: *s,
                end: s + len,
                deployment: DeploymentId(i as u64),
            });
        }
        c
    }

    proptest! {
        #[test]
        fn slots_are_increasing_and_disjoint((s, _) in arb_instance(), delay in 0u64..30) {
            prop_assume!(delay <= s.max_start_delay);
            let slots = enumerate_executions(D, &s, delay).unwrap();
            let expected = brute_force_slots(&s, delay);
            prop_assert_eq!(slots.len(), expected.len());
            for w in slots.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for sl in &slots {
                prop_assert_eq!(sl.end - sl.start, s.duration);
                prop_assert!(sl.end <= s.end);
            }
        }

        #[test]
        fn start_delay_matches_exhaustive_scan((s, raw) in arb_instance()) {
            let c = build_calendar(&raw);
            let scan = (0..=s.max_start_delay).find(|d| {
                let slots = brute_force_slots(&s, *d);
                !slots.is_empty()
                    && slots.iter().all(|x| c.intervals().iter().all(|b| !overlaps(*x, (b.start, b.end))))
            });
            let found = find_start_delay(&s, &c);
            prop_assert_eq!(found, scan);
            if let Some(d) = found {
                let slots = enumerate_executions(D, &s, d).unwrap();
                let mut booked = c.clone();
                booked.insert_slots(&slots).unwrap();
                for w in booked.intervals().windows(2) {
                    prop_assert!(w[0].end <= w[1].start);
                }
            }
        }
    }
}
