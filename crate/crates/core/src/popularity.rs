//! Recency-aware POI popularity.
//!
//! A check-in is *recent* when it lies within `recency_window` seconds of the
//! reference time, otherwise *past*. The score blends distinct-user and
//! check-in counts with weight `alpha`, and recent and past evidence with
//! weight `beta`:
//!
//! ```text
//! beta * (alpha * users_recent + (1 - alpha) * checkins_recent)
//!   + (1 - beta) * (alpha * users_past + (1 - alpha) * checkins_past)
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::ingest::{CheckIn, Trajectory};
use crate::{Error, Result, SECONDS_PER_DAY};

/// Ninety days, the default span counted as recent.
pub const DEFAULT_RECENCY_WINDOW: i64 = 90 * SECONDS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PopularityParams {
    pub alpha: f64,
    pub beta: f64,
    /// Seconds before `reference_time` that still count as recent.
    pub recency_window: i64,
    pub reference_time: i64,
}

impl PopularityParams {
    pub fn new(alpha: f64, beta: f64, recency_window: i64, reference_time: i64) -> Result<Self> {
        check_weight("alpha", alpha)?;
        check_weight("beta", beta)?;
        if recency_window <= 0 {
            return Err(Error::DomainError {
                what: "recency_window",
                value: recency_window as f64,
            });
        }
        Ok(Self {
            alpha,
            beta,
            recency_window,
            reference_time,
        })
    }

    /// Anchors the reference time at the last train check-in.
    pub fn anchored(alpha: f64, beta: f64, recency_window: i64, train: &[Trajectory]) -> Result<Self> {
        let reference = train
            .iter()
            .flat_map(|t| t.checkins.iter())
            .map(|c| c.time)
            .max()
            .ok_or(Error::EmptyTrain)?;
        Self::new(alpha, beta, recency_window, reference)
    }

    pub fn is_recent(&self, time: i64) -> bool {
        self.reference_time - time <= self.recency_window
    }
}

fn check_weight(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::DomainError { what, value })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PopularityCounts {
    pub user_recent: u64,
    pub checkin_recent: u64,
    pub user_past: u64,
    pub checkin_past: u64,
}

impl PopularityCounts {
    /// Total check-ins, the plain visit frequency.
    pub fn frequency(&self) -> u64 {
        self.checkin_recent + self.checkin_past
    }

    fn tally<'a>(checkins: impl Iterator<Item = &'a CheckIn>, params: &PopularityParams) -> Self {
        let mut recent_users = BTreeSet::new();
        let mut past_users = BTreeSet::new();
        let mut counts = Self::default();
        for c in checkins {
            if params.is_recent(c.time) {
                counts.checkin_recent += 1;
                recent_users.insert(c.user);
            } else {
                counts.checkin_past += 1;
                past_users.insert(c.user);
            }
        }
        counts.user_recent = recent_users.len() as u64;
        counts.user_past = past_users.len() as u64;
        counts
    }
}

/// Counts recent/past check-ins and distinct users at `poi`.
pub fn count_stats(
    train_checkins: &[CheckIn],
    poi: usize,
    params: &PopularityParams,
) -> Result<PopularityCounts> {
    let mut at_poi = train_checkins.iter().filter(|c| c.poi == poi).peekable();
    if at_poi.peek().is_none() {
        return Err(Error::UnknownPoi(poi));
    }
    Ok(PopularityCounts::tally(at_poi, params))
}

/// The popularity score for one POI's counts.
pub fn popularity(counts: &PopularityCounts, alpha: f64, beta: f64) -> Result<f64> {
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    let recent = alpha * counts.user_recent as f64 + (1.0 - alpha) * counts.checkin_recent as f64;
    let past = alpha * counts.user_past as f64 + (1.0 - alpha) * counts.checkin_past as f64;
    Ok(beta * recent + (1.0 - beta) * past)
}

/// What raw score feeds the node popularity feature.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum PopularitySource {
    /// The recency-aware score.
    Recency(PopularityParams),
    /// Plain check-in frequency, the score used before the recency-aware
    /// definition.
    CheckinCount,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PopularityTable {
    pub counts: BTreeMap<usize, PopularityCounts>,
    pub scores: BTreeMap<usize, f64>,
    pub normalized: BTreeMap<usize, f64>,
}

impl PopularityTable {
    pub fn normalized_or_zero(&self, poi: usize) -> f64 {
        self.normalized.get(&poi).copied().unwrap_or(0.0)
    }
}

/// Scores every POI visited in `train` and min-max normalizes `log1p` of the
/// scores into `[0, 1]`. A constant table normalizes to 0.5 everywhere.
pub fn popularity_table(train: &[Trajectory], source: &PopularitySource) -> Result<PopularityTable> {
    if train.is_empty() {
        return Err(Error::EmptyTrain);
    }
    // Counting ignores the params for CheckinCount, any anchor will do.
    let params = match source {
        PopularitySource::Recency(p) => *p,
        PopularitySource::CheckinCount => PopularityParams::anchored(1.0, 1.0, DEFAULT_RECENCY_WINDOW, train)?,
    };
    let mut by_poi: BTreeMap<usize, Vec<&CheckIn>> = BTreeMap::new();
    for c in train.iter().flat_map(|t| t.checkins.iter()) {
        by_poi.entry(c.poi).or_default().push(c);
    }
    let mut counts = BTreeMap::new();
    let mut scores = BTreeMap::new();
    for (poi, checkins) in by_poi {
        let c = PopularityCounts::tally(checkins.into_iter(), &params);
        let score = match source {
            PopularitySource::Recency(p) => popularity(&c, p.alpha, p.beta)?,
            PopularitySource::CheckinCount => c.frequency() as f64,
        };
        counts.insert(poi, c);
        scores.insert(poi, score);
    }
    let normalized = normalize_log_minmax(&scores);
    Ok(PopularityTable {
        counts,
        scores,
        normalized,
    })
}

fn normalize_log_minmax(scores: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let logs: BTreeMap<usize, f64> = scores.iter().map(|(&p, &s)| (p, libm::log1p(s))).collect();
    let lo = logs.values().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.values().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.into_iter()
        .map(|(p, v)| {
            let n = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (p, n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const DAY: i64 = SECONDS_PER_DAY;

    fn ci(user: usize, poi: usize, time: i64) -> CheckIn {
        CheckIn {
            user,
            poi,
            time,
            tz_offset_min: 0,
        }
    }

    fn params(alpha: f64, beta: f64, reference: i64) -> PopularityParams {
        PopularityParams::new(alpha, beta, DEFAULT_RECENCY_WINDOW, reference).unwrap()
    }

    #[test]
    fn all_recent_has_no_past() {
        let cs = vec![ci(0, 0, 100 * DAY), ci(1, 0, 101 * DAY)];
        let c = count_stats(&cs, 0, &params(0.5, 0.5, 101 * DAY)).unwrap();
        assert_eq!((c.user_past, c.checkin_past), (0, 0));
    }

    #[test]
    fn one_user_three_recent() {
        let cs = vec![ci(0, 0, 200 * DAY), ci(0, 0, 201 * DAY), ci(0, 0, 202 * DAY), ci(1, 1, 0)];
        let c = count_stats(&cs, 0, &params(0.5, 0.5, 202 * DAY)).unwrap();
        assert_eq!(c, PopularityCounts { user_recent: 1, checkin_recent: 3, user_past: 0, checkin_past: 0 });
    }

    #[test]
    fn one_user_outside_window() {
        let reference = 400 * DAY;
        let cs = vec![
            ci(0, 0, reference - DAY),
            ci(0, 0, reference),
            ci(1, 0, reference - 91 * DAY),
            ci(1, 0, reference - 200 * DAY),
        ];
        let c = count_stats(&cs, 0, &params(0.5, 0.5, reference)).unwrap();
        assert_eq!(c, PopularityCounts { user_recent: 1, checkin_recent: 2, user_past: 1, checkin_past: 2 });
    }

    #[test]
    fn window_boundary_is_recent() {
        let reference = 400 * DAY;
        let p = params(0.5, 0.5, reference);
        assert!(p.is_recent(reference - DEFAULT_RECENCY_WINDOW));
        assert!(!p.is_recent(reference - DEFAULT_RECENCY_WINDOW - 1));
    }

    #[test]
    fn unknown_poi() {
        assert_eq!(count_stats(&[ci(0, 0, 0)], 3, &params(0.5, 0.5, 0)), Err(Error::UnknownPoi(3)));
    }

    #[test]
    fn boundary_identities() {
        let c = PopularityCounts { user_recent: 7, checkin_recent: 11, user_past: 13, checkin_past: 17 };
        assert_eq!(popularity(&c, 1.0, 1.0).unwrap(), 7.0);
        assert_eq!(popularity(&c, 0.0, 0.0).unwrap(), 17.0);
    }

    #[test]
    fn hand_evaluated_case() {
        let c = PopularityCounts { user_recent: 10, checkin_recent: 100, user_past: 5, checkin_past: 50 };
        // 0.5 * (3.3 + 67) + 0.5 * (1.65 + 33.5)
        let v = popularity(&c, 0.33, 0.50).unwrap();
        assert!((v - 52.725).abs() < 1e-9, "{v}");
    }

    #[test]
    fn rejects_out_of_range_weights() {
        let c = PopularityCounts::default();
        assert!(matches!(popularity(&c, 1.5, 0.5), Err(Error::DomainError { what: "alpha", .. })));
        assert!(matches!(popularity(&c, 0.5, -0.1), Err(Error::DomainError { what: "beta", .. })));
        assert!(popularity(&c, f64::NAN, 0.5).is_err());
        assert!(PopularityParams::new(0.5, 0.5, 0, 0).is_err());
    }

    fn traj(checkins: Vec<CheckIn>) -> Trajectory {
        Trajectory { user: checkins[0].user, checkins }
    }

    #[test]
    fn single_poi_normalizes_to_half() {
        let train = vec![traj(vec![ci(0, 4, 0), ci(0, 4, 10)])];
        let t = popularity_table(&train, &PopularitySource::Recency(params(0.5, 0.5, 10))).unwrap();
        assert_eq!(t.normalized[&4], 0.5);
    }

    #[test]
    fn log_minmax_endpoints() {
        let scores = BTreeMap::from([(0, 0.0), (1, core::f64::consts::E - 1.0)]);
        let n = normalize_log_minmax(&scores);
        assert_eq!(n[&0], 0.0);
        assert!((n[&1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn four_poi_table_matches_recomputation() {
        // Reference day 200; window 90 days. Scores recomputed by hand:
        // poi 0: users {0,1} recent, 3 recent check-ins, nothing past.
        // poi 1: user 0 recent (1), user 2 past (2 check-ins).
        // poi 2: user 1 past (1).
        // poi 3: users {0,2} past, 3 past check-ins.
        let r = 200 * DAY;
        let train = vec![
            traj(vec![ci(0, 0, r - DAY), ci(0, 1, r - DAY + 60), ci(0, 0, r)]),
            traj(vec![ci(1, 0, r - 2 * DAY), ci(1, 2, r - 100 * DAY)]),
            traj(vec![ci(2, 1, r - 150 * DAY), ci(2, 1, r - 150 * DAY + 60), ci(2, 3, r - 150 * DAY + 120)]),
            traj(vec![ci(0, 3, r - 120 * DAY), ci(0, 3, r - 120 * DAY + 60)]),
        ];
        let (alpha, beta) = (0.33, 0.67);
        let t = popularity_table(&train, &PopularitySource::Recency(params(alpha, beta, r))).unwrap();
        let eq1 = |ur: f64, cr: f64, up: f64, cp: f64| {
            beta * (alpha * ur + (1.0 - alpha) * cr) + (1.0 - beta) * (alpha * up + (1.0 - alpha) * cp)
        };
        let raw = [eq1(2.0, 3.0, 0.0, 0.0), eq1(1.0, 1.0, 1.0, 2.0), eq1(0.0, 0.0, 1.0, 1.0), eq1(0.0, 0.0, 2.0, 3.0)];
        let logs: Vec<f64> = raw.iter().map(|v| (1.0f64 + v).ln()).collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for p in 0..4 {
            assert!((t.scores[&p] - raw[p]).abs() < 1e-12);
            assert!((t.normalized[&p] - (logs[p] - lo) / (hi - lo)).abs() < 1e-12);
        }
        for (p, c) in &t.counts {
            let total = train.iter().flat_map(|t| &t.checkins).filter(|c| c.poi == *p).count() as u64;
            assert_eq!(c.frequency(), total);
        }
    }

    #[test]
    fn checkin_count_source_uses_frequency() {
        let train = vec![traj(vec![ci(0, 0, 0), ci(0, 1, 10), ci(0, 0, 20)])];
        let t = popularity_table(&train, &PopularitySource::CheckinCount).unwrap();
        assert_eq!(t.scores[&0], 2.0);
        assert_eq!(t.scores[&1], 1.0);
        assert!(popularity_table(&[], &PopularitySource::CheckinCount).is_err());
    }
}
