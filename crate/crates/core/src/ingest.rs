//! Check-in records, sparsity filtering, trajectory segmentation and the
//! chronological train/validation/test split.
//!
//! Text parsing of raw logs is done by the `poirec` crate; everything here
//! operates on already-decoded records and is pure.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SECONDS_PER_DAY};

/// Maximum coordinate disagreement (degrees) tolerated between two records
/// of the same POI before a conflict is reported.
pub const META_TOLERANCE_DEG: f64 = 1e-4;

/// One decoded line of a raw check-in log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RawCheckInRecord {
    pub user_id: String,
    pub poi_id: String,
    pub category_id: String,
    pub category_name: String,
    pub lat: f64,
    pub lon: f64,
    /// Offset of the venue's local time from UTC, in minutes.
    pub tz_offset_min: i32,
    /// Unix seconds, UTC.
    pub timestamp: i64,
}

/// A visit of user `user` to POI `poi` at `time` (unix seconds, UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CheckIn {
    pub user: usize,
    pub poi: usize,
    pub time: i64,
    pub tz_offset_min: i32,
}

impl CheckIn {
    /// Local time of day as a fraction in `[0, 1)`.
    pub fn time_of_day(&self) -> f64 {
        let local = self.time + i64::from(self.tz_offset_min) * 60;
        local.rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64
    }
}

/// A user's check-ins within one window, in time order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Trajectory {
    pub user: usize,
    pub checkins: Vec<CheckIn>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }

    pub fn start_time(&self) -> i64 {
        self.checkins.first().map_or(i64::MIN, |c| c.time)
    }

    pub fn span(&self) -> i64 {
        match (self.checkins.first(), self.checkins.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0,
        }
    }

    pub fn pois(&self) -> impl Iterator<Item = usize> + '_ {
        self.checkins.iter().map(|c| c.poi)
    }
}

/// Dense index assignment for one kind of raw identifier.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "Vec<String>", into = "Vec<String>"))]
pub struct IdMap {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for IdMap {
    fn from(ids: Vec<String>) -> Self {
        Self::from_ids(ids)
    }
}

impl From<IdMap> for Vec<String> {
    fn from(map: IdMap) -> Self {
        map.ids
    }
}

impl IdMap {
    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    /// Returns the index of `raw`, assigning the next free one if unseen.
    pub fn intern(&mut self, raw: &str) -> (usize, bool) {
        if let Some(&i) = self.index.get(raw) {
            return (i, false);
        }
        let i = self.ids.len();
        self.ids.push(raw.into());
        self.index.insert(raw.into(), i);
        (i, true)
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PoiMeta {
    pub category: usize,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct IdMaps {
    pub users: IdMap,
    pub pois: IdMap,
    pub categories: IdMap,
    pub category_names: Vec<String>,
    pub poi_meta: Vec<PoiMeta>,
}

impl IdMaps {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_of(&self, poi: usize) -> usize {
        self.poi_meta[poi].category
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConflictKind {
    Coordinates { first: (f64, f64), other: (f64, f64) },
    Category { first: String, other: String },
}

/// A POI seen with disagreeing metadata; the first occurrence is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConflict {
    pub poi_id: String,
    pub kind: ConflictKind,
}

/// Per-user time-sorted check-in sequences plus the id maps they index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CheckInDataset {
    pub sequences: Vec<Vec<CheckIn>>,
    pub id_maps: IdMaps,
}

impl CheckInDataset {
    /// Maps `records` through `id_maps` and sorts each user's sequence by
    /// time (stable, so equal timestamps keep file order).
    pub fn from_records(records: &[RawCheckInRecord], id_maps: IdMaps) -> Result<Self> {
        let mut sequences = alloc::vec![Vec::new(); id_maps.n_users()];
        for r in records {
            let user = id_maps
                .users
                .get(&r.user_id)
                .ok_or(Error::InvalidConfig(alloc::format!("user {} not in id maps", r.user_id)))?;
            let poi = id_maps
                .pois
                .get(&r.poi_id)
                .ok_or(Error::InvalidConfig(alloc::format!("POI {} not in id maps", r.poi_id)))?;
            sequences[user].push(CheckIn {
                user,
                poi,
                time: r.timestamp,
                tz_offset_min: r.tz_offset_min,
            });
        }
        for seq in &mut sequences {
            seq.sort_by_key(|c| c.time);
        }
        Ok(Self { sequences, id_maps })
    }

    pub fn n_checkins(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SplitDataset {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl SplitDataset {
    /// All train check-ins, trajectory by trajectory.
    pub fn train_checkins(&self) -> impl Iterator<Item = &CheckIn> + '_ {
        self.train.iter().flat_map(|t| t.checkins.iter())
    }
}

/// Drops POIs with fewer than `min_poi_checkins` records, then users with
/// fewer than `min_user_checkins` of the remaining records. Each filter runs
/// once; record order is preserved.
pub fn filter_sparse(
    records: &[RawCheckInRecord],
    min_user_checkins: usize,
    min_poi_checkins: usize,
) -> Result<Vec<RawCheckInRecord>> {
    if min_user_checkins == 0 || min_poi_checkins == 0 {
        return Err(Error::InvalidConfig("filter thresholds must be >= 1".into()));
    }
    let mut poi_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *poi_counts.entry(&r.poi_id).or_default() += 1;
    }
    let poi_kept: Vec<&RawCheckInRecord> = records
        .iter()
        .filter(|r| poi_counts[r.poi_id.as_str()] >= min_poi_checkins)
        .collect();

    let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &poi_kept {
        *user_counts.entry(&r.user_id).or_default() += 1;
    }
    let kept: Vec<RawCheckInRecord> = poi_kept
        .into_iter()
        .filter(|r| user_counts[r.user_id.as_str()] >= min_user_checkins)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(kept)
}

/// Assigns dense indices in order of first appearance. Metadata for a POI
/// comes from its first record; later disagreements are returned as
/// conflicts rather than errors.
pub fn build_id_maps(records: &[RawCheckInRecord]) -> Result<(IdMaps, Vec<MetaConflict>)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let mut maps = IdMaps::default();
    let mut conflicts = Vec::new();
    let mut reported: BTreeSet<usize> = BTreeSet::new();
    for r in records {
        maps.users.intern(&r.user_id);
        let (category, new_cat) = maps.categories.intern(&r.category_id);
        if new_cat {
            maps.category_names.push(r.category_name.clone());
        }
        let (poi, new_poi) = maps.pois.intern(&r.poi_id);
        if new_poi {
            maps.poi_meta.push(PoiMeta {
                category,
                lat: r.lat,
                lon: r.lon,
            });
            continue;
        }
        let meta = maps.poi_meta[poi];
        let kind = if meta.category != category {
            Some(ConflictKind::Category {
                first: maps.categories.raw(meta.category).unwrap_or_default().into(),
                other: r.category_id.clone(),
            })
        } else if (meta.lat - r.lat).abs() > META_TOLERANCE_DEG
            || (meta.lon - r.lon).abs() > META_TOLERANCE_DEG
        {
            Some(ConflictKind::Coordinates {
                first: (meta.lat, meta.lon),
                other: (r.lat, r.lon),
            })
        } else {
            None
        };
        if let Some(kind) = kind {
            if reported.insert(poi) {
                conflicts.push(MetaConflict {
                    poi_id: r.poi_id.clone(),
                    kind,
                });
            }
        }
    }
    Ok((maps, conflicts))
}

/// Greedy cut of one time-sorted sequence: a check-in more than `window`
/// seconds after the current segment's first check-in opens a new segment.
/// Returns every segment, singletons included.
pub fn segment_sequence(seq: &[CheckIn], window: i64) -> Vec<Vec<CheckIn>> {
    let mut out: Vec<Vec<CheckIn>> = Vec::new();
    let mut current: Vec<CheckIn> = Vec::new();
    for &c in seq {
        if let Some(first) = current.first() {
            if c.time - first.time > window {
                out.push(core::mem::take(&mut current));
            }
        }
        current.push(c);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Segments every user's sequence and drops single check-in segments.
/// Output is ordered by user, then time.
pub fn segment_trajectories(dataset: &CheckInDataset, window: i64) -> Vec<Trajectory> {
    dataset
        .sequences
        .iter()
        .enumerate()
        .flat_map(|(user, seq)| {
            segment_sequence(seq, window)
                .into_iter()
                .filter(|s| s.len() >= 2)
                .map(move |checkins| Trajectory { user, checkins })
        })
        .collect()
}

/// Chronological split by trajectory start time.
///
/// The first `floor(train_frac * n)` trajectories go to train, the next
/// `floor(val_frac * n)` to validation and the rest to test. Validation and
/// test trajectories mentioning a user or POI absent from train are dropped.
pub fn split_dataset(
    trajectories: &[Trajectory],
    train_frac: f64,
    val_frac: f64,
) -> Result<SplitDataset> {
    let test_frac = 1.0 - train_frac - val_frac;
    if !(train_frac > 0.0 && val_frac > 0.0 && test_frac > -1e-12) {
        return Err(Error::InvalidConfig(alloc::format!(
            "split fractions must be positive and sum to 1 (got {train_frac}, {val_frac})"
        )));
    }
    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by_key(|t| t.start_time());

    let n = order.len();
    let n_train = libm::floor(train_frac * n as f64 + 1e-9) as usize;
    let n_val = libm::floor(val_frac * n as f64 + 1e-9) as usize;
    if n_train == 0 {
        return Err(Error::EmptyTrain);
    }
    let n_val = n_val.min(n - n_train);

    let train: Vec<Trajectory> = order[..n_train].iter().map(|&t| t.clone()).collect();
    let users: BTreeSet<usize> = train.iter().map(|t| t.user).collect();
    let pois: BTreeSet<usize> = train.iter().flat_map(Trajectory::pois).collect();
    let visible = |t: &&&Trajectory| users.contains(&t.user) && t.pois().all(|p| pois.contains(&p));

    let validation = order[n_train..n_train + n_val]
        .iter()
        .filter(visible)
        .map(|&t| t.clone())
        .collect();
    let test = order[n_train + n_val..]
        .iter()
        .filter(visible)
        .map(|&t| t.clone())
        .collect();
    Ok(SplitDataset {
        train,
        validation,
        test,
    })
}

/// Dataset statistics in the layout of the usual dataset summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DatasetStats {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub checkins: usize,
    pub trajectories: usize,
}

impl DatasetStats {
    pub fn new(dataset: &CheckInDataset, trajectories: &[Trajectory]) -> Self {
        Self {
            users: dataset.id_maps.n_users(),
            pois: dataset.id_maps.n_pois(),
            categories: dataset.id_maps.n_categories(),
            checkins: dataset.n_checkins(),
            trajectories: trajectories.len(),
        }
    }
}

impl core::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "users={} pois={} categories={} checkins={} trajectories={}",
            self.users, self.pois, self.categories, self.checkins, self.trajectories
        )
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn segmentation_partitions_and_bounds(mut gaps in proptest::collection::vec(0i64..40 * 3600, 0..40)) {
            let mut t = 0;
            let seq: Vec<CheckIn> = gaps.iter_mut().map(|g| { t += *g; CheckIn { user: 0, poi: 0, time: t, tz_offset_min: 0 } }).collect();
            let segments = segment_sequence(&seq, SECONDS_PER_DAY);
            let rebuilt: Vec<CheckIn> = segments.iter().flatten().copied().collect();
            prop_assert_eq!(&rebuilt, &seq);
            for s in &segments {
                prop_assert!(s.last().unwrap().time - s[0].time <= SECONDS_PER_DAY);
            }
            let kept = segment_trajectories(&CheckInDataset { sequences: vec![seq], id_maps: IdMaps::default() }, SECONDS_PER_DAY);
            prop_assert!(kept.iter().all(|t| t.len() >= 2 && t.span() <= SECONDS_PER_DAY));
        }

        #[test]
        fn filter_staged_soundness(entries in proptest::collection::vec((0u8..6, 0u8..6), 1..200)) {
            let records: Vec<RawCheckInRecord> = entries.iter().enumerate().map(|(i, (u, p))| RawCheckInRecord {
                user_id: alloc::format!("u{u}"), poi_id: alloc::format!("p{p}"), category_id: "c".into(),
                category_name: "c".into(), lat: 0.0, lon: 0.0, tz_offset_min: 0, timestamp: i as i64,
            }).collect();
            if let Ok(kept) = filter_sparse(&records, 10, 10) {
                let mut before: BTreeMap<&str, usize> = BTreeMap::new();
                for r in &records { *before.entry(r.poi_id.as_str()).or_default() += 1; }
                let mut users: BTreeMap<&str, usize> = BTreeMap::new();
                for r in &kept { *users.entry(r.user_id.as_str()).or_default() += 1; }
                prop_assert!(users.values().all(|&c| c >= 10));
                prop_assert!(kept.iter().all(|r| before[r.poi_id.as_str()] >= 10));
            }
        }

        #[test]
        fn split_exclusion_holds(spec in proptest::collection::vec((0usize..5, proptest::collection::vec(0usize..8, 2..6)), 1..60)) {
            let ts: Vec<Trajectory> = spec.iter().enumerate().map(|(i, (u, pois))| Trajectory {
                user: *u,
                checkins: pois.iter().map(|&poi| CheckIn { user: *u, poi, time: i as i64 * 100, tz_offset_min: 0 }).collect(),
            }).collect();
            if let Ok(s) = split_dataset(&ts, 0.8, 0.1) {
                let users: BTreeSet<usize> = s.train.iter().map(|t| t.user).collect();
                let pois: BTreeSet<usize> = s.train.iter().flat_map(Trajectory::pois).collect();
                for t in s.validation.iter().chain(&s.test) {
                    prop_assert!(users.contains(&t.user));
                    prop_assert!(t.pois().all(|p| pois.contains(&p)));
                }
                prop_assert_eq!(s, split_dataset(&ts, 0.8, 0.1).unwrap());
            }
        }
    }
}
