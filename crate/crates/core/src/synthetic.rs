//! Seeded synthetic check-in data with deterministic POI transitions, used
//! for sanity training runs and sweeps.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{build_id_maps, CheckIn, IdMaps, RawCheckInRecord, Trajectory};
use crate::{Result, SECONDS_PER_DAY};

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSpec {
    pub n_pois: usize,
    pub n_users: usize,
    pub n_categories: usize,
    pub n_trajectories: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Unix seconds of the first trajectory.
    pub start_time: i64,
    pub seed: u64,
}

impl Default for MarkovSpec {
    fn default() -> Self {
        Self {
            n_pois: 12,
            n_users: 4,
            n_categories: 3,
            n_trajectories: 300,
            min_len: 3,
            max_len: 8,
            // 2012-04-03T00:00:00Z
            start_time: 1_333_411_200,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// `next[p]` is the POI always visited after `p`.
    pub next: Vec<usize>,
    pub records: Vec<RawCheckInRecord>,
    pub id_maps: IdMaps,
    pub trajectories: Vec<Trajectory>,
}

/// Trajectories that follow a fixed random cycle over the POIs.
///
/// Trajectory `j` starts two days after trajectory `j - 1` (plus up to six
/// hours) with hourly check-ins, so 24 hour segmentation recovers exactly the
/// generated trajectories.
pub fn markov_dataset(spec: &MarkovSpec) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cycle: Vec<usize> = (0..spec.n_pois).collect();
    cycle.shuffle(&mut rng);
    let mut next = alloc::vec![0; spec.n_pois];
    for i in 0..spec.n_pois {
        next[cycle[i]] = cycle[(i + 1) % spec.n_pois];
    }
    let coords: Vec<(f64, f64)> = (0..spec.n_pois)
        .map(|_| (rng.gen_range(40.55..40.95), rng.gen_range(-74.25..-73.70)))
        .collect();

    let mut records = Vec::new();
    for j in 0..spec.n_trajectories {
        let user = rng.gen_range(0..spec.n_users);
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let start = spec.start_time + 2 * SECONDS_PER_DAY * j as i64 + rng.gen_range(0..6 * 3600);
        let mut poi = rng.gen_range(0..spec.n_pois);
        for i in 0..len {
            let cat = poi % spec.n_categories;
            records.push(RawCheckInRecord {
                user_id: format!("user{user}"),
                poi_id: format!("poi{poi}"),
                category_id: format!("cat{cat}"),
                category_name: format!("Category {cat}"),
                lat: coords[poi].0,
                lon: coords[poi].1,
                tz_offset_min: -240,
                timestamp: start + 3600 * i as i64,
            });
            poi = next[poi];
        }
    }
    let (id_maps, _) = build_id_maps(&records)?;
    // Re-express the cycle in dense POI indices.
    let dense = |raw: usize| id_maps.pois.get(&format!("poi{raw}"));
    let mut dense_next = alloc::vec![0; id_maps.n_pois()];
    for (raw, &after) in next.iter().enumerate() {
        if let (Some(a), Some(b)) = (dense(raw), dense(after)) {
            dense_next[a] = b;
        }
    }

    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut current: Vec<CheckIn> = Vec::new();
    for r in &records {
        let c = CheckIn {
            user: id_maps.users.get(&r.user_id).expect("interned"),
            poi: id_maps.pois.get(&r.poi_id).expect("interned"),
            time: r.timestamp,
            tz_offset_min: r.tz_offset_min,
        };
        if current.last().is_some_and(|p| c.time - p.time > 3600 || c.user != p.user) {
            let checkins = core::mem::take(&mut current);
            trajectories.push(Trajectory { user: checkins[0].user, checkins });
        }
        current.push(c);
    }
    if !current.is_empty() {
        trajectories.push(Trajectory { user: current[0].user, checkins: current });
    }
    Ok(SyntheticData {
        next: dense_next,
        records,
        id_maps,
        trajectories,
    })
}
