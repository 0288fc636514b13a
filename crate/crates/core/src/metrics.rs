//! Ranking metrics: Acc@k and mean reciprocal rank of the true next POI.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::ingest::{IdMaps, Trajectory};
use crate::model::{GetNextModel, GraphInputs, InferenceContext, Step};
use crate::{Error, Result};

/// Cut-offs reported for Acc@k.
pub const K_LIST: [usize; 4] = [1, 5, 10, 20];

/// 1-based rank of `target`. Every strictly higher score and every equal
/// score at a lower index ranks ahead of it.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<usize> {
    let t = *scores.get(target).ok_or(Error::IndexOutOfRange {
        index: target,
        len: scores.len(),
    })?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count();
    Ok(1 + ahead)
}

pub fn acc_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EvalUnit {
    /// Every supervised position of every trajectory is a sample.
    #[default]
    AllPositions,
    /// Only the final transition of each trajectory.
    TrajectoryLast,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricsReport {
    pub acc_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub n_samples: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[usize], k_list: &[usize]) -> Result<Self> {
        let acc_at = k_list
            .iter()
            .map(|&k| acc_at_k(ranks, k).map(|a| (k, a)))
            .collect::<Result<_>>()?;
        Ok(Self {
            acc_at,
            mrr: mrr(ranks)?,
            n_samples: ranks.len(),
            alpha: None,
            beta: None,
        })
    }

    pub fn acc(&self, k: usize) -> f64 {
        self.acc_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Anything that yields next-POI scores for every position of a sequence.
pub trait PositionScorer {
    /// One score row (length N) per input step.
    fn score_positions(&self, steps: &[Step]) -> Result<Vec<Vec<f64>>>;
}

/// A trained model with its graph context evaluated once.
pub struct ModelScorer<'a> {
    model: &'a GetNextModel,
    ctx: InferenceContext,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a GetNextModel, graph: &GraphInputs) -> Result<Self> {
        Ok(Self {
            model,
            ctx: model.inference_context(graph)?,
        })
    }
}

impl PositionScorer for ModelScorer<'_> {
    /// Sequences longer than the model window are scored with a sliding
    /// window ending at each position.
    fn score_positions(&self, steps: &[Step]) -> Result<Vec<Vec<f64>>> {
        let k = self.model.config().max_seq_len;
        if steps.len() <= k {
            return self.model.score_positions(&self.ctx, steps);
        }
        let mut rows = self.model.score_positions(&self.ctx, &steps[..k])?;
        for end in k + 1..=steps.len() {
            let mut window = self.model.score_positions(&self.ctx, &steps[end - k..end])?;
            rows.push(window.pop().expect("window is nonempty"));
        }
        Ok(rows)
    }
}

/// Ranks of the true next POI for every evaluated position.
pub fn collect_ranks<S: PositionScorer + ?Sized>(
    scorer: &S,
    trajectories: &[Trajectory],
    id_maps: &IdMaps,
    unit: EvalUnit,
) -> Result<Vec<usize>> {
    let mut ranks = Vec::new();
    for t in trajectories.iter().filter(|t| t.len() >= 2) {
        let inputs: Vec<Step> = t.checkins[..t.len() - 1]
            .iter()
            .map(|c| Step::from_checkin(c, id_maps))
            .collect();
        let scores = scorer.score_positions(&inputs)?;
        let positions = match unit {
            EvalUnit::AllPositions => 0..scores.len(),
            EvalUnit::TrajectoryLast => scores.len() - 1..scores.len(),
        };
        for i in positions {
            ranks.push(rank_of_target(&scores[i], t.checkins[i + 1].poi)?);
        }
    }
    Ok(ranks)
}

pub fn evaluate<S: PositionScorer + ?Sized>(
    scorer: &S,
    trajectories: &[Trajectory],
    id_maps: &IdMaps,
    k_list: &[usize],
    unit: EvalUnit,
) -> Result<MetricsReport> {
    let ranks = collect_ranks(scorer, trajectories, id_maps, unit)?;
    if ranks.is_empty() {
        return Err(Error::NoValidSamples);
    }
    MetricsReport::from_ranks(&ranks, k_list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{CheckIn, IdMap, PoiMeta};
    use alloc::string::String;
    use alloc::vec;
    use core::cell::RefCell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_cases() {
        assert_eq!(rank_of_target(&[0.1, 5.0, 0.3], 1).unwrap(), 1);
        assert_eq!(rank_of_target(&[1.0; 4], 2).unwrap(), 3);
        assert_eq!(rank_of_target(&[3.0, 1.0, 2.0], 2).unwrap(), 2);
        assert_eq!(rank_of_target(&[1.0], 1), Err(Error::IndexOutOfRange { index: 1, len: 1 }));
    }

    #[test]
    fn metric_cases() {
        assert_eq!(acc_at_k(&[1], 1).unwrap(), 1.0);
        assert_eq!(mrr(&[1]).unwrap(), 1.0);
        let r = [1, 2, 4];
        assert!((acc_at_k(&r, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((acc_at_k(&r, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((mrr(&r).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(acc_at_k(&[5, 5], 4).unwrap(), 0.0);
        assert_eq!(mrr(&[]), Err(Error::EmptyRanks));
        assert_eq!(acc_at_k(&[], 1), Err(Error::EmptyRanks));
    }

    fn maps(n_pois: usize) -> IdMaps {
        IdMaps {
            users: IdMap::from_ids(vec![String::from("u")]),
            pois: IdMap::from_ids((0..n_pois).map(|i| alloc::format!("p{i}")).collect()),
            categories: IdMap::from_ids(vec![String::from("c")]),
            category_names: vec![String::from("c")],
            poi_meta: vec![PoiMeta { category: 0, lat: 0.0, lon: 0.0 }; n_pois],
        }
    }

    fn traj(pois: &[usize]) -> Trajectory {
        Trajectory {
            user: 0,
            checkins: pois
                .iter()
                .enumerate()
                .map(|(i, &poi)| CheckIn { user: 0, poi, time: 60 * i as i64, tz_offset_min: 0 })
                .collect(),
        }
    }

    /// Puts all mass on the POI that truly follows.
    struct Oracle<'a>(&'a [usize]);

    impl PositionScorer for Oracle<'_> {
        fn score_positions(&self, steps: &[Step]) -> Result<Vec<Vec<f64>>> {
            Ok(steps
                .iter()
                .map(|s| {
                    let mut row = vec![0.0; self.0.len()];
                    row[self.0[s.poi]] = 1.0;
                    row
                })
                .collect())
        }
    }

    struct RandomScores(RefCell<ChaCha8Rng>, usize);

    impl PositionScorer for RandomScores {
        fn score_positions(&self, steps: &[Step]) -> Result<Vec<Vec<f64>>> {
            let mut rng = self.0.borrow_mut();
            Ok(steps.iter().map(|_| (0..self.1).map(|_| rng.gen::<f64>()).collect()).collect())
        }
    }

    #[test]
    fn perfect_scorer_scores_one() {
        let next = [1, 2, 3, 0];
        let ts = vec![traj(&[0, 1, 2, 3]), traj(&[3, 0])];
        let r = evaluate(&Oracle(&next), &ts, &maps(4), &K_LIST, EvalUnit::AllPositions).unwrap();
        assert_eq!(r.n_samples, 4);
        assert!(r.acc_at.values().all(|&a| a == 1.0));
        assert_eq!(r.mrr, 1.0);
        let last = evaluate(&Oracle(&next), &ts, &maps(4), &K_LIST, EvalUnit::TrajectoryLast).unwrap();
        assert_eq!(last.n_samples, 2);
        assert_eq!(
            evaluate(&Oracle(&next), &[], &maps(4), &K_LIST, EvalUnit::AllPositions),
            Err(Error::NoValidSamples)
        );
    }

    #[test]
    fn random_scores_hit_k_over_n() {
        let n = 50;
        let scorer = RandomScores(RefCell::new(ChaCha8Rng::seed_from_u64(11)), n);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ts: Vec<Trajectory> = (0..400)
            .map(|_| traj(&(0..6).map(|_| rng.gen_range(0..n)).collect::<Vec<_>>()))
            .collect();
        let r = evaluate(&scorer, &ts, &maps(n), &K_LIST, EvalUnit::AllPositions).unwrap();
        let m = r.n_samples as f64;
        assert_eq!(r.n_samples, 2000);
        for &k in &K_LIST {
            let p = k as f64 / n as f64;
            let sigma = libm::sqrt(p * (1.0 - p) / m);
            assert!((r.acc(k) - p).abs() <= 3.0 * sigma, "k={k} acc={} p={p}", r.acc(k));
        }
    }

    /// Independent re-ranking: sort indices by (score desc, index asc).
    fn brute_rank(scores: &[f64], target: usize) -> usize {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        idx.iter().position(|&i| i == target).unwrap() + 1
    }

    #[test]
    fn fixture_matches_brute_force() {
        let scorer = RandomScores(RefCell::new(ChaCha8Rng::seed_from_u64(3)), 5);
        let replay = RandomScores(RefCell::new(ChaCha8Rng::seed_from_u64(3)), 5);
        let ts = vec![traj(&[0, 1, 2]), traj(&[4, 4, 3, 0]), traj(&[2, 1])];
        let r = evaluate(&scorer, &ts, &maps(5), &[1, 2, 3], EvalUnit::AllPositions).unwrap();
        let mut ranks = Vec::new();
        for t in &ts {
            let steps: Vec<Step> = t.checkins[..t.len() - 1].iter().map(|c| Step::from_checkin(c, &maps(5))).collect();
            let rows = replay.score_positions(&steps).unwrap();
            for (i, row) in rows.iter().enumerate() {
                // Quantize to force ties.
                let _ = row;
                ranks.push(brute_rank(row, t.checkins[i + 1].poi));
            }
        }
        assert_eq!(r.n_samples, ranks.len());
        for k in 1..=3 {
            let expected = ranks.iter().filter(|&&x| x <= k).count() as f64 / ranks.len() as f64;
            assert!((r.acc(k) - expected).abs() < 1e-12);
        }
        let expected_mrr = ranks.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / ranks.len() as f64;
        assert!((r.mrr - expected_mrr).abs() < 1e-12);
    }

    #[test]
    fn ties_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let scores: Vec<f64> = (0..8).map(|_| f64::from(rng.gen_range(0..3u8))).collect();
            let t = rng.gen_range(0..8);
            assert_eq!(rank_of_target(&scores, t).unwrap(), brute_rank(&scores, t));
        }
    }
}
