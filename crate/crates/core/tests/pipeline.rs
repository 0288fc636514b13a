//! End-to-end runs through the public API only.

use poirec_core::ingest::{
    build_id_maps, filter_sparse, segment_trajectories, split_dataset, CheckInDataset, RawCheckInRecord,
};
use poirec_core::metrics::{evaluate, EvalUnit, ModelScorer, K_LIST};
use poirec_core::model::{GetNextModel, ModelConfig};
use poirec_core::pipeline::{prepare_graph, GraphOptions};
use poirec_core::popularity::{PopularityParams, PopularitySource, DEFAULT_RECENCY_WINDOW};
use poirec_core::synthetic::{markov_dataset, MarkovSpec};
use poirec_core::train::{train, TrainConfig};
use poirec_core::SECONDS_PER_DAY;
use proptest::prelude::*;

fn small_model(n_features: usize) -> ModelConfig {
    let mut c = ModelConfig::new(12, 4, 3, n_features).with_dims(4, 4);
    c.layers = 1;
    c.ffn_dim = 16;
    c.gcn_hidden = vec![8];
    c
}

#[test]
fn records_to_metrics() {
    let data = markov_dataset(&MarkovSpec { n_trajectories: 80, ..MarkovSpec::default() }).unwrap();
    let filtered = filter_sparse(&data.records, 10, 10).unwrap();
    let (maps, conflicts) = build_id_maps(&filtered).unwrap();
    assert!(conflicts.is_empty());
    let dataset = CheckInDataset::from_records(&filtered, maps).unwrap();
    let trajectories = segment_trajectories(&dataset, SECONDS_PER_DAY);
    // Trajectories are two days apart, so 24 h segmentation recovers them all.
    assert_eq!(trajectories.len(), 80);
    let split = split_dataset(&trajectories, 0.8, 0.1).unwrap();
    assert_eq!(split.train.len(), 64);

    let ids = &dataset.id_maps;
    let params = PopularityParams::anchored(0.5, 0.5, DEFAULT_RECENCY_WINDOW, &split.train).unwrap();
    let graph = prepare_graph(&split.train, ids, &PopularitySource::Recency(params), &GraphOptions::default()).unwrap();
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let run = || {
        let model = GetNextModel::new(small_model(graph.features.cols), cfg.seed).unwrap();
        train(model, &graph.inputs, &split, ids, &cfg, |_| {}).unwrap()
    };
    let a = run();
    assert_eq!(a.history.len(), 3);
    assert!(a.history.iter().all(|r| r.mean_loss.is_finite() && r.val_mrr.is_some()));
    let b = run();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);

    let scorer = ModelScorer::new(&a.model, &graph.inputs).unwrap();
    let all = evaluate(&scorer, &split.test, ids, &K_LIST, EvalUnit::AllPositions).unwrap();
    let last = evaluate(&scorer, &split.test, ids, &K_LIST, EvalUnit::TrajectoryLast).unwrap();
    assert_eq!(last.n_samples, split.test.len());
    assert!(all.n_samples > last.n_samples);
    for r in [&all, &last] {
        assert!(K_LIST.windows(2).all(|w| r.acc(w[0]) <= r.acc(w[1])));
        assert!(r.mrr >= r.acc(1) && r.mrr <= 1.0);
    }
}

#[test]
fn frequency_column_is_optional() {
    let data = markov_dataset(&MarkovSpec { n_trajectories: 30, ..MarkovSpec::default() }).unwrap();
    let src = PopularitySource::CheckinCount;
    let plain = prepare_graph(&data.trajectories, &data.id_maps, &src, &GraphOptions::default()).unwrap();
    let opts = GraphOptions { include_frequency: true, ..GraphOptions::default() };
    let with = prepare_graph(&data.trajectories, &data.id_maps, &src, &opts).unwrap();
    assert_eq!(with.features.cols, plain.features.cols + 1);
}

fn record(user: u8, poi: u8, hour: i64) -> RawCheckInRecord {
    RawCheckInRecord {
        user_id: format!("u{user}"),
        poi_id: format!("p{poi}"),
        category_id: format!("c{}", poi % 3),
        category_name: String::new(),
        lat: 40.0 + f64::from(poi) * 0.01,
        lon: -74.0,
        tz_offset_min: 0,
        timestamp: 1_333_411_200 + hour * 3600,
    }
}

proptest! {
    #[test]
    fn preprocessing_invariants(raw in proptest::collection::vec((0u8..6, 0u8..8, 0i64..2000), 1..300)) {
        let records: Vec<RawCheckInRecord> = raw.iter().map(|&(u, p, h)| record(u, p, h)).collect();
        let Ok(filtered) = filter_sparse(&records, 3, 3) else { return Ok(()) };
        let (maps, _) = build_id_maps(&filtered).unwrap();
        let dataset = CheckInDataset::from_records(&filtered, maps).unwrap();
        let trajectories = segment_trajectories(&dataset, SECONDS_PER_DAY);
        for t in &trajectories {
            prop_assert!(t.len() >= 2);
            prop_assert!(t.span() <= SECONDS_PER_DAY);
            prop_assert!(t.checkins.windows(2).all(|w| w[0].time <= w[1].time));
        }
        prop_assert!(trajectories.iter().map(|t| t.len()).sum::<usize>() <= dataset.n_checkins());
        if let Ok(split) = split_dataset(&trajectories, 0.8, 0.1) {
            let n = split.train.len() + split.validation.len() + split.test.len();
            prop_assert!(n <= trajectories.len());
            let train_end = split.train.iter().map(|t| t.start_time()).max().unwrap();
            for t in split.validation.iter().chain(&split.test) {
                prop_assert!(t.start_time() >= train_end);
                prop_assert!(split.train.iter().any(|s| s.user == t.user));
            }
        }
    }
}
