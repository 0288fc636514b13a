//! Builds the constant graph inputs of a run from a train split.

use crate::flowmap::{build_flow_map, feature_matrix, normalized_adjacency, FeatureMatrix, FlowMap, NormalizedAdjacency};
use crate::ingest::{IdMaps, Trajectory};
use crate::model::GraphInputs;
use crate::popularity::{popularity_table, PopularitySource, PopularityTable};
use crate::Result;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GraphOptions {
    /// Self-loop weight added before normalizing the adjacency.
    pub self_loop_weight: f64,
    /// Keep the plain check-in frequency as an extra feature column.
    pub include_frequency: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            self_loop_weight: 1.0,
            include_frequency: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    pub popularity: PopularityTable,
    pub flow_map: FlowMap,
    pub features: FeatureMatrix,
    pub adjacency: NormalizedAdjacency,
    pub inputs: GraphInputs,
}

pub fn prepare_graph(
    train: &[Trajectory],
    id_maps: &IdMaps,
    source: &PopularitySource,
    options: &GraphOptions,
) -> Result<PreparedGraph> {
    let popularity = popularity_table(train, source)?;
    let flow_map = build_flow_map(train, id_maps, &popularity)?;
    let frequency = if options.include_frequency {
        Some(popularity_table(train, &PopularitySource::CheckinCount)?)
    } else {
        None
    };
    let features = feature_matrix(&flow_map, id_maps.n_categories(), frequency.as_ref())?;
    let adjacency = normalized_adjacency(&flow_map, options.self_loop_weight)?;
    let inputs = GraphInputs::new(&features, &adjacency, &flow_map)?;
    Ok(PreparedGraph {
        popularity,
        flow_map,
        features,
        adjacency,
        inputs,
    })
}
