//! The trajectory flow map: a weighted directed graph over POIs whose edge
//! weights count consecutive visits in train trajectories, together with the
//! node feature matrix and the symmetrically normalized adjacency consumed by
//! the graph convolution.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::ingest::{IdMaps, Trajectory};
use crate::popularity::PopularityTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NodeAttrs {
    /// Normalized popularity in `[0, 1]`; 0 for POIs never seen in train.
    pub popularity: f64,
    pub category: usize,
    pub lat: f64,
    pub lon: f64,
    /// Whether the POI occurs in the train split.
    pub in_train: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FlowMap {
    pub n_nodes: usize,
    pub edges: BTreeMap<(usize, usize), u64>,
    pub node_attrs: Vec<NodeAttrs>,
}

impl FlowMap {
    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.range((node, 0)..(node + 1, 0)).count()
    }

    /// Dense boolean mask, row-major `n_nodes x n_nodes`, true on edges.
    pub fn edge_mask(&self) -> Vec<bool> {
        let n = self.n_nodes;
        let mut mask = vec![false; n * n];
        for &(s, d) in self.edges.keys() {
            mask[s * n + d] = true;
        }
        mask
    }
}

/// Counts every consecutive POI pair of every train trajectory. The node set
/// covers all POIs of `id_maps` so node indices equal POI indices.
pub fn build_flow_map(train: &[Trajectory], id_maps: &IdMaps, pop: &PopularityTable) -> Result<FlowMap> {
    if train.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let n = id_maps.n_pois();
    let mut edges = BTreeMap::new();
    for t in train {
        for w in t.checkins.windows(2) {
            if w[0].poi >= n || w[1].poi >= n {
                return Err(Error::IndexOutOfRange {
                    index: w[0].poi.max(w[1].poi),
                    len: n,
                });
            }
            *edges.entry((w[0].poi, w[1].poi)).or_insert(0) += 1;
        }
    }
    let node_attrs = id_maps
        .poi_meta
        .iter()
        .enumerate()
        .map(|(p, meta)| NodeAttrs {
            popularity: pop.normalized_or_zero(p),
            category: meta.category,
            lat: meta.lat,
            lon: meta.lon,
            in_train: pop.normalized.contains_key(&p),
        })
        .collect();
    Ok(FlowMap {
        n_nodes: n,
        edges,
        node_attrs,
    })
}

/// Node features, row-major `rows x cols`.
///
/// Column layout: popularity, normalized latitude, normalized longitude,
/// optionally normalized check-in frequency, then a one-hot category block.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// First column of the one-hot category block.
    pub category_offset: usize,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Builds node features. When `frequency` is given (the normalized raw
/// check-in frequency per POI) it is kept as an extra column next to the
/// popularity score.
pub fn feature_matrix(
    fm: &FlowMap,
    n_categories: usize,
    frequency: Option<&PopularityTable>,
) -> Result<FeatureMatrix> {
    let extra = usize::from(frequency.is_some());
    let offset = 3 + extra;
    let cols = offset + n_categories;
    let train_nodes = || fm.node_attrs.iter().filter(|a| a.in_train);
    let (lat_lo, lat_hi) = bounds(train_nodes().map(|a| a.lat));
    let (lon_lo, lon_hi) = bounds(train_nodes().map(|a| a.lon));

    let mut values = vec![0.0; fm.n_nodes * cols];
    for (i, a) in fm.node_attrs.iter().enumerate() {
        if a.category >= n_categories {
            return Err(Error::IndexOutOfRange {
                index: a.category,
                len: n_categories,
            });
        }
        let row = &mut values[i * cols..(i + 1) * cols];
        row[0] = a.popularity;
        row[1] = minmax(a.lat, lat_lo, lat_hi);
        row[2] = minmax(a.lon, lon_lo, lon_hi);
        if let Some(freq) = frequency {
            row[3] = freq.normalized_or_zero(i);
        }
        row[offset + a.category] = 1.0;
    }
    Ok(FeatureMatrix {
        rows: fm.n_nodes,
        cols,
        values,
        category_offset: offset,
    })
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn minmax(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

/// Symmetric normalized adjacency, row-major `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub n: usize,
    pub values: Vec<f64>,
}

/// `D^-1/2 (A + A^T + lambda I) D^-1/2` with `D` the row sums of the bracket.
pub fn normalized_adjacency(fm: &FlowMap, self_loop_weight: f64) -> Result<NormalizedAdjacency> {
    let n = fm.n_nodes;
    if n == 0 {
        return Err(Error::EmptyInput("flow map nodes"));
    }
    let mut a = vec![0.0; n * n];
    for (&(s, d), &w) in &fm.edges {
        a[s * n + d] += w as f64;
        a[d * n + s] += w as f64;
    }
    for i in 0..n {
        a[i * n + i] += self_loop_weight;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a[i * n..(i + 1) * n].iter().sum();
            if deg > 0.0 {
                1.0 / libm::sqrt(deg)
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(NormalizedAdjacency { n, values: a })
}
