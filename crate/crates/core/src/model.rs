//! The graph-enhanced transformer for next-POI prediction.
//!
//! POI embeddings come from a graph convolution over the flow map. Each
//! check-in is embedded as the concatenation of a fused POI-user block and a
//! fused time-category block; a causal transformer encoder runs over the
//! trajectory and three affine heads predict the next POI, its time and its
//! category. The POI logits receive the transition attention row of the
//! current POI as a residual.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::flowmap::{FeatureMatrix, FlowMap, NormalizedAdjacency};
use crate::ingest::{CheckIn, IdMaps};
use crate::nn::{init, Axis, EmptyRow, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result, SECONDS_PER_DAY};

/// Weight of the time loss in the combined objective.
pub const TIME_LOSS_FACTOR: f64 = 10.0;

/// What the time head is trained to predict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TimeTarget {
    /// Local time of day of the next check-in, as a fraction of a day.
    #[default]
    TimeOfDay,
    /// Gap to the next check-in, as a fraction of a day.
    Interval,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelConfig {
    /// Width of user and POI embeddings.
    pub user_dim: usize,
    /// Width of time and category embeddings.
    pub timecat_dim: usize,
    /// Encoder width, always `2 * user_dim + 2 * timecat_dim`.
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub gcn_hidden: Vec<usize>,
    pub n_pois: usize,
    pub n_users: usize,
    pub n_categories: usize,
    pub n_features: usize,
    pub max_seq_len: usize,
    /// Negative slope of the fusion, graph and attention-map activations.
    pub leaky_slope: f64,
    /// Drop the `1 / sqrt(d / h)` factor on attention scores.
    pub unscaled_attention: bool,
    pub time_target: TimeTarget,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// A config with the default hyperparameters for the given vocabulary.
    pub fn new(n_pois: usize, n_users: usize, n_categories: usize, n_features: usize) -> Self {
        Self {
            user_dim: 16,
            timecat_dim: 8,
            model_dim: 48,
            heads: 2,
            layers: 2,
            ffn_dim: 96,
            gcn_hidden: vec![32],
            n_pois,
            n_users,
            n_categories,
            n_features,
            max_seq_len: 32,
            leaky_slope: 0.2,
            unscaled_attention: false,
            time_target: TimeTarget::TimeOfDay,
            dropout: 0.0,
            layer_norm_eps: 1e-5,
        }
    }

    /// Sets the embedding widths and derives `model_dim`.
    pub fn with_dims(mut self, user_dim: usize, timecat_dim: usize) -> Self {
        self.user_dim = user_dim;
        self.timecat_dim = timecat_dim;
        self.model_dim = 2 * user_dim + 2 * timecat_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let dims = [
            ("user_dim", self.user_dim),
            ("timecat_dim", self.timecat_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("ffn_dim", self.ffn_dim),
            ("n_pois", self.n_pois),
            ("n_users", self.n_users),
            ("n_categories", self.n_categories),
            ("n_features", self.n_features),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be >= 1"));
        }
        if self.model_dim != 2 * self.user_dim + 2 * self.timecat_dim {
            return bad(format!(
                "model_dim {} must equal 2 * user_dim + 2 * timecat_dim = {}",
                self.model_dim,
                2 * self.user_dim + 2 * self.timecat_dim
            ));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        }
        if self.gcn_hidden.contains(&0) {
            return bad("gcn_hidden widths must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// The model-side view of one check-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub poi: usize,
    pub user: usize,
    pub category: usize,
    /// Local time of day in `[0, 1)`.
    pub time: f64,
}

impl Step {
    pub fn from_checkin(c: &CheckIn, id_maps: &IdMaps) -> Self {
        Self {
            poi: c.poi,
            user: c.user,
            category: id_maps.category_of(c.poi),
            time: c.time_of_day(),
        }
    }
}

/// Supervision for one position: the next check-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub poi: usize,
    pub category: usize,
    pub time: f64,
}

impl Target {
    pub fn next(current: &CheckIn, next: &CheckIn, id_maps: &IdMaps, time_target: TimeTarget) -> Self {
        let time = match time_target {
            TimeTarget::TimeOfDay => next.time_of_day(),
            TimeTarget::Interval => (next.time - current.time) as f64 / SECONDS_PER_DAY as f64,
        };
        Self {
            poi: next.poi,
            category: id_maps.category_of(next.poi),
            time,
        }
    }
}

/// Row-stochastic transition probabilities, row-major `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionAttentionMap {
    pub n: usize,
    pub values: Vec<f64>,
}

impl TransitionAttentionMap {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Constant graph inputs shared by every forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub features: Tensor,
    pub adjacency: Tensor,
    pub edge_mask: Vec<bool>,
}

impl GraphInputs {
    pub fn new(features: &FeatureMatrix, adjacency: &NormalizedAdjacency, flow_map: &FlowMap) -> Result<Self> {
        if features.rows != adjacency.n || adjacency.n != flow_map.n_nodes {
            return Err(Error::ShapeMismatch {
                op: "graph_inputs",
                left: vec![features.rows, adjacency.n],
                right: vec![flow_map.n_nodes],
            });
        }
        Ok(Self {
            features: Tensor::matrix(features.rows, features.cols, features.values.clone())?,
            adjacency: Tensor::matrix(adjacency.n, adjacency.n, adjacency.values.clone())?,
            edge_mask: flow_map.edge_mask(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayerParams {
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w_1: ParamId,
    b_1: ParamId,
    w_2: ParamId,
    b_2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct ModelParams {
    user_table: ParamId,
    category_table: ParamId,
    t2v_freq: ParamId,
    t2v_phase: ParamId,
    gcn: Vec<ParamId>,
    w_pu: ParamId,
    b_pu: ParamId,
    w_ct: ParamId,
    b_ct: ParamId,
    encoder: Vec<EncoderLayerParams>,
    w_poi: ParamId,
    b_poi: ParamId,
    w_time: ParamId,
    b_time: ParamId,
    w_cat: ParamId,
    b_cat: ParamId,
    attn_src: ParamId,
    attn_dst: ParamId,
}

/// Outputs of one sequence: final POI logits `k x N`, time `k x 1`,
/// category logits `k x C`.
#[derive(Debug, Clone, Copy)]
pub struct SequenceOutput {
    pub poi_logits: Var,
    pub time: Var,
    pub category_logits: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub poi: Var,
    pub time: Var,
    pub category: Var,
}

/// POI embeddings and transition map as tape nodes for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct GraphContext {
    pub poi_embeddings: Var,
    pub transition: Var,
}

/// A padded batch of supervised sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `batch x width` inputs; padded slots repeat the last real step.
    pub inputs: Vec<Vec<Step>>,
    pub targets: Vec<Vec<Target>>,
    /// True on real (supervised) positions.
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn n_supervised(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GetNextModel {
    config: ModelConfig,
    store: ParamStore,
    params: ModelParams,
}

impl GetNextModel {
    /// Fresh parameters drawn from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (omega, psi, d) = (c.user_dim, c.timecat_dim, c.model_dim);

        let mut matrix = |store: &mut ParamStore, name: &str, rows: usize, cols: usize| {
            store.add(name, init::fan_in_uniform(&mut rng, &[rows, cols]))
        };
        let gcn_widths: Vec<usize> = core::iter::once(c.n_features)
            .chain(c.gcn_hidden.iter().copied())
            .chain(core::iter::once(omega))
            .collect();
        let gcn = gcn_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| matrix(&mut store, &format!("gcn.{i}.weight"), w[0], w[1]))
            .collect();
        let w_pu = matrix(&mut store, "fuse_poi_user.weight", 2 * omega, 2 * omega);
        let w_ct = matrix(&mut store, "fuse_time_category.weight", 2 * psi, 2 * psi);
        let attn_src = matrix(&mut store, "transition.src", c.n_features, 1);
        let attn_dst = matrix(&mut store, "transition.dst", c.n_features, 1);
        let encoder = (0..c.layers)
            .map(|l| EncoderLayerParams {
                w_q: matrix(&mut store, &format!("encoder.{l}.w_q"), d, d),
                w_k: matrix(&mut store, &format!("encoder.{l}.w_k"), d, d),
                w_v: matrix(&mut store, &format!("encoder.{l}.w_v"), d, d),
                w_o: matrix(&mut store, &format!("encoder.{l}.w_o"), d, d),
                ln1_gain: store.add(format!("encoder.{l}.ln1.gain"), Tensor::filled(&[d], 1.0)),
                ln1_bias: store.add(format!("encoder.{l}.ln1.bias"), Tensor::zeros(&[d])),
                w_1: matrix(&mut store, &format!("encoder.{l}.w_1"), d, c.ffn_dim),
                b_1: store.add(format!("encoder.{l}.b_1"), Tensor::zeros(&[c.ffn_dim])),
                w_2: matrix(&mut store, &format!("encoder.{l}.w_2"), c.ffn_dim, d),
                b_2: store.add(format!("encoder.{l}.b_2"), Tensor::zeros(&[d])),
                ln2_gain: store.add(format!("encoder.{l}.ln2.gain"), Tensor::filled(&[d], 1.0)),
                ln2_bias: store.add(format!("encoder.{l}.ln2.bias"), Tensor::zeros(&[d])),
            })
            .collect();
        let w_poi = matrix(&mut store, "head.poi.weight", d, c.n_pois);
        let w_time = matrix(&mut store, "head.time.weight", d, 1);
        let w_cat = matrix(&mut store, "head.category.weight", d, c.n_categories);

        let user_table = store.add("user_embedding", init::normal(&mut rng, &[c.n_users, omega], 0.02));
        let category_table = store.add("category_embedding", init::normal(&mut rng, &[c.n_categories, psi], 0.02));
        let t2v_freq = store.add("time2vec.freq", Tensor::vector(log_spaced(1.0, 2.0 * core::f64::consts::PI * 7.0, psi)));
        let t2v_phase = store.add("time2vec.phase", Tensor::zeros(&[psi]));
        let b_pu = store.add("fuse_poi_user.bias", Tensor::zeros(&[2 * omega]));
        let b_ct = store.add("fuse_time_category.bias", Tensor::zeros(&[2 * psi]));
        let b_poi = store.add("head.poi.bias", Tensor::zeros(&[c.n_pois]));
        let b_time = store.add("head.time.bias", Tensor::zeros(&[1]));
        let b_cat = store.add("head.category.bias", Tensor::zeros(&[c.n_categories]));

        let params = ModelParams {
            user_table,
            category_table,
            t2v_freq,
            t2v_phase,
            gcn,
            w_pu,
            b_pu,
            w_ct,
            b_ct,
            encoder,
            w_poi,
            b_poi,
            w_time,
            b_time,
            w_cat,
            b_cat,
            attn_src,
            attn_dst,
        };
        Ok(Self { config, store, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn n_parameters(&self) -> usize {
        self.store.n_scalars()
    }

    /// Replaces parameter values by name, e.g. from a checkpoint. Every
    /// parameter must be supplied with its exact shape.
    pub fn load_values<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, Tensor)>) -> Result<()> {
        let mut seen = vec![false; self.store.len()];
        for (name, value) in values {
            let id = self
                .store
                .find(name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
            let p = self.store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_values",
                    left: p.value.shape().to_vec(),
                    right: value.shape().to_vec(),
                });
            }
            p.value = value;
            seen[id.index()] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let name = &self.store.iter().nth(missing).expect("index in range").name;
            return Err(Error::InvalidConfig(format!("parameter {name} missing")));
        }
        Ok(())
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.store, id)
    }

    /// Graph convolution: `X <- leaky_relu(A X W)` for hidden layers, linear
    /// output layer of width `user_dim`.
    pub fn gcn_forward(&self, tape: &mut Tape, graph: &GraphInputs) -> Result<Var> {
        let adj = tape.constant(graph.adjacency.clone());
        let mut x = tape.constant(graph.features.clone());
        let last = self.params.gcn.len() - 1;
        for (i, &w) in self.params.gcn.iter().enumerate() {
            let w = self.p(tape, w);
            let xw = tape.matmul(x, w)?;
            x = tape.matmul(adj, xw)?;
            if i != last {
                x = tape.leaky_relu(x, self.config.leaky_slope);
            }
        }
        Ok(x)
    }

    /// Learned map of transition probabilities over flow-map edges.
    ///
    /// Edge `i -> j` scores `leaky_relu(x_i . a_src + x_j . a_dst)`; each row
    /// is a softmax over the node's out-edges, and nodes without out-edges get
    /// a uniform row.
    pub fn transition_attention(&self, tape: &mut Tape, graph: &GraphInputs) -> Result<Var> {
        let x = tape.constant(graph.features.clone());
        let a_src = self.p(tape, self.params.attn_src);
        let a_dst = self.p(tape, self.params.attn_dst);
        let src = tape.matmul(x, a_src)?;
        let dst = tape.matmul(x, a_dst)?;
        let scores = tape.outer_sum(src, dst)?;
        let scores = tape.leaky_relu(scores, self.config.leaky_slope);
        tape.softmax_rows_with(scores, Some(&graph.edge_mask), EmptyRow::Uniform)
    }

    /// Evaluates [`Self::transition_attention`] outside of training.
    pub fn transition_map(&self, graph: &GraphInputs) -> Result<TransitionAttentionMap> {
        let mut tape = Tape::new();
        let phi = self.transition_attention(&mut tape, graph)?;
        Ok(TransitionAttentionMap {
            n: graph.n_nodes(),
            values: tape.value(phi).data().to_vec(),
        })
    }

    /// Time2Vec rows for `times`: column 0 is `w0 t + p0`, the others
    /// `sin(wi t + pi)`.
    pub fn time2vec(&self, tape: &mut Tape, times: &[f64]) -> Result<Var> {
        if let Some(&t) = times.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::DomainError { what: "time of day", value: t });
        }
        let t = tape.constant(Tensor::matrix(times.len(), 1, times.to_vec())?);
        let freq = self.p(tape, self.params.t2v_freq);
        let phase = self.p(tape, self.params.t2v_phase);
        let freq = tape.reshape(freq, &[1, self.config.timecat_dim])?;
        let lin = tape.matmul(t, freq)?;
        let lin = tape.add_row(lin, phase)?;
        Ok(tape.time2vec_act(lin))
    }

    fn fuse(&self, tape: &mut Tape, left: Var, right: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (wl, wr) = (tape.value(left).cols(), tape.value(right).cols());
        if wl != wr {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                left: vec![wl],
                right: vec![wr],
            });
        }
        let cat = tape.concat(left, right, Axis::Cols)?;
        let w = self.p(tape, w);
        let b = self.p(tape, b);
        let h = tape.matmul(cat, w)?;
        let h = tape.add_row(h, b)?;
        Ok(tape.leaky_relu(h, self.config.leaky_slope))
    }

    /// `sigma(W [e_p ; e_u] + b)`, width `2 * user_dim` per row.
    pub fn fuse_poi_user(&self, tape: &mut Tape, e_p: Var, e_u: Var) -> Result<Var> {
        self.fuse(tape, e_p, e_u, self.params.w_pu, self.params.b_pu)
    }

    /// `sigma(W [e_t ; e_c] + b)`, width `2 * timecat_dim` per row.
    pub fn fuse_time_category(&self, tape: &mut Tape, e_t: Var, e_c: Var) -> Result<Var> {
        self.fuse(tape, e_t, e_c, self.params.w_ct, self.params.b_ct)
    }

    /// Check-in embeddings for a sequence, `k x model_dim`.
    pub fn checkin_embeddings(&self, tape: &mut Tape, poi_embeddings: Var, steps: &[Step]) -> Result<Var> {
        let pois: Vec<usize> = steps.iter().map(|s| s.poi).collect();
        let users: Vec<usize> = steps.iter().map(|s| s.user).collect();
        let cats: Vec<usize> = steps.iter().map(|s| s.category).collect();
        let times: Vec<f64> = steps.iter().map(|s| s.time).collect();

        let e_p = tape.gather_rows(poi_embeddings, &pois)?;
        let users_t = self.p(tape, self.params.user_table);
        let e_u = tape.gather_rows(users_t, &users)?;
        let e_pu = self.fuse_poi_user(tape, e_p, e_u)?;

        let e_t = self.time2vec(tape, &times)?;
        let cats_t = self.p(tape, self.params.category_table);
        let e_c = tape.gather_rows(cats_t, &cats)?;
        let e_ct = self.fuse_time_category(tape, e_t, e_c)?;
        tape.concat(e_pu, e_ct, Axis::Cols)
    }

    /// Transformer encoder over `x0` (`k x d`). Position `i` attends to
    /// positions `j <= i` with `j < valid_len`.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape,
        x0: Var,
        valid_len: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.encode(tape, x0, valid_len, dropout_rng, None)
    }

    fn encode(
        &self,
        tape: &mut Tape,
        x0: Var,
        valid_len: usize,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        mut attention: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let c = &self.config;
        let (k, d) = tape.value(x0).dims2();
        if d != c.model_dim {
            return Err(Error::ShapeMismatch {
                op: "encoder_forward",
                left: vec![k, d],
                right: vec![k, c.model_dim],
            });
        }
        if k > c.max_seq_len || valid_len == 0 || valid_len > k {
            return Err(Error::InvalidConfig(format!(
                "sequence length {k} (valid {valid_len}) outside 1..={}",
                c.max_seq_len
            )));
        }
        let mask: Vec<bool> = (0..k * k).map(|i| (i % k) <= (i / k) && (i % k) < valid_len).collect();
        let pe = tape.constant(positional_encoding(k, d));
        let mut x = tape.add(x0, pe)?;
        x = self.maybe_dropout(tape, x, dropout_rng.as_deref_mut())?;

        let dh = d / c.heads;
        let scale = if c.unscaled_attention {
            1.0
        } else {
            1.0 / libm::sqrt(dh as f64)
        };
        for layer in &self.params.encoder {
            let w_q = self.p(tape, layer.w_q);
            let w_k = self.p(tape, layer.w_k);
            let w_v = self.p(tape, layer.w_v);
            let q = tape.matmul(x, w_q)?;
            let kk = tape.matmul(x, w_k)?;
            let v = tape.matmul(x, w_v)?;
            let mut heads: Option<Var> = None;
            for h in 0..c.heads {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(kk, h * dh, dh)?;
                let vh = tape.slice_cols(v, h * dh, dh)?;
                let s = tape.matmul_bt(qh, kh)?;
                let s = tape.scale(s, scale);
                let a = tape.softmax_rows(s, Some(&mask))?;
                if let Some(out) = attention.as_deref_mut() {
                    out.push(a);
                }
                let head = tape.matmul(a, vh)?;
                heads = Some(match heads {
                    None => head,
                    Some(acc) => tape.concat(acc, head, Axis::Cols)?,
                });
            }
            let w_o = self.p(tape, layer.w_o);
            let multi = tape.matmul(heads.expect("heads >= 1"), w_o)?;
            let multi = self.maybe_dropout(tape, multi, dropout_rng.as_deref_mut())?;
            let res = tape.add(x, multi)?;
            let (g1, b1) = (self.p(tape, layer.ln1_gain), self.p(tape, layer.ln1_bias));
            let x_attn = tape.layer_norm(res, g1, b1, c.layer_norm_eps)?;

            let w_1 = self.p(tape, layer.w_1);
            let b_1 = self.p(tape, layer.b_1);
            let w_2 = self.p(tape, layer.w_2);
            let b_2 = self.p(tape, layer.b_2);
            let hidden = tape.matmul(x_attn, w_1)?;
            let hidden = tape.add_row(hidden, b_1)?;
            let hidden = tape.relu(hidden);
            let ff = tape.matmul(hidden, w_2)?;
            let ff = tape.add_row(ff, b_2)?;
            let ff = self.maybe_dropout(tape, ff, dropout_rng.as_deref_mut())?;
            let res = tape.add(x_attn, ff)?;
            let (g2, b2) = (self.p(tape, layer.ln2_gain), self.p(tape, layer.ln2_bias));
            x = tape.layer_norm(res, g2, b2, c.layer_norm_eps)?;
        }
        Ok(x)
    }

    fn maybe_dropout(&self, tape: &mut Tape, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let pattern = (0..tape.value(x).len())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                tape.dropout(x, pattern)
            }
            _ => Ok(x),
        }
    }

    /// POI logits `k x N`, time `k x 1` and category logits `k x C`.
    pub fn heads_forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var, Var)> {
        let mut affine = |w: ParamId, b: ParamId| -> Result<Var> {
            let (w, b) = (self.p(tape, w), self.p(tape, b));
            let h = tape.matmul(x, w)?;
            tape.add_row(h, b)
        };
        let poi = affine(self.params.w_poi, self.params.b_poi)?;
        let time = affine(self.params.w_time, self.params.b_time)?;
        let cat = affine(self.params.w_cat, self.params.b_cat)?;
        Ok((poi, time, cat))
    }

    pub fn graph_context(&self, tape: &mut Tape, graph: &GraphInputs) -> Result<GraphContext> {
        Ok(GraphContext {
            poi_embeddings: self.gcn_forward(tape, graph)?,
            transition: self.transition_attention(tape, graph)?,
        })
    }

    /// Runs one (possibly padded) sequence through embedding, encoder, heads
    /// and the transition residual.
    pub fn sequence_forward(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        steps: &[Step],
        valid_len: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<SequenceOutput> {
        let x0 = self.checkin_embeddings(tape, ctx.poi_embeddings, steps)?;
        let x = self.encoder_forward(tape, x0, valid_len, dropout_rng)?;
        let (poi, time, cat) = self.heads_forward(tape, x)?;
        let pois: Vec<usize> = steps.iter().map(|s| s.poi).collect();
        let poi_logits = final_poi_logits(tape, poi, ctx.transition, &pois)?;
        Ok(SequenceOutput {
            poi_logits,
            time,
            category_logits: cat,
        })
    }

    /// Combined objective `L_poi + 10 L_time + L_cat` over a batch, each term
    /// a mean over supervised positions.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        graph: &GraphInputs,
        batch: &Batch,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossParts> {
        let ctx = self.graph_context(tape, graph)?;
        let mut outs: Option<(Var, Var, Var)> = None;
        for (steps, mask) in batch.inputs.iter().zip(&batch.mask) {
            let valid = mask.iter().filter(|&&m| m).count();
            let o = self.sequence_forward(tape, &ctx, steps, valid, dropout_rng.as_deref_mut())?;
            outs = Some(match outs {
                None => (o.poi_logits, o.time, o.category_logits),
                Some((p, t, c)) => (
                    tape.concat(p, o.poi_logits, Axis::Rows)?,
                    tape.concat(t, o.time, Axis::Rows)?,
                    tape.concat(c, o.category_logits, Axis::Rows)?,
                ),
            });
        }
        let (poi_logits, time, cat_logits) = outs.ok_or(Error::AllMasked)?;
        let targets: Vec<&Target> = batch.targets.iter().flatten().collect();
        let mask: Vec<bool> = batch.mask.iter().flatten().copied().collect();
        combined_loss(
            tape,
            poi_logits,
            time,
            cat_logits,
            &targets.iter().map(|t| t.poi).collect::<Vec<_>>(),
            &targets.iter().map(|t| t.time).collect::<Vec<_>>(),
            &targets.iter().map(|t| t.category).collect::<Vec<_>>(),
            &mask,
        )
    }

    /// Constant graph context for inference.
    pub fn inference_context(&self, graph: &GraphInputs) -> Result<InferenceContext> {
        let mut tape = Tape::new();
        let ctx = self.graph_context(&mut tape, graph)?;
        Ok(InferenceContext {
            poi_embeddings: tape.value(ctx.poi_embeddings).clone(),
            transition: tape.value(ctx.transition).clone(),
        })
    }

    /// Attention weights of every layer and head (layer-major), each
    /// `k x k`, for an unpadded sequence.
    pub fn attention_maps(&self, ctx: &InferenceContext, steps: &[Step]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let emb = tape.constant(ctx.poi_embeddings.clone());
        let x0 = self.checkin_embeddings(&mut tape, emb, steps)?;
        let mut maps = Vec::new();
        self.encode(&mut tape, x0, steps.len(), None, Some(&mut maps))?;
        Ok(maps.into_iter().map(|a| tape.value(a).clone()).collect())
    }

    /// Final POI logits for every position of `steps`, truncated to the
    /// most recent `max_seq_len` steps.
    pub fn score_positions(&self, ctx: &InferenceContext, steps: &[Step]) -> Result<Vec<Vec<f64>>> {
        let steps = &steps[steps.len().saturating_sub(self.config.max_seq_len)..];
        let mut tape = Tape::new();
        let gctx = GraphContext {
            poi_embeddings: tape.constant(ctx.poi_embeddings.clone()),
            transition: tape.constant(ctx.transition.clone()),
        };
        let out = self.sequence_forward(&mut tape, &gctx, steps, steps.len(), None)?;
        let logits = tape.value(out.poi_logits);
        Ok((0..logits.rows()).map(|r| logits.row(r).to_vec()).collect())
    }
}

/// Precomputed POI embeddings and transition map.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceContext {
    pub poi_embeddings: Tensor,
    pub transition: Tensor,
}

/// Adds row `transition[input_pois[i]]` to row `i` of `poi_logits`.
pub fn final_poi_logits(tape: &mut Tape, poi_logits: Var, transition: Var, input_pois: &[usize]) -> Result<Var> {
    let rows = tape.value(poi_logits).rows();
    if input_pois.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "final_poi_logits",
            left: vec![rows],
            right: vec![input_pois.len()],
        });
    }
    let phi_rows = tape.gather_rows(transition, input_pois)?;
    tape.add(poi_logits, phi_rows)
}

/// Cross-entropy on POIs and categories plus ten times the squared time
/// error, all averaged over positions where `mask` is set.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss(
    tape: &mut Tape,
    poi_logits: Var,
    time: Var,
    category_logits: Var,
    poi_targets: &[usize],
    time_targets: &[f64],
    category_targets: &[usize],
    mask: &[bool],
) -> Result<LossParts> {
    let poi = tape.cross_entropy(poi_logits, poi_targets, mask)?;
    let time = tape.masked_mse(time, time_targets, mask)?;
    let category = tape.cross_entropy(category_logits, category_targets, mask)?;
    let weighted = tape.scale(time, TIME_LOSS_FACTOR);
    let total = tape.add(poi, weighted)?;
    let total = tape.add(total, category)?;
    Ok(LossParts {
        total,
        poi,
        time,
        category,
    })
}

/// Fixed sinusoidal encoding, `k x d`.
pub fn positional_encoding(k: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; k * d];
    for pos in 0..k {
        for i in 0..d {
            let rate = libm::pow(10_000.0, (2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + i] = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
        }
    }
    Tensor::matrix(k, d, data).expect("shape and data agree")
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (libm::log(lo), libm::log(hi));
    (0..n).map(|i| libm::exp(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}
