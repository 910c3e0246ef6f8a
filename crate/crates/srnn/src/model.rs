//! The structural recurrent model: a shared spatial-edge LSTM, a shared
//! temporal-edge LSTM, and a shared node LSTM with embedding layers in
//! between, applied batch-wise over the rows of a bound road graph.
//!
//! Parameter shapes depend only on [`Hyperparams`], never on the graph, so a
//! trained checkpoint can be bound to any topology. Per step the model:
//! embeds the spatial edge features [x_u, x_v] and advances the spatial-edge
//! LSTM; embeds the temporal edge features [x_u at t-1, x_u at t] and
//! advances the temporal-edge LSTM; sums, per node, the spatial hidden rows
//! incident to that node (ascending edge order, empty set gives zeros) and
//! concatenates the node's temporal hidden row; embeds the node feature and
//! that context, advances the node LSTM on their concatenation; and reads out
//! one predicted speed per node through a final linear layer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Mode, NodeId, Tape};
use crate::dataset::Scaler;
use crate::error::{Error, Result};
use crate::graph::RoadGraph;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Model sizes. Defaults mirror the reference configuration: hidden 64 for
/// all three RNNs, embedding 32, dropout 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub node_hidden: usize,
    pub spatial_hidden: usize,
    pub temporal_hidden: usize,
    pub embed: usize,
    pub dropout: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            node_hidden: 64,
            spatial_hidden: 64,
            temporal_hidden: 64,
            embed: 32,
            dropout: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.node_hidden == 0
            || self.spatial_hidden == 0
            || self.temporal_hidden == 0
            || self.embed == 0
        {
            return Err(Error::Config("all model sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Linear layer weights: `w` is fan_in x fan_out, `b` is 1 x fan_out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGroup {
    pub w: Matrix,
    pub b: Matrix,
}

/// LSTM cell weights with gates stacked along columns in [i, f, g, o] order:
/// `w` is (input + hidden) x 4*hidden, `b` is 1 x 4*hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmGroup {
    pub w: Matrix,
    pub b: Matrix,
    pub hidden: usize,
}

/// The eight trainable weight groups. Every trainable scalar lives in exactly
/// one group; shapes are a pure function of [`Hyperparams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrnnParams {
    pub spatial_edge_embed: LinearGroup,
    pub spatial_edge_lstm: LstmGroup,
    pub temporal_edge_embed: LinearGroup,
    pub temporal_edge_lstm: LstmGroup,
    pub node_embed: LinearGroup,
    pub context_embed: LinearGroup,
    pub node_lstm: LstmGroup,
    pub readout: LinearGroup,
}

/// Canonical order of the 16 weight matrices (each group's w then b). Adam
/// state, tape registration and gradient extraction all follow this order.
pub const PARAM_NAMES: [&str; 16] = [
    "spatial_edge_embed.w",
    "spatial_edge_embed.b",
    "spatial_edge_lstm.w",
    "spatial_edge_lstm.b",
    "temporal_edge_embed.w",
    "temporal_edge_embed.b",
    "temporal_edge_lstm.w",
    "temporal_edge_lstm.b",
    "node_embed.w",
    "node_embed.b",
    "context_embed.w",
    "context_embed.b",
    "node_lstm.w",
    "node_lstm.b",
    "readout.w",
    "readout.b",
];

impl SrnnParams {
    pub fn matrices(&self) -> Vec<&Matrix> {
        vec![
            &self.spatial_edge_embed.w,
            &self.spatial_edge_embed.b,
            &self.spatial_edge_lstm.w,
            &self.spatial_edge_lstm.b,
            &self.temporal_edge_embed.w,
            &self.temporal_edge_embed.b,
            &self.temporal_edge_lstm.w,
            &self.temporal_edge_lstm.b,
            &self.node_embed.w,
            &self.node_embed.b,
            &self.context_embed.w,
            &self.context_embed.b,
            &self.node_lstm.w,
            &self.node_lstm.b,
            &self.readout.w,
            &self.readout.b,
        ]
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.spatial_edge_embed.w,
            &mut self.spatial_edge_embed.b,
            &mut self.spatial_edge_lstm.w,
            &mut self.spatial_edge_lstm.b,
            &mut self.temporal_edge_embed.w,
            &mut self.temporal_edge_embed.b,
            &mut self.temporal_edge_lstm.w,
            &mut self.temporal_edge_lstm.b,
            &mut self.node_embed.w,
            &mut self.node_embed.b,
            &mut self.context_embed.w,
            &mut self.context_embed.b,
            &mut self.node_lstm.w,
            &mut self.node_lstm.b,
            &mut self.readout.w,
            &mut self.readout.b,
        ]
    }

    /// Total trainable scalars, by direct enumeration.
    pub fn scalar_count(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    /// Register every weight matrix on a tape (canonical order) and return
    /// the node handles.
    pub fn register(&self, tape: &mut Tape) -> TapeParams {
        let ids: Vec<NodeId> = self
            .matrices()
            .into_iter()
            .map(|m| tape.parameter(m.clone()))
            .collect();
        TapeParams {
            spatial_edge_embed: TapeLinear { w: ids[0], b: ids[1] },
            spatial_edge_lstm: TapeLstm {
                w: ids[2],
                b: ids[3],
                hidden: self.spatial_edge_lstm.hidden,
            },
            temporal_edge_embed: TapeLinear { w: ids[4], b: ids[5] },
            temporal_edge_lstm: TapeLstm {
                w: ids[6],
                b: ids[7],
                hidden: self.temporal_edge_lstm.hidden,
            },
            node_embed: TapeLinear { w: ids[8], b: ids[9] },
            context_embed: TapeLinear { w: ids[10], b: ids[11] },
            node_lstm: TapeLstm {
                w: ids[12],
                b: ids[13],
                hidden: self.node_lstm.hidden,
            },
            readout: TapeLinear { w: ids[14], b: ids[15] },
            ids,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapeLinear {
    pub w: NodeId,
    pub b: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct TapeLstm {
    pub w: NodeId,
    pub b: NodeId,
    pub hidden: usize,
}

/// Node handles for one registration of [`SrnnParams`] on a tape.
#[derive(Debug, Clone)]
pub struct TapeParams {
    pub spatial_edge_embed: TapeLinear,
    pub spatial_edge_lstm: TapeLstm,
    pub temporal_edge_embed: TapeLinear,
    pub temporal_edge_lstm: TapeLstm,
    pub node_embed: TapeLinear,
    pub context_embed: TapeLinear,
    pub node_lstm: TapeLstm,
    pub readout: TapeLinear,
    ids: Vec<NodeId>,
}

impl TapeParams {
    /// Handles in canonical order, matching [`SrnnParams::matrices`].
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Hidden and cell states of the three LSTMs, living on a tape. Row counts
/// track the bound graph; column counts track the hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct SrnnState {
    pub h_spatial: NodeId,
    pub c_spatial: NodeId,
    pub h_temporal: NodeId,
    pub c_temporal: NodeId,
    pub h_node: NodeId,
    pub c_node: NodeId,
}

impl SrnnState {
    /// Zero state for a graph, as required at every window start.
    pub fn zero(tape: &mut Tape, g: &RoadGraph, hp: &Hyperparams) -> SrnnState {
        let edges = g.spatial_edges().len();
        let n = g.node_count();
        SrnnState {
            h_spatial: tape.input(Matrix::zeros(edges, hp.spatial_hidden)),
            c_spatial: tape.input(Matrix::zeros(edges, hp.spatial_hidden)),
            h_temporal: tape.input(Matrix::zeros(n, hp.temporal_hidden)),
            c_temporal: tape.input(Matrix::zeros(n, hp.temporal_hidden)),
            h_node: tape.input(Matrix::zeros(n, hp.node_hidden)),
            c_node: tape.input(Matrix::zeros(n, hp.node_hidden)),
        }
    }
}

/// Per-step activations kept for inspection: the four embedding outputs, the
/// concatenated per-node context, and the prediction.
#[derive(Debug, Clone, Copy)]
pub struct ForwardCache {
    pub a_spatial: NodeId,
    pub a_temporal: NodeId,
    pub a_node: NodeId,
    pub a_context: NodeId,
    pub context: NodeId,
    pub y: NodeId,
}

/// Draw initial weights: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with
/// zero biases, except LSTM forget-gate biases which start at 1.0.
pub fn init_params(hp: &Hyperparams, seed: u64) -> Result<SrnnParams> {
    hp.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let e = hp.embed;

    let mut linear = |fan_in: usize, fan_out: usize| -> LinearGroup {
        LinearGroup {
            w: sample_uniform(&mut rng, fan_in, fan_out),
            b: Matrix::zeros(1, fan_out),
        }
    };
    let spatial_edge_embed = linear(2, e);
    let temporal_edge_embed = linear(2, e);
    let node_embed = linear(1, e);
    let context_embed = linear(hp.temporal_hidden + hp.spatial_hidden, e);
    let readout = linear(hp.node_hidden, 1);

    let mut lstm = |input: usize, hidden: usize| -> LstmGroup {
        let w = sample_uniform(&mut rng, input + hidden, 4 * hidden);
        let mut b = Matrix::zeros(1, 4 * hidden);
        for c in hidden..2 * hidden {
            b.set(0, c, 1.0);
        }
        LstmGroup { w, b, hidden }
    };
    let spatial_edge_lstm = lstm(e, hp.spatial_hidden);
    let temporal_edge_lstm = lstm(e, hp.temporal_hidden);
    let node_lstm = lstm(2 * e, hp.node_hidden);

    Ok(SrnnParams {
        spatial_edge_embed,
        spatial_edge_lstm,
        temporal_edge_embed,
        temporal_edge_lstm,
        node_embed,
        context_embed,
        node_lstm,
        readout,
    })
}

fn sample_uniform(rng: &mut ChaCha12Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized buffer")
}

/// Embedding function: dropout(relu(x * w + b)), weights shared across rows.
pub fn embed(
    tape: &mut Tape,
    x: NodeId,
    lin: &TapeLinear,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    let affine = tape.matmul(x, lin.w)?;
    let affine = tape.add_bias(affine, lin.b)?;
    let activated = tape.relu(affine);
    tape.dropout(activated, dropout_rate, mode, rng)
}

/// One LSTM step applied row-wise with shared weights.
pub fn lstm_cell(
    tape: &mut Tape,
    x_emb: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    lstm: &TapeLstm,
) -> Result<(NodeId, NodeId)> {
    let h = lstm.hidden;
    let xh = tape.concat_cols(x_emb, h_prev)?;
    let z = tape.matmul(xh, lstm.w)?;
    let z = tape.add_bias(z, lstm.b)?;
    let i_gate = tape.col_slice(z, 0, h)?;
    let i_gate = tape.sigmoid(i_gate);
    let f_gate = tape.col_slice(z, h, h)?;
    let f_gate = tape.sigmoid(f_gate);
    let g_cand = tape.col_slice(z, 2 * h, h)?;
    let g_cand = tape.tanh(g_cand);
    let o_gate = tape.col_slice(z, 3 * h, h)?;
    let o_gate = tape.sigmoid(o_gate);

    let keep = tape.mul(f_gate, c_prev)?;
    let write = tape.mul(i_gate, g_cand)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h_out = tape.mul(o_gate, c_act)?;
    Ok((h_out, c))
}

/// Sum of the spatial hidden rows listed in `incident`, reduced in ascending
/// edge order regardless of how the indices are presented. Empty incidence
/// yields the zero row.
pub fn spatial_context(tape: &mut Tape, h_spatial: NodeId, incident: &[usize]) -> Result<NodeId> {
    let mut sorted = incident.to_vec();
    sorted.sort_unstable();
    let rows = tape.row_select(h_spatial, &sorted)?;
    Ok(tape.row_sum(rows))
}

/// Advance the model by one time step.
///
/// `x_now` and `x_before` are N x 1 scaled node features for the current step
/// and the step before it. Returns the new state and the step cache whose `y`
/// is the N x 1 prediction for the next step, in scaled units.
#[allow(clippy::too_many_arguments)]
pub fn forward_step(
    tape: &mut Tape,
    g: &RoadGraph,
    params: &TapeParams,
    hp: &Hyperparams,
    x_now: NodeId,
    x_before: NodeId,
    state: &SrnnState,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(SrnnState, ForwardCache)> {
    let n = g.node_count();
    if tape.value(x_now).shape() != (n, 1) || tape.value(x_before).shape() != (n, 1) {
        return Err(Error::Dimension(format!(
            "node features must be {}x1 for this graph",
            n
        )));
    }
    if tape.value(state.h_spatial).rows() != g.spatial_edges().len()
        || tape.value(state.h_node).rows() != n
    {
        return Err(Error::Dimension(
            "state row counts do not match the bound graph".into(),
        ));
    }

    // Spatial edge features [x_u, x_v], one row per directed edge.
    let from: Vec<usize> = g.spatial_edges().iter().map(|&(u, _)| u).collect();
    let to: Vec<usize> = g.spatial_edges().iter().map(|&(_, v)| v).collect();
    let x_from = tape.row_select(x_now, &from)?;
    let x_to = tape.row_select(x_now, &to)?;
    let spatial_features = tape.concat_cols(x_from, x_to)?;
    let a_spatial = embed(
        tape,
        spatial_features,
        &params.spatial_edge_embed,
        hp.dropout,
        mode,
        rng,
    )?;
    let (h_spatial, c_spatial) = lstm_cell(
        tape,
        a_spatial,
        state.h_spatial,
        state.c_spatial,
        &params.spatial_edge_lstm,
    )?;

    // Temporal edge features [x_u at t-1, x_u at t], one row per node.
    let temporal_features = tape.concat_cols(x_before, x_now)?;
    let a_temporal = embed(
        tape,
        temporal_features,
        &params.temporal_edge_embed,
        hp.dropout,
        mode,
        rng,
    )?;
    let (h_temporal, c_temporal) = lstm_cell(
        tape,
        a_temporal,
        state.h_temporal,
        state.c_temporal,
        &params.temporal_edge_lstm,
    )?;

    // Per node: summed incident spatial rows next to the temporal row.
    let mut per_node = Vec::with_capacity(n);
    for u in 0..n {
        let spatial_sum = spatial_context(tape, h_spatial, g.incidence(u))?;
        let temporal_row = tape.row_select(h_temporal, &[u])?;
        per_node.push(tape.concat_cols(temporal_row, spatial_sum)?);
    }
    let context = tape.concat_rows(&per_node)?;

    let a_node = embed(tape, x_now, &params.node_embed, hp.dropout, mode, rng)?;
    let a_context = embed(tape, context, &params.context_embed, hp.dropout, mode, rng)?;
    let node_input = tape.concat_cols(a_node, a_context)?;
    let (h_node, c_node) = lstm_cell(tape, node_input, state.h_node, state.c_node, &params.node_lstm)?;

    let y = tape.matmul(h_node, params.readout.w)?;
    let y = tape.add_bias(y, params.readout.b)?;

    Ok((
        SrnnState {
            h_spatial,
            c_spatial,
            h_temporal,
            c_temporal,
            h_node,
            c_node,
        },
        ForwardCache {
            a_spatial,
            a_temporal,
            a_node,
            a_context,
            context,
            y,
        },
    ))
}

/// Predictions for one window: `steps[k].y` targets the scaled value at row
/// t0 + k + 1.
pub struct WindowForward {
    pub steps: Vec<ForwardCache>,
}

impl WindowForward {
    pub fn predictions(&self) -> Vec<NodeId> {
        self.steps.iter().map(|s| s.y).collect()
    }
}

/// Run `len` forward steps over rows t0..t0+len of a scaled T x N value
/// matrix, starting from a zero state. Row t0-1 provides the temporal-edge
/// lookback, so t0 must be at least 1.
#[allow(clippy::too_many_arguments)]
pub fn forward_window(
    tape: &mut Tape,
    g: &RoadGraph,
    params: &TapeParams,
    hp: &Hyperparams,
    scaled: &Matrix,
    t0: usize,
    len: usize,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<WindowForward> {
    if t0 == 0 || t0 + len >= scaled.rows() + 1 {
        return Err(Error::Index(format!(
            "window start {} with length {} outside 1..{}",
            t0,
            len,
            scaled.rows()
        )));
    }
    if scaled.cols() != g.node_count() {
        return Err(Error::Dimension(format!(
            "{} feature columns for a {}-node graph",
            scaled.cols(),
            g.node_count()
        )));
    }
    let mut state = SrnnState::zero(tape, g, hp);
    let mut x_before = tape.input(node_column(scaled, t0 - 1));
    let mut steps = Vec::with_capacity(len);
    for k in 0..len {
        let x_now = tape.input(node_column(scaled, t0 + k));
        let (next, cache) = forward_step(tape, g, params, hp, x_now, x_before, &state, mode, rng)?;
        state = next;
        x_before = x_now;
        steps.push(cache);
    }
    Ok(WindowForward { steps })
}

/// Row t of a T x N matrix as an N x 1 column.
pub fn node_column(values: &Matrix, t: usize) -> Matrix {
    Matrix::from_vec(values.cols(), 1, values.row(t).to_vec()).expect("sized buffer")
}

/// Closed-form count of trainable scalars; depends only on the sizes, never
/// on a graph.
pub fn param_count(hp: &Hyperparams) -> usize {
    let e = hp.embed;
    let lstm = |input: usize, hidden: usize| 4 * ((input + hidden) * hidden + hidden);
    let linear = |fan_in: usize, fan_out: usize| fan_in * fan_out + fan_out;
    linear(2, e)
        + lstm(e, hp.spatial_hidden)
        + linear(2, e)
        + lstm(e, hp.temporal_hidden)
        + linear(1, e)
        + linear(hp.temporal_hidden + hp.spatial_hidden, e)
        + lstm(2 * e, hp.node_hidden)
        + linear(hp.node_hidden, 1)
}

/// Self-describing, topology-free container for trained weights. Holds the
/// format version, the hyperparameters, the training scaler, and the eight
/// named weight groups; weights round-trip bit-exactly because floats are
/// serialized in shortest-round-trip decimal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub hyperparams: Hyperparams,
    pub scaler: Scaler,
    pub params: SrnnParams,
}

impl Checkpoint {
    pub fn new(hyperparams: Hyperparams, scaler: Scaler, params: SrnnParams) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_FORMAT_VERSION,
            hyperparams,
            scaler,
            params,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} unsupported (expected {})",
                self.version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        self.hyperparams.validate()?;
        let hp = &self.hyperparams;
        let e = hp.embed;
        let expected: [(usize, usize); 16] = [
            (2, e),
            (1, e),
            (e + hp.spatial_hidden, 4 * hp.spatial_hidden),
            (1, 4 * hp.spatial_hidden),
            (2, e),
            (1, e),
            (e + hp.temporal_hidden, 4 * hp.temporal_hidden),
            (1, 4 * hp.temporal_hidden),
            (1, e),
            (1, e),
            (hp.temporal_hidden + hp.spatial_hidden, e),
            (1, e),
            (2 * e + hp.node_hidden, 4 * hp.node_hidden),
            (1, 4 * hp.node_hidden),
            (hp.node_hidden, 1),
            (1, 1),
        ];
        for ((m, want), name) in self.params.matrices().iter().zip(expected).zip(PARAM_NAMES) {
            if m.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "weight group {} has shape {}x{}, expected {}x{}",
                    name,
                    m.shape().0,
                    m.shape().1,
                    want.0,
                    want.1
                )));
            }
        }
        if self.params.spatial_edge_lstm.hidden != hp.spatial_hidden
            || self.params.temporal_edge_lstm.hidden != hp.temporal_hidden
            || self.params.node_lstm.hidden != hp.node_hidden
        {
            return Err(Error::Checkpoint(
                "LSTM hidden sizes disagree with hyperparameters".into(),
            ));
        }
        if !(self.scaler.max > self.scaler.min) {
            return Err(Error::Checkpoint("degenerate scaler in checkpoint".into()));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !ckpt.params.is_finite() {
        return Err(Error::Checkpoint(
            "refusing to save non-finite weights".into(),
        ));
    }
    ckpt.validate()?;
    let json = serde_json::to_string(ckpt)
        .map_err(|e| Error::Checkpoint(format!("serializing checkpoint: {}", e)))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))?;
    ckpt.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            node_hidden: 8,
            spatial_hidden: 8,
            temporal_hidden: 8,
            embed: 4,
            dropout: 0.0,
        }
    }

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(0)
    }

    fn line_graph() -> RoadGraph {
        // a -> b -> c
        RoadGraph::build(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let hp = tiny_hp();
        let a = init_params(&hp, 42).unwrap();
        let b = init_params(&hp, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&hp, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        // context embed fan-in is temporal+spatial hidden = 4 here
        let hp = Hyperparams {
            node_hidden: 3,
            spatial_hidden: 2,
            temporal_hidden: 2,
            embed: 5,
            dropout: 0.0,
        };
        let p = init_params(&hp, 1).unwrap();
        assert!(p.context_embed.w.data().iter().all(|&x| x.abs() <= 0.5));
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let p = init_params(&tiny_hp(), 3).unwrap();
        for lstm in [&p.spatial_edge_lstm, &p.temporal_edge_lstm, &p.node_lstm] {
            let h = lstm.hidden;
            for c in 0..4 * h {
                let want = if (h..2 * h).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(lstm.b.get(0, c), want);
            }
        }
    }

    #[test]
    fn embed_with_zero_weights_is_zero() {
        let hp = tiny_hp();
        let mut params = init_params(&hp, 0).unwrap();
        params.node_embed.w.fill(0.0);
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let x = tape.input(Matrix::from_rows(&[&[0.3], &[0.7]]));
        let out = embed(&mut tape, x, &tp.node_embed, 0.0, Mode::Eval, &mut rng()).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_zero_weights_zero_state_stays_zero() {
        let hp = tiny_hp();
        let mut params = init_params(&hp, 0).unwrap();
        params.node_lstm.w.fill(0.0);
        params.node_lstm.b.fill(0.0);
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let x = tape.input(Matrix::zeros(2, 2 * hp.embed));
        let h0 = tape.input(Matrix::zeros(2, hp.node_hidden));
        let c0 = tape.input(Matrix::zeros(2, hp.node_hidden));
        let (h, c) = lstm_cell(&mut tape, x, h0, c0, &tp.node_lstm).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_hidden_stays_in_open_unit_interval() {
        let hp = tiny_hp();
        let params = init_params(&hp, 9).unwrap();
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let mut h = tape.input(Matrix::zeros(3, hp.node_hidden));
        let mut c = tape.input(Matrix::zeros(3, hp.node_hidden));
        let x = tape.input(Matrix::from_vec(3, 2 * hp.embed, vec![2.5; 3 * 2 * hp.embed]).unwrap());
        for _ in 0..20 {
            let (hn, cn) = lstm_cell(&mut tape, x, h, c, &tp.node_lstm).unwrap();
            h = hn;
            c = cn;
        }
        assert!(tape.value(h).data().iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn single_node_zero_params_predicts_zero() {
        let g = RoadGraph::build(vec!["a".into()], vec![vec![0]]).unwrap();
        let hp = tiny_hp();
        let mut params = init_params(&hp, 0).unwrap();
        for m in params.matrices_mut() {
            m.fill(0.0);
        }
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let state = SrnnState::zero(&mut tape, &g, &hp);
        let x_now = tape.input(Matrix::from_rows(&[&[0.4]]));
        let x_before = tape.input(Matrix::from_rows(&[&[0.2]]));
        let (_, cache) = forward_step(
            &mut tape,
            &g,
            &tp,
            &hp,
            x_now,
            x_before,
            &state,
            Mode::Eval,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(tape.value(cache.y), &Matrix::zeros(1, 1));
    }

    #[test]
    fn output_shape_is_node_count_by_one() {
        let hp = tiny_hp();
        let params = init_params(&hp, 5).unwrap();
        for (n, adj) in [
            (1usize, vec![vec![0u8]]),
            (3, vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]]),
            (4, vec![vec![0; 4]; 4]),
        ] {
            let ids = (0..n).map(|i| format!("s{}", i)).collect();
            let g = RoadGraph::build(ids, adj).unwrap();
            let mut tape = Tape::new();
            let tp = params.register(&mut tape);
            let state = SrnnState::zero(&mut tape, &g, &hp);
            let x_now = tape.input(Matrix::from_vec(n, 1, vec![0.5; n]).unwrap());
            let x_before = tape.input(Matrix::from_vec(n, 1, vec![0.4; n]).unwrap());
            let (_, cache) = forward_step(
                &mut tape,
                &g,
                &tp,
                &hp,
                x_now,
                x_before,
                &state,
                Mode::Eval,
                &mut rng(),
            )
            .unwrap();
            assert_eq!(tape.value(cache.y).shape(), (n, 1));
        }
    }

    #[test]
    fn incidence_presentation_order_does_not_change_the_sum() {
        let mut tape = Tape::new();
        let h = tape.input(Matrix::from_rows(&[
            &[0.1, 0.7],
            &[0.003, -2.5],
            &[31.0, 0.2],
            &[-0.04, 1.9],
        ]));
        let canonical = spatial_context(&mut tape, h, &[0, 2, 3]).unwrap();
        let canonical = tape.value(canonical).clone();
        for perm in [[2, 0, 3], [3, 2, 0], [0, 3, 2], [2, 3, 0], [3, 0, 2]] {
            let permuted = spatial_context(&mut tape, h, &perm).unwrap();
            assert_eq!(tape.value(permuted), &canonical);
        }
    }

    #[test]
    fn window_of_length_one_equals_single_step() {
        let g = line_graph();
        let hp = tiny_hp();
        let params = init_params(&hp, 11).unwrap();
        let scaled = Matrix::from_rows(&[
            &[0.1, 0.2, 0.3],
            &[0.2, 0.3, 0.4],
            &[0.3, 0.4, 0.5],
        ]);

        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let win = forward_window(
            &mut tape,
            &g,
            &tp,
            &hp,
            &scaled,
            1,
            1,
            Mode::Eval,
            &mut rng(),
        )
        .unwrap();
        let windowed = tape.value(win.steps[0].y).clone();

        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let state = SrnnState::zero(&mut tape, &g, &hp);
        let x_now = tape.input(node_column(&scaled, 1));
        let x_before = tape.input(node_column(&scaled, 0));
        let (_, cache) = forward_step(
            &mut tape,
            &g,
            &tp,
            &hp,
            x_now,
            x_before,
            &state,
            Mode::Eval,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(tape.value(cache.y), &windowed);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let g = line_graph();
        let hp = Hyperparams {
            dropout: 0.5,
            ..tiny_hp()
        };
        let params = init_params(&hp, 2).unwrap();
        let scaled = Matrix::from_vec(8, 3, (0..24).map(|i| i as f64 / 24.0).collect()).unwrap();
        let run = |seed: u64| {
            let mut tape = Tape::new();
            let tp = params.register(&mut tape);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let win = forward_window(
                &mut tape, &g, &tp, &hp, &scaled, 1, 4, Mode::Eval, &mut rng,
            )
            .unwrap();
            win.steps
                .iter()
                .map(|s| tape.value(s.y).clone())
                .collect::<Vec<_>>()
        };
        // different rng seeds: eval mode must ignore them
        assert_eq!(run(1), run(99));
    }

    #[test]
    fn context_rows_pair_temporal_with_summed_spatial() {
        let g = line_graph();
        let hp = tiny_hp();
        let params = init_params(&hp, 8).unwrap();
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let state = SrnnState::zero(&mut tape, &g, &hp);
        let x_now = tape.input(Matrix::from_rows(&[&[0.5], &[0.6], &[0.7]]));
        let x_before = tape.input(Matrix::from_rows(&[&[0.4], &[0.5], &[0.6]]));
        let (next, cache) = forward_step(
            &mut tape,
            &g,
            &tp,
            &hp,
            x_now,
            x_before,
            &state,
            Mode::Eval,
            &mut rng(),
        )
        .unwrap();
        let ctx = tape.value(cache.context).clone();
        let h_t = tape.value(next.h_temporal).clone();
        let h_s = tape.value(next.h_spatial).clone();
        // node 1 is incident to edges 0 and 1
        for c in 0..hp.temporal_hidden {
            assert_eq!(ctx.get(1, c), h_t.get(1, c));
        }
        for c in 0..hp.spatial_hidden {
            assert_eq!(
                ctx.get(1, hp.temporal_hidden + c),
                h_s.get(0, c) + h_s.get(1, c)
            );
        }
    }

    #[test]
    fn relabeled_cycle_gives_identical_per_node_outputs() {
        // 3-cycle: every node touches exactly two edges, so the per-node sum
        // has the same two terms under any labeling.
        let hp = tiny_hp();
        let params = init_params(&hp, 21).unwrap();
        let g1 = RoadGraph::build(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]],
        )
        .unwrap();
        // relabel: new node i is old node perm[i]
        let perm = [2usize, 0, 1];
        let mut adj = vec![vec![0u8; 3]; 3];
        for u in 0..3 {
            for v in 0..3 {
                adj[u][v] = u8::from(g1.has_edge(perm[u], perm[v]));
            }
        }
        let g2 = RoadGraph::build(
            vec!["x".into(), "y".into(), "z".into()],
            adj,
        )
        .unwrap();

        let x_now_1 = Matrix::from_rows(&[&[0.5], &[0.6], &[0.7]]);
        let x_before_1 = Matrix::from_rows(&[&[0.45], &[0.55], &[0.65]]);
        let permute = |m: &Matrix| {
            Matrix::from_vec(3, 1, perm.iter().map(|&p| m.get(p, 0)).collect()).unwrap()
        };

        let run = |g: &RoadGraph, x_now: Matrix, x_before: Matrix| {
            let mut tape = Tape::new();
            let tp = params.register(&mut tape);
            let state = SrnnState::zero(&mut tape, g, &hp);
            let xn = tape.input(x_now);
            let xb = tape.input(x_before);
            let (_, cache) = forward_step(
                &mut tape,
                g,
                &tp,
                &hp,
                xn,
                xb,
                &state,
                Mode::Eval,
                &mut rng(),
            )
            .unwrap();
            tape.value(cache.y).clone()
        };
        let y1 = run(&g1, x_now_1.clone(), x_before_1.clone());
        let y2 = run(&g2, permute(&x_now_1), permute(&x_before_1));
        for i in 0..3 {
            assert_eq!(y2.get(i, 0), y1.get(perm[i], 0));
        }
    }

    #[test]
    fn param_count_closed_form_and_enumeration_agree() {
        let hp = tiny_hp();
        assert_eq!(param_count(&hp), 1485);
        let params = init_params(&hp, 0).unwrap();
        assert_eq!(params.scalar_count(), 1485);

        let table = Hyperparams::default();
        assert_eq!(param_count(&table), 87_137);
        let params = init_params(&table, 0).unwrap();
        assert_eq!(params.scalar_count(), 87_137);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let hp = tiny_hp();
        let params = init_params(&hp, 33).unwrap();
        let ckpt = Checkpoint::new(hp, Scaler { min: 3.0, max: 91.5 }, params);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&ckpt, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap()
        );
    }

    #[test]
    fn checkpoint_load_rejects_tampering() {
        let hp = tiny_hp();
        let params = init_params(&hp, 33).unwrap();
        let ckpt = Checkpoint::new(hp, Scaler { min: 0.0, max: 1.0 }, params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();

        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        // truncate one weight array
        let arr = doc["params"]["readout"]["w"]["data"].as_array_mut().unwrap();
        arr.pop();
        std::fs::write(&path, doc.to_string()).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // version gate
        save_checkpoint(&ckpt, &path).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        doc["version"] = serde_json::json!(999);
        std::fs::write(&path, doc.to_string()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn checkpoint_binds_to_any_topology() {
        let hp = tiny_hp();
        let params = init_params(&hp, 12).unwrap();
        let ckpt = Checkpoint::new(hp, Scaler { min: 0.0, max: 100.0 }, params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        for n in [2usize, 5] {
            let ids = (0..n).map(|i| format!("s{}", i)).collect();
            let mut adj = vec![vec![0u8; n]; n];
            for u in 0..n - 1 {
                adj[u][u + 1] = 1;
            }
            let g = RoadGraph::build(ids, adj).unwrap();
            let mut tape = Tape::new();
            let tp = loaded.params.register(&mut tape);
            let state = SrnnState::zero(&mut tape, &g, &loaded.hyperparams);
            let x_now = tape.input(Matrix::from_vec(n, 1, vec![0.2; n]).unwrap());
            let x_before = tape.input(Matrix::from_vec(n, 1, vec![0.1; n]).unwrap());
            let out = forward_step(
                &mut tape,
                &g,
                &tp,
                &loaded.hyperparams,
                x_now,
                x_before,
                &state,
                Mode::Eval,
                &mut rng(),
            );
            assert!(out.is_ok());
        }
    }
}
