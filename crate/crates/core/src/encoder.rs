//! Transformer encoder mapping an observation window to a state vector.
//!
//! `window (W×F) -> linear embedding + sinusoidal positions (W×d)
//!  -> L × [x + MHA(LN(x)); x + FFN(LN(x))] -> LN -> mean over valid rows`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::ObservationWindow;
use crate::rng::CounterRng;
use crate::tensor::{Graph, NodeId, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub window: usize,
    /// Encoded feature count `F`; derived from the sensor schema.
    pub features: usize,
    pub dropout: f64,
    /// Add sinusoidal positional encodings to the embedded rows.
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            layers: 2,
            d_ff: 64,
            window: 8,
            features: 1,
            dropout: 0.0,
            positional: true,
        }
    }
}

impl EncoderConfig {
    /// 512-wide, 8 heads, 6 layers.
    pub fn full_scale(features: usize) -> Self {
        Self {
            d_model: 512,
            heads: 8,
            layers: 6,
            d_ff: 2048,
            window: 8,
            features,
            dropout: 0.0,
            positional: true,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.d_model == 0 {
            v.push("encoder.d_model must be >= 1".to_string());
        }
        if self.heads == 0 {
            v.push("encoder.heads must be >= 1".to_string());
        } else if !self.d_model.is_multiple_of(self.heads) {
            v.push(format!(
                "encoder.d_model ({}) must be divisible by encoder.heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.d_ff == 0 {
            v.push("encoder.d_ff must be >= 1".to_string());
        }
        if self.window == 0 {
            v.push("encoder.window must be >= 1".to_string());
        }
        if self.features == 0 {
            v.push("encoder feature count must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!(
                "encoder.dropout must be in [0, 1), got {}",
                self.dropout
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations: v })
        }
    }
}

/// `pe[pos, 2i] = sin(pos / 10000^(2i/d))`, `pe[pos, 2i+1] = cos(...)`.
pub fn positional_encoding(window: usize, d_model: usize) -> Vec<f64> {
    let mut pe = vec![0.0; window * d_model];
    for pos in 0..window {
        for i in 0..d_model {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            pe[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Scaled dot-product weights `softmax(QKᵀ/√d_k)` with masked key columns.
pub fn attention_weights(g: &mut Graph, q: NodeId, k: NodeId, valid: &[bool]) -> Result<NodeId> {
    let d_k = *g.shape(q).last().unwrap();
    if g.shape(k).last() != Some(&d_k) {
        let (sq, sk) = (g.shape(q).to_vec(), g.shape(k).to_vec());
        return Err(Error::dim("attention", &sq, &sk));
    }
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (d_k as f64).sqrt());
    g.masked_softmax(scaled, valid)
}

/// `softmax(QKᵀ/√d_k) V`. Errors when every position is masked.
pub fn attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, valid: &[bool]) -> Result<NodeId> {
    let w = attention_weights(g, q, k, valid)?;
    g.matmul(w, v)
}

/// Projection matrices of one self-attention block, all `d×d`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

/// Splits the projected Q/K/V into `heads` column slices, attends per head,
/// concatenates and applies the output projection.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    w: &AttentionWeights,
    heads: usize,
    valid: &[bool],
) -> Result<NodeId> {
    let q = g.matmul(x, w.wq)?;
    let k = g.matmul(x, w.wk)?;
    let v = g.matmul(x, w.wv)?;
    let d = *g.shape(q).last().unwrap();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::dim("multi_head_attention", &[d], &[heads]));
    }
    let dk = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        outs.push(attention(g, qh, kh, vh, valid)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    g.matmul(cat, w.wo)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlots {
    ln1_gain: usize,
    ln1_bias: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

/// Transformer parameters plus the slot layout needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    pub params: ParamSet,
    embed: usize,
    layers: Vec<LayerSlots>,
    final_gain: usize,
    final_bias: usize,
    positions: Option<Vec<f64>>,
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut CounterRng) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Tensor::new(&[rows, cols], data).expect("positive dims")
}

impl EncoderParams {
    /// Matrices drawn from `U(-1/√fan_in, 1/√fan_in)`; biases zero; layer
    /// norm gains one.
    pub fn init(config: EncoderConfig, rng: &mut CounterRng) -> Result<Self> {
        Self::build(config, |r, c| uniform_matrix(r, c, rng))
    }

    /// All matrices zero (layer norm gains still one).
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        Self::build(config, |r, c| Tensor::zeros(&[r, c]))
    }

    fn build(
        config: EncoderConfig,
        mut matrix: impl FnMut(usize, usize) -> Tensor,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut ps = ParamSet::new();
        let embed = ps.add("embed", matrix(config.features, d));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerSlots {
                ln1_gain: ps.add(p("ln1.gain"), Tensor::ones(&[d])),
                ln1_bias: ps.add(p("ln1.bias"), Tensor::zeros(&[d])),
                wq: ps.add(p("wq"), matrix(d, d)),
                wk: ps.add(p("wk"), matrix(d, d)),
                wv: ps.add(p("wv"), matrix(d, d)),
                wo: ps.add(p("wo"), matrix(d, d)),
                ln2_gain: ps.add(p("ln2.gain"), Tensor::ones(&[d])),
                ln2_bias: ps.add(p("ln2.bias"), Tensor::zeros(&[d])),
                ff1_w: ps.add(p("ff1.w"), matrix(d, config.d_ff)),
                ff1_b: ps.add(p("ff1.b"), Tensor::zeros(&[config.d_ff])),
                ff2_w: ps.add(p("ff2.w"), matrix(config.d_ff, d)),
                ff2_b: ps.add(p("ff2.b"), Tensor::zeros(&[d])),
            });
        }
        let final_gain = ps.add("final_ln.gain", Tensor::ones(&[d]));
        let final_bias = ps.add("final_ln.bias", Tensor::zeros(&[d]));
        let positions = config
            .positional
            .then(|| positional_encoding(config.window, d));
        Ok(Self {
            config,
            params: ps,
            embed,
            layers,
            final_gain,
            final_bias,
            positions,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Overrides the positional table (`None` disables positions).
    pub fn set_positions(&mut self, table: Option<Vec<f64>>) -> Result<()> {
        if let Some(t) = &table {
            if t.len() != self.config.window * self.config.d_model {
                return Err(Error::dim(
                    "positions",
                    &[self.config.window, self.config.d_model],
                    &[t.len()],
                ));
            }
        }
        self.positions = table;
        Ok(())
    }

    fn check_window(&self, window: &ObservationWindow) -> Result<()> {
        if window.features() != self.config.features || window.length() != self.config.window {
            return Err(Error::dim(
                "encoder input",
                &[self.config.window, self.config.features],
                &[window.length(), window.features()],
            ));
        }
        if window.valid_rows() == 0 {
            return Err(Error::usage("encoder input window has no valid rows"));
        }
        Ok(())
    }

    /// `E = X·W_embed + P`, shape `W×d`.
    pub fn embed(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        window: &ObservationWindow,
    ) -> Result<NodeId> {
        if window.features() != self.config.features || window.length() != self.config.window {
            return Err(Error::dim(
                "embed",
                &[self.config.window, self.config.features],
                &[window.length(), window.features()],
            ));
        }
        let x = g.constant(&[window.length(), window.features()], window.matrix())?;
        let e = g.matmul(x, bound[self.embed])?;
        match &self.positions {
            Some(pe) => {
                let p = g.constant(&[self.config.window, self.config.d_model], pe.clone())?;
                g.add(e, p)
            }
            None => Ok(e),
        }
    }

    fn dropout(
        &self,
        g: &mut Graph,
        x: NodeId,
        rng: &mut Option<&mut CounterRng>,
    ) -> Result<NodeId> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let n = g.value(x).len();
                let keep = 1.0 / (1.0 - p);
                let mask = (0..n)
                    .map(|_| if rng.uniform() < p { 0.0 } else { keep })
                    .collect();
                let shape = g.shape(x).to_vec();
                let m = g.constant(&shape, mask)?;
                g.mul(x, m)
            }
            _ => Ok(x),
        }
    }

    /// Per-position encodings after the final layer norm, `W×d`, before
    /// pooling. `dropout_rng` enables dropout when the configured rate is
    /// positive.
    pub fn forward_sequence(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        window: &ObservationWindow,
        mut dropout_rng: Option<&mut CounterRng>,
    ) -> Result<NodeId> {
        self.check_window(window)?;
        let mask = window.mask();
        let mut x = self.embed(g, bound, window)?;
        for slots in &self.layers {
            let h = g.layer_norm(x, bound[slots.ln1_gain], bound[slots.ln1_bias])?;
            let w = AttentionWeights {
                wq: bound[slots.wq],
                wk: bound[slots.wk],
                wv: bound[slots.wv],
                wo: bound[slots.wo],
            };
            let a = multi_head_attention(g, h, &w, self.config.heads, &mask)?;
            let a = self.dropout(g, a, &mut dropout_rng)?;
            x = g.add(x, a)?;

            let h = g.layer_norm(x, bound[slots.ln2_gain], bound[slots.ln2_bias])?;
            let f = g.matmul(h, bound[slots.ff1_w])?;
            let f = g.add_row(f, bound[slots.ff1_b])?;
            let f = g.relu(f);
            let f = g.matmul(f, bound[slots.ff2_w])?;
            let f = g.add_row(f, bound[slots.ff2_b])?;
            let f = self.dropout(g, f, &mut dropout_rng)?;
            x = g.add(x, f)?;
        }
        g.layer_norm(x, bound[self.final_gain], bound[self.final_bias])
    }

    /// State representation `1×d`: mean of the valid rows of
    /// [`forward_sequence`](Self::forward_sequence).
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        window: &ObservationWindow,
        dropout_rng: Option<&mut CounterRng>,
    ) -> Result<NodeId> {
        let seq = self.forward_sequence(g, bound, window, dropout_rng)?;
        let n = window.valid_rows() as f64;
        let weights = window
            .mask()
            .into_iter()
            .map(|v| if v { 1.0 / n } else { 0.0 })
            .collect();
        let pool = g.constant(&[1, window.length()], weights)?;
        g.matmul(pool, seq)
    }

    /// Convenience inference pass on a private graph.
    pub fn encode(&self, window: &ObservationWindow) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let s = self.forward(&mut g, &bound, window, None)?;
        Ok(g.value(s).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(positional: bool) -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            heads: 2,
            layers: 2,
            d_ff: 16,
            window: 4,
            features: 3,
            dropout: 0.0,
            positional,
        }
    }

    fn window_from(rows: &[[f64; 3]], len: usize) -> ObservationWindow {
        let mut w = ObservationWindow::new(len, 3).unwrap();
        for r in rows {
            w.push(r.to_vec()).unwrap();
        }
        w
    }

    #[test]
    fn config_validation_lists_violations() {
        let cfg = EncoderConfig {
            d_model: 10,
            heads: 4,
            window: 0,
            ..EncoderConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { violations }) => assert_eq!(violations.len(), 2),
            other => panic!("{other:?}"),
        }
        let full = EncoderConfig::full_scale(20);
        full.validate().unwrap();
        assert_eq!(full.d_k(), 64);
    }

    #[test]
    fn zero_window_zero_positions_embed_to_zero() {
        let cfg = EncoderConfig {
            positional: false,
            ..tiny(false)
        };
        let p = EncoderParams::init(cfg, &mut CounterRng::from_key(1)).unwrap();
        let w = window_from(&[[0.0; 3]], 4);
        let mut g = Graph::new();
        let b = p.params.bind(&mut g);
        let e = p.embed(&mut g, &b, &w).unwrap();
        assert!(g.value(e).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_embedding_passes_rows_through() {
        let cfg = EncoderConfig {
            d_model: 3,
            heads: 1,
            features: 3,
            positional: false,
            ..tiny(false)
        };
        let mut p = EncoderParams::init(cfg, &mut CounterRng::from_key(1)).unwrap();
        p.params
            .get_mut("embed")
            .unwrap()
            .data_mut()
            .copy_from_slice(Tensor::identity(3).data());
        let w = window_from(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]], 4);
        let mut g = Graph::new();
        let b = p.params.bind(&mut g);
        let e = p.embed(&mut g, &b, &w).unwrap();
        assert_eq!(g.value(e), &w.matrix()[..]);
    }

    #[test]
    fn embed_matches_independent_product() {
        let cfg = EncoderConfig {
            d_model: 4,
            heads: 1,
            ..tiny(true)
        };
        let p = EncoderParams::init(cfg, &mut CounterRng::from_key(5)).unwrap();
        let w = window_from(&[[0.2, 0.9, 0.1], [0.5, 0.0, 1.0], [0.3, 0.3, 0.7]], 4);
        let mut g = Graph::new();
        let b = p.params.bind(&mut g);
        let e = p.embed(&mut g, &b, &w).unwrap();
        let x = w.matrix();
        let we = p.params.get("embed").unwrap().data();
        let pe = positional_encoding(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = pe[i * 4 + j];
                for k in 0..3 {
                    acc += x[i * 3 + k] * we[k * 4 + j];
                }
                assert!((g.value(e)[i * 4 + j] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn positional_table_first_rows() {
        let pe = positional_encoding(2, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[6] - (1.0 / 100.0f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn attention_examples() {
        // Q = 0: uniform weights over valid rows.
        let mut g = Graph::new();
        let q = g.constant(&[3, 2], vec![0.0; 6]).unwrap();
        let k = g
            .constant(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let v = g
            .constant(&[3, 2], vec![1.0, 0.0, 3.0, 2.0, 100.0, 100.0])
            .unwrap();
        let out = attention(&mut g, q, k, v, &[true, true, false]).unwrap();
        for row in g.value(out).chunks(2) {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 1.0).abs() < 1e-12);
        }

        // W = 1: output equals V.
        let q = g.constant(&[1, 2], vec![0.3, -0.2]).unwrap();
        let k = g.constant(&[1, 2], vec![1.5, 0.1]).unwrap();
        let v = g.constant(&[1, 2], vec![7.0, -3.0]).unwrap();
        let out = attention(&mut g, q, k, v, &[true]).unwrap();
        assert_eq!(g.value(out), &[7.0, -3.0]);

        // Q = K = V = I₂, d_k = 2: row 0 weights are softmax([1/√2, 0]).
        let i = g.leaf(&Tensor::identity(2));
        let w = attention_weights(&mut g, i, i, &[true, true]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w00 = s.exp() / (s.exp() + 1.0);
        let expected = [w00, 1.0 - w00, 1.0 - w00, w00];
        for (a, b) in g.value(w).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let out = attention(&mut g, i, i, i, &[true, true]).unwrap();
        for (a, b) in g.value(out).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }

        let none = attention(&mut g, i, i, i, &[false, false]);
        assert!(matches!(none, Err(Error::Usage(_))));
    }

    #[test]
    fn attention_scaling_uses_sqrt_dk() {
        let mut rng = CounterRng::from_key(3);
        let q1: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let k1: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        // d_k = 4 built by repeating each d_k = 1 column four times: raw
        // scores are 4·q·k, scaled by 1/2, so 2·q·k.
        let q4: Vec<f64> = q1.iter().flat_map(|&v| [v; 4]).collect();
        let k4: Vec<f64> = k1.iter().flat_map(|&v| [v; 4]).collect();
        let mut g = Graph::new();
        let (q1n, k1n) = (
            g.constant(&[3, 1], q1.clone()).unwrap(),
            g.constant(&[3, 1], k1.clone()).unwrap(),
        );
        let (q4n, k4n) = (
            g.constant(&[3, 4], q4).unwrap(),
            g.constant(&[3, 4], k4).unwrap(),
        );
        let w1 = attention_weights(&mut g, q1n, k1n, &[true; 3]).unwrap();
        let w4 = attention_weights(&mut g, q4n, k4n, &[true; 3]).unwrap();
        for i in 0..3 {
            let row = |scale: f64| -> Vec<f64> {
                let s: Vec<f64> = (0..3).map(|j| scale * q1[i] * k1[j]).collect();
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                s.iter().map(|v| (v - m).exp() / z).collect()
            };
            let (r1, r4) = (row(1.0), row(2.0));
            for j in 0..3 {
                assert!((g.value(w1)[i * 3 + j] - r1[j]).abs() < 1e-15);
                assert!((g.value(w4)[i * 3 + j] - r4[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_head_is_projected_attention() {
        let mut rng = CounterRng::from_key(17);
        let mut g = Graph::new();
        let mut m = |r: usize, c: usize| {
            let d = (0..r * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            g.constant(&[r, c], d).unwrap()
        };
        let x = m(3, 4);
        let w = AttentionWeights {
            wq: m(4, 4),
            wk: m(4, 4),
            wv: m(4, 4),
            wo: m(4, 4),
        };
        let mask = [true, true, true];
        let mha = multi_head_attention(&mut g, x, &w, 1, &mask).unwrap();
        let q = g.matmul(x, w.wq).unwrap();
        let k = g.matmul(x, w.wk).unwrap();
        let v = g.matmul(x, w.wv).unwrap();
        let a = attention(&mut g, q, k, v, &mask).unwrap();
        let o = g.matmul(a, w.wo).unwrap();
        assert_eq!(g.value(mha), g.value(o));
        assert_eq!(g.shape(mha), &[3, 4]);
    }

    #[test]
    fn zero_layer_stack_pools_the_embedding() {
        let cfg = EncoderConfig {
            layers: 0,
            ..tiny(true)
        };
        let p = EncoderParams::init(cfg, &mut CounterRng::from_key(2)).unwrap();
        let w = window_from(&[[0.1, 0.5, 0.9], [0.3, 0.3, 0.3]], 4);
        let mut g = Graph::new();
        let b = p.params.bind(&mut g);
        let e = p.embed(&mut g, &b, &w).unwrap();
        let gain = g.leaf(&Tensor::ones(&[8]));
        let bias = g.leaf(&Tensor::zeros(&[8]));
        let n = g.layer_norm(e, gain, bias).unwrap();
        let rows = g.value(n).to_vec();
        let s = p.encode(&w).unwrap();
        for j in 0..8 {
            let expected = (rows[2 * 8 + j] + rows[3 * 8 + j]) / 2.0;
            assert!((s[j] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn single_valid_row_pools_to_that_row() {
        let p = EncoderParams::init(tiny(true), &mut CounterRng::from_key(4)).unwrap();
        let w = window_from(&[[0.2, 0.4, 0.6]], 4);
        let mut g = Graph::new();
        let b = p.params.bind(&mut g);
        let seq = p.forward_sequence(&mut g, &b, &w, None).unwrap();
        let last = g.value(seq)[3 * 8..].to_vec();
        assert_eq!(p.encode(&w).unwrap(), last);
    }

    #[test]
    fn encode_is_deterministic() {
        let p = EncoderParams::init(tiny(true), &mut CounterRng::from_key(9)).unwrap();
        let w = window_from(&[[0.2, 0.4, 0.6], [0.9, 0.1, 0.0], [0.5, 0.5, 0.5]], 4);
        let a = p.encode(&w).unwrap();
        let b = p.encode(&w).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let p2 = EncoderParams::init(tiny(true), &mut CounterRng::from_key(9)).unwrap();
        assert_eq!(p2.encode(&w).unwrap(), a);
    }

    #[test]
    fn rejects_mismatched_window() {
        let p = EncoderParams::init(tiny(true), &mut CounterRng::from_key(9)).unwrap();
        let w = ObservationWindow::new(4, 5)
            .unwrap()
            .pushed(vec![0.0; 5])
            .unwrap();
        assert!(matches!(p.encode(&w), Err(Error::Dimension { .. })));
        let empty = ObservationWindow::new(4, 3).unwrap();
        assert!(p.encode(&empty).is_err());
    }

    #[test]
    fn dropout_changes_output_only_when_enabled() {
        let cfg = EncoderConfig {
            dropout: 0.5,
            ..tiny(true)
        };
        let p = EncoderParams::init(cfg, &mut CounterRng::from_key(9)).unwrap();
        let w = window_from(&[[0.2, 0.4, 0.6], [0.9, 0.1, 0.0]], 4);
        let plain = p.encode(&w).unwrap();
        let mut g = Graph::new();
        let b = p.params.bind(&mut g);
        let mut rng = CounterRng::from_key(1);
        let s = p.forward(&mut g, &b, &w, Some(&mut rng)).unwrap();
        assert_ne!(g.value(s), &plain[..]);
    }
}
