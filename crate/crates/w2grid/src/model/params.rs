use super::config::{ModelConfig, DIST_BUCKETS};
use crate::numerics::{Rng, Tensor};

/// Per-dilation convolution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub rate: usize,
    /// [K, K, d_c, d_c]
    pub kernel: Tensor,
    /// [d_c]
    pub bias: Tensor,
}

/// One recurrent direction: h_t = tanh(Wx·x_t + Wh·h_{t−1} + b).
#[derive(Debug, Clone, PartialEq)]
pub struct RnnDirParams {
    /// [d_dir, d_word]
    pub wx: Tensor,
    /// [d_dir, d_dir]
    pub wh: Tensor,
    /// [d_dir]
    pub b: Tensor,
}

/// All trainable tensors, shaped by a `ModelConfig`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// [vocab, d_word]
    pub emb: Tensor,
    pub rnn_fwd: RnnDirParams,
    pub rnn_bwd: RnnDirParams,
    /// CLN gain/bias generators, each [d_h, d_h] / [d_h].
    pub cln_w_alpha: Tensor,
    pub cln_b_alpha: Tensor,
    pub cln_w_beta: Tensor,
    pub cln_b_beta: Tensor,
    /// [DIST_BUCKETS, d_ed]
    pub dist_emb: Tensor,
    /// [2, d_et]
    pub region_emb: Tensor,
    /// MLP₁ reducing the grid concat to d_c: [d_c, grid_in], [d_c].
    pub mlp1_w: Tensor,
    pub mlp1_b: Tensor,
    /// One conv per enabled dilation rate, in rate order.
    pub convs: Vec<ConvParams>,
    /// Biaffine subject/object MLPs: [d_b, d_h], [d_b].
    pub mlp2_w: Tensor,
    pub mlp2_b: Tensor,
    pub mlp3_w: Tensor,
    pub mlp3_b: Tensor,
    /// Biaffine tensor [d_b, R, d_b], linear [R, 2·d_b], bias [R].
    pub bi_u: Tensor,
    pub bi_w: Tensor,
    pub bi_b: Tensor,
    /// Predictor MLP: [d_ph, q_dim], [d_ph], [R, d_ph], [R].
    pub pred_w1: Tensor,
    pub pred_b1: Tensor,
    pub pred_w2: Tensor,
    pub pred_b2: Tensor,
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data.iter_mut().for_each(|v| *v = rng.uniform(-a, a));
    t
}

fn matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    xavier(&[rows, cols], cols, rows, rng)
}

impl ModelParams {
    /// Initializes weight matrices and kernels uniform(−a, a) with
    /// a = sqrt(6/(fan_in+fan_out)), biases zero. The CLN gain generator
    /// starts as W_α = 0, b_α = 1 and W_β = b_β = 0, so CLN begins as
    /// plain per-row standardization.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d_dir = cfg.d_h / 2;
        let k = cfg.kernel_size;
        let rnn_dir = |rng: &mut Rng| RnnDirParams {
            wx: matrix(d_dir, cfg.d_word, rng),
            wh: matrix(d_dir, d_dir, rng),
            b: Tensor::zeros(&[d_dir]),
        };
        let mut cln_b_alpha = Tensor::zeros(&[cfg.d_h]);
        cln_b_alpha.data.iter_mut().for_each(|v| *v = 1.0);
        Self {
            emb: matrix(cfg.vocab_size, cfg.d_word, rng),
            rnn_fwd: rnn_dir(rng),
            rnn_bwd: rnn_dir(rng),
            cln_w_alpha: Tensor::zeros(&[cfg.d_h, cfg.d_h]),
            cln_b_alpha,
            cln_w_beta: Tensor::zeros(&[cfg.d_h, cfg.d_h]),
            cln_b_beta: Tensor::zeros(&[cfg.d_h]),
            dist_emb: matrix(DIST_BUCKETS, cfg.d_ed, rng),
            region_emb: matrix(2, cfg.d_et, rng),
            mlp1_w: matrix(cfg.d_c, cfg.grid_input_dim(), rng),
            mlp1_b: Tensor::zeros(&[cfg.d_c]),
            convs: cfg
                .enabled_dilations()
                .into_iter()
                .map(|rate| ConvParams {
                    rate,
                    kernel: xavier(
                        &[k, k, cfg.d_c, cfg.d_c],
                        k * k * cfg.d_c,
                        k * k * cfg.d_c,
                        rng,
                    ),
                    bias: Tensor::zeros(&[cfg.d_c]),
                })
                .collect(),
            mlp2_w: matrix(cfg.d_biaffine, cfg.d_h, rng),
            mlp2_b: Tensor::zeros(&[cfg.d_biaffine]),
            mlp3_w: matrix(cfg.d_biaffine, cfg.d_h, rng),
            mlp3_b: Tensor::zeros(&[cfg.d_biaffine]),
            bi_u: xavier(
                &[cfg.d_biaffine, cfg.relation_count, cfg.d_biaffine],
                cfg.d_biaffine,
                cfg.d_biaffine * cfg.relation_count,
                rng,
            ),
            bi_w: matrix(cfg.relation_count, 2 * cfg.d_biaffine, rng),
            bi_b: Tensor::zeros(&[cfg.relation_count]),
            pred_w1: matrix(cfg.d_pred_hidden, cfg.q_dim(), rng),
            pred_b1: Tensor::zeros(&[cfg.d_pred_hidden]),
            pred_w2: matrix(cfg.relation_count, cfg.d_pred_hidden, rng),
            pred_b2: Tensor::zeros(&[cfg.relation_count]),
        }
    }

    /// Stable (name, tensor) listing; the order defines the checkpoint and
    /// optimizer-state layout.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("emb".into(), &self.emb),
            ("rnn_fwd.wx".into(), &self.rnn_fwd.wx),
            ("rnn_fwd.wh".into(), &self.rnn_fwd.wh),
            ("rnn_fwd.b".into(), &self.rnn_fwd.b),
            ("rnn_bwd.wx".into(), &self.rnn_bwd.wx),
            ("rnn_bwd.wh".into(), &self.rnn_bwd.wh),
            ("rnn_bwd.b".into(), &self.rnn_bwd.b),
            ("cln.w_alpha".into(), &self.cln_w_alpha),
            ("cln.b_alpha".into(), &self.cln_b_alpha),
            ("cln.w_beta".into(), &self.cln_w_beta),
            ("cln.b_beta".into(), &self.cln_b_beta),
            ("dist_emb".into(), &self.dist_emb),
            ("region_emb".into(), &self.region_emb),
            ("mlp1.w".into(), &self.mlp1_w),
            ("mlp1.b".into(), &self.mlp1_b),
        ];
        for c in &self.convs {
            out.push((format!("conv{}.kernel", c.rate), &c.kernel));
            out.push((format!("conv{}.bias", c.rate), &c.bias));
        }
        out.extend([
            ("mlp2.w".to_string(), &self.mlp2_w),
            ("mlp2.b".to_string(), &self.mlp2_b),
            ("mlp3.w".to_string(), &self.mlp3_w),
            ("mlp3.b".to_string(), &self.mlp3_b),
            ("bi.u".to_string(), &self.bi_u),
            ("bi.w".to_string(), &self.bi_w),
            ("bi.b".to_string(), &self.bi_b),
            ("pred.w1".to_string(), &self.pred_w1),
            ("pred.b1".to_string(), &self.pred_b1),
            ("pred.w2".to_string(), &self.pred_w2),
            ("pred.b2".to_string(), &self.pred_b2),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("emb".into(), &mut self.emb),
            ("rnn_fwd.wx".into(), &mut self.rnn_fwd.wx),
            ("rnn_fwd.wh".into(), &mut self.rnn_fwd.wh),
            ("rnn_fwd.b".into(), &mut self.rnn_fwd.b),
            ("rnn_bwd.wx".into(), &mut self.rnn_bwd.wx),
            ("rnn_bwd.wh".into(), &mut self.rnn_bwd.wh),
            ("rnn_bwd.b".into(), &mut self.rnn_bwd.b),
            ("cln.w_alpha".into(), &mut self.cln_w_alpha),
            ("cln.b_alpha".into(), &mut self.cln_b_alpha),
            ("cln.w_beta".into(), &mut self.cln_w_beta),
            ("cln.b_beta".into(), &mut self.cln_b_beta),
            ("dist_emb".into(), &mut self.dist_emb),
            ("region_emb".into(), &mut self.region_emb),
            ("mlp1.w".into(), &mut self.mlp1_w),
            ("mlp1.b".into(), &mut self.mlp1_b),
        ];
        for c in &mut self.convs {
            out.push((format!("conv{}.kernel", c.rate), &mut c.kernel));
            out.push((format!("conv{}.bias", c.rate), &mut c.bias));
        }
        out.extend([
            ("mlp2.w".to_string(), &mut self.mlp2_w),
            ("mlp2.b".to_string(), &mut self.mlp2_b),
            ("mlp3.w".to_string(), &mut self.mlp3_w),
            ("mlp3.b".to_string(), &mut self.mlp3_b),
            ("bi.u".to_string(), &mut self.bi_u),
            ("bi.w".to_string(), &mut self.bi_w),
            ("bi.b".to_string(), &mut self.bi_b),
            ("pred.w1".to_string(), &mut self.pred_w1),
            ("pred.b1".to_string(), &mut self.pred_b1),
            ("pred.w2".to_string(), &mut self.pred_w2),
            ("pred.b2".to_string(), &mut self.pred_b2),
        ]);
        out
    }

    /// Rebuilds params from tensors in `named()` order (used by the
    /// gradient checker and the checkpoint loader).
    pub fn from_ordered(cfg: &ModelConfig, tensors: &[Tensor]) -> Self {
        let mut rng = Rng::new(0);
        let mut p = Self::init(cfg, &mut rng);
        let slots = p.named_mut();
        assert_eq!(slots.len(), tensors.len(), "tensor count mismatch");
        for ((_, slot), t) in slots.into_iter().zip(tensors) {
            assert_eq!(slot.shape, t.shape, "tensor shape mismatch");
            *slot = t.clone();
        }
        p
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_mut() {
            t.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_are_consistent() {
        let cfg = ModelConfig { vocab_size: 11, ..ModelConfig::default() };
        let p = ModelParams::init(&cfg, &mut Rng::new(1));
        assert_eq!(p.emb.shape, vec![11, cfg.d_word]);
        assert_eq!(p.rnn_fwd.wx.shape, vec![cfg.d_h / 2, cfg.d_word]);
        assert_eq!(p.mlp1_w.shape, vec![cfg.d_c, cfg.grid_input_dim()]);
        assert_eq!(p.convs.len(), 3);
        assert_eq!(p.bi_u.shape, vec![cfg.d_biaffine, cfg.relation_count, cfg.d_biaffine]);
        assert_eq!(p.pred_w1.shape, vec![cfg.d_pred_hidden, cfg.q_dim()]);
        assert!(p.all_finite());
    }

    #[test]
    fn cln_starts_as_identity_gain() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, &mut Rng::new(1));
        assert!(p.cln_w_alpha.data.iter().all(|&v| v == 0.0));
        assert!(p.cln_b_alpha.data.iter().all(|&v| v == 1.0));
        assert!(p.cln_w_beta.data.iter().all(|&v| v == 0.0));
        assert!(p.cln_b_beta.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disabled_embeddings_shrink_the_concat() {
        let mut cfg = ModelConfig::default();
        cfg.toggles.use_distance_emb = false;
        cfg.toggles.use_region_emb = false;
        let p = ModelParams::init(&cfg, &mut Rng::new(1));
        assert_eq!(p.mlp1_w.shape, vec![cfg.d_c, cfg.d_h]);
    }

    #[test]
    fn from_ordered_round_trips() {
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, &mut Rng::new(3));
        let tensors: Vec<Tensor> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
        let q = ModelParams::from_ordered(&cfg, &tensors);
        assert_eq!(p, q);
    }

    #[test]
    fn deterministic_init() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg, &mut Rng::new(9));
        let b = ModelParams::init(&cfg, &mut Rng::new(9));
        assert_eq!(a, b);
    }
}
