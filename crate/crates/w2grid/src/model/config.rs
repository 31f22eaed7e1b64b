use serde::{Deserialize, Serialize};

/// Size of the signed log-bucket distance table: bucket 0 for distance 0,
/// 1..=9 for j > i, 10..=18 for j < i.
pub const DIST_BUCKETS: usize = 19;

/// Ablation switches. Disabling an embedding shrinks the grid concat
/// width; disabling a predictor drops its score term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub use_distance_emb: bool,
    pub use_region_emb: bool,
    pub use_biaffine: bool,
    pub use_mlp_predictor: bool,
    /// Subset of `dilation_rates` to run; empty means all of them.
    pub enabled_dilations: Vec<usize>,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            use_distance_emb: true,
            use_region_emb: true,
            use_biaffine: true,
            use_mlp_predictor: true,
            enabled_dilations: Vec::new(),
        }
    }
}

/// Hyper-parameters. Paper-scale values are d_h ∈ {768, 1024} and
/// d_c ∈ {64, 96, 128} with dropout 0.5; the defaults here are toy-scale
/// so the model trains on a CPU in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Token embedding dim.
    pub d_word: usize,
    /// Encoder output dim (both directions concatenated; must be even).
    pub d_h: usize,
    /// Distance-embedding dim.
    pub d_ed: usize,
    /// Region-embedding dim.
    pub d_et: usize,
    /// Grid channel dim.
    pub d_c: usize,
    /// Output dim of the biaffine subject/object MLPs.
    pub d_biaffine: usize,
    /// Hidden width of the per-cell predictor MLP.
    pub d_pred_hidden: usize,
    pub kernel_size: usize,
    pub dilation_rates: Vec<usize>,
    /// Number of relation labels (NONE, NNW, THW per type).
    pub relation_count: usize,
    pub dropout: f64,
    pub toggles: Toggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            d_word: 64,
            d_h: 128,
            d_ed: 20,
            d_et: 20,
            d_c: 64,
            d_biaffine: 64,
            d_pred_hidden: 64,
            kernel_size: 3,
            dilation_rates: vec![1, 2, 3],
            relation_count: 2,
            dropout: 0.5,
            toggles: Toggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_h % 2 != 0 {
            return Err("d_h must be even (two encoder directions are concatenated)".into());
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err("kernel_size must be odd".into());
        }
        if self.dilation_rates.is_empty() || self.dilation_rates.iter().any(|&l| l == 0) {
            return Err("dilation_rates must be non-empty with every rate >= 1".into());
        }
        if !self.toggles.use_biaffine && !self.toggles.use_mlp_predictor {
            return Err("at least one of the biaffine and MLP predictors must be enabled".into());
        }
        if self.relation_count < 2 {
            return Err("relation_count must cover at least NONE and NNW".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        for l in self.enabled_dilations() {
            if !self.dilation_rates.contains(&l) {
                return Err(format!("enabled dilation {l} is not in dilation_rates"));
            }
        }
        if self.toggles.use_mlp_predictor && self.enabled_dilations().is_empty() {
            return Err("the MLP predictor needs at least one enabled dilation".into());
        }
        Ok(())
    }

    pub fn enabled_dilations(&self) -> Vec<usize> {
        if self.toggles.enabled_dilations.is_empty() {
            self.dilation_rates.clone()
        } else {
            self.toggles.enabled_dilations.clone()
        }
    }

    /// Width of the per-cell concat [V; E^d; E^t] feeding MLP₁.
    pub fn grid_input_dim(&self) -> usize {
        self.d_h
            + if self.toggles.use_distance_emb { self.d_ed } else { 0 }
            + if self.toggles.use_region_emb { self.d_et } else { 0 }
    }

    /// Channel width of Q, the concatenated dilated-conv outputs.
    pub fn q_dim(&self) -> usize {
        self.enabled_dilations().len() * self.d_c
    }
}

/// Signed log bucket of the cell offset j − i.
pub fn distance_bucket(i: usize, j: usize) -> usize {
    let delta = j as i64 - i as i64;
    if delta == 0 {
        return 0;
    }
    let mag = (1 + delta.unsigned_abs().ilog2() as usize).min(9);
    if delta > 0 {
        mag
    } else {
        9 + mag
    }
}

/// Region row: 0 on and below the diagonal (where THW lives), 1 above it.
pub fn region_row(i: usize, j: usize) -> usize {
    usize::from(i < j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = ModelConfig::default();
        c.d_h = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.toggles.use_biaffine = false;
        c.toggles.use_mlp_predictor = false;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.toggles.enabled_dilations = vec![7];
        assert!(c.validate().is_err());
    }

    #[test]
    fn distance_buckets_are_signed_and_bounded() {
        assert_eq!(distance_bucket(4, 4), 0);
        assert_eq!(distance_bucket(2, 5), 1 + 1); // delta 3 -> 1 + log2(3)
        assert_eq!(distance_bucket(5, 2), 9 + 2);
        assert_ne!(distance_bucket(2, 5), distance_bucket(5, 2));
        for i in 0..100 {
            for j in 0..100 {
                assert!(distance_bucket(i, j) < DIST_BUCKETS);
            }
        }
        // Far distances saturate.
        assert_eq!(distance_bucket(0, 5000), 9);
        assert_eq!(distance_bucket(5000, 0), 18);
    }

    #[test]
    fn region_rows_split_at_the_diagonal() {
        assert_eq!(region_row(0, 0), 0);
        assert_eq!(region_row(5, 2), 0);
        assert_eq!(region_row(2, 5), 1);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"d_wordd": 3}"#);
        assert!(err.is_err());
    }
}
