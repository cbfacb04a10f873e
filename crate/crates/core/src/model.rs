//! Residual MLP denoiser with sinusoidal time embedding and per-block
//! representation taps.
//!
//! The network is `x -> linear -> B residual blocks -> linear -> velocity`,
//! where each block computes `h + W2 silu(W1 h + b1 + Wt e(t)) + b2` with a
//! block-local projection `Wt` of the time embedding. Tap outputs are the
//! post-residual activations, which are already flat `[n, hidden]` batches.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_num_blocks")]
    pub num_blocks: usize,
    /// 1-based indices of blocks whose activations feed the regularizer.
    /// Omitted: the single first-quarter block. Explicit empty list: no taps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_blocks: Option<Vec<usize>>,
    #[serde(default = "default_time_embed_dim")]
    pub time_embed_dim: usize,
}

fn default_input_dim() -> usize {
    2
}
fn default_hidden_dim() -> usize {
    128
}
fn default_num_blocks() -> usize {
    8
}
fn default_time_embed_dim() -> usize {
    32
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            input_dim: default_input_dim(),
            hidden_dim: default_hidden_dim(),
            num_blocks: default_num_blocks(),
            tap_blocks: None,
            time_embed_dim: default_time_embed_dim(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::InvalidConfig {
                field: "model.num_blocks",
                reason: "a denoiser needs at least one block".into(),
            });
        }
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig {
                field: "model.input_dim/hidden_dim",
                reason: "dimensions must be positive".into(),
            });
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig {
                field: "model.time_embed_dim",
                reason: format!("must be even and at least 2, got {}", self.time_embed_dim),
            });
        }
        for &tap in self.tap_blocks.iter().flatten() {
            if tap < 1 || tap > self.num_blocks {
                return Err(Error::InvalidConfig {
                    field: "model.tap_blocks",
                    reason: format!(
                        "tap {tap} outside 1..={} (indices are 1-based)",
                        self.num_blocks
                    ),
                });
            }
        }
        Ok(())
    }

    /// Tap indices in effect: the configured list, or the first-quarter
    /// block when the field is omitted.
    pub fn effective_taps(&self) -> Vec<usize> {
        match &self.tap_blocks {
            Some(taps) => taps.clone(),
            None => vec![self.num_blocks.div_ceil(4)],
        }
    }

    /// Total number of scalar parameters implied by the shapes.
    pub fn param_count(&self) -> usize {
        let (d, h, e) = (self.input_dim, self.hidden_dim, self.time_embed_dim);
        let per_block = h * h + h + e * h + h * h + h;
        d * h + h + self.num_blocks * per_block + h * d + d
    }
}

/// Named, ordered weights plus the config and seed they were built from.
#[derive(Debug, Clone)]
pub struct DenoiserState {
    pub config: DenoiserConfig,
    pub seed: u64,
    weights: Vec<(String, Tensor)>,
}

/// Parameter names and shapes, in storage order.
pub fn weight_layout(cfg: &DenoiserConfig) -> Vec<(String, Vec<usize>)> {
    let (d, h, e) = (cfg.input_dim, cfg.hidden_dim, cfg.time_embed_dim);
    let mut layout = vec![
        ("w_in".to_string(), vec![d, h]),
        ("b_in".to_string(), vec![h]),
    ];
    for k in 1..=cfg.num_blocks {
        layout.push((format!("block{k}.w1"), vec![h, h]));
        layout.push((format!("block{k}.b1"), vec![h]));
        layout.push((format!("block{k}.wt"), vec![e, h]));
        layout.push((format!("block{k}.w2"), vec![h, h]));
        layout.push((format!("block{k}.b2"), vec![h]));
    }
    layout.push(("w_out".to_string(), vec![h, d]));
    layout.push(("b_out".to_string(), vec![d]));
    layout
}

/// Draws weights from N(0, 1/fan_in) and zeros the biases, deterministically
/// in `seed`.
pub fn init_model(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserState> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, streams::INIT);
    let weights = weight_layout(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let numel: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![0.0; numel]
            } else {
                let scale = 1.0 / (shape[0] as f64).sqrt();
                (0..numel)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                    .collect()
            };
            (name, Tensor::new_unchecked(shape, data))
        })
        .collect();
    Ok(DenoiserState {
        config: cfg.clone(),
        seed,
        weights,
    })
}

impl DenoiserState {
    pub fn weights(&self) -> &[(String, Tensor)] {
        &self.weights
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.weights.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces all weights, preserving names; shapes must match.
    pub fn set_tensors(&mut self, new: Vec<Tensor>) -> Result<()> {
        if new.len() != self.weights.len() {
            return Err(Error::InvalidConfig {
                field: "weights",
                reason: format!(
                    "expected {} tensors, got {}",
                    self.weights.len(),
                    new.len()
                ),
            });
        }
        for ((name, old), t) in self.weights.iter_mut().zip(new) {
            if old.shape() != t.shape() {
                return Err(Error::InvalidConfig {
                    field: "weights",
                    reason: format!("shape mismatch for `{name}`"),
                });
            }
            *old = t;
        }
        Ok(())
    }

    /// Registers every weight on `tape`, as trainable leaves or constants.
    pub fn to_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> ModelVars<'t> {
        let vars: Vec<Var<'t>> = self
            .weights
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect();
        ModelVars {
            config: self.config.clone(),
            vars,
        }
    }
}

/// The model's weights as tape variables, in checkpoint order.
#[derive(Debug)]
pub struct ModelVars<'t> {
    config: DenoiserConfig,
    vars: Vec<Var<'t>>,
}

impl<'t> ModelVars<'t> {
    /// Assembles model variables from externally built tape nodes, e.g.
    /// slices of one flat parameter vector.
    pub fn from_vars(config: DenoiserConfig, vars: Vec<Var<'t>>) -> Result<Self> {
        let layout = weight_layout(&config);
        if vars.len() != layout.len() {
            return Err(Error::InvalidShape {
                op: "model_vars",
                shape: vec![vars.len()],
                detail: format!("expected {} parameter tensors", layout.len()),
            });
        }
        for (var, (name, shape)) in vars.iter().zip(&layout) {
            if var.shape() != *shape {
                return Err(Error::InvalidShape {
                    op: "model_vars",
                    shape: var.shape().to_vec(),
                    detail: format!("parameter {name} expects shape {shape:?}"),
                });
            }
        }
        Ok(Self { config, vars })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn flat(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn block(&self, k: usize) -> [Var<'t>; 5] {
        let base = 2 + (k - 1) * 5;
        [
            self.vars[base],
            self.vars[base + 1],
            self.vars[base + 2],
            self.vars[base + 3],
            self.vars[base + 4],
        ]
    }
}

/// Sinusoidal embedding of times into `dim` features: interleaved sin and
/// cos at frequencies geometric from 2*pi to 2000*pi, which resolves the
/// unit time interval down to millistep scale.
pub fn time_embedding(t: &[f64], dim: usize) -> Tensor {
    let half = dim / 2;
    let n = t.len();
    let mut data = vec![0.0; n * dim];
    for (i, &ti) in t.iter().enumerate() {
        for k in 0..half {
            let exponent = if half > 1 {
                k as f64 / (half - 1) as f64
            } else {
                0.0
            };
            let omega = 2.0 * std::f64::consts::PI * 1000f64.powf(exponent);
            data[i * dim + 2 * k] = (ti * omega).sin();
            data[i * dim + 2 * k + 1] = (ti * omega).cos();
        }
    }
    Tensor::new_unchecked(vec![n, dim], data)
}

/// Forward activations: the velocity prediction, every block's post-residual
/// activation (for norm probes), and the configured taps.
#[derive(Debug)]
pub struct ForwardTrace<'t> {
    pub pred: Var<'t>,
    /// `blocks[k-1]` is block k's output, `[n, hidden]`.
    pub blocks: Vec<Var<'t>>,
    /// `(block index, activation)` for each configured tap, in config order.
    pub taps: Vec<(usize, Var<'t>)>,
}

/// Runs the denoiser on a batch. `x_t` is `[n, input_dim]`, `t` is `[n]`.
pub fn forward_with_taps<'t>(
    model: &ModelVars<'t>,
    x_t: &Tensor,
    t: &Tensor,
) -> Result<ForwardTrace<'t>> {
    let cfg = &model.config;
    if x_t.shape().len() != 2 || x_t.cols() != cfg.input_dim {
        return Err(Error::InvalidShape {
            op: "forward",
            shape: x_t.shape().to_vec(),
            detail: format!("expected [n, {}] inputs", cfg.input_dim),
        });
    }
    if t.shape() != [x_t.rows()] {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: x_t.shape().to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    let tape = model.vars[0].tape();
    let emb = tape.constant(&time_embedding(t.data(), cfg.time_embed_dim));
    let x = tape.constant(x_t);

    let (w_in, b_in) = (model.vars[0], model.vars[1]);
    let (w_out, b_out) = (model.vars[model.vars.len() - 2], model.vars[model.vars.len() - 1]);

    let mut h = x.matmul(w_in)?.add(b_in)?;
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for k in 1..=cfg.num_blocks {
        let [w1, b1, wt, w2, b2] = model.block(k);
        let pre = h.matmul(w1)?.add(b1)?.add(emb.matmul(wt)?)?;
        let u = pre.silu()?;
        h = h.add(u.matmul(w2)?.add(b2)?)?;
        blocks.push(h);
    }
    let pred = h.matmul(w_out)?.add(b_out)?;
    let taps = cfg
        .effective_taps()
        .into_iter()
        .map(|k| (k, blocks[k - 1]))
        .collect();
    Ok(ForwardTrace { pred, blocks, taps })
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: DenoiserConfig,
    seed: u64,
    step: u64,
    weights: Vec<String>,
}

/// Writes a checkpoint: a one-line JSON manifest followed by each weight
/// tensor in manifest order.
pub fn save_checkpoint<W: Write>(state: &DenoiserState, step: u64, w: &mut W) -> Result<()> {
    let manifest = CheckpointManifest {
        config: state.config.clone(),
        seed: state.seed,
        step,
        weights: state.weights.iter().map(|(n, _)| n.clone()).collect(),
    };
    serde_json::to_writer(&mut *w, &manifest)?;
    w.write_all(b"\n")?;
    for (_, t) in &state.weights {
        t.write_to(w)?;
    }
    Ok(())
}

pub fn save_checkpoint_file(state: &DenoiserState, step: u64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_checkpoint(state, step, &mut w)?;
    w.flush()?;
    Ok(())
}

fn manifest_field<T: serde::de::DeserializeOwned>(
    value: &serde_json::Value,
    field: &str,
) -> Result<T> {
    let raw = value.get(field).ok_or_else(|| Error::Checkpoint {
        field: field.to_string(),
        reason: "missing".into(),
    })?;
    serde_json::from_value(raw.clone()).map_err(|e| Error::Checkpoint {
        field: field.to_string(),
        reason: e.to_string(),
    })
}

/// Reads a checkpoint, validating the manifest field by field and every
/// weight tensor against the shapes implied by the config.
pub fn load_checkpoint<R: std::io::BufRead>(r: &mut R) -> Result<(DenoiserState, u64)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let raw: serde_json::Value = serde_json::from_str(line.trim_end()).map_err(|e| {
        Error::Checkpoint {
            field: "manifest".into(),
            reason: e.to_string(),
        }
    })?;
    let config: DenoiserConfig = manifest_field(&raw, "config")?;
    config.validate().map_err(|e| Error::Checkpoint {
        field: "config".into(),
        reason: e.to_string(),
    })?;
    let seed: u64 = manifest_field(&raw, "seed")?;
    let step: u64 = manifest_field(&raw, "step")?;
    let names: Vec<String> = manifest_field(&raw, "weights")?;

    let layout = weight_layout(&config);
    if names.len() != layout.len() {
        return Err(Error::Checkpoint {
            field: "weights".into(),
            reason: format!("expected {} names, found {}", layout.len(), names.len()),
        });
    }
    let mut weights = Vec::with_capacity(layout.len());
    for ((expected_name, expected_shape), name) in layout.into_iter().zip(names) {
        if name != expected_name {
            return Err(Error::Checkpoint {
                field: format!("weights.{name}"),
                reason: format!("expected `{expected_name}` at this position"),
            });
        }
        let t = Tensor::read_from(r).map_err(|e| Error::Checkpoint {
            field: format!("weights.{name}"),
            reason: e.to_string(),
        })?;
        if t.shape() != expected_shape {
            return Err(Error::Checkpoint {
                field: format!("weights.{name}"),
                reason: format!(
                    "shape {:?} does not match config-implied {:?}",
                    t.shape(),
                    expected_shape
                ),
            });
        }
        weights.push((name, t));
    }
    Ok((
        DenoiserState {
            config,
            seed,
            weights,
        },
        step,
    ))
}

pub fn load_checkpoint_file(path: &Path) -> Result<(DenoiserState, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    load_checkpoint(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DenoiserConfig {
        DenoiserConfig {
            input_dim: 2,
            hidden_dim: 8,
            num_blocks: 2,
            tap_blocks: None,
            time_embed_dim: 4,
        }
    }

    fn batch(n: usize) -> (Tensor, Tensor) {
        let x: Vec<f64> = (0..n * 2).map(|i| (i as f64 * 0.3).cos()).collect();
        let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        (
            Tensor::new(vec![n, 2], x).unwrap(),
            Tensor::new(vec![n], t).unwrap(),
        )
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&small_cfg(), 9).unwrap();
        let b = init_model(&small_cfg(), 9).unwrap();
        for ((na, ta), (nb, tb)) in a.weights().iter().zip(b.weights()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
        let c = init_model(&small_cfg(), 10).unwrap();
        assert_ne!(a.weights()[0].1, c.weights()[0].1);
    }

    #[test]
    fn parameter_count_matches_shapes() {
        for cfg in [small_cfg(), DenoiserConfig::default()] {
            let state = init_model(&cfg, 1).unwrap();
            let total: usize = state.weights().iter().map(|(_, t)| t.numel()).sum();
            assert_eq!(total, cfg.param_count());
        }
    }

    #[test]
    fn zero_blocks_rejected() {
        let cfg = DenoiserConfig {
            num_blocks: 0,
            ..small_cfg()
        };
        assert!(init_model(&cfg, 1).is_err());
    }

    #[test]
    fn tap_indices_are_validated() {
        let cfg = DenoiserConfig {
            tap_blocks: Some(vec![3]),
            ..small_cfg()
        };
        assert!(cfg.validate().is_err());
        let cfg0 = DenoiserConfig {
            tap_blocks: Some(vec![0]),
            ..small_cfg()
        };
        assert!(cfg0.validate().is_err());
    }

    #[test]
    fn default_tap_is_first_quarter_block() {
        assert_eq!(DenoiserConfig::default().effective_taps(), vec![2]);
        assert_eq!(small_cfg().effective_taps(), vec![1]);
        let explicit_empty = DenoiserConfig {
            tap_blocks: Some(vec![]),
            ..small_cfg()
        };
        assert!(explicit_empty.effective_taps().is_empty());
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let state = init_model(&small_cfg(), 4).unwrap();
        let (x, t) = batch(5);
        let tape = Tape::new();
        let mv = state.to_vars(&tape, false);
        let trace = forward_with_taps(&mv, &x, &t).unwrap();
        assert_eq!(trace.pred.value().shape(), &[5, 2]);
        assert_eq!(trace.blocks.len(), 2);
        assert_eq!(trace.taps.len(), 1);
        assert_eq!(trace.taps[0].0, 1);
        assert_eq!(trace.taps[0].1.value().shape(), &[5, 8]);

        let tape2 = Tape::new();
        let mv2 = state.to_vars(&tape2, false);
        let trace2 = forward_with_taps(&mv2, &x, &t).unwrap();
        assert_eq!(trace.pred.value(), trace2.pred.value());
    }

    #[test]
    fn taps_do_not_change_the_prediction() {
        let base = small_cfg();
        let with_taps = DenoiserConfig {
            tap_blocks: Some(vec![1, 2]),
            ..base.clone()
        };
        let sa = init_model(&base, 4).unwrap();
        let mut sb = init_model(&with_taps, 4).unwrap();
        // Same seed and shapes, so the weights agree; copy to be explicit.
        sb.set_tensors(sa.tensors()).unwrap();
        let (x, t) = batch(3);
        let ta = Tape::new();
        let pa = forward_with_taps(&sa.to_vars(&ta, false), &x, &t).unwrap();
        let tb = Tape::new();
        let pb = forward_with_taps(&sb.to_vars(&tb, false), &x, &t).unwrap();
        assert_eq!(pa.pred.value(), pb.pred.value());
        assert_eq!(pb.taps.len(), 2);
    }

    #[test]
    fn single_sample_batch_works() {
        let state = init_model(&small_cfg(), 4).unwrap();
        let (x, t) = batch(1);
        let tape = Tape::new();
        let trace = forward_with_taps(&state.to_vars(&tape, false), &x, &t).unwrap();
        assert_eq!(trace.pred.value().shape(), &[1, 2]);
    }

    #[test]
    fn forward_rejects_wrong_shapes() {
        let state = init_model(&small_cfg(), 4).unwrap();
        let tape = Tape::new();
        let mv = state.to_vars(&tape, false);
        let bad_x = Tensor::zeros(vec![3, 5]);
        let t = Tensor::zeros(vec![3]);
        assert!(forward_with_taps(&mv, &bad_x, &t).is_err());
        let x = Tensor::zeros(vec![3, 2]);
        let bad_t = Tensor::zeros(vec![4]);
        assert!(forward_with_taps(&mv, &x, &bad_t).is_err());
    }

    #[test]
    fn time_embedding_is_bounded_and_distinct() {
        let emb = time_embedding(&[0.0, 0.25, 0.5, 0.75, 1.0], 8);
        assert_eq!(emb.shape(), &[5, 8]);
        assert!(emb.data().iter().all(|v| v.abs() <= 1.0));
        assert_ne!(emb.row(1), emb.row(2));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let state = init_model(&small_cfg(), 21).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&state, 137, &mut buf).unwrap();
        let (back, step) = load_checkpoint(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(step, 137);
        assert_eq!(back.seed, 21);
        for ((na, ta), (nb, tb)) in state.weights().iter().zip(back.weights()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn corrupt_checkpoint_names_first_bad_field() {
        let state = init_model(&small_cfg(), 21).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&state, 0, &mut buf).unwrap();

        // Manifest with the seed removed.
        let line_end = buf.iter().position(|&b| b == b'\n').unwrap();
        let mut manifest: serde_json::Value =
            serde_json::from_slice(&buf[..line_end]).unwrap();
        manifest.as_object_mut().unwrap().remove("seed");
        let mut corrupted = serde_json::to_vec(&manifest).unwrap();
        corrupted.push(b'\n');
        corrupted.extend_from_slice(&buf[line_end + 1..]);
        match load_checkpoint(&mut std::io::Cursor::new(&corrupted)).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "seed"),
            other => panic!("unexpected error {other}"),
        }

        // Truncated weight payload.
        let cut = buf.len() - 7;
        match load_checkpoint(&mut std::io::Cursor::new(&buf[..cut])).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "weights.b_out"),
            other => panic!("unexpected error {other}"),
        }
    }
}
