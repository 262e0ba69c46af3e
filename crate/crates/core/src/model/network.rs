//! PRNet forward pass.
//!
//! Each observed segment is embedded by a shared 1x1 convolution and encoded
//! by one stack of SCE blocks. The closeness state is differenced against
//! every periodic-closeness state, fused with the periodic-prediction states
//! and decoded into one residual forecast per period. Averaging
//! `residual + periodic prediction` over periods gives the flow forecast.

use super::config::ModelConfig;
use super::params::{BlockParams, EmbedParams, PrnetParams};
use crate::data::{ForecastInputs, SampleWindow};
use crate::error::{Error, Result};
use crate::graph::{Graph, Reduction, Var};
use crate::tensor::{Precision, Tensor};

/// `[H, W, 2, T]` segment to `[H, W, C]` features.
pub fn embed_segment(g: &mut Graph, segment: Var, embed: &EmbedParams<Var>) -> Result<Var> {
    let shape = g.shape(segment).to_vec();
    let &[h, w, 2, t] = shape.as_slice() else {
        return Err(Error::invalid(
            "embed_segment",
            format!("expected [H, W, 2, T], got {shape:?}"),
        ));
    };
    let flat = g.reshape(segment, &[h, w, 2 * t])?;
    g.conv2d(flat, embed.weight, Some(embed.bias), 0)
}

/// Local stage: `W2 * (relu(W1 * h) + b1) + b2`, both "same" padded.
pub fn sce_cnn(g: &mut Graph, h: Var, block: &BlockParams<Var>, padding: usize) -> Result<Var> {
    let a = g.conv2d(h, block.conv1_weight, None, padding)?;
    let a = g.relu(a)?;
    let a = g.add(a, block.conv1_bias)?;
    g.conv2d(a, block.conv2_weight, Some(block.conv2_bias), padding)
}

/// Spatial excitation over max-pooled salient cells. Returns the
/// `[H', W', C]` sigmoid gate.
pub fn sem(
    g: &mut Graph,
    h_vec: Var,
    block: &BlockParams<Var>,
    pooled_h: usize,
    pooled_w: usize,
) -> Result<Var> {
    let c = *g.shape(h_vec).last().unwrap_or(&0);
    let s = g.adaptive_max_pool2d(h_vec, pooled_h, pooled_w)?;
    let s = g.reshape(s, &[pooled_h * pooled_w, c])?;
    let s = g.transpose(s)?;
    let e = g.linear(s, block.spatial_w1, None)?;
    let e = g.relu(e)?;
    let e = g.linear(e, block.spatial_w2, None)?;
    let e = g.sigmoid(e)?;
    let e = g.transpose(e)?;
    g.reshape(e, &[pooled_h, pooled_w, c])
}

/// Channel excitation: pools the spatial gate to a channel descriptor,
/// squeezes it through a bottleneck and rescales `h_vec` channel-wise.
pub fn cem(g: &mut Graph, h_tilde_s: Var, h_vec: Var, block: &BlockParams<Var>) -> Result<Var> {
    let c = g.global_avg_pool(h_tilde_s)?;
    let z = g.linear(c, block.channel_w1, None)?;
    let z = g.relu(z)?;
    let z = g.linear(z, block.channel_w2, None)?;
    let gate = g.sigmoid(z)?;
    g.mul(h_vec, gate)
}

pub fn sce_block(
    g: &mut Graph,
    h: Var,
    block: &BlockParams<Var>,
    config: &ModelConfig,
) -> Result<Var> {
    let h_vec = sce_cnn(g, h, block, config.padding())?;
    let spatial = sem(g, h_vec, block, config.pooled_h, config.pooled_w)?;
    cem(g, spatial, h_vec, block)
}

pub fn encode(
    g: &mut Graph,
    embedding: Var,
    blocks: &[BlockParams<Var>],
    config: &ModelConfig,
) -> Result<Var> {
    blocks
        .iter()
        .try_fold(embedding, |h, block| sce_block(g, h, block, config))
}

/// Closeness state minus each periodic-closeness state, broadcast over the
/// leading period axis.
pub fn diff(g: &mut Graph, h_x: Var, h_px: Var) -> Result<Var> {
    let (sx, sp) = (g.shape(h_x), g.shape(h_px));
    if sp.len() != sx.len() + 1 || sp[1..] != *sx {
        return Err(Error::ShapeMismatch {
            op: "diff",
            lhs: sx.to_vec(),
            rhs: sp.to_vec(),
        });
    }
    g.sub(h_x, h_px)
}

/// Channel concat of `[P, H, W, C]` states followed by a shared `2C -> C`
/// linear map.
pub fn fuse(g: &mut Graph, diff_h: Var, h_py: Var, weight: Var) -> Result<Var> {
    if g.shape(diff_h) != g.shape(h_py) || g.shape(diff_h).len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            lhs: g.shape(diff_h).to_vec(),
            rhs: g.shape(h_py).to_vec(),
        });
    }
    let cat = g.concat(diff_h, h_py, 3)?;
    g.linear(cat, weight, None)
}

/// Per-cell `C -> 2 T_pred` map, reshaped to `[P, H, W, 2, T_pred]`.
pub fn decode(g: &mut Graph, fused: Var, weight: Var, bias: Var, t_pred: usize) -> Result<Var> {
    let y = g.linear(fused, weight, Some(bias))?;
    let mut shape = g.shape(y).to_vec();
    shape.pop();
    shape.extend([2, t_pred]);
    g.reshape(y, &shape)
}

/// Stacks `[H, W, C]` states into `[P, H, W, C]`.
fn stack(g: &mut Graph, states: &[Var]) -> Result<Var> {
    let mut lifted = Vec::with_capacity(states.len());
    for &s in states {
        let mut shape = vec![1];
        shape.extend_from_slice(g.shape(s));
        lifted.push(g.reshape(s, &shape)?);
    }
    let (&first, rest) = lifted
        .split_first()
        .ok_or_else(|| Error::invalid("stack", "no states"))?;
    rest.iter().try_fold(first, |acc, &s| g.concat(acc, s, 0))
}

/// `mean_p (residual[p] + periodic[p])`.
pub fn reconstruct(delta_hat: &Tensor, periodic_prediction: &Tensor) -> Result<Tensor> {
    if delta_hat.shape() != periodic_prediction.shape() || delta_hat.ndim() == 0 {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            lhs: delta_hat.shape().to_vec(),
            rhs: periodic_prediction.shape().to_vec(),
        });
    }
    let periods = delta_hat.shape()[0];
    let inner = delta_hat.numel() / periods.max(1);
    let (d, y) = (delta_hat.data(), periodic_prediction.data());
    // Running mean: exact when every period agrees.
    let mut out = vec![0.0; inner];
    for p in 0..periods {
        let base = p * inner;
        let k = (p + 1) as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o += (d[base + i] + y[base + i] - *o) / k;
        }
    }
    Tensor::new(delta_hat.shape()[1..].to_vec(), out)
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Prnet {
    config: ModelConfig,
    params: PrnetParams<Tensor>,
}

impl Prnet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = PrnetParams::init(&config, seed)?;
        Ok(Prnet { config, params })
    }

    pub fn from_params(config: ModelConfig, params: PrnetParams<Tensor>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Prnet { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &PrnetParams<Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PrnetParams<Tensor> {
        &mut self.params
    }

    pub fn into_params(self) -> PrnetParams<Tensor> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Places every parameter on `g` as a leaf.
    pub fn register(&self, g: &mut Graph, requires_grad: bool) -> PrnetParams<Var> {
        self.params.map(|t| g.leaf(t.clone(), requires_grad))
    }

    fn embedding_for<'a>(&self, vars: &'a PrnetParams<Var>, t: usize) -> Result<&'a EmbedParams<Var>> {
        if t == self.config.t_obs {
            Ok(&vars.embed)
        } else if t == self.config.t_pred {
            Ok(vars.embed_pred.as_ref().unwrap_or(&vars.embed))
        } else {
            Err(Error::invalid(
                "embed_segment",
                format!(
                    "segment length {t} matches neither t_obs {} nor t_pred {}",
                    self.config.t_obs, self.config.t_pred
                ),
            ))
        }
    }

    /// Embeds a segment with the embedding matching its length.
    pub fn embed(&self, g: &mut Graph, vars: &PrnetParams<Var>, segment: Var) -> Result<Var> {
        let t = *g.shape(segment).last().unwrap_or(&0);
        let embed = self.embedding_for(vars, t)?;
        embed_segment(g, segment, embed)
    }

    fn encode_segment(&self, g: &mut Graph, vars: &PrnetParams<Var>, segment: Tensor) -> Result<Var> {
        let seg = g.input(segment);
        let z = self.embed(g, vars, seg)?;
        encode(g, z, &vars.blocks, &self.config)
    }

    fn check_inputs(&self, sample: &ForecastInputs) -> Result<()> {
        let c = &self.config;
        let (h, w, p) = (c.height, c.width, c.periods);
        let expect = [
            ("closeness", sample.closeness.shape(), vec![h, w, 2, c.t_obs]),
            (
                "periodic_closeness",
                sample.periodic_closeness.shape(),
                vec![p, h, w, 2, c.t_obs],
            ),
            (
                "periodic_prediction",
                sample.periodic_prediction.shape(),
                vec![p, h, w, 2, c.t_pred],
            ),
        ];
        for (name, got, want) in expect {
            if got != want.as_slice() {
                return Err(Error::invalid(
                    "forward",
                    format!("{name} has shape {got:?}, model expects {want:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Records the full pipeline on `g`, returning the `[P, H, W, 2, T_pred]`
    /// residual forecast.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &PrnetParams<Var>,
        sample: &ForecastInputs,
    ) -> Result<Var> {
        self.check_inputs(sample)?;
        let periods = self.config.periods;
        let h_x = self.encode_segment(g, vars, sample.closeness.clone())?;
        let mut h_px = Vec::with_capacity(periods);
        let mut h_py = Vec::with_capacity(periods);
        for p in 0..periods {
            h_px.push(self.encode_segment(g, vars, sample.periodic_closeness.index_axis0(p))?);
        }
        for p in 0..periods {
            h_py.push(self.encode_segment(g, vars, sample.periodic_prediction.index_axis0(p))?);
        }
        let h_px = stack(g, &h_px)?;
        let h_py = stack(g, &h_py)?;
        let d = diff(g, h_x, h_px)?;
        let fused = fuse(g, d, h_py, vars.fuse)?;
        decode(g, fused, vars.decoder_weight, vars.decoder_bias, self.config.t_pred)
    }

    /// Residual forecast without recording gradients.
    pub fn predict_residual(&self, sample: &ForecastInputs, precision: Precision) -> Result<Tensor> {
        let mut g = Graph::with_precision(precision);
        let vars = self.register(&mut g, false);
        let out = self.forward(&mut g, &vars, sample)?;
        Ok(g.value(out).clone())
    }

    /// Flow forecast `[H, W, 2, T_pred]` in the sample's units.
    pub fn predict(&self, sample: &ForecastInputs, precision: Precision) -> Result<Tensor> {
        let delta = self.predict_residual(sample, precision)?;
        reconstruct(&delta, &sample.periodic_prediction)
    }

    /// L1 residual loss on one sample and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        sample: &SampleWindow,
        reduction: Reduction,
        precision: Precision,
    ) -> Result<(f64, PrnetParams<Tensor>)> {
        let mut g = Graph::with_precision(precision);
        let vars = self.register(&mut g, true);
        let pred = self.forward(&mut g, &vars, &sample.inputs)?;
        let target = g.input(sample.residual.clone());
        let loss = g.l1_loss(pred, target, reduction)?;
        let value = g.value(loss).data()[0];
        g.backward(loss)?;
        let grads = vars.map(|&v| g.grad(v).cloned().expect("parameter leaf"));
        Ok((value, grads))
    }
}
