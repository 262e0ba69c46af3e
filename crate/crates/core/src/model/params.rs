//! Learnable weights, generic over what is stored per buffer.
//!
//! The same structure carries values (`Tensor`), graph handles (`Var`) and
//! gradients, so registering parameters on a graph and collecting their
//! gradients are both a `map`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1x1 convolution that lifts a flattened `2 x T` segment to `C` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams<T> {
    /// `[1, 1, 2T, C]`
    pub weight: T,
    /// `[C]`
    pub bias: T,
}

/// One SCE block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    /// `[k, k, C, C]`, applied before the ReLU.
    pub conv1_weight: T,
    /// `[C]`, added after the ReLU.
    pub conv1_bias: T,
    /// `[k, k, C, C]`
    pub conv2_weight: T,
    /// `[C]`
    pub conv2_bias: T,
    /// `[H'W', H'W'/r_s]`
    pub spatial_w1: T,
    /// `[H'W'/r_s, H'W']`
    pub spatial_w2: T,
    /// `[C, C/r_c]`: the channel reduction, stored input-major.
    pub channel_w1: T,
    /// `[C/r_c, C]`: the channel expansion, stored input-major.
    pub channel_w2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrnetParams<T> {
    pub embed: EmbedParams<T>,
    /// Present only when `t_obs != t_pred`.
    pub embed_pred: Option<EmbedParams<T>>,
    pub blocks: Vec<BlockParams<T>>,
    /// `[2C, C]` fusion of the differenced state with the periodic
    /// prediction state.
    pub fuse: T,
    /// `[C, 2 T_pred]`
    pub decoder_weight: T,
    /// `[2 T_pred]`
    pub decoder_bias: T,
}

impl<T> EmbedParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EmbedParams<U> {
        EmbedParams {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> BlockParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            conv1_weight: f(&self.conv1_weight),
            conv1_bias: f(&self.conv1_bias),
            conv2_weight: f(&self.conv2_weight),
            conv2_bias: f(&self.conv2_bias),
            spatial_w1: f(&self.spatial_w1),
            spatial_w2: f(&self.spatial_w2),
            channel_w1: f(&self.channel_w1),
            channel_w2: f(&self.channel_w2),
        }
    }

    fn fields(&self) -> [(&'static str, &T); 8] {
        [
            ("conv1.weight", &self.conv1_weight),
            ("conv1.bias", &self.conv1_bias),
            ("conv2.weight", &self.conv2_weight),
            ("conv2.bias", &self.conv2_bias),
            ("spatial.w1", &self.spatial_w1),
            ("spatial.w2", &self.spatial_w2),
            ("channel.w1", &self.channel_w1),
            ("channel.w2", &self.channel_w2),
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 8] {
        [
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
            &mut self.spatial_w1,
            &mut self.spatial_w2,
            &mut self.channel_w1,
            &mut self.channel_w2,
        ]
    }
}

impl<T> PrnetParams<T> {
    /// Applies `f` to every buffer in [`PrnetParams::entries`] order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PrnetParams<U> {
        PrnetParams {
            embed: self.embed.map(&mut f),
            embed_pred: self.embed_pred.as_ref().map(|e| e.map(&mut f)),
            blocks: self.blocks.iter().map(|b| b.map(&mut f)).collect(),
            fuse: f(&self.fuse),
            decoder_weight: f(&self.decoder_weight),
            decoder_bias: f(&self.decoder_bias),
        }
    }

    /// Every buffer with its stable checkpoint name.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("embed.weight".to_string(), &self.embed.weight),
            ("embed.bias".to_string(), &self.embed.bias),
        ];
        if let Some(e) = &self.embed_pred {
            out.push(("embed_pred.weight".to_string(), &e.weight));
            out.push(("embed_pred.bias".to_string(), &e.bias));
        }
        for (m, block) in self.blocks.iter().enumerate() {
            for (name, t) in block.fields() {
                out.push((format!("blocks.{m}.{name}"), t));
            }
        }
        out.push(("fuse.weight".to_string(), &self.fuse));
        out.push(("decoder.weight".to_string(), &self.decoder_weight));
        out.push(("decoder.bias".to_string(), &self.decoder_bias));
        out
    }

    /// Mutable buffers in [`PrnetParams::entries`] order.
    pub fn buffers_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed.weight, &mut self.embed.bias];
        if let Some(e) = &mut self.embed_pred {
            out.push(&mut e.weight);
            out.push(&mut e.bias);
        }
        for block in &mut self.blocks {
            out.extend(block.fields_mut());
        }
        out.push(&mut self.fuse);
        out.push(&mut self.decoder_weight);
        out.push(&mut self.decoder_bias);
        out
    }
}

/// Shapes of every buffer for `config`, in entry order.
pub fn param_shapes(config: &ModelConfig) -> PrnetParams<Vec<usize>> {
    let c = config.channels;
    let k = config.kernel;
    let embed = |t: usize| EmbedParams {
        weight: vec![1, 1, 2 * t, c],
        bias: vec![c],
    };
    let block = BlockParams {
        conv1_weight: vec![k, k, c, c],
        conv1_bias: vec![c],
        conv2_weight: vec![k, k, c, c],
        conv2_bias: vec![c],
        spatial_w1: vec![config.pooled_cells(), config.spatial_hidden()],
        spatial_w2: vec![config.spatial_hidden(), config.pooled_cells()],
        channel_w1: vec![c, config.channel_hidden()],
        channel_w2: vec![config.channel_hidden(), c],
    };
    PrnetParams {
        embed: embed(config.t_obs),
        embed_pred: config.separate_pred_embedding().then(|| embed(config.t_pred)),
        blocks: vec![block; config.blocks],
        fuse: vec![2 * c, c],
        decoder_weight: vec![c, 2 * config.t_pred],
        decoder_bias: vec![2 * config.t_pred],
    }
}

fn is_bias(shape: &[usize]) -> bool {
    shape.len() == 1
}

/// Fan-in of a weight buffer: every axis but the output axis.
fn fan_in(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

impl PrnetParams<Tensor> {
    /// Weights uniform in `(-a, a)` with `a = sqrt(1 / fan_in)`, biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(param_shapes(config).map(|shape| {
            if is_bias(shape) {
                Tensor::zeros(shape.clone())
            } else {
                let a = (1.0 / fan_in(shape) as f64).sqrt();
                Tensor::uniform(shape.clone(), -a, a, &mut rng)
            }
        }))
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        param_shapes(config).map(|s| Tensor::zeros(s.clone()))
    }

    pub fn count(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks every buffer against the shapes `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = param_shapes(config);
        let want = expected.entries();
        let have = self.entries();
        if want.len() != have.len() {
            return Err(Error::Config(format!(
                "expected {} parameter buffers, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((name, shape), (_, t)) in want.iter().zip(&have) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}
