//! Encoder/decoder architecture description.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::net::{init_params, InitScheme, LayerKind, Network, ParamStore};

pub const ENCODER_PREFIX: &str = "encoder";
pub const DECODER_PREFIX: &str = "decoder";

/// Layer widths of the encoder `f` (relu hidden layers, linear bottleneck)
/// and the decoder (relu hidden layers, softmax output).
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchSpec {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub bottleneck_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub classes: usize,
}

impl ArchSpec {
    /// Encoder `800-800-d` and a single 800-unit decoder layer.
    pub fn mnist(bottleneck_dim: usize) -> Self {
        Self {
            input_dim: 784,
            encoder_hidden: alloc::vec![800, 800],
            bottleneck_dim,
            decoder_hidden: alloc::vec![800],
            classes: 10,
        }
    }

    pub fn build(&self) -> Result<Model> {
        if self.classes < 2 {
            return Err(config_err!("need at least two classes"));
        }
        let encoder = Network::mlp(
            ENCODER_PREFIX,
            self.input_dim,
            &self.encoder_hidden,
            self.bottleneck_dim,
            LayerKind::LinearOutput,
        )?;
        let decoder = Network::mlp(
            DECODER_PREFIX,
            self.bottleneck_dim,
            &self.decoder_hidden,
            self.classes,
            LayerKind::SoftmaxCe,
        )?;
        Ok(Model { arch: self.clone(), encoder, decoder })
    }

    /// Recovers the architecture from parameter shapes written by [`Model::init_params`].
    pub fn from_params(params: &ParamStore) -> Result<Self> {
        let widths = |prefix: &str| -> Result<Vec<(usize, usize)>> {
            let mut out = Vec::new();
            // Affine layers sit at even positions (affine, activation, affine, ...).
            let mut layer = 0;
            while let Some(p) = params.get(&format!("{prefix}.{layer}.weight")) {
                out.push(p.value.shape());
                layer += 2;
            }
            if out.is_empty() {
                return Err(config_err!("no {prefix} weights in parameter set"));
            }
            Ok(out)
        };
        let enc = widths(ENCODER_PREFIX)?;
        let dec = widths(DECODER_PREFIX)?;
        let spec = Self {
            input_dim: enc[0].0,
            encoder_hidden: enc[..enc.len() - 1].iter().map(|s| s.1).collect(),
            bottleneck_dim: enc[enc.len() - 1].1,
            decoder_hidden: dec[..dec.len() - 1].iter().map(|s| s.1).collect(),
            classes: dec[dec.len() - 1].1,
        };
        if dec[0].0 != spec.bottleneck_dim {
            return Err(config_err!(
                "decoder input width {} differs from bottleneck {}",
                dec[0].0,
                spec.bottleneck_dim
            ));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: ArchSpec,
    pub encoder: Network,
    pub decoder: Network,
}

impl Model {
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        init_params(&[&self.encoder, &self.decoder], seed, InitScheme::ScaledUniform)
    }

    /// Whether parameter `name` belongs to the encoder (θ, including `log_sigma`).
    pub fn is_encoder_param(name: &str) -> bool {
        name == crate::net::LOG_SIGMA || name.starts_with(ENCODER_PREFIX)
    }
}
