//! Versioned model checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every parameter
//! section as little-endian `f64` values in the order the header lists them.

use margot::autodiff::{AdamWState, GeneratorParams, LayerParams, LayerSpec, Tensor2};
use margot::tabular::FittedTransformer;
use margot::train::{ConditioningSpec, EpochLoss, TrainConfig, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"MARGOTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    chain: Vec<LayerSpec>,
    transformer: FittedTransformer,
    config: TrainConfig,
    conditioning: Option<ConditioningSpec>,
    loss_trace: Vec<EpochLoss>,
    optimizer_step: u64,
    params_version: u64,
    sections: Vec<Section>,
}

fn sections(params: &GeneratorParams) -> Vec<(String, &[f64])> {
    let mut out: Vec<(String, &[f64])> = Vec::new();
    for (i, l) in params.layers.iter().enumerate() {
        match l {
            LayerParams::Dense { weight, bias } => {
                out.push((format!("layer{i}.weight"), weight.data()));
                out.push((format!("layer{i}.bias"), bias));
            }
            LayerParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                out.push((format!("layer{i}.gamma"), gamma));
                out.push((format!("layer{i}.beta"), beta));
                out.push((format!("layer{i}.running_mean"), running_mean));
                out.push((format!("layer{i}.running_var"), running_var));
            }
            LayerParams::Stateless => {}
        }
    }
    out.push(("adamw.m".into(), &params.optim.m));
    out.push(("adamw.v".into(), &params.optim.v));
    out
}

pub fn encode(model: &TrainedModel) -> Vec<u8> {
    let secs = sections(&model.params);
    let header = Header {
        chain: model.chain.clone(),
        transformer: model.transformer.clone(),
        config: model.config.clone(),
        conditioning: model.conditioning.clone(),
        loss_trace: model.loss_trace.clone(),
        optimizer_step: model.params.optim.step,
        params_version: model.params.version,
        sections: secs
            .iter()
            .map(|(n, v)| Section {
                name: n.clone(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out =
        Vec::with_capacity(20 + json.len() + secs.iter().map(|s| s.1.len() * 8).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, v) in secs {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Format(format!("checkpoint: {}", msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("section too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> CliResult<TrainedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a margot checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!(
            "unsupported format version {version} (this build reads version {VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| bad("header length overflows"))?;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    margot::autodiff::validate_chain(&header.chain)?;

    let mut secs = header.sections.iter();
    let mut next = |name: String, len: usize, r: &mut Reader| -> CliResult<Vec<f64>> {
        let s = secs
            .next()
            .ok_or_else(|| bad(format!("missing section {name}")))?;
        if s.name != name || s.len != len {
            return Err(bad(format!(
                "section {} of length {} where {name} of length {len} was expected",
                s.name, s.len
            )));
        }
        r.floats(len)
    };
    let mut layers = Vec::with_capacity(header.chain.len());
    for (i, spec) in header.chain.iter().enumerate() {
        layers.push(match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let w = next(format!("layer{i}.weight"), in_dim * out_dim, &mut r)?;
                LayerParams::Dense {
                    weight: Tensor2::from_vec(out_dim, in_dim, w)?,
                    bias: next(format!("layer{i}.bias"), out_dim, &mut r)?,
                }
            }
            LayerSpec::BatchNorm { dim, .. } => LayerParams::BatchNorm {
                gamma: next(format!("layer{i}.gamma"), dim, &mut r)?,
                beta: next(format!("layer{i}.beta"), dim, &mut r)?,
                running_mean: next(format!("layer{i}.running_mean"), dim, &mut r)?,
                running_var: next(format!("layer{i}.running_var"), dim, &mut r)?,
            },
            _ => LayerParams::Stateless,
        });
    }
    let mut params = GeneratorParams {
        layers,
        optim: AdamWState::default(),
        version: header.params_version,
    };
    let n = params.trainable_len();
    params.optim = AdamWState {
        m: next("adamw.m".into(), n, &mut r)?,
        v: next("adamw.v".into(), n, &mut r)?,
        step: header.optimizer_step,
    };
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let out_dim = header.chain.last().map_or(0, LayerSpec::out_dim);
    if out_dim != header.transformer.width {
        return Err(bad("generator output width does not match the transformer"));
    }
    Ok(TrainedModel {
        chain: header.chain,
        params,
        transformer: header.transformer,
        config: header.config,
        conditioning: header.conditioning,
        loss_trace: header.loss_trace,
    })
}
