//! Binary model container.
//!
//! Layout: the 8-byte magic `VPNCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! parameter tensor as little-endian `f64` in [`Mlp::params`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaseArch, BaseClassifier, Generator, Linear, Mlp};
use crate::autodiff::Tensor;
use crate::{Result, VpnError};

const MAGIC: &[u8; 8] = b"VPNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
enum Header {
    Base {
        arch: BaseArch,
        d: usize,
        class_count: usize,
        hidden: usize,
        shapes: Vec<[usize; 2]>,
    },
    Generator {
        arch: String,
        d: usize,
        class_count: usize,
        hidden: usize,
        gamma: f64,
        cap: f64,
        trained_steps: u64,
        shapes: Vec<[usize; 2]>,
    },
}

/// Any model a checkpoint file can hold.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Base(BaseClassifier),
    Generator(Generator),
}

fn shapes(net: &Mlp) -> Vec<[usize; 2]> {
    net.params().iter().map(|p| p.shape()).collect()
}

fn encode(header: &Header, net: &Mlp) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| VpnError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(VpnError::Format("checkpoint is truncated".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn decode(mut bytes: &[u8]) -> Result<Checkpoint> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(VpnError::Format("not a VPN checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(VpnError::Format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(&mut bytes, len)?)
        .map_err(|e| VpnError::Format(format!("checkpoint header: {e}")))?;

    let shapes = match &header {
        Header::Base { shapes, .. } | Header::Generator { shapes, .. } => shapes,
    };
    if shapes.len() % 2 != 0 {
        return Err(VpnError::Format("odd number of parameter tensors".into()));
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for &[r, c] in shapes {
        let raw = take(&mut bytes, r * c * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(r, c, data)?);
    }
    if !bytes.is_empty() {
        return Err(VpnError::Format(format!("{} trailing bytes", bytes.len())));
    }
    let mut it = tensors.into_iter();
    let mut layers = Vec::new();
    while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(VpnError::Format("bias does not match its weight".into()));
        }
        layers.push(Linear { weight, bias });
    }
    for pair in layers.windows(2) {
        if pair[0].weight.cols() != pair[1].weight.rows() {
            return Err(VpnError::Format("consecutive layers do not chain".into()));
        }
    }
    if layers.is_empty() {
        return Err(VpnError::Format("checkpoint holds no layers".into()));
    }
    let net = Mlp::from_layers(layers);

    match header {
        Header::Base {
            arch,
            d,
            class_count,
            hidden,
            ..
        } => Ok(Checkpoint::Base(BaseClassifier::from_parts(
            arch,
            d,
            class_count,
            hidden,
            net,
        )?)),
        Header::Generator {
            arch,
            d,
            class_count,
            hidden,
            gamma,
            cap,
            trained_steps,
            ..
        } => {
            if arch != "dnn3" {
                return Err(VpnError::Format(format!("unknown generator architecture `{arch}`")));
            }
            Ok(Checkpoint::Generator(Generator::from_parts(
                d,
                class_count,
                hidden,
                gamma,
                cap,
                net,
                trained_steps,
            )?))
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        match self {
            Checkpoint::Base(m) => encode(
                &Header::Base {
                    arch: m.arch(),
                    d: m.dim(),
                    class_count: m.class_count(),
                    hidden: m.hidden(),
                    shapes: shapes(m.net()),
                },
                m.net(),
            ),
            Checkpoint::Generator(g) => encode(
                &Header::Generator {
                    arch: "dnn3".into(),
                    d: g.dim(),
                    class_count: g.class_count(),
                    hidden: g.hidden(),
                    gamma: g.gamma(),
                    cap: g.cap(),
                    trained_steps: g.trained_steps(),
                    shapes: shapes(g.net()),
                },
                g.net(),
            ),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

pub fn save_base(model: &BaseClassifier, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::Base(model.clone()).to_bytes()?)?;
    Ok(())
}

pub fn save_generator(model: &Generator, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::Generator(model.clone()).to_bytes()?)?;
    Ok(())
}

pub fn load_base(path: &Path) -> Result<BaseClassifier> {
    match read_checkpoint(path)? {
        Checkpoint::Base(m) => Ok(m),
        Checkpoint::Generator(_) => Err(VpnError::Format(format!(
            "{} holds a generator, expected a base model",
            path.display()
        ))),
    }
}

pub fn load_generator(path: &Path) -> Result<Generator> {
    match read_checkpoint(path)? {
        Checkpoint::Generator(g) => Ok(g),
        Checkpoint::Base(_) => Err(VpnError::Format(format!(
            "{} holds a base model, expected a generator",
            path.display()
        ))),
    }
}
