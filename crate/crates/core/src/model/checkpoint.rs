//! Versioned binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"MRSR"
//! version  u32
//! variant  u8        0 = SR, 1 = FR
//! d        u32       embedding dimension (FR stack input is 2d)
//! h1, h2   u32, u32
//! classes  u32
//! dropout  f32
//! bn_eps   f32
//! bn_mom   f32
//! sections tag[4] + u64 payload length + payload, until EOF
//!   "PARM"  block1 {W, b, gamma, beta, running_mean, running_var},
//!           block2 {…same…}, head {W, b}; f32 each, sizes implied by the header
//!   "ADAM"  optional: step u64, beta1/beta2/eps/weight_decay f64, slot count u32,
//!           then per slot: len u64, m[len] f32, v[len] f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, StackDims, StackParams, Variant};
use crate::error::{Error, Result};
use crate::optim::{AdamWConfig, AdamWState};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"MRSR";
const VERSION: u32 = 1;
const PARAMS_TAG: &[u8; 4] = b"PARM";
const ADAM_TAG: &[u8; 4] = b"ADAM";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamWState>,
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &Model, optimizer: Option<&AdamWState>) -> Result<()> {
    let stack = model.stack();
    let dims = stack.dims();
    let mut header = Vec::with_capacity(40);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.push(match model.variant() {
        Variant::Sr => 0,
        Variant::Fr => 1,
    });
    for v in [model.embed_dim(), dims.hidden1, dims.hidden2, dims.classes] {
        header.extend_from_slice(
            &u32::try_from(v)
                .map_err(|_| Error::Format("dimension exceeds u32".into()))?
                .to_le_bytes(),
        );
    }
    header.extend_from_slice(&stack.dropout_rate.to_le_bytes());
    header.extend_from_slice(&stack.block1.bn.eps.to_le_bytes());
    header.extend_from_slice(&stack.block1.bn.momentum.to_le_bytes());
    out.write_all(&header)?;

    let mut params = Vec::new();
    for block in [&stack.block1, &stack.block2] {
        put_f32s(&mut params, block.linear.weight.data());
        put_f32s(&mut params, &block.linear.bias);
        put_f32s(&mut params, &block.bn.gamma);
        put_f32s(&mut params, &block.bn.beta);
        put_f32s(&mut params, &block.bn.running_mean);
        put_f32s(&mut params, &block.bn.running_var);
    }
    put_f32s(&mut params, stack.head.weight.data());
    put_f32s(&mut params, &stack.head.bias);
    write_section(&mut out, PARAMS_TAG, &params)?;

    if let Some(state) = optimizer {
        let mut adam = Vec::new();
        adam.extend_from_slice(&state.step.to_le_bytes());
        for v in [
            state.config.beta1,
            state.config.beta2,
            state.config.eps,
            state.config.weight_decay,
        ] {
            adam.extend_from_slice(&v.to_le_bytes());
        }
        adam.extend_from_slice(&(state.m.len() as u32).to_le_bytes());
        for (m, v) in state.m.iter().zip(&state.v) {
            adam.extend_from_slice(&(m.len() as u64).to_le_bytes());
            put_f32s(&mut adam, m);
            put_f32s(&mut adam, v);
        }
        write_section(&mut out, ADAM_TAG, &adam)?;
    }
    out.flush()?;
    Ok(())
}

fn write_section<W: Write>(out: &mut W, tag: &[u8; 4], payload: &[u8]) -> Result<()> {
    out.write_all(tag)?;
    out.write_all(&(payload.len() as u64).to_le_bytes())?;
    out.write_all(payload)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::from_vec(rows, cols, self.f32s(rows * cols)?)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let variant = match cur.u8()? {
        0 => Variant::Sr,
        1 => Variant::Fr,
        v => return Err(Error::Format(format!("unknown variant tag {v}"))),
    };
    let embed_dim = cur.u32()? as usize;
    let hidden1 = cur.u32()? as usize;
    let hidden2 = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    let dropout_rate = cur.f32()?;
    let bn_eps = cur.f32()?;
    let bn_momentum = cur.f32()?;
    let input = match variant {
        Variant::Sr => embed_dim,
        Variant::Fr => 2 * embed_dim,
    };
    let dims = StackDims {
        input,
        hidden1,
        hidden2,
        classes,
    };

    let mut stack = None;
    let mut optimizer = None;
    while !cur.done() {
        let tag: [u8; 4] = cur.take(4)?.try_into().unwrap();
        let len = usize::try_from(cur.u64()?).map_err(|_| Error::Format("section too large".into()))?;
        let mut sec = Cursor {
            buf: cur.take(len)?,
            pos: 0,
        };
        match &tag {
            PARAMS_TAG => {
                let mut s = StackParams::zeros_with_bn(dims, dropout_rate, bn_eps, bn_momentum);
                for (block, din, dout) in [(&mut s.block1, input, hidden1), (&mut s.block2, hidden1, hidden2)] {
                    block.linear.weight = sec.matrix(din, dout)?;
                    block.linear.bias = sec.f32s(dout)?;
                    block.bn.gamma = sec.f32s(dout)?;
                    block.bn.beta = sec.f32s(dout)?;
                    block.bn.running_mean = sec.f32s(dout)?;
                    block.bn.running_var = sec.f32s(dout)?;
                }
                s.head.weight = sec.matrix(hidden2, classes)?;
                s.head.bias = sec.f32s(classes)?;
                if !sec.done() {
                    return Err(Error::Format("trailing bytes in PARM section".into()));
                }
                s.validate()?;
                stack = Some(s);
            }
            ADAM_TAG => {
                let step = sec.u64()?;
                let config = AdamWConfig {
                    beta1: sec.f64()?,
                    beta2: sec.f64()?,
                    eps: sec.f64()?,
                    weight_decay: sec.f64()?,
                };
                let slots = sec.u32()? as usize;
                let mut m = Vec::with_capacity(slots);
                let mut v = Vec::with_capacity(slots);
                for _ in 0..slots {
                    let n = usize::try_from(sec.u64()?).map_err(|_| Error::Format("slot too large".into()))?;
                    m.push(sec.f32s(n)?);
                    v.push(sec.f32s(n)?);
                }
                if !sec.done() {
                    return Err(Error::Format("trailing bytes in ADAM section".into()));
                }
                optimizer = Some(AdamWState { step, config, m, v });
            }
            other => {
                return Err(Error::Format(format!(
                    "unknown checkpoint section {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        }
    }
    let stack = stack.ok_or_else(|| Error::Format("checkpoint has no PARM section".into()))?;
    if let Some(opt) = &optimizer {
        let expected = stack.slot_lengths();
        let got: Vec<usize> = opt.m.iter().map(Vec::len).collect();
        if expected != got {
            return Err(Error::Format("optimizer slots do not match model parameters".into()));
        }
    }
    Ok(Checkpoint {
        model: Model::from_stack(variant, stack)?,
        optimizer,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, optimizer: Option<&AdamWState>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, optimizer)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
