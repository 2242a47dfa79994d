//! DDLC checkpoint container.
//!
//! Layout, little-endian: `"DDLC"`, u32 version, u32 length + JSON
//! hyperparameter block, u64 completed epochs, u32 tensor count, then per
//! tensor (u32 name length, UTF-8 name, u32 rows, u32 cols, f64 values), then
//! the same tensor records for the Adam first moments and second moments,
//! then the u64 step counter.

use std::fs;
use std::path::Path;

use crate::config::HyperParams;
use crate::error::{Error, FormatError, Result};
use crate::math::Matrix;
use crate::model::ModelParams;
use crate::trainer::OptimState;

pub const DDLC_MAGIC: &[u8; 4] = b"DDLC";
const DDLC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: HyperParams,
    pub epochs_done: usize,
    pub params: ModelParams,
    pub optim: OptimState,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Data(format!("{v} does not fit the checkpoint header")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensors<'a>(
    buf: &mut Vec<u8>,
    tensors: impl IntoIterator<Item = (&'a str, &'a Matrix)>,
) -> Result<()> {
    for (name, m) in tensors {
        put_u32(buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(buf, m.rows())?;
        put_u32(buf, m.cols())?;
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DDLC_MAGIC);
    buf.extend_from_slice(&DDLC_VERSION.to_le_bytes());
    let hyper = serde_json::to_vec(&ck.hyper).map_err(|e| Error::json("<checkpoint>", e))?;
    put_u32(&mut buf, hyper.len())?;
    buf.extend_from_slice(&hyper);
    buf.extend_from_slice(&(ck.epochs_done as u64).to_le_bytes());

    let named = ck.params.named();
    put_u32(&mut buf, named.len())?;
    put_tensors(&mut buf, named.iter().map(|(n, m)| (n.as_str(), *m)))?;
    if ck.optim.first.len() != named.len() || ck.optim.second.len() != named.len() {
        return Err(Error::Data(
            "optimizer moments do not match parameters".into(),
        ));
    }
    put_tensors(
        &mut buf,
        named
            .iter()
            .zip(&ck.optim.first)
            .map(|((n, _), m)| (n.as_str(), m)),
    )?;
    put_tensors(
        &mut buf,
        named
            .iter()
            .zip(&ck.optim.second)
            .map(|((n, _), m)| (n.as_str(), m)),
    )?;
    buf.extend_from_slice(&ck.optim.step.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Matrix), FormatError> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| FormatError::InvalidHeader("tensor name is not UTF-8".into()))?;
        let (rows, cols) = (self.u32()?, self.u32()?);
        let count = rows.checked_mul(cols).ok_or_else(|| {
            FormatError::InvalidHeader(format!("{name}: {rows}x{cols} overflows"))
        })?;
        let raw = self.take(count.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(FormatError::NonFiniteValue(i));
            }
            data.push(v);
        }
        let m = Matrix::from_vec(rows, cols, data)
            .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
        Ok((name, m))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let fmt = |k| Error::format("<checkpoint>", k);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| fmt(FormatError::BadMagic))? != DDLC_MAGIC {
        return Err(fmt(FormatError::BadMagic));
    }
    let version = r.u32().map_err(fmt)? as u32;
    if version != DDLC_VERSION {
        return Err(fmt(FormatError::UnsupportedVersion(version)));
    }
    let hyper_len = r.u32().map_err(fmt)?;
    let hyper: HyperParams = serde_json::from_slice(r.take(hyper_len).map_err(fmt)?)
        .map_err(|e| Error::json("<checkpoint>", e))?;
    hyper.validate()?;
    let epochs_done = r.u64().map_err(fmt)? as usize;
    let count = r.u32().map_err(fmt)?;
    let read_block = |r: &mut Reader| {
        (0..count)
            .map(|_| r.tensor())
            .collect::<std::result::Result<Vec<_>, _>>()
    };
    let tensors = read_block(&mut r).map_err(fmt)?;
    let first = read_block(&mut r).map_err(fmt)?;
    let second = read_block(&mut r).map_err(fmt)?;
    let step = r.u64().map_err(fmt)?;
    if r.pos != bytes.len() {
        return Err(fmt(FormatError::TrailingBytes));
    }

    let params = ModelParams::from_named(&hyper.model, tensors)?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let check = |block: Vec<(String, Matrix)>| -> Result<Vec<Matrix>> {
        block
            .into_iter()
            .zip(params.named())
            .map(|((n, m), (want, p))| {
                if n != want || m.shape() != p.shape() {
                    Err(Error::Data(format!(
                        "optimizer moment {n} does not match parameter {want}"
                    )))
                } else {
                    Ok(m)
                }
            })
            .collect()
    };
    debug_assert_eq!(names.len(), count);
    let optim = OptimState {
        first: check(first)?,
        second: check(second)?,
        step,
        beta1: hyper.train.beta1,
        beta2: hyper.train.beta2,
        eps: hyper.train.adam_eps,
    };
    Ok(Checkpoint {
        hyper,
        epochs_done,
        params,
        optim,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format { kind, .. } => Error::format(path, kind),
        other => other,
    })
}
