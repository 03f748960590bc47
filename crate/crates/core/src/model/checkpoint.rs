//! Checkpoint file format (all integers little-endian):
//!
//! ```text
//! "SFAU" | u32 version | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 data[numel]
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::layers::Module;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SFAU";
pub const CHECKPOINT_VERSION: u32 = 1;

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(out: &mut W, tensors: &[(String, Tensor)]) -> Result<()> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| ckpt_err(format!("name too long: {name}")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.numel());
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ckpt_err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(ckpt_err("not an SFAU checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| ckpt_err("tensor name is not UTF-8"))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(4).ok_or_else(|| ckpt_err("tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| ckpt_err(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(ckpt_err("trailing bytes after last tensor"));
    }
    Ok(out)
}

/// Write every named tensor (trainable and buffers). The file appears
/// atomically: data goes to a sibling temp file which is then renamed.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    model.visit("", &mut |n, t, _| tensors.push((n.to_string(), t.detach())));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &tensors)?;
    let tmp = path.with_extension("tmp-ckpt");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Build a model for `config` and overwrite its tensors from `path`.
/// Every tensor must be present with a matching shape.
pub fn load(path: &Path, config: &ModelConfig) -> Result<Model> {
    let entries = read_checkpoint(&mut fs::File::open(path)?)?;
    let mut model = Model::build(config)?;
    let n_entries = entries.len();
    let mut by_name: HashMap<String, Tensor> = entries.into_iter().collect();
    if by_name.len() != n_entries {
        return Err(ckpt_err("duplicate tensor names"));
    }
    let mut failure = None;
    let mut expected = 0;
    model.visit_mut("", &mut |name, slot, _| {
        expected += 1;
        if failure.is_some() {
            return;
        }
        match by_name.remove(name) {
            Some(t) if t.shape() == slot.shape() => *slot = t,
            Some(t) => {
                failure = Some(Error::ShapeMismatch {
                    op: "checkpoint tensor (model vs file)",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                })
            }
            None => failure = Some(ckpt_err(format!("missing tensor {name}"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(ckpt_err(format!(
            "checkpoint has {n_entries} tensors, model expects {expected} (unexpected {extra})"
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("w".into(), t)]).unwrap();
        assert_eq!(&buf[..4], b"SFAU");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..14], &1u16.to_le_bytes());
        assert_eq!(buf[14], b'w');
        assert_eq!(buf[15], 1);
        assert_eq!(&buf[16..20], &2u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&buf[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(buf.len(), 28);
        let back = read_checkpoint(&mut &buf[..]).unwrap();
        assert_eq!(back[0].1.data(), &[1.0, -2.5]);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a".into(), t)]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut &bad[..]), Err(Error::Checkpoint(_))));
        assert!(read_checkpoint(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_checkpoint(&mut &bad[..]).is_err());
    }
}
