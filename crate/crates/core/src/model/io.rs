//! Flat binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "FDL1"                        magic
//! u8                            architecture tag (0 densenet-mini, 1 resnet-mini)
//! u32 + bytes                   ModelSpec as JSON
//! u32                           parameter array count
//!   per array: u64 len, len × f64
//! u32                           batchnorm state count
//!   per state: u64 channels, channels × f64 mean, channels × f64 var
//! ```

use std::io::{Read, Write};

use super::{ModelGraph, ModelSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"FDL1";

fn write_f64s<W: Write, T: Scalar>(w: &mut W, values: &[T]) -> Result<()> {
    for v in values {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated model file: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<_, 4>(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<_, 8>(r)?))
}

fn read_f64s<R: Read, T: Scalar>(r: &mut R, out: &mut [T]) -> Result<()> {
    for v in out {
        *v = T::lit(f64::from_le_bytes(read_exact::<_, 8>(r)?));
    }
    Ok(())
}

fn expect_len(what: &str, expected: usize, found: u64) -> Result<()> {
    if found != expected as u64 {
        return Err(Error::Format(format!(
            "{what}: expected {expected} values, file has {found}"
        )));
    }
    Ok(())
}

impl<T: Scalar> ModelGraph<T> {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let spec = self.spec.as_ref().ok_or_else(|| {
            Error::Format("only graphs built from a ModelSpec can be serialized".into())
        })?;
        let json = serde_json::to_vec(spec).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&[spec.architecture().tag()])?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.value.len() as u64).to_le_bytes())?;
            write_f64s(w, &p.value)?;
        }
        w.write_all(&(self.bn_states.len() as u32).to_le_bytes())?;
        for st in &self.bn_states {
            w.write_all(&(st.channels() as u64).to_le_bytes())?;
            write_f64s(w, &st.running_mean)?;
            write_f64s(w, &st.running_var)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if &read_exact::<_, 4>(r)? != MAGIC {
            return Err(Error::Format("bad magic (expected FDL1)".into()));
        }
        let [tag] = read_exact::<_, 1>(r)?;
        let len = read_u32(r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|e| Error::Format(format!("truncated spec: {e}")))?;
        let spec: ModelSpec =
            serde_json::from_slice(&json).map_err(|e| Error::Format(format!("spec: {e}")))?;
        if spec.architecture().tag() != tag {
            return Err(Error::Format(format!(
                "architecture tag {tag} disagrees with spec ({})",
                spec.architecture()
            )));
        }
        let mut model = ModelGraph::build(&spec)?;
        expect_len("parameter arrays", model.params.len(), read_u32(r)? as u64)?;
        for p in &mut model.params {
            expect_len(&p.name, p.value.len(), read_u64(r)?)?;
            read_f64s(r, &mut p.value)?;
        }
        expect_len(
            "batchnorm states",
            model.bn_states.len(),
            read_u32(r)? as u64,
        )?;
        for st in &mut model.bn_states {
            expect_len("batchnorm channels", st.channels(), read_u64(r)?)?;
            read_f64s(r, &mut st.running_mean)?;
            read_f64s(r, &mut st.running_var)?;
        }
        Ok(model)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}
