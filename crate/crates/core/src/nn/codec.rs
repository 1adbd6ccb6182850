//! Little-endian binary encoding of network parameters.
//!
//! Layout: `b"NDNT"`, `u32` layer count `L`, `L + 1` `u32` dims, `L` activation
//! bytes, `u64` parameter count, then the parameters as `f64` bit patterns.

use alloc::vec::Vec;

use super::{Activation, Mlp};
use crate::error::{data_err, Result};

const MAGIC: &[u8; 4] = b"NDNT";

impl Mlp {
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n_layers() as u32).to_le_bytes());
        for &d in self.layer_dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend(self.activations().iter().map(|a| a.code()));
        out.extend_from_slice(&(self.params().len() as u64).to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&p.to_bits().to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    /// Decodes one network from the front of `bytes`; returns it with the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Mlp, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(data_err!("bad network magic"));
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(data_err!("implausible layer count {n_layers}"));
        }
        let mut dims = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            dims.push(r.u32()? as usize);
        }
        let mut acts = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let code = r.take(1)?[0];
            acts.push(Activation::from_code(code).ok_or_else(|| data_err!("unknown activation code {code}"))?);
        }
        let mut net = Mlp::with_activations(&dims, &acts).map_err(|e| data_err!("{e}"))?;
        let n = r.u64()? as usize;
        if n != net.params().len() {
            return Err(data_err!("stored {n} parameters, architecture needs {}", net.params().len()));
        }
        for p in net.params_mut() {
            *p = f64::from_bits(r.u64()?);
        }
        Ok((net, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| data_err!("truncated network blob at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
