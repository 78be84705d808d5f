//! Binary checkpoints.
//!
//! ```text
//! magic   8 bytes   "RILCKPT\0"
//! version u32 LE    1
//! flags   u32 LE    bit 0: discriminator head section present
//! vocab   u32 LE
//! embed   u32 LE
//! hidden  u32 LE
//! count   u64 LE    number of backbone f64 values
//! payload count × f64 LE
//! [head]  (hidden + 1) × f64 LE   when flag bit 0 is set: head_w then head_b
//! ```

use std::path::Path;

use super::params::{Layout, PolicyParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RILCKPT\0";
pub const VERSION: u32 = 1;
const FLAG_DISC_HEAD: u32 = 1;

pub fn encode(params: &PolicyParams, head: Option<&[f64]>) -> Vec<u8> {
    let l = params.layout;
    let extra = head.map_or(0, |h| h.len());
    let mut out = Vec::with_capacity(40 + 8 * (params.data.len() + extra));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if head.is_some() { FLAG_DISC_HEAD } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for d in [l.vocab, l.embed_dim, l.hidden_dim] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.data.len() as u64).to_le_bytes());
    for x in &params.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(h) = head {
        for x in h {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a checkpoint; the head section is returned when present.
pub fn decode(bytes: &[u8]) -> Result<(PolicyParams, Option<Vec<f64>>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let flags = r.u32()?;
    let layout = Layout {
        vocab: r.u32()? as usize,
        embed_dim: r.u32()? as usize,
        hidden_dim: r.u32()? as usize,
    };
    let count = r.u64()? as usize;
    if count != layout.total() {
        return Err(Error::Checkpoint(format!(
            "payload holds {count} values, layout needs {}",
            layout.total()
        )));
    }
    let data = r.f64s(count)?;
    let head = if flags & FLAG_DISC_HEAD != 0 {
        Some(r.f64s(layout.hidden_dim + 1)?)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((PolicyParams { layout, data }, head))
}

pub fn save_policy(path: &Path, params: &PolicyParams) -> Result<()> {
    std::fs::write(path, encode(params, None))?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let (params, head) = decode(&std::fs::read(path)?)?;
    if head.is_some() {
        return Err(Error::Checkpoint("expected a policy checkpoint, found a discriminator".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use proptest::prelude::*;

    #[test]
    fn rejects_corruption() {
        let p = PolicyParams::zeros(Layout { vocab: 48, embed_dim: 2, hidden_dim: 3 });
        let bytes = encode(&p, None);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), with_head in any::<bool>()) {
            let layout = Layout { vocab: 48, embed_dim: 4, hidden_dim: 5 };
            let mut rng = rng_stream(seed, "ckpt", 0);
            let mut p = PolicyParams::random(layout, 1.0, &mut rng);
            p.data[3] = -0.0;
            p.data[7] = f64::MIN_POSITIVE / 4.0;
            let head: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.25).collect();
            let bytes = encode(&p, with_head.then_some(&head[..]));
            let (q, h) = decode(&bytes).unwrap();
            prop_assert_eq!(q.layout, p.layout);
            let same = p.data.iter().zip(&q.data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(h.is_some(), with_head);
            prop_assert_eq!(encode(&q, h.as_deref()), bytes);
        }
    }
}
