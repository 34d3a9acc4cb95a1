//! Binary optimizer state: an 8-byte magic, a little-endian `u32` version,
//! then the fields of a [`Snapshot`] in declaration order, all little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::ScheduleState;
use crate::optimize::{LogRow, ParamSnapshot, Snapshot};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APPEARCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated state file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.buf.len() / 8 {
            return Err(Error::Checkpoint("tensor larger than the state file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

pub fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(s.iteration);
    w.u64(s.seed);
    w.u64(s.adam_step);
    match &s.schedule {
        None => w.u8(0),
        Some(sc) => {
            w.u8(1);
            w.f64s(&[sc.lambda_0, sc.lambda_min, sc.lambda, sc.k_lambda, sc.lr_0, sc.k_lr]);
            w.u64(sc.t);
        }
    }
    w.f64s(&s.center);
    w.f64(s.radius);
    w.u64(s.params.len() as u64);
    for p in &s.params {
        w.u64(p.name.len() as u64);
        w.0.extend_from_slice(p.name.as_bytes());
        w.u64(p.shape.len() as u64);
        p.shape.iter().for_each(|&d| w.u64(d as u64));
        w.f64s(&p.values);
        w.f64s(&p.m);
        w.f64s(&p.v);
    }
    w.u64(s.log.len() as u64);
    for r in &s.log {
        w.u64(r.iter);
        w.f64s(&[r.l_image, r.l_lap, r.lambda, r.lr, r.wall_ms]);
    }
    w.0
}

pub fn decode_snapshot(buf: &[u8]) -> Result<Snapshot> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint state file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("state version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let iteration = r.u64()?;
    let seed = r.u64()?;
    let adam_step = r.u64()?;
    let schedule = match r.u8()? {
        0 => None,
        1 => {
            let v = r.f64s(6)?;
            Some(ScheduleState {
                lambda_0: v[0],
                lambda_min: v[1],
                lambda: v[2],
                k_lambda: v[3],
                lr_0: v[4],
                k_lr: v[5],
                t: r.u64()?,
            })
        }
        b => return Err(Error::Checkpoint(format!("bad schedule tag {b}"))),
    };
    let c = r.f64s(3)?;
    let center = [c[0], c[1], c[2]];
    let radius = r.f64()?;
    let count = r.len()?;
    let mut params = Vec::new();
    for _ in 0..count {
        let n = r.len()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Checkpoint("tensor shape overflow".into()))?;
        let values = r.f64s(len)?;
        let m = r.f64s(len)?;
        let v = r.f64s(len)?;
        params.push(ParamSnapshot { name, shape, values, m, v });
    }
    let rows = r.len()?;
    let mut log = Vec::new();
    for _ in 0..rows {
        let iter = r.u64()?;
        let v = r.f64s(5)?;
        log.push(LogRow { iter, l_image: v[0], l_lap: v[1], lambda: v[2], lr: v[3], wall_ms: v[4] });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes in state file".into()));
    }
    Ok(Snapshot { iteration, seed, adam_step, schedule, center, radius, params, log })
}

pub fn write_snapshot(path: &Path, s: &Snapshot) -> Result<()> {
    std::fs::write(path, encode_snapshot(s)).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let buf = std::fs::read(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    decode_snapshot(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap() -> Snapshot {
        Snapshot {
            iteration: 7,
            seed: 3,
            adam_step: 7,
            schedule: Some(ScheduleState::new(0.5, 0.01)),
            center: [0.1, 0.2, -0.3],
            radius: 1.25,
            params: vec![ParamSnapshot {
                name: "kd.0".into(),
                shape: vec![1, 2],
                values: vec![0.1, f64::MIN_POSITIVE],
                m: vec![1e-300, -2.0],
                v: vec![3.0, 4.0],
            }],
            log: vec![LogRow { iter: 0, l_image: 0.5, l_lap: 0.1, lambda: 0.5, lr: 0.01, wall_ms: 0.0 }],
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = snap();
        assert_eq!(decode_snapshot(&encode_snapshot(&s)).unwrap(), s);
    }

    #[test]
    fn version_and_truncation_errors() {
        let mut b = encode_snapshot(&snap());
        b[8] = 9;
        assert!(decode_snapshot(&b).unwrap_err().to_string().contains("version"));
        let b = encode_snapshot(&snap());
        assert!(decode_snapshot(&b[..b.len() - 3]).is_err());
        assert!(decode_snapshot(b"NOTMAGIC\x01\0\0\0").is_err());
    }
}
