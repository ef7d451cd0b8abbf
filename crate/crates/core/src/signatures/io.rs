//! Binary tensor file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "VIBSIG\0\0"
//! version    u32      1
//! kind       u8       0 = raw volumes, 1 = relative risk
//! n          u64      cells
//! bins       u32      12
//! d          u32      categories
//! day_type   u8       0 = weekday, 1 = weekend
//! categories d × (u32 byte length, UTF-8)
//! cells      n × (u32 col, u32 row)
//! segments   u32 count, then count × (u32 byte length, UTF-8 region, u64 start, u64 len)
//! payload    n × 12 × d f64, row-major (cell, bin, category)
//! ```

use std::io::{Read, Write};

use super::{CellTensor, DayType, Segment, SignatureError, BINS};
use crate::grid::CellId;
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 8] = b"VIBSIG\0\0";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Raw,
    RelativeRisk,
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_tensor<T: Scalar, W: Write>(
    mut w: W,
    tensor: &CellTensor<T>,
    kind: TensorKind,
) -> Result<(), SignatureError> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&[match kind {
        TensorKind::Raw => 0,
        TensorKind::RelativeRisk => 1,
    }])?;
    w.write_all(&(tensor.n_cells() as u64).to_le_bytes())?;
    w.write_all(&(BINS as u32).to_le_bytes())?;
    w.write_all(&(tensor.n_categories() as u32).to_le_bytes())?;
    w.write_all(&[match tensor.day_type() {
        DayType::Weekday => 0,
        DayType::Weekend => 1,
    }])?;
    for c in tensor.categories() {
        put_str(&mut w, c)?;
    }
    for cell in tensor.cells() {
        w.write_all(&cell.col.to_le_bytes())?;
        w.write_all(&cell.row.to_le_bytes())?;
    }
    w.write_all(&(tensor.segments().len() as u32).to_le_bytes())?;
    for seg in tensor.segments() {
        put_str(&mut w, &seg.region)?;
        w.write_all(&(seg.start as u64).to_le_bytes())?;
        w.write_all(&(seg.len as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(tensor.values().len() * 8);
    for v in tensor.values() {
        payload.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], SignatureError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| SignatureError::Format(format!("truncated tensor file: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, SignatureError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, SignatureError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, SignatureError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String, SignatureError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| SignatureError::Format(format!("truncated tensor file: {e}")))?;
        String::from_utf8(buf).map_err(|_| SignatureError::Format("name is not UTF-8".into()))
    }
}

pub fn read_tensor<T: Scalar, R: Read>(r: R) -> Result<(TensorKind, CellTensor<T>), SignatureError> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<8>()? != TENSOR_MAGIC {
        return Err(SignatureError::Format("not a signature tensor file".into()));
    }
    let version = c.u32()?;
    if version != TENSOR_VERSION {
        return Err(SignatureError::Format(format!("unsupported version {version}")));
    }
    let kind = match c.u8()? {
        0 => TensorKind::Raw,
        1 => TensorKind::RelativeRisk,
        k => return Err(SignatureError::Format(format!("unknown tensor kind {k}"))),
    };
    let n = c.u64()? as usize;
    let bins = c.u32()? as usize;
    if bins != BINS {
        return Err(SignatureError::Format(format!("expected {BINS} bins, got {bins}")));
    }
    let d = c.u32()? as usize;
    let day_type = match c.u8()? {
        0 => DayType::Weekday,
        1 => DayType::Weekend,
        k => return Err(SignatureError::Format(format!("unknown day type {k}"))),
    };
    let categories = (0..d).map(|_| c.string()).collect::<Result<Vec<_>, _>>()?;
    let cells = (0..n)
        .map(|_| Ok(CellId::new(c.u32()?, c.u32()?)))
        .collect::<Result<Vec<_>, SignatureError>>()?;
    let n_segments = c.u32()? as usize;
    let segments = (0..n_segments)
        .map(|_| {
            Ok(Segment {
                region: c.string()?,
                start: c.u64()? as usize,
                len: c.u64()? as usize,
            })
        })
        .collect::<Result<Vec<_>, SignatureError>>()?;
    let count = n * BINS * d;
    let mut payload = vec![0u8; count * 8];
    c.inner
        .read_exact(&mut payload)
        .map_err(|e| SignatureError::Format(format!("truncated payload: {e}")))?;
    let values = payload
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let tensor = CellTensor::from_parts(day_type, categories, cells, segments, values)?;
    Ok((kind, tensor))
}

/// Long-format CSV for inspection: `region,col,row,bin,category,value`.
pub fn write_tensor_csv<T: Scalar, W: Write>(out: W, tensor: &CellTensor<T>) -> Result<(), SignatureError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SignatureError::Io(e.into());
    w.write_record(["region", "col", "row", "bin", "category", "value"])
        .map_err(io)?;
    for seg in tensor.segments() {
        for i in seg.start..seg.start + seg.len {
            let cell = tensor.cells()[i];
            for bin in 0..BINS {
                for (k, cat) in tensor.categories().iter().enumerate() {
                    w.write_record([
                        seg.region.as_str(),
                        &cell.col.to_string(),
                        &cell.row.to_string(),
                        &bin.to_string(),
                        cat,
                        &tensor.get(i, bin, k).as_f64().to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CellTensor<f64> {
        let values: Vec<f64> = (0..2 * BINS * 2).map(|i| i as f64 * 0.5).collect();
        CellTensor::from_parts(
            DayType::Weekend,
            vec!["A".into(), "Bé".into()],
            vec![CellId::new(0, 0), CellId::new(4, 2)],
            vec![Segment {
                region: "x".into(),
                start: 0,
                len: 2,
            }],
            values,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip() {
        let t = sample();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, TensorKind::RelativeRisk).unwrap();
        assert_eq!(&buf[..8], TENSOR_MAGIC);
        let (kind, back) = read_tensor::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(kind, TensorKind::RelativeRisk);
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &sample(), TensorKind::Raw).unwrap();
        assert!(read_tensor::<f64, _>(&buf[..buf.len() - 1]).is_err());
        assert!(read_tensor::<f64, _>(&b"NOTATENSOR"[..]).is_err());
    }

    #[test]
    fn csv_has_one_line_per_entry() {
        let mut buf = Vec::new();
        write_tensor_csv(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * BINS * 2);
        assert!(text.lines().nth(2).unwrap().starts_with("x,0,0,0,Bé,"));
    }
}
