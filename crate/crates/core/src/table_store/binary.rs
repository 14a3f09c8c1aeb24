//! Versioned binary persistence for [`PreparedTable`].
//!
//! Layout (little-endian):
//! ```text
//! "TDPT-TBL1"                      magic, 9 bytes
//! u32 n_rows, u32 n_cols
//! str source                       u32 length + UTF-8
//! per column: str name, u8 kind (0 numeric, 1 categorical), f64 mean, f64 std,
//!             u32 n_categories, str category...
//! i32 target column (-1 = none), u8 task (0 classification, 1 regression)
//! f32 data[n_rows * n_cols]        row-major
//! u8 mask[ceil(n_rows * n_cols / 8)]   bit i (LSB first) = missing flag of cell i
//! if target: f64 raw_target[n_rows]    NaN = missing
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{ColumnEncoder, ColumnKind, PreparedTable, TargetInfo};
use crate::error::{Error, Result};
use crate::TaskKind;

pub const TABLE_MAGIC: &[u8; 9] = b"TDPT-TBL1";

pub fn write_prepared<W: Write>(table: &PreparedTable, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    let (n, f) = table.data.dim();
    w.write_all(TABLE_MAGIC).map_err(io)?;
    w.write_u32::<LE>(n as u32).map_err(io)?;
    w.write_u32::<LE>(f as u32).map_err(io)?;
    write_str(&mut w, &table.source)?;
    for e in &table.encoders {
        write_str(&mut w, &e.name)?;
        w.write_u8(match e.kind {
            ColumnKind::Numeric => 0,
            ColumnKind::Categorical => 1,
        })
        .map_err(io)?;
        w.write_f64::<LE>(e.mean).map_err(io)?;
        w.write_f64::<LE>(e.std).map_err(io)?;
        w.write_u32::<LE>(e.categories.len() as u32).map_err(io)?;
        for c in &e.categories {
            write_str(&mut w, c)?;
        }
    }
    match &table.target {
        Some(t) => {
            w.write_i32::<LE>(t.column as i32).map_err(io)?;
            w.write_u8(match t.task {
                TaskKind::Classification => 0,
                TaskKind::Regression => 1,
            })
            .map_err(io)?;
        }
        None => {
            w.write_i32::<LE>(-1).map_err(io)?;
            w.write_u8(0).map_err(io)?;
        }
    }
    for v in table.data.iter() {
        w.write_f32::<LE>(*v as f32).map_err(io)?;
    }
    let mut packed = vec![0u8; (n * f).div_ceil(8)];
    for (i, &m) in table.missing.iter().enumerate() {
        if m {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&packed).map_err(io)?;
    if let Some(t) = &table.target {
        for v in &t.raw {
            w.write_f64::<LE>(v.unwrap_or(f64::NAN)).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_prepared<R: Read>(mut r: R) -> Result<PreparedTable> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != TABLE_MAGIC {
        return Err(Error::Format("not a prepared-table file (bad magic)".into()));
    }
    let n = r.read_u32::<LE>().map_err(io)? as usize;
    let f = r.read_u32::<LE>().map_err(io)? as usize;
    let source = read_str(&mut r)?;
    let mut encoders = Vec::with_capacity(f);
    for _ in 0..f {
        let name = read_str(&mut r)?;
        let kind = match r.read_u8().map_err(io)? {
            0 => ColumnKind::Numeric,
            1 => ColumnKind::Categorical,
            k => return Err(Error::Format(format!("unknown column kind {k}"))),
        };
        let mean = r.read_f64::<LE>().map_err(io)?;
        let std = r.read_f64::<LE>().map_err(io)?;
        let nc = r.read_u32::<LE>().map_err(io)? as usize;
        let categories = (0..nc).map(|_| read_str(&mut r)).collect::<Result<_>>()?;
        encoders.push(ColumnEncoder {
            name,
            kind,
            categories,
            mean,
            std,
        });
    }
    let target_col = r.read_i32::<LE>().map_err(io)?;
    let task = match r.read_u8().map_err(io)? {
        0 => TaskKind::Classification,
        _ => TaskKind::Regression,
    };
    let mut data = Vec::with_capacity(n * f);
    for _ in 0..n * f {
        data.push(r.read_f32::<LE>().map_err(io)? as f64);
    }
    let mut packed = vec![0u8; (n * f).div_ceil(8)];
    r.read_exact(&mut packed).map_err(io)?;
    let missing: Vec<bool> = (0..n * f).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    let target = if target_col >= 0 {
        let raw = (0..n)
            .map(|_| r.read_f64::<LE>().map(|v| (!v.is_nan()).then_some(v)))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        Some(TargetInfo {
            column: target_col as usize,
            task,
            raw,
        })
    } else {
        None
    };
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    Ok(PreparedTable {
        source,
        encoders,
        data: Array2::from_shape_vec((n, f), data).map_err(shape_err)?,
        missing: Array2::from_shape_vec((n, f), missing).map_err(shape_err)?,
        target,
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    w.write_u32::<LE>(s.len() as u32).map_err(io)?;
    w.write_all(s.as_bytes()).map_err(io)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    let len = r.read_u32::<LE>().map_err(io)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table_store::{parse_csv, prepare};

    #[test]
    fn round_trip_preserves_metadata_and_f32_data() {
        let raw = parse_csv("demo", "a,b,y\n1,x,p\n2,,q\n,z,p\n4,x,", Some("y")).unwrap();
        let t = prepare(&raw).unwrap();
        let mut buf = Vec::new();
        write_prepared(&t, &mut buf).unwrap();
        assert_eq!(&buf[..9], TABLE_MAGIC);
        let back = read_prepared(&buf[..]).unwrap();
        assert_eq!(back.encoders, t.encoders);
        assert_eq!(back.missing, t.missing);
        assert_eq!(back.target, t.target);
        for (a, b) in back.data.iter().zip(t.data.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(read_prepared(&b"TDPT-XXX1........"[..]).is_err());
    }
}
