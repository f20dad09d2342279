//! Named-tensor bundle serialization.
//!
//! Layout (all integers little-endian):
//!   magic "TCKP" | version u16 | tensor count u32 | records...
//! each record:
//!   name length u16 | UTF-8 name | rank u32 | extents u32 × rank |
//!   values f32 LE × product(extents)
//!
//! Records are written sorted by name, so identical tensor sets produce
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::CheckpointError;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TCKP";
pub const VERSION: u16 = 1;

pub fn write_tensors(
    path: &Path,
    entries: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let mut sorted: Vec<&(String, Tensor)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sorted.len() as u32).to_le_bytes())?;
    for (name, t) in sorted {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in t.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_into(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u16(&mut r, "version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = read_u32(&mut r, "tensor count")? as usize;

    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let ctx = format!("record {i}");
        let name_len = read_u16(&mut r, &ctx)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_into(&mut r, &mut name_bytes, &ctx)?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::BadName)?;

        let rank = read_u32(&mut r, &name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, &name)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        read_into(&mut r, &mut raw, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).expect("lengths agree by construction");
        entries.push((name, tensor));
    }
    Ok(entries)
}

/// Check loaded entries against an expected shape table. Both sides are
/// compared in sorted-name order so the first reported conflict is stable.
pub fn validate_shapes(
    entries: &[(String, Tensor)],
    expected: &[(String, Vec<usize>)],
) -> Result<(), CheckpointError> {
    let mut got: Vec<(&String, &Tensor)> = entries.iter().map(|(n, t)| (n, t)).collect();
    got.sort_by(|a, b| a.0.cmp(b.0));
    let mut want: Vec<(&String, &Vec<usize>)> = expected.iter().map(|(n, s)| (n, s)).collect();
    want.sort_by(|a, b| a.0.cmp(b.0));

    let mut gi = got.iter().peekable();
    let mut wi = want.iter().peekable();
    loop {
        match (gi.peek(), wi.peek()) {
            (None, None) => return Ok(()),
            (Some((gn, _)), None) => {
                return Err(CheckpointError::UnexpectedTensor((*gn).clone()))
            }
            (None, Some((wn, _))) => return Err(CheckpointError::MissingTensor((*wn).clone())),
            (Some((gn, gt)), Some((wn, ws))) => match gn.as_str().cmp(wn.as_str()) {
                std::cmp::Ordering::Less => {
                    return Err(CheckpointError::UnexpectedTensor((*gn).clone()))
                }
                std::cmp::Ordering::Greater => {
                    return Err(CheckpointError::MissingTensor((*wn).clone()))
                }
                std::cmp::Ordering::Equal => {
                    if gt.shape() != ws.as_slice() {
                        return Err(CheckpointError::ShapeTableMismatch {
                            name: (*gn).clone(),
                            expected: (*ws).clone(),
                            found: gt.shape().to_vec(),
                        });
                    }
                    gi.next();
                    wi.next();
                }
            },
        }
    }
}

fn read_into(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Truncated(what.to_string()))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    read_into(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_into(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries() -> Vec<(String, Tensor)> {
        vec![
            (
                "b/weight".to_string(),
                Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap(),
            ),
            (
                "a/bias".to_string(),
                Tensor::from_vec(&[3], vec![0.5, 1.5, -0.125]).unwrap(),
            ),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tckp");
        write_tensors(&path, &entries()).unwrap();
        let loaded = read_tensors(&path).unwrap();
        // Sorted on disk.
        assert_eq!(loaded[0].0, "a/bias");
        assert_eq!(loaded[1].0, "b/weight");
        for (name, t) in entries() {
            let (_, l) = loaded.iter().find(|(n, _)| *n == name).unwrap();
            assert_eq!(l.shape(), t.shape());
            let same_bits = l
                .data()
                .iter()
                .zip(t.data().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits);
        }
    }

    #[test]
    fn write_order_does_not_change_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let fwd = dir.path().join("fwd.tckp");
        let rev = dir.path().join("rev.tckp");
        let mut e = entries();
        write_tensors(&fwd, &e).unwrap();
        e.reverse();
        write_tensors(&rev, &e).unwrap();
        assert_eq!(std::fs::read(fwd).unwrap(), std::fs::read(rev).unwrap());
    }

    #[test]
    fn bad_magic_is_not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tckp");
        std::fs::write(&path, b"NOPE####rest").unwrap();
        match read_tensors(&path) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tckp");
        write_tensors(&path, &entries()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match read_tensors(&path) {
            Err(CheckpointError::Truncated(_)) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn shape_table_mismatch_names_first_offender() {
        let e = entries();
        let expected = vec![
            ("a/bias".to_string(), vec![3]),
            ("b/weight".to_string(), vec![4, 2]),
        ];
        match validate_shapes(&e, &expected) {
            Err(CheckpointError::ShapeTableMismatch { name, expected, found }) => {
                assert_eq!(name, "b/weight");
                assert_eq!(expected, vec![4, 2]);
                assert_eq!(found, vec![2, 2]);
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_unexpected_are_distinct() {
        let e = entries();
        let missing = vec![
            ("a/bias".to_string(), vec![3]),
            ("b/weight".to_string(), vec![2, 2]),
            ("c/extra".to_string(), vec![1]),
        ];
        assert!(matches!(
            validate_shapes(&e, &missing),
            Err(CheckpointError::MissingTensor(n)) if n == "c/extra"
        ));
        let fewer = vec![("a/bias".to_string(), vec![3])];
        assert!(matches!(
            validate_shapes(&e, &fewer),
            Err(CheckpointError::UnexpectedTensor(n)) if n == "b/weight"
        ));
    }
}
