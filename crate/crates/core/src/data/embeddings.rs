use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::emissions::EmbeddingTable;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SEQE";
const VERSION: u32 = 1;

/// Keyed `n x dim` float sequences, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub sequences: Vec<(String, Array2<f32>)>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sequences: Vec::new(),
        }
    }

    pub fn push(&mut self, key: impl Into<String>, values: Array2<f32>) -> Result<()> {
        if values.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "sequence has dim {}, file has dim {}",
                values.ncols(),
                self.dim
            )));
        }
        self.sequences.push((key.into(), values));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Smallest and largest stored value, if any.
    pub fn value_range(&self) -> Option<(f32, f32)> {
        self.sequences
            .iter()
            .flat_map(|(_, a)| a.iter().copied())
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Lookup table keyed by sequence key. Duplicate keys are an error.
    pub fn into_table(self) -> Result<EmbeddingTable> {
        let mut map = BTreeMap::new();
        for (k, v) in self.sequences {
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Format(format!("duplicate embedding key `{k}`")));
            }
        }
        EmbeddingTable::file_backed(self.dim, map)
    }
}

fn truncated(e: std::io::Error, what: &str) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format(format!("truncated embedding file: {what}"))
    } else {
        Error::Io(e)
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in 32 bits")))
}

pub fn write_embeddings_to<W: Write>(writer: W, data: &EmbeddingFile) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(data.sequences.len(), "sequence count")?)?;
    w.write_u32::<LittleEndian>(to_u32(data.dim, "dim")?)?;
    for (key, values) in &data.sequences {
        if values.ncols() != data.dim {
            return Err(Error::Shape(format!(
                "sequence `{key}` has dim {}, file has dim {}",
                values.ncols(),
                data.dim
            )));
        }
        w.write_u32::<LittleEndian>(to_u32(key.len(), "key length")?)?;
        w.write_all(key.as_bytes())?;
        w.write_u32::<LittleEndian>(to_u32(values.nrows(), "token count")?)?;
        for v in values.iter() {
            w.write_f32::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_embeddings(path: impl AsRef<Path>, data: &EmbeddingFile) -> Result<()> {
    write_embeddings_to(File::create(path)?, data)
}

pub fn read_embeddings_from<R: Read>(reader: R) -> Result<EmbeddingFile> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| truncated(e, "header"))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"SEQE\"")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, "header"))?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, "header"))? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, "header"))? as usize;
    let mut file = EmbeddingFile::new(dim);
    for i in 0..count {
        let what = format!("declared {count} sequences, payload ends in sequence {i}");
        let key_len = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, &what))? as usize;
        let mut key = vec![0u8; key_len];
        r.read_exact(&mut key).map_err(|e| truncated(e, &what))?;
        let key = String::from_utf8(key).map_err(|_| Error::Format(format!("sequence {i}: key is not UTF-8")))?;
        let n = r.read_u32::<LittleEndian>().map_err(|e| truncated(e, &what))? as usize;
        let mut values = vec![0f32; n * dim];
        r.read_f32_into::<LittleEndian>(&mut values).map_err(|e| truncated(e, &what))?;
        let values = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Format(e.to_string()))?;
        file.sequences.push((key, values));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after the declared sequences".into()));
    }
    Ok(file)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    read_embeddings_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn bytes(f: &EmbeddingFile) -> Vec<u8> {
        let mut buf = Vec::new();
        write_embeddings_to(&mut buf, f).unwrap();
        buf
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut f = EmbeddingFile::new(4);
        let weird = [f32::MIN_POSITIVE, -0.0, 1e-40, f32::MAX];
        f.push("r1", Array2::from_shape_fn((3, 4), |(i, j)| weird[(i + j) % 4] * (i as f32 + 0.5))).unwrap();
        let back = read_embeddings_from(bytes(&f).as_slice()).unwrap();
        assert_eq!(back.dim, 4);
        let (a, b) = (&f.sequences[0].1, &back.sequences[0].1);
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(bytes(&back), bytes(&f));
    }

    #[test]
    fn layout_is_as_documented() {
        let mut f = EmbeddingFile::new(2);
        f.push("ab", array![[1.0f32, 2.0]]).unwrap();
        let b = bytes(&f);
        assert_eq!(&b[..4], b"SEQE");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..22], &[2, 0, 0, 0, b'a', b'b']);
        assert_eq!(&b[22..26], &[1, 0, 0, 0]);
        assert_eq!(&b[26..30], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 34);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = bytes(&EmbeddingFile::new(2));
        b[0] = b'X';
        assert!(matches!(read_embeddings_from(b.as_slice()), Err(Error::Format(_))));
        let mut b = bytes(&EmbeddingFile::new(2));
        b[4] = 9;
        assert!(matches!(read_embeddings_from(b.as_slice()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn declared_count_beyond_payload_is_truncation() {
        let mut f = EmbeddingFile::new(1);
        f.push("a", array![[1.0f32]]).unwrap();
        f.push("b", array![[2.0f32], [3.0]]).unwrap();
        let mut b = bytes(&f);
        b[8] = 3;
        let err = read_embeddings_from(b.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let full = bytes(&f);
        assert!(read_embeddings_from(&full[..full.len() - 2]).is_err());
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut f = EmbeddingFile::new(3);
        assert!(f.push("a", Array2::zeros((2, 2))).is_err());
        f.sequences.push(("b".into(), Array2::zeros((1, 2))));
        let mut buf = Vec::new();
        assert!(matches!(write_embeddings_to(&mut buf, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn duplicate_keys_rejected_in_table() {
        let mut f = EmbeddingFile::new(1);
        f.push("a", array![[1.0f32]]).unwrap();
        f.push("a", array![[2.0f32]]).unwrap();
        assert!(f.into_table().is_err());
    }
}
