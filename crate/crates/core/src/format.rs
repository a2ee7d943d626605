//! On-disk table container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"CTX1"
//! u32     version (currently 1)
//! u8      flags (bit 0: table loads with compression enabled)
//! u64     row count
//! blocks  clustered keys (bit-packed, keys cast to i64)
//! u32     column count
//! column* name (u16 len + UTF-8)
//!         u8 kind tag: 0 integer, 1 scaled float, 2 categorical
//!         scaled float: u32 exponent
//!         categorical: u32 label count, then u16 len + UTF-8 per label
//!         blocks (bit-packed values)
//! ```
//!
//! A `blocks` section is `u32` block count, then per block: `i64` base,
//! `u8` width, `u32` value count, `u32` word count, and the packed words.
//! Dumps always bit-pack values regardless of the in-memory flag; the flag
//! only decides how the table is materialized on load.

use std::io::{Read, Write};

use crate::compress::CompressionBlock;
use crate::error::{Error, Result};
use crate::store::{Column, ClusteredKey, ColumnKind, ColumnMeta, Dictionary, Table};

const MAGIC: &[u8; 4] = b"CTX1";
const VERSION: u32 = 1;

pub fn dump_table<W: Write>(table: &Table, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[table.is_compressed() as u8])?;
    w.write_all(&(table.row_count() as u64).to_le_bytes())?;

    let key_values: Vec<i64> = table.keys().iter().map(|k| k.0 as i64).collect();
    write_blocks(&mut w, &crate::compress::pack_column(&key_values))?;

    w.write_all(&(table.column_count() as u32).to_le_bytes())?;
    for col in table.columns() {
        write_str16(&mut w, &col.meta.name)?;
        match &col.meta.kind {
            ColumnKind::Integer => w.write_all(&[0u8])?,
            ColumnKind::ScaledFloat { exponent } => {
                w.write_all(&[1u8])?;
                w.write_all(&exponent.to_le_bytes())?;
            }
            ColumnKind::Categorical(dict) => {
                w.write_all(&[2u8])?;
                w.write_all(&(dict.len() as u32).to_le_bytes())?;
                for label in dict.labels() {
                    write_str16(&mut w, label)?;
                }
            }
        }
        write_blocks(&mut w, &col.blocks())?;
    }
    Ok(())
}

pub fn load_table<R: Read>(mut r: R) -> Result<Table> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadTableFile(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::BadTableFile(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let flags = read_u8(&mut r)?;
    if flags > 1 {
        return Err(Error::BadTableFile(format!("unknown flag bits {flags:#x}")));
    }
    let compressed = flags & 1 == 1;
    let rows = read_u64(&mut r)? as usize;

    let keys: Vec<ClusteredKey> = read_blocks_decoded(&mut r, rows, "keys")?
        .into_iter()
        .map(|v| ClusteredKey(v as u64))
        .collect();

    let n_cols = read_u32(&mut r)? as usize;
    let mut columns = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let name = read_str16(&mut r)?;
        let kind = match read_u8(&mut r)? {
            0 => ColumnKind::Integer,
            1 => ColumnKind::ScaledFloat { exponent: read_u32(&mut r)? },
            2 => {
                let n_labels = read_u32(&mut r)? as usize;
                let mut labels = Vec::with_capacity(n_labels);
                for _ in 0..n_labels {
                    labels.push(read_str16(&mut r)?);
                }
                ColumnKind::Categorical(Dictionary::from_labels(labels)?)
            }
            tag => {
                return Err(Error::BadTableFile(format!(
                    "unknown column kind tag {tag} for column {name:?}"
                )))
            }
        };
        let values = read_blocks_decoded(&mut r, rows, &name)?;
        columns.push(Column::from_values(ColumnMeta { name, kind }, values, compressed));
    }

    // Trailing garbage means the file is not what it claims to be.
    let mut tail = [0u8; 1];
    match r.read(&mut tail)? {
        0 => {}
        _ => return Err(Error::BadTableFile("trailing bytes after last column".into())),
    }
    Table::from_parts(columns, keys, compressed)
}

pub fn dump_table_to_path(table: &Table, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    dump_table(table, &mut w)?;
    use std::io::Write as _;
    w.flush()?;
    Ok(())
}

pub fn load_table_from_path(path: &std::path::Path) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    load_table(std::io::BufReader::new(file))
}

fn write_blocks<W: Write>(w: &mut W, blocks: &[CompressionBlock]) -> Result<()> {
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for b in blocks {
        w.write_all(&b.base().to_le_bytes())?;
        w.write_all(&[b.width()])?;
        w.write_all(&(b.len() as u32).to_le_bytes())?;
        w.write_all(&(b.words().len() as u32).to_le_bytes())?;
        for word in b.words() {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_blocks_decoded<R: Read>(r: &mut R, expected_len: usize, what: &str) -> Result<Vec<i64>> {
    let n_blocks = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(expected_len);
    for _ in 0..n_blocks {
        let base = read_i64(r)?;
        let width = read_u8(r)?;
        let len = read_u32(r)?;
        let n_words = read_u32(r)? as usize;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            words.push(read_u64(r)?);
        }
        let block = CompressionBlock::from_parts(base, width, len, words)?;
        out.extend(block.decode());
    }
    if out.len() != expected_len {
        return Err(Error::BadTableFile(format!(
            "{what}: decoded {} values, expected {expected_len}",
            out.len()
        )));
    }
    Ok(out)
}

fn write_str16<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::BadConfig(format!("string too long to store ({} bytes)", bytes.len())));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_str16<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::BadTableFile(format!("non-UTF-8 string: {e}")))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i64<R: Read>(r: &mut R) -> Result<i64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(i64::from_le_bytes(b))
}
