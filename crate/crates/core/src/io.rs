//! Sample-array files and all-or-nothing output staging.
//!
//! CSV arrays have a `#`-prefixed JSON header line followed by
//! `replication,unit,x0,..,x{p-1}` rows. Binary arrays are the magic
//! `AFFCLT01`, a little-endian `u64` header length, the JSON header and then
//! every value as a little-endian `f64`, replication-major.

use crate::array::{ModelId, SampleArray};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

pub const BINARY_MAGIC: &[u8; 8] = b"AFFCLT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub tool_version: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub model_id: ModelId,
    pub n: usize,
    pub p: usize,
    pub positively_associated: bool,
    /// Generation seed of each replication.
    pub seeds: Vec<u64>,
}

impl ArrayHeader {
    pub fn for_arrays(arrays: &[SampleArray], config_hash: Option<String>) -> Result<Self> {
        let first = arrays
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no arrays to write".into()))?;
        if arrays
            .iter()
            .any(|a| !a.same_shape(first) || a.model_id() != first.model_id())
        {
            return Err(Error::ShapeMismatch("arrays differ in shape or model".into()));
        }
        Ok(ArrayHeader {
            tool_version: crate::VERSION.to_string(),
            config_hash,
            model_id: first.model_id(),
            n: first.n(),
            p: first.p(),
            positively_associated: first.positively_associated(),
            seeds: arrays.iter().map(|a| a.seed()).collect(),
        })
    }

    fn arrays(&self, values: Vec<f64>) -> Result<Vec<SampleArray>> {
        let per = self.n * self.p;
        if values.len() != per * self.seeds.len() {
            return Err(Error::Parse(format!(
                "expected {} values, found {}",
                per * self.seeds.len(),
                values.len()
            )));
        }
        self.seeds
            .iter()
            .enumerate()
            .map(|(r, &s)| {
                SampleArray::new(
                    self.n,
                    self.p,
                    values[r * per..(r + 1) * per].to_vec(),
                    self.model_id,
                    s,
                    self.positively_associated,
                )
            })
            .collect()
    }
}

pub fn write_arrays_csv<W: Write>(arrays: &[SampleArray], config_hash: Option<String>, mut w: W) -> Result<()> {
    let header = ArrayHeader::for_arrays(arrays, config_hash)?;
    writeln!(w, "# {}", serde_json::to_string(&header)?)?;
    let mut out = csv::Writer::from_writer(w);
    let mut cols = vec!["replication".to_string(), "unit".to_string()];
    cols.extend((0..header.p).map(|d| format!("x{d}")));
    out.write_record(&cols)?;
    for (r, a) in arrays.iter().enumerate() {
        for i in 0..a.n() {
            let mut rec = vec![r.to_string(), i.to_string()];
            rec.extend(a.row(i).iter().map(|v| format!("{v:?}")));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_arrays_csv<R: BufRead>(mut r: R) -> Result<Vec<SampleArray>> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let json = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("array CSV must start with a '#' header line".into()))?;
    let header: ArrayHeader = serde_json::from_str(json.trim()).map_err(|e| Error::Parse(e.to_string()))?;
    let mut rdr = csv::Reader::from_reader(r);
    let mut values = Vec::with_capacity(header.n * header.p * header.seeds.len());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.p + 2 {
            return Err(Error::Parse(format!("row {k} has {} fields", rec.len())));
        }
        let (rep, unit): (usize, usize) = (parse_field(&rec[0], k)?, parse_field(&rec[1], k)?);
        if rep * header.n + unit != k {
            return Err(Error::Parse(format!("row {k} is out of order")));
        }
        for f in rec.iter().skip(2) {
            values.push(parse_field::<f64>(f, k)?);
        }
    }
    header.arrays(values)
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}: cannot parse {s:?}")))
}

pub fn write_arrays_binary<W: Write>(arrays: &[SampleArray], config_hash: Option<String>, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&ArrayHeader::for_arrays(arrays, config_hash)?)?;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for a in arrays {
        for v in a.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_arrays_binary<R: Read>(mut r: R) -> Result<Vec<SampleArray>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse("not an array file (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: ArrayHeader = serde_json::from_slice(&header).map_err(|e| Error::Parse(e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 8 != 0 {
        return Err(Error::Parse("truncated value block".into()));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    header.arrays(values)
}

/// Output files held in memory until every one of them is ready.
#[derive(Debug, Default)]
pub struct StagedOutput {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl StagedOutput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_with(&mut self, name: impl Into<PathBuf>, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    /// Staged `(relative path, contents)` pairs in insertion order.
    pub fn entries(&self) -> &[(PathBuf, Vec<u8>)] {
        &self.files
    }

    pub fn names(&self) -> Vec<&Path> {
        self.files.iter().map(|(p, _)| p.as_path()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(p, _)| p.as_os_str() == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file under `dir`. On any failure the files already
    /// written are removed and no partial output remains.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let existed = dir.exists();
        fs::create_dir_all(dir)?;
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            for (name, bytes) in &self.files {
                let path = dir.join(name);
                let tmp = dir.join(format!(".{}.partial", name.display()));
                fs::write(&tmp, bytes)?;
                written.push(tmp.clone());
                fs::rename(&tmp, &path)?;
                written.pop();
                written.push(path);
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(written),
            Err(e) => {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if !existed {
                    let _ = fs::remove_dir(dir);
                }
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arrays() -> Vec<SampleArray> {
        (0..3)
            .map(|r| {
                let v: Vec<f64> = (0..8).map(|k| (k as f64 + 0.1) * (r as f64 - 1.0) / 3.0).collect();
                SampleArray::new(4, 2, v, ModelId::MDependent, 100 + r, false).unwrap()
            })
            .collect()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let a = arrays();
        let mut buf = Vec::new();
        write_arrays_csv(&a, Some("abc".into()), &mut buf).unwrap();
        assert_eq!(read_arrays_csv(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let a = arrays();
        let mut buf = Vec::new();
        write_arrays_binary(&a, None, &mut buf).unwrap();
        assert_eq!(read_arrays_binary(buf.as_slice()).unwrap(), a);
        buf[0] = b'X';
        assert!(read_arrays_binary(buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_csv_is_rejected() {
        let mut buf = Vec::new();
        write_arrays_csv(&arrays(), None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(read_arrays_csv(cut.as_bytes()).is_err());
    }

    #[test]
    fn failed_commit_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut s = StagedOutput::new();
        s.add("a.txt", b"a".to_vec());
        s.add("missing/b.txt", b"b".to_vec());
        assert!(s.commit(&out).is_err());
        assert!(!out.exists());
    }
}
