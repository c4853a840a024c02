use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeId {
    Singleton,
    MBall,
    DistanceBall,
    GraphNeighborhood,
    InfectionBall,
    BlockSet,
    HybridSet,
    /// Read from a file or built from explicit lists.
    Explicit,
}

impl fmt::Display for RecipeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

/// What a recipe actually used: its tuning values (epsilon, K, radius, D_n,
/// beta_n, ...) and any warnings raised while building.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub recipe_id: RecipeId,
    #[serde(default)]
    pub tuning: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RecipeRecord {
    pub fn new(recipe_id: RecipeId) -> Self {
        RecipeRecord {
            recipe_id,
            tuning: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.tuning.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.tuning.get(key).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum SetRepr {
    Singleton,
    /// `{j : |j - i| <= radius}` truncated at the ends; scalar series only.
    Window {
        radius: usize,
    },
    /// Each index's set is the block containing it.
    Partition {
        label: Vec<u32>,
        blocks: Vec<Vec<u32>>,
    },
    /// Sorted member lists in CSR layout.
    Explicit {
        offsets: Vec<usize>,
        members: Vec<u32>,
    },
}

/// Affinity sets over flat indices `(i, d) -> i * p + d`.
///
/// Every set contains its own index. Structured recipes keep a compact
/// representation so that set sums cost `O(n)` regardless of set size.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMap {
    n: usize,
    p: usize,
    repr: SetRepr,
    record: RecipeRecord,
}

/// Members of one affinity set, in increasing order.
pub enum Members<'a> {
    One(std::iter::Once<usize>),
    Range(std::ops::RangeInclusive<usize>),
    List(std::slice::Iter<'a, u32>),
}

impl Iterator for Members<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        match self {
            Members::One(it) => it.next(),
            Members::Range(it) => it.next(),
            Members::List(it) => it.next().map(|&v| v as usize),
        }
    }
}

impl AffinityMap {
    pub(crate) fn singleton_map(n: usize, p: usize) -> Self {
        AffinityMap {
            n,
            p,
            repr: SetRepr::Singleton,
            record: RecipeRecord::new(RecipeId::Singleton),
        }
    }

    pub(crate) fn window_map(n: usize, radius: usize) -> Self {
        let repr = if radius == 0 {
            SetRepr::Singleton
        } else {
            SetRepr::Window { radius }
        };
        AffinityMap {
            n,
            p: 1,
            repr,
            record: RecipeRecord::new(RecipeId::MBall).with("m", radius as f64),
        }
    }

    pub(crate) fn partition_map(n: usize, p: usize, label: Vec<u32>, blocks: Vec<Vec<u32>>) -> Self {
        AffinityMap {
            n,
            p,
            repr: SetRepr::Partition { label, blocks },
            record: RecipeRecord::new(RecipeId::BlockSet),
        }
    }

    /// Builds a map from explicit member lists, adding nothing: every set must
    /// already contain its own index and every member must be in range.
    pub fn from_sets(n: usize, p: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let len = n * p;
        if sets.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "expected {len} affinity sets, got {}",
                sets.len()
            )));
        }
        let mut offsets = Vec::with_capacity(len + 1);
        let mut members = Vec::new();
        offsets.push(0);
        for (a, mut set) in sets.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&b| b >= len) {
                return Err(Error::InvalidParameter(format!(
                    "affinity set of {a} contains out-of-range index {bad}"
                )));
            }
            if set.binary_search(&a).is_err() {
                return Err(Error::InvalidParameter(format!(
                    "affinity set of {a} does not contain the index itself"
                )));
            }
            members.extend(set.into_iter().map(|b| b as u32));
            offsets.push(members.len());
        }
        Ok(AffinityMap {
            n,
            p,
            repr: SetRepr::Explicit { offsets, members },
            record: RecipeRecord::new(RecipeId::Explicit),
        })
    }

    pub(crate) fn with_record(mut self, record: RecipeRecord) -> Self {
        self.record = record;
        self
    }

    pub fn record(&self) -> &RecipeRecord {
        &self.record
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of indices, `n * p`.
    pub fn len(&self) -> usize {
        self.n * self.p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self, a: usize) -> Members<'_> {
        match &self.repr {
            SetRepr::Singleton => Members::One(std::iter::once(a)),
            SetRepr::Window { radius } => {
                let lo = a.saturating_sub(*radius);
                let hi = (a + radius).min(self.n - 1);
                Members::Range(lo..=hi)
            }
            SetRepr::Partition { label, blocks } => Members::List(blocks[label[a] as usize].iter()),
            SetRepr::Explicit { offsets, members } => Members::List(members[offsets[a]..offsets[a + 1]].iter()),
        }
    }

    pub fn set(&self, a: usize) -> Vec<usize> {
        self.members(a).collect()
    }

    pub fn set_len(&self, a: usize) -> usize {
        match &self.repr {
            SetRepr::Singleton => 1,
            SetRepr::Window { radius } => {
                let lo = a.saturating_sub(*radius);
                let hi = (a + radius).min(self.n - 1);
                hi - lo + 1
            }
            SetRepr::Partition { label, blocks } => blocks[label[a] as usize].len(),
            SetRepr::Explicit { offsets, .. } => offsets[a + 1] - offsets[a],
        }
    }

    /// The `k`-th smallest member of the set of `a`.
    pub fn member_at(&self, a: usize, k: usize) -> usize {
        match &self.repr {
            SetRepr::Singleton => a,
            SetRepr::Window { radius } => a.saturating_sub(*radius) + k,
            SetRepr::Partition { label, blocks } => blocks[label[a] as usize][k] as usize,
            SetRepr::Explicit { offsets, members } => members[offsets[a] + k] as usize,
        }
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        match &self.repr {
            SetRepr::Singleton => a == b,
            SetRepr::Window { radius } => a.abs_diff(b) <= *radius,
            SetRepr::Partition { label, .. } => label[a] == label[b],
            SetRepr::Explicit { offsets, members } => {
                members[offsets[a]..offsets[a + 1]].binary_search(&(b as u32)).is_ok()
            }
        }
    }

    /// Sum of set sizes, `sum_a |A_a|`.
    pub fn total_members(&self) -> u64 {
        match &self.repr {
            SetRepr::Explicit { members, .. } => members.len() as u64,
            SetRepr::Partition { blocks, .. } => blocks.iter().map(|b| (b.len() as u64).pow(2)).sum(),
            _ => (0..self.len()).map(|a| self.set_len(a) as u64).sum(),
        }
    }

    /// `sum_a |A_a|^2`: the number of within-set triples.
    pub fn triple_count(&self) -> f64 {
        match &self.repr {
            SetRepr::Partition { blocks, .. } => blocks.iter().map(|b| (b.len() as f64).powi(3)).sum(),
            _ => (0..self.len()).map(|a| (self.set_len(a) as f64).powi(2)).sum(),
        }
    }

    pub fn max_set_size(&self) -> usize {
        match &self.repr {
            SetRepr::Partition { blocks, .. } => blocks.iter().map(Vec::len).max().unwrap_or(0),
            _ => (0..self.len()).map(|a| self.set_len(a)).max().unwrap_or(0),
        }
    }

    /// Work needed to compute all set sums once: `O(n p)` for structured maps,
    /// the member count for explicit lists.
    pub fn set_sum_cost(&self) -> u64 {
        match &self.repr {
            SetRepr::Explicit { members, .. } => members.len() as u64,
            _ => self.len() as u64,
        }
    }

    /// `out[a] = sum_{b in A_a} z[b]`.
    pub fn set_sums(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        match &self.repr {
            SetRepr::Singleton => out.copy_from_slice(z),
            SetRepr::Window { radius } => {
                let n = self.n;
                let mut prefix = vec![0.0; n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] + z[i];
                }
                // Direct sums keep rounding identical to explicit enumeration for
                // small radii.
                if *radius <= 16 {
                    for (a, o) in out.iter_mut().enumerate() {
                        let lo = a.saturating_sub(*radius);
                        let hi = (a + radius).min(n - 1);
                        *o = z[lo..=hi].iter().sum();
                    }
                } else {
                    for (a, o) in out.iter_mut().enumerate() {
                        let lo = a.saturating_sub(*radius);
                        let hi = (a + radius).min(n - 1);
                        *o = prefix[hi + 1] - prefix[lo];
                    }
                }
            }
            SetRepr::Partition { label, blocks } => {
                let sums: Vec<f64> = blocks.iter().map(|b| b.iter().map(|&k| z[k as usize]).sum()).collect();
                for (o, &l) in out.iter_mut().zip(label) {
                    *o = sums[l as usize];
                }
            }
            SetRepr::Explicit { offsets, members } => {
                for (a, o) in out.iter_mut().enumerate() {
                    *o = members[offsets[a]..offsets[a + 1]].iter().map(|&b| z[b as usize]).sum();
                }
            }
        }
    }

    /// `out[a * p + d'] = sum_{b in A_a, dim(b) = d'} z[b]`, used for `p > 1`.
    pub fn set_sums_by_dim(&self, z: &[f64], out: &mut [f64]) {
        let p = self.p;
        debug_assert_eq!(out.len(), self.len() * p);
        if p == 1 {
            self.set_sums(z, out);
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for a in 0..self.len() {
            for b in self.members(a) {
                out[a * p + b % p] += z[b];
            }
        }
    }

    /// True when `b in A_a` iff `a in A_b` for all pairs.
    pub fn is_symmetric(&self) -> bool {
        match &self.repr {
            SetRepr::Singleton | SetRepr::Window { .. } | SetRepr::Partition { .. } => true,
            SetRepr::Explicit { .. } => (0..self.len()).all(|a| self.members(a).all(|b| self.contains(b, a))),
        }
    }

    pub fn to_sets(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|a| self.set(a)).collect()
    }

    /// Writes the adjacency-list text format: a `#`-prefixed JSON header line,
    /// then one `index: members...` line per flat index.
    pub fn write_text<W: Write>(&self, w: W) -> Result<()> {
        self.write_text_tagged(w, None)
    }

    /// `write_text` with the tool version and an optional config hash in the header.
    pub fn write_text_tagged<W: Write>(&self, mut w: W, config_hash: Option<&str>) -> Result<()> {
        let header = MapHeader {
            tool_version: Some(crate::VERSION.to_string()),
            config_hash: config_hash.map(str::to_string),
            n: self.n,
            p: self.p,
            recipe_id: self.record.recipe_id,
            tuning: self.record.tuning.clone(),
            warnings: self.record.warnings.clone(),
        };
        writeln!(w, "#{}", serde_json::to_string(&header)?)?;
        for a in 0..self.len() {
            write!(w, "{a}:")?;
            for b in self.members(a) {
                write!(w, " {b}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty affinity file".into()))??;
        let json = first
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("affinity file must start with a `#` JSON header".into()))?;
        let header: MapHeader = serde_json::from_str(json)?;
        let len = header.n * header.p;
        let mut sets = vec![Vec::new(); len];
        let mut seen = vec![false; len];
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (idx, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("malformed affinity line `{line}`")))?;
            let a: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad index `{idx}`")))?;
            if a >= len {
                return Err(Error::Parse(format!("index {a} out of range")));
            }
            seen[a] = true;
            sets[a] = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad member `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(a) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!("missing affinity set for index {a}")));
        }
        let map = AffinityMap::from_sets(header.n, header.p, sets)?;
        Ok(map.with_record(RecipeRecord {
            recipe_id: header.recipe_id,
            tuning: header.tuning,
            warnings: header.warnings,
        }))
    }
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    n: usize,
    p: usize,
    recipe_id: RecipeId,
    #[serde(default)]
    tuning: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_members_truncate_at_boundaries() {
        let m = AffinityMap::window_map(5, 1);
        assert_eq!(m.set(2), vec![1, 2, 3]);
        assert_eq!(AffinityMap::window_map(5, 2).set(0), vec![0, 1, 2]);
        assert_eq!(m.set_len(4), 2);
    }

    #[test]
    fn set_sums_agree_across_representations() {
        let z: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).sin()).collect();
        let maps = [
            AffinityMap::window_map(12, 2),
            AffinityMap::window_map(12, 20),
            AffinityMap::partition_map(
                12,
                1,
                (0..12).map(|k| (k / 4) as u32).collect(),
                (0..3).map(|b| (4 * b..4 * b + 4).collect()).collect(),
            ),
            AffinityMap::singleton_map(12, 1),
        ];
        for m in &maps {
            let explicit = AffinityMap::from_sets(12, 1, m.to_sets()).unwrap();
            let mut a = vec![0.0; 12];
            let mut b = vec![0.0; 12];
            m.set_sums(&z, &mut a);
            explicit.set_sums(&z, &mut b);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(m.total_members(), explicit.total_members());
            assert_eq!(m.triple_count(), explicit.triple_count());
            for a in 0..12 {
                for k in 0..m.set_len(a) {
                    assert_eq!(m.member_at(a, k), explicit.member_at(a, k));
                }
                for b in 0..12 {
                    assert_eq!(m.contains(a, b), explicit.contains(a, b));
                }
            }
        }
    }

    #[test]
    fn from_sets_requires_reflexivity_and_range() {
        assert!(AffinityMap::from_sets(2, 1, vec![vec![1], vec![1]]).is_err());
        assert!(AffinityMap::from_sets(2, 1, vec![vec![0, 5], vec![1]]).is_err());
        assert!(AffinityMap::from_sets(2, 1, vec![vec![0, 1], vec![1]]).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let m = AffinityMap::window_map(6, 1).with_record(RecipeRecord::new(RecipeId::MBall).with("m", 1.0));
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = AffinityMap::read_text(&buf[..]).unwrap();
        assert_eq!(back.to_sets(), m.to_sets());
        assert_eq!(back.record().get("m"), Some(1.0));
    }

    #[test]
    fn asymmetric_lists_detected() {
        let m = AffinityMap::from_sets(2, 1, vec![vec![0, 1], vec![1]]).unwrap();
        assert!(!m.is_symmetric());
    }
}
