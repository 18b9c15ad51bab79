//! Block files, manifests, synthetic data generation and seeded row sampling.
//!
//! A dataset is a directory holding one UTF-8 text file per block (one
//! decimal numeral per line, LF terminated) and a JSON manifest. Sampling
//! reads single rows by line index through a line-offset index stored next to
//! each block file (`<block>.idx`, little-endian `u64` offsets, `count + 1`
//! entries). The index is built on first use and validated against the file
//! length afterwards.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Seed domains keep the streams used for different purposes independent.
pub mod domain {
    pub const GENERATE: u64 = 1;
    pub const PILOT_A: u64 = 2;
    pub const PILOT_B: u64 = 3;
    pub const MAIN: u64 = 4;
    pub const US: u64 = 5;
    pub const STS: u64 = 6;
    pub const MV: u64 = 7;
    pub const MVB: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-purpose seed: independent of scheduling and of other blocks.
pub fn derive_seed(seed: u64, domain: u64, block: u64, counter: u64) -> u64 {
    let mut h = splitmix64(seed);
    for part in [domain, block, counter] {
        h = splitmix64(h ^ part);
    }
    h
}

/// Value distribution of a synthetic block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionSpec {
    Normal { mu: f64, sigma: f64 },
    Exponential { gamma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistributionSpec::Normal { mu, sigma } => mu.is_finite() && sigma > 0.0,
            DistributionSpec::Exponential { gamma } => gamma > 0.0 && gamma.is_finite(),
            DistributionSpec::Uniform { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid distribution {self}")))
        }
    }

    /// Population mean.
    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { mu, .. } => mu,
            DistributionSpec::Exponential { gamma } => 1.0 / gamma,
            DistributionSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        match *self {
            DistributionSpec::Normal { sigma, .. } => sigma,
            DistributionSpec::Exponential { gamma } => 1.0 / gamma,
            DistributionSpec::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
        }
    }

    fn fill<R: Rng>(&self, rng: &mut R, n: u64, mut sink: impl FnMut(f64) -> Result<()>) -> Result<()> {
        match *self {
            DistributionSpec::Normal { mu, sigma } => {
                let d = Normal::new(mu, sigma).map_err(|e| invalid(e.to_string()))?;
                (0..n).try_for_each(|_| sink(d.sample(rng)))
            }
            DistributionSpec::Exponential { gamma } => {
                let d = Exp::new(gamma).map_err(|e| invalid(e.to_string()))?;
                (0..n).try_for_each(|_| sink(d.sample(rng)))
            }
            DistributionSpec::Uniform { lo, hi } => {
                let d = Uniform::new_inclusive(lo, hi).map_err(|e| invalid(e.to_string()))?;
                (0..n).try_for_each(|_| sink(d.sample(rng)))
            }
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::Normal { mu, sigma } => write!(f, "normal:{mu},{sigma}"),
            DistributionSpec::Exponential { gamma } => write!(f, "exponential:{gamma}"),
            DistributionSpec::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
        }
    }
}

/// Parses `normal:MU,SIGMA`, `exponential:GAMMA` or `uniform:LO,HI`.
impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("distribution `{s}` lacks `kind:` prefix")))?;
        let nums = args
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| invalid(format!("distribution `{s}`: {e}")))?;
        let spec = match (kind.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("normal", [mu, sigma]) => DistributionSpec::Normal { mu: *mu, sigma: *sigma },
            ("exponential", [gamma]) => DistributionSpec::Exponential { gamma: *gamma },
            ("uniform", [lo, hi]) => DistributionSpec::Uniform { lo: *lo, hi: *hi },
            _ => return Err(invalid(format!("unrecognised distribution `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One block of the dataset. `path` is absolute once the manifest is loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDescriptor {
    pub path: PathBuf,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DistributionSpec>,
}

impl BlockDescriptor {
    pub fn index_path(&self) -> PathBuf {
        let mut p = self.path.clone().into_os_string();
        p.push(".idx");
        PathBuf::from(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockManifest {
    pub version: u32,
    pub blocks: Vec<BlockDescriptor>,
    pub total: u64,
}

impl BlockManifest {
    pub fn new(blocks: Vec<BlockDescriptor>) -> Result<Self> {
        let total = blocks.iter().map(|b| b.count).sum();
        let m = Self {
            version: MANIFEST_VERSION,
            blocks,
            total,
        };
        m.check_shape()?;
        Ok(m)
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.blocks.iter().map(|b| b.count).collect()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn check_shape(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported version {}", self.version)));
        }
        if self.blocks.is_empty() {
            return Err(Error::Manifest("no blocks".into()));
        }
        if let Some(b) = self.blocks.iter().find(|b| b.count == 0) {
            return Err(Error::EmptyBlock(b.path.display().to_string()));
        }
        let sum: u64 = self.blocks.iter().map(|b| b.count).sum();
        if sum != self.total {
            return Err(Error::Manifest(format!(
                "total {} does not match block sum {sum}",
                self.total
            )));
        }
        Ok(())
    }

    /// Full validation: shape plus every block file holding exactly `count` numeric rows.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        self.blocks
            .par_iter()
            .map(|b| {
                let idx = LineIndex::open_or_build(b)?;
                if idx.rows != b.count {
                    return Err(Error::Manifest(format!(
                        "{} has {} rows, manifest says {}",
                        b.path.display(),
                        idx.rows,
                        b.count
                    )));
                }
                Ok(())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    /// Loads a manifest, resolving block paths relative to the manifest directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: BlockManifest = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for b in &mut m.blocks {
            if b.path.is_relative() {
                b.path = dir.join(&b.path);
            }
        }
        m.check_shape()?;
        Ok(m)
    }

    /// Writes the manifest with block paths relative to `path`'s directory where possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut out = self.clone();
        for b in &mut out.blocks {
            if let Ok(rel) = b.path.strip_prefix(dir) {
                b.path = rel.to_path_buf();
            }
        }
        let text = serde_json::to_string_pretty(&out)?;
        write_atomic(path, text.as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Generates one text file per block plus `manifest.json` in `out_dir`.
///
/// Block `j` is drawn from `specs[j]` with a seed derived from `(seed, j)`, so
/// output is byte-identical for identical inputs regardless of thread count.
pub fn generate_dataset(
    specs: &[DistributionSpec],
    sizes: &[u64],
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<BlockManifest> {
    let out_dir = out_dir.as_ref();
    if sizes.is_empty() {
        return Err(invalid("at least one block size is required"));
    }
    if specs.len() != sizes.len() {
        return Err(invalid(format!(
            "{} distributions for {} blocks",
            specs.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(invalid("block sizes must be positive"));
    }
    specs.iter().try_for_each(DistributionSpec::validate)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let blocks = specs
        .par_iter()
        .zip(sizes.par_iter())
        .enumerate()
        .map(|(j, (spec, &count))| {
            let path = out_dir.join(format!("block_{j:04}.txt"));
            let desc = BlockDescriptor {
                path,
                count,
                spec: Some(*spec),
            };
            write_block(&desc, spec, derive_seed(seed, domain::GENERATE, j as u64, 0))?;
            Ok(desc)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = BlockManifest::new(blocks)?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    log::debug!("generated {} rows in {} blocks", manifest.total, manifest.blocks.len());
    Ok(manifest)
}

fn write_block(desc: &BlockDescriptor, spec: &DistributionSpec, seed: u64) -> Result<()> {
    let path = &desc.path;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 16, file);
    let mut offsets = Vec::with_capacity(desc.count as usize + 1);
    let mut pos = 0u64;
    let mut line = String::with_capacity(32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.fill(&mut rng, desc.count, |x| {
        use std::fmt::Write as _;
        offsets.push(pos);
        line.clear();
        let _ = writeln!(line, "{x}");
        pos += line.len() as u64;
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
    })?;
    offsets.push(pos);
    w.flush().map_err(|e| Error::io(path, e))?;
    LineIndex::write(&desc.index_path(), &offsets)
}

/// Row offsets of one block file.
#[derive(Debug)]
struct LineIndex {
    rows: u64,
}

impl LineIndex {
    fn write(path: &Path, offsets: &[u64]) -> Result<()> {
        let mut bytes = Vec::with_capacity(offsets.len() * 8);
        for o in offsets {
            bytes.extend_from_slice(&o.to_le_bytes());
        }
        write_atomic(path, &bytes)
    }

    /// Returns the cached index if it matches the file length, otherwise
    /// rebuilds it with a single validating scan.
    fn open_or_build(block: &BlockDescriptor) -> Result<Self> {
        let data_len = fs::metadata(&block.path).map_err(|e| Error::io(&block.path, e))?.len();
        let idx_path = block.index_path();
        if let Ok(meta) = fs::metadata(&idx_path) {
            let len = meta.len();
            if len >= 16 && len % 8 == 0 {
                let f = File::open(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
                let mut last = [0u8; 8];
                read_exact_at(&f, &mut last, len - 8).map_err(|e| Error::io(&idx_path, e))?;
                if u64::from_le_bytes(last) == data_len {
                    return Ok(Self { rows: len / 8 - 1 });
                }
            }
        }
        Self::build(block, &idx_path)
    }

    fn build(block: &BlockDescriptor, idx_path: &Path) -> Result<Self> {
        let path = &block.path;
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::with_capacity(1 << 16, f);
        let mut offsets = vec![0u64];
        let mut pos = 0u64;
        let mut line = String::new();
        let mut lineno = 0u64;
        loop {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            lineno += 1;
            parse_row(line.trim_end_matches(['\n', '\r']), path, lineno)?;
            pos += n as u64;
            offsets.push(pos);
        }
        Self::write(idx_path, &offsets)?;
        Ok(Self {
            rows: offsets.len() as u64 - 1,
        })
    }
}

fn parse_row(text: &str, path: &Path, line: u64) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("`{text}` is not a finite number"),
        })
}

#[cfg(unix)]
fn read_exact_at(f: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    f.read_exact_at(buf, offset)
}

#[cfg(not(unix))]
fn read_exact_at(f: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = f.try_clone()?;
    f.seek(SeekFrom::Start(offset))?;
    f.read_exact(buf)
}

/// Random access to the rows of one block.
pub struct BlockReader {
    path: PathBuf,
    data: File,
    index: File,
    rows: u64,
    line: Vec<u8>,
}

impl BlockReader {
    pub fn open(block: &BlockDescriptor) -> Result<Self> {
        let idx = LineIndex::open_or_build(block)?;
        if idx.rows == 0 {
            return Err(Error::EmptyBlock(block.path.display().to_string()));
        }
        let data = File::open(&block.path).map_err(|e| Error::io(&block.path, e))?;
        let index_path = block.index_path();
        let index = File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
        Ok(Self {
            path: block.path.clone(),
            data,
            index,
            rows: idx.rows,
            line: Vec::with_capacity(32),
        })
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn read_row(&mut self, row: u64) -> Result<f64> {
        debug_assert!(row < self.rows);
        let mut pair = [0u8; 16];
        read_exact_at(&self.index, &mut pair, row * 8).map_err(|e| Error::io(&self.path, e))?;
        let start = u64::from_le_bytes(pair[..8].try_into().expect("8 bytes"));
        let end = u64::from_le_bytes(pair[8..].try_into().expect("8 bytes"));
        if end < start || end - start > 4096 {
            return Err(Error::Parse {
                path: self.path.clone(),
                line: row + 1,
                message: "corrupt line index".into(),
            });
        }
        self.line.resize((end - start) as usize, 0);
        read_exact_at(&self.data, &mut self.line, start).map_err(|e| Error::io(&self.path, e))?;
        let text = std::str::from_utf8(&self.line).map_err(|_| Error::Parse {
            path: self.path.clone(),
            line: row + 1,
            message: "invalid UTF-8".into(),
        })?;
        parse_row(text.trim_end_matches(['\n', '\r']), &self.path, row + 1)
    }

    /// Sequential scan of every row (used for exact ground truth).
    pub fn scan_mean(block: &BlockDescriptor) -> Result<(u64, f64)> {
        let path = &block.path;
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let r = BufReader::with_capacity(1 << 16, f);
        let mut sum = crate::scalar::CompensatedSum::<f64>::default();
        let mut n = 0u64;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            sum.add(parse_row(&line, path, i as u64 + 1)?);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyBlock(path.display().to_string()));
        }
        Ok((n, sum.value() / n as f64))
    }
}

/// Stream of `n` rows drawn uniformly with replacement from one block.
pub struct SampleStream {
    reader: Option<BlockReader>,
    rng: ChaCha8Rng,
    remaining: u64,
}

impl Iterator for SampleStream {
    type Item = Result<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let reader = self.reader.as_mut()?;
        let row = self.rng.random_range(0..reader.rows());
        Some(reader.read_row(row))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

/// Draws `n` rows uniformly at random with replacement from block `block_id`.
///
/// The stream is a pure function of `(block_id, seed)` and the file contents.
pub fn draw_uniform(block: &BlockDescriptor, block_id: u64, n: u64, seed: u64) -> Result<SampleStream> {
    let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, block_id, 0));
    if n == 0 {
        return Ok(SampleStream {
            reader: None,
            rng,
            remaining: 0,
        });
    }
    Ok(SampleStream {
        reader: Some(BlockReader::open(block)?),
        rng,
        remaining: n,
    })
}

/// Exact population mean of the whole dataset by full scan.
pub fn full_scan_mean(manifest: &BlockManifest) -> Result<f64> {
    let parts = manifest
        .blocks
        .par_iter()
        .map(BlockReader::scan_mean)
        .collect::<Result<Vec<_>>>()?;
    let mut sum = crate::scalar::CompensatedSum::<f64>::default();
    let mut n = 0u64;
    for (count, mean) in parts {
        sum.add(mean * count as f64);
        n += count;
    }
    Ok(sum.value() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_with(dir: &Path, name: &str, body: &str) -> BlockDescriptor {
        let path = dir.join(name);
        fs::write(&path, body).unwrap();
        BlockDescriptor {
            path,
            count: body.lines().count() as u64,
            spec: None,
        }
    }

    #[test]
    fn parses_distribution_specs() {
        assert_eq!(
            "normal:100,20".parse::<DistributionSpec>().unwrap(),
            DistributionSpec::Normal { mu: 100.0, sigma: 20.0 }
        );
        assert_eq!(
            "exponential:0.1".parse::<DistributionSpec>().unwrap(),
            DistributionSpec::Exponential { gamma: 0.1 }
        );
        assert!("normal:100,-1".parse::<DistributionSpec>().is_err());
        assert!("uniform:5,5".parse::<DistributionSpec>().is_err());
        assert!("exponential:0".parse::<DistributionSpec>().is_err());
        assert!("gamma:1".parse::<DistributionSpec>().is_err());
    }

    #[test]
    fn uniform_block_stays_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DistributionSpec::Uniform { lo: 1.0, hi: 199.0 };
        let m = generate_dataset(&[spec], &[10], 1, dir.path()).unwrap();
        assert_eq!(m.total, 10);
        let text = fs::read_to_string(&m.blocks[0].path).unwrap();
        let rows: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|&x| (1.0..=199.0).contains(&x)));
    }

    #[test]
    fn generation_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DistributionSpec::Normal { mu: 0.0, sigma: 1.0 };
        assert!(generate_dataset(&[], &[], 1, dir.path()).is_err());
        assert!(generate_dataset(&[spec], &[0], 1, dir.path()).is_err());
        assert!(generate_dataset(&[spec, spec], &[3], 1, dir.path()).is_err());
        let bad = DistributionSpec::Normal { mu: 0.0, sigma: 0.0 };
        assert!(generate_dataset(&[bad], &[3], 1, dir.path()).is_err());
    }

    #[test]
    fn single_row_block_repeats_its_value() {
        let dir = tempfile::tempdir().unwrap();
        let b = block_with(dir.path(), "one.txt", "42\n");
        let xs: Vec<f64> = draw_uniform(&b, 0, 5, 3).unwrap().map(Result::unwrap).collect();
        assert_eq!(xs, vec![42.0; 5]);
    }

    #[test]
    fn zero_draws_is_empty_even_for_missing_file() {
        let b = BlockDescriptor {
            path: PathBuf::from("/nonexistent/block.txt"),
            count: 1,
            spec: None,
        };
        assert_eq!(draw_uniform(&b, 0, 0, 1).unwrap().count(), 0);
        assert!(draw_uniform(&b, 0, 1, 1).is_err());
    }

    #[test]
    fn malformed_rows_are_hard_errors() {
        let dir = tempfile::tempdir().unwrap();
        let b = block_with(dir.path(), "bad.txt", "1\n2\nabc\n4\n");
        match draw_uniform(&b, 0, 1, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn empty_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let b = block_with(dir.path(), "empty.txt", "");
        assert!(matches!(draw_uniform(&b, 0, 1, 1), Err(Error::EmptyBlock(_))));
    }

    #[test]
    fn stale_index_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let b = block_with(dir.path(), "b.txt", "1\n2\n3\n");
        let _ = draw_uniform(&b, 0, 3, 1).unwrap().count();
        fs::write(&b.path, "10\n20\n30\n40\n").unwrap();
        let b = BlockDescriptor { count: 4, ..b };
        let xs: Vec<f64> = draw_uniform(&b, 0, 200, 1).unwrap().map(Result::unwrap).collect();
        assert!(xs.iter().all(|x| [10.0, 20.0, 30.0, 40.0].contains(x)));
        assert!(xs.contains(&40.0));
    }

    #[test]
    fn manifest_validation_detects_row_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = block_with(dir.path(), "b.txt", "1\n2\n3\n");
        b.count = 4;
        let m = BlockManifest::new(vec![b]).unwrap();
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));
    }

    #[test]
    fn derived_seeds_differ_by_every_component() {
        let base = derive_seed(1, 2, 3, 4);
        assert_ne!(base, derive_seed(0, 2, 3, 4));
        assert_ne!(base, derive_seed(1, 0, 3, 4));
        assert_ne!(base, derive_seed(1, 2, 0, 4));
        assert_ne!(base, derive_seed(1, 2, 3, 0));
        assert_eq!(base, derive_seed(1, 2, 3, 4));
    }
}
