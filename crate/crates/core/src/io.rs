//! On-disk formats for training data.
//!
//! Feature file (little-endian):
//!
//! ```text
//! "GPCF" | u32 version = 1 | u64 N | u32 k | u32 S | S x u32 block starts | N*k f64
//! ```
//!
//! Values are instance-major. The block starts give the first feature index
//! of each scale group; `S = 0` means all features share one scale.
//! Labels, groups and weights are text files with one entry per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{GroupIndex, GroupedDataset};
use crate::error::{Error, Result};
use crate::hyper::{scale_group_count, scale_groups_from_starts};
use crate::oracle::FeatureShard;

pub const FEATURE_MAGIC: &[u8; 4] = b"GPCF";
pub const FEATURE_VERSION: u32 = 1;

/// Contents of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub features: FeatureShard,
    /// First feature index of each declared scale group (may be empty).
    pub scale_starts: Vec<u32>,
}

impl FeatureFile {
    /// Scale-group map declared by the header.
    pub fn scale_group_of(&self) -> Result<Vec<usize>> {
        scale_groups_from_starts(&self.scale_starts, self.features.k())
    }
}

/// Size in bytes of the encoding produced by [`write_features`].
pub fn encoded_len(features: &FeatureShard, scale_starts: &[u32]) -> u64 {
    (FEATURE_MAGIC.len() + 4 + 8 + 4 + 4 + 4 * scale_starts.len()) as u64
        + 8 * features.data().len() as u64
}

pub fn write_features<W: Write>(mut w: W, features: &FeatureShard, scale_starts: &[u32]) -> Result<()> {
    let k = u32::try_from(features.k())
        .map_err(|_| Error::DataFormat("feature dimension exceeds u32".into()))?;
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(features.n_cols() as u64).to_le_bytes())?;
    w.write_all(&k.to_le_bytes())?;
    w.write_all(&(scale_starts.len() as u32).to_le_bytes())?;
    for s in scale_starts {
        w.write_all(&s.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * 1024);
    for chunk in features.data().chunks(1024) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a feature file; the resulting shard has `col_offset` 0.
pub fn read_features<R: Read>(r: R) -> Result<FeatureFile> {
    read_features_at(r, 0)
}

pub(crate) fn read_features_at<R: Read>(mut r: R, col_offset: usize) -> Result<FeatureFile> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::DataFormat(format!("bad magic {magic:?}, expected GPCF")));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::DataFormat(format!("unsupported feature file version {version}")));
    }
    let n = read_u64(&mut r)?;
    let k = read_u32(&mut r)? as usize;
    let s = read_u32(&mut r)? as usize;
    if k == 0 {
        return Err(Error::DataFormat("feature dimension is 0".into()));
    }
    if s > k {
        return Err(Error::DataFormat(format!("{s} scale groups for {k} features")));
    }
    let mut scale_starts = Vec::with_capacity(s);
    for _ in 0..s {
        scale_starts.push(read_u32(&mut r)?);
    }
    let n = usize::try_from(n).map_err(|_| Error::DataFormat("N does not fit in memory".into()))?;
    let total = n
        .checked_mul(k)
        .ok_or_else(|| Error::DataFormat("N*k overflows".into()))?;
    // Capacity is capped so a corrupt header cannot reserve memory the
    // stream never delivers.
    let mut data = Vec::with_capacity(total.min(1 << 24));
    let mut buf = vec![0u8; 8 * 4096];
    let mut remaining = total;
    while remaining > 0 {
        let take = remaining.min(4096);
        read_exact(&mut r, &mut buf[..8 * take])?;
        data.extend(
            buf[..8 * take]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
        );
        remaining -= take;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::DataFormat("trailing bytes after feature values".into()));
    }
    let file = FeatureFile {
        features: FeatureShard::new(data, k, col_offset)?,
        scale_starts,
    };
    file.scale_group_of()?;
    Ok(file)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::DataFormat("feature file is truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_features(path: &Path) -> Result<FeatureFile> {
    read_features(BufReader::new(File::open(path)?))
}

pub fn save_features(path: &Path, features: &FeatureShard, scale_starts: &[u32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features(&mut w, features, scale_starts)?;
    w.flush()?;
    Ok(())
}

fn non_empty_lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty()).then(|| Ok((i + 1, t.to_owned())))
        }
        Err(e) => Some(Err(Error::Io(e))),
    })
}

/// One label per line, each `-1` or `+1` (`1` is accepted).
pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<f64>> {
    non_empty_lines(r)
        .map(|line| {
            let (no, s) = line?;
            match s.as_str() {
                "+1" | "1" => Ok(1.0),
                "-1" => Ok(-1.0),
                other => match other.parse::<f64>() {
                    Ok(v) if v == 1.0 || v == -1.0 => Ok(v),
                    _ => Err(Error::Label(format!("line {no}: {other:?} is not -1 or +1"))),
                },
            }
        })
        .collect()
}

/// One group token per line, mapped to dense indices in first-appearance
/// order.
pub fn read_groups<R: BufRead>(r: R) -> Result<(GroupIndex, Vec<usize>)> {
    let tokens: Vec<String> = non_empty_lines(r).map(|l| l.map(|(_, s)| s)).collect::<Result<_>>()?;
    Ok(GroupIndex::from_tokens(tokens))
}

/// One positive real per line.
pub fn read_weights<R: BufRead>(r: R) -> Result<Vec<f64>> {
    non_empty_lines(r)
        .map(|line| {
            let (no, s) = line?;
            let w: f64 = s
                .parse()
                .map_err(|_| Error::DataFormat(format!("line {no}: {s:?} is not a number")))?;
            if !w.is_finite() {
                return Err(Error::Numeric(format!("line {no}: weight {w}")));
            }
            if w <= 0.0 {
                return Err(Error::Domain(format!("line {no}: weight {w} is not positive")));
            }
            Ok(w)
        })
        .collect()
}

/// One scale-group index per feature, one per line; indices must be dense.
pub fn read_scale_groups<R: BufRead>(r: R, k: usize) -> Result<Vec<usize>> {
    let groups: Vec<usize> = non_empty_lines(r)
        .map(|line| {
            let (no, s) = line?;
            s.parse()
                .map_err(|_| Error::DataFormat(format!("line {no}: {s:?} is not an index")))
        })
        .collect::<Result<_>>()?;
    if groups.len() != k {
        return Err(Error::DataFormat(format!(
            "scale-group file lists {} features, expected {k}",
            groups.len()
        )));
    }
    scale_group_count(&groups)?;
    Ok(groups)
}

/// Writes one group token per line, in dense-index order.
pub fn write_group_tokens<W: Write>(mut w: W, index: &GroupIndex) -> Result<()> {
    for t in index.tokens() {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

/// A validated training set read from disk.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub features: FeatureShard,
    pub scale_starts: Vec<u32>,
    pub dataset: GroupedDataset,
    pub groups: GroupIndex,
}

/// Reads features, labels and groups and checks that they describe the same
/// instances.
pub fn load_dataset(features_path: &Path, labels_path: &Path, groups_path: &Path) -> Result<LoadedData> {
    let FeatureFile {
        features,
        scale_starts,
    } = read_features(open(features_path)?)?;
    let labels = read_labels(open(labels_path)?)?;
    let (groups, group_of) = read_groups(open(groups_path)?)?;
    let n = features.n_cols();
    if labels.len() != n || group_of.len() != n {
        return Err(Error::DataFormat(format!(
            "{n} feature vectors, {} labels, {} group entries",
            labels.len(),
            group_of.len()
        )));
    }
    let dataset = GroupedDataset::new(labels, group_of, groups.len())?;
    Ok(LoadedData {
        features,
        scale_starts,
        dataset,
        groups,
    })
}

pub fn load_weights(path: &Path) -> Result<Vec<f64>> {
    read_weights(open(path)?)
}

pub fn load_scale_groups(path: &Path, k: usize) -> Result<Vec<usize>> {
    read_scale_groups(open(path)?, k)
}

pub fn load_group_tokens(path: &Path) -> Result<Vec<String>> {
    non_empty_lines(open(path)?).map(|l| l.map(|(_, s)| s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn bytes(features: &FeatureShard, starts: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        write_features(&mut out, features, starts).unwrap();
        out
    }

    #[test]
    fn header_layout() {
        let f = FeatureShard::new(vec![1.0, 2.0, 3.0, 4.0], 2, 0).unwrap();
        let b = bytes(&f, &[0, 1]);
        assert_eq!(&b[..4], b"GPCF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 2);
        assert_eq!(b.len(), 4 + 4 + 8 + 4 + 4 + 8 + 4 * 8);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 1.0);
        let back = read_features(Cursor::new(b)).unwrap();
        assert_eq!(back.features, f);
        assert_eq!(back.scale_group_of().unwrap(), vec![0, 1]);
    }

    #[test]
    fn rejects_corrupt_feature_files() {
        let f = FeatureShard::new(vec![1.0, 2.0], 1, 0).unwrap();
        let mut b = bytes(&f, &[]);
        b.pop();
        assert!(matches!(read_features(Cursor::new(&b)), Err(Error::DataFormat(_))));

        let mut b = bytes(&f, &[]);
        b[0] = b'X';
        assert!(matches!(read_features(Cursor::new(&b)), Err(Error::DataFormat(_))));

        let mut b = bytes(&f, &[]);
        let nan = f64::NAN.to_le_bytes();
        let len = b.len();
        b[len - 8..].copy_from_slice(&nan);
        assert!(matches!(read_features(Cursor::new(&b)), Err(Error::Numeric(_))));
    }

    #[test]
    fn labels_parsing() {
        assert_eq!(read_labels(Cursor::new("1\n-1\n+1\n")).unwrap(), vec![1.0, -1.0, 1.0]);
        assert!(matches!(read_labels(Cursor::new("1\n0\n")), Err(Error::Label(_))));
    }

    #[test]
    fn weights_parsing() {
        assert_eq!(read_weights(Cursor::new("0.5\n2\n")).unwrap(), vec![0.5, 2.0]);
        assert!(read_weights(Cursor::new("0\n")).is_err());
        assert!(read_weights(Cursor::new("abc\n")).is_err());
    }

    #[test]
    fn scale_group_file() {
        assert_eq!(read_scale_groups(Cursor::new("0\n0\n1\n"), 3).unwrap(), vec![0, 0, 1]);
        assert!(read_scale_groups(Cursor::new("0\n2\n"), 2).is_err());
        assert!(read_scale_groups(Cursor::new("0\n"), 2).is_err());
    }

    fn write(dir: &Path, name: &str, contents: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn load_minimal_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureShard::new(vec![1.0, 0.0, 0.0, 1.0], 2, 0).unwrap();
        let fp = write(dir.path(), "f.bin", &bytes(&f, &[]));
        let lp = write(dir.path(), "y.txt", b"1\n-1\n");
        let gp = write(dir.path(), "g.txt", b"img_a\nimg_a\n");
        let data = load_dataset(&fp, &lp, &gp).unwrap();
        assert_eq!(data.dataset.n_instances(), 2);
        assert_eq!(data.dataset.n_groups(), 1);
        assert_eq!(data.groups.token(0), Some("img_a"));

        let f6 = FeatureShard::new(vec![0.5; 12], 2, 0).unwrap();
        let fp6 = write(dir.path(), "f6.bin", &bytes(&f6, &[]));
        let lp5 = write(dir.path(), "y5.txt", b"1\n1\n1\n-1\n-1\n");
        let gp6 = write(dir.path(), "g6.txt", b"a\na\nb\nb\nc\nc\n");
        assert!(matches!(load_dataset(&fp6, &lp5, &gp6), Err(Error::DataFormat(_))));

        let lp0 = write(dir.path(), "y0.txt", b"1\n0\n");
        assert!(matches!(load_dataset(&fp, &lp0, &gp), Err(Error::Label(_))));
    }
}
