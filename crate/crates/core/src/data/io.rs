//! On-disk corpus format.
//!
//! Embedding files are little-endian: the 8-byte magic `FLEXEMB1`, `u32` row
//! count, `u32` width, then `rows * width` `f32` values in row-major order.
//! Labels and attribute class ids are UTF-8 text with one integer per line.
//! A corpus directory holds five files, named as in [`CorpusPaths::in_dir`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::corpus::{ClassId, Corpus};
use crate::error::{Error, Result};
use crate::numerics::RealArray;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"FLEXEMB1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusPaths {
    pub image: PathBuf,
    pub text: PathBuf,
    pub labels: PathBuf,
    pub attrs: PathBuf,
    pub attr_ids: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            image: d.join("image.emb"),
            text: d.join("text.emb"),
            labels: d.join("labels.txt"),
            attrs: d.join("attrs.emb"),
            attr_ids: d.join("attr_ids.txt"),
        }
    }
}

fn ingest(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_embeddings(path: &Path, values: &RealArray) -> Result<()> {
    let rows = u32::try_from(values.rows()).map_err(|_| ingest(path, "too many rows"))?;
    let cols = u32::try_from(values.cols()).map_err(|_| ingest(path, "too many columns"))?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for &v in values.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<RealArray> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(ingest(path, "missing FLEXEMB1 header"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != rows * cols * 4 {
        return Err(ingest(
            path,
            format!(
                "header declares {rows}x{cols} values but body holds {} bytes",
                body.len()
            ),
        ));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: path.display().to_string(),
            index,
        });
    }
    Ok(RealArray::from_vec(rows, cols, data))
}

pub fn write_ids(path: &Path, ids: &[ClassId]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ids(path: &Path) -> Result<Vec<ClassId>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse::<ClassId>()
                .map_err(|e| ingest(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn load_corpus(paths: &CorpusPaths, name: impl Into<String>) -> Result<Corpus> {
    let image = read_embeddings(&paths.image)?;
    let text = read_embeddings(&paths.text)?;
    let labels = read_ids(&paths.labels)?;
    let attrs = read_embeddings(&paths.attrs)?;
    let attr_ids = read_ids(&paths.attr_ids)?;
    if image.shape() != text.shape() {
        return Err(Error::Dimension {
            op: "image vs text embeddings",
            left: image.shape(),
            right: text.shape(),
        });
    }
    if labels.len() != image.rows() {
        return Err(ingest(
            &paths.labels,
            format!("{} labels for {} instances", labels.len(), image.rows()),
        ));
    }
    if attrs.cols() != image.cols() {
        return Err(Error::Dimension {
            op: "attribute vs feature width",
            left: attrs.shape(),
            right: image.shape(),
        });
    }
    if attr_ids.len() != attrs.rows() {
        return Err(ingest(
            &paths.attr_ids,
            format!("{} class ids for {} attribute rows", attr_ids.len(), attrs.rows()),
        ));
    }
    let mut class_attrs = BTreeMap::new();
    for (r, &id) in attr_ids.iter().enumerate() {
        if class_attrs.insert(id, attrs.row(r).to_vec()).is_some() {
            return Err(ingest(&paths.attr_ids, format!("class {id} listed twice")));
        }
    }
    Corpus::new(name, image, text, labels, class_attrs)
}

/// Loads a corpus directory, naming the corpus after the directory.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    load_corpus(&CorpusPaths::in_dir(dir), name)
}

/// Writes a corpus in the on-disk format. Values are stored as `f32`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<CorpusPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths = CorpusPaths::in_dir(dir);
    write_embeddings(&paths.image, corpus.image())?;
    write_embeddings(&paths.text, corpus.text())?;
    write_ids(&paths.labels, corpus.labels())?;
    let ids: Vec<ClassId> = corpus.class_attrs().keys().copied().collect();
    let rows: Vec<&Vec<f64>> = corpus.class_attrs().values().collect();
    let attrs = if rows.is_empty() {
        RealArray::zeros(0, corpus.dim())
    } else {
        RealArray::from_rows(&rows)?
    };
    write_embeddings(&paths.attrs, &attrs)?;
    write_ids(&paths.attr_ids, &ids)?;
    Ok(paths)
}

/// Rounds every value through `f32`, the precision of the file format.
pub fn round_to_f32(a: &RealArray) -> RealArray {
    a.map(|v| f64::from(v as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Corpus {
        let img = RealArray::from_vec(4, 8, (0..32).map(|i| i as f64 * 0.25).collect());
        let txt = img.map(|v| -v);
        let attrs = BTreeMap::from([(0, vec![0.5; 8]), (1, vec![-0.5; 8])]);
        Corpus::new("fixture", img, txt, vec![0, 1, 0, 1], attrs).unwrap()
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = fixture();
        write_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(&CorpusPaths::in_dir(dir.path()), "fixture").unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.class_attrs().len(), 2);
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_label_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(&fixture(), dir.path()).unwrap();
        fs::write(&paths.labels, "0\n1\n7\n1\n").unwrap();
        let err = load_corpus(&paths, "x").unwrap_err();
        assert_eq!(err.to_string(), "missing attribute for class 7");
    }

    #[test]
    fn width_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(&fixture(), dir.path()).unwrap();
        write_embeddings(&paths.text, &RealArray::zeros(4, 6)).unwrap();
        assert!(matches!(load_corpus(&paths, "x"), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(&fixture(), dir.path()).unwrap();
        let mut bytes = fs::read(&paths.image).unwrap();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&paths.image, bytes).unwrap();
        assert!(matches!(load_corpus(&paths, "x"), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.emb");
        fs::write(&p, b"NOTMAGIC\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Ingest { .. })));
    }
}
