//! CSV manifests (`path,label`) referencing PGM images relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::pgm;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    /// `None` for unlabeled records.
    pub label: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
    pub side: usize,
    pub channels: usize,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    pub fn image_path(&self, r: &Record) -> PathBuf {
        self.root.join(&r.path)
    }

    /// Same images with every label dropped.
    pub fn without_labels(&self) -> Manifest {
        Manifest {
            records: self
                .records
                .iter()
                .map(|r| Record {
                    path: r.path.clone(),
                    label: None,
                })
                .collect(),
            ..self.clone()
        }
    }

    fn subset(&self, records: Vec<Record>) -> Manifest {
        Manifest {
            records,
            ..self.clone()
        }
    }
}

fn row_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::ManifestRow {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

/// Parses and validates a manifest, decoding every referenced image header.
/// Row numbers in errors are file line numbers (the header is line 1).
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header_ok = reader
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>() == ["path", "label"])
        .unwrap_or(false);
    if !header_ok {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            msg: "header must be `path,label`".into(),
        });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut side = None;
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| row_err(path, line, format!("malformed row: {e}")))?;
        if row.len() != 2 {
            return Err(row_err(path, line, format!("expected 2 fields, found {}", row.len())));
        }
        let rel = row[0].to_string();
        if rel.is_empty() {
            return Err(row_err(path, line, "empty path"));
        }
        let label = match &row[1] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(row_err(path, line, format!("label `{other}` is not 0, 1 or empty"))),
        };
        if !seen.insert(rel.clone()) {
            return Err(row_err(path, line, format!("duplicate path `{rel}`")));
        }
        let bytes = fs::read(root.join(&rel)).map_err(|e| row_err(path, line, format!("{rel}: {e}")))?;
        let (w, h) = pgm::pgm_dims(&bytes).map_err(|e| row_err(path, line, format!("{rel}: {e}")))?;
        // decode fully so truncated payloads surface here rather than mid-training
        pgm::decode_pgm::<f32>(&bytes).map_err(|e| row_err(path, line, format!("{rel}: {e}")))?;
        if w != h {
            return Err(row_err(path, line, format!("{rel}: image is {w}x{h}, expected square")));
        }
        match side {
            None => side = Some(w),
            Some(s) if s != w => {
                return Err(row_err(path, line, format!("{rel}: side {w} differs from {s}")));
            }
            _ => {}
        }
        records.push(Record { path: rel, label });
    }
    let Some(side) = side else {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            msg: "no records".into(),
        });
    };
    Ok(Manifest {
        root,
        records,
        side,
        channels: 1,
    })
}

/// Writes `path,label` rows; the manifest root is not stored.
pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let io = |e: csv::Error| Error::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    w.write_record(["path", "label"]).map_err(io)?;
    for r in &m.records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([r.path.as_str(), label.as_str()]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Seeded split into (train, eval). Labeled records are stratified per label
/// group, with cumulative rounding so the train side holds round(fraction·n).
pub fn split(m: &Manifest, fraction: f64, rng: &mut Rng) -> Result<(Manifest, Manifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    // cumulative rounding keeps the overall train count at round(fraction * n)
    let mut seen = 0usize;
    for group in [Some(0u8), Some(1), None] {
        let mut members: Vec<&Record> = m.records.iter().filter(|r| r.label == group).collect();
        rng.shuffle(&mut members);
        let before = (fraction * seen as f64).round() as usize;
        seen += members.len();
        let k = (fraction * seen as f64).round() as usize - before;
        train.extend(members[..k].iter().map(|r| (*r).clone()));
        eval.extend(members[k..].iter().map(|r| (*r).clone()));
    }
    Ok((m.subset(train), m.subset(eval)))
}

/// Decoded images of a manifest, in record order.
#[derive(Clone, Debug)]
pub struct Dataset<T: Real = f64> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<Option<u8>>,
    pub side: usize,
}

impl<T: Real> Dataset<T> {
    pub fn load(m: &Manifest) -> Result<Self> {
        let mut images = Vec::with_capacity(m.len());
        for (i, r) in m.records.iter().enumerate() {
            let path = m.image_path(r);
            let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            images.push(pgm::decode_pgm(&bytes).map_err(|e| Error::ManifestRow {
                path: path.clone(),
                row: i + 2,
                msg: e.to_string(),
            })?);
        }
        Ok(Dataset {
            images,
            labels: m.records.iter().map(|r| r.label).collect(),
            side: m.side,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Labels as classes; fails if any record is unlabeled.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| l.map(usize::from).ok_or_else(|| Error::Config("dataset has unlabeled records".into())))
            .collect()
    }

    pub fn without_labels(mut self) -> Self {
        self.labels.iter_mut().for_each(|l| *l = None);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_img(dir: &Path, name: &str, side: usize, fill: u8) {
        let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
        bytes.extend(std::iter::repeat_n(fill, side * side));
        fs::write(dir.join(name), bytes).unwrap();
    }

    #[test]
    fn write_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (i, n) in ["a.pgm", "b.pgm", "c.pgm"].iter().enumerate() {
            write_img(dir.path(), n, 4, i as u8 * 60);
        }
        let m = Manifest {
            root: dir.path().to_path_buf(),
            records: vec![
                Record { path: "a.pgm".into(), label: Some(1) },
                Record { path: "b.pgm".into(), label: None },
                Record { path: "c.pgm".into(), label: Some(0) },
            ],
            side: 4,
            channels: 1,
        };
        let path = dir.path().join("m.csv");
        write_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, m);
        let again = dir.path().join("m2.csv");
        write_manifest(&loaded, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
        let ds = Dataset::<f64>::load(&loaded).unwrap();
        assert_eq!(ds.images[2].data()[0], 120.0 / 255.0);
    }

    #[test]
    fn validation_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.pgm", 4, 0);
        write_img(dir.path(), "big.pgm", 8, 0);
        let p = dir.path().join("m.csv");

        fs::write(&p, "path,label\n").unwrap();
        assert!(load_manifest(&p).unwrap_err().to_string().contains("no records"));

        fs::write(&p, "path,label\na.pgm,2\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::ManifestRow { row: 2, .. })));

        fs::write(&p, "path,label\na.pgm,1\nmissing.pgm,0\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::ManifestRow { row: 3, .. })));

        fs::write(&p, "path,label\na.pgm,1\nbig.pgm,0\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::ManifestRow { row: 3, .. })));

        fs::write(&p, "path,label\na.pgm,1\na.pgm,0\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::ManifestRow { row: 3, .. })));

        fs::write(&p, "file,class\na.pgm,1\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { .. })));

        assert!(load_manifest(&dir.path().join("nope.csv")).is_err());
    }

    fn balanced(n: usize) -> Manifest {
        Manifest {
            root: PathBuf::new(),
            records: (0..n)
                .map(|i| Record {
                    path: format!("{i}.pgm"),
                    label: Some((i % 2) as u8),
                })
                .collect(),
            side: 4,
            channels: 1,
        }
    }

    #[test]
    fn split_is_stratified_exhaustive_and_seeded() {
        let m = balanced(10);
        let (a, b) = split(&m, 0.5, &mut Rng::new(1)).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        for side in [&a, &b] {
            let ones = side.records.iter().filter(|r| r.label == Some(1)).count();
            assert!((2..=3).contains(&ones));
        }
        let mut all: Vec<_> = a.records.iter().chain(&b.records).map(|r| r.path.clone()).collect();
        all.sort();
        let mut want: Vec<_> = m.records.iter().map(|r| r.path.clone()).collect();
        want.sort();
        assert_eq!(all, want);
        assert_eq!(split(&m, 0.5, &mut Rng::new(1)).unwrap(), (a, b));
        assert!(split(&m, 1.0, &mut Rng::new(1)).is_err());
        assert!(split(&m, 0.0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn split_preserves_class_proportions() {
        let mut m = balanced(37);
        m.records.truncate(31);
        for seed in 0..20 {
            let (a, _) = split(&m, 0.7, &mut Rng::new(seed)).unwrap();
            for label in [0u8, 1] {
                let total = m.records.iter().filter(|r| r.label == Some(label)).count() as f64;
                let got = a.records.iter().filter(|r| r.label == Some(label)).count() as f64;
                assert!((got - 0.7 * total).abs() <= 1.0);
            }
        }
    }
}
