//! Text persistence for embeddings and checkpoints.
//!
//! An embedding file is word2vec text: a `V dim` header followed by `V` lines
//! `word c1 … c_dim`, each coordinate written with 17 significant digits so a
//! load/save cycle reproduces the file byte for byte. Run metadata lives in a
//! sidecar `<file>.meta` of `key = value` lines.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::Embeddings;
use crate::model::{Geometry, ParameterStore, TrainStats};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("missing metadata sidecar {}", .0.display())]
    MissingSidecar(PathBuf),
    #[error("{}:{line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: row for {word:?} has norm {norm}, outside the unit ball", path.display())]
    OutsideBall {
        path: PathBuf,
        line: usize,
        word: String,
        norm: f64,
    },
}

pub type Result<T> = std::result::Result<T, PersistError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Appends `suffix` to the full file name (`emb.txt` → `emb.txt.meta`).
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    with_suffix(path, ".meta")
}

/// Ordered `key = value` metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces an existing key in place or appends a new one.
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k} = {v}")?;
        }
        Ok(())
    }

    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut meta = Metadata::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| PersistError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            meta.set(k.trim(), v);
        }
        Ok(meta)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(PersistError::MissingSidecar(path.to_path_buf()))
            }
            Err(e) => return Err(io_err(path)(e)),
        };
        Self::parse(path, &text)
    }
}

fn write_matrix(path: &Path, words: &[String], dim: usize, values: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> io::Result<()> {
        writeln!(out, "{} {}", words.len(), dim)?;
        for (word, row) in words.iter().zip(values.chunks_exact(dim)) {
            out.write_all(word.as_bytes())?;
            for x in row {
                write!(out, " {x:.16e}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

struct Matrix {
    words: Vec<String>,
    dim: usize,
    values: Vec<f64>,
}

fn read_matrix(path: &Path, ball: bool) -> Result<Matrix> {
    let file = File::open(path).map_err(io_err(path))?;
    let malformed = |line: usize, reason: String| PersistError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?
        .map_err(io_err(path))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let (count, dim) = match fields[..] {
        [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
            (Ok(v), Ok(d)) if d > 0 => (v, d),
            _ => return Err(malformed(1, format!("bad header {header:?}"))),
        },
        _ => return Err(malformed(1, format!("header must be `V dim`, got {header:?}"))),
    };
    let mut words = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(io_err(path))?;
        if words.len() == count {
            return Err(malformed(lineno, format!("more than the {count} rows the header declares")));
        }
        let mut parts = line.split(' ');
        let word = parts.next().filter(|w| !w.is_empty()).ok_or_else(|| malformed(lineno, "missing word".into()))?;
        let start = values.len();
        for p in parts {
            let x: f64 = p
                .parse()
                .map_err(|_| malformed(lineno, format!("bad coordinate {p:?}")))?;
            if !x.is_finite() {
                return Err(malformed(lineno, format!("non-finite coordinate {p:?}")));
            }
            values.push(x);
        }
        let got = values.len() - start;
        if got != dim {
            return Err(malformed(lineno, format!("expected {dim} coordinates, found {got}")));
        }
        if ball {
            let norm = crate::geometry::norm(&values[start..]);
            if norm >= 1.0 {
                return Err(PersistError::OutsideBall {
                    path: path.to_path_buf(),
                    line: lineno,
                    word: word.to_string(),
                    norm,
                });
            }
        }
        words.push(word.to_string());
    }
    if words.len() != count {
        return Err(malformed(
            words.len() + 2,
            format!("header declares {count} rows, found {}", words.len()),
        ));
    }
    Ok(Matrix { words, dim, values })
}

fn geometry_of(path: &Path, meta: &Metadata) -> Result<Geometry> {
    let sidecar = sidecar_path(path);
    let bad = |reason: String| PersistError::Malformed {
        path: sidecar.clone(),
        line: 0,
        reason,
    };
    let g = meta.get("geometry").ok_or_else(|| bad("missing key `geometry`".into()))?;
    let g = g.parse::<Geometry>().map_err(bad)?;
    let dim = meta.get("dim").ok_or_else(|| bad("missing key `dim`".into()))?;
    dim.parse::<usize>().map_err(|_| bad(format!("bad dim {dim:?}")))?;
    Ok(g)
}

/// Writes the embedding file and its sidecar. `geometry`, `dim` and
/// `vocab_size` in the sidecar always reflect the embeddings themselves.
pub fn save_embeddings(path: &Path, emb: &Embeddings, metadata: &Metadata) -> Result<()> {
    let mut meta = metadata.clone();
    meta.set("geometry", emb.geometry())
        .set("dim", emb.dim())
        .set("vocab_size", emb.len());
    write_matrix(path, emb.words(), emb.dim(), emb.vectors())?;
    let sidecar = sidecar_path(path);
    let file = File::create(&sidecar).map_err(io_err(&sidecar))?;
    let mut out = BufWriter::new(file);
    meta.write(&mut out)
        .and_then(|_| out.flush())
        .map_err(io_err(&sidecar))
}

/// Reads an embedding file, checking the header, row shapes, the sidecar and,
/// for Poincaré files, that every row lies inside the unit ball.
pub fn load_embeddings(path: &Path) -> Result<(Embeddings, Metadata)> {
    let meta = Metadata::read(&sidecar_path(path))?;
    let geometry = geometry_of(path, &meta)?;
    let m = read_matrix(path, geometry == Geometry::Poincare)?;
    if meta.get("dim") != Some(m.dim.to_string().as_str()) {
        return Err(PersistError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("dimension {} disagrees with sidecar dim {:?}", m.dim, meta.get("dim")),
        });
    }
    let emb = Embeddings::new(geometry, m.dim, m.words, m.values).map_err(|e| PersistError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    Ok((emb, meta))
}

fn write_biases(path: &Path, words: &[String], biases: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> io::Result<()> {
        for (w, b) in words.iter().zip(biases) {
            writeln!(out, "{w} {b:.16e}")?;
        }
        out.flush()
    };
    write().map_err(io_err(path))
}

fn read_biases(path: &Path, words: &[String]) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, reason: String| PersistError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = Vec::with_capacity(words.len());
    for (i, line) in text.lines().enumerate() {
        let (w, b) = line
            .split_once(' ')
            .ok_or_else(|| malformed(i + 1, "expected `word bias`".into()))?;
        if words.get(i).map(String::as_str) != Some(w) {
            return Err(malformed(i + 1, format!("unexpected word {w:?}")));
        }
        out.push(b.parse().map_err(|_| malformed(i + 1, format!("bad bias {b:?}")))?);
    }
    if out.len() != words.len() {
        return Err(malformed(out.len() + 1, format!("expected {} biases", words.len())));
    }
    Ok(out)
}

fn fmt_f64_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}

/// Saves everything needed to resume training: target rows (as a regular
/// embedding file), context rows, biases, and the trainer's counters.
pub fn save_checkpoint(
    path: &Path,
    store: &ParameterStore,
    words: &[String],
    stats: &TrainStats,
    metadata: &Metadata,
) -> Result<()> {
    let emb = Embeddings::new(store.geometry, store.dim, words.to_vec(), store.target.clone()).map_err(|e| {
        PersistError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        }
    })?;
    let mut meta = metadata.clone();
    meta.set("checkpoint_epoch", stats.epoch)
        .set("checkpoint_pairs_processed", stats.pairs_processed)
        .set("checkpoint_mean_loss", format!("{:.16e}", stats.mean_loss))
        .set("checkpoint_skipped_singular", stats.skipped_singular)
        .set("checkpoint_skipped_saturated", stats.skipped_saturated)
        .set("checkpoint_epoch_losses", fmt_f64_list(&stats.epoch_losses))
        .set("checkpoint_context_bias", store.context_bias.is_some())
        .set("checkpoint_target_bias", store.target_bias.is_some());
    save_embeddings(path, &emb, &meta)?;
    write_matrix(&with_suffix(path, ".context"), words, store.dim, &store.context)?;
    if let Some(b) = &store.context_bias {
        write_biases(&with_suffix(path, ".context-bias"), words, b)?;
    }
    if let Some(b) = &store.target_bias {
        write_biases(&with_suffix(path, ".target-bias"), words, b)?;
    }
    Ok(())
}

pub struct Checkpoint {
    pub store: ParameterStore,
    pub words: Vec<String>,
    pub stats: TrainStats,
    pub metadata: Metadata,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (emb, meta) = load_embeddings(path)?;
    let sidecar = sidecar_path(path);
    let bad = |key: &str| PersistError::Malformed {
        path: sidecar.clone(),
        line: 0,
        reason: format!("missing or invalid checkpoint key `{key}`"),
    };
    fn get<T: std::str::FromStr>(meta: &Metadata, key: &str) -> Option<T> {
        meta.get(key)?.parse().ok()
    }
    let epoch_losses = match meta.get("checkpoint_epoch_losses") {
        Some("") => Vec::new(),
        Some(s) => s
            .split(',')
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("checkpoint_epoch_losses"))?,
        None => return Err(bad("checkpoint_epoch_losses")),
    };
    let stats = TrainStats {
        epoch: get(&meta, "checkpoint_epoch").ok_or_else(|| bad("checkpoint_epoch"))?,
        pairs_processed: get(&meta, "checkpoint_pairs_processed")
            .ok_or_else(|| bad("checkpoint_pairs_processed"))?,
        mean_loss: get(&meta, "checkpoint_mean_loss").ok_or_else(|| bad("checkpoint_mean_loss"))?,
        skipped_singular: get(&meta, "checkpoint_skipped_singular")
            .ok_or_else(|| bad("checkpoint_skipped_singular"))?,
        skipped_saturated: get(&meta, "checkpoint_skipped_saturated")
            .ok_or_else(|| bad("checkpoint_skipped_saturated"))?,
        epoch_losses,
    };
    let has_cb: bool = get(&meta, "checkpoint_context_bias").ok_or_else(|| bad("checkpoint_context_bias"))?;
    let has_tb: bool = get(&meta, "checkpoint_target_bias").ok_or_else(|| bad("checkpoint_target_bias"))?;
    let geometry = emb.geometry();
    let ctx_path = with_suffix(path, ".context");
    let ctx = read_matrix(&ctx_path, geometry == Geometry::Poincare)?;
    if ctx.words != emb.words() || ctx.dim != emb.dim() {
        return Err(PersistError::Malformed {
            path: ctx_path,
            line: 1,
            reason: "context rows do not match the target rows".into(),
        });
    }
    let words = emb.words().to_vec();
    let context_bias = if has_cb {
        Some(read_biases(&with_suffix(path, ".context-bias"), &words)?)
    } else {
        None
    };
    let target_bias = if has_tb {
        Some(read_biases(&with_suffix(path, ".target-bias"), &words)?)
    } else {
        None
    };
    let store = ParameterStore {
        geometry,
        dim: emb.dim(),
        target: emb.vectors().to_vec(),
        context: ctx.values,
        context_bias,
        target_bias,
    };
    Ok(Checkpoint {
        store,
        words,
        stats,
        metadata: meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Embeddings {
        Embeddings::new(
            Geometry::Poincare,
            2,
            vec!["haus".into(), "house".into(), "groß".into()],
            vec![0.1, -0.2, 1.0 / 3.0, 0.0, -0.0, 0.999_99],
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        let mut meta = Metadata::new();
        meta.set("seed", 7);
        save_embeddings(&a, &sample(), &meta).unwrap();
        let (emb, meta2) = load_embeddings(&a).unwrap();
        assert_eq!(emb.vectors(), sample().vectors());
        assert!(emb.vectors().iter().zip(sample().vectors()).all(|(x, y)| x.to_bits() == y.to_bits()));
        save_embeddings(&b, &emb, &meta2).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(sidecar_path(&a)).unwrap(), fs::read(sidecar_path(&b)).unwrap());
    }

    #[test]
    fn header_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        save_embeddings(&p, &sample(), &Metadata::new()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let truncated: Vec<&str> = text.lines().take(3).collect();
        fs::write(&p, truncated.join("\n") + "\n").unwrap();
        match load_embeddings(&p) {
            Err(PersistError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_ball_row_names_word() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        save_embeddings(&p, &sample(), &Metadata::new()).unwrap();
        fs::write(&p, "2 2\na 0.1 0.1\nzu 1.2 0.0\n").unwrap();
        match load_embeddings(&p) {
            Err(PersistError::OutsideBall { word, line, .. }) => assert_eq!((word.as_str(), line), ("zu", 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        fs::write(&p, "1 2\na 0.1 0.1\n").unwrap();
        assert!(matches!(load_embeddings(&p), Err(PersistError::MissingSidecar(_))));
    }

    #[test]
    fn malformed_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        save_embeddings(&p, &sample(), &Metadata::new()).unwrap();
        for (body, expect_line) in [
            ("x 2\n", 1),
            ("1 2\na 0.1\n", 2),
            ("1 2\na 0.1 zz\n", 2),
            ("1 2\na 0.1 0.2\nb 0.1 0.2\n", 3),
        ] {
            fs::write(&p, body).unwrap();
            match load_embeddings(&p) {
                Err(PersistError::Malformed { line, .. }) => assert_eq!(line, expect_line, "{body:?}"),
                other => panic!("unexpected {other:?} for {body:?}"),
            }
        }
    }

    #[test]
    fn metadata_round_trip_and_replace() {
        let mut m = Metadata::new();
        m.set("a", 1).set("b", "x y").set("a", 2);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a = 2\nb = x y\n");
        let back = Metadata::parse(Path::new("m"), std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.txt");
        let words: Vec<String> = vec!["a".into(), "b".into()];
        let store = ParameterStore {
            geometry: Geometry::Poincare,
            dim: 2,
            target: vec![0.1, 0.2, -0.3, 0.4],
            context: vec![0.01, 0.02, 0.5, -0.5],
            context_bias: Some(vec![0.25, -1.5]),
            target_bias: None,
        };
        let stats = TrainStats {
            pairs_processed: 99,
            mean_loss: 1.0 / 7.0,
            epoch: 3,
            skipped_singular: 1,
            skipped_saturated: 0,
            epoch_losses: vec![2.0, 1.5, 1.0 / 3.0],
        };
        save_checkpoint(&p, &store, &words, &stats, &Metadata::new()).unwrap();
        let ck = load_checkpoint(&p).unwrap();
        assert_eq!(ck.store, store);
        assert_eq!(ck.stats, stats);
        assert_eq!(ck.words, words);
    }
}
