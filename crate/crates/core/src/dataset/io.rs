use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InteractionDataset, Pair};
use crate::error::{HdrmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Csv,
    /// MovieLens `::`-separated files such as `ratings.dat`.
    Dat,
}

impl Format {
    fn sep(self) -> &'static str {
        match self {
            Format::Tsv => "\t",
            Format::Csv => ",",
            Format::Dat => "::",
        }
    }

    /// Guesses the format from the file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            Some(ext) if ext.eq_ignore_ascii_case("dat") => Format::Dat,
            _ => Format::Tsv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = HdrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            "dat" => Ok(Format::Dat),
            other => Err(HdrmError::Config(format!("unknown input format `{other}`"))),
        }
    }
}

/// Bidirectional map between original string ids and dense integer ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    originals: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Returns the dense id, assigning the next one on first sight.
    pub fn intern(&mut self, original: &str) -> usize {
        if let Some(&id) = self.index.get(original) {
            return id;
        }
        let id = self.originals.len();
        self.originals.push(original.to_owned());
        self.index.insert(original.to_owned(), id);
        id
    }

    pub fn get(&self, original: &str) -> Option<usize> {
        self.index.get(original).copied()
    }

    pub fn original(&self, dense: usize) -> Option<&str> {
        self.originals.get(dense).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// Keeps only `kept` (old dense ids) and renumbers them in that order.
    pub fn restrict(&self, kept: &[usize]) -> IdMap {
        let mut out = IdMap::default();
        for &old in kept {
            out.intern(&self.originals[old]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// A parsed, deduplicated interaction log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawLog {
    pub users: IdMap,
    pub items: IdMap,
    pub records: Vec<RawRecord>,
}

impl RawLog {
    /// Adds a record, keeping the maximum rating for repeated pairs.
    pub fn push(&mut self, user: &str, item: &str, rating: f64, seen: &mut HashMap<Pair, usize>) {
        let u = self.users.intern(user);
        let i = self.items.intern(item);
        match seen.get(&(u, i)) {
            Some(&pos) => {
                let r = &mut self.records[pos];
                r.rating = r.rating.max(rating);
            }
            None => {
                seen.insert((u, i), self.records.len());
                self.records.push(RawRecord {
                    user: u,
                    item: i,
                    rating,
                });
            }
        }
    }
}

/// Parses `user<sep>item<sep>rating[<sep>timestamp]` lines. A first line
/// whose rating column is not numeric is treated as a header.
pub fn load_interactions(path: &Path, format: Format) -> Result<RawLog> {
    let file = File::open(path).map_err(|e| HdrmError::io(path, e))?;
    let sep = format.sep();
    let mut log = RawLog::default();
    let mut seen = HashMap::new();
    let mut first = true;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HdrmError::io(path, e))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(sep).map(str::trim).collect();
        let parse_err = |msg: String| HdrmError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_err(format!(
                "expected 3 or 4 `{}`-separated fields, found {}",
                sep.escape_default(),
                fields.len()
            )));
        }
        let rating = fields[2].parse::<f64>();
        if first {
            first = false;
            if rating.is_err() {
                continue;
            }
        }
        let rating = rating.map_err(|_| parse_err(format!("rating `{}` is not a number", fields[2])))?;
        if !rating.is_finite() {
            return Err(parse_err("rating is not finite".into()));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        log.push(fields[0], fields[1], rating, &mut seen);
    }
    if log.records.is_empty() {
        return Err(HdrmError::EmptyDataset(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    Ok(log)
}

const MANIFEST_MAGIC: &str = "# hdrm split manifest v1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| HdrmError::io(path, e))?))
}

/// Writes the train/val/test sections as `user<TAB>item` lines.
pub fn write_manifest(path: &Path, ds: &InteractionDataset) -> Result<()> {
    let io = |e| HdrmError::io(path, e);
    let mut w = create(path)?;
    writeln!(w, "{MANIFEST_MAGIC}").map_err(io)?;
    writeln!(w, "# users\t{}\titems\t{}", ds.num_users(), ds.num_items()).map_err(io)?;
    for (name, pairs) in [("train", ds.train()), ("val", ds.val()), ("test", ds.test())] {
        writeln!(w, "[{name}]").map_err(io)?;
        for (u, i) in pairs {
            writeln!(w, "{u}\t{i}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_manifest(path: &Path) -> Result<InteractionDataset> {
    let file = File::open(path).map_err(|e| HdrmError::io(path, e))?;
    let mut dims = None;
    let mut sections: [Vec<Pair>; 3] = Default::default();
    let mut current: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HdrmError::io(path, e))?;
        let err = |msg: &str| HdrmError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: msg.to_owned(),
        };
        if idx == 0 {
            if line != MANIFEST_MAGIC {
                return Err(err("not an hdrm split manifest"));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# users\t") {
            let parts: Vec<&str> = rest.split('\t').collect();
            if parts.len() != 3 || parts[1] != "items" {
                return Err(err("malformed size header"));
            }
            let u = parts[0].parse().map_err(|_| err("bad user count"))?;
            let i = parts[2].parse().map_err(|_| err("bad item count"))?;
            dims = Some((u, i));
            continue;
        }
        current = match line.as_str() {
            "[train]" => Some(0),
            "[val]" => Some(1),
            "[test]" => Some(2),
            "" => continue,
            _ => {
                let sec = current.ok_or_else(|| err("pair before any section"))?;
                let (u, i) = line.split_once('\t').ok_or_else(|| err("expected user<TAB>item"))?;
                let u = u.parse().map_err(|_| err("bad user id"))?;
                let i = i.parse().map_err(|_| err("bad item id"))?;
                sections[sec].push((u, i));
                continue;
            }
        };
    }
    let (nu, ni) = dims.ok_or_else(|| HdrmError::Parse {
        path: path.to_path_buf(),
        line: 2,
        msg: "missing size header".into(),
    })?;
    let [train, val, test] = sections;
    InteractionDataset::from_splits(nu, ni, train, val, test, Vec::new())
}

/// Writes `original_id<TAB>dense_id` lines.
pub fn write_id_map(path: &Path, map: &IdMap) -> Result<()> {
    let io = |e| HdrmError::io(path, e);
    let mut w = create(path)?;
    for (dense, original) in map.originals.iter().enumerate() {
        writeln!(w, "{original}\t{dense}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_id_map(path: &Path) -> Result<IdMap> {
    let file = File::open(path).map_err(|e| HdrmError::io(path, e))?;
    let mut map = IdMap::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HdrmError::io(path, e))?;
        let err = |msg: &str| HdrmError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: msg.to_owned(),
        };
        let (orig, dense) = line.rsplit_once('\t').ok_or_else(|| err("expected original<TAB>dense"))?;
        let dense: usize = dense.parse().map_err(|_| err("bad dense id"))?;
        if dense != map.len() {
            return Err(err("dense ids must be consecutive from 0"));
        }
        map.intern(orig);
    }
    Ok(map)
}
