//! Reading and writing corpus, chunker and rule files.

use std::fs;
use std::io::Write;
use std::path::Path;

use npchunk_core::corpus::{emit_conll, parse_conll_from, LabeledSentence, SentenceId};
use npchunk_core::tbl::Chunker;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a three-column CoNLL file; sentence ids count up from `first_id`.
pub fn read_conll(path: &Path, first_id: SentenceId) -> Result<Vec<LabeledSentence>> {
    let text = read_text(path)?;
    parse_conll_from(&text, first_id).map_err(|source| Error::Corpus {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes via a temporary file in the same directory so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(err)?;
    f.write_all(contents.as_bytes()).map_err(err)?;
    f.sync_all().map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

pub fn write_conll(path: &Path, corpus: &[LabeledSentence]) -> Result<()> {
    write_atomic(path, &emit_conll(corpus.iter().map(|(s, l)| (s, l))))
}

pub fn read_chunker(path: &Path) -> Result<Chunker> {
    Chunker::deserialize(&read_text(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Hex SHA-256 of the corpus in CoNLL form.
pub fn corpus_digest<'a, I>(parts: I) -> String
where
    I: IntoIterator<Item = &'a [LabeledSentence]>,
{
    let mut h = Sha256::new();
    for part in parts {
        h.update(emit_conll(part.iter().map(|(s, l)| (s, l))).as_bytes());
        h.update([0u8]);
    }
    hex(&h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `# key: value` lines for the top of an output file.
pub fn metadata_header(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
}
