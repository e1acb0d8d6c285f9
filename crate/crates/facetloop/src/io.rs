//! On-disk formats: catalog and record JSON Lines, the knowledge graph
//! document, the binary index and parameter checkpoints.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context};
use facetloop_core::catalog::{Catalog, KnowledgeGraph, Product};
use facetloop_core::context::TrendTable;
use facetloop_core::lexindex::{InvertedIndex, Posting};
use facetloop_core::reward::CtrModel;
use facetloop_core::trainer::PolicyParams;
use facetloop_core::usersim::SessionLog;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one record per non-blank line; errors name the offending line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_catalog(path: &Path, catalog: &Catalog) -> anyhow::Result<()> {
    write_jsonl(path, catalog.products())
}

pub fn read_catalog(path: &Path) -> anyhow::Result<Catalog> {
    Ok(Catalog::new(read_jsonl::<Product>(path)?))
}

pub fn read_kg(path: &Path) -> anyhow::Result<KnowledgeGraph> {
    read_json(path)
}

pub fn read_trends(path: &Path) -> anyhow::Result<TrendTable> {
    read_json(path)
}

const INDEX_MAGIC: &[u8; 4] = b"FLIX";
pub const INDEX_VERSION: u32 = 1;

/// Layout, all integers little-endian u32: magic, version, doc count, then
/// per doc (id length, id bytes, token count), then term count and per term
/// (length, bytes, posting count, (ordinal, tf) pairs).
pub fn encode_index(index: &InvertedIndex) -> Vec<u8> {
    fn put(out: &mut Vec<u8>, v: u32) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fn put_str(out: &mut Vec<u8>, s: &str) {
        put(out, s.len() as u32);
        out.extend_from_slice(s.as_bytes());
    }
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put(&mut out, INDEX_VERSION);
    put(&mut out, index.doc_count() as u32);
    for (id, len) in index.doc_ids().iter().zip(index.doc_lengths()) {
        put_str(&mut out, id);
        put(&mut out, *len);
    }
    put(&mut out, index.postings().len() as u32);
    for (term, list) in index.postings() {
        put_str(&mut out, term);
        put(&mut out, list.len() as u32);
        for p in list {
            put(&mut out, p.doc);
            put(&mut out, p.tf);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> anyhow::Result<&[u8]> {
        ensure!(self.buf.len() - self.pos >= n, "index file truncated at byte {}", self.pos);
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> anyhow::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn string(&mut self) -> anyhow::Result<String> {
        let n = self.u32()? as usize;
        Ok(std::str::from_utf8(self.take(n)?)?.to_string())
    }
}

pub fn decode_index(bytes: &[u8]) -> anyhow::Result<InvertedIndex> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    ensure!(c.take(4)? == INDEX_MAGIC, "not an index file");
    let version = c.u32()?;
    ensure!(version == INDEX_VERSION, "unsupported index version {version}");
    let n = c.u32()? as usize;
    let mut ids = Vec::with_capacity(n);
    let mut lengths = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(c.string()?);
        lengths.push(c.u32()?);
    }
    let terms = c.u32()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..terms {
        let term = c.string()?;
        let m = c.u32()? as usize;
        let mut list = Vec::with_capacity(m);
        for _ in 0..m {
            let doc = c.u32()?;
            ensure!((doc as usize) < n, "posting for `{term}` points past the last document");
            list.push(Posting { doc, tf: c.u32()? });
        }
        postings.insert(term, list);
    }
    ensure!(c.pos == bytes.len(), "trailing bytes after index");
    Ok(InvertedIndex::from_parts(ids, postings, lengths))
}

pub fn write_index(path: &Path, index: &InvertedIndex) -> anyhow::Result<()> {
    std::fs::write(path, encode_index(index)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_index(path: &Path) -> anyhow::Result<InvertedIndex> {
    let mut bytes = Vec::new();
    File::open(path).with_context(|| format!("opening {}", path.display()))?.read_to_end(&mut bytes)?;
    decode_index(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub const CHECKPOINT_FORMAT: &str = "facetloop-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Policy parameters plus the click model they were trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hex FNV-1a of the configuration that produced the parameters.
    pub config_hash: String,
    pub params: PolicyParams,
    #[serde(default)]
    pub ctr: Option<CtrModel>,
}

impl Checkpoint {
    pub fn new(params: PolicyParams, ctr: Option<CtrModel>, config_hash: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: format!("{config_hash:016x}"),
            params,
            ctr,
        }
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> anyhow::Result<()> {
    write_json(path, ck)
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        bail!("{}: unsupported checkpoint {} v{}", path.display(), ck.format, ck.version);
    }
    if !ck.params.is_finite() {
        bail!("{}: checkpoint holds non-finite parameters", path.display());
    }
    Ok(ck)
}

/// One line of a session log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: serde_json::Value,
}

/// Flattens logs into events: one `intent` event, one `turn` event per turn
/// and a closing `end` event per session.
pub fn session_events(prefix: &str, logs: &[SessionLog]) -> anyhow::Result<Vec<SessionEvent>> {
    let mut out = Vec::new();
    for (i, log) in logs.iter().enumerate() {
        let session_id = format!("{prefix}{i:05}");
        let ev = |kind: &str, payload| SessionEvent { session_id: session_id.clone(), kind: kind.into(), payload };
        out.push(ev("intent", serde_json::to_value(&log.intent)?));
        for (t, turn) in log.turns.iter().enumerate() {
            let mut payload = serde_json::to_value(turn)?;
            payload["turn"] = t.into();
            out.push(ev("turn", payload));
        }
        out.push(ev("end", serde_json::json!({ "converted": log.converted, "turns": log.turns.len() })));
    }
    Ok(out)
}

/// Inverse of [`session_events`].
pub fn logs_from_events(events: &[SessionEvent]) -> anyhow::Result<Vec<SessionLog>> {
    let mut logs = Vec::new();
    let mut current: Option<(String, SessionLog)> = None;
    for e in events {
        match e.kind.as_str() {
            "intent" => {
                ensure!(current.is_none(), "session {} opened before the previous one ended", e.session_id);
                let log = SessionLog { intent: serde_json::from_value(e.payload.clone())?, turns: Vec::new(), converted: false };
                current = Some((e.session_id.clone(), log));
            }
            "turn" | "end" => {
                let Some((id, log)) = current.as_mut() else { bail!("event for {} outside a session", e.session_id) };
                ensure!(*id == e.session_id, "interleaved session {}", e.session_id);
                if e.kind == "turn" {
                    log.turns.push(serde_json::from_value(e.payload.clone())?);
                } else {
                    log.converted = e.payload["converted"].as_bool().unwrap_or(false);
                    logs.push(current.take().map(|(_, l)| l).expect("open session"));
                }
            }
            other => bail!("unknown event type `{other}`"),
        }
    }
    ensure!(current.is_none(), "log ends inside a session");
    Ok(logs)
}
