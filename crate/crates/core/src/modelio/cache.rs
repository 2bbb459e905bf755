//! Persistent query cache: one append-only record file per model.
//!
//! File layout (UTF-8):
//!
//! ```text
//! # provtest-cache model=<id> backend=<kind> max_tokens=<n> temperature=<t>
//! <prompt-hash-hex16>\t<token, backslash-escaped>
//! ...
//! ```
//!
//! A file that fails to parse is reported as corrupt; it is never silently
//! re-queried.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use dashmap::DashMap;

use crate::seed::stable_hash64;
use crate::{Error, Result};

use super::ModelHandle;

pub struct QueryCache {
    dir: PathBuf,
    models: DashMap<String, Arc<ModelCacheFile>>,
}

struct ModelCacheFile {
    map: DashMap<u64, String>,
    // Cache writes are serialized through a single writer per model file.
    writer: Mutex<BufWriter<File>>,
}

impl QueryCache {
    pub fn open(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(QueryCache { dir, models: DashMap::new() })
    }

    pub fn get(&self, model: &ModelHandle, prompt_hash: u64) -> Result<Option<String>> {
        let file = self.model_file(model)?;
        Ok(file.map.get(&prompt_hash).map(|t| t.clone()))
    }

    pub fn put(&self, model: &ModelHandle, prompt_hash: u64, token: &str) -> Result<()> {
        let file = self.model_file(model)?;
        if file.map.contains_key(&prompt_hash) {
            return Ok(());
        }
        let mut writer = file.writer.lock().expect("cache writer poisoned");
        // Re-check under the writer lock so concurrent puts append once.
        if file.map.contains_key(&prompt_hash) {
            return Ok(());
        }
        writeln!(writer, "{prompt_hash:016x}\t{}", escape(token))?;
        writer.flush()?;
        file.map.insert(prompt_hash, token.to_string());
        Ok(())
    }

    fn model_file(&self, model: &ModelHandle) -> Result<Arc<ModelCacheFile>> {
        if let Some(existing) = self.models.get(&model.id) {
            return Ok(Arc::clone(&existing));
        }
        let path = self.dir.join(file_name(&model.id));
        let header = header_line(model);
        let map = if path.exists() {
            load_records(&path, &header)?
        } else {
            HashMap::new()
        };
        let exists = path.exists();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut writer = BufWriter::new(file);
        if !exists {
            writeln!(writer, "{header}")?;
            writer.flush()?;
        }
        let entry = Arc::new(ModelCacheFile {
            map: map.into_iter().collect(),
            writer: Mutex::new(writer),
        });
        Ok(Arc::clone(&self.models.entry(model.id.clone()).or_insert(entry)))
    }
}

fn header_line(model: &ModelHandle) -> String {
    format!(
        "# provtest-cache model={} backend={} max_tokens={} temperature={}",
        model.id,
        model.backend.kind(),
        model.decode.max_tokens,
        model.decode.temperature
    )
}

fn file_name(model_id: &str) -> String {
    let safe: String = model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    let disambig = stable_hash64(&[b"cache-file", model_id.as_bytes()]) as u32;
    format!("{safe}-{disambig:08x}.cache")
}

fn load_records(path: &std::path::Path, expected_header: &str) -> Result<HashMap<u64, String>> {
    let corrupt = |detail: String| Error::CacheCorrupt { path: path.display().to_string(), detail };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| corrupt("empty cache file".into()))??;
    // The model id and decode params must match; the recorded backend may
    // differ (replay handles read files written by live backends).
    let expected_sans_backend = strip_backend_field(expected_header);
    if strip_backend_field(&header) != expected_sans_backend {
        return Err(corrupt(format!(
            "header mismatch: found `{header}`, expected `{expected_header}` (backend field ignored)"
        )));
    }

    let mut map = HashMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (hash_hex, token_raw) = line
            .split_once('\t')
            .ok_or_else(|| corrupt(format!("line {}: missing tab separator", lineno + 2)))?;
        let hash = u64::from_str_radix(hash_hex, 16)
            .map_err(|_| corrupt(format!("line {}: bad prompt hash `{hash_hex}`", lineno + 2)))?;
        let token = unescape(token_raw)
            .ok_or_else(|| corrupt(format!("line {}: bad token escape", lineno + 2)))?;
        // Append-only: a later record for the same prompt wins.
        map.insert(hash, token);
    }
    Ok(map)
}

fn strip_backend_field(header: &str) -> String {
    header
        .split_whitespace()
        .filter(|field| !field.starts_with("backend="))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(raw: &str) -> Option<String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            't' => out.push('\t'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::super::{ModelHandle, QueryEngine, SyntheticModelSpec};
    use super::*;

    fn spec(seed: u64) -> SyntheticModelSpec {
        SyntheticModelSpec {
            seed,
            vocab_size: 50,
            zipf_exponent: 1.0,
            domain_group: 0,
            parent_seed: None,
            perturbation_rate: 0.0,
        }
    }

    #[test]
    fn warm_cache_equals_cold_cache() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelHandle::synthetic("m", spec(3));
        let prompts: Vec<String> = (0..40).map(|i| format!("cache probe {i} about")).collect();

        let cold = QueryEngine::with_cache(dir.path()).unwrap();
        let cold_tokens: Vec<String> = prompts
            .iter()
            .map(|p| cold.query_first_token(&model, p).unwrap().token)
            .collect();
        drop(cold);

        let warm = QueryEngine::with_cache(dir.path()).unwrap();
        let warm_tokens: Vec<String> = prompts
            .iter()
            .map(|p| warm.query_first_token(&model, p).unwrap().token)
            .collect();
        assert_eq!(cold_tokens, warm_tokens);
    }

    #[test]
    fn replay_serves_recorded_tokens_and_misses_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let live = ModelHandle::synthetic("api-model", spec(9));
        {
            let engine = QueryEngine::with_cache(dir.path()).unwrap();
            engine.query_first_token(&live, "recorded prompt one").unwrap();
        }
        let replay = ModelHandle::replay("api-model");
        let engine = QueryEngine::with_cache(dir.path()).unwrap();
        let obs = engine.query_first_token(&replay, "recorded prompt one").unwrap();
        let expected = crate::modelio::synth_token(&spec(9), "recorded prompt one").unwrap();
        assert_eq!(obs.token, expected);
        match engine.query_first_token(&replay, "never recorded") {
            Err(Error::CacheMiss { .. }) => {}
            other => panic!("expected cache miss, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_cache_is_an_error_not_a_requery() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelHandle::synthetic("m", spec(3));
        {
            let engine = QueryEngine::with_cache(dir.path()).unwrap();
            engine.query_first_token(&model, "fine prompt").unwrap();
        }
        let path = dir.path().join(file_name("m"));
        let mut contents = std::fs::read_to_string(&path).unwrap();
        contents.push_str("not-a-hash\tsomething\n");
        std::fs::write(&path, contents).unwrap();

        let engine = QueryEngine::with_cache(dir.path()).unwrap();
        match engine.query_first_token(&model, "fine prompt") {
            Err(Error::CacheCorrupt { .. }) => {}
            other => panic!("expected corrupt-cache error, got {other:?}"),
        }
    }

    #[test]
    fn header_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name("m"));
        std::fs::write(&path, "# provtest-cache model=other backend=synthetic max_tokens=1 temperature=0\n").unwrap();
        let engine = QueryEngine::with_cache(dir.path()).unwrap();
        let model = ModelHandle::synthetic("m", spec(3));
        match engine.query_first_token(&model, "x y z") {
            Err(Error::CacheCorrupt { .. }) => {}
            other => panic!("expected corrupt-cache error, got {other:?}"),
        }
    }

    #[test]
    fn token_escaping_round_trips() {
        for token in ["plain", " lead", "tab\tsep", "new\nline", "back\\slash", ""] {
            assert_eq!(unescape(&escape(token)).as_deref(), Some(token));
        }
        assert!(unescape("bad\\q").is_none());
    }
}
