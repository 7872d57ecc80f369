use super::Label;
use crate::{Error, Result};
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestSource {
    External,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker_id: String,
    pub label: Label,
}

/// Labeled list of utterances. Every speaker carries exactly one label.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub source: ManifestSource,
}

impl CorpusManifest {
    /// Validates the speaker -> label invariant and path uniqueness.
    pub fn new(entries: Vec<ManifestEntry>, source: ManifestSource) -> Result<Self> {
        let mut labels: BTreeMap<&str, Label> = BTreeMap::new();
        for e in &entries {
            match labels.insert(&e.speaker_id, e.label) {
                Some(prev) if prev != e.label => {
                    return Err(Error::ConflictingLabel {
                        speaker: e.speaker_id.clone(),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { entries, source })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Speaker -> label, in speaker-id order.
    pub fn speaker_labels(&self) -> BTreeMap<String, Label> {
        self.entries.iter().map(|e| (e.speaker_id.clone(), e.label)).collect()
    }

    /// Sorted speaker ids of one class.
    pub fn speakers_of(&self, label: Label) -> Vec<String> {
        self.speaker_labels()
            .into_iter()
            .filter(|(_, l)| *l == label)
            .map(|(s, _)| s)
            .collect()
    }

    /// True when both classes have at least one speaker.
    pub fn is_trainable(&self) -> bool {
        let labels = self.speaker_labels();
        labels.values().any(|l| *l == Label::Neurotypical) && labels.values().any(|l| *l == Label::Dysarthric)
    }
}

/// Reads a `path,speaker_id,label` CSV. Relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| manifest_err(path, 1, e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| manifest_err(path, 1, e.to_string()))?
        .clone();
    let expected = ["path", "speaker_id", "label"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(manifest_err(
            path,
            1,
            format!(
                "expected header `path,speaker_id,label`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| manifest_err(path, line, e.to_string()))?;
        let (file, speaker, token) = (&record[0], &record[1], &record[2]);
        if file.is_empty() || speaker.is_empty() {
            return Err(manifest_err(path, line, "empty path or speaker_id".into()));
        }
        let label =
            Label::parse(token).ok_or_else(|| manifest_err(path, line, format!("unknown label token {token:?}")))?;
        if !seen.insert(file.to_string()) {
            return Err(manifest_err(path, line, format!("duplicate path {file:?}")));
        }
        if let Some(prev) = labels.insert(speaker.to_string(), label) {
            if prev != label {
                return Err(Error::ConflictingLabel {
                    speaker: speaker.to_string(),
                });
            }
        }
        let p = Path::new(file);
        let resolved = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        entries.push(ManifestEntry {
            path: resolved,
            speaker_id: speaker.to_string(),
            label,
        });
    }
    if entries.is_empty() {
        log::warn!("{}: manifest has no entries; unusable for training", path.display());
    }
    CorpusManifest::new(entries, ManifestSource::External)
}

/// Writes a manifest CSV. Paths under `relative_to` are written relative to it.
pub fn write_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>, relative_to: Option<&Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("path,speaker_id,label\n");
    for e in &manifest.entries {
        let p = relative_to
            .and_then(|base| e.path.strip_prefix(base).ok())
            .unwrap_or(&e.path);
        out.push_str(&format!("{},{},{}\n", p.display(), e.speaker_id, e.label));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn manifest_err(path: &Path, line: usize, reason: String) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn four_rows_two_speakers_per_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "path,speaker_id,label\na.wav,s1,0\nb.wav,s2,0\nc.wav,s3,1\nd.wav,s4,1\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.speaker_labels().len(), 4);
        assert!(m.is_trainable());
        assert_eq!(m.entries[0].path, dir.path().join("a.wav"));
    }

    #[test]
    fn crlf_and_absolute_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "path,speaker_id,label\r\n/abs/x.wav,s1,1\r\n");
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries[0].path, PathBuf::from("/abs/x.wav"));
        assert_eq!(m.entries[0].label, Label::Dysarthric);
    }

    #[test]
    fn conflicting_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "path,speaker_id,label\na.wav,s1,0\nb.wav,s1,1\n");
        assert!(matches!(load_manifest(&p), Err(Error::ConflictingLabel { .. })));
    }

    #[test]
    fn duplicate_path_and_unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "path,speaker_id,label\na.wav,s1,0\na.wav,s2,1\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let p = write(dir.path(), "path,speaker_id,label\na.wav,s1,maybe\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("unknown label"), "{err}");
    }

    #[test]
    fn empty_manifest_is_valid_but_untrainable() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "path,speaker_id,label\n");
        let m = load_manifest(&p).unwrap();
        assert!(m.is_empty());
        assert!(!m.is_trainable());
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "file,speaker,label\na.wav,s1,0\n");
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn speaker_label_map_is_a_function(rows in prop::collection::vec((0u8..6, 0u8..2), 0..30)) {
            let dir = tempfile::tempdir().unwrap();
            let mut body = String::from("path,speaker_id,label\n");
            for (i, (spk, lab)) in rows.iter().enumerate() {
                body.push_str(&format!("u{i}.wav,s{spk},{lab}\n"));
            }
            let p = write(dir.path(), &body);
            let mut truth: BTreeMap<u8, u8> = BTreeMap::new();
            let mut conflict = false;
            for (spk, lab) in &rows {
                if let Some(prev) = truth.insert(*spk, *lab) {
                    conflict |= prev != *lab;
                }
            }
            match load_manifest(&p) {
                Ok(m) => {
                    prop_assert!(!conflict);
                    let map = m.speaker_labels();
                    for e in &m.entries {
                        prop_assert_eq!(map[&e.speaker_id], e.label);
                    }
                }
                Err(Error::ConflictingLabel { .. }) => prop_assert!(conflict),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
