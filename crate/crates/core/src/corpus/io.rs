//! On-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.json   track list, vocabulary size, tag categories
//! <dir>/playlists.txt   "<playlist_id>\t<track_id> <track_id> ..." per line
//! <dir>/genres.vec      "<genre_id> <v_1> ... <v_dim>" per line
//! <dir>/mel/<id>.f32    frames x 48 little-endian f32, row-major
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, GenreEmbeddingTable, Playlist, TagCategory, TrackRecord, MEL_BANDS};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const PLAYLISTS: &str = "playlists.txt";
pub const GENRES: &str = "genres.vec";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    genre_vocab_size: u32,
    mel_bands: usize,
    tracks: Vec<ManifestTrack>,
    #[serde(default)]
    tag_categories: Vec<TagCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTrack {
    track_id: u32,
    mel_path: String,
    frame_count: usize,
    genre_ids: Vec<u32>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let manifest: Manifest = serde_json::from_str(&read_text(&manifest_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.mel_bands != MEL_BANDS {
        return Err(Error::shape(
            format!("{MEL_BANDS} mel bands"),
            manifest.mel_bands,
        ));
    }

    let mut tracks = Vec::with_capacity(manifest.tracks.len());
    for entry in &manifest.tracks {
        let path = dir.join(&entry.mel_path);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingMel {
                    track_id: entry.track_id,
                    path,
                })
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let expected = entry.frame_count * MEL_BANDS * 4;
        if bytes.len() != expected {
            return Err(Error::shape(
                format!(
                    "{expected} bytes for track {} ({} frames)",
                    entry.track_id, entry.frame_count
                ),
                format!("{} bytes", bytes.len()),
            ));
        }
        let mel = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tracks.push(TrackRecord::new(
            entry.track_id,
            mel,
            entry.genre_ids.clone(),
        )?);
    }

    let playlists = parse_playlists(&read_text(&dir.join(PLAYLISTS))?)?;
    let table = parse_genre_table(&read_text(&dir.join(GENRES))?)?;
    Corpus::new(
        tracks,
        playlists,
        manifest.genre_vocab_size,
        table,
        manifest.tag_categories,
    )
}

fn parse_u32(tok: &str, what: &str, line: usize) -> Result<u32> {
    tok.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {what} {tok:?}")))
}

fn parse_playlists(text: &str) -> Result<Vec<Playlist>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, rest) = line.split_once('\t').unwrap_or((line, ""));
        let playlist_id = parse_u32(id.trim(), "playlist id", n + 1)?;
        let track_ids = rest
            .split_whitespace()
            .map(|t| parse_u32(t, "track id", n + 1))
            .collect::<Result<_>>()?;
        out.push(Playlist {
            playlist_id,
            track_ids,
        });
    }
    Ok(out)
}

fn parse_genre_table(text: &str) -> Result<GenreEmbeddingTable> {
    let mut vectors = BTreeMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        let Some(id) = toks.next() else { continue };
        let id = parse_u32(id, "genre id", n + 1)?;
        let v: Vec<f64> = toks
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad float {t:?}", n + 1)))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::shape(format!("{d} components"), v.len()));
            }
            _ => {}
        }
        if vectors.insert(id, v).is_some() {
            return Err(Error::Format(format!("genre {id} listed twice")));
        }
    }
    GenreEmbeddingTable::new(dim.unwrap_or(super::GENRE_DIM), vectors)
}

fn mel_rel_path(track_id: u32) -> String {
    format!("mel/{track_id:06}.f32")
}

/// Writes `corpus` in the layout read by [`load_corpus`]. Output bytes are a
/// pure function of the corpus contents.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mel_dir = dir.join("mel");
    fs::create_dir_all(&mel_dir).map_err(|e| Error::io(&mel_dir, e))?;

    let mut entries = Vec::with_capacity(corpus.len());
    for t in corpus.tracks() {
        let rel = mel_rel_path(t.track_id);
        let bytes: Vec<u8> = t.mel.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestTrack {
            track_id: t.track_id,
            mel_path: rel,
            frame_count: t.frame_count,
            genre_ids: t.genre_ids.clone(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        genre_vocab_size: corpus.genre_vocab_size(),
        mel_bands: MEL_BANDS,
        tracks: entries,
        tag_categories: corpus.tag_categories().to_vec(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("serializing manifest: {e}")))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let mut pl = String::new();
    for p in corpus.playlists() {
        let ids: Vec<String> = p.track_ids.iter().map(u32::to_string).collect();
        let _ = writeln!(pl, "{}\t{}", p.playlist_id, ids.join(" "));
    }
    let path = dir.join(PLAYLISTS);
    fs::write(&path, pl).map_err(|e| Error::io(&path, e))?;

    let mut gv = String::new();
    for (id, v) in corpus.embedding_table().iter() {
        let _ = write!(gv, "{id}");
        for x in v {
            // `{}` on f64 prints the shortest string that parses back exactly
            let _ = write!(gv, " {x}");
        }
        gv.push('\n');
    }
    let path = dir.join(GENRES);
    fs::write(&path, gv).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
