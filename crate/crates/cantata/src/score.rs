//! Musical scores: the synthesis input format.
//!
//! A score pairs a note sequence with phoneme lyrics through an explicit
//! phoneme-to-note alignment. Scores serialize as versioned JSON
//! (`"version": "score_v1"`); loading validates the version tag and every
//! structural invariant.

use serde::{Deserialize, Serialize};

use crate::{invalid_input, Result};

/// Version tag of the score JSON schema.
pub const SCORE_VERSION: &str = "score_v1";

/// Reserved phoneme carried by rest notes.
pub const SILENCE_PHONEME: &str = "SP";

/// Phoneme inventory of the synthetic corpus: the silence marker, five
/// vowels, and consonant-vowel syllables. The frontend's embedding table is
/// indexed by position in this list.
pub const PHONEME_VOCAB: [&str; 26] = [
    SILENCE_PHONEME,
    "a", "e", "i", "o", "u",
    "ka", "ke", "ki", "ko", "ku",
    "la", "le", "li", "lo", "lu",
    "na", "ne", "ni", "no", "nu",
    "ta", "te", "ti", "to", "tu",
];

/// Index of a phoneme symbol in [`PHONEME_VOCAB`].
pub fn phoneme_index(symbol: &str) -> Result<usize> {
    PHONEME_VOCAB
        .iter()
        .position(|&p| p == symbol)
        .ok_or_else(|| invalid_input!("unknown phoneme symbol: {symbol:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteType {
    Normal,
    Rest,
    Slur,
    Grace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    /// MIDI semitone number, 0..=127.
    pub pitch: i32,
    pub note_type: NoteType,
    /// Seconds; strictly positive.
    pub duration: f64,
}

/// A score: notes, phoneme lyrics, and their alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicalScore {
    pub notes: Vec<Note>,
    pub phonemes: Vec<String>,
    /// `phoneme_to_note[i]` is the index of the note phoneme `i` is sung on.
    pub phoneme_to_note: Vec<usize>,
}

/// Serialized wrapper carrying the schema version.
#[derive(Debug, Serialize, Deserialize)]
struct VersionedScore {
    version: String,
    #[serde(flatten)]
    score: MusicalScore,
}

impl MusicalScore {
    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.notes.is_empty() {
            return Err(invalid_input!("score has no notes"));
        }
        if self.phonemes.is_empty() {
            return Err(invalid_input!("score has no phonemes"));
        }
        for (i, n) in self.notes.iter().enumerate() {
            if !(n.duration > 0.0) || !n.duration.is_finite() {
                return Err(invalid_input!("note {i} duration {} must be > 0", n.duration));
            }
            if !(0..=127).contains(&n.pitch) {
                return Err(invalid_input!("note {i} MIDI pitch {} outside 0..=127", n.pitch));
            }
        }
        if self.phonemes.len() != self.phoneme_to_note.len() {
            return Err(crate::shape_mismatch!(
                "{} phonemes vs {} alignment entries",
                self.phonemes.len(),
                self.phoneme_to_note.len()
            ));
        }
        for (i, (ph, &ni)) in self.phonemes.iter().zip(&self.phoneme_to_note).enumerate() {
            if ni >= self.notes.len() {
                return Err(invalid_input!(
                    "phoneme {i} aligned to note {ni}, but score has {} notes",
                    self.notes.len()
                ));
            }
            phoneme_index(ph)?;
            let is_rest = self.notes[ni].note_type == NoteType::Rest;
            if is_rest != (ph == SILENCE_PHONEME) {
                return Err(invalid_input!(
                    "phoneme {i} ({ph:?}) on note {ni}: rest notes carry {SILENCE_PHONEME:?} \
                     and only rest notes may"
                ));
            }
        }
        Ok(())
    }

    /// Total duration in seconds.
    pub fn total_seconds(&self) -> f64 {
        self.notes.iter().map(|n| n.duration).sum()
    }

    /// Serialize as versioned `score_v1` JSON.
    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(&VersionedScore {
            version: SCORE_VERSION.to_string(),
            score: self.clone(),
        })?)
    }

    /// Parse and validate versioned JSON.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: VersionedScore = serde_json::from_str(text)?;
        if v.version != SCORE_VERSION {
            return Err(crate::Error::VersionMismatch(format!(
                "unsupported score version {:?}, expected {SCORE_VERSION:?}",
                v.version
            )));
        }
        v.score.validate()?;
        Ok(v.score)
    }

    /// Phonemes grouped by note: for note `i`, the indices of its phonemes in
    /// alignment order.
    pub fn phonemes_per_note(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.notes.len()];
        for (p, &n) in self.phoneme_to_note.iter().enumerate() {
            groups[n].push(p);
        }
        groups
    }
}

/// Convert MIDI semitones (possibly fractional) to Hz.
pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * ((midi - 69.0) / 12.0).exp2()
}
