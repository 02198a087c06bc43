//! Corpus generation, layout, and the seen/held-out split.
//!
//! A corpus is a directory of independently seeded samples spanning 8
//! synthetic singers crossed with 2 emotions. Style is controlled, not
//! emergent: each singer owns a formant position and spectral tilt, and each
//! (vocal range, emotion) class owns a vibrato and phrasing regime. Two
//! singers and two whole classes are reserved as held-out, so zero-shot
//! claims can be tested against genuinely unseen timbres and styles.
//!
//! On disk, each sample `ID` is three files: `ID.json` (score, labels, seed,
//! frame-level phoneme durations), `ID.mel.bin`, and `ID.f0.bin`. The binary
//! files share one trivial format: two little-endian `f32` header values
//! `(rows, cols)` followed by row-major `f32` data. `manifest.json` lists the
//! sample ids in generation order.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{MelSpectrogram, MEL_BINS};
use crate::score::{MusicalScore, Note, NoteType, PHONEME_VOCAB, SILENCE_PHONEME};
use crate::synth::{generate_sample, SingerFilter, SingingSample, SynthStyleParams};
use crate::{invalid_input, rng, Error, Result};

/// Number of synthetic singers.
pub const NUM_SINGERS: u32 = 8;
/// Singers excluded from acoustic-model training.
pub const HELD_OUT_SINGERS: [u32; 2] = [6, 7];
/// Corpus directory format version.
pub const CORPUS_VERSION: &str = "corpus_v1";
/// Per-sample metadata format version.
pub const SAMPLE_VERSION: &str = "sample_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocalRange {
    Tenor,
    Soprano,
    Bass,
    Alto,
}

impl VocalRange {
    pub fn name(self) -> &'static str {
        match self {
            VocalRange::Tenor => "tenor",
            VocalRange::Soprano => "soprano",
            VocalRange::Bass => "bass",
            VocalRange::Alto => "alto",
        }
    }

    /// MIDI tessitura (inclusive) for score sampling.
    pub fn tessitura(self) -> (i32, i32) {
        match self {
            VocalRange::Tenor => (48, 69),
            VocalRange::Soprano => (57, 79),
            VocalRange::Bass => (40, 62),
            VocalRange::Alto => (53, 74),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Happy,
    Sad,
}

impl Emotion {
    pub fn name(self) -> &'static str {
        match self {
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Emotion::Happy => 0,
            Emotion::Sad => 1,
        }
    }
}

/// A style class: the cross of vocal range and emotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleClassLabel {
    pub vocal_range: VocalRange,
    pub emotion: Emotion,
}

impl Default for StyleClassLabel {
    fn default() -> Self {
        StyleClassLabel { vocal_range: VocalRange::Tenor, emotion: Emotion::Happy }
    }
}

/// Classes whose every sample is excluded from acoustic-model training, so
/// style transfer toward them is out-of-distribution by construction.
pub const HELD_OUT_CLASSES: [StyleClassLabel; 2] = [
    StyleClassLabel { vocal_range: VocalRange::Tenor, emotion: Emotion::Happy },
    StyleClassLabel { vocal_range: VocalRange::Alto, emotion: Emotion::Sad },
];

/// Which split a sample belongs to for acoustic-model training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Seen,
    Ood,
}

/// Deterministic singer-to-range assignment.
pub fn singer_vocal_range(singer_id: u32) -> VocalRange {
    match singer_id % 4 {
        0 => VocalRange::Tenor,
        1 => VocalRange::Soprano,
        2 => VocalRange::Bass,
        _ => VocalRange::Alto,
    }
}

/// Seen/held-out assignment: out-of-distribution when either the singer or
/// the whole style class is reserved.
pub fn split_of(singer_id: u32, style: StyleClassLabel) -> Split {
    if HELD_OUT_SINGERS.contains(&singer_id) || HELD_OUT_CLASSES.contains(&style) {
        Split::Ood
    } else {
        Split::Seen
    }
}

fn is_held_out_class(style: StyleClassLabel) -> bool {
    HELD_OUT_CLASSES.contains(&style)
}

/// Style parameters for one sample: per-singer spectral identity plus
/// class-dependent vibrato and phrasing, with small per-sample jitter.
///
/// Held-out classes use deep vibrato (110..120 cents) far outside the seen
/// regimes (25..48 cents), so reproducing them is impossible without using
/// the reference. Held-out singers extend the formant axis past the seen
/// range rather than interpolating inside it.
pub fn style_params_for(
    singer_id: u32,
    emotion: Emotion,
    r: &mut ChaCha20Rng,
) -> SynthStyleParams {
    let style = StyleClassLabel { vocal_range: singer_vocal_range(singer_id), emotion };
    let emotion_tilt = match emotion {
        Emotion::Happy => -0.30,
        Emotion::Sad => 0.30,
    };
    let filter = SingerFilter {
        tilt: 1.1 + 0.08 * ((singer_id * 3) % 4) as f64 + emotion_tilt,
        formant_hz: 700.0 + 300.0 * singer_id as f64,
        formant_width: 200.0,
        formant_gain: 2.0 + 0.25 * (singer_id % 3) as f64,
    };
    let (rate, depth, transition) = if is_held_out_class(style) {
        (
            r.gen_range(5.5..6.5),
            r.gen_range(110.0..120.0),
            r.gen_range(170.0..220.0),
        )
    } else {
        match emotion {
            Emotion::Happy => {
                (r.gen_range(5.2..6.0), r.gen_range(40.0..48.0), r.gen_range(60.0..90.0))
            }
            Emotion::Sad => {
                (r.gen_range(4.2..5.0), r.gen_range(25.0..33.0), r.gen_range(110.0..150.0))
            }
        }
    };
    SynthStyleParams {
        vibrato_rate: rate,
        vibrato_depth: depth,
        transition_time: transition,
        singer_filter: filter,
        base_range: 0.0,
    }
}

/// Sample a short random score inside a vocal range's tessitura.
///
/// Notes walk the tessitura in steps of at most 4 semitones; roughly one in
/// eight interior notes is a rest, and one in four samples stretches a note
/// into a sustain long enough for vibrato analysis.
pub fn random_score(range: VocalRange, r: &mut ChaCha20Rng) -> MusicalScore {
    let (lo, hi) = range.tessitura();
    let n_notes = r.gen_range(3..=5);
    let mut pitch = (lo + hi) / 2 + r.gen_range(-3..=3);
    let sustain_at = if r.gen_bool(0.25) { Some(r.gen_range(0..n_notes)) } else { None };
    let mut notes = Vec::with_capacity(n_notes);
    let mut phonemes = Vec::new();
    let mut phoneme_to_note = Vec::new();
    for i in 0..n_notes {
        let rest = i > 0 && i + 1 < n_notes && Some(i) != sustain_at && r.gen_bool(0.12);
        let duration = if Some(i) == sustain_at {
            r.gen_range(0.8..1.2)
        } else {
            r.gen_range(0.15..0.30)
        };
        if rest {
            notes.push(Note { pitch, note_type: NoteType::Rest, duration });
            phonemes.push(SILENCE_PHONEME.to_string());
            phoneme_to_note.push(i);
            continue;
        }
        pitch = (pitch + r.gen_range(-4..=4)).clamp(lo, hi);
        let note_type = match r.gen_range(0..100) {
            0..=14 if i > 0 => NoteType::Slur,
            15..=24 => NoteType::Grace,
            _ => NoteType::Normal,
        };
        notes.push(Note { pitch, note_type, duration });
        let n_ph = if r.gen_bool(0.25) { 2 } else { 1 };
        for _ in 0..n_ph {
            // Skip index 0, the silence symbol.
            let p = r.gen_range(1..PHONEME_VOCAB.len());
            phonemes.push(PHONEME_VOCAB[p].to_string());
            phoneme_to_note.push(i);
        }
    }
    MusicalScore { notes, phonemes, phoneme_to_note }
}

/// Per-sample sidecar metadata stored as `ID.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub version: String,
    pub id: String,
    pub singer_id: u32,
    pub style: StyleClassLabel,
    pub split: Split,
    pub seed: u64,
    pub score: MusicalScore,
    pub phoneme_durations: Vec<u32>,
}

/// Corpus-level index stored as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: String,
    pub seed: u64,
    pub samples_per_pair: usize,
    pub sample_ids: Vec<String>,
    pub seen: usize,
    pub ood: usize,
}

/// Write a row-major matrix: two `f32` header values (rows, cols), then data.
pub fn write_matrix(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(crate::shape_mismatch!(
            "matrix {}x{} needs {} values, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        ));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_f32::<LittleEndian>(rows as f32)?;
    w.write_f32::<LittleEndian>(cols as f32)?;
    for &x in data {
        w.write_f32::<LittleEndian>(x)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let rows = r.read_f32::<LittleEndian>()? as usize;
    let cols = r.read_f32::<LittleEndian>()? as usize;
    let mut data = vec![0.0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    // Trailing garbage means the header lied.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(invalid_input!(
            "{}: trailing bytes after {rows}x{cols} matrix",
            path.display()
        ));
    }
    Ok((rows, cols, data))
}

fn sample_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.json")),
        dir.join(format!("{id}.mel.bin")),
        dir.join(format!("{id}.f0.bin")),
    )
}

/// Persist one sample under `dir` as `id.{json,mel.bin,f0.bin}`.
pub fn write_sample(dir: &Path, id: &str, sample: &SingingSample, seed: u64) -> Result<()> {
    sample.validate()?;
    let (meta_p, mel_p, f0_p) = sample_paths(dir, id);
    let meta = SampleMeta {
        version: SAMPLE_VERSION.to_string(),
        id: id.to_string(),
        singer_id: sample.singer_id,
        style: sample.style,
        split: split_of(sample.singer_id, sample.style),
        seed,
        score: sample.score.clone(),
        phoneme_durations: sample.phoneme_durations.clone(),
    };
    fs::write(&meta_p, serde_json::to_string_pretty(&meta)?)?;
    write_matrix(&mel_p, sample.mel.frames(), MEL_BINS, sample.mel.raw())?;
    let frames = sample.f0.len();
    let mut f0uv = Vec::with_capacity(frames * 2);
    for i in 0..frames {
        f0uv.push(sample.f0[i]);
        f0uv.push(sample.uv[i] as f32);
    }
    write_matrix(&f0_p, frames, 2, &f0uv)?;
    Ok(())
}

/// Load one sample by id. Verifies the cross-file invariants.
pub fn read_sample(dir: &Path, id: &str) -> Result<SingingSample> {
    let (meta_p, mel_p, f0_p) = sample_paths(dir, id);
    let meta: SampleMeta = serde_json::from_str(&fs::read_to_string(&meta_p)?)?;
    if meta.version != SAMPLE_VERSION {
        return Err(Error::VersionMismatch(format!(
            "sample {id}: expected {SAMPLE_VERSION}, found {}",
            meta.version
        )));
    }
    let (frames, bins, mel_data) = read_matrix(&mel_p)?;
    if bins != MEL_BINS {
        return Err(crate::shape_mismatch!("{id}: mel has {bins} bins, expected {MEL_BINS}"));
    }
    let mel = MelSpectrogram::from_raw(mel_data, frames)?;
    let (f_rows, f_cols, f0uv) = read_matrix(&f0_p)?;
    if f_cols != 2 || f_rows != frames {
        return Err(crate::shape_mismatch!(
            "{id}: f0 matrix {f_rows}x{f_cols} does not match {frames} mel frames"
        ));
    }
    let mut f0 = Vec::with_capacity(frames);
    let mut uv = Vec::with_capacity(frames);
    for i in 0..frames {
        f0.push(f0uv[2 * i]);
        uv.push(if f0uv[2 * i + 1] > 0.5 { 1 } else { 0 });
    }
    let sample = SingingSample {
        score: meta.score,
        mel,
        f0,
        uv,
        phoneme_durations: meta.phoneme_durations,
        singer_id: meta.singer_id,
        style: meta.style,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generate a full corpus under `dir`: `samples_per_pair` samples for each of
/// the 16 (singer, emotion) pairs, plus `manifest.json`. Deterministic in
/// `seed`.
pub fn gen_corpus(dir: &Path, seed: u64, samples_per_pair: usize) -> Result<CorpusManifest> {
    if samples_per_pair == 0 {
        return Err(invalid_input!("samples_per_pair must be positive"));
    }
    fs::create_dir_all(dir)?;
    let mut sample_ids = Vec::new();
    let mut seen = 0usize;
    let mut ood = 0usize;
    for singer in 0..NUM_SINGERS {
        for emotion in [Emotion::Happy, Emotion::Sad] {
            for idx in 0..samples_per_pair {
                let label = format!("corpus/{singer}/{}/{idx}", emotion.name());
                let mut r = rng::stream(seed, &label);
                let params = style_params_for(singer, emotion, &mut r);
                let score = random_score(singer_vocal_range(singer), &mut r);
                let sample_seed: u64 = r.gen();
                let style =
                    StyleClassLabel { vocal_range: singer_vocal_range(singer), emotion };
                let sample = generate_sample(&score, &params, sample_seed, singer, style)?;
                let id = format!("s{singer}_{}_{idx:03}", emotion.name());
                write_sample(dir, &id, &sample, sample_seed)?;
                match split_of(singer, style) {
                    Split::Seen => seen += 1,
                    Split::Ood => ood += 1,
                }
                sample_ids.push(id);
            }
        }
    }
    let manifest = CorpusManifest {
        version: CORPUS_VERSION.to_string(),
        seed,
        samples_per_pair,
        sample_ids,
        seen,
        ood,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Read `manifest.json` and verify its version.
pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let manifest: CorpusManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != CORPUS_VERSION {
        return Err(Error::VersionMismatch(format!(
            "corpus manifest: expected {CORPUS_VERSION}, found {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Load every sample listed in the manifest, in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<SingingSample>> {
    let manifest = read_manifest(dir)?;
    manifest.sample_ids.iter().map(|id| read_sample(dir, id)).collect()
}

/// Load only the samples of one split, in manifest order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<SingingSample>> {
    Ok(load_corpus(dir)?
        .into_iter()
        .filter(|s| split_of(s.singer_id, s.style) == split)
        .collect())
}
