//! Training configuration: a flat `key = value` text format.
//!
//! Every knob of the training pipeline lives in one plain-text file so a run
//! is reproducible from its config snapshot alone. The format is a single
//! `key = value` pair per line, `#` starts a comment, blank lines are
//! ignored. Unknown keys are rejected rather than skipped: a typo in an
//! ablation flag must fail loudly, not silently train the wrong model.
//!
//! [`TrainConfig::to_text`] renders the full config back out with every key
//! present and documented, and [`TrainConfig::from_text`] parses that exact
//! shape, so configs round-trip and a checkpoint can embed the text verbatim.

use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Complete description of a training run.
///
/// Defaults come from [`TrainConfig::default`]; any subset of keys may appear
/// in a config file and the rest keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Corpus directory produced by corpus generation.
    pub corpus: PathBuf,
    /// Pre-trained style classifier checkpoint. Required: the trainer
    /// refuses to start without it.
    pub classifier: PathBuf,
    /// Output directory for checkpoints.
    pub out_dir: PathBuf,
    /// Master seed for parameter init, batch order, and every noise draw.
    pub seed: u64,
    /// Total optimizer steps.
    pub steps: usize,
    /// Samples per step.
    pub batch: usize,
    /// Peak learning rate, reached after warmup.
    pub lr: f64,
    /// Linear warmup length in steps; 0 disables warmup.
    pub warmup: usize,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Weight on the log-domain duration loss.
    pub lambda_dur: f64,
    /// Weight on the Gaussian pitch-diffusion loss (or the fallback
    /// regressor's combined loss when diffusion pitch is disabled).
    pub lambda_gdiff: f64,
    /// Weight on the multinomial voicing-diffusion loss.
    pub lambda_mdiff: f64,
    /// Weight on the quantizer commitment loss.
    pub lambda_c: f64,
    /// Weight on the decoder's mean-absolute-error loss.
    pub lambda_mae: f64,
    /// Weight on the decoder's structural-similarity loss.
    pub lambda_ssim: f64,
    /// Frame-window length cropped from each sample per step. Durations see
    /// the whole score; the frame-level losses see this window.
    pub crop_frames: usize,
    /// Checkpoint every N steps (a final checkpoint is always written).
    pub checkpoint_every: usize,
    /// Record the loss every N steps (step 1 and the last step always log).
    pub log_every: usize,
    /// Scale the pitch-diffusion loss by the per-timestep schedule weight.
    pub pitch_weighted_loss: bool,
    /// Ablation: uncertainty-modeling layer norm on the content encoding.
    pub use_umln: bool,
    /// Ablation: residual-quantized reference detail and alignment. When
    /// off, the style embedding is added to the content directly.
    pub use_rsa: bool,
    /// Ablation: diffusion pitch predictor. When off, a feed-forward
    /// regressor predicts F0 and voicing.
    pub use_diffusion_pitch: bool,
    /// Ablation: diffusion mel decoder. When off, a convolutional decoder
    /// maps the style-specific representation to mels directly.
    pub use_diffusion_decoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corpus: PathBuf::from("corpus"),
            classifier: PathBuf::from("classifier.ckpt"),
            out_dir: PathBuf::from("runs"),
            seed: 7,
            steps: 20_000,
            batch: 2,
            lr: 2e-4,
            warmup: 1000,
            beta1: 0.9,
            beta2: 0.98,
            lambda_dur: 1.0,
            lambda_gdiff: 1.0,
            lambda_mdiff: 1.0,
            lambda_c: 1.0,
            lambda_mae: 1.0,
            lambda_ssim: 1.0,
            crop_frames: 96,
            checkpoint_every: 1000,
            log_every: 100,
            pitch_weighted_loss: true,
            use_umln: true,
            use_rsa: true,
            use_diffusion_pitch: true,
            use_diffusion_decoder: true,
        }
    }
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer, got `{value}`")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an unsigned integer, got `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected `true` or `false`, got `{value}`"
        ))),
    }
}

impl TrainConfig {
    /// Parse a config from its text form. Keys not present keep defaults;
    /// unknown keys and malformed values are errors. The result is validated.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "corpus" => cfg.corpus = PathBuf::from(value),
                "classifier" => cfg.classifier = PathBuf::from(value),
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "seed" => cfg.seed = parse_u64(key, value)?,
                "steps" => cfg.steps = parse_usize(key, value)?,
                "batch" => cfg.batch = parse_usize(key, value)?,
                "lr" => cfg.lr = parse_f64(key, value)?,
                "warmup" => cfg.warmup = parse_usize(key, value)?,
                "beta1" => cfg.beta1 = parse_f64(key, value)?,
                "beta2" => cfg.beta2 = parse_f64(key, value)?,
                "lambda_dur" => cfg.lambda_dur = parse_f64(key, value)?,
                "lambda_gdiff" => cfg.lambda_gdiff = parse_f64(key, value)?,
                "lambda_mdiff" => cfg.lambda_mdiff = parse_f64(key, value)?,
                "lambda_c" => cfg.lambda_c = parse_f64(key, value)?,
                "lambda_mae" => cfg.lambda_mae = parse_f64(key, value)?,
                "lambda_ssim" => cfg.lambda_ssim = parse_f64(key, value)?,
                "crop_frames" => cfg.crop_frames = parse_usize(key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_usize(key, value)?,
                "log_every" => cfg.log_every = parse_usize(key, value)?,
                "pitch_weighted_loss" => cfg.pitch_weighted_loss = parse_bool(key, value)?,
                "use_umln" => cfg.use_umln = parse_bool(key, value)?,
                "use_rsa" => cfg.use_rsa = parse_bool(key, value)?,
                "use_diffusion_pitch" => cfg.use_diffusion_pitch = parse_bool(key, value)?,
                "use_diffusion_decoder" => cfg.use_diffusion_decoder = parse_bool(key, value)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Render the config with every key present and commented. Parsing the
    /// result reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        format!(
            "# Data and outputs.\n\
             corpus = {}\n\
             classifier = {}\n\
             out_dir = {}\n\
             \n\
             # Run length and reproducibility.\n\
             seed = {}\n\
             steps = {}\n\
             batch = {}\n\
             crop_frames = {}\n\
             checkpoint_every = {}\n\
             log_every = {}\n\
             \n\
             # Optimizer: Adam with linear warmup to the peak rate.\n\
             lr = {}\n\
             warmup = {}\n\
             beta1 = {}\n\
             beta2 = {}\n\
             \n\
             # Loss weights; each multiplies one term of the total.\n\
             lambda_dur = {}\n\
             lambda_gdiff = {}\n\
             lambda_mdiff = {}\n\
             lambda_c = {}\n\
             lambda_mae = {}\n\
             lambda_ssim = {}\n\
             pitch_weighted_loss = {}\n\
             \n\
             # Ablation switches.\n\
             use_umln = {}\n\
             use_rsa = {}\n\
             use_diffusion_pitch = {}\n\
             use_diffusion_decoder = {}\n",
            self.corpus.display(),
            self.classifier.display(),
            self.out_dir.display(),
            self.seed,
            self.steps,
            self.batch,
            self.crop_frames,
            self.checkpoint_every,
            self.log_every,
            self.lr,
            self.warmup,
            self.beta1,
            self.beta2,
            self.lambda_dur,
            self.lambda_gdiff,
            self.lambda_mdiff,
            self.lambda_c,
            self.lambda_mae,
            self.lambda_ssim,
            self.pitch_weighted_loss,
            self.use_umln,
            self.use_rsa,
            self.use_diffusion_pitch,
            self.use_diffusion_decoder,
        )
    }

    /// Reject configs that cannot train: non-positive counts, bad Adam
    /// decays, or negative loss weights.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.crop_frames < 8 {
            return Err(Error::Config(format!(
                "crop_frames {} is below the 8-frame minimum",
                self.crop_frames
            )));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "checkpoint_every and log_every must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} {beta} must lie in [0, 1)")));
            }
        }
        for (name, weight) in self.weights() {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} {weight} must be a finite non-negative number"
                )));
            }
        }
        Ok(())
    }

    /// The six loss weights with their config names, in total-loss order.
    pub fn weights(&self) -> [(&'static str, f64); 6] {
        [
            ("lambda_dur", self.lambda_dur),
            ("lambda_gdiff", self.lambda_gdiff),
            ("lambda_mdiff", self.lambda_mdiff),
            ("lambda_c", self.lambda_c),
            ("lambda_mae", self.lambda_mae),
            ("lambda_ssim", self.lambda_ssim),
        ]
    }
}
