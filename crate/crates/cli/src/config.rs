//! Run configuration: a TOML file whose keys can each be overridden by a
//! flag. The merged result is echoed into every output directory, and the
//! directory name carries its hash.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lcm::degrade::{center_mask, half_mask, random_mask, Degradation, DegradationSpec, Mask, Side};
use lcm::restore::RestoreMode;
use lcm::train::{TrainConfig, Variant};

pub const ECHO_FILE: &str = "effective-config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root under which content-addressed run directories are created.
    pub out: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub restore: RestoreSection,
    pub eval: EvalSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("runs"),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            restore: RestoreSection::default(),
            eval: EvalSection::default(),
            compare: CompareSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    /// `lcm`, `glo-map` or `glo-vec:<d>`.
    pub variant: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "toy32".into(),
            variant: "lcm".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestoreSection {
    pub checkpoint: Option<PathBuf>,
    /// A PNG file or a directory of PNGs (the clean images to degrade).
    pub input: Option<PathBuf>,
    pub task: String,
    pub mask: String,
    pub factor: usize,
    /// Defaults to the checkpoint's own mode (manifold for LCM, glo for GLO).
    pub mode: Option<String>,
    pub lambda: f64,
    pub pyramid_term: bool,
    pub steps: usize,
    /// Defaults to 1.0, or 10.0 in glo mode.
    pub lr: Option<f64>,
    pub seed: u64,
}

impl Default for RestoreSection {
    fn default() -> Self {
        RestoreSection {
            checkpoint: None,
            input: None,
            task: "inpaint".into(),
            mask: "center:50".into(),
            factor: 8,
            mode: None,
            lambda: 0.0,
            pyramid_term: false,
            steps: 2000,
            lr: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub restored: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Directory of `<id>.png` masks; implies inpainting.
    pub masks: Option<PathBuf>,
    pub task: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            restored: None,
            truth: None,
            masks: None,
            task: "inpaint".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub variants: Vec<String>,
    /// Images restored in both manifold and z-space mode with the LCM model.
    pub restore_images: usize,
    pub restore_steps: usize,
    pub mask: String,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            variants: ["lcm", "glo-map", "glo-vec:64", "glo-vec:128", "glo-vec:256"]
                .map(String::from)
                .to_vec(),
            restore_images: 10,
            restore_steps: 1000,
            mask: "center:12".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).map_err(|e| {
                    anyhow::Error::new(lcm::LcmError::Config(format!("{}: {e}", p.display())))
                })
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable in TOML")
    }

    /// `<out>/<command>-<first 12 hex digits of sha256(echo)>`.
    pub fn run_dir(&self, command: &str) -> PathBuf {
        let digest = Sha256::digest(format!("command = {command:?}\n{}", self.to_toml()).as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        self.out.join(format!("{command}-{hex}"))
    }

    /// Creates the run directory and writes the effective configuration.
    pub fn start_run(&self, command: &str) -> Result<PathBuf> {
        let dir = self.run_dir(command);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_echo(&dir, self)?;
        Ok(dir)
    }
}

pub fn write_echo(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(ECHO_FILE);
    std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(lcm::LcmError::Config(msg.into()))
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "lcm" => Ok(Variant::Lcm),
        "glo-map" => Ok(Variant::GloMap),
        _ => match s.strip_prefix("glo-vec:").map(str::parse::<usize>) {
            Some(Ok(d)) if d > 0 => Ok(Variant::GloVector(d)),
            _ => Err(invalid(format!("unknown variant `{s}` (lcm, glo-map, glo-vec:<d>)"))),
        },
    }
}

pub fn variant_label(v: Variant) -> String {
    match v {
        Variant::Lcm => "lcm".into(),
        Variant::GloMap => "glo-map".into(),
        Variant::GloVector(d) => format!("glo-vec:{d}"),
    }
}

pub fn parse_mode(s: &str) -> Result<RestoreMode> {
    s.parse::<RestoreMode>()
        .map_err(|_| invalid(format!("unknown restoration mode `{s}` (manifold, zspace, glo)")))
}

/// `center:<side>`, `half:<left|right|top|bottom>` or `random:<missing fraction>`.
pub fn parse_mask(s: &str, h: usize, w: usize, seed: u64) -> Result<Mask> {
    let (kind, arg) = s
        .split_once(':')
        .ok_or_else(|| invalid(format!("mask `{s}` must look like center:50, half:right or random:0.95")))?;
    let mask = match kind {
        "center" => {
            let side: usize = arg.parse().map_err(|_| invalid(format!("bad hole size `{arg}`")))?;
            center_mask(h, w, side, side)?
        }
        "half" => half_mask(h, w, arg.parse::<Side>()?),
        "random" => {
            let p: f64 = arg.parse().map_err(|_| invalid(format!("bad missing fraction `{arg}`")))?;
            random_mask(h, w, p, seed)?
        }
        other => bail!(invalid(format!("unknown mask kind `{other}`"))),
    };
    Ok(mask)
}

/// Degradation for an `h × w` image from the restore flags.
pub fn degradation(r: &RestoreSection, h: usize, w: usize, mask_seed: u64) -> Result<DegradationSpec> {
    let kind = match r.task.as_str() {
        "inpaint" => Degradation::Inpaint(parse_mask(&r.mask, h, w, mask_seed)?),
        "sr" => Degradation::Superres { factor: r.factor },
        "color" => Degradation::Colorize,
        other => bail!(invalid(format!("unknown task `{other}` (inpaint, sr, color)"))),
    };
    let mut spec = DegradationSpec::new(kind)?.with_penalty(r.lambda)?;
    spec.pyramid_term = r.pyramid_term;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nlearning_rate = 1.0\n").unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
        std::fs::write(&p, "[train]\nbatch_size = 3\n[restore]\ntask = \"sr\"\n").unwrap();
        let c = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(c.train.batch_size, 3);
        assert_eq!(c.restore.task, "sr");
        assert_eq!(c.train.epochs, TrainConfig::default().epochs);
    }

    #[test]
    fn echo_round_trips_and_addresses_the_directory() {
        let mut c = RunConfig::default();
        c.train.max_steps = Some(7);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.run_dir("train"), c.run_dir("train"));
        assert_ne!(c.run_dir("train"), c.run_dir("restore"));
        c.train.seed = 1;
        assert_ne!(back.run_dir("train"), c.run_dir("train"));
    }

    #[test]
    fn variants_and_masks_parse() {
        assert_eq!(parse_variant("glo-vec:64").unwrap(), Variant::GloVector(64));
        assert!(parse_variant("glo-vec:0").is_err());
        assert!(parse_variant("vae").is_err());
        assert_eq!(parse_mask("center:4", 8, 8, 0).unwrap().missing_count(), 16);
        assert_eq!(parse_mask("half:right", 8, 8, 0).unwrap().missing_count(), 32);
        assert!(parse_mask("random:0.5", 8, 8, 0).is_ok());
        assert!(parse_mask("ring:3", 8, 8, 0).is_err());
        let r = RestoreSection {
            task: "deblur".into(),
            ..RestoreSection::default()
        };
        assert!(degradation(&r, 8, 8, 0).is_err());
    }
}
