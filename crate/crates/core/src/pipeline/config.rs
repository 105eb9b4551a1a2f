use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::default_omega_grid;
use crate::loss::LossParams;
use crate::trainer::{Activation, NetworkSpec, OodKind, TrainConfig};

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .fold(String::with_capacity(16), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Where the input-space training and test data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { per_class: usize, seed: u64 },
    /// Labeled embedding-format files in input space.
    Files { train: PathBuf, id_test: PathBuf },
}

/// An OOD set: a synthetic generator or an input-space file.
#[derive(Debug, Clone, PartialEq)]
pub enum OodSource {
    Synthetic(OodKind),
    File(PathBuf),
}

impl OodSource {
    fn parse(value: &str, base: &Path) -> Self {
        match value.parse::<OodKind>() {
            Ok(kind) => OodSource::Synthetic(kind),
            Err(_) => OodSource::File(base.join(value)),
        }
    }

    /// Short name used in output file names.
    pub fn name(&self) -> String {
        match self {
            OodSource::Synthetic(k) => k.to_string(),
            OodSource::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "ood".to_string()),
        }
    }

    fn render(&self) -> String {
        match self {
            OodSource::Synthetic(k) => k.to_string(),
            OodSource::File(p) => p.display().to_string(),
        }
    }

    fn same_as(&self, other: &OodSource) -> bool {
        match (self, other) {
            (OodSource::File(a), OodSource::File(b)) => {
                a == b || matches!((fs::canonicalize(a), fs::canonicalize(b)), (Ok(x), Ok(y)) if x == y)
            }
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub frame_seed: u64,
    /// `feature_dim` of the network always equals the frame dimension.
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub data: DataSource,
    /// The single OOD set used to choose `ω`.
    pub tune_ood: OodSource,
    pub eval_ood: Vec<OodSource>,
    pub omega_grid: Vec<f64>,
    /// Temperature of the max-softmax baseline.
    pub temperature: f64,
    pub output_dir: PathBuf,
    pub allow_overlap: bool,
    /// Hash of the source text, stamped on every artifact.
    pub hash: String,
}

impl Default for PipelineConfig {
    /// The synthetic toy run: three blobs in 2-D, a 2-16-16-8 MLP, 50 epochs.
    fn default() -> Self {
        let mut cfg = Self {
            num_classes: 3,
            feature_dim: 8,
            frame_seed: 0,
            network: NetworkSpec {
                input_dim: 2,
                hidden_dims: vec![16, 16],
                feature_dim: 8,
                activation: Activation::Relu,
                seed: 0,
            },
            train: TrainConfig::default(),
            data: DataSource::Synthetic {
                per_class: 200,
                seed: 1,
            },
            tune_ood: OodSource::Synthetic(OodKind::Ring),
            eval_ood: vec![
                OodSource::Synthetic(OodKind::UniformBox),
                OodSource::Synthetic(OodKind::ShiftedBlobs),
            ],
            omega_grid: default_omega_grid(),
            temperature: 1.0,
            output_dir: PathBuf::from("pedcc-out"),
            allow_overlap: false,
            hash: String::new(),
        };
        cfg.hash = config_hash(cfg.render().as_bytes());
        cfg
    }
}

const KEYS: &[&str] = &[
    "num_classes",
    "feature_dim",
    "frame_seed",
    "input_dim",
    "hidden",
    "activation",
    "net_seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "train_seed",
    "scale_s",
    "margin_m",
    "mse_weight_n",
    "data",
    "per_class",
    "data_seed",
    "train_path",
    "id_test_path",
    "tune_ood",
    "eval_ood",
    "omega_grid",
    "temperature",
    "output_dir",
    "allow_overlap",
];

fn list<T>(value: &str, mut f: impl FnMut(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|x| f(x.trim())).collect()
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value '{v}'"))
}

impl PipelineConfig {
    /// Reads a `key = value` config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, 0, "config is not UTF-8"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    /// Parses config text. `origin` only labels errors.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let (mut per_class, mut data_seed) = (200usize, 1u64);
        let (mut data_kind, mut train_path, mut id_test_path) = ("synthetic".to_string(), None, None);

        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::parse(origin, i + 1, m);
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            let set = |cfg: &mut Self| -> Result<(), String> {
                match key {
                    "num_classes" => cfg.num_classes = num(value)?,
                    "feature_dim" => cfg.feature_dim = num(value)?,
                    "frame_seed" => cfg.frame_seed = num(value)?,
                    "input_dim" => cfg.network.input_dim = num(value)?,
                    "hidden" => cfg.network.hidden_dims = list(value, num)?,
                    "activation" => cfg.network.activation = value.parse().map_err(|e: Error| e.to_string())?,
                    "net_seed" => cfg.network.seed = num(value)?,
                    "epochs" => cfg.train.epochs = num(value)?,
                    "batch_size" => cfg.train.batch_size = num(value)?,
                    "learning_rate" => cfg.train.learning_rate = num(value)?,
                    "momentum" => cfg.train.momentum = num(value)?,
                    "train_seed" => cfg.train.seed = num(value)?,
                    "scale_s" => cfg.train.loss.scale_s = num(value)?,
                    "margin_m" => cfg.train.loss.margin_m = num(value)?,
                    "mse_weight_n" => cfg.train.loss.mse_weight_n = num(value)?,
                    "tune_ood" => cfg.tune_ood = OodSource::parse(value, base),
                    "eval_ood" => cfg.eval_ood = list(value, |v| Ok(OodSource::parse(v, base)))?,
                    "omega_grid" => {
                        cfg.omega_grid = if value == "default" {
                            default_omega_grid()
                        } else {
                            list(value, num)?
                        }
                    }
                    "temperature" => cfg.temperature = num(value)?,
                    "output_dir" => cfg.output_dir = base.join(value),
                    "allow_overlap" => cfg.allow_overlap = num(value)?,
                    _ => {}
                }
                Ok(())
            };
            match key {
                "data" => data_kind = value.to_string(),
                "per_class" => per_class = num(value).map_err(err)?,
                "data_seed" => data_seed = num(value).map_err(err)?,
                "train_path" => train_path = Some(base.join(value)),
                "id_test_path" => id_test_path = Some(base.join(value)),
                _ => set(&mut cfg).map_err(|m| err(format!("{key}: {m}")))?,
            }
        }

        cfg.network.feature_dim = cfg.feature_dim;
        cfg.data = match data_kind.as_str() {
            "synthetic" => DataSource::Synthetic {
                per_class,
                seed: data_seed,
            },
            "files" => DataSource::Files {
                train: train_path.ok_or_else(|| Error::invalid("data = files needs train_path"))?,
                id_test: id_test_path.ok_or_else(|| Error::invalid("data = files needs id_test_path"))?,
            },
            other => return Err(Error::invalid(format!("data must be 'synthetic' or 'files', got '{other}'"))),
        };
        cfg.hash = config_hash(text.as_bytes());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static checks; file existence is checked by [`check_inputs`](Self::check_inputs).
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be >= 2"));
        }
        if self.num_classes > self.feature_dim + 1 {
            return Err(Error::invalid(format!(
                "num_classes = {} exceeds feature_dim + 1 = {}",
                self.num_classes,
                self.feature_dim + 1
            )));
        }
        if self.network.feature_dim != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: self.network.feature_dim,
            });
        }
        self.network.validate()?;
        self.train.validate()?;
        LossParams::validate(&self.train.loss)?;
        crate::evaluate::validate_grid(&self.omega_grid)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if self.eval_ood.is_empty() {
            return Err(Error::invalid("eval_ood lists no OOD sets"));
        }
        let mut names = HashSet::new();
        for s in &self.eval_ood {
            if !names.insert(s.name()) {
                return Err(Error::invalid(format!("eval_ood name '{}' appears twice", s.name())));
            }
        }
        if let Some(s) = self
            .eval_ood
            .iter()
            .find(|s| s.name() == self.tune_ood.name() && !s.same_as(&self.tune_ood))
        {
            return Err(Error::invalid(format!(
                "tuning set '{}' and evaluation set '{}' share the output name '{}'",
                self.tune_ood.render(),
                s.render(),
                s.name()
            )));
        }
        let synthetic = matches!(self.data, DataSource::Synthetic { .. });
        let all = std::iter::once(&self.tune_ood).chain(&self.eval_ood);
        if !synthetic && all.clone().any(|s| matches!(s, OodSource::Synthetic(_))) {
            return Err(Error::invalid("synthetic OOD sets need data = synthetic"));
        }
        if !self.allow_overlap {
            if let Some(s) = self.eval_ood.iter().find(|s| s.same_as(&self.tune_ood)) {
                return Err(Error::invalid(format!(
                    "evaluation OOD set '{}' is the tuning set; pass --allow-overlap to permit this",
                    s.render()
                )));
            }
        }
        Ok(())
    }

    /// Checks that every referenced input file exists.
    pub fn check_inputs(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        if let DataSource::Files { train, id_test } = &self.data {
            paths.push(train);
            paths.push(id_test);
        }
        for s in std::iter::once(&self.tune_ood).chain(&self.eval_ood) {
            if let OodSource::File(p) = s {
                paths.push(p);
            }
        }
        for p in paths {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` text for this config.
    pub fn render(&self) -> String {
        let join = |xs: Vec<String>| xs.join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("num_classes", self.num_classes.to_string());
        kv("feature_dim", self.feature_dim.to_string());
        kv("frame_seed", self.frame_seed.to_string());
        kv("input_dim", self.network.input_dim.to_string());
        kv("hidden", join(self.network.hidden_dims.iter().map(usize::to_string).collect()));
        kv("activation", self.network.activation.to_string());
        kv("net_seed", self.network.seed.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("momentum", self.train.momentum.to_string());
        kv("train_seed", self.train.seed.to_string());
        kv("scale_s", self.train.loss.scale_s.to_string());
        kv("margin_m", self.train.loss.margin_m.to_string());
        kv("mse_weight_n", self.train.loss.mse_weight_n.to_string());
        match &self.data {
            DataSource::Synthetic { per_class, seed } => {
                kv("data", "synthetic".into());
                kv("per_class", per_class.to_string());
                kv("data_seed", seed.to_string());
            }
            DataSource::Files { train, id_test } => {
                kv("data", "files".into());
                kv("train_path", train.display().to_string());
                kv("id_test_path", id_test.display().to_string());
            }
        }
        kv("tune_ood", self.tune_ood.render());
        kv("eval_ood", join(self.eval_ood.iter().map(OodSource::render).collect()));
        kv("omega_grid", join(self.omega_grid.iter().map(|w| format!("{w:e}")).collect()));
        kv("temperature", self.temperature.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("allow_overlap", self.allow_overlap.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::parse(text, Path::new(""), Path::new("test.conf"))
    }

    #[test]
    fn hash_is_16_hex() {
        let h = config_hash(b"abc");
        assert_eq!(h, "ba7816bf8f01cfea");
        assert_ne!(config_hash(b"abd"), h);
    }

    #[test]
    fn empty_text_is_default_settings() {
        let cfg = parse("# nothing\n\n").unwrap();
        let d = PipelineConfig::default();
        assert_eq!(cfg.network, d.network);
        assert_eq!(cfg.train, d.train);
        assert_eq!(cfg.data, d.data);
        assert_eq!(cfg.omega_grid, d.omega_grid);
    }

    #[test]
    fn render_round_trips() {
        let d = PipelineConfig::default();
        let back = parse(&d.render()).unwrap();
        assert_eq!(back.render(), d.render());
        assert_eq!(back.hash, d.hash);
    }

    #[test]
    fn parses_values() {
        let cfg = parse(
            "num_classes = 4\nfeature_dim = 6\nhidden = 8\nactivation = tanh\n\
             eval_ood = uniform-box\ntune_ood = shifted-blobs\nomega_grid = 0, 1, 1000\n",
        )
        .unwrap();
        assert_eq!(cfg.num_classes, 4);
        assert_eq!(cfg.network.feature_dim, 6);
        assert_eq!(cfg.network.hidden_dims, vec![8]);
        assert_eq!(cfg.network.activation, Activation::Tanh);
        assert_eq!(cfg.omega_grid, vec![0.0, 1.0, 1000.0]);
        assert_eq!(cfg.tune_ood, OodSource::Synthetic(OodKind::ShiftedBlobs));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse("epochs = 3\nbogus = 1\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("epochs = x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("epochs = 1\nepochs = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("just words\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn overlap_guard() {
        let text = "tune_ood = ring\neval_ood = uniform-box, ring\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("--allow-overlap"), "{err}");
        assert!(parse(&format!("{text}allow_overlap = true\n")).is_ok());
    }

    #[test]
    fn static_validation() {
        assert!(parse("num_classes = 10\nfeature_dim = 8\n").is_err());
        assert!(parse("omega_grid = 0, 1\n").is_err());
        assert!(parse("learning_rate = 0\n").is_err());
        assert!(parse("data = files\n").is_err());
        assert!(parse("eval_ood = ring, ring\ntune_ood = uniform-box\n").is_err());
    }
}
