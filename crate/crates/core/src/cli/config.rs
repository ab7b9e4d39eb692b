//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; groups use dotted keys such as
//! `noise.dim = 20`. Lists are comma separated. Unknown and repeated keys
//! are rejected with their line number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::client::{NoiseSpec, TrainConfig};
use crate::datasets::{FileFormat, SyntheticSpec, TeacherMode};
use crate::error::{Error, Result};
use crate::seed;
use crate::teacher::{RegularizerKind, Scenario, TeacherConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    File {
        path: PathBuf,
        format: FileFormat,
        /// Class names, as written in the semantic table, held out as unseen.
        unseen: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelMode {
    InProcess,
    /// Remote teacher at `host:port`.
    Tcp(String),
}

/// A fully validated experiment. Seeds inside `teacher` and `train` are not
/// read; [`ExperimentConfig::seeds`] derives them from `seed` and
/// `run_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub unseen_train_ratio: f64,
    pub seen_train_ratio: f64,
    pub regularizer: RegularizerKind,
    pub teacher: TeacherConfig,
    /// Also carries scenario, teacher mode, alpha and noise dimension.
    pub train: TrainConfig,
    pub channel: ChannelMode,
    /// Teacher listen address for `serve`.
    pub endpoint: Option<String>,
    pub output: PathBuf,
    pub seed: u64,
    /// Counter for independent client seeds within a sweep.
    pub run_index: u64,
}

/// Seeds of one run. Data, split and teacher seeds depend only on the master
/// seed; client seeds also depend on the run index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub split: u64,
    pub teacher: u64,
    pub client: u64,
    pub noise: u64,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> RunSeeds {
        RunSeeds {
            data: seed::derive(self.seed, "data"),
            split: seed::derive(self.seed, "split"),
            teacher: seed::derive(self.seed, "teacher"),
            client: seed::derive_indexed(self.seed, "client", self.run_index),
            noise: seed::derive_indexed(self.seed, "noise", self.run_index),
        }
    }

    pub fn scenario(&self) -> Scenario {
        self.train.scenario
    }

    pub fn teacher_mode(&self) -> TeacherMode {
        self.train.teacher_mode
    }

    pub fn alpha(&self) -> f64 {
        self.train.alpha
    }

    pub fn teacher_config(&self) -> TeacherConfig {
        TeacherConfig {
            seed: self.seeds().teacher,
            ..self.teacher.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = self.seeds();
        TrainConfig {
            seed: s.client,
            noise: NoiseSpec::new(self.train.noise.dim, s.noise),
            ..self.train.clone()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let entries = parse_entries(text)?;
        let end = text.lines().count() + 1;
        let mut b = Builder::default();
        for e in &entries {
            b.apply(e, base)?;
        }
        b.finish(end, base)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_canonical(&self) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                kv("dataset.source", "synthetic".into());
                kv("synthetic.classes", s.classes.to_string());
                kv("synthetic.seen", s.seen.to_string());
                kv("synthetic.dim_x", s.dim_x.to_string());
                kv("synthetic.dim_a", s.dim_a.to_string());
                kv("synthetic.per_class", s.per_class.to_string());
                kv("synthetic.separation", s.separation.to_string());
                kv("synthetic.noise", s.noise.to_string());
                kv("synthetic.semantic_rank", s.semantic_rank.to_string());
                kv("synthetic.link_seed", s.link_seed.to_string());
            }
            DatasetSource::File { path, format, unseen } => {
                kv("dataset.source", "file".into());
                kv("dataset.path", path.display().to_string());
                kv("dataset.format", format_str(*format).into());
                kv("dataset.unseen", unseen.join(","));
            }
        }
        kv("scenario", self.train.scenario.as_str().into());
        kv("teacher_mode", self.train.teacher_mode.as_str().into());
        kv("split.unseen_train_ratio", self.unseen_train_ratio.to_string());
        kv("split.seen_train_ratio", self.seen_train_ratio.to_string());
        kv("regularizer", self.regularizer.as_str().into());
        kv("alpha", self.train.alpha.to_string());
        kv("noise.dim", self.train.noise.dim.to_string());
        kv("teacher.hidden", list(&self.teacher.hidden));
        kv("teacher.epochs", self.teacher.epochs.to_string());
        kv("teacher.batch_size", self.teacher.batch_size.to_string());
        kv("teacher.learning_rate", self.teacher.learning_rate.to_string());
        let t = &self.train;
        kv("train.gen_epochs", t.gen_epochs.to_string());
        kv("train.student_epochs", t.student_epochs.to_string());
        kv("train.classifier_epochs", t.classifier_epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.per_class_count", t.per_class_count.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.classifier_learning_rate", t.classifier_learning_rate.to_string());
        kv("train.gen_hidden", t.gen_hidden.to_string());
        kv("train.student_hidden", list(&t.student_hidden));
        kv("train.min_verified_per_class", t.min_verified_per_class.to_string());
        kv("train.regen_retry_cap", t.regen_retry_cap.to_string());
        kv("train.verify", t.verify.to_string());
        kv("train.upload_chunk", t.upload_chunk.to_string());
        match &self.channel {
            ChannelMode::InProcess => kv("channel", "in-process".into()),
            ChannelMode::Tcp(addr) => kv("channel", format!("tcp://{addr}")),
        }
        if let Some(ep) = &self.endpoint {
            kv("endpoint", ep.clone());
        }
        kv("output", self.output.display().to_string());
        kv("seed", self.seed.to_string());
        kv("run_index", self.run_index.to_string());
        o
    }
}

fn format_str(f: FileFormat) -> &'static str {
    match f {
        FileFormat::Csv => "csv",
        FileFormat::Azb => "azb",
    }
}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected `key = value`, found `{body}`"),
        })?;
        let key = k.trim().to_string();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Config {
                line,
                message: format!("invalid key `{}`", k.trim()),
            });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Config {
                line,
                message: format!("key `{key}` already set on line {}", prev.line),
            });
        }
        out.push(Entry {
            line,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

fn value<T: FromStr>(e: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value.parse::<T>().map_err(|err| Error::Config {
        line: e.line,
        message: format!("bad value `{}` for `{}`: {err}", e.value, e.key),
    })
}

fn usize_list(e: &Entry) -> Result<Vec<usize>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|p| {
            p.trim().parse::<usize>().map_err(|err| Error::Config {
                line: e.line,
                message: format!("bad list item `{}` for `{}`: {err}", p.trim(), e.key),
            })
        })
        .collect()
}

#[derive(Default)]
struct Builder {
    source: Option<(usize, String)>,
    synthetic: SyntheticSpec,
    synthetic_keys: Option<usize>,
    path: Option<(usize, PathBuf)>,
    format: Option<FileFormat>,
    unseen: Option<Vec<String>>,
    scenario: Option<Scenario>,
    teacher_mode: Option<TeacherMode>,
    unseen_train_ratio: Option<(usize, f64)>,
    seen_train_ratio: Option<(usize, f64)>,
    regularizer: Option<RegularizerKind>,
    alpha: Option<(usize, f64)>,
    teacher: Option<TeacherConfig>,
    train: Option<TrainConfig>,
    channel: Option<ChannelMode>,
    endpoint: Option<String>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    run_index: Option<u64>,
}

impl Builder {
    fn apply(&mut self, e: &Entry, base: &Path) -> Result<()> {
        let teacher = self.teacher.get_or_insert_with(TeacherConfig::default);
        let train = self.train.get_or_insert_with(TrainConfig::default);
        let s = &mut self.synthetic;
        if e.key.starts_with("synthetic.") {
            self.synthetic_keys.get_or_insert(e.line);
        }
        match e.key.as_str() {
            "dataset.source" => self.source = Some((e.line, e.value.to_ascii_lowercase())),
            "dataset.path" => {
                let p = Path::new(&e.value);
                let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
                if !p.exists() {
                    return Err(Error::Config {
                        line: e.line,
                        message: format!("dataset file {} does not exist", p.display()),
                    });
                }
                self.path = Some((e.line, p));
            }
            "dataset.format" => self.format = Some(value(e)?),
            "dataset.unseen" => {
                self.unseen = Some(
                    e.value
                        .split(',')
                        .map(|p| p.trim().to_string())
                        .filter(|p| !p.is_empty())
                        .collect(),
                )
            }
            "synthetic.classes" => s.classes = value(e)?,
            "synthetic.seen" => s.seen = value(e)?,
            "synthetic.dim_x" => s.dim_x = value(e)?,
            "synthetic.dim_a" => s.dim_a = value(e)?,
            "synthetic.per_class" => s.per_class = value(e)?,
            "synthetic.separation" => s.separation = value(e)?,
            "synthetic.noise" => s.noise = value(e)?,
            "synthetic.semantic_rank" => s.semantic_rank = value(e)?,
            "synthetic.link_seed" => s.link_seed = value(e)?,
            "scenario" => self.scenario = Some(value(e)?),
            "teacher_mode" => self.teacher_mode = Some(value(e)?),
            "split.unseen_train_ratio" => self.unseen_train_ratio = Some((e.line, value(e)?)),
            "split.seen_train_ratio" => self.seen_train_ratio = Some((e.line, value(e)?)),
            "regularizer" => self.regularizer = Some(value(e)?),
            "alpha" => self.alpha = Some((e.line, value(e)?)),
            "noise.dim" => train.noise.dim = value(e)?,
            "teacher.hidden" => teacher.hidden = usize_list(e)?,
            "teacher.epochs" => teacher.epochs = value(e)?,
            "teacher.batch_size" => teacher.batch_size = value(e)?,
            "teacher.learning_rate" => teacher.learning_rate = value(e)?,
            "train.gen_epochs" => train.gen_epochs = value(e)?,
            "train.student_epochs" => train.student_epochs = value(e)?,
            "train.classifier_epochs" => train.classifier_epochs = value(e)?,
            "train.batch_size" => train.batch_size = value(e)?,
            "train.per_class_count" => train.per_class_count = value(e)?,
            "train.learning_rate" => train.learning_rate = value(e)?,
            "train.classifier_learning_rate" => train.classifier_learning_rate = value(e)?,
            "train.gen_hidden" => train.gen_hidden = value(e)?,
            "train.student_hidden" => train.student_hidden = usize_list(e)?,
            "train.min_verified_per_class" => train.min_verified_per_class = value(e)?,
            "train.regen_retry_cap" => train.regen_retry_cap = value(e)?,
            "train.verify" => train.verify = value(e)?,
            "train.upload_chunk" => train.upload_chunk = value(e)?,
            "channel" => {
                let v = e.value.as_str();
                self.channel = Some(if v == "in-process" || v == "inprocess" {
                    ChannelMode::InProcess
                } else if let Some(addr) = v.strip_prefix("tcp://") {
                    ChannelMode::Tcp(addr.to_string())
                } else {
                    return Err(Error::Config {
                        line: e.line,
                        message: format!("channel must be `in-process` or `tcp://host:port`, got `{v}`"),
                    });
                });
            }
            "endpoint" => self.endpoint = Some(e.value.clone()),
            "output" => {
                let p = Path::new(&e.value);
                self.output = Some(if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
            }
            "seed" => self.seed = Some(value(e)?),
            "run_index" => self.run_index = Some(value(e)?),
            other => {
                return Err(Error::Config {
                    line: e.line,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    fn finish(self, end: usize, base: &Path) -> Result<ExperimentConfig> {
        let missing = |key: &str| Error::Config {
            line: end,
            message: format!("missing required key `{key}`"),
        };
        let (src_line, source) = self.source.ok_or_else(|| missing("dataset.source"))?;
        let dataset = match source.as_str() {
            "synthetic" => {
                if let Some((line, _)) = self.path {
                    return Err(Error::Config {
                        line,
                        message: "dataset.path given for a synthetic dataset".into(),
                    });
                }
                self.synthetic.validate().map_err(|e| Error::Config {
                    line: self.synthetic_keys.unwrap_or(src_line),
                    message: e.to_string(),
                })?;
                DatasetSource::Synthetic(self.synthetic)
            }
            "file" => {
                if let Some(line) = self.synthetic_keys {
                    return Err(Error::Config {
                        line,
                        message: "synthetic.* keys given for a file dataset".into(),
                    });
                }
                let (line, path) = self.path.ok_or_else(|| missing("dataset.path"))?;
                let format = match self.format {
                    Some(f) => f,
                    None => FileFormat::from_path(&path).ok_or_else(|| Error::Config {
                        line,
                        message: "cannot infer the format; set dataset.format".into(),
                    })?,
                };
                let unseen = self.unseen.ok_or_else(|| missing("dataset.unseen"))?;
                if unseen.is_empty() {
                    return Err(Error::Config {
                        line: src_line,
                        message: "dataset.unseen lists no classes".into(),
                    });
                }
                DatasetSource::File { path, format, unseen }
            }
            other => {
                return Err(Error::Config {
                    line: src_line,
                    message: format!("dataset.source must be `synthetic` or `file`, got `{other}`"),
                })
            }
        };
        let mut train = self.train.unwrap_or_default();
        train.scenario = self.scenario.ok_or_else(|| missing("scenario"))?;
        train.teacher_mode = self.teacher_mode.ok_or_else(|| missing("teacher_mode"))?;
        let (alpha_line, alpha) = self.alpha.unwrap_or((end, TrainConfig::default().alpha));
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config {
                line: alpha_line,
                message: format!("alpha must be >= 0, got {alpha}"),
            });
        }
        train.alpha = alpha;
        train.validate().map_err(|e| Error::Config {
            line: end,
            message: e.to_string(),
        })?;
        let teacher = self.teacher.unwrap_or_default();
        if teacher.epochs == 0
            || teacher.batch_size == 0
            || !(teacher.learning_rate > 0.0)
            || teacher.hidden.contains(&0)
        {
            return Err(Error::Config {
                line: end,
                message: "teacher epochs, batch size, widths and learning rate must be positive".into(),
            });
        }
        let ratio = |r: Option<(usize, f64)>, key: &str| -> Result<f64> {
            match r {
                None => Ok(0.8),
                Some((_, v)) if v > 0.0 && v < 1.0 => Ok(v),
                Some((line, v)) => Err(Error::Config {
                    line,
                    message: format!("{key} must lie in (0, 1), got {v}"),
                }),
            }
        };
        let channel = self.channel.unwrap_or(ChannelMode::InProcess);
        if matches!(channel, ChannelMode::Tcp(_)) && matches!(dataset, DatasetSource::File { .. }) {
            return Err(Error::Config {
                line: src_line,
                message: "a remote teacher needs a synthetic dataset; file features stay with the server".into(),
            });
        }
        Ok(ExperimentConfig {
            dataset,
            unseen_train_ratio: ratio(self.unseen_train_ratio, "split.unseen_train_ratio")?,
            seen_train_ratio: ratio(self.seen_train_ratio, "split.seen_train_ratio")?,
            regularizer: self.regularizer.unwrap_or(RegularizerKind::GaussianKl),
            teacher,
            train,
            channel,
            endpoint: self.endpoint,
            output: self.output.unwrap_or_else(|| base.join("azsl-out")),
            seed: self.seed.unwrap_or(0),
            run_index: self.run_index.unwrap_or(0),
        })
    }
}

/// Parses a `gen-data` spec: `synthetic.*` keys and `seed` only.
pub fn parse_synthetic_spec(text: &str) -> Result<(SyntheticSpec, u64)> {
    let mut spec = SyntheticSpec::default();
    let mut seed = 0;
    for e in parse_entries(text)? {
        match e.key.as_str() {
            "synthetic.classes" => spec.classes = value(&e)?,
            "synthetic.seen" => spec.seen = value(&e)?,
            "synthetic.dim_x" => spec.dim_x = value(&e)?,
            "synthetic.dim_a" => spec.dim_a = value(&e)?,
            "synthetic.per_class" => spec.per_class = value(&e)?,
            "synthetic.separation" => spec.separation = value(&e)?,
            "synthetic.noise" => spec.noise = value(&e)?,
            "synthetic.semantic_rank" => spec.semantic_rank = value(&e)?,
            "synthetic.link_seed" => spec.link_seed = value(&e)?,
            "seed" => seed = value(&e)?,
            other => {
                return Err(Error::Config {
                    line: e.line,
                    message: format!("unknown key `{other}` in a data spec"),
                })
            }
        }
    }
    spec.validate().map_err(|e| Error::Config {
        line: text.lines().count() + 1,
        message: e.to_string(),
    })?;
    Ok((spec, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dataset.source = synthetic\nscenario = black\nteacher_mode = inductive\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(c.train.noise.dim, 20);
        assert_eq!(c.train.learning_rate, 1e-5);
        assert_eq!(c.train.per_class_count, 400);
        assert_eq!(c.scenario(), Scenario::BlackBox);
        assert_eq!(c.teacher_mode(), TeacherMode::Inductive);
        assert_eq!(c.dataset, DatasetSource::Synthetic(SyntheticSpec::default()));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::parse(&format!("{MINIMAL}# note\nalpha = -1\n"), Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 5, .. }), "{err}");
        let err = ExperimentConfig::parse(&format!("{MINIMAL}colour = red\n"), Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }), "{err}");
        let err =
            ExperimentConfig::parse("dataset.source = synthetic\nscenario = white\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("teacher_mode"));
        let err = ExperimentConfig::parse(&format!("{MINIMAL}noise.dim = many\n"), Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }), "{err}");
        let err = ExperimentConfig::parse(&format!("{MINIMAL}scenario = white\n"), Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 4, .. }), "{err}");
    }

    #[test]
    fn canonical_round_trip() {
        let text = format!(
            "{MINIMAL}alpha = 0.25\nteacher.hidden = 32,16\nchannel = tcp://127.0.0.1:9\nseed = 7 # trailing\n"
        );
        let c = ExperimentConfig::parse(&text, Path::new("/tmp")).unwrap();
        let again = ExperimentConfig::parse(&c.to_canonical(), Path::new("/elsewhere")).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_canonical(), c.to_canonical());
    }
}
