//! Run configuration: one JSON document drives data, SAL, the baseline and outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::{make_test, make_train, Dataset, OscillatoryCoeffs, Tabulated, TargetFn};
use crate::qp::SolverMethod;
use crate::smoothing::WindowMode;
use crate::ssg::{MlpInit, MlpTrainConfig};
use crate::trainer::{
    ActivationChoice, GradeConfig, GradeInit, HybridConfig, SmoothingTarget, TrainConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    Nondiff,
    Oscillatory,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub target: TargetName,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub delta: f64,
    pub m: usize,
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff_file: Option<PathBuf>,
    /// CSV of `x, y_1, …, y_t` rows for the custom target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_file: Option<PathBuf>,
}

fn default_m_test() -> usize {
    1000
}

/// Per-grade settings; anything left out falls back to `sal.defaults`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<ActivationKind>,
    /// Fit an activation combination over these bases after the grade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select_from: Option<Vec<ActivationKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing_target: Option<SmoothingTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renormalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<GradeInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_safety: Option<f64>,
    /// Number of consecutive grades with these settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
}

impl GradeSpec {
    fn or(&self, d: &GradeSpec) -> GradeSpec {
        GradeSpec {
            width: self.width.or(d.width),
            activation: self.activation.clone().or_else(|| d.activation.clone()),
            select_from: self.select_from.clone().or_else(|| d.select_from.clone()),
            tau: self.tau.or(d.tau),
            epsilon: self.epsilon.or(d.epsilon),
            max_iters: self.max_iters.or(d.max_iters),
            solver: self.solver.or(d.solver),
            smoothing_target: self.smoothing_target.or(d.smoothing_target),
            window: self.window.or(d.window),
            quad_points: self.quad_points.or(d.quad_points),
            renormalize: self.renormalize.or(d.renormalize),
            init: self.init.or(d.init),
            ridge: self.ridge.or(d.ridge),
            restart: self.restart.or(d.restart),
            lipschitz_safety: self.lipschitz_safety.or(d.lipschitz_safety),
            repeat: None,
        }
    }

    fn builtin() -> GradeSpec {
        let g = GradeConfig::new(1, ActivationKind::Relu);
        GradeSpec {
            width: None,
            activation: Some(ActivationKind::Relu),
            select_from: None,
            tau: Some(0.0),
            epsilon: Some(g.epsilon),
            max_iters: Some(g.max_iters),
            solver: Some(g.solver),
            smoothing_target: Some(g.smoothing_target),
            window: Some(g.window),
            quad_points: Some(g.quad_points),
            renormalize: Some(g.renormalize),
            init: Some(g.init),
            ridge: Some(g.ridge),
            restart: Some(g.restart),
            lipschitz_safety: Some(g.lipschitz_safety),
            repeat: None,
        }
    }

    fn to_grade(&self, path: &str) -> Result<GradeConfig> {
        let width = self.width.ok_or_else(|| Error::Config {
            path: format!("{path}.width"),
            message: "missing field `width` (set it on the grade or in sal.defaults)".into(),
        })?;
        let activation = match &self.select_from {
            Some(list) => ActivationChoice::SelectFrom(list.clone()),
            None => {
                ActivationChoice::Fixed(self.activation.clone().unwrap_or(ActivationKind::Relu))
            }
        };
        let g = GradeConfig {
            width,
            activation,
            tau: self.tau.unwrap_or(0.0),
            epsilon: self.epsilon.unwrap_or(1e-7),
            max_iters: self.max_iters.unwrap_or(5000),
            solver: self.solver.unwrap_or(SolverMethod::Nesterov),
            smoothing_target: self.smoothing_target.unwrap_or(SmoothingTarget::Component),
            window: self
                .window
                .unwrap_or(WindowMode::TauMultiples { factor: 6.0 }),
            quad_points: self.quad_points.unwrap_or(200),
            renormalize: self.renormalize.unwrap_or(false),
            init: self.init.unwrap_or(GradeInit::Zero),
            ridge: self.ridge.unwrap_or(0.0),
            restart: self.restart.unwrap_or(false),
            lipschitz_safety: self.lipschitz_safety.unwrap_or(1.0),
        };
        let bad = |field: &str, message: &str| Error::Config {
            path: format!("{path}.{field}"),
            message: message.into(),
        };
        if !(g.epsilon > 0.0) {
            return Err(bad("epsilon", "must be positive"));
        }
        if g.max_iters == 0 {
            return Err(bad("max_iters", "must be positive"));
        }
        if !(g.tau >= 0.0) {
            return Err(bad("tau", "must be non-negative"));
        }
        if !(g.lipschitz_safety >= 1.0) {
            return Err(bad("lipschitz_safety", "must be at least 1"));
        }
        if !(g.ridge >= 0.0) {
            return Err(bad("ridge", "must be non-negative"));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSection {
    pub widths: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    pub alpha: f64,
    pub epochs: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_mlp_init")]
    pub init: MlpInit,
}

fn default_mlp_init() -> MlpInit {
    MlpInit::He
}

impl MlpSection {
    pub fn to_train_config(&self) -> MlpTrainConfig {
        MlpTrainConfig {
            widths: self.widths.clone(),
            activations: self.activations.clone(),
            alpha: self.alpha,
            epochs: self.epochs,
            epsilon: self.epsilon,
            seed: self.seed,
            checkpoints: self.checkpoints.clone(),
            init: self.init,
        }
    }

    fn check(&self, path: &str) -> Result<()> {
        if self.widths.len() != self.activations.len() {
            return Err(Error::Config {
                path: format!("{path}.activations"),
                message: format!(
                    "expected {} activations, one per hidden layer",
                    self.widths.len()
                ),
            });
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config {
                path: format!("{path}.alpha"),
                message: "must be positive".into(),
            });
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config {
                path: format!("{path}.epsilon"),
                message: "must be non-negative".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalSection {
    #[serde(default)]
    pub defaults: GradeSpec,
    pub grades: Vec<GradeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<MlpSection>,
    #[serde(default = "yes")]
    pub record_test_metrics: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
        }
    }
}

fn default_thresholds() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// CSV file name inside `dir`; defaults to `sal.csv`, `ssg.csv` or `compare.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    /// Model file name inside `dir`; defaults to `sal_model.json` or `ssg_model.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sal: Option<SalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssg: Option<MlpSection>,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative file references are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn join_path(path: &serde_path_to_error::Path, field: Option<&str>) -> String {
    let mut p = path.to_string();
    if p == "." {
        p.clear();
    }
    if let Some(f) = field {
        if !p.is_empty() {
            p.push('.');
        }
        p.push_str(f);
    }
    if p.is_empty() {
        ".".into()
    } else {
        p
    }
}

fn backticked(msg: &str, prefix: &str) -> Option<String> {
    let rest = &msg[msg.find(prefix)? + prefix.len()..];
    let end = rest.find('`')?;
    Some(rest[..end].to_string())
}

/// Parses and validates a config document; `origin` names it in errors.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: RunConfig = match serde_path_to_error::deserialize(de) {
        Ok(c) => c,
        Err(e) => {
            let inner = e.inner();
            let msg = inner.to_string();
            let field = backticked(&msg, "missing field `");
            let path = join_path(e.path(), field.as_deref());
            return Err(Error::Config {
                path,
                message: format!("{msg} ({origin})"),
            });
        }
    };
    cfg.resolve()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text, &path.display().to_string())?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

impl RunConfig {
    /// Fills grade defaults, expands `repeat`, and checks value ranges.
    pub fn resolve(&mut self) -> Result<()> {
        let d = &self.data;
        let bad = |path: &str, message: &str| Error::Config {
            path: path.into(),
            message: message.into(),
        };
        if !(d.b > d.a) {
            return Err(bad("data.b", "must exceed data.a"));
        }
        if !(d.delta >= 0.0) {
            return Err(bad("data.delta", "must be non-negative"));
        }
        if d.m < 2 {
            return Err(bad("data.m", "needs at least two training points"));
        }
        if d.target == TargetName::Custom && d.custom_file.is_none() {
            return Err(bad(
                "data.custom_file",
                "missing field `custom_file` required by the custom target",
            ));
        }
        if let Some(sal) = &mut self.sal {
            let defaults = sal.defaults.or(&GradeSpec::builtin());
            let mut grades = Vec::new();
            for (i, g) in sal.grades.iter().enumerate() {
                let path = format!("sal.grades[{i}]");
                let merged = g.or(&defaults);
                merged.to_grade(&path)?;
                match g.repeat {
                    Some(0) => return Err(bad(&format!("{path}.repeat"), "must be positive")),
                    Some(n) => grades.extend(std::iter::repeat(merged).take(n)),
                    None => grades.push(merged),
                }
            }
            if grades.is_empty() && sal.hybrid.is_none() {
                return Err(bad(
                    "sal.grades",
                    "at least one grade or a hybrid head is required",
                ));
            }
            if let Some(h) = &sal.hybrid {
                h.check("sal.hybrid")?;
            }
            sal.grades = grades;
            sal.defaults = defaults;
        }
        if let Some(s) = &self.ssg {
            s.check("ssg")?;
        }
        if self.compare.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(bad("compare.thresholds", "thresholds must be positive"));
        }
        Ok(())
    }

    /// Sets every seed in the document.
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        if let Some(s) = &mut self.sal {
            s.seed = seed;
            if let Some(h) = &mut s.hybrid {
                h.seed = seed;
            }
        }
        if let Some(s) = &mut self.ssg {
            s.seed = seed;
        }
    }

    fn resolve_file(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn target(&self) -> Result<TargetFn> {
        Ok(match self.data.target {
            TargetName::Nondiff => TargetFn::NonDiff,
            TargetName::Oscillatory => TargetFn::Oscillatory(match &self.data.coeff_file {
                Some(p) => OscillatoryCoeffs::load(&self.resolve_file(p))?,
                None => OscillatoryCoeffs::canonical(),
            }),
            TargetName::Custom => {
                let p = self
                    .data
                    .custom_file
                    .as_ref()
                    .ok_or_else(|| Error::Config {
                        path: "data.custom_file".into(),
                        message: "required by the custom target".into(),
                    })?;
                TargetFn::Custom(Tabulated::load_csv(&self.resolve_file(p))?)
            }
        })
    }

    /// Training grid and (if `m_test > 0`) the random test set.
    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let target = self.target()?;
        let d = &self.data;
        let train = make_train(&target, d.a, d.b, d.delta, d.m)?;
        let test = if d.m_test > 0 {
            Some(make_test(&target, d.a, d.b, d.m_test, d.seed)?)
        } else {
            None
        };
        Ok((train, test))
    }

    pub fn sal_train_config(&self, partitions: usize) -> Result<TrainConfig> {
        let sal = self.sal.as_ref().ok_or_else(|| Error::Config {
            path: "sal".into(),
            message: "missing section `sal`".into(),
        })?;
        let grades = sal
            .grades
            .iter()
            .enumerate()
            .map(|(i, g)| g.to_grade(&format!("sal.grades[{i}]")))
            .collect::<Result<_>>()?;
        Ok(TrainConfig {
            grades,
            hybrid: sal.hybrid.as_ref().map(|h| HybridConfig {
                head: h.to_train_config(),
            }),
            record_test_metrics: sal.record_test_metrics,
            seed: sal.seed,
            partitions: partitions.max(1),
        })
    }

    pub fn ssg_train_config(&self) -> Result<MlpTrainConfig> {
        self.ssg
            .as_ref()
            .map(MlpSection::to_train_config)
            .ok_or_else(|| Error::Config {
                path: "ssg".into(),
                message: "missing section `ssg`".into(),
            })
    }

    /// The resolved document as pretty JSON.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
