//! Model files: JSON with every real written as 17 significant digits.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::model::{GradeParams, SalModel};
use crate::smoothing::{SmootherConfig, WindowMode};
use crate::ssg::{DenseLayer, MlpParams};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SmoothingDoc {
    tau: f64,
    window_mode: WindowMode,
    #[serde(rename = "M")]
    quad_points: usize,
    renormalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradeDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    mu: usize,
    activation: ActivationKind,
    smoothing: Option<SmoothingDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: ActivationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDoc {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SalDoc {
    format_version: u32,
    input_dim: usize,
    output_dim: usize,
    grades: Vec<GradeDoc>,
    hybrid_head: Option<MlpDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFileDoc {
    format_version: u32,
    mlp: MlpDoc,
}

/// Either kind of stored model.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Sal(SalModel),
    Mlp(MlpParams),
}

impl StoredModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            StoredModel::Sal(m) => m.predict_batch(x),
            StoredModel::Mlp(m) => m.predict(x),
        }
    }
}

struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("{what}: ragged weight rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} cannot be stored")))
    }
}

fn mlp_doc(m: &MlpParams) -> Result<MlpDoc> {
    for (i, l) in m.layers.iter().enumerate() {
        check_finite(
            l.weight.iter().chain(l.bias.iter()),
            &format!("layer {} parameters", i + 1),
        )?;
    }
    Ok(MlpDoc {
        input_dim: m.input_dim,
        output_dim: m.output_dim,
        layers: m
            .layers
            .iter()
            .map(|l| LayerDoc {
                weight: rows(&l.weight),
                bias: l.bias.iter().copied().collect(),
                activation: l.activation.clone(),
            })
            .collect(),
    })
}

fn mlp_from_doc(d: MlpDoc) -> Result<MlpParams> {
    let mut layers = Vec::with_capacity(d.layers.len());
    let mut prev = d.input_dim;
    for (i, l) in d.layers.into_iter().enumerate() {
        let weight = matrix(&l.weight, prev, &format!("layer {}", i + 1))?;
        prev = weight.nrows();
        layers.push(DenseLayer {
            weight,
            bias: DVector::from_vec(l.bias),
            activation: l.activation,
        });
    }
    let m = MlpParams {
        input_dim: d.input_dim,
        output_dim: d.output_dim,
        layers,
    };
    m.validate()?;
    Ok(m)
}

fn sal_doc(model: &SalModel) -> Result<SalDoc> {
    let mut grades = Vec::with_capacity(model.grades.len());
    for (i, g) in model.grades.iter().enumerate() {
        check_finite(
            g.weight.iter().chain(g.bias.iter()),
            &format!("grade {} parameters", i + 1),
        )?;
        grades.push(GradeDoc {
            weight: rows(&g.weight),
            bias: g.bias.iter().copied().collect(),
            mu: g.pooling.mu(),
            activation: g.activation.clone(),
            smoothing: g.smoothing.map(|s| SmoothingDoc {
                tau: s.tau,
                window_mode: s.window,
                quad_points: s.quad_points,
                renormalize: s.renormalize,
            }),
        });
    }
    Ok(SalDoc {
        format_version: FORMAT_VERSION,
        input_dim: model.input_dim,
        output_dim: model.output_dim,
        grades,
        hybrid_head: model.hybrid_head.as_ref().map(mlp_doc).transpose()?,
    })
}

fn sal_from_doc(d: SalDoc) -> Result<SalModel> {
    let mut model = match d.hybrid_head {
        Some(h) => {
            let head = mlp_from_doc(h)?;
            if head.input_dim != d.input_dim || head.output_dim != d.output_dim {
                return Err(Error::invalid(
                    "hybrid head dimensions differ from the model",
                ));
            }
            SalModel::with_head(head)
        }
        None => SalModel::new(d.input_dim, d.output_dim),
    };
    for (i, g) in d.grades.into_iter().enumerate() {
        let in_width = model.feature_width(i);
        let weight = matrix(&g.weight, in_width, &format!("grade {}", i + 1))?;
        if weight.nrows() != d.output_dim + g.mu {
            return Err(Error::invalid(format!(
                "grade {}: width {} does not match mu {} plus output dimension {}",
                i + 1,
                weight.nrows(),
                g.mu,
                d.output_dim
            )));
        }
        let smoothing = match g.smoothing {
            Some(s) => {
                let mut cfg = SmootherConfig::new(s.tau, s.window_mode, s.quad_points)?;
                cfg.renormalize = s.renormalize;
                Some(cfg)
            }
            None => None,
        };
        let grade = GradeParams::new(
            weight,
            DVector::from_vec(g.bias),
            d.output_dim,
            g.activation,
        )?
        .with_smoothing(smoothing);
        model.push_grade(grade)?;
    }
    model.validate()?;
    Ok(model)
}

fn to_text<T: Serialize>(doc: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    doc.serialize(&mut ser).expect("model document serializes");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn sal_to_string(model: &SalModel) -> Result<String> {
    Ok(to_text(&sal_doc(model)?))
}

pub fn mlp_to_string(model: &MlpParams) -> Result<String> {
    Ok(to_text(&MlpFileDoc {
        format_version: FORMAT_VERSION,
        mlp: mlp_doc(model)?,
    }))
}

fn parse_err(origin: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    }
}

fn check_version(v: u32, origin: &Path) -> Result<()> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(parse_err(origin, format!("unsupported format_version {v}")))
    }
}

/// Parses either model kind; `origin` names the source in errors.
pub fn model_from_str(text: &str, origin: &Path) -> Result<StoredModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(origin, e))?;
    if value.get("mlp").is_some() {
        let doc: MlpFileDoc = serde_json::from_value(value).map_err(|e| parse_err(origin, e))?;
        check_version(doc.format_version, origin)?;
        Ok(StoredModel::Mlp(mlp_from_doc(doc.mlp)?))
    } else {
        let doc: SalDoc = serde_json::from_value(value).map_err(|e| parse_err(origin, e))?;
        check_version(doc.format_version, origin)?;
        Ok(StoredModel::Sal(sal_from_doc(doc)?))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &SalModel, path: &Path) -> Result<()> {
    write_file(path, &sal_to_string(model)?)
}

pub fn save_mlp(model: &MlpParams, path: &Path) -> Result<()> {
    write_file(path, &mlp_to_string(model)?)
}

pub fn load_any(path: &Path) -> Result<StoredModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}

pub fn load_model(path: &Path) -> Result<SalModel> {
    match load_any(path)? {
        StoredModel::Sal(m) => Ok(m),
        StoredModel::Mlp(_) => Err(parse_err(
            path,
            "file holds a baseline network, not a SAL model",
        )),
    }
}

pub fn load_mlp(path: &Path) -> Result<MlpParams> {
    match load_any(path)? {
        StoredModel::Mlp(m) => Ok(m),
        StoredModel::Sal(_) => Err(parse_err(
            path,
            "file holds a SAL model, not a baseline network",
        )),
    }
}
