//! JSON artifacts for trained models and calibrated maps.
//!
//! Floats are written as shortest round-trip decimals, so loading an
//! artifact and conditioning on the stored parameters reproduces the model
//! bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::Standardizer;
use crate::error::{Error, Result};
use crate::fusion::TrainedModel;
use crate::gp::{GpModel, KernelParams, OutputScaling};
use crate::imc::{ImcConfig, LinearMap};
use crate::lvgp::{LatentMap, LvgpModel};
use crate::optim::TraceSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizers {
    pub input: Standardizer,
    pub output: OutputScaling,
}

/// Fields shared by every model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpArtifact {
    pub phi: Vec<f64>,
    pub mu: f64,
    pub sigma2: f64,
    pub nugget: f64,
    #[serde(rename = "X_train")]
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    pub standardizers: Standardizers,
    pub seed: u64,
    pub optimizer_trace_summary: Option<TraceSummary>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl GpArtifact {
    fn common(
        params: &KernelParams,
        mu: f64,
        sigma2: f64,
        nugget: f64,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        input: &Standardizer,
        output: &OutputScaling,
        seed: u64,
        trace: &Option<TraceSummary>,
    ) -> Self {
        GpArtifact {
            phi: params.phi.clone(),
            mu,
            sigma2,
            nugget,
            x_train: rows(x),
            y_train: y.iter().copied().collect(),
            standardizers: Standardizers {
                input: input.clone(),
                output: *output,
            },
            seed,
            optimizer_trace_summary: trace.clone(),
        }
    }

    pub fn from_gp(m: &GpModel) -> Self {
        Self::common(
            &m.params, m.mu(), m.sigma2(), m.nugget(), &m.x_train, &m.y_train, &m.input, &m.output, m.seed,
            &m.trace,
        )
    }

    pub fn from_lvgp(m: &LvgpModel) -> Self {
        Self::common(
            &m.params, m.mu(), m.sigma2(), m.nugget(), &m.x_train, &m.y_train, &m.input, &m.output, m.seed,
            &m.trace,
        )
    }

    fn train_data(&self) -> Result<(DMatrix<f64>, DVector<f64>, KernelParams)> {
        let x = matrix(&self.x_train, self.phi.len())?;
        if self.y_train.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: self.y_train.len(),
            });
        }
        Ok((x, DVector::from_vec(self.y_train.clone()), KernelParams::new(self.phi.clone())?))
    }

    /// Stored `mu`/`sigma2`/`nugget` must match the reconditioned model.
    fn check(&self, mu: f64, sigma2: f64, nugget: f64) -> Result<()> {
        if mu != self.mu || sigma2 != self.sigma2 || nugget != self.nugget {
            return Err(Error::Config(format!(
                "artifact is inconsistent: stored (mu, sigma2, nugget) = ({}, {}, {}), recomputed ({mu}, {sigma2}, {nugget})",
                self.mu, self.sigma2, self.nugget
            )));
        }
        Ok(())
    }

    pub fn to_gp(&self) -> Result<GpModel> {
        let (x, y, params) = self.train_data()?;
        let m = GpModel::assemble(
            &x,
            &y,
            self.standardizers.input.clone(),
            self.standardizers.output,
            params,
            self.nugget,
            self.seed,
            self.optimizer_trace_summary.clone(),
        )?;
        self.check(m.mu(), m.sigma2(), m.nugget())?;
        Ok(m)
    }
}

/// A model artifact, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArtifact {
    FusedGp {
        ref_id: String,
        #[serde(flatten)]
        gp: GpArtifact,
    },
    FusedLvgp {
        ref_id: String,
        #[serde(flatten)]
        gp: GpArtifact,
        levels: Vec<String>,
        coords: Vec<[f64; 2]>,
        anchor_level: String,
        s_train: Vec<String>,
    },
    SingleSourceGp {
        source_id: String,
        #[serde(flatten)]
        gp: GpArtifact,
    },
}

impl ModelArtifact {
    pub fn from_model(model: &TrainedModel) -> Self {
        match model {
            TrainedModel::FusedGp { ref_id, model } => ModelArtifact::FusedGp {
                ref_id: ref_id.clone(),
                gp: GpArtifact::from_gp(model),
            },
            TrainedModel::FusedLvgp { ref_id, model } => ModelArtifact::FusedLvgp {
                ref_id: ref_id.clone(),
                gp: GpArtifact::from_lvgp(model),
                levels: model.latent.levels.clone(),
                coords: model.latent.coords.clone(),
                anchor_level: model.latent.anchor_level.clone(),
                s_train: model.s_train.clone(),
            },
            TrainedModel::SingleSourceGp { source_id, model } => ModelArtifact::SingleSourceGp {
                source_id: source_id.clone(),
                gp: GpArtifact::from_gp(model),
            },
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        Ok(match self {
            ModelArtifact::FusedGp { ref_id, gp } => TrainedModel::FusedGp {
                ref_id: ref_id.clone(),
                model: gp.to_gp()?,
            },
            ModelArtifact::SingleSourceGp { source_id, gp } => TrainedModel::SingleSourceGp {
                source_id: source_id.clone(),
                model: gp.to_gp()?,
            },
            ModelArtifact::FusedLvgp {
                ref_id,
                gp,
                levels,
                coords,
                anchor_level,
                s_train,
            } => {
                let (x, y, params) = gp.train_data()?;
                let latent = LatentMap {
                    levels: levels.clone(),
                    coords: coords.clone(),
                    anchor_level: anchor_level.clone(),
                };
                if levels.len() != coords.len() || !latent.satisfies_constraints() {
                    return Err(Error::Config("latent map violates its constraints".into()));
                }
                let model = LvgpModel::from_parts(
                    &x,
                    s_train,
                    &y,
                    gp.standardizers.input.clone(),
                    gp.standardizers.output,
                    params,
                    latent,
                    gp.nugget,
                    gp.seed,
                    gp.optimizer_trace_summary.clone(),
                )?;
                gp.check(model.mu(), model.sigma2(), model.nugget())?;
                TrainedModel::FusedLvgp {
                    ref_id: ref_id.clone(),
                    model,
                }
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Calibrated map artifact. `A` is stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapArtifact {
    pub source_id: String,
    pub ref_id: String,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub loss: f64,
    pub config_echo: ImcConfig,
    pub seed: u64,
    pub source_standardizer: Standardizer,
}

impl MapArtifact {
    pub fn new(map: &LinearMap, config: &ImcConfig) -> Self {
        MapArtifact {
            source_id: map.source_id.clone(),
            ref_id: map.ref_id.clone(),
            a: rows(&map.a),
            b: map.b.iter().copied().collect(),
            loss: map.loss,
            config_echo: config.clone(),
            seed: config.seed,
            source_standardizer: map.source_standardizer.clone(),
        }
    }

    pub fn to_map(&self) -> Result<LinearMap> {
        let d_s = self.a.first().map_or(0, |r| r.len());
        let a = matrix(&self.a, d_s)?;
        if a.nrows() != self.b.len() || self.source_standardizer.dim() != d_s {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: self.b.len(),
            });
        }
        Ok(LinearMap {
            source_id: self.source_id.clone(),
            ref_id: self.ref_id.clone(),
            a,
            b: DVector::from_vec(self.b.clone()),
            loss: self.loss,
            source_standardizer: self.source_standardizer.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit_gp, GpConfig};
    use crate::lvgp::{fit_lvgp, LvgpConfig};

    fn data() -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
        let x = DMatrix::from_fn(12, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0 + 0.01 * i as f64);
        let y = DVector::from_fn(12, |i, _| (3.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 1)]);
        let s = (0..12).map(|i| if i % 3 == 0 { "B" } else { "A" }.to_string()).collect();
        (x, y, s)
    }

    #[test]
    fn gp_round_trip_is_bit_exact() {
        let (x, y, _) = data();
        let gp = fit_gp(&x, &y, &GpConfig::default()).unwrap();
        let art = ModelArtifact::from_model(&TrainedModel::SingleSourceGp {
            source_id: "A".into(),
            model: gp.clone(),
        });
        let text = serde_json::to_string(&art).unwrap();
        let back: ModelArtifact = serde_json::from_str(&text).unwrap();
        assert_eq!(back, art);
        let model = back.to_model().unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[0.25, 0.5, 0.9, 0.1]);
        match model {
            TrainedModel::SingleSourceGp { model, .. } => {
                let (a, b) = (gp.predict(&q).unwrap(), model.predict(&q).unwrap());
                assert_eq!(a, b);
                assert_eq!(model.params, gp.params);
            }
            _ => panic!("wrong kind"),
        }
        assert!(text.contains("\"kind\":\"single_source_gp\""));
    }

    #[test]
    fn lvgp_round_trip_is_bit_exact() {
        let (x, y, s) = data();
        let cfg = LvgpConfig {
            anchor_level: Some("A".into()),
            ..Default::default()
        };
        let lv = fit_lvgp(&x, &s, &y, &cfg).unwrap();
        let art = ModelArtifact::from_model(&TrainedModel::FusedLvgp {
            ref_id: "A".into(),
            model: lv.clone(),
        });
        let back: ModelArtifact = serde_json::from_str(&serde_json::to_string_pretty(&art).unwrap()).unwrap();
        assert_eq!(back, art);
        let TrainedModel::FusedLvgp { model, .. } = back.to_model().unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(model.latent, lv.latent);
        let q = DMatrix::from_row_slice(1, 2, &[0.3, 0.3]);
        let labels = vec!["B".to_string()];
        assert_eq!(model.predict(&q, &labels).unwrap(), lv.predict(&q, &labels).unwrap());
    }

    #[test]
    fn tampered_artifact_is_rejected() {
        let (x, y, _) = data();
        let gp = fit_gp(&x, &y, &GpConfig::default()).unwrap();
        let mut art = GpArtifact::from_gp(&gp);
        art.mu += 1e-3;
        assert!(art.to_gp().is_err());
    }

    #[test]
    fn map_round_trip() {
        let map = LinearMap {
            source_id: "HCB".into(),
            ref_id: "RB".into(),
            a: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.89, 0.0]),
            b: DVector::from_vec(vec![0.55, 0.67]),
            loss: 0.1 + 0.2,
            source_standardizer: Standardizer::identity(2),
        };
        let art = MapArtifact::new(&map, &ImcConfig::default());
        let text = serde_json::to_string(&art).unwrap();
        assert!(text.contains("\"A\":[[2.0,0.0],[0.89,0.0]]"));
        let back: MapArtifact = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_map().unwrap(), map);
    }
}
