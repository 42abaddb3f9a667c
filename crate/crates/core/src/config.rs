//! JSON model documents.
//!
//! ```json
//! {
//!   "states": 2,
//!   "psi": [1.0, 1.0],
//!   "transition": [[0.5, 0.5], [0.3, 0.7]],
//!   "observation": {"type": "finite", "gamma": [[0.8, 0.2], [0.2, 0.8]]},
//!   "nu": [0.9, 0.1],
//!   "beta": [0.5, 0.5]
//! }
//! ```
//!
//! `psi` and `theta` default to all-ones. Rows and priors that integrate
//! to within `1e-6` of one are accepted and renormalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Density, FiniteModel, ModelSetup, ObservationModel, StateSpace, TransitionKernel};

pub const INPUT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub observation: ObservationDocument,
    pub nu: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObservationDocument {
    Finite {
        gamma: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
    },
    Gaussian {
        means: Vec<f64>,
        sigma: f64,
    },
}

fn at(path: impl Into<String>) -> impl FnOnce(Error) -> Error {
    let path = path.into();
    move |e| Error::Config {
        path,
        message: e.to_string(),
    }
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a model document.
pub fn parse_config(text: &str) -> Result<ModelSetup> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(path, e.into_inner().to_string())
    })?;
    doc.into_setup()
}

impl ModelDocument {
    pub fn into_setup(self) -> Result<ModelSetup> {
        let d = self.states;
        if d == 0 {
            return Err(config_error("states", "must be at least 1"));
        }
        let psi = self.psi.unwrap_or_else(|| vec![1.0; d]);
        if psi.len() != d {
            return Err(config_error("psi", format!("expected {d} entries, found {}", psi.len())));
        }
        let space = StateSpace::new(psi).map_err(at("psi"))?;

        if self.transition.len() != d {
            return Err(config_error(
                "transition",
                format!("expected {d} rows, found {}", self.transition.len()),
            ));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != d {
                return Err(config_error(
                    format!("transition[{i}]"),
                    format!("expected {d} entries, found {}", row.len()),
                ));
            }
            let sum = space.integrate(row);
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(config_error(format!("transition[{i}]"), "entries must be nonnegative"));
            }
            if (sum - 1.0).abs() > INPUT_TOLERANCE {
                return Err(config_error(
                    format!("transition[{i}]"),
                    format!("row integrates to {sum} against psi"),
                ));
            }
        }
        let lambda = Matrix::from_rows(&self.transition).expect("rows checked");
        let kernel =
            TransitionKernel::with_tolerance(lambda, &space, INPUT_TOLERANCE).map_err(at("transition"))?;

        let observation = match self.observation {
            ObservationDocument::Finite { gamma, theta } => {
                if gamma.len() != d {
                    return Err(config_error(
                        "observation.gamma",
                        format!("expected {d} rows, found {}", gamma.len()),
                    ));
                }
                let gamma = Matrix::from_rows(&gamma)
                    .ok_or_else(|| config_error("observation.gamma", "rows have different lengths"))?;
                ObservationModel::finite_with_tolerance(gamma, theta, INPUT_TOLERANCE)
                    .map_err(at("observation"))?
            }
            ObservationDocument::Gaussian { means, sigma } => {
                if means.len() != d {
                    return Err(config_error(
                        "observation.means",
                        format!("expected {d} entries, found {}", means.len()),
                    ));
                }
                ObservationModel::gaussian(means, sigma).map_err(at("observation"))?
            }
        };
        let model = FiniteModel::new(space, kernel, observation).map_err(at("observation"))?;
        let prior = |values: Vec<f64>, key: &str| -> Result<Density> {
            if values.len() != d {
                return Err(config_error(key, format!("expected {d} entries, found {}", values.len())));
            }
            Density::normalized(values, &model.space, INPUT_TOLERANCE).map_err(at(key))
        };
        let nu = prior(self.nu, "nu")?;
        let beta = prior(self.beta, "beta")?;
        ModelSetup::new(model, nu, beta).map_err(at("beta"))
    }

    pub fn from_setup(setup: &ModelSetup) -> Self {
        let model = &setup.model;
        let observation = match &model.observation {
            ObservationModel::Finite { gamma, theta } => ObservationDocument::Finite {
                gamma: gamma.to_rows(),
                theta: Some(theta.clone()),
            },
            ObservationModel::Gaussian { means, sigma } => ObservationDocument::Gaussian {
                means: means.clone(),
                sigma: *sigma,
            },
        };
        Self {
            states: model.dim(),
            psi: Some(model.space.psi().to_vec()),
            transition: model.kernel.matrix().to_rows(),
            observation,
            nu: setup.nu.values().to_vec(),
            beta: setup.beta.values().to_vec(),
        }
    }
}

/// Serializes a model with shortest round-trip float formatting.
pub fn to_json(setup: &ModelSetup) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_setup(setup)).expect("plain data serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{invariant_density, mixing_coefficients};

    const KAIJSER: &str = r#"{
        "states": 4,
        "transition": [[0.5,0.5,0,0],[0,0.5,0.5,0],[0,0,0.5,0.5],[0.5,0,0,0.5]],
        "observation": {"type": "finite", "gamma": [[0,1],[1,0],[0,1],[1,0]]},
        "nu": [0.5,0.2,0.2,0.1],
        "beta": [0.25,0.25,0.25,0.25]
    }"#;

    fn path_of(err: Error) -> String {
        match err {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn parses_kaijser() {
        let setup = parse_config(KAIJSER).unwrap();
        assert_eq!(setup.model.dim(), 4);
        assert_eq!(setup.model.space.psi(), &[1.0; 4]);
        assert_eq!(setup.model.kernel.get(3, 0), 0.5);
        for (a, b) in setup.nu.values().iter().zip([0.5, 0.2, 0.2, 0.1]) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn missing_key_is_named() {
        let text = KAIJSER.replace(",\n        \"beta\": [0.25,0.25,0.25,0.25]", "");
        assert!(text.len() < KAIJSER.len());
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
    }

    #[test]
    fn row_tolerance_boundary() {
        let ok = KAIJSER.replace("[0,0.5,0.5,0]", "[0,0.5,0.5000001,0]");
        let setup = parse_config(&ok).unwrap();
        assert!((setup.model.kernel.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let bad = KAIJSER.replace("[0,0.5,0.5,0]", "[0,0.5,0.51,0]");
        assert_eq!(path_of(parse_config(&bad).unwrap_err()), "transition[1]");
    }

    #[test]
    fn nested_type_errors_carry_paths() {
        let bad = KAIJSER.replace("[0.5,0.2,0.2,0.1]", r#"[0.5,"x",0.2,0.1]"#);
        assert_eq!(path_of(parse_config(&bad).unwrap_err()), "nu[1]");
        let bad = KAIJSER.replace(r#""type": "finite""#, r#""type": "poisson""#);
        assert!(path_of(parse_config(&bad).unwrap_err()).starts_with("observation"));
        let bad = KAIJSER.replace("[0.25,0.25,0.25,0.25]", "[0.5,0.5,0,0]");
        assert_eq!(path_of(parse_config(&bad).unwrap_err()), "beta");
        let bad = KAIJSER.replace("[0.25,0.25,0.25,0.25]", "[0.25,0.25,0.25]");
        assert_eq!(path_of(parse_config(&bad).unwrap_err()), "beta");
        assert!(parse_config("{").unwrap_err().is_input_error());
    }

    #[test]
    fn gaussian_document() {
        let text = r#"{"states": 2, "psi": [1, 1], "transition": [[0.9,0.1],[0.2,0.8]],
            "observation": {"type": "gaussian", "means": [-1, 1], "sigma": 0.5},
            "nu": [1, 0], "beta": [0.5, 0.5]}"#;
        let setup = parse_config(text).unwrap();
        assert!(matches!(setup.model.observation, ObservationModel::Gaussian { sigma, .. } if sigma == 0.5));
        let back = parse_config(&to_json(&setup)).unwrap();
        assert_eq!(back, setup);
    }

    #[test]
    fn round_trip_preserves_coefficients() {
        let text = r#"{"states": 3, "psi": [0.5, 1, 2],
            "transition": [[0.4,0.3,0.25],[1.0,0.5,0.0],[0.2,0.2,0.35]],
            "observation": {"type": "finite", "gamma": [[0.3,0.7],[0.6,0.4],[0.1,0.9]]},
            "nu": [0.2,0.3,0.3], "beta": [0.4,0.4,0.2]}"#;
        let setup = parse_config(text).unwrap();
        let back = parse_config(&to_json(&setup)).unwrap();
        assert_eq!(back, setup);
        let m1 = invariant_density(&setup.model.kernel, &setup.model.space).unwrap();
        let m2 = invariant_density(&back.model.kernel, &back.model.space).unwrap();
        let c1 = mixing_coefficients(&setup.model, &m1);
        let c2 = mixing_coefficients(&back.model, &m2);
        assert!((c1.lambda_diamond - c2.lambda_diamond).abs() <= 1e-15);
        assert!((c1.lambda_upper - c2.lambda_upper).abs() <= 1e-15);
    }
}
