use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "NN2I")]
    Nn2i,
    #[serde(rename = "NN2N")]
    Nn2n,
    #[serde(rename = "N2I")]
    N2i,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Identity,
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InferenceInput {
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "z")]
    Z,
}

impl fmt::Display for InferenceInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceInput::Y => "y",
            InferenceInput::Z => "z",
        })
    }
}

/// Which method to train and how to run inference with it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    #[serde(default = "default_inference")]
    pub inference_input: InferenceInput,
    #[serde(default = "default_splits")]
    pub n2i_splits: usize,
    /// NN2N[z] as `2 (f - Id)(B# z)` instead of `2 f(B# z) - B# z`.
    #[serde(default)]
    pub literal_nn2n_extrapolation: bool,
}

fn default_weighting() -> Weighting {
    Weighting::Identity
}

fn default_inference() -> InferenceInput {
    InferenceInput::Y
}

fn default_splits() -> usize {
    4
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            weighting: Weighting::Identity,
            inference_input: InferenceInput::Y,
            n2i_splits: 4,
            literal_nn2n_extrapolation: false,
        }
    }

    pub fn nn2i() -> Self {
        Self::new(Method::Nn2i)
    }

    pub fn nn2i_sobolev() -> Self {
        Self {
            weighting: Weighting::Gradient,
            ..Self::nn2i()
        }
    }

    pub fn nn2n() -> Self {
        Self::new(Method::Nn2n)
    }

    pub fn n2i() -> Self {
        Self::new(Method::N2i)
    }

    pub fn with_inference(mut self, input: InferenceInput) -> Self {
        self.inference_input = input;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.weighting == Weighting::Gradient && self.method != Method::Nn2i {
            return Err(Error::Config(
                "gradient weighting is only defined for NN2I".into(),
            ));
        }
        if self.method == Method::N2i && self.n2i_splits < 2 {
            return Err(Error::Config(format!(
                "N2I needs at least 2 angle splits, got {}",
                self.n2i_splits
            )));
        }
        Ok(())
    }

    /// Inference inputs that make sense for this method.
    pub fn inference_variants(&self) -> Vec<InferenceInput> {
        match self.method {
            Method::N2i => vec![InferenceInput::Y],
            _ => vec![InferenceInput::Y, InferenceInput::Z],
        }
    }

    /// Training-method label: `NN2I`, `NN2Is`, `NN2N` or `N2I`.
    pub fn base_label(&self) -> &'static str {
        match (self.method, self.weighting) {
            (Method::Nn2i, Weighting::Gradient) => "NN2Is",
            (Method::Nn2i, Weighting::Identity) => "NN2I",
            (Method::Nn2n, _) => "NN2N",
            (Method::N2i, _) => "N2I",
        }
    }

    /// Variant label such as `NN2Is[y]`; N2I has no input suffix.
    pub fn label(&self) -> String {
        match self.method {
            Method::N2i => "N2I".to_string(),
            _ => format!("{}[{}]", self.base_label(), self.inference_input),
        }
    }

    /// The seven comparison variants as (training spec, inference input).
    pub fn all_variants() -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for base in [Self::nn2i_sobolev(), Self::nn2i(), Self::nn2n()] {
            for input in [InferenceInput::Y, InferenceInput::Z] {
                out.push(base.clone().with_inference(input));
            }
        }
        out.push(Self::n2i());
        out
    }

    /// One spec per distinct training run needed for [`Self::all_variants`].
    pub fn all_training_methods() -> Vec<MethodSpec> {
        vec![
            Self::nn2i_sobolev(),
            Self::nn2i(),
            Self::nn2n(),
            Self::n2i(),
        ]
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = Error;

    /// Parses labels such as `NN2I`, `NN2Is[z]`, `NN2N[y]` or `N2I`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (base, inference) = match s.strip_suffix(']').and_then(|r| r.split_once('[')) {
            Some((base, "y")) => (base, Some(InferenceInput::Y)),
            Some((base, "z")) => (base, Some(InferenceInput::Z)),
            Some(_) => return Err(Error::Config(format!("unknown inference input in {s:?}"))),
            None => (s, None),
        };
        let spec = match base {
            "NN2I" => MethodSpec::nn2i(),
            "NN2Is" => MethodSpec::nn2i_sobolev(),
            "NN2N" => MethodSpec::nn2n(),
            "N2I" => MethodSpec::n2i(),
            _ => return Err(Error::Config(format!("unknown method {s:?}"))),
        };
        let spec = match inference {
            Some(_) if spec.method == Method::N2i => {
                return Err(Error::Config(format!(
                    "N2I takes no inference suffix, got {s:?}"
                )))
            }
            Some(i) => spec.with_inference(i),
            None => spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_back() {
        for spec in MethodSpec::all_variants() {
            assert_eq!(spec.label().parse::<MethodSpec>().unwrap(), spec);
        }
        assert_eq!(
            "NN2Is".parse::<MethodSpec>().unwrap(),
            MethodSpec::nn2i_sobolev()
        );
        assert!("N2I[z]".parse::<MethodSpec>().is_err());
        assert!("N3I".parse::<MethodSpec>().is_err());
    }

    #[test]
    fn labels() {
        let labels: Vec<String> = MethodSpec::all_variants()
            .iter()
            .map(|m| m.label())
            .collect();
        assert_eq!(
            labels,
            ["NN2Is[y]", "NN2Is[z]", "NN2I[y]", "NN2I[z]", "NN2N[y]", "NN2N[z]", "N2I"]
        );
    }

    #[test]
    fn gradient_weighting_only_for_nn2i() {
        let bad = MethodSpec {
            weighting: Weighting::Gradient,
            ..MethodSpec::nn2n()
        };
        assert!(bad.validate().is_err());
        assert!(MethodSpec::nn2i_sobolev().validate().is_ok());
    }

    #[test]
    fn toml_form() {
        let spec: MethodSpec =
            toml::from_str("method = \"NN2I\"\nweighting = \"gradient\"\ninference_input = \"z\"")
                .unwrap();
        assert_eq!(spec.label(), "NN2Is[z]");
        assert!(toml::from_str::<MethodSpec>("method = \"NN2I\"\nbogus = 1").is_err());
    }
}
