use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::{GeneratorSpec, TransformerSpec};
use crate::schema::PatchSchema;

/// Requirements of a downstream operator, for pipeline checking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCheck {
    pub name: String,
    pub requires: PatchSchema,
    /// Label literals the stage compares against.
    pub labels: Vec<String>,
    /// Schema the stage emits; `None` passes its input schema through.
    pub output: Option<PatchSchema>,
}

impl StageCheck {
    pub fn new(name: &str, requires: PatchSchema) -> Self {
        Self { name: name.into(), requires, labels: Vec::new(), output: None }
    }

    pub fn with_labels<I: IntoIterator<Item = S>, S: Into<String>>(mut self, labels: I) -> Self {
        self.labels.extend(labels.into_iter().map(Into::into));
        self
    }

    pub fn with_output(mut self, output: PatchSchema) -> Self {
        self.output = Some(output);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Generator(GeneratorSpec),
    Transformer(TransformerSpec),
    Check(StageCheck),
}

impl Stage {
    pub fn name(&self) -> &str {
        match self {
            Stage::Generator(g) => g.name(),
            Stage::Transformer(t) => t.name(),
            Stage::Check(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub stage: usize,
    pub stage_name: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} ({}): {}", self.stage, self.stage_name, self.message)
    }
}

/// Problems with feeding patches of schema `input` into a stage needing
/// `req` and comparing against `labels`.
pub fn check_requirements(input: &PatchSchema, req: &PatchSchema, labels: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    if !req.data_shape.compatible(&input.data_shape) {
        out.push(format!(
            "shape mismatch: input is {} but the stage requires {}",
            input.data_shape, req.data_shape
        ));
    }
    for (key, tag) in &req.required_keys {
        match input.required_keys.get(key) {
            None => out.push(format!("required key `{key}` is not produced upstream")),
            Some(t) if t != tag => {
                out.push(format!("key `{key}` has tag {t} upstream, the stage expects {tag}"))
            }
            Some(_) => {}
        }
    }
    for l in labels {
        if !input.label_domain.admits(l) {
            out.push(format!("label \"{l}\" is not producible by the pipeline"));
        }
    }
    out
}

/// Checks each stage against the schema its predecessor emits.
///
/// Every violation is collected; checking continues past a bad stage using
/// that stage's declared output.
pub fn validate_pipeline(stages: &[Stage]) -> Result<PatchSchema, Vec<Violation>> {
    let mut violations = Vec::new();
    let mut push = |i: usize, s: &Stage, message: String| {
        violations.push(Violation { stage: i, stage_name: s.name().into(), message })
    };

    let mut current = match stages.first() {
        Some(Stage::Generator(g)) => {
            if let Err(e) = g.validate() {
                push(0, &stages[0], format!("{e}"));
            }
            g.output_schema()
        }
        Some(s) => {
            push(0, s, "pipeline must begin with a generator".into());
            PatchSchema::any()
        }
        None => {
            return Err(alloc::vec![Violation {
                stage: 0,
                stage_name: String::new(),
                message: "pipeline is empty".into(),
            }])
        }
    };

    for (i, s) in stages.iter().enumerate().skip(1) {
        match s {
            Stage::Generator(g) => {
                push(i, s, "a generator may only start a pipeline".into());
                current = g.output_schema();
            }
            Stage::Transformer(t) => {
                if let Err(e) = t.validate() {
                    push(i, s, format!("{e}"));
                }
                for m in check_requirements(&current, &t.input_requirements(), &[]) {
                    push(i, s, m);
                }
                current = t.output_schema(&current);
            }
            Stage::Check(c) => {
                for m in check_requirements(&current, &c.requires, &c.labels) {
                    push(i, s, m);
                }
                if let Some(o) = &c.output {
                    current = o.clone();
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(current)
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etl::{BlobParams, PaletteEntry};
    use crate::patch::{Tag, KEY_LABEL};
    use crate::schema::DataShape;
    use alloc::vec;

    fn detector() -> Stage {
        Stage::Generator(GeneratorSpec::BlobDetector(BlobParams::new(
            vec![PaletteEntry::new([255, 0, 0], "vehicle"), PaletteEntry::new([0, 255, 0], "pedestrian")],
            10,
        )))
    }

    fn label_filter(l: &str) -> Stage {
        Stage::Check(StageCheck::new("select", PatchSchema::any().with_key(KEY_LABEL, Tag::Str)).with_labels([l]))
    }

    #[test]
    fn producible_label_ok() {
        assert!(validate_pipeline(&[detector(), label_filter("vehicle")]).is_ok());
    }

    #[test]
    fn unproducible_label_named() {
        let v = validate_pipeline(&[detector(), label_filter("bicycle")]).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].stage, 1);
        assert!(v[0].message.contains("bicycle"));
    }

    #[test]
    fn histogram_dim_mismatch() {
        let stages = [
            Stage::Generator(GeneratorSpec::WholeImage),
            Stage::Transformer(TransformerSpec::ColorHistogram { bins: 8 }),
            Stage::Check(StageCheck::new("sim_join", PatchSchema::new(DataShape::features(32)))),
        ];
        let v = validate_pipeline(&stages).unwrap_err();
        assert!(v[0].message.contains("shape mismatch"), "{}", v[0]);
    }

    #[test]
    fn all_violations_reported() {
        let stages = [
            Stage::Transformer(TransformerSpec::DepthProxy),
            label_filter("x"),
            Stage::Transformer(TransformerSpec::ColorHistogram { bins: 1 }),
        ];
        let v = validate_pipeline(&stages).unwrap_err();
        assert!(v.len() >= 3, "{v:?}");
    }
}
