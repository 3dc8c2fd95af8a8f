//! ETL: generator and transformers over a stored video into a collection.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use patchdb_core::etl::{validate_pipeline, GeneratorSpec, Stage, TransformerSpec};
use patchdb_core::{Patch, PatchSchema};

use crate::collection::{materialize, Collection};
use crate::error::{Error, Result};
use crate::storage::{IoCounters, VideoStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtlSpec {
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub transformers: Vec<TransformerSpec>,
}

impl EtlSpec {
    pub fn new(generator: GeneratorSpec) -> Self {
        Self { generator, transformers: Vec::new() }
    }

    pub fn then(mut self, t: TransformerSpec) -> Self {
        self.transformers.push(t);
        self
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut s = vec![Stage::Generator(self.generator.clone())];
        s.extend(self.transformers.iter().cloned().map(Stage::Transformer));
        s
    }

    /// Static output schema, or every violation found.
    pub fn output_schema(&self) -> Result<PatchSchema> {
        validate_pipeline(&self.stages()).map_err(Error::Validation)
    }

    /// Runs the stages over one frame's worth of patches.
    pub fn apply(&self, frame: &patchdb_core::Frame) -> Result<Vec<Patch>> {
        let mut ps = self.generator.generate(frame)?;
        for t in &self.transformers {
            ps = ps.iter().map(|p| t.apply(p)).collect::<patchdb_core::Result<_>>()?;
        }
        Ok(ps)
    }
}

/// Scans `store` (optionally a frame range), runs `spec` and materializes
/// the result at `out`.
pub fn run_etl(
    store: &VideoStore,
    range: Option<(u64, u64)>,
    spec: &EtlSpec,
    out: impl AsRef<Path>,
    name: &str,
    counters: Arc<IoCounters>,
) -> Result<Collection> {
    let schema = spec.output_schema()?;
    let scan = store.scan(range, counters)?;
    let patches = scan.flat_map(|f| match f.and_then(|f| spec.apply(&f)) {
        Ok(ps) => ps.into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => vec![Err(e)],
    });
    materialize(patches, out, name, schema)
}
