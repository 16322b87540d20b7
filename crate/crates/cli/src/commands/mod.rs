pub mod buffer;
pub mod distill;
pub mod eval;
pub mod gradcheck;
pub mod report;

use distillery_core::data::LabeledDataset;
use distillery_core::models::ModelSpec;

use crate::config::RunConfig;
use crate::error::Result;

/// Dataset + model spec shared by the pipeline commands, plus the config
/// with every dataset-derived field filled in, ready to be echoed next to
/// the command's outputs.
pub(crate) struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub spec: ModelSpec,
    pub echo: RunConfig,
}

pub(crate) fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (train, test, note) = cfg.load_dataset()?;
    let mut echo = cfg.clone();
    if let Some(note) = note {
        eprintln!("note: {note}");
        echo.data.csv_autoscaled = Some(true);
    }
    let spec = cfg.spec_for(&train)?;
    echo.model.input_shape = Some(spec.input_shape.clone());
    echo.model.classes = Some(spec.num_classes);
    Ok(Prepared { train, test, spec, echo })
}
