//! Builds the learning task named in the configuration.

use oadfl_core::rng::{SeedStreams, Stream};
use oadfl_core::task::{LogisticSpec, LogisticTask, MlpTask, QuadraticSpec, QuadraticTask, Task};

use crate::config::{TaskKind, TaskSection};
use crate::error::{CliError, Result};
use crate::idx;

/// Task for `devices` devices, with data drawn from the seed's data stream.
/// For `mlp` the model size follows the image width, `hidden` and the label
/// count; `dim` is ignored.
pub fn build_task(section: &TaskSection, devices: usize, seed: u64) -> Result<Box<dyn Task>> {
    let mut rng = SeedStreams::new(seed).rng(Stream::Data, 0);
    let s = section;
    Ok(match s.kind {
        TaskKind::Quadratic => {
            let spec = QuadraticSpec {
                dim: s.dim,
                samples: s.samples,
                heterogeneity: s.heterogeneity,
                curvature: (s.curvature_min, s.curvature_max),
                noise_std: s.noise_std,
                groups: s.groups,
                batch: s.batch,
            };
            Box::new(QuadraticTask::generate(&spec, devices, &mut rng)?)
        }
        TaskKind::Logistic => {
            let spec = LogisticSpec {
                dim: s.dim,
                samples: s.samples,
                heterogeneity: s.heterogeneity,
                separation: s.separation,
                l2: s.l2,
                batch: s.batch,
            };
            Box::new(LogisticTask::generate(&spec, devices, &mut rng)?)
        }
        TaskKind::Mlp => {
            let (Some(images), Some(labels)) = (&s.images, &s.labels) else {
                return Err(CliError::Config(
                    "task kind `mlp` needs `images` and `labels` IDX files (e.g. the MNIST training set)".into(),
                ));
            };
            let data = idx::read_idx(images, labels)?;
            let classes = data.classes();
            let parts = idx::split_by_class(&data, devices, s.samples, s.heterogeneity, &mut rng);
            Box::new(MlpTask::new(parts, s.hidden, classes, s.l2, s.batch)?)
        }
    })
}
