//! Desk-scale stand-ins for every dataset role.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{synth_dataset, SyntheticSpec};
use crate::error::Result;
use crate::pipelines::plan::DatasetRole;
use crate::pipelines::run::DataSource;

/// Corpus sizes for [`synthetic_sources`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSizes {
    pub side: usize,
    pub unlabeled: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for SyntheticSizes {
    fn default() -> Self {
        SyntheticSizes {
            side: 32,
            unlabeled: 200,
            train: 200,
            test: 100,
        }
    }
}

/// Writes one corpus per role under `root/<role>/` and returns their
/// manifests: textures for the generic role, phantoms for the rest. The
/// second downstream task is noisier than the first.
pub fn synthetic_sources(root: &Path, sizes: SyntheticSizes, seed: u64) -> Result<BTreeMap<DatasetRole, DataSource>> {
    let mut out = BTreeMap::new();
    for (k, role) in DatasetRole::ALL.into_iter().enumerate() {
        let s = seed.wrapping_mul(31).wrapping_add(k as u64 + 1);
        let spec = match role {
            DatasetRole::Generic => SyntheticSpec::texture(sizes.side, sizes.unlabeled, 0, s),
            DatasetRole::TargetAdjacent => SyntheticSpec::ct(sizes.side, sizes.unlabeled, 0, s),
            DatasetRole::Downstream => SyntheticSpec::ct(sizes.side, sizes.train, sizes.test, s),
            DatasetRole::Downstream2 => SyntheticSpec {
                noise_std: 0.1,
                ..SyntheticSpec::ct(sizes.side, sizes.train, sizes.test, s)
            },
        };
        let dir = root.join(role.as_str());
        synth_dataset(&spec, &dir)?;
        let eval = (spec.n_test > 0).then(|| dir.join("test.csv"));
        out.insert(
            role,
            DataSource {
                train: dir.join("train.csv"),
                eval,
            },
        );
    }
    Ok(out)
}
