use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{image_to_tensor, read_image, Label, PatchSample};
use crate::error::{bail, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
}

/// Labeled patch list. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub samples: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        for r in &m.samples {
            if r.center.is_some() && r.label != Label::Kernel {
                bail!(Format, "{}: non-kernel record carries a center", r.path);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Reads a manifest and checks that every path resolves.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = Self::from_json(&fs::read_to_string(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &m.samples {
            if !resolve(base, &r.path).is_file() {
                bail!(Format, "{}: sample {} does not exist", path.display(), r.path);
            }
        }
        Ok(m)
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads the patch images a manifest at `manifest_path` refers to. Centers
/// must lie inside their image.
pub fn load_samples(manifest: &Manifest, manifest_path: impl AsRef<Path>) -> Result<Vec<PatchSample>> {
    let base = manifest_path.as_ref().parent().unwrap_or(Path::new(".")).to_path_buf();
    manifest
        .samples
        .iter()
        .map(|r| {
            let img = read_image(resolve(&base, &r.path))?;
            if let Some([x, y]) = r.center {
                if !(0.0..=img.width() as f64).contains(&x) || !(0.0..=img.height() as f64).contains(&y) {
                    bail!(Format, "{}: center ({x}, {y}) outside the image", r.path);
                }
            }
            let center = r.center.map(|[x, y]| [x as f32, y as f32]);
            PatchSample::new(image_to_tensor(&img), r.label, center)
                .map_err(|e| Error::Format(format!("{}: {e}", r.path)))
        })
        .collect()
}

/// Number of test items for a split of `n` at `fraction` (nearest integer).
pub fn test_size(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Seeded random permutation split into (train, test) index lists, each
/// kept in ascending order.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        bail!(InvalidArgument, "cannot split an empty dataset");
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        bail!(InvalidArgument, "test fraction must be in (0, 1), got {test_fraction}");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = test_size(n, test_fraction);
    let mut test = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split_dataset(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    let (train, test) = split_indices(manifest.samples.len(), test_fraction, seed)?;
    let pick = |idx: &[usize]| Manifest {
        seed: manifest.seed,
        samples: idx.iter().map(|&i| manifest.samples[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&test)))
}
