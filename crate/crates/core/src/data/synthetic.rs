//! Synthetic witness bags: mostly N(0, σ²) noise instances, plus a few
//! "witness" instances per bag whose mean is shifted along the basis direction
//! of the bag's class.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bag::{bag_write, BagRecord};
use super::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub bag_min: usize,
    pub bag_max: usize,
    pub witness_min: usize,
    pub witness_max: usize,
    /// Mean offset of witness instances along their class direction. Zero
    /// gives a no-signal control task.
    pub witness_shift: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    /// Two-class separable task: d=32, M in [30, 60], 3 witnesses shifted by 4.
    pub fn separable(seed: u64) -> Self {
        Self {
            num_classes: 2,
            feature_dim: 32,
            bag_min: 30,
            bag_max: 60,
            witness_min: 3,
            witness_max: 3,
            witness_shift: 4.0,
            noise_std: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.feature_dim < self.num_classes {
            return bad(format!(
                "feature_dim {} must be >= num_classes {} (one direction per class)",
                self.feature_dim, self.num_classes
            ));
        }
        if self.bag_min == 0 || self.bag_min > self.bag_max {
            return bad(format!("invalid bag size range [{}, {}]", self.bag_min, self.bag_max));
        }
        if self.witness_min == 0 || self.witness_min > self.witness_max {
            return bad(format!(
                "invalid witness count range [{}, {}]",
                self.witness_min, self.witness_max
            ));
        }
        if self.witness_max > self.bag_min {
            return bad(format!(
                "witness count {} exceeds minimum bag size {}",
                self.witness_max, self.bag_min
            ));
        }
        if !(self.witness_shift >= 0.0 && self.witness_shift.is_finite()) {
            return bad(format!("witness_shift must be finite and >= 0, got {}", self.witness_shift));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// A generated bag with the row indices of its witness instances.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBag {
    pub record: BagRecord,
    pub witnesses: Vec<usize>,
}

/// Row-major positions on a `⌈√M⌉`-wide square grid.
pub fn grid_coords(m: usize) -> Vec<(i32, i32)> {
    let side = (m as f64).sqrt().ceil().max(1.0) as usize;
    (0..m).map(|j| ((j % side) as i32, (j / side) as i32)).collect()
}

/// Generates `n_per_class · C` bags in memory; bag `i` has class `i mod C`.
pub fn generate_bags(spec: &SyntheticTaskSpec, n_per_class: usize) -> Result<Vec<SyntheticBag>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let d = spec.feature_dim;
    let total = n_per_class * spec.num_classes;
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % spec.num_classes;
        let m = rng.random_range(spec.bag_min..=spec.bag_max);
        let w = rng.random_range(spec.witness_min..=spec.witness_max);
        let mut features: Vec<f32> = (0..m * d).map(|_| noise.sample(&mut rng) as f32).collect();
        let mut witnesses = sample(&mut rng, m, w).into_vec();
        witnesses.sort_unstable();
        for &row in &witnesses {
            let v = &mut features[row * d + label];
            *v = (*v as f64 + spec.witness_shift) as f32;
        }
        let record = BagRecord::new(
            Tensor::matrix(m, d, features)?,
            grid_coords(m),
            label,
            format!("bag_{i:05}"),
        )?;
        out.push(SyntheticBag { record, witnesses });
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const WITNESS_FILE: &str = "witnesses.csv";

#[derive(Debug, Serialize, Deserialize)]
struct WitnessRow {
    id: String,
    label: usize,
    /// Space-separated row indices.
    witnesses: String,
}

/// Writes the bags of [`generate_bags`] to `out_dir` as `bags/<id>.sqbg`, plus
/// `manifest.csv` (every entry tagged `all`) and `witnesses.csv`.
pub fn generate_synthetic(
    spec: &SyntheticTaskSpec,
    n_per_class: usize,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let bags = generate_bags(spec, n_per_class)?;
    let bag_dir = out_dir.join("bags");
    std::fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
    let mut entries = Vec::with_capacity(bags.len());
    let witness_path = out_dir.join(WITNESS_FILE);
    let mut ww = csv::Writer::from_path(&witness_path)?;
    for b in &bags {
        let rel = Path::new("bags").join(format!("{}.sqbg", b.record.id));
        bag_write(&b.record, out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label: b.record.label,
            split: "all".into(),
        });
        ww.serialize(WitnessRow {
            id: b.record.id.clone(),
            label: b.record.label,
            witnesses: b
                .witnesses
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        })?;
    }
    ww.flush().map_err(|e| Error::io(&witness_path, e))?;
    let manifest = DatasetManifest {
        entries,
        num_classes: spec.num_classes,
        feature_dim: spec.feature_dim,
        root: out_dir.to_path_buf(),
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads `witnesses.csv` into `(id, witness rows)` pairs.
pub fn read_witnesses(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<usize>)>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: WitnessRow = row?;
        let idx = row
            .witnesses
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Malformed(format!("bad witness index `{t}`")))
            })
            .collect::<Result<Vec<usize>>>()?;
        out.push((row.id, idx));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        assert_eq!(grid_coords(1), vec![(0, 0)]);
        assert_eq!(grid_coords(5), vec![(0, 0), (1, 0), (2, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn config_errors() {
        let mut s = SyntheticTaskSpec::separable(0);
        s.witness_max = 31;
        assert!(matches!(generate_bags(&s, 1), Err(Error::Config(_))));
        let mut s = SyntheticTaskSpec::separable(0);
        s.witness_min = 0;
        assert!(s.validate().is_err());
        let mut s = SyntheticTaskSpec::separable(0);
        s.witness_shift = -1.0;
        assert!(s.validate().is_err());
        let mut s = SyntheticTaskSpec::separable(0);
        s.feature_dim = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn shape_and_labels() {
        let s = SyntheticTaskSpec::separable(1);
        let bags = generate_bags(&s, 5).unwrap();
        assert_eq!(bags.len(), 10);
        for (i, b) in bags.iter().enumerate() {
            assert_eq!(b.record.label, i % 2);
            assert!((30..=60).contains(&b.record.len()));
            assert_eq!(b.witnesses.len(), 3);
            assert_eq!(b.record.coords.len(), b.record.len());
        }
    }

    #[test]
    fn witness_mean_matches_shift() {
        // Sample-statistics oracle: witness coordinate ~ N(4, 1).
        let s = SyntheticTaskSpec::separable(7);
        let bags = generate_bags(&s, 100).unwrap();
        let vals: Vec<f64> = bags
            .iter()
            .filter(|b| b.record.label == 1)
            .flat_map(|b| b.witnesses.iter().map(move |&r| b.record.features.at(r, 1) as f64))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn files_deterministic() {
        let s = SyntheticTaskSpec::separable(3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&s, 3, a.path()).unwrap();
        generate_synthetic(&s, 3, b.path()).unwrap();
        for name in ["manifest.csv", "manifest.json", "witnesses.csv", "bags/bag_00004.sqbg"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let w = read_witnesses(a.path().join(WITNESS_FILE)).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[0].1.len(), 3);
    }
}
