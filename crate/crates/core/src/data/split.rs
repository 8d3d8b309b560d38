//! Stratified train/validation splits and k-fold partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

/// Indices of each class's members, shuffled per class with one seeded stream.
fn shuffled_classes(labels: &[usize], min_members: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (c, members) in by_class.iter_mut().enumerate() {
        if !members.is_empty() && members.len() < min_members {
            return Err(Error::Stratification(format!(
                "class {c} has {} members, need at least {min_members}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
    }
    Ok(by_class)
}

/// Assigns each sample to a split. Within every class, all but the last split
/// get `⌊f · n_c⌋` members and the last takes the remainder.
pub fn stratified_assign(labels: &[usize], fractions: &[f64], seed: u64) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Stratification(format!("invalid fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Stratification(format!("fractions sum to {total}, not 1")));
    }
    let by_class = shuffled_classes(labels, 2, seed)?;
    let mut assign = vec![0; labels.len()];
    for members in &by_class {
        let n = members.len();
        let mut start = 0;
        for (s, f) in fractions.iter().enumerate() {
            let take = if s + 1 == fractions.len() {
                n - start
            } else {
                ((f * n as f64 + 1e-9).floor() as usize).min(n - start)
            };
            for &i in &members[start..start + take] {
                assign[i] = s;
            }
            start += take;
        }
    }
    Ok(assign)
}

/// Assigns each sample to one of `k` folds, dealing each class round-robin
/// and continuing where the previous class stopped.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Stratification(format!("need k >= 2 folds, got {k}")));
    }
    let by_class = shuffled_classes(labels, k, seed)?;
    let mut assign = vec![0; labels.len()];
    let mut next = 0;
    for members in &by_class {
        for &i in members {
            assign[i] = next % k;
            next += 1;
        }
    }
    Ok(assign)
}

/// Retags a manifest's entries with `names[split]` per [`stratified_assign`].
pub fn stratified_split(
    manifest: &DatasetManifest,
    splits: &[(&str, f64)],
    seed: u64,
) -> Result<DatasetManifest> {
    let fractions: Vec<f64> = splits.iter().map(|s| s.1).collect();
    let assign = stratified_assign(&manifest.labels(), &fractions, seed)?;
    let mut out = manifest.clone();
    for (e, &s) in out.entries.iter_mut().zip(&assign) {
        e.split = splits[s].0.to_owned();
    }
    Ok(out)
}

/// One manifest per fold: that fold tagged `val`, every other entry `train`.
pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<DatasetManifest>> {
    let assign = stratified_folds(&manifest.labels(), k, seed)?;
    Ok((0..k)
        .map(|fold| {
            let mut m = manifest.clone();
            for (e, &f) in m.entries.iter_mut().zip(&assign) {
                e.split = if f == fold { "val" } else { "train" }.to_owned();
            }
            m
        })
        .collect())
}
