use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phantom::ManifestEntry;
use crate::seed::derive_seed;

/// Assignment of every sample id to one test fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// `(id, fold)` in manifest order.
    pub assignments: Vec<(String, usize)>,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.iter().find(|(i, _)| i == id).map(|&(_, f)| f)
    }

    /// Manifest positions held out in `fold`.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i].1 == fold).collect()
    }

    /// Manifest positions trained on when `fold` is held out.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i].1 != fold).collect()
    }

    /// `id fold` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# k={} stratified={}\n", self.k, self.stratified);
        for (id, f) in &self.assignments {
            out.push_str(&format!("{id} {f}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let malformed = |detail: String| Error::Malformed {
            path: path.to_path_buf(),
            detail,
        };
        let mut k = None;
        let mut stratified = false;
        let mut assignments = Vec::new();
        for line in text.lines() {
            if let Some(head) = line.strip_prefix("# ") {
                for part in head.split_whitespace() {
                    match part.split_once('=') {
                        Some(("k", v)) => k = v.parse().ok(),
                        Some(("stratified", v)) => stratified = v == "true",
                        _ => {}
                    }
                }
                continue;
            }
            let (id, f) = line
                .split_once(' ')
                .ok_or_else(|| malformed(format!("line `{line}`")))?;
            let f: usize = f.trim().parse().map_err(|_| malformed(format!("fold in `{line}`")))?;
            assignments.push((id.to_string(), f));
        }
        let k = k.ok_or_else(|| malformed("missing header".into()))?;
        if assignments.iter().any(|&(_, f)| f >= k) {
            return Err(malformed(format!("fold index beyond k = {k}")));
        }
        Ok(Self {
            k,
            assignments,
            stratified,
        })
    }
}

/// Stratified, seeded `k`-fold split. Each class is shuffled and dealt round-robin, the
/// second class continuing where the first stopped, so fold sizes differ by at most one
/// and per-fold class counts differ by at most one.
pub fn split_folds(entries: &[ManifestEntry], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::TooFewSamples(format!("need k >= 2 folds, got {k}")));
    }
    let mut deal = 0usize;
    let mut fold = vec![usize::MAX; entries.len()];
    for label in 0..2u8 {
        let mut members: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].label == label).collect();
        if members.len() < k {
            return Err(Error::TooFewSamples(format!(
                "class {label} has {} samples, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[label as u64])));
        for i in members {
            fold[i] = deal % k;
            deal += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments: entries.iter().zip(fold).map(|(e, f)| (e.id.clone(), f)).collect(),
        stratified: true,
    })
}
