//! Stratified k-fold splits, persisted so every setting and method reuses
//! the same partitions.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub dataset: String,
    pub seed: u64,
    /// Sorted sample indices per fold.
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Indices outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#dataset\t{}\n#seed\t{}\n#k\t{}\nfold\tindex\n", self.dataset, self.seed, self.k());
        for (f, idx) in self.folds.iter().enumerate() {
            for i in idx {
                let _ = writeln!(out, "{f}\t{i}");
            }
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut dataset = None;
        let mut seed = None;
        let mut k = None;
        let mut folds: Vec<Vec<usize>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |m: &str| Error::parse(path, i + 1, m.to_string());
            let mut f = line.split('\t');
            let (a, b) = (f.next().unwrap_or(""), f.next().ok_or_else(|| err("expected two fields"))?);
            match a {
                "#dataset" => dataset = Some(b.to_string()),
                "#seed" => seed = Some(b.parse().map_err(|_| err("bad seed"))?),
                "#k" => {
                    let kk: usize = b.parse().map_err(|_| err("bad k"))?;
                    folds = vec![Vec::new(); kk];
                    k = Some(kk);
                }
                "fold" => {}
                _ => {
                    let fi: usize = a.parse().map_err(|_| err("bad fold number"))?;
                    let idx: usize = b.parse().map_err(|_| err("bad index"))?;
                    folds.get_mut(fi).ok_or_else(|| err("fold out of range"))?.push(idx);
                }
            }
        }
        let missing = |w: &str| Error::parse(path, 0, format!("missing #{w} header"));
        k.ok_or_else(|| missing("k"))?;
        Ok(Self {
            dataset: dataset.ok_or_else(|| missing("dataset"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            folds,
        })
    }
}

/// Splits per class, dealing shuffled indices round-robin across folds and
/// continuing the rotation from one class to the next, so fold sizes differ
/// by at most one overall and per class.
pub fn stratified_kfold(dataset: &str, labels: &[u8], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} samples",
            labels.len()
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if !idx.is_empty() && idx.len() < k {
            warn!("{dataset}: class {class} has {} samples for {k} folds", idx.len());
        }
        idx.shuffle(&mut seed::rng(seed::derive_index(seed, class as u64)));
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit {
        dataset: dataset.to_string(),
        seed,
        folds,
    })
}
