//! Split planning: single random split and grid-based spatial
//! cross-validation.
//!
//! Spatial plans block whole grid cells, so samples sharing a cell always
//! share a role and fold. Cell indices come from floor division of lat/lon
//! by the grid size, anchored at 0 degrees; boundary samples belong to the
//! cell of the floor index.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tabular::SampleRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Single,
    SpatialGrid,
}

/// Assignment of every sample to a partition (and fold, for spatial plans).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub strategy: Strategy,
    pub seed: u64,
    pub grid_deg: Option<f64>,
    pub folds: usize,
    /// point_id -> role, sorted for deterministic serialization.
    pub assignment: BTreeMap<i64, Role>,
    /// point_id -> fold index; spatial plans only, train samples only.
    pub fold_of: BTreeMap<i64, usize>,
}

impl SplitPlan {
    pub fn train_ids(&self) -> Vec<i64> {
        self.ids_with_role(Role::Train)
    }

    pub fn test_ids(&self) -> Vec<i64> {
        self.ids_with_role(Role::Test)
    }

    fn ids_with_role(&self, role: Role) -> Vec<i64> {
        self.assignment
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Content hash binding model artifacts to the plan they trained under.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        self.write_delimited(&mut buf).unwrap();
        h.update(format!(
            "{:?}|{}|{:?}|{}|",
            self.strategy, self.seed, self.grid_deg, self.folds
        ));
        h.update(&buf);
        format!("{:x}", h.finalize())
    }

    /// Serializes as `point_id  role  fold` rows so experiments replay
    /// byte-for-byte.
    pub fn write_delimited<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "point_id\trole\tfold")?;
        for (id, role) in &self.assignment {
            match self.fold_of.get(id) {
                Some(f) => writeln!(w, "{id}\t{}\t{f}", role.as_str())?,
                None => writeln!(w, "{id}\t{}\tNA", role.as_str())?,
            }
        }
        Ok(())
    }

    pub fn read_delimited<R: Read>(
        r: R,
        strategy: Strategy,
        seed: u64,
        grid_deg: Option<f64>,
        folds: usize,
    ) -> Result<Self, SplitError> {
        let mut assignment = BTreeMap::new();
        let mut fold_of = BTreeMap::new();
        for (idx, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| SplitError::Parse(idx + 1, e.to_string()))?;
            if idx == 0 || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(SplitError::Parse(idx + 1, "expected 3 fields".into()));
            }
            let id: i64 = parts[0]
                .parse()
                .map_err(|e| SplitError::Parse(idx + 1, format!("{e}")))?;
            let role = match parts[1] {
                "train" => Role::Train,
                "test" => Role::Test,
                other => return Err(SplitError::Parse(idx + 1, format!("bad role {other:?}"))),
            };
            assignment.insert(id, role);
            if parts[2] != "NA" {
                fold_of.insert(
                    id,
                    parts[2]
                        .parse()
                        .map_err(|e| SplitError::Parse(idx + 1, format!("{e}")))?,
                );
            }
        }
        Ok(SplitPlan {
            strategy,
            seed,
            grid_deg,
            folds,
            assignment,
            fold_of,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("need more than {folds} non-empty grid cells, got {cells}")]
    TooFewCells { cells: usize, folds: usize },
    #[error("grid size must be positive, got {0}")]
    DegenerateGrid(f64),
    #[error("operation requires a spatial_grid plan")]
    WrongStrategy,
    #[error("line {0}: {1}")]
    Parse(usize, String),
}

/// Random 80:20-style split: train size is floor(ratio * n), the shuffle is
/// uniform under the seed, and the assignment depends only on the sorted
/// point ids and the seed (not on input row order).
pub fn single_split(
    samples: &[SampleRecord],
    ratio: f64,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    let n = samples.len();
    if n < 2 {
        return Err(SplitError::TooFewSamples(n));
    }
    let mut ids: Vec<i64> = samples.iter().map(|s| s.point_id).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (ratio * n as f64).floor() as usize;
    let mut assignment = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        assignment.insert(id, if i < n_train { Role::Train } else { Role::Test });
    }
    Ok(SplitPlan {
        strategy: Strategy::Single,
        seed,
        grid_deg: None,
        folds: 0,
        assignment,
        fold_of: BTreeMap::new(),
    })
}

/// Grid cell index of a coordinate.
pub fn cell_index(lat: f64, lon: f64, grid_deg: f64) -> (i64, i64) {
    (
        (lat / grid_deg).floor() as i64,
        (lon / grid_deg).floor() as i64,
    )
}

/// Spatial grid split: samples are grouped into grid cells; whole cells are
/// assigned greedily (largest first, seeded tie order) to the test
/// partition until its share first reaches the target or the next cell
/// would overshoot by more than it undershoots; the remaining cells are
/// dealt round-robin by descending size into `folds` folds.
pub fn spatial_grid_split(
    samples: &[SampleRecord],
    grid_deg: f64,
    test_share: f64,
    folds: usize,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    if grid_deg <= 0.0 {
        return Err(SplitError::DegenerateGrid(grid_deg));
    }
    let mut cells: HashMap<(i64, i64), Vec<i64>> = HashMap::new();
    for s in samples {
        cells
            .entry(cell_index(s.lat, s.lon, grid_deg))
            .or_default()
            .push(s.point_id);
    }
    if cells.len() <= folds {
        return Err(SplitError::TooFewCells {
            cells: cells.len(),
            folds,
        });
    }
    let mut cell_list: Vec<((i64, i64), Vec<i64>)> = cells.into_iter().collect();
    cell_list.sort_by_key(|(idx, _)| *idx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cell_list.shuffle(&mut rng);
    // Stable sort keeps the seeded shuffle as the tie order among equal sizes.
    cell_list.sort_by_key(|(_, ids)| std::cmp::Reverse(ids.len()));

    let n = samples.len() as f64;
    let target = test_share * n;
    let mut assignment = BTreeMap::new();
    let mut fold_of = BTreeMap::new();
    let mut test_count = 0.0;
    let mut rest: Vec<&((i64, i64), Vec<i64>)> = Vec::new();
    let mut iter = cell_list.iter();
    for cell in iter.by_ref() {
        if test_count >= target {
            rest.push(cell);
            break;
        }
        let s = cell.1.len() as f64;
        let take = test_count + s <= target || (test_count + s - target) < (target - test_count);
        if take {
            for id in &cell.1 {
                assignment.insert(*id, Role::Test);
            }
            test_count += s;
        } else {
            rest.push(cell);
            break;
        }
    }
    rest.extend(iter);

    for (k, (_, ids)) in rest.iter().enumerate() {
        let fold = k % folds;
        for id in ids {
            assignment.insert(*id, Role::Train);
            fold_of.insert(*id, fold);
        }
    }
    Ok(SplitPlan {
        strategy: Strategy::SpatialGrid,
        seed,
        grid_deg: Some(grid_deg),
        folds,
        assignment,
        fold_of,
    })
}

/// (train ids, validation ids) for one cross-validation round.
pub type FoldRound = (Vec<i64>, Vec<i64>);

/// One cross-validation round per fold: that fold is validation, the rest
/// train. Test ids never appear.
pub fn fold_rounds(plan: &SplitPlan) -> Result<Vec<FoldRound>, SplitError> {
    if plan.strategy != Strategy::SpatialGrid {
        return Err(SplitError::WrongStrategy);
    }
    let mut rounds = Vec::with_capacity(plan.folds);
    for k in 0..plan.folds {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (id, fold) in &plan.fold_of {
            if *fold == k {
                validation.push(*id);
            } else {
                train.push(*id);
            }
        }
        rounds.push((train, validation));
    }
    Ok(rounds)
}
