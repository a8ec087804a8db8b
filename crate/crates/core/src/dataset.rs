//! Labeled trajectory database: generation, channel labels, train/test
//! split and on-disk layout.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, SimParams, Trajectory};
use crate::error::{Error, Result};
use crate::landscape::{Position, PotentialSpec, WellSpec};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionLabel {
    TopTransition,
    BottomTransition,
    NoTransition,
}

impl TransitionLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransitionLabel::TopTransition => "top",
            TransitionLabel::BottomTransition => "bottom",
            TransitionLabel::NoTransition => "none",
        }
    }

    pub fn is_transition(&self) -> bool {
        *self != TransitionLabel::NoTransition
    }
}

/// Which crossing point decides the channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// The first index with `x_k` past the threshold.
    #[default]
    FirstCrossing,
    /// Top if any index past the threshold is above the height cut.
    AnyCrossing,
}

pub fn classify_trajectory(traj: &Trajectory, wells: &WellSpec) -> TransitionLabel {
    classify_with_rule(traj, wells, LabelRule::FirstCrossing)
}

pub fn classify_with_rule(traj: &Trajectory, wells: &WellSpec, rule: LabelRule) -> TransitionLabel {
    let mut crossings = traj
        .positions
        .iter()
        .skip(1)
        .filter(|q| q.x > wells.transition_x_threshold);
    let top = |q: &Position| q.y > wells.top_y_threshold;
    let is_top = match rule {
        LabelRule::FirstCrossing => match crossings.next() {
            None => return TransitionLabel::NoTransition,
            Some(q) => top(q),
        },
        LabelRule::AnyCrossing => {
            let mut seen = false;
            let mut any_top = false;
            for q in crossings {
                seen = true;
                any_top |= top(q);
            }
            if !seen {
                return TransitionLabel::NoTransition;
            }
            any_top
        }
    };
    if is_top {
        TransitionLabel::TopTransition
    } else {
        TransitionLabel::BottomTransition
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrajectory {
    pub trajectory: Trajectory,
    pub label: TransitionLabel,
    pub stream_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub q0: Position,
    pub sim: SimParams,
    pub wells: WellSpec,
    pub base_seed: u64,
    pub label_rule: LabelRule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<LabeledTrajectory>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub generation: GenerationParams,
    /// Trajectories that blew up and were replaced by a fresh stream.
    pub regenerated: usize,
}

pub const DEFAULT_DATASET_SIZE: usize = 12_968;
pub const DEFAULT_DATASET_STEPS: usize = 1984;
pub const DATASET_START: Position = Position::new(-1.05, -0.04);
pub const TRAIN_FRACTION: f64 = 0.8;

/// Stream id for attempt `attempt` of trajectory `index`.
fn stream_for(index: usize, attempt: u64) -> u64 {
    (attempt << 32) | index as u64
}

pub fn generate_dataset(
    n_traj: usize,
    q0: Position,
    params: &SimParams,
    spec: &PotentialSpec,
    wells: &WellSpec,
    base_seed: u64,
    rule: LabelRule,
) -> Result<LabeledDataset> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    params.validate()?;
    let results: Vec<(Trajectory, u64, usize)> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut attempt = 0u64;
            loop {
                let stream_id = stream_for(i, attempt);
                let mut rng = RngStream::new(base_seed, stream_id);
                match simulate(q0, params, spec, None, &mut rng, false) {
                    Ok(t) => return (t, stream_id, attempt as usize),
                    Err(_) => attempt += 1,
                }
            }
        })
        .collect();
    let mut regenerated = 0;
    let items = results
        .into_iter()
        .map(|(trajectory, stream_id, retries)| {
            regenerated += retries;
            LabeledTrajectory {
                label: classify_with_rule(&trajectory, wells, rule),
                trajectory,
                stream_id,
            }
        })
        .collect::<Vec<_>>();
    let (train, test) = split_indices(items.len(), TRAIN_FRACTION, base_seed, false)?;
    Ok(LabeledDataset {
        items,
        train,
        test,
        generation: GenerationParams {
            q0,
            sim: *params,
            wells: *wells,
            base_seed,
            label_rule: rule,
        },
        regenerated,
    })
}

/// Seeded shuffle of `0..n`, then a prefix of `n - round((1 - fraction) n)`
/// indices goes to train and the rest to test.
pub fn split_indices(
    n: usize,
    fraction: f64,
    seed: u64,
    require_both: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n_test = ((1.0 - fraction) * n as f64).round() as usize;
    let n_train = n - n_test;
    if require_both {
        if n_train == 0 {
            return Err(Error::EmptySplit("train"));
        }
        if n_test == 0 {
            return Err(Error::EmptySplit("test"));
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

const SPLIT_STREAM: u64 = u64::MAX - 1;

/// Borrowed subset of a dataset.
#[derive(Clone, Copy, Debug)]
pub struct DatasetView<'a> {
    pub dataset: &'a LabeledDataset,
    pub indices: &'a [usize],
}

impl<'a> DatasetView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, i: usize) -> &'a LabeledTrajectory {
        &self.dataset.items[self.indices[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a LabeledTrajectory> + 'a {
        let items = &self.dataset.items;
        self.indices.iter().map(move |&i| &items[i])
    }
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn train_view(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices: &self.train,
        }
    }

    pub fn test_view(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            indices: &self.test,
        }
    }

    /// Re-splits with a new fraction and seed.
    pub fn resplit(&mut self, fraction: f64, seed: u64, require_both: bool) -> Result<()> {
        let (train, test) = split_indices(self.items.len(), fraction, seed, require_both)?;
        self.train = train;
        self.test = test;
        Ok(())
    }

    pub fn histogram(&self) -> BTreeMap<&'static str, usize> {
        let mut h = BTreeMap::from([("top", 0), ("bottom", 0), ("none", 0)]);
        for it in &self.items {
            *h.get_mut(it.label.as_str()).unwrap() += 1;
        }
        h
    }

    pub fn transition_fraction(&self) -> f64 {
        let n = self.items.iter().filter(|t| t.label.is_transition()).count();
        n as f64 / self.items.len() as f64
    }

    /// Keeps only transition paths, preserving the original split membership.
    pub fn transitions_only(&self) -> LabeledDataset {
        let mut remap = vec![None; self.items.len()];
        let mut items = Vec::new();
        for (i, it) in self.items.iter().enumerate() {
            if it.label.is_transition() {
                remap[i] = Some(items.len());
                items.push(it.clone());
            }
        }
        let keep = |v: &[usize]| v.iter().filter_map(|&i| remap[i]).collect::<Vec<_>>();
        LabeledDataset {
            train: keep(&self.train),
            test: keep(&self.test),
            items,
            generation: self.generation.clone(),
            regenerated: self.regenerated,
        }
    }

    /// First `n` items with a fresh split of them.
    pub fn subset(&self, n: usize, fraction: f64, seed: u64) -> Result<LabeledDataset> {
        let items: Vec<_> = self.items.iter().take(n).cloned().collect();
        let (train, test) = split_indices(items.len(), fraction, seed, false)?;
        Ok(LabeledDataset {
            items,
            train,
            test,
            generation: self.generation.clone(),
            regenerated: self.regenerated,
        })
    }
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    n_traj: usize,
    generation: GenerationParams,
    label_histogram: BTreeMap<String, usize>,
    regenerated: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    files: Vec<FileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileEntry {
    file: String,
    label: TransitionLabel,
    stream_id: u64,
}

const MANIFEST_FORMAT: &str = "transpath-dataset";

impl LabeledDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.items.len());
        for (i, it) in self.items.iter().enumerate() {
            let name = format!("traj_{i:06}.bin");
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            it.trajectory.write_binary(&mut w, false)?;
            files.push(FileEntry {
                file: name,
                label: it.label,
                stream_id: it.stream_id,
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            n_traj: self.items.len(),
            generation: self.generation.clone(),
            label_histogram: self.histogram().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            regenerated: self.regenerated,
            train: self.train.clone(),
            test: self.test.clone(),
            files,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::format(&manifest_path, "not a dataset manifest"));
        }
        if manifest.files.len() != manifest.n_traj {
            return Err(Error::format(&manifest_path, "file count disagrees with n_traj"));
        }
        let mut items = Vec::with_capacity(manifest.n_traj);
        for entry in manifest.files {
            let path = dir.join(&entry.file);
            let mut r = BufReader::new(File::open(&path)?);
            let mut trajectory = Trajectory::read_binary(&mut r)?
                .ok_or_else(|| Error::format(&path, "empty trajectory file"))?;
            trajectory.params.n_steps = trajectory.positions.len() - 1;
            items.push(LabeledTrajectory {
                trajectory,
                label: entry.label,
                stream_id: entry.stream_id,
            });
        }
        let n = items.len();
        let mut seen = vec![false; n];
        for &i in manifest.train.iter().chain(&manifest.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::format(&manifest_path, "split indices are not a partition"));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::format(&manifest_path, "split indices do not cover the dataset"));
        }
        Ok(LabeledDataset {
            items,
            train: manifest.train,
            test: manifest.test,
            generation: manifest.generation,
            regenerated: manifest.regenerated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            positions: points.iter().map(|&(x, y)| Position::new(x, y)).collect(),
            params: SimParams::default().with_steps(points.len() - 1),
            noises: None,
        }
    }

    /// Direct scan used as an independent reference.
    fn brute_label(t: &Trajectory) -> TransitionLabel {
        for k in 1..t.positions.len() {
            if t.positions[k].x > 0.0 {
                return if t.positions[k].y > 0.7 {
                    TransitionLabel::TopTransition
                } else {
                    TransitionLabel::BottomTransition
                };
            }
        }
        TransitionLabel::NoTransition
    }

    #[test]
    fn label_examples() {
        let w = WellSpec::default();
        let none = path(&[(-1.0, 0.0), (-0.5, 0.2), (-0.1, 1.0)]);
        assert_eq!(classify_trajectory(&none, &w), TransitionLabel::NoTransition);
        let top = path(&[(-1.0, 0.0), (-0.2, 1.0), (0.01, 1.2)]);
        assert_eq!(classify_trajectory(&top, &w), TransitionLabel::TopTransition);
        let bottom = path(&[(-1.0, 0.0), (0.01, 0.1), (-0.1, 0.8), (0.5, 1.5)]);
        assert_eq!(classify_trajectory(&bottom, &w), TransitionLabel::BottomTransition);
        assert_eq!(brute_label(&bottom), TransitionLabel::BottomTransition);
        assert_eq!(
            classify_with_rule(&bottom, &w, LabelRule::AnyCrossing),
            TransitionLabel::TopTransition
        );
    }

    #[test]
    fn start_point_is_ignored() {
        let w = WellSpec::default();
        let t = path(&[(0.5, 0.0), (-0.5, 0.0)]);
        assert_eq!(classify_trajectory(&t, &w), TransitionLabel::NoTransition);
    }

    #[test]
    fn labels_agree_with_scan_on_random_walks() {
        let w = WellSpec::default();
        let mut rng = RngStream::new(11, 0);
        for _ in 0..1000 {
            let mut q = Position::new(rng.uniform_range(-1.5, -0.2), rng.uniform_range(-0.5, 1.5));
            let mut pts = vec![(q.x, q.y)];
            for _ in 0..40 {
                q = q + Position::new(rng.normal() * 0.15, rng.normal() * 0.15);
                pts.push((q.x, q.y));
            }
            let t = path(&pts);
            let label = classify_trajectory(&t, &w);
            assert_eq!(label, brute_label(&t));
            if label == TransitionLabel::NoTransition {
                assert!(t.positions.iter().skip(1).all(|q| q.x <= 0.0));
            }
        }
    }

    #[test]
    fn split_rules() {
        let (a, b) = split_indices(10, 0.8, 5, true).unwrap();
        let (c, d) = split_indices(10, 0.8, 5, true).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!((&a, &b), (&c, &d));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let (a, b) = split_indices(2, 0.5, 0, true).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));

        let (a, b) = split_indices(12_968, 0.8, 0, true).unwrap();
        assert_eq!((a.len(), b.len()), (10_374, 2_594));

        let (a, b) = split_indices(1, 0.8, 0, false).unwrap();
        assert_eq!((a.len(), b.len()), (1, 0));
        assert!(matches!(split_indices(1, 0.8, 0, true), Err(Error::EmptySplit("test"))));
        assert!(split_indices(4, 1.0, 0, false).is_err());
    }

    #[test]
    fn single_trajectory_dataset() {
        let ds = generate_dataset(
            1,
            DATASET_START,
            &SimParams::default().with_steps(DEFAULT_DATASET_STEPS),
            &PotentialSpec::default(),
            &WellSpec::default(),
            3,
            LabelRule::FirstCrossing,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.test.is_empty());
        assert_eq!(ds.items[0].trajectory.len(), 1985);
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = generate_dataset(
            12,
            DATASET_START,
            &SimParams::default().with_steps(64),
            &PotentialSpec::default(),
            &WellSpec::default(),
            9,
            LabelRule::FirstCrossing,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = LabeledDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.items.iter().zip(&ds.items) {
            let bits = |t: &Trajectory| t.positions.iter().flat_map(|q| [q.x.to_bits(), q.y.to_bits()]).collect::<Vec<_>>();
            assert_eq!(bits(&a.trajectory), bits(&b.trajectory));
        }
    }

    #[test]
    fn transitions_only_keeps_split_membership() {
        let mut ds = generate_dataset(
            200,
            Position::new(-0.2, 0.0),
            &SimParams::default().with_steps(100),
            &PotentialSpec::default(),
            &WellSpec::default(),
            1,
            LabelRule::FirstCrossing,
        )
        .unwrap();
        ds.resplit(0.5, 2, true).unwrap();
        let only = ds.transitions_only();
        assert!(only.items.iter().all(|t| t.label.is_transition()));
        assert_eq!(only.train.len() + only.test.len(), only.len());
        assert!(!only.is_empty() && only.len() < ds.len());
    }
}
