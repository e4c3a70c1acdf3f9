//! Interaction logs, chronological splits and sample construction.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::policy::codec;
use crate::preference::sample_proportional;
use crate::seed::{self, stream};
use crate::{Error, Result};

/// Default number of sampled negatives in an evaluation candidate set.
pub const DEFAULT_CANDIDATE_NEGATIVES: usize = 20;

/// One user's interactions in chronological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSequence {
    pub user_id: u64,
    pub items: Vec<usize>,
    pub timestamps: Vec<i64>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Sequences ordered by `user_id`; a user's dense index is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub item_count: usize,
    pub sequences: Vec<InteractionSequence>,
}

impl Dataset {
    pub fn interactions(&self) -> usize {
        self.sequences.iter().map(InteractionSequence::len).sum()
    }

    pub fn users(&self) -> usize {
        self.sequences.len()
    }

    /// Writes `user_id<TAB>item<TAB>timestamp` lines using dense item indices.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        for s in &self.sequences {
            for (item, ts) in s.items.iter().zip(&s.timestamps) {
                writeln!(w, "{}\t{}\t{}", s.user_id, item, ts)?;
            }
        }
        Ok(())
    }
}

/// Dense index → original item id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemMapping(pub Vec<String>);

impl ItemMapping {
    pub fn identity(n: usize) -> Self {
        Self((0..n).map(|i| i.to_string()).collect())
    }

    /// CSV `original_id,dense_index`, one row per item, no header.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        for (dense, original) in self.0.iter().enumerate() {
            writeln!(w, "{original},{dense}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, source: &Path) -> Result<Self> {
        let mut ids = Vec::new();
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                path: source.to_path_buf(),
                line: n + 1,
                message: message.to_string(),
            };
            let (original, dense) = line.rsplit_once(',').ok_or_else(|| parse_err("expected original_id,dense_index"))?;
            let dense: usize = dense.trim().parse().map_err(|_| parse_err("bad dense index"))?;
            if dense != ids.len() {
                return Err(parse_err("dense indices must be consecutive from 0"));
            }
            ids.push(original.to_string());
        }
        Ok(Self(ids))
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub mapping: ItemMapping,
    /// Users removed by the minimum-interaction filter.
    pub dropped_users: usize,
}

pub fn ingest_tsv(path: &Path) -> Result<Ingested> {
    ingest_tsv_filtered(path, 0)
}

/// Like [`ingest_tsv`], dropping users with fewer than `min_interactions` rows.
pub fn ingest_tsv_filtered(path: &Path, min_interactions: usize) -> Result<Ingested> {
    let file = File::open(path)?;
    parse_interactions(BufReader::new(file), path, min_interactions)
}

/// Groups `user<TAB>item<TAB>timestamp` rows by user, stable-sorts each user
/// by timestamp and densifies item ids (numeric order when every id is an
/// integer, lexicographic otherwise).
pub fn parse_interactions<R: BufRead>(reader: R, source: &Path, min_interactions: usize) -> Result<Ingested> {
    let mut by_user: BTreeMap<u64, Vec<(i64, String)>> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let user: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad user id `{}`", fields[0])))?;
        let item = fields[1].trim();
        if item.is_empty() {
            return Err(err("empty item id".into()));
        }
        let ts: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad timestamp `{}`", fields[2])))?;
        by_user.entry(user).or_default().push((ts, item.to_string()));
    }
    if by_user.is_empty() {
        return Err(Error::EmptyInput(source.to_path_buf()));
    }
    let before = by_user.len();
    by_user.retain(|_, rows| rows.len() >= min_interactions);
    let dropped_users = before - by_user.len();

    let mut originals: Vec<&str> = by_user.values().flatten().map(|(_, i)| i.as_str()).collect();
    originals.sort_unstable();
    originals.dedup();
    if originals.iter().all(|s| s.parse::<u64>().is_ok()) {
        originals.sort_by_key(|s| s.parse::<u64>().unwrap());
    }
    let mapping = ItemMapping(originals.iter().map(|s| s.to_string()).collect());
    let dense: HashMap<&str, usize> = mapping.0.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let sequences = by_user
        .iter()
        .map(|(&user_id, rows)| {
            let mut rows: Vec<&(i64, String)> = rows.iter().collect();
            rows.sort_by_key(|(ts, _)| *ts);
            InteractionSequence {
                user_id,
                items: rows.iter().map(|(_, i)| dense[i.as_str()]).collect(),
                timestamps: rows.iter().map(|(ts, _)| *ts).collect(),
            }
        })
        .collect();
    Ok(Ingested {
        dataset: Dataset {
            item_count: mapping.0.len(),
            sequences,
        },
        mapping,
        dropped_users,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
}

/// Segment boundaries for one user: `items[..train_end]` is train,
/// `items[train_end..valid_end]` valid, the rest test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserSplit {
    pub train_end: usize,
    pub valid_end: usize,
}

/// A dataset together with per-user chronological boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub dataset: Dataset,
    pub bounds: Vec<UserSplit>,
    /// Users with fewer than 3 interactions, kept entirely in train.
    pub short_users: Vec<u64>,
    /// Users whose validation segment came out empty.
    pub valid_empty_users: Vec<u64>,
}

/// Splits every user's sequence into train/valid/test prefixes:
/// `⌊train·n⌋` to train, `⌊valid·n⌋` to valid, the remainder to test.
pub fn chronological_split(dataset: Dataset, ratios: SplitRatios) -> Result<SplitDataset> {
    let SplitRatios { train, valid, test } = ratios;
    if !(train > 0.0 && valid > 0.0 && test > 0.0) || ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got ({train}, {valid}, {test})"
        )));
    }
    let mut bounds = Vec::with_capacity(dataset.sequences.len());
    let mut short_users = Vec::new();
    let mut valid_empty_users = Vec::new();
    for s in &dataset.sequences {
        let n = s.len();
        if n < 3 {
            short_users.push(s.user_id);
            bounds.push(UserSplit {
                train_end: n,
                valid_end: n,
            });
            continue;
        }
        let nf = n as f64;
        let n_train = ((train * nf) + 1e-9).floor() as usize;
        let n_valid = ((valid * nf) + 1e-9).floor() as usize;
        let n_train = n_train.clamp(1, n - 1);
        let valid_end = (n_train + n_valid).min(n - 1);
        if valid_end == n_train {
            valid_empty_users.push(s.user_id);
        }
        bounds.push(UserSplit {
            train_end: n_train,
            valid_end,
        });
    }
    Ok(SplitDataset {
        dataset,
        bounds,
        short_users,
        valid_empty_users,
    })
}

/// One held-out next-item prediction: everything before `position` is context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldOut {
    pub user: usize,
    pub position: usize,
}

impl SplitDataset {
    pub fn item_count(&self) -> usize {
        self.dataset.item_count
    }

    pub fn users(&self) -> usize {
        self.dataset.sequences.len()
    }

    pub fn sequence(&self, user: usize) -> &InteractionSequence {
        &self.dataset.sequences[user]
    }

    pub fn range(&self, user: usize, part: Part) -> std::ops::Range<usize> {
        let b = self.bounds[user];
        match part {
            Part::Train => 0..b.train_end,
            Part::Valid => b.train_end..b.valid_end,
            Part::Test => b.valid_end..self.sequence(user).len(),
        }
    }

    /// The segment of each user belonging to `part`, as standalone sequences.
    pub fn part(&self, part: Part) -> Vec<InteractionSequence> {
        (0..self.users())
            .map(|u| {
                let s = self.sequence(u);
                let r = self.range(u, part);
                InteractionSequence {
                    user_id: s.user_id,
                    items: s.items[r.clone()].to_vec(),
                    timestamps: s.timestamps[r].to_vec(),
                }
            })
            .collect()
    }

    /// Every position in `part` that has a non-empty history before it.
    pub fn held_out(&self, part: Part) -> Vec<HeldOut> {
        (0..self.users())
            .flat_map(|user| {
                self.range(user, part)
                    .filter(|&p| p >= 1)
                    .map(move |position| HeldOut { user, position })
            })
            .collect()
    }

    pub fn history(&self, h: HeldOut) -> &[usize] {
        &self.sequence(h.user).items[..h.position]
    }

    pub fn target(&self, h: HeldOut) -> usize {
        self.sequence(h.user).items[h.position]
    }

    /// Re-assembles a split from its three parts (as written by [`write_split_dir`]).
    pub fn from_parts(item_count: usize, train: Vec<InteractionSequence>, valid: Vec<InteractionSequence>, test: Vec<InteractionSequence>) -> Result<Self> {
        let mut merged: BTreeMap<u64, (InteractionSequence, usize, usize)> = BTreeMap::new();
        for s in train {
            let n = s.len();
            merged.insert(s.user_id, (s, n, n));
        }
        for (seg, is_valid) in [(valid, true), (test, false)] {
            for s in seg {
                let entry = merged.entry(s.user_id).or_insert_with(|| {
                    (
                        InteractionSequence {
                            user_id: s.user_id,
                            items: vec![],
                            timestamps: vec![],
                        },
                        0,
                        0,
                    )
                });
                entry.0.items.extend(&s.items);
                entry.0.timestamps.extend(&s.timestamps);
                if is_valid {
                    entry.2 = entry.0.items.len();
                }
            }
        }
        let mut sequences = Vec::with_capacity(merged.len());
        let mut bounds = Vec::with_capacity(merged.len());
        let mut short_users = Vec::new();
        let mut valid_empty_users = Vec::new();
        for (_, (s, train_end, valid_end)) in merged {
            if s.items.iter().any(|&i| i >= item_count) {
                return Err(Error::Config(format!("user {} references an item outside the catalog", s.user_id)));
            }
            if s.len() < 3 {
                short_users.push(s.user_id);
            } else if valid_end == train_end {
                valid_empty_users.push(s.user_id);
            }
            bounds.push(UserSplit { train_end, valid_end });
            sequences.push(s);
        }
        Ok(Self {
            dataset: Dataset { item_count, sequences },
            bounds,
            short_users,
            valid_empty_users,
        })
    }
}

/// File names inside a dataset directory.
pub mod layout {
    pub const INTERACTIONS: &str = "interactions.tsv";
    pub const TRAIN: &str = "train.tsv";
    pub const VALID: &str = "valid.tsv";
    pub const TEST: &str = "test.tsv";
    pub const ITEMS: &str = "items.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.bin";
}

/// Reads `user<TAB>dense_item<TAB>timestamp` rows as written by
/// [`Dataset::write_tsv`], keeping file order within each user.
pub fn read_dense_tsv(path: &Path, item_count: usize) -> Result<Vec<InteractionSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut by_user: BTreeMap<u64, InteractionSequence> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: message.to_string(),
        };
        let mut fields = line.split('\t');
        let (Some(u), Some(i), Some(t), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(err("expected 3 tab-separated fields"));
        };
        let user_id: u64 = u.parse().map_err(|_| err("bad user id"))?;
        let item: usize = i.parse().map_err(|_| err("bad dense item index"))?;
        if item >= item_count {
            return Err(err("item index outside the catalog"));
        }
        let ts: i64 = t.parse().map_err(|_| err("bad timestamp"))?;
        let seq = by_user.entry(user_id).or_insert_with(|| InteractionSequence {
            user_id,
            items: Vec::new(),
            timestamps: Vec::new(),
        });
        seq.items.push(item);
        seq.timestamps.push(ts);
    }
    Ok(by_user.into_values().collect())
}

/// Writes the full log, the three split parts and the item mapping into `dir`.
pub fn write_split_dir(dir: &Path, split: &SplitDataset, mapping: &ItemMapping) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, dataset: &Dataset| -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(dir.join(name))?);
        dataset.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write(layout::INTERACTIONS, &split.dataset)?;
    for (name, part) in [(layout::TRAIN, Part::Train), (layout::VALID, Part::Valid), (layout::TEST, Part::Test)] {
        write(
            name,
            &Dataset {
                item_count: split.item_count(),
                sequences: split.part(part),
            },
        )?;
    }
    let mut w = std::io::BufWriter::new(File::create(dir.join(layout::ITEMS))?);
    mapping.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads a directory written by [`write_split_dir`].
pub fn read_split_dir(dir: &Path) -> Result<(SplitDataset, ItemMapping)> {
    let items_path = dir.join(layout::ITEMS);
    let mapping = ItemMapping::read_csv(File::open(&items_path)?, &items_path)?;
    let n = mapping.0.len();
    let split = SplitDataset::from_parts(
        n,
        read_dense_tsv(&dir.join(layout::TRAIN), n)?,
        read_dense_tsv(&dir.join(layout::VALID), n)?,
        read_dense_tsv(&dir.join(layout::TEST), n)?,
    )?;
    if split.users() == 0 {
        return Err(Error::EmptyInput(dir.join(layout::TRAIN)));
    }
    Ok((split, mapping))
}

/// `(x_u, e_p, E_d)`: context, one positive and K dispreferred items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceSample {
    pub user: usize,
    pub user_id: u64,
    pub history: Vec<usize>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

impl PreferenceSample {
    /// Positive first, then negatives.
    pub fn candidates(&self) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.negatives.len() + 1);
        c.push(self.positive);
        c.extend_from_slice(&self.negatives);
        c
    }
}

/// Strategy for drawing dispreferred items out of a user's non-interacted pool.
pub trait NegativeSampler: Sync {
    fn sample(&self, pool: &[usize], k: usize, rng: &mut dyn rand::RngCore) -> Vec<usize>;
}

/// Uniform draws without replacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformSampler;

impl NegativeSampler for UniformSampler {
    fn sample(&self, pool: &[usize], k: usize, rng: &mut dyn rand::RngCore) -> Vec<usize> {
        index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    }
}

/// Items the user never interacted with (in any split).
pub fn non_interacted(item_count: usize, interacted: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; item_count];
    for &i in interacted {
        seen[i] = true;
    }
    (0..item_count).filter(|&i| !seen[i]).collect()
}

/// Next-item preference samples from every training prefix.
///
/// Negatives for user `u` in `epoch` come from `seed::rng(run_seed, [NEGATIVES, u, epoch])`,
/// so passing a new epoch resamples them and a fixed epoch reproduces them.
pub fn build_preference_samples(split: &SplitDataset, k: usize, run_seed: u64, epoch: u64) -> Result<Vec<PreferenceSample>> {
    build_preference_samples_with(split, k, run_seed, epoch, &UniformSampler)
}

pub fn build_preference_samples_with(
    split: &SplitDataset,
    k: usize,
    run_seed: u64,
    epoch: u64,
    sampler: &dyn NegativeSampler,
) -> Result<Vec<PreferenceSample>> {
    if k == 0 {
        return Err(Error::Config("number of negatives must be ≥ 1".into()));
    }
    let per_user: Vec<Result<Vec<PreferenceSample>>> = (0..split.users())
        .into_par_iter()
        .map(|user| {
            let seq = split.sequence(user);
            let train_end = split.bounds[user].train_end;
            if train_end < 2 {
                return Ok(Vec::new());
            }
            let pool = non_interacted(split.item_count(), &seq.items);
            if pool.len() < k {
                return Err(Error::InsufficientNegatives {
                    user: seq.user_id,
                    requested: k,
                    available: pool.len(),
                });
            }
            let mut rng = seed::rng(run_seed, &[stream::NEGATIVES, user as u64, epoch]);
            Ok((1..train_end)
                .map(|t| PreferenceSample {
                    user,
                    user_id: seq.user_id,
                    history: seq.items[..t].to_vec(),
                    positive: seq.items[t],
                    negatives: sampler.sample(&pool, k, &mut rng),
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for samples in per_user {
        out.extend(samples?);
    }
    Ok(out)
}

/// The positive plus `negatives.len()` sampled non-interacted items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub positive: usize,
    pub negatives: Vec<usize>,
}

impl CandidateSet {
    /// Positive first, then negatives.
    pub fn items(&self) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.len());
        c.push(self.positive);
        c.extend_from_slice(&self.negatives);
        c
    }

    pub fn len(&self) -> usize {
        self.negatives.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Uniformly samples `size` items the user never interacted with and adds the positive.
pub fn build_candidate_set<R: Rng + ?Sized>(interacted: &[usize], positive: usize, item_count: usize, size: usize, rng: &mut R) -> Result<CandidateSet> {
    let mut pool = non_interacted(item_count, interacted);
    pool.retain(|&i| i != positive);
    if pool.len() < size {
        return Err(Error::Config(format!(
            "candidate pool has {} non-interacted items, {size} requested",
            pool.len()
        )));
    }
    let negatives = index::sample(rng, pool.len(), size).into_iter().map(|i| pool[i]).collect();
    Ok(CandidateSet { positive, negatives })
}

/// A held-out prediction with its candidate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub user_id: u64,
    pub history: Vec<usize>,
    pub candidates: CandidateSet,
}

/// Candidate sets (`negatives` sampled items plus the positive) for every
/// held-out position of `part`, seeded per (user, position).
pub fn build_eval_cases(split: &SplitDataset, part: Part, negatives: usize, eval_seed: u64) -> Result<Vec<EvalCase>> {
    split
        .held_out(part)
        .into_par_iter()
        .map(|h| {
            let seq = split.sequence(h.user);
            let mut rng = seed::rng(eval_seed, &[stream::EVAL, h.user as u64, h.position as u64]);
            Ok(EvalCase {
                user: h.user,
                user_id: seq.user_id,
                history: split.history(h).to_vec(),
                candidates: build_candidate_set(&seq.items, split.target(h), split.item_count(), negatives, &mut rng)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub interactions_per_user: usize,
    pub seed: u64,
    /// Multiplier on `u · v` when turning ground-truth vectors into choice rewards.
    pub reward_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            dim: 8,
            interactions_per_user: 30,
            seed: 0,
            reward_scale: DEFAULT_REWARD_SCALE,
        }
    }
}

/// Default inverse temperature of the synthetic choice model. With vectors
/// drawn at sd `1/√dim`, raw dot products have sd ≈ `1/√dim`; this scale
/// makes the generated choices sharp enough to be learnable.
pub const DEFAULT_REWARD_SCALE: f64 = 16.0;

/// Hidden user and item vectors behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dim: usize,
    pub reward_scale: f64,
    pub item_vectors: Vec<f64>,
    pub user_vectors: Vec<f64>,
}

impl GroundTruth {
    pub fn item_count(&self) -> usize {
        self.item_vectors.len() / self.dim
    }

    pub fn users(&self) -> usize {
        self.user_vectors.len() / self.dim
    }

    pub fn reward(&self, user: usize, item: usize) -> f64 {
        let u = &self.user_vectors[user * self.dim..(user + 1) * self.dim];
        let v = &self.item_vectors[item * self.dim..(item + 1) * self.dim];
        self.reward_scale * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `PALN1` header of kind ground-truth, then item vectors, then user vectors.
    /// The reward scale is not stored.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_header(
            w,
            codec::Header {
                kind: codec::Kind::GroundTruth,
                item_count: self.item_count() as u64,
                dim: self.dim as u64,
            },
        )?;
        codec::write_f64s(w, &self.item_vectors)?;
        codec::write_f64s(w, &self.user_vectors)
    }

    pub fn read<R: Read>(r: &mut R, reward_scale: f64) -> Result<Self> {
        let h = codec::read_header(r)?;
        if h.kind != codec::Kind::GroundTruth {
            return Err(Error::Format("not a ground-truth file".into()));
        }
        let dim = h.dim as usize;
        let item_vectors = codec::read_f64s(r, h.item_count as usize * dim)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if dim == 0 || rest.len() % (8 * dim) != 0 {
            return Err(Error::Format("user vector block is not a whole number of rows".into()));
        }
        let user_vectors = codec::read_f64s(&mut rest.as_slice(), rest.len() / 8)?;
        Ok(Self {
            dim,
            reward_scale,
            item_vectors,
            user_vectors,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// Generates interaction sequences from a known Plackett-Luce preference model:
/// each next interaction is a top-choice draw over the user's unconsumed items
/// with rewards `reward_scale · u · v`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.users == 0 || cfg.items < 2 || cfg.dim == 0 || cfg.interactions_per_user == 0 {
        return Err(Error::Config("synthetic counts must be positive (items ≥ 2)".into()));
    }
    if cfg.interactions_per_user > cfg.items {
        return Err(Error::Config(format!(
            "interactions_per_user ({}) exceeds items ({})",
            cfg.interactions_per_user, cfg.items
        )));
    }
    let mut rng = seed::rng(cfg.seed, &[stream::DATA]);
    let normal = Normal::new(0.0, 1.0 / (cfg.dim as f64).sqrt()).expect("positive sd");
    let item_vectors: Vec<f64> = (0..cfg.items * cfg.dim).map(|_| normal.sample(&mut rng)).collect();
    let user_vectors: Vec<f64> = (0..cfg.users * cfg.dim).map(|_| normal.sample(&mut rng)).collect();
    let truth = GroundTruth {
        dim: cfg.dim,
        reward_scale: cfg.reward_scale,
        item_vectors,
        user_vectors,
    };
    let sequences = (0..cfg.users)
        .map(|u| {
            let mut remaining: Vec<usize> = (0..cfg.items).collect();
            let mut items = Vec::with_capacity(cfg.interactions_per_user);
            for _ in 0..cfg.interactions_per_user {
                let pick = sample_proportional(remaining.iter().map(|&i| truth.reward(u, i)), &mut rng);
                items.push(remaining.remove(pick));
            }
            InteractionSequence {
                user_id: u as u64,
                timestamps: (0..items.len() as i64).collect(),
                items,
            }
        })
        .collect();
    Ok(SynthData {
        dataset: Dataset {
            item_count: cfg.items,
            sequences,
        },
        truth,
    })
}
