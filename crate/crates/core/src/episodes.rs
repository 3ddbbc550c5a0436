//! N-way K-shot episode sampling, episodic evaluation and the paired
//! ablation runner.
//!
//! Evaluation is split into two data-parallel passes: feature extraction for
//! every item any episode touches, then scoring of every episode. Results are
//! always assembled in item and episode order, so a run's output does not
//! depend on the [`Execution`] mode.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{extract_at_scale, fuse_scales, ScaleSet};
use crate::dataset::{Dataset, Item};
use crate::error::{Error, Result};
use crate::extractor::{Extractor, ExtractorConfig};
use crate::head::{compute_prototype, HeadConfig, PreparedPrototypes, Prototype};
use crate::image::resize_image;
use crate::tensor::{argmax, FeatureMap};

/// How data-parallel passes are executed. Without the `parallel` feature both
/// variants run sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub(crate) fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemRef {
    pub class: usize,
    pub index: usize,
}

/// One N-way K-shot task. Labels are episode-local class positions `0..n_way`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
    /// Dataset class index of each episode label.
    pub classes: Vec<usize>,
    pub support: Vec<(ItemRef, usize)>,
    pub queries: Vec<(ItemRef, usize)>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_extend(mut h: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

impl Episode {
    /// FNV-1a digest of the sampled classes and items, stable across platforms.
    pub fn digest(&self) -> u64 {
        let mut h = fnv_extend(
            FNV_OFFSET,
            [self.n_way, self.k_shot, self.q_queries].map(|v| v as u64),
        );
        h = fnv_extend(h, self.classes.iter().map(|&c| c as u64));
        for (r, label) in self.support.iter().chain(&self.queries) {
            h = fnv_extend(h, [r.class as u64, r.index as u64, *label as u64]);
        }
        h
    }
}

/// Digest of an ordered episode stream.
pub fn stream_digest(episodes: &[Episode]) -> u64 {
    fnv_extend(FNV_OFFSET, episodes.iter().map(Episode::digest))
}

pub fn sample_episode(
    dataset: &Dataset,
    n_way: usize,
    k_shot: usize,
    q_queries: usize,
    seed: u64,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 || q_queries == 0 {
        return Err(Error::Parameter(format!(
            "episode shape {n_way}-way {k_shot}-shot {q_queries}-query has a zero"
        )));
    }
    if dataset.num_classes() < n_way {
        return Err(Error::Sampling(format!(
            "{n_way}-way episodes need {n_way} classes, dataset has {}",
            dataset.num_classes()
        )));
    }
    let need = k_shot + q_queries;
    let short: Vec<String> = dataset
        .classes
        .iter()
        .filter(|c| c.items.len() < need)
        .map(|c| format!("{} ({})", c.name, c.items.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::Sampling(format!(
            "every class needs {need} items ({k_shot} support + {q_queries} query); short: {}",
            short.join(", ")
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = sample(&mut rng, dataset.num_classes(), n_way).into_vec();
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut queries = Vec::with_capacity(n_way * q_queries);
    for (label, &class) in classes.iter().enumerate() {
        let picks = sample(&mut rng, dataset.classes[class].items.len(), need).into_vec();
        for (n, index) in picks.into_iter().enumerate() {
            let entry = (ItemRef { class, index }, label);
            if n < k_shot {
                support.push(entry);
            } else {
                queries.push(entry);
            }
        }
    }
    Ok(Episode {
        n_way,
        k_shot,
        q_queries,
        classes,
        support,
        queries,
    })
}

/// Everything that defines an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
    pub num_episodes: usize,
    pub seed: u64,
    pub head: HeadConfig,
    pub scales: ScaleSet,
    pub extractor: ExtractorConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            q_queries: 15,
            num_episodes: 500,
            seed: 0,
            head: HeadConfig::default(),
            scales: ScaleSet::default(),
            extractor: ExtractorConfig::default(),
        }
    }
}

pub const TIE_BREAK: &str = "argmax ties resolve to the lowest class index";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub settings: EvalSettings,
    pub episode_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub stream_digest: u64,
}

impl EvalReport {
    pub fn num_episodes(&self) -> usize {
        self.episode_accuracies.len()
    }
}

/// Mean and 95% half-width `1.96·σ/√N` (population σ) of per-episode accuracies.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Sampled episode stream for a run; episode `i` uses the `i`-th draw of a
/// generator seeded with `settings.seed`.
pub fn sample_episodes(dataset: &Dataset, settings: &EvalSettings) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    (0..settings.num_episodes)
        .map(|_| {
            sample_episode(
                dataset,
                settings.n_way,
                settings.k_shot,
                settings.q_queries,
                rng.next_u64(),
            )
        })
        .collect()
}

/// Extracted maps of one item: the base-resolution map and, when needed, the
/// map at every scale pooled to the base grid.
#[derive(Debug, Clone)]
struct CachedItem {
    base: FeatureMap,
    scales: Vec<FeatureMap>,
}

struct FeatureCache {
    offsets: Vec<usize>,
    items: Vec<Option<CachedItem>>,
}

impl FeatureCache {
    fn build(
        dataset: &Dataset,
        episodes: &[Episode],
        settings: &EvalSettings,
        with_scales: bool,
        exec: Execution,
    ) -> Result<Self> {
        let mut offsets = Vec::with_capacity(dataset.num_classes());
        let mut total = 0;
        for c in &dataset.classes {
            offsets.push(total);
            total += c.items.len();
        }
        let needed: Vec<ItemRef> = episodes
            .iter()
            .flat_map(|e| e.support.iter().chain(&e.queries).map(|(r, _)| *r))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let extractors = [1usize, 3]
            .map(|ch| Extractor::new(&settings.extractor, ch))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let (grid, base) = if needed.iter().any(|r| matches!(dataset.item(r.class, r.index), Item::Image(_))) {
            (settings.scales.base_grid(&settings.extractor)?, settings.scales.base())
        } else {
            ((0, 0), settings.scales.base())
        };

        let computed = exec.map(needed.len(), |n| {
            let r = needed[n];
            match dataset.item(r.class, r.index) {
                Item::Features(map) => {
                    if with_scales {
                        return Err(Error::Config(format!(
                            "class {} holds precomputed features; multi-scale \
                             augmentation needs images",
                            dataset.classes[r.class].name
                        )));
                    }
                    Ok(CachedItem {
                        base: map.clone(),
                        scales: Vec::new(),
                    })
                }
                Item::Image(img) => {
                    let ex = &extractors[if img.channels() == 1 { 0 } else { 1 }];
                    let base_map = ex.extract(&resize_image(img, base.width, base.height)?)?;
                    let scales = if with_scales {
                        settings
                            .scales
                            .resolutions()
                            .iter()
                            .map(|&res| extract_at_scale(ex, img, res, grid))
                            .collect::<Result<Vec<_>>>()?
                    } else {
                        Vec::new()
                    };
                    Ok(CachedItem {
                        base: base_map,
                        scales,
                    })
                }
            }
        });

        let mut items = vec![None; total];
        for (r, item) in needed.iter().zip(computed) {
            items[offsets[r.class] + r.index] = Some(item?);
        }
        Ok(Self { offsets, items })
    }

    fn get(&self, r: ItemRef) -> &CachedItem {
        self.items[self.offsets[r.class] + r.index]
            .as_ref()
            .expect("every episode item is cached")
    }
}

fn episode_prototypes(
    episode: &Episode,
    cache: &FeatureCache,
    head: &HeadConfig,
    num_scales: usize,
) -> Result<Vec<Prototype>> {
    (0..episode.n_way)
        .map(|label| {
            let members = episode.support.iter().filter(|(_, l)| *l == label);
            if head.use_protoaug {
                let per_scale: Vec<Vec<FeatureMap>> = (0..num_scales)
                    .map(|s| members.clone().map(|(r, _)| cache.get(*r).scales[s].clone()).collect())
                    .collect();
                fuse_scales(&per_scale, label)
            } else {
                let maps: Vec<FeatureMap> = members.map(|(r, _)| cache.get(*r).base.clone()).collect();
                compute_prototype(&maps, label)
            }
        })
        .collect()
}

fn query_logits(
    protos: &PreparedPrototypes,
    item: &CachedItem,
    head: &HeadConfig,
) -> Result<Vec<f64>> {
    if !head.multiscale_queries {
        return protos.logits(&item.base, head);
    }
    let mut acc: Vec<f64> = Vec::new();
    for map in &item.scales {
        let l = protos.logits(map, head)?;
        if acc.is_empty() {
            acc = l;
        } else {
            acc.iter_mut().zip(l).for_each(|(a, b)| *a += b);
        }
    }
    let n = item.scales.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn episode_accuracy(
    episode: &Episode,
    cache: &FeatureCache,
    head: &HeadConfig,
    num_scales: usize,
) -> Result<f64> {
    let protos = PreparedPrototypes::new(&episode_prototypes(episode, cache, head, num_scales)?);
    let mut correct = 0usize;
    for (r, label) in &episode.queries {
        // argmax of logits equals argmax of their softmax, with the same tie-break
        if argmax(&query_logits(&protos, cache.get(*r), head)?) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / episode.queries.len() as f64)
}

/// Evaluates one head configuration per entry of `heads` over a single shared
/// episode stream.
pub fn evaluate_heads(
    dataset: &Dataset,
    settings: &EvalSettings,
    heads: &[HeadConfig],
    exec: Execution,
) -> Result<Vec<EvalReport>> {
    for h in heads {
        h.validate()?;
    }
    let episodes = sample_episodes(dataset, settings)?;
    let digest = stream_digest(&episodes);
    let with_scales = heads.iter().any(|h| h.use_protoaug || h.multiscale_queries);
    let cache = FeatureCache::build(dataset, &episodes, settings, with_scales, exec)?;
    let num_scales = settings.scales.resolutions().len();

    heads
        .iter()
        .map(|head| {
            let accs = exec
                .map(episodes.len(), |i| episode_accuracy(&episodes[i], &cache, head, num_scales))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let (mean_accuracy, ci95) = mean_ci95(&accs);
            Ok(EvalReport {
                label: head.label(),
                settings: EvalSettings {
                    head: head.clone(),
                    ..settings.clone()
                },
                episode_accuracies: accs,
                mean_accuracy,
                ci95,
                stream_digest: digest,
            })
        })
        .collect()
}

pub fn evaluate(dataset: &Dataset, settings: &EvalSettings, exec: Execution) -> Result<EvalReport> {
    let mut reports = evaluate_heads(dataset, settings, std::slice::from_ref(&settings.head), exec)?;
    Ok(reports.remove(0))
}

/// The four ablation rows in order: baseline, weight, weight+pow,
/// weight+pow+protoaug. k, τ, ω and query handling come from `base`.
pub fn ablation_heads(base: &HeadConfig) -> [HeadConfig; 4] {
    let row = |use_weight, use_pow, use_protoaug| HeadConfig {
        use_weight,
        use_pow,
        use_protoaug,
        ..base.clone()
    };
    [
        row(false, false, false),
        row(true, false, false),
        row(true, true, false),
        row(true, true, true),
    ]
}

/// Paired ablation: every row scores the same episode stream.
pub fn ablation_run(
    dataset: &Dataset,
    base: &EvalSettings,
    exec: Execution,
) -> Result<Vec<EvalReport>> {
    evaluate_heads(dataset, base, &ablation_heads(&base.head), exec)
}

/// Per-query τ = 1 logits for every sampled episode, for temperature fitting.
pub fn unit_logit_episodes(
    dataset: &Dataset,
    settings: &EvalSettings,
    exec: Execution,
) -> Result<Vec<crate::head::TauEpisode>> {
    let head = HeadConfig {
        tau: 1.0,
        ..settings.head.clone()
    };
    head.validate()?;
    let episodes = sample_episodes(dataset, settings)?;
    let with_scales = head.use_protoaug || head.multiscale_queries;
    let cache = FeatureCache::build(dataset, &episodes, settings, with_scales, exec)?;
    let num_scales = settings.scales.resolutions().len();
    exec.map(episodes.len(), |i| {
        let ep = &episodes[i];
        let protos = PreparedPrototypes::new(&episode_prototypes(ep, &cache, &head, num_scales)?);
        let mut unit_logits = Vec::with_capacity(ep.queries.len());
        let mut labels = Vec::with_capacity(ep.queries.len());
        for (r, label) in &ep.queries {
            unit_logits.push(query_logits(&protos, cache.get(*r), &head)?);
            labels.push(*label);
        }
        Ok(crate::head::TauEpisode {
            unit_logits,
            labels,
        })
    })
    .into_iter()
    .collect()
}
