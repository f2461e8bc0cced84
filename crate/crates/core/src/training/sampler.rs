use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{SamplerConfig, SamplingStrategy};
use crate::corpus::{Manifest, Utterance};
use crate::{Error, Result};

/// Stateless utterance sampler: draw `i` depends only on the seed and `i`,
/// so a stream can be resumed from any position.
#[derive(Debug, Clone)]
pub struct Sampler {
    utterances: Vec<Utterance>,
    /// Utterance indices grouped by speaker, speakers in sorted order.
    by_speaker: Vec<(String, Vec<usize>)>,
    cfg: SamplerConfig,
}

impl Sampler {
    /// Pools every utterance of `datasets`.
    pub fn new(datasets: &[&Manifest], cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let utterances: Vec<Utterance> = datasets
            .iter()
            .flat_map(|m| m.utterances().iter().cloned())
            .collect();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, u) in utterances.iter().enumerate() {
            groups.entry(u.speaker_id.clone()).or_default().push(i);
        }
        if groups.is_empty() {
            return Err(Error::InvalidArgument("sampler needs at least one speaker".into()));
        }
        Ok(Self {
            utterances,
            by_speaker: groups.into_iter().collect(),
            cfg,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.by_speaker.iter().map(|(s, _)| s.as_str())
    }

    /// Index (into [`Sampler::utterances`]) of draw number `i`.
    pub fn draw_index(&self, i: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(i);
        match self.cfg.strategy {
            SamplingStrategy::Uniform => rng.gen_range(0..self.utterances.len()),
            SamplingStrategy::Balanced => {
                let (_, members) = &self.by_speaker[rng.gen_range(0..self.by_speaker.len())];
                members[rng.gen_range(0..members.len())]
            }
        }
    }

    pub fn draw(&self, i: u64) -> &Utterance {
        &self.utterances[self.draw_index(i)]
    }

    /// Indices for batch number `b`.
    pub fn batch_indices(&self, b: u64) -> Vec<usize> {
        let n = self.cfg.batch_size as u64;
        (b * n..(b + 1) * n).map(|i| self.draw_index(i)).collect()
    }

    /// Endless stream of draws starting at position `from`.
    pub fn stream(&self, from: u64) -> impl Iterator<Item = &Utterance> + '_ {
        (from..).map(move |i| self.draw(i))
    }
}

/// Sampler that picks a speaker uniformly, then one of their utterances uniformly.
pub fn balanced_sampler(datasets: &[&Manifest], seed: u64, batch_size: usize) -> Result<Sampler> {
    Sampler::new(
        datasets,
        SamplerConfig {
            strategy: SamplingStrategy::Balanced,
            seed,
            batch_size,
        },
    )
}

/// Union of both manifests. Speaker ids must not overlap; prefix one side
/// with [`Manifest::with_speaker_prefix`] when they might.
pub fn mixup_datasets(pretrain: &Manifest, fewshot: &Manifest) -> Result<Manifest> {
    if let Some(s) = fewshot.speakers().intersection(pretrain.speakers()).next() {
        return Err(Error::SpeakerCollision(s.clone()));
    }
    if fewshot.is_empty() {
        return Ok(pretrain.clone());
    }
    let all = pretrain
        .utterances()
        .iter()
        .chain(fewshot.utterances())
        .cloned()
        .collect();
    Manifest::new(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn manifest(spec: &[(&str, usize)]) -> Manifest {
        let mut utts = Vec::new();
        for (spk, n) in spec {
            for i in 0..*n {
                utts.push(
                    Utterance::new(PathBuf::from(format!("/{spk}/{i}.wav")), "ab", *spk, "en", 3.0).unwrap(),
                );
            }
        }
        Manifest::new(utts).unwrap()
    }

    #[test]
    fn single_speaker_stream() {
        let m = manifest(&[("a", 3)]);
        let s = balanced_sampler(&[&m], 1, 2).unwrap();
        assert!(s.stream(0).take(100).all(|u| u.speaker_id == "a"));
    }

    #[test]
    fn skewed_pair_is_balanced() {
        let m = manifest(&[("A", 100), ("B", 5)]);
        let s = balanced_sampler(&[&m], 7, 4).unwrap();
        let a = s.stream(0).take(10_000).filter(|u| u.speaker_id == "A").count();
        let f = a as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&f), "{f}");
        let uni = Sampler::new(
            &[&m],
            SamplerConfig {
                strategy: SamplingStrategy::Uniform,
                seed: 7,
                batch_size: 4,
            },
        )
        .unwrap();
        let a = uni.stream(0).take(10_000).filter(|u| u.speaker_id == "A").count();
        assert!(a > 9_000);
    }

    #[test]
    fn deterministic_and_resumable() {
        let m = manifest(&[("A", 10), ("B", 4), ("C", 1)]);
        let s = balanced_sampler(&[&m], 3, 4).unwrap();
        let full: Vec<usize> = (0..50).map(|i| s.draw_index(i)).collect();
        let again = balanced_sampler(&[&m], 3, 4).unwrap();
        let tail: Vec<usize> = (20..50).map(|i| again.draw_index(i)).collect();
        assert_eq!(&full[20..], &tail[..]);
        assert_eq!(s.batch_indices(1), full[4..8].to_vec());
    }

    #[test]
    fn mixup_union_and_collisions() {
        let pre = manifest(&[("p1", 3), ("p2", 2)]);
        let few = manifest(&[("f1", 1)]);
        let mixed = mixup_datasets(&pre, &few).unwrap();
        assert_eq!(mixed.len(), 6);
        assert_eq!(mixed.speakers().len(), 3);
        assert!(matches!(mixup_datasets(&pre, &pre), Err(Error::SpeakerCollision(_))));
        let empty = Manifest::new(vec![]).unwrap();
        assert_eq!(mixup_datasets(&pre, &empty).unwrap(), pre);
    }

    #[test]
    fn empty_speaker_set_is_an_error() {
        let empty = Manifest::new(vec![]).unwrap();
        assert!(balanced_sampler(&[&empty], 0, 1).is_err());
    }
}
