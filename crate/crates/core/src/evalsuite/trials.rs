//! Seeded construction of verification, 1:2 matching, and retrieval trials
//! over an identity-disjoint partition.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FaaError, Result};
use crate::synthworld::VideoRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Verification,
    Matching,
    Retrieval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    V2F,
    F2V,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restriction {
    U,
    G,
}

/// Reference to one sample: video position within the partition plus the
/// sample position within that video's modality list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRef {
    pub video: usize,
    pub item: usize,
}

#[derive(Debug, Clone)]
pub struct VerificationTrial {
    pub face: SampleRef,
    pub voice: SampleRef,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct MatchingTrial {
    pub probe: SampleRef,
    pub candidates: [SampleRef; 2],
    pub answer: usize,
}

#[derive(Debug, Clone)]
pub struct RetrievalTrial {
    pub probe: SampleRef,
    /// Indices into the shared gallery.
    pub relevant: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub enum TrialData {
    Verification(Vec<VerificationTrial>),
    Matching(Vec<MatchingTrial>),
    Retrieval(Vec<RetrievalTrial>),
}

#[derive(Debug, Clone)]
pub struct TrialList {
    pub protocol: Protocol,
    pub direction: Direction,
    pub restriction: Restriction,
    pub seed: u64,
    /// All candidate-modality samples, retrieval only.
    pub gallery: Vec<SampleRef>,
    pub data: TrialData,
}

impl TrialList {
    pub fn len(&self) -> usize {
        match &self.data {
            TrialData::Verification(v) => v.len(),
            TrialData::Matching(v) => v.len(),
            TrialData::Retrieval(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct IdentityIndex {
    /// identity -> video positions
    videos: BTreeMap<u64, Vec<usize>>,
    /// identity -> group
    group: BTreeMap<u64, bool>,
    identities: Vec<u64>,
}

impl IdentityIndex {
    fn build(videos: &[VideoRecord]) -> Self {
        let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut group = BTreeMap::new();
        for (i, v) in videos.iter().enumerate() {
            map.entry(v.identity_id).or_default().push(i);
            group.insert(v.identity_id, v.group);
        }
        let identities = map.keys().copied().collect();
        Self {
            videos: map,
            group,
            identities,
        }
    }

    /// Identities eligible as trial anchors under a restriction: for G the
    /// identity's group must contain at least one other identity.
    fn anchors(&self, restriction: Restriction) -> Result<Vec<u64>> {
        match restriction {
            Restriction::U => {
                if self.identities.len() < 2 {
                    return Err(FaaError::Config(
                        "need >= 2 identities for cross-identity trials".into(),
                    ));
                }
                Ok(self.identities.clone())
            }
            Restriction::G => {
                let eligible: Vec<u64> = self
                    .identities
                    .iter()
                    .copied()
                    .filter(|id| {
                        self.identities
                            .iter()
                            .any(|other| other != id && self.group[other] == self.group[id])
                    })
                    .collect();
                if eligible.is_empty() {
                    return Err(FaaError::Config(
                        "no group holds >= 2 identities; same-group trials impossible".into(),
                    ));
                }
                Ok(eligible)
            }
        }
    }

    /// A different identity compatible with the restriction.
    fn imposter(&self, anchor: u64, restriction: Restriction, r: &mut impl Rng) -> u64 {
        let candidates: Vec<u64> = self
            .identities
            .iter()
            .copied()
            .filter(|id| {
                *id != anchor
                    && match restriction {
                        Restriction::U => true,
                        Restriction::G => self.group[id] == self.group[&anchor],
                    }
            })
            .collect();
        candidates[r.random_range(0..candidates.len())]
    }
}

fn sample_ref(
    videos: &[VideoRecord],
    index: &IdentityIndex,
    identity: u64,
    faces: bool,
    r: &mut impl Rng,
) -> SampleRef {
    let vids = &index.videos[&identity];
    let video = vids[r.random_range(0..vids.len())];
    let count = if faces {
        videos[video].faces.len()
    } else {
        videos[video].voices.len()
    };
    SampleRef {
        video,
        item: r.random_range(0..count),
    }
}

/// All samples of one modality in deterministic (video, item) order.
fn full_gallery(videos: &[VideoRecord], faces: bool) -> Vec<SampleRef> {
    let mut out = Vec::new();
    for (video, v) in videos.iter().enumerate() {
        let count = if faces { v.faces.len() } else { v.voices.len() };
        for item in 0..count {
            out.push(SampleRef { video, item });
        }
    }
    out
}

/// Build a seeded trial list. Sampling avoids duplicate trials while the
/// pool allows it.
pub fn build_trials(
    videos: &[VideoRecord],
    protocol: Protocol,
    direction: Direction,
    restriction: Restriction,
    count: usize,
    seed: u64,
) -> Result<TrialList> {
    if videos.is_empty() {
        return Err(FaaError::Config("empty partition".into()));
    }
    if count == 0 {
        return Err(FaaError::Config("trial count must be >= 1".into()));
    }
    let index = IdentityIndex::build(videos);
    let anchors = index.anchors(restriction)?;
    let mut r = crate::rng::seeded(seed);

    let data = match protocol {
        Protocol::Verification => {
            if direction != Direction::Symmetric {
                return Err(FaaError::Config(
                    "verification trials are symmetric".into(),
                ));
            }
            let mut trials = Vec::with_capacity(2 * count);
            let mut seen: BTreeSet<(SampleRef, SampleRef, bool)> = BTreeSet::new();
            for label in [true, false] {
                let mut made = 0;
                let mut attempts = 0;
                while made < count {
                    attempts += 1;
                    let a = anchors[r.random_range(0..anchors.len())];
                    let b = if label {
                        a
                    } else {
                        index.imposter(a, restriction, &mut r)
                    };
                    let face = sample_ref(videos, &index, a, true, &mut r);
                    let voice = sample_ref(videos, &index, b, false, &mut r);
                    if attempts < 50 * count && !seen.insert((face, voice, label)) {
                        continue;
                    }
                    trials.push(VerificationTrial { face, voice, label });
                    made += 1;
                }
            }
            TrialData::Verification(trials)
        }
        Protocol::Matching => {
            if direction == Direction::Symmetric {
                return Err(FaaError::Config(
                    "matching trials need a direction".into(),
                ));
            }
            let probe_is_voice = direction == Direction::V2F;
            let mut trials = Vec::with_capacity(count);
            let mut seen: BTreeSet<(SampleRef, SampleRef, SampleRef)> = BTreeSet::new();
            let mut attempts = 0;
            while trials.len() < count {
                attempts += 1;
                let a = anchors[r.random_range(0..anchors.len())];
                let b = index.imposter(a, restriction, &mut r);
                let probe = sample_ref(videos, &index, a, !probe_is_voice, &mut r);
                let correct = sample_ref(videos, &index, a, probe_is_voice, &mut r);
                let imposter = sample_ref(videos, &index, b, probe_is_voice, &mut r);
                if attempts < 50 * count && !seen.insert((probe, correct, imposter)) {
                    continue;
                }
                let answer = r.random_range(0..2usize);
                let candidates = if answer == 0 {
                    [correct, imposter]
                } else {
                    [imposter, correct]
                };
                trials.push(MatchingTrial {
                    probe,
                    candidates,
                    answer,
                });
            }
            TrialData::Matching(trials)
        }
        Protocol::Retrieval => {
            if direction == Direction::Symmetric {
                return Err(FaaError::Config(
                    "retrieval trials need a direction".into(),
                ));
            }
            let gallery_is_faces = direction == Direction::V2F;
            let gallery = full_gallery(videos, gallery_is_faces);
            let mut probes = full_gallery(videos, !gallery_is_faces);
            probes.shuffle(&mut r);
            let take = count.min(probes.len());
            let trials = probes[..take]
                .iter()
                .map(|probe| {
                    let probe_identity = videos[probe.video].identity_id;
                    let relevant: BTreeSet<usize> = gallery
                        .iter()
                        .enumerate()
                        .filter(|(_, g)| videos[g.video].identity_id == probe_identity)
                        .map(|(i, _)| i)
                        .collect();
                    RetrievalTrial {
                        probe: *probe,
                        relevant,
                    }
                })
                .collect();
            return Ok(TrialList {
                protocol,
                direction,
                restriction,
                seed,
                gallery,
                data: TrialData::Retrieval(trials),
            });
        }
    };

    Ok(TrialList {
        protocol,
        direction,
        restriction,
        seed,
        gallery: Vec::new(),
        data,
    })
}
