//! Stain class tallies and the H-score.
//!
//! `H = 100 * (1*f_weak + 2*f_moderate + 3*f_strong)` where `f` are class
//! fractions over all nuclei of a compartment, unstained included. The score
//! lies in `[0, 300]`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keypoints::{Compartment, Keypoint};
use crate::stain::{measure_and_classify, StainClass, StainProfile};
use crate::tiling::Tile;

/// Nuclei per stain class for one compartment, indexed by [`StainClass`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StainCounts {
    pub none: u64,
    pub weak: u64,
    pub moderate: u64,
    pub strong: u64,
}

impl StainCounts {
    pub fn from_array(c: [u64; 4]) -> Self {
        Self {
            none: c[0],
            weak: c[1],
            moderate: c[2],
            strong: c[3],
        }
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.none, self.weak, self.moderate, self.strong]
    }

    pub fn get(&self, class: StainClass) -> u64 {
        self.as_array()[class.index()]
    }

    pub fn add(&mut self, class: StainClass, n: u64) {
        match class {
            StainClass::None => self.none += n,
            StainClass::Weak => self.weak += n,
            StainClass::Moderate => self.moderate += n,
            StainClass::Strong => self.strong += n,
        }
    }

    pub fn total(&self) -> u64 {
        self.none + self.weak + self.moderate + self.strong
    }

    /// `1*weak + 2*moderate + 3*strong`.
    pub fn weighted_sum(&self) -> u64 {
        self.weak + 2 * self.moderate + 3 * self.strong
    }

    pub fn fractions(&self) -> Option<[f64; 4]> {
        let total = self.total();
        (total > 0).then(|| self.as_array().map(|c| c as f64 / total as f64))
    }

    pub fn merge(&mut self, other: &StainCounts) {
        self.none += other.none;
        self.weak += other.weak;
        self.moderate += other.moderate;
        self.strong += other.strong;
    }
}

/// Stain tallies for both compartments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub stroma: StainCounts,
    pub epithelium: StainCounts,
}

impl ClassCounts {
    pub fn compartment(&self, c: Compartment) -> &StainCounts {
        match c {
            Compartment::Stroma => &self.stroma,
            Compartment::Epithelium => &self.epithelium,
        }
    }

    pub fn compartment_mut(&mut self, c: Compartment) -> &mut StainCounts {
        match c {
            Compartment::Stroma => &mut self.stroma,
            Compartment::Epithelium => &mut self.epithelium,
        }
    }

    pub fn record(&mut self, compartment: Compartment, class: StainClass) {
        self.compartment_mut(compartment).add(class, 1);
    }

    pub fn merge(mut self, other: ClassCounts) -> ClassCounts {
        self.stroma.merge(&other.stroma);
        self.epithelium.merge(&other.epithelium);
        self
    }
}

/// H-score of a compartment, or `None` when it holds no nuclei.
pub fn compute_hscore(counts: &StainCounts) -> Option<f64> {
    let total = counts.total();
    (total > 0).then(|| (100 * counts.weighted_sum()) as f64 / total as f64)
}

/// Score summary for one compartment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompartmentScore {
    pub compartment: Compartment,
    pub counts: StainCounts,
    /// `[none, weak, moderate, strong]`; absent for an empty compartment.
    pub fractions: Option<[f64; 4]>,
    pub hscore: Option<f64>,
    pub empty: bool,
}

impl CompartmentScore {
    pub fn new(compartment: Compartment, counts: StainCounts) -> Self {
        Self {
            compartment,
            counts,
            fractions: counts.fractions(),
            hscore: compute_hscore(&counts),
            empty: counts.total() == 0,
        }
    }
}

/// Where a report's numbers came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Provenance {
    pub slide_ids: Vec<String>,
    pub tile_count: usize,
    pub profile_id: String,
}

/// Per-compartment H-scores pooled over a set of tiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HScoreReport {
    pub compartments: Vec<CompartmentScore>,
    pub provenance: Provenance,
}

impl HScoreReport {
    pub fn from_counts(counts: &ClassCounts, provenance: Provenance) -> Self {
        Self {
            compartments: Compartment::ALL
                .iter()
                .map(|&c| CompartmentScore::new(c, *counts.compartment(c)))
                .collect(),
            provenance,
        }
    }

    pub fn compartment(&self, c: Compartment) -> &CompartmentScore {
        &self.compartments[c.index()]
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts {
            stroma: self.compartment(Compartment::Stroma).counts,
            epithelium: self.compartment(Compartment::Epithelium).counts,
        }
    }
}

/// Classifies every keypoint of one tile and tallies the classes.
pub fn count_tile(tile: &Tile, keypoints: &[Keypoint], profile: &StainProfile) -> Result<ClassCounts> {
    let mut counts = ClassCounts::default();
    for kp in keypoints {
        let m = measure_and_classify(&tile.image, kp, profile).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!(
                "tile {} (slide {}): {msg}",
                tile.tile_id, tile.slide_id
            )),
            other => other,
        })?;
        counts.record(kp.class, m.class);
    }
    Ok(counts)
}

/// Pools class counts over all tiles, then scores once per compartment.
pub fn score_tiles(items: &[(Tile, Vec<Keypoint>)], profile: &StainProfile) -> Result<HScoreReport> {
    let counts = items
        .par_iter()
        .map(|(tile, kps)| count_tile(tile, kps, profile))
        .try_reduce(ClassCounts::default, |a, b| Ok(a.merge(b)))?;
    let slide_ids: BTreeSet<&str> = items.iter().map(|(t, _)| t.slide_id.as_str()).collect();
    Ok(HScoreReport::from_counts(
        &counts,
        Provenance {
            slide_ids: slide_ids.into_iter().map(String::from).collect(),
            tile_count: items.len(),
            profile_id: profile.annotator_id.clone(),
        },
    ))
}
