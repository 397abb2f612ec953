//! Euclidean gallery ranking and the Recall@K / AP metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Drone,
    Satellite,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::Drone => "drone",
            View::Satellite => "satellite",
        }
    }

    pub fn parse(s: &str) -> Option<View> {
        match s {
            "drone" => Some(View::Drone),
            "satellite" => Some(View::Satellite),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    DroneToSatellite,
    SatelliteToDrone,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::DroneToSatellite => "drone-to-satellite",
            Direction::SatelliteToDrone => "satellite-to-drone",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "drone-to-satellite" | "d2s" => Some(Direction::DroneToSatellite),
            "satellite-to-drone" | "s2d" => Some(Direction::SatelliteToDrone),
            _ => None,
        }
    }

    pub fn query_view(self) -> View {
        match self {
            Direction::DroneToSatellite => View::Drone,
            Direction::SatelliteToDrone => View::Satellite,
        }
    }

    pub fn gallery_view(self) -> View {
        match self {
            Direction::DroneToSatellite => View::Satellite,
            Direction::SatelliteToDrone => View::Drone,
        }
    }
}

/// A set of labelled descriptors from one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    dim: usize,
    descriptors: Vec<f64>,
    ids: Vec<usize>,
    view: View,
}

impl GalleryIndex {
    /// `descriptors` is row-major `ids.len() x dim`.
    pub fn new(dim: usize, descriptors: Vec<f64>, ids: Vec<usize>, view: View) -> Result<Self> {
        if ids.is_empty() || dim == 0 {
            return Err(Error::EmptyInput);
        }
        if descriptors.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} descriptors of dimension {}",
                descriptors.len(),
                ids.len(),
                dim
            )));
        }
        Ok(Self {
            dim,
            descriptors,
            ids,
            view,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], ids: Vec<usize>, view: View) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("descriptor dimensions differ".into()));
        }
        Self::new(dim, rows.concat(), ids, view)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    /// Position in the gallery.
    pub index: usize,
    pub id: usize,
    pub distance: f64,
}

/// Gallery entries by ascending L2 distance; equal distances keep gallery order.
pub fn rank_gallery(query: &[f64], index: &GalleryIndex) -> Result<Vec<Ranked>> {
    if query.len() != index.dim {
        return Err(Error::Shape(format!(
            "query dimension {} does not match gallery dimension {}",
            query.len(),
            index.dim
        )));
    }
    let mut ranked: Vec<Ranked> = (0..index.len())
        .map(|i| {
            let d2: f64 = query
                .iter()
                .zip(index.descriptor(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ranked {
                index: i,
                id: index.ids[i],
                distance: math::sqrt(d2),
            }
        })
        .collect();
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(ranked)
}

/// Fraction of queries whose first true match is within the top `k` (ranks are 1-based).
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidK);
    }
    if ranks.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean over relevant positions of the precision at that position.
pub fn average_precision(relevant: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, _) in relevant.iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (i + 1) as f64;
    }
    if hits == 0 {
        return Err(Error::NoGroundTruth);
    }
    Ok(sum / hits as f64)
}

/// Cutoff used for the top-1% recall: `max(1, round(M / 100))`.
pub fn top1percent_k(gallery_len: usize) -> usize {
    (math::round(gallery_len as f64 / 100.0) as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOutcome {
    pub query: usize,
    pub id: usize,
    /// 1-based rank of the first true match.
    pub first_rank: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub gallery_size: usize,
    pub outcomes: Vec<QueryOutcome>,
    /// Queries whose class has no entry in the gallery.
    pub excluded: Vec<usize>,
    pub recall_at: Vec<(usize, f64)>,
    pub top1percent_k: usize,
    pub recall_top1percent: f64,
    pub ap_mean: f64,
}

impl RetrievalReport {
    pub const KS: [usize; 3] = [1, 5, 10];

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.iter().find(|(kk, _)| *kk == k).map(|&(_, v)| v)
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.outcomes.iter().map(|o| o.first_rank).collect()
    }

    /// Machine-readable `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.recall_at {
            let _ = writeln!(s, "recall@{}={:.6}", k, v);
        }
        let _ = writeln!(s, "recall@top1percent={:.6}", self.recall_top1percent);
        let _ = writeln!(s, "ap={:.6}", self.ap_mean);
        let _ = writeln!(s, "direction={}", self.direction.name());
        let _ = writeln!(s, "queries={}", self.outcomes.len());
        let _ = writeln!(s, "excluded={}", self.excluded.len());
        let _ = writeln!(s, "gallery={}", self.gallery_size);
        s
    }

    /// Human-readable summary table, metrics in percent.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({} queries, {} gallery)",
            self.direction.name(),
            self.outcomes.len(),
            self.gallery_size
        );
        let _ = writeln!(s, "{:<18} {:>8}", "metric", "value");
        for (k, v) in &self.recall_at {
            let _ = writeln!(s, "{:<18} {:>8.2}", format!("R@{}", k), 100.0 * v);
        }
        let _ = writeln!(
            s,
            "{:<18} {:>8.2}",
            format!("R@top1% (K={})", self.top1percent_k),
            100.0 * self.recall_top1percent
        );
        let _ = writeln!(s, "{:<18} {:>8.2}", "AP", 100.0 * self.ap_mean);
        if !self.excluded.is_empty() {
            let _ = writeln!(s, "{} queries excluded: class absent from gallery", self.excluded.len());
        }
        s
    }
}

/// Ranks every query against the gallery and aggregates Recall@{1,5,10},
/// Recall@top-1% and the per-query mean AP.
pub fn evaluate(queries: &GalleryIndex, gallery: &GalleryIndex, direction: Direction) -> Result<RetrievalReport> {
    for (set, expected) in [(queries, direction.query_view()), (gallery, direction.gallery_view())] {
        if set.view != expected {
            return Err(Error::WrongGalleryView {
                expected: expected.name(),
                found: set.view.name(),
            });
        }
    }
    let mut outcomes = Vec::new();
    let mut excluded = Vec::new();
    for q in 0..queries.len() {
        let id = queries.ids[q];
        let ranked = rank_gallery(queries.descriptor(q), gallery)?;
        let flags: Vec<bool> = ranked.iter().map(|r| r.id == id).collect();
        match flags.iter().position(|&f| f) {
            None => excluded.push(q),
            Some(pos) => outcomes.push(QueryOutcome {
                query: q,
                id,
                first_rank: pos + 1,
                ap: average_precision(&flags)?,
            }),
        }
    }
    if outcomes.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let ranks: Vec<usize> = outcomes.iter().map(|o| o.first_rank).collect();
    let recall_at = RetrievalReport::KS
        .iter()
        .map(|&k| Ok((k, recall_at_k(&ranks, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let k1 = top1percent_k(gallery.len());
    Ok(RetrievalReport {
        direction,
        gallery_size: gallery.len(),
        recall_top1percent: recall_at_k(&ranks, k1)?,
        top1percent_k: k1,
        ap_mean: outcomes.iter().map(|o| o.ap).sum::<f64>() / outcomes.len() as f64,
        recall_at,
        outcomes,
        excluded,
    })
}
