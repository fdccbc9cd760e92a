//! Surface extraction from label maps: candidate crossings, duplicate
//! adjudication and nearest-column imputation (the `SEG` pipeline).

use crate::error::{Error, Result};
use crate::fcn::predict_labels;
use crate::model::{ClassProbabilityMap, LabelMap, SurfaceSet, NUM_SURFACES, SURFACE_IDS};

/// Axial rows where each surface's band boundary is crossed, per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    height: usize,
    width: usize,
    /// `rows[surface][column]`, ascending.
    rows: Vec<Vec<Vec<usize>>>,
}

impl CandidateSet {
    pub fn new(height: usize, width: usize) -> Self {
        CandidateSet {
            height,
            width,
            rows: vec![vec![Vec::new(); width]; NUM_SURFACES],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, surface: usize, column: usize) -> &[usize] {
        &self.rows[surface][column]
    }

    /// Per-column candidate lists of one surface.
    pub fn surface(&self, surface: usize) -> &[Vec<usize>] {
        &self.rows[surface]
    }

    /// Inserts a candidate keeping the list sorted; out-of-range rows are ignored.
    pub fn push(&mut self, surface: usize, column: usize, row: usize) {
        if row >= self.height {
            return;
        }
        let list = &mut self.rows[surface][column];
        let at = list.partition_point(|&r| r < row);
        list.insert(at, row);
    }

    pub fn count(&self, surface: usize) -> usize {
        self.rows[surface].iter().map(Vec::len).sum()
    }
}

/// A candidate for surface `k` (boundary between classes `k` and `k + 1`)
/// is each row `r` with `label(r - 1) <= k < label(r)` scanning down; row 0
/// counts when `label(0) > k`.
pub fn extract_candidates(labels: &LabelMap) -> CandidateSet {
    let (h, w) = labels.shape();
    let mut out = CandidateSet::new(h, w);
    for c in 0..w {
        let mut prev = 0u8;
        for r in 0..h {
            let cur = labels.at(r, c);
            if cur > prev {
                for k in prev..cur.min(NUM_SURFACES as u8) {
                    out.rows[k as usize][c].push(r);
                }
            }
            prev = cur;
        }
    }
    out
}

/// Output of [`adjudicate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adjudication {
    pub surfaces: SurfaceSet,
    /// Ids of surfaces with no candidate anywhere; left invalid.
    pub unresolved: Vec<u8>,
}

/// Resolution order: surfaces 2, 4, 6, 11, then 1 (anchored on surface 2).
const ORDER: [usize; NUM_SURFACES] = [1, 2, 3, 4, 0];

/// Picks one row per (surface, column). Duplicates go to the candidate
/// nearest the already-resolved neighbouring surface in that column (ties to
/// the smaller row); columns without candidates copy the nearest column that
/// had one (ties to the smaller column index).
pub fn adjudicate(candidates: &CandidateSet) -> Adjudication {
    let width = candidates.width;
    let mut surfaces = SurfaceSet::empty(width);
    let mut resolved = [false; NUM_SURFACES];
    let mut unresolved = Vec::new();

    for &k in &ORDER {
        let anchor_surface = if k == 0 {
            (1..NUM_SURFACES).find(|&j| resolved[j])
        } else {
            (1..k).rev().find(|&j| resolved[j])
        };
        let mut direct: Vec<Option<f64>> = Vec::with_capacity(width);
        for c in 0..width {
            let list = candidates.get(k, c);
            let pick = match list {
                [] => None,
                [only] => Some(*only),
                many => {
                    let anchor = match anchor_surface {
                        Some(j) => surfaces.get(j, c),
                        // Surface 2 before surface 1: use an unambiguous surface-1 crossing if present.
                        None if k > 0 => match candidates.get(0, c) {
                            [only] => Some(*only as f64),
                            _ => None,
                        },
                        None => None,
                    };
                    Some(match anchor {
                        Some(a) => nearest_row(many, a),
                        None => many[0],
                    })
                }
            };
            direct.push(pick.map(|r| r as f64));
        }
        if direct.iter().all(Option::is_none) {
            unresolved.push(SURFACE_IDS[k]);
            continue;
        }
        for (c, v) in impute_nearest(&direct).into_iter().enumerate() {
            surfaces.set(k, c, v);
        }
        resolved[k] = true;
    }
    unresolved.sort_unstable();
    Adjudication { surfaces, unresolved }
}

fn nearest_row(sorted: &[usize], anchor: f64) -> usize {
    let mut best = sorted[0];
    let mut best_d = (best as f64 - anchor).abs();
    for &r in &sorted[1..] {
        let d = (r as f64 - anchor).abs();
        if d < best_d {
            best = r;
            best_d = d;
        }
    }
    best
}

/// Fills `None` entries from the nearest `Some` entry; at least one must exist.
pub(crate) fn impute_nearest(values: &[Option<f64>]) -> Vec<f64> {
    let n = values.len();
    let mut left: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if values[i].is_some() {
            last = Some(i);
        }
        left[i] = last;
    }
    let mut right: Vec<Option<usize>> = vec![None; n];
    let mut next = None;
    for i in (0..n).rev() {
        if values[i].is_some() {
            next = Some(i);
        }
        right[i] = next;
    }
    (0..n)
        .map(|i| {
            let src = match (left[i], right[i]) {
                (Some(l), Some(r)) => {
                    if i - l <= r - i {
                        l
                    } else {
                        r
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => unreachable!("impute_nearest needs at least one value"),
            };
            values[src].expect("source index holds a value")
        })
        .collect()
}

/// Argmax labels, candidate crossings, adjudication and imputation.
pub fn seg_pipeline(probs: &ClassProbabilityMap) -> Result<SurfaceSet> {
    let labels = predict_labels(probs);
    let adj = adjudicate(&extract_candidates(&labels));
    if adj.unresolved.is_empty() {
        Ok(adj.surfaces)
    } else {
        Err(Error::UnresolvedSurfaces {
            surfaces: adj.unresolved,
            partial: Box::new(adj.surfaces),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{one_hot, rasterize_surfaces, Grid, NUM_CLASSES};

    fn column_labels(col: &[u8]) -> LabelMap {
        Grid::from_vec(col.len(), 1, col.to_vec()).unwrap()
    }

    #[test]
    fn clean_map_gives_ceiling_of_positions() {
        let s = SurfaceSet::from_rows(vec![
            vec![3.0, 3.2],
            vec![5.5, 6.0],
            vec![8.0, 8.9],
            vec![9.1, 10.0],
            vec![12.0, 12.0],
        ])
        .unwrap();
        let labels = rasterize_surfaces(&s, 16, 2).unwrap();
        let cands = extract_candidates(&labels);
        for k in 0..NUM_SURFACES {
            for c in 0..2 {
                let expected = s.get(k, c).unwrap().ceil() as usize;
                assert_eq!(cands.get(k, c), &[expected]);
            }
        }
    }

    #[test]
    fn island_gives_two_crossings() {
        let labels = column_labels(&[0, 0, 1, 1, 2, 2, 1, 1, 2, 2, 5]);
        let cands = extract_candidates(&labels);
        assert_eq!(cands.get(1, 0), &[4, 8]);
        assert_eq!(cands.get(0, 0), &[2]);

        let labels = column_labels(&[0, 1, 2, 3, 2, 3, 4, 5]);
        assert_eq!(extract_candidates(&labels).get(2, 0), &[3, 5]);
    }

    #[test]
    fn background_column_has_no_candidates() {
        let cands = extract_candidates(&column_labels(&[0; 12]));
        assert!((0..NUM_SURFACES).all(|k| cands.get(k, 0).is_empty()));
    }

    #[test]
    fn jump_crosses_several_boundaries_at_once() {
        let cands = extract_candidates(&column_labels(&[3, 3, 5]));
        assert_eq!(cands.get(0, 0), &[0]);
        assert_eq!(cands.get(2, 0), &[0]);
        assert_eq!(cands.get(3, 0), &[2]);
    }

    fn single_column(k: usize, rows: &[usize]) -> CandidateSet {
        let mut c = CandidateSet::new(100, 1);
        for &r in rows {
            c.push(k, 0, r);
        }
        c
    }

    #[test]
    fn duplicate_goes_to_candidate_nearest_prior_surface() {
        let mut cands = single_column(2, &[20, 40]);
        cands.push(1, 0, 18);
        let adj = adjudicate(&cands);
        assert_eq!(adj.surfaces.get(2, 0), Some(20.0));

        // Surface 1 is adjudicated against surface 2.
        let mut cands = single_column(0, &[5, 30]);
        cands.push(1, 0, 27);
        assert_eq!(adjudicate(&cands).surfaces.get(0, 0), Some(30.0));

        // Equidistant: smaller row.
        let mut cands = single_column(2, &[14, 22]);
        cands.push(1, 0, 18);
        assert_eq!(adjudicate(&cands).surfaces.get(2, 0), Some(14.0));
    }

    #[test]
    fn missing_columns_copy_nearest_column() {
        let mut cands = CandidateSet::new(100, 10);
        cands.push(3, 4, 30);
        cands.push(3, 9, 36);
        let adj = adjudicate(&cands);
        assert_eq!(adj.surfaces.get(3, 5), Some(30.0));
        assert_eq!(adj.surfaces.get(3, 8), Some(36.0));
        assert_eq!(adj.surfaces.get(3, 0), Some(30.0));

        let mut cands = CandidateSet::new(100, 7);
        cands.push(3, 4, 30);
        cands.push(3, 6, 50);
        assert_eq!(adjudicate(&cands).surfaces.get(3, 5), Some(30.0));
    }

    #[test]
    fn unresolvable_surfaces_are_reported() {
        let mut cands = CandidateSet::new(50, 3);
        cands.push(1, 1, 10);
        let adj = adjudicate(&cands);
        assert_eq!(adj.unresolved, vec![1, 4, 6, 11]);
        assert!(adj.surfaces.validity(1).iter().all(|&v| v));
        assert!(adj.surfaces.validity(0).iter().all(|&v| !v));

        let err = seg_pipeline(&ClassProbabilityMap::uniform(NUM_CLASSES, 10, 4)).unwrap_err();
        match err {
            Error::UnresolvedSurfaces { surfaces, .. } => assert_eq!(surfaces, SURFACE_IDS.to_vec()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn flipped_pixel_is_repaired() {
        let truth = SurfaceSet::constant([4.0, 8.0, 12.0, 16.0, 20.0], 6);
        let mut labels = rasterize_surfaces(&truth, 24, 6).unwrap();
        // class-2 speck inside the class-3 band of column 2
        labels.set(14, 2, 2);
        let cands = extract_candidates(&labels);
        assert_eq!(cands.get(2, 2), &[12, 15]);
        let out = seg_pipeline(&one_hot(&labels, NUM_CLASSES)).unwrap();
        assert_eq!(out, truth);
        assert!(crate::model::validate_surface_ordering(&out).ordered);
    }

    #[test]
    fn impute_tie_goes_left() {
        let v = impute_nearest(&[None, Some(1.0), None, Some(3.0), None, None]);
        assert_eq!(v, vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0]);
    }
}
