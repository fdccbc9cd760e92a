//! The SEG pipeline on a corrupted label map: candidate crossings, duplicate
//! adjudication and nearest-column imputation.
//!
//! ```text
//! cargo run --example seg_pipeline
//! ```

use octseg::extraction::{adjudicate, extract_candidates};
use octseg::model::{rasterize_surfaces, SurfaceSet, SURFACE_IDS};

fn main() -> octseg::Result<()> {
    let (h, w) = (40, 12);
    let truth = SurfaceSet::from_rows(
        [6.0, 12.0, 19.0, 25.0, 33.0]
            .iter()
            .map(|&base| (0..w).map(|c| base + (c as f64 / 3.0).floor()).collect())
            .collect(),
    )?;
    let mut labels = rasterize_surfaces(&truth, h, w)?;
    // A speck of layer 2 inside layer 3 and one column missing layer 4.
    labels.set(22, 4, 2);
    for r in 0..h {
        if labels.at(r, 8) == 4 {
            labels.set(r, 8, 3);
        }
    }
    let cands = extract_candidates(&labels);
    for (k, id) in SURFACE_IDS.iter().enumerate() {
        let multi: Vec<String> = (0..w)
            .filter(|&c| cands.get(k, c).len() != 1)
            .map(|c| format!("c{c}:{:?}", cands.get(k, c)))
            .collect();
        println!("surface {:>2}: {} candidates, irregular columns {multi:?}", id, cands.count(k));
    }
    let adj = adjudicate(&cands);
    for (k, id) in SURFACE_IDS.iter().enumerate() {
        let row: Vec<String> = (0..w).map(|c| format!("{:>3}", adj.surfaces.get(k, c).unwrap())).collect();
        let truth_row: Vec<String> = (0..w).map(|c| format!("{:>3}", truth.get(k, c).unwrap())).collect();
        println!("surface {:>2} est  {}\n           true {}", id, row.join(""), truth_row.join(""));
    }
    println!("unresolved: {:?}", adj.unresolved);
    Ok(())
}
