//! Surface overlays on a B-scan, as SVG or PNG.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;
use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::model::{BScan, SurfaceSet, NUM_SURFACES, SURFACE_IDS};

/// Line colors assigned to the named sets in order.
pub const PALETTE: [[u8; 3]; 8] = [
    [255, 215, 0],
    [0, 200, 255],
    [255, 64, 64],
    [64, 220, 64],
    [255, 128, 255],
    [255, 160, 32],
    [160, 160, 255],
    [255, 255, 255],
];

/// Runs of consecutive valid columns of one surface, as `(column, row)` points.
pub fn valid_spans(set: &SurfaceSet, surface: usize) -> Vec<Vec<(usize, f64)>> {
    let mut spans = Vec::new();
    let mut current = Vec::new();
    for c in 0..set.width() {
        match set.get(surface, c) {
            Some(v) => current.push((c, v)),
            None if !current.is_empty() => spans.push(std::mem::take(&mut current)),
            None => {}
        }
    }
    if !current.is_empty() {
        spans.push(current);
    }
    spans
}

fn check_widths(scan: &BScan, sets: &[(&str, &SurfaceSet)]) -> Result<()> {
    for (name, set) in sets {
        if set.width() != scan.width() {
            return Err(Error::Shape(format!(
                "surface set {name} has width {} but the scan is {} wide",
                set.width(),
                scan.width()
            )));
        }
    }
    Ok(())
}

fn background_png(scan: &BScan) -> Result<Vec<u8>> {
    let gray = image::GrayImage::from_fn(scan.width() as u32, scan.height() as u32, |x, y| {
        image::Luma([(scan.pixels.at(y as usize, x as usize) * 255.0).round() as u8])
    });
    let mut buf = Cursor::new(Vec::new());
    gray.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn color_hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG document: embedded grayscale background, one `<polyline>` per valid
/// span per surface per set, and a legend naming each set.
pub fn overlay_svg(scan: &BScan, sets: &[(&str, &SurfaceSet)]) -> Result<String> {
    check_widths(scan, sets)?;
    let (w, h) = (scan.width(), scan.height());
    let png = base64::engine::general_purpose::STANDARD.encode(background_png(scan)?);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<image x="0" y="0" width="{w}" height="{h}" href="data:image/png;base64,{png}"/>"#
    );
    for (i, (name, set)) in sets.iter().enumerate() {
        let color = color_hex(PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<g class="surface-set" data-name="{}" stroke="{color}" fill="none" stroke-width="1">"#, escape(name));
        for k in 0..NUM_SURFACES {
            for span in valid_spans(set, k) {
                let points: Vec<String> = span.iter().map(|&(c, r)| format!("{:.1},{:.3}", c as f64 + 0.5, r)).collect();
                let _ = writeln!(s, r#"<polyline data-surface="{}" points="{}"/>"#, SURFACE_IDS[k], points.join(" "));
            }
        }
        let _ = writeln!(s, "</g>");
    }
    if !sets.is_empty() {
        let _ = writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="10">"#);
        for (i, (name, _)) in sets.iter().enumerate() {
            let y = 4 + 14 * i;
            let color = color_hex(PALETTE[i % PALETTE.len()]);
            let _ = writeln!(s, r#"<rect x="4" y="{y}" width="10" height="10" fill="{color}"/>"#);
            let _ = writeln!(s, r#"<text x="18" y="{}" fill="{color}">{}</text>"#, y + 9, escape(name));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn draw_segment(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).floor();
        let y = (y0 + t * (y1 - y0)).floor();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Raster overlay with colored lines and a swatch legend in the top-left corner.
pub fn overlay_png(scan: &BScan, sets: &[(&str, &SurfaceSet)]) -> Result<RgbImage> {
    check_widths(scan, sets)?;
    let mut img = RgbImage::from_fn(scan.width() as u32, scan.height() as u32, |x, y| {
        let v = (scan.pixels.at(y as usize, x as usize) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    for (i, (_, set)) in sets.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for k in 0..NUM_SURFACES {
            for span in valid_spans(set, k) {
                let pts: Vec<(f64, f64)> = span.iter().map(|&(c, r)| (c as f64 + 0.5, r)).collect();
                if pts.len() == 1 {
                    draw_segment(&mut img, pts[0], pts[0], color);
                }
                for pair in pts.windows(2) {
                    draw_segment(&mut img, pair[0], pair[1], color);
                }
            }
        }
        for dy in 0..4 {
            for dx in 0..4 {
                let (x, y) = (1 + dx, 1 + 6 * i as u32 + dy);
                if x < img.width() && y < img.height() {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    Ok(img)
}

/// Writes an overlay; `.svg` gives vector output, `.png` raster.
pub fn render_overlay(scan: &BScan, sets: &[(&str, &SurfaceSet)], out_path: &Path) -> Result<()> {
    let ext = out_path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "svg" => std::fs::write(out_path, overlay_svg(scan, sets)?)?,
        "png" => overlay_png(scan, sets)?.save_with_format(out_path, ImageFormat::Png)?,
        _ => return Err(Error::Config(format!("{}: overlay must be .svg or .png", out_path.display()))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Grid, RegionTag};

    fn scan() -> BScan {
        BScan::new(Grid::from_fn(30, 12, |r, _| r as f64 / 29.0), "P", RegionTag::Fovea, "P_fovea").unwrap()
    }

    #[test]
    fn svg_has_one_polyline_per_surface_and_set() {
        let truth = SurfaceSet::constant([3.0, 8.0, 12.0, 18.0, 25.0], 12);
        let est = truth.shifted(0.7);
        let svg = overlay_svg(&scan(), &[("ground truth", &truth), ("SEG+REG", &est)]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 10);
        assert!(svg.contains("SEG+REG") && svg.contains("class=\"legend\""));
        assert!(svg.contains("data:image/png;base64,"));
    }

    #[test]
    fn empty_set_list_is_background_only() {
        let svg = overlay_svg(&scan(), &[]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert!(svg.contains("<image"));
    }

    #[test]
    fn invalid_columns_break_the_line() {
        let mut truth = SurfaceSet::constant([3.0, 8.0, 12.0, 18.0, 25.0], 12);
        truth.invalidate(2, 4);
        truth.invalidate(2, 5);
        truth.invalidate(4, 11);
        let svg = overlay_svg(&scan(), &[("gt", &truth)]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert_eq!(valid_spans(&truth, 2).iter().map(Vec::len).collect::<Vec<_>>(), [4, 6]);
    }

    #[test]
    fn files_are_written_and_widths_checked() {
        let dir = tempfile::tempdir().unwrap();
        let truth = SurfaceSet::constant([3.0, 8.0, 12.0, 18.0, 25.0], 12);
        for name in ["o.svg", "o.png"] {
            let p = dir.path().join(name);
            render_overlay(&scan(), &[("gt", &truth)], &p).unwrap();
            assert!(std::fs::metadata(&p).unwrap().len() > 0);
        }
        let png = overlay_png(&scan(), &[("gt", &truth)]).unwrap();
        assert_eq!(png.get_pixel(6, 8), &Rgb(PALETTE[0]));
        let narrow = SurfaceSet::constant([3.0, 8.0, 12.0, 18.0, 25.0], 5);
        assert!(overlay_svg(&scan(), &[("x", &narrow)]).is_err());
        assert!(render_overlay(&scan(), &[], &dir.path().join("o.bmp")).is_err());
        assert!(render_overlay(&scan(), &[], &dir.path().join("missing/dir/o.svg")).is_err());
    }
}
