//! Deterministic SVG scatter plots: accuracy pairs with the fitted line and
//! annotated correlation coefficients.

use std::path::{Path, PathBuf};

use crate::regress::{AccuracyPair, RegressorFit};

use super::PipelineError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

fn nice_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(0.02);
    ((lo - pad).max(0.0), (hi + pad).min(1.0))
}

/// Render the scatter of (contrastive, classification) accuracy pairs with
/// the fitted line, axes in percent.
pub fn scatter_svg(pairs: &[AccuracyPair], fit: &RegressorFit, title: &str) -> String {
    let (x_lo, x_hi) = nice_bounds(pairs.iter().map(|p| p.acc_con));
    let (y_lo, y_hi) = nice_bounds(pairs.iter().map(|p| p.acc_cla));
    let sx = |v: f64| MARGIN + (v - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"26\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    for i in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.1}</text>\n",
            sx(fx),
            HEIGHT - MARGIN + 18.0,
            fx * 100.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.1}</text>\n",
            MARGIN - 6.0,
            sy(fy) + 4.0,
            fy * 100.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">contrastive accuracy (%)</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">classification accuracy (%)</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    // fitted line clipped to the x range
    let y_at = |x: f64| fit.slope * x + fit.intercept;
    svg.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n",
        sx(x_lo),
        sy(y_at(x_lo).clamp(y_lo, y_hi)),
        sx(x_hi),
        sy(y_at(x_hi).clamp(y_lo, y_hi)),
    ));

    for pair in pairs {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.75\"/>\n",
            sx(pair.acc_con),
            sy(pair.acc_cla)
        ));
    }

    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\">r = {:.3}, rho = {:.3}, n = {}</text>\n",
        MARGIN + 8.0,
        MARGIN + 16.0,
        fit.pearson_r,
        fit.spearman_rho,
        fit.n
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Write the scatter plot(s) for a fitted run into `out_dir`; returns the
/// created files. Requires at least 2 pairs.
pub fn emit_plots(
    pairs: &[AccuracyPair],
    fit: &RegressorFit,
    out_dir: &Path,
    title: &str,
) -> Result<Vec<PathBuf>, PipelineError> {
    if pairs.len() < 2 {
        return Err(PipelineError::Config(format!(
            "need at least 2 pairs to plot, got {}",
            pairs.len()
        )));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join("scatter.svg");
    std::fs::write(&path, scatter_svg(pairs, fit, title))
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    Ok(vec![path])
}
