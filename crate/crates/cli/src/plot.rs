use std::fmt::Write;

use somno_core::SleepStage;

const ROW_ORDER: [SleepStage; 5] = [
    SleepStage::W,
    SleepStage::Rem,
    SleepStage::N1,
    SleepStage::N2,
    SleepStage::N3,
];
const LEFT: f64 = 48.0;
const TRACK_H: f64 = 100.0;
const GAP: f64 = 24.0;

fn row(stage: SleepStage) -> usize {
    ROW_ORDER.iter().position(|&s| s == stage).unwrap_or(0)
}

/// Step plot of a stage sequence inside a band starting at `top`.
fn stage_track(
    svg: &mut String,
    stages: &[SleepStage],
    top: f64,
    dx: f64,
    title: &str,
    colour: &str,
) {
    let step = TRACK_H / (ROW_ORDER.len() - 1) as f64;
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{:.1}" font-size="11">{title}</text>"#,
        top - 6.0
    );
    for (i, s) in ROW_ORDER.iter().enumerate() {
        let y = top + i as f64 * step;
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{:.1}" font-size="9">{}</text>"#,
            y + 3.0,
            s.name()
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            LEFT + dx * stages.len() as f64
        );
    }
    let mut path = String::new();
    for (i, &s) in stages.iter().enumerate() {
        let y = top + row(s) as f64 * step;
        let x0 = LEFT + i as f64 * dx;
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(path, "{cmd}{x0:.2},{y:.2} L{:.2},{y:.2} ", x0 + dx);
    }
    let _ = writeln!(
        svg,
        r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.2"/>"#,
        path.trim_end()
    );
}

/// Hypnogram, predicted stages and per-epoch uncertainty with the flagging
/// threshold.
pub fn case_study_svg(
    truth: Option<&[SleepStage]>,
    predicted: &[SleepStage],
    uncertainty: &[f64],
    threshold: f64,
) -> String {
    let n = predicted.len().max(1);
    let dx = (1000.0 / n as f64).clamp(0.5, 8.0);
    let width = LEFT + dx * n as f64 + 16.0;
    let tracks = if truth.is_some() { 3 } else { 2 };
    let height = GAP + tracks as f64 * (TRACK_H + GAP) + 8.0;
    let max_u = (LN_STAGES).max(uncertainty.iter().cloned().fold(0.0, f64::max));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut top = GAP;
    if let Some(t) = truth {
        stage_track(&mut svg, t, top, dx, "scored", "#333");
        top += TRACK_H + GAP;
    }
    stage_track(&mut svg, predicted, top, dx, "predicted", "#1f5fa8");
    top += TRACK_H + GAP;

    let _ = writeln!(
        svg,
        r#"<text x="4" y="{:.1}" font-size="11">uncertainty</text>"#,
        top - 6.0
    );
    let base = top + TRACK_H;
    for (i, &u) in uncertainty.iter().enumerate() {
        let h = TRACK_H * (u / max_u).clamp(0.0, 1.0);
        let colour = if u >= threshold { "#c0392b" } else { "#7f8c8d" };
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{colour}"/>"#,
            LEFT + i as f64 * dx,
            base - h,
            dx.max(0.5)
        );
    }
    if threshold.is_finite() && threshold <= max_u {
        let y = base - TRACK_H * threshold / max_u;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
            LEFT + dx * n as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Largest possible entropy over the stage classes.
const LN_STAGES: f64 = 1.6094379124341003;
