//! Minimal SVG bar charts (rect and text elements only).

/// Render labelled bars with a zero-based y axis. Deterministic output.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let width = 640.0;
    let height = 320.0;
    let margin_left = 60.0;
    let margin_bottom = 70.0;
    let margin_top = 40.0;
    let plot_w = width - margin_left - 20.0;
    let plot_h = height - margin_top - margin_bottom;
    let max_value = bars
        .iter()
        .map(|&(_, v)| v)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let scale = if max_value <= 1.0 { 1.0 } else { max_value * 1.05 };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "  <rect x=\"{margin_left}\" y=\"{margin_top}\" width=\"1\" height=\"{plot_h}\" fill=\"#333333\"/>\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"{margin_left}\" y=\"{}\" width=\"{plot_w}\" height=\"1\" fill=\"#333333\"/>\n",
        margin_top + plot_h
    ));
    for tick in 0..=4 {
        let frac = tick as f64 / 4.0;
        let y = margin_top + plot_h * (1.0 - frac);
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{:.2}</text>\n",
            margin_left - 6.0,
            y + 4.0,
            frac * scale
        ));
    }

    let n = bars.len().max(1) as f64;
    let slot_w = plot_w / n;
    let bar_w = (slot_w * 0.6).min(80.0);
    for (i, (label, value)) in bars.iter().enumerate() {
        let h = (value / scale).clamp(0.0, 1.0) * plot_h;
        let x = margin_left + slot_w * i as f64 + (slot_w - bar_w) / 2.0;
        let y = margin_top + plot_h - h;
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"#4472c4\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{:.3}</text>\n",
            x + bar_w / 2.0,
            y - 4.0,
            value
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            margin_top + plot_h + 16.0,
            escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
