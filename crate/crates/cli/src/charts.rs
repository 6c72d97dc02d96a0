//! Static SVG charts of recommended-action distributions.

use std::fmt::Write;

use offrl::dataset::TransitionDataset;
use offrl::envgen::Environment;
use offrl::mdp::Policy;

const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

/// Share of test records on which each action is recommended; the first
/// series is the logged behavior.
fn series_shares(
    env: &Environment,
    test: &TransitionDataset,
    agents: &[(String, &Policy)],
) -> Vec<(String, Vec<f64>)> {
    let na = env.mdp.n_actions();
    let n = test.len().max(1) as f64;
    let mut out = vec![("soc (logged)".to_string(), test.action_shares())];
    for (name, policy) in agents {
        let mut counts = vec![0usize; na];
        for r in test.records() {
            counts[policy.action(r.state)] += 1;
        }
        out.push((name.clone(), counts.iter().map(|&c| c as f64 / n).collect()));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Grouped bar chart: one group per action, one bar per series.
pub fn action_histogram(
    title: &str,
    env: &Environment,
    test: &TransitionDataset,
    agents: &[(String, &Policy)],
) -> String {
    let series = series_shares(env, test, agents);
    let na = env.mdp.n_actions();
    let (left, top, plot_h, bar_w) = (60.0, 40.0, 260.0, 8.0);
    let group_w = bar_w * series.len() as f64 + 10.0;
    let width = left + group_w * na as f64 + 20.0;
    let legend_y = top + plot_h + 90.0;
    let height = legend_y + 18.0 * series.len() as f64 + 10.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"##,
            width - 20.0,
            left - 6.0,
            y + 4.0,
            100.0 * v
        );
    }
    for a in 0..na {
        let x0 = left + group_w * a as f64 + 5.0;
        for (j, (_, shares)) in series.iter().enumerate() {
            let h = plot_h * shares[a];
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar_w}" height="{h:.1}" fill="{}"/>"#,
                x0 + bar_w * j as f64,
                top + plot_h - h,
                PALETTE[j % PALETTE.len()]
            );
        }
        let name = env
            .action_names
            .get(a)
            .cloned()
            .unwrap_or_else(|| a.to_string());
        let lx = x0 + bar_w * series.len() as f64 / 2.0;
        let ly = top + plot_h + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-45 {lx:.1} {ly:.1})">{}</text>"#,
            escape(&name)
        );
    }
    for (j, (name, _)) in series.iter().enumerate() {
        let y = legend_y + 18.0 * j as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 10.0,
            PALETTE[j % PALETTE.len()],
            left + 18.0,
            y,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One heatmap per series over the two-axis dose grid.
pub fn dose_heatmaps(
    title: &str,
    env: &Environment,
    test: &TransitionDataset,
    agents: &[(String, &Policy)],
) -> String {
    let (rows, cols) = env
        .action_grid
        .expect("dose heatmaps need a two-axis action space");
    let series = series_shares(env, test, agents);
    let cell = 36.0;
    let panel_w = cell * cols as f64 + 60.0;
    let width = 20.0 + panel_w * series.len() as f64;
    let height = 80.0 + cell * rows as f64 + 40.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for (j, (name, shares)) in series.iter().enumerate() {
        let x0 = 40.0 + panel_w * j as f64;
        let y0 = 60.0;
        let peak = shares.iter().copied().fold(0.0, f64::max).max(1e-12);
        let _ = writeln!(
            s,
            r#"<text x="{x0:.1}" y="{:.1}" font-size="11">{}</text>"#,
            y0 - 10.0,
            escape(name)
        );
        for r in 0..rows {
            for c in 0..cols {
                let share = shares[r * cols + c];
                let shade = (255.0 * (1.0 - share / peak)).round() as u8;
                let (x, y) = (x0 + cell * c as f64, y0 + cell * r as f64);
                let _ = writeln!(
                    s,
                    r##"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#ffffff"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>"##,
                    x + cell / 2.0,
                    y + cell / 2.0 + 3.0,
                    100.0 * share
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">vasopressor bin</text><text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">fluid bin</text>"#,
            x0 + cell * cols as f64 / 2.0,
            y0 + cell * rows as f64 + 16.0,
            x0 - 8.0,
            y0 + cell * rows as f64 / 2.0,
            x0 - 8.0,
            y0 + cell * rows as f64 / 2.0
        );
    }
    s.push_str("</svg>\n");
    s
}
