//! Minimal SVG scatter plot of retention against exact-match accuracy.

use std::collections::BTreeMap;
use std::fmt::Write;

use kwcomplete::evaluation::TradeoffPoint;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: &[&str] = &["#2a9d4b", "#1f5fbf", "#c0392b", "#8e44ad", "#d68910", "#555555"];

fn family(scheme: &str) -> &str {
    scheme.split('(').next().unwrap_or(scheme)
}

pub fn tradeoff_svg(points: &[TradeoffPoint]) -> String {
    let mut groups: BTreeMap<&str, Vec<&TradeoffPoint>> = BTreeMap::new();
    for p in points {
        groups.entry(family(&p.scheme)).or_default().push(p);
    }
    let x = |r: f64| MARGIN + r * (W - 2.0 * MARGIN);
    let y = |a: f64| H - MARGIN - a * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#, x(v), H - MARGIN + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, MARGIN - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">retention</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">exact match</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, mut pts)) in groups.into_iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        pts.sort_by(|a, b| a.retention.total_cmp(&b.retention));
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", x(p.retention), y(p.exact_match))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, path.join(" "));
        for p in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>{} r={:.3} acc={:.3}</title></circle>"#,
                x(p.retention),
                y(p.exact_match),
                p.scheme,
                p.retention,
                p.exact_match
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, MARGIN + 10.0);
    }
    s.push_str("</svg>\n");
    s
}
