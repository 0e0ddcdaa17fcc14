use std::fmt::Write as _;

use serde_json::json;

use super::ProfiledTrace;
use crate::simkernel::Interval;

const LANE_HEIGHT: u64 = 18;
const LABEL_WIDTH: u64 = 220;
const PLOT_WIDTH: f64 = 800.0;

pub struct Gantt {
    pub svg: String,
    /// Trace-event JSON (`ph: "X"` complete events, timestamps in cycles).
    pub trace_events: serde_json::Value,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one lane per path; with `top`, only the `top` paths with the most
/// cycles are kept, in their original order.
pub fn export_gantt(t: &ProfiledTrace, top: Option<usize>) -> Gantt {
    let mut keep: Vec<usize> = (0..t.paths.len()).collect();
    if let Some(k) = top {
        keep.sort_by(|&a, &b| {
            let (pa, pb) = (&t.paths[a], &t.paths[b]);
            pb.total_cycles
                .cmp(&pa.total_cycles)
                .then_with(|| pa.source_path.cmp(&pb.source_path))
        });
        keep.truncate(k);
        keep.sort_unstable();
    }
    let lanes: Vec<_> = keep.iter().map(|&i| &t.paths[i]).collect();
    let horizon = lanes
        .iter()
        .flat_map(|p| p.activations.iter().map(Interval::end))
        .max()
        .unwrap_or(0)
        .max(1);
    let scale = PLOT_WIDTH / horizon as f64;
    let height = LANE_HEIGHT * lanes.len() as u64 + 40;
    let width = LABEL_WIDTH as f64 + PLOT_WIDTH + 20.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-horizon="{horizon}">"#
    );
    let axis_y = LANE_HEIGHT * lanes.len() as u64 + 10;
    let _ = writeln!(
        svg,
        r#"  <line class="axis" x1="{LABEL_WIDTH}" y1="0" x2="{LABEL_WIDTH}" y2="{axis_y}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"  <line class="axis" x1="{LABEL_WIDTH}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        LABEL_WIDTH as f64 + PLOT_WIDTH
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{}" y="{}" font-size="10" text-anchor="end">{horizon} cycles</text>"#,
        LABEL_WIDTH as f64 + PLOT_WIDTH,
        axis_y + 20
    );
    let mut events = Vec::new();
    for (lane, p) in lanes.iter().enumerate() {
        let y = LANE_HEIGHT * lane as u64;
        let path = escape(&p.source_path);
        let _ = writeln!(svg, r#"  <g class="lane" data-path="{path}">"#);
        let _ = writeln!(
            svg,
            r#"    <text x="{}" y="{}" font-size="11" text-anchor="end">{path}</text>"#,
            LABEL_WIDTH - 6,
            y + 13
        );
        for a in &p.activations {
            let x = LABEL_WIDTH as f64 + a.start() as f64 * scale;
            let w = (a.len() as f64 * scale).max(0.5);
            let _ = writeln!(
                svg,
                r##"    <rect x="{x:.2}" y="{}" width="{w:.2}" height="{}" fill="#4a7bb7" data-path="{path}" data-start="{}" data-end="{}"/>"##,
                y + 2,
                LANE_HEIGHT - 4,
                a.start(),
                a.end()
            );
            events.push(json!({
                "name": p.source_path,
                "cat": p.kind,
                "ph": "X",
                "ts": a.start(),
                "dur": a.len(),
                "pid": 0,
                "tid": lane,
                "args": {"rtl_name": p.rtl_name},
            }));
        }
        let _ = writeln!(svg, "  </g>");
    }
    svg.push_str("</svg>\n");
    for (lane, p) in lanes.iter().enumerate() {
        events.push(json!({
            "name": "thread_name",
            "ph": "M",
            "pid": 0,
            "tid": lane,
            "args": {"name": p.source_path},
        }));
    }
    Gantt {
        svg,
        trace_events: json!({
            "traceEvents": events,
            "displayTimeUnit": "ns",
            "otherData": {"time_unit": "cycles"},
        }),
    }
}

/// Reads lane spans back from the `data-*` attributes of an exported SVG.
pub fn gantt_lanes_from_svg(svg: &str) -> Vec<(String, Interval)> {
    fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
        let key = format!(" {name}=\"");
        let i = tag.find(&key)? + key.len();
        let j = tag[i..].find('"')? + i;
        Some(&tag[i..j])
    }
    svg.split('<')
        .filter(|tag| tag.starts_with("rect "))
        .filter_map(|tag| {
            let path = attr(tag, "data-path")?
                .replace("&quot;", "\"")
                .replace("&lt;", "<")
                .replace("&gt;", ">")
                .replace("&amp;", "&");
            let s = attr(tag, "data-start")?.parse().ok()?;
            let e = attr(tag, "data-end")?.parse().ok()?;
            Some((path, Interval(s, e)))
        })
        .collect()
}
