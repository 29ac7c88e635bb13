//! Value CSV, JSON summaries and the SVG region plot.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::ModelSpec;
use crate::odesolver::ValueSolution;
use crate::regions::g_functions;

/// One row of the value CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub x: f64,
    pub v1: f64,
    pub v2: f64,
    #[serde(rename = "G1")]
    pub g1: f64,
    #[serde(rename = "G2")]
    pub g2: f64,
    #[serde(rename = "in_S1")]
    pub in_s1: u8,
    #[serde(rename = "in_S2")]
    pub in_s2: u8,
}

pub fn value_rows(model: &ModelSpec, solution: &ValueSolution) -> Vec<ValueRow> {
    let (g1, g2) = g_functions(solution, model);
    solution
        .grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &x)| ValueRow {
            x,
            v1: solution.v1[i],
            v2: solution.v2[i],
            g1: g1[i],
            g2: g2[i],
            in_s1: u8::from(g1[i] <= 0.0),
            in_s2: u8::from(g2[i] <= 0.0),
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(input: impl Read) -> csv::Result<Vec<T>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// JSON number, or the string `"inf"` / `"-inf"` for infinite values.
pub fn ext(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        Value::Null
    }
}

/// Static plot of G1 and G2 on a log-x axis with the switching regions shaded.
pub fn region_svg(model: &ModelSpec, solution: &ValueSolution) -> String {
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let (g1, g2) = g_functions(solution, model);
    let x = solution.grid.nodes();
    let (lx0, lx1) = (x[0].log10(), x[x.len() - 1].log10());
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in g1.iter().chain(&g2) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let px = |xv: f64| pad + (xv.log10() - lx0) / (lx1 - lx0) * (w - 2.0 * pad);
    let py = |yv: f64| h - pad - (yv - lo) / (hi - lo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (g, colour) in [(&g1, "#d62728"), (&g2, "#1f77b4")] {
        for i in 0..x.len() {
            if g[i] <= 0.0 {
                let a = if i == 0 { x[0] } else { (x[i - 1] * x[i]).sqrt() };
                let b = if i + 1 == x.len() { x[i] } else { (x[i] * x[i + 1]).sqrt() };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{pad}" width="{:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.12"/>"#,
                    px(a),
                    (px(b) - px(a)).max(0.0),
                    h - 2.0 * pad
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y0:.2}" x2="{x2}" y2="{y0:.2}" stroke="black" stroke-width="0.5"/>"#,
        y0 = py(0.0),
        x2 = w - pad
    );
    for (g, colour, name) in [(&g1, "#d62728", "G1"), (&g2, "#1f77b4", "G2")] {
        let pts: Vec<String> = x.iter().zip(g.iter()).map(|(&a, &b)| format!("{:.2},{:.2}", px(a), py(b))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = if name == "G1" { pad - 24.0 } else { pad - 8.0 };
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="12" fill="{colour}">{name}</text>"#, w - pad - 30.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-size="12">log10 x from {lx0:.1} to {lx1:.1}; shaded: switching regions</text>"#,
        h - 16.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odesolver::{build_grid, solve_penalized_system, SolverSettings};
    use crate::presets::preset;

    #[test]
    fn value_csv_round_trips() {
        let m = preset("P5").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 101).unwrap();
        let s = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
        let rows = value_rows(&m, &s);
        let mut first = Vec::new();
        write_csv(&rows, &mut first).unwrap();
        let back: Vec<ValueRow> = read_csv(first.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut second = Vec::new();
        write_csv(&back, &mut second).unwrap();
        assert_eq!(first, second);
        let header = std::str::from_utf8(&first).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "x,v1,v2,G1,G2,in_S1,in_S2");
        assert!(rows.iter().any(|r| r.in_s1 == 1) && rows.iter().any(|r| r.in_s2 == 1));
    }

    #[test]
    fn svg_is_well_formed() {
        let m = preset("P5").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 101).unwrap();
        let s = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
        let svg = region_svg(&m, &s);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn infinite_values_in_json() {
        assert_eq!(ext(f64::INFINITY), json!("inf"));
        assert_eq!(ext(1.5), json!(1.5));
    }
}
