//! Sampling trajectories: a line-oriented text format and an SVG strip.
//!
//! ```text
//! MGF 1
//! step 0 stage group t 500
//! n 3
//! a 0 C P
//! a 1 O P
//! a 2 * G
//! e 0 1 1
//! end
//! ```
//!
//! Tags are `P` (product), `G` (group) and `D` (dummy); bond orders are 1, 2, 3.

use std::fmt::Write as _;

use thiserror::Error;

use super::StageKind;
use crate::molgraph::{Atom, BondOrder, Element, MolGraph, NodeTag};

/// Graph state after a reverse step; `t` is the step reached.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub stage: StageKind,
    pub t: usize,
    pub graph: MolGraph,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

fn tag_code(tag: NodeTag) -> &'static str {
    match tag {
        NodeTag::Product => "P",
        NodeTag::Group => "G",
        NodeTag::Dummy => "D",
    }
}

pub fn write_mgf(steps: &[TraceStep]) -> String {
    let mut out = String::from("MGF 1\n");
    for (k, s) in steps.iter().enumerate() {
        let g = &s.graph;
        let _ = writeln!(out, "step {k} stage {} t {}", s.stage.name(), s.t);
        let _ = writeln!(out, "n {}", g.n());
        for i in 0..g.n() {
            let _ = writeln!(out, "a {i} {} {}", g.atom(i).symbol(), tag_code(g.tag(i)));
        }
        for (i, j, o) in g.bonds() {
            let _ = writeln!(out, "e {i} {j} {}", o.order());
        }
        out.push_str("end\n");
    }
    out
}

pub fn parse_mgf(text: &str) -> Result<Vec<TraceStep>, TraceError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let err = |line: usize, message: &str| TraceError { line, message: message.to_string() };
    match lines.next() {
        Some((_, "MGF 1")) => {}
        Some((line, _)) => return Err(err(line, "expected header 'MGF 1'")),
        None => return Err(err(0, "empty trace")),
    }
    let num = |line: usize, s: &str| s.parse::<usize>().map_err(|_| err(line, &format!("bad number '{s}'")));

    let mut steps = Vec::new();
    while let Some((line, head)) = lines.next() {
        let f: Vec<&str> = head.split_whitespace().collect();
        let (stage, t) = match f.as_slice() {
            ["step", _, "stage", s, "t", t] => {
                (StageKind::from_name(s).ok_or_else(|| err(line, "unknown stage"))?, num(line, t)?)
            }
            _ => return Err(err(line, "expected 'step k stage s t t'")),
        };
        let (line, size) = lines.next().ok_or_else(|| err(line, "missing node count"))?;
        let n = match size.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", n] => num(line, n)?,
            _ => return Err(err(line, "expected 'n N'")),
        };
        let mut graph = MolGraph::new();
        loop {
            let (line, body) = lines.next().ok_or_else(|| err(line, "missing 'end'"))?;
            let f: Vec<&str> = body.split_whitespace().collect();
            match f.as_slice() {
                ["end"] => break,
                ["a", i, sym, tag] => {
                    if num(line, i)? != graph.n() {
                        return Err(err(line, "atoms out of order"));
                    }
                    let atom = if *sym == "*" {
                        Atom::Dummy
                    } else {
                        Atom::Real(Element::from_symbol(sym).ok_or_else(|| err(line, "unknown element"))?)
                    };
                    let tag = match *tag {
                        "P" => NodeTag::Product,
                        "G" => NodeTag::Group,
                        "D" => NodeTag::Dummy,
                        _ => return Err(err(line, "unknown tag")),
                    };
                    graph.add_atom(atom, tag);
                }
                ["e", i, j, o] => {
                    let (i, j) = (num(line, i)?, num(line, j)?);
                    let order = BondOrder::from_index(num(line, o)?)
                        .filter(|o| !o.is_none())
                        .ok_or_else(|| err(line, "bad bond order"))?;
                    if i >= graph.n() || j >= graph.n() || i == j {
                        return Err(err(line, "bond endpoint out of range"));
                    }
                    graph.set_bond(i, j, order);
                }
                _ => return Err(err(line, "unrecognized record")),
            }
        }
        if graph.n() != n {
            return Err(err(line, "node count does not match atom records"));
        }
        steps.push(TraceStep { stage, t, graph });
    }
    Ok(steps)
}

const PANEL: f64 = 220.0;

/// One panel per `every`-th step (plus the last), atoms on a circle.
pub fn render_svg(steps: &[TraceStep], every: usize) -> String {
    let every = every.max(1);
    let mut picked: Vec<&TraceStep> = steps.iter().step_by(every).collect();
    if let Some(last) = steps.last() {
        if (steps.len() - 1) % every != 0 {
            picked.push(last);
        }
    }
    let width = PANEL * picked.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        PANEL + 20.0
    );
    for (k, s) in picked.iter().enumerate() {
        let ox = k as f64 * PANEL;
        let g = &s.graph;
        let n = g.n().max(1) as f64;
        let pos = |i: usize| {
            let a = std::f64::consts::TAU * i as f64 / n;
            (ox + PANEL / 2.0 + 85.0 * a.cos(), PANEL / 2.0 + 10.0 + 85.0 * a.sin())
        };
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"12\">{} t={}</text>", ox + 6.0, s.stage.name(), s.t);
        for (i, j, o) in g.bonds() {
            let ((x1, y1), (x2, y2)) = (pos(i), pos(j));
            let _ = writeln!(
                out,
                "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"black\" stroke-width=\"{}\"/>",
                o.order()
            );
        }
        for i in 0..g.n() {
            let (x, y) = pos(i);
            let fill = match (g.atom(i), g.tag(i)) {
                (Atom::Dummy, _) => "#dddddd",
                (_, NodeTag::Product) => "#cfe3ff",
                _ => "#ffd9b3",
            };
            let _ = writeln!(out, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"9\" fill=\"{fill}\" stroke=\"black\"/>");
            let _ = writeln!(
                out,
                "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                y + 3.5,
                g.atom(i).symbol()
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_molecule;

    fn steps() -> Vec<TraceStep> {
        let mut g = parse_molecule("CC(=O)O").unwrap().graph;
        g.add_atom(Atom::Dummy, NodeTag::Group);
        g.add_atom(Atom::Real(Element::Cl), NodeTag::Group);
        g.set_bond(5, 1, BondOrder::Single);
        vec![
            TraceStep { stage: StageKind::Group, t: 3, graph: g.clone() },
            TraceStep { stage: StageKind::Bond, t: 0, graph: g },
        ]
    }

    #[test]
    fn mgf_round_trip() {
        let s = steps();
        let text = write_mgf(&s);
        assert!(text.starts_with("MGF 1\nstep 0 stage group t 3\nn 6\na 0 C P\n"));
        assert_eq!(parse_mgf(&text).unwrap(), s);
    }

    #[test]
    fn mgf_errors_carry_line_numbers() {
        assert_eq!(parse_mgf("MGF 2\n").unwrap_err().line, 1);
        let text = "MGF 1\nstep 0 stage group t 1\nn 1\na 0 Xx P\nend\n";
        assert_eq!(parse_mgf(text).unwrap_err().line, 4);
        let text = "MGF 1\nstep 0 stage group t 1\nn 2\na 0 C P\nend\n";
        assert!(parse_mgf(text).is_err());
    }

    #[test]
    fn svg_has_one_panel_per_kept_step() {
        let s = steps();
        let svg = render_svg(&s, 5);
        assert_eq!(svg.matches(" t=").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
