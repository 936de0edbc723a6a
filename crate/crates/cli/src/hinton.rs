//! Hinton diagrams as plain SVG: one white square per cell on a grey
//! background, square area proportional to the cell mass.

use std::fmt::Write as _;

use ndarray::Array2;
use strudel::joint::JointDistribution;
use strudel::metrics::{marginalize, MetricsError};
use strudel::schema::{Projection, Side};

const CELL: f64 = 24.0;
const CHAR: f64 = 6.5;
const BRACE: f64 = 22.0;
const PAD: f64 = 12.0;

/// Consecutive rows (or columns) sharing a higher-level label.
#[derive(Clone, Debug, PartialEq)]
pub struct Brace {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct Hinton {
    pub title: String,
    pub matrix: Array2<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub row_braces: Vec<Brace>,
    pub col_braces: Vec<Brace>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Runs of equal first labels, when the labels have more than one part.
fn braces(labels: &[Vec<&str>]) -> Vec<Brace> {
    if labels.iter().all(|l| l.len() < 2) {
        return Vec::new();
    }
    let mut out: Vec<Brace> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(b) if b.label == l[0] => b.end = i + 1,
            _ => out.push(Brace {
                label: l[0].to_string(),
                start: i,
                end: i + 1,
            }),
        }
    }
    out
}

impl Hinton {
    /// The joint marginalized by `projection`, with rows and columns labeled
    /// by projected groups and braces over the leading level.
    pub fn from_joint(p: &JointDistribution, projection: &Projection, title: &str) -> Result<Hinton, MetricsError> {
        let pj = marginalize(p, projection)?;
        let schema = p.schema();
        let labels = |side: Side, groups: &strudel::schema::ProjectedGroups| -> Vec<Vec<&str>> {
            groups
                .labels
                .iter()
                .map(|t| schema.projected_labels(side, projection.levels(), t))
                .collect()
        };
        let rows = labels(Side::Latents, &pj.latent_groups);
        let cols = labels(Side::Factors, &pj.factor_groups);
        let row_braces = braces(&rows);
        let col_braces = braces(&cols);
        let short = |l: &Vec<&str>, braced: bool| {
            if braced {
                l[1..].join("|")
            } else {
                l.join("|")
            }
        };
        Ok(Hinton {
            title: title.to_string(),
            matrix: pj.matrix,
            row_labels: rows.iter().map(|l| short(l, !row_braces.is_empty())).collect(),
            col_labels: cols.iter().map(|l| short(l, !col_braces.is_empty())).collect(),
            row_braces,
            col_braces,
        })
    }

    /// Side length of the square drawn for `value`.
    pub fn square_side(&self, value: f64) -> f64 {
        let max = self.matrix.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 || value <= 0.0 {
            return 0.0;
        }
        0.9 * CELL * (value / max).sqrt()
    }

    pub fn to_svg(&self) -> String {
        let (n_rows, n_cols) = self.matrix.dim();
        let longest = |v: &[String]| v.iter().map(|s| s.chars().count()).max().unwrap_or(0) as f64 * CHAR;
        let row_brace_w = if self.row_braces.is_empty() {
            0.0
        } else {
            BRACE + longest(&self.row_braces.iter().map(|b| b.label.clone()).collect::<Vec<_>>())
        };
        let col_brace_h = if self.col_braces.is_empty() { 0.0 } else { BRACE + 14.0 };
        let left = PAD + row_brace_w + longest(&self.row_labels) + 6.0;
        let top = PAD + 20.0 + col_brace_h + longest(&self.col_labels) * 0.75 + 6.0;
        let width = left + n_cols as f64 * CELL + PAD;
        let height = top + n_rows as f64 * CELL + PAD + 18.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="{PAD:.1}" y="{:.1}" font-size="13">{}</text>"#, PAD + 8.0, escape(&self.title));
        let _ = writeln!(
            s,
            r##"<rect x="{left:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="#808080"/>"##,
            n_cols as f64 * CELL,
            n_rows as f64 * CELL
        );
        for ((r, c), &v) in self.matrix.indexed_iter() {
            let side = self.square_side(v);
            if side > 0.0 {
                let x = left + c as f64 * CELL + (CELL - side) / 2.0;
                let y = top + r as f64 * CELL + (CELL - side) / 2.0;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.3}" y="{y:.3}" width="{side:.3}" height="{side:.3}" fill="white"><title>{v:.6}</title></rect>"#
                );
            }
        }
        for (r, label) in self.row_labels.iter().enumerate() {
            let y = top + (r as f64 + 0.5) * CELL + 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"#, left - 4.0, escape(label));
        }
        for (c, label) in self.col_labels.iter().enumerate() {
            let x = left + (c as f64 + 0.5) * CELL;
            let y = top - 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{y:.1}" transform="rotate(-45 {x:.1} {y:.1})">{}</text>"#,
                escape(label)
            );
        }
        let brace_x = PAD + row_brace_w - 6.0;
        for b in &self.row_braces {
            let (y0, y1) = (top + b.start as f64 * CELL + 2.0, top + b.end as f64 * CELL - 2.0);
            let _ = writeln!(
                s,
                r#"<path d="M {:.1} {y0:.1} h -6 V {y1:.1} h 6" fill="none" stroke="black"/>"#,
                brace_x + 6.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                brace_x - 4.0,
                (y0 + y1) / 2.0 + 4.0,
                escape(&b.label)
            );
        }
        let brace_y = PAD + 20.0 + col_brace_h - 6.0;
        for b in &self.col_braces {
            let (x0, x1) = (left + b.start as f64 * CELL + 2.0, left + b.end as f64 * CELL - 2.0);
            let _ = writeln!(
                s,
                r#"<path d="M {x0:.1} {:.1} v -6 H {x1:.1} v 6" fill="none" stroke="black"/>"#,
                brace_y + 6.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                (x0 + x1) / 2.0,
                brace_y - 4.0,
                escape(&b.label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{PAD:.1}" y="{:.1}" font-size="10">square area proportional to value; normalized by the matrix maximum</text>"#,
            height - PAD + 4.0
        );
        s.push_str("</svg>\n");
        s
    }
}
