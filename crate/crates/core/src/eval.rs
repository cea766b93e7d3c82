//! Precision, recall, F1 and learning curves.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{balance, class_counts, split, DocSet, FoldScheme, LabeledDoc, Polarity};
use crate::error::{Error, Result};

/// Spread above which a curve point counts as unstable.
pub const STABILITY_THRESHOLD: f64 = 0.01;

/// Per-class counts behind precision and recall, indexed by
/// [`Polarity::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Documents of the class predicted as that class.
    pub correct: [usize; 2],
    /// Documents predicted as the class.
    pub predicted: [usize; 2],
    /// Documents that belong to the class.
    pub actual: [usize; 2],
}

impl ConfusionCounts {
    pub fn tally(predictions: &[Polarity], truth: &[Polarity]) -> Result<Self> {
        if predictions.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: predictions.len(),
                right: truth.len(),
            });
        }
        if truth.is_empty() {
            return Err(Error::Empty("predictions"));
        }
        let mut c = Self::default();
        for (p, t) in predictions.iter().zip(truth) {
            c.predicted[p.index()] += 1;
            c.actual[t.index()] += 1;
            if p == t {
                c.correct[t.index()] += 1;
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.actual[0] + self.actual[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pre_0: f64,
    pub rec_0: f64,
    pub pre_1: f64,
    pub rec_1: f64,
    pub f1_0: f64,
    pub f1_1: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MetricsReport {
    /// Fills in the F1 columns from the four precision/recall values.
    pub fn from_precision_recall(pre_0: f64, rec_0: f64, pre_1: f64, rec_1: f64) -> Self {
        let f1_0 = f1(pre_0, rec_0);
        let f1_1 = f1(pre_1, rec_1);
        Self {
            pre_0,
            rec_0,
            pre_1,
            rec_1,
            f1_0,
            f1_1,
            macro_f1: (f1_0 + f1_1) / 2.0,
        }
    }

    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self::from_precision_recall(
            ratio(c.correct[0], c.predicted[0]),
            ratio(c.correct[0], c.actual[0]),
            ratio(c.correct[1], c.predicted[1]),
            ratio(c.correct[1], c.actual[1]),
        )
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.pre_0,
            self.rec_0,
            self.pre_1,
            self.rec_1,
            self.f1_0,
            self.f1_1,
            self.macro_f1,
        ]
    }
}

pub fn compute_metrics(predictions: &[Polarity], truth: &[Polarity]) -> Result<MetricsReport> {
    Ok(MetricsReport::from_counts(&ConfusionCounts::tally(
        predictions,
        truth,
    )?))
}

pub const METRICS_HEADER: &str = "model\tpre_0\trec_0\tpre_1\trec_1\tf1_0\tf1_1\tmacro_f1";

/// One row per model, four decimals per value.
pub fn write_metrics_tsv<W: Write>(mut out: W, rows: &[(String, MetricsReport)]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for (name, m) in rows {
        write!(out, "{name}")?;
        for v in m.values() {
            write!(out, "\t{v:.4}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub corpus_size: usize,
    pub repetitions: usize,
    pub best: f64,
    pub worst: f64,
    pub mean: f64,
    /// Macro F1 of each repetition, in repetition order.
    pub scores: Vec<f64>,
}

impl CurvePoint {
    pub fn from_scores(corpus_size: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("curve repetitions"));
        }
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self {
            corpus_size,
            repetitions: scores.len(),
            best,
            worst,
            mean,
            scores,
        })
    }

    pub fn spread(&self) -> f64 {
        self.best - self.worst
    }
}

/// Unstable iff best − worst exceeds 0.01. Differences within 1e-12 of the
/// threshold count as equal to it, so a spread of exactly .01 written in
/// decimal is stable despite binary round-off.
pub fn stability_flag(point: &CurvePoint) -> bool {
    point.spread() > STABILITY_THRESHOLD + 1e-12
}

fn mix(seed: u64, size: usize, rep: usize) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed
        .wrapping_add((size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((rep as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// For each size: draw a balanced sample of that many documents, split it
/// three ways (train / test), train and score, `repetitions` times with
/// different seeds. `recipe` receives the train and test parts and returns
/// test-set predictions.
pub fn learning_curve<F>(
    recipe: F,
    docs: &[LabeledDoc],
    sizes: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>>
where
    F: Fn(&DocSet, &DocSet) -> Result<Vec<Polarity>> + Sync,
{
    if repetitions == 0 {
        return Err(Error::Empty("curve repetitions"));
    }
    let counts = class_counts(docs);
    let available = counts[0].min(counts[1]);
    if let Some(&size) = sizes.iter().find(|&&s| s / 2 > available) {
        return Err(Error::UnreachableSize { size, available });
    }
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(si, _)| (0..repetitions).map(move |r| (si, r)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(si, rep)| {
            let size = sizes[si];
            let s = mix(seed, size, rep);
            let sample = balance(docs, size / 2, s)?;
            let parts = split(&sample, FoldScheme::ThreeFold, s.wrapping_add(1))?;
            let pred = recipe(&parts.train, &parts.test)?;
            Ok(compute_metrics(&pred, &parts.test.labels())?.macro_f1)
        })
        .collect::<Result<_>>()?;
    sizes
        .iter()
        .enumerate()
        .map(|(si, &size)| {
            CurvePoint::from_scores(
                size,
                scores[si * repetitions..(si + 1) * repetitions].to_vec(),
            )
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(mut out: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(out, "size,best,worst,mean,unstable")?;
    for p in points {
        writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{}",
            p.corpus_size,
            p.best,
            p.worst,
            p.mean,
            stability_flag(p)
        )?;
    }
    Ok(())
}

/// Line chart of best and worst Macro F1 against corpus size, one colour
/// per model.
pub fn render_curve_svg(series: &[(String, Vec<CurvePoint>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLOURS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];

    let all: Vec<&CurvePoint> = series.iter().flat_map(|(_, p)| p).collect();
    let (xmin, xmax) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let x = p.corpus_size as f64;
            (lo.min(x), hi.max(x))
        });
    let (ymin, ymax) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.worst), hi.max(p.best))
        });
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let (ymin, ymax) = if ymax > ymin {
        (ymin, ymax)
    } else {
        (ymin - 0.01, ymax + 0.01)
    };
    let sx = |x: f64| PAD + (x - xmin) / xspan * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - ymin) / (ymax - ymin) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{y}" stroke="black"/>"#,
        y = H - PAD,
        x2 = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">corpus size</text><text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">Macro F1</text>"#,
        W / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0
    );
    for (label, y) in [(ymin, ymin), (ymax, ymax)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{label:.3}</text>"#,
            PAD - 4.0,
            sy(y) + 4.0
        );
    }
    for (i, (name, points)) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        for (pick, dash) in [(0usize, ""), (1, r#" stroke-dasharray="4 3""#)] {
            let path: Vec<String> = points
                .iter()
                .map(|p| {
                    let y = if pick == 0 { p.best } else { p.worst };
                    format!("{:.1},{:.1}", sx(p.corpus_size as f64), sy(y))
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}"{dash} points="{}"/>"#,
                path.join(" ")
            );
        }
        for p in points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{colour}"/>"#,
                sx(p.corpus_size as f64),
                sy(p.best)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{colour}">{name} (solid best, dashed worst)</text>"#,
            PAD + 8.0,
            PAD + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarity::{Negative as N, Positive as P};

    #[test]
    fn table_rows() {
        let lr_all = MetricsReport::from_precision_recall(0.917, 0.901, 0.903, 0.919);
        assert!((lr_all.macro_f1 - 0.910).abs() <= 0.001);
        let nb = MetricsReport::from_precision_recall(0.843, 0.896, 0.889, 0.833);
        assert!((nb.macro_f1 - 0.864).abs() <= 0.001);
    }

    #[test]
    fn perfect_and_degenerate_predictions() {
        let truth = [P, N, P, N];
        let m = compute_metrics(&truth, &truth).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
        let all_pos = compute_metrics(&[P; 4], &truth).unwrap();
        assert_eq!(all_pos.pre_0, 0.0);
        assert_eq!(all_pos.rec_0, 0.0);
        assert_eq!(all_pos.f1_0, 0.0);
        assert_eq!(all_pos.rec_1, 1.0);
        assert!(compute_metrics(&[P], &truth).is_err());
    }

    #[test]
    fn relabeling_swaps_classes() {
        let pred = [P, P, N, N, P];
        let truth = [P, N, N, P, P];
        let a = compute_metrics(&pred, &truth).unwrap();
        let flip = |v: &[Polarity]| v.iter().map(|p| p.flip()).collect::<Vec<_>>();
        let b = compute_metrics(&flip(&pred), &flip(&truth)).unwrap();
        assert_eq!(a.pre_0, b.pre_1);
        assert_eq!(a.rec_1, b.rec_0);
        assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
    }

    #[test]
    fn stability_rule() {
        let p = |best, worst| CurvePoint::from_scores(10, vec![best, worst]).unwrap();
        assert!(stability_flag(&p(0.895, 0.880)));
        assert!(!stability_flag(&p(0.9, 0.9)));
        assert!(!stability_flag(&p(0.895, 0.885)));
        assert!(!stability_flag(&p(0.91, 0.90)));
        let one = CurvePoint::from_scores(5, vec![0.7]).unwrap();
        assert_eq!((one.best, one.worst, one.mean), (0.7, 0.7, 0.7));
    }

    #[test]
    fn curve_checks_sizes_and_is_deterministic() {
        let docs: Vec<LabeledDoc> = (0..60)
            .map(|i| LabeledDoc {
                tokens: vec![format!("t{}", i % 7)],
                label: Polarity::from_bit(i % 2 == 0),
            })
            .collect();
        let recipe = |_: &DocSet, test: &DocSet| -> Result<Vec<Polarity>> {
            Ok(test
                .docs
                .iter()
                .map(|d| Polarity::from_bit(d.tokens[0].as_str() < "t3"))
                .collect())
        };
        let a = learning_curve(recipe, &docs, &[12, 30], 3, 7).unwrap();
        let b = learning_curve(recipe, &docs, &[12, 30], 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|p| p.worst <= p.mean && p.mean <= p.best));
        assert!(matches!(
            learning_curve(recipe, &docs, &[30, 80, 100], 1, 0),
            Err(Error::UnreachableSize {
                size: 80,
                available: 30
            })
        ));
    }

    #[test]
    fn report_writers() {
        let mut buf = Vec::new();
        let m = MetricsReport::from_precision_recall(0.5, 0.5, 0.5, 0.5);
        write_metrics_tsv(&mut buf, &[("NB".into(), m)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "NB\t0.5000\t0.5000\t0.5000\t0.5000\t0.5000\t0.5000\t0.5000"
        );
        let pts = vec![CurvePoint::from_scores(100, vec![0.8, 0.83]).unwrap()];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &pts).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .ends_with("100,0.8300,0.8000,0.8150,true\n"));
        let svg = render_curve_svg(&[("NB".into(), pts)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
